use std::path::{Path, PathBuf};
use std::time::Instant;

use graphem::bench::{self, BenchConfig, BenchMethod, KappaChoice};
use graphem::datasets::{make_dataset, DatasetKind, DatasetSpec};
use graphem::em::{fit_with_truth, FitConfig};
use graphem::granger::{granger_graph, GrangerConfig};
use graphem::io::{self, fmt_f64, KvConfig};
use graphem::metrics::{self, EDGE_THRESHOLD};

use crate::plot::{line_plot, Series};
use crate::{CliError, Command, Common};

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

const KNOWN_KEYS: &[&str] = &[
    "data.dataset",
    "data.blocks",
    "data.sigma_q",
    "data.sigma_r",
    "data.sigma_p",
    "data.horizon",
    "data.seed",
    "data.delta_stability",
    "fit.",
    "ms.",
    "reg.",
    "bench.datasets",
    "bench.methods",
    "bench.n",
    "bench.seed",
    "bench.kappa",
    "bench.save_runs",
    "channel.dataset",
    "channel.kappas",
    "channel.seed",
    "channel.k_train",
    "channel.k_test",
    "channel.symbols_per_step",
    "channel.eb_n0_db",
    "granger.mode",
    "granger.alpha",
    "granger.ar_order",
];

/// Loaded configuration plus the directory relative file names resolve against.
struct Loaded {
    kv: KvConfig,
    base: PathBuf,
}

fn load(common: &Common) -> Result<Loaded> {
    let (kv, base) = match &common.config {
        Some(path) => {
            let kv = KvConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (kv, base)
        }
        None => (KvConfig::default(), PathBuf::new()),
    };
    kv.check_known(KNOWN_KEYS)?;
    if common.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    Ok(Loaded { kv, base })
}

fn set_opt<T: std::fmt::Display>(kv: &mut KvConfig, key: &str, value: &Option<T>) {
    if let Some(v) = value {
        kv.set(key, v);
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(path)?)
}

fn spec_from_kv(kv: &KvConfig) -> Result<DatasetSpec> {
    let name: String = kv.get_or("data.dataset", "A".to_string())?;
    let mut spec = if name.eq_ignore_ascii_case("custom") {
        let blocks: Vec<usize> = kv
            .get_list("data.blocks")?
            .ok_or_else(|| usage("config key `data.blocks` is required for a custom dataset"))?;
        DatasetSpec::synthetic("custom", &blocks, 0.1, 0.1, 1e-4)
    } else {
        if kv.contains("data.blocks") {
            return Err(usage("config key `data.blocks` only applies to data.dataset = custom"));
        }
        DatasetSpec::preset(&name)?
    };
    spec.sigma_q = kv.get_or("data.sigma_q", spec.sigma_q)?;
    spec.sigma_r = kv.get_or("data.sigma_r", spec.sigma_r)?;
    spec.sigma_p = kv.get_or("data.sigma_p", spec.sigma_p)?;
    spec.delta_stability = kv.get_or("data.delta_stability", spec.delta_stability)?;
    if let Some(h) = kv.get::<usize>("data.horizon")? {
        spec = spec.with_horizon(h);
    }
    spec = spec.with_seed(kv.get_or("data.seed", 0)?);
    spec.validate()?;
    Ok(spec)
}

fn spec_to_kv(spec: &DatasetSpec) -> KvConfig {
    let mut kv = KvConfig::default();
    kv.set("data.dataset", &spec.name);
    if let DatasetKind::Synthetic { blocks } = &spec.kind {
        if spec.name == "custom" {
            kv.set("data.blocks", blocks.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(","));
        }
    }
    kv.set("data.sigma_q", fmt_f64(spec.sigma_q));
    kv.set("data.sigma_r", fmt_f64(spec.sigma_r));
    kv.set("data.sigma_p", fmt_f64(spec.sigma_p));
    kv.set("data.delta_stability", fmt_f64(spec.delta_stability));
    kv.set("data.horizon", spec.horizon);
    kv.set("data.seed", spec.seed);
    kv
}

/// The `fit.*`, `ms.*` and `reg.*` entries.
fn fit_keys(kv: &KvConfig) -> KvConfig {
    let mut out = KvConfig::default();
    for key in kv.keys().filter(|k| k.starts_with("fit.") || k.starts_with("ms.") || k.starts_with("reg.")) {
        out.set(key, kv.raw(key).unwrap());
    }
    out
}

fn write_manifest(out: &Path, command: &str, kv: &KvConfig, outputs: &[String], start: Instant) -> Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut text = String::from("# graphem run manifest\n");
    text += &format!("command = {command}\n");
    text += &format!("version = {}\n", env!("CARGO_PKG_VERSION"));
    text += &format!("args = {}\n", args.join(" "));
    text += &format!("outputs = {}\n", outputs.join(","));
    text += &format!("wall_seconds = {:.3}\n", start.elapsed().as_secs_f64());
    text += "\n[config]\n";
    text += &kv.to_text();
    io::write_text(&out.join("manifest.txt"), &text)?;
    Ok(())
}

pub fn run(command: Command) -> Result<()> {
    let start = Instant::now();
    match command {
        Command::Simulate {
            common,
            dataset,
            seed,
            horizon,
        } => {
            let mut cfg = load(&common)?;
            set_opt(&mut cfg.kv, "data.dataset", &dataset);
            set_opt(&mut cfg.kv, "data.seed", &seed);
            set_opt(&mut cfg.kv, "data.horizon", &horizon);
            simulate(&common, &cfg.kv, start)
        }
        Command::Fit {
            common,
            data,
            method,
            kappa,
            seed,
            mask,
        } => {
            let mut cfg = load(&common)?;
            set_opt(&mut cfg.kv, "fit.method", &method);
            set_opt(&mut cfg.kv, "fit.kappa", &kappa);
            set_opt(&mut cfg.kv, "fit.init_seed", &seed);
            if let Some(m) = mask {
                cfg.kv.set("fit.mask_file", absolute(&m)?.display());
            }
            fit(&common, &cfg, &data, start)
        }
        Command::Bench {
            common,
            datasets,
            methods,
            n,
            kappa,
            seed,
            save_runs,
        } => {
            let mut cfg = load(&common)?;
            set_opt(&mut cfg.kv, "bench.datasets", &datasets);
            set_opt(&mut cfg.kv, "bench.methods", &methods);
            set_opt(&mut cfg.kv, "bench.n", &n);
            set_opt(&mut cfg.kv, "bench.kappa", &kappa);
            set_opt(&mut cfg.kv, "bench.seed", &seed);
            if save_runs {
                cfg.kv.set("bench.save_runs", true);
            }
            run_bench(&common, &cfg, start)
        }
        Command::Channel {
            common,
            dataset,
            kappa,
            seed,
            k_test,
            symbols,
        } => {
            let mut cfg = load(&common)?;
            set_opt(&mut cfg.kv, "channel.dataset", &dataset);
            set_opt(&mut cfg.kv, "channel.kappas", &kappa);
            set_opt(&mut cfg.kv, "channel.seed", &seed);
            set_opt(&mut cfg.kv, "channel.k_test", &k_test);
            set_opt(&mut cfg.kv, "channel.symbols_per_step", &symbols);
            channel(&common, &cfg, start)
        }
        Command::Granger { common, data, mode, alpha } => {
            let mut cfg = load(&common)?;
            set_opt(&mut cfg.kv, "granger.mode", &mode);
            set_opt(&mut cfg.kv, "granger.alpha", &alpha);
            granger(&common, &cfg.kv, &data, start)
        }
    }
}

fn simulate(common: &Common, kv: &KvConfig, start: Instant) -> Result<()> {
    let spec = spec_from_kv(kv)?;
    let data = make_dataset(&spec)?;
    let out = &common.out;
    io::write_trajectory(&out.join("trajectory.csv"), &data.trajectory)?;
    io::write_matrix(&out.join("a_true.csv"), &data.a_true)?;
    io::write_text(&out.join("params.txt"), &spec_to_kv(&spec).to_text())?;
    let outputs = ["trajectory.csv", "a_true.csv", "params.txt"].map(String::from);
    write_manifest(out, "simulate", kv, &outputs, start)?;
    log::info!("{} steps of dataset {} written to {}", spec.horizon, spec.name, out.display());
    Ok(())
}

struct DataDir {
    spec: DatasetSpec,
    observations: Vec<graphem::Vector>,
    a_true: Option<graphem::Mat>,
}

fn read_data_dir(dir: &Path) -> Result<DataDir> {
    let params = dir.join("params.txt");
    if !params.exists() {
        return Err(usage(format!("{} has no params.txt; create it with `graphem simulate`", dir.display())));
    }
    let spec = spec_from_kv(&KvConfig::load(&params)?)?;
    let traj = io::read_trajectory(&dir.join("trajectory.csv"))?;
    if traj.observations.len() != spec.horizon {
        return Err(CliError::Failed(format!(
            "trajectory has {} observations, params.txt says {}",
            traj.observations.len(),
            spec.horizon
        )));
    }
    let truth = dir.join("a_true.csv");
    let a_true = if truth.exists() { Some(io::read_matrix(&truth)?) } else { None };
    Ok(DataDir {
        spec,
        observations: traj.observations,
        a_true,
    })
}

fn fit(common: &Common, cfg: &Loaded, data_dir: &Path, start: Instant) -> Result<()> {
    let data = read_data_dir(data_dir)?;
    let fit_cfg = io::fit_config_from_kv(&fit_keys(&cfg.kv), data.spec.state_dim(), &cfg.base)?;
    // the model parameters (pilot-driven H_k for channel sets) are rebuilt from the dataset description
    let model = make_dataset(&data.spec)?;
    let res = fit_with_truth(&model.params, &data.observations, &fit_cfg, data.a_true.as_ref())?;
    let out = &common.out;
    io::write_matrix(&out.join("a_hat.csv"), &res.a_hat)?;
    let rmse_trace = res.rmse_trace.clone().unwrap_or_default();
    io::write_columns(&out.join("trace.csv"), &[("loss", &res.loss_trace), ("rmse", &rmse_trace)])?;

    let mut summary = KvConfig::default();
    summary.set("method", fit_cfg.method);
    summary.set("em_iters", res.em_iters);
    summary.set("converged", res.converged);
    summary.set("final_loss", fmt_f64(*res.loss_trace.last().unwrap()));
    summary.set("mstep_nonconverged", res.mstep_nonconverged);
    if let Some(truth) = &data.a_true {
        summary.set("rmse", fmt_f64(metrics::rmse(&res.a_hat, truth)?));
        let s = metrics::detection(&res.a_hat, truth, EDGE_THRESHOLD)?;
        for (k, v) in [("accuracy", s.accuracy), ("precision", s.precision), ("recall", s.recall), ("specificity", s.specificity), ("f1", s.f1)] {
            summary.set(k, fmt_f64(v));
        }
    }
    io::write_text(&out.join("metrics.txt"), &summary.to_text())?;

    let iters = |v: &[f64]| v.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect::<Vec<_>>();
    let mut outputs: Vec<String> = ["a_hat.csv", "trace.csv", "metrics.txt", "loss.svg"].map(String::from).to_vec();
    line_plot(&out.join("loss.svg"), "MAP loss", "EM iteration", "loss", &[Series::new(fit_cfg.method.name(), iters(&res.loss_trace))])?;
    if !rmse_trace.is_empty() {
        line_plot(&out.join("rmse.svg"), "Relative error", "EM iteration", "RMSE", &[Series::new(fit_cfg.method.name(), iters(&rmse_trace))])?;
        outputs.push("rmse.svg".into());
    }
    let mut echo = cfg.kv.clone();
    echo.set("data", data_dir.display());
    write_manifest(out, "fit", &echo, &outputs, start)?;
    if !res.converged {
        log::warn!("EM stopped at max_em_iters={} before converging", fit_cfg.max_em_iters);
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(kv: &KvConfig, key: &str) -> Result<Option<Vec<T>>> {
    Ok(kv.get_list(key)?)
}

fn run_bench(common: &Common, cfg: &Loaded, start: Instant) -> Result<()> {
    let kv = &cfg.kv;
    let names: Vec<String> = parse_list(kv, "bench.datasets")?.unwrap_or_else(|| ["A", "B", "C", "D"].map(String::from).to_vec());
    let specs = names.iter().map(|n| DatasetSpec::preset(n)).collect::<graphem::Result<Vec<_>>>()?;
    let mut bench_cfg = BenchConfig {
        jobs: common.jobs,
        ..BenchConfig::default()
    };
    if let Some(methods) = parse_list::<BenchMethod>(kv, "bench.methods")? {
        bench_cfg.methods = methods;
    }
    bench_cfg.n_realizations = kv.get_or("bench.n", bench_cfg.n_realizations)?;
    bench_cfg.base_seed = kv.get_or("bench.seed", bench_cfg.base_seed)?;
    if let Some(kappas) = parse_list::<f64>(kv, "bench.kappa")? {
        bench_cfg.kappa = match kappas.as_slice() {
            [k] => KappaChoice::Fixed(*k),
            _ => KappaChoice::Grid(kappas),
        };
    }
    let dim = specs.iter().map(|s| s.state_dim()).max().unwrap_or(1);
    let mut template = fit_keys(kv);
    // the per-run method and κ come from the benchmark itself
    template.set("fit.method", "graphem");
    bench_cfg.fit = FitConfig {
        support_mask: None,
        ..io::fit_config_from_kv(&template, dim, &cfg.base)?
    };
    let save_runs: bool = kv.get_or("bench.save_runs", false)?;

    let report = bench::run_benchmark(&specs, &bench_cfg)?;
    let out = &common.out;
    bench::write_report(&report, out, save_runs)?;
    let mut outputs: Vec<String> = ["results.csv", "realizations.csv", "timings.csv"].map(String::from).to_vec();
    if !report.kappa_search.is_empty() {
        outputs.push("kappa_search.csv".into());
    }
    for name in &names {
        let first: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.dataset.eq_ignore_ascii_case(name) && r.realization == 0 && !r.loss_trace.is_empty())
            .collect();
        if first.is_empty() {
            continue;
        }
        let series = |f: fn(&bench::RealizationRow) -> &Vec<f64>| -> Vec<Series> {
            first
                .iter()
                .map(|r| Series::new(r.method.name(), f(r).iter().enumerate().map(|(i, &y)| (i as f64, y)).collect()))
                .collect()
        };
        let upper = name.to_ascii_uppercase();
        line_plot(&out.join(format!("{upper}_loss.svg")), &format!("Dataset {upper}: loss, realization 0"), "EM iteration", "loss", &series(|r| &r.loss_trace))?;
        line_plot(&out.join(format!("{upper}_rmse.svg")), &format!("Dataset {upper}: RMSE, realization 0"), "EM iteration", "RMSE", &series(|r| &r.rmse_trace))?;
        outputs.push(format!("{upper}_loss.svg"));
        outputs.push(format!("{upper}_rmse.svg"));
    }
    write_manifest(out, "bench", kv, &outputs, start)?;
    let failed: usize = report.summary.iter().map(|s| s.failed).sum();
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} realization(s) failed; see realizations.csv")));
    }
    Ok(())
}

fn channel(common: &Common, cfg: &Loaded, start: Instant) -> Result<()> {
    let kv = &cfg.kv;
    let name: String = kv.get_or("channel.dataset", "E".to_string())?;
    let mut spec = DatasetSpec::preset(&name)?;
    if !spec.is_channel() {
        return Err(usage(format!("config key `channel.dataset`: {name} is not a channel dataset (use E or F)")));
    }
    let mut mimo = spec.channel.clone().unwrap();
    if let Some(kappas) = parse_list(kv, "channel.kappas")? {
        mimo.kappas = kappas;
    }
    mimo.k_test = kv.get_or("channel.k_test", mimo.k_test)?;
    mimo.symbols_per_step = kv.get_or("channel.symbols_per_step", mimo.symbols_per_step)?;
    mimo.eb_n0_db = kv.get_or("channel.eb_n0_db", mimo.eb_n0_db)?;
    let k_train = kv.get_or("channel.k_train", mimo.k_train)?;
    spec.channel = Some(mimo);
    let spec = spec.with_horizon(k_train).with_seed(kv.get_or("channel.seed", 1)?);
    let mut template = fit_keys(kv);
    template.set("fit.method", "graphem");
    let fit_cfg = io::fit_config_from_kv(&template, spec.state_dim(), &cfg.base)?;

    let study = bench::channel_study(&spec, &fit_cfg, common.jobs)?;
    let out = &common.out;
    bench::write_channel_study(&study, out)?;
    let kappa_series = |f: fn(&bench::ChannelPoint) -> f64| study.graphem.iter().map(|p| (p.kappa, f(p))).collect::<Vec<_>>();
    let flat = |v: f64| study.graphem.iter().map(|p| (p.kappa, v)).collect::<Vec<_>>();
    line_plot(
        &out.join("ber.svg"),
        &format!("Dataset {}: BER versus κ", spec.name),
        "κ",
        "BER",
        &[Series::new("GraphEM", kappa_series(|p| p.ber.ber)), Series::new("MLEM", flat(study.mlem.ber.ber))],
    )?;
    line_plot(
        &out.join("rmse.svg"),
        &format!("Dataset {}: RMSE versus κ", spec.name),
        "κ",
        "RMSE",
        &[Series::new("GraphEM", kappa_series(|p| p.rmse)), Series::new("MLEM", flat(study.mlem.rmse))],
    )?;
    let outputs = ["ber.csv", "rmse.csv", "channel_timings.csv", "ber.svg", "rmse.svg"].map(String::from);
    write_manifest(out, "channel", kv, &outputs, start)?;
    Ok(())
}

fn granger(common: &Common, kv: &KvConfig, data_dir: &Path, start: Instant) -> Result<()> {
    let traj = io::read_trajectory(&data_dir.join("trajectory.csv"))?;
    let mut cfg = GrangerConfig::default();
    cfg.mode = kv.get_or("granger.mode", cfg.mode)?;
    cfg.alpha = kv.get_or("granger.alpha", cfg.alpha)?;
    cfg.ar_order = kv.get_or("granger.ar_order", cfg.ar_order)?;
    let adj = granger_graph(&traj.observations, &cfg)?;
    let out = &common.out;
    io::write_bool_matrix(&out.join("adjacency.csv"), &adj)?;
    let mut outputs = vec!["adjacency.csv".to_string()];
    let truth = data_dir.join("a_true.csv");
    if truth.exists() {
        let a_true = io::read_matrix(&truth)?;
        let s = metrics::detection(&graphem::granger::adjacency_to_matrix(&adj), &a_true, EDGE_THRESHOLD)?;
        let mut summary = KvConfig::default();
        for (k, v) in [("accuracy", s.accuracy), ("precision", s.precision), ("recall", s.recall), ("specificity", s.specificity), ("f1", s.f1)] {
            summary.set(k, fmt_f64(v));
        }
        io::write_text(&out.join("metrics.txt"), &summary.to_text())?;
        outputs.push("metrics.txt".into());
    }
    let mut echo = kv.clone();
    echo.set("data", data_dir.display());
    write_manifest(out, "granger", &echo, &outputs, start)?;
    Ok(())
}
