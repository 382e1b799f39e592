//! Monte Carlo benchmark over datasets and methods with per-realization rows
//! and deterministic aggregation.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::datasets::{make_dataset, support, DatasetSpec};
use crate::em::{self, FitConfig, InitSpec, Method, Sparsity};
use crate::error::{Error, Result};
use crate::granger::{adjacency_to_matrix, granger_graph, GrangerConfig, GrangerMode};
use crate::io::{self, fmt_f64};
use crate::linalg::Mat;
use crate::metrics::{self, DetectionScores, EDGE_THRESHOLD};
use crate::mimo::{channel_block_map, track_and_ber, BerResult, MimoConfig};
use crate::ssm::MatrixSeq;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMethod {
    Em(Method),
    Granger(GrangerMode),
}

impl BenchMethod {
    pub fn name(self) -> &'static str {
        match self {
            BenchMethod::Em(m) => m.name(),
            BenchMethod::Granger(g) => g.name(),
        }
    }
}

impl fmt::Display for BenchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<Method>()
            .map(BenchMethod::Em)
            .or_else(|_| s.parse::<GrangerMode>().map(BenchMethod::Granger))
            .map_err(|_| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// How GraphEM's weight is chosen per dataset.
#[derive(Debug, Clone, PartialEq)]
pub enum KappaChoice {
    Fixed(f64),
    /// Grid search maximizing accuracy on one validation realization whose
    /// seed is disjoint from the benchmark seeds.
    Grid(Vec<f64>),
}

/// Offset of the validation seed used for κ selection.
pub const VALIDATION_SEED_OFFSET: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub methods: Vec<BenchMethod>,
    pub n_realizations: usize,
    pub base_seed: u64,
    pub kappa: KappaChoice,
    /// Template for all EM methods; `method`, `kappa`, `init` and the
    /// support mask are filled in per run.
    pub fit: FitConfig,
    pub granger: GrangerConfig,
    pub jobs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            methods: vec![
                BenchMethod::Em(Method::GraphEm),
                BenchMethod::Em(Method::StableEm),
                BenchMethod::Em(Method::Mlem),
                BenchMethod::Granger(GrangerMode::Pairwise),
                BenchMethod::Granger(GrangerMode::Conditional),
                BenchMethod::Em(Method::OracleEm),
            ],
            n_realizations: 10,
            base_seed: 1,
            kappa: KappaChoice::Grid(vec![10.0, 20.0, 30.0, 50.0, 100.0]),
            fit: FitConfig::default(),
            granger: GrangerConfig::default(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RealizationRow {
    pub dataset: String,
    pub method: BenchMethod,
    pub realization: usize,
    pub seed: u64,
    pub kappa: Option<f64>,
    pub rmse: Option<f64>,
    pub scores: Option<DetectionScores>,
    pub em_iters: Option<usize>,
    pub converged: Option<bool>,
    pub seconds: f64,
    pub error: Option<String>,
    pub loss_trace: Vec<f64>,
    pub rmse_trace: Vec<f64>,
    pub a_true: Option<Mat>,
    pub a_hat: Option<Mat>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: BenchMethod,
    pub kappa: Option<f64>,
    pub completed: usize,
    pub failed: usize,
    pub rmse: Option<f64>,
    pub scores: DetectionScores,
    pub em_iters: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<RealizationRow>,
    pub summary: Vec<SummaryRow>,
    /// `(dataset, [(κ, validation accuracy)])` for grid-selected weights.
    pub kappa_search: Vec<(String, Vec<(f64, f64)>)>,
}

fn choose_kappa(spec: &DatasetSpec, cfg: &BenchConfig) -> Result<(f64, Vec<(f64, f64)>)> {
    match &cfg.kappa {
        KappaChoice::Fixed(k) => Ok((*k, Vec::new())),
        KappaChoice::Grid(grid) => {
            let seed = cfg.base_seed.wrapping_add(VALIDATION_SEED_OFFSET);
            let data = make_dataset(&spec.clone().with_seed(seed))?;
            let base = FitConfig {
                init: InitSpec::Seed(seed),
                ..cfg.fit.clone()
            };
            em::select_kappa(&data.params, &data.trajectory.observations, &base, grid, &data.a_true)
        }
    }
}

fn run_one(spec: &DatasetSpec, method: BenchMethod, realization: usize, kappa: f64, cfg: &BenchConfig) -> RealizationRow {
    let seed = cfg.base_seed.wrapping_add(realization as u64);
    let mut row = RealizationRow {
        dataset: spec.name.clone(),
        method,
        realization,
        seed,
        kappa: (method == BenchMethod::Em(Method::GraphEm)).then_some(kappa),
        rmse: None,
        scores: None,
        em_iters: None,
        converged: None,
        seconds: 0.0,
        error: None,
        loss_trace: Vec::new(),
        rmse_trace: Vec::new(),
        a_true: None,
        a_hat: None,
    };
    let start = Instant::now();
    let outcome = (|| -> Result<()> {
        let data = make_dataset(&spec.clone().with_seed(seed))?;
        let obs = &data.trajectory.observations;
        match method {
            BenchMethod::Em(m) => {
                let fit_cfg = FitConfig {
                    method: m,
                    kappa,
                    init: InitSpec::Seed(seed),
                    support_mask: (m == Method::OracleEm).then(|| support(&data.a_true, 0.0)),
                    ..cfg.fit.clone()
                };
                let fit = em::fit_with_truth(&data.params, obs, &fit_cfg, Some(&data.a_true))?;
                row.rmse = Some(metrics::rmse(&fit.a_hat, &data.a_true)?);
                row.scores = Some(metrics::detection(&fit.a_hat, &data.a_true, EDGE_THRESHOLD)?);
                row.em_iters = Some(fit.em_iters);
                row.converged = Some(fit.converged);
                row.loss_trace = fit.loss_trace;
                row.rmse_trace = fit.rmse_trace.unwrap_or_default();
                row.a_hat = Some(fit.a_hat);
            }
            BenchMethod::Granger(mode) => {
                let n = data.params.state_dim();
                let identity = matches!(&data.params.h, MatrixSeq::Constant(h) if *h == Mat::identity(n, n));
                if !identity {
                    return Err(Error::InvalidConfig("granger baselines need H = I".into()));
                }
                let gcfg = GrangerConfig { mode, ..cfg.granger.clone() };
                let adj = adjacency_to_matrix(&granger_graph(obs, &gcfg)?);
                row.scores = Some(metrics::detection(&adj, &data.a_true, EDGE_THRESHOLD)?);
                row.a_hat = Some(adj);
            }
        }
        row.a_true = Some(data.a_true);
        Ok(())
    })();
    row.seconds = start.elapsed().as_secs_f64();
    if let Err(e) = outcome {
        log::warn!("{} / {} / realization {realization}: {e}", spec.name, method);
        row.error = Some(e.to_string());
    }
    row
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Arithmetic means over the successful rows, in realization order.
pub fn summarize(rows: &[RealizationRow]) -> SummaryRow {
    let ok: Vec<&RealizationRow> = rows.iter().filter(|r| r.error.is_none()).collect();
    let score = |f: fn(&DetectionScores) -> f64| mean(ok.iter().filter_map(|r| r.scores.as_ref()).map(f)).unwrap_or(f64::NAN);
    let first = &rows[0];
    SummaryRow {
        dataset: first.dataset.clone(),
        method: first.method,
        kappa: first.kappa,
        completed: ok.len(),
        failed: rows.len() - ok.len(),
        rmse: mean(ok.iter().filter_map(|r| r.rmse)),
        scores: DetectionScores {
            accuracy: score(|s| s.accuracy),
            precision: score(|s| s.precision),
            recall: score(|s| s.recall),
            specificity: score(|s| s.specificity),
            f1: score(|s| s.f1),
            threshold: EDGE_THRESHOLD,
        },
        em_iters: mean(ok.iter().filter_map(|r| r.em_iters.map(|i| i as f64))),
        seconds: mean(ok.iter().map(|r| r.seconds)).unwrap_or(f64::NAN),
    }
}

fn run_tasks<T: Sync, R: Send>(jobs: usize, tasks: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Result<Vec<R>> {
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
        return Ok(pool.install(|| tasks.par_iter().map(&f).collect()));
    }
    let _ = jobs;
    Ok(tasks.iter().map(f).collect())
}

pub fn run_benchmark(specs: &[DatasetSpec], cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.n_realizations == 0 {
        return Err(Error::InvalidConfig("n_realizations must be positive".into()));
    }
    if cfg.methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    for spec in specs {
        spec.validate()?;
    }
    let needs_kappa = cfg.methods.contains(&BenchMethod::Em(Method::GraphEm));
    let kappas = run_tasks(cfg.jobs, specs, |spec| -> Result<(f64, Vec<(f64, f64)>)> {
        if needs_kappa {
            choose_kappa(spec, cfg)
        } else {
            Ok((cfg.fit.kappa, Vec::new()))
        }
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let mut tasks = Vec::new();
    for (s, spec) in specs.iter().enumerate() {
        for &method in &cfg.methods {
            for r in 0..cfg.n_realizations {
                tasks.push((s, spec, method, r));
            }
        }
    }
    let rows = run_tasks(cfg.jobs, &tasks, |&(s, spec, method, r)| run_one(spec, method, r, kappas[s].0, cfg))?;
    let summary = rows.chunks(cfg.n_realizations).map(summarize).collect();
    let kappa_search = specs
        .iter()
        .zip(&kappas)
        .filter(|(_, (_, grid))| !grid.is_empty())
        .map(|(spec, (_, grid))| (spec.name.clone(), grid.clone()))
        .collect();
    Ok(BenchReport {
        rows,
        summary,
        kappa_search,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "-".into())
}

pub const SUMMARY_HEADER: [&str; 12] = [
    "dataset", "method", "kappa", "rmse", "accuracy", "precision", "recall", "specificity", "f1", "em_iters", "completed", "failed",
];

pub const ROW_HEADER: [&str; 13] = [
    "dataset", "method", "realization", "seed", "kappa", "rmse", "accuracy", "precision", "recall", "specificity", "f1", "em_iters",
    "error",
];

fn score_cells(s: Option<&DetectionScores>) -> Vec<String> {
    match s {
        Some(s) => [s.accuracy, s.precision, s.recall, s.specificity, s.f1].iter().map(|v| fmt_f64(*v)).collect(),
        None => vec!["-".into(); 5],
    }
}

/// Writes `results.csv` (means per dataset and method), `realizations.csv`,
/// `timings.csv` and, with `save_runs`, per-run matrices and traces under
/// `runs/`. Everything except `timings.csv` is a pure function of the inputs.
pub fn write_report(report: &BenchReport, out_dir: &Path, save_runs: bool) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut w = csv::Writer::from_path(out_dir.join("results.csv"))?;
    w.write_record(SUMMARY_HEADER)?;
    for s in &report.summary {
        let mut rec = vec![s.dataset.clone(), s.method.to_string(), opt(s.kappa), opt(s.rmse)];
        rec.extend(score_cells(Some(&s.scores)));
        rec.extend([opt(s.em_iters), s.completed.to_string(), s.failed.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join("realizations.csv"))?;
    w.write_record(ROW_HEADER)?;
    for r in &report.rows {
        let mut rec = vec![r.dataset.clone(), r.method.to_string(), r.realization.to_string(), r.seed.to_string(), opt(r.kappa), opt(r.rmse)];
        rec.extend(score_cells(r.scores.as_ref()));
        rec.push(r.em_iters.map(|i| i.to_string()).unwrap_or_else(|| "-".into()));
        rec.push(r.error.clone().unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out_dir.join("timings.csv"))?;
    w.write_record(["dataset", "method", "realization", "seconds"])?;
    for r in &report.rows {
        w.write_record([r.dataset.clone(), r.method.to_string(), r.realization.to_string(), format!("{:.6}", r.seconds)])?;
    }
    w.flush()?;

    if !report.kappa_search.is_empty() {
        let mut w = csv::Writer::from_path(out_dir.join("kappa_search.csv"))?;
        w.write_record(["dataset", "kappa", "accuracy"])?;
        for (name, grid) in &report.kappa_search {
            for (k, acc) in grid {
                w.write_record([name.clone(), fmt_f64(*k), fmt_f64(*acc)])?;
            }
        }
        w.flush()?;
    }

    if save_runs {
        for r in &report.rows {
            let dir = out_dir.join("runs").join(format!("{}_{}_{}", r.dataset, r.method, r.realization));
            if let Some(a) = &r.a_true {
                io::write_matrix(&dir.join("a_true.csv"), a)?;
            }
            if let Some(a) = &r.a_hat {
                io::write_matrix(&dir.join("a_hat.csv"), a)?;
            }
            if !r.loss_trace.is_empty() {
                io::write_columns(&dir.join("trace.csv"), &[("loss", &r.loss_trace), ("rmse", &r.rmse_trace)])?;
            }
        }
    }
    Ok(())
}

/// Offset between the training seed and the symbol-detection seed of the
/// channel study.
pub const CHANNEL_TEST_SEED_OFFSET: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPoint {
    pub kappa: f64,
    pub ber: BerResult,
    pub rmse: f64,
    pub em_iters: usize,
    pub converged: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStudy {
    pub dataset: String,
    pub seed: u64,
    pub mlem: ChannelPoint,
    /// One GraphEM fit per κ of the channel config, in grid order.
    pub graphem: Vec<ChannelPoint>,
}

fn channel_point(
    data: &crate::datasets::Dataset,
    cfg: &FitConfig,
    mimo: &MimoConfig,
    test_seed: u64,
) -> Result<ChannelPoint> {
    let start = Instant::now();
    let fit = em::fit(&data.params, &data.trajectory.observations, cfg)?;
    let ber = track_and_ber(&fit.a_hat, &data.a_true, mimo, test_seed)?;
    Ok(ChannelPoint {
        kappa: cfg.kappa,
        ber,
        rmse: metrics::rmse(&fit.a_hat, &data.a_true)?,
        em_iters: fit.em_iters,
        converged: fit.converged,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// BER and RMSE of MLEM and of GraphEM (ℓ₂,₁ over complex pairs) for every κ
/// in the dataset's channel config. `fit` supplies the EM/M-step settings.
pub fn channel_study(spec: &DatasetSpec, fit: &FitConfig, jobs: usize) -> Result<ChannelStudy> {
    spec.validate()?;
    let mimo = spec
        .channel
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig(format!("dataset {} is not a channel set", spec.name)))?;
    if mimo.kappas.is_empty() {
        return Err(Error::InvalidConfig("channel study needs at least one kappa".into()));
    }
    let data = make_dataset(spec)?;
    let test_seed = spec.seed.wrapping_add(CHANNEL_TEST_SEED_OFFSET);
    let base = FitConfig {
        init: InitSpec::Seed(spec.seed),
        support_mask: None,
        custom_regularizer: None,
        ..fit.clone()
    };
    let mlem = channel_point(&data, &FitConfig { method: Method::Mlem, kappa: f64::NAN, ..base.clone() }, mimo, test_seed)?;
    let blocks = channel_block_map(mimo.antennas)?;
    let graphem = run_tasks(jobs, &mimo.kappas, |&kappa| {
        let cfg = FitConfig {
            method: Method::GraphEm,
            kappa,
            sparsity: Sparsity::BlockL21(blocks.clone()),
            ..base.clone()
        };
        channel_point(&data, &cfg, mimo, test_seed)
    })?
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(ChannelStudy {
        dataset: spec.name.clone(),
        seed: spec.seed,
        mlem,
        graphem,
    })
}

/// Writes `ber.csv` (kappa, ber_graphem, ber_mlem), `rmse.csv`
/// (kappa, rmse_graphem, rmse_mlem) and `channel_timings.csv`.
pub fn write_channel_study(study: &ChannelStudy, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let mut ber = csv::Writer::from_path(out_dir.join("ber.csv"))?;
    ber.write_record(["kappa", "ber_graphem", "ber_mlem"])?;
    let mut rmse = csv::Writer::from_path(out_dir.join("rmse.csv"))?;
    rmse.write_record(["kappa", "rmse_graphem", "rmse_mlem", "em_iters"])?;
    let mut times = csv::Writer::from_path(out_dir.join("channel_timings.csv"))?;
    times.write_record(["method", "kappa", "seconds"])?;
    times.write_record(["mlem".to_string(), "-".into(), format!("{:.6}", study.mlem.seconds)])?;
    for p in &study.graphem {
        ber.write_record([fmt_f64(p.kappa), fmt_f64(p.ber.ber), fmt_f64(study.mlem.ber.ber)])?;
        rmse.write_record([fmt_f64(p.kappa), fmt_f64(p.rmse), fmt_f64(study.mlem.rmse), p.em_iters.to_string()])?;
        times.write_record(["graphem".to_string(), fmt_f64(p.kappa), format!("{:.6}", p.seconds)])?;
    }
    ber.flush()?;
    rmse.flush()?;
    times.flush()?;
    Ok(())
}
