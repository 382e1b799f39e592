//! Browser bindings. Every export takes plain numbers/strings and returns a
//! JSON string so the page needs no glue beyond `JSON.parse`.

use graphem::datasets::{make_dataset, support, DatasetSpec};
use graphem::em::{fit, FitConfig, InitSpec, Method};
use graphem::linalg::Mat;
use graphem::metrics::{detection, rmse, EDGE_THRESHOLD};
use graphem::prox::{BlockMap, PenaltyTerm};
use graphem::ssm::{filter_and_smooth, simulate, ModelParams};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn rows(m: &Mat) -> Value {
    json!((0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
}

fn fail(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn fit_one(data: &graphem::Dataset, method: Method, kappa: f64, seed: u64, max_em_iters: usize) -> graphem::Result<Value> {
    let cfg = FitConfig {
        kappa,
        init: InitSpec::Seed(seed),
        max_em_iters,
        support_mask: (method == Method::OracleEm).then(|| support(&data.a_true, 0.0)),
        ..FitConfig::new(method)
    };
    let out = fit(&data.params, &data.trajectory.observations, &cfg)?;
    let s = detection(&out.a_hat, &data.a_true, EDGE_THRESHOLD)?;
    Ok(json!({
        "method": method.name(),
        "a_hat": rows(&out.a_hat),
        "rmse": rmse(&out.a_hat, &data.a_true)?,
        "f1": s.f1,
        "precision": s.precision,
        "recall": s.recall,
        "em_iters": out.em_iters,
        "loss": out.loss_trace,
    }))
}

/// Simulate a preset dataset (A-D) and estimate its transition matrix with
/// GraphEM and MLEM.
#[wasm_bindgen]
pub fn estimate_graph(dataset: &str, seed: u32, horizon: u32, kappa: f64) -> Result<String, JsValue> {
    let spec = DatasetSpec::preset(dataset).map_err(fail)?;
    if spec.is_channel() {
        return Err(fail("the demo runs the synthetic datasets A-D"));
    }
    let spec = spec.with_seed(seed as u64).with_horizon(horizon.clamp(20, 2000) as usize);
    let data = make_dataset(&spec).map_err(fail)?;
    let graphem = fit_one(&data, Method::GraphEm, kappa, seed as u64, 60).map_err(fail)?;
    let mlem = fit_one(&data, Method::Mlem, kappa, seed as u64, 60).map_err(fail)?;
    Ok(json!({ "a_true": rows(&data.a_true), "fits": [graphem, mlem] }).to_string())
}

/// Apply one proximal operator to a matrix given as rows of numbers
/// (whitespace or comma separated, one row per line).
#[wasm_bindgen]
pub fn apply_prox(kind: &str, param: f64, theta: f64, matrix: &str) -> Result<String, JsValue> {
    let parsed: Vec<Vec<f64>> = matrix
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(|t| t.parse::<f64>().map_err(|_| fail(format!("not a number: `{t}`"))))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let n = parsed.len();
    if n == 0 || parsed.iter().any(|r| r.len() != n) {
        return Err(fail("enter a square matrix"));
    }
    let a = Mat::from_fn(n, n, |i, j| parsed[i][j]);
    let term = match kind {
        "l1" => PenaltyTerm::L1 { weight: param },
        "l21" => PenaltyTerm::BlockL21 {
            weight: param,
            blocks: BlockMap::contiguous(n, n).map_err(fail)?,
        },
        "gaussian" => PenaltyTerm::Gaussian { weight: param },
        "spectral_ball" => PenaltyTerm::SpectralBall { radius: param },
        "frobenius_ball" => PenaltyTerm::FrobeniusBall { radius: param },
        other => return Err(fail(format!("unknown operator `{other}`"))),
    };
    term.validate(n).map_err(fail)?;
    let p = term.prox(&a, theta).map_err(fail)?;
    let sv = |m: &Mat| m.clone().svd(false, false).singular_values.iter().copied().collect::<Vec<f64>>();
    Ok(json!({
        "result": rows(&p),
        "singular_values_in": sv(&a),
        "singular_values_out": sv(&p),
        "penalty_in": term.value(&a),
        "penalty_out": term.value(&p),
    })
    .to_string())
}

/// Scalar random walk observed in noise: true states, observations and the
/// filtered/smoothed means with ±2σ bands.
#[wasm_bindgen]
pub fn smooth_track(a: f64, sigma_q: f64, sigma_r: f64, steps: u32, seed: u32) -> Result<String, JsValue> {
    let steps = steps.clamp(2, 2000) as usize;
    let params = ModelParams::isotropic(1, sigma_q, sigma_r, 1.0, steps).map_err(fail)?;
    let a = Mat::from_element(1, 1, a);
    let traj = simulate(&params, &a, seed as u64).map_err(fail)?;
    let (filt, smooth) = filter_and_smooth(&params, &a, &traj.observations).map_err(fail)?;
    let scalar = |v: &[graphem::Vector]| v.iter().map(|x| x[0]).collect::<Vec<f64>>();
    let sd = |v: &[Mat]| v.iter().map(|p| p[(0, 0)].max(0.0).sqrt()).collect::<Vec<f64>>();
    Ok(json!({
        "states": scalar(&traj.states),
        "observations": scalar(&traj.observations),
        "filtered": scalar(&filt.means),
        "filtered_sd": sd(&filt.covs),
        "smoothed": scalar(&smooth.means),
        "smoothed_sd": sd(&smooth.covs),
    })
    .to_string())
}
