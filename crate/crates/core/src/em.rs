//! The outer expectation-maximization loop and its method variants.
//!
//! Every variant shares the E-step (Kalman filter, RTS smoother, statistics at
//! the current iterate) and differs only in how the surrogate is minimized:
//!
//! * `GraphEm`: primal-dual M-step with the stability constraint in the
//!   consensus group and the sparsity penalty as the output term.
//! * `StableEm`: stability constraint only.
//! * `OracleEm`: the known support as a mask constraint.
//! * `Mlem`: closed-form unregularized update.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estep::{estep_stats, map_loss};
use crate::linalg::{self, Mat, Vector};
use crate::metrics;
use crate::mstep::{closed_form_mstep, ms_solve, MsConfig};
use crate::prox::{project_constraint, BlockMap, PenaltyTerm, Regularizer};
use crate::ssm::{self, ModelParams, SmootherOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    GraphEm,
    Mlem,
    StableEm,
    OracleEm,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::GraphEm, Method::StableEm, Method::Mlem, Method::OracleEm];

    pub fn name(self) -> &'static str {
        match self {
            Method::GraphEm => "graphem",
            Method::Mlem => "mlem",
            Method::StableEm => "stableem",
            Method::OracleEm => "oracleem",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "graphem" => Ok(Method::GraphEm),
            "mlem" => Ok(Method::Mlem),
            "stableem" => Ok(Method::StableEm),
            "oracleem" => Ok(Method::OracleEm),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

/// Sparsity-carrying penalty used by GraphEM.
#[derive(Debug, Clone, PartialEq)]
pub enum Sparsity {
    L1,
    BlockL21(BlockMap),
}

/// Starting point of the EM recursion.
#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    Seed(u64),
    Matrix(Mat),
}

#[derive(Debug, Clone)]
pub struct FitConfig {
    pub method: Method,
    pub kappa: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub max_em_iters: usize,
    pub ms: MsConfig,
    pub init: InitSpec,
    pub support_mask: Option<DMatrix<bool>>,
    pub sparsity: Sparsity,
    /// Replaces the method's regularizer when set (GraphEM only).
    pub custom_regularizer: Option<Regularizer>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            method: Method::GraphEm,
            kappa: 1.0,
            delta: 0.99,
            epsilon: 1e-3,
            max_em_iters: 200,
            ms: MsConfig::default(),
            init: InitSpec::Seed(0),
            support_mask: None,
            sparsity: Sparsity::L1,
            custom_regularizer: None,
        }
    }
}

impl FitConfig {
    pub fn new(method: Method) -> Self {
        FitConfig {
            method,
            ..FitConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.ms.xi > 0.0) {
            return Err(Error::InvalidConfig("xi must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidConfig(format!("delta={} outside (0, 1)", self.delta)));
        }
        if self.method == Method::OracleEm && self.support_mask.is_none() {
            return Err(Error::InvalidConfig("oracleem requires a support mask".into()));
        }
        if self.method == Method::GraphEm && self.custom_regularizer.is_none() && !(self.kappa >= 0.0) {
            return Err(Error::InvalidConfig("graphem requires kappa >= 0".into()));
        }
        Ok(())
    }

    /// The regularization terms `f_2..f_M` for this method, output term last.
    pub fn regularizer(&self) -> Result<Regularizer> {
        Ok(match self.method {
            Method::Mlem => Regularizer::empty(),
            Method::GraphEm => match &self.custom_regularizer {
                Some(reg) => reg.clone(),
                None => {
                    let sparsity = match &self.sparsity {
                        Sparsity::L1 => PenaltyTerm::L1 { weight: self.kappa },
                        Sparsity::BlockL21(blocks) => PenaltyTerm::BlockL21 {
                            weight: self.kappa,
                            blocks: blocks.clone(),
                        },
                    };
                    Regularizer::new(vec![PenaltyTerm::SpectralBall { radius: self.delta }, sparsity])
                }
            },
            Method::StableEm => Regularizer::new(vec![PenaltyTerm::SpectralBall { radius: self.delta }, PenaltyTerm::Zero]),
            Method::OracleEm => {
                let mask = self
                    .support_mask
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("oracleem requires a support mask".into()))?;
                Regularizer::new(vec![PenaltyTerm::SupportMask { mask }])
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub a_hat: Mat,
    /// MAP loss at `A^(0), ..., A^(em_iters)`.
    pub loss_trace: Vec<f64>,
    /// Relative error per iterate, when the truth was supplied.
    pub rmse_trace: Option<Vec<f64>>,
    pub em_iters: usize,
    pub converged: bool,
    /// M-steps that hit `ms.max_iters`.
    pub mstep_nonconverged: usize,
    pub inner_iterations: usize,
    pub smoother: SmootherOutput,
}

/// Random stable diagonal starting matrix, `‖A‖₂ ≤ δ`.
pub fn init_matrix(nx: usize, seed: u64, delta: f64) -> Result<Mat> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta={delta} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let diag = Vector::from_fn(nx, |_, _| rng.random_range(0.0..1.0));
    project_constraint(&PenaltyTerm::SpectralBall { radius: delta }, &Mat::from_diagonal(&diag))
}

/// Bring an M-step output back into the stability set of the consensus group.
///
/// With a `Zero` output term the projection is exact; otherwise the matrix is
/// rescaled radially so that exact zeros survive.
fn make_feasible(reg: &Regularizer, a: Mat) -> Result<Mat> {
    let Some((last, group)) = reg.terms.split_last() else {
        return Ok(a);
    };
    let mut a = a;
    for term in group {
        if let PenaltyTerm::SpectralBall { radius } = term {
            let norm = linalg::spectral_norm(&a);
            if norm > *radius {
                a = if *last == PenaltyTerm::Zero {
                    project_constraint(term, &a)?
                } else {
                    a * (radius / norm)
                };
            }
        }
    }
    Ok(a)
}

pub fn fit(params: &ModelParams, observations: &[Vector], cfg: &FitConfig) -> Result<FitResult> {
    fit_with_truth(params, observations, cfg, None)
}

/// [`fit`] that also records the relative error to `truth` at every iterate.
pub fn fit_with_truth(
    params: &ModelParams,
    observations: &[Vector],
    cfg: &FitConfig,
    truth: Option<&Mat>,
) -> Result<FitResult> {
    cfg.validate()?;
    let nx = params.state_dim();
    let reg = cfg.regularizer()?;
    reg.validate(nx)?;

    let mut a = match &cfg.init {
        InitSpec::Seed(seed) => init_matrix(nx, *seed, cfg.delta)?,
        InitSpec::Matrix(m) => {
            linalg::check_square(m, nx, "A_init")?;
            m.clone()
        }
    };
    if let Some(mask @ PenaltyTerm::SupportMask { .. }) = reg.output_term() {
        a = project_constraint(mask, &a)?;
    }

    let wrap = |iteration: usize| move |e: Error| Error::EmIteration { iteration, source: Box::new(e) };

    let mut filt = ssm::kalman_filter(params, &a, observations).map_err(wrap(0))?;
    let mut loss_trace = vec![ssm::neg_log_likelihood(&filt).map_err(wrap(0))? + reg.value(&a)];
    let mut rmse_trace = truth.map(|t| metrics::rmse(&a, t)).transpose()?.map(|r| vec![r]);
    let mut converged = false;
    let mut mstep_nonconverged = 0;
    let mut inner_iterations = 0;
    let mut em_iters = 0;

    while em_iters < cfg.max_em_iters {
        let i = em_iters + 1;
        let smooth = ssm::rts_smoother(params, &a, &filt).map_err(wrap(i))?;
        let stats = estep_stats(&smooth, &a);
        let a_next = match cfg.method {
            Method::Mlem => closed_form_mstep(&stats).map_err(wrap(i))?,
            _ => {
                let out = ms_solve(&stats, &params.q, &reg, &a, &cfg.ms).map_err(wrap(i))?;
                inner_iterations += out.iterations;
                if !out.converged {
                    mstep_nonconverged += 1;
                    log::warn!("EM iteration {i}: M-step did not reach xi");
                }
                make_feasible(&reg, out.a).map_err(wrap(i))?
            }
        };
        filt = ssm::kalman_filter(params, &a_next, observations).map_err(wrap(i))?;
        loss_trace.push(ssm::neg_log_likelihood(&filt).map_err(wrap(i))? + reg.value(&a_next));
        if let (Some(trace), Some(t)) = (rmse_trace.as_mut(), truth) {
            trace.push(metrics::rmse(&a_next, t)?);
        }
        let step = (&a_next - &a).norm();
        let scale = a.norm();
        a = a_next;
        em_iters = i;
        log::debug!("EM iteration {i}: loss {:.6e}, step {step:.3e}", loss_trace[i]);
        if step <= cfg.epsilon * scale {
            converged = true;
            break;
        }
    }
    let smoother = ssm::rts_smoother(params, &a, &filt).map_err(wrap(em_iters))?;
    Ok(FitResult {
        a_hat: a,
        loss_trace,
        rmse_trace,
        em_iters,
        converged,
        mstep_nonconverged,
        inner_iterations,
        smoother,
    })
}

/// Grid search over `kappas` for GraphEM, maximizing edge-detection accuracy
/// against `truth`. Returns the chosen weight and the accuracy of every candidate.
pub fn select_kappa(
    params: &ModelParams,
    observations: &[Vector],
    base: &FitConfig,
    kappas: &[f64],
    truth: &Mat,
) -> Result<(f64, Vec<(f64, f64)>)> {
    if kappas.is_empty() {
        return Err(Error::InvalidConfig("empty kappa grid".into()));
    }
    let mut scores = Vec::with_capacity(kappas.len());
    for &kappa in kappas {
        let cfg = FitConfig {
            method: Method::GraphEm,
            kappa,
            ..base.clone()
        };
        let fit = fit(params, observations, &cfg)?;
        let accuracy = metrics::detection(&fit.a_hat, truth, metrics::EDGE_THRESHOLD)?.accuracy;
        scores.push((kappa, accuracy));
    }
    let best = scores
        .iter()
        .copied()
        .fold(None, |best: Option<(f64, f64)>, cand| match best {
            Some(b) if b.1 >= cand.1 => Some(b),
            _ => Some(cand),
        })
        .map(|(k, _)| k)
        .expect("non-empty grid");
    Ok((best, scores))
}

/// Evaluate `map_loss` for a method's regularizer (used by the CLI and tests).
pub fn method_loss(a: &Mat, params: &ModelParams, observations: &[Vector], cfg: &FitConfig) -> Result<f64> {
    map_loss(a, params, observations, &cfg.regularizer()?)
}
