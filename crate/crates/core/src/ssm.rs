//! Linear-Gaussian state-space model: simulation, Kalman filtering, RTS
//! smoothing and the recursive likelihood.
//!
//! State:       `x_k = A x_{k-1} + q_k`,  `q_k ~ N(0, Q)`
//! Observation: `y_k = H_k x_k + r_k`,    `r_k ~ N(0, R_k)`
//! Prior:       `x_0 ~ N(x0_mean, P0)`
//!
//! Time indices follow the model: filtered and smoothed moments are stored for
//! `k = 0..=K`, per-observation quantities for `k = 1..=K` (at index `k - 1`).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, check_square, Mat, Vector};

/// A matrix that is either constant over time or given for every step.
#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSeq {
    Constant(Mat),
    Varying(Vec<Mat>),
}

impl MatrixSeq {
    /// Matrix in effect at observation step `k` (1-based).
    pub fn at(&self, k: usize) -> &Mat {
        match self {
            MatrixSeq::Constant(m) => m,
            MatrixSeq::Varying(ms) => &ms[k - 1],
        }
    }

    pub fn first(&self) -> &Mat {
        self.at(1)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, MatrixSeq::Constant(_))
    }

    fn distinct(&self) -> &[Mat] {
        match self {
            MatrixSeq::Constant(m) => std::slice::from_ref(m),
            MatrixSeq::Varying(ms) => ms,
        }
    }
}

impl From<Mat> for MatrixSeq {
    fn from(m: Mat) -> Self {
        MatrixSeq::Constant(m)
    }
}

/// Everything about the model except the transition matrix.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub q: Mat,
    pub h: MatrixSeq,
    pub r: MatrixSeq,
    pub x0_mean: Vector,
    pub p0: Mat,
    pub horizon: usize,
}

impl ModelParams {
    pub fn new(
        q: Mat,
        h: impl Into<MatrixSeq>,
        r: impl Into<MatrixSeq>,
        x0_mean: Vector,
        p0: Mat,
        horizon: usize,
    ) -> Result<Self> {
        let params = ModelParams {
            q,
            h: h.into(),
            r: r.into(),
            x0_mean,
            p0,
            horizon,
        };
        params.validate()?;
        Ok(params)
    }

    /// `Q = σ_Q² I`, `H = I`, `R = σ_R² I`, `P0 = σ_P² I`, zero prior mean.
    pub fn isotropic(nx: usize, sigma_q: f64, sigma_r: f64, sigma_p: f64, horizon: usize) -> Result<Self> {
        ModelParams::new(
            Mat::identity(nx, nx) * sigma_q.powi(2),
            Mat::identity(nx, nx),
            Mat::identity(nx, nx) * sigma_r.powi(2),
            Vector::zeros(nx),
            Mat::identity(nx, nx) * sigma_p.powi(2),
            horizon,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.first().nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let nx = self.q.nrows();
        if nx == 0 {
            return Err(Error::Dimension("state dimension must be positive".into()));
        }
        if self.horizon == 0 {
            return Err(Error::Dimension("horizon K must be positive".into()));
        }
        check_square(&self.q, nx, "Q")?;
        check_square(&self.p0, nx, "P0")?;
        if self.x0_mean.len() != nx {
            return Err(Error::Dimension(format!(
                "x0_mean has length {}, expected {nx}",
                self.x0_mean.len()
            )));
        }
        for (name, seq) in [("H", &self.h), ("R", &self.r)] {
            if let MatrixSeq::Varying(ms) = seq {
                if ms.len() != self.horizon {
                    return Err(Error::Dimension(format!(
                        "{name} sequence has {} entries, expected K={}",
                        ms.len(),
                        self.horizon
                    )));
                }
            }
        }
        let ny = self.obs_dim();
        if ny == 0 {
            return Err(Error::Dimension("observation dimension must be positive".into()));
        }
        for (k, h) in self.h.distinct().iter().enumerate() {
            if h.nrows() != ny || h.ncols() != nx {
                return Err(Error::Dimension(format!(
                    "H[{}] is {}x{}, expected {ny}x{nx}",
                    k + 1,
                    h.nrows(),
                    h.ncols()
                )));
            }
        }
        for (k, r) in self.r.distinct().iter().enumerate() {
            check_square(r, ny, &format!("R[{}]", k + 1))?;
        }
        positive_definite(&self.q, "Q")?;
        positive_definite(&self.p0, "P0")?;
        for (k, r) in self.r.distinct().iter().enumerate() {
            let name = if self.r.is_constant() { "R".to_string() } else { format!("R[{}]", k + 1) };
            positive_definite(r, &name)?;
        }
        Ok(())
    }
}

fn positive_definite(m: &Mat, name: &str) -> Result<()> {
    if !linalg::is_symmetric(m, 1e-12 * m.amax().max(1.0)) {
        return Err(Error::NotPositiveDefinite(name.to_string()));
    }
    linalg::cholesky(m, name).map(|_| ())
}

/// A simulated realization: states `x_0..x_K` and observations `y_1..y_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    pub observations: Vec<Vector>,
    pub seed: u64,
}

fn standard_normal(rng: &mut ChaCha8Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Draw a trajectory of the model with transition matrix `a`.
pub fn simulate(params: &ModelParams, a: &Mat, seed: u64) -> Result<Trajectory> {
    params.validate()?;
    let nx = params.state_dim();
    check_square(a, nx, "A")?;
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::Dimension("A has non-finite entries".into()));
    }
    let lq = linalg::cholesky(&params.q, "Q")?.l();
    let lp0 = linalg::cholesky(&params.p0, "P0")?.l();
    let lr: Vec<Mat> = params
        .r
        .distinct()
        .iter()
        .map(|r| linalg::cholesky(r, "R").map(|c| c.l()))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(params.horizon + 1);
    let mut observations = Vec::with_capacity(params.horizon);
    let x0 = &params.x0_mean + &lp0 * standard_normal(&mut rng, nx);
    states.push(x0);
    for k in 1..=params.horizon {
        let noise = &lq * standard_normal(&mut rng, nx);
        let x = a * &states[k - 1] + noise;
        let h = params.h.at(k);
        let l = if params.r.is_constant() { &lr[0] } else { &lr[k - 1] };
        let y = h * &x + l * standard_normal(&mut rng, h.nrows());
        states.push(x);
        observations.push(y);
    }
    Ok(Trajectory { states, observations, seed })
}

/// Output of one predict/update cycle.
#[derive(Debug, Clone)]
pub struct KalmanStep {
    pub pred_mean: Vector,
    pub pred_cov: Mat,
    pub mean: Vector,
    pub cov: Mat,
    pub innovation: Vector,
    pub innovation_cov: Mat,
    pub gain: Mat,
}

/// One Kalman recursion from `(m_{k-1}, P_{k-1})` given `y_k`.
///
/// `step` is only used to label a breakdown of `S_k`.
#[allow(clippy::too_many_arguments)]
pub fn kalman_step(
    a: &Mat,
    q: &Mat,
    h: &Mat,
    r: &Mat,
    mean: &Vector,
    cov: &Mat,
    y: &Vector,
    step: usize,
) -> Result<KalmanStep> {
    let pred_mean = a * mean;
    let pred_cov = linalg::symmetrized(a * cov * a.transpose() + q);
    let innovation = y - h * &pred_mean;
    let hp = h * &pred_cov;
    let innovation_cov = linalg::symmetrized(&hp * h.transpose() + r);
    let chol = linalg::cholesky(&innovation_cov, "S").map_err(|_| Error::FilterBreakdown { step })?;
    // K = P⁻ Hᵀ S⁻¹ = (S⁻¹ H P⁻)ᵀ
    let gain = chol.solve(&hp).transpose();
    let new_mean = &pred_mean + &gain * &innovation;
    let new_cov = linalg::symmetrized(&pred_cov - &gain * &innovation_cov * gain.transpose());
    Ok(KalmanStep {
        pred_mean,
        pred_cov,
        mean: new_mean,
        cov: new_cov,
        innovation,
        innovation_cov,
        gain,
    })
}

/// Filtered moments and innovation sequence.
#[derive(Debug, Clone)]
pub struct FilterOutput {
    /// `m⁻_k`, `k = 1..=K` at index `k - 1`.
    pub pred_means: Vec<Vector>,
    /// `P⁻_k`, `k = 1..=K` at index `k - 1`.
    pub pred_covs: Vec<Mat>,
    /// `m_k`, `k = 0..=K`; `m_0` is the prior mean.
    pub means: Vec<Vector>,
    /// `P_k`, `k = 0..=K`; `P_0` is the prior covariance.
    pub covs: Vec<Mat>,
    pub innovations: Vec<Vector>,
    pub innovation_covs: Vec<Mat>,
    pub gains: Vec<Mat>,
}

impl FilterOutput {
    pub fn horizon(&self) -> usize {
        self.innovations.len()
    }
}

pub fn kalman_filter(params: &ModelParams, a: &Mat, observations: &[Vector]) -> Result<FilterOutput> {
    let nx = params.state_dim();
    check_square(a, nx, "A")?;
    if observations.len() != params.horizon {
        return Err(Error::Dimension(format!(
            "{} observations for horizon K={}",
            observations.len(),
            params.horizon
        )));
    }
    let ny = params.obs_dim();
    if let Some((k, _)) = observations.iter().enumerate().find(|(_, y)| y.len() != ny) {
        return Err(Error::Dimension(format!("observation {} has wrong length", k + 1)));
    }
    let kk = params.horizon;
    let mut out = FilterOutput {
        pred_means: Vec::with_capacity(kk),
        pred_covs: Vec::with_capacity(kk),
        means: Vec::with_capacity(kk + 1),
        covs: Vec::with_capacity(kk + 1),
        innovations: Vec::with_capacity(kk),
        innovation_covs: Vec::with_capacity(kk),
        gains: Vec::with_capacity(kk),
    };
    out.means.push(params.x0_mean.clone());
    out.covs.push(linalg::symmetrized(params.p0.clone()));
    for (idx, y) in observations.iter().enumerate() {
        let k = idx + 1;
        let step = kalman_step(
            a,
            &params.q,
            params.h.at(k),
            params.r.at(k),
            &out.means[idx],
            &out.covs[idx],
            y,
            k,
        )?;
        out.pred_means.push(step.pred_mean);
        out.pred_covs.push(step.pred_cov);
        out.means.push(step.mean);
        out.covs.push(step.cov);
        out.innovations.push(step.innovation);
        out.innovation_covs.push(step.innovation_cov);
        out.gains.push(step.gain);
    }
    Ok(out)
}

/// Smoothed moments for `k = 0..=K` and smoother gains `G_0..G_{K-1}`.
#[derive(Debug, Clone)]
pub struct SmootherOutput {
    pub means: Vec<Vector>,
    pub covs: Vec<Mat>,
    pub gains: Vec<Mat>,
    /// Number of backward steps where `P⁻_{k+1}` needed diagonal jitter.
    pub jitter_steps: usize,
}

/// Rauch–Tung–Striebel backward pass over a filter run with the same `(params, a)`.
pub fn rts_smoother(params: &ModelParams, a: &Mat, filt: &FilterOutput) -> Result<SmootherOutput> {
    let kk = filt.horizon();
    check_square(a, params.state_dim(), "A")?;
    let mut means = filt.means.clone();
    let mut covs = filt.covs.clone();
    let mut gains = vec![Mat::zeros(0, 0); kk];
    let mut jitter_steps = 0;
    for k in (0..kk).rev() {
        let pred_mean = a * &filt.means[k];
        let pred_cov = linalg::symmetrized(a * &filt.covs[k] * a.transpose() + &params.q);
        let (chol, jittered) = linalg::cholesky_jittered(&pred_cov, &format!("P⁻[{}]", k + 1))?;
        if jittered {
            jitter_steps += 1;
        }
        // G = P Aᵀ (P⁻)⁻¹ = ((P⁻)⁻¹ A P)ᵀ
        let gain = chol.solve(&(a * &filt.covs[k])).transpose();
        let mean = &filt.means[k] + &gain * (&means[k + 1] - &pred_mean);
        let cov = linalg::symmetrized(&filt.covs[k] + &gain * (&covs[k + 1] - &pred_cov) * gain.transpose());
        means[k] = mean;
        covs[k] = cov;
        gains[k] = gain;
    }
    if jitter_steps > 0 {
        log::warn!("RTS smoother needed diagonal jitter on {jitter_steps} step(s)");
    }
    Ok(SmootherOutput {
        means,
        covs,
        gains,
        jitter_steps,
    })
}

/// `-log p(y_{1:K} | A)` from the innovations of a filter run.
pub fn neg_log_likelihood(filt: &FilterOutput) -> Result<f64> {
    let mut total = 0.0;
    for (k, (v, s)) in filt.innovations.iter().zip(&filt.innovation_covs).enumerate() {
        let chol = linalg::cholesky(s, "S").map_err(|_| Error::FilterBreakdown { step: k + 1 })?;
        let ny = v.len() as f64;
        let log_det = ny * (2.0 * std::f64::consts::PI).ln() + linalg::log_det(&chol);
        total += 0.5 * log_det + 0.5 * v.dot(&chol.solve(v));
    }
    Ok(total)
}

/// Filter followed by smoother.
pub fn filter_and_smooth(
    params: &ModelParams,
    a: &Mat,
    observations: &[Vector],
) -> Result<(FilterOutput, SmootherOutput)> {
    let filt = kalman_filter(params, a, observations)?;
    let smooth = rts_smoother(params, a, &filt)?;
    Ok((filt, smooth))
}
