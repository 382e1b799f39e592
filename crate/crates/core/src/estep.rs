//! E-step sufficient statistics and the losses built from them.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::prox::Regularizer;
use crate::ssm::{self, ModelParams, SmootherOutput};

/// Second-moment sums of the smoothing posterior formed at `a_ref`:
///
/// `Ψ = Σ_{k=1}^K (P^s_k + m^s_k m^s_kᵀ)`
/// `Δ = Σ_{k=1}^K (P^s_k G_{k-1}ᵀ + m^s_k m^s_{k-1}ᵀ)`
/// `Φ = Σ_{k=1}^K (P^s_{k-1} + m^s_{k-1} m^s_{k-1}ᵀ)`
#[derive(Debug, Clone, PartialEq)]
pub struct EStepStats {
    pub psi: Mat,
    pub delta: Mat,
    pub phi: Mat,
    pub horizon: usize,
    pub a_ref: Mat,
}

pub fn estep_stats(smooth: &SmootherOutput, a_ref: &Mat) -> EStepStats {
    let kk = smooth.gains.len();
    let n = smooth.means[0].len();
    let mut psi = Mat::zeros(n, n);
    let mut delta = Mat::zeros(n, n);
    let mut phi = Mat::zeros(n, n);
    for k in 1..=kk {
        let (m, m_prev): (&Vector, &Vector) = (&smooth.means[k], &smooth.means[k - 1]);
        psi += &smooth.covs[k] + m * m.transpose();
        delta += &smooth.covs[k] * smooth.gains[k - 1].transpose() + m * m_prev.transpose();
        phi += &smooth.covs[k - 1] + m_prev * m_prev.transpose();
    }
    linalg::symmetrize(&mut psi);
    linalg::symmetrize(&mut phi);
    EStepStats {
        psi,
        delta,
        phi,
        horizon: kk,
        a_ref: a_ref.clone(),
    }
}

/// Run filter and smoother at `a` and collect the statistics.
pub fn estep(params: &ModelParams, a: &Mat, observations: &[Vector]) -> Result<EStepStats> {
    let (_, smooth) = ssm::filter_and_smooth(params, a, observations)?;
    Ok(estep_stats(&smooth, a))
}

/// Precomputed `Q⁻¹` for repeated evaluations of the quadratic term.
#[derive(Debug, Clone)]
pub struct QuadraticTerm {
    q_inv: Mat,
    stats: EStepStats,
}

impl QuadraticTerm {
    pub fn new(stats: &EStepStats, q: &Mat) -> Result<Self> {
        if q.nrows() != stats.phi.nrows() || !q.is_square() {
            return Err(Error::Dimension("Q does not match the statistics".into()));
        }
        let q_inv = linalg::cholesky(q, "Q")?.inverse();
        Ok(QuadraticTerm {
            q_inv,
            stats: stats.clone(),
        })
    }

    /// `f₁(A) = ½ tr(Q⁻¹(Ψ − ΔAᵀ − AΔᵀ + AΦAᵀ))`, i.e. `−q(A)`.
    pub fn value(&self, a: &Mat) -> f64 {
        let s = &self.stats;
        let ad = a * s.delta.transpose();
        let inner = &s.psi - &ad - ad.transpose() + a * &s.phi * a.transpose();
        0.5 * self.q_inv.component_mul(&inner).sum()
    }

    /// `∇f₁(A) = Q⁻¹(AΦ − Δ)`.
    pub fn gradient(&self, a: &Mat) -> Mat {
        &self.q_inv * (a * &self.stats.phi - &self.stats.delta)
    }

    pub fn stats(&self) -> &EStepStats {
        &self.stats
    }
}

/// `q(A; A_ref) = −½ tr(Q⁻¹(Ψ − ΔAᵀ − AΔᵀ + AΦAᵀ))` with the constant dropped.
pub fn q_value(a: &Mat, stats: &EStepStats, q: &Mat) -> Result<f64> {
    Ok(-QuadraticTerm::new(stats, q)?.value(a))
}

/// Gradient of `q_value` in `A`: `Q⁻¹(Δ − AΦ)`.
pub fn q_gradient(a: &Mat, stats: &EStepStats, q: &Mat) -> Result<Mat> {
    Ok(-QuadraticTerm::new(stats, q)?.gradient(a))
}

/// Majorizing surrogate `−q(A) + L₀(A)` (up to a constant).
pub fn surrogate(a: &Mat, stats: &EStepStats, q: &Mat, reg: &Regularizer) -> Result<f64> {
    Ok(-q_value(a, stats, q)? + reg.value(a))
}

/// MAP loss `−log p(y | A) + L₀(A)`; `+∞` outside a constraint set.
pub fn map_loss(a: &Mat, params: &ModelParams, observations: &[Vector], reg: &Regularizer) -> Result<f64> {
    let prior = reg.value(a);
    if prior.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let filt = ssm::kalman_filter(params, a, observations)?;
    Ok(ssm::neg_log_likelihood(&filt)? + prior)
}
