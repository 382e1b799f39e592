//! M-step solvers: the consensus monotone+skew primal-dual iteration for the
//! regularized surrogate, and the closed-form unregularized update.

use crate::error::{Error, Result};
use crate::estep::{EStepStats, QuadraticTerm};
use crate::linalg::{self, Mat};
use crate::prox::{PenaltyTerm, QuadraticProx, Regularizer};

/// Step sizes and stopping rule of the primal-dual M-step.
///
/// `lambda`/`gamma` left as `None` resolve to `λ = 0.9/M` and
/// `γ = (1 − λ)/(M − 1)` for the actual number of terms `M`.
///
/// The iteration runs on the objective divided by the `scaling` factor,
/// which leaves the minimizer unchanged but not the path. The default is
/// the plain iteration; [`Scaling::Auto`] converges much faster when `f₁` is
/// strongly curved (long records, small `Q`).
#[derive(Debug, Clone, PartialEq)]
pub struct MsConfig {
    pub lambda: Option<f64>,
    pub gamma: Option<f64>,
    pub xi: f64,
    pub max_iters: usize,
    pub scaling: Scaling,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scaling {
    Fixed(f64),
    /// `√(μ L)` from the extreme eigenvalues of the Hessian of `f₁`.
    Auto,
}

impl Default for Scaling {
    fn default() -> Self {
        Scaling::Fixed(1.0)
    }
}

impl std::str::FromStr for Scaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Scaling::Auto);
        }
        s.parse()
            .map(Scaling::Fixed)
            .map_err(|_| Error::InvalidConfig(format!("ms.scaling must be `auto` or a number, got `{s}`")))
    }
}

impl Default for MsConfig {
    fn default() -> Self {
        MsConfig {
            lambda: None,
            gamma: None,
            xi: 1e-4,
            max_iters: 50_000,
            scaling: Scaling::default(),
        }
    }
}

impl MsConfig {
    /// `(λ, γ)` for `m_terms` functions, checked against
    /// `λ ∈ (0, 1/M)` and `γ ∈ [λ, (1 − λ)/(M − 1)]`.
    pub fn step_sizes(&self, m_terms: usize) -> Result<(f64, f64)> {
        if m_terms < 2 {
            return Err(Error::InvalidConfig("the splitting needs at least two terms".into()));
        }
        let m = m_terms as f64;
        let lambda = self.lambda.unwrap_or(0.9 / m);
        if !(lambda > 0.0 && lambda < 1.0 / m) {
            return Err(Error::InvalidConfig(format!("ms.lambda={lambda} outside (0, 1/{m_terms})")));
        }
        let upper = (1.0 - lambda) / (m - 1.0);
        let gamma = self.gamma.unwrap_or(upper);
        if !(gamma >= lambda && gamma <= upper) {
            return Err(Error::InvalidConfig(format!(
                "ms.gamma={gamma} outside [{lambda}, {upper}]"
            )));
        }
        if !(self.xi > 0.0) {
            return Err(Error::InvalidConfig("ms.xi must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("ms.max_iters must be positive".into()));
        }
        if let Scaling::Fixed(rho) = self.scaling {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(Error::InvalidConfig(format!("ms.scaling={rho} must be positive")));
            }
        }
        Ok((lambda, gamma))
    }
}

#[derive(Debug, Clone)]
pub struct MsOutput {
    /// Output of the `f_M` prox branch at the last iteration.
    pub a: Mat,
    pub iterations: usize,
    pub converged: bool,
    /// Surrogate value at `a`, constraint indicators excluded.
    pub objective: f64,
    /// Largest Frobenius norm reached by the output branch.
    pub peak_norm: f64,
}

enum ConsensusTerm<'a> {
    Quadratic(QuadraticProx),
    Penalty(&'a PenaltyTerm),
}

impl ConsensusTerm<'_> {
    /// `prox_{f/(γρ)}(w / γ)`; the quadratic carries its scale from construction.
    fn prox_scaled(&self, w: &Mat, gamma: f64, rho: f64) -> Result<Mat> {
        let point = w / gamma;
        match self {
            ConsensusTerm::Quadratic(p) => Ok(p.apply(&point)),
            ConsensusTerm::Penalty(t) => t.prox(&point, 1.0 / (gamma * rho)),
        }
    }
}

fn auto_scaling(prox: &QuadraticProx) -> f64 {
    let (lo, hi) = prox.curvature_range();
    if !(hi > 0.0 && hi.is_finite()) {
        return 1.0;
    }
    (lo.max(1e-6 * hi) * hi).sqrt()
}

/// Minimize `f₁(A) + Σ_m f_m(A)` where `f₁` is the E-step quadratic and the
/// `f_m` are the regularizer's terms.
///
/// `f₁` and every term but the last form the consensus group; the last term
/// is applied through its own prox, whose output is returned, so an L1 or
/// block-L21 last term yields exact zeros. All primal and dual variables
/// start at `a_init`.
///
/// Stops once the objective change is at most `xi` and the relative change
/// of the primal-dual state is at most `xi` as well; the second test keeps a
/// sparse output that sits exactly still while the duals build up from
/// stopping the loop.
pub fn ms_solve(stats: &EStepStats, q: &Mat, reg: &Regularizer, a_init: &Mat, cfg: &MsConfig) -> Result<MsOutput> {
    let n = stats.phi.nrows();
    linalg::check_square(a_init, n, "A_init")?;
    reg.validate(n)?;
    let (output_term, consensus_terms) = reg
        .terms
        .split_last()
        .ok_or_else(|| Error::InvalidConfig("ms_solve needs at least one regularization term".into()))?;
    let m_terms = 1 + reg.terms.len();
    let (_, gamma) = cfg.step_sizes(m_terms)?;

    let quad = QuadraticTerm::new(stats, q)?;
    let rho = match cfg.scaling {
        Scaling::Fixed(rho) => rho,
        Scaling::Auto => auto_scaling(&QuadraticProx::new(stats, q, 1.0)?),
    };
    let mut group: Vec<ConsensusTerm> = Vec::with_capacity(m_terms - 1);
    group.push(ConsensusTerm::Quadratic(QuadraticProx::new(stats, q, 1.0 / (gamma * rho))?));
    group.extend(consensus_terms.iter().map(ConsensusTerm::Penalty));

    let objective = |a: &Mat| quad.value(a) + reg.penalty_value(a);

    let mut v: Vec<Mat> = vec![a_init.clone(); m_terms - 1];
    let mut v_out = a_init.clone();
    let mut a_out = a_init.clone();
    let mut prev_obj = objective(a_init);
    let mut peak_norm = a_init.norm();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        let sum_v = v.iter().fold(Mat::zeros(n, n), |acc, x| acc + x);
        let w_out = &v_out - &sum_v * gamma;
        let mut a_group = Vec::with_capacity(v.len());
        let mut w_group = Vec::with_capacity(v.len());
        for (term, v_m) in group.iter().zip(&v) {
            let w_m = v_m + &v_out * gamma;
            let a_m = &w_m - term.prox_scaled(&w_m, gamma, rho)? * gamma;
            w_group.push(w_m);
            a_group.push(a_m);
        }
        let a_new = output_term.prox(&w_out, gamma / rho)?;
        let sum_a = a_group.iter().fold(Mat::zeros(n, n), |acc, x| acc + x);
        let z_out = &a_new - sum_a * gamma;
        let mut moved = 0.0;
        let mut size = 0.0;
        for ((v_m, w_m), a_m) in v.iter_mut().zip(&w_group).zip(&a_group) {
            let z_m = a_m + &a_new * gamma;
            let step = z_m - w_m;
            moved += step.norm_squared();
            *v_m += step;
            size += v_m.norm_squared();
        }
        let step = z_out - w_out;
        moved += step.norm_squared();
        v_out += step;
        size += v_out.norm_squared();
        // fixed-point residual of the whole primal-dual state
        let residual = moved.sqrt() / (1.0 + size.sqrt());

        peak_norm = peak_norm.max(a_new.norm());
        a_out = a_new;
        let obj = objective(&a_out);
        if !obj.is_finite() {
            return Err(Error::Singular(format!("M-step diverged at inner iteration {iterations}")));
        }
        let change = (obj - prev_obj).abs();
        prev_obj = obj;
        if iterations >= 2 && change <= cfg.xi && residual <= cfg.xi {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("M-step stopped at max_iters={} without meeting xi={}", cfg.max_iters, cfg.xi);
    }
    Ok(MsOutput {
        a: a_out,
        iterations,
        converged,
        objective: prev_obj,
        peak_norm,
    })
}

/// Unregularized maximizer `ΔΦ⁻¹` of the E-step quadratic.
pub fn closed_form_mstep(stats: &EStepStats) -> Result<Mat> {
    let (chol, jittered) = linalg::cholesky_jittered(&stats.phi, "Φ")?;
    if jittered {
        log::warn!("Φ needed diagonal jitter in the closed-form M-step");
    }
    Ok(linalg::right_solve_spd(&chol, &stats.delta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estep::q_gradient;

    fn stats(delta: Mat, phi: Mat) -> EStepStats {
        let n = phi.nrows();
        EStepStats {
            psi: Mat::identity(n, n) * 10.0,
            delta,
            phi,
            horizon: 1,
            a_ref: Mat::zeros(n, n),
        }
    }

    #[test]
    fn default_step_sizes() {
        let (l, g) = MsConfig::default().step_sizes(3).unwrap();
        assert!((l - 0.3).abs() < 1e-15);
        assert!((g - 0.35).abs() < 1e-15);
        let (l, g) = MsConfig::default().step_sizes(2).unwrap();
        assert!((l - 0.45).abs() < 1e-15);
        assert!((g - 0.55).abs() < 1e-15);
    }

    #[test]
    fn step_size_ranges_enforced() {
        let cfg = MsConfig {
            lambda: Some(0.5),
            ..MsConfig::default()
        };
        assert!(cfg.step_sizes(3).is_err());
        let cfg = MsConfig {
            gamma: Some(0.9),
            ..MsConfig::default()
        };
        assert!(cfg.step_sizes(3).is_err());
        assert!(MsConfig::default().step_sizes(1).is_err());
    }

    #[test]
    fn closed_form_identity_and_scalar() {
        let phi = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let out = closed_form_mstep(&stats(phi.clone(), phi)).unwrap();
        assert!((out - Mat::identity(2, 2)).amax() < 1e-14);
        let s = stats(Mat::from_element(1, 1, 2.0), Mat::from_element(1, 1, 4.0));
        assert_eq!(closed_form_mstep(&s).unwrap()[(0, 0)], 0.5);
    }

    #[test]
    fn closed_form_zeroes_gradient() {
        let phi = Mat::from_row_slice(3, 3, &[3.0, 0.2, -0.1, 0.2, 2.0, 0.3, -0.1, 0.3, 1.5]);
        let delta = Mat::from_row_slice(3, 3, &[1.0, -0.5, 0.2, 0.3, 0.8, -0.1, 0.0, 0.4, 0.9]);
        let q = Mat::from_row_slice(3, 3, &[1.0, 0.1, 0.0, 0.1, 0.5, 0.05, 0.0, 0.05, 0.8]);
        let s = stats(delta, phi);
        let a = closed_form_mstep(&s).unwrap();
        assert!(q_gradient(&a, &s, &q).unwrap().amax() < 1e-9);
    }

    #[test]
    fn empty_regularizer_rejected() {
        let s = stats(Mat::zeros(2, 2), Mat::identity(2, 2));
        let err = ms_solve(&s, &Mat::identity(2, 2), &Regularizer::empty(), &Mat::zeros(2, 2), &MsConfig::default());
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn huge_l1_weight_gives_null_matrix() {
        let phi = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let delta = Mat::from_row_slice(2, 2, &[0.9, -0.2, 0.4, 0.7]);
        let reg = Regularizer::new(vec![
            PenaltyTerm::SpectralBall { radius: 0.99 },
            PenaltyTerm::L1 { weight: 1e6 },
        ]);
        let out = ms_solve(
            &stats(delta, phi),
            &Mat::identity(2, 2),
            &reg,
            &(Mat::identity(2, 2) * 0.5),
            &MsConfig::default(),
        )
        .unwrap();
        assert!(out.a.iter().all(|v| *v == 0.0));
    }
}
