//! Proximity operators and projections used by the M-step.
//!
//! Penalties carry a weight `κ`; the prox of `θ·κ·f` is evaluated with the
//! effective threshold `θκ`. Constraint terms are indicator functions, so
//! their prox is the projection for every `θ`.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estep::EStepStats;
use crate::linalg::{self, Mat, SymmetricSylvester};

/// Feasibility slack used when evaluating indicator functions.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Partition of the `n × n` entries of a matrix into equal-size blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMap {
    dim: usize,
    blocks: Vec<Vec<(usize, usize)>>,
}

impl BlockMap {
    pub fn new(dim: usize, blocks: Vec<Vec<(usize, usize)>>) -> Result<Self> {
        let total = dim * dim;
        if blocks.is_empty() || total % blocks.len() != 0 {
            return Err(Error::InvalidConfig(format!(
                "{} blocks do not divide {total} entries",
                blocks.len()
            )));
        }
        let size = total / blocks.len();
        let mut seen = vec![false; total];
        for block in &blocks {
            if block.len() != size {
                return Err(Error::InvalidConfig("blocks must have equal size".into()));
            }
            for &(i, j) in block {
                if i >= dim || j >= dim {
                    return Err(Error::InvalidConfig(format!("block entry ({i},{j}) out of range")));
                }
                let idx = i + j * dim;
                if seen[idx] {
                    return Err(Error::InvalidConfig(format!("entry ({i},{j}) appears in two blocks")));
                }
                seen[idx] = true;
            }
        }
        Ok(BlockMap { dim, blocks })
    }

    /// `count` consecutive chunks of the column-major vectorization.
    pub fn contiguous(dim: usize, count: usize) -> Result<Self> {
        let total = dim * dim;
        if count == 0 || total % count != 0 {
            return Err(Error::InvalidConfig(format!("{count} blocks do not divide {total} entries")));
        }
        let size = total / count;
        let blocks = (0..count)
            .map(|b| (b * size..(b + 1) * size).map(|idx| (idx % dim, idx / dim)).collect())
            .collect();
        BlockMap::new(dim, blocks)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn blocks(&self) -> &[Vec<(usize, usize)>] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn block_norm(&self, a: &Mat, b: usize) -> f64 {
        self.blocks[b].iter().map(|&(i, j)| a[(i, j)].powi(2)).sum::<f64>().sqrt()
    }
}

/// One term of the regularization, either a penalty or a constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum PenaltyTerm {
    /// `κ ‖A‖₁`
    L1 { weight: f64 },
    /// `κ Σ_b ‖a(b)‖₂`
    BlockL21 { weight: f64, blocks: BlockMap },
    /// `κ/2 ‖A‖²_F`
    Gaussian { weight: f64 },
    /// `κ (‖A‖₁ + ½‖A‖²_F)`
    ElasticNet { weight: f64 },
    /// `‖A‖₂ ≤ δ`
    SpectralBall { radius: f64 },
    /// `a_min ≤ A(i,j) ≤ a_max`
    BoxRange { min: f64, max: f64 },
    /// `‖A‖_F ≤ δ`
    FrobeniusBall { radius: f64 },
    /// `A(i,j) = 0` wherever the mask is false
    SupportMask { mask: DMatrix<bool> },
    Zero,
}

impl PenaltyTerm {
    pub fn kind(&self) -> &'static str {
        match self {
            PenaltyTerm::L1 { .. } => "l1",
            PenaltyTerm::BlockL21 { .. } => "l21",
            PenaltyTerm::Gaussian { .. } => "gaussian",
            PenaltyTerm::ElasticNet { .. } => "elasticnet",
            PenaltyTerm::SpectralBall { .. } => "spectral",
            PenaltyTerm::BoxRange { .. } => "box",
            PenaltyTerm::FrobeniusBall { .. } => "frobenius",
            PenaltyTerm::SupportMask { .. } => "mask",
            PenaltyTerm::Zero => "zero",
        }
    }

    pub fn is_constraint(&self) -> bool {
        matches!(
            self,
            PenaltyTerm::SpectralBall { .. }
                | PenaltyTerm::BoxRange { .. }
                | PenaltyTerm::FrobeniusBall { .. }
                | PenaltyTerm::SupportMask { .. }
        )
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self {
            PenaltyTerm::L1 { weight } | PenaltyTerm::Gaussian { weight } | PenaltyTerm::ElasticNet { weight } => {
                if !(*weight >= 0.0 && weight.is_finite()) {
                    return bad(format!("{} weight must be nonnegative, got {weight}", self.kind()));
                }
            }
            PenaltyTerm::BlockL21 { weight, blocks } => {
                if !(*weight >= 0.0 && weight.is_finite()) {
                    return bad(format!("l21 weight must be nonnegative, got {weight}"));
                }
                if blocks.dim() != dim {
                    return bad(format!("block map is for {}x{} matrices", blocks.dim(), blocks.dim()));
                }
            }
            PenaltyTerm::SpectralBall { radius } | PenaltyTerm::FrobeniusBall { radius } => {
                if !(*radius > 0.0) {
                    return bad(format!("{} radius must be positive, got {radius}", self.kind()));
                }
            }
            PenaltyTerm::BoxRange { min, max } => {
                if !(min <= max) {
                    return bad(format!("box bounds need a_min <= a_max, got [{min}, {max}]"));
                }
            }
            PenaltyTerm::SupportMask { mask } => {
                if mask.nrows() != dim || mask.ncols() != dim {
                    return bad(format!("mask is {}x{}, expected {dim}x{dim}", mask.nrows(), mask.ncols()));
                }
            }
            PenaltyTerm::Zero => {}
        }
        Ok(())
    }

    /// Value of the term at `a`; `+∞` outside a constraint set.
    pub fn value(&self, a: &Mat) -> f64 {
        let indicator = |ok: bool| if ok { 0.0 } else { f64::INFINITY };
        match self {
            PenaltyTerm::L1 { weight } => weight * a.iter().map(|v| v.abs()).sum::<f64>(),
            PenaltyTerm::BlockL21 { weight, blocks } => {
                weight * (0..blocks.len()).map(|b| blocks.block_norm(a, b)).sum::<f64>()
            }
            PenaltyTerm::Gaussian { weight } => 0.5 * weight * a.norm_squared(),
            PenaltyTerm::ElasticNet { weight } => {
                weight * (a.iter().map(|v| v.abs()).sum::<f64>() + 0.5 * a.norm_squared())
            }
            PenaltyTerm::SpectralBall { radius } => indicator(linalg::spectral_norm(a) <= radius + FEASIBILITY_TOL),
            PenaltyTerm::BoxRange { min, max } => indicator(
                a.iter()
                    .all(|&v| v >= min - FEASIBILITY_TOL && v <= max + FEASIBILITY_TOL),
            ),
            PenaltyTerm::FrobeniusBall { radius } => indicator(a.norm() <= radius + FEASIBILITY_TOL),
            PenaltyTerm::SupportMask { mask } => {
                indicator(a.iter().zip(mask.iter()).all(|(&v, &keep)| keep || v == 0.0))
            }
            PenaltyTerm::Zero => 0.0,
        }
    }

    /// `prox_{θ f}(a)` for any term of the catalog.
    pub fn prox(&self, a: &Mat, theta: f64) -> Result<Mat> {
        if self.is_constraint() {
            project_constraint(self, a)
        } else {
            prox_penalty(self, a, theta)
        }
    }
}

impl fmt::Display for PenaltyTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PenaltyTerm::L1 { weight }
            | PenaltyTerm::Gaussian { weight }
            | PenaltyTerm::ElasticNet { weight } => write!(f, "{}(kappa={weight})", self.kind()),
            PenaltyTerm::BlockL21 { weight, blocks } => {
                write!(f, "l21(kappa={weight}, blocks={})", blocks.len())
            }
            PenaltyTerm::SpectralBall { radius } | PenaltyTerm::FrobeniusBall { radius } => {
                write!(f, "{}(delta={radius})", self.kind())
            }
            PenaltyTerm::BoxRange { min, max } => write!(f, "box([{min}, {max}])"),
            PenaltyTerm::SupportMask { mask } => write!(f, "mask({} kept)", mask.iter().filter(|&&m| m).count()),
            PenaltyTerm::Zero => write!(f, "zero"),
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    let mag = v.abs() - t;
    if mag > 0.0 {
        v.signum() * mag
    } else {
        0.0
    }
}

/// Closed-form prox of a penalty term at scale `theta`.
pub fn prox_penalty(term: &PenaltyTerm, a: &Mat, theta: f64) -> Result<Mat> {
    if !(theta > 0.0) {
        return Err(Error::InvalidConfig(format!("prox scale must be positive, got {theta}")));
    }
    Ok(match term {
        PenaltyTerm::L1 { weight } => {
            let t = theta * weight;
            a.map(|v| soft_threshold(v, t))
        }
        PenaltyTerm::BlockL21 { weight, blocks } => {
            let t = theta * weight;
            let mut out = a.clone();
            for (b, block) in blocks.blocks().iter().enumerate() {
                let norm = blocks.block_norm(a, b);
                if norm <= t {
                    for &(i, j) in block {
                        out[(i, j)] = 0.0;
                    }
                } else {
                    let scale = 1.0 - t / norm;
                    for &(i, j) in block {
                        out[(i, j)] *= scale;
                    }
                }
            }
            out
        }
        PenaltyTerm::Gaussian { weight } => a / (1.0 + theta * weight),
        PenaltyTerm::ElasticNet { weight } => {
            let t = theta * weight;
            a.map(|v| soft_threshold(v / (1.0 + t), t / (1.0 + t)))
        }
        PenaltyTerm::Zero => a.clone(),
        _ => {
            return Err(Error::WrongTermKind {
                op: "prox_penalty",
                kind: term.kind(),
            })
        }
    })
}

/// Euclidean projection onto a constraint set.
pub fn project_constraint(term: &PenaltyTerm, a: &Mat) -> Result<Mat> {
    match term {
        PenaltyTerm::SpectralBall { radius } => project_spectral(a, *radius),
        PenaltyTerm::BoxRange { min, max } => Ok(a.map(|v| v.max(*min).min(*max))),
        PenaltyTerm::FrobeniusBall { radius } => {
            let norm = a.norm();
            Ok(if norm > *radius { a * (radius / norm) } else { a.clone() })
        }
        PenaltyTerm::SupportMask { mask } => {
            let mut out = a.clone();
            for (v, &keep) in out.iter_mut().zip(mask.iter()) {
                if !keep {
                    *v = 0.0;
                }
            }
            Ok(out)
        }
        _ => Err(Error::WrongTermKind {
            op: "project_constraint",
            kind: term.kind(),
        }),
    }
}

fn project_spectral(a: &Mat, radius: f64) -> Result<Mat> {
    if a.is_empty() || a.norm() <= radius {
        return Ok(a.clone());
    }
    // Only the singular pairs above the radius matter, and those come out of
    // the Gram eigendecomposition accurately; it is about twice as fast as an SVD.
    let wide = a.nrows() < a.ncols();
    let gram = if wide { a * a.transpose() } else { a.transpose() * a };
    let eig = gram
        .try_symmetric_eigen(f64::EPSILON, 0)
        .ok_or(Error::SvdFailure)?;
    let r2 = radius * radius;
    if eig.eigenvalues.iter().all(|&l| l <= r2) {
        return Ok(a.clone());
    }
    let n = eig.eigenvalues.len();
    let mut shrink = Mat::zeros(n, n);
    for (i, &l) in eig.eigenvalues.iter().enumerate() {
        if l > r2 {
            let v = eig.eigenvectors.column(i);
            shrink += (1.0 - radius / l.sqrt()) * v * v.transpose();
        }
    }
    Ok(if wide { a - shrink * a } else { a - a * shrink })
}

/// The ordered regularization terms `f_2, ..., f_M`.
///
/// The last term is the one whose prox produces the M-step output, so it
/// should carry the sparsity (L1 / block-L21) when there is one.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Regularizer {
    pub terms: Vec<PenaltyTerm>,
}

impl Regularizer {
    pub fn new(terms: Vec<PenaltyTerm>) -> Self {
        Regularizer { terms }
    }

    pub fn empty() -> Self {
        Regularizer::default()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        self.terms.iter().try_for_each(|t| t.validate(dim))
    }

    pub fn value(&self, a: &Mat) -> f64 {
        self.terms.iter().map(|t| t.value(a)).sum()
    }

    /// Sum of the penalty (non-indicator) terms only.
    pub fn penalty_value(&self, a: &Mat) -> f64 {
        self.terms.iter().filter(|t| !t.is_constraint()).map(|t| t.value(a)).sum()
    }

    /// The designated last term, if any.
    pub fn output_term(&self) -> Option<&PenaltyTerm> {
        self.terms.last()
    }
}

/// Prox of the quadratic data-fit term
/// `f₁(X) = ½ tr(Q⁻¹(Ψ − ΔXᵀ − XΔᵀ + XΦXᵀ))`.
///
/// The minimizer of `θ f₁(X) + ½‖X − A‖²_F` solves
/// `X + θ Q⁻¹ X Φ = A + θ Q⁻¹ Δ`, the Lyapunov equation
/// `θQ⁻¹X + XΦ⁻¹ = AΦ⁻¹ + θQ⁻¹ΔΦ⁻¹` multiplied on the right by `Φ`.
/// Both coefficient matrices are symmetric, so the equation is diagonalized
/// once and each application costs a few matrix products.
#[derive(Debug, Clone)]
pub struct QuadraticProx {
    theta: f64,
    solver: SymmetricSylvester,
    q_inv_delta: Mat,
}

impl QuadraticProx {
    pub fn new(stats: &EStepStats, q: &Mat, theta: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::InvalidConfig(format!("prox scale must be positive, got {theta}")));
        }
        let chol_q = linalg::cholesky(q, "Q")?;
        let q_inv = chol_q.inverse();
        let solver = SymmetricSylvester::new(&q_inv, &checked_phi(&stats.phi)?);
        Ok(QuadraticProx {
            theta,
            solver,
            q_inv_delta: chol_q.solve(&stats.delta),
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// Extreme eigenvalues of the Hessian `Φ ⊗ Q⁻¹` of `f₁`.
    pub fn curvature_range(&self) -> (f64, f64) {
        let d = self.solver.left_eigenvalues();
        let e = self.solver.right_eigenvalues();
        (d.min() * e.min().max(0.0), d.max() * e.max().max(0.0))
    }

    pub fn apply(&self, a: &Mat) -> Mat {
        let rhs = a + &self.q_inv_delta * self.theta;
        self.solver.solve(self.theta, &rhs)
    }
}

/// Φ must be positive semidefinite; a slightly negative spectrum is lifted
/// with jitter once before giving up.
fn checked_phi(phi: &Mat) -> Result<Mat> {
    let scale = phi.amax().max(f64::MIN_POSITIVE);
    if linalg::min_eigenvalue(phi) >= -1e-12 * scale {
        return Ok(phi.clone());
    }
    let n = phi.nrows();
    let jitter = 1e-10 * phi.trace().abs().max(scale) / n as f64;
    let lifted = phi + Mat::identity(n, n) * jitter;
    if linalg::min_eigenvalue(&lifted) >= -1e-12 * scale {
        log::warn!("Φ needed diagonal jitter {jitter:e}");
        return Ok(lifted);
    }
    Err(Error::Singular("Φ is not positive semidefinite".into()))
}

/// `prox_{θ f₁}(A)`, dispatching to the closed form when `Q = σ²I`.
pub fn prox_quadratic(a: &Mat, theta: f64, stats: &EStepStats, q: &Mat) -> Result<Mat> {
    match isotropic_variance(q) {
        Some(sigma2) => prox_quadratic_isotropic(a, theta, stats, sigma2),
        None => prox_quadratic_lyapunov(a, theta, stats, q),
    }
}

/// General-`Q` route through the Lyapunov equation.
pub fn prox_quadratic_lyapunov(a: &Mat, theta: f64, stats: &EStepStats, q: &Mat) -> Result<Mat> {
    Ok(QuadraticProx::new(stats, q, theta)?.apply(a))
}

/// `(θ/σ² Δ + A)(θ/σ² Φ + I)⁻¹` for `Q = σ² I`.
pub fn prox_quadratic_isotropic(a: &Mat, theta: f64, stats: &EStepStats, sigma2: f64) -> Result<Mat> {
    if !(theta > 0.0 && sigma2 > 0.0) {
        return Err(Error::InvalidConfig("prox scale and σ² must be positive".into()));
    }
    let n = stats.phi.nrows();
    let c = theta / sigma2;
    let rhs = &stats.delta * c + a;
    let system = linalg::symmetrized(checked_phi(&stats.phi)? * c + Mat::identity(n, n));
    let chol = linalg::cholesky(&system, "θ/σ²Φ + I")?;
    Ok(linalg::right_solve_spd(&chol, &rhs))
}

/// `Some(σ²)` when `q` is exactly `σ² I`.
pub fn isotropic_variance(q: &Mat) -> Option<f64> {
    let s = q[(0, 0)];
    let n = q.nrows();
    for j in 0..n {
        for i in 0..n {
            let expected = if i == j { s } else { 0.0 };
            if q[(i, j)] != expected {
                return None;
            }
        }
    }
    (s > 0.0).then_some(s)
}
