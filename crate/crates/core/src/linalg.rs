//! Small dense helpers shared by the filtering and optimization code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Replace `m` by `(m + mᵀ) / 2` in place.
pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn symmetrized(mut m: Mat) -> Mat {
    symmetrize(&mut m);
    m
}

/// Cholesky factorization that reports which matrix failed.
pub fn cholesky(m: &Mat, name: &str) -> Result<Cholesky<f64, Dyn>> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite(name.to_string()));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(name.to_string()))
}

/// Cholesky with a diagonal jitter of `1e-10 * trace / n` on failure.
/// Returns the factor and whether jitter was needed.
pub fn cholesky_jittered(m: &Mat, name: &str) -> Result<(Cholesky<f64, Dyn>, bool)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, false));
    }
    let n = m.nrows().max(1) as f64;
    let jitter = (1e-10 * m.trace().abs() / n).max(f64::MIN_POSITIVE);
    let mut shifted = m.clone();
    for i in 0..m.nrows() {
        shifted[(i, i)] += jitter;
    }
    Cholesky::new(shifted)
        .map(|c| (c, true))
        .ok_or_else(|| Error::Singular(name.to_string()))
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

pub fn is_symmetric(m: &Mat, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    SymmetricEigen::new(symmetrized(m.clone())).eigenvalues.min()
}

/// `log |m|` from a Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Solve `x · m = b` for symmetric positive definite `m`, i.e. `x = b m⁻¹`.
pub fn right_solve_spd(chol: &Cholesky<f64, Dyn>, b: &Mat) -> Mat {
    chol.solve(&b.transpose()).transpose()
}

pub fn check_square(m: &Mat, n: usize, name: &str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {n}x{n}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// Diagonalized solver for Sylvester equations with symmetric coefficients.
///
/// Given symmetric `left = U diag(d) Uᵀ` and `right = V diag(e) Vᵀ`, returns the
/// unique `X` with `X + θ · left · X · right = c`, provided `1 + θ d_i e_j ≠ 0`.
#[derive(Debug, Clone)]
pub struct SymmetricSylvester {
    u: Mat,
    d: Vector,
    v: Mat,
    e: Vector,
}

impl SymmetricSylvester {
    pub fn new(left: &Mat, right: &Mat) -> Self {
        let l = SymmetricEigen::new(symmetrized(left.clone()));
        let r = SymmetricEigen::new(symmetrized(right.clone()));
        SymmetricSylvester {
            u: l.eigenvectors,
            d: l.eigenvalues,
            v: r.eigenvectors,
            e: r.eigenvalues,
        }
    }

    pub fn left_eigenvalues(&self) -> &Vector {
        &self.d
    }

    pub fn right_eigenvalues(&self) -> &Vector {
        &self.e
    }

    pub fn solve(&self, theta: f64, c: &Mat) -> Mat {
        let mut y = self.u.transpose() * c * &self.v;
        for j in 0..y.ncols() {
            for i in 0..y.nrows() {
                y[(i, j)] /= 1.0 + theta * self.d[i] * self.e[j];
            }
        }
        &self.u * y * self.v.transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetrize_averages_off_diagonal() {
        let mut m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 4.0, 3.0]);
        symmetrize(&mut m);
        assert_eq!(m, Mat::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 3.0]));
    }

    #[test]
    fn cholesky_names_offending_matrix() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match cholesky(&m, "Q") {
            Err(Error::NotPositiveDefinite(name)) => assert_eq!(name, "Q"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn jitter_rescues_singular_psd() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, jittered) = cholesky_jittered(&m, "P").unwrap();
        assert!(jittered);
    }

    #[test]
    fn sylvester_solves_equation() {
        let left = Mat::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let right = Mat::from_row_slice(2, 2, &[1.5, -0.2, -0.2, 0.7]);
        let c = Mat::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let x = SymmetricSylvester::new(&left, &right).solve(0.8, &c);
        let residual = &x + 0.8 * &left * &x * &right - &c;
        assert!(residual.amax() < 1e-12);
    }
}
