//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use graphem::estep::EStepStats;
use graphem::linalg::{Mat, Vector};
use graphem::mimo::{CMat, CVector};
use graphem::ssm::ModelParams;
use nalgebra::Cholesky;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(r: usize, c: usize, scale: f64, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

/// Random SPD matrix `BBᵀ + floor·I`.
pub fn random_spd(n: usize, floor: f64, rng: &mut impl Rng) -> Mat {
    let b = random_matrix(n, n, 1.0, rng);
    &b * b.transpose() + Mat::identity(n, n) * floor
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).amax()
}

fn spd_inverse(m: &Mat) -> Mat {
    Cholesky::new(m.clone()).expect("SPD").inverse()
}

/// Brute-force posterior of the stacked states `(x₀, ..., x_K)` given the
/// first `t` observations, by dense Gaussian conditioning.
pub struct JointGaussian {
    nx: usize,
    horizon: usize,
    prior_mean: Vector,
    prior_cov: Mat,
    /// Cov(z, y) and Cov(y, y), y stacked over all K steps.
    cross: Mat,
    y_cov: Mat,
    y_mean: Vector,
    y: Vector,
    ny: usize,
}

pub struct Posterior {
    pub mean: Vector,
    pub cov: Mat,
}

impl Posterior {
    pub fn mean_at(&self, k: usize, n: usize) -> Vector {
        self.mean.rows(k * n, n).into_owned()
    }

    pub fn cov_at(&self, k: usize, j: usize, n: usize) -> Mat {
        self.cov.view((k * n, j * n), (n, n)).into_owned()
    }
}

impl JointGaussian {
    pub fn new(params: &ModelParams, a: &Mat, obs: &[Vector]) -> Self {
        let n = params.state_dim();
        let kk = obs.len();
        let ny = obs[0].len();
        let dz = n * (kk + 1);
        let mut prior_mean = Vector::zeros(dz);
        let mut marg = vec![params.p0.clone()];
        let mut m = params.x0_mean.clone();
        prior_mean.rows_mut(0, n).copy_from(&m);
        for k in 1..=kk {
            m = a * m;
            prior_mean.rows_mut(k * n, n).copy_from(&m);
            let prev = &marg[k - 1];
            marg.push(a * prev * a.transpose() + &params.q);
        }
        let mut prior_cov = Mat::zeros(dz, dz);
        for j in 0..=kk {
            let mut block = marg[j].clone();
            for k in j..=kk {
                if k > j {
                    block = a * block;
                }
                prior_cov.view_mut((k * n, j * n), (n, n)).copy_from(&block);
                prior_cov.view_mut((j * n, k * n), (n, n)).copy_from(&block.transpose());
            }
        }
        let dy = ny * kk;
        let mut hz = Mat::zeros(dy, dz);
        let mut r_big = Mat::zeros(dy, dy);
        for k in 1..=kk {
            hz.view_mut(((k - 1) * ny, k * n), (ny, n)).copy_from(params.h.at(k));
            r_big.view_mut(((k - 1) * ny, (k - 1) * ny), (ny, ny)).copy_from(params.r.at(k));
        }
        let cross = &prior_cov * hz.transpose();
        let y_cov = &hz * &cross + r_big;
        let y_mean = &hz * &prior_mean;
        let mut y = Vector::zeros(dy);
        for (k, yk) in obs.iter().enumerate() {
            y.rows_mut(k * ny, ny).copy_from(yk);
        }
        JointGaussian {
            nx: n,
            horizon: kk,
            prior_mean,
            prior_cov,
            cross,
            y_cov,
            y_mean,
            y,
            ny,
        }
    }

    /// Posterior of all states given `y₁..y_t`.
    pub fn posterior(&self, t: usize) -> Posterior {
        if t == 0 {
            return Posterior {
                mean: self.prior_mean.clone(),
                cov: self.prior_cov.clone(),
            };
        }
        let d = t * self.ny;
        let s = self.y_cov.view((0, 0), (d, d)).into_owned();
        let c = self.cross.columns(0, d).into_owned();
        let s_inv = spd_inverse(&s);
        let resid = self.y.rows(0, d) - self.y_mean.rows(0, d);
        let gain = &c * &s_inv;
        let mean = &self.prior_mean + &gain * resid;
        let mut cov = &self.prior_cov - &gain * c.transpose();
        cov = (&cov + cov.transpose()) * 0.5;
        Posterior { mean, cov }
    }

    /// `−log N(y; μ_y, S_y)` of the whole observation record.
    pub fn nll(&self) -> f64 {
        let chol = Cholesky::new(self.y_cov.clone()).expect("SPD");
        let resid = &self.y - &self.y_mean;
        let sol = chol.solve(&resid);
        let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        let d = resid.len() as f64;
        0.5 * (d * (2.0 * std::f64::consts::PI).ln() + log_det + resid.dot(&sol))
    }

    /// Exact `(Ψ, Δ, Φ)` from the smoothing posterior.
    pub fn stats(&self) -> (Mat, Mat, Mat) {
        let post = self.posterior(self.horizon);
        let n = self.nx;
        let mut psi = Mat::zeros(n, n);
        let mut delta = Mat::zeros(n, n);
        let mut phi = Mat::zeros(n, n);
        for k in 1..=self.horizon {
            let mk = post.mean_at(k, n);
            let mp = post.mean_at(k - 1, n);
            psi += post.cov_at(k, k, n) + &mk * mk.transpose();
            delta += post.cov_at(k, k - 1, n) + &mk * mp.transpose();
            phi += post.cov_at(k - 1, k - 1, n) + &mp * mp.transpose();
        }
        (psi, delta, phi)
    }

    pub fn state_dim(&self) -> usize {
        self.nx
    }
}

/// Random small LG-SSM with time-varying `H_k`, `R_k`.
pub fn random_model(nx: usize, ny: usize, horizon: usize, seed: u64) -> (ModelParams, Mat, Vec<Vector>) {
    use graphem::ssm::MatrixSeq;
    let mut g = rng(seed);
    let a = random_matrix(nx, nx, 0.6, &mut g);
    let q = random_spd(nx, 0.2, &mut g) * 0.3;
    let hs: Vec<Mat> = (0..horizon).map(|_| random_matrix(ny, nx, 1.0, &mut g)).collect();
    let rs: Vec<Mat> = (0..horizon).map(|_| random_spd(ny, 0.1, &mut g) * 0.2).collect();
    let x0 = Vector::from_fn(nx, |_, _| g.random_range(-1.0..1.0));
    let p0 = random_spd(nx, 0.3, &mut g);
    let params = ModelParams::new(q, MatrixSeq::Varying(hs), MatrixSeq::Varying(rs), x0, p0, horizon).unwrap();
    let obs: Vec<Vector> = (0..horizon)
        .map(|_| Vector::from_fn(ny, |_, _| g.random_range(-2.0..2.0)))
        .collect();
    (params, a, obs)
}

/// Minimizer of a scalar function on a uniform grid.
pub fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    let mut best = (lo, f(lo));
    for i in 1..=n {
        let x = lo + i as f64 * step;
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    best.0
}

/// `prox_{θ f₁}` through the `Nx² × Nx²` Kronecker system
/// `(I + θ Φ ⊗ Q⁻¹) vec X = vec(A + θ Q⁻¹ Δ)`.
pub fn kron_quadratic_prox(a: &Mat, theta: f64, stats: &EStepStats, q: &Mat) -> Mat {
    let n = a.nrows();
    let q_inv = spd_inverse(q);
    let phi = &stats.phi;
    let mut sys = Mat::identity(n * n, n * n);
    for bj in 0..n {
        for bi in 0..n {
            let s = theta * phi[(bi, bj)];
            for j in 0..n {
                for i in 0..n {
                    sys[(bi * n + i, bj * n + j)] += s * q_inv[(i, j)];
                }
            }
        }
    }
    let rhs = a + &q_inv * &stats.delta * theta;
    let x = sys.lu().solve(&Vector::from_column_slice(rhs.as_slice())).expect("solvable");
    Mat::from_column_slice(n, n, x.as_slice())
}

fn svd_clamp(a: &Mat, radius: f64) -> Mat {
    let svd = a.clone().svd(true, true);
    let s = svd.singular_values.map(|v| v.min(radius));
    svd.u.unwrap() * Mat::from_diagonal(&s) * svd.v_t.unwrap()
}

fn soft(a: &Mat, t: f64) -> Mat {
    a.map(|v| v.signum() * (v.abs() - t).max(0.0))
}

/// Proximal Dykstra for `prox_{t(ι_S + κ‖·‖₁)}(z)`, L1 step applied last.
pub fn prox_ball_l1(z: &Mat, t_kappa: f64, radius: f64) -> Mat {
    let mut x = z.clone();
    let mut p = Mat::zeros(z.nrows(), z.ncols());
    let mut q = p.clone();
    for _ in 0..100_000 {
        let y = svd_clamp(&(&x + &p), radius);
        p = &x + &p - &y;
        let x_new = soft(&(&y + &q), t_kappa);
        q = &y + &q - &x_new;
        let change = (&x_new - &x).amax();
        x = x_new;
        if change < 1e-15 {
            break;
        }
    }
    x
}

/// FISTA with restart on `f₁ + ι_S + κ‖·‖₁`.
pub fn reference_solve(stats: &EStepStats, q: &Mat, kappa: f64, radius: f64, iters: usize) -> Mat {
    let q_inv = spd_inverse(q);
    let grad = |a: &Mat| &q_inv * (a * &stats.phi - &stats.delta);
    let lip = q_inv.symmetric_eigenvalues().max() * stats.phi.symmetric_eigenvalues().max();
    let step = 1.0 / lip;
    let n = stats.phi.nrows();
    let mut x = Mat::zeros(n, n);
    let mut y = x.clone();
    let mut t = 1.0f64;
    for _ in 0..iters {
        let x_new = prox_ball_l1(&(&y - grad(&y) * step), step * kappa, radius);
        let t_new = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_new;
        // gradient-style restart
        if (&y - &x_new).dot(&(&x_new - &x)) > 0.0 {
            t = 1.0;
            y = x_new.clone();
        } else {
            y = &x_new + (&x_new - &x) * momentum;
            t = t_new;
        }
        let change = (&x_new - &x).amax();
        x = x_new;
        if change < 1e-15 {
            break;
        }
    }
    x
}

/// Complex Kalman filter for `c_k = A_c c_{k-1} + w`, `z_k = H_c c_k + v` with
/// circular noise of variance `2σ²` per complex entry.
pub struct ComplexKalman {
    pub mean: CVector,
    pub cov: CMat,
}

impl ComplexKalman {
    pub fn step(&mut self, a: &CMat, h: &CMat, q_var: f64, r_var: f64, z: &CVector) {
        let n = a.nrows();
        let m = h.nrows();
        let pred_mean = a * &self.mean;
        let pred_cov = a * &self.cov * a.adjoint() + CMat::identity(n, n) * Complex64::new(q_var, 0.0);
        let s = h * &pred_cov * h.adjoint() + CMat::identity(m, m) * Complex64::new(r_var, 0.0);
        let s_inv = s.try_inverse().expect("invertible innovation");
        let gain = &pred_cov * h.adjoint() * s_inv;
        self.mean = &pred_mean + &gain * (z - h * &pred_mean);
        self.cov = (CMat::identity(n, n) - &gain * h) * pred_cov;
    }
}

/// `z = C p` written as `z = (pᵀ ⊗ I_L) vec(C)`.
pub fn complex_pilot_matrix(pilots: &[CVector], l: usize) -> CMat {
    let mut h = CMat::zeros(l * pilots.len(), l * l);
    for (i, p) in pilots.iter().enumerate() {
        for c in 0..l {
            for r in 0..l {
                h[(i * l + r, r + c * l)] = p[c];
            }
        }
    }
    h
}

/// Two independent white-noise series.
pub fn white_noise_pair(k: usize, seed: u64) -> Vec<Vector> {
    use rand_distr::{Distribution, StandardNormal};
    let mut g = rng(seed);
    (0..k)
        .map(|_| Vector::from_fn(2, |_, _| StandardNormal.sample(&mut g)))
        .collect()
}

/// Series 2 is the previous value of series 1 plus small noise.
pub fn planted_lag_pair(k: usize, seed: u64) -> Vec<Vector> {
    use rand_distr::{Distribution, StandardNormal};
    let mut g = rng(seed);
    let mut prev = 0.0;
    (0..k)
        .map(|_| {
            let x: f64 = StandardNormal.sample(&mut g);
            let e: f64 = StandardNormal.sample(&mut g);
            let v = Vector::from_vec(vec![x, prev + 0.1 * e]);
            prev = x;
            v
        })
        .collect()
}
