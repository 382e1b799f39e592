//! MIMO channel tracking: a complex `L × L` fading channel embedded as the
//! real state `x = [Re vec(C); Im vec(C)]`, pilot-driven observation
//! matrices, square QAM, and MMSE detection for bit-error-rate studies.
//!
//! `vec` is column-major: channel entry `C(r, c)` sits at state index
//! `r + c·L` (real part) and `L² + r + c·L` (imaginary part).

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::prox::BlockMap;
use crate::ssm::{self, MatrixSeq, ModelParams, Trajectory};

pub type CMat = DMatrix<Complex64>;
pub type CVector = nalgebra::DVector<Complex64>;

/// Square QAM with per-axis Gray labels, unit average energy.
#[derive(Debug, Clone)]
pub struct QamConstellation {
    /// Points ordered by `(ix, iy)`: index `ix * side + iy`.
    pub points: Vec<Complex64>,
    pub labels: Vec<u32>,
    pub bits_per_symbol: u32,
    side: usize,
    scale: f64,
}

fn gray(i: usize) -> u32 {
    (i ^ (i >> 1)) as u32
}

impl QamConstellation {
    pub fn new(order: usize) -> Result<Self> {
        let side = (order as f64).sqrt().round() as usize;
        if order < 4 || side * side != order || !side.is_power_of_two() {
            return Err(Error::InvalidConfig(format!("QAM order {order} is not an even power of two")));
        }
        let bits_per_axis = side.trailing_zeros();
        // mean of (2i - (side-1))² over both axes
        let scale = (2.0 * (order as f64 - 1.0) / 3.0).sqrt().recip();
        let level = |i: usize| (2.0 * i as f64 - (side as f64 - 1.0)) * scale;
        let mut points = Vec::with_capacity(order);
        let mut labels = Vec::with_capacity(order);
        for ix in 0..side {
            for iy in 0..side {
                points.push(Complex64::new(level(ix), level(iy)));
                labels.push((gray(ix) << bits_per_axis) | gray(iy));
            }
        }
        Ok(QamConstellation {
            points,
            labels,
            bits_per_symbol: 2 * bits_per_axis,
            side,
            scale,
        })
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn side(&self) -> usize {
        self.side
    }

    fn axis_index(&self, v: f64) -> usize {
        let pos = ((v / self.scale + (self.side as f64 - 1.0)) / 2.0).round();
        pos.clamp(0.0, (self.side - 1) as f64) as usize
    }

    /// Index of the nearest constellation point.
    pub fn nearest(&self, z: Complex64) -> usize {
        self.axis_index(z.re) * self.side + self.axis_index(z.im)
    }

    pub fn random_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        rng.random_range(0..self.order())
    }
}

pub fn qam_constellation(order: usize) -> Result<QamConstellation> {
    QamConstellation::new(order)
}

/// Real observation matrix for `z^(i) = C p^(i)` over all pilots, rows stacked
/// as `[Re z^(1); Im z^(1); Re z^(2); ...]`.
pub fn build_observation_matrix(pilots: &[CVector], l: usize) -> Result<Mat> {
    let l2 = l * l;
    let mut h = Mat::zeros(2 * l * pilots.len(), 2 * l2);
    for (i, p) in pilots.iter().enumerate() {
        if p.len() != l {
            return Err(Error::Dimension(format!("pilot {i} has length {}, expected {l}", p.len())));
        }
        if !p.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            return Err(Error::Dimension(format!("pilot {i} has non-finite entries")));
        }
        let base = 2 * l * i;
        for r in 0..l {
            for c in 0..l {
                let idx = r + c * l;
                let pc = p[c];
                // Re z_r += Re C(r,c) Re p_c - Im C(r,c) Im p_c
                h[(base + r, idx)] = pc.re;
                h[(base + r, l2 + idx)] = -pc.im;
                // Im z_r += Re C(r,c) Im p_c + Im C(r,c) Re p_c
                h[(base + l + r, idx)] = pc.im;
                h[(base + l + r, l2 + idx)] = pc.re;
            }
        }
    }
    Ok(h)
}

pub fn channel_to_state(c: &CMat) -> Vector {
    let l2 = c.len();
    let mut x = Vector::zeros(2 * l2);
    for (idx, v) in c.iter().enumerate() {
        x[idx] = v.re;
        x[l2 + idx] = v.im;
    }
    x
}

pub fn state_to_channel(x: &Vector, l: usize) -> CMat {
    let l2 = l * l;
    CMat::from_fn(l, l, |r, c| {
        let idx = r + c * l;
        Complex64::new(x[idx], x[l2 + idx])
    })
}

/// `L⁴` blocks of four entries pairing the real/imaginary couplings of one
/// pair of channel entries: `A(i,j), A(i+L²,j), A(i,j+L²), A(i+L²,j+L²)`.
pub fn channel_block_map(l: usize) -> Result<BlockMap> {
    let l2 = l * l;
    let mut blocks = Vec::with_capacity(l2 * l2);
    for j in 0..l2 {
        for i in 0..l2 {
            blocks.push(vec![(i, j), (i + l2, j), (i, j + l2), (i + l2, j + l2)]);
        }
    }
    BlockMap::new(2 * l2, blocks)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MimoConfig {
    pub antennas: usize,
    pub n_pilots: usize,
    pub qam_order: usize,
    pub eb_n0_db: f64,
    pub sigma_q: f64,
    pub sigma_r: f64,
    pub k_train: usize,
    pub k_test: usize,
    pub symbols_per_step: usize,
    pub kappas: Vec<f64>,
    pub seed: u64,
}

impl Default for MimoConfig {
    fn default() -> Self {
        MimoConfig {
            antennas: 4,
            n_pilots: 4,
            qam_order: 64,
            eb_n0_db: 38.0,
            sigma_q: 0.2,
            sigma_r: 0.2,
            k_train: 200,
            k_test: 10_000,
            symbols_per_step: 500,
            kappas: vec![10.0, 50.0, 100.0, 200.0, 400.0],
            seed: 0,
        }
    }
}

impl MimoConfig {
    pub fn state_dim(&self) -> usize {
        2 * self.antennas * self.antennas
    }

    pub fn obs_dim(&self) -> usize {
        2 * self.antennas * self.n_pilots
    }

    /// Complex noise variance `N₀` for unit-energy symbols:
    /// `N₀ = 1 / (log₂(M) · 10^(Eb/N0 / 10))`.
    pub fn noise_variance(&self) -> f64 {
        let bits = (self.qam_order as f64).log2();
        1.0 / (bits * 10f64.powf(self.eb_n0_db / 10.0))
    }
}

fn random_pilots<R: Rng + ?Sized>(qam: &QamConstellation, cfg: &MimoConfig, rng: &mut R) -> Vec<CVector> {
    (0..cfg.n_pilots)
        .map(|_| CVector::from_fn(cfg.antennas, |_, _| qam.points[qam.random_index(rng)]))
        .collect()
}

/// Training data: `K_train` steps of channel evolution under `a_true` observed
/// through fresh random QAM pilots each step.
pub fn channel_training_data(
    a_true: &Mat,
    cfg: &MimoConfig,
    seed: u64,
) -> Result<(ModelParams, Trajectory, Vec<Vec<CVector>>)> {
    let nx = cfg.state_dim();
    linalg::check_square(a_true, nx, "A_true")?;
    let qam = QamConstellation::new(cfg.qam_order)?;
    let mut pilot_rng = ChaCha8Rng::seed_from_u64(seed);
    pilot_rng.set_stream(2);
    let pilots: Vec<Vec<CVector>> = (0..cfg.k_train).map(|_| random_pilots(&qam, cfg, &mut pilot_rng)).collect();
    let hs = pilots
        .iter()
        .map(|p| build_observation_matrix(p, cfg.antennas))
        .collect::<Result<Vec<_>>>()?;
    let params = ModelParams::new(
        Mat::identity(nx, nx) * cfg.sigma_q.powi(2),
        MatrixSeq::Varying(hs),
        Mat::identity(cfg.obs_dim(), cfg.obs_dim()) * cfg.sigma_r.powi(2),
        Vector::zeros(nx),
        Mat::identity(nx, nx),
        cfg.k_train,
    )?;
    let traj = ssm::simulate(&params, a_true, seed)?;
    Ok((params, traj, pilots))
}

/// MMSE equalizer `Ĉᴴ(ĈĈᴴ + N₀I)⁻¹`.
pub fn mmse_equalizer(c_hat: &CMat, n0: f64) -> Result<CMat> {
    let l = c_hat.nrows();
    let gram = c_hat * c_hat.adjoint() + CMat::identity(l, l) * Complex64::new(n0, 0.0);
    let chol = match gram.clone().cholesky() {
        Some(c) => c,
        None => {
            let jitter = 1e-10 * gram.trace().re.abs().max(1.0) / l as f64;
            log::warn!("MMSE Gram matrix needed jitter {jitter:e}");
            (gram + CMat::identity(l, l) * Complex64::new(jitter, 0.0))
                .cholesky()
                .ok_or_else(|| Error::Singular("MMSE Gram matrix".into()))?
        }
    };
    // W = Ĉᴴ G⁻¹ = (G⁻¹ Ĉ)ᴴ since G is Hermitian
    Ok(chol.solve(c_hat).adjoint())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BerResult {
    pub ber: f64,
    pub bit_errors: u64,
    pub bits: u64,
}

/// Track the true channel with a Kalman filter using `a_hat` and detect data
/// symbols with the MMSE equalizer built from the filtered channel.
pub fn track_and_ber(a_hat: &Mat, a_true: &Mat, cfg: &MimoConfig, seed: u64) -> Result<BerResult> {
    let nx = cfg.state_dim();
    linalg::check_square(a_hat, nx, "A_hat")?;
    linalg::check_square(a_true, nx, "A_true")?;
    let qam = QamConstellation::new(cfg.qam_order)?;
    let n0 = cfg.noise_variance();
    let noise_sd = (n0 / 2.0).sqrt();
    let q = Mat::identity(nx, nx) * cfg.sigma_q.powi(2);
    let r = Mat::identity(cfg.obs_dim(), cfg.obs_dim()) * cfg.sigma_r.powi(2);
    let l = cfg.antennas;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut x = Vector::from_fn(nx, |_, _| normal(&mut rng));
    let mut mean = Vector::zeros(nx);
    let mut cov = Mat::identity(nx, nx);
    let (mut errors, mut bits) = (0u64, 0u64);

    for k in 1..=cfg.k_test {
        x = a_true * &x + Vector::from_fn(nx, |_, _| cfg.sigma_q * normal(&mut rng));
        let pilots = random_pilots(&qam, cfg, &mut rng);
        let h = build_observation_matrix(&pilots, l)?;
        let y = &h * &x + Vector::from_fn(h.nrows(), |_, _| cfg.sigma_r * normal(&mut rng));
        let step = ssm::kalman_step(a_hat, &q, &h, &r, &mean, &cov, &y, k)?;
        mean = step.mean;
        cov = step.cov;

        let channel = state_to_channel(&x, l);
        let equalizer = mmse_equalizer(&state_to_channel(&mean, l), n0)?;
        for _ in 0..cfg.symbols_per_step {
            let sent: Vec<usize> = (0..l).map(|_| qam.random_index(&mut rng)).collect();
            let s = CVector::from_fn(l, |i, _| qam.points[sent[i]]);
            let noise = CVector::from_fn(l, |_, _| {
                Complex64::new(noise_sd * normal(&mut rng), noise_sd * normal(&mut rng))
            });
            let received = &channel * s + noise;
            let estimate = &equalizer * received;
            for (i, &idx) in sent.iter().enumerate() {
                let detected = qam.nearest(estimate[i]);
                errors += (qam.labels[idx] ^ qam.labels[detected]).count_ones() as u64;
                bits += qam.bits_per_symbol as u64;
            }
        }
    }
    Ok(BerResult {
        ber: if bits == 0 { 0.0 } else { errors as f64 / bits as f64 },
        bit_errors: errors,
        bits,
    })
}
