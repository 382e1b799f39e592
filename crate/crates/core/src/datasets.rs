//! Ground-truth transition matrices and simulated data for the synthetic
//! benchmark (A–D), the MIMO channel sets (E, F) and custom block layouts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::mimo::{self, CVector, MimoConfig};
use crate::prox::{project_constraint, PenaltyTerm};
use crate::ssm::{self, ModelParams, Trajectory};

/// Spectral radius bound for generated ground truths.
pub const TRUTH_RADIUS: f64 = 0.99;
/// Coupling weight of the dataset-E channel matrix.
pub const CHANNEL_E_WEIGHT: f64 = 0.495;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    /// Block-diagonal truth observed through `H = I`.
    Synthetic { blocks: Vec<usize> },
    /// Fixed 32×32 channel with diagonal and ±16 off-diagonals.
    ChannelE,
    /// `[[B, B], [B, B]]` with `B` block-diagonal of the given sizes.
    ChannelF { blocks: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub kind: DatasetKind,
    pub sigma_q: f64,
    pub sigma_r: f64,
    pub sigma_p: f64,
    pub horizon: usize,
    pub seed: u64,
    pub delta_stability: f64,
    /// Pilot layout for the channel sets.
    pub channel: Option<MimoConfig>,
}

impl DatasetSpec {
    pub fn synthetic(name: &str, blocks: &[usize], sigma_q: f64, sigma_r: f64, sigma_p: f64) -> Self {
        DatasetSpec {
            name: name.to_string(),
            kind: DatasetKind::Synthetic { blocks: blocks.to_vec() },
            sigma_q,
            sigma_r,
            sigma_p,
            horizon: 1000,
            seed: 0,
            delta_stability: TRUTH_RADIUS,
            channel: None,
        }
    }

    fn channel_spec(name: &str, kind: DatasetKind) -> Self {
        let cfg = MimoConfig::default();
        DatasetSpec {
            name: name.to_string(),
            kind,
            sigma_q: cfg.sigma_q,
            sigma_r: cfg.sigma_r,
            sigma_p: 1.0,
            horizon: cfg.k_train,
            seed: 0,
            delta_stability: TRUTH_RADIUS,
            channel: Some(cfg),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_uppercase().as_str() {
            "A" => Self::synthetic("A", &[3, 3, 3], 0.1, 0.1, 1e-4),
            "B" => Self::synthetic("B", &[3, 3, 3], 1.0, 1.0, 1e-4),
            "C" => Self::synthetic("C", &[3, 5, 5, 3], 0.1, 0.1, 1e-4),
            "D" => Self::synthetic("D", &[3, 5, 5, 3], 1.0, 1.0, 1e-4),
            "E" => Self::channel_spec("E", DatasetKind::ChannelE),
            "F" => Self::channel_spec("F", DatasetKind::ChannelF { blocks: vec![4, 8, 4] }),
            other => return Err(Error::InvalidConfig(format!("unknown dataset `{other}`"))),
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        if let Some(cfg) = self.channel.as_mut() {
            cfg.k_train = horizon;
        }
        self
    }

    pub fn state_dim(&self) -> usize {
        match &self.kind {
            DatasetKind::Synthetic { blocks } => blocks.iter().sum(),
            DatasetKind::ChannelE => 32,
            DatasetKind::ChannelF { blocks } => 2 * blocks.iter().sum::<usize>(),
        }
    }

    pub fn is_channel(&self) -> bool {
        self.channel.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, key: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{key} must be positive, got {v}")))
            }
        };
        positive(self.sigma_q, "sigma_q")?;
        positive(self.sigma_r, "sigma_r")?;
        positive(self.sigma_p, "sigma_p")?;
        if self.horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be positive".into()));
        }
        if !(self.delta_stability > 0.0 && self.delta_stability < 1.0) {
            return Err(Error::InvalidConfig("delta_stability must lie in (0, 1)".into()));
        }
        match &self.kind {
            DatasetKind::Synthetic { blocks } | DatasetKind::ChannelF { blocks } => {
                if blocks.is_empty() || blocks.contains(&0) {
                    return Err(Error::InvalidConfig("blocks must be a non-empty list of positive sizes".into()));
                }
            }
            DatasetKind::ChannelE => {}
        }
        if self.is_channel() {
            let cfg = self.channel.as_ref().unwrap();
            if cfg.state_dim() != self.state_dim() {
                return Err(Error::InvalidConfig(format!(
                    "channel with {} antennas has state dimension {}, dataset needs {}",
                    cfg.antennas,
                    cfg.state_dim(),
                    self.state_dim()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub params: ModelParams,
    pub a_true: Mat,
    pub trajectory: Trajectory,
    /// Per-step pilots for the channel sets.
    pub pilots: Option<Vec<Vec<CVector>>>,
}

/// A random stable AR(1) block: uniform entries with a dominant diagonal,
/// projected onto the spectral ball of radius `radius`.
pub fn random_ar1_block<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> Result<Mat> {
    let mut b = Mat::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
    for i in 0..n {
        b[(i, i)] = rng.random_range(0.5..1.0);
    }
    project_constraint(&PenaltyTerm::SpectralBall { radius }, &b)
}

pub fn block_diagonal(blocks: &[Mat]) -> Mat {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(n, n);
    let mut offset = 0;
    for b in blocks {
        out.view_mut((offset, offset), (b.nrows(), b.ncols())).copy_from(b);
        offset += b.nrows();
    }
    out
}

pub fn channel_e_matrix() -> Mat {
    Mat::from_fn(32, 32, |i, j| {
        if i == j || i == j + 16 || j == i + 16 {
            CHANNEL_E_WEIGHT
        } else {
            0.0
        }
    })
}

/// Ground truth for `spec`, drawn from a stream independent of the
/// trajectory noise.
pub fn make_truth(spec: &DatasetSpec) -> Result<Mat> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let draw_blocks = |sizes: &[usize], radius: f64, rng: &mut ChaCha8Rng| -> Result<Mat> {
        let blocks = sizes
            .iter()
            .map(|&n| random_ar1_block(n, radius, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(block_diagonal(&blocks))
    };
    match &spec.kind {
        DatasetKind::Synthetic { blocks } => draw_blocks(blocks, spec.delta_stability, &mut rng),
        DatasetKind::ChannelE => Ok(channel_e_matrix()),
        DatasetKind::ChannelF { blocks } => {
            // ‖[[B,B],[B,B]]‖₂ = 2‖B‖₂
            let b = draw_blocks(blocks, spec.delta_stability / 2.0, &mut rng)?;
            let n = b.nrows();
            let mut a = Mat::zeros(2 * n, 2 * n);
            for (r, c) in [(0, 0), (0, n), (n, 0), (n, n)] {
                a.view_mut((r, c), (n, n)).copy_from(&b);
            }
            Ok(a)
        }
    }
}

pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let a_true = make_truth(spec)?;
    if let Some(channel) = &spec.channel {
        let cfg = MimoConfig {
            sigma_q: spec.sigma_q,
            sigma_r: spec.sigma_r,
            k_train: spec.horizon,
            ..channel.clone()
        };
        let (params, trajectory, pilots) = mimo::channel_training_data(&a_true, &cfg, spec.seed)?;
        return Ok(Dataset {
            spec: spec.clone(),
            params,
            a_true,
            trajectory,
            pilots: Some(pilots),
        });
    }
    let nx = a_true.nrows();
    let params = ModelParams::isotropic(nx, spec.sigma_q, spec.sigma_r, spec.sigma_p, spec.horizon)?;
    let trajectory = ssm::simulate(&params, &a_true, spec.seed)?;
    Ok(Dataset {
        spec: spec.clone(),
        params,
        a_true,
        trajectory,
        pilots: None,
    })
}

/// Boolean support `|a| > threshold`.
pub fn support(a: &Mat, threshold: f64) -> nalgebra::DMatrix<bool> {
    a.map(|v| v.abs() > threshold)
}

/// Largest singular value check used by callers that accept external truths.
pub fn is_stable(a: &Mat, radius: f64) -> bool {
    linalg::spectral_norm(a) <= radius + 1e-12
}
