//! Pairwise and conditional Granger-causality edge detection with the
//! classical F-test on least-squares AR residuals.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrangerMode {
    /// Conditioning on the target's own past only.
    Pairwise,
    /// Conditioning on the past of every other series.
    Conditional,
}

impl GrangerMode {
    pub fn name(self) -> &'static str {
        match self {
            GrangerMode::Pairwise => "pgc",
            GrangerMode::Conditional => "cgc",
        }
    }
}

impl fmt::Display for GrangerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GrangerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pgc" | "pairwise" => Ok(GrangerMode::Pairwise),
            "cgc" | "conditional" => Ok(GrangerMode::Conditional),
            other => Err(Error::InvalidConfig(format!("unknown granger mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrangerConfig {
    pub ar_order: usize,
    pub alpha: f64,
    pub mode: GrangerMode,
}

impl Default for GrangerConfig {
    fn default() -> Self {
        GrangerConfig {
            ar_order: 1,
            alpha: 0.05,
            mode: GrangerMode::Conditional,
        }
    }
}

impl GrangerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ar_order == 0 {
            return Err(Error::InvalidConfig("granger ar_order must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidConfig(format!("granger alpha={} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// Residual sum of squares of `y` on `x`, or `None` when `x` is rank deficient.
fn residual_ss(x: &Mat, y: &Vector) -> Option<f64> {
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-10 * x.nrows().max(x.ncols()) as f64;
    if svd.rank(tol) < x.ncols() {
        return None;
    }
    let beta = svd.solve(y, tol).ok()?;
    Some((y - x * beta).norm_squared())
}

/// Regression design with an intercept and `order` lags of each listed series.
fn design(series: &Mat, columns: &[usize], order: usize) -> Mat {
    let rows = series.nrows() - order;
    let mut x = Mat::zeros(rows, 1 + columns.len() * order);
    for t in 0..rows {
        x[(t, 0)] = 1.0;
        for (c, &s) in columns.iter().enumerate() {
            for lag in 1..=order {
                x[(t, 1 + c * order + lag - 1)] = series[(t + order - lag, s)];
            }
        }
    }
    x
}

/// F-test p-value for the lags of `source` helping to predict `target`.
/// `None` when a regression is rank deficient.
pub fn granger_p_value(series: &Mat, target: usize, source: usize, cfg: &GrangerConfig) -> Option<f64> {
    let nx = series.ncols();
    let p = cfg.ar_order;
    let base: Vec<usize> = match cfg.mode {
        GrangerMode::Pairwise => vec![target],
        GrangerMode::Conditional => (0..nx).filter(|&s| s != source).collect(),
    };
    let mut full = base.clone();
    full.push(source);
    let y = Vector::from_fn(series.nrows() - p, |t, _| series[(t + p, target)]);
    let x_r = design(series, &base, p);
    let x_u = design(series, &full, p);
    let rss_r = residual_ss(&x_r, &y)?;
    let rss_u = residual_ss(&x_u, &y)?;
    let df2 = y.len() as f64 - x_u.ncols() as f64;
    if df2 <= 0.0 || rss_u <= 0.0 {
        return None;
    }
    let f = ((rss_r - rss_u).max(0.0) / p as f64) / (rss_u / df2);
    let dist = FisherSnedecor::new(p as f64, df2).ok()?;
    Some(1.0 - dist.cdf(f))
}

/// Boolean adjacency with entry `(i, j)` set when series `j` Granger-causes
/// series `i`; the diagonal is always set.
pub fn granger_graph(observations: &[Vector], cfg: &GrangerConfig) -> Result<DMatrix<bool>> {
    cfg.validate()?;
    let k = observations.len();
    let nx = observations.first().map_or(0, |v| v.len());
    if nx == 0 {
        return Err(Error::Dimension("granger needs at least one series".into()));
    }
    if observations.iter().any(|v| v.len() != nx) {
        return Err(Error::Dimension("observations have inconsistent lengths".into()));
    }
    if k <= 10 * nx * cfg.ar_order {
        return Err(Error::InvalidConfig(format!(
            "granger needs more than {} time steps, got {k}",
            10 * nx * cfg.ar_order
        )));
    }
    let series = Mat::from_fn(k, nx, |t, s| observations[t][s]);
    let mut adj = DMatrix::from_element(nx, nx, false);
    for i in 0..nx {
        adj[(i, i)] = true;
        for j in (0..nx).filter(|&j| j != i) {
            match granger_p_value(&series, i, j, cfg) {
                Some(p) => adj[(i, j)] = p < cfg.alpha,
                None => log::warn!("granger regression for edge {j}->{i} is rank deficient; edge left out"),
            }
        }
    }
    Ok(adj)
}

/// Adjacency as a 0/1 matrix for scoring alongside estimated transition matrices.
pub fn adjacency_to_matrix(adj: &DMatrix<bool>) -> Mat {
    adj.map(|b| if b { 1.0 } else { 0.0 })
}
