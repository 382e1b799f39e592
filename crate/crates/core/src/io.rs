//! CSV readers/writers for matrices and trajectories, and the flat
//! `key = value` configuration format shared by the command-line tools.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::em::{FitConfig, InitSpec, Method, Sparsity};
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::mimo;
use crate::prox::{BlockMap, PenaltyTerm, Regularizer};
use crate::ssm::Trajectory;

/// Shortest decimal that round-trips, so rewritten files are byte-identical.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Matrix as CSV with a `c0,c1,...` header row.
pub fn write_matrix(path: &Path, m: &Mat) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.ncols()).map(|j| format!("c{j}")))?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| fmt_f64(m[(i, j)])))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_cell<T: FromStr>(cell: &str, path: &Path, row: usize) -> Result<T> {
    cell.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("{}: row {row}: cannot parse `{cell}`", path.display())))
}

pub fn read_matrix(path: &Path) -> Result<Mat> {
    let mut r = csv::Reader::from_path(path)?;
    let ncols = r.headers()?.len();
    let mut data = Vec::new();
    let mut nrows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != ncols {
            return Err(Error::Parse(format!("{}: row {} has {} fields, expected {ncols}", path.display(), i + 1, rec.len())));
        }
        for cell in rec.iter() {
            data.push(parse_cell::<f64>(cell, path, i + 1)?);
        }
        nrows += 1;
    }
    Ok(Mat::from_row_slice(nrows, ncols, &data))
}

pub fn write_bool_matrix(path: &Path, m: &DMatrix<bool>) -> Result<()> {
    write_matrix(path, &m.map(|b| if b { 1.0 } else { 0.0 }))
}

pub fn read_bool_matrix(path: &Path) -> Result<DMatrix<bool>> {
    Ok(read_matrix(path)?.map(|v| v != 0.0))
}

/// One row per step `k = 1..K`: `k, y0.., x0..`. The initial state goes to
/// the row `k = 0` with empty observation cells.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    ensure_parent(path)?;
    let ny = traj.observations.first().map_or(0, |v| v.len());
    let nx = traj.states.first().map_or(0, |v| v.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["k".to_string()];
    header.extend((0..ny).map(|i| format!("y{i}")));
    header.extend((0..nx).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for (k, x) in traj.states.iter().enumerate() {
        let mut row = vec![k.to_string()];
        match k.checked_sub(1).map(|i| &traj.observations[i]) {
            Some(y) => row.extend(y.iter().map(|v| fmt_f64(*v))),
            None => row.extend(std::iter::repeat_n(String::new(), ny)),
        }
        row.extend(x.iter().map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory`]. State columns are
/// optional; observation-only files give an empty state list.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let y_cols: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with('y')).collect();
    let x_cols: Vec<usize> = (0..headers.len()).filter(|&i| headers[i].starts_with('x')).collect();
    if y_cols.is_empty() {
        return Err(Error::Parse(format!("{}: no observation columns", path.display())));
    }
    let mut states = Vec::new();
    let mut observations = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 1;
        let k: usize = parse_cell(&rec[0], path, row)?;
        if !x_cols.is_empty() {
            let x: Vec<f64> = x_cols.iter().map(|&c| parse_cell(&rec[c], path, row)).collect::<Result<_>>()?;
            states.push(Vector::from_vec(x));
        }
        if k > 0 {
            let y: Vec<f64> = y_cols.iter().map(|&c| parse_cell(&rec[c], path, row)).collect::<Result<_>>()?;
            observations.push(Vector::from_vec(y));
        }
    }
    Ok(Trajectory {
        states,
        observations,
        seed: 0,
    })
}

/// Matrix sequence in one file: columns `k, row, c0..`, one line per matrix row.
pub fn write_matrix_sequence(path: &Path, seq: &[Mat]) -> Result<()> {
    ensure_parent(path)?;
    let ncols = seq.first().map_or(0, |m| m.ncols());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["k".to_string(), "row".to_string()];
    header.extend((0..ncols).map(|j| format!("c{j}")));
    w.write_record(&header)?;
    for (k, m) in seq.iter().enumerate() {
        for i in 0..m.nrows() {
            let mut row = vec![(k + 1).to_string(), i.to_string()];
            row.extend((0..m.ncols()).map(|j| fmt_f64(m[(i, j)])));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads either a leading-`k` sequence file or a directory of per-step
/// matrix files named `<stem>_<k>.csv` (k from 1).
pub fn read_matrix_sequence(path: &Path) -> Result<Vec<Mat>> {
    if path.is_dir() {
        let mut files: Vec<(usize, PathBuf)> = Vec::new();
        for entry in fs::read_dir(path)? {
            let p = entry?.path();
            let k = p
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.rsplit('_').next())
                .and_then(|s| s.parse::<usize>().ok());
            if let Some(k) = k.filter(|_| p.extension().is_some_and(|e| e == "csv")) {
                files.push((k, p));
            }
        }
        files.sort();
        for (i, (k, p)) in files.iter().enumerate() {
            if *k != i + 1 {
                return Err(Error::Parse(format!("{}: missing step {}", p.display(), i + 1)));
            }
        }
        return files.iter().map(|(_, p)| read_matrix(p)).collect();
    }
    let mut r = csv::Reader::from_path(path)?;
    let ncols = r.headers()?.len().saturating_sub(2);
    let mut rows: BTreeMap<usize, Vec<(usize, Vec<f64>)>> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let k: usize = parse_cell(&rec[0], path, i + 1)?;
        let row: usize = parse_cell(&rec[1], path, i + 1)?;
        let vals = (2..rec.len()).map(|c| parse_cell(&rec[c], path, i + 1)).collect::<Result<Vec<f64>>>()?;
        rows.entry(k).or_default().push((row, vals));
    }
    let mut out = Vec::with_capacity(rows.len());
    for (idx, (k, mut lines)) in rows.into_iter().enumerate() {
        if k != idx + 1 {
            return Err(Error::Parse(format!("{}: missing step {}", path.display(), idx + 1)));
        }
        lines.sort_by_key(|(r, _)| *r);
        let data: Vec<f64> = lines.into_iter().flat_map(|(_, v)| v).collect();
        out.push(Mat::from_row_slice(data.len() / ncols.max(1), ncols, &data));
    }
    Ok(out)
}

/// Rows of `(name, value)` columns, e.g. traces.
pub fn write_columns(path: &Path, columns: &[(&str, &[f64])]) -> Result<()> {
    ensure_parent(path)?;
    let len = columns.iter().map(|(_, c)| c.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(columns.iter().map(|(n, _)| *n))?;
    for i in 0..len {
        w.write_record(columns.iter().map(|(_, c)| c.get(i).map(|v| fmt_f64(*v)).unwrap_or_default()))?;
    }
    w.flush()?;
    Ok(())
}

/// Flat `key = value` configuration. `#` starts a comment; `[section]`
/// lines prefix the following keys with `section.`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("config line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Parse(format!("config line {}: empty key", n + 1)));
            }
            let full = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            entries.insert(full, value.trim().to_string());
        }
        Ok(KvConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::InvalidConfig(format!("config key `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn get_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        self.raw(key)
            .map(|v| {
                v.split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| Error::InvalidConfig(format!("config key `{key}`: cannot parse `{s}`")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Errors on the first key not in `known` (prefix entries end with `.`).
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for key in self.keys() {
            let ok = known.iter().any(|k| if k.ends_with('.') { key.starts_with(k) } else { key == *k });
            if !ok {
                return Err(Error::InvalidConfig(format!("unknown config key `{key}`")));
            }
        }
        Ok(())
    }

    /// `key = value` lines in key order.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Keys understood by [`fit_config_from_kv`].
pub const FIT_KEYS: &[&str] = &[
    "method",
    "kappa",
    "delta",
    "epsilon",
    "xi",
    "max_em_iters",
    "init_seed",
    "init_file",
    "penalty",
    "blocks",
    "mask_file",
    "ms.lambda",
    "ms.gamma",
    "ms.xi",
    "ms.max_iters",
    "ms.scaling",
    "reg.",
];

fn strip_fit(kv: &KvConfig) -> KvConfig {
    // accept `fit.kappa` as well as `kappa`
    let mut out = KvConfig::default();
    for (k, v) in &kv.entries {
        out.entries.insert(k.strip_prefix("fit.").unwrap_or(k).to_string(), v.clone());
    }
    out
}

/// Block layout from a `blocks` value: `channel:L` for the MIMO pairing or a
/// block count for contiguous column-major chunks.
pub fn parse_blocks(value: &str, dim: usize) -> Result<BlockMap> {
    if let Some(l) = value.strip_prefix("channel:") {
        let l: usize = l
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("config key `blocks`: bad antenna count `{l}`")))?;
        return mimo::channel_block_map(l);
    }
    let count: usize = value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("config key `blocks`: cannot parse `{value}`")))?;
    BlockMap::contiguous(dim, count)
}

fn parse_term(kv: &KvConfig, idx: usize, dim: usize, base: &Path) -> Result<PenaltyTerm> {
    let key = |f: &str| format!("reg.{idx}.{f}");
    let need = |f: &str| -> Result<f64> {
        kv.get(&key(f))?
            .ok_or_else(|| Error::InvalidConfig(format!("config key `{}` is required", key(f))))
    };
    let kind: String = kv.get(&key("kind"))?.unwrap_or_default();
    Ok(match kind.as_str() {
        "l1" => PenaltyTerm::L1 { weight: need("weight")? },
        "l21" => PenaltyTerm::BlockL21 {
            weight: need("weight")?,
            blocks: parse_blocks(kv.raw(&key("blocks")).unwrap_or("1"), dim)?,
        },
        "gaussian" => PenaltyTerm::Gaussian { weight: need("weight")? },
        "elastic_net" => PenaltyTerm::ElasticNet { weight: need("weight")? },
        "spectral_ball" => PenaltyTerm::SpectralBall { radius: need("radius")? },
        "box" => PenaltyTerm::BoxRange {
            min: need("min")?,
            max: need("max")?,
        },
        "frobenius_ball" => PenaltyTerm::FrobeniusBall { radius: need("radius")? },
        "mask" => {
            let file = kv
                .raw(&key("file"))
                .ok_or_else(|| Error::InvalidConfig(format!("config key `{}` is required", key("file"))))?;
            PenaltyTerm::SupportMask {
                mask: read_bool_matrix(&base.join(file))?,
            }
        }
        "zero" => PenaltyTerm::Zero,
        other => return Err(Error::InvalidConfig(format!("config key `{}`: unknown kind `{other}`", key("kind")))),
    })
}

/// Build a [`FitConfig`] for state dimension `dim`; relative file paths are
/// resolved against `base`.
pub fn fit_config_from_kv(kv: &KvConfig, dim: usize, base: &Path) -> Result<FitConfig> {
    let kv = strip_fit(kv);
    kv.check_known(FIT_KEYS)?;
    let method: Method = kv.get_or("method", Method::GraphEm)?;
    let mut cfg = FitConfig::new(method);
    cfg.kappa = kv.get_or("kappa", cfg.kappa)?;
    cfg.delta = kv.get_or("delta", cfg.delta)?;
    cfg.epsilon = kv.get_or("epsilon", cfg.epsilon)?;
    cfg.max_em_iters = kv.get_or("max_em_iters", cfg.max_em_iters)?;
    cfg.ms.xi = kv.get_or("xi", cfg.ms.xi)?;
    cfg.ms.xi = kv.get_or("ms.xi", cfg.ms.xi)?;
    cfg.ms.lambda = kv.get("ms.lambda")?.or(cfg.ms.lambda);
    cfg.ms.gamma = kv.get("ms.gamma")?.or(cfg.ms.gamma);
    cfg.ms.scaling = kv.get("ms.scaling")?.unwrap_or(cfg.ms.scaling);
    cfg.ms.max_iters = kv.get_or("ms.max_iters", cfg.ms.max_iters)?;
    if let Some(seed) = kv.get::<u64>("init_seed")? {
        cfg.init = InitSpec::Seed(seed);
    }
    if let Some(file) = kv.raw("init_file") {
        cfg.init = InitSpec::Matrix(read_matrix(&base.join(file))?);
    }
    if let Some(file) = kv.raw("mask_file") {
        cfg.support_mask = Some(read_bool_matrix(&base.join(file))?);
    }
    cfg.sparsity = match kv.raw("penalty").unwrap_or("l1") {
        "l1" => Sparsity::L1,
        "l21" => Sparsity::BlockL21(parse_blocks(kv.raw("blocks").unwrap_or("1"), dim)?),
        other => return Err(Error::InvalidConfig(format!("config key `penalty`: unknown value `{other}`"))),
    };
    let mut terms = Vec::new();
    while kv.contains(&format!("reg.{}.kind", terms.len())) {
        terms.push(parse_term(&kv, terms.len(), dim, base)?);
    }
    if let Some(stray) = kv.keys().find(|k| {
        k.strip_prefix("reg.")
            .and_then(|r| r.split('.').next())
            .and_then(|i| i.parse::<usize>().ok())
            .is_some_and(|i| i >= terms.len())
    }) {
        return Err(Error::InvalidConfig(format!("config key `{stray}` has no matching reg.N.kind sequence")));
    }
    if !terms.is_empty() {
        cfg.custom_regularizer = Some(Regularizer::new(terms));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Append-free writer for small text files.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
