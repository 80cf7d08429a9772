//! Named learnable parameters with constraint annotations, Adam state,
//! and the ULP1 checkpoint format.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{stream, SplitMix64};

/// How a raw value maps to the effective value the model consumes.
///
/// Interval bounds that depend on per-step data (the alpha lower bound,
/// the adaptive lambda ceiling) are not stored here; the solver computes
/// them each forward pass and applies the same logistic map with those
/// bounds captured as constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constraint {
    Free,
    /// effective = exp(raw), strictly positive.
    Positive,
    /// effective = lo + (hi - lo) * sigmoid(raw), strictly inside (lo, hi).
    Interval { lo: f64, hi: f64 },
    /// Bounds recomputed by the solver every step.
    DynamicInterval,
    /// effective pair (sigmoid(raw), 1 - sigmoid(raw)).
    SimplexPair,
}

impl Constraint {
    fn tag(&self) -> u8 {
        match self {
            Constraint::Free => 0,
            Constraint::Positive => 1,
            Constraint::Interval { .. } => 2,
            Constraint::DynamicInterval => 3,
            Constraint::SimplexPair => 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub dims: Vec<usize>,
    pub raw: Vec<f64>,
    pub constraint: Constraint,
    pub trainable: bool,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Param {
    pub fn elems(&self) -> usize {
        self.raw.len()
    }

    /// Effective scalar value after the static reparameterization.
    pub fn effective_scalar(&self) -> f64 {
        debug_assert_eq!(self.raw.len(), 1);
        match self.constraint {
            Constraint::Free | Constraint::DynamicInterval => self.raw[0],
            Constraint::Positive => self.raw[0].exp(),
            Constraint::Interval { lo, hi } => reparam_interval(self.raw[0], lo, hi).unwrap(),
            Constraint::SimplexPair => logistic(self.raw[0]),
        }
    }
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// lo + (hi - lo) * sigmoid(raw); strictly inside (lo, hi).
pub fn reparam_interval(raw: f64, lo: f64, hi: f64) -> Result<f64> {
    if !(lo < hi) {
        return Err(Error::Arg(format!("reparam_interval: lo {lo} >= hi {hi}")));
    }
    Ok(lo + (hi - lo) * logistic(raw))
}

/// Named parameter collection.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, p: Param) -> Result<()> {
        if self.index.contains_key(&p.name) {
            return Err(Error::Arg(format!("duplicate parameter name {}", p.name)));
        }
        self.index.insert(p.name.clone(), self.params.len());
        self.params.push(p);
        Ok(())
    }

    pub fn add_scalar(
        &mut self,
        name: &str,
        raw: f64,
        constraint: Constraint,
        trainable: bool,
    ) -> Result<()> {
        self.insert(Param {
            name: name.into(),
            dims: vec![],
            raw: vec![raw],
            constraint,
            trainable,
            m: vec![0.0],
            v: vec![0.0],
            step: 0,
        })
    }

    pub fn add_tensor(
        &mut self,
        name: &str,
        dims: Vec<usize>,
        raw: Vec<f64>,
        trainable: bool,
    ) -> Result<()> {
        let want: usize = dims.iter().product();
        if want != raw.len() {
            return Err(Error::Dim(format!(
                "parameter {name}: dims want {want} values, got {}",
                raw.len()
            )));
        }
        let n = raw.len();
        self.insert(Param {
            name: name.into(),
            dims,
            raw,
            constraint: Constraint::Free,
            trainable,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        })
    }

    pub fn get(&self, name: &str) -> Result<&Param> {
        self.index
            .get(name)
            .map(|i| &self.params[*i])
            .ok_or_else(|| Error::Arg(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param> {
        match self.index.get(name) {
            Some(i) => Ok(&mut self.params[*i]),
            None => Err(Error::Arg(format!("unknown parameter {name}"))),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Total count of trainable scalars, by direct enumeration.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.elems())
            .sum()
    }

    pub fn matrix_value(&self, name: &str) -> Result<DenseMatrix> {
        let p = self.get(name)?;
        if p.dims.len() != 2 {
            return Err(Error::Dim(format!("parameter {name} is not a matrix")));
        }
        DenseMatrix::from_vec(p.dims[0], p.dims[1], p.raw.clone())
    }

    /// Save to the ULP1 checkpoint format.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(b"ULP1")?;
        f.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for p in &self.params {
            let name = p.name.as_bytes();
            f.write_all(&(name.len() as u32).to_le_bytes())?;
            f.write_all(name)?;
            f.write_all(&[0u8])?; // dtype 0 = f64
            f.write_all(&[p.dims.len() as u8])?;
            for d in &p.dims {
                f.write_all(&(*d as u32).to_le_bytes())?;
            }
            f.write_all(&[u8::from(p.trainable)])?;
            f.write_all(&[p.constraint.tag()])?;
            if let Constraint::Interval { lo, hi } = p.constraint {
                f.write_all(&lo.to_le_bytes())?;
                f.write_all(&hi.to_le_bytes())?;
            }
            f.write_all(&(p.raw.len() as u32).to_le_bytes())?;
            let mut buf = Vec::with_capacity(p.raw.len() * 24 + 8);
            for v in &p.raw {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &p.m {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            for v in &p.v {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&p.step.to_le_bytes());
            f.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = fs::File::open(path)?;
        let mut raw = Vec::new();
        f.read_to_end(&mut raw)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > raw.len() {
                return Err(Error::Parse("checkpoint truncated".into()));
            }
            let s = &raw[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != b"ULP1" {
            return Err(Error::Parse("bad checkpoint magic".into()));
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let nlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, nlen)?.to_vec())
                .map_err(|_| Error::Parse("parameter name not utf-8".into()))?;
            let dtype = take(&mut pos, 1)?[0];
            if dtype != 0 {
                return Err(Error::Parse(format!("unknown dtype {dtype}")));
            }
            let ndim = take(&mut pos, 1)?[0] as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let trainable = take(&mut pos, 1)?[0] != 0;
            let ctag = take(&mut pos, 1)?[0];
            let constraint = match ctag {
                0 => Constraint::Free,
                1 => Constraint::Positive,
                2 => {
                    let lo = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                    let hi = f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
                    Constraint::Interval { lo, hi }
                }
                3 => Constraint::DynamicInterval,
                4 => Constraint::SimplexPair,
                t => return Err(Error::Parse(format!("unknown constraint tag {t}"))),
            };
            let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let read_f64s = |pos: &mut usize, n: usize| -> Result<Vec<f64>> {
                let bytes = take(pos, n * 8)?;
                Ok(bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect())
            };
            let rawv = read_f64s(&mut pos, n)?;
            let m = read_f64s(&mut pos, n)?;
            let v = read_f64s(&mut pos, n)?;
            let step = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            store.insert(Param { name, dims, raw: rawv, constraint, trainable, m, v, step })?;
        }
        Ok(store)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// One bias-corrected Adam update on the raw values of every trainable
/// parameter named in `grads`. Constrained parameters move in raw space,
/// so the effective values never leave their intervals.
pub fn adam_step(
    store: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        let p = store.get_mut(name)?;
        if !p.trainable {
            continue;
        }
        if g.len() != p.raw.len() {
            return Err(Error::Dim(format!(
                "gradient for {name} has {} entries, parameter has {}",
                g.len(),
                p.raw.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient for {name}")));
        }
        p.step += 1;
        let t = p.step;
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for i in 0..p.raw.len() {
            p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g[i];
            p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mhat = p.m[i] / bc1;
            let vhat = p.v[i] / bc2;
            p.raw[i] -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Orthogonal initialization: QR of a seeded Gaussian matrix with the R
/// diagonal forced positive. Wide shapes get orthonormal rows, tall ones
/// orthonormal columns; conv kernels pass their (out, in*k) flattening.
pub fn orthogonal_init(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut g = SplitMix64::stream(seed, stream::INIT);
    if rows <= cols {
        let q = gram_schmidt_columns(cols, rows, &mut g);
        q.transpose()
    } else {
        gram_schmidt_columns(rows, cols, &mut g)
    }
}

/// Tall m x n (m >= n) matrix with orthonormal columns from modified
/// Gram-Schmidt with one re-orthogonalization pass.
fn gram_schmidt_columns(m: usize, n: usize, g: &mut SplitMix64) -> DenseMatrix {
    let mut q = DenseMatrix::zeros(m, n);
    let mut cols: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| g.next_gaussian()).collect())
        .collect();
    for j in 0..n {
        for _pass in 0..2 {
            for i in 0..j {
                let qi = q.col(i);
                let proj: f64 = qi.iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
                for r in 0..m {
                    cols[j][r] -= proj * qi[r];
                }
            }
        }
        let norm: f64 = cols[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        // sign correction: orient so the diagonal coefficient is positive
        let sign = if cols[j][j.min(m - 1)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..m {
            q.set(r, j, sign * cols[j][r] / norm);
        }
    }
    q
}
