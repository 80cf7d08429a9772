//! Free-form operators inserted between the two proximal half-steps of
//! every hybrid iteration: a residual 1-D conv stack, the zero-residual
//! ablation, and a difference form whose contraction ratio is bounded by
//! the network's Lipschitz constant without any tuning.

use crate::autodiff::{conv1d_plain, NodeId, ParamStore, Shape, Tape};
use crate::error::{Error, Result};
use crate::linalg::DenseVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub k: usize,
    pub in_ch: usize,
    pub out_ch: usize,
}

/// Conv-stack description. The default is three 1-D layers
/// 9x1x16, 9x16x16, 9x16x1 with ReLU after the first two, a shortcut
/// from input to output, and kernels shared across iterations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvStackSpec {
    pub layers: Vec<ConvLayer>,
    pub shortcut: bool,
    pub tied: bool,
}

impl Default for ConvStackSpec {
    fn default() -> Self {
        Self {
            layers: vec![
                ConvLayer { k: 9, in_ch: 1, out_ch: 16 },
                ConvLayer { k: 9, in_ch: 16, out_ch: 16 },
                ConvLayer { k: 9, in_ch: 16, out_ch: 1 },
            ],
            shortcut: true,
            tied: true,
        }
    }
}

impl ConvStackSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Arg("conv stack needs at least one layer".into()));
        }
        if self.layers[0].in_ch != 1 || self.layers.last().unwrap().out_ch != 1 {
            return Err(Error::Arg(
                "conv stack must map one channel to one channel".into(),
            ));
        }
        for w in self.layers.windows(2) {
            if w[0].out_ch != w[1].in_ch {
                return Err(Error::Arg(format!(
                    "channel chaining broken: {} -> {}",
                    w[0].out_ch, w[1].in_ch
                )));
            }
        }
        for l in &self.layers {
            if l.k % 2 == 0 {
                return Err(Error::Arg(format!("kernel size {} must be odd", l.k)));
            }
        }
        Ok(())
    }

    /// Kernels have no bias terms, so this is just the weight count.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.k * l.in_ch * l.out_ch).sum()
    }

    /// Parameter names for iteration `iter` (ignored when tied).
    pub fn kernel_names(&self, iter: usize) -> Vec<String> {
        (0..self.layers.len())
            .map(|l| {
                if self.tied {
                    format!("nw.conv{l}")
                } else {
                    format!("nw.{iter}.conv{l}")
                }
            })
            .collect()
    }

    /// Register orthogonally initialized kernels for `iters` iterations
    /// (a single shared set when tied).
    pub fn init_params(
        &self,
        store: &mut ParamStore,
        iters: usize,
        seed: u64,
        trainable: bool,
    ) -> Result<()> {
        self.validate()?;
        let sets = if self.tied { 1 } else { iters };
        for it in 0..sets {
            for (l, layer) in self.layers.iter().enumerate() {
                let name = &self.kernel_names(it)[l];
                if store.contains(name) {
                    continue;
                }
                let q = crate::autodiff::orthogonal_init(
                    layer.out_ch,
                    layer.in_ch * layer.k,
                    seed ^ ((it as u64) << 24) ^ ((l as u64) << 16),
                );
                store.add_tensor(
                    name,
                    vec![layer.out_ch, layer.in_ch * layer.k],
                    q.data,
                    trainable,
                )?;
            }
        }
        Ok(())
    }

    /// The stack without any shortcut, on plain values.
    pub fn stack_forward(
        &self,
        v: &DenseVector,
        params: &ParamStore,
        iter: usize,
    ) -> Result<DenseVector> {
        let n = v.len();
        let names = self.kernel_names(iter);
        let mut cur = v.data.clone();
        let mut cur_ch = 1usize;
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.in_ch != cur_ch {
                return Err(Error::Dim(format!(
                    "layer {l} expects {} channels, has {cur_ch}",
                    layer.in_ch
                )));
            }
            let kernel = params.get(&names[l])?;
            let mut out =
                conv1d_plain(&kernel.raw, &cur, layer.k, layer.in_ch, layer.out_ch, n);
            if l + 1 < self.layers.len() {
                for t in &mut out {
                    *t = t.max(0.0);
                }
            }
            cur = out;
            cur_ch = layer.out_ch;
        }
        Ok(DenseVector::new(cur))
    }

    /// Same stack recorded on a tape. `kernels[l]` are the kernel nodes.
    pub fn stack_record(
        &self,
        tape: &mut Tape,
        v: NodeId,
        kernels: &[NodeId],
    ) -> Result<NodeId> {
        let mut cur = v;
        for l in 0..self.layers.len() {
            cur = tape.conv1d(kernels[l], cur)?;
            if l + 1 < self.layers.len() {
                cur = tape.relu(cur);
            }
        }
        Ok(cur)
    }

    /// Kernel nodes for iteration `iter`, recording each parameter once.
    pub fn kernel_nodes(
        &self,
        tape: &mut Tape,
        params: &ParamStore,
        iter: usize,
        cache: &mut std::collections::BTreeMap<String, NodeId>,
    ) -> Result<Vec<NodeId>> {
        let names = self.kernel_names(iter);
        let mut out = Vec::with_capacity(names.len());
        for (l, name) in names.iter().enumerate() {
            if let Some(id) = cache.get(name) {
                out.push(*id);
                continue;
            }
            let p = params.get(name)?;
            let layer = self.layers[l];
            let id = tape.leaf(
                Shape::Matrix(layer.out_ch, layer.in_ch * layer.k),
                p.raw.clone(),
            )?;
            cache.insert(name.clone(), id);
            out.push(id);
        }
        Ok(out)
    }

    /// Product over layers of a sound operator-norm bound (Schur test on
    /// the block-Toeplitz convolution matrix); ReLU is 1-Lipschitz, so the
    /// product bounds the Lipschitz constant of the whole stack.
    pub fn lipschitz_bound(&self, params: &ParamStore, iter: usize) -> Result<f64> {
        let names = self.kernel_names(iter);
        let mut bound = 1.0;
        for (l, layer) in self.layers.iter().enumerate() {
            let kernel = params.get(&names[l])?;
            let mut max_row = 0.0f64; // over output channels
            for o in 0..layer.out_ch {
                let s: f64 = kernel.raw[o * layer.in_ch * layer.k..(o + 1) * layer.in_ch * layer.k]
                    .iter()
                    .map(|v| v.abs())
                    .sum();
                max_row = max_row.max(s);
            }
            let mut max_col = 0.0f64; // over input channels
            for ic in 0..layer.in_ch {
                let mut s = 0.0;
                for o in 0..layer.out_ch {
                    for dt in 0..layer.k {
                        s += kernel.raw[o * layer.in_ch * layer.k + ic * layer.k + dt].abs();
                    }
                }
                max_col = max_col.max(s);
            }
            bound *= (max_row * max_col).sqrt();
        }
        Ok(bound)
    }
}

/// Which operator a hybrid solver inserts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OperatorKind {
    /// Residual branch identically zero: u = v with the shortcut, u = 0
    /// without it.
    Zero,
    /// u = v + stack(v).
    ConvResidual,
    /// u = stack(v) - stack(x) + v; the eta ratio is bounded by the
    /// stack's Lipschitz constant plus one.
    LipschitzResidual,
}

#[derive(Debug, Clone)]
pub struct Operator {
    pub kind: OperatorKind,
    pub spec: ConvStackSpec,
}

impl Operator {
    pub fn zero() -> Self {
        Self { kind: OperatorKind::Zero, spec: ConvStackSpec::default() }
    }

    pub fn conv_residual(spec: ConvStackSpec) -> Self {
        Self { kind: OperatorKind::ConvResidual, spec }
    }

    pub fn lipschitz_residual(spec: ConvStackSpec) -> Self {
        Self { kind: OperatorKind::LipschitzResidual, spec }
    }

    pub fn init_params(
        &self,
        store: &mut ParamStore,
        iters: usize,
        seed: u64,
        trainable: bool,
    ) -> Result<()> {
        match self.kind {
            OperatorKind::Zero => Ok(()),
            _ => self.spec.init_params(store, iters, seed, trainable),
        }
    }

    pub fn param_count(&self, iters: usize) -> usize {
        match self.kind {
            OperatorKind::Zero => 0,
            _ => {
                let sets = if self.spec.tied { 1 } else { iters };
                sets * self.spec.param_count()
            }
        }
    }

    /// u from (v, x) on plain values. `x` is only read by the
    /// Lipschitz-residual form.
    pub fn apply(
        &self,
        v: &DenseVector,
        x: &DenseVector,
        params: &ParamStore,
        iter: usize,
    ) -> Result<DenseVector> {
        match self.kind {
            OperatorKind::Zero => {
                if self.spec.shortcut {
                    Ok(v.clone())
                } else {
                    Ok(DenseVector::zeros(v.len()))
                }
            }
            OperatorKind::ConvResidual => {
                let r = self.spec.stack_forward(v, params, iter)?;
                if self.spec.shortcut {
                    Ok(v.add(&r))
                } else {
                    Ok(r)
                }
            }
            OperatorKind::LipschitzResidual => {
                if v.len() != x.len() {
                    return Err(Error::Dim(format!(
                        "lipschitz residual: lengths {} vs {}",
                        v.len(),
                        x.len()
                    )));
                }
                let dv = self.spec.stack_forward(v, params, iter)?;
                let dx = self.spec.stack_forward(x, params, iter)?;
                Ok(dv.sub(&dx).add(v))
            }
        }
    }

    /// Tape-recorded counterpart of [`Operator::apply`].
    pub fn record(
        &self,
        tape: &mut Tape,
        v: NodeId,
        x: NodeId,
        params: &ParamStore,
        iter: usize,
        cache: &mut std::collections::BTreeMap<String, NodeId>,
    ) -> Result<NodeId> {
        match self.kind {
            OperatorKind::Zero => {
                if self.spec.shortcut {
                    Ok(v)
                } else {
                    Ok(tape.scale(v, 0.0, 0.0))
                }
            }
            OperatorKind::ConvResidual => {
                let kernels = self.spec.kernel_nodes(tape, params, iter, cache)?;
                let r = self.spec.stack_record(tape, v, &kernels)?;
                if self.spec.shortcut {
                    tape.add(v, r)
                } else {
                    Ok(r)
                }
            }
            OperatorKind::LipschitzResidual => {
                let kernels = self.spec.kernel_nodes(tape, params, iter, cache)?;
                let dv = self.spec.stack_record(tape, v, &kernels)?;
                let dx = self.spec.stack_record(tape, x, &kernels)?;
                let diff = tape.sub(dv, dx)?;
                tape.add(diff, v)
            }
        }
    }
}

/// Outcome of the contraction-ratio monitor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Eta {
    /// ||v - x|| vanished: the iteration joins the frozen set and the
    /// solver must take alpha = 1.
    InT,
    Ratio(f64),
}

/// eta = ||u - x|| / ||v - x||, or the in-T flag when the denominator is
/// below `tol`.
pub fn eta_ratio(u: &DenseVector, x: &DenseVector, v: &DenseVector, tol: f64) -> Eta {
    let denom = v.sub(x).norm2();
    if denom <= tol {
        Eta::InT
    } else {
        Eta::Ratio(u.sub(x).norm2() / denom)
    }
}
