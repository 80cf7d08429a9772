//! Reverse-mode automatic differentiation over an eagerly evaluated tape.
//!
//! The op set is exactly what a K-step unrolled solver needs: dense linear
//! algebra, 1-D convolution, the three shrinkage operators, pointwise
//! nonlinearities, and the interval reparameterization. Forward values are
//! computed at record time; `backward` walks the tape once in reverse.
//!
//! Shrinkage backward passes use the pass-through subgradient: zero on the
//! inactive set (exactly), unit slope on pass-through entries, and the
//! ranking of the support-selection operator is held fixed.

pub mod params;

pub use params::{adam_step, orthogonal_init, reparam_interval, AdamConfig, Constraint, Param, ParamStore};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::thresh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Scalar,
    Vector(usize),
    /// Channel-major planes for conv data, row-major for weights.
    Matrix(usize, usize),
}

impl Shape {
    pub fn elems(&self) -> usize {
        match self {
            Shape::Scalar => 1,
            Shape::Vector(n) => *n,
            Shape::Matrix(r, c) => r * c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// k*x + c with constants; only k matters in backward.
    Scale(NodeId, f64),
    /// scalar node times tensor node.
    Smul(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    MatVec { m: NodeId, x: NodeId, transpose: bool },
    MatMul(NodeId, NodeId),
    Conv1d { kernel: NodeId, x: NodeId, k: usize, in_ch: usize, out_ch: usize },
    Relu(NodeId),
    Sigmoid(NodeId),
    Recip(NodeId),
    Sqrt(NodeId),
    SoftThresh { z: NodeId, theta: NodeId },
    SsThresh { z: NodeId, theta: NodeId, keep: usize },
    MultiThresh { z: NodeId, theta: NodeId, theta_hat: NodeId },
    SumSq(NodeId),
    AbsSum(NodeId),
    AffineClamp { raw: NodeId, lo: f64, hi: f64 },
}

#[derive(Debug, Clone)]
pub struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
}

/// Append-only computation record; insertion order is topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(shape.elems(), value.len());
        self.nodes.push(Node { op, shape, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    pub fn vector_value(&self, id: NodeId) -> DenseVector {
        DenseVector::new(self.nodes[id.0].value.clone())
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn leaf(&mut self, shape: Shape, value: Vec<f64>) -> Result<NodeId> {
        if shape.elems() != value.len() {
            return Err(Error::Dim(format!(
                "leaf: shape wants {} elements, got {}",
                shape.elems(),
                value.len()
            )));
        }
        Ok(self.push(Op::Input, shape, value))
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.push(Op::Input, Shape::Scalar, vec![v])
    }

    pub fn vector(&mut self, v: &DenseVector) -> NodeId {
        self.push(Op::Input, Shape::Vector(v.len()), v.data.clone())
    }

    pub fn matrix(&mut self, m: &DenseMatrix) -> NodeId {
        self.push(Op::Input, Shape::Matrix(m.rows, m.cols), m.data.clone())
    }

    fn same_len(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        if self.nodes[a.0].value.len() != self.nodes[b.0].value.len() {
            return Err(Error::Dim(format!(
                "{what}: element counts {} vs {}",
                self.nodes[a.0].value.len(),
                self.nodes[b.0].value.len()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "add")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape;
        Ok(self.push(Op::Add(a, b), shape, v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "sub")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape;
        Ok(self.push(Op::Sub(a, b), shape, v))
    }

    /// k*x + c with constant k, c.
    pub fn scale(&mut self, x: NodeId, k: f64, c: f64) -> NodeId {
        let v: Vec<f64> = self.nodes[x.0].value.iter().map(|t| k * t + c).collect();
        let shape = self.nodes[x.0].shape;
        self.push(Op::Scale(x, k), shape, v)
    }

    /// Scalar node times tensor node.
    pub fn smul(&mut self, s: NodeId, x: NodeId) -> Result<NodeId> {
        if self.nodes[s.0].shape != Shape::Scalar {
            return Err(Error::Dim("smul: first operand must be scalar".into()));
        }
        let sv = self.nodes[s.0].value[0];
        let v: Vec<f64> = self.nodes[x.0].value.iter().map(|t| sv * t).collect();
        let shape = self.nodes[x.0].shape;
        Ok(self.push(Op::Smul(s, x), shape, v))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len(a, b, "hadamard")?;
        let v: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape;
        Ok(self.push(Op::Hadamard(a, b), shape, v))
    }

    fn matrix_dims(&self, m: NodeId, what: &str) -> Result<(usize, usize)> {
        match self.nodes[m.0].shape {
            Shape::Matrix(r, c) => Ok((r, c)),
            _ => Err(Error::Dim(format!("{what}: operand is not a matrix"))),
        }
    }

    /// y = M x, or Mᵀ x with `transpose`.
    pub fn matvec(&mut self, m: NodeId, x: NodeId, transpose: bool) -> Result<NodeId> {
        let (r, c) = self.matrix_dims(m, "matvec")?;
        let xn = self.nodes[x.0].value.len();
        let (inn, out) = if transpose { (r, c) } else { (c, r) };
        if xn != inn {
            return Err(Error::Dim(format!(
                "matvec: matrix {r}x{c} (transpose={transpose}) with vector length {xn}"
            )));
        }
        let mv = &self.nodes[m.0].value;
        let xv = &self.nodes[x.0].value;
        let mut y = vec![0.0; out];
        if transpose {
            for i in 0..r {
                let row = &mv[i * c..(i + 1) * c];
                let xi = xv[i];
                for j in 0..c {
                    y[j] += row[j] * xi;
                }
            }
        } else {
            for i in 0..r {
                let row = &mv[i * c..(i + 1) * c];
                let mut acc = 0.0;
                for j in 0..c {
                    acc += row[j] * xv[j];
                }
                y[i] = acc;
            }
        }
        Ok(self.push(Op::MatVec { m, x, transpose }, Shape::Vector(out), y))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.matrix_dims(a, "matmul")?;
        let (br, bc) = self.matrix_dims(b, "matmul")?;
        if ac != br {
            return Err(Error::Dim(format!("matmul: {ar}x{ac} by {br}x{bc}")));
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut cvals = vec![0.0; ar * bc];
        for i in 0..ar {
            for k in 0..ac {
                let aik = av[i * ac + k];
                if aik == 0.0 {
                    continue;
                }
                for j in 0..bc {
                    cvals[i * bc + j] += aik * bv[k * bc + j];
                }
            }
        }
        Ok(self.push(Op::MatMul(a, b), Shape::Matrix(ar, bc), cvals))
    }

    /// Zero-padded same-length 1-D convolution. `x` is `Vector(n)` (one
    /// channel) or `Matrix(in_ch, n)`; `kernel` is `Matrix(out_ch, in_ch*k)`
    /// with odd `k`. No bias. Output is `Vector(n)` when out_ch = 1.
    pub fn conv1d(&mut self, kernel: NodeId, x: NodeId) -> Result<NodeId> {
        let (out_ch, kin) = self.matrix_dims(kernel, "conv1d")?;
        let (in_ch, n) = match self.nodes[x.0].shape {
            Shape::Vector(n) => (1, n),
            Shape::Matrix(c, n) => (c, n),
            Shape::Scalar => return Err(Error::Dim("conv1d: scalar input".into())),
        };
        if kin % in_ch != 0 {
            return Err(Error::Dim(format!(
                "conv1d: kernel width {kin} not divisible by {in_ch} input channels"
            )));
        }
        let k = kin / in_ch;
        if k % 2 == 0 {
            return Err(Error::Arg(format!("conv1d: kernel size {k} must be odd")));
        }
        let value = conv1d_forward(
            &self.nodes[kernel.0].value,
            &self.nodes[x.0].value,
            k,
            in_ch,
            out_ch,
            n,
        );
        let shape = if out_ch == 1 {
            Shape::Vector(n)
        } else {
            Shape::Matrix(out_ch, n)
        };
        Ok(self.push(Op::Conv1d { kernel, x, k, in_ch, out_ch }, shape, value))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[x.0].value.iter().map(|t| t.max(0.0)).collect();
        let shape = self.nodes[x.0].shape;
        self.push(Op::Relu(x), shape, v)
    }

    pub fn sigmoid_node(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[x.0].value.iter().map(|t| sigmoid(*t)).collect();
        let shape = self.nodes[x.0].shape;
        self.push(Op::Sigmoid(x), shape, v)
    }

    pub fn recip(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[x.0].value.iter().map(|t| 1.0 / t).collect();
        let shape = self.nodes[x.0].shape;
        self.push(Op::Recip(x), shape, v)
    }

    pub fn sqrt(&mut self, x: NodeId) -> NodeId {
        let v: Vec<f64> = self.nodes[x.0].value.iter().map(|t| t.sqrt()).collect();
        let shape = self.nodes[x.0].shape;
        self.push(Op::Sqrt(x), shape, v)
    }

    pub fn soft_threshold(&mut self, z: NodeId, theta: NodeId) -> Result<NodeId> {
        if self.nodes[theta.0].shape != Shape::Scalar {
            return Err(Error::Dim("soft_threshold: theta must be scalar".into()));
        }
        let th = self.nodes[theta.0].value[0];
        let v: Vec<f64> = self.nodes[z.0]
            .value
            .iter()
            .map(|t| thresh::soft_scalar(*t, th))
            .collect();
        let shape = self.nodes[z.0].shape;
        Ok(self.push(Op::SoftThresh { z, theta }, shape, v))
    }

    pub fn ss_threshold(&mut self, z: NodeId, theta: NodeId, keep: usize) -> Result<NodeId> {
        if self.nodes[theta.0].shape != Shape::Scalar {
            return Err(Error::Dim("ss_threshold: theta must be scalar".into()));
        }
        let th = self.nodes[theta.0].value[0];
        let zv = DenseVector::new(self.nodes[z.0].value.clone());
        let out = thresh::ss_threshold(&zv, th, keep)?;
        let shape = self.nodes[z.0].shape;
        Ok(self.push(Op::SsThresh { z, theta, keep }, shape, out.data))
    }

    pub fn multistage_threshold(
        &mut self,
        z: NodeId,
        theta: NodeId,
        theta_hat: NodeId,
    ) -> Result<NodeId> {
        if self.nodes[theta.0].shape != Shape::Scalar
            || self.nodes[theta_hat.0].shape != Shape::Scalar
        {
            return Err(Error::Dim("multistage_threshold: thresholds must be scalar".into()));
        }
        let th = self.nodes[theta.0].value[0];
        let th_hat = self.nodes[theta_hat.0].value[0];
        if !(th_hat > th) {
            return Err(Error::Arg(format!(
                "multistage_threshold: theta_hat {th_hat} <= theta {th}"
            )));
        }
        let v: Vec<f64> = self.nodes[z.0]
            .value
            .iter()
            .map(|t| thresh::multistage_scalar(*t, th, th_hat))
            .collect();
        let shape = self.nodes[z.0].shape;
        Ok(self.push(Op::MultiThresh { z, theta, theta_hat }, shape, v))
    }

    pub fn sum_sq(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.iter().map(|t| t * t).sum();
        self.push(Op::SumSq(x), Shape::Scalar, vec![s])
    }

    pub fn abs_sum(&mut self, x: NodeId) -> NodeId {
        let s: f64 = self.nodes[x.0].value.iter().map(|t| t.abs()).sum();
        self.push(Op::AbsSum(x), Shape::Scalar, vec![s])
    }

    /// lo + (hi - lo) * sigmoid(raw); bounds are captured as constants.
    pub fn affine_clamp(&mut self, raw: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        if self.nodes[raw.0].shape != Shape::Scalar {
            return Err(Error::Dim("affine_clamp: raw must be scalar".into()));
        }
        if !(lo < hi) {
            return Err(Error::Arg(format!("affine_clamp: lo {lo} >= hi {hi}")));
        }
        let v = lo + (hi - lo) * sigmoid(self.nodes[raw.0].value[0]);
        Ok(self.push(Op::AffineClamp { raw, lo, hi }, Shape::Scalar, vec![v]))
    }

    /// Adjoints of `loss` with respect to every node, by one reverse sweep.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Vec<f64>>> {
        if self.nodes[loss.0].shape != Shape::Scalar {
            return Err(Error::Arg("backward: loss must be scalar".into()));
        }
        let mut adj: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.value.len()])
            .collect();
        adj[loss.0][0] = 1.0;
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if adj[idx].iter().all(|v| *v == 0.0) {
                continue;
            }
            let g = adj[idx].clone();
            match &node.op {
                Op::Input => {}
                Op::Add(a, b) => {
                    for (i, gi) in g.iter().enumerate() {
                        adj[a.0][i] += gi;
                        adj[b.0][i] += gi;
                    }
                }
                Op::Sub(a, b) => {
                    for (i, gi) in g.iter().enumerate() {
                        adj[a.0][i] += gi;
                        adj[b.0][i] -= gi;
                    }
                }
                Op::Scale(x, k) => {
                    for (i, gi) in g.iter().enumerate() {
                        adj[x.0][i] += k * gi;
                    }
                }
                Op::Smul(s, x) => {
                    let sv = self.nodes[s.0].value[0];
                    let xv = &self.nodes[x.0].value;
                    let mut ds = 0.0;
                    for (i, gi) in g.iter().enumerate() {
                        ds += gi * xv[i];
                        adj[x.0][i] += sv * gi;
                    }
                    adj[s.0][0] += ds;
                }
                Op::Hadamard(a, b) => {
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    for (i, gi) in g.iter().enumerate() {
                        adj[a.0][i] += gi * bv[i];
                        adj[b.0][i] += gi * av[i];
                    }
                }
                Op::MatVec { m, x, transpose } => {
                    let (r, c) = match self.nodes[m.0].shape {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    let mv = self.nodes[m.0].value.clone();
                    let xv = self.nodes[x.0].value.clone();
                    if *transpose {
                        // y = Mᵀ x: dM[i][j] += x[i] g[j]; dx[i] += (M g)[i]
                        for i in 0..r {
                            let xi = xv[i];
                            let mut acc = 0.0;
                            for j in 0..c {
                                adj[m.0][i * c + j] += xi * g[j];
                                acc += mv[i * c + j] * g[j];
                            }
                            adj[x.0][i] += acc;
                        }
                    } else {
                        // y = M x: dM[i][j] += g[i] x[j]; dx[j] += (Mᵀ g)[j]
                        for i in 0..r {
                            let gi = g[i];
                            for j in 0..c {
                                adj[m.0][i * c + j] += gi * xv[j];
                                adj[x.0][j] += mv[i * c + j] * gi;
                            }
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (ar, ac) = match self.nodes[a.0].shape {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    let bc = match self.nodes[b.0].shape {
                        Shape::Matrix(_, c) => c,
                        _ => unreachable!(),
                    };
                    let av = self.nodes[a.0].value.clone();
                    let bv = self.nodes[b.0].value.clone();
                    // dA = dC Bᵀ, dB = Aᵀ dC
                    for i in 0..ar {
                        for k in 0..ac {
                            let mut acc = 0.0;
                            for j in 0..bc {
                                acc += g[i * bc + j] * bv[k * bc + j];
                            }
                            adj[a.0][i * ac + k] += acc;
                        }
                    }
                    for k in 0..ac {
                        for j in 0..bc {
                            let mut acc = 0.0;
                            for i in 0..ar {
                                acc += av[i * ac + k] * g[i * bc + j];
                            }
                            adj[b.0][k * bc + j] += acc;
                        }
                    }
                }
                Op::Conv1d { kernel, x, k, in_ch, out_ch } => {
                    let n = self.nodes[x.0].value.len() / in_ch;
                    let kv = self.nodes[kernel.0].value.clone();
                    let xv = self.nodes[x.0].value.clone();
                    let pad = k / 2;
                    for o in 0..*out_ch {
                        for t in 0..n {
                            let go = g[o * n + t];
                            if go == 0.0 {
                                continue;
                            }
                            for ic in 0..*in_ch {
                                for dt in 0..*k {
                                    let s = t as isize + dt as isize - pad as isize;
                                    if s < 0 || s >= n as isize {
                                        continue;
                                    }
                                    let s = s as usize;
                                    adj[kernel.0][o * (in_ch * k) + ic * k + dt] +=
                                        go * xv[ic * n + s];
                                    adj[x.0][ic * n + s] +=
                                        go * kv[o * (in_ch * k) + ic * k + dt];
                                }
                            }
                        }
                    }
                }
                Op::Relu(x) => {
                    let xv = self.nodes[x.0].value.clone();
                    for (i, gi) in g.iter().enumerate() {
                        if xv[i] > 0.0 {
                            adj[x.0][i] += gi;
                        }
                    }
                }
                Op::Sigmoid(x) => {
                    let yv = node.value.clone();
                    for (i, gi) in g.iter().enumerate() {
                        adj[x.0][i] += gi * yv[i] * (1.0 - yv[i]);
                    }
                }
                Op::Recip(x) => {
                    let xv = self.nodes[x.0].value.clone();
                    for (i, gi) in g.iter().enumerate() {
                        adj[x.0][i] -= gi / (xv[i] * xv[i]);
                    }
                }
                Op::Sqrt(x) => {
                    let yv = node.value.clone();
                    for (i, gi) in g.iter().enumerate() {
                        if yv[i] > 0.0 {
                            adj[x.0][i] += gi / (2.0 * yv[i]);
                        }
                    }
                }
                Op::SoftThresh { z, theta } => {
                    let zv = self.nodes[z.0].value.clone();
                    let th = self.nodes[theta.0].value[0];
                    let mut dth = 0.0;
                    for (i, gi) in g.iter().enumerate() {
                        if zv[i].abs() > th {
                            adj[z.0][i] += gi;
                            dth -= gi * zv[i].signum();
                        }
                    }
                    adj[theta.0][0] += dth;
                }
                Op::SsThresh { z, theta, keep } => {
                    let zv = DenseVector::new(self.nodes[z.0].value.clone());
                    let th = self.nodes[theta.0].value[0];
                    let keep_idx = thresh::top_k_indices(&zv, *keep);
                    let mut dth = 0.0;
                    let mut ki = 0usize;
                    for (i, gi) in g.iter().enumerate() {
                        let member = ki < keep_idx.len() && keep_idx[ki] == i;
                        if member {
                            ki += 1;
                        }
                        if zv.data[i].abs() > th {
                            adj[z.0][i] += gi;
                            if !member {
                                dth -= gi * zv.data[i].signum();
                            }
                        }
                    }
                    adj[theta.0][0] += dth;
                }
                Op::MultiThresh { z, theta, theta_hat } => {
                    let zv = self.nodes[z.0].value.clone();
                    let th = self.nodes[theta.0].value[0];
                    let hat = self.nodes[theta_hat.0].value[0];
                    let denom = hat - th;
                    let mut dth = 0.0;
                    let mut dhat = 0.0;
                    for (i, gi) in g.iter().enumerate() {
                        let a = zv[i].abs();
                        if a <= th {
                            // zero branch, including the lower kink
                        } else if a < hat {
                            let s = zv[i].signum();
                            adj[z.0][i] += gi * hat / denom;
                            dth += gi * s * hat * (a - hat) / (denom * denom);
                            dhat += gi * s * (a - th) * (-th) / (denom * denom);
                        } else {
                            adj[z.0][i] += gi;
                        }
                    }
                    adj[theta.0][0] += dth;
                    adj[theta_hat.0][0] += dhat;
                }
                Op::SumSq(x) => {
                    let xv = self.nodes[x.0].value.clone();
                    let g0 = g[0];
                    for (i, xi) in xv.iter().enumerate() {
                        adj[x.0][i] += 2.0 * xi * g0;
                    }
                }
                Op::AbsSum(x) => {
                    let xv = self.nodes[x.0].value.clone();
                    let g0 = g[0];
                    for (i, xi) in xv.iter().enumerate() {
                        if *xi != 0.0 {
                            adj[x.0][i] += xi.signum() * g0;
                        }
                    }
                }
                Op::AffineClamp { raw, lo, hi } => {
                    let r = self.nodes[raw.0].value[0];
                    let s = sigmoid(r);
                    adj[raw.0][0] += g[0] * (hi - lo) * s * (1.0 - s);
                }
            }
        }
        Ok(adj)
    }
}

fn conv1d_forward(
    kernel: &[f64],
    x: &[f64],
    k: usize,
    in_ch: usize,
    out_ch: usize,
    n: usize,
) -> Vec<f64> {
    let pad = k / 2;
    let mut out = vec![0.0; out_ch * n];
    for o in 0..out_ch {
        for ic in 0..in_ch {
            let kern = &kernel[o * (in_ch * k) + ic * k..o * (in_ch * k) + ic * k + k];
            let plane = &x[ic * n..(ic + 1) * n];
            for t in 0..n {
                let mut acc = 0.0;
                for (dt, kv) in kern.iter().enumerate() {
                    let s = t as isize + dt as isize - pad as isize;
                    if s >= 0 && s < n as isize {
                        acc += kv * plane[s as usize];
                    }
                }
                out[o * n + t] += acc;
            }
        }
    }
    out
}

/// Plain (untaped) same-padding 1-D convolution used by the inference path.
pub fn conv1d_plain(
    kernel: &[f64],
    x: &[f64],
    k: usize,
    in_ch: usize,
    out_ch: usize,
    n: usize,
) -> Vec<f64> {
    conv1d_forward(kernel, x, k, in_ch, out_ch, n)
}
