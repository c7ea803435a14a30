//! Tape-based reverse-mode differentiation over dense `f64` tensors.
//!
//! Nodes are appended to a [`Graph`] in evaluation order and addressed by
//! [`Var`] handles. Binary elementwise ops accept a right operand whose shape
//! is a suffix of the left operand's shape (a bias row, a scalar), which it is
//! broadcast over. Spatial tensors are channel-last: `[batch, length, channels]`
//! for 1D convolutions and `[batch, height, width, channels]` for 2D ones.

use super::gemm::{gemm, Layout};
use super::params::{ParamId, ParamStore};
use super::DiffError;

/// Floor applied to the argument of `log`.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    o: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn rows(&self) -> usize {
        self.batch * self.ho * self.wo
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Conv { input: Var, kernel: Var, geom: ConvGeom, patches: Vec<f64> },
    Relu(Var),
    Exp(Var),
    Log(Var),
    LogSoftmax(Var),
    GatherIndex(Var, Vec<usize>),
    Mean(Var),
    Sum(Var),
    SumLast(Var),
    Square(Var),
    MinElem(Var, Var),
    MaxElem(Var, Var),
    ClipValue(Var, f64, f64),
    Scale(Var, f64),
    Reshape(Var),
    StopGradient,
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MatMul(..) => "matmul",
            Op::Conv { geom, .. } if geom.h == 1 && geom.kh == 1 => "conv1d_valid",
            Op::Conv { .. } => "conv2d_valid",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::LogSoftmax(_) => "log_softmax",
            Op::GatherIndex(..) => "gather_index",
            Op::Mean(_) => "mean",
            Op::Sum(_) => "sum",
            Op::SumLast(_) => "sum_last",
            Op::Square(_) => "square",
            Op::MinElem(..) => "min_elem",
            Op::MaxElem(..) => "max_elem",
            Op::ClipValue(..) => "clip_value",
            Op::Scale(..) => "scale",
            Op::Reshape(_) => "reshape",
            Op::StopGradient => "stop_gradient",
        }
    }
}

/// One value in the computation graph.
#[derive(Debug)]
pub struct DiffNode {
    shape: Vec<usize>,
    value: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

impl DiffNode {
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    /// Accumulated gradient; `None` until a backward pass reaches the node.
    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.op.name()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// A computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<DiffNode>,
    params: Vec<(Var, ParamId)>,
    track_params: bool,
}

impl Graph {
    /// Graph whose parameter leaves require gradients.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), track_params: true }
    }

    /// Graph for forward-only evaluation; parameter leaves carry no gradient.
    pub fn inference() -> Self {
        Self { nodes: Vec::new(), params: Vec::new(), track_params: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &DiffNode {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        debug_assert_eq!(n.value.len(), 1);
        n.value[0]
    }

    /// Gradient of `v`, zeros if the backward pass never reached it.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        let n = &self.nodes[v.0];
        n.grad.clone().unwrap_or_else(|| vec![0.0; n.value.len()])
    }

    /// Clears all accumulated gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(DiffNode { shape, value, grad: None, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn leaf(&mut self, shape: &[usize], values: Vec<f64>, requires_grad: bool) -> Result<Var, DiffError> {
        if numel(shape) != values.len() {
            return Err(DiffError::ValueLength { shape: shape.to_vec(), len: values.len() });
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf, requires_grad))
    }

    /// Leaf that does not take gradients.
    pub fn constant(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var, DiffError> {
        self.leaf(shape, values, false)
    }

    /// Leaf that takes gradients.
    pub fn variable(&mut self, shape: &[usize], values: Vec<f64>) -> Result<Var, DiffError> {
        self.leaf(shape, values, true)
    }

    pub fn scalar_constant(&mut self, x: f64) -> Var {
        self.push(Vec::new(), vec![x], Op::Leaf, false)
    }

    /// Copies a stored parameter into the graph as a leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let v = self.push(p.shape().to_vec(), p.value().to_vec(), Op::Leaf, self.track_params);
        if self.track_params {
            self.params.push((v, id));
        }
        v
    }

    /// Adds the gradients of all parameter leaves into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore) {
        for &(v, id) in &self.params {
            if let Some(g) = &self.nodes[v.0].grad {
                let dst = store.get_mut(id).grad_mut();
                for (d, s) in dst.iter_mut().zip(g) {
                    *d += s;
                }
            }
        }
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let ok = sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb;
        if ok {
            Ok(())
        } else {
            Err(DiffError::ShapeMismatch { op, lhs: sa.to_vec(), rhs: sb.to_vec() })
        }
    }

    fn same_shape_check(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(DiffError::ShapeMismatch { op, lhs: self.shape(a).to_vec(), rhs: self.shape(b).to_vec() })
        }
    }

    fn binary_broadcast(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, mk: impl Fn(Var, Var) -> Op) -> Result<Var, DiffError> {
        self.broadcast_check(op, a, b)?;
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let nb = bv.len();
        let mut value = Vec::with_capacity(av.len());
        for chunk in av.chunks(nb) {
            value.extend(chunk.iter().zip(bv).map(|(&x, &y)| f(x, y)));
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, value, mk(a, b), rg))
    }

    /// `a + b`, `b` broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_broadcast("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_broadcast("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_broadcast("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// `[m, k] · [k, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(DiffError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), Layout::Normal, self.value(b), Layout::Normal, 0.0, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    /// Valid-padding, stride-1 2D convolution.
    /// `input: [B, H, W, C]`, `kernel: [kh, kw, C, O]` → `[B, H-kh+1, W-kw+1, O]`.
    pub fn conv2d_valid(&mut self, input: Var, kernel: Var) -> Result<Var, DiffError> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 4 || sk.len() != 4 || si[3] != sk[2] || sk[0] > si[1] || sk[1] > si[2] || sk[0] == 0 || sk[1] == 0 {
            return Err(DiffError::ShapeMismatch { op: "conv2d_valid", lhs: si, rhs: sk });
        }
        let geom = ConvGeom {
            batch: si[0],
            h: si[1],
            w: si[2],
            c: si[3],
            kh: sk[0],
            kw: sk[1],
            o: sk[3],
            ho: si[1] - sk[0] + 1,
            wo: si[2] - sk[1] + 1,
        };
        let shape = vec![geom.batch, geom.ho, geom.wo, geom.o];
        Ok(self.conv(input, kernel, geom, shape))
    }

    /// Valid-padding, stride-1 1D convolution.
    /// `input: [B, L, C]`, `kernel: [k, C, O]` → `[B, L-k+1, O]`.
    pub fn conv1d_valid(&mut self, input: Var, kernel: Var) -> Result<Var, DiffError> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        if si.len() != 3 || sk.len() != 3 || si[2] != sk[1] || sk[0] > si[1] || sk[0] == 0 {
            return Err(DiffError::ShapeMismatch { op: "conv1d_valid", lhs: si, rhs: sk });
        }
        let geom = ConvGeom { batch: si[0], h: 1, w: si[1], c: si[2], kh: 1, kw: sk[0], o: sk[2], ho: 1, wo: si[1] - sk[0] + 1 };
        let shape = vec![geom.batch, geom.wo, geom.o];
        Ok(self.conv(input, kernel, geom, shape))
    }

    fn conv(&mut self, input: Var, kernel: Var, geom: ConvGeom, shape: Vec<usize>) -> Var {
        let patches = im2col(self.value(input), &geom);
        let mut out = vec![0.0; geom.rows() * geom.o];
        gemm(geom.rows(), geom.patch_len(), geom.o, &patches, Layout::Normal, self.value(kernel), Layout::Normal, 0.0, &mut out);
        let rg = self.rg(input) || self.rg(kernel);
        // Patches are only needed again by the backward pass.
        let patches = if rg { patches } else { Vec::new() };
        self.push(shape, out, Op::Conv { input, kernel, geom, patches }, rg)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value: Vec<f64> = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(shape, value, op, rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Natural log with the argument floored at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(LOG_FLOOR).ln(), Op::Log(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes where `lo <= x <= hi`.
    pub fn clip_value(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, |x| x.clamp(lo, hi), Op::ClipValue(a, lo, hi))
    }

    /// Identity forward, blocks gradient flow.
    pub fn stop_gradient(&mut self, a: Var) -> Var {
        let value = self.value(a).to_vec();
        let shape = self.shape(a).to_vec();
        self.push(shape, value, Op::StopGradient, false)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, DiffError> {
        if numel(shape) != self.value(a).len() {
            return Err(DiffError::ShapeMismatch { op: "reshape", lhs: self.shape(a).to_vec(), rhs: shape.to_vec() });
        }
        let value = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(a), rg))
    }

    /// Flattens all but the leading axis.
    pub fn flatten(&mut self, a: Var) -> Result<Var, DiffError> {
        let s = self.shape(a).to_vec();
        let b = s.first().copied().unwrap_or(1);
        let rest = numel(&s).checked_div(b).unwrap_or(0);
        self.reshape(a, &[b, rest])
    }

    fn last_dim(&self, op: &'static str, a: Var) -> Result<usize, DiffError> {
        match self.shape(a).last() {
            Some(&n) if n > 0 => Ok(n),
            _ => Err(DiffError::ShapeMismatch { op, lhs: self.shape(a).to_vec(), rhs: vec![] }),
        }
    }

    /// Log-softmax over the last axis. Probabilities are floored at
    /// [`LOG_FLOOR`] so the result is never below `ln(1e-12)`.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var, DiffError> {
        let n = self.last_dim("log_softmax", a)?;
        let mut value = self.value(a).to_vec();
        for row in value.chunks_mut(n) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x = (*x - lse).max(LOG_FLOOR.ln());
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, value, Op::LogSoftmax(a), rg))
    }

    /// Picks one entry of the last axis per leading position.
    pub fn gather_index(&mut self, a: Var, index: &[usize]) -> Result<Var, DiffError> {
        let n = self.last_dim("gather_index", a)?;
        let rows = self.value(a).len() / n;
        if index.len() != rows {
            return Err(DiffError::ShapeMismatch { op: "gather_index", lhs: self.shape(a).to_vec(), rhs: vec![index.len()] });
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(DiffError::IndexOutOfRange { op: "gather_index", index: bad, len: n });
        }
        let av = self.value(a);
        let value: Vec<f64> = index.iter().enumerate().map(|(r, &i)| av[r * n + i]).collect();
        let shape = self.shape(a)[..self.shape(a).len() - 1].to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, value, Op::GatherIndex(a, index.to_vec()), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(Vec::new(), vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.rg(a);
        self.push(Vec::new(), vec![s], Op::Mean(a), rg)
    }

    /// Sum over the last axis.
    pub fn sum_last(&mut self, a: Var) -> Result<Var, DiffError> {
        let n = self.last_dim("sum_last", a)?;
        let value: Vec<f64> = self.value(a).chunks(n).map(|r| r.iter().sum()).collect();
        let shape = self.shape(a)[..self.shape(a).len() - 1].to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, value, Op::SumLast(a), rg))
    }

    fn binary_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, mk: Op) -> Result<Var, DiffError> {
        self.same_shape_check(op, a, b)?;
        let value: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, value, mk, rg))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min_elem(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same("min_elem", a, b, |x, y| if x <= y { x } else { y }, Op::MinElem(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn max_elem(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary_same("max_elem", a, b, |x, y| if x >= y { x } else { y }, Op::MaxElem(a, b))
    }

    /// Accumulates `d root / d node` into every reachable node that requires
    /// gradients. Calling twice without [`Graph::zero_grad`] adds the
    /// gradients again.
    pub fn backward(&mut self, root: Var) -> Result<(), DiffError> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(DiffError::NonScalarRoot { shape: self.shape(root).to_vec() });
        }
        if !self.rg(root) {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut adj);
            }
            adj[i] = Some(g);
        }
        for (i, a) in adj.into_iter().enumerate() {
            let node = &mut self.nodes[i];
            if let (Some(a), true) = (a, node.requires_grad) {
                match &mut node.grad {
                    Some(g) => g.iter_mut().zip(&a).for_each(|(x, y)| *x += y),
                    None => node.grad = Some(a),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let rg = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if rg(*a) {
                    add_into(slot(adj, *a, g.len()), g);
                }
                if rg(*b) {
                    let nb = val(*b).len();
                    let db = slot(adj, *b, nb);
                    for chunk in g.chunks(nb) {
                        db.iter_mut().zip(chunk).for_each(|(d, &x)| *d += sign * x);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let nb = bv.len();
                if rg(*a) {
                    let da = slot(adj, *a, av.len());
                    for (dc, gc) in da.chunks_mut(nb).zip(g.chunks(nb)) {
                        dc.iter_mut().zip(gc).zip(bv).for_each(|((d, &x), &y)| *d += x * y);
                    }
                }
                if rg(*b) {
                    let db = slot(adj, *b, nb);
                    for (gc, ac) in g.chunks(nb).zip(av.chunks(nb)) {
                        db.iter_mut().zip(gc).zip(ac).for_each(|((d, &x), &y)| *d += x * y);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if rg(*a) {
                    let da = slot(adj, *a, m * k);
                    gemm(m, n, k, g, Layout::Normal, val(*b), Layout::Transposed, 1.0, da);
                }
                if rg(*b) {
                    let db = slot(adj, *b, k * n);
                    gemm(k, m, n, val(*a), Layout::Transposed, g, Layout::Normal, 1.0, db);
                }
            }
            Op::Conv { input, kernel, geom, patches } => {
                let (rows, plen, o) = (geom.rows(), geom.patch_len(), geom.o);
                if rg(*kernel) {
                    let dk = slot(adj, *kernel, plen * o);
                    gemm(plen, rows, o, patches, Layout::Transposed, g, Layout::Normal, 1.0, dk);
                }
                if rg(*input) {
                    let mut dp = vec![0.0; rows * plen];
                    gemm(rows, o, plen, g, Layout::Normal, val(*kernel), Layout::Transposed, 0.0, &mut dp);
                    let di = slot(adj, *input, val(*input).len());
                    col2im_add(&dp, geom, di);
                }
            }
            Op::Relu(a) => {
                let av = val(*a);
                let da = slot(adj, *a, av.len());
                for k in 0..g.len() {
                    if av[k] > 0.0 {
                        da[k] += g[k];
                    }
                }
            }
            Op::Exp(a) => {
                let da = slot(adj, *a, g.len());
                for k in 0..g.len() {
                    da[k] += g[k] * node.value[k];
                }
            }
            Op::Log(a) => {
                let av = val(*a);
                let da = slot(adj, *a, g.len());
                for k in 0..g.len() {
                    if av[k] > LOG_FLOOR {
                        da[k] += g[k] / av[k];
                    }
                }
            }
            Op::Square(a) => {
                let av = val(*a);
                let da = slot(adj, *a, g.len());
                for k in 0..g.len() {
                    da[k] += 2.0 * av[k] * g[k];
                }
            }
            Op::Scale(a, c) => {
                let da = slot(adj, *a, g.len());
                for k in 0..g.len() {
                    da[k] += c * g[k];
                }
            }
            Op::ClipValue(a, lo, hi) => {
                let av = val(*a);
                let da = slot(adj, *a, g.len());
                for k in 0..g.len() {
                    if av[k] >= *lo && av[k] <= *hi {
                        da[k] += g[k];
                    }
                }
            }
            Op::Reshape(a) => add_into(slot(adj, *a, g.len()), g),
            Op::StopGradient => {}
            Op::LogSoftmax(a) => {
                let n = *node.shape.last().unwrap();
                let da = slot(adj, *a, g.len());
                let floor = LOG_FLOOR.ln();
                for ((drow, grow), yrow) in da.chunks_mut(n).zip(g.chunks(n)).zip(node.value.chunks(n)) {
                    // floored outputs are constant and pass no gradient
                    let gs: f64 = grow.iter().zip(yrow).filter(|(_, &y)| y > floor).map(|(g, _)| g).sum();
                    for k in 0..n {
                        let own = if yrow[k] > floor { grow[k] } else { 0.0 };
                        drow[k] += own - yrow[k].exp() * gs;
                    }
                }
            }
            Op::GatherIndex(a, index) => {
                let n = *self.nodes[a.0].shape.last().unwrap();
                let da = slot(adj, *a, val(*a).len());
                for (r, &ix) in index.iter().enumerate() {
                    da[r * n + ix] += g[r];
                }
            }
            Op::Sum(a) => {
                let da = slot(adj, *a, val(*a).len());
                da.iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Mean(a) => {
                let len = val(*a).len();
                let da = slot(adj, *a, len);
                let s = g[0] / len.max(1) as f64;
                da.iter_mut().for_each(|x| *x += s);
            }
            Op::SumLast(a) => {
                let n = *self.nodes[a.0].shape.last().unwrap();
                let da = slot(adj, *a, val(*a).len());
                for (row, &gr) in da.chunks_mut(n).zip(g) {
                    row.iter_mut().for_each(|x| *x += gr);
                }
            }
            Op::MinElem(a, b) | Op::MaxElem(a, b) => {
                let is_min = matches!(node.op, Op::MinElem(..));
                let (av, bv) = (val(*a), val(*b));
                let picks_a: Vec<bool> = av.iter().zip(bv).map(|(x, y)| if is_min { x <= y } else { x >= y }).collect();
                if rg(*a) {
                    let da = slot(adj, *a, g.len());
                    for k in 0..g.len() {
                        if picks_a[k] {
                            da[k] += g[k];
                        }
                    }
                }
                if rg(*b) {
                    let db = slot(adj, *b, g.len());
                    for k in 0..g.len() {
                        if !picks_a[k] {
                            db[k] += g[k];
                        }
                    }
                }
            }
        }
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let plen = g.patch_len();
    let mut out = vec![0.0; g.rows() * plen];
    let mut r = 0;
    for b in 0..g.batch {
        for i in 0..g.ho {
            for j in 0..g.wo {
                let row = &mut out[r * plen..(r + 1) * plen];
                for di in 0..g.kh {
                    let src = ((b * g.h + i + di) * g.w + j) * g.c;
                    let dst = di * g.kw * g.c;
                    // kw consecutive pixels are contiguous in channel-last layout
                    row[dst..dst + g.kw * g.c].copy_from_slice(&x[src..src + g.kw * g.c]);
                }
                r += 1;
            }
        }
    }
    out
}

fn col2im_add(dp: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let plen = g.patch_len();
    let mut r = 0;
    for b in 0..g.batch {
        for i in 0..g.ho {
            for j in 0..g.wo {
                let row = &dp[r * plen..(r + 1) * plen];
                for di in 0..g.kh {
                    let dst = ((b * g.h + i + di) * g.w + j) * g.c;
                    let src = di * g.kw * g.c;
                    add_into(&mut dx[dst..dst + g.kw * g.c], &row[src..src + g.kw * g.c]);
                }
                r += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_forward_and_backward() {
        let mut g = Graph::new();
        let x = g.variable(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = g.relu(x);
        assert_eq!(g.value(y), &[0.0, 0.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn stop_gradient_blocks_one_factor() {
        let mut g = Graph::new();
        let x = g.variable(&[3], vec![0.5, -2.0, 3.0]).unwrap();
        let sx = g.stop_gradient(x);
        let y = g.mul(sx, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), vec![0.5, -2.0, 3.0]);
    }

    #[test]
    fn sum_mean_and_accumulation() {
        let mut g = Graph::new();
        let x = g.variable(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), vec![1.0; 4]);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), vec![2.0; 4]);

        let mut g = Graph::new();
        let x = g.variable(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = g.mean(x);
        g.backward(m).unwrap();
        assert_eq!(g.grad(x), vec![0.25; 4]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut g = Graph::new();
        let x = g.variable(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(g.backward(x), Err(DiffError::NonScalarRoot { .. })));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.variable(&[2, 3], vec![0.0; 6]).unwrap();
        let b = g.variable(&[2, 3], vec![0.0; 6]).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let c = g.variable(&[2], vec![0.0; 2]).unwrap();
        assert!(g.add(a, c).is_err());
        assert!(g.min_elem(a, c).is_err());
    }

    #[test]
    fn log_is_floored() {
        let mut g = Graph::new();
        let x = g.variable(&[3], vec![0.0, -1.0, 1.0]).unwrap();
        let y = g.log(x);
        assert_eq!(g.value(y)[0], LOG_FLOOR.ln());
        assert_eq!(g.value(y)[1], LOG_FLOOR.ln());
        assert_eq!(g.value(y)[2], 0.0);
        let s = g.sum(y);
        g.backward(s).unwrap();
        let gr = g.grad(x);
        assert!(gr.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mut g = Graph::new();
        let x = g.variable(&[2, 3], vec![0.0; 6]).unwrap();
        assert!(matches!(g.gather_index(x, &[0, 3]), Err(DiffError::IndexOutOfRange { .. })));
        let y = g.gather_index(x, &[2, 0]).unwrap();
        assert_eq!(g.shape(y), &[2]);
    }

    #[test]
    fn conv2d_matches_direct_sum() {
        let mut g = Graph::new();
        let (b, h, w, c, k, o) = (2, 4, 5, 3, 2, 2);
        let xv: Vec<f64> = (0..b * h * w * c).map(|i| (i as f64 * 0.13).sin()).collect();
        let kv: Vec<f64> = (0..k * k * c * o).map(|i| (i as f64 * 0.29).cos()).collect();
        let x = g.constant(&[b, h, w, c], xv.clone()).unwrap();
        let kk = g.constant(&[k, k, c, o], kv.clone()).unwrap();
        let y = g.conv2d_valid(x, kk).unwrap();
        let (ho, wo) = (h - k + 1, w - k + 1);
        assert_eq!(g.shape(y), &[b, ho, wo, o]);
        for bi in 0..b {
            for i in 0..ho {
                for j in 0..wo {
                    for oc in 0..o {
                        let mut s = 0.0;
                        for di in 0..k {
                            for dj in 0..k {
                                for ci in 0..c {
                                    s += xv[((bi * h + i + di) * w + j + dj) * c + ci] * kv[((di * k + dj) * c + ci) * o + oc];
                                }
                            }
                        }
                        let got = g.value(y)[((bi * ho + i) * wo + j) * o + oc];
                        assert!((got - s).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
