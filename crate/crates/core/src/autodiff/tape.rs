use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::linalg::lu_factor;
use super::shape::{broadcast_shape, numel, permutation_map, reduction_map, BroadcastIndex};
use super::{gemm, Parameter, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
    LogSumExp,
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    LeakyRelu(Real),
    Neg,
    Square,
    Softplus,
    AddScalar(Real),
    MulScalar(Real),
    Clamp(Real, Real),
}

enum Op {
    Leaf,
    Binary(Binary, usize, usize),
    Unary(Unary, usize),
    MatMul(usize, usize),
    Reduce {
        kind: ReduceKind,
        input: usize,
        map: Rc<[usize]>,
    },
    Reshape(usize),
    /// Output→input flat index map.
    Gather(usize, Rc<[usize]>),
    ConcatCols(Vec<usize>),
    /// Stores W^{-T}, the gradient of log|det W|.
    LogAbsDet(usize, Rc<[Real]>),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<Real>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    params: HashMap<String, usize>,
    leaf_grads: HashMap<usize, Vec<Real>>,
}

/// A dynamically built computation graph. Build one per step, run
/// [`Tape::backward`], read gradients, drop it.
///
/// Gradients of leaves accumulate across `backward` calls: running it twice
/// without [`Tape::zero_grad`] yields exactly twice the gradient.
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, shape: Vec<usize>, value: Vec<Real>, op: Op, requires_grad: bool) -> Var<'_> {
        debug_assert_eq!(numel(&shape), value.len());
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    /// Inserts a leaf; it is tracked iff `tensor.requires_grad()`.
    pub fn leaf(&self, tensor: &Tensor) -> Var<'_> {
        self.push(
            tensor.shape().to_vec(),
            tensor.data().to_vec(),
            Op::Leaf,
            tensor.requires_grad(),
        )
    }

    /// Inserts an untracked constant.
    pub fn constant(&self, tensor: &Tensor) -> Var<'_> {
        self.push(tensor.shape().to_vec(), tensor.data().to_vec(), Op::Leaf, false)
    }

    pub fn scalar(&self, value: Real) -> Var<'_> {
        self.push(Vec::new(), vec![value], Op::Leaf, false)
    }

    /// Binds a parameter by name. Binding the same name again returns the same
    /// node, so gradients from every use are summed.
    pub fn param(&self, p: &Parameter) -> Var<'_> {
        if let Some(&id) = self.inner.borrow().params.get(&p.name) {
            return Var { tape: self, id };
        }
        let v = self.leaf(&p.tensor);
        self.inner.borrow_mut().params.insert(p.name.clone(), v.id);
        v
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse pass from a single-element `loss`, accumulating (+=) into the
    /// gradient buffers of every tracked leaf it depends on.
    pub fn backward(&self, loss: Var<'_>) -> Result<()> {
        let mut inner = self.inner.borrow_mut();
        let Inner {
            nodes, leaf_grads, ..
        } = &mut *inner;
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::NonScalarLoss(nodes[loss.id].shape.clone()));
        }
        if !nodes[loss.id].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<Real>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                match leaf_grads.get_mut(&id) {
                    Some(buf) => buf.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        leaf_grads.insert(id, g);
                    }
                }
                continue;
            }
            propagate(nodes, id, &g, &mut grads);
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().leaf_grads.clear();
    }

    /// Accumulated gradient of a leaf, if any reached it.
    pub fn grad(&self, v: Var<'_>) -> Option<Tensor> {
        let inner = self.inner.borrow();
        let g = inner.leaf_grads.get(&v.id)?;
        Tensor::new(inner.nodes[v.id].shape.clone(), g.clone()).ok()
    }

    /// Adds the tape gradients of every bound parameter into its tensor's
    /// gradient buffer.
    pub fn accumulate_into<'p>(&self, params: impl IntoIterator<Item = &'p mut Parameter>) {
        let inner = self.inner.borrow();
        for p in params {
            if !p.trainable() {
                continue;
            }
            if let Some(g) = inner.params.get(&p.name).and_then(|id| inner.leaf_grads.get(id)) {
                p.tensor.accumulate_grad(g);
            }
        }
    }

    fn unary(&self, a: Var<'_>, op: Unary) -> Var<'_> {
        let (shape, value, rg) = {
            let inner = self.inner.borrow();
            let n = &inner.nodes[a.id];
            let f: Box<dyn Fn(Real) -> Real> = match op {
                Unary::Exp => Box::new(Real::exp),
                Unary::Log => Box::new(Real::ln),
                Unary::Tanh => Box::new(Real::tanh),
                Unary::Sigmoid => Box::new(sigmoid),
                Unary::Relu => Box::new(|x: Real| x.max(0.0)),
                Unary::LeakyRelu(s) => Box::new(move |x: Real| if x > 0.0 { x } else { s * x }),
                Unary::Neg => Box::new(|x: Real| -x),
                Unary::Square => Box::new(|x: Real| x * x),
                Unary::Softplus => Box::new(softplus),
                Unary::AddScalar(c) => Box::new(move |x: Real| x + c),
                Unary::MulScalar(c) => Box::new(move |x: Real| x * c),
                Unary::Clamp(lo, hi) => Box::new(move |x: Real| x.max(lo).min(hi)),
            };
            (n.shape.clone(), n.value.iter().map(|&x| f(x)).collect(), n.requires_grad)
        };
        self.push(shape, value, Op::Unary(op, a.id), rg)
    }

    fn binary<'t>(&'t self, a: Var<'t>, b: Var<'t>, op: Binary) -> Result<Var<'t>> {
        let (shape, value, rg) = {
            let inner = self.inner.borrow();
            let (na, nb) = (&inner.nodes[a.id], &inner.nodes[b.id]);
            let out = broadcast_shape(&na.shape, &nb.shape).ok_or_else(|| Error::ShapeMismatch {
                op: binary_name(op),
                lhs: na.shape.clone(),
                rhs: nb.shape.clone(),
            })?;
            let ia = BroadcastIndex::new(&na.shape, &out);
            let ib = BroadcastIndex::new(&nb.shape, &out);
            let f = |x: Real, y: Real| match op {
                Binary::Add => x + y,
                Binary::Sub => x - y,
                Binary::Mul => x * y,
                Binary::Div => x / y,
            };
            let n = numel(&out);
            let value: Vec<Real> = match (&ia, &ib) {
                (BroadcastIndex::Same, BroadcastIndex::Same) => {
                    na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect()
                }
                _ => (0..n).map(|i| f(na.value[ia.at(i)], nb.value[ib.at(i)])).collect(),
            };
            (out, value, na.requires_grad || nb.requires_grad)
        };
        Ok(self.push(shape, value, Op::Binary(op, a.id, b.id), rg))
    }

    fn check_same_tape(&self, other: &Tape) {
        assert!(std::ptr::eq(self, other), "vars from different tapes");
    }
}

fn binary_name(op: Binary) -> &'static str {
    match op {
        Binary::Add => "add",
        Binary::Sub => "sub",
        Binary::Mul => "mul",
        Binary::Div => "div",
    }
}

#[inline]
pub(crate) fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn softplus(x: Real) -> Real {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn add_into(slot: &mut Option<Vec<Real>>, len: usize) -> &mut Vec<Real> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

fn propagate(nodes: &[Node], id: usize, g: &[Real], grads: &mut [Option<Vec<Real>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        Op::Unary(op, a) => {
            let na = &nodes[*a];
            if !na.requires_grad {
                return;
            }
            let x = &na.value;
            let y = &node.value;
            let ga = add_into(&mut grads[*a], x.len());
            for i in 0..x.len() {
                let d = match *op {
                    Unary::Exp => y[i],
                    Unary::Log => 1.0 / x[i],
                    Unary::Tanh => 1.0 - y[i] * y[i],
                    Unary::Sigmoid => y[i] * (1.0 - y[i]),
                    Unary::Relu => {
                        if x[i] > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    }
                    Unary::LeakyRelu(s) => {
                        if x[i] > 0.0 {
                            1.0
                        } else {
                            s
                        }
                    }
                    Unary::Neg => -1.0,
                    Unary::Square => 2.0 * x[i],
                    Unary::Softplus => sigmoid(x[i]),
                    Unary::AddScalar(_) => 1.0,
                    Unary::MulScalar(c) => c,
                    Unary::Clamp(lo, hi) => {
                        if x[i] < lo || x[i] > hi {
                            0.0
                        } else {
                            1.0
                        }
                    }
                };
                ga[i] += g[i] * d;
            }
        }
        Op::Binary(op, a, b) => {
            let (na, nb) = (&nodes[*a], &nodes[*b]);
            let ia = BroadcastIndex::new(&na.shape, &node.shape);
            let ib = BroadcastIndex::new(&nb.shape, &node.shape);
            let (xa, xb) = (&na.value, &nb.value);
            if na.requires_grad {
                let ga = add_into(&mut grads[*a], xa.len());
                for i in 0..g.len() {
                    let (j, k) = (ia.at(i), ib.at(i));
                    ga[j] += match op {
                        Binary::Add | Binary::Sub => g[i],
                        Binary::Mul => g[i] * xb[k],
                        Binary::Div => g[i] / xb[k],
                    };
                }
            }
            if nb.requires_grad {
                let gb = add_into(&mut grads[*b], xb.len());
                for i in 0..g.len() {
                    let (j, k) = (ia.at(i), ib.at(i));
                    gb[k] += match op {
                        Binary::Add => g[i],
                        Binary::Sub => -g[i],
                        Binary::Mul => g[i] * xa[j],
                        Binary::Div => -g[i] * xa[j] / (xb[k] * xb[k]),
                    };
                }
            }
        }
        Op::MatMul(a, b) => {
            let (na, nb) = (&nodes[*a], &nodes[*b]);
            let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
            if na.requires_grad {
                // dA = dY · Bᵀ
                let ga = add_into(&mut grads[*a], m * k);
                gemm(m, n, k, g, n as isize, 1, &nb.value, 1, n as isize, 1.0, ga);
            }
            if nb.requires_grad {
                // dB = Aᵀ · dY
                let gb = add_into(&mut grads[*b], k * n);
                gemm(k, m, n, &na.value, 1, k as isize, g, n as isize, 1, 1.0, gb);
            }
        }
        Op::Reduce { kind, input, map } => {
            let na = &nodes[*input];
            if !na.requires_grad {
                return;
            }
            let x = &na.value;
            let y = &node.value;
            let ga = add_into(&mut grads[*input], x.len());
            match kind {
                ReduceKind::Sum => {
                    for (i, &o) in map.iter().enumerate() {
                        ga[i] += g[o];
                    }
                }
                ReduceKind::Mean => {
                    let count = (x.len() / y.len()) as Real;
                    for (i, &o) in map.iter().enumerate() {
                        ga[i] += g[o] / count;
                    }
                }
                ReduceKind::Max => {
                    let mut taken = vec![false; y.len()];
                    for (i, &o) in map.iter().enumerate() {
                        if !taken[o] && x[i] == y[o] {
                            taken[o] = true;
                            ga[i] += g[o];
                        }
                    }
                }
                ReduceKind::LogSumExp => {
                    for (i, &o) in map.iter().enumerate() {
                        ga[i] += g[o] * (x[i] - y[o]).exp();
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if nodes[*a].requires_grad {
                let ga = add_into(&mut grads[*a], g.len());
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
        }
        Op::Gather(a, map) => {
            let na = &nodes[*a];
            if na.requires_grad {
                let ga = add_into(&mut grads[*a], na.value.len());
                for (o, &i) in map.iter().enumerate() {
                    ga[i] += g[o];
                }
            }
        }
        Op::ConcatCols(parts) => {
            let rows = node.shape[0];
            let total = node.shape[1];
            let mut off = 0;
            for &p in parts {
                let np = &nodes[p];
                let w = np.shape[1];
                if np.requires_grad {
                    let gp = add_into(&mut grads[p], rows * w);
                    for r in 0..rows {
                        for c in 0..w {
                            gp[r * w + c] += g[r * total + off + c];
                        }
                    }
                }
                off += w;
            }
        }
        Op::LogAbsDet(a, inv_t) => {
            if nodes[*a].requires_grad {
                let ga = add_into(&mut grads[*a], inv_t.len());
                for (x, &w) in ga.iter_mut().zip(inv_t.iter()) {
                    *x += g[0] * w;
                }
            }
        }
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.inner.borrow().nodes[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.inner.borrow().nodes[self.id].value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    pub fn value(&self) -> Tensor {
        let inner = self.tape.inner.borrow();
        let n = &inner.nodes[self.id];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("node shape invariant")
    }

    /// Runs `f` on the node's values without copying them.
    pub fn with_values<R>(&self, f: impl FnOnce(&[Real]) -> R) -> R {
        f(&self.tape.inner.borrow().nodes[self.id].value)
    }

    pub fn item(&self) -> Real {
        let inner = self.tape.inner.borrow();
        let n = &inner.nodes[self.id];
        assert_eq!(n.value.len(), 1, "item() on shape {:?}", n.shape);
        n.value[0]
    }

    pub fn is_finite(&self) -> bool {
        self.with_values(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Same values, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        let (shape, value) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (n.shape.clone(), n.value.clone())
        };
        self.tape.push(shape, value, Op::Leaf, false)
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.tape.grad(*self)
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same_tape(other.tape);
        self.tape.binary(*self, other, Binary::Add)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same_tape(other.tape);
        self.tape.binary(*self, other, Binary::Sub)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same_tape(other.tape);
        self.tape.binary(*self, other, Binary::Mul)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same_tape(other.tape);
        self.tape.binary(*self, other, Binary::Div)
    }

    pub fn add_scalar(&self, c: Real) -> Var<'t> {
        self.tape.unary(*self, Unary::AddScalar(c))
    }

    pub fn mul_scalar(&self, c: Real) -> Var<'t> {
        self.tape.unary(*self, Unary::MulScalar(c))
    }

    pub fn exp(&self) -> Var<'t> {
        self.tape.unary(*self, Unary::Exp)
    }

    pub fn log(&self) -> Var<'t> {
        self.tape.unary(*self, Unary::Log)
    }

    pub fn tanh(&self) -> Var<'t> {
        self.tape.unary(*self, Unary::Tanh)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.tape.unary(*self, Unary::Sigmoid)
    }

    pub fn relu(&self) -> Var<'t> {
        self.tape.unary(*self, Unary::Relu)
    }

    pub fn leaky_relu(&self, slope: Real) -> Var<'t> {
        self.tape.unary(*self, Unary::LeakyRelu(slope))
    }

    pub fn neg(&self) -> Var<'t> {
        self.tape.unary(*self, Unary::Neg)
    }

    pub fn square(&self) -> Var<'t> {
        self.tape.unary(*self, Unary::Square)
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self) -> Var<'t> {
        self.tape.unary(*self, Unary::Softplus)
    }

    /// Values clipped to `[lo, hi]`; gradient is zero where clipping is active.
    pub fn clamp(&self, lo: Real, hi: Real) -> Var<'t> {
        self.tape.unary(*self, Unary::Clamp(lo, hi))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.tape.check_same_tape(other.tape);
        let (shape, value, rg) = {
            let inner = self.tape.inner.borrow();
            let (na, nb) = (&inner.nodes[self.id], &inner.nodes[other.id]);
            if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[1] != nb.shape[0] {
                return Err(Error::ShapeMismatch {
                    op: "matmul",
                    lhs: na.shape.clone(),
                    rhs: nb.shape.clone(),
                });
            }
            let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, &na.value, k as isize, 1, &nb.value, n as isize, 1, 0.0, &mut out);
            (vec![m, n], out, na.requires_grad || nb.requires_grad)
        };
        Ok(self.tape.push(shape, value, Op::MatMul(self.id, other.id), rg))
    }

    pub fn reduce(&self, kind: ReduceKind, axes: &[usize]) -> Result<Var<'t>> {
        let (shape, value, map, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            let (out_shape, map) = if n.shape.is_empty() {
                (Vec::new(), vec![0])
            } else {
                reduction_map(&n.shape, axes)?
            };
            let m = numel(&out_shape);
            let x = &n.value;
            let value = match kind {
                ReduceKind::Sum | ReduceKind::Mean => {
                    let mut acc = vec![0.0; m];
                    for (i, &o) in map.iter().enumerate() {
                        acc[o] += x[i];
                    }
                    if kind == ReduceKind::Mean {
                        let count = (x.len() / m) as Real;
                        acc.iter_mut().for_each(|v| *v /= count);
                    }
                    acc
                }
                ReduceKind::Max | ReduceKind::LogSumExp => {
                    let mut mx = vec![Real::NEG_INFINITY; m];
                    for (i, &o) in map.iter().enumerate() {
                        if x[i] > mx[o] {
                            mx[o] = x[i];
                        }
                    }
                    if kind == ReduceKind::Max {
                        mx
                    } else {
                        let mut s = vec![0.0; m];
                        for (i, &o) in map.iter().enumerate() {
                            if mx[o].is_finite() {
                                s[o] += (x[i] - mx[o]).exp();
                            }
                        }
                        mx.iter()
                            .zip(&s)
                            .map(|(&c, &s)| if c.is_finite() { c + s.ln() } else { c })
                            .collect()
                    }
                }
            };
            (out_shape, value, map, n.requires_grad)
        };
        Ok(self.tape.push(
            shape,
            value,
            Op::Reduce {
                kind,
                input: self.id,
                map: map.into(),
            },
            rg,
        ))
    }

    fn all_axes(&self) -> Vec<usize> {
        (0..self.shape().len()).collect()
    }

    pub fn sum(&self) -> Var<'t> {
        self.reduce(ReduceKind::Sum, &self.all_axes()).expect("full reduction")
    }

    pub fn mean(&self) -> Var<'t> {
        self.reduce(ReduceKind::Mean, &self.all_axes()).expect("full reduction")
    }

    pub fn sum_axes(&self, axes: &[usize]) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Sum, axes)
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Mean, axes)
    }

    pub fn max_axes(&self, axes: &[usize]) -> Result<Var<'t>> {
        self.reduce(ReduceKind::Max, axes)
    }

    pub fn logsumexp_axes(&self, axes: &[usize]) -> Result<Var<'t>> {
        self.reduce(ReduceKind::LogSumExp, axes)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            if numel(shape) != n.value.len() {
                return Err(Error::ShapeMismatch {
                    op: "reshape",
                    lhs: n.shape.clone(),
                    rhs: shape.to_vec(),
                });
            }
            (n.value.clone(), n.requires_grad)
        };
        Ok(self.tape.push(shape.to_vec(), value, Op::Reshape(self.id), rg))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'t>> {
        let (shape, map) = permutation_map(&self.shape(), perm)?;
        Ok(self.gather_flat(shape, map.into()))
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        self.permute(&[1, 0])
    }

    fn gather_flat(&self, shape: Vec<usize>, map: Rc<[usize]>) -> Var<'t> {
        let (value, rg) = {
            let inner = self.tape.inner.borrow();
            let n = &inner.nodes[self.id];
            (map.iter().map(|&i| n.value[i]).collect(), n.requires_grad)
        };
        self.tape.push(shape, value, Op::Gather(self.id, map), rg)
    }

    /// Selects columns of a rank-2 tensor: `out[:, j] = self[:, cols[j]]`.
    pub fn gather_cols(&self, cols: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::InvalidShape(format!("gather_cols on shape {shape:?}")));
        }
        let (rows, d) = (shape[0], shape[1]);
        if let Some(&bad) = cols.iter().find(|&&c| c >= d) {
            return Err(Error::InvalidShape(format!("column {bad} out of range for {d}")));
        }
        let mut map = Vec::with_capacity(rows * cols.len());
        for r in 0..rows {
            map.extend(cols.iter().map(|&c| r * d + c));
        }
        Ok(self.gather_flat(vec![rows, cols.len()], map.into()))
    }

    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t>> {
        let cols: Vec<usize> = (start..start + len).collect();
        self.gather_cols(&cols)
    }

    /// Selects leading-axis entries of a rank-2 tensor.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Var<'t>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(Error::InvalidShape(format!("gather_rows on shape {shape:?}")));
        }
        let d = shape[1];
        let mut map = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            if r >= shape[0] {
                return Err(Error::InvalidShape(format!("row {r} out of range for {}", shape[0])));
            }
            map.extend((0..d).map(|c| r * d + c));
        }
        Ok(self.gather_flat(vec![rows.len(), d], map.into()))
    }

    /// `log|det self|` of a square matrix together with the determinant's sign.
    pub fn log_abs_det(&self) -> Result<(Var<'t>, Real)> {
        let m = self.value();
        let lu = lu_factor(&m)?;
        let (logabs, sign) = lu.log_abs_det();
        let inv = lu.inverse();
        let n = m.shape()[0];
        let mut inv_t = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                inv_t[i * n + j] = inv[j * n + i];
            }
        }
        let rg = self.requires_grad();
        let v = self
            .tape
            .push(Vec::new(), vec![logabs], Op::LogAbsDet(self.id, inv_t.into()), rg);
        Ok((v, sign))
    }
}

/// Concatenates rank-2 vars along columns.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
    let tape = first.tape;
    let (shape, value, rg) = {
        let inner = tape.inner.borrow();
        let rows = inner.nodes[first.id].shape.first().copied().unwrap_or(0);
        let mut total = 0;
        let mut rg = false;
        for p in parts {
            tape.check_same_tape(p.tape);
            let s = &inner.nodes[p.id].shape;
            if s.len() != 2 || s[0] != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols",
                    lhs: inner.nodes[first.id].shape.clone(),
                    rhs: s.clone(),
                });
            }
            total += s[1];
            rg |= inner.nodes[p.id].requires_grad;
        }
        let mut value = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let n = &inner.nodes[p.id];
                let w = n.shape[1];
                value.extend_from_slice(&n.value[r * w..(r + 1) * w]);
            }
        }
        (vec![rows, total], value, rg)
    };
    Ok(tape.push(shape, value, Op::ConcatCols(parts.iter().map(|p| p.id).collect()), rg))
}

impl Tape {
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t>]) -> Result<Var<'t>> {
        concat_cols(parts)
    }
}
