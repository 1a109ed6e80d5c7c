//! Reverse-mode gradient recording.

use super::kernels;
use super::{Array, Real};
use crate::error::{Error, Result};

/// Handle of a node in a [`Tape`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    VecMat(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, Real),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Log(NodeId),
    Sum(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize),
    Row(NodeId, usize),
    Fcn { w: NodeId, x: NodeId },
    Conv { k: NodeId, x: NodeId },
    Rnn { w: NodeId, h: NodeId, x: NodeId },
    Readout { w: NodeId, x: NodeId },
    Mse { pred: NodeId, target: Array },
}

/// A recorded value together with its accumulated gradient.
impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::Scale(a, _) | Op::Sigmoid(a) | Op::Tanh(a) | Op::Relu(a) | Op::Log(a) | Op::Sum(a) => vec![*a],
            Op::Slice(a, _) | Op::Row(a, _) => vec![*a],
            Op::VecMat(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Concat(parts) => parts.clone(),
            Op::Fcn { w, x } | Op::Readout { w, x } => vec![*w, *x],
            Op::Conv { k, x } => vec![*k, *x],
            Op::Rnn { w, h, x } => vec![*w, *h, *x],
            Op::Mse { pred, .. } => vec![*pred],
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradTensor {
    pub id: NodeId,
    pub value: Array,
    pub grad: Array,
    op: Op,
    needs_grad: bool,
}

impl GradTensor {
    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self.op, Op::Leaf | Op::Constant)
    }
}

/// Linear record of a forward computation.
///
/// Leaves keep their gradients across [`Tape::backward`] calls, so repeated
/// backward passes accumulate until [`Tape::zero_grad`].
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<GradTensor>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op) -> NodeId {
        let id = NodeId(self.nodes.len());
        let needs_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            op => op.inputs().iter().any(|i| self.nodes[i.0].needs_grad),
        };
        // Intermediate gradients are materialised by `backward`.
        let grad = if matches!(op, Op::Leaf) { Array::zeros(value.shape()) } else { Array::zeros(&[0]) };
        self.nodes.push(GradTensor { id, value, grad, op, needs_grad });
        id
    }

    pub fn leaf(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// A leaf that never receives a gradient, such as a batch of inputs.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Constant)
    }

    pub fn node(&self, id: NodeId) -> &GradTensor {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].grad
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> Real {
        self.nodes[id.0].value.data()[0]
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.fill(0.0);
        }
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(())
    }

    fn zip_map(&self, a: NodeId, b: NodeId, f: impl Fn(Real, Real) -> Real) -> Array {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Array::from_vec(va.shape(), data).expect("shapes checked")
    }

    /// `x [n] . w [n, m] -> [m]`
    pub fn vecmat(&mut self, x: NodeId, w: NodeId) -> Result<NodeId> {
        let (xv, wv) = (self.value(x), self.value(w));
        if xv.ndim() != 1 || wv.ndim() != 2 || wv.shape()[0] != xv.len() {
            return Err(Error::shape("vecmat", xv.shape(), wv.shape()));
        }
        let m = wv.shape()[1];
        let mut out = vec![0.0; m];
        for (i, &xi) in xv.data().iter().enumerate() {
            for (o, &wij) in out.iter_mut().zip(&wv.data()[i * m..(i + 1) * m]) {
                *o += xi * wij;
            }
        }
        Ok(self.push(Array::vector(out), Op::VecMat(x, w)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, c: Real) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(Real::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = kernels::relu(self.value(a));
        self.push(v, Op::Relu(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(Real::ln);
        self.push(v, Op::Log(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).data().iter().sum();
        self.push(Array::scalar(s), Op::Sum(a))
    }

    /// Concatenates 1-D nodes.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.ndim() != 1 {
                return Err(Error::shape("concat", v.shape(), &[]));
            }
            data.extend_from_slice(v.data());
        }
        Ok(self.push(Array::vector(data), Op::Concat(parts.to_vec())))
    }

    /// Contiguous sub-vector `[start, start + len)` of a 1-D node.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(a);
        if v.ndim() != 1 || start + len > v.len() {
            return Err(Error::shape("slice", v.shape(), &[start, len]));
        }
        let data = v.data()[start..start + len].to_vec();
        Ok(self.push(Array::vector(data), Op::Slice(a, start)))
    }

    /// Row `i` of a 2-D node.
    pub fn row(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        let v = self.value(a);
        if v.ndim() != 2 || i >= v.shape()[0] {
            return Err(Error::shape("row", v.shape(), &[i]));
        }
        let c = v.shape()[1];
        let data = v.data()[i * c..(i + 1) * c].to_vec();
        Ok(self.push(Array::vector(data), Op::Row(a, i)))
    }

    /// Element `i` of a 1-D node, as a one-element node.
    pub fn index(&mut self, a: NodeId, i: usize) -> Result<NodeId> {
        self.slice(a, i, 1)
    }

    pub fn fcn(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let y = kernels::fcn_fwd(self.value(w), self.value(x))?;
        Ok(self.push(y, Op::Fcn { w, x }))
    }

    pub fn conv1d(&mut self, k: NodeId, x: NodeId) -> Result<NodeId> {
        let y = kernels::conv_fwd(self.value(k), self.value(x))?;
        Ok(self.push(y, Op::Conv { k, x }))
    }

    pub fn rnn(&mut self, w: NodeId, h: NodeId, x: NodeId) -> Result<NodeId> {
        let y = kernels::rnn_fwd(self.value(w), self.value(h), self.value(x))?;
        Ok(self.push(y, Op::Rnn { w, h, x }))
    }

    pub fn readout(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let y = kernels::readout_fwd(self.value(w), self.value(x))?;
        Ok(self.push(y, Op::Readout { w, x }))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: NodeId, target: &Array) -> Result<NodeId> {
        let p = self.value(pred);
        if p.shape() != target.shape() || p.is_empty() {
            return Err(Error::shape("mse", p.shape(), target.shape()));
        }
        let n = p.len() as Real;
        let s: Real = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<Real>()
            / n;
        Ok(self.push(
            Array::scalar(s),
            Op::Mse {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Accumulates `d loss / d node` into every node reachable from `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NotScalar(shape));
        }
        let mut grads: Vec<Option<Array>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Array::filled(&shape, 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let needs: Vec<bool> = node.op.inputs().iter().map(|i| self.nodes[i.0].needs_grad).collect();
            let mut send = |id: NodeId, contrib: Array| {
                if !self.nodes[id.0].needs_grad {
                    return;
                }
                match &mut grads[id.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            };
            match &node.op {
                Op::Leaf | Op::Constant => {}
                Op::VecMat(x, w) => {
                    let (xv, wv) = (&self.nodes[x.0].value, &self.nodes[w.0].value);
                    let (n, m) = (wv.shape()[0], wv.shape()[1]);
                    let gd = g.data();
                    let mut gx = vec![0.0; n];
                    let mut gw = Array::zeros(wv.shape());
                    for i in 0..n {
                        let row = &wv.data()[i * m..(i + 1) * m];
                        gx[i] = row.iter().zip(gd).map(|(a, b)| a * b).sum();
                        let xi = xv.data()[i];
                        for (o, &gj) in gw.data_mut()[i * m..(i + 1) * m].iter_mut().zip(gd) {
                            *o = xi * gj;
                        }
                    }
                    send(*x, Array::vector(gx));
                    send(*w, gw);
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.clone());
                }
                Op::Sub(a, b) => {
                    send(*b, g.map(|v| -v));
                    send(*a, g.clone());
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                    let ga = zip(&g, vb, |x, y| x * y);
                    let gb = zip(&g, va, |x, y| x * y);
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::Scale(a, c) => send(*a, g.map(|v| v * c)),
                Op::Sigmoid(a) => send(*a, zip(&g, &node.value, |gv, s| gv * s * (1.0 - s))),
                Op::Tanh(a) => send(*a, zip(&g, &node.value, |gv, t| gv * (1.0 - t * t))),
                Op::Relu(a) => send(
                    *a,
                    zip(&g, &node.value, |gv, y| if y > 0.0 { gv } else { 0.0 }),
                ),
                Op::Log(a) => send(*a, zip(&g, &self.nodes[a.0].value, |gv, x| gv / x)),
                Op::Sum(a) => {
                    let s = g.data()[0];
                    send(*a, Array::filled(self.nodes[a.0].value.shape(), s));
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        send(*p, Array::vector(g.data()[off..off + n].to_vec()));
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let mut full = Array::zeros(self.nodes[a.0].value.shape());
                    full.data_mut()[*start..*start + g.len()].copy_from_slice(g.data());
                    send(*a, full);
                }
                Op::Row(a, r) => {
                    let mut full = Array::zeros(self.nodes[a.0].value.shape());
                    let c = g.len();
                    full.data_mut()[r * c..(r + 1) * c].copy_from_slice(g.data());
                    send(*a, full);
                }
                Op::Fcn { w, x } => {
                    let (gw, gx) = kernels::fcn_bwd(&self.nodes[w.0].value, &self.nodes[x.0].value, &g, needs[1]);
                    send(*w, gw);
                    if let Some(gx) = gx {
                        send(*x, gx);
                    }
                }
                Op::Conv { k, x } => {
                    let (gk, gx) = kernels::conv_bwd(&self.nodes[k.0].value, &self.nodes[x.0].value, &g, needs[1]);
                    send(*k, gk);
                    if let Some(gx) = gx {
                        send(*x, gx);
                    }
                }
                Op::Rnn { w, h, x } => {
                    let (gw, gh, gx) = kernels::rnn_bwd(
                        &self.nodes[w.0].value,
                        &self.nodes[h.0].value,
                        &self.nodes[x.0].value,
                        &node.value,
                        &g,
                        needs[2],
                    );
                    send(*w, gw);
                    send(*h, gh);
                    if let Some(gx) = gx {
                        send(*x, gx);
                    }
                }
                Op::Readout { w, x } => {
                    let (gw, gx) = kernels::readout_bwd(&self.nodes[w.0].value, &self.nodes[x.0].value, &g);
                    send(*w, gw);
                    send(*x, gx);
                }
                Op::Mse { pred, target } => {
                    let pv = &self.nodes[pred.0].value;
                    let scale = 2.0 * g.data()[0] / pv.len() as Real;
                    send(*pred, zip(pv, target, |p, t| scale * (p - t)));
                }
            }
            let slot = &mut self.nodes[i].grad;
            if slot.shape() == g.shape() {
                slot.add_assign(&g);
            } else {
                *slot = g;
            }
        }
        Ok(())
    }
}

fn zip(a: &Array, b: &Array, f: impl Fn(Real, Real) -> Real) -> Array {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Array::from_vec(a.shape(), data).expect("matching shapes")
}

pub(crate) fn sigmoid(x: Real) -> Real {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
