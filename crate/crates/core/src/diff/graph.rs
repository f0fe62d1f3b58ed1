use alloc::vec;
use alloc::vec::Vec;


use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf { trainable: bool },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    Offset(Var, f64),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Transpose(Var),
    /// Element-wise power with a constant exponent per element.
    Pow(Var, Vec<f64>),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    IndexSelect(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    /// Max over the last axis; the gradient is routed to the first maximal entry.
    MaxLast(Var),
    Reshape(Var, Vec<usize>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::BatchMatMul(..) => "batch_matmul",
            Op::Transpose(_) => "transpose",
            Op::Pow(..) => "pow",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Concat(_) => "concat",
            Op::IndexSelect(..) => "index_select",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SumLast(_) => "sum_last",
            Op::MaxLast(_) => "max_last",
            Op::Reshape(..) => "reshape",
        }
    }

    fn operands(&self) -> Vec<Var> {
        match self {
            Op::Leaf { .. } => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => vec![*a, *b],
            Op::MatMul(a, b) | Op::BatchMatMul(a, b) => vec![*a, *b],
            Op::Concat(parts) => parts.clone(),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Offset(a, _)
            | Op::Transpose(a)
            | Op::Pow(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::IndexSelect(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::SumLast(a)
            | Op::MaxLast(a)
            | Op::Reshape(a, _) => vec![*a],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Define-by-run expression graph.
///
/// Every operation is evaluated as soon as it is recorded. Leaf values can be
/// rebound with [`Graph::set_value`] and the whole graph recomputed with
/// [`Graph::replay`], which is what finite-difference checks rely on.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a == b || a.ends_with(b) {
        Some(a.to_vec())
    } else if b.ends_with(a) {
        Some(b.to_vec())
    } else {
        None
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn unary(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|&v| f(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| mismatch(op, a, b))?;
    let n: usize = shape.iter().product();
    let (ad, bd) = (a.data(), b.data());
    let (na, nb) = (ad.len(), bd.len());
    let mut data = Vec::with_capacity(n);
    if na == nb {
        data.extend(ad.iter().zip(bd).map(|(&x, &y)| f(x, y)));
    } else if na > nb {
        for chunk in ad.chunks(nb) {
            data.extend(chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)));
        }
    } else {
        for chunk in bd.chunks(na) {
            data.extend(ad.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
        }
    }
    Tensor::new(shape, data)
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> Option<(usize, usize, usize)> {
    match (a.shape(), b.shape()) {
        ([m, k], [k2, n]) if k == k2 => Some((*m, *k, *n)),
        _ => None,
    }
}

fn bmm_dims(a: &Tensor, b: &Tensor) -> Option<(usize, usize, usize, usize)> {
    match (a.shape(), b.shape()) {
        ([bs, m, k], [bs2, k2, n]) if bs == bs2 && k == k2 => Some((*bs, *m, *k, *n)),
        _ => None,
    }
}

/// `out[m,n] += a[m,k] * b[k,n]`
fn gemm_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let (o0, rest) = out[i * n..(i + 4) * n].split_at_mut(n);
        let (o1, rest) = rest.split_at_mut(n);
        let (o2, o3) = rest.split_at_mut(n);
        for p in 0..k {
            let (a0, a1, a2, a3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let rows = o0.iter_mut().zip(o1.iter_mut()).zip(o2.iter_mut()).zip(o3.iter_mut());
            for ((((x0, x1), x2), x3), &bv) in rows.zip(brow) {
                *x0 += a0 * bv;
                *x1 += a1 * bv;
                *x2 += a2 * bv;
                *x3 += a3 * bv;
            }
        }
        i += 4;
    }
    for i in i..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,k] += g[m,n] * b[k,n]^T`
fn gemm_nt_acc(out: &mut [f64], g: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    let mut bt = vec![0.0; n * k];
    for p in 0..k {
        for j in 0..n {
            bt[j * k + p] = b[p * n + j];
        }
    }
    gemm_acc(out, g, &bt, m, n, k);
}

/// `out[k,n] += a[m,k]^T * g[m,n]`
fn gemm_tn_acc(out: &mut [f64], a: &[f64], g: &[f64], m: usize, k: usize, n: usize) {
    let mut i = 0;
    while i + 4 <= m {
        let (g0, g1, g2, g3) = (
            &g[i * n..(i + 1) * n],
            &g[(i + 1) * n..(i + 2) * n],
            &g[(i + 2) * n..(i + 3) * n],
            &g[(i + 3) * n..(i + 4) * n],
        );
        for p in 0..k {
            let (a0, a1, a2, a3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            if a0 == 0.0 && a1 == 0.0 && a2 == 0.0 && a3 == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            let cols = g0.iter().zip(g1).zip(g2).zip(g3);
            for (o, (((&v0, &v1), &v2), &v3)) in orow.iter_mut().zip(cols) {
                *o += a0 * v0 + a1 * v1 + a2 * v2 + a3 * v3;
            }
        }
        i += 4;
    }
    for i in i..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let w = x.last_dim();
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(w) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let w = x.last_dim();
    let mut data = x.data().to_vec();
    for row in data.chunks_mut(w) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

fn argmax_first(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn leading_shape(shape: &[usize]) -> Vec<usize> {
    match shape.split_last() {
        Some((_, lead)) => lead.to_vec(),
        None => Vec::new(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    fn leaf(&mut self, value: Tensor, trainable: bool) -> Result<Var> {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(Error::NonFinite { node: id, op: "leaf" });
        }
        self.nodes.push(Node {
            op: Op::Leaf { trainable },
            value,
            requires_grad: trainable,
        });
        Ok(Var(id))
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let id = self.nodes.len();
        let value = self.compute(&op, id)?;
        let requires_grad = op.operands().iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(id))
    }

    fn compute(&self, op: &Op, id: usize) -> Result<Tensor> {
        let val = |v: &Var| &self.nodes[v.0].value;
        let name = op.name();
        let out = match op {
            Op::Leaf { .. } => return Ok(self.nodes[id].value.clone()),
            Op::Add(a, b) => binary(name, val(a), val(b), |x, y| x + y)?,
            Op::Sub(a, b) => binary(name, val(a), val(b), |x, y| x - y)?,
            Op::Mul(a, b) => binary(name, val(a), val(b), |x, y| x * y)?,
            Op::Div(a, b) => binary(name, val(a), val(b), |x, y| x / y)?,
            Op::Neg(a) => unary(val(a), |x| -x),
            Op::Scale(a, c) => unary(val(a), |x| x * c),
            Op::Offset(a, c) => unary(val(a), |x| x + c),
            Op::MatMul(a, b) => {
                let (a, b) = (val(a), val(b));
                let (m, k, n) = matmul_dims(a, b).ok_or_else(|| mismatch(name, a, b))?;
                let mut out = vec![0.0; m * n];
                gemm_acc(&mut out, a.data(), b.data(), m, k, n);
                Tensor::new(vec![m, n], out)?
            }
            Op::BatchMatMul(a, b) => {
                let (a, b) = (val(a), val(b));
                let (bs, m, k, n) = bmm_dims(a, b).ok_or_else(|| mismatch(name, a, b))?;
                let mut out = vec![0.0; bs * m * n];
                for i in 0..bs {
                    gemm_acc(
                        &mut out[i * m * n..(i + 1) * m * n],
                        &a.data()[i * m * k..(i + 1) * m * k],
                        &b.data()[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                Tensor::new(vec![bs, m, n], out)?
            }
            Op::Transpose(a) => {
                let a = val(a);
                let (r, c) = match a.shape() {
                    [r, c] => (*r, *c),
                    _ => return Err(mismatch(name, a, a)),
                };
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = a.data()[i * c + j];
                    }
                }
                Tensor::new(vec![c, r], out)?
            }
            Op::Pow(a, p) => {
                let a = val(a);
                if p.len() != a.len() {
                    return Err(Error::ShapeMismatch {
                        op: name,
                        lhs: a.shape().to_vec(),
                        rhs: vec![p.len()],
                    });
                }
                if a.data().iter().any(|&x| x <= 0.0) {
                    return Err(Error::NonPositiveBase { node: id });
                }
                let data = a.data().iter().zip(p).map(|(&x, &e)| x.powf(e)).collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Op::Exp(a) => unary(val(a), f64::exp),
            Op::Log(a) => unary(val(a), f64::ln),
            Op::Sigmoid(a) => unary(val(a), |x| 1.0 / (1.0 + (-x).exp())),
            Op::Tanh(a) => unary(val(a), f64::tanh),
            Op::Softmax(a) => softmax_rows(val(a)),
            Op::LogSoftmax(a) => log_softmax_rows(val(a)),
            Op::Concat(parts) => {
                let first = val(&parts[0]);
                let lead = leading_shape(first.shape());
                let rows: usize = lead.iter().product();
                let mut width = 0;
                for p in parts {
                    let t = val(p);
                    if leading_shape(t.shape()) != lead || t.shape().is_empty() {
                        return Err(mismatch(name, first, t));
                    }
                    width += t.last_dim();
                }
                let mut out = Vec::with_capacity(rows * width);
                for r in 0..rows {
                    for p in parts {
                        out.extend_from_slice(val(p).row(r));
                    }
                }
                let mut shape = lead;
                shape.push(width);
                Tensor::new(shape, out)?
            }
            Op::IndexSelect(a, idx) => {
                let a = val(a);
                let Some((&n0, rest)) = a.shape().split_first() else {
                    return Err(mismatch(name, a, a));
                };
                let stride: usize = rest.iter().product();
                let mut out = Vec::with_capacity(idx.len() * stride);
                for &i in idx {
                    if i >= n0 {
                        return Err(Error::ShapeMismatch {
                            op: name,
                            lhs: a.shape().to_vec(),
                            rhs: vec![i],
                        });
                    }
                    out.extend_from_slice(&a.data()[i * stride..(i + 1) * stride]);
                }
                let mut shape = vec![idx.len()];
                shape.extend_from_slice(rest);
                Tensor::new(shape, out)?
            }
            Op::Sum(a) => Tensor::scalar(val(a).data().iter().sum()),
            Op::Mean(a) => {
                let a = val(a);
                Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
            }
            Op::SumLast(a) => {
                let a = val(a);
                let data = a.data().chunks(a.last_dim()).map(|r| r.iter().sum()).collect();
                Tensor::new(leading_shape(a.shape()), data)?
            }
            Op::MaxLast(a) => {
                let a = val(a);
                let data = a
                    .data()
                    .chunks(a.last_dim())
                    .map(|r| r[argmax_first(r)])
                    .collect();
                Tensor::new(leading_shape(a.shape()), data)?
            }
            Op::Reshape(a, shape) => val(a).clone().reshaped(shape)?,
        };
        if !out.is_finite() {
            return Err(Error::NonFinite { node: id, op: name });
        }
        Ok(out)
    }

    /// Rebinds a leaf. Call [`Graph::replay`] afterwards to refresh dependents.
    pub fn set_value(&mut self, leaf: Var, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[leaf.0];
        if !matches!(node.op, Op::Leaf { .. }) {
            return Err(Error::UnknownLeaf(leaf.0));
        }
        if node.value.shape() != value.shape() {
            return Err(mismatch("set_value", &node.value, &value));
        }
        node.value = value;
        Ok(())
    }

    /// Recomputes every non-leaf node in recording order.
    pub fn replay(&mut self) -> Result<()> {
        for id in 0..self.nodes.len() {
            if matches!(self.nodes[id].op, Op::Leaf { .. }) {
                continue;
            }
            let value = self.compute(&self.nodes[id].op, id)?;
            self.nodes[id].value = value;
        }
        Ok(())
    }

    /// Reverse accumulation from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_value = &self.nodes[root.0].value;
        if root_value.len() != 1 {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                grads[id] = Some(g);
                continue;
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    node: id,
                    op: "backward",
                });
            }
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    /// Gradients of a scalar root with respect to the given trainable leaves.
    pub fn gradient(&self, root: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        for v in wrt {
            let ok = self
                .nodes
                .get(v.0)
                .is_some_and(|n| matches!(n.op, Op::Leaf { trainable: true }));
            if !ok {
                return Err(Error::UnknownLeaf(v.0));
            }
        }
        let grads = self.backward(root)?;
        Ok(wrt.iter().map(|&v| grads.wrt(v)).collect())
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: &Var| &self.nodes[v.0].value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let out = &node.value;

        // Accumulate `f(i)` into operand `v` where `v` may be suffix-broadcast.
        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize, contrib: impl Iterator<Item = f64>) {
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            let mut j = 0;
            for c in contrib {
                slot[j] += c;
                j += 1;
                if j == len {
                    j = 0;
                }
            }
        }

        match &node.op {
            Op::Leaf { .. } => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if wants(a) {
                    acc(grads, *a, val(a).len(), g.iter().copied());
                }
                if wants(b) {
                    acc(grads, *b, val(b).len(), g.iter().map(|x| sign * x));
                }
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(a).data(), val(b).data());
                let (na, nb) = (ad.len(), bd.len());
                if wants(a) {
                    acc(grads, *a, na, g.iter().zip(bd.iter().cycle()).map(|(x, y)| x * y));
                }
                if wants(b) {
                    acc(grads, *b, nb, g.iter().zip(ad.iter().cycle()).map(|(x, y)| x * y));
                }
            }
            Op::Div(a, b) => {
                let (ad, bd) = (val(a).data(), val(b).data());
                let (na, nb) = (ad.len(), bd.len());
                if wants(a) {
                    acc(grads, *a, na, g.iter().zip(bd.iter().cycle()).map(|(x, d)| x / d));
                }
                if wants(b) {
                    acc(
                        grads,
                        *b,
                        nb,
                        g.iter()
                            .zip(ad.iter().cycle())
                            .zip(bd.iter().cycle())
                            .map(|((x, n), d)| -x * n / (d * d)),
                    );
                }
            }
            Op::Neg(a) => {
                if wants(a) {
                    acc(grads, *a, g.len(), g.iter().map(|x| -x));
                }
            }
            Op::Scale(a, c) => {
                if wants(a) {
                    acc(grads, *a, g.len(), g.iter().map(|x| x * c));
                }
            }
            Op::Offset(a, _) | Op::Reshape(a, _) => {
                if wants(a) {
                    acc(grads, *a, g.len(), g.iter().copied());
                }
            }
            Op::MatMul(a, b) => {
                let (at, bt) = (val(a), val(b));
                let (m, k, n) = matmul_dims(at, bt).expect("checked in forward");
                if wants(a) {
                    let slot = grads[a.0].get_or_insert_with(|| vec![0.0; m * k]);
                    gemm_nt_acc(slot, g, bt.data(), m, k, n);
                }
                if wants(b) {
                    let slot = grads[b.0].get_or_insert_with(|| vec![0.0; k * n]);
                    gemm_tn_acc(slot, at.data(), g, m, k, n);
                }
            }
            Op::BatchMatMul(a, b) => {
                let (at, bt) = (val(a), val(b));
                let (bs, m, k, n) = bmm_dims(at, bt).expect("checked in forward");
                if wants(a) {
                    let slot = grads[a.0].get_or_insert_with(|| vec![0.0; bs * m * k]);
                    for i in 0..bs {
                        gemm_nt_acc(
                            &mut slot[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            &bt.data()[i * k * n..(i + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
                if wants(b) {
                    let slot = grads[b.0].get_or_insert_with(|| vec![0.0; bs * k * n]);
                    for i in 0..bs {
                        gemm_tn_acc(
                            &mut slot[i * k * n..(i + 1) * k * n],
                            &at.data()[i * m * k..(i + 1) * m * k],
                            &g[i * m * n..(i + 1) * m * n],
                            m,
                            k,
                            n,
                        );
                    }
                }
            }
            Op::Transpose(a) => {
                if wants(a) {
                    let (r, c) = (val(a).shape()[0], val(a).shape()[1]);
                    acc(
                        grads,
                        *a,
                        r * c,
                        (0..r * c).map(|idx| {
                            let (i, j) = (idx / c, idx % c);
                            g[j * r + i]
                        }),
                    );
                }
            }
            Op::Pow(a, p) => {
                if wants(a) {
                    let x = val(a).data();
                    let y = out.data();
                    acc(grads, *a, x.len(), (0..x.len()).map(|i| g[i] * p[i] * y[i] / x[i]));
                }
            }
            Op::Exp(a) => {
                if wants(a) {
                    let y = out.data();
                    acc(grads, *a, y.len(), g.iter().zip(y).map(|(x, y)| x * y));
                }
            }
            Op::Log(a) => {
                if wants(a) {
                    let x = val(a).data();
                    acc(grads, *a, x.len(), g.iter().zip(x).map(|(g, x)| g / x));
                }
            }
            Op::Sigmoid(a) => {
                if wants(a) {
                    let y = out.data();
                    acc(grads, *a, y.len(), g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)));
                }
            }
            Op::Tanh(a) => {
                if wants(a) {
                    let y = out.data();
                    acc(grads, *a, y.len(), g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)));
                }
            }
            Op::Softmax(a) => {
                if wants(a) {
                    let w = out.last_dim();
                    let y = out.data();
                    let mut local = vec![0.0; y.len()];
                    for ((lr, yr), gr) in local.chunks_mut(w).zip(y.chunks(w)).zip(g.chunks(w)) {
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((l, &yv), &gv) in lr.iter_mut().zip(yr).zip(gr) {
                            *l = yv * (gv - dot);
                        }
                    }
                    acc(grads, *a, local.len(), local.into_iter());
                }
            }
            Op::LogSoftmax(a) => {
                if wants(a) {
                    let w = out.last_dim();
                    let y = out.data();
                    let mut local = vec![0.0; y.len()];
                    for ((lr, yr), gr) in local.chunks_mut(w).zip(y.chunks(w)).zip(g.chunks(w)) {
                        let total: f64 = gr.iter().sum();
                        for ((l, &yv), &gv) in lr.iter_mut().zip(yr).zip(gr) {
                            *l = gv - yv.exp() * total;
                        }
                    }
                    acc(grads, *a, local.len(), local.into_iter());
                }
            }
            Op::Concat(parts) => {
                let width = out.last_dim();
                let rows = out.len() / width;
                let mut offset = 0;
                for p in parts {
                    let pw = val(p).last_dim();
                    if wants(p) {
                        let contrib = (0..rows * pw).map(|idx| {
                            let (r, c) = (idx / pw, idx % pw);
                            g[r * width + offset + c]
                        });
                        acc(grads, *p, rows * pw, contrib);
                    }
                    offset += pw;
                }
            }
            Op::IndexSelect(a, idx) => {
                if wants(a) {
                    let n = val(a).len();
                    let stride = n / val(a).shape()[0];
                    let slot = grads[a.0].get_or_insert_with(|| vec![0.0; n]);
                    for (r, &i) in idx.iter().enumerate() {
                        for c in 0..stride {
                            slot[i * stride + c] += g[r * stride + c];
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    let n = val(a).len();
                    acc(grads, *a, n, core::iter::repeat_n(g[0], n));
                }
            }
            Op::Mean(a) => {
                if wants(a) {
                    let n = val(a).len();
                    let s = g[0] / n as f64;
                    acc(grads, *a, n, core::iter::repeat_n(s, n));
                }
            }
            Op::SumLast(a) => {
                if wants(a) {
                    let n = val(a).len();
                    let w = val(a).last_dim();
                    acc(grads, *a, n, (0..n).map(|i| g[i / w]));
                }
            }
            Op::MaxLast(a) => {
                if wants(a) {
                    let x = val(a);
                    let w = x.last_dim();
                    let slot = grads[a.0].get_or_insert_with(|| vec![0.0; x.len()]);
                    for (r, row) in x.data().chunks(w).enumerate() {
                        slot[r * w + argmax_first(row)] += g[r];
                    }
                }
            }
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a, b))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Neg(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Offset(a, c))
    }

    /// `[m, k] x [k, n] -> [m, n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    /// `[b, m, k] x [b, k, n] -> [b, m, n]`
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::BatchMatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a))
    }

    /// `a^p` element-wise with constant exponents; every base must be positive.
    pub fn pow(&mut self, a: Var, exponents: &Tensor) -> Result<Var> {
        if exponents.shape() != self.shape(a) {
            return Err(mismatch("pow", self.value(a), exponents));
        }
        self.push(Op::Pow(a, exponents.data().to_vec()))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Softmax(a))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.push(Op::LogSoftmax(a))
    }

    /// Concatenation along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: Vec::new(),
                rhs: Vec::new(),
            });
        }
        self.push(Op::Concat(parts.to_vec()))
    }

    /// Gathers entries along the first axis.
    pub fn index_select(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        self.push(Op::IndexSelect(a, indices.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Mean(a))
    }

    pub fn sum_last(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumLast(a))
    }

    /// Max over the last axis. Ties route the gradient to the lowest index.
    pub fn max_last(&mut self, a: Var) -> Result<Var> {
        self.push(Op::MaxLast(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape(a, shape.to_vec()))
    }
}
