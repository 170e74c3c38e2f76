//! Reverse-mode automatic differentiation on a flat Wengert tape.
//!
//! Every forward op appends one node whose parents have strictly smaller
//! indices, so a single reverse sweep over the node list is a valid
//! topological order for the chain rule. Elementwise binary ops broadcast
//! only over a leading batch axis: `[n, rest..] ∘ [rest..]`.

use crate::error::{Error, Result};
use crate::tensor::{matmul_nt, matmul_raw, matmul_tn, Tensor};

/// Probabilities are floored here before taking logs.
pub const LOG_FLOOR: f64 = 1e-30;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Pow(usize, f64),
    Exp(usize),
    LogClamped(usize),
    Elu(usize, f64),
    Softplus(usize),
    Scale(usize, f64),
    Shift(usize),
    Sum(usize),
    Mean(usize),
    SumAxis(usize, usize),
    LogSumExp(usize, usize),
    Slice(usize, usize),
    Cols { src: usize, start: usize },
    Stack(Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root with respect to every node on the tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.grads.get(v.0).and_then(|g| g.as_ref()) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }
}

fn split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn softplus(x: f64) -> f64 {
    let v = x.max(0.0) + (-x.abs()).exp().ln_1p();
    v.max(f64::MIN_POSITIVE)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: usize, len: usize) -> &mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
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

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        self.value(v).item()
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// Shapes must match, or one operand must equal the other minus its leading axis.
    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa == sb || (!sa.is_empty() && &sa[1..] == sb) {
            Ok(sa.to_vec())
        } else if !sb.is_empty() && &sb[1..] == sa {
            Ok(sb.to_vec())
        } else {
            Err(Error::ShapeMismatch {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            })
        }
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        make: impl Fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let shape = self.bcast(name, a, b)?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let n: usize = shape.iter().product();
        let (la, lb) = (av.len(), bv.len());
        let data: Vec<f64> = (0..n).map(|i| f(av[i % la], bv[i % lb])).collect();
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(make(a.0, b.0), Tensor::from_parts(shape, data), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.value(a).shape();
        let sb = self.value(b).shape();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        let (n, k, p) = (sa[0], sa[1], sb[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), n, k, p);
        let ng = self.needs(a.0) || self.needs(b.0);
        Ok(self.push(
            Op::MatMul(a.0, b.0),
            Tensor::from_parts(vec![n, p], data),
            ng,
        ))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(a).map(f);
        let ng = self.needs(a.0);
        self.push(op, value, ng)
    }

    /// `base^p` elementwise.
    pub fn powf(&mut self, base: Var, p: f64) -> Var {
        if p == 2.0 {
            self.unary(base, |x| x * x, Op::Pow(base.0, p))
        } else {
            self.unary(base, |x| x.powf(p), Op::Pow(base.0, p))
        }
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.powf(a, 2.0)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a.0))
    }

    /// `ln(max(x, LOG_FLOOR))`; never produces `-inf` or NaN for `x >= 0`.
    pub fn log_clamped(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(LOG_FLOOR).ln(), Op::LogClamped(a.0))
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Var {
        self.unary(
            a,
            |x| if x > 0.0 { x } else { alpha * x.exp_m1() },
            Op::Elu(a.0, alpha),
        )
    }

    /// `ln(1 + e^x)`, floored at the smallest positive normal.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, softplus, Op::Softplus(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| c * x, Op::Scale(a.0, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, |x| x + c, Op::Shift(a.0))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let ng = self.needs(a.0);
        self.push(Op::Sum(a.0), Tensor::scalar(s), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::contract("mean of empty tensor"));
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let ng = self.needs(a.0);
        Ok(self.push(Op::Mean(a.0), Tensor::scalar(s), ng))
    }

    fn check_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<Vec<usize>> {
        let shape = self.value(a).shape();
        if axis >= shape.len() {
            return Err(Error::ShapeMismatch {
                op,
                left: shape.to_vec(),
                right: vec![axis],
            });
        }
        let mut out = shape.to_vec();
        out.remove(axis);
        Ok(out)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out_shape = self.check_axis("sum_axis", a, axis)?;
        let t = self.value(a);
        let (outer, len, inner) = split(t.shape(), axis);
        let x = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += x[(o * len + l) * inner + i];
                }
            }
        }
        let ng = self.needs(a.0);
        Ok(self.push(
            Op::SumAxis(a.0, axis),
            Tensor::from_parts(out_shape, out),
            ng,
        ))
    }

    /// `ln Σ exp(x)` along `axis`, evaluated with a max shift.
    pub fn logsumexp(&mut self, a: Var, axis: usize) -> Result<Var> {
        let out_shape = self.check_axis("logsumexp", a, axis)?;
        let t = self.value(a);
        let (outer, len, inner) = split(t.shape(), axis);
        if len == 0 {
            return Err(Error::contract("logsumexp over empty axis"));
        }
        let x = t.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                let at = |l: usize| x[(o * len + l) * inner + i];
                let m = (0..len).map(at).fold(f64::NEG_INFINITY, f64::max);
                out[o * inner + i] = if m == f64::NEG_INFINITY {
                    m
                } else {
                    m + (0..len).map(|l| (at(l) - m).exp()).sum::<f64>().ln()
                };
            }
        }
        let ng = self.needs(a.0);
        Ok(self.push(
            Op::LogSumExp(a.0, axis),
            Tensor::from_parts(out_shape, out),
            ng,
        ))
    }

    /// Contiguous window of the flattened source, reshaped to `shape`.
    pub fn slice(&mut self, a: Var, start: usize, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let src = self.value(a).data();
        if start + n > src.len() {
            return Err(Error::contract(format!(
                "slice [{}, {}) out of range for length {}",
                start,
                start + n,
                src.len()
            )));
        }
        let value = Tensor::from_parts(shape.to_vec(), src[start..start + n].to_vec());
        let ng = self.needs(a.0);
        Ok(self.push(Op::Slice(a.0, start), value, ng))
    }

    /// Columns `[start, start + width)` of a matrix.
    pub fn cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let t = self.value(a);
        let s = t.shape();
        if s.len() != 2 || start + width > s[1] {
            return Err(Error::ShapeMismatch {
                op: "cols",
                left: s.to_vec(),
                right: vec![start, width],
            });
        }
        let (n, c) = (s[0], s[1]);
        let x = t.data();
        let mut data = Vec::with_capacity(n * width);
        for r in 0..n {
            data.extend_from_slice(&x[r * c + start..r * c + start + width]);
        }
        let ng = self.needs(a.0);
        Ok(self.push(
            Op::Cols { src: a.0, start },
            Tensor::from_parts(vec![n, width], data),
            ng,
        ))
    }

    /// Stack equally shaped values along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("stack of zero tensors"))?;
        let shape = self.value(*first).shape().to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(*first).len());
        let mut ng = false;
        for p in parts {
            let t = self.value(*p);
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: shape,
                    right: t.shape().to_vec(),
                });
            }
            data.extend_from_slice(t.data());
            ng |= self.needs(p.0);
        }
        let mut out_shape = vec![parts.len()];
        out_shape.extend_from_slice(&shape);
        let ids = parts.iter().map(|p| p.0).collect();
        Ok(self.push(Op::Stack(ids), Tensor::from_parts(out_shape, data), ng))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        grads[root.0] = Some(vec![1.0]);

        for id in (0..=root.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.needs_grad {
                self.propagate(node, &g, &mut grads);
            }
            grads[id] = Some(g);
        }

        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        let grads = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.map(|g| Tensor::from_parts(self.nodes[i].value.shape().to_vec(), g)))
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn binary_back(
        &self,
        a: usize,
        b: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        da: impl Fn(f64, f64) -> f64,
        db: impl Fn(f64, f64) -> f64,
    ) {
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let (la, lb) = (av.len(), bv.len());
        if self.needs(a) {
            let ga = accumulate(grads, a, la);
            for (i, &gi) in g.iter().enumerate() {
                ga[i % la] += gi * da(av[i % la], bv[i % lb]);
            }
        }
        if self.needs(b) {
            let gb = accumulate(grads, b, lb);
            for (i, &gi) in g.iter().enumerate() {
                gb[i % lb] += gi * db(av[i % la], bv[i % lb]);
            }
        }
    }

    fn unary_back(
        &self,
        a: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
        d: impl Fn(f64, f64) -> f64,
        out: &[f64],
    ) {
        if !self.needs(a) {
            return;
        }
        let x = self.nodes[a].value.data();
        let ga = accumulate(grads, a, x.len());
        for i in 0..g.len() {
            ga[i] += g[i] * d(x[i], out[i]);
        }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let out = node.value.data();
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::Add(a, b) => self.binary_back(*a, *b, g, grads, |_, _| 1.0, |_, _| 1.0),
            Op::Sub(a, b) => self.binary_back(*a, *b, g, grads, |_, _| 1.0, |_, _| -1.0),
            Op::Mul(a, b) => self.binary_back(*a, *b, g, grads, |_, y| y, |x, _| x),
            Op::Div(a, b) => {
                self.binary_back(*a, *b, g, grads, |_, y| 1.0 / y, |x, y| -x / (y * y))
            }
            Op::MatMul(a, b) => {
                let sa = self.nodes[*a].value.shape();
                let sb = self.nodes[*b].value.shape();
                let (n, k, p) = (sa[0], sa[1], sb[1]);
                if self.needs(*a) {
                    let d = matmul_nt(g, self.nodes[*b].value.data(), n, k, p);
                    let ga = accumulate(grads, *a, n * k);
                    ga.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                }
                if self.needs(*b) {
                    let d = matmul_tn(self.nodes[*a].value.data(), g, n, k, p);
                    let gb = accumulate(grads, *b, k * p);
                    gb.iter_mut().zip(d).for_each(|(x, y)| *x += y);
                }
            }
            Op::Pow(a, p) => {
                let p = *p;
                if p == 2.0 {
                    self.unary_back(*a, g, grads, |x, _| 2.0 * x, out)
                } else {
                    self.unary_back(*a, g, grads, |x, _| p * x.powf(p - 1.0), out)
                }
            }
            Op::Exp(a) => self.unary_back(*a, g, grads, |_, y| y, out),
            Op::LogClamped(a) => self.unary_back(
                *a,
                g,
                grads,
                |x, _| if x > LOG_FLOOR { 1.0 / x } else { 0.0 },
                out,
            ),
            Op::Elu(a, alpha) => {
                let alpha = *alpha;
                self.unary_back(
                    *a,
                    g,
                    grads,
                    |x, _| if x > 0.0 { 1.0 } else { alpha * x.exp() },
                    out,
                )
            }
            Op::Softplus(a) => self.unary_back(*a, g, grads, |x, _| sigmoid(x), out),
            Op::Scale(a, c) => {
                let c = *c;
                self.unary_back(*a, g, grads, |_, _| c, out)
            }
            Op::Shift(a) => self.unary_back(*a, g, grads, |_, _| 1.0, out),
            Op::Sum(a) => {
                let len = self.nodes[*a].value.len();
                let ga = accumulate(grads, *a, len);
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Mean(a) => {
                let len = self.nodes[*a].value.len();
                let ga = accumulate(grads, *a, len);
                let s = g[0] / len as f64;
                ga.iter_mut().for_each(|x| *x += s);
            }
            Op::SumAxis(a, axis) => {
                let (outer, len, inner) = split(self.nodes[*a].value.shape(), *axis);
                let ga = accumulate(grads, *a, outer * len * inner);
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            ga[(o * len + l) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            }
            Op::LogSumExp(a, axis) => {
                let x = self.nodes[*a].value.data();
                let (outer, len, inner) = split(self.nodes[*a].value.shape(), *axis);
                let ga = accumulate(grads, *a, outer * len * inner);
                for o in 0..outer {
                    for i in 0..inner {
                        let r = o * inner + i;
                        if out[r] == f64::NEG_INFINITY {
                            continue;
                        }
                        for l in 0..len {
                            let j = (o * len + l) * inner + i;
                            ga[j] += g[r] * (x[j] - out[r]).exp();
                        }
                    }
                }
            }
            Op::Slice(a, start) => {
                let len = self.nodes[*a].value.len();
                let ga = accumulate(grads, *a, len);
                for (i, &gi) in g.iter().enumerate() {
                    ga[start + i] += gi;
                }
            }
            Op::Cols { src, start } => {
                let s = self.nodes[*src].value.shape();
                let (n, c) = (s[0], s[1]);
                let width = g.len() / n.max(1);
                let ga = accumulate(grads, *src, n * c);
                for r in 0..n {
                    for j in 0..width {
                        ga[r * c + start + j] += g[r * width + j];
                    }
                }
            }
            Op::Stack(ids) => {
                let part = g.len() / ids.len();
                for (k, &id) in ids.iter().enumerate() {
                    if !self.needs(id) {
                        continue;
                    }
                    let gp = accumulate(grads, id, part);
                    for (x, y) in gp.iter_mut().zip(&g[k * part..(k + 1) * part]) {
                        *x += y;
                    }
                }
            }
        }
    }
}
