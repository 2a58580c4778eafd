use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::gemm::gemm;
use super::lstm::{self, LstmSaved, LstmWeights};
use super::tensor::Tensor;
use crate::error::{shape_err, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Concat(Vec<Var>),
    SliceLast { x: Var, start: usize },
    SliceRows { x: Var, start: usize },
    Reshape(Var),
    Sum(Var),
    SumAxis { x: Var, outer: usize, len: usize, inner: usize },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Sqrt(Var),
    Reciprocal(Var),
    Abs(Var),
    Square(Var),
    NormalizeRows { x: Var, norms: Vec<f64> },
    ResidualPhase { delta: Var, scale: Vec<f64>, norms: Vec<f64> },
    Lstm(Box<LstmSaved>),
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Record of executed primitives for one forward pass.
pub struct Tape {
    nodes: Vec<Node>,
    fault: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every recorded value.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when the value does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zero-filled when it does not influence the loss.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; tape.value(v).len()],
        }
    }

    /// Adds the gradient of `v` into `tensor`'s accumulator.
    pub fn accumulate_into(&self, tape: &Tape, v: Var, tensor: &mut Tensor) {
        match self.get(v) {
            Some(g) => tensor.accumulate_grad(g),
            None => tensor.accumulate_grad(&vec![0.0; tape.value(v).len()]),
        }
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn as_matrix(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    sigmoid(x)
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), fault: false }
    }

    /// Test hook: perturbs the sigmoid backward rule so gradient checks must fail.
    #[doc(hidden)]
    pub fn inject_fault(&mut self) {
        self.fault = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node { shape, value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    /// Copies `t` onto the tape; gradients flow to it iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// A gradient-requiring leaf built from raw parts.
    pub fn param(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::param(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, data)?;
        Ok(self.leaf(&t))
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.push(vec![], vec![v], Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, value, op, rg)
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(shape, value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (as_matrix(sa), as_matrix(sb)) {
            (Some((m, k)), Some((k2, n))) if k == k2 => (m, k, n),
            _ => return Err(shape_err("matmul", format!("{:?} x {:?}", sa, sb))),
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), false, &mut out, false);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = as_matrix(self.shape(x))
            .ok_or_else(|| shape_err("transpose", format!("{:?} is not rank 2", self.shape(x))))?;
        let v = self.value(x);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![c, r], out, Op::Transpose(x), rg))
    }

    /// `x[n, m] + b[m]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = as_matrix(self.shape(x))
            .ok_or_else(|| shape_err("add_row", format!("{:?} is not rank 2", self.shape(x))))?;
        if numel(self.shape(b)) != c {
            return Err(shape_err("add_row", format!("{:?} + {:?}", self.shape(x), self.shape(b))));
        }
        let bv = self.value(b);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c) {
            row.iter_mut().zip(bv).for_each(|(o, b)| *o += b);
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(vec![r, c], out, Op::AddRow(x, b), rg))
    }

    /// `x[n, m] * s[n]` with `s` broadcast across each row.
    pub fn mul_col(&mut self, x: Var, s: Var) -> Result<Var> {
        let (r, c) = as_matrix(self.shape(x))
            .ok_or_else(|| shape_err("mul_col", format!("{:?} is not rank 2", self.shape(x))))?;
        if numel(self.shape(s)) != r {
            return Err(shape_err("mul_col", format!("{:?} * {:?}", self.shape(x), self.shape(s))));
        }
        let sv = self.value(s);
        let mut out = self.value(x).to_vec();
        for (row, &k) in out.chunks_mut(c).zip(sv) {
            row.iter_mut().for_each(|o| *o *= k);
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(vec![r, c], out, Op::MulCol(x, s), rg))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        self.unary(x, |v| v + k, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let lead = self.shape(first);
        if lead.is_empty() {
            return Err(shape_err("concat", "rank-0 input".into()));
        }
        let lead = lead[..lead.len() - 1].to_vec();
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != lead.len() + 1 || s[..lead.len()] != lead[..] {
                return Err(shape_err("concat", format!("{:?} vs {:?}", self.shape(first), s)));
            }
            widths.push(s[s.len() - 1]);
        }
        let outer = numel(&lead);
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(x)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(shape, out, Op::Concat(xs.to_vec()), rg))
    }

    /// Columns `[start, end)` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let w = *s.last().ok_or_else(|| shape_err("slice_last", "rank-0 input".into()))?;
        if start > end || end > w {
            return Err(shape_err("slice_last", format!("[{start}, {end}) of {:?}", s)));
        }
        let outer = numel(&s[..s.len() - 1]);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * (end - start));
        for o in 0..outer {
            out.extend_from_slice(&v[o * w + start..o * w + end]);
        }
        let mut shape = s;
        *shape.last_mut().unwrap() = end - start;
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::SliceLast { x, start }, rg))
    }

    /// Indices `[start, end)` of the first axis.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let r = *s.first().ok_or_else(|| shape_err("slice_rows", "rank-0 input".into()))?;
        if start > end || end > r {
            return Err(shape_err("slice_rows", format!("[{start}, {end}) of {:?}", s)));
        }
        let inner = numel(&s[1..]);
        let out = self.value(x)[start * inner..end * inner].to_vec();
        let mut shape = s;
        shape[0] = end - start;
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::SliceRows { x, start }, rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != numel(self.shape(x)) {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", self.shape(x), shape)));
        }
        let v = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape, v, Op::Reshape(x), rg))
    }

    /// Sum of all elements, shape `[]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    /// Sum over `axis`, which is removed from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() {
            return Err(shape_err("sum_axis", format!("axis {axis} of {:?}", s)));
        }
        let outer = numel(&s[..axis]);
        let len = s[axis];
        let inner = numel(&s[axis + 1..]);
        let v = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &v[(o * len + l) * inner..(o * len + l + 1) * inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(a, b)| *a += b);
            }
        }
        let mut shape = s;
        shape.remove(axis);
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::SumAxis { x, outer, len, inner }, rg))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let len = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| shape_err("mean_axis", format!("axis {axis} of {:?}", self.shape(x))))?;
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / len.max(1) as f64))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, libm::tanh, Op::Tanh(x))
    }

    /// Subgradient at zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.max(0.0), Op::Relu(x))
    }

    /// Gradient at zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, libm::sqrt, Op::Sqrt(x))
    }

    pub fn reciprocal(&mut self, x: Var) -> Var {
        self.unary(x, |v| 1.0 / v, Op::Reciprocal(x))
    }

    /// Subgradient at zero is zero.
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    /// Scales each row of `x[n, d]` to unit Euclidean norm. Rows with norm
    /// below `eps` are passed through unchanged and receive no gradient.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let (r, c) = as_matrix(self.shape(x))
            .ok_or_else(|| shape_err("normalize_rows", format!("{:?} is not rank 2", self.shape(x))))?;
        let mut out = self.value(x).to_vec();
        let mut norms = vec![0.0; r];
        for (row, n) in out.chunks_mut(c).zip(norms.iter_mut()) {
            let norm = libm::sqrt(row.iter().map(|v| v * v).sum::<f64>());
            if norm >= eps {
                row.iter_mut().for_each(|v| *v /= norm);
                *n = norm;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![r, c], out, Op::NormalizeRows { x, norms }, rg))
    }

    /// Residual phase head.
    ///
    /// For each bin `i` with noisy unit phasor `u_i`, mixture value `z_i`
    /// (re, im) and magnitude `m_i = |z_i|`, the output is the unit vector
    /// along `u_i + delta_i`, computed as `normalize(z_i + m_i * delta_i)`.
    /// When `delta_i = 0` this reproduces `z_i / |z_i|` bit for bit. Bins
    /// where `|u_i + delta_i| < eps` or `m_i` vanishes fall back to `u_i`.
    ///
    /// `delta`: `[n, 2]`; `mix`, `unit`: `n` interleaved `(re, im)` pairs; `mag`: `n` values.
    pub fn residual_phase(
        &mut self,
        delta: Var,
        mix: &[f64],
        mag: &[f64],
        unit: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let n = mag.len();
        if self.shape(delta) != [n, 2] || mix.len() != 2 * n || unit.len() != 2 * n {
            return Err(shape_err(
                "residual_phase",
                format!("delta {:?}, mixture {}, unit {}, magnitude {n}", self.shape(delta), mix.len(), unit.len()),
            ));
        }
        let d = self.value(delta);
        let mut out = vec![0.0; 2 * n];
        let mut scale = vec![0.0; n];
        let mut norms = vec![0.0; n];
        for i in 0..n {
            let (dc, ds) = (d[2 * i], d[2 * i + 1]);
            let (uc, us) = (unit[2 * i] + dc, unit[2 * i + 1] + ds);
            let pre = libm::sqrt(uc * uc + us * us);
            let m = mag[i];
            let (zr, zi) = (mix[2 * i] + m * dc, mix[2 * i + 1] + m * ds);
            let zn = libm::sqrt(zr * zr + zi * zi);
            if pre < eps || zn < crate::dsp::ZERO_MAGNITUDE {
                out[2 * i] = unit[2 * i];
                out[2 * i + 1] = unit[2 * i + 1];
            } else {
                out[2 * i] = zr / zn;
                out[2 * i + 1] = zi / zn;
                scale[i] = m;
                norms[i] = zn;
            }
        }
        let rg = self.rg(delta);
        Ok(self.push(vec![n, 2], out, Op::ResidualPhase { delta, scale, norms }, rg))
    }

    /// One LSTM direction over a `[T, in]` sequence, returning `[T, H]` hidden states.
    pub fn lstm(&mut self, x: Var, w: LstmWeights, reverse: bool) -> Result<Var> {
        let (t, input) = as_matrix(self.shape(x))
            .ok_or_else(|| shape_err("lstm", format!("input {:?} is not rank 2", self.shape(x))))?;
        let hidden = lstm::check_shapes(self, w, input)?;
        let fwd = lstm::forward(
            self.value(x),
            self.value(w.w_ih),
            self.value(w.w_hh),
            self.value(w.bias),
            t,
            input,
            hidden,
            reverse,
        );
        let rg = self.rg(x) || self.rg(w.w_ih) || self.rg(w.w_hh) || self.rg(w.bias);
        let saved = LstmSaved {
            x,
            weights: w,
            reverse,
            hidden,
            input,
            gates: fwd.gates,
            cells: fwd.cells,
            tanh_c: fwd.tanh_c,
        };
        Ok(self.push(vec![t, hidden], fwd.h, Op::Lstm(Box::new(saved)), rg))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(shape_err("backward", format!("loss has shape {:?}, expected a scalar", self.shape(loss))));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.apply_rule(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        // Only values that can carry gradient are reported.
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn apply_rule(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.acc(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                self.acc(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                self.acc(grads, *b, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * vb[k];
                    }
                });
                self.acc(grads, *b, |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * va[k];
                    }
                });
            }
            Op::MatMul(a, b) => {
                let [m, k] = [self.shape(*a)[0], self.shape(*a)[1]];
                let n = self.shape(*b)[1];
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, *a, |d| gemm(m, n, k, g, false, vb, true, d, true));
                self.acc(grads, *b, |d| gemm(k, m, n, va, true, g, false, d, true));
            }
            Op::Transpose(x) => {
                let (r, c) = (self.shape(*x)[0], self.shape(*x)[1]);
                self.acc(grads, *x, |d| {
                    for a in 0..r {
                        for b in 0..c {
                            d[a * c + b] += g[b * r + a];
                        }
                    }
                });
            }
            Op::AddRow(x, b) => {
                let c = self.shape(*x)[1];
                self.acc(grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                self.acc(grads, *b, |d| {
                    for row in g.chunks(c) {
                        d.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::MulCol(x, s) => {
                let c = self.shape(*x)[1];
                let (vx, vs) = (self.value(*x), self.value(*s));
                self.acc(grads, *x, |d| {
                    for (r, k) in vs.iter().enumerate() {
                        for j in 0..c {
                            d[r * c + j] += g[r * c + j] * k;
                        }
                    }
                });
                self.acc(grads, *s, |d| {
                    for (r, dr) in d.iter_mut().enumerate() {
                        *dr += (0..c).map(|j| g[r * c + j] * vx[r * c + j]).sum::<f64>();
                    }
                });
            }
            Op::Scale(x, k) => self.acc(grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += k * g)),
            Op::AddScalar(x) | Op::Reshape(x) => {
                self.acc(grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g))
            }
            Op::Concat(xs) => {
                let total = *node.shape.last().unwrap();
                let outer = y.len() / total.max(1);
                let mut offset = 0;
                for &x in xs {
                    let w = *self.shape(x).last().unwrap();
                    self.acc(grads, x, |d| {
                        for o in 0..outer {
                            for j in 0..w {
                                d[o * w + j] += g[o * total + offset + j];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceLast { x, start } => {
                let w = *self.shape(*x).last().unwrap();
                let width = *node.shape.last().unwrap();
                let outer = y.len() / width.max(1);
                self.acc(grads, *x, |d| {
                    for o in 0..outer {
                        for j in 0..width {
                            d[o * w + start + j] += g[o * width + j];
                        }
                    }
                });
            }
            Op::SliceRows { x, start } => {
                let inner = numel(&self.shape(*x)[1..]);
                self.acc(grads, *x, |d| {
                    d[start * inner..start * inner + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, g)| *d += g)
                });
            }
            Op::Sum(x) => self.acc(grads, *x, |d| d.iter_mut().for_each(|d| *d += g[0])),
            Op::SumAxis { x, outer, len, inner } => {
                self.acc(grads, *x, |d| {
                    for o in 0..*outer {
                        for l in 0..*len {
                            for j in 0..*inner {
                                d[(o * len + l) * inner + j] += g[o * inner + j];
                            }
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let k = if self.fault { 1.5 } else { 1.0 };
                self.acc(grads, *x, |d| {
                    for j in 0..d.len() {
                        d[j] += k * g[j] * y[j] * (1.0 - y[j]);
                    }
                })
            }
            Op::Tanh(x) => self.acc(grads, *x, |d| {
                for j in 0..d.len() {
                    d[j] += g[j] * (1.0 - y[j] * y[j]);
                }
            }),
            Op::Relu(x) => {
                let vx = self.value(*x);
                self.acc(grads, *x, |d| {
                    for j in 0..d.len() {
                        if vx[j] > 0.0 {
                            d[j] += g[j];
                        }
                    }
                })
            }
            Op::Sqrt(x) => self.acc(grads, *x, |d| {
                for j in 0..d.len() {
                    if y[j] > 0.0 {
                        d[j] += g[j] * 0.5 / y[j];
                    }
                }
            }),
            Op::Reciprocal(x) => self.acc(grads, *x, |d| {
                for j in 0..d.len() {
                    d[j] -= g[j] * y[j] * y[j];
                }
            }),
            Op::Abs(x) => {
                let vx = self.value(*x);
                self.acc(grads, *x, |d| {
                    for j in 0..d.len() {
                        if vx[j] > 0.0 {
                            d[j] += g[j];
                        } else if vx[j] < 0.0 {
                            d[j] -= g[j];
                        }
                    }
                })
            }
            Op::Square(x) => {
                let vx = self.value(*x);
                self.acc(grads, *x, |d| {
                    for j in 0..d.len() {
                        d[j] += 2.0 * vx[j] * g[j];
                    }
                })
            }
            Op::NormalizeRows { x, norms } => {
                let c = node.shape[1];
                self.acc(grads, *x, |d| {
                    for (r, &n) in norms.iter().enumerate() {
                        if n == 0.0 {
                            continue;
                        }
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..c {
                            d[r * c + j] += (gr[j] - yr[j] * dot) / n;
                        }
                    }
                });
            }
            Op::ResidualPhase { delta, scale, norms } => {
                self.acc(grads, *delta, |d| {
                    for (i, (&m, &n)) in scale.iter().zip(norms).enumerate() {
                        if n == 0.0 {
                            continue;
                        }
                        let (yc, ys) = (y[2 * i], y[2 * i + 1]);
                        let (gc, gs) = (g[2 * i], g[2 * i + 1]);
                        let dot = yc * gc + ys * gs;
                        let k = m / n;
                        d[2 * i] += k * (gc - yc * dot);
                        d[2 * i + 1] += k * (gs - ys * dot);
                    }
                });
            }
            Op::Lstm(saved) => {
                let w = saved.weights;
                let back = lstm::backward(
                    saved,
                    g,
                    y,
                    self.value(saved.x),
                    self.value(w.w_ih),
                    self.value(w.w_hh),
                );
                self.acc(grads, saved.x, |d| d.iter_mut().zip(&back.dx).for_each(|(d, g)| *d += g));
                self.acc(grads, w.w_ih, |d| d.iter_mut().zip(&back.dw_ih).for_each(|(d, g)| *d += g));
                self.acc(grads, w.w_hh, |d| d.iter_mut().zip(&back.dw_hh).for_each(|(d, g)| *d += g));
                self.acc(grads, w.bias, |d| d.iter_mut().zip(&back.db).for_each(|(d, g)| *d += g));
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.rg(v) {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
        f(slot);
    }
}
