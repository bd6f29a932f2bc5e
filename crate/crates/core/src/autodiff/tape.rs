use super::tensor::{Real, Tensor};
use super::AutodiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<R> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    SubRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, R),
    AddScalar(Var),
    Neg(Var),
    Exp(Var),
    Sin(Var),
    Cos(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    ExclusiveCumsum(Var),
    SegmentWeightedSum(Var, Var),
}

struct Node<R> {
    value: Tensor<R>,
    op: Op<R>,
    needs_grad: bool,
}

/// Append-only record of one forward pass.
///
/// Nodes are stored in creation order, which is already a topological order,
/// so the backward sweep is a single reverse scan visiting each node once.
/// A tape is meant to live for one training step and then be dropped.
pub struct Tape<R> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

fn require_2d<R: Real>(op: &'static str, t: &Tensor<R>) -> Result<(usize, usize), AutodiffError> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(AutodiffError::ShapeMismatch {
            op,
            lhs: other.to_vec(),
            rhs: vec![0, 0],
        }),
    }
}

fn mismatch<R: Real>(op: &'static str, a: &Tensor<R>, b: &Tensor<R>) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (parameter or probed input).
    pub fn leaf(&mut self, value: Tensor<R>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// A non-differentiable input; no gradient is ever propagated into it.
    pub fn constant(&mut self, value: Tensor<R>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<R> {
        &self.nodes[v.0].value
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn push(&mut self, name: &'static str, value: Tensor<R>, op: Op<R>, parents: &[Var]) -> Result<Var, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        let needs_grad = self.needs(parents);
        self.nodes.push(Node { value, op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(R) -> R, op: Op<R>) -> Result<Var, AutodiffError> {
        let value = self.value(a).map(f);
        self.push(name, value, op, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = require_2d("matmul", ta)?;
        let (k2, n) = require_2d("matmul", tb)?;
        if k != k2 {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = Tensor::zeros(&[m, n]);
        R::gemm(m, k, n, ta.data(), (k as isize, 1), tb.data(), (n as isize, 1), R::zero(), out.data_mut());
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    /// Elementwise binary op; `b` is either the same shape as `a` or a `[1, C]` row
    /// broadcast over the leading (batch) dimension of `a`.
    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(R, R) -> R,
        same: Op<R>,
        row: Op<R>,
    ) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            let out = Tensor::new(ta.shape().to_vec(), data)?;
            return self.push(name, out, same, &[a, b]);
        }
        let (_, c) = require_2d(name, ta)?;
        if tb.shape() != [1, c] {
            return Err(mismatch(name, ta, tb));
        }
        let bd = tb.data();
        let mut data = Vec::with_capacity(ta.len());
        for chunk in ta.data().chunks_exact(c) {
            data.extend(chunk.iter().zip(bd).map(|(&x, &y)| f(x, y)));
        }
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(name, out, row, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b), Op::AddRow(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b), Op::SubRow(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b), Op::MulRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: R) -> Result<Var, AutodiffError> {
        self.unary("scale", a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: R) -> Result<Var, AutodiffError> {
        self.unary("add_scalar", a, |x| x + s, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("neg", a, |x| -x, Op::Neg(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("exp", a, |x| x.exp(), Op::Exp(a))
    }

    pub fn sin(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("sin", a, |x| x.sin(), Op::Sin(a))
    }

    pub fn cos(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("cos", a, |x| x.cos(), Op::Cos(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("relu", a, |x| x.max(R::zero()), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("softplus", a, softplus, Op::Softplus(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s = self.value(a).sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(AutodiffError::Empty { op: "mean" });
        }
        let s = t.sum() / R::of(t.len() as f64);
        self.push("mean", Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// Row-wise reduction `[R, C] -> [R, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let (r, c) = require_2d("sum_cols", t)?;
        let data = t.data().chunks_exact(c.max(1)).map(|row| row.iter().copied().sum()).collect();
        let out = Tensor::new(vec![r, 1], data)?;
        self.push("sum_cols", out, Op::SumCols(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts.first().ok_or(AutodiffError::Empty { op: "concat_cols" })?;
        let (rows, _) = require_2d("concat_cols", self.value(first))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = require_2d("concat_cols", self.value(p))?;
            if r != rows {
                return Err(mismatch("concat_cols", self.value(first), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for row in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[row * w..(row + 1) * w]);
            }
        }
        let out = Tensor::new(vec![rows, total], data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let (rows, c) = require_2d("slice_cols", t)?;
        if start > end || end > c {
            return Err(AutodiffError::ShapeMismatch {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![start, end],
            });
        }
        let w = end - start;
        let mut data = Vec::with_capacity(rows * w);
        for row in t.data().chunks_exact(c.max(1)) {
            data.extend_from_slice(&row[start..end]);
        }
        let out = Tensor::new(vec![rows, w], data)?;
        self.push("slice_cols", out, Op::SliceCols(a, start), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Row-wise exclusive prefix sum: `y[r, k] = sum_{j < k} x[r, j]`.
    pub fn exclusive_cumsum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let t = self.value(a);
        let (_, c) = require_2d("exclusive_cumsum", t)?;
        let mut out = Tensor::zeros(t.shape());
        for (src, dst) in t.data().chunks_exact(c.max(1)).zip(out.data_mut().chunks_exact_mut(c.max(1))) {
            let mut acc = R::zero();
            for (x, y) in src.iter().zip(dst.iter_mut()) {
                *y = acc;
                acc = acc + *x;
            }
        }
        self.push("exclusive_cumsum", out, Op::ExclusiveCumsum(a), &[a])
    }

    /// Per-segment weighted sum: `weights` is `[R, K]`, `values` is `[R*K, C]`,
    /// result `[R, C]` with `y[r] = sum_k weights[r, k] * values[r*K + k]`.
    pub fn segment_weighted_sum(&mut self, weights: Var, values: Var) -> Result<Var, AutodiffError> {
        let (tw, tv) = (self.value(weights), self.value(values));
        let (r, k) = require_2d("segment_weighted_sum", tw)?;
        let (n, c) = require_2d("segment_weighted_sum", tv)?;
        if n != r * k {
            return Err(mismatch("segment_weighted_sum", tw, tv));
        }
        let mut out = Tensor::zeros(&[r, c]);
        {
            let (w, v) = (tw.data(), tv.data());
            let o = out.data_mut();
            for ray in 0..r {
                for s in 0..k {
                    let wk = w[ray * k + s];
                    let row = &v[(ray * k + s) * c..(ray * k + s + 1) * c];
                    for ch in 0..c {
                        o[ray * c + ch] = o[ray * c + ch] + wk * row[ch];
                    }
                }
            }
        }
        self.push("segment_weighted_sum", out, Op::SegmentWeightedSum(weights, values), &[weights, values])
    }

    /// Reverse sweep from a single-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients<R>, AutodiffError> {
        let shape = self.value(root).shape().to_vec();
        if self.value(root).len() != 1 {
            return Err(AutodiffError::NonScalarRoot { shape });
        }
        self.backward_seeded(root, Tensor::full(&shape, R::one()))
    }

    /// Reverse sweep seeded with an explicit output cotangent.
    pub fn backward_seeded(&self, root: Var, seed: Tensor<R>) -> Result<Gradients<R>, AutodiffError> {
        let root_val = self.value(root);
        if root_val.shape() != seed.shape() {
            return Err(mismatch("backward", root_val, &seed));
        }
        let mut grads: Vec<Option<Tensor<R>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<R>>], v: Var, contrib: Tensor<R>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn want(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node<R>, g: &Tensor<R>, grads: &mut [Option<Tensor<R>>]) -> Result<(), AutodiffError> {
        let zip = |a: &Tensor<R>, f: &dyn Fn(R, R) -> R| -> Tensor<R> {
            let data = g.data().iter().zip(a.data()).map(|(&gv, &av)| f(gv, av)).collect();
            Tensor::new(g.shape().to_vec(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                if self.want(*a) {
                    let mut da = Tensor::zeros(&[m, k]);
                    R::gemm(m, n, k, g.data(), (n as isize, 1), tb.data(), (1, n as isize), R::zero(), da.data_mut());
                    self.accumulate(grads, *a, da);
                }
                if self.want(*b) {
                    let mut db = Tensor::zeros(&[k, n]);
                    R::gemm(k, m, n, ta.data(), (1, k as isize), g.data(), (n as isize, 1), R::zero(), db.data_mut());
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.want(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::AddRow(a, b) | Op::SubRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.want(*b) {
                    let mut col = column_sums(g);
                    if matches!(node.op, Op::SubRow(..)) {
                        col = col.map(|x| -x);
                    }
                    self.accumulate(grads, *b, col);
                }
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.want(*a) {
                    self.accumulate(grads, *a, zip(tb, &|gv, bv| gv * bv));
                }
                if self.want(*b) {
                    self.accumulate(grads, *b, zip(ta, &|gv, av| gv * av));
                }
            }
            Op::MulRow(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let c = tb.cols();
                if self.want(*a) {
                    let mut data = Vec::with_capacity(g.len());
                    for row in g.data().chunks_exact(c) {
                        data.extend(row.iter().zip(tb.data()).map(|(&gv, &bv)| gv * bv));
                    }
                    self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), data)?);
                }
                if self.want(*b) {
                    let mut db = Tensor::zeros(&[1, c]);
                    for (grow, arow) in g.data().chunks_exact(c).zip(ta.data().chunks_exact(c)) {
                        for ((d, &gv), &av) in db.data_mut().iter_mut().zip(grow).zip(arow) {
                            *d = *d + gv * av;
                        }
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Scale(a, s) => {
                let s = *s;
                self.accumulate(grads, *a, g.map(|x| x * s));
            }
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Neg(a) => self.accumulate(grads, *a, g.map(|x| -x)),
            Op::Exp(a) => self.accumulate(grads, *a, zip(&node.value, &|gv, yv| gv * yv)),
            Op::Sin(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip(x, &|gv, xv| gv * xv.cos()));
            }
            Op::Cos(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip(x, &|gv, xv| -gv * xv.sin()));
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip(x, &|gv, xv| if xv > R::zero() { gv } else { R::zero() }));
            }
            Op::Sigmoid(a) => {
                let y = &node.value;
                self.accumulate(grads, *a, zip(y, &|gv, yv| gv * yv * (R::one() - yv)));
            }
            Op::Softplus(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, zip(x, &|gv, xv| gv * sigmoid(xv)));
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, g.data()[0]));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let v = g.data()[0] / R::of(t.len() as f64);
                self.accumulate(grads, *a, Tensor::full(t.shape(), v));
            }
            Op::SumCols(a) => {
                let t = self.value(*a);
                let c = t.cols();
                let data = g.data().iter().flat_map(|&gv| std::iter::repeat_n(gv, c)).collect();
                self.accumulate(grads, *a, Tensor::new(t.shape().to_vec(), data)?);
            }
            Op::ConcatCols(parts) => {
                let total = g.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.want(p) {
                        let mut data = Vec::with_capacity(g.rows() * w);
                        for row in g.data().chunks_exact(total) {
                            data.extend_from_slice(&row[offset..offset + w]);
                        }
                        self.accumulate(grads, p, Tensor::new(vec![g.rows(), w], data)?);
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let t = self.value(*a);
                let (c, w) = (t.cols(), g.cols());
                let mut da = Tensor::zeros(t.shape());
                for (dst, src) in da.data_mut().chunks_exact_mut(c).zip(g.data().chunks_exact(w.max(1))) {
                    dst[*start..*start + w].copy_from_slice(src);
                }
                self.accumulate(grads, *a, da);
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, g.clone().reshaped(&shape)?);
            }
            Op::ExclusiveCumsum(a) => {
                let c = g.cols();
                let mut da = Tensor::zeros(g.shape());
                for (src, dst) in g.data().chunks_exact(c).zip(da.data_mut().chunks_exact_mut(c)) {
                    let mut acc = R::zero();
                    for j in (0..c).rev() {
                        dst[j] = acc;
                        acc = acc + src[j];
                    }
                }
                self.accumulate(grads, *a, da);
            }
            Op::SegmentWeightedSum(w, v) => {
                let (tw, tv) = (self.value(*w), self.value(*v));
                let (r, k) = (tw.rows(), tw.cols());
                let c = tv.cols();
                if self.want(*w) {
                    let mut dw = Tensor::zeros(tw.shape());
                    for ray in 0..r {
                        let grow = &g.data()[ray * c..(ray + 1) * c];
                        for s in 0..k {
                            let vrow = &tv.data()[(ray * k + s) * c..(ray * k + s + 1) * c];
                            dw.data_mut()[ray * k + s] = grow.iter().zip(vrow).map(|(&a, &b)| a * b).sum();
                        }
                    }
                    self.accumulate(grads, *w, dw);
                }
                if self.want(*v) {
                    let mut dv = Tensor::zeros(tv.shape());
                    for ray in 0..r {
                        let grow = &g.data()[ray * c..(ray + 1) * c];
                        for s in 0..k {
                            let wk = tw.data()[ray * k + s];
                            let dst = &mut dv.data_mut()[(ray * k + s) * c..(ray * k + s + 1) * c];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d = gv * wk;
                            }
                        }
                    }
                    self.accumulate(grads, *v, dv);
                }
            }
        }
        Ok(())
    }
}

fn column_sums<R: Real>(g: &Tensor<R>) -> Tensor<R> {
    let c = g.cols();
    let mut out = Tensor::zeros(&[1, c]);
    for row in g.data().chunks_exact(c) {
        for (o, &v) in out.data_mut().iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

#[inline]
pub fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

/// `log(1 + e^x)` as `max(x, 0) + log1p(e^{-|x|})`.
#[inline]
pub fn softplus<R: Real>(x: R) -> R {
    x.max(R::zero()) + (-x.abs()).exp().ln_1p()
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients<R> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    pub fn get(&self, v: Var) -> Option<&Tensor<R>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<R>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Gradient for `v`, or zeros of `shape` when nothing reached it.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor<R> {
        self.take(v).unwrap_or_else(|| Tensor::zeros(shape))
    }
}
