use std::borrow::Cow;

use super::kernels::{self, sigmoid};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    TimeMix { x: Var, w: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, F),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Tensor<F>, rstd: Vec<F> },
    Silu(Var),
    Exp(Var),
    ConcatTime(Vec<Var>),
    ConcatFeatures(Vec<Var>),
    BroadcastRows(Var),
    MeanRows(Var),
    DiffTime(Var),
    Sum(Var),
    SumAbs(Var),
    SumSq(Var),
}

struct Node<'a, F: Real> {
    value: Cow<'a, Tensor<F>>,
    op: Op<F>,
    needs_grad: bool,
}

/// Records operations in execution order; [`Tape::backward`] replays them in
/// reverse. Node ids are assigned monotonically, so the recording order is a
/// topological order of the graph.
pub struct Tape<'a, F: Real = f32> {
    nodes: Vec<Node<'a, F>>,
}

impl<F: Real> Default for Tape<'_, F> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err<T>(msg: String) -> Result<T> {
    Err(Error::Shape(msg))
}

impl<'a, F: Real> Tape<'a, F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        self.nodes.push(Node { value: Cow::Owned(value), op, needs_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Cow<'a, Tensor<F>>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf; receives a gradient in [`Tape::backward`].
    pub fn param(&mut self, t: Tensor<F>) -> Var {
        self.leaf(Cow::Owned(t), true)
    }

    /// Trainable leaf borrowed from the caller.
    pub fn param_ref(&mut self, t: &'a Tensor<F>) -> Var {
        self.leaf(Cow::Borrowed(t), true)
    }

    /// Constant leaf.
    pub fn constant(&mut self, t: Tensor<F>) -> Var {
        self.leaf(Cow::Owned(t), false)
    }

    /// Constant leaf borrowed from the caller.
    pub fn constant_ref(&mut self, t: &'a Tensor<F>) -> Var {
        self.leaf(Cow::Borrowed(t), false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return shape_err(format!("matmul {:?} · {:?}", av.shape(), bv.shape()));
        }
        let out = kernels::matmul(av, bv);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng, "matmul")
    }

    /// Linear map along the time axis: row `i` of the result is
    /// `Σ_j w[i, j] · x[j, :]`.
    pub fn time_mix(&mut self, x: Var, w: Var) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.cols() != xv.rows() {
            return shape_err(format!("time_mix weight {:?} on input {:?}", wv.shape(), xv.shape()));
        }
        let out = kernels::matmul(wv, xv);
        let ng = self.needs(x) || self.needs(w);
        self.push(out, Op::TimeMix { x, w }, ng, "time_mix")
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return shape_err(format!("{what} {sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(F, F) -> F) -> Tensor<F> {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(av.rows(), av.cols(), data).expect("shapes checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng, "mul")
    }

    /// Adds a `1×D` bias to every row of a `T×D` input.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        if bv.rows() != 1 || bv.cols() != xv.cols() {
            return shape_err(format!("row bias {:?} on {:?}", bv.shape(), xv.shape()));
        }
        let mut out = xv.clone();
        let bias = bv.data().to_vec();
        for i in 0..out.rows() {
            for (o, &bb) in out.row_mut(i).iter_mut().zip(&bias) {
                *o = *o + bb;
            }
        }
        let ng = self.needs(x) || self.needs(b);
        self.push(out, Op::AddRowBias(x, b), ng, "add_row_bias")
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, s), ng, "scale")
    }

    /// Per-row standardization over the feature axis followed by an affine
    /// gain/bias (`1×D` each).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: F) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        let d = xv.cols();
        if gv.shape() != [1, d] || bv.shape() != [1, d] {
            return shape_err(format!("layer_norm params {:?}/{:?} for width {d}", gv.shape(), bv.shape()));
        }
        if d < 2 {
            return shape_err(format!("layer_norm needs width >= 2, got {d}"));
        }
        let n = F::lit(d as f64);
        let mut xhat = Tensor::zeros(xv.rows(), d);
        let mut out = Tensor::zeros(xv.rows(), d);
        let mut rstd = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let row = xv.row(i);
            let mean = row.iter().fold(F::zero(), |a, &v| a + v) / n;
            let var = row.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
            let r = F::one() / (var + eps).sqrt();
            rstd.push(r);
            for j in 0..d {
                let h = (row[j] - mean) * r;
                xhat.set(i, j, h);
                out.set(i, j, h * gv.data()[j] + bv.data()[j]);
            }
        }
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(out, Op::LayerNorm { x, gain, bias, xhat, rstd }, ng, "layer_norm")
    }

    pub fn silu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v * sigmoid(v));
        let ng = self.needs(x);
        self.push(out, Op::Silu(x), ng, "silu")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.exp());
        let ng = self.needs(x);
        self.push(out, Op::Exp(x), ng, "exp")
    }

    /// Stacks inputs along the time (row) axis in argument order.
    pub fn concat_time(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_time of nothing".into());
        };
        let d = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != d {
                return shape_err(format!("concat_time width {} vs {d}", v.cols()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = Tensor::from_vec(rows, d, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatTime(parts.to_vec()), ng, "concat_time")
    }

    /// Joins inputs along the feature (column) axis in argument order.
    pub fn concat_features(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return shape_err("concat_features of nothing".into());
        };
        let t = self.value(first).rows();
        if let Some(bad) = parts.iter().find(|&&p| self.value(p).rows() != t) {
            return shape_err(format!("concat_features rows {} vs {t}", self.value(*bad).rows()));
        }
        let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(t, width);
        for i in 0..t {
            let mut off = 0;
            for &p in parts {
                let r = self.value(p).row(i);
                out.row_mut(i)[off..off + r.len()].copy_from_slice(r);
                off += r.len();
            }
        }
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push(out, Op::ConcatFeatures(parts.to_vec()), ng, "concat_features")
    }

    /// Repeats a `1×D` row `n` times.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() != 1 {
            return shape_err(format!("broadcast_rows needs one row, got {:?}", xv.shape()));
        }
        let out = Tensor::from_fn(n, xv.cols(), |_, j| xv.data()[j]);
        let ng = self.needs(x);
        self.push(out, Op::BroadcastRows(x), ng, "broadcast_rows")
    }

    /// Mean over rows, giving a `1×D` row.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        if self.value(x).rows() == 0 {
            return shape_err("mean_rows of empty tensor".into());
        }
        let out = kernels::mean_rows(self.value(x));
        let ng = self.needs(x);
        self.push(out, Op::MeanRows(x), ng, "mean_rows")
    }

    /// Forward differences along time: row `t` is `x[t+1] − x[t]`.
    pub fn diff_time(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rows() < 2 {
            return shape_err(format!("diff_time needs >= 2 rows, got {}", xv.rows()));
        }
        let out = Tensor::from_fn(xv.rows() - 1, xv.cols(), |i, j| xv.get(i + 1, j) - xv.get(i, j));
        let ng = self.needs(x);
        self.push(out, Op::DiffTime(x), ng, "diff_time")
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(x);
        self.push(out, Op::Sum(x), ng, "sum")
    }

    pub fn sum_abs(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().fold(F::zero(), |a, &v| a + v.abs());
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumAbs(x), ng, "sum_abs")
    }

    pub fn sum_sq(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum_sq();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::SumSq(x), ng, "sum_sq")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum(x)?;
        self.scale(s, F::one() / F::lit(n as f64))
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every
    /// trainable leaf, starting from zero.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let mut grads = Gradients { grads: Vec::new() };
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but adds into existing leaf gradients.
    pub fn backward_into(&self, loss: Var, acc: &mut Gradients<F>) -> Result<()> {
        if self.value(loss).shape() != [1, 1] {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut g: Vec<Option<Tensor<F>>> = Vec::new();
        g.resize_with(loss.0 + 1, || None);
        g[loss.0] = Some(Tensor::scalar(F::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(dy) = g[id].take() else { continue };
            if let Op::Leaf = node.op {
                g[id] = Some(dy);
                continue;
            }
            self.propagate(node, &dy, &mut g);
        }

        if acc.grads.len() < self.nodes.len() {
            acc.grads.resize_with(self.nodes.len(), || None);
        }
        for (id, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if !matches!(node.op, Op::Leaf) || !node.needs_grad {
                continue;
            }
            let contrib = g[id].take().unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
            match &mut acc.grads[id] {
                Some(existing) => existing.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        }
        Ok(())
    }

    fn propagate(&self, node: &Node<'a, F>, dy: &Tensor<F>, g: &mut [Option<Tensor<F>>]) {
        let mut send = |v: Var, t: Tensor<F>| {
            if self.nodes[v.0].needs_grad {
                match &mut g[v.0] {
                    Some(e) => e.add_assign(&t),
                    slot => *slot = Some(t),
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    send(*a, kernels::matmul_nt(dy, bv));
                }
                if self.needs(*b) {
                    send(*b, kernels::matmul_tn(av, dy));
                }
            }
            Op::TimeMix { x, w } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    send(*x, kernels::matmul_tn(wv, dy));
                }
                if self.needs(*w) {
                    send(*w, kernels::matmul_nt(dy, xv));
                }
            }
            Op::Add(a, b) => {
                send(*a, dy.clone());
                send(*b, dy.clone());
            }
            Op::Sub(a, b) => {
                send(*a, dy.clone());
                send(*b, dy.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                send(*a, zip(dy, bv, |d, y| d * y));
                send(*b, zip(dy, av, |d, x| d * x));
            }
            Op::AddRowBias(x, b) => {
                send(*x, dy.clone());
                let mut db = Tensor::zeros(1, dy.cols());
                for i in 0..dy.rows() {
                    for (o, &d) in db.data_mut().iter_mut().zip(dy.row(i)) {
                        *o = *o + d;
                    }
                }
                send(*b, db);
            }
            Op::Scale(x, s) => send(*x, dy.map(|v| v * *s)),
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let gv = self.value(*gain);
                let d = dy.cols();
                let n = F::lit(d as f64);
                if self.needs(*x) {
                    let mut dx = Tensor::zeros(dy.rows(), d);
                    for i in 0..dy.rows() {
                        let (dyr, hr) = (dy.row(i), xhat.row(i));
                        let mut sum_dh = F::zero();
                        let mut sum_dh_h = F::zero();
                        for j in 0..d {
                            let dh = dyr[j] * gv.data()[j];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * hr[j];
                        }
                        for j in 0..d {
                            let dh = dyr[j] * gv.data()[j];
                            dx.set(i, j, rstd[i] / n * (n * dh - sum_dh - hr[j] * sum_dh_h));
                        }
                    }
                    send(*x, dx);
                }
                let mut dg = Tensor::zeros(1, d);
                let mut db = Tensor::zeros(1, d);
                for i in 0..dy.rows() {
                    for j in 0..d {
                        dg.data_mut()[j] = dg.data()[j] + dy.get(i, j) * xhat.get(i, j);
                        db.data_mut()[j] = db.data()[j] + dy.get(i, j);
                    }
                }
                send(*gain, dg);
                send(*bias, db);
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                send(
                    *x,
                    zip(dy, xv, |d, v| {
                        let s = sigmoid(v);
                        d * s * (F::one() + v * (F::one() - s))
                    }),
                );
            }
            Op::Exp(x) => send(*x, zip(dy, &node.value, |d, y| d * y)),
            Op::ConcatTime(parts) => {
                let mut start = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    send(p, dy.slice_rows(start, start + r).expect("rows recorded"));
                    start += r;
                }
            }
            Op::ConcatFeatures(parts) => {
                let mut off = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    send(p, Tensor::from_fn(dy.rows(), c, |i, j| dy.get(i, off + j)));
                    off += c;
                }
            }
            Op::BroadcastRows(x) => {
                let mut dx = Tensor::zeros(1, dy.cols());
                for i in 0..dy.rows() {
                    for (o, &d) in dx.data_mut().iter_mut().zip(dy.row(i)) {
                        *o = *o + d;
                    }
                }
                send(*x, dx);
            }
            Op::MeanRows(x) => {
                let xv = self.value(*x);
                let n = F::lit(xv.rows() as f64);
                send(*x, Tensor::from_fn(xv.rows(), xv.cols(), |_, j| dy.data()[j] / n));
            }
            Op::DiffTime(x) => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.rows(), xv.cols());
                for t in 0..dy.rows() {
                    for j in 0..dy.cols() {
                        let d = dy.get(t, j);
                        dx.set(t + 1, j, dx.get(t + 1, j) + d);
                        dx.set(t, j, dx.get(t, j) - d);
                    }
                }
                send(*x, dx);
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                send(*x, Tensor::filled(xv.rows(), xv.cols(), dy.item()));
            }
            Op::SumAbs(x) => {
                let d = dy.item();
                send(*x, self.value(*x).map(|v| d * sign(v)));
            }
            Op::SumSq(x) => {
                let d = dy.item();
                let two = F::lit(2.0);
                send(*x, self.value(*x).map(|v| two * d * v));
            }
        }
    }
}

fn sign<F: Real>(v: F) -> F {
    if v > F::zero() {
        F::one()
    } else if v < F::zero() {
        -F::one()
    } else {
        F::zero()
    }
}

fn zip<F: Real>(a: &Tensor<F>, b: &Tensor<F>, f: impl Fn(F, F) -> F) -> Tensor<F> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Leaf gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Default)]
pub struct Gradients<F: Real = f32> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
