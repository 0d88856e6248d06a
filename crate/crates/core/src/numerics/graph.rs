//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in creation order, so the node list is
//! already topologically sorted: each input id is smaller than its consumer's
//! id. [`Graph::backward`] walks the tape once in reverse.

use super::tensor::{matmul_raw, transpose_raw, Tensor};
use super::{sigmoid, NumericsError};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    ScaleBy(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    LogSigmoid(Var),
    Recip(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Transpose(Var),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    Pick(Var, usize),
    SelectRows(Var, Vec<usize>),
    MaxAll(Var, usize),
    SoftBox { input: Var, width: usize, height: usize, temp: f64 },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Operation tape. Single-threaded; build one per training step.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    multiplies: u64,
}

/// Gradients of a scalar loss with respect to every node of a graph.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zero when the node does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::Shape { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Per-pixel soft box indicator and its partial derivatives w.r.t.
/// `(x1, y1, x2, y2)`. Pixel `(i, j)` has center `((i+0.5)/w, (j+0.5)/h)`;
/// output is row-major with `j` outer.
pub fn soft_box_raw(
    b: [f64; 4],
    width: usize,
    height: usize,
    temp: f64,
) -> (Vec<f64>, Vec<[f64; 4]>) {
    let [x1, y1, x2, y2] = b;
    let mut vals = Vec::with_capacity(width * height);
    let mut grads = Vec::with_capacity(width * height);
    let xs: Vec<(f64, f64)> = (0..width)
        .map(|i| {
            let x = (i as f64 + 0.5) / width as f64;
            (sigmoid((x - x1) / temp), sigmoid((x2 - x) / temp))
        })
        .collect();
    for j in 0..height {
        let y = (j as f64 + 0.5) / height as f64;
        let s3 = sigmoid((y - y1) / temp);
        let s4 = sigmoid((y2 - y) / temp);
        for &(s1, s2) in &xs {
            let v = s1 * s2 * s3 * s4;
            vals.push(v);
            grads.push([
                -v * (1.0 - s1) / temp,
                -v * (1.0 - s3) / temp,
                v * (1.0 - s2) / temp,
                v * (1.0 - s4) / temp,
            ]);
        }
    }
    (vals, grads)
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

    /// Scalar multiplies performed by `matmul` so far.
    pub fn multiply_count(&self) -> u64 {
        self.multiplies
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, op: Op, x: Var, f: impl Fn(f64) -> f64) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.nodes[x.0].requires_grad;
        self.push(op, value, rg)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.cols() != tb.rows() {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        self.multiplies += (m * k * n) as u64;
        let out = Tensor::matrix(m, n, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, NumericsError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(op, out, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `a[m×n] + bias[1×n]` on every row.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[bias.0].value);
        if tb.rows() != 1 || ta.cols() != tb.cols() || ta.shape().len() != 2 {
            return Err(shape_err("add_row_bias", ta, tb));
        }
        let n = ta.cols();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + tb.data()[i % n])
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Op::AddRowBias(a, bias), out, rg))
    }

    /// Every entry of `a` times the scalar node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, NumericsError> {
        let (ta, ts) = (&self.nodes[a.0].value, &self.nodes[s.0].value);
        if !ts.is_scalar() {
            return Err(shape_err("scale_by", ta, ts));
        }
        let k = ts.item();
        let out = ta.map(|x| x * k);
        let rg = self.rg(&[a, s]);
        Ok(self.push(Op::ScaleBy(a, s), out, rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(Op::Scale(a, c), a, |x| x * c)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        self.unary(Op::AddConst(a), a, |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::Sigmoid(a), a, sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(Op::Tanh(a), a, f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Op::Exp(a), a, f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(Op::Log(a), a, f64::ln)
    }

    /// Numerically stable `ln σ(x)`.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(Op::LogSigmoid(a), a, log_sigmoid)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        self.unary(Op::Recip(a), a, |x| 1.0 / x)
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let out = softmax_rows_raw(t);
        let rg = self.nodes[a.0].requires_grad;
        self.push(Op::SoftmaxRows(a), out, rg)
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let (m, n) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = t.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().fold(0.0, |s, &x| s + (x - mx).exp()).ln();
            data.extend(row.iter().map(|&x| x - lse));
        }
        let out = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.nodes[a.0].requires_grad;
        self.push(Op::LogSoftmaxRows(a), out, rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let (m, n) = (t.rows(), t.cols());
        let out = Tensor::matrix(n, m, transpose_raw(t.data(), m, n)).expect("transpose");
        let rg = self.nodes[a.0].requires_grad;
        self.push(Op::Transpose(a), out, rg)
    }

    /// Vertical concatenation of 2-d tensors with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = parts
            .first()
            .ok_or_else(|| NumericsError::Construction("concat of zero tensors".into()))?;
        let cols = self.nodes[first.0].value.cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = &self.nodes[p.0].value;
            if t.cols() != cols {
                return Err(shape_err("concat_rows", &self.nodes[first.0].value, t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let out = Tensor::matrix(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), out, rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let out = self.nodes[a.0].value.reshape(shape)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::Reshape(a), out, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.sum();
        let rg = self.nodes[a.0].requires_grad;
        self.push(Op::SumAll(a), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s = t.sum() / t.len() as f64;
        let rg = self.nodes[a.0].requires_grad;
        self.push(Op::MeanAll(a), Tensor::scalar(s), rg)
    }

    /// Column means: `[m×n] -> [1×n]`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let (m, n) = (t.rows(), t.cols());
        let mut out = vec![0.0; n];
        for r in 0..m {
            for (o, x) in out.iter_mut().zip(t.row(r)) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|o| *o /= m as f64);
        let rg = self.nodes[a.0].requires_grad;
        self.push(Op::MeanRows(a), Tensor::row_vector(out), rg)
    }

    /// Scalar at flat index `i`.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var, NumericsError> {
        let t = &self.nodes[a.0].value;
        if i >= t.len() {
            return Err(NumericsError::Index { index: i, len: t.len() });
        }
        let v = t.data()[i];
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::Pick(a, i), Tensor::scalar(v), rg))
    }

    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var, NumericsError> {
        let t = &self.nodes[a.0].value;
        let n = t.cols();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= t.rows() {
                return Err(NumericsError::Index { index: i, len: t.rows() });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(idx.len(), n, data)?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(Op::SelectRows(a, idx.to_vec()), out, rg))
    }

    /// Maximum entry; the gradient flows to the first maximizer.
    pub fn max(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let (arg, v) = t
            .data()
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) });
        let rg = self.nodes[a.0].requires_grad;
        self.push(Op::MaxAll(a, arg), Tensor::scalar(v), rg)
    }

    /// Soft box raster of a `1×4` box `(x1, y1, x2, y2)` as an `(h·w)×1` column.
    pub fn soft_box(
        &mut self,
        b: Var,
        width: usize,
        height: usize,
        temp: f64,
    ) -> Result<Var, NumericsError> {
        let t = &self.nodes[b.0].value;
        if t.len() != 4 {
            return Err(NumericsError::Shape { op: "soft_box", lhs: t.shape().to_vec(), rhs: vec![1, 4] });
        }
        let d = t.data();
        let (vals, _) = soft_box_raw([d[0], d[1], d[2], d[3]], width, height, temp);
        let out = Tensor::column(vals);
        let rg = self.nodes[b.0].requires_grad;
        Ok(self.push(Op::SoftBox { input: b, width, height, temp }, out, rg))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let lt = &self.nodes[loss.0].value;
        if !lt.is_scalar() {
            return Err(NumericsError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lt.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, op: &Op, y: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        let like = |x: &Tensor, data: Vec<f64>| Tensor::new(x.shape().to_vec(), data).expect("grad shape");
        let elementwise = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..g.len()).map(f).collect() };

        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let bt = transpose_raw(tb.data(), k, n);
                let ga = matmul_raw(g.data(), &bt, m, n, k);
                let at = transpose_raw(ta.data(), m, k);
                let gb = matmul_raw(&at, g.data(), k, m, n);
                acc(*a, like(ta, ga));
                acc(*b, like(tb, gb));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, like(ta, elementwise(&|i| g.data()[i] * tb.data()[i])));
                acc(*b, like(tb, elementwise(&|i| g.data()[i] * ta.data()[i])));
            }
            Op::AddRowBias(a, bias) => {
                acc(*a, g.clone());
                let n = g.cols();
                let mut gb = vec![0.0; n];
                for r in 0..g.rows() {
                    for (o, x) in gb.iter_mut().zip(g.row(r)) {
                        *o += x;
                    }
                }
                acc(*bias, like(val(*bias), gb));
            }
            Op::ScaleBy(a, s) => {
                let (ta, ts) = (val(*a), val(*s));
                let k = ts.item();
                acc(*a, g.map(|x| x * k));
                let gs = g.data().iter().zip(ta.data()).fold(0.0, |s, (x, y)| s + x * y);
                acc(*s, like(ts, vec![gs]));
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::Sigmoid(a) => {
                acc(*a, like(y, elementwise(&|i| g.data()[i] * y.data()[i] * (1.0 - y.data()[i]))))
            }
            Op::Tanh(a) => {
                acc(*a, like(y, elementwise(&|i| g.data()[i] * (1.0 - y.data()[i] * y.data()[i]))))
            }
            Op::Exp(a) => acc(*a, like(y, elementwise(&|i| g.data()[i] * y.data()[i]))),
            Op::Log(a) => {
                let x = val(*a);
                acc(*a, like(x, elementwise(&|i| g.data()[i] / x.data()[i])))
            }
            Op::LogSigmoid(a) => {
                let x = val(*a);
                acc(*a, like(x, elementwise(&|i| g.data()[i] * sigmoid(-x.data()[i]))))
            }
            Op::Recip(a) => {
                acc(*a, like(y, elementwise(&|i| -g.data()[i] * y.data()[i] * y.data()[i])))
            }
            Op::SoftmaxRows(a) => {
                let (m, n) = (y.rows(), y.cols());
                let mut out = vec![0.0; m * n];
                for r in 0..m {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot = yr.iter().zip(gr).fold(0.0, |s, (p, q)| s + p * q);
                    for j in 0..n {
                        out[r * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                acc(*a, like(y, out));
            }
            Op::LogSoftmaxRows(a) => {
                let (m, n) = (y.rows(), y.cols());
                let mut out = vec![0.0; m * n];
                for r in 0..m {
                    let (yr, gr) = (y.row(r), g.row(r));
                    let gsum = gr.iter().fold(0.0, |s, x| s + x);
                    for j in 0..n {
                        out[r * n + j] = gr[j] - yr[j].exp() * gsum;
                    }
                }
                acc(*a, like(y, out));
            }
            Op::Transpose(a) => {
                let x = val(*a);
                acc(*a, like(x, transpose_raw(g.data(), g.rows(), g.cols())));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let t = val(*p);
                    let len = t.len();
                    acc(*p, like(t, g.data()[offset..offset + len].to_vec()));
                    offset += len;
                }
            }
            Op::Reshape(a) => {
                let x = val(*a);
                acc(*a, like(x, g.data().to_vec()));
            }
            Op::SumAll(a) => {
                let x = val(*a);
                acc(*a, Tensor::full(x.shape(), g.item()));
            }
            Op::MeanAll(a) => {
                let x = val(*a);
                acc(*a, Tensor::full(x.shape(), g.item() / x.len() as f64));
            }
            Op::MeanRows(a) => {
                let x = val(*a);
                let m = x.rows() as f64;
                let n = x.cols();
                acc(*a, like(x, (0..x.len()).map(|i| g.data()[i % n] / m).collect()));
            }
            Op::Pick(a, i) => {
                let x = val(*a);
                let mut t = Tensor::zeros(x.shape());
                t.data_mut()[*i] = g.item();
                acc(*a, t);
            }
            Op::SelectRows(a, idx) => {
                let x = val(*a);
                let n = x.cols();
                let mut t = Tensor::zeros(x.shape());
                for (k, &i) in idx.iter().enumerate() {
                    for j in 0..n {
                        t.data_mut()[i * n + j] += g.data()[k * n + j];
                    }
                }
                acc(*a, t);
            }
            Op::MaxAll(a, arg) => {
                let x = val(*a);
                let mut t = Tensor::zeros(x.shape());
                t.data_mut()[*arg] = g.item();
                acc(*a, t);
            }
            Op::SoftBox { input, width, height, temp } => {
                let x = val(*input);
                let d = x.data();
                let (_, pix) = soft_box_raw([d[0], d[1], d[2], d[3]], *width, *height, *temp);
                let mut gb = [0.0; 4];
                for (gp, dp) in g.data().iter().zip(&pix) {
                    for c in 0..4 {
                        gb[c] += gp * dp[c];
                    }
                }
                acc(*input, like(x, gb.to_vec()));
            }
        }
    }
}

/// Row-wise stabilized softmax on a plain tensor.
pub fn softmax_rows_raw(t: &Tensor) -> Tensor {
    let (m, n) = (t.rows(), t.cols());
    let mut data = Vec::with_capacity(m * n);
    for r in 0..m {
        let row = t.row(r);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - mx).exp()).collect();
        let z = exps.iter().fold(0.0, |s, x| s + x);
        data.extend(exps.iter().map(|e| e / z));
    }
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}
