use rand::Rng;

use crate::{Result, Tensor, TensorError};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    Dropout(Var, Vec<f64>),
    Concat(Vec<Var>, usize),
    Gather(Var, Vec<usize>),
    Transpose(Var),
    Sum(Var),
    BceWithLogits(Var, Vec<f64>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Reverse-mode tape. Nodes are appended in execution order, so node index
/// order is a topological order of the computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, or zeros shaped like `like` when `v` did not
    /// influence the output.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const LAYER_NORM_EPS: f64 = 1e-5;

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

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool, name: &'static str) -> Result<Var> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-trainable leaf (inputs, masks, frozen weights).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::MatMul(a, b), ng, "matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("add", ta, tb));
        }
        let mut out = ta.clone();
        out.add_assign(tb);
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Add(a, b), ng, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("sub", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Sub(a, b), ng, "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch("mul", ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        self.push(out, Op::Mul(a, b), ng, "mul")
    }

    /// `x (m x n) + bias (1 x n)`, bias broadcast over rows.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let (m, n) = tx.dims2("add_row")?;
        if tb.shape() != [1, n] {
            return Err(mismatch("add_row", tx, tb));
        }
        let mut data = tx.data().to_vec();
        for i in 0..m {
            for (o, b) in data[i * n..(i + 1) * n].iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        let ng = self.needs(x) || self.needs(bias);
        self.push(out, Op::AddRow(x, bias), ng, "add_row")
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * k);
        let ng = self.needs(x);
        self.push(out, Op::Scale(x, k), ng, "scale")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::tanh);
        let ng = self.needs(x);
        self.push(out, Op::Tanh(x), ng, "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        let ng = self.needs(x);
        self.push(out, Op::Relu(x), ng, "relu")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        let ng = self.needs(x);
        self.push(out, Op::Sigmoid(x), ng, "sigmoid")
    }

    /// Softmax of a rank-2 tensor along `axis` (1 = within each row,
    /// 0 = within each column). Max-subtracted.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2("softmax")?;
        if axis > 1 {
            return Err(TensorError::Invalid(format!("softmax axis {axis} on rank-2 tensor")));
        }
        let mut out = tx.data().to_vec();
        let (outer, inner, stride_outer, stride_inner) = if axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
        for o in 0..outer {
            let base = o * stride_outer;
            let mut max = f64::NEG_INFINITY;
            for k in 0..inner {
                max = max.max(out[base + k * stride_inner]);
            }
            let mut sum = 0.0;
            for k in 0..inner {
                let e = (out[base + k * stride_inner] - max).exp();
                out[base + k * stride_inner] = e;
                sum += e;
            }
            for k in 0..inner {
                out[base + k * stride_inner] /= sum;
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        let ng = self.needs(x);
        self.push(out, Op::Softmax(x, axis), ng, "softmax")
    }

    /// Row-wise layer normalization with `1 x n` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = tx.dims2("layer_norm")?;
        let (tg, tb) = (self.value(gain), self.value(bias));
        if tg.shape() != [1, n] || tb.shape() != [1, n] {
            return Err(mismatch("layer_norm", tx, tg));
        }
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = Vec::with_capacity(m);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = tx.row_slice(i);
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(is);
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[i * n + j] = h;
                out[i * n + j] = h * tg.data()[j] + tb.data()[j];
            }
        }
        let out = Tensor::new(vec![m, n], out)?;
        let xhat = Tensor::new(vec![m, n], xhat)?;
        let ng = self.needs(x) || self.needs(gain) || self.needs(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
            "layer_norm",
        )
    }

    /// Inverted dropout: at train time each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`. Identity when
    /// `train` is false or `p == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R, train: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid(format!("dropout probability {p} outside [0,1)")));
        }
        if !train || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let tx = self.value(x);
        let mask: Vec<f64> = (0..tx.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = tx.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(tx.shape().to_vec(), data)?;
        let ng = self.needs(x);
        self.push(out, Op::Dropout(x, mask), ng, "dropout")
    }

    /// Concatenates rank-2 tensors along `axis` (0 = stack rows, 1 = append
    /// columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let (m0, n0) = self.value(*first).dims2("concat")?;
        let out = match axis {
            0 => {
                let mut data = Vec::new();
                let mut rows = 0;
                for &v in inputs {
                    let t = self.value(v);
                    let (m, n) = t.dims2("concat")?;
                    if n != n0 {
                        return Err(mismatch("concat", self.value(*first), t));
                    }
                    rows += m;
                    data.extend_from_slice(t.data());
                }
                Tensor::new(vec![rows, n0], data)?
            }
            1 => {
                let mut cols = 0;
                for &v in inputs {
                    let t = self.value(v);
                    let (m, n) = t.dims2("concat")?;
                    if m != m0 {
                        return Err(mismatch("concat", self.value(*first), t));
                    }
                    cols += n;
                }
                let mut data = Vec::with_capacity(m0 * cols);
                for i in 0..m0 {
                    for &v in inputs {
                        data.extend_from_slice(self.value(v).row_slice(i));
                    }
                }
                Tensor::new(vec![m0, cols], data)?
            }
            _ => return Err(TensorError::Invalid(format!("concat axis {axis}"))),
        };
        let ng = inputs.iter().any(|&v| self.needs(v));
        self.push(out, Op::Concat(inputs.to_vec(), axis), ng, "concat")
    }

    /// Selects rows of `table` (embedding lookup). Indices may repeat.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (m, n) = t.dims2("gather_rows")?;
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    len: m,
                });
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(vec![indices.len(), n], data)?;
        let ng = self.needs(table);
        self.push(out, Op::Gather(table, indices.to_vec()), ng, "gather_rows")
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).transpose()?;
        let ng = self.needs(x);
        self.push(out, Op::Transpose(x), ng, "transpose")
    }

    /// Sum of all elements, as a `1 x 1` tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).data().iter().sum();
        let ng = self.needs(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng, "sum")
    }

    /// Mean binary cross-entropy between `sigmoid(logits)` and `targets`,
    /// computed in the numerically stable logit form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64]) -> Result<Var> {
        let tz = self.value(logits);
        if tz.len() != targets.len() || targets.is_empty() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                lhs: tz.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let n = targets.len() as f64;
        let loss = tz
            .data()
            .iter()
            .zip(targets)
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        let ng = self.needs(logits);
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits(logits, targets.to_vec()),
            ng,
            "bce_with_logits",
        )
    }

    /// Gradients of the one-element tensor `loss` with respect to every
    /// node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Invalid(format!(
                "backward from non-scalar of shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    let da = g.matmul(&self.value(*b).transpose()?)?;
                    self.accumulate(grads, *a, da);
                }
                if self.needs(*b) {
                    let db = self.value(*a).transpose()?.matmul(g)?;
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::new(ta.shape().to_vec(), d)?);
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::new(tb.shape().to_vec(), d)?);
                }
            }
            Op::AddRow(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                if self.needs(*bias) {
                    let (m, n) = g.dims2("add_row")?;
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for (d, v) in db.iter_mut().zip(g.row_slice(i)) {
                            *d += v;
                        }
                    }
                    self.accumulate(grads, *bias, Tensor::new(vec![1, n], db)?);
                }
            }
            Op::Scale(x, k) => self.accumulate(grads, *x, g.map(|v| v * k)),
            Op::Tanh(x) => {
                let d = g.data().iter().zip(y.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), d)?);
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let d = g
                    .data()
                    .iter()
                    .zip(tx.data())
                    .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), d)?);
            }
            Op::Sigmoid(x) => {
                let d = g.data().iter().zip(y.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), d)?);
            }
            Op::Softmax(x, axis) => {
                let (m, n) = y.dims2("softmax")?;
                let (outer, inner, so, si) = if *axis == 1 { (m, n, n, 1) } else { (n, m, 1, n) };
                let mut d = vec![0.0; m * n];
                let (yd, gd) = (y.data(), g.data());
                for o in 0..outer {
                    let base = o * so;
                    let dot: f64 = (0..inner).map(|k| yd[base + k * si] * gd[base + k * si]).sum();
                    for k in 0..inner {
                        let p = base + k * si;
                        d[p] = yd[p] * (gd[p] - dot);
                    }
                }
                self.accumulate(grads, *x, Tensor::new(vec![m, n], d)?);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let (m, n) = xhat.dims2("layer_norm")?;
                let tg = self.value(*gain);
                if self.needs(*gain) || self.needs(*bias) {
                    let mut dg = vec![0.0; n];
                    let mut db = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g.data()[i * n + j];
                            dg[j] += gv * xhat.data()[i * n + j];
                            db[j] += gv;
                        }
                    }
                    self.accumulate(grads, *gain, Tensor::new(vec![1, n], dg)?);
                    self.accumulate(grads, *bias, Tensor::new(vec![1, n], db)?);
                }
                if self.needs(*x) {
                    let nf = n as f64;
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        let dxhat: Vec<f64> = (0..n).map(|j| g.data()[i * n + j] * tg.data()[j]).collect();
                        let sum_d: f64 = dxhat.iter().sum();
                        let sum_dx: f64 = (0..n).map(|j| dxhat[j] * xhat.data()[i * n + j]).sum();
                        for j in 0..n {
                            dx[i * n + j] =
                                inv_std[i] / nf * (nf * dxhat[j] - sum_d - xhat.data()[i * n + j] * sum_dx);
                        }
                    }
                    self.accumulate(grads, *x, Tensor::new(vec![m, n], dx)?);
                }
            }
            Op::Dropout(x, mask) => {
                let d = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                self.accumulate(grads, *x, Tensor::new(y.shape().to_vec(), d)?);
            }
            Op::Concat(inputs, axis) => {
                let (m, n) = g.dims2("concat")?;
                if *axis == 0 {
                    let mut row = 0;
                    for &v in inputs {
                        let r = self.value(v).rows();
                        let slice = g.data()[row * n..(row + r) * n].to_vec();
                        self.accumulate(grads, v, Tensor::new(vec![r, n], slice)?);
                        row += r;
                    }
                } else {
                    let mut col = 0;
                    for &v in inputs {
                        let c = self.value(v).cols();
                        let mut part = Vec::with_capacity(m * c);
                        for i in 0..m {
                            part.extend_from_slice(&g.data()[i * n + col..i * n + col + c]);
                        }
                        self.accumulate(grads, v, Tensor::new(vec![m, c], part)?);
                        col += c;
                    }
                }
            }
            Op::Gather(table, indices) => {
                let t = self.value(*table);
                let n = t.cols();
                let mut d = Tensor::zeros(t.shape());
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..n {
                        d.data_mut()[i * n + j] += g.data()[r * n + j];
                    }
                }
                self.accumulate(grads, *table, d);
            }
            Op::Transpose(x) => self.accumulate(grads, *x, g.transpose()?),
            Op::Sum(x) => {
                let gv = g.item();
                self.accumulate(grads, *x, Tensor::filled(self.value(*x).shape(), gv));
            }
            Op::BceWithLogits(z, targets) => {
                let tz = self.value(*z);
                let scale = g.item() / targets.len() as f64;
                let d = tz
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                    .collect();
                self.accumulate(grads, *z, Tensor::new(tz.shape().to_vec(), d)?);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_matmul() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::scalar(2.0));
        let b = g.constant(Tensor::scalar(3.0));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).item(), 6.0);
    }

    #[test]
    fn elementwise_at_zero() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::row(&[0.0, -1.0]));
        let t = g.tanh(z).unwrap();
        let s = g.sigmoid(z).unwrap();
        let r = g.relu(z).unwrap();
        assert_eq!(g.value(t).data()[0], 0.0);
        assert_eq!(g.value(s).data()[0], 0.5);
        assert_eq!(g.value(r).data(), &[0.0, 0.0]);
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::row(&[0.0, 0.0]));
        let s = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(s).data(), &[0.5, 0.5]);
        let x = g.constant(Tensor::row(&[1000.0, 0.0]));
        let s = g.softmax(x, 1).unwrap();
        assert_eq!(g.value(s).data()[0], 1.0);
        assert!(g.value(s).data()[1] < 1e-300);
    }

    #[test]
    fn softmax_axis0_columns_sum_to_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(3, 2, |i, j| (i as f64) - 2.0 * j as f64));
        let s = g.softmax(x, 0).unwrap();
        let v = g.value(s);
        for j in 0..2 {
            let sum: f64 = (0..3).map(|i| v.get(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let x = g.param(Tensor::row(&[1.0, 2.0, 3.0]));
        assert_eq!(g.dropout(x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(g.dropout(x, 0.5, &mut rng, false).unwrap(), x);
        assert!(g.dropout(x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g = Graph::new();
        let x = g.param(Tensor::filled(&[1, 1000], 1.0));
        let y = g.dropout(x, 0.25, &mut rng, true).unwrap();
        for &v in g.value(y).data() {
            assert!(v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(TensorError::ShapeMismatch { .. })));
        let c = g.constant(Tensor::zeros(&[3, 2]));
        assert!(g.add(a, c).is_err());
        assert!(g.gather_rows(a, &[2]).is_err());
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::row(&[f64::MAX]));
        assert!(matches!(g.scale(a, 10.0), Err(TensorError::NonFinite { .. })));
    }

    #[test]
    fn gather_accumulates_repeated_rows() {
        let mut g = Graph::new();
        let table = g.param(Tensor::from_fn(3, 2, |i, j| (i + j) as f64));
        let rows = g.gather_rows(table, &[1, 1, 2]).unwrap();
        let s = g.sum(rows).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(table).unwrap().data(), &[0.0, 0.0, 2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn bce_matches_direct_formula() {
        let mut g = Graph::new();
        let z = g.param(Tensor::row(&[0.3, -2.0, 5.0]));
        let loss = g.bce_with_logits(z, &[1.0, 0.0, 1.0]).unwrap();
        let direct: f64 = [(0.3, 1.0), (-2.0, 0.0), (5.0, 1.0)]
            .iter()
            .map(|&(z, t): &(f64, f64)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 3.0;
        assert!((g.value(loss).item() - direct).abs() < 1e-12);
    }
}
