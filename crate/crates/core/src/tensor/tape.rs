//! Wengert-list autodiff.
//!
//! Operations append nodes in execution order, so the node list is already a
//! topological order; `backward` replays the recorded rules in reverse.

use std::collections::HashMap;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Gelu {
        x: Var,
        slope: Vec<T>,
    },
    Softmax {
        x: Var,
        axis: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Transpose(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        x: Var,
        axis: usize,
        start: usize,
    },
    IndexSelect {
        x: Var,
        indices: Vec<usize>,
    },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
    Attention {
        qkv: Var,
        seq_len: usize,
        heads: usize,
        probs: Vec<T>,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records a forward computation for one backward pass.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
    track_params: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// `(outer, axis_len, inner)` decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let u = c * (x + k * x * x * x);
    let t = u.tanh();
    let y = half * x * (T::one() + t);
    let dy = half * (T::one() + t)
        + half * x * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * x * x);
    (y, dy)
}

fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    let inv = T::one() / total;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            param_index: HashMap::new(),
            track_params: true,
        }
    }

    /// A tape whose parameters are recorded as constants; for inference.
    pub fn inference() -> Self {
        Self {
            track_params: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf, false)
    }

    /// Records a leaf; it is differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records a named parameter once; later calls with the same name reuse it.
    pub fn param(&mut self, name: &str, t: &Tensor<T>) -> Var {
        if let Some(&v) = self.param_index.get(name) {
            return v;
        }
        let rg = self.track_params && t.requires_grad();
        let v = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, rg);
        self.param_index.insert(name.to_string(), v);
        self.params.push((name.to_string(), v));
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.param_index.get(name).copied()
    }

    /// Parameters recorded so far, in first-use order.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("node shape is consistent")
    }

    /// The single value of a scalar (or one-element) node.
    pub fn scalar(&self, v: Var) -> T {
        let d = self.value(v);
        assert_eq!(d.len(), 1, "not a scalar");
        d[0]
    }

    fn mat_dims(&self, v: Var, op: &'static str) -> Result<[usize; 2]> {
        match self.shape(v) {
            &[r, c] => Ok([r, c]),
            s => Err(Error::Shape {
                op,
                lhs: s.to_vec(),
                rhs: vec![],
            }),
        }
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [m, k] = self.mat_dims(a, "matmul")?;
        let [k2, n] = self.mat_dims(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: vec![m, k],
                rhs: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            self.value(a),
            (k as isize, 1),
            self.value(b),
            (n as isize, 1),
            T::zero(),
            &mut out,
            (n as isize, 1),
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Var> {
        self.same_shape(a, b, name)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), out, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    /// `x[..., n] + bias[n]`, broadcasting over leading dimensions.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&0);
        if self.shape(bias) != [n] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&v, &c)| v + c))
            .collect();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias(x, bias), rg))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|&v| v * c).collect();
        let rg = self.rg(x);
        self.push(self.shape(x).to_vec(), out, Op::Scale(x, c), rg)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        let rg = self.rg(x);
        let n = self.value(x).len();
        let mut out = Vec::with_capacity(n);
        let mut slope = Vec::with_capacity(if rg { n } else { 0 });
        for &v in self.value(x) {
            let (y, dy) = gelu_parts(v);
            out.push(y);
            if rg {
                slope.push(dy);
            }
        }
        self.push(self.shape(x).to_vec(), out, Op::Gelu { x, slope }, rg)
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::validation(format!(
                "softmax axis {axis} invalid for shape {shape:?}"
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x);
        let mut out = vec![T::zero(); src.len()];
        if inner == 1 {
            out.copy_from_slice(src);
            out.chunks_mut(n).for_each(softmax_in_place);
            let rg = self.rg(x);
            return Ok(self.push(shape, out, Op::Softmax { x, axis }, rg));
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * n * inner + j * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let rg = self.rg(x);
        Ok(self.push(shape, out, Op::Softmax { x, axis }, rg))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::validation("layernorm on a scalar"))?;
        if d == 0 || self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::Shape {
                op: "layernorm",
                lhs: shape,
                rhs: self.shape(gain).to_vec(),
            });
        }
        if !(eps >= T::zero()) {
            return Err(Error::validation("layernorm eps must be non-negative"));
        }
        let src = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let rows = src.len() / d;
        let dn = T::lit(d as f64);
        let mut xhat = Vec::with_capacity(src.len());
        let mut rstd = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(d) {
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let r = T::one() / (var + eps).sqrt();
            rstd.push(r);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * r;
                xhat.push(h);
                out.push(h * g[j] + b[j]);
            }
        }
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            shape,
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let [r, c] = self.mat_dims(x, "transpose")?;
        let src = self.value(x);
        let mut out = Vec::with_capacity(src.len());
        for j in 0..c {
            for i in 0..r {
                out.push(src[i * c + j]);
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![c, r], out, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let data = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), data, Op::Reshape(x), rg))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::validation("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::validation(format!("concat axis {axis} out of range")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&shape, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v)[o * len..(o + 1) * len]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::validation(format!(
                "narrow [{start}, {}) on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * n + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(new_shape, out, Op::Narrow { x, axis, start }, rg))
    }

    /// Gathers rows along axis 0; repeated indices are allowed.
    pub fn index_select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let rows = *shape
            .first()
            .ok_or_else(|| Error::validation("index_select on a scalar"))?;
        let width: usize = shape[1..].iter().product();
        let src = self.value(x);
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            if i >= rows {
                return Err(Error::validation(format!(
                    "row index {i} out of range for {rows} rows"
                )));
            }
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut new_shape = shape;
        new_shape[0] = indices.len();
        let rg = self.rg(x);
        Ok(self.push(
            new_shape,
            out,
            Op::IndexSelect {
                x,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        self.push(vec![], vec![s], Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::validation("mean of an empty tensor"));
        }
        let s: T = self.value(x).iter().copied().sum();
        let rg = self.rg(x);
        Ok(self.push(vec![], vec![s / T::lit(n as f64)], Op::Mean(x), rg))
    }

    /// Mean over axis 0 of a 2-D tensor.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let [r, c] = self.mat_dims(x, "mean_rows")?;
        if r == 0 {
            return Err(Error::validation("mean_rows of zero rows"));
        }
        let src = self.value(x);
        let mut out = vec![T::zero(); c];
        for row in src.chunks(c) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let rn = T::lit(r as f64);
        for o in &mut out {
            *o = *o / rn;
        }
        let rg = self.rg(x);
        Ok(self.push(vec![c], out, Op::MeanRows(x), rg))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy_logits(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [b, c] = self.mat_dims(logits, "cross_entropy_logits")?;
        if labels.len() != b || b == 0 {
            return Err(Error::validation(format!(
                "cross entropy: {} labels for batch of {b}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::validation(format!(
                "label {bad} outside [0, {c})"
            )));
        }
        let src = self.value(logits);
        let mut probs = Vec::with_capacity(b * c);
        let mut loss = T::zero();
        for (row, &label) in src.chunks(c).zip(labels) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let total: T = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + total.ln();
            loss += lse - row[label];
            probs.extend(row.iter().map(|&v| (v - lse).exp()));
        }
        let loss = loss / T::lit(b as f64);
        let rg = self.rg(logits);
        Ok(self.push(
            vec![],
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Multi-head scaled dot-product self-attention.
    ///
    /// `qkv` is `[batch · seq_len, 3 · dim]` holding the query, key and value
    /// projections side by side; rows are grouped into independent sequences
    /// of `seq_len` tokens. Each of the `heads` heads attends over its own
    /// `dim / heads` column band with scale `1/√(dim/heads)`. The result is
    /// `[batch · seq_len, dim]` with heads in column order.
    pub fn attention(&mut self, qkv: Var, seq_len: usize, heads: usize) -> Result<Var> {
        let [rows, width] = self.mat_dims(qkv, "attention")?;
        if seq_len == 0 || heads == 0 || rows % seq_len != 0 || width % (3 * heads) != 0 {
            return Err(Error::validation(format!(
                "attention over {rows}x{width} with seq_len {seq_len} and {heads} heads"
            )));
        }
        let dim = width / 3;
        let hd = dim / heads;
        let batch = rows / seq_len;
        let scale = T::lit(1.0 / (hd as f64).sqrt());
        let (t, w, d) = (seq_len, width as isize, dim as isize);
        let src = self.value(qkv);
        let mut probs = vec![T::zero(); batch * heads * t * t];
        let mut out = vec![T::zero(); rows * dim];
        for b in 0..batch {
            let base = b * t * width;
            for h in 0..heads {
                let p = &mut probs[(b * heads + h) * t * t..][..t * t];
                let q = &src[base + h * hd..];
                let k = &src[base + dim + h * hd..];
                let v = &src[base + 2 * dim + h * hd..];
                T::gemm(t, hd, t, q, (w, 1), k, (1, w), T::zero(), p, (t as isize, 1));
                for row in p.chunks_mut(t) {
                    row.iter_mut().for_each(|x| *x *= scale);
                    softmax_in_place(row);
                }
                let o = &mut out[b * t * dim + h * hd..];
                T::gemm(t, t, hd, p, (t as isize, 1), v, (w, 1), T::zero(), o, (d, 1));
            }
        }
        let rg = self.rg(qkv);
        if !rg {
            probs = Vec::new();
        }
        Ok(self.push(
            vec![rows, dim],
            out,
            Op::Attention {
                qkv,
                seq_len,
                heads,
                probs,
            },
            rg,
        ))
    }

    /// Reverse pass seeded with ones at `out`.
    pub fn backward(&self, out: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(out.0 + 1, || None);
        grads[out.0] = Some(vec![T::one(); self.nodes[out.0].data.len()]);

        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        // Accumulates into the gradient of `v` if it is differentiable.
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [T])| {
            if self.nodes[v.0].requires_grad {
                let n = self.nodes[v.0].data.len();
                f(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]));
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let [m, k] = [self.shape(a)[0], self.shape(a)[1]];
                let n = self.shape(b)[1];
                let (ki, ni) = (k as isize, n as isize);
                acc(a, &mut |da| T::gemm(m, n, k, g, (ni, 1), self.value(b), (1, ni), T::one(), da, (ki, 1)));
                acc(b, &mut |db| T::gemm(k, m, n, self.value(a), (1, ki), g, (ni, 1), T::one(), db, (ni, 1)));
            }
            &Op::Add(a, b) => {
                acc(a, &mut |da| da.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                acc(b, &mut |db| db.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |da| da.iter_mut().zip(g).for_each(|(d, &x)| *d += x));
                acc(b, &mut |db| db.iter_mut().zip(g).for_each(|(d, &x)| *d -= x));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (self.value(a), self.value(b));
                acc(a, &mut |da| {
                    for ((d, &x), &y) in da.iter_mut().zip(g).zip(bv) {
                        *d += x * y;
                    }
                });
                acc(b, &mut |db| {
                    for ((d, &x), &y) in db.iter_mut().zip(g).zip(av) {
                        *d += x * y;
                    }
                });
            }
            &Op::AddBias(x, bias) => {
                acc(x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
                let n = self.shape(bias)[0];
                acc(bias, &mut |db| {
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            &Op::Scale(x, c) => {
                acc(x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, &v)| *d += c * v));
            }
            Op::Gelu { x, slope } => {
                acc(*x, &mut |dx| {
                    for ((d, &gv), &s) in dx.iter_mut().zip(g).zip(slope) {
                        *d += gv * s;
                    }
                });
            }
            &Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(&node.shape, axis);
                let y = &node.data;
                acc(x, &mut |dx| {
                    if inner == 1 {
                        for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                            let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                            for ((d, &gv), &yv) in drow.iter_mut().zip(grow).zip(yrow) {
                                *d += yv * (gv - dot);
                            }
                        }
                        return;
                    }
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * n * inner + j * inner + i;
                            let dot: T = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                dx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let d = self.shape(*gain)[0];
                let gv = self.value(*gain);
                let dn = T::lit(d as f64);
                acc(*x, &mut |dx| {
                    for (r, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = grow[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hrow[j];
                        }
                        mean_dh = mean_dh / dn;
                        mean_dh_h = mean_dh_h / dn;
                        for j in 0..d {
                            let dh = grow[j] * gv[j];
                            dx[r * d + j] += rstd[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                });
                acc(*gain, &mut |dg| {
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for j in 0..d {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                });
                acc(*bias, &mut |db| {
                    for grow in g.chunks(d) {
                        db.iter_mut().zip(grow).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            &Op::Transpose(x) => {
                // node is [c, r]; input is [r, c]
                let (c, r) = (node.shape[0], node.shape[1]);
                acc(x, &mut |dx| {
                    for j in 0..c {
                        for i in 0..r {
                            dx[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            &Op::Reshape(x) => {
                acc(x, &mut |dx| dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(&node.shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis] * inner;
                    acc(v, &mut |dv| {
                        for o in 0..outer {
                            let src = &g[o * total * inner + offset..][..len];
                            dv[o * len..(o + 1) * len]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, &s)| *d += s);
                        }
                    });
                    offset += len;
                }
            }
            &Op::Narrow { x, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(x), axis);
                let len = node.shape[axis];
                acc(x, &mut |dx| {
                    for o in 0..outer {
                        let to = (o * n + start) * inner;
                        dx[to..to + len * inner]
                            .iter_mut()
                            .zip(&g[o * len * inner..(o + 1) * len * inner])
                            .for_each(|(d, &s)| *d += s);
                    }
                });
            }
            Op::IndexSelect { x, indices } => {
                let width: usize = node.shape[1..].iter().product();
                acc(*x, &mut |dx| {
                    for (k, &i) in indices.iter().enumerate() {
                        dx[i * width..(i + 1) * width]
                            .iter_mut()
                            .zip(&g[k * width..(k + 1) * width])
                            .for_each(|(d, &s)| *d += s);
                    }
                });
            }
            &Op::Sum(x) => {
                acc(x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0]));
            }
            &Op::Mean(x) => {
                let n = T::lit(self.value(x).len() as f64);
                acc(x, &mut |dx| dx.iter_mut().for_each(|d| *d += g[0] / n));
            }
            &Op::MeanRows(x) => {
                let c = node.shape[0];
                let r = T::lit((self.value(x).len() / c) as f64);
                acc(x, &mut |dx| {
                    for row in dx.chunks_mut(c) {
                        row.iter_mut().zip(g).for_each(|(d, &v)| *d += v / r);
                    }
                });
            }
            Op::Attention {
                qkv,
                seq_len,
                heads,
                probs,
            } => {
                let (t, heads) = (*seq_len, *heads);
                let width = self.shape(*qkv)[1];
                let dim = width / 3;
                let hd = dim / heads;
                let batch = node.shape[0] / t;
                let scale = T::lit(1.0 / (hd as f64).sqrt());
                let (w, d, ti) = (width as isize, dim as isize, t as isize);
                let src = self.value(*qkv);
                let mut dp = vec![T::zero(); t * t];
                acc(*qkv, &mut |dq| {
                    for b in 0..batch {
                        let base = b * t * width;
                        for h in 0..heads {
                            let p = &probs[(b * heads + h) * t * t..][..t * t];
                            let go = &g[b * t * dim + h * hd..];
                            let (qo, ko, vo) = (base + h * hd, base + dim + h * hd, base + 2 * dim + h * hd);
                            // dV += Pᵀ · dO
                            T::gemm(t, t, hd, p, (1, ti), go, (d, 1), T::one(), &mut dq[vo..], (w, 1));
                            // dP = dO · Vᵀ, then through the row softmax and the scale
                            T::gemm(t, hd, t, go, (d, 1), &src[vo..], (1, w), T::zero(), &mut dp, (ti, 1));
                            for (drow, prow) in dp.chunks_mut(t).zip(p.chunks(t)) {
                                let dot: T = drow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                                for (dv, &pv) in drow.iter_mut().zip(prow) {
                                    *dv = pv * (*dv - dot) * scale;
                                }
                            }
                            // dQ += dS · K ; dK += dSᵀ · Q
                            T::gemm(t, t, hd, &dp, (ti, 1), &src[ko..], (w, 1), T::one(), &mut dq[qo..], (w, 1));
                            T::gemm(t, t, hd, &dp, (1, ti), &src[qo..], (w, 1), T::one(), &mut dq[ko..], (w, 1));
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let c = self.shape(*logits)[1];
                let scale = g[0] / T::lit(labels.len() as f64);
                acc(*logits, &mut |dl| {
                    for (b, &label) in labels.iter().enumerate() {
                        for j in 0..c {
                            let onehot = if j == label { T::one() } else { T::zero() };
                            dl[b * c + j] += scale * (probs[b * c + j] - onehot);
                        }
                    }
                });
            }
        }
    }

    /// Gradients of every recorded parameter, by name, in first-use order.
    pub fn param_grads<'a>(&'a self, grads: &'a Gradients<T>) -> impl Iterator<Item = (&'a str, &'a [T])> + 'a {
        self.params
            .iter()
            .filter_map(move |(name, v)| grads.get(*v).map(|g| (name.as_str(), g)))
    }
}
