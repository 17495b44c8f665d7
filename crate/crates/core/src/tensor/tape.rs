//! Operation tape with reverse-mode differentiation.
//!
//! Each op appends one node holding its output value; `backward` walks
//! the tape once in reverse creation order, which is a valid reverse
//! topological order because ops can only reference existing nodes.

use super::kernels;
use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Handle to a tape node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add,
    Sub,
    Mul,
    Neg,
    Scale(f64),
    AddScalar,
    Matmul,
    Bmm,
    SwapLast2,
    Permute3([usize; 3]),
    Reshape,
    Conv1d { stride: usize, padding: usize },
    Upsample2,
    LayerNorm { eps: f64 },
    Softmax,
    CrossEntropyRows { labels: Vec<usize> },
    Silu,
    Gelu,
    Exp,
    Ln,
    Rsqrt,
    Sum,
    Mean,
    Mse,
    AddBias,
    MulBias,
    MeanAxis0,
    SumAxisLast,
    MulBcastLast,
    MulScalarVar,
    SliceLast { start: usize, len: usize },
    ConcatLast,
    StackRows,
}

struct Node<T> {
    value: Tensor<T>,
    op: Op,
    inputs: Vec<Var>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Records operations for one forward pass.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert an input tensor. Gradients are tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, vec![], requires_grad)
    }

    /// Insert a constant (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: Vec<Var>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, inputs, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn push_auto(&mut self, value: Tensor<T>, op: Op, inputs: Vec<Var>) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, inputs, rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape {
                op,
                detail: format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            });
        }
        Ok(())
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o += bv;
        }
        Ok(self.push_auto(out, Op::Add, vec![a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o -= bv;
        }
        Ok(self.push_auto(out, Op::Sub, vec![a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &bv) in out.data_mut().iter_mut().zip(self.nodes[b.0].value.data()) {
            *o *= bv;
        }
        Ok(self.push_auto(out, Op::Mul, vec![a, b]))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| -v);
        self.push_auto(out, Op::Neg, vec![a])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let cv = T::from_f64(c);
        let out = self.value(a).map(|v| v * cv);
        self.push_auto(out, Op::Scale(c), vec![a])
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let cv = T::from_f64(c);
        let out = self.value(a).map(|v| v + cv);
        self.push_auto(out, Op::AddScalar, vec![a])
    }

    // ---- activations and pointwise transcendentals ----

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| {
            let s = T::one() / (T::one() + (-x).exp());
            x * s
        });
        self.push_auto(out, Op::Silu, vec![a])
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let c = T::from_f64(0.7978845608028654); // sqrt(2/pi)
        let aa = T::from_f64(0.044715);
        let half = T::from_f64(0.5);
        let out = self.value(a).map(|x| {
            let u = c * (x + aa * x * x * x);
            half * x * (T::one() + u.tanh())
        });
        self.push_auto(out, Op::Gelu, vec![a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.exp());
        self.push_auto(out, Op::Exp, vec![a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.ln());
        self.push_auto(out, Op::Ln, vec![a])
    }

    pub fn rsqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| T::one() / x.sqrt());
        self.push_auto(out, Op::Rsqrt, vec![a])
    }

    // ---- shape ops ----

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        Ok(self.push_auto(out, Op::Reshape, vec![a]))
    }

    /// Transpose the last two axes of a rank-2 or rank-3 tensor.
    pub fn swap_last2(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let (batch, m, n) = match shape.len() {
            2 => (1, shape[0], shape[1]),
            3 => (shape[0], shape[1], shape[2]),
            r => {
                return Err(Error::Shape { op: "swap_last2", detail: format!("rank {} unsupported", r) })
            }
        };
        let src = self.value(a).data();
        let mut data = vec![T::zero(); src.len()];
        for b in 0..batch {
            let sb = &src[b * m * n..(b + 1) * m * n];
            let db = &mut data[b * m * n..(b + 1) * m * n];
            for i in 0..m {
                for j in 0..n {
                    db[j * m + i] = sb[i * n + j];
                }
            }
        }
        let mut out_shape = shape.clone();
        let r = out_shape.len();
        out_shape.swap(r - 2, r - 1);
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push_auto(out, Op::SwapLast2, vec![a]))
    }

    /// Permute the axes of a rank-3 tensor: output axis `a` takes input axis `perm[a]`.
    pub fn permute3(&mut self, a: Var, perm: [usize; 3]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 3 {
            return Err(Error::Shape { op: "permute3", detail: format!("rank {} != 3", shape.len()) });
        }
        {
            let mut seen = [false; 3];
            for &p in &perm {
                if p > 2 || seen[p] {
                    return Err(Error::Argument(format!("invalid permutation {:?}", perm)));
                }
                seen[p] = true;
            }
        }
        let out = permute3_tensor(self.value(a), perm)?;
        Ok(self.push_auto(out, Op::Permute3(perm), vec![a]))
    }

    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let d = self.value(a).last_dim();
        if start + len > d {
            return Err(Error::Argument(format!(
                "slice_last [{start}, {}) out of last dim {d}",
                start + len
            )));
        }
        let rows = self.value(a).len() / d;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            data.extend_from_slice(&src[r * d + start..r * d + start + len]);
        }
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = len;
        let out = Tensor::new(shape, data)?;
        Ok(self.push_auto(out, Op::SliceLast { start, len }, vec![a]))
    }

    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != sb.len() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::Shape { op: "concat_last", detail: format!("{:?} vs {:?}", sa, sb) });
        }
        let (da, db) = (sa[sa.len() - 1], sb[sb.len() - 1]);
        let rows = self.value(a).len() / da;
        let mut data = Vec::with_capacity(rows * (da + db));
        for r in 0..rows {
            data.extend_from_slice(&self.value(a).data()[r * da..(r + 1) * da]);
            data.extend_from_slice(&self.value(b).data()[r * db..(r + 1) * db]);
        }
        let mut shape = sa.clone();
        *shape.last_mut().unwrap() = da + db;
        let out = Tensor::new(shape, data)?;
        Ok(self.push_auto(out, Op::ConcatLast, vec![a, b]))
    }

    // ---- linear algebra ----

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape { op: "matmul", detail: format!("{:?} x {:?}", sa, sb) });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut data = vec![T::zero(); m * n];
        kernels::mm_nn(self.value(a).data(), self.value(b).data(), &mut data, m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push_auto(out, Op::Matmul, vec![a, b]))
    }

    /// Batched matrix product over matching leading dimension.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(Error::Shape { op: "bmm", detail: format!("{:?} x {:?}", sa, sb) });
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut data = vec![T::zero(); bs * m * n];
        for i in 0..bs {
            kernels::mm_nn(
                &self.value(a).data()[i * m * k..(i + 1) * m * k],
                &self.value(b).data()[i * k * n..(i + 1) * k * n],
                &mut data[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        let out = Tensor::new(vec![bs, m, n], data)?;
        Ok(self.push_auto(out, Op::Bmm, vec![a, b]))
    }

    /// x + b with `b` broadcast over all leading dimensions.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(b) != [d] {
            return Err(Error::Shape {
                op: "add_bias",
                detail: format!("bias {:?} vs last dim {}", self.shape(b), d),
            });
        }
        let mut out = self.value(x).clone();
        let bias = self.nodes[b.0].value.data();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o += bv;
            }
        }
        Ok(self.push_auto(out, Op::AddBias, vec![x, b]))
    }

    /// x ⊙ b with `b` broadcast over all leading dimensions.
    pub fn mul_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(b) != [d] {
            return Err(Error::Shape {
                op: "mul_bias",
                detail: format!("bias {:?} vs last dim {}", self.shape(b), d),
            });
        }
        let mut out = self.value(x).clone();
        let bias = self.nodes[b.0].value.data();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(bias) {
                *o *= bv;
            }
        }
        Ok(self.push_auto(out, Op::MulBias, vec![x, b]))
    }

    /// 1-D convolution along the last axis. x: [B, C_in, L], w: [C_out, C_in, K], b: [C_out].
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(b).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sb.len() != 1 {
            return Err(Error::Shape {
                op: "conv1d",
                detail: format!("x {:?}, w {:?}, b {:?}", sx, sw, sb),
            });
        }
        let (batch, c_in, l) = (sx[0], sx[1], sx[2]);
        let (c_out, wc_in, k) = (sw[0], sw[1], sw[2]);
        if wc_in != c_in || sb[0] != c_out {
            return Err(Error::Shape {
                op: "conv1d",
                detail: format!("channels: x {:?}, w {:?}, b {:?}", sx, sw, sb),
            });
        }
        let lout = kernels::conv1d_out_len(l, k, stride, padding)
            .ok_or_else(|| Error::Argument(format!("conv1d: kernel {k} exceeds padded length")))?;
        let mut data = vec![T::zero(); batch * c_out * lout];
        // seed with bias
        let bias = self.value(b).data();
        for bo in data.chunks_mut(lout).enumerate() {
            let (i, chunk) = bo;
            let co = i % c_out;
            for v in chunk.iter_mut() {
                *v = bias[co];
            }
        }
        kernels::conv1d_fwd(
            self.value(x).data(),
            self.value(w).data(),
            &mut data,
            batch,
            c_in,
            l,
            c_out,
            k,
            stride,
            padding,
        );
        let out = Tensor::new(vec![batch, c_out, lout], data)?;
        Ok(self.push_auto(out, Op::Conv1d { stride, padding }, vec![x, w, b]))
    }

    /// Nearest-neighbor 2x upsample along the last axis.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let l = self.value(a).last_dim();
        let rows = self.value(a).len() / l;
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows * 2 * l);
        for r in 0..rows {
            for &v in &src[r * l..(r + 1) * l] {
                data.push(v);
                data.push(v);
            }
        }
        let mut shape = self.shape(a).to_vec();
        *shape.last_mut().unwrap() = 2 * l;
        let out = Tensor::new(shape, data)?;
        Ok(self.push_auto(out, Op::Upsample2, vec![a]))
    }

    // ---- normalization / attention ----

    /// Layer normalization over the last axis with affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::Shape {
                op: "layer_norm",
                detail: format!(
                    "gamma {:?} / beta {:?} vs last dim {}",
                    self.shape(gamma),
                    self.shape(beta),
                    d
                ),
            });
        }
        let epsv = T::from_f64(eps);
        let g = self.value(gamma).data().to_vec();
        let bta = self.value(beta).data().to_vec();
        let mut out = self.value(x).clone();
        let dn = T::from_f64(d as f64);
        for row in out.data_mut().chunks_mut(d) {
            let mut mean = T::zero();
            for &v in row.iter() {
                mean += v;
            }
            mean /= dn;
            let mut var = T::zero();
            for &v in row.iter() {
                let c = v - mean;
                var += c * c;
            }
            var /= dn;
            let istd = T::one() / (var + epsv).sqrt();
            for (j, v) in row.iter_mut().enumerate() {
                *v = g[j] * ((*v - mean) * istd) + bta[j];
            }
        }
        Ok(self.push_auto(out, Op::LayerNorm { eps }, vec![x, gamma, beta]))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Var {
        let d = self.value(a).last_dim();
        let mut out = self.value(a).clone();
        kernels::softmax_rows(out.data_mut(), d);
        self.push_auto(out, Op::Softmax, vec![a])
    }

    /// Scaled dot-product attention: softmax(q kᵀ / √d) v.
    ///
    /// Accepts rank-2 ([L, d]) or rank-3 ([B, L, d]) operands; composed
    /// from primitives so the backward pass follows automatically.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let rank = self.shape(q).len();
        let d = self.value(q).last_dim();
        if self.value(k).last_dim() != d {
            return Err(Error::Shape {
                op: "attention",
                detail: format!("q {:?} vs k {:?}", self.shape(q), self.shape(k)),
            });
        }
        let kt = self.swap_last2(k)?;
        let scores = if rank == 3 { self.bmm(q, kt)? } else { self.matmul(q, kt)? };
        let scaled = self.scale(scores, 1.0 / (d as f64).sqrt());
        let attn = self.softmax(scaled);
        if rank == 3 {
            self.bmm(attn, v)
        } else {
            self.matmul(attn, v)
        }
    }

    // ---- reductions / losses ----

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.check_finite_scalar("sum", s)?;
        Ok(self.push_auto(Tensor::scalar(s), Op::Sum, vec![a]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::Argument("mean of empty tensor".into()));
        }
        let s: T = self.value(a).data().iter().copied().sum();
        let m = s / T::from_f64(n as f64);
        self.check_finite_scalar("mean", m)?;
        Ok(self.push_auto(Tensor::scalar(m), Op::Mean, vec![a]))
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mse", a, b)?;
        let n = self.value(a).len();
        let mut s = T::zero();
        for (&x, &y) in self.value(a).data().iter().zip(self.value(b).data()) {
            let d = x - y;
            s += d * d;
        }
        let m = s / T::from_f64(n as f64);
        self.check_finite_scalar("mse", m)?;
        Ok(self.push_auto(Tensor::scalar(m), Op::Mse, vec![a, b]))
    }

    /// Mean cross-entropy of logit rows against integer labels.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape { op: "cross_entropy_rows", detail: format!("{:?}", shape) });
        }
        let (bsz, classes) = (shape[0], shape[1]);
        if labels.len() != bsz {
            return Err(Error::Argument(format!("{} labels for {} rows", labels.len(), bsz)));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Argument(format!("label {bad} out of {classes} classes")));
        }
        let data = self.value(logits).data();
        let mut total = T::zero();
        for (i, row) in data.chunks(classes).enumerate() {
            let mut mx = row[0];
            for &v in row {
                if v > mx {
                    mx = v;
                }
            }
            let mut lse = T::zero();
            for &v in row {
                lse += (v - mx).exp();
            }
            let lse = mx + lse.ln();
            total += lse - row[labels[i]];
        }
        let loss = total / T::from_f64(bsz as f64);
        self.check_finite_scalar("cross_entropy_rows", loss)?;
        Ok(self.push_auto(
            Tensor::scalar(loss),
            Op::CrossEntropyRows { labels: labels.to_vec() },
            vec![logits],
        ))
    }

    /// Mean over axis 0 of a rank-2 tensor: [M, D] -> [D].
    pub fn mean_axis0(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 {
            return Err(Error::Shape { op: "mean_axis0", detail: format!("{:?}", shape) });
        }
        let (m, d) = (shape[0], shape[1]);
        let mut data = vec![T::zero(); d];
        for row in self.value(a).data().chunks(d) {
            for (o, &v) in data.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = T::one() / T::from_f64(m as f64);
        for o in data.iter_mut() {
            *o *= inv;
        }
        let out = Tensor::new(vec![d], data)?;
        Ok(self.push_auto(out, Op::MeanAxis0, vec![a]))
    }

    /// Sum over the last axis: [.., D] -> [..] (rank-1 input gives a scalar).
    pub fn sum_axis_last(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let d = *shape.last().unwrap_or(&1);
        let rows = self.value(a).len() / d;
        let mut data = Vec::with_capacity(rows);
        for row in self.value(a).data().chunks(d) {
            let mut s = T::zero();
            for &v in row {
                s += v;
            }
            data.push(s);
        }
        let out_shape = if shape.len() <= 1 { vec![1] } else { shape[..shape.len() - 1].to_vec() };
        let out = Tensor::new(out_shape, data)?;
        Ok(self.push_auto(out, Op::SumAxisLast, vec![a]))
    }

    /// Multiply each last-axis row of `x` by the matching scalar in `s`.
    pub fn mul_bcast_last(&mut self, x: Var, s: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        let rows = self.value(x).len() / d;
        if self.value(s).len() != rows {
            return Err(Error::Shape {
                op: "mul_bcast_last",
                detail: format!("{} rows vs {} scalars", rows, self.value(s).len()),
            });
        }
        let mut out = self.value(x).clone();
        let sv = self.nodes[s.0].value.data();
        for (r, row) in out.data_mut().chunks_mut(d).enumerate() {
            let c = sv[r];
            for v in row.iter_mut() {
                *v *= c;
            }
        }
        Ok(self.push_auto(out, Op::MulBcastLast, vec![x, s]))
    }

    /// Multiply a tensor by a single-element variable.
    pub fn mul_scalar_var(&mut self, x: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::Shape {
                op: "mul_scalar_var",
                detail: format!("scalar has {} elements", self.value(s).len()),
            });
        }
        let c = self.value(s).data()[0];
        let out = self.value(x).map(|v| v * c);
        Ok(self.push_auto(out, Op::MulScalarVar, vec![x, s]))
    }

    /// Stack equally-shaped tensors as the rows of a new [B, len]
    /// matrix, flattening each part.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Argument("stack_rows of zero tensors".into()))?;
        let len = self.value(*first).len();
        let mut data = Vec::with_capacity(parts.len() * len);
        for &p in parts {
            if self.value(p).len() != len {
                return Err(Error::Shape {
                    op: "stack_rows",
                    detail: format!("{} elements vs {}", self.value(p).len(), len),
                });
            }
            data.extend_from_slice(self.value(p).data());
        }
        let out = Tensor::new(vec![parts.len(), len], data)?;
        Ok(self.push_auto(out, Op::StackRows, parts.to_vec()))
    }

    // ---- composites ----

    /// ℓ2-normalize each last-axis row: x / √(Σx² + eps).
    pub fn l2_normalize_rows(&mut self, x: Var, eps: f64) -> Result<Var> {
        let sq = self.mul(x, x)?;
        let ss = self.sum_axis_last(sq)?;
        let ss = self.add_scalar(ss, eps);
        let inv = self.rsqrt(ss);
        self.mul_bcast_last(x, inv)
    }

    fn check_finite_scalar(&self, op: &'static str, v: T) -> Result<()> {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{op} output")));
        }
        Ok(())
    }

    // ---- backward ----

    /// Reverse-mode sweep from a scalar loss. Visits each node exactly
    /// once in reverse creation order.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::Argument(format!(
                "backward from non-scalar of {} elements",
                self.value(loss).len()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            // keep the gradient available for callers
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => {
                for (a, &b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let needs = |v: &Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::Add => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if needs(&a) {
                    self.accumulate(grads, a, g.clone());
                }
                if needs(&b) {
                    self.accumulate(grads, b, g.clone());
                }
            }
            Op::Sub => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if needs(&a) {
                    self.accumulate(grads, a, g.clone());
                }
                if needs(&b) {
                    self.accumulate(grads, b, g.map(|v| -v));
                }
            }
            Op::Mul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                if needs(&a) {
                    let mut d = g.clone();
                    for (x, &y) in d.data_mut().iter_mut().zip(self.value(b).data()) {
                        *x *= y;
                    }
                    self.accumulate(grads, a, d);
                }
                if needs(&b) {
                    let mut d = g.clone();
                    for (x, &y) in d.data_mut().iter_mut().zip(self.value(a).data()) {
                        *x *= y;
                    }
                    self.accumulate(grads, b, d);
                }
            }
            Op::Neg => self.accumulate(grads, node.inputs[0], g.map(|v| -v)),
            Op::Scale(c) => {
                let cv = T::from_f64(*c);
                self.accumulate(grads, node.inputs[0], g.map(|v| v * cv));
            }
            Op::AddScalar => self.accumulate(grads, node.inputs[0], g.clone()),
            Op::Matmul => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let (m, k) = (self.shape(a)[0], self.shape(a)[1]);
                let n = self.shape(b)[1];
                if needs(&a) {
                    let mut da = Tensor::zeros(self.shape(a));
                    kernels::mm_nt(g.data(), self.value(b).data(), da.data_mut(), m, n, k);
                    self.accumulate(grads, a, da);
                }
                if needs(&b) {
                    let mut db = Tensor::zeros(self.shape(b));
                    kernels::mm_tn(self.value(a).data(), g.data(), db.data_mut(), m, k, n);
                    self.accumulate(grads, b, db);
                }
            }
            Op::Bmm => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let (bs, m, k) = (self.shape(a)[0], self.shape(a)[1], self.shape(a)[2]);
                let n = self.shape(b)[2];
                if needs(&a) {
                    let mut da = Tensor::zeros(self.shape(a));
                    for t in 0..bs {
                        kernels::mm_nt(
                            &g.data()[t * m * n..(t + 1) * m * n],
                            &self.value(b).data()[t * k * n..(t + 1) * k * n],
                            &mut da.data_mut()[t * m * k..(t + 1) * m * k],
                            m,
                            n,
                            k,
                        );
                    }
                    self.accumulate(grads, a, da);
                }
                if needs(&b) {
                    let mut db = Tensor::zeros(self.shape(b));
                    for t in 0..bs {
                        kernels::mm_tn(
                            &self.value(a).data()[t * m * k..(t + 1) * m * k],
                            &g.data()[t * m * n..(t + 1) * m * n],
                            &mut db.data_mut()[t * k * n..(t + 1) * k * n],
                            m,
                            k,
                            n,
                        );
                    }
                    self.accumulate(grads, b, db);
                }
            }
            Op::SwapLast2 => {
                let a = node.inputs[0];
                let shape = self.shape(Var(i)).to_vec();
                let (batch, m, n) = match shape.len() {
                    2 => (1, shape[0], shape[1]),
                    _ => (shape[0], shape[1], shape[2]),
                };
                let mut da = Tensor::zeros(self.shape(a));
                for bt in 0..batch {
                    let gsl = &g.data()[bt * m * n..(bt + 1) * m * n];
                    let dsl = &mut da.data_mut()[bt * m * n..(bt + 1) * m * n];
                    for r in 0..m {
                        for c in 0..n {
                            dsl[c * m + r] = gsl[r * n + c];
                        }
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::Permute3(perm) => {
                let a = node.inputs[0];
                let inv = inverse_perm3(*perm);
                let dg = permute3_tensor(g, inv)?;
                self.accumulate(grads, a, dg);
            }
            Op::Reshape => {
                let a = node.inputs[0];
                let da = g.clone().reshaped(self.shape(a))?;
                self.accumulate(grads, a, da);
            }
            Op::Conv1d { stride, padding } => {
                let (x, w, b) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let (batch, c_in, l) = (self.shape(x)[0], self.shape(x)[1], self.shape(x)[2]);
                let (c_out, _, k) = (self.shape(w)[0], self.shape(w)[1], self.shape(w)[2]);
                let lout = self.shape(Var(i))[2];
                if needs(&x) {
                    let mut dx = Tensor::zeros(self.shape(x));
                    kernels::conv1d_bwd_input(
                        g.data(),
                        self.value(w).data(),
                        dx.data_mut(),
                        batch,
                        c_in,
                        l,
                        c_out,
                        k,
                        *stride,
                        *padding,
                    );
                    self.accumulate(grads, x, dx);
                }
                if needs(&w) {
                    let mut dw = Tensor::zeros(self.shape(w));
                    kernels::conv1d_bwd_weight(
                        g.data(),
                        self.value(x).data(),
                        dw.data_mut(),
                        batch,
                        c_in,
                        l,
                        c_out,
                        k,
                        *stride,
                        *padding,
                    );
                    self.accumulate(grads, w, dw);
                }
                if needs(&b) {
                    let mut db = Tensor::zeros(self.shape(b));
                    for (idx, chunk) in g.data().chunks(lout).enumerate() {
                        let co = idx % c_out;
                        let mut s = T::zero();
                        for &v in chunk {
                            s += v;
                        }
                        db.data_mut()[co] += s;
                    }
                    self.accumulate(grads, b, db);
                }
            }
            Op::Upsample2 => {
                let a = node.inputs[0];
                let l = self.value(a).last_dim();
                let rows = self.value(a).len() / l;
                let mut da = Tensor::zeros(self.shape(a));
                for r in 0..rows {
                    let gs = &g.data()[r * 2 * l..(r + 1) * 2 * l];
                    let ds = &mut da.data_mut()[r * l..(r + 1) * l];
                    for (j, d) in ds.iter_mut().enumerate() {
                        *d = gs[2 * j] + gs[2 * j + 1];
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::LayerNorm { eps } => {
                let (x, gamma, beta) = (node.inputs[0], node.inputs[1], node.inputs[2]);
                let d = self.value(x).last_dim();
                let dn = T::from_f64(d as f64);
                let epsv = T::from_f64(*eps);
                let gm = self.value(gamma).data();
                let mut dx = Tensor::zeros(self.shape(x));
                let mut dgamma = Tensor::zeros(&[d]);
                let mut dbeta = Tensor::zeros(&[d]);
                let xd = self.value(x).data();
                for (r, grow) in g.data().chunks(d).enumerate() {
                    let xrow = &xd[r * d..(r + 1) * d];
                    let mut mean = T::zero();
                    for &v in xrow {
                        mean += v;
                    }
                    mean /= dn;
                    let mut var = T::zero();
                    for &v in xrow {
                        let c = v - mean;
                        var += c * c;
                    }
                    var /= dn;
                    let istd = T::one() / (var + epsv).sqrt();
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * istd;
                        let gh = grow[j] * gm[j];
                        m1 += gh;
                        m2 += gh * xhat;
                        dgamma.data_mut()[j] += grow[j] * xhat;
                        dbeta.data_mut()[j] += grow[j];
                    }
                    m1 /= dn;
                    m2 /= dn;
                    let dxrow = &mut dx.data_mut()[r * d..(r + 1) * d];
                    for j in 0..d {
                        let xhat = (xrow[j] - mean) * istd;
                        let gh = grow[j] * gm[j];
                        dxrow[j] = istd * (gh - m1 - xhat * m2);
                    }
                }
                if needs(&x) {
                    self.accumulate(grads, x, dx);
                }
                if needs(&gamma) {
                    self.accumulate(grads, gamma, dgamma);
                }
                if needs(&beta) {
                    self.accumulate(grads, beta, dbeta);
                }
            }
            Op::Softmax => {
                let a = node.inputs[0];
                let y = self.value(Var(i));
                let d = y.last_dim();
                let mut da = Tensor::zeros(self.shape(a));
                for (r, grow) in g.data().chunks(d).enumerate() {
                    let yrow = &y.data()[r * d..(r + 1) * d];
                    let mut dot = T::zero();
                    for (gv, yv) in grow.iter().zip(yrow) {
                        dot += *gv * *yv;
                    }
                    let darow = &mut da.data_mut()[r * d..(r + 1) * d];
                    for j in 0..d {
                        darow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::CrossEntropyRows { labels } => {
                let a = node.inputs[0];
                let shape = self.shape(a);
                let (bsz, classes) = (shape[0], shape[1]);
                let gs = g.data()[0] / T::from_f64(bsz as f64);
                let mut da = self.value(a).clone();
                kernels::softmax_rows(da.data_mut(), classes);
                for (r, row) in da.data_mut().chunks_mut(classes).enumerate() {
                    row[labels[r]] -= T::one();
                    for v in row.iter_mut() {
                        *v *= gs;
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::Silu => {
                let a = node.inputs[0];
                let mut da = g.clone();
                for (d, &x) in da.data_mut().iter_mut().zip(self.value(a).data()) {
                    let s = T::one() / (T::one() + (-x).exp());
                    *d *= s * (T::one() + x * (T::one() - s));
                }
                self.accumulate(grads, a, da);
            }
            Op::Gelu => {
                let a = node.inputs[0];
                let c = T::from_f64(0.7978845608028654);
                let aa = T::from_f64(0.044715);
                let half = T::from_f64(0.5);
                let three = T::from_f64(3.0);
                let mut da = g.clone();
                for (d, &x) in da.data_mut().iter_mut().zip(self.value(a).data()) {
                    let u = c * (x + aa * x * x * x);
                    let th = u.tanh();
                    let du = c * (T::one() + three * aa * x * x);
                    *d *= half * (T::one() + th) + half * x * (T::one() - th * th) * du;
                }
                self.accumulate(grads, a, da);
            }
            Op::Exp => {
                let a = node.inputs[0];
                let mut da = g.clone();
                for (d, &y) in da.data_mut().iter_mut().zip(self.value(Var(i)).data()) {
                    *d *= y;
                }
                self.accumulate(grads, a, da);
            }
            Op::Ln => {
                let a = node.inputs[0];
                let mut da = g.clone();
                for (d, &x) in da.data_mut().iter_mut().zip(self.value(a).data()) {
                    *d /= x;
                }
                self.accumulate(grads, a, da);
            }
            Op::Rsqrt => {
                let a = node.inputs[0];
                let half = T::from_f64(-0.5);
                let mut da = g.clone();
                for (d, &y) in da.data_mut().iter_mut().zip(self.value(Var(i)).data()) {
                    *d *= half * y * y * y;
                }
                self.accumulate(grads, a, da);
            }
            Op::Sum => {
                let a = node.inputs[0];
                let gv = g.data()[0];
                self.accumulate(grads, a, Tensor::full(self.shape(a), gv));
            }
            Op::Mean => {
                let a = node.inputs[0];
                let gv = g.data()[0] / T::from_f64(self.value(a).len() as f64);
                self.accumulate(grads, a, Tensor::full(self.shape(a), gv));
            }
            Op::Mse => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let n = T::from_f64(self.value(a).len() as f64);
                let c = g.data()[0] * T::from_f64(2.0) / n;
                if needs(&a) {
                    let mut da = Tensor::zeros(self.shape(a));
                    for ((d, &x), &y) in
                        da.data_mut().iter_mut().zip(self.value(a).data()).zip(self.value(b).data())
                    {
                        *d = c * (x - y);
                    }
                    self.accumulate(grads, a, da);
                }
                if needs(&b) {
                    let mut db = Tensor::zeros(self.shape(b));
                    for ((d, &x), &y) in
                        db.data_mut().iter_mut().zip(self.value(a).data()).zip(self.value(b).data())
                    {
                        *d = -c * (x - y);
                    }
                    self.accumulate(grads, b, db);
                }
            }
            Op::AddBias => {
                let (x, b) = (node.inputs[0], node.inputs[1]);
                if needs(&x) {
                    self.accumulate(grads, x, g.clone());
                }
                if needs(&b) {
                    let d = self.value(b).len();
                    let mut db = Tensor::zeros(&[d]);
                    for row in g.data().chunks(d) {
                        for (o, &v) in db.data_mut().iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, b, db);
                }
            }
            Op::MulBias => {
                let (x, b) = (node.inputs[0], node.inputs[1]);
                let d = self.value(b).len();
                if needs(&x) {
                    let mut dx = g.clone();
                    let bias = self.value(b).data();
                    for row in dx.data_mut().chunks_mut(d) {
                        for (o, &bv) in row.iter_mut().zip(bias) {
                            *o *= bv;
                        }
                    }
                    self.accumulate(grads, x, dx);
                }
                if needs(&b) {
                    let mut db = Tensor::zeros(&[d]);
                    for (grow, xrow) in g.data().chunks(d).zip(self.value(x).data().chunks(d)) {
                        for ((o, &gv), &xv) in db.data_mut().iter_mut().zip(grow).zip(xrow) {
                            *o += gv * xv;
                        }
                    }
                    self.accumulate(grads, b, db);
                }
            }
            Op::MeanAxis0 => {
                let a = node.inputs[0];
                let (m, d) = (self.shape(a)[0], self.shape(a)[1]);
                let inv = T::one() / T::from_f64(m as f64);
                let mut da = Tensor::zeros(self.shape(a));
                for row in da.data_mut().chunks_mut(d) {
                    for (o, &v) in row.iter_mut().zip(g.data()) {
                        *o = v * inv;
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::SumAxisLast => {
                let a = node.inputs[0];
                let d = self.value(a).last_dim();
                let mut da = Tensor::zeros(self.shape(a));
                for (r, row) in da.data_mut().chunks_mut(d).enumerate() {
                    let gv = g.data()[r];
                    for v in row.iter_mut() {
                        *v = gv;
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::MulBcastLast => {
                let (x, s) = (node.inputs[0], node.inputs[1]);
                let d = self.value(x).last_dim();
                if needs(&x) {
                    let mut dx = g.clone();
                    for (r, row) in dx.data_mut().chunks_mut(d).enumerate() {
                        let c = self.value(s).data()[r];
                        for v in row.iter_mut() {
                            *v *= c;
                        }
                    }
                    self.accumulate(grads, x, dx);
                }
                if needs(&s) {
                    let mut ds = Tensor::zeros(self.shape(s));
                    for (r, (grow, xrow)) in
                        g.data().chunks(d).zip(self.value(x).data().chunks(d)).enumerate()
                    {
                        let mut acc = T::zero();
                        for (&gv, &xv) in grow.iter().zip(xrow) {
                            acc += gv * xv;
                        }
                        ds.data_mut()[r] = acc;
                    }
                    self.accumulate(grads, s, ds);
                }
            }
            Op::MulScalarVar => {
                let (x, s) = (node.inputs[0], node.inputs[1]);
                let c = self.value(s).data()[0];
                if needs(&x) {
                    self.accumulate(grads, x, g.map(|v| v * c));
                }
                if needs(&s) {
                    let mut acc = T::zero();
                    for (&gv, &xv) in g.data().iter().zip(self.value(x).data()) {
                        acc += gv * xv;
                    }
                    self.accumulate(grads, s, Tensor::scalar(acc));
                }
            }
            Op::SliceLast { start, len } => {
                let a = node.inputs[0];
                let d = self.value(a).last_dim();
                let mut da = Tensor::zeros(self.shape(a));
                for (r, grow) in g.data().chunks(*len).enumerate() {
                    let dst = &mut da.data_mut()[r * d + start..r * d + start + len];
                    for (o, &v) in dst.iter_mut().zip(grow) {
                        *o = v;
                    }
                }
                self.accumulate(grads, a, da);
            }
            Op::StackRows => {
                let len = self.value(node.inputs[0]).len();
                for (r, &p) in node.inputs.iter().enumerate() {
                    if !needs(&p) {
                        continue;
                    }
                    let mut dp = Tensor::zeros(self.shape(p));
                    dp.data_mut().copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                    self.accumulate(grads, p, dp);
                }
            }
            Op::ConcatLast => {
                let (a, b) = (node.inputs[0], node.inputs[1]);
                let (da_dim, db_dim) = (self.value(a).last_dim(), self.value(b).last_dim());
                let total = da_dim + db_dim;
                if needs(&a) {
                    let mut da = Tensor::zeros(self.shape(a));
                    for (r, grow) in g.data().chunks(total).enumerate() {
                        da.data_mut()[r * da_dim..(r + 1) * da_dim].copy_from_slice(&grow[..da_dim]);
                    }
                    self.accumulate(grads, a, da);
                }
                if needs(&b) {
                    let mut db = Tensor::zeros(self.shape(b));
                    for (r, grow) in g.data().chunks(total).enumerate() {
                        db.data_mut()[r * db_dim..(r + 1) * db_dim].copy_from_slice(&grow[da_dim..]);
                    }
                    self.accumulate(grads, b, db);
                }
            }
        }
        Ok(())
    }
}

fn inverse_perm3(perm: [usize; 3]) -> [usize; 3] {
    let mut inv = [0usize; 3];
    for (a, &p) in perm.iter().enumerate() {
        inv[p] = a;
    }
    inv
}

fn permute3_tensor<T: Element>(x: &Tensor<T>, perm: [usize; 3]) -> Result<Tensor<T>> {
    let s = x.shape();
    let out_shape = [s[perm[0]], s[perm[1]], s[perm[2]]];
    let strides = [s[1] * s[2], s[2], 1];
    let (p0, p1, p2) = (strides[perm[0]], strides[perm[1]], strides[perm[2]]);
    let mut data = vec![T::zero(); x.len()];
    let src = x.data();
    let mut idx = 0;
    for i0 in 0..out_shape[0] {
        for i1 in 0..out_shape[1] {
            let base = i0 * p0 + i1 * p1;
            for i2 in 0..out_shape[2] {
                data[idx] = src[base + i2 * p2];
                idx += 1;
            }
        }
    }
    Tensor::new(out_shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_identity_is_identity() {
        let mut tape = Tape::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = Tensor::randn(&[4, 4], &mut rng);
        let va = tape.leaf(a.clone(), false);
        let vi = tape.constant(Tensor::eye(4));
        let out = tape.matmul(va, vi).unwrap();
        assert!(tape.value(out).max_abs_diff(&a).unwrap() < 1e-15);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.leaf(Tensor::randn(&[5, 7], &mut rng), false);
        let y = tape.softmax(x);
        for row in tape.value(y).data().chunks(7) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn attention_one_hot_saturated_returns_values() {
        // q = k = scaled identity rows; saturated logits make softmax one-hot.
        let mut tape = Tape::<f64>::new();
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let big = {
            let mut t = Tensor::<f64>::eye(n);
            for v in t.data_mut().iter_mut() {
                *v *= 1e4;
            }
            t
        };
        let q = tape.constant(big.clone());
        let k = tape.constant(Tensor::eye(n));
        let vv = Tensor::randn(&[n, 3], &mut rng);
        let v = tape.constant(vv.clone());
        let out = tape.attention(q, k, v).unwrap();
        assert!(tape.value(out).max_abs_diff(&vv).unwrap() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_argument_error() {
        let mut tape = Tape::<f32>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[3, 3]));
        assert!(tape.add(a, b).is_err());
        assert!(tape.mse(a, b).is_err());
        let c = tape.constant(Tensor::zeros(&[4, 2]));
        assert!(tape.matmul(a, c).is_err());
    }

    #[test]
    fn forward_determinism_bit_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(33);
            let mut tape = Tape::<f32>::new();
            let x = tape.leaf(Tensor::randn(&[3, 6], &mut rng), false);
            let w = tape.leaf(Tensor::randn(&[6, 6], &mut rng), false);
            let h = tape.matmul(x, w).unwrap();
            let h = tape.silu(h);
            let y = tape.softmax(h);
            tape.value(y).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn backward_simple_chain() {
        // f(x) = sum(x * x): grad = 2x
        let mut tape = Tape::<f64>::new();
        let x0 = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let x = tape.leaf(x0.clone(), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x).unwrap();
        for (g, v) in gx.data().iter().zip(x0.data()) {
            assert!((g - 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_from_non_scalar_errors() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 2]), true);
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn nan_surfaces_at_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::full(&[2], -1.0), true);
        let l = tape.ln(x); // NaN values
        let err = tape.mean(l);
        assert!(matches!(err, Err(crate::error::Error::NonFinite(_))));
    }

    #[test]
    fn permute3_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::randn(&[2, 3, 4], &mut rng);
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let p = tape.permute3(v, [2, 0, 1]).unwrap();
        assert_eq!(tape.shape(p), &[4, 2, 3]);
        let back = tape.permute3(p, [1, 2, 0]).unwrap();
        assert!(tape.value(back).max_abs_diff(&x).unwrap() == 0.0);
    }

    #[test]
    fn l2_normalize_rows_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::randn(&[6, 9], &mut rng), false);
        let y = tape.l2_normalize_rows(x, 1e-12).unwrap();
        for row in tape.value(y).data().chunks(9) {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }
}
