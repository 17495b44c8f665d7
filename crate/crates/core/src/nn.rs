//! Layers and parameter management on top of the tape.
//!
//! A model owns a [`ParamStore`]; every training step injects the
//! parameters into a fresh [`Tape`] (via [`ParamStore::inject`]), runs
//! forward/backward, and applies the optimizer to the store. Layers
//! hold [`ParamId`] handles, never tensors, so the same layer structs
//! drive both training and inference.

use crate::checkpoint::Archive;
use crate::error::{Error, Result};
use crate::tensor::{Element, Gradients, Tape, Tensor, Var};
use rand::Rng;

/// Handle to one named parameter in a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered, named parameter set.
#[derive(Clone, Debug)]
pub struct ParamStore<T = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Element> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, t: Tensor<T>) {
        assert_eq!(self.tensors[id.0].shape(), t.shape(), "parameter shape change");
        self.tensors[id.0] = t;
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Put every parameter on a tape. With `trainable == false` the
    /// parameters enter as constants (frozen weights).
    pub fn inject(&self, tape: &mut Tape<T>, trainable: bool) -> TapeParams {
        let vars = self.tensors.iter().map(|t| tape.leaf(t.clone(), trainable)).collect();
        TapeParams { vars }
    }

    /// Gradient per parameter, aligned with store order.
    pub fn collect_grads(&self, tp: &TapeParams, grads: &mut Gradients<T>) -> Vec<Option<Tensor<T>>> {
        tp.vars.iter().map(|&v| grads.take(v)).collect()
    }

    pub fn to_archive(&self) -> Archive {
        let mut ar = Archive::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            ar.push(n.clone(), t);
        }
        ar
    }

    /// Load values by name from an archive. Every store parameter must
    /// be present with a matching shape.
    pub fn load_from(&mut self, ar: &Archive) -> Result<()> {
        for (n, t) in self.names.iter().zip(self.tensors.iter_mut()) {
            let loaded: Tensor<T> = ar.require(n)?;
            if loaded.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "checkpoint tensor '{n}' has shape {:?}, expected {:?}",
                    loaded.shape(),
                    t.shape()
                )));
            }
            *t = loaded;
        }
        Ok(())
    }
}

/// Parameter vars for one forward pass.
pub struct TapeParams {
    vars: Vec<Var>,
}

impl TapeParams {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// N(0, std²) scaled by 1/√fan_in.
    ScaledNormal,
    /// All zeros (for residual-exit projections).
    Zero,
}

fn init_weight<T: Element, R: Rng>(shape: &[usize], fan_in: usize, init: Init, rng: &mut R) -> Tensor<T> {
    match init {
        Init::ScaledNormal => {
            let std = T::from_f64(1.0 / (fan_in as f64).sqrt());
            let mut t = Tensor::randn(shape, rng);
            for v in t.data_mut().iter_mut() {
                *v *= std;
            }
            t
        }
        Init::Zero => Tensor::zeros(shape),
    }
}

/// Affine layer over the last axis: y = x W + b.
#[derive(Clone, Debug)]
pub struct Linear {
    w: ParamId,
    b: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<T: Element, R: Rng>(
        ps: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), init_weight(&[in_dim, out_dim], in_dim, init, rng));
        let b = Some(ps.add(format!("{name}.b"), Tensor::zeros(&[out_dim])));
        Self { w, b, in_dim, out_dim }
    }

    pub fn new_no_bias<T: Element, R: Rng>(
        ps: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), init_weight(&[in_dim, out_dim], in_dim, init, rng));
        Self { w, b: None, in_dim, out_dim }
    }

    /// Applies to the last axis of an input of any rank.
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, tp: &TapeParams, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::Argument("linear on rank-0 input".into()))?;
        if d != self.in_dim {
            return Err(Error::Shape {
                op: "linear",
                detail: format!("input last dim {} vs layer in_dim {}", d, self.in_dim),
            });
        }
        let rows: usize = shape[..shape.len() - 1].iter().product();
        let x2 = tape.reshape(x, &[rows, d])?;
        let mut h = tape.matmul(x2, tp.var(self.w))?;
        if let Some(b) = self.b {
            h = tape.add_bias(h, tp.var(b))?;
        }
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = self.out_dim;
        tape.reshape(h, &out_shape)
    }
}

/// 1-D convolution layer along the last axis of [B, C, L] input.
#[derive(Clone, Debug)]
pub struct Conv1d {
    w: ParamId,
    b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Element, R: Rng>(
        ps: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
    ) -> Self {
        let w = ps.add(
            format!("{name}.w"),
            init_weight(&[c_out, c_in, kernel], c_in * kernel, init, rng),
        );
        let b = ps.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Self { w, b, c_in, c_out, kernel, stride, padding }
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, tp: &TapeParams, x: Var) -> Result<Var> {
        tape.conv1d(x, tp.var(self.w), tp.var(self.b), self.stride, self.padding)
    }
}

/// Layer normalization with learned affine parameters.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
    pub dim: usize,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Element>(ps: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        let gamma = ps.add(format!("{name}.gamma"), Tensor::full(&[dim], T::one()));
        let beta = ps.add(format!("{name}.beta"), Tensor::zeros(&[dim]));
        Self { gamma, beta, dim, eps: 1e-5 }
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, tp: &TapeParams, x: Var) -> Result<Var> {
        tape.layer_norm(x, tp.var(self.gamma), tp.var(self.beta), self.eps)
    }
}

/// Multi-head scaled dot-product attention.
///
/// Queries come from `xq` [B, L, d], keys/values from `xkv` [B, S, d];
/// self-attention passes the same var for both.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<T: Element, R: Rng>(
        ps: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        kv_dim: usize,
        heads: usize,
        zero_out: bool,
    ) -> Self {
        assert!(dim % heads == 0, "dim {dim} not divisible by heads {heads}");
        let wq = Linear::new(ps, rng, &format!("{name}.q"), dim, dim, Init::ScaledNormal);
        let wk = Linear::new(ps, rng, &format!("{name}.k"), kv_dim, dim, Init::ScaledNormal);
        let wv = Linear::new(ps, rng, &format!("{name}.v"), kv_dim, dim, Init::ScaledNormal);
        let wo = Linear::new(
            ps,
            rng,
            &format!("{name}.o"),
            dim,
            dim,
            if zero_out { Init::Zero } else { Init::ScaledNormal },
        );
        Self { wq, wk, wv, wo, heads, dim }
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        tp: &TapeParams,
        xq: Var,
        xkv: Var,
    ) -> Result<Var> {
        let q = self.wq.forward(tape, tp, xq)?;
        let k = self.wk.forward(tape, tp, xkv)?;
        let v = self.wv.forward(tape, tp, xkv)?;
        let dh = self.dim / self.heads;
        let mut merged: Option<Var> = None;
        for h in 0..self.heads {
            let qh = tape.slice_last(q, h * dh, dh)?;
            let kh = tape.slice_last(k, h * dh, dh)?;
            let vh = tape.slice_last(v, h * dh, dh)?;
            let ah = tape.attention(qh, kh, vh)?;
            merged = Some(match merged {
                None => ah,
                Some(m) => tape.concat_last(m, ah)?,
            });
        }
        self.wo.forward(tape, tp, merged.expect("at least one head"))
    }
}

/// Two-layer feed-forward block with SiLU.
#[derive(Clone, Debug)]
pub struct FeedForward {
    fc1: Linear,
    fc2: Linear,
}

impl FeedForward {
    pub fn new<T: Element, R: Rng>(
        ps: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        dim: usize,
        hidden: usize,
        zero_out: bool,
    ) -> Self {
        let fc1 = Linear::new(ps, rng, &format!("{name}.fc1"), dim, hidden, Init::ScaledNormal);
        let fc2 = Linear::new(
            ps,
            rng,
            &format!("{name}.fc2"),
            hidden,
            dim,
            if zero_out { Init::Zero } else { Init::ScaledNormal },
        );
        Self { fc1, fc2 }
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, tp: &TapeParams, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, tp, x)?;
        let h = tape.silu(h);
        self.fc2.forward(tape, tp, h)
    }
}

/// Fixed sinusoidal embeddings for integer positions: [len, dim].
pub fn sinusoidal_embedding<T: Element>(positions: &[f64], dim: usize) -> Tensor<T> {
    assert!(dim % 2 == 0, "sinusoidal dim must be even");
    let half = dim / 2;
    let mut data = Vec::with_capacity(positions.len() * dim);
    for &p in positions {
        for i in 0..half {
            let freq = (10_000f64).powf(-(i as f64) / half as f64);
            data.push(T::from_f64((p * freq).sin()));
        }
        for i in 0..half {
            let freq = (10_000f64).powf(-(i as f64) / half as f64);
            data.push(T::from_f64((p * freq).cos()));
        }
    }
    Tensor::new(vec![positions.len(), dim], data).expect("shape consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check_multi;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_shapes_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamStore::<f64>::new();
        let lin = Linear::new(&mut ps, &mut rng, "l", 5, 4, Init::ScaledNormal);
        let x = Tensor::<f64>::randn(&[2, 3, 5], &mut rng);

        let mut tape = Tape::new();
        let tp = ps.inject(&mut tape, true);
        let vx = tape.leaf(x.clone(), false);
        let y = lin.forward(&mut tape, &tp, vx).unwrap();
        assert_eq!(tape.shape(y), &[2, 3, 4]);

        // FD check through the layer wrt weights
        let w0 = ps.get(ParamId(0)).clone();
        let b0 = ps.get(ParamId(1)).clone();
        let err = gradient_check_multi(
            |tape, vs| {
                let vx = tape.leaf(x.clone(), false);
                let x2 = tape.reshape(vx, &[6, 5])?;
                let h = tape.matmul(x2, vs[0])?;
                let h = tape.add_bias(h, vs[1])?;
                tape.mean(h)
            },
            &[w0, b0],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn mha_cross_attention_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut ps = ParamStore::<f32>::new();
        let mha = MultiHeadAttention::new(&mut ps, &mut rng, "attn", 8, 16, 2, false);
        let mut tape = Tape::new();
        let tp = ps.inject(&mut tape, false);
        let xq = tape.constant(Tensor::randn(&[3, 5, 8], &mut rng));
        let xkv = tape.constant(Tensor::randn(&[3, 1, 16], &mut rng));
        let y = mha.forward(&mut tape, &tp, xq, xkv).unwrap();
        assert_eq!(tape.shape(y), &[3, 5, 8]);
    }

    #[test]
    fn store_checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut ps = ParamStore::<f32>::new();
        let _ = Linear::new(&mut ps, &mut rng, "a", 3, 3, Init::ScaledNormal);
        let _ = LayerNorm::new(&mut ps, "ln", 3);
        let ar = ps.to_archive();

        let mut ps2 = ParamStore::<f32>::new();
        let _ = Linear::new(&mut ps2, &mut rng, "a", 3, 3, Init::ScaledNormal);
        let _ = LayerNorm::new(&mut ps2, "ln", 3);
        ps2.load_from(&ar).unwrap();
        for (a, b) in ps.tensors_mut().iter().zip(ps2.tensors_mut()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sinusoidal_embedding_is_position_sensitive() {
        let e = sinusoidal_embedding::<f64>(&[0.0, 1.0, 2.0], 8);
        assert_eq!(e.shape(), &[3, 8]);
        let r0 = &e.data()[0..8];
        let r1 = &e.data()[8..16];
        assert!(r0.iter().zip(r1).any(|(a, b)| (a - b).abs() > 1e-3));
    }
}
