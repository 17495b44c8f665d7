//! Latent diffusion transformer over pose-sequence latents.
//!
//! Tokens are patch embeddings of two adjacent latent points per
//! frame. Each block runs local feature aggregation (a kernel-3 1-D
//! ResNet over the point axis followed by spatial self-attention),
//! cross-attention to the text condition, temporal attention across
//! frames, and a feed-forward layer, all modulated by the timestep
//! embedding through adaptive layer norm. One full self-attention over
//! every (frame, point) position sits after the central block; its
//! output feeds the alignment projection.

use crate::checkpoint::Archive;
use crate::error::{Error, Result};
use crate::nn::{
    sinusoidal_embedding, Conv1d, Init, LayerNorm, Linear, MultiHeadAttention, ParamStore,
    TapeParams,
};
use crate::tensor::{Element, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Distance used by the alignment loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LamaMetric {
    Cosine,
    Mse,
}

#[derive(Clone, Debug)]
pub struct DitConfig {
    pub layers: usize,
    /// Model width d.
    pub width: usize,
    pub heads: usize,
    /// Patch size along the point axis.
    pub patch: usize,
    /// Latent points per frame (n) entering the patch embedding.
    pub latent_points: usize,
    pub latent_channels: usize,
    /// Conditioning vector width (pooled text embedding).
    pub cond_dim: usize,
    /// Block whose output feeds the alignment projection.
    pub lama_layer: usize,
    /// Output width of the alignment projection (CLoP embedding dim).
    pub lama_dim: usize,
    pub lama_metric: LamaMetric,
    /// Central full self-attention over all (frame, point) positions.
    pub global_attention: bool,
    /// Diagnostic ablation: restrict spatial and temporal attention to
    /// single-token windows, leaving global attention as the only
    /// cross-(frame, point) path.
    pub window_one: bool,
}

impl Default for DitConfig {
    fn default() -> Self {
        Self {
            layers: 13,
            width: 128,
            heads: 4,
            patch: 2,
            latent_points: 16,
            latent_channels: 4,
            cond_dim: crate::clop::CONDITION_DIM,
            lama_layer: 6,
            lama_dim: 256,
            lama_metric: LamaMetric::Cosine,
            global_attention: true,
            window_one: false,
        }
    }
}

impl DitConfig {
    /// Tokens per frame after patching.
    pub fn tokens_per_frame(&self) -> usize {
        self.latent_points / self.patch
    }

    /// Central block index, where the global attention sits.
    pub fn center(&self) -> usize {
        self.layers / 2
    }
}

/// Conditioning inputs for one denoising call.
#[derive(Clone, Debug)]
pub struct ConditionBundle<T = f32> {
    /// Pooled text embedding, [cond_dim].
    pub text_embedding: Tensor<T>,
    pub timestep: usize,
    pub t_max: usize,
}

impl<T: Element> ConditionBundle<T> {
    pub fn new(text_embedding: Tensor<T>, timestep: usize, t_max: usize) -> Result<Self> {
        if timestep >= t_max {
            return Err(Error::Argument(format!("timestep {timestep} outside [0, {t_max})")));
        }
        if !text_embedding.is_all_finite() {
            return Err(Error::NonFinite("text embedding".into()));
        }
        Ok(Self { text_embedding, timestep, t_max })
    }
}

/// Number of adaLN parameter vectors per block: shift/scale/gate for
/// each of spatial attention, cross attention, temporal attention, FFN.
const MOD_CHUNKS: usize = 12;

struct DitBlock {
    res_conv1: Conv1d,
    res_conv2: Conv1d,
    ln_spatial: LayerNorm,
    spatial: MultiHeadAttention,
    ln_cross: LayerNorm,
    cross: MultiHeadAttention,
    ln_temporal: LayerNorm,
    temporal: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn_fc1: Linear,
    ffn_fc2: Linear,
    modulation: Linear,
}

impl DitBlock {
    fn new<T: Element>(
        ps: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &DitConfig,
    ) -> Self {
        let d = cfg.width;
        Self {
            res_conv1: Conv1d::new(ps, rng, &format!("{name}.res.conv1"), d, d, 3, 1, 1, Init::ScaledNormal),
            res_conv2: Conv1d::new(ps, rng, &format!("{name}.res.conv2"), d, d, 3, 1, 1, Init::Zero),
            ln_spatial: LayerNorm::new(ps, &format!("{name}.ln_spatial"), d),
            spatial: MultiHeadAttention::new(ps, rng, &format!("{name}.spatial"), d, d, cfg.heads, false),
            ln_cross: LayerNorm::new(ps, &format!("{name}.ln_cross"), d),
            cross: MultiHeadAttention::new(ps, rng, &format!("{name}.cross"), d, cfg.cond_dim, cfg.heads, false),
            ln_temporal: LayerNorm::new(ps, &format!("{name}.ln_temporal"), d),
            temporal: MultiHeadAttention::new(ps, rng, &format!("{name}.temporal"), d, d, cfg.heads, false),
            ln_ffn: LayerNorm::new(ps, &format!("{name}.ln_ffn"), d),
            ffn_fc1: Linear::new(ps, rng, &format!("{name}.ffn.fc1"), d, d * 4, Init::ScaledNormal),
            ffn_fc2: Linear::new(ps, rng, &format!("{name}.ffn.fc2"), d * 4, d, Init::ScaledNormal),
            // zero-init: every gated sublayer starts as identity
            modulation: Linear::new(ps, rng, &format!("{name}.mod"), d, d * MOD_CHUNKS, Init::Zero),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        tp: &TapeParams,
        x: Var, // [f, m, d]
        cond: Var, // [1, d]
        text_kv: Var, // [f, 1, cond_dim]
        cfg: &DitConfig,
    ) -> Result<Var> {
        let (f, m, d) = dims3(tape, x)?;
        let mods = {
            let c = tape.silu(cond);
            let mv = self.modulation.forward(tape, tp, c)?; // [1, 12d]
            let mut out = Vec::with_capacity(MOD_CHUNKS);
            for k in 0..MOD_CHUNKS {
                let s = tape.slice_last(mv, k * d, d)?;
                out.push(tape.reshape(s, &[d])?);
            }
            out
        };

        // local feature aggregation: kernel-3 ResNet over the point
        // axis, frames as batch, then spatial self-attention
        let mut h = {
            let xc = tape.permute3(x, [0, 2, 1])?; // [f, d, m]
            let r = self.res_conv1.forward(tape, tp, xc)?;
            let r = tape.silu(r);
            let r = self.res_conv2.forward(tape, tp, r)?;
            let r = tape.permute3(r, [0, 2, 1])?;
            tape.add(x, r)?
        };

        // spatial self-attention within each frame
        h = {
            let n = self.ln_spatial.forward(tape, tp, h)?;
            let n = modulate(tape, n, mods[0], mods[1])?;
            let (n, back) = window(tape, n, cfg.window_one, f, m, d)?;
            let a = self.spatial.forward(tape, tp, n, n)?;
            let a = unwindow(tape, a, back, f, m, d)?;
            let a = tape.mul_bias(a, mods[2])?;
            tape.add(h, a)?
        };

        // cross-attention to the pooled text token
        h = {
            let n = self.ln_cross.forward(tape, tp, h)?;
            let n = modulate(tape, n, mods[3], mods[4])?;
            let a = self.cross.forward(tape, tp, n, text_kv)?;
            let a = tape.mul_bias(a, mods[5])?;
            tape.add(h, a)?
        };

        // temporal attention across frames, per point
        h = {
            let n = self.ln_temporal.forward(tape, tp, h)?;
            let n = modulate(tape, n, mods[6], mods[7])?;
            let nt = tape.permute3(n, [1, 0, 2])?; // [m, f, d]
            let (nt, back) = window(tape, nt, cfg.window_one, m, f, d)?;
            let a = self.temporal.forward(tape, tp, nt, nt)?;
            let a = unwindow(tape, a, back, m, f, d)?;
            let a = tape.permute3(a, [1, 0, 2])?;
            let a = tape.mul_bias(a, mods[8])?;
            tape.add(h, a)?
        };

        // feed-forward
        h = {
            let n = self.ln_ffn.forward(tape, tp, h)?;
            let n = modulate(tape, n, mods[9], mods[10])?;
            let a = self.ffn_fc1.forward(tape, tp, n)?;
            let a = tape.silu(a);
            let a = self.ffn_fc2.forward(tape, tp, a)?;
            let a = tape.mul_bias(a, mods[11])?;
            tape.add(h, a)?
        };
        Ok(h)
    }
}

fn dims3<T: Element>(tape: &Tape<T>, x: Var) -> Result<(usize, usize, usize)> {
    let s = tape.shape(x);
    if s.len() != 3 {
        return Err(Error::Shape { op: "dit", detail: format!("expected rank 3, got {:?}", s) });
    }
    Ok((s[0], s[1], s[2]))
}

/// x ⊙ (1 + scale) + shift, broadcast over the last axis.
fn modulate<T: Element>(tape: &mut Tape<T>, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let s1 = tape.add_scalar(scale, 1.0);
    let h = tape.mul_bias(x, s1)?;
    tape.add_bias(h, shift)
}

/// Reshape [b, l, d] to [b·l, 1, d] when single-token windowing is on.
fn window<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    on: bool,
    b: usize,
    l: usize,
    d: usize,
) -> Result<(Var, bool)> {
    if on {
        Ok((tape.reshape(x, &[b * l, 1, d])?, true))
    } else {
        Ok((x, false))
    }
}

fn unwindow<T: Element>(
    tape: &mut Tape<T>,
    x: Var,
    windowed: bool,
    b: usize,
    l: usize,
    d: usize,
) -> Result<Var> {
    if windowed {
        tape.reshape(x, &[b, l, d])
    } else {
        Ok(x)
    }
}

/// The denoising network ε_pred = g(z_t, t, s).
pub struct MotionDit<T = f32> {
    pub cfg: DitConfig,
    pub params: ParamStore<T>,
    patch_proj: Linear,
    time_fc1: Linear,
    time_fc2: Linear,
    blocks: Vec<DitBlock>,
    global_ln: LayerNorm,
    global_attn: MultiHeadAttention,
    final_ln: LayerNorm,
    final_mod: Linear,
    unpatch_proj: Linear,
    lama_fc1: Linear,
    lama_fc2: Linear,
}

/// Captured mid-network features for the alignment loss.
pub struct LamaTap {
    pub layer_index: usize,
    pub features: Var,
}

impl<T: Element> MotionDit<T> {
    pub fn new(cfg: DitConfig, seed: u64) -> Result<Self> {
        if cfg.latent_points % cfg.patch != 0 {
            return Err(Error::Config(format!(
                "latent points {} not divisible by patch {}",
                cfg.latent_points, cfg.patch
            )));
        }
        if cfg.lama_layer >= cfg.layers {
            return Err(Error::Config(format!(
                "lama layer {} outside [0, {})",
                cfg.lama_layer, cfg.layers
            )));
        }
        if cfg.width % cfg.heads != 0 {
            return Err(Error::Config(format!(
                "width {} not divisible by heads {}",
                cfg.width, cfg.heads
            )));
        }
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.width;
        let patch_in = cfg.patch * cfg.latent_channels;

        let patch_proj = Linear::new(&mut ps, &mut rng, "dit.patch", patch_in, d, Init::ScaledNormal);
        let time_fc1 = Linear::new(&mut ps, &mut rng, "dit.time.fc1", d, d, Init::ScaledNormal);
        let time_fc2 = Linear::new(&mut ps, &mut rng, "dit.time.fc2", d, d, Init::ScaledNormal);
        let blocks = (0..cfg.layers)
            .map(|i| DitBlock::new(&mut ps, &mut rng, &format!("dit.block{i}"), &cfg))
            .collect();
        let global_ln = LayerNorm::new(&mut ps, "dit.global.ln", d);
        let global_attn =
            MultiHeadAttention::new(&mut ps, &mut rng, "dit.global.attn", d, d, cfg.heads, true);
        let final_ln = LayerNorm::new(&mut ps, "dit.final.ln", d);
        let final_mod = Linear::new(&mut ps, &mut rng, "dit.final.mod", d, 2 * d, Init::Zero);
        let unpatch_proj = Linear::new(&mut ps, &mut rng, "dit.unpatch", d, patch_in, Init::Zero);
        let lama_fc1 = Linear::new(&mut ps, &mut rng, "dit.lama.fc1", d, d, Init::ScaledNormal);
        let lama_fc2 = Linear::new(&mut ps, &mut rng, "dit.lama.fc2", d, cfg.lama_dim, Init::ScaledNormal);

        Ok(Self {
            cfg,
            params: ps,
            patch_proj,
            time_fc1,
            time_fc2,
            blocks,
            global_ln,
            global_attn,
            final_ln,
            final_mod,
            unpatch_proj,
            lama_fc1,
            lama_fc2,
        })
    }

    /// Patch embedding: two adjacent latent points per token, linearly
    /// projected to the model width. [f, n, c] -> [f, n/patch, d].
    pub fn patch_embed_t(&self, tape: &mut Tape<T>, tp: &TapeParams, z: Var) -> Result<Var> {
        let (f, n, c) = dims3(tape, z)?;
        if n != self.cfg.latent_points || c != self.cfg.latent_channels {
            return Err(Error::Shape {
                op: "patch_embed",
                detail: format!(
                    "{:?} vs [f, {}, {}]",
                    tape.shape(z),
                    self.cfg.latent_points,
                    self.cfg.latent_channels
                ),
            });
        }
        let m = n / self.cfg.patch;
        let grouped = tape.reshape(z, &[f, m, self.cfg.patch * c])?;
        self.patch_proj.forward(tape, tp, grouped)
    }

    /// Timestep embedding: sinusoidal features through a two-layer MLP.
    fn time_embed_t(&self, tape: &mut Tape<T>, tp: &TapeParams, t: usize) -> Result<Var> {
        let sinus = sinusoidal_embedding::<T>(&[t as f64], self.cfg.width);
        let v = tape.constant(sinus);
        let h = self.time_fc1.forward(tape, tp, v)?;
        let h = tape.silu(h);
        self.time_fc2.forward(tape, tp, h)
    }

    /// Full self-attention across all (frame, point) positions.
    pub fn global_attention_t(&self, tape: &mut Tape<T>, tp: &TapeParams, x: Var) -> Result<Var> {
        let (f, m, d) = dims3(tape, x)?;
        let flat = tape.reshape(x, &[1, f * m, d])?;
        let n = self.global_ln.forward(tape, tp, flat)?;
        let a = self.global_attn.forward(tape, tp, n, n)?;
        let h = tape.add(flat, a)?;
        tape.reshape(h, &[f, m, d])
    }

    /// Tape-level forward for one latent sample [f, n, c]. Returns the
    /// noise prediction and the captured mid-layer features.
    pub fn forward_t(
        &self,
        tape: &mut Tape<T>,
        tp: &TapeParams,
        z_t: Var,
        cond: &ConditionBundle<T>,
    ) -> Result<(Var, LamaTap)> {
        if cond.text_embedding.len() != self.cfg.cond_dim {
            return Err(Error::Shape {
                op: "dit.forward",
                detail: format!(
                    "text embedding {} dims vs cond_dim {}",
                    cond.text_embedding.len(),
                    self.cfg.cond_dim
                ),
            });
        }
        let (f, _, c) = dims3(tape, z_t)?;
        let mut x = self.patch_embed_t(tape, tp, z_t)?;
        let t_emb = self.time_embed_t(tape, tp, cond.timestep)?; // [1, d]

        // one text token per frame batch for cross-attention
        let text_kv = {
            let mut data = Vec::with_capacity(f * self.cfg.cond_dim);
            for _ in 0..f {
                data.extend(cond.text_embedding.data().iter().copied());
            }
            let t = Tensor::new(vec![f, 1, self.cfg.cond_dim], data)?;
            tape.constant(t)
        };

        let mut tap: Option<Var> = None;
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(tape, tp, x, t_emb, text_kv, &self.cfg)?;
            if i == self.cfg.center() && self.cfg.global_attention {
                x = self.global_attention_t(tape, tp, x)?;
            }
            if !tape.value(x).is_all_finite() {
                return Err(Error::NonFinite(format!("dit block {i} output")));
            }
            if i == self.cfg.lama_layer {
                tap = Some(x);
            }
        }

        // final adaLN-modulated projection back to latent shape
        let out = {
            let n = self.final_ln.forward(tape, tp, x)?;
            let cm = tape.silu(t_emb);
            let mv = self.final_mod.forward(tape, tp, cm)?;
            let d = self.cfg.width;
            let shift = tape.slice_last(mv, 0, d)?;
            let shift = tape.reshape(shift, &[d])?;
            let scale = tape.slice_last(mv, d, d)?;
            let scale = tape.reshape(scale, &[d])?;
            let n = modulate(tape, n, shift, scale)?;
            let p = self.unpatch_proj.forward(tape, tp, n)?;
            tape.reshape(p, &[f, self.cfg.latent_points, c])?
        };
        let tap = LamaTap { layer_index: self.cfg.lama_layer, features: tap.expect("lama layer visited") };
        Ok((out, tap))
    }

    /// Alignment head: mean-pool the tapped features over frames and
    /// points, then a two-layer MLP to the CLoP embedding width.
    pub fn lama_projection_t(&self, tape: &mut Tape<T>, tp: &TapeParams, tap: &LamaTap) -> Result<Var> {
        let (f, m, d) = dims3(tape, tap.features)?;
        let flat = tape.reshape(tap.features, &[f * m, d])?;
        let pooled = tape.mean_axis0(flat)?;
        let pooled = tape.reshape(pooled, &[1, d])?;
        let h = self.lama_fc1.forward(tape, tp, pooled)?;
        let h = tape.silu(h);
        self.lama_fc2.forward(tape, tp, h)
    }

    /// Tensor-level forward (inference).
    pub fn forward(&self, z_t: &Tensor<T>, cond: &ConditionBundle<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let tp = self.params.inject(&mut tape, false);
        let vz = tape.leaf(z_t.clone(), false);
        let (eps, _) = self.forward_t(&mut tape, &tp, vz, cond)?;
        Ok(tape.value(eps).clone())
    }

    pub fn checkpoint(&self) -> Archive {
        let mut ar = self.params.to_archive();
        ar.push_scalar("__config.layers", self.cfg.layers as f64);
        ar.push_scalar("__config.width", self.cfg.width as f64);
        ar.push_scalar("__config.heads", self.cfg.heads as f64);
        ar.push_scalar("__config.patch", self.cfg.patch as f64);
        ar.push_scalar("__config.latent_points", self.cfg.latent_points as f64);
        ar.push_scalar("__config.latent_channels", self.cfg.latent_channels as f64);
        ar.push_scalar("__config.cond_dim", self.cfg.cond_dim as f64);
        ar.push_scalar("__config.lama_layer", self.cfg.lama_layer as f64);
        ar.push_scalar("__config.lama_dim", self.cfg.lama_dim as f64);
        ar.push_scalar(
            "__config.lama_metric",
            if self.cfg.lama_metric == LamaMetric::Cosine { 0.0 } else { 1.0 },
        );
        ar.push_scalar("__config.global_attention", if self.cfg.global_attention { 1.0 } else { 0.0 });
        ar
    }

    pub fn from_checkpoint(ar: &Archive) -> Result<Self> {
        let cfg = DitConfig {
            layers: ar.scalar("__config.layers")? as usize,
            width: ar.scalar("__config.width")? as usize,
            heads: ar.scalar("__config.heads")? as usize,
            patch: ar.scalar("__config.patch")? as usize,
            latent_points: ar.scalar("__config.latent_points")? as usize,
            latent_channels: ar.scalar("__config.latent_channels")? as usize,
            cond_dim: ar.scalar("__config.cond_dim")? as usize,
            lama_layer: ar.scalar("__config.lama_layer")? as usize,
            lama_dim: ar.scalar("__config.lama_dim")? as usize,
            lama_metric: if ar.scalar("__config.lama_metric")? == 0.0 {
                LamaMetric::Cosine
            } else {
                LamaMetric::Mse
            },
            global_attention: ar.scalar("__config.global_attention")? != 0.0,
            window_one: false,
        };
        let mut model = Self::new(cfg, 0)?;
        model.params.load_from(ar)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mini_cfg() -> DitConfig {
        DitConfig {
            layers: 2,
            width: 16,
            heads: 2,
            patch: 2,
            latent_points: 4,
            latent_channels: 4,
            cond_dim: 12,
            lama_layer: 1,
            lama_dim: 8,
            lama_metric: LamaMetric::Cosine,
            global_attention: true,
            window_one: false,
        }
    }

    fn mini_cond(seed: u64, t: usize) -> ConditionBundle<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ConditionBundle::new(Tensor::randn(&[12], &mut rng), t, 1000).unwrap()
    }

    #[test]
    fn patch_embedding_shapes() {
        let model = MotionDit::<f64>::new(mini_cfg(), 1).unwrap();
        let mut tape = Tape::new();
        let tp = model.params.inject(&mut tape, false);
        let z = tape.constant(Tensor::zeros(&[6, 4, 4]));
        let tok = model.patch_embed_t(&mut tape, &tp, z).unwrap();
        assert_eq!(tape.shape(tok), &[6, 2, 16]);
        // zero latent: every token equals the projection bias (zero here)
        let first = tape.value(tok).data();
        assert!(first.iter().all(|&v| v == first[0]));
    }

    #[test]
    fn forward_shape_and_determinism() {
        let model = MotionDit::<f64>::new(mini_cfg(), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let z = Tensor::randn(&[4, 4, 4], &mut rng);
        let cond = mini_cond(4, 100);
        let a = model.forward(&z, &cond).unwrap();
        assert_eq!(a.shape(), z.shape());
        let b = model.forward(&z, &cond).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn freshly_initialized_blocks_are_identity() {
        // zero-init residual exits and adaLN gates: the token stream is
        // unchanged through every block at initialization
        let model = MotionDit::<f64>::new(mini_cfg(), 5).unwrap();
        let mut tape = Tape::new();
        let tp = model.params.inject(&mut tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x0 = Tensor::<f64>::randn(&[3, 2, 16], &mut rng);
        let x = tape.leaf(x0.clone(), false);
        let cond = tape.constant(Tensor::randn(&[1, 16], &mut rng));
        let text = tape.constant(Tensor::randn(&[3, 1, 12], &mut rng));
        let y = model.blocks[0]
            .forward(&mut tape, &tp, x, cond, text, &model.cfg)
            .unwrap();
        assert!(tape.value(y).max_abs_diff(&x0).unwrap() < 1e-12);
    }

    #[test]
    fn temporal_symmetry_on_identical_frames() {
        // identical frame content: temporal attention mixes identical
        // rows, so per-frame outputs stay identical
        let mut cfg = mini_cfg();
        cfg.global_attention = false;
        let model = MotionDit::<f64>::new(cfg, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let frame = Tensor::<f64>::randn(&[1, 4, 4], &mut rng);
        let mut data = frame.data().to_vec();
        data.extend_from_slice(frame.data());
        let z = Tensor::new(vec![2, 4, 4], data).unwrap();
        let cond = mini_cond(9, 17);
        let out = model.forward(&z, &cond).unwrap();
        let half = out.len() / 2;
        for i in 0..half {
            let d = (out.data()[i] - out.data()[half + i]).abs();
            assert!(d < 1e-9, "frame rows diverged at {i}: {d}");
        }
    }

    #[test]
    fn caption_changes_output() {
        let model = MotionDit::<f64>::new(mini_cfg(), 10).unwrap();
        // give cross-attention live weights
        let mut model = model;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (name, t) in model
            .params
            .names()
            .to_vec()
            .iter()
            .zip(model.params.tensors_mut())
        {
            if name.contains(".mod.w") || name.contains("unpatch.w") {
                *t = Tensor::randn(t.shape(), &mut rng);
                for v in t.data_mut().iter_mut() {
                    *v *= 0.1;
                }
            }
        }
        let z = Tensor::randn(&[4, 4, 4], &mut rng);
        let cond_a = mini_cond(12, 5);
        let mut cond_b = cond_a.clone();
        cond_b.text_embedding = Tensor::randn(&[12], &mut rng);
        let a = model.forward(&z, &cond_a).unwrap();
        let b = model.forward(&z, &cond_b).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 0.0, "cross-attention ignored the caption");
    }

    #[test]
    fn parameter_count_independent_of_frames() {
        let m1 = MotionDit::<f32>::new(mini_cfg(), 1).unwrap();
        let m2 = MotionDit::<f32>::new(mini_cfg(), 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // run at f=8 and f=64: same parameter vector serves both
        let z8 = Tensor::randn(&[8, 4, 4], &mut rng);
        let z64 = Tensor::randn(&[64, 4, 4], &mut rng);
        let cond = ConditionBundle::new(Tensor::randn(&[12], &mut rng), 3, 10).unwrap();
        assert_eq!(m1.params.num_elements(), m2.params.num_elements());
        assert!(m1.forward(&z8, &cond).is_ok());
        assert!(m1.forward(&z64, &cond).is_ok());
    }

    #[test]
    fn global_attention_is_the_only_long_range_path_when_windowed() {
        // gradient of the last output position wrt the first input
        // position: nonzero with global attention, zero without it when
        // spatial/temporal attention are windowed to one token
        let grad_reach = |global: bool| -> f64 {
            let mut cfg = mini_cfg();
            cfg.global_attention = global;
            cfg.window_one = true;
            let mut model = MotionDit::<f64>::new(cfg, 13).unwrap();
            // randomize gates and exits so signal actually flows
            let mut rng = ChaCha8Rng::seed_from_u64(14);
            let names = model.params.names().to_vec();
            for (name, t) in names.iter().zip(model.params.tensors_mut()) {
                if name.contains(".mod.w")
                    || name.contains("res.conv2.w")
                    || name.contains("unpatch.w")
                    || name.contains("global.attn.o.w")
                {
                    *t = Tensor::randn(t.shape(), &mut rng);
                    for v in t.data_mut().iter_mut() {
                        *v *= 0.2;
                    }
                }
            }
            let mut tape = Tape::new();
            let tp = model.params.inject(&mut tape, false);
            let z0 = Tensor::<f64>::randn(&[4, 4, 4], &mut rng);
            let z = tape.leaf(z0, true);
            let cond = mini_cond(15, 50);
            let (eps, _) = model.forward_t(&mut tape, &tp, z, &cond).unwrap();
            let flat = tape.reshape(eps, &[4 * 4 * 4]).unwrap();
            let last = tape.slice_last(flat, 4 * 4 * 4 - 1, 1).unwrap();
            let loss = tape.sum(last).unwrap();
            let grads = tape.backward(loss).unwrap();
            let g = grads.get(z).unwrap();
            // gradient wrt the first frame's entries
            g.data()[..16].iter().map(|v| v.abs()).fold(0.0, f64::max)
        };
        let with = grad_reach(true);
        let without = grad_reach(false);
        assert!(with > 1e-12, "global attention did not connect distant positions: {with}");
        assert!(without < 1e-20, "unexpected long-range path without global attention: {without}");
    }

    #[test]
    fn lama_projection_reaches_tapped_block() {
        let model = MotionDit::<f64>::new(mini_cfg(), 16).unwrap();
        let mut tape = Tape::new();
        let tp = model.params.inject(&mut tape, true);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let z = tape.leaf(Tensor::randn(&[4, 4, 4], &mut rng), false);
        let cond = mini_cond(18, 7);
        let (_, tap) = model.forward_t(&mut tape, &tp, z, &cond).unwrap();
        let proj = model.lama_projection_t(&mut tape, &tp, &tap).unwrap();
        assert_eq!(tape.shape(proj), &[1, 8]);
        let loss = tape.mean(proj).unwrap();
        let grads = tape.backward(loss).unwrap();
        // gradient flows back into the tapped block's weights; at
        // initialization the zero exits leave conv2 as the live path
        let id = model.params.id_of("dit.block1.res.conv2.w").unwrap();
        let g = grads.get(tp.var(id)).expect("gradient for tapped block");
        assert!(
            g.data().iter().any(|v| v.abs() > 0.0),
            "no gradient reached block 1 weights from the alignment head"
        );
    }

    #[test]
    fn zero_features_give_projection_bias() {
        let model = MotionDit::<f64>::new(mini_cfg(), 19).unwrap();
        let mut tape = Tape::new();
        let tp = model.params.inject(&mut tape, false);
        let feats = tape.constant(Tensor::zeros(&[4, 2, 16]));
        let tap = LamaTap { layer_index: 1, features: feats };
        let proj = model.lama_projection_t(&mut tape, &tp, &tap).unwrap();
        // with zero input, output = fc2(silu(fc1_bias)) which is the
        // composed bias path; recompute it directly
        let mut tape2 = Tape::new();
        let tp2 = model.params.inject(&mut tape2, false);
        let zero = tape2.constant(Tensor::zeros(&[1, 16]));
        let h = model.lama_fc1.forward(&mut tape2, &tp2, zero).unwrap();
        let h = tape2.silu(h);
        let expected = model.lama_fc2.forward(&mut tape2, &tp2, h).unwrap();
        assert!(tape.value(proj).max_abs_diff(tape2.value(expected)).unwrap() < 1e-15);
    }

    #[test]
    fn attention_rows_are_stochastic() {
        // spot-check through the public op: softmax rows sum to one on
        // the scores produced inside attention
        let mut tape = Tape::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let q = tape.constant(Tensor::randn(&[2, 3, 4], &mut rng));
        let kt = tape.swap_last2(q).unwrap();
        let scores = tape.bmm(q, kt).unwrap();
        let probs = tape.softmax(scores);
        for row in tape.value(probs).data().chunks(3) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn timestep_out_of_range_rejected() {
        assert!(ConditionBundle::<f64>::new(Tensor::zeros(&[12]), 1000, 1000).is_err());
        assert!(ConditionBundle::<f64>::new(Tensor::zeros(&[12]), 999, 1000).is_ok());
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = MotionDit::<f32>::new(mini_cfg(), 21).unwrap();
        let ar = model.checkpoint();
        let back = MotionDit::<f32>::from_checkpoint(&ar).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let z = Tensor::randn(&[4, 4, 4], &mut rng);
        let cond = ConditionBundle::new(Tensor::randn(&[12], &mut rng), 1, 10).unwrap();
        assert_eq!(model.forward(&z, &cond).unwrap(), back.forward(&z, &cond).unwrap());
    }
}
