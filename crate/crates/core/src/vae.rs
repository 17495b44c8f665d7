//! Variational autoencoder over pose sequences.
//!
//! The encoder runs 1-D ResNet blocks with stride-2 downsampling along
//! the keypoint axis (frames act as the batch dimension), compressing
//! N points to N/8 with 4 latent channels. The decoder mirrors it with
//! nearest-neighbor upsampling and optional stage-wise additive skip
//! connections from the encoder.

use crate::checkpoint::Archive;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Init, ParamStore, TapeParams};
use crate::pose::{PoseSequence, CHANNELS};
use crate::tensor::{AdamW, AdamWConfig, Element, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Keypoint-axis compression factor: three stride-2 stages.
pub const DOWNSAMPLE_FACTOR: usize = 8;

/// Gaussian posterior parameters produced by the encoder.
#[derive(Clone, Debug)]
pub struct VaeLatentParams<T = f32> {
    /// Mean, shaped [f, n, c].
    pub mu: Tensor<T>,
    /// Log-variance, same shape as `mu`.
    pub log_var: Tensor<T>,
}

impl<T: Element> VaeLatentParams<T> {
    /// Latent dimensionality k = f·n·c.
    pub fn k(&self) -> usize {
        self.mu.len()
    }
}

/// A (possibly noisy) latent sequence, shaped [f, n, c].
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSequence<T = f32> {
    pub z: Tensor<T>,
}

impl<T: Element> LatentSequence<T> {
    pub fn new(z: Tensor<T>) -> Result<Self> {
        if z.rank() != 3 {
            return Err(Error::Shape {
                op: "LatentSequence",
                detail: format!("expected rank 3, got {:?}", z.shape()),
            });
        }
        if !z.is_all_finite() {
            return Err(Error::NonFinite("latent sequence".into()));
        }
        Ok(Self { z })
    }

    pub fn frames(&self) -> usize {
        self.z.shape()[0]
    }
}

#[derive(Clone, Debug)]
pub struct VaeConfig {
    /// Keypoints per frame (must be divisible by 8).
    pub keypoints: usize,
    /// Latent channels per downsampled point.
    pub latent_channels: usize,
    /// Hidden widths of the three encoder stages.
    pub widths: [usize; 3],
    /// Enable stage-wise additive skip connections during reconstruction.
    pub use_skips: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self { keypoints: 128, latent_channels: 4, widths: [64, 128, 256], use_skips: true }
    }
}

struct ResBlock1d {
    conv1: Conv1d,
    conv2: Conv1d,
}

impl ResBlock1d {
    fn new<T: Element>(ps: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, width: usize) -> Self {
        let conv1 = Conv1d::new(ps, rng, &format!("{name}.conv1"), width, width, 3, 1, 1, Init::ScaledNormal);
        // zero-init exit conv: the block starts as identity
        let conv2 = Conv1d::new(ps, rng, &format!("{name}.conv2"), width, width, 3, 1, 1, Init::Zero);
        Self { conv1, conv2 }
    }

    fn forward<T: Element>(&self, tape: &mut Tape<T>, tp: &TapeParams, x: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, tp, x)?;
        let h = tape.silu(h);
        let h = self.conv2.forward(tape, tp, h)?;
        tape.add(x, h)
    }
}

/// Pose VAE with a three-stage convolutional encoder/decoder.
pub struct PoseVae<T = f32> {
    pub cfg: VaeConfig,
    pub params: ParamStore<T>,
    conv_in: Conv1d,
    enc_res: [ResBlock1d; 3],
    enc_down: [Conv1d; 3],
    head_mu: Conv1d,
    head_logvar: Conv1d,
    conv_z: Conv1d,
    dec_res: [ResBlock1d; 3],
    dec_up: [Conv1d; 3],
    conv_out: Conv1d,
}

/// Encoder activations saved for the decoder's skip connections, one
/// per stage (before downsampling).
pub struct SkipActivations {
    stages: [Var; 3],
}

impl<T: Element> PoseVae<T> {
    pub fn new(cfg: VaeConfig, seed: u64) -> Result<Self> {
        if cfg.keypoints % DOWNSAMPLE_FACTOR != 0 {
            return Err(Error::Config(format!(
                "keypoint count {} not divisible by {}",
                cfg.keypoints, DOWNSAMPLE_FACTOR
            )));
        }
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [w0, w1, w2] = cfg.widths;
        let c = cfg.latent_channels;

        let conv_in = Conv1d::new(&mut ps, &mut rng, "vae.enc.in", CHANNELS, w0, 3, 1, 1, Init::ScaledNormal);
        let enc_res = [
            ResBlock1d::new(&mut ps, &mut rng, "vae.enc.res0", w0),
            ResBlock1d::new(&mut ps, &mut rng, "vae.enc.res1", w1),
            ResBlock1d::new(&mut ps, &mut rng, "vae.enc.res2", w2),
        ];
        let enc_down = [
            Conv1d::new(&mut ps, &mut rng, "vae.enc.down0", w0, w1, 3, 2, 1, Init::ScaledNormal),
            Conv1d::new(&mut ps, &mut rng, "vae.enc.down1", w1, w2, 3, 2, 1, Init::ScaledNormal),
            Conv1d::new(&mut ps, &mut rng, "vae.enc.down2", w2, w2, 3, 2, 1, Init::ScaledNormal),
        ];
        let head_mu = Conv1d::new(&mut ps, &mut rng, "vae.enc.mu", w2, c, 3, 1, 1, Init::ScaledNormal);
        let head_logvar = Conv1d::new(&mut ps, &mut rng, "vae.enc.logvar", w2, c, 3, 1, 1, Init::Zero);

        let conv_z = Conv1d::new(&mut ps, &mut rng, "vae.dec.in", c, w2, 3, 1, 1, Init::ScaledNormal);
        let dec_res = [
            ResBlock1d::new(&mut ps, &mut rng, "vae.dec.res0", w2),
            ResBlock1d::new(&mut ps, &mut rng, "vae.dec.res1", w2),
            ResBlock1d::new(&mut ps, &mut rng, "vae.dec.res2", w1),
        ];
        let dec_up = [
            Conv1d::new(&mut ps, &mut rng, "vae.dec.up0", w2, w2, 3, 1, 1, Init::ScaledNormal),
            Conv1d::new(&mut ps, &mut rng, "vae.dec.up1", w2, w1, 3, 1, 1, Init::ScaledNormal),
            Conv1d::new(&mut ps, &mut rng, "vae.dec.up2", w1, w0, 3, 1, 1, Init::ScaledNormal),
        ];
        let conv_out = Conv1d::new(&mut ps, &mut rng, "vae.dec.out", w0, CHANNELS, 3, 1, 1, Init::ScaledNormal);

        Ok(Self {
            cfg,
            params: ps,
            conv_in,
            enc_res,
            enc_down,
            head_mu,
            head_logvar,
            conv_z,
            dec_res,
            dec_up,
            conv_out,
        })
    }

    /// Latent points per frame: N / 8.
    pub fn latent_points(&self) -> usize {
        self.cfg.keypoints / DOWNSAMPLE_FACTOR
    }

    /// Tape-level encoder. `x` is [f, N, 3] (frames as batch); returns
    /// (mu, log_var) each [f, n, c] plus the skip activations.
    pub fn encode_t(
        &self,
        tape: &mut Tape<T>,
        tp: &TapeParams,
        x: Var,
    ) -> Result<(Var, Var, SkipActivations)> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] != self.cfg.keypoints || shape[2] != CHANNELS {
            return Err(Error::Shape {
                op: "vae.encode",
                detail: format!("{:?} vs [f, {}, {}]", shape, self.cfg.keypoints, CHANNELS),
            });
        }
        let f = shape[0];
        // [f, N, 3] -> [f, 3, N]
        let mut h = tape.permute3(x, [0, 2, 1])?;
        h = self.conv_in.forward(tape, tp, h)?;
        let mut skips = [h; 3];
        for i in 0..3 {
            h = self.enc_res[i].forward(tape, tp, h)?;
            skips[i] = h;
            h = self.enc_down[i].forward(tape, tp, h)?;
            h = tape.silu(h);
        }
        let mu = self.head_mu.forward(tape, tp, h)?;
        let logvar = self.head_logvar.forward(tape, tp, h)?;
        let n = self.latent_points();
        let c = self.cfg.latent_channels;
        // [f, c, n] -> [f, n, c]
        let mu = tape.permute3(mu, [0, 2, 1])?;
        let logvar = tape.permute3(logvar, [0, 2, 1])?;
        debug_assert_eq!(tape.shape(mu), &[f, n, c]);
        Ok((mu, logvar, SkipActivations { stages: skips }))
    }

    /// Tape-level decoder. `z` is [f, n, c]; passing `None` for skips
    /// runs the degraded stand-alone mode (zero skips), which is the
    /// path used when decoding generated latents.
    pub fn decode_t(
        &self,
        tape: &mut Tape<T>,
        tp: &TapeParams,
        z: Var,
        skips: Option<&SkipActivations>,
    ) -> Result<Var> {
        let shape = tape.shape(z).to_vec();
        let n = self.latent_points();
        if shape.len() != 3 || shape[1] != n || shape[2] != self.cfg.latent_channels {
            return Err(Error::Shape {
                op: "vae.decode",
                detail: format!("{:?} vs [f, {}, {}]", shape, n, self.cfg.latent_channels),
            });
        }
        // [f, n, c] -> [f, c, n]
        let mut h = tape.permute3(z, [0, 2, 1])?;
        h = self.conv_z.forward(tape, tp, h)?;
        h = tape.silu(h);
        for i in 0..3 {
            h = self.dec_res[i].forward(tape, tp, h)?;
            h = tape.upsample2(h)?;
            h = self.dec_up[i].forward(tape, tp, h)?;
            h = tape.silu(h);
            if let Some(s) = skips {
                // encoder stage activations in reverse order
                h = tape.add(h, s.stages[2 - i])?;
            }
        }
        let out = self.conv_out.forward(tape, tp, h)?;
        // [f, 3, N] -> [f, N, 3]
        tape.permute3(out, [0, 2, 1])
    }

    /// Encode a normalized pose tensor to posterior parameters.
    pub fn encode_tensor(&self, x: &Tensor<T>) -> Result<VaeLatentParams<T>> {
        let mut tape = Tape::new();
        let tp = self.params.inject(&mut tape, false);
        let vx = tape.leaf(x.clone(), false);
        let (mu, logvar, _) = self.encode_t(&mut tape, &tp, vx)?;
        Ok(VaeLatentParams { mu: tape.value(mu).clone(), log_var: tape.value(logvar).clone() })
    }

    pub fn encode(&self, p: &PoseSequence) -> Result<VaeLatentParams<T>> {
        self.encode_tensor(&p.to_tensor())
    }

    /// Decode a latent without encoder skips (stand-alone mode).
    pub fn decode(&self, z: &LatentSequence<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let tp = self.params.inject(&mut tape, false);
        let vz = tape.leaf(z.z.clone(), false);
        let out = self.decode_t(&mut tape, &tp, vz, None)?;
        Ok(tape.value(out).clone())
    }

    /// Full reconstruction through the posterior mean, using the
    /// trained skip topology when the config enables it.
    pub fn reconstruct_tensor(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let tp = self.params.inject(&mut tape, false);
        let vx = tape.leaf(x.clone(), false);
        let (mu, _, skips) = self.encode_t(&mut tape, &tp, vx)?;
        let skips = self.cfg.use_skips.then_some(&skips);
        let out = self.decode_t(&mut tape, &tp, mu, skips)?;
        Ok(tape.value(out).clone())
    }

    pub fn checkpoint(&self) -> Archive {
        let mut ar = self.params.to_archive();
        ar.push_scalar("__config.keypoints", self.cfg.keypoints as f64);
        ar.push_scalar("__config.latent_channels", self.cfg.latent_channels as f64);
        ar.push_scalar("__config.width0", self.cfg.widths[0] as f64);
        ar.push_scalar("__config.width1", self.cfg.widths[1] as f64);
        ar.push_scalar("__config.width2", self.cfg.widths[2] as f64);
        ar.push_scalar("__config.use_skips", if self.cfg.use_skips { 1.0 } else { 0.0 });
        ar
    }

    pub fn from_checkpoint(ar: &Archive) -> Result<Self> {
        let cfg = VaeConfig {
            keypoints: ar.scalar("__config.keypoints")? as usize,
            latent_channels: ar.scalar("__config.latent_channels")? as usize,
            widths: [
                ar.scalar("__config.width0")? as usize,
                ar.scalar("__config.width1")? as usize,
                ar.scalar("__config.width2")? as usize,
            ],
            use_skips: ar.scalar("__config.use_skips")? != 0.0,
        };
        let mut vae = Self::new(cfg, 0)?;
        vae.params.load_from(ar)?;
        Ok(vae)
    }
}

/// z = mu + exp(0.5·log_var)·noise.
pub fn reparameterize<T: Element>(
    params: &VaeLatentParams<T>,
    noise: &Tensor<T>,
) -> Result<LatentSequence<T>> {
    if noise.shape() != params.mu.shape() {
        return Err(Error::Shape {
            op: "reparameterize",
            detail: format!("noise {:?} vs mu {:?}", noise.shape(), params.mu.shape()),
        });
    }
    let half = T::from_f64(0.5);
    let data = params
        .mu
        .data()
        .iter()
        .zip(params.log_var.data())
        .zip(noise.data())
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect();
    LatentSequence::new(Tensor::new(params.mu.shape().to_vec(), data)?)
}

/// Tape-level reparameterization for training.
pub fn reparameterize_t<T: Element>(
    tape: &mut Tape<T>,
    mu: Var,
    log_var: Var,
    noise: &Tensor<T>,
) -> Result<Var> {
    if noise.shape() != tape.shape(mu) {
        return Err(Error::Shape {
            op: "reparameterize",
            detail: format!("noise {:?} vs mu {:?}", noise.shape(), tape.shape(mu)),
        });
    }
    let e = tape.constant(noise.clone());
    let half_lv = tape.scale(log_var, 0.5);
    let std = tape.exp(half_lv);
    let scaled = tape.mul(std, e)?;
    tape.add(mu, scaled)
}

/// L_KL = ½ Σ (σ² + μ² − log σ² − 1), summed over all k latent
/// dimensions.
pub fn kl_loss_t<T: Element>(tape: &mut Tape<T>, mu: Var, log_var: Var) -> Result<Var> {
    if !tape.value(log_var).is_all_finite() {
        return Err(Error::NonFinite("log_var".into()));
    }
    let var = tape.exp(log_var);
    let musq = tape.mul(mu, mu)?;
    let s = tape.add(var, musq)?;
    let s = tape.sub(s, log_var)?;
    let s = tape.add_scalar(s, -1.0);
    let total = tape.sum(s)?;
    Ok(tape.scale(total, 0.5))
}

/// Plain-value KL divergence for oracles and reporting.
pub fn kl_loss<T: Element>(params: &VaeLatentParams<T>) -> Result<f64> {
    if !params.log_var.is_all_finite() {
        return Err(Error::NonFinite("log_var".into()));
    }
    let mut acc = 0.0f64;
    for (&m, &lv) in params.mu.data().iter().zip(params.log_var.data()) {
        let (m, lv) = (m.as_f64(), lv.as_f64());
        acc += lv.exp() + m * m - lv - 1.0;
    }
    Ok(0.5 * acc)
}

/// L_R = ‖p − p_r‖²: sum of squared differences over all entries.
pub fn recon_loss_t<T: Element>(tape: &mut Tape<T>, p: Var, p_r: Var) -> Result<Var> {
    let d = tape.sub(p, p_r)?;
    let sq = tape.mul(d, d)?;
    tape.sum(sq)
}

/// Plain-value reconstruction loss.
pub fn recon_loss<T: Element>(p: &Tensor<T>, p_r: &Tensor<T>) -> Result<f64> {
    if p.shape() != p_r.shape() {
        return Err(Error::Shape {
            op: "recon_loss",
            detail: format!("{:?} vs {:?}", p.shape(), p_r.shape()),
        });
    }
    Ok(p
        .data()
        .iter()
        .zip(p_r.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum())
}

#[derive(Clone, Debug)]
pub struct VaeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// KL weight β; the written loss is L_R + β·L_KL.
    pub beta: f64,
    pub seed: u64,
    /// Snapshot cadence for NaN recovery.
    pub snapshot_every: usize,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 1, lr: 1e-3, beta: 1e-7, seed: 0, snapshot_every: 50 }
    }
}

#[derive(Clone, Debug)]
pub struct VaeTrainStats {
    pub steps_run: usize,
    pub final_recon_sum: f64,
    pub final_kl: f64,
    /// Per-element reconstruction MSE at the last step.
    pub final_recon_mse: f64,
}

/// Minimize L_R + β·L_KL with AdamW. Aborts on a non-finite loss,
/// restoring the last snapshot.
pub fn train_vae<T: Element>(
    vae: &mut PoseVae<T>,
    data: &[Tensor<T>],
    tc: &VaeTrainConfig,
) -> Result<VaeTrainStats> {
    if data.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut opt = AdamW::<T>::new(AdamWConfig { lr: tc.lr, ..Default::default() });
    let mut snapshot = vae.params.clone();
    let mut stats =
        VaeTrainStats { steps_run: 0, final_recon_sum: 0.0, final_kl: 0.0, final_recon_mse: 0.0 };

    for step in 0..tc.steps {
        let mut tape = Tape::new();
        let tp = vae.params.inject(&mut tape, true);
        // assemble batch by stacking frames (frames are the conv batch axis)
        let mut items = Vec::with_capacity(tc.batch_size);
        for _ in 0..tc.batch_size {
            let idx = rand::Rng::gen_range(&mut rng, 0..data.len());
            items.push(&data[idx]);
        }
        let batch = stack_axis0(&items)?;
        let elements = batch.len();
        let x = tape.leaf(batch, false);

        let step_result = (|| -> Result<(Var, f64, f64)> {
            let (mu, logvar, skips) = vae.encode_t(&mut tape, &tp, x)?;
            let noise = Tensor::randn(tape.shape(mu), &mut rng);
            let z = reparameterize_t(&mut tape, mu, logvar, &noise)?;
            let skips_opt = vae.cfg.use_skips.then_some(&skips);
            let recon = vae.decode_t(&mut tape, &tp, z, skips_opt)?;
            let l_r = recon_loss_t(&mut tape, x, recon)?;
            let l_kl = kl_loss_t(&mut tape, mu, logvar)?;
            let l_kl_scaled = tape.scale(l_kl, tc.beta);
            let total = tape.add(l_r, l_kl_scaled)?;
            // normalize by batch size to keep lr batch-stable
            let loss = tape.scale(total, 1.0 / tc.batch_size as f64);
            Ok((loss, tape.value(l_r).data()[0].as_f64(), tape.value(l_kl).data()[0].as_f64()))
        })();

        let (loss, l_r, l_kl) = match step_result {
            Ok(v) => v,
            Err(Error::NonFinite(what)) => {
                vae.params = snapshot;
                return Err(Error::NonFinite(format!(
                    "vae training step {step}: {what}; restored last snapshot"
                )));
            }
            Err(e) => return Err(e),
        };

        let mut grads = tape.backward(loss)?;
        let grad_list = vae.params.collect_grads(&tp, &mut grads);
        let names = vae.params.names().to_vec();
        opt.step(&names, vae.params.tensors_mut(), &grad_list)?;

        stats.steps_run = step + 1;
        stats.final_recon_sum = l_r / tc.batch_size as f64;
        stats.final_kl = l_kl / tc.batch_size as f64;
        stats.final_recon_mse = l_r / elements as f64;
        if (step + 1) % tc.snapshot_every == 0 {
            snapshot = vae.params.clone();
        }
    }
    Ok(stats)
}

/// Stack rank-3 tensors along axis 0.
pub fn stack_axis0<T: Element>(items: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = items.first().ok_or_else(|| Error::Argument("stack of nothing".into()))?;
    let tail = &first.shape()[1..];
    let mut rows = 0;
    let mut data = Vec::new();
    for it in items {
        if &it.shape()[1..] != tail {
            return Err(Error::Shape {
                op: "stack_axis0",
                detail: format!("{:?} vs {:?}", it.shape(), first.shape()),
            });
        }
        rows += it.shape()[0];
        data.extend_from_slice(it.data());
    }
    let mut shape = vec![rows];
    shape.extend_from_slice(tail);
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradient_check_multi;

    fn mini_vae(seed: u64) -> PoseVae<f64> {
        PoseVae::new(
            VaeConfig { keypoints: 16, latent_channels: 4, widths: [4, 6, 8], use_skips: true },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn encoder_shapes_follow_downsampling() {
        let vae = PoseVae::<f32>::new(VaeConfig::default(), 1).unwrap();
        let x = Tensor::zeros(&[4, 128, 3]);
        let p = vae.encode_tensor(&x).unwrap();
        assert_eq!(p.mu.shape(), &[4, 16, 4]);
        assert_eq!(p.log_var.shape(), &[4, 16, 4]);
        assert_eq!(p.k(), 4 * 16 * 4);
        // all-zero input still yields finite outputs
        assert!(p.mu.is_all_finite() && p.log_var.is_all_finite());
    }

    #[test]
    fn encoder_deterministic() {
        let vae = mini_vae(7);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(&[2, 16, 3], &mut rng);
        let a = vae.encode_tensor(&x).unwrap();
        let b = vae.encode_tensor(&x).unwrap();
        assert_eq!(a.mu, b.mu);
        assert_eq!(a.log_var, b.log_var);
    }

    #[test]
    fn keypoints_must_divide_by_8() {
        let bad = VaeConfig { keypoints: 126, ..VaeConfig::default() };
        assert!(matches!(PoseVae::<f32>::new(bad, 0), Err(Error::Config(_))));
    }

    #[test]
    fn decode_shape_contract_any_frame_count() {
        let vae = mini_vae(2);
        for f in [1usize, 3, 8] {
            let mut rng = ChaCha8Rng::seed_from_u64(f as u64);
            let x = Tensor::<f64>::randn(&[f, 16, 3], &mut rng);
            let p = vae.encode_tensor(&x).unwrap();
            let noise = Tensor::randn(p.mu.shape(), &mut rng);
            let z = reparameterize(&p, &noise).unwrap();
            let out = vae.decode(&z).unwrap();
            assert_eq!(out.shape(), &[f, 16, 3]);
        }
    }

    #[test]
    fn reparameterize_arithmetic() {
        // noise 0 -> z == mu
        let p = VaeLatentParams {
            mu: Tensor::<f64>::full(&[1, 1, 2], 0.7),
            log_var: Tensor::<f64>::zeros(&[1, 1, 2]),
        };
        let z = reparameterize(&p, &Tensor::zeros(&[1, 1, 2])).unwrap();
        assert_eq!(z.z, p.mu);
        // log_var 0, unit noise -> mu + 1
        let e = Tensor::<f64>::full(&[1, 1, 2], 1.0);
        let z = reparameterize(&p, &e).unwrap();
        for &v in z.z.data() {
            assert!((v - 1.7).abs() < 1e-12);
        }
        // mu=1, sigma^2=4, noise=0.5 -> 1 + 2*0.5 = 2
        let p = VaeLatentParams {
            mu: Tensor::<f64>::full(&[1, 1, 1], 1.0),
            log_var: Tensor::<f64>::full(&[1, 1, 1], 4.0f64.ln()),
        };
        let z = reparameterize(&p, &Tensor::full(&[1, 1, 1], 0.5)).unwrap();
        assert!((z.z.data()[0] - 2.0).abs() < 1e-12);
        // shape mismatch
        assert!(reparameterize(&p, &Tensor::zeros(&[2, 1, 1])).is_err());
    }

    #[test]
    fn kl_loss_reference_values() {
        // standard normal posterior: zero divergence
        let p = VaeLatentParams {
            mu: Tensor::<f64>::zeros(&[2, 3, 4]),
            log_var: Tensor::<f64>::zeros(&[2, 3, 4]),
        };
        assert_eq!(kl_loss(&p).unwrap(), 0.0);
        // k=1, mu=1, sigma^2=1 -> 0.5
        let p = VaeLatentParams {
            mu: Tensor::<f64>::full(&[1, 1, 1], 1.0),
            log_var: Tensor::<f64>::zeros(&[1, 1, 1]),
        };
        assert!((kl_loss(&p).unwrap() - 0.5).abs() < 1e-12);
        // k=1, mu=0, sigma^2=e -> (e - 1 - 1)/2
        let p = VaeLatentParams {
            mu: Tensor::<f64>::zeros(&[1, 1, 1]),
            log_var: Tensor::<f64>::full(&[1, 1, 1], 1.0),
        };
        let expect = 0.5 * (std::f64::consts::E - 2.0);
        assert!((kl_loss(&p).unwrap() - expect).abs() < 1e-12);
        // non-finite log_var errors
        let p = VaeLatentParams {
            mu: Tensor::<f64>::zeros(&[1, 1, 1]),
            log_var: Tensor::<f64>::full(&[1, 1, 1], f64::NAN),
        };
        assert!(matches!(kl_loss(&p), Err(Error::NonFinite(_))));
    }

    #[test]
    fn kl_loss_nonnegative_and_zero_only_at_prior() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let mu = Tensor::<f64>::new(vec![1], vec![rng.gen_range(-3.0..3.0)]).unwrap();
            let lv = Tensor::<f64>::new(vec![1], vec![rng.gen_range(-3.0..3.0)]).unwrap();
            let v = kl_loss(&VaeLatentParams { mu: mu.clone(), log_var: lv.clone() }).unwrap();
            assert!(v >= 0.0, "kl {v} negative at mu={:?} lv={:?}", mu, lv);
            let off_prior = mu.data()[0].abs() > 1e-3 || lv.data()[0].abs() > 1e-3;
            if off_prior {
                assert!(v > 0.0);
            }
        }
    }

    #[test]
    fn recon_loss_examples_and_oracle() {
        use rand::Rng;
        let a = Tensor::<f64>::full(&[2, 2, 3], 0.3);
        assert_eq!(recon_loss(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.data_mut()[5] += 2.0;
        assert!((recon_loss(&a, &b).unwrap() - 4.0).abs() < 1e-12);
        // random pair equals brute-force loop
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::randn(&[3, 4, 3], &mut rng);
        let y = Tensor::<f64>::randn(&[3, 4, 3], &mut rng);
        let mut brute = 0.0;
        for i in 0..x.len() {
            let d = x.data()[i] - y.data()[i];
            brute += d * d;
        }
        assert!((recon_loss(&x, &y).unwrap() - brute).abs() < 1e-9);
        let _ = rng.gen::<f64>();
    }

    #[test]
    fn vae_loss_gradient_check_miniature() {
        // 4-frame, 16-keypoint miniature; FD check of L_R + beta*L_KL
        // wrt the pose input and a couple of parameter tensors.
        let vae = mini_vae(5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::<f64>::randn(&[4, 16, 3], &mut rng);
        let noise = Tensor::<f64>::randn(&[4, 2, 4], &mut rng);
        let err = gradient_check_multi(
            |tape, vs| {
                let tp = vae.params.inject(tape, false);
                let (mu, logvar, skips) = vae.encode_t(tape, &tp, vs[0])?;
                let z = reparameterize_t(tape, mu, logvar, &noise)?;
                let recon = vae.decode_t(tape, &tp, z, Some(&skips))?;
                let l_r = recon_loss_t(tape, vs[0], recon)?;
                let l_kl = kl_loss_t(tape, mu, logvar)?;
                let kl_scaled = tape.scale(l_kl, 1e-7);
                tape.add(l_r, kl_scaled)
            },
            &[x],
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-4, "vae loss rel err {err}");
    }

    #[test]
    fn beta_zero_removes_kl_from_gradient() {
        // with beta = 0 the loss is the plain autoencoder objective:
        // the gradient wrt log_var through the KL term vanishes, so the
        // loss value must equal L_R exactly.
        let vae = mini_vae(8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::randn(&[2, 16, 3], &mut rng);
        let noise = Tensor::<f64>::randn(&[2, 2, 4], &mut rng);
        let mut tape = Tape::new();
        let tp = vae.params.inject(&mut tape, true);
        let vx = tape.leaf(x, false);
        let (mu, logvar, skips) = vae.encode_t(&mut tape, &tp, vx).unwrap();
        let z = reparameterize_t(&mut tape, mu, logvar, &noise).unwrap();
        let recon = vae.decode_t(&mut tape, &tp, z, Some(&skips)).unwrap();
        let l_r = recon_loss_t(&mut tape, vx, recon).unwrap();
        let l_kl = kl_loss_t(&mut tape, mu, logvar).unwrap();
        let kl_scaled = tape.scale(l_kl, 0.0);
        let total = tape.add(l_r, kl_scaled).unwrap();
        assert_eq!(tape.value(total).data()[0], tape.value(l_r).data()[0]);
        // and with beta = 1e-7 the total is exactly L_R + beta * L_KL
        let kl_beta = tape.scale(l_kl, 1e-7);
        let total_beta = tape.add(l_r, kl_beta).unwrap();
        let expect = tape.value(l_r).data()[0] + 1e-7 * tape.value(l_kl).data()[0];
        assert!((tape.value(total_beta).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        // float32 is the checkpoint payload dtype, so the round trip is exact
        let vae = PoseVae::<f32>::new(
            VaeConfig { keypoints: 16, latent_channels: 4, widths: [4, 6, 8], use_skips: true },
            10,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f32>::randn(&[2, 16, 3], &mut rng);
        let before = vae.reconstruct_tensor(&x).unwrap();
        let ar = vae.checkpoint();
        let restored = PoseVae::<f32>::from_checkpoint(&ar).unwrap();
        let after = restored.reconstruct_tensor(&x).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn short_training_reduces_reconstruction_error() {
        let mut vae = PoseVae::<f32>::new(
            VaeConfig { keypoints: 16, latent_channels: 4, widths: [8, 12, 16], use_skips: true },
            3,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<Tensor<f32>> = (0..8)
            .map(|_| {
                let mut t = Tensor::<f32>::randn(&[4, 16, 3], &mut rng);
                for v in t.data_mut().iter_mut() {
                    *v *= 0.5;
                }
                t
            })
            .collect();
        let initial: f64 = {
            let r = vae.reconstruct_tensor(&data[0]).unwrap();
            recon_loss(&data[0], &r).unwrap() / data[0].len() as f64
        };
        let tc = VaeTrainConfig { steps: 120, batch_size: 2, lr: 3e-3, ..Default::default() };
        let stats = train_vae(&mut vae, &data, &tc).unwrap();
        assert_eq!(stats.steps_run, 120);
        let after: f64 = {
            let r = vae.reconstruct_tensor(&data[0]).unwrap();
            recon_loss(&data[0], &r).unwrap() / data[0].len() as f64
        };
        assert!(after < initial, "recon mse {after} not below initial {initial}");
    }
}
