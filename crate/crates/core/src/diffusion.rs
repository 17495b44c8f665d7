//! Noise schedule, forward noising, training objective, and samplers.
//!
//! The training loss is the noise-prediction error plus a weighted
//! alignment term pulling the projected mid-network features toward
//! the frozen pose embedding of the clean sample. Sampling is
//! ancestral, optionally over a strided timestep subsequence; the
//! inpainting sampler pins known frames by re-noising their clean
//! latents at every step.

use crate::dit::{ConditionBundle, LamaMetric, MotionDit};
use crate::error::{Error, Result};
use crate::nn::TapeParams;
use crate::tensor::{AdamW, AdamWConfig, Element, Tape, Tensor, Var};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Linear β schedule with cached α and ᾱ products.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(t_max: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if t_max == 0 || beta_start <= 0.0 || beta_end >= 1.0 || beta_start > beta_end {
            return Err(Error::Config(format!(
                "invalid schedule: T={t_max}, beta in [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = (0..t_max)
            .map(|i| {
                if t_max == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (t_max - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(t_max);
        let mut prod = 1.0;
        for &b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Ok(Self { betas, alpha_bars })
    }

    /// The defaults used throughout: T = 1000, β from 1e-4 to 2e-2.
    pub fn default_linear() -> Self {
        Self::linear(1000, 1e-4, 2e-2).expect("static defaults are valid")
    }

    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.t_max() {
            return Err(Error::Argument(format!("timestep {t} outside [0, {})", self.t_max())));
        }
        Ok(())
    }
}

/// z_t = √ᾱ_t · z_0 + √(1 − ᾱ_t) · ε.
pub fn q_sample<T: Element>(
    schedule: &NoiseSchedule,
    z0: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
) -> Result<Tensor<T>> {
    schedule.check_t(t)?;
    if z0.shape() != eps.shape() {
        return Err(Error::Shape {
            op: "q_sample",
            detail: format!("{:?} vs {:?}", z0.shape(), eps.shape()),
        });
    }
    let ab = schedule.alpha_bar(t);
    let a = T::from_f64(ab.sqrt());
    let b = T::from_f64((1.0 - ab).sqrt());
    let data = z0.data().iter().zip(eps.data()).map(|(&z, &e)| a * z + b * e).collect();
    Tensor::new(z0.shape().to_vec(), data)
}

/// Mean squared error between true and predicted noise.
pub fn diffusion_loss_value<T: Element>(eps: &Tensor<T>, eps_pred: &Tensor<T>) -> Result<f64> {
    if eps.shape() != eps_pred.shape() {
        return Err(Error::Shape {
            op: "diffusion_loss",
            detail: format!("{:?} vs {:?}", eps.shape(), eps_pred.shape()),
        });
    }
    let n = eps.len() as f64;
    let mut acc = 0.0;
    for (&a, &b) in eps.data().iter().zip(eps_pred.data()) {
        let d = a.as_f64() - b.as_f64();
        acc += d * d;
    }
    let v = acc / n;
    if !v.is_finite() {
        return Err(Error::NonFinite("diffusion loss".into()));
    }
    Ok(v)
}

/// One training item: clean latent, conditioning vector, and the
/// frozen pose embedding targeted by the alignment loss.
#[derive(Clone, Debug)]
pub struct DitTrainItem<T = f32> {
    pub z0: Tensor<T>,
    /// Pooled text conditioning, [cond_dim].
    pub cond: Tensor<T>,
    /// ℓ2-normalized CLoP pose embedding h_p, [lama_dim]; `None` when
    /// training with λ_f = 0 and no alignment model.
    pub pose_emb: Option<Tensor<T>>,
}

/// Alignment distance between the projected tap and h_p on the tape.
pub fn lama_distance_t<T: Element>(
    tape: &mut Tape<T>,
    projected: Var, // [1, d]
    h_p: &Tensor<T>,
    metric: LamaMetric,
) -> Result<Var> {
    let d = h_p.len();
    let hp = tape.constant(h_p.clone().reshaped(&[1, d])?);
    match metric {
        LamaMetric::Cosine => {
            let g = tape.l2_normalize_rows(projected, 1e-12)?;
            let prod = tape.mul(g, hp)?;
            let dot = tape.sum_axis_last(prod)?; // [1]
            let neg = tape.neg(dot);
            Ok(tape.add_scalar(neg, 1.0))
        }
        LamaMetric::Mse => tape.mse(projected, hp),
    }
}

/// Training losses for one batch: (total, L_d value, L_f value).
///
/// With λ_f = 0 the alignment head is not evaluated and the total
/// reduces to the plain noise-prediction loss bit-exactly.
#[allow(clippy::too_many_arguments)]
pub fn total_loss_t<T: Element>(
    tape: &mut Tape<T>,
    model: &MotionDit<T>,
    tp: &TapeParams,
    schedule: &NoiseSchedule,
    batch: &[&DitTrainItem<T>],
    lambda_f: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Var, f64, f64)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let mut mse_terms = Vec::with_capacity(batch.len());
    let mut lama_terms = Vec::with_capacity(batch.len());
    for item in batch {
        let t = rng.gen_range(0..schedule.t_max());
        let eps = Tensor::<T>::randn(item.z0.shape(), rng);
        let z_t = q_sample(schedule, &item.z0, t, &eps)?;
        let cond = ConditionBundle::new(item.cond.clone(), t, schedule.t_max())?;
        let vz = tape.leaf(z_t, false);
        let (eps_pred, tap) = model.forward_t(tape, tp, vz, &cond)?;
        let veps = tape.constant(eps);
        let mse = tape.mse(veps, eps_pred)?;
        mse_terms.push(mse);
        if lambda_f != 0.0 {
            let h_p = item.pose_emb.as_ref().ok_or_else(|| {
                Error::Config("alignment loss requested but item has no pose embedding".into())
            })?;
            let proj = model.lama_projection_t(tape, tp, &tap)?;
            let dist = lama_distance_t(tape, proj, h_p, model.cfg.lama_metric)?;
            lama_terms.push(dist);
        }
    }
    let inv_b = 1.0 / batch.len() as f64;
    let mut l_d = mse_terms[0];
    for &m in &mse_terms[1..] {
        l_d = tape.add(l_d, m)?;
    }
    let l_d = tape.scale(l_d, inv_b);
    let l_d_val = tape.value(l_d).data()[0].as_f64();

    if lambda_f == 0.0 {
        return Ok((l_d, l_d_val, 0.0));
    }
    let mut l_f = lama_terms[0];
    for &m in &lama_terms[1..] {
        l_f = tape.add(l_f, m)?;
    }
    let l_f = tape.scale(l_f, inv_b);
    let l_f = tape.reshape(l_f, &[1])?;
    let l_f_val = tape.value(l_f).data()[0].as_f64();
    let weighted = tape.scale(l_f, lambda_f);
    let total = tape.add(l_d, weighted)?;
    Ok((total, l_d_val, l_f_val))
}

#[derive(Clone, Debug)]
pub struct DitTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_f: f64,
    pub seed: u64,
    pub snapshot_every: usize,
}

impl Default for DitTrainConfig {
    fn default() -> Self {
        Self { steps: 10_000, batch_size: 2, lr: 1e-4, lambda_f: 0.1, seed: 0, snapshot_every: 200 }
    }
}

#[derive(Clone, Debug)]
pub struct DitTrainStats {
    pub steps_run: usize,
    pub final_loss: f64,
    pub final_l_d: f64,
    pub final_l_f: f64,
    /// (L_d, L_f) every snapshot interval.
    pub history: Vec<(f64, f64)>,
}

/// Minimize L_d + λ_f·L_f with AdamW.
pub fn train_dit<T: Element>(
    model: &mut MotionDit<T>,
    schedule: &NoiseSchedule,
    items: &[DitTrainItem<T>],
    tc: &DitTrainConfig,
) -> Result<DitTrainStats> {
    if items.is_empty() {
        return Err(Error::Argument("empty training set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut opt = AdamW::<T>::new(AdamWConfig { lr: tc.lr, ..Default::default() });
    let mut snapshot = model.params.clone();
    let mut stats = DitTrainStats {
        steps_run: 0,
        final_loss: 0.0,
        final_l_d: 0.0,
        final_l_f: 0.0,
        history: Vec::new(),
    };
    for step in 0..tc.steps {
        let mut tape = Tape::new();
        let tp = model.params.inject(&mut tape, true);
        let batch: Vec<&DitTrainItem<T>> =
            (0..tc.batch_size).map(|_| &items[rng.gen_range(0..items.len())]).collect();
        let res = total_loss_t(&mut tape, model, &tp, schedule, &batch, tc.lambda_f, &mut rng);
        let (loss, l_d, l_f) = match res {
            Ok(v) => v,
            Err(Error::NonFinite(what)) => {
                model.params = snapshot;
                return Err(Error::NonFinite(format!(
                    "dit training step {step}: {what}; restored last snapshot"
                )));
            }
            Err(e) => return Err(e),
        };
        let mut grads = tape.backward(loss)?;
        let grad_list = model.params.collect_grads(&tp, &mut grads);
        let names = model.params.names().to_vec();
        opt.step(&names, model.params.tensors_mut(), &grad_list)?;

        stats.steps_run = step + 1;
        stats.final_loss = tape.value(loss).data()[0].as_f64();
        stats.final_l_d = l_d;
        stats.final_l_f = l_f;
        if (step + 1) % tc.snapshot_every == 0 {
            snapshot = model.params.clone();
            stats.history.push((l_d, l_f));
        }
    }
    Ok(stats)
}

/// Mean alignment distance over a dataset under a fixed evaluation
/// protocol (seeded mid-schedule noising), comparable across runs.
pub fn eval_alignment_distance<T: Element>(
    model: &MotionDit<T>,
    schedule: &NoiseSchedule,
    items: &[DitTrainItem<T>],
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = schedule.t_max() / 2;
    let mut acc = 0.0;
    for item in items {
        let eps = Tensor::<T>::randn(item.z0.shape(), &mut rng);
        let z_t = q_sample(schedule, &item.z0, t, &eps)?;
        let cond = ConditionBundle::new(item.cond.clone(), t, schedule.t_max())?;
        let mut tape = Tape::new();
        let tp = model.params.inject(&mut tape, false);
        let vz = tape.leaf(z_t, false);
        let (_, tap) = model.forward_t(&mut tape, &tp, vz, &cond)?;
        let proj = model.lama_projection_t(&mut tape, &tp, &tap)?;
        let h_p = item
            .pose_emb
            .as_ref()
            .ok_or_else(|| Error::Config("item has no pose embedding".into()))?;
        let dist = lama_distance_t(&mut tape, proj, h_p, model.cfg.lama_metric)?;
        acc += tape.value(dist).data()[0].as_f64();
    }
    Ok(acc / items.len() as f64)
}

/// Anything that predicts ε from (z_t, t): the trained denoiser at
/// inference, or an analytic oracle in tests.
pub trait Denoiser<T: Element> {
    fn predict_eps(&self, z_t: &Tensor<T>, t: usize) -> Result<Tensor<T>>;
}

/// Text-conditioned wrapper around a trained network.
pub struct DitDenoiser<'a, T: Element> {
    pub model: &'a MotionDit<T>,
    pub text: Tensor<T>,
    pub t_max: usize,
}

impl<T: Element> Denoiser<T> for DitDenoiser<'_, T> {
    fn predict_eps(&self, z_t: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        let cond = ConditionBundle::new(self.text.clone(), t, self.t_max)?;
        self.model.forward(z_t, &cond)
    }
}

/// Descending timestep subsequence with uniform stride, always ending
/// at 0 and starting at T−1.
pub fn strided_timesteps(t_max: usize, steps: usize) -> Vec<usize> {
    if steps == 0 || steps >= t_max {
        return (0..t_max).rev().collect();
    }
    let mut ts: Vec<usize> =
        (0..steps).map(|i| ((t_max - 1) as f64 * (1.0 - i as f64 / (steps - 1).max(1) as f64)).round() as usize).collect();
    ts.dedup();
    if *ts.last().unwrap() != 0 {
        ts.push(0);
    }
    ts
}

/// Ancestral sampling over a descending timestep sequence. With the
/// full sequence this is the standard posterior-variance sampler; a
/// strided subsequence gives the fast variant.
pub fn ancestral_sample<T: Element, D: Denoiser<T>>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    shape: &[usize],
    timesteps: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    let mut z = Tensor::<T>::randn(shape, rng);
    sample_from(denoiser, schedule, &mut z, timesteps, rng, &mut |_, _| Ok(()))?;
    Ok(z)
}

/// Core loop shared by plain and inpainting samplers. `pin` runs
/// before each model call and may overwrite parts of the state.
fn sample_from<T: Element, D: Denoiser<T>>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    z: &mut Tensor<T>,
    timesteps: &[usize],
    rng: &mut ChaCha8Rng,
    pin: &mut dyn FnMut(&mut Tensor<T>, usize) -> Result<()>,
) -> Result<()> {
    if timesteps.is_empty() {
        return Err(Error::Argument("empty timestep sequence".into()));
    }
    for (i, &t) in timesteps.iter().enumerate() {
        schedule.check_t(t)?;
        pin(z, t)?;
        let eps = denoiser.predict_eps(z, t)?;
        if eps.shape() != z.shape() {
            return Err(Error::Shape {
                op: "sample",
                detail: format!("eps {:?} vs state {:?}", eps.shape(), z.shape()),
            });
        }
        let ab_t = schedule.alpha_bar(t);
        let ab_prev = if i + 1 < timesteps.len() { schedule.alpha_bar(timesteps[i + 1]) } else { 1.0 };
        let alpha_eff = ab_t / ab_prev;
        let beta_eff = 1.0 - alpha_eff;
        // posterior q(z_prev | z_t, x0_hat)
        let c_x0 = ab_prev.sqrt() * beta_eff / (1.0 - ab_t);
        let c_zt = alpha_eff.sqrt() * (1.0 - ab_prev) / (1.0 - ab_t);
        let var = beta_eff * (1.0 - ab_prev) / (1.0 - ab_t);
        let sigma = if i + 1 < timesteps.len() { var.sqrt() } else { 0.0 };

        let inv_sqrt_ab = 1.0 / ab_t.sqrt();
        let eps_coef = (1.0 - ab_t).sqrt();
        for (j, zv) in z.data_mut().iter_mut().enumerate() {
            let zt = zv.as_f64();
            let e = eps.data()[j].as_f64();
            let x0_hat = (zt - eps_coef * e) * inv_sqrt_ab;
            let mut mean = c_x0 * x0_hat + c_zt * zt;
            if sigma > 0.0 {
                mean += sigma * T::standard_normal(rng).as_f64();
            }
            *zv = T::from_f64(mean);
        }
        if !z.is_all_finite() {
            return Err(Error::NonFinite(format!("sampler state at t={t}")));
        }
    }
    Ok(())
}

/// Inpainting: known frames (mask true) are pinned by replacing their
/// latent rows with a re-noised copy of the clean latent before every
/// model call; at the end the known rows equal the clean latent
/// exactly. Pin noise comes from its own stream so an all-false mask
/// reproduces `ancestral_sample` bit-exactly.
#[allow(clippy::too_many_arguments)]
pub fn inpaint_sample<T: Element, D: Denoiser<T>>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    known: &Tensor<T>,
    frame_mask: &[bool],
    timesteps: &[usize],
    rng: &mut ChaCha8Rng,
    pin_seed: u64,
) -> Result<Tensor<T>> {
    let shape = known.shape().to_vec();
    if shape.len() != 3 || frame_mask.len() != shape[0] {
        return Err(Error::Shape {
            op: "inpaint_sample",
            detail: format!("mask {} vs latent {:?}", frame_mask.len(), shape),
        });
    }
    if frame_mask.iter().all(|&m| m) {
        return Ok(known.clone());
    }
    let row = shape[1] * shape[2];
    let mut pin_rng = ChaCha8Rng::seed_from_u64(pin_seed);
    let mut z = Tensor::<T>::randn(&shape, rng);
    let any_known = frame_mask.iter().any(|&m| m);
    sample_from(denoiser, schedule, &mut z, timesteps, rng, &mut |state, t| {
        if !any_known {
            return Ok(());
        }
        let eps = Tensor::<T>::randn(&shape, &mut pin_rng);
        let noised = q_sample(schedule, known, t, &eps)?;
        for (f, &keep) in frame_mask.iter().enumerate() {
            if keep {
                state.data_mut()[f * row..(f + 1) * row]
                    .copy_from_slice(&noised.data()[f * row..(f + 1) * row]);
            }
        }
        Ok(())
    })?;
    // final state: known rows are the clean latents themselves
    for (f, &keep) in frame_mask.iter().enumerate() {
        if keep {
            z.data_mut()[f * row..(f + 1) * row].copy_from_slice(&known.data()[f * row..(f + 1) * row]);
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_sanity() {
        let s = NoiseSchedule::default_linear();
        assert_eq!(s.t_max(), 1000);
        for t in 1..s.t_max() {
            assert!(s.beta(t) >= s.beta(t - 1));
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1), "alpha_bar not decreasing at {t}");
        }
        assert!(s.alpha_bar(0) > 0.99);
        assert!(s.alpha_bar(s.t_max() - 1) < 1e-2);
        assert!(NoiseSchedule::linear(0, 1e-4, 2e-2).is_err());
        assert!(NoiseSchedule::linear(10, 0.5, 0.1).is_err());
    }

    #[test]
    fn q_sample_limits() {
        let s = NoiseSchedule::default_linear();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z0 = Tensor::<f64>::randn(&[2, 4, 4], &mut rng);
        let eps = Tensor::<f64>::randn(&[2, 4, 4], &mut rng);
        // t=0: alpha_bar near 1, z_t close to z0
        let z = q_sample(&s, &z0, 0, &eps).unwrap();
        assert!(z.max_abs_diff(&z0).unwrap() < 0.05);
        // out-of-range t
        assert!(q_sample(&s, &z0, 1000, &eps).is_err());
        // alpha_bar -> 0 limit gives pure noise (use the last step of a
        // long schedule with beta_end near 1)
        let s2 = NoiseSchedule::linear(100, 0.5, 0.999).unwrap();
        let z = q_sample(&s2, &z0, 99, &eps).unwrap();
        assert!(z.max_abs_diff(&eps).unwrap() < 1e-6);
    }

    #[test]
    fn q_sample_expectation_monte_carlo() {
        // E[z_t] = sqrt(alpha_bar_t) * z0 over many noise draws
        let s = NoiseSchedule::default_linear();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z0 = Tensor::<f64>::new(vec![1, 1, 2], vec![1.5, -0.7]).unwrap();
        let t = 600;
        let n = 10_000;
        let mut mean = [0.0f64; 2];
        for _ in 0..n {
            let eps = Tensor::<f64>::randn(&[1, 1, 2], &mut rng);
            let z = q_sample(&s, &z0, t, &eps).unwrap();
            mean[0] += z.data()[0];
            mean[1] += z.data()[1];
        }
        let ab = s.alpha_bar(t);
        let sd = (1.0 - ab).sqrt();
        let tol = 3.0 * sd / (n as f64).sqrt();
        for (m, z) in mean.iter().zip(z0.data()) {
            let m = m / n as f64;
            let expect = ab.sqrt() * z;
            assert!((m - expect).abs() < tol, "mean {m} vs {expect} (tol {tol})");
        }
    }

    #[test]
    fn diffusion_loss_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = Tensor::<f64>::randn(&[8, 16, 4], &mut rng);
        // perfect model
        assert_eq!(diffusion_loss_value(&eps, &eps).unwrap(), 0.0);
        // zero model: mean eps^2 ~ 1 per element on a large sample
        let big = Tensor::<f64>::randn(&[64, 16, 4], &mut rng);
        let zero = Tensor::<f64>::zeros(big.shape());
        let l = diffusion_loss_value(&big, &zero).unwrap();
        assert!((l - 1.0).abs() < 0.05, "zero-model loss {l}");
        // equals the brute-force loop
        let pred = Tensor::<f64>::randn(&[8, 16, 4], &mut rng);
        let got = diffusion_loss_value(&eps, &pred).unwrap();
        let mut brute = 0.0;
        for i in 0..eps.len() {
            let d = eps.data()[i] - pred.data()[i];
            brute += d * d;
        }
        brute /= eps.len() as f64;
        assert!((got - brute).abs() < 1e-12);
    }

    #[test]
    fn strided_timesteps_cover_ends() {
        let ts = strided_timesteps(1000, 50);
        assert_eq!(*ts.first().unwrap(), 999);
        assert_eq!(*ts.last().unwrap(), 0);
        assert!(ts.windows(2).all(|w| w[0] > w[1]));
        let full = strided_timesteps(10, 0);
        assert_eq!(full, vec![9, 8, 7, 6, 5, 4, 3, 2, 1, 0]);
    }

    /// Analytic ε oracle for a two-mode Gaussian mixture at ±2.
    struct MixtureOracle {
        schedule: NoiseSchedule,
        mode_sd: f64,
    }

    impl MixtureOracle {
        /// E[ε | z_t] = -√(1-ᾱ)·∇log p_t(z)
        fn eps_star(&self, z: f64, t: usize) -> f64 {
            let ab = self.schedule.alpha_bar(t);
            let var = ab * self.mode_sd * self.mode_sd + (1.0 - ab);
            let mus = [-2.0 * ab.sqrt(), 2.0 * ab.sqrt()];
            let mut ws = [0.0f64; 2];
            for (w, mu) in ws.iter_mut().zip(&mus) {
                *w = (-((z - mu) * (z - mu)) / (2.0 * var)).exp();
            }
            let total = ws[0] + ws[1];
            let score = ws
                .iter()
                .zip(&mus)
                .map(|(w, mu)| w / total * (-(z - mu) / var))
                .sum::<f64>();
            -(1.0 - ab).sqrt() * score
        }
    }

    impl Denoiser<f64> for MixtureOracle {
        fn predict_eps(&self, z_t: &Tensor<f64>, t: usize) -> Result<Tensor<f64>> {
            let data = z_t.data().iter().map(|&z| self.eps_star(z, t)).collect();
            Tensor::new(z_t.shape().to_vec(), data)
        }
    }

    fn mixture_bin_probs(bins: usize, lo: f64, hi: f64, mode_sd: f64) -> Vec<f64> {
        // fine-grid quadrature of the mixture pdf per bin
        let pdf = |x: f64| -> f64 {
            let g = |mu: f64| {
                (-(x - mu) * (x - mu) / (2.0 * mode_sd * mode_sd)).exp()
                    / (mode_sd * (2.0 * std::f64::consts::PI).sqrt())
            };
            0.5 * g(-2.0) + 0.5 * g(2.0)
        };
        let mut probs = vec![0.0; bins];
        let w = (hi - lo) / bins as f64;
        let sub = 64;
        for (b, p) in probs.iter_mut().enumerate() {
            let x0 = lo + b as f64 * w;
            let mut acc = 0.0;
            for k in 0..sub {
                let x = x0 + (k as f64 + 0.5) * w / sub as f64;
                acc += pdf(x);
            }
            *p = acc * w / sub as f64;
        }
        probs
    }

    #[test]
    fn ancestral_sampler_matches_mixture_from_analytic_score() {
        let schedule = NoiseSchedule::default_linear();
        let oracle = MixtureOracle { schedule: schedule.clone(), mode_sd: 0.1 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ts: Vec<usize> = (0..schedule.t_max()).rev().collect();
        let n = 2000;
        let samples = ancestral_sample(&oracle, &schedule, &[n, 1, 1], &ts, &mut rng).unwrap();

        let (lo, hi, bins) = (-4.0, 4.0, 20);
        let mut hist = vec![0.0f64; bins];
        for &s in samples.data() {
            let b = (((s - lo) / (hi - lo)) * bins as f64).floor();
            let b = (b.max(0.0) as usize).min(bins - 1);
            hist[b] += 1.0 / n as f64;
        }
        let target = mixture_bin_probs(bins, lo, hi, 0.1);
        let tv: f64 = hist.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.1, "total variation {tv}");
    }

    #[test]
    fn two_seeds_differ() {
        let schedule = NoiseSchedule::linear(50, 1e-4, 2e-2).unwrap();
        let oracle = MixtureOracle { schedule: schedule.clone(), mode_sd: 0.1 };
        let ts: Vec<usize> = (0..50).rev().collect();
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = ancestral_sample(&oracle, &schedule, &[4, 1, 1], &ts, &mut r1).unwrap();
        let b = ancestral_sample(&oracle, &schedule, &[4, 1, 1], &ts, &mut r2).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 0.0);
    }

    #[test]
    fn inpaint_mask_semantics() {
        let schedule = NoiseSchedule::linear(40, 1e-4, 2e-2).unwrap();
        let oracle = MixtureOracle { schedule: schedule.clone(), mode_sd: 0.1 };
        let ts: Vec<usize> = (0..40).rev().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let known = Tensor::<f64>::randn(&[4, 2, 1], &mut rng);

        // all-known: returns the known latent untouched
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let out = inpaint_sample(&oracle, &schedule, &known, &[true; 4], &ts, &mut r, 77).unwrap();
        assert_eq!(out, known);

        // none-known: bit-identical to the plain sampler with the same rng stream
        let mut r1 = ChaCha8Rng::seed_from_u64(10);
        let a = inpaint_sample(&oracle, &schedule, &known, &[false; 4], &ts, &mut r1, 77).unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(10);
        let b = ancestral_sample(&oracle, &schedule, known.shape(), &ts, &mut r2).unwrap();
        assert_eq!(a, b);

        // pinned frames come back exactly
        let mask = [true, false, false, true];
        let mut r3 = ChaCha8Rng::seed_from_u64(11);
        let out = inpaint_sample(&oracle, &schedule, &known, &mask, &ts, &mut r3, 77).unwrap();
        for (f, &keep) in mask.iter().enumerate() {
            let row = 2;
            if keep {
                assert_eq!(&out.data()[f * row..(f + 1) * row], &known.data()[f * row..(f + 1) * row]);
            }
        }
    }

    #[test]
    fn total_loss_reduces_to_l_d_when_lambda_zero() {
        use crate::dit::{DitConfig, MotionDit};
        let cfg = DitConfig {
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
        };
        let model = MotionDit::<f64>::new(cfg, 1).unwrap();
        let schedule = NoiseSchedule::linear(100, 1e-4, 2e-2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let item = DitTrainItem {
            z0: Tensor::randn(&[4, 4, 4], &mut rng),
            cond: Tensor::randn(&[12], &mut rng),
            pose_emb: Some({
                let mut v = Tensor::<f64>::randn(&[8], &mut rng);
                let n = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in v.data_mut() {
                    *x /= n;
                }
                v
            }),
        };
        // identical rng state for both calls
        let mut tape = Tape::new();
        let tp = model.params.inject(&mut tape, false);
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let (l0, l_d0, l_f0) =
            total_loss_t(&mut tape, &model, &tp, &schedule, &[&item], 0.0, &mut r1).unwrap();
        assert_eq!(tape.value(l0).data()[0], l_d0);
        assert_eq!(l_f0, 0.0);

        // lambda 1 with a perfectly matching pose embedding direction:
        // cosine distance contributes, gradient flows into the head
        let mut tape2 = Tape::new();
        let tp2 = model.params.inject(&mut tape2, true);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let (l1, l_d1, l_f1) =
            total_loss_t(&mut tape2, &model, &tp2, &schedule, &[&item], 1.0, &mut r2).unwrap();
        assert!((tape2.value(l1).data()[0] - (l_d1 + l_f1)).abs() < 1e-12);
        let grads = tape2.backward(l1).unwrap();
        let id = model.params.id_of("dit.lama.fc2.w").unwrap();
        let g = grads.get(tp2.var(id)).expect("alignment head gradient");
        assert!(g.data().iter().any(|v| v.abs() > 0.0));
    }
}
