//! Run configuration: a flat key/value text file with dotted keys,
//! strict key validation, and a canonical dump for reproducibility.

use crate::curation::CurationConfig;
use crate::dit::LamaMetric;
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Every tunable of every subcommand, with documented defaults.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub seed: u64,
    /// Training/eval window length in frames.
    pub frames: usize,

    pub curation: CurationConfig,

    pub vae_keypoints: usize,
    pub vae_latent_channels: usize,
    pub vae_widths: [usize; 3],
    pub vae_use_skips: bool,
    pub vae_steps: usize,
    pub vae_batch_size: usize,
    pub vae_lr: f64,
    pub vae_beta: f64,

    pub clop_width: usize,
    pub clop_layers: usize,
    pub clop_heads: usize,
    pub clop_embed_dim: usize,
    pub clop_steps: usize,
    pub clop_batch_size: usize,
    pub clop_lr: f64,
    /// Fixed temperature; NaN means learnable (init 0.07, clamped).
    pub clop_fixed_tau: Option<f64>,

    pub dit_layers: usize,
    pub dit_width: usize,
    pub dit_heads: usize,
    pub dit_patch: usize,
    /// Alignment tap block; `None` resolves to the central layer.
    pub dit_lama_layer: Option<usize>,
    pub dit_lama_metric: LamaMetric,
    pub dit_global_attention: bool,
    pub dit_steps: usize,
    pub dit_batch_size: usize,
    pub dit_lr: f64,

    pub diffusion_t_max: usize,
    pub diffusion_beta_start: f64,
    pub diffusion_beta_end: f64,
    pub diffusion_lambda_f: f64,
    /// Sampling steps; values below T_max run the strided sampler.
    pub diffusion_sample_steps: usize,

    pub metrics_pool_size: usize,
    pub metrics_s_dis: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 64,
            curation: CurationConfig::default(),
            vae_keypoints: 128,
            vae_latent_channels: 4,
            vae_widths: [64, 128, 256],
            vae_use_skips: true,
            vae_steps: 2000,
            vae_batch_size: 1,
            vae_lr: 1e-3,
            vae_beta: 1e-7,
            clop_width: 64,
            clop_layers: 2,
            clop_heads: 4,
            clop_embed_dim: 256,
            clop_steps: 3000,
            clop_batch_size: 16,
            clop_lr: 1e-3,
            clop_fixed_tau: None,
            dit_layers: 13,
            dit_width: 128,
            dit_heads: 4,
            dit_patch: 2,
            dit_lama_layer: None,
            dit_lama_metric: LamaMetric::Cosine,
            dit_global_attention: true,
            dit_steps: 10_000,
            dit_batch_size: 2,
            dit_lr: 1e-4,
            diffusion_t_max: 1000,
            diffusion_beta_start: 1e-4,
            diffusion_beta_end: 2e-2,
            diffusion_lambda_f: 0.1,
            diffusion_sample_steps: 1000,
            metrics_pool_size: 32,
            metrics_s_dis: 300,
        }
    }
}

impl RunConfig {
    /// Apply one `key=value` override. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("key '{key}': {e}"));
        macro_rules! parse {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|e| bad(&e))?
            };
        }
        match key {
            "seed" => self.seed = parse!(u64),
            "frames" => self.frames = parse!(usize),

            "curation.movement_threshold" => self.curation.movement_threshold = parse!(f64),
            "curation.text_coverage_ratio" => self.curation.text_coverage_ratio = parse!(f64),
            "curation.aesthetic_threshold" => self.curation.aesthetic_threshold = parse!(f64),
            "curation.blur_threshold" => self.curation.blur_threshold = parse!(f64),
            "curation.motion_threshold" => self.curation.motion_threshold = parse!(f64),
            "curation.coverage_threshold" => self.curation.coverage_threshold = parse!(f64),
            "curation.max_humans" => self.curation.max_humans = parse!(u32),
            "curation.face_confidence" => self.curation.face_confidence = parse!(f32),
            "curation.face_visible_in_all" => self.curation.face_visible_in_all = parse!(bool),
            "curation.caption_threshold" => self.curation.caption_threshold = parse!(f64),

            "vae.keypoints" => self.vae_keypoints = parse!(usize),
            "vae.latent_channels" => self.vae_latent_channels = parse!(usize),
            "vae.width0" => self.vae_widths[0] = parse!(usize),
            "vae.width1" => self.vae_widths[1] = parse!(usize),
            "vae.width2" => self.vae_widths[2] = parse!(usize),
            "vae.use_skips" => self.vae_use_skips = parse!(bool),
            "vae.steps" => self.vae_steps = parse!(usize),
            "vae.batch_size" => self.vae_batch_size = parse!(usize),
            "vae.lr" => self.vae_lr = parse!(f64),
            "vae.beta" => self.vae_beta = parse!(f64),

            "clop.width" => self.clop_width = parse!(usize),
            "clop.layers" => self.clop_layers = parse!(usize),
            "clop.heads" => self.clop_heads = parse!(usize),
            "clop.embed_dim" => self.clop_embed_dim = parse!(usize),
            "clop.steps" => self.clop_steps = parse!(usize),
            "clop.batch_size" => self.clop_batch_size = parse!(usize),
            "clop.lr" => self.clop_lr = parse!(f64),
            "clop.fixed_tau" => {
                self.clop_fixed_tau =
                    if value == "none" { None } else { Some(parse!(f64)) }
            }

            "dit.layers" => self.dit_layers = parse!(usize),
            "dit.width" => self.dit_width = parse!(usize),
            "dit.heads" => self.dit_heads = parse!(usize),
            "dit.patch" => self.dit_patch = parse!(usize),
            "dit.lama_layer" => {
                self.dit_lama_layer =
                    if value == "center" { None } else { Some(parse!(usize)) }
            }
            "dit.lama_metric" => {
                self.dit_lama_metric = match value {
                    "cosine" => LamaMetric::Cosine,
                    "mse" => LamaMetric::Mse,
                    other => return Err(Error::Config(format!("unknown lama metric '{other}'"))),
                }
            }
            "dit.global_attention" => self.dit_global_attention = parse!(bool),
            "dit.steps" => self.dit_steps = parse!(usize),
            "dit.batch_size" => self.dit_batch_size = parse!(usize),
            "dit.lr" => self.dit_lr = parse!(f64),

            "diffusion.t_max" => self.diffusion_t_max = parse!(usize),
            "diffusion.beta_start" => self.diffusion_beta_start = parse!(f64),
            "diffusion.beta_end" => self.diffusion_beta_end = parse!(f64),
            "diffusion.lambda_f" => self.diffusion_lambda_f = parse!(f64),
            "diffusion.sample_steps" => self.diffusion_sample_steps = parse!(usize),

            "metrics.pool_size" => self.metrics_pool_size = parse!(usize),
            "metrics.s_dis" => self.metrics_s_dis = parse!(usize),

            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse a config file: `key=value` lines, `#` comments.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Canonical dump: every key in a stable order. Parsing the dump
    /// reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        kv("frames", self.frames.to_string());
        kv("curation.movement_threshold", self.curation.movement_threshold.to_string());
        kv("curation.text_coverage_ratio", self.curation.text_coverage_ratio.to_string());
        kv("curation.aesthetic_threshold", self.curation.aesthetic_threshold.to_string());
        kv("curation.blur_threshold", self.curation.blur_threshold.to_string());
        kv("curation.motion_threshold", self.curation.motion_threshold.to_string());
        kv("curation.coverage_threshold", self.curation.coverage_threshold.to_string());
        kv("curation.max_humans", self.curation.max_humans.to_string());
        kv("curation.face_confidence", self.curation.face_confidence.to_string());
        kv("curation.face_visible_in_all", self.curation.face_visible_in_all.to_string());
        kv("curation.caption_threshold", self.curation.caption_threshold.to_string());
        kv("vae.keypoints", self.vae_keypoints.to_string());
        kv("vae.latent_channels", self.vae_latent_channels.to_string());
        kv("vae.width0", self.vae_widths[0].to_string());
        kv("vae.width1", self.vae_widths[1].to_string());
        kv("vae.width2", self.vae_widths[2].to_string());
        kv("vae.use_skips", self.vae_use_skips.to_string());
        kv("vae.steps", self.vae_steps.to_string());
        kv("vae.batch_size", self.vae_batch_size.to_string());
        kv("vae.lr", self.vae_lr.to_string());
        kv("vae.beta", self.vae_beta.to_string());
        kv("clop.width", self.clop_width.to_string());
        kv("clop.layers", self.clop_layers.to_string());
        kv("clop.heads", self.clop_heads.to_string());
        kv("clop.embed_dim", self.clop_embed_dim.to_string());
        kv("clop.steps", self.clop_steps.to_string());
        kv("clop.batch_size", self.clop_batch_size.to_string());
        kv("clop.lr", self.clop_lr.to_string());
        kv(
            "clop.fixed_tau",
            self.clop_fixed_tau.map_or_else(|| "none".to_string(), |v| v.to_string()),
        );
        kv("dit.layers", self.dit_layers.to_string());
        kv("dit.width", self.dit_width.to_string());
        kv("dit.heads", self.dit_heads.to_string());
        kv("dit.patch", self.dit_patch.to_string());
        kv(
            "dit.lama_layer",
            self.dit_lama_layer.map_or_else(|| "center".to_string(), |v| v.to_string()),
        );
        kv(
            "dit.lama_metric",
            match self.dit_lama_metric {
                LamaMetric::Cosine => "cosine".to_string(),
                LamaMetric::Mse => "mse".to_string(),
            },
        );
        kv("dit.global_attention", self.dit_global_attention.to_string());
        kv("dit.steps", self.dit_steps.to_string());
        kv("dit.batch_size", self.dit_batch_size.to_string());
        kv("dit.lr", self.dit_lr.to_string());
        kv("diffusion.t_max", self.diffusion_t_max.to_string());
        kv("diffusion.beta_start", self.diffusion_beta_start.to_string());
        kv("diffusion.beta_end", self.diffusion_beta_end.to_string());
        kv("diffusion.lambda_f", self.diffusion_lambda_f.to_string());
        kv("diffusion.sample_steps", self.diffusion_sample_steps.to_string());
        kv("metrics.pool_size", self.metrics_pool_size.to_string());
        kv("metrics.s_dis", self.metrics_s_dis.to_string());
        s
    }

    /// SHA-256 of the canonical dump.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        hex_string(&h.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_dump() {
        let cfg = RunConfig::default();
        let text = cfg.to_text();
        let mut parsed = RunConfig::default();
        parsed.apply_text(&text).unwrap();
        assert_eq!(parsed.to_text(), text);
        assert_eq!(parsed.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("dit.nonsense", "1").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(cfg.apply_text("vae.steps=10\nnot_a_key=2\n").is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("dit.layers=6\ndiffusion.lambda_f=0.25\ncuration.blur_threshold=25\n")
            .unwrap();
        assert_eq!(cfg.dit_layers, 6);
        assert_eq!(cfg.diffusion_lambda_f, 0.25);
        assert_eq!(cfg.curation.blur_threshold, 25.0);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\n\nseed=7 # trailing\n").unwrap();
        assert_eq!(cfg.seed, 7);
    }
}
