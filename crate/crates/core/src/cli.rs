//! Command-line entry points: dataset synthesis, curation, training,
//! sampling, sequence prediction, evaluation, and rendering.
//!
//! Every run writes its effective config and a run manifest into the
//! output directory, enough to re-execute the run exactly.

use crate::checkpoint::Archive;
use crate::clop::{self, Clop, ClopConfig, ClopTag, ClopTrainConfig, TextInput, Vocabulary};
use crate::config::RunConfig;
use crate::curation::{self};
use crate::data;
use crate::diffusion::{
    ancestral_sample, inpaint_sample, strided_timesteps, train_dit, DitDenoiser, DitTrainConfig,
    DitTrainItem, NoiseSchedule,
};
use crate::dit::{DitConfig, MotionDit};
use crate::error::{Error, Result};
use crate::metrics::{self, feature_io, FeatureSet, MetricReport};
use crate::pose::{
    load_pose_sequence, render_pose_frames, save_pose_sequence, FrameDims, PoseSequence,
};
use crate::tensor::Tensor;
use crate::vae::{train_vae, LatentSequence, PoseVae, VaeConfig, VaeTrainConfig};
use clap::{Args, Parser, Subcommand};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "posegen", about = "Text-to-pose generation toolkit", version)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Config file of key=value lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Inline overrides, repeatable: --set dit.layers=6
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.sets {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{kv}'")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic caption/pose corpus with a manifest.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        /// Number of clips.
        #[arg(long, default_value_t = 256)]
        n: usize,
        /// 0 = diverse attributes, 2 = canonical two-class corpus.
        #[arg(long, default_value_t = 0)]
        classes: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run the quality filters over a clip manifest.
    Curate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Alignment checkpoint enabling the caption-quality stage.
        #[arg(long)]
        clop: Option<PathBuf>,
        /// Pipeline statistics report path (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the pose VAE on a curated manifest.
    TrainVae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the contrastive text-pose model.
    TrainClop {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Checkpoint role: filter or eval.
        #[arg(long, default_value = "eval")]
        tag: String,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train the denoiser on VAE latents with the alignment loss.
    TrainDit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        clop: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a pose sequence from a caption.
    Sample {
        #[arg(long)]
        dit: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        clop: PathBuf,
        #[arg(long)]
        caption: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Sampling steps (below T runs the strided sampler).
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Complete a partially known sequence (pose prediction).
    PredictSequence {
        #[arg(long)]
        dit: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        clop: PathBuf,
        /// Normalized pose file carrying the known frames.
        #[arg(long)]
        known: PathBuf,
        /// Comma-separated known frame indices, e.g. 0,63
        #[arg(long)]
        mask: String,
        #[arg(long)]
        caption: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Export CLoP features/embeddings for a manifest.
    Embed {
        #[arg(long)]
        clop: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Pre-projection pose features (FID/Diversity space).
        #[arg(long)]
        out_pose_features: Option<PathBuf>,
        /// Projected, normalized pose embeddings (retrieval space).
        #[arg(long)]
        out_pose_embeddings: Option<PathBuf>,
        /// Projected, normalized text embeddings.
        #[arg(long)]
        out_text_embeddings: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Compute the metric suite from feature files.
    Evaluate {
        /// Ground-truth pose features.
        #[arg(long)]
        gt: PathBuf,
        /// Generated pose features.
        #[arg(long)]
        pred: PathBuf,
        /// Text embeddings matched row-wise with `pred`.
        #[arg(long)]
        texts: PathBuf,
        /// Generated pose embeddings in the text space; defaults to
        /// `pred` when the dimensions already match.
        #[arg(long)]
        pred_emb: Option<PathBuf>,
        /// Per-text sample groups (rows in blocks of 32) for the
        /// MultiModality metric.
        #[arg(long)]
        mm_pred: Option<PathBuf>,
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Render a pose file to PNG frames.
    Render {
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512.0)]
        width: f64,
        #[arg(long, default_value_t = 512.0)]
        height: f64,
        /// Coordinate space of the file: normalized or pixel.
        #[arg(long, default_value = "normalized")]
        space: String,
        /// Visibility threshold.
        #[arg(long, default_value_t = 0.3)]
        threshold: f32,
    },
}

/// Record of one completed run, written atomically at the end.
#[derive(Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub checkpoints: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<serde_json::Value>,
    pub wall_clock_secs: f64,
}

fn write_run_artifacts(
    out_dir: &Path,
    command: &str,
    cfg: &RunConfig,
    checkpoints: &[PathBuf],
    metrics: Option<serde_json::Value>,
    started: Instant,
) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    crate::util::atomic_write(&out_dir.join("config.txt"), cfg.to_text().as_bytes())?;
    let manifest = RunManifest {
        command: command.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        checkpoints: checkpoints.iter().map(|p| p.display().to_string()).collect(),
        metrics,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_vec_pretty(&manifest)?;
    crate::util::atomic_write(&out_dir.join("run_manifest.json"), &json)
}

/// Normalized, fixed-length training examples from a curated manifest.
/// Clips marked `kept = false` are skipped; longer clips are cropped
/// with a seeded offset.
pub fn load_training_set(
    manifest: &Path,
    frames: usize,
    seed: u64,
) -> Result<Vec<(String, PoseSequence)>> {
    let records = curation::read_manifest(manifest)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for rec in records {
        if rec.kept == Some(false) {
            continue;
        }
        let seq = load_pose_sequence(base.join(&rec.pose_path))?;
        if seq.frames() < frames {
            continue; // too short for the training window
        }
        let offset = rng.gen_range(0..=seq.frames() - frames);
        let cropped = seq.crop_to_window(frames, offset)?;
        let dims = FrameDims::new(rec.frame_width, rec.frame_height)?;
        out.push((rec.caption, cropped.normalize_coordinates(dims)?));
    }
    if out.is_empty() {
        return Err(Error::Argument(format!("no usable clips in {}", manifest.display())));
    }
    Ok(out)
}

pub fn cmd_synth_data(out: &Path, n: usize, classes: usize, cfg: &RunConfig) -> Result<usize> {
    let started = Instant::now();
    let items = match classes {
        0 => data::synth_dataset(n, cfg.frames, cfg.seed),
        2 => data::synth_two_class(n / 2, cfg.frames, cfg.seed),
        other => return Err(Error::Argument(format!("classes must be 0 or 2, got {other}"))),
    };
    let poses_dir = out.join("poses");
    std::fs::create_dir_all(&poses_dir)?;
    let mut records = Vec::with_capacity(items.len());
    for item in &items {
        let rel = format!("poses/{}.mvp", item.id);
        save_pose_sequence(&item.pose, out.join(&rel))?;
        records.push(data::passing_clip_record(item, rel)?);
    }
    curation::write_manifest(&out.join("manifest.jsonl"), &records)?;
    write_run_artifacts(out, "synth-data", cfg, &[], None, started)?;
    Ok(items.len())
}

pub fn cmd_curate(
    input: &Path,
    out: &Path,
    clop_ck: Option<&Path>,
    report_path: Option<&Path>,
    cfg: &RunConfig,
) -> Result<curation::PipelineReport> {
    let started = Instant::now();
    let model = clop_ck.map(Clop::<f32>::load).transpose()?;
    let scorer = model.as_ref().map(|m| {
        move |caption: &str, pose: &PoseSequence, dims: FrameDims| -> Result<f64> {
            let normalized = pose.normalize_coordinates(dims)?;
            let e = m.embed_caption(caption)?;
            let p = m.embed_pose(&normalized)?;
            e.similarity(&p)
        }
    });
    let scorer_ref: curation::CaptionScorer = scorer.as_ref().map(|f| f as _);
    let report = curation::run_pipeline(input, out, &cfg.curation, scorer_ref)?;
    if let Some(rp) = report_path {
        crate::util::atomic_write(rp, &serde_json::to_vec_pretty(&report)?)?;
    }
    let out_dir = out.parent().unwrap_or(Path::new(".")).to_path_buf();
    write_run_artifacts(
        &out_dir,
        "curate",
        cfg,
        &[],
        Some(serde_json::to_value(&report)?),
        started,
    )?;
    Ok(report)
}

pub fn cmd_train_vae(data_manifest: &Path, out_dir: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let started = Instant::now();
    let set = load_training_set(data_manifest, cfg.frames, cfg.seed)?;
    let tensors: Vec<Tensor<f32>> = set.iter().map(|(_, p)| p.to_tensor()).collect();
    let mut vae = PoseVae::<f32>::new(
        VaeConfig {
            keypoints: cfg.vae_keypoints,
            latent_channels: cfg.vae_latent_channels,
            widths: cfg.vae_widths,
            use_skips: cfg.vae_use_skips,
        },
        cfg.seed,
    )?;
    let stats = train_vae(
        &mut vae,
        &tensors,
        &VaeTrainConfig {
            steps: cfg.vae_steps,
            batch_size: cfg.vae_batch_size,
            lr: cfg.vae_lr,
            beta: cfg.vae_beta,
            seed: cfg.seed,
            snapshot_every: 50,
        },
    )?;
    let ck = out_dir.join("vae.mvck");
    std::fs::create_dir_all(out_dir)?;
    vae.checkpoint().save(&ck)?;
    write_run_artifacts(
        out_dir,
        "train-vae",
        cfg,
        &[ck.clone()],
        Some(serde_json::json!({
            "steps": stats.steps_run,
            "final_recon_sum": stats.final_recon_sum,
            "final_recon_mse": stats.final_recon_mse,
            "final_kl": stats.final_kl,
        })),
        started,
    )?;
    Ok(ck)
}

pub fn cmd_train_clop(
    data_manifest: &Path,
    out_dir: &Path,
    tag: ClopTag,
    cfg: &RunConfig,
) -> Result<PathBuf> {
    let started = Instant::now();
    let set = load_training_set(data_manifest, cfg.frames, cfg.seed)?;
    let vocab = Vocabulary::build(set.iter().map(|(c, _)| c.as_str()));
    let mut model = Clop::<f32>::new(
        ClopConfig {
            vocab_size: vocab.len(),
            keypoints: cfg.vae_keypoints,
            width: cfg.clop_width,
            layers: cfg.clop_layers,
            heads: cfg.clop_heads,
            embed_dim: cfg.clop_embed_dim,
        },
        vocab,
        tag,
        cfg.seed,
    )?;
    let pairs: Vec<(TextInput, PoseSequence)> = set
        .iter()
        .map(|(c, p)| Ok((TextInput::from_caption(model.vocab(), c)?, p.clone())))
        .collect::<Result<_>>()?;
    let stats = clop::train_clop(
        &mut model,
        &pairs,
        &ClopTrainConfig {
            steps: cfg.clop_steps,
            batch_size: cfg.clop_batch_size,
            lr: cfg.clop_lr,
            seed: cfg.seed,
            fixed_tau: cfg.clop_fixed_tau,
        },
    )?;
    let ck = out_dir.join("clop.mvck");
    std::fs::create_dir_all(out_dir)?;
    model.save(&ck)?;
    write_run_artifacts(
        out_dir,
        "train-clop",
        cfg,
        &[ck.clone()],
        Some(serde_json::json!({
            "steps": stats.steps_run,
            "initial_loss": stats.initial_loss,
            "final_loss": stats.final_loss,
            "temperature": model.temperature(),
        })),
        started,
    )?;
    Ok(ck)
}

/// Build denoiser training items: posterior-mean latents, conditioning
/// vectors, and frozen pose embeddings.
pub fn build_dit_items(
    set: &[(String, PoseSequence)],
    vae: &PoseVae<f32>,
    clop_model: &Clop<f32>,
) -> Result<Vec<DitTrainItem<f32>>> {
    let mut items = Vec::with_capacity(set.len());
    for (caption, pose) in set {
        let z0 = vae.encode(pose)?.mu;
        let cond_vec = clop_model.caption_condition(&TextInput::from_caption(clop_model.vocab(), caption)?)?;
        let cond = Tensor::new(vec![cond_vec.len()], cond_vec)?;
        let emb = clop_model.embed_pose(pose)?;
        let pose_emb = Tensor::new(vec![emb.vector.len()], emb.vector.clone())?;
        items.push(DitTrainItem { z0, cond, pose_emb: Some(pose_emb) });
    }
    Ok(items)
}

pub fn cmd_train_dit(
    data_manifest: &Path,
    vae_ck: &Path,
    clop_ck: &Path,
    out_dir: &Path,
    cfg: &RunConfig,
) -> Result<PathBuf> {
    let started = Instant::now();
    let set = load_training_set(data_manifest, cfg.frames, cfg.seed)?;
    let vae = PoseVae::<f32>::from_checkpoint(&Archive::load(vae_ck)?)?;
    let clop_model = Clop::<f32>::load(clop_ck)?;
    let items = build_dit_items(&set, &vae, &clop_model)?;

    let mut model = MotionDit::<f32>::new(
        DitConfig {
            layers: cfg.dit_layers,
            width: cfg.dit_width,
            heads: cfg.dit_heads,
            patch: cfg.dit_patch,
            latent_points: vae.latent_points(),
            latent_channels: vae.cfg.latent_channels,
            cond_dim: clop::CONDITION_DIM,
            lama_layer: cfg.dit_lama_layer.unwrap_or(cfg.dit_layers / 2),
            lama_dim: clop_model.cfg.embed_dim,
            lama_metric: cfg.dit_lama_metric,
            global_attention: cfg.dit_global_attention,
            window_one: false,
        },
        cfg.seed,
    )?;
    let schedule =
        NoiseSchedule::linear(cfg.diffusion_t_max, cfg.diffusion_beta_start, cfg.diffusion_beta_end)?;
    let stats = train_dit(
        &mut model,
        &schedule,
        &items,
        &DitTrainConfig {
            steps: cfg.dit_steps,
            batch_size: cfg.dit_batch_size,
            lr: cfg.dit_lr,
            lambda_f: cfg.diffusion_lambda_f,
            seed: cfg.seed,
            snapshot_every: 200,
        },
    )?;
    let ck = out_dir.join("dit.mvck");
    std::fs::create_dir_all(out_dir)?;
    model.checkpoint().save(&ck)?;
    write_run_artifacts(
        out_dir,
        "train-dit",
        cfg,
        &[ck.clone()],
        Some(serde_json::json!({
            "steps": stats.steps_run,
            "final_loss": stats.final_loss,
            "final_l_d": stats.final_l_d,
            "final_l_f": stats.final_l_f,
        })),
        started,
    )?;
    Ok(ck)
}

/// Shared sampling stack: checkpoints + caption to a decoded sequence.
pub struct SamplingStack {
    pub vae: PoseVae<f32>,
    pub clop: Clop<f32>,
    pub dit: MotionDit<f32>,
    pub schedule: NoiseSchedule,
}

impl SamplingStack {
    pub fn load(dit: &Path, vae: &Path, clop_path: &Path, cfg: &RunConfig) -> Result<Self> {
        Ok(Self {
            vae: PoseVae::from_checkpoint(&Archive::load(vae)?)?,
            clop: Clop::load(clop_path)?,
            dit: MotionDit::from_checkpoint(&Archive::load(dit)?)?,
            schedule: NoiseSchedule::linear(
                cfg.diffusion_t_max,
                cfg.diffusion_beta_start,
                cfg.diffusion_beta_end,
            )?,
        })
    }

    pub fn condition(&self, caption: &str) -> Result<Tensor<f32>> {
        let cond =
            self.clop.caption_condition(&TextInput::from_caption(self.clop.vocab(), caption)?)?;
        Tensor::new(vec![cond.len()], cond)
    }

    /// Generate a normalized pose sequence.
    pub fn sample(&self, caption: &str, frames: usize, steps: usize, seed: u64) -> Result<PoseSequence> {
        let cond = self.condition(caption)?;
        let denoiser =
            DitDenoiser { model: &self.dit, text: cond, t_max: self.schedule.t_max() };
        let ts = strided_timesteps(self.schedule.t_max(), steps);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [frames, self.vae.latent_points(), self.vae.cfg.latent_channels];
        let z0 = ancestral_sample(&denoiser, &self.schedule, &shape, &ts, &mut rng)?;
        let decoded = self.vae.decode(&LatentSequence::new(z0)?)?;
        PoseSequence::from_tensor(&decoded, crate::pose::default_layout_for(self.vae.cfg.keypoints)?)
    }

    /// Complete a sequence whose `mask` frames are pinned to `known`.
    pub fn predict_sequence(
        &self,
        caption: &str,
        known: &PoseSequence,
        mask: &[bool],
        steps: usize,
        seed: u64,
    ) -> Result<PoseSequence> {
        let cond = self.condition(caption)?;
        let denoiser =
            DitDenoiser { model: &self.dit, text: cond, t_max: self.schedule.t_max() };
        let ts = strided_timesteps(self.schedule.t_max(), steps);
        let known_latent = self.vae.encode(known)?.mu;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0 = inpaint_sample(
            &denoiser,
            &self.schedule,
            &known_latent,
            mask,
            &ts,
            &mut rng,
            seed ^ 0xDEAD_BEEF,
        )?;
        let decoded = self.vae.decode(&LatentSequence::new(z0)?)?;
        PoseSequence::from_tensor(&decoded, crate::pose::default_layout_for(self.vae.cfg.keypoints)?)
    }
}

pub fn cmd_evaluate(
    gt: &Path,
    pred: &Path,
    texts: &Path,
    pred_emb: Option<&Path>,
    mm_pred: Option<&Path>,
    report_path: &Path,
    cfg: &RunConfig,
) -> Result<MetricReport> {
    let started = Instant::now();
    let gt_fs = feature_io::load(gt)?;
    let pred_fs = feature_io::load(pred)?;
    let text_fs = feature_io::load(texts)?;
    let pred_emb_fs = match pred_emb {
        Some(p) => feature_io::load(p)?,
        None => {
            if pred_fs.dim() != text_fs.dim() {
                return Err(Error::Argument(format!(
                    "pred features ({}d) and text embeddings ({}d) live in different spaces; \
                     pass --pred-emb",
                    pred_fs.dim(),
                    text_fs.dim()
                )));
            }
            pred_fs.clone()
        }
    };
    let fid = metrics::fid_between(&gt_fs, &pred_fs)?;
    let (rp1, rp2, rp3) =
        metrics::r_precision(&pred_emb_fs, &text_fs, cfg.metrics_pool_size, cfg.seed)?;
    let (div, with_repl) = metrics::diversity(&pred_fs, cfg.metrics_s_dis, cfg.seed)?;
    let mm = match mm_pred {
        Some(p) => {
            let fs = feature_io::load(p)?;
            let m = fs.count();
            if m % metrics::MM_SAMPLES != 0 {
                return Err(Error::Argument(format!(
                    "mm feature rows ({m}) not a multiple of {}",
                    metrics::MM_SAMPLES
                )));
            }
            let groups: Vec<FeatureSet> = (0..m / metrics::MM_SAMPLES)
                .map(|g| {
                    let rows: Vec<Vec<f64>> = (0..metrics::MM_SAMPLES)
                        .map(|j| fs.row(g * metrics::MM_SAMPLES + j).to_vec())
                        .collect();
                    FeatureSet::from_rows(&rows)
                })
                .collect::<Result<_>>()?;
            Some(metrics::multimodality(&groups)?)
        }
        None => None,
    };
    let mm_dist = metrics::mm_dist(&pred_emb_fs, &text_fs)?;
    let report = MetricReport {
        fid,
        rp_top1: rp1,
        rp_top2: rp2,
        rp_top3: rp3,
        diversity: div,
        diversity_with_replacement: with_repl,
        mm,
        mm_dist,
        pool_size: cfg.metrics_pool_size,
        s_dis: cfg.metrics_s_dis,
        seed: cfg.seed,
    };
    crate::util::atomic_write(report_path, &serde_json::to_vec_pretty(&report)?)?;
    let out_dir = report_path.parent().unwrap_or(Path::new(".")).to_path_buf();
    write_run_artifacts(
        &out_dir,
        "evaluate",
        cfg,
        &[],
        Some(serde_json::to_value(&report)?),
        started,
    )?;
    Ok(report)
}

pub fn cmd_embed(
    clop_ck: &Path,
    data_manifest: &Path,
    out_pose_features: Option<&Path>,
    out_pose_embeddings: Option<&Path>,
    out_text_embeddings: Option<&Path>,
    cfg: &RunConfig,
) -> Result<()> {
    let model = Clop::<f32>::load(clop_ck)?;
    let set = load_training_set(data_manifest, cfg.frames, cfg.seed)?;
    if let Some(path) = out_pose_features {
        let poses: Vec<&PoseSequence> = set.iter().map(|(_, p)| p).collect();
        let feats = model.pose_features(&poses)?;
        feature_io::save(&FeatureSet::new(feats)?, path)?;
    }
    if let Some(path) = out_pose_embeddings {
        let rows: Vec<Vec<f64>> = set
            .iter()
            .map(|(_, p)| {
                Ok(model.embed_pose(p)?.vector.iter().map(|&v| v as f64).collect())
            })
            .collect::<Result<_>>()?;
        feature_io::save(&FeatureSet::from_rows(&rows)?, path)?;
    }
    if let Some(path) = out_text_embeddings {
        let rows: Vec<Vec<f64>> = set
            .iter()
            .map(|(c, _)| {
                Ok(model.embed_caption(c)?.vector.iter().map(|&v| v as f64).collect())
            })
            .collect::<Result<_>>()?;
        feature_io::save(&FeatureSet::from_rows(&rows)?, path)?;
    }
    Ok(())
}

fn parse_mask(spec: &str, frames: usize) -> Result<Vec<bool>> {
    let mut mask = vec![false; frames];
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let idx: usize = part
            .parse()
            .map_err(|_| Error::Argument(format!("bad mask index '{part}'")))?;
        if idx >= frames {
            return Err(Error::Argument(format!("mask index {idx} outside 0..{frames}")));
        }
        mask[idx] = true;
    }
    Ok(mask)
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::SynthData { out, n, classes, cfg } => {
            let cfg = cfg.build()?;
            let count = cmd_synth_data(&out, n, classes, &cfg)?;
            println!("wrote {count} clips to {}", out.display());
            Ok(())
        }
        Command::Curate { input, out, clop, report, cfg } => {
            let cfg = cfg.build()?;
            let rep = cmd_curate(&input, &out, clop.as_deref(), report.as_deref(), &cfg)?;
            let pct = |s: &curation::StageStats| {
                if s.entered == 0 {
                    "n/a".to_string()
                } else {
                    format!("{:.1}%", s.retention_pct())
                }
            };
            println!(
                "kept {}/{} clips (video {}, human {}, caption {})",
                rep.kept,
                rep.total,
                pct(&rep.video_quality),
                pct(&rep.human_quality),
                pct(&rep.caption_quality)
            );
            Ok(())
        }
        Command::TrainVae { data, out_dir, cfg } => {
            let cfg = cfg.build()?;
            let ck = cmd_train_vae(&data, &out_dir, &cfg)?;
            println!("saved {}", ck.display());
            Ok(())
        }
        Command::TrainClop { data, out_dir, tag, cfg } => {
            let cfg = cfg.build()?;
            let tag = match tag.as_str() {
                "filter" => ClopTag::Filter,
                "eval" => ClopTag::Eval,
                other => return Err(Error::Config(format!("unknown tag '{other}'"))),
            };
            let ck = cmd_train_clop(&data, &out_dir, tag, &cfg)?;
            println!("saved {}", ck.display());
            Ok(())
        }
        Command::TrainDit { data, vae, clop, out_dir, cfg } => {
            let cfg = cfg.build()?;
            let ck = cmd_train_dit(&data, &vae, &clop, &out_dir, &cfg)?;
            println!("saved {}", ck.display());
            Ok(())
        }
        Command::Sample { dit, vae, clop, caption, seed, steps, out, cfg } => {
            let started = Instant::now();
            let mut cfg = cfg.build()?;
            cfg.seed = seed;
            let stack = SamplingStack::load(&dit, &vae, &clop, &cfg)?;
            let steps = steps.unwrap_or(cfg.diffusion_sample_steps);
            let seq = stack.sample(&caption, cfg.frames, steps, seed)?;
            save_pose_sequence(&seq, &out)?;
            let out_dir = out.parent().unwrap_or(Path::new(".")).to_path_buf();
            write_run_artifacts(&out_dir, "sample", &cfg, &[], None, started)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::PredictSequence { dit, vae, clop, known, mask, caption, seed, steps, out, cfg } => {
            let started = Instant::now();
            let mut cfg = cfg.build()?;
            cfg.seed = seed;
            let stack = SamplingStack::load(&dit, &vae, &clop, &cfg)?;
            let known_seq = load_pose_sequence(&known)?;
            let mask = parse_mask(&mask, known_seq.frames())?;
            let steps = steps.unwrap_or(cfg.diffusion_sample_steps);
            let seq = stack.predict_sequence(&caption, &known_seq, &mask, steps, seed)?;
            save_pose_sequence(&seq, &out)?;
            let out_dir = out.parent().unwrap_or(Path::new(".")).to_path_buf();
            write_run_artifacts(&out_dir, "predict-sequence", &cfg, &[], None, started)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Embed { clop, data, out_pose_features, out_pose_embeddings, out_text_embeddings, cfg } => {
            let cfg = cfg.build()?;
            cmd_embed(
                &clop,
                &data,
                out_pose_features.as_deref(),
                out_pose_embeddings.as_deref(),
                out_text_embeddings.as_deref(),
                &cfg,
            )
        }
        Command::Evaluate { gt, pred, texts, pred_emb, mm_pred, report, cfg } => {
            let cfg = cfg.build()?;
            let rep = cmd_evaluate(
                &gt,
                &pred,
                &texts,
                pred_emb.as_deref(),
                mm_pred.as_deref(),
                &report,
                &cfg,
            )?;
            println!(
                "fid {:.4}  rp@1 {:.3}  rp@2 {:.3}  rp@3 {:.3}  div {:.3}  mm_dist {:.3}",
                rep.fid, rep.rp_top1, rep.rp_top2, rep.rp_top3, rep.diversity, rep.mm_dist
            );
            Ok(())
        }
        Command::Render { pose, out, width, height, space, threshold } => {
            let seq = load_pose_sequence(&pose)?;
            let dims = FrameDims::new(width, height)?;
            let seq = match space.as_str() {
                "normalized" => seq,
                "pixel" => seq.normalize_coordinates(dims)?,
                other => return Err(Error::Argument(format!("unknown space '{other}'"))),
            };
            let paths = render_pose_frames(&seq, dims, &out, Some(threshold))?;
            println!("rendered {} frames to {}", paths.len(), out.display());
            Ok(())
        }
    }
}

/// Binary entry point; returns the process exit code.
pub fn run() -> i32 {
    let args = CliArgs::parse();
    match dispatch(args.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
