//! Manifest-driven filter pipeline.
//!
//! Manifests are JSON lines, one clip per line. The output manifest
//! carries every rule verdict plus the final keep decision; clips stop
//! at their first discarding rule. Unreadable entries are recorded as
//! error verdicts and the pipeline continues.

use super::{CurationConfig, FilterVerdict, Stage};
use crate::error::{Error, Result};
use crate::pose::{load_pose_sequence, FrameDims, PoseSequence};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Grayscale rasters for native blur computation.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct GrayFrames {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<Vec<u8>>,
}

/// One clip in a manifest. Absent optional signals surface as
/// signal-missing errors in the rules that need them.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClipRecord {
    pub id: String,
    pub caption: String,
    pub pose_path: String,
    pub frame_width: f64,
    pub frame_height: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_magnitudes: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_box_areas: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aesthetic: Option<f64>,
    /// Precomputed mean Laplacian variance; used when `gray_frames` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blur: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gray_frames: Option<GrayFrames>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_bbox_areas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub human_counts: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub verdicts: Vec<VerdictRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<bool>,
}

/// Serialized verdict. `score` is absent for error verdicts.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VerdictRecord {
    pub stage: Stage,
    pub rule: String,
    pub keep: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl From<FilterVerdict> for VerdictRecord {
    fn from(v: FilterVerdict) -> Self {
        Self { stage: v.stage, rule: v.rule.to_string(), keep: v.keep, score: Some(v.score), error: None }
    }
}

/// Per-stage counts over the whole run.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct StageStats {
    pub entered: usize,
    pub survived: usize,
}

impl StageStats {
    pub fn retention_pct(&self) -> f64 {
        if self.entered == 0 {
            0.0
        } else {
            100.0 * self.survived as f64 / self.entered as f64
        }
    }
}

/// Pipeline summary written alongside the output manifest.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PipelineReport {
    pub total: usize,
    pub kept: usize,
    pub errored: usize,
    pub video_quality: StageStats,
    pub human_quality: StageStats,
    pub caption_quality: StageStats,
    /// rule name -> number of clips that rule discarded
    pub discards_by_rule: Vec<(String, usize)>,
}

/// Scoring hook for the caption-quality stage: caption text, raw
/// pixel-space pose, and frame dims to semantic similarity. `None`
/// skips the stage (no alignment model configured).
pub type CaptionScorer<'a> = Option<&'a dyn Fn(&str, &PoseSequence, FrameDims) -> Result<f64>>;

/// Evaluate every rule for one clip, stopping at the first discard.
/// The pose file is loaded relative to `base_dir`.
pub fn evaluate_clip(
    record: &ClipRecord,
    base_dir: &Path,
    cfg: &CurationConfig,
    caption_scorer: CaptionScorer,
) -> (Vec<VerdictRecord>, bool) {
    let mut verdicts: Vec<VerdictRecord> = Vec::new();
    let mut keep = true;

    let apply = |verdicts: &mut Vec<VerdictRecord>, keep: &mut bool, stage: Stage, rule: &str, res: Result<FilterVerdict>| -> bool {
        match res {
            Ok(v) => {
                let k = v.keep;
                verdicts.push(v.into());
                if !k {
                    *keep = false;
                }
                k
            }
            Err(e) => {
                verdicts.push(VerdictRecord {
                    stage,
                    rule: rule.to_string(),
                    keep: false,
                    score: None,
                    error: Some(e.to_string()),
                });
                *keep = false;
                false
            }
        }
    };

    let dims = match FrameDims::new(record.frame_width, record.frame_height) {
        Ok(d) => d,
        Err(e) => {
            verdicts.push(VerdictRecord {
                stage: Stage::VideoQuality,
                rule: "frame_dims".to_string(),
                keep: false,
                score: None,
                error: Some(e.to_string()),
            });
            return (verdicts, false);
        }
    };

    // -- video quality --
    let flow = record.flow_magnitudes.as_deref().unwrap_or(&[]);
    if !apply(&mut verdicts, &mut keep, Stage::VideoQuality, "movement_intensity",
        super::movement_verdict(flow, cfg))
    {
        return (verdicts, false);
    }
    if !apply(&mut verdicts, &mut keep, Stage::VideoQuality, "text_coverage",
        Ok(super::text_coverage_verdict(record.text_box_areas.as_deref(), dims, cfg)))
    {
        return (verdicts, false);
    }
    if !apply(&mut verdicts, &mut keep, Stage::VideoQuality, "aesthetic",
        super::aesthetic_verdict(record.aesthetic, cfg))
    {
        return (verdicts, false);
    }
    let blur_score = match (&record.gray_frames, record.blur) {
        (Some(g), _) => super::blur_intensity(&g.frames, g.width, g.height),
        (None, Some(b)) => Ok(b),
        (None, None) => Err(Error::SignalMissing("blur or gray_frames".into())),
    };
    if !apply(&mut verdicts, &mut keep, Stage::VideoQuality, "blur_intensity",
        blur_score.map(|s| super::blur_verdict(s, cfg)))
    {
        return (verdicts, false);
    }

    // -- human quality (pose-derived) --
    let pose_path = base_dir.join(&record.pose_path);
    let seq = match load_pose_sequence(&pose_path) {
        Ok(s) => s,
        Err(e) => {
            verdicts.push(VerdictRecord {
                stage: Stage::HumanQuality,
                rule: "pose_load".to_string(),
                keep: false,
                score: None,
                error: Some(format!("{}: {e}", record.pose_path)),
            });
            return (verdicts, false);
        }
    };
    if !apply(&mut verdicts, &mut keep, Stage::HumanQuality, "motion_magnitude",
        super::motion_verdict(&seq, cfg))
    {
        return (verdicts, false);
    }
    if !apply(&mut verdicts, &mut keep, Stage::HumanQuality, "human_coverage",
        super::human_coverage_verdict(record.human_bbox_areas.as_deref(), dims, cfg))
    {
        return (verdicts, false);
    }
    if !apply(&mut verdicts, &mut keep, Stage::HumanQuality, "human_count",
        super::human_count_verdict(record.human_counts.as_deref(), cfg))
    {
        return (verdicts, false);
    }
    if !apply(&mut verdicts, &mut keep, Stage::HumanQuality, "face_visibility",
        super::face_visibility_verdict(&seq, cfg))
    {
        return (verdicts, false);
    }

    // -- caption quality --
    if let Some(scorer) = caption_scorer {
        let res = scorer(&record.caption, &seq, dims).map(|score| FilterVerdict {
            stage: Stage::CaptionQuality,
            rule: "caption_similarity",
            keep: score >= cfg.caption_threshold,
            score,
        });
        if !apply(&mut verdicts, &mut keep, Stage::CaptionQuality, "caption_similarity", res) {
            return (verdicts, false);
        }
    }

    (verdicts, keep)
}

/// Keep pose paths resolvable from the output manifest's directory:
/// try to re-relativize against it, falling back to an absolute path.
fn relocate_pose_path(pose_path: &str, in_dir: &Path, out_dir: &Path) -> String {
    let abs_in = in_dir.join(pose_path);
    let canon_in = abs_in.canonicalize().unwrap_or(abs_in);
    match out_dir.canonicalize() {
        Ok(canon_out) => match canon_in.strip_prefix(&canon_out) {
            Ok(rel) => rel.display().to_string(),
            Err(_) => canon_in.display().to_string(),
        },
        Err(_) => canon_in.display().to_string(),
    }
}

/// Read a JSONL manifest.
pub fn read_manifest(path: &Path) -> Result<Vec<ClipRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClipRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Write records as JSONL.
pub fn write_manifest(path: &Path, records: &[ClipRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for rec in records {
        serde_json::to_writer(&mut buf, rec)?;
        buf.write_all(b"\n")?;
    }
    crate::util::atomic_write(path, &buf)
}

/// Run all filter stages over a manifest. Writes the annotated output
/// manifest (all clips, with verdicts and `kept`) and returns the
/// per-stage statistics. Clips are processed and written in manifest
/// order.
pub fn run_pipeline(
    manifest_in: &Path,
    manifest_out: &Path,
    cfg: &CurationConfig,
    caption_scorer: CaptionScorer,
) -> Result<PipelineReport> {
    let records = read_manifest(manifest_in)?;
    let base_dir = manifest_in.parent().unwrap_or(Path::new(".")).to_path_buf();
    let out_dir = manifest_out.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut out_records = Vec::with_capacity(records.len());
    let mut report = PipelineReport {
        total: records.len(),
        kept: 0,
        errored: 0,
        video_quality: StageStats::default(),
        human_quality: StageStats::default(),
        caption_quality: StageStats::default(),
        discards_by_rule: Vec::new(),
    };
    let mut rule_discards: Vec<(String, usize)> = Vec::new();

    for mut rec in records {
        let (verdicts, kept) = evaluate_clip(&rec, &base_dir, cfg, caption_scorer);
        if verdicts.iter().any(|v| v.error.is_some()) {
            report.errored += 1;
        }
        if let Some(last) = verdicts.last() {
            if !kept {
                match rule_discards.iter_mut().find(|(r, _)| *r == last.rule) {
                    Some((_, n)) => *n += 1,
                    None => rule_discards.push((last.rule.clone(), 1)),
                }
            }
        }
        for (stage, stats) in [
            (Stage::VideoQuality, &mut report.video_quality),
            (Stage::HumanQuality, &mut report.human_quality),
            (Stage::CaptionQuality, &mut report.caption_quality),
        ] {
            let entered = verdicts.iter().any(|v| v.stage == stage)
                || (stage == Stage::VideoQuality && !verdicts.is_empty());
            if entered {
                stats.entered += 1;
                let failed_here = !kept && verdicts.last().map(|v| v.stage) == Some(stage);
                if !failed_here {
                    stats.survived += 1;
                }
            }
        }
        if kept {
            report.kept += 1;
        }
        rec.verdicts = verdicts;
        rec.kept = Some(kept);
        rec.pose_path = relocate_pose_path(&rec.pose_path, &base_dir, &out_dir);
        out_records.push(rec);
    }
    report.discards_by_rule = rule_discards;
    write_manifest(manifest_out, &out_records)?;
    Ok(report)
}
