//! Clip-quality filters over manifests of precomputed signals.
//!
//! External-model outputs (optical flow, text boxes, aesthetic scores,
//! human detections) arrive as per-clip signals in the manifest; blur
//! and all pose-derived statistics are computed natively.

mod pipeline;

pub use pipeline::{
    evaluate_clip, read_manifest, run_pipeline, write_manifest, CaptionScorer, ClipRecord,
    GrayFrames, PipelineReport, StageStats, VerdictRecord,
};

use crate::error::{Error, Result};
use crate::pose::{FrameDims, PoseSequence};

/// Filter stage, in pipeline order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    VideoQuality,
    HumanQuality,
    CaptionQuality,
}

/// One rule's decision. `score` is the exact statistic the rule
/// thresholded.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterVerdict {
    pub stage: Stage,
    pub rule: &'static str,
    pub keep: bool,
    pub score: f64,
}

/// Thresholds for every rule. Boundary semantics: "≤ x discarded"
/// rules discard inclusively, "≥ x" keep rules keep inclusively.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CurationConfig {
    /// Keep when mean optical-flow magnitude exceeds this.
    pub movement_threshold: f64,
    /// Discard when any frame's text area exceeds this fraction of the frame.
    pub text_coverage_ratio: f64,
    /// Keep when the aesthetic score is at least this.
    pub aesthetic_threshold: f64,
    /// Keep when mean Laplacian variance exceeds this.
    pub blur_threshold: f64,
    /// Keep when mean adjacent-frame keypoint displacement exceeds this.
    pub motion_threshold: f64,
    /// Discard when mean human-bbox coverage is below this.
    pub coverage_threshold: f64,
    /// Discard when any sampled frame detects more humans than this.
    pub max_humans: u32,
    /// Keypoint confidence at or above which a facial point counts as detected.
    pub face_confidence: f32,
    /// When true, require the face visible in every sampled frame
    /// instead of at least one.
    pub face_visible_in_all: bool,
    /// Keep when caption/pose cosine similarity is at least this.
    pub caption_threshold: f64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        Self {
            movement_threshold: 0.5,
            text_coverage_ratio: 0.07,
            aesthetic_threshold: 4.0,
            blur_threshold: 20.0,
            motion_threshold: 1e-3,
            coverage_threshold: 1.0 / 3.0,
            max_humans: 1,
            face_confidence: 0.3,
            face_visible_in_all: false,
            caption_threshold: 0.2,
        }
    }
}

/// Mean of per-transition mean optical-flow magnitudes.
pub fn movement_intensity(flow_magnitudes: &[f64]) -> Result<f64> {
    if flow_magnitudes.is_empty() {
        return Err(Error::SignalMissing("flow_magnitudes".into()));
    }
    Ok(flow_magnitudes.iter().sum::<f64>() / flow_magnitudes.len() as f64)
}

pub fn movement_verdict(flow_magnitudes: &[f64], cfg: &CurationConfig) -> Result<FilterVerdict> {
    let score = movement_intensity(flow_magnitudes)?;
    Ok(FilterVerdict {
        stage: Stage::VideoQuality,
        rule: "movement_intensity",
        keep: score > cfg.movement_threshold,
        score,
    })
}

/// Discard when any frame's total text-box area exceeds the configured
/// fraction of the frame area. The score is the worst frame's ratio;
/// an absent or empty box list means zero coverage.
pub fn text_coverage_verdict(
    text_box_areas: Option<&[Vec<f64>]>,
    dims: FrameDims,
    cfg: &CurationConfig,
) -> FilterVerdict {
    let area = dims.area();
    let worst = text_box_areas
        .unwrap_or(&[])
        .iter()
        .map(|boxes| boxes.iter().sum::<f64>() / area)
        .fold(0.0f64, f64::max);
    FilterVerdict {
        stage: Stage::VideoQuality,
        rule: "text_coverage",
        keep: worst <= cfg.text_coverage_ratio,
        score: worst,
    }
}

pub fn aesthetic_verdict(score: Option<f64>, cfg: &CurationConfig) -> Result<FilterVerdict> {
    let score = score.ok_or_else(|| Error::SignalMissing("aesthetic".into()))?;
    Ok(FilterVerdict {
        stage: Stage::VideoQuality,
        rule: "aesthetic",
        keep: score >= cfg.aesthetic_threshold,
        score,
    })
}

/// Population variance of the 4-neighbor Laplacian with replicate
/// borders, for one grayscale frame.
pub fn laplacian_variance(frame: &[u8], width: usize, height: usize) -> Result<f64> {
    if width < 3 || height < 3 {
        return Err(Error::Argument(format!(
            "frame {width}x{height} smaller than the 3x3 Laplacian kernel"
        )));
    }
    if frame.len() != width * height {
        return Err(Error::Length(format!(
            "gray frame has {} pixels, expected {}",
            frame.len(),
            width * height
        )));
    }
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, height as isize - 1) as usize;
        let c = c.clamp(0, width as isize - 1) as usize;
        frame[r * width + c] as f64
    };
    let n = (width * height) as f64;
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for r in 0..height as isize {
        for c in 0..width as isize {
            let v = at(r - 1, c) + at(r + 1, c) + at(r, c - 1) + at(r, c + 1) - 4.0 * at(r, c);
            sum += v;
            sumsq += v * v;
        }
    }
    let mean = sum / n;
    Ok(sumsq / n - mean * mean)
}

/// Mean Laplacian variance across frames.
pub fn blur_intensity(frames: &[Vec<u8>], width: usize, height: usize) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::SignalMissing("gray_frames".into()));
    }
    let mut total = 0.0;
    for f in frames {
        total += laplacian_variance(f, width, height)?;
    }
    Ok(total / frames.len() as f64)
}

pub fn blur_verdict(score: f64, cfg: &CurationConfig) -> FilterVerdict {
    FilterVerdict {
        stage: Stage::VideoQuality,
        rule: "blur_intensity",
        keep: score > cfg.blur_threshold,
        score,
    }
}

/// Mean adjacent-frame keypoint displacement in pixel space:
/// (1/(T-1)) Σ_t (1/N) Σ_i ‖k_i^t − k_i^{t+1}‖₂.
pub fn motion_magnitude(seq: &PoseSequence) -> Result<f64> {
    let t = seq.frames();
    if t < 2 {
        return Err(Error::Length(format!("motion magnitude needs at least 2 frames, got {t}")));
    }
    let n = seq.keypoints();
    let mut total = 0.0;
    for f in 0..t - 1 {
        let mut frame_sum = 0.0;
        for p in 0..n {
            let a = seq.get(f, p);
            let b = seq.get(f + 1, p);
            let dx = (a[0] - b[0]) as f64;
            let dy = (a[1] - b[1]) as f64;
            frame_sum += (dx * dx + dy * dy).sqrt();
        }
        total += frame_sum / n as f64;
    }
    Ok(total / (t - 1) as f64)
}

pub fn motion_verdict(seq: &PoseSequence, cfg: &CurationConfig) -> Result<FilterVerdict> {
    let score = motion_magnitude(seq)?;
    Ok(FilterVerdict {
        stage: Stage::HumanQuality,
        rule: "motion_magnitude",
        keep: score > cfg.motion_threshold,
        score,
    })
}

/// Mean ratio of human-bbox area to frame area over the sampled frames.
pub fn human_coverage_verdict(
    bbox_areas: Option<&[f64]>,
    dims: FrameDims,
    cfg: &CurationConfig,
) -> Result<FilterVerdict> {
    let areas = bbox_areas.filter(|a| !a.is_empty()).ok_or_else(|| {
        Error::SignalMissing("human_bbox_areas".into())
    })?;
    let score = areas.iter().map(|a| a / dims.area()).sum::<f64>() / areas.len() as f64;
    Ok(FilterVerdict {
        stage: Stage::HumanQuality,
        rule: "human_coverage",
        keep: score >= cfg.coverage_threshold,
        score,
    })
}

/// Discard when any sampled frame detects more than `max_humans`.
/// The score is the worst sampled count.
pub fn human_count_verdict(counts: Option<&[u32]>, cfg: &CurationConfig) -> Result<FilterVerdict> {
    let counts = counts.ok_or_else(|| Error::SignalMissing("human_counts".into()))?;
    if counts.len() < 5 {
        return Err(Error::SignalMissing(format!(
            "human_counts has {} samples, need 5",
            counts.len()
        )));
    }
    let worst = *counts.iter().max().expect("non-empty");
    Ok(FilterVerdict {
        stage: Stage::HumanQuality,
        rule: "human_count",
        keep: worst <= cfg.max_humans,
        score: worst as f64,
    })
}

/// Deterministic uniform sampling of 5 frame indices from `[0, t)`:
/// floor(j·(t−1)/4) for j = 0..=4. Short clips repeat indices.
pub fn uniform_sample_indices(t: usize) -> [usize; 5] {
    let mut out = [0usize; 5];
    if t == 0 {
        return out;
    }
    for (j, o) in out.iter_mut().enumerate() {
        *o = j * (t - 1) / 4;
    }
    out
}

/// A sampled frame is face-visible when all five facial reference
/// points (nose, eyes, ears) meet the confidence threshold. The score
/// is the number of visible sampled frames.
pub fn face_visibility_verdict(seq: &PoseSequence, cfg: &CurationConfig) -> Result<FilterVerdict> {
    let points = seq.layout().face_reference_points()?;
    let samples = uniform_sample_indices(seq.frames());
    let mut visible = 0usize;
    for &f in &samples {
        if points.iter().all(|&p| seq.get(f, p)[2] >= cfg.face_confidence) {
            visible += 1;
        }
    }
    let keep = if cfg.face_visible_in_all { visible == 5 } else { visible >= 1 };
    Ok(FilterVerdict {
        stage: Stage::HumanQuality,
        rule: "face_visibility",
        keep,
        score: visible as f64,
    })
}

/// Cosine similarity between two equal-length embedding vectors.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "embedding lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        dot += x as f64 * y as f64;
        na += x as f64 * x as f64;
        nb += y as f64 * y as f64;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Argument("zero-norm embedding".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Keep when text/pose similarity is at least the threshold.
pub fn caption_similarity_verdict(
    text_embedding: &[f32],
    pose_embedding: &[f32],
    cfg: &CurationConfig,
) -> Result<FilterVerdict> {
    let score = cosine_similarity(text_embedding, pose_embedding)?;
    Ok(FilterVerdict {
        stage: Stage::CaptionQuality,
        rule: "caption_similarity",
        keep: score >= cfg.caption_threshold,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{default_layout, KeypointLayout};

    fn cfg() -> CurationConfig {
        CurationConfig::default()
    }

    #[test]
    fn movement_intensity_boundaries() {
        // all-zero flow: static video, discarded
        let v = movement_verdict(&[0.0, 0.0, 0.0], &cfg()).unwrap();
        assert!(!v.keep);
        assert_eq!(v.score, 0.0);
        // constant magnitude 1.0 keeps
        let v = movement_verdict(&[1.0; 7], &cfg()).unwrap();
        assert!(v.keep);
        assert_eq!(v.score, 1.0);
        // exactly 0.5 is discarded
        let v = movement_verdict(&[0.5, 0.5], &cfg()).unwrap();
        assert!(!v.keep);
        assert!(matches!(movement_verdict(&[], &cfg()), Err(Error::SignalMissing(_))));
    }

    #[test]
    fn text_coverage_boundaries() {
        let dims = FrameDims::new(100.0, 100.0).unwrap();
        // no boxes
        assert!(text_coverage_verdict(None, dims, &cfg()).keep);
        // one 10x10 box on a 100x100 frame: ratio 0.01
        let v = text_coverage_verdict(Some(&[vec![100.0]]), dims, &cfg());
        assert!(v.keep);
        assert!((v.score - 0.01).abs() < 1e-12);
        // area 701 of 10000 exceeds 0.07
        let v = text_coverage_verdict(Some(&[vec![700.0], vec![701.0]]), dims, &cfg());
        assert!(!v.keep);
    }

    #[test]
    fn aesthetic_boundary_inclusive() {
        assert!(aesthetic_verdict(Some(4.0), &cfg()).unwrap().keep);
        assert!(!aesthetic_verdict(Some(3.99), &cfg()).unwrap().keep);
        assert!(aesthetic_verdict(Some(9.5), &cfg()).unwrap().keep);
        assert!(matches!(aesthetic_verdict(None, &cfg()), Err(Error::SignalMissing(_))));
    }

    #[test]
    fn laplacian_constant_frame_is_zero() {
        let frame = vec![77u8; 25];
        assert_eq!(laplacian_variance(&frame, 5, 5).unwrap(), 0.0);
        let v = blur_verdict(0.0, &cfg());
        assert!(!v.keep);
    }

    #[test]
    fn laplacian_checkerboard_matches_hand_value() {
        // 4x4 checkerboard of 0/255 in 2x2 blocks reduced to the unit
        // case: alternating single pixels on a 3x3 grid is hand-checked
        // against the brute-force oracle below; the 2x2-block pattern
        // at 4x4 exercises the replicate border.
        let mut frame = vec![0u8; 16];
        for r in 0..4 {
            for c in 0..4 {
                if ((r / 2) + (c / 2)) % 2 == 0 {
                    frame[r * 4 + c] = 255;
                }
            }
        }
        let got = laplacian_variance(&frame, 4, 4).unwrap();
        let expect = oracle_laplacian_variance(&frame, 4, 4);
        assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    }

    #[test]
    fn blur_boundary_exactly_20_discarded() {
        assert!(!blur_verdict(20.0, &cfg()).keep);
        assert!(blur_verdict(20.0 + 1e-9, &cfg()).keep);
    }

    #[test]
    fn blur_rejects_tiny_frames() {
        assert!(matches!(laplacian_variance(&[0; 4], 2, 2), Err(Error::Argument(_))));
    }

    /// Independent oracle: materialize the replicate-padded image and
    /// convolve with the explicit 3x3 stencil.
    fn oracle_laplacian_variance(frame: &[u8], w: usize, h: usize) -> f64 {
        let kernel = [[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]];
        let mut padded = vec![0.0f64; (w + 2) * (h + 2)];
        for r in 0..h + 2 {
            for c in 0..w + 2 {
                let rr = r.saturating_sub(1).min(h - 1);
                let cc = c.saturating_sub(1).min(w - 1);
                padded[r * (w + 2) + c] = frame[rr * w + cc] as f64;
            }
        }
        let mut vals = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for (kr, krow) in kernel.iter().enumerate() {
                    for (kc, &kv) in krow.iter().enumerate() {
                        acc += kv * padded[(r + kr) * (w + 2) + c + kc];
                    }
                }
                vals.push(acc);
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }

    #[test]
    fn blur_matches_oracle_on_random_16x16() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..5 {
            let frame: Vec<u8> = (0..256).map(|_| rng.gen()).collect();
            let got = laplacian_variance(&frame, 16, 16).unwrap();
            let expect = oracle_laplacian_variance(&frame, 16, 16);
            assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
        }
    }

    fn moving_sequence(n_points: usize, frames: usize, step: (f32, f32), moving: usize) -> PoseSequence {
        let layout = KeypointLayout::flat(n_points).unwrap();
        let mut seq = PoseSequence::zeros(frames, layout);
        for f in 0..frames {
            for p in 0..n_points {
                if p < moving {
                    seq.set(f, p, [10.0 + step.0 * f as f32, 10.0 + step.1 * f as f32, 1.0]);
                } else {
                    seq.set(f, p, [10.0, 10.0, 1.0]);
                }
            }
        }
        seq
    }

    #[test]
    fn motion_magnitude_examples() {
        // static sequence discards
        let v = motion_verdict(&moving_sequence(128, 6, (0.0, 0.0), 0), &cfg()).unwrap();
        assert!(!v.keep);
        assert_eq!(v.score, 0.0);
        // one point moving 1 px/frame among 128: 1/128 per transition
        let v = motion_verdict(&moving_sequence(128, 6, (1.0, 0.0), 1), &cfg()).unwrap();
        assert!((v.score - 1.0 / 128.0).abs() < 1e-9);
        assert!(v.keep);
        // all points moving (3,4): displacement norm 5
        let v = motion_verdict(&moving_sequence(128, 4, (3.0, 4.0), 128), &cfg()).unwrap();
        assert!((v.score - 5.0).abs() < 1e-6);
        // fewer than two frames
        let single = moving_sequence(8, 1, (0.0, 0.0), 0);
        assert!(matches!(motion_magnitude(&single), Err(Error::Length(_))));
    }

    #[test]
    fn motion_magnitude_matches_bruteforce_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let layout = KeypointLayout::flat(16).unwrap();
        let mut seq = PoseSequence::zeros(16, layout);
        for f in 0..16 {
            for p in 0..16 {
                seq.set(f, p, [rng.gen_range(0.0..64.0), rng.gen_range(0.0..64.0), 1.0]);
            }
        }
        let got = motion_magnitude(&seq).unwrap();
        // brute force with explicit loops
        let mut acc = 0.0f64;
        for f in 0..15 {
            let mut inner = 0.0f64;
            for p in 0..16 {
                let a = seq.get(f, p);
                let b = seq.get(f + 1, p);
                inner += (((a[0] - b[0]) as f64).powi(2) + ((a[1] - b[1]) as f64).powi(2)).sqrt();
            }
            acc += inner / 16.0;
        }
        acc /= 15.0;
        assert!((got - acc).abs() < 1e-9);
    }

    #[test]
    fn human_coverage_examples() {
        let dims = FrameDims::new(100.0, 100.0).unwrap();
        // bbox == frame
        let v = human_coverage_verdict(Some(&[10000.0]), dims, &cfg()).unwrap();
        assert!(v.keep);
        assert!((v.score - 1.0).abs() < 1e-12);
        // ratio 0.2 discards
        assert!(!human_coverage_verdict(Some(&[2000.0]), dims, &cfg()).unwrap().keep);
        // mean of {0.5, 0.2, 0.4, 0.3, 0.35} = 0.35 keeps
        let areas = [5000.0, 2000.0, 4000.0, 3000.0, 3500.0];
        let v = human_coverage_verdict(Some(&areas), dims, &cfg()).unwrap();
        assert!(v.keep);
        assert!((v.score - 0.35).abs() < 1e-12);
        // exactly 1/3 keeps (not below)
        let v = human_coverage_verdict(Some(&[10000.0 / 3.0]), dims, &cfg()).unwrap();
        assert!(v.keep);
        assert!(matches!(
            human_coverage_verdict(None, dims, &cfg()),
            Err(Error::SignalMissing(_))
        ));
    }

    #[test]
    fn human_count_examples() {
        assert!(human_count_verdict(Some(&[1, 1, 1, 1, 1]), &cfg()).unwrap().keep);
        assert!(!human_count_verdict(Some(&[1, 2, 1, 1, 1]), &cfg()).unwrap().keep);
        // zero does not exceed one
        assert!(human_count_verdict(Some(&[0, 1, 1, 1, 1]), &cfg()).unwrap().keep);
        assert!(matches!(
            human_count_verdict(Some(&[1, 1, 1]), &cfg()),
            Err(Error::SignalMissing(_))
        ));
    }

    #[test]
    fn uniform_sampling_is_deterministic() {
        assert_eq!(uniform_sample_indices(64), [0, 15, 31, 47, 63]);
        assert_eq!(uniform_sample_indices(5), [0, 1, 2, 3, 4]);
        assert_eq!(uniform_sample_indices(2), [0, 0, 0, 0, 1]);
        assert_eq!(uniform_sample_indices(1), [0, 0, 0, 0, 0]);
    }

    fn face_sequence(frames: usize, visible_frames: &[usize]) -> PoseSequence {
        let mut seq = PoseSequence::zeros(frames, default_layout());
        let pts = seq.layout().face_reference_points().unwrap();
        for &f in visible_frames {
            for &p in &pts {
                seq.set(f, p, [0.0, 0.0, 1.0]);
            }
        }
        seq
    }

    #[test]
    fn face_visibility_examples() {
        // visible everywhere
        let all = face_sequence(10, &(0..10).collect::<Vec<_>>());
        assert!(face_visibility_verdict(&all, &cfg()).unwrap().keep);
        // nose always invisible
        let mut noseless = face_sequence(10, &(0..10).collect::<Vec<_>>());
        let nose = noseless.layout().face_reference_points().unwrap()[0];
        for f in 0..10 {
            noseless.set(f, nose, [0.0, 0.0, 0.0]);
        }
        assert!(!face_visibility_verdict(&noseless, &cfg()).unwrap().keep);
        // visible only in sampled frame index 3 of 5 (frame 6 of 0..=9 sampling)
        let sampled = uniform_sample_indices(10);
        let one = face_sequence(10, &[sampled[3]]);
        let v = face_visibility_verdict(&one, &cfg()).unwrap();
        assert!(v.keep);
        assert_eq!(v.score, 1.0);
        // strict mode requires all sampled frames
        let strict = CurationConfig { face_visible_in_all: true, ..cfg() };
        assert!(!face_visibility_verdict(&one, &strict).unwrap().keep);
        assert!(face_visibility_verdict(&all, &strict).unwrap().keep);
    }

    #[test]
    fn caption_similarity_examples() {
        let e1 = vec![1.0f32, 0.0, 0.0];
        let e2 = vec![0.0f32, 1.0, 0.0];
        let neg: Vec<f32> = e1.iter().map(|v| -v).collect();
        assert!(caption_similarity_verdict(&e1, &e1, &cfg()).unwrap().keep);
        let v = caption_similarity_verdict(&e1, &e2, &cfg()).unwrap();
        assert!(!v.keep);
        assert!(v.score.abs() < 1e-12);
        let v = caption_similarity_verdict(&e1, &neg, &cfg()).unwrap();
        assert!(!v.keep);
        assert!((v.score + 1.0).abs() < 1e-12);
        assert!(matches!(
            caption_similarity_verdict(&[0.0, 0.0], &[1.0, 0.0], &cfg()),
            Err(Error::Argument(_))
        ));
    }
}
