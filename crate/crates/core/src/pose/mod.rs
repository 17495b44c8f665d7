//! Pose-sequence data model: keypoint layout, coordinate
//! normalization, windowing, serialization, and skeleton rendering.

mod io;
mod render;

pub use render::render_pose_frames;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};
use std::ops::Range;

/// Channels per keypoint: x, y, confidence.
pub const CHANNELS: usize = 3;

/// Named partition of the keypoint axis into contiguous groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeypointLayout {
    groups: Vec<(String, Range<usize>)>,
    total: usize,
}

impl KeypointLayout {
    /// Validates that ranges are contiguous, disjoint, and cover
    /// `[0, total)` in order.
    pub fn new(groups: Vec<(String, Range<usize>)>) -> Result<Self> {
        let mut cursor = 0usize;
        for (name, r) in &groups {
            if r.start != cursor || r.end <= r.start {
                return Err(Error::Argument(format!(
                    "group '{name}' range {:?} is not contiguous from {cursor}",
                    r
                )));
            }
            cursor = r.end;
        }
        if cursor == 0 {
            return Err(Error::Argument("layout has no keypoints".into()));
        }
        Ok(Self { groups, total: cursor })
    }

    /// The 128-point whole-body convention: 18 body points, 68 face
    /// points, and 21 points per hand.
    pub fn default_128() -> Self {
        Self::new(vec![
            ("body".to_string(), 0..18),
            ("face".to_string(), 18..86),
            ("left_hand".to_string(), 86..107),
            ("right_hand".to_string(), 107..128),
        ])
        .expect("static layout is valid")
    }

    /// Single-group layout for non-standard point counts.
    pub fn flat(total: usize) -> Result<Self> {
        Self::new(vec![("points".to_string(), 0..total)])
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, Range<usize>)> {
        self.groups.iter().map(|(n, r)| (n.as_str(), r.clone()))
    }

    pub fn group(&self, name: &str) -> Option<Range<usize>> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, r)| r.clone())
    }

    /// Name of the group owning a keypoint index.
    pub fn group_of(&self, index: usize) -> Option<&str> {
        self.groups.iter().find(|(_, r)| r.contains(&index)).map(|(n, _)| n.as_str())
    }

    /// The five body-group reference points used by the face-visibility
    /// filter: nose, both eyes, both ears.
    pub fn face_reference_points(&self) -> Result<[usize; 5]> {
        let body = self
            .group("body")
            .ok_or_else(|| Error::Argument("layout has no 'body' group".into()))?;
        if body.len() < 18 {
            return Err(Error::Argument("'body' group too small for facial reference points".into()));
        }
        // nose, right eye, left eye, right ear, left ear in the 18-point order
        Ok([body.start, body.start + 14, body.start + 15, body.start + 16, body.start + 17])
    }

    /// Parse a layout file: one `name start end` triple per line, `#`
    /// comments allowed.
    pub fn parse(text: &str) -> Result<Self> {
        let mut groups = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let name = it.next().ok_or_else(|| Error::Format(format!("layout line {ln}")))?;
            let start: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("layout line {}: bad start", ln + 1)))?;
            let end: usize = it
                .next()
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("layout line {}: bad end", ln + 1)))?;
            groups.push((name.to_string(), start..end));
        }
        Self::new(groups)
    }
}

/// Pixel dimensions of the source frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameDims {
    pub width: f64,
    pub height: f64,
}

impl FrameDims {
    pub fn new(width: f64, height: f64) -> Result<Self> {
        if width <= 0.0 || height <= 0.0 || !width.is_finite() || !height.is_finite() {
            return Err(Error::Argument(format!("frame dims {width}x{height} must be positive")));
        }
        Ok(Self { width, height })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

/// A sequence of 2D keypoint frames: `frames × total × 3` values of
/// (x, y, confidence).
#[derive(Clone, Debug, PartialEq)]
pub struct PoseSequence {
    frames: usize,
    layout: KeypointLayout,
    data: Vec<f32>,
}

impl PoseSequence {
    pub fn new(frames: usize, layout: KeypointLayout, data: Vec<f32>) -> Result<Self> {
        let expect = frames * layout.total() * CHANNELS;
        if data.len() != expect {
            return Err(Error::Length(format!(
                "pose data has {} values, expected {} ({} frames x {} points x {})",
                data.len(),
                expect,
                frames,
                layout.total(),
                CHANNELS
            )));
        }
        for (i, chunk) in data.chunks(CHANNELS).enumerate() {
            if !chunk[0].is_finite() || !chunk[1].is_finite() {
                return Err(Error::NonFinite(format!("coordinates of keypoint record {i}")));
            }
            if !(0.0..=1.0).contains(&chunk[2]) {
                return Err(Error::Argument(format!(
                    "confidence {} of keypoint record {i} outside [0, 1]",
                    chunk[2]
                )));
            }
        }
        Ok(Self { frames, layout, data })
    }

    /// All-zero sequence (confidence zero).
    pub fn zeros(frames: usize, layout: KeypointLayout) -> Self {
        let n = frames * layout.total() * CHANNELS;
        Self { frames, layout, data: vec![0.0; n] }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn keypoints(&self) -> usize {
        self.layout.total()
    }

    pub fn layout(&self) -> &KeypointLayout {
        &self.layout
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// (x, y, confidence) of one keypoint.
    pub fn get(&self, frame: usize, point: usize) -> [f32; 3] {
        let base = (frame * self.layout.total() + point) * CHANNELS;
        [self.data[base], self.data[base + 1], self.data[base + 2]]
    }

    pub fn set(&mut self, frame: usize, point: usize, v: [f32; 3]) {
        let base = (frame * self.layout.total() + point) * CHANNELS;
        self.data[base..base + 3].copy_from_slice(&v);
    }

    /// Map pixel coordinates to [-1, 1]: x' = 2x/width - 1,
    /// y' = 2y/height - 1. Confidence is unchanged.
    pub fn normalize_coordinates(&self, dims: FrameDims) -> Result<PoseSequence> {
        let mut out = self.clone();
        let (w, h) = (dims.width as f32, dims.height as f32);
        for chunk in out.data.chunks_mut(CHANNELS) {
            chunk[0] = 2.0 * chunk[0] / w - 1.0;
            chunk[1] = 2.0 * chunk[1] / h - 1.0;
        }
        Ok(out)
    }

    /// Inverse of [`Self::normalize_coordinates`].
    pub fn denormalize_coordinates(&self, dims: FrameDims) -> Result<PoseSequence> {
        let mut out = self.clone();
        let (w, h) = (dims.width as f32, dims.height as f32);
        for chunk in out.data.chunks_mut(CHANNELS) {
            chunk[0] = (chunk[0] + 1.0) * 0.5 * w;
            chunk[1] = (chunk[1] + 1.0) * 0.5 * h;
        }
        Ok(out)
    }

    /// Contiguous window of `target_frames` frames starting at `offset`.
    pub fn crop_to_window(&self, target_frames: usize, offset: usize) -> Result<PoseSequence> {
        if self.frames < offset + target_frames {
            return Err(Error::Length(format!(
                "cannot crop {target_frames} frames at offset {offset} from {} frames",
                self.frames
            )));
        }
        let stride = self.layout.total() * CHANNELS;
        let data = self.data[offset * stride..(offset + target_frames) * stride].to_vec();
        Ok(PoseSequence { frames: target_frames, layout: self.layout.clone(), data })
    }

    /// View as an f × N × 3 tensor.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f32(v)).collect();
        Tensor::new(vec![self.frames, self.layout.total(), CHANNELS], data)
            .expect("pose buffer length is validated")
    }

    /// Build from an f × N × 3 tensor, clamping confidence into [0, 1]
    /// (model outputs may drift slightly outside).
    pub fn from_tensor<T: Element>(t: &Tensor<T>, layout: KeypointLayout) -> Result<Self> {
        if t.rank() != 3 || t.shape()[1] != layout.total() || t.shape()[2] != CHANNELS {
            return Err(Error::Shape {
                op: "PoseSequence::from_tensor",
                detail: format!("{:?} vs layout of {} points", t.shape(), layout.total()),
            });
        }
        let frames = t.shape()[0];
        let mut data = Vec::with_capacity(t.len());
        for chunk in t.data().chunks(CHANNELS) {
            data.push(chunk[0].as_f32());
            data.push(chunk[1].as_f32());
            data.push(chunk[2].as_f32().clamp(0.0, 1.0));
        }
        PoseSequence::new(frames, layout, data)
    }
}

pub use io::{load_pose_sequence, save_pose_sequence};

/// The default keypoint layout used throughout the toolkit.
pub fn default_layout() -> KeypointLayout {
    KeypointLayout::default_128()
}

/// The whole-body layout when the count matches it, a flat layout
/// otherwise.
pub fn default_layout_for(keypoints: usize) -> Result<KeypointLayout> {
    if keypoints == 128 {
        Ok(KeypointLayout::default_128())
    } else {
        KeypointLayout::flat(keypoints)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_layout_is_128_points() {
        let l = default_layout();
        assert_eq!(l.total(), 128);
        assert_eq!(l.group("face").unwrap().len(), 68);
        assert_eq!(l.group("body").unwrap().len(), 18);
        assert_eq!(l.group("left_hand").unwrap().len(), 21);
        assert_eq!(l.group("right_hand").unwrap().len(), 21);
    }

    #[test]
    fn layout_partition_covers_every_index_once() {
        let l = default_layout();
        for i in 0..l.total() {
            let owners =
                l.groups().filter(|(_, r)| r.contains(&i)).count();
            assert_eq!(owners, 1, "index {i} owned by {owners} groups");
        }
        assert!(l.group_of(127).is_some());
        assert!(l.group_of(128).is_none());
    }

    #[test]
    fn layout_rejects_gaps_and_overlaps() {
        assert!(KeypointLayout::new(vec![("a".into(), 0..4), ("b".into(), 5..8)]).is_err());
        assert!(KeypointLayout::new(vec![("a".into(), 0..4), ("b".into(), 3..8)]).is_err());
        assert!(KeypointLayout::new(vec![("a".into(), 1..4)]).is_err());
    }

    #[test]
    fn layout_file_round_trip() {
        let text = "body 0 18\nface 18 86\nleft_hand 86 107\nright_hand 107 128\n";
        let l = KeypointLayout::parse(text).unwrap();
        assert_eq!(l, default_layout());
        assert!(KeypointLayout::parse("body 2 18\n").is_err());
    }

    #[test]
    fn normalize_center_and_corner() {
        let layout = KeypointLayout::flat(2).unwrap();
        let dims = FrameDims::new(640.0, 480.0).unwrap();
        let mut seq = PoseSequence::zeros(1, layout);
        seq.set(0, 0, [320.0, 240.0, 1.0]); // center
        seq.set(0, 1, [0.0, 0.0, 0.5]); // corner
        let n = seq.normalize_coordinates(dims).unwrap();
        assert_eq!(n.get(0, 0), [0.0, 0.0, 1.0]);
        assert_eq!(n.get(0, 1), [-1.0, -1.0, 0.5]);
    }

    #[test]
    fn normalize_arithmetic_example() {
        // width 640, x 480 -> 2*480/640 - 1 = 0.5
        let layout = KeypointLayout::flat(1).unwrap();
        let dims = FrameDims::new(640.0, 480.0).unwrap();
        let mut seq = PoseSequence::zeros(1, layout);
        seq.set(0, 0, [480.0, 0.0, 0.0]);
        let n = seq.normalize_coordinates(dims).unwrap();
        assert!((n.get(0, 0)[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn normalize_is_invertible() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let layout = default_layout();
        let dims = FrameDims::new(512.0, 288.0).unwrap();
        let mut seq = PoseSequence::zeros(3, layout);
        for f in 0..3 {
            for p in 0..128 {
                seq.set(f, p, [rng.gen_range(0.0..512.0), rng.gen_range(0.0..288.0), rng.gen()]);
            }
        }
        let back = seq
            .normalize_coordinates(dims)
            .unwrap()
            .denormalize_coordinates(dims)
            .unwrap();
        for (a, b) in seq.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(FrameDims::new(0.0, 100.0).is_err());
        assert!(FrameDims::new(100.0, 0.0).is_err());
    }

    #[test]
    fn crop_contract() {
        let layout = KeypointLayout::flat(4).unwrap();
        let mut seq = PoseSequence::zeros(100, layout.clone());
        for f in 0..100 {
            seq.set(f, 0, [f as f32, 0.0, 1.0]);
        }
        let c = seq.crop_to_window(64, 0).unwrap();
        assert_eq!(c.frames(), 64);
        // identity crop
        let full = seq.crop_to_window(100, 0).unwrap();
        assert_eq!(full, seq);
        // contiguous slice equality
        let mid = seq.crop_to_window(10, 37).unwrap();
        for f in 0..10 {
            assert_eq!(mid.get(f, 0)[0], (f + 37) as f32);
        }
        // insufficient frames
        let short = PoseSequence::zeros(63, KeypointLayout::flat(4).unwrap());
        assert!(matches!(short.crop_to_window(64, 0), Err(Error::Length(_))));
    }

    #[test]
    fn confidence_range_enforced() {
        let layout = KeypointLayout::flat(1).unwrap();
        assert!(PoseSequence::new(1, layout.clone(), vec![0.0, 0.0, 1.5]).is_err());
        assert!(PoseSequence::new(1, layout, vec![0.0, 0.0, 1.0]).is_ok());
    }
}
