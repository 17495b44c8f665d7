//! Skeleton rendering of normalized pose sequences to PNG frames.

use super::{FrameDims, PoseSequence};
use crate::error::{Error, Result};
use image::{Rgb, RgbImage};
use std::path::Path;

/// Default visibility threshold: keypoints below it are not drawn.
pub const CONFIDENCE_THRESHOLD: f32 = 0.3;

const BODY_EDGES: &[(usize, usize)] = &[
    (1, 2),
    (1, 5),
    (2, 3),
    (3, 4),
    (5, 6),
    (6, 7),
    (1, 8),
    (8, 9),
    (9, 10),
    (1, 11),
    (11, 12),
    (12, 13),
    (1, 0),
    (0, 14),
    (14, 16),
    (0, 15),
    (15, 17),
];

const HAND_CHAINS: &[&[usize]] = &[
    &[0, 1, 2, 3, 4],
    &[0, 5, 6, 7, 8],
    &[0, 9, 10, 11, 12],
    &[0, 13, 14, 15, 16],
    &[0, 17, 18, 19, 20],
];

const FACE_CHAINS: &[(usize, usize, bool)] = &[
    // (start, end inclusive, closed)
    (0, 16, false),  // jaw
    (17, 21, false), // right brow
    (22, 26, false), // left brow
    (27, 30, false), // nose bridge
    (31, 35, false), // nostrils
    (36, 41, true),  // right eye
    (42, 47, true),  // left eye
    (48, 59, true),  // outer lips
    (60, 67, true),  // inner lips
];

const BODY_COLOR: Rgb<u8> = Rgb([80, 220, 100]);
const FACE_COLOR: Rgb<u8> = Rgb([90, 180, 250]);
const LEFT_HAND_COLOR: Rgb<u8> = Rgb([240, 130, 90]);
const RIGHT_HAND_COLOR: Rgb<u8> = Rgb([230, 200, 80]);

/// Render one PNG per frame into `out_dir` (`frame_00000.png`, ...).
///
/// The sequence is expected in normalized coordinates; keypoints with
/// confidence below `threshold` are omitted, and an edge is drawn only
/// when both endpoints are visible. Returns the written paths.
pub fn render_pose_frames(
    seq: &PoseSequence,
    dims: FrameDims,
    out_dir: impl AsRef<Path>,
    threshold: Option<f32>,
) -> Result<Vec<std::path::PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let threshold = threshold.unwrap_or(CONFIDENCE_THRESHOLD);
    let (w, h) = (dims.width.round() as u32, dims.height.round() as u32);
    if w == 0 || h == 0 {
        return Err(Error::Argument("render canvas has zero size".into()));
    }
    let mut paths = Vec::with_capacity(seq.frames());
    for f in 0..seq.frames() {
        let mut img = RgbImage::new(w, h);
        draw_frame(&mut img, seq, f, dims, threshold);
        let path = out_dir.join(format!("frame_{f:05}.png"));
        img.save(&path).map_err(|e| Error::Format(format!("png encode: {e}")))?;
        paths.push(path);
    }
    Ok(paths)
}

fn to_pixel(p: [f32; 3], dims: FrameDims) -> (f32, f32) {
    (((p[0] + 1.0) * 0.5) * dims.width as f32, ((p[1] + 1.0) * 0.5) * dims.height as f32)
}

fn draw_frame(img: &mut RgbImage, seq: &PoseSequence, frame: usize, dims: FrameDims, thr: f32) {
    let layout = seq.layout().clone();
    for (name, range) in layout.groups() {
        let color = match name {
            "body" => BODY_COLOR,
            "face" => FACE_COLOR,
            "left_hand" => LEFT_HAND_COLOR,
            _ => RIGHT_HAND_COLOR,
        };
        let visible = |local: usize| -> Option<(f32, f32)> {
            let p = seq.get(frame, range.start + local);
            (p[2] >= thr).then(|| to_pixel(p, dims))
        };
        let mut edge = |a: usize, b: usize| {
            if let (Some(pa), Some(pb)) = (visible(a), visible(b)) {
                draw_line(img, pa, pb, color);
            }
        };
        match name {
            "body" if range.len() >= 18 => {
                for &(a, b) in BODY_EDGES {
                    edge(a, b);
                }
            }
            "face" if range.len() >= 68 => {
                for &(s, e, closed) in FACE_CHAINS {
                    for i in s..e {
                        edge(i, i + 1);
                    }
                    if closed {
                        edge(e, s);
                    }
                }
            }
            "left_hand" | "right_hand" if range.len() >= 21 => {
                for chain in HAND_CHAINS {
                    for pair in chain.windows(2) {
                        edge(pair[0], pair[1]);
                    }
                }
            }
            _ => {}
        }
        for local in 0..range.len() {
            if let Some((x, y)) = visible(local) {
                draw_dot(img, x, y, color);
            }
        }
    }
}

fn draw_dot(img: &mut RgbImage, x: f32, y: f32, color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (cx, cy) = (x.round() as i64, y.round() as i64);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (px, py) = (cx + dx, cy + dy);
            if (0..w).contains(&px) && (0..h).contains(&py) {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

/// Bresenham line clipped to the canvas.
fn draw_line(img: &mut RgbImage, a: (f32, f32), b: (f32, f32), color: Rgb<u8>) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (mut x0, mut y0) = (a.0.round() as i64, a.1.round() as i64);
    let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if (0..w).contains(&x0) && (0..h).contains(&y0) {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}
