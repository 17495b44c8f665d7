//! Binary pose file format (`.mvp`).
//!
//! Header (16 bytes): magic `MVPS`, version u16 = 1, flags u16 = 0,
//! frame count u32, keypoint count u32. Payload: f·N·3 little-endian
//! float32 values in frame-major, keypoint-minor order.

use super::{KeypointLayout, PoseSequence, CHANNELS};
use crate::error::{Error, Result};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MVPS";
const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 16;

pub fn encode(seq: &PoseSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + seq.data().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(seq.frames() as u32).to_le_bytes());
    out.extend_from_slice(&(seq.keypoints() as u32).to_le_bytes());
    for &v in seq.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<PoseSequence> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("pose file of {} bytes has no header", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!("bad pose magic {:?}", &bytes[0..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported pose file version {version}")));
    }
    let frames = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let points = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expect = frames * points * CHANNELS * 4;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expect {
        return Err(Error::Length(format!(
            "pose payload has {} bytes, expected {expect} for {frames}x{points}",
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let layout = if points == 128 {
        KeypointLayout::default_128()
    } else {
        KeypointLayout::flat(points)?
    };
    PoseSequence::new(frames, layout, data)
}

pub fn save_pose_sequence(seq: &PoseSequence, path: impl AsRef<Path>) -> Result<()> {
    crate::util::atomic_write(path.as_ref(), &encode(seq))
}

pub fn load_pose_sequence(path: impl AsRef<Path>) -> Result<PoseSequence> {
    let bytes = std::fs::read(path.as_ref())?;
    decode(&bytes)
}
