//! Generative-evaluation metrics over embedding feature sets: FID,
//! R-precision, Diversity, MultiModality, and MultiModality Distance.
//!
//! All statistics run in f64; the FID matrix square root uses a
//! symmetric eigendecomposition with eigenvalues clamped at zero,
//! which tolerates the near-singular covariances of small sample sets.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// M×d matrix of feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    features: Tensor<f64>,
}

impl FeatureSet {
    pub fn new(features: Tensor<f64>) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::Shape {
                op: "FeatureSet",
                detail: format!("expected rank 2, got {:?}", features.shape()),
            });
        }
        if !features.is_all_finite() {
            return Err(Error::NonFinite("feature set".into()));
        }
        Ok(Self { features })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn count(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.features.data()[i * d..(i + 1) * d]
    }

    pub fn tensor(&self) -> &Tensor<f64> {
        &self.features
    }
}

/// Sample mean and unbiased covariance of a feature set.
#[derive(Clone, Debug)]
pub struct GaussianStats {
    pub mean: Vec<f64>,
    /// d×d row-major symmetric covariance.
    pub cov: Vec<f64>,
    pub dim: usize,
}

impl GaussianStats {
    /// Construct directly (for closed-form oracles). The covariance is
    /// validated for symmetry.
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::Shape {
                op: "GaussianStats",
                detail: format!("cov of {} entries for dim {d}", cov.len()),
            });
        }
        for i in 0..d {
            for j in 0..i {
                if (cov[i * d + j] - cov[j * d + i]).abs() > 1e-9 {
                    return Err(Error::Argument(format!(
                        "covariance not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { mean, cov, dim: d })
    }
}

/// Sample mean and unbiased covariance (divisor M−1) of the rows.
pub fn gaussian_stats(fs: &FeatureSet) -> Result<GaussianStats> {
    let (m, d) = (fs.count(), fs.dim());
    if m < 2 {
        return Err(Error::Argument(format!("covariance needs at least 2 rows, got {m}")));
    }
    let mut mean = vec![0.0; d];
    for i in 0..m {
        for (mu, &v) in mean.iter_mut().zip(fs.row(i)) {
            *mu += v;
        }
    }
    for mu in mean.iter_mut() {
        *mu /= m as f64;
    }
    let mut cov = vec![0.0; d * d];
    for i in 0..m {
        let row = fs.row(i);
        for a in 0..d {
            let da = row[a] - mean[a];
            for b in a..d {
                cov[a * d + b] += da * (row[b] - mean[b]);
            }
        }
    }
    let denom = (m - 1) as f64;
    for a in 0..d {
        for b in a..d {
            cov[a * d + b] /= denom;
            cov[b * d + a] = cov[a * d + b];
        }
    }
    GaussianStats::new(mean, cov)
}

/// Fréchet distance between two Gaussians:
/// ‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2}).
///
/// The cross term is computed as Tr((Σ_a^{1/2} Σ_b Σ_a^{1/2})^{1/2})
/// via symmetric eigendecompositions, clamping negative eigenvalues to
/// zero.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::Argument(format!("dims differ: {} vs {}", a.dim, b.dim)));
    }
    let d = a.dim;
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let tr_a: f64 = (0..d).map(|i| a.cov[i * d + i]).sum();
    let tr_b: f64 = (0..d).map(|i| b.cov[i * d + i]).sum();

    let ma = DMatrix::from_row_slice(d, d, &a.cov);
    let mb = DMatrix::from_row_slice(d, d, &b.cov);
    let sqrt_a = sym_sqrt(&ma)?;
    let inner = &sqrt_a * &mb * &sqrt_a;
    // inner is symmetric up to round-off; symmetrize before decomposing
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = inner.symmetric_eigen();
    let tr_cross: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();

    Ok(mean_term + tr_a + tr_b - 2.0 * tr_cross)
}

fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&vals) * v.transpose())
}

/// FID between two feature sets.
pub fn fid_between(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    fid(&gaussian_stats(a)?, &gaussian_stats(b)?)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Retrieval precision: for each text row, rank its matched pose among
/// `pool_size − 1` seeded distractors by Euclidean distance; a top-k
/// hit means the match ranks within the k closest. Returns
/// (top-1, top-2, top-3) hit rates.
pub fn r_precision(
    pose_features: &FeatureSet,
    text_features: &FeatureSet,
    pool_size: usize,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let m = pose_features.count();
    if text_features.count() != m {
        return Err(Error::Argument(format!(
            "unmatched rows: {} poses vs {} texts",
            m,
            text_features.count()
        )));
    }
    if pose_features.dim() != text_features.dim() {
        return Err(Error::Argument(format!(
            "feature dims differ: {} vs {}",
            pose_features.dim(),
            text_features.dim()
        )));
    }
    if m < pool_size {
        return Err(Error::Argument(format!("{m} rows for pool of {pool_size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = [0usize; 3];
    for i in 0..m {
        // distractor pose indices, sampled without replacement
        let mut others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        others.shuffle(&mut rng);
        others.truncate(pool_size - 1);
        let query = text_features.row(i);
        let matched = euclidean(query, pose_features.row(i));
        let closer = others
            .iter()
            .filter(|&&j| euclidean(query, pose_features.row(j)) < matched)
            .count();
        let rank = closer + 1;
        for k in 0..3 {
            if rank <= k + 1 {
                hits[k] += 1;
            }
        }
    }
    let n = m as f64;
    Ok((hits[0] as f64 / n, hits[1] as f64 / n, hits[2] as f64 / n))
}

/// Mean Euclidean distance over `s_dis` seeded random disjoint pairs.
/// Falls back to sampling with replacement when the set is smaller
/// than 2·s_dis (reported via the second tuple element).
pub fn diversity(fs: &FeatureSet, s_dis: usize, seed: u64) -> Result<(f64, bool)> {
    let m = fs.count();
    if m < 2 {
        return Err(Error::Argument(format!("diversity needs at least 2 rows, got {m}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    let with_replacement = m < 2 * s_dis;
    if with_replacement {
        for _ in 0..s_dis {
            let i = rng.gen_range(0..m);
            let mut j = rng.gen_range(0..m - 1);
            if j >= i {
                j += 1;
            }
            acc += euclidean(fs.row(i), fs.row(j));
        }
    } else {
        let mut idx: Vec<usize> = (0..m).collect();
        idx.shuffle(&mut rng);
        for p in 0..s_dis {
            acc += euclidean(fs.row(idx[2 * p]), fs.row(idx[2 * p + 1]));
        }
    }
    Ok((acc / s_dis as f64, with_replacement))
}

/// Samples per text description for the MultiModality metric.
pub const MM_SAMPLES: usize = 32;

/// MultiModality: mean pairwise distance among generations for the
/// same text, paired by j ↔ (j + 16) mod 32, averaged over texts.
pub fn multimodality(per_text_samples: &[FeatureSet]) -> Result<f64> {
    if per_text_samples.is_empty() {
        return Err(Error::Argument("no per-text sample sets".into()));
    }
    for (i, fs) in per_text_samples.iter().enumerate() {
        if fs.count() != MM_SAMPLES {
            return Err(Error::Argument(format!(
                "text {i} has {} samples, expected {MM_SAMPLES}",
                fs.count()
            )));
        }
    }
    let n = per_text_samples.len();
    let mut acc = 0.0;
    for fs in per_text_samples {
        for j in 0..MM_SAMPLES {
            let jp = (j + MM_SAMPLES / 2) % MM_SAMPLES;
            acc += euclidean(fs.row(j), fs.row(jp));
        }
    }
    Ok(acc / (MM_SAMPLES as f64 * n as f64))
}

/// MultiModality Distance: mean distance between matched pose and text
/// feature rows.
pub fn mm_dist(pose_features: &FeatureSet, text_features: &FeatureSet) -> Result<f64> {
    let m = pose_features.count();
    if text_features.count() != m || pose_features.dim() != text_features.dim() {
        return Err(Error::Shape {
            op: "mm_dist",
            detail: format!(
                "{}x{} poses vs {}x{} texts",
                m,
                pose_features.dim(),
                text_features.count(),
                text_features.dim()
            ),
        });
    }
    if m == 0 {
        return Err(Error::Argument("empty feature sets".into()));
    }
    let mut acc = 0.0;
    for i in 0..m {
        acc += euclidean(pose_features.row(i), text_features.row(i));
    }
    Ok(acc / m as f64)
}

/// Metric report emitted by the evaluation command.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub fid: f64,
    pub rp_top1: f64,
    pub rp_top2: f64,
    pub rp_top3: f64,
    pub diversity: f64,
    pub diversity_with_replacement: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mm: Option<f64>,
    pub mm_dist: f64,
    pub pool_size: usize,
    pub s_dis: usize,
    pub seed: u64,
}

/// Binary feature-file format: magic `MVEM`, version u16 = 1, reserved
/// u16, count u32, dim u32, then per row: id u32 + dim little-endian
/// float32 values.
pub mod feature_io {
    use super::FeatureSet;
    use crate::error::{Error, Result};
    use crate::tensor::Tensor;
    use std::path::Path;

    const MAGIC: &[u8; 4] = b"MVEM";

    pub fn encode(fs: &FeatureSet) -> Vec<u8> {
        let (m, d) = (fs.count(), fs.dim());
        let mut out = Vec::with_capacity(16 + m * (4 + d * 4));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(m as u32).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        for i in 0..m {
            out.extend_from_slice(&(i as u32).to_le_bytes());
            for &v in fs.row(i) {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<FeatureSet> {
        if bytes.len() < 16 || &bytes[0..4] != MAGIC {
            return Err(Error::Format("bad feature-file header".into()));
        }
        let m = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expect = 16 + m * (4 + d * 4);
        if bytes.len() != expect {
            return Err(Error::Length(format!(
                "feature file has {} bytes, expected {expect}",
                bytes.len()
            )));
        }
        let mut data = Vec::with_capacity(m * d);
        let mut off = 16;
        for _ in 0..m {
            off += 4; // row id
            for _ in 0..d {
                data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
                off += 4;
            }
        }
        FeatureSet::new(Tensor::new(vec![m, d], data)?)
    }

    pub fn save(fs: &FeatureSet, path: impl AsRef<Path>) -> Result<()> {
        crate::util::atomic_write(path.as_ref(), &encode(fs))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeatureSet> {
        decode(&std::fs::read(path)?)
    }
}
