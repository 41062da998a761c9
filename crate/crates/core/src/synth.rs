//! Synthetic feature datasets with known anomalous frames.
//!
//! Normal frames follow a slow sinusoid around a shared base vector plus a
//! little noise. Each anomaly-bearing video gets non-overlapping perturbed
//! segments that alternate between two kinds: jumps (a fresh random offset
//! every few frames) and displaced freezes (one frame held, shifted by a fixed
//! offset). Labels mark exactly the perturbed frames.

use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{format_manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::features::{l2_normalize, write_feature_file, FeatureSequence, VideoFeatures};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub subjects: usize,
    pub normal_per_subject: usize,
    pub anomalous_per_subject: usize,
    pub frames: usize,
    pub dim: usize,
    /// Perturbed segments per anomaly-bearing video.
    pub segments: usize,
    pub min_segment: usize,
    pub max_segment: usize,
    pub noise: f64,
    /// Largest per-dimension sinusoid amplitude; each dimension draws one in
    /// `[amplitude / 2, amplitude)`.
    pub amplitude: f64,
    /// Standard deviation of jump and freeze offsets.
    pub offset_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            subjects: 4,
            normal_per_subject: 2,
            anomalous_per_subject: 1,
            frames: 720,
            dim: 16,
            segments: 2,
            min_segment: 150,
            max_segment: 250,
            noise: 0.01,
            amplitude: 0.2,
            offset_scale: 0.6,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.subjects == 0 || self.frames == 0 || self.dim == 0 {
            return bad("subjects, frames and dim must be positive".into());
        }
        if self.normal_per_subject + self.anomalous_per_subject == 0 {
            return bad("every subject needs at least one video".into());
        }
        if self.min_segment == 0 || self.min_segment > self.max_segment {
            return bad(format!(
                "bad segment range {}..={}",
                self.min_segment, self.max_segment
            ));
        }
        if self.anomalous_per_subject > 0 && self.segments * self.max_segment > self.frames {
            return bad(format!(
                "{} segments of up to {} frames do not fit in {} frames",
                self.segments, self.max_segment, self.frames
            ));
        }
        if !(self.noise >= 0.0) || !(self.offset_scale >= 0.0) || !(self.amplitude > 0.0) {
            return bad("noise and offset scale must be non-negative, amplitude positive".into());
        }
        Ok(())
    }
}

/// A generated video and the subject it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub subject_id: String,
    pub video: VideoFeatures,
}

fn gaussian(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    scale * rng.sample::<f64, _>(StandardNormal)
}

fn smooth_signal(spec: &SyntheticSpec, base: &[f64], rng: &mut ChaCha8Rng) -> Array2<f64> {
    let d = spec.dim;
    let amp: Vec<f64> = (0..d)
        .map(|_| rng.random_range(spec.amplitude / 2.0..spec.amplitude))
        .collect();
    let period: Vec<f64> = (0..d).map(|_| rng.random_range(80.0..240.0)).collect();
    let phase: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..TAU)).collect();
    Array2::from_shape_fn((spec.frames, d), |(t, j)| {
        base[j] + amp[j] * (TAU * t as f64 / period[j] + phase[j]).sin()
    })
}

/// Perturbs `signal` in place and returns the per-frame labels.
fn inject_anomalies(
    spec: &SyntheticSpec,
    signal: &mut Array2<f64>,
    rng: &mut ChaCha8Rng,
) -> Vec<bool> {
    let mut labels = vec![false; spec.frames];
    let slot = spec.frames / spec.segments.max(1);
    for k in 0..spec.segments {
        let len = rng
            .random_range(spec.min_segment..=spec.max_segment)
            .min(slot);
        let start = k * slot + rng.random_range(0..=slot - len);
        let end = start + len;
        if k % 2 == 0 {
            let mut t = start;
            while t < end {
                let hold = rng.random_range(3..=6);
                let offset: Vec<f64> = (0..spec.dim)
                    .map(|_| gaussian(rng, spec.offset_scale))
                    .collect();
                for tt in t..(t + hold).min(end) {
                    for (j, o) in offset.iter().enumerate() {
                        signal[[tt, j]] += o;
                    }
                }
                t += hold;
            }
        } else {
            let frozen = signal.row(start).to_owned();
            let offset: Vec<f64> = (0..spec.dim)
                .map(|_| gaussian(rng, spec.offset_scale))
                .collect();
            for tt in start..end {
                for j in 0..spec.dim {
                    signal[[tt, j]] = frozen[j] + offset[j];
                }
            }
        }
        labels[start..end].iter_mut().for_each(|l| *l = true);
    }
    labels
}

/// Generates every video of `spec` from `seed`. Videos are ordered by subject,
/// normal ones first.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<SyntheticVideo>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Vec<f64> = (0..spec.dim).map(|_| rng.random_range(0.5..1.5)).collect();
    let mut videos = Vec::new();
    for s in 0..spec.subjects {
        let subject_id = format!("s{s:02}");
        let kinds = (0..spec.normal_per_subject)
            .map(|k| (format!("{subject_id}_n{k}"), false))
            .chain((0..spec.anomalous_per_subject).map(|k| (format!("{subject_id}_a{k}"), true)));
        for (video_id, anomalous) in kinds {
            let mut signal = smooth_signal(spec, &base, &mut rng);
            let labels = if anomalous {
                inject_anomalies(spec, &mut signal, &mut rng)
            } else {
                vec![false; spec.frames]
            };
            signal.mapv_inplace(|v| v + gaussian(&mut rng, spec.noise));
            let rows: Vec<Vec<f64>> = signal
                .rows()
                .into_iter()
                .map(|r| {
                    l2_normalize(r.as_slice().expect("standard layout")).map(|v| v.into_inner())
                })
                .collect::<Result<_>>()?;
            videos.push(SyntheticVideo {
                subject_id: subject_id.clone(),
                video: VideoFeatures::new(video_id, FeatureSequence::from_rows(&rows)?, labels)?,
            });
        }
    }
    Ok(videos)
}

/// Writes one feature file per video under `dir/features/` and a manifest at
/// `dir/manifest.txt` (with paths relative to `dir`). Returns the manifest path.
pub fn write_synthetic(spec: &SyntheticSpec, seed: u64, dir: &Path) -> Result<PathBuf> {
    let videos = generate_synthetic(spec, seed)?;
    let feature_dir = dir.join("features");
    fs::create_dir_all(&feature_dir).map_err(|e| Error::io(&feature_dir, e))?;
    let mut entries = Vec::with_capacity(videos.len());
    for v in &videos {
        let rel = PathBuf::from("features").join(format!("{}.feat", v.video.video_id));
        write_feature_file(&dir.join(&rel), std::slice::from_ref(&v.video))?;
        entries.push(ManifestEntry {
            video_id: v.video.video_id.clone(),
            subject_id: v.subject_id.clone(),
            path: rel,
        });
    }
    let manifest = dir.join("manifest.txt");
    fs::write(&manifest, format_manifest(&entries)).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
