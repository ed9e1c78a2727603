//! Gaussian-mixture stand-in for a frame-level video corpus.
//!
//! Every label owns `components` mean vectors per modality. A video draws
//! its label set, then each frame picks one of its labels and one of that
//! label's components, and emits `mean + spread * z1 + noise * z2`.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::record::VideoRecord;
use crate::error::{Error, Result};
use crate::tensor::random;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub labels: usize,
    #[serde(default = "defaults::video_dim")]
    pub video_dim: usize,
    #[serde(default = "defaults::audio_dim")]
    pub audio_dim: usize,
    /// Mixture components per label and modality.
    #[serde(default = "defaults::components")]
    pub components: usize,
    /// Standard deviation of the component means around the origin.
    #[serde(default = "defaults::mean_scale")]
    pub mean_scale: f64,
    /// Per-coordinate standard deviation inside a component.
    #[serde(default = "defaults::spread")]
    pub spread: f64,
    #[serde(default)]
    pub noise: f64,
    #[serde(default = "defaults::min_frames")]
    pub min_frames: usize,
    #[serde(default = "defaults::max_frames")]
    pub max_frames: usize,
    #[serde(default = "defaults::one")]
    pub min_labels_per_video: usize,
    #[serde(default = "defaults::max_labels_per_video")]
    pub max_labels_per_video: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn video_dim() -> usize {
        1024
    }
    pub fn audio_dim() -> usize {
        128
    }
    pub fn components() -> usize {
        2
    }
    pub fn mean_scale() -> f64 {
        1.0
    }
    pub fn spread() -> f64 {
        0.5
    }
    pub fn min_frames() -> usize {
        32
    }
    pub fn max_frames() -> usize {
        96
    }
    pub fn one() -> usize {
        1
    }
    pub fn max_labels_per_video() -> usize {
        3
    }
}

impl SyntheticSpec {
    pub fn new(labels: usize, seed: u64) -> Self {
        SyntheticSpec {
            labels,
            video_dim: defaults::video_dim(),
            audio_dim: defaults::audio_dim(),
            components: defaults::components(),
            mean_scale: defaults::mean_scale(),
            spread: defaults::spread(),
            noise: 0.0,
            min_frames: defaults::min_frames(),
            max_frames: defaults::max_frames(),
            min_labels_per_video: 1,
            max_labels_per_video: defaults::max_labels_per_video(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.labels == 0 || self.video_dim == 0 || self.audio_dim == 0 || self.components == 0 {
            return Err(Error::config("synthetic spec extents must be positive"));
        }
        for (name, v) in [("mean_scale", self.mean_scale), ("spread", self.spread), ("noise", self.noise)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("{name} must be finite and nonnegative")));
            }
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::config("frame range must satisfy 1 <= min_frames <= max_frames"));
        }
        if self.min_labels_per_video == 0
            || self.min_labels_per_video > self.max_labels_per_video
            || self.max_labels_per_video > self.labels
        {
            return Err(Error::config(
                "labels per video must satisfy 1 <= min <= max <= labels",
            ));
        }
        Ok(())
    }
}

/// Component means, `[labels][components]` rows of one modality.
#[derive(Debug, Clone)]
pub struct MixtureMeans {
    pub video: Vec<Vec<Vec<f32>>>,
    pub audio: Vec<Vec<Vec<f32>>>,
}

impl MixtureMeans {
    /// Average of a label's component means, per modality.
    pub fn label_mean(&self, label: usize) -> (Vec<f64>, Vec<f64>) {
        let avg = |comps: &Vec<Vec<f32>>| {
            let mut out = vec![0.0; comps[0].len()];
            for c in comps {
                for (o, &v) in out.iter_mut().zip(c) {
                    *o += v as f64 / comps.len() as f64;
                }
            }
            out
        };
        (avg(&self.video[label]), avg(&self.audio[label]))
    }
}

fn gaussian_rows(rows: usize, dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    (0..rows)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    (std * z) as f32
                })
                .collect()
        })
        .collect()
}

pub fn mixture_means(spec: &SyntheticSpec) -> MixtureMeans {
    let mut rng = random::derived_rng(spec.seed, 0);
    let mut video = Vec::with_capacity(spec.labels);
    let mut audio = Vec::with_capacity(spec.labels);
    for _ in 0..spec.labels {
        video.push(gaussian_rows(spec.components, spec.video_dim, spec.mean_scale, &mut rng));
        audio.push(gaussian_rows(spec.components, spec.audio_dim, spec.mean_scale, &mut rng));
    }
    MixtureMeans { video, audio }
}

/// `count` videos, each generated from its own stream so that any prefix of
/// the corpus is independent of `count`.
pub fn generate_corpus(spec: &SyntheticSpec, count: usize) -> Result<Vec<VideoRecord>> {
    spec.validate()?;
    let means = mixture_means(spec);
    (0..count).map(|i| generate_video(spec, &means, i)).collect()
}

fn generate_video(spec: &SyntheticSpec, means: &MixtureMeans, index: usize) -> Result<VideoRecord> {
    let mut rng = random::derived_rng(spec.seed, 1 + index as u64);
    let n_labels = rng.gen_range(spec.min_labels_per_video..=spec.max_labels_per_video);
    let labels: Vec<u32> = index::sample(&mut rng, spec.labels, n_labels)
        .into_iter()
        .map(|l| l as u32)
        .collect();
    let frames = rng.gen_range(spec.min_frames..=spec.max_frames);
    let mut video = Vec::with_capacity(frames * spec.video_dim);
    let mut audio = Vec::with_capacity(frames * spec.audio_dim);
    for _ in 0..frames {
        let label = labels[rng.gen_range(0..labels.len())] as usize;
        let comp = rng.gen_range(0..spec.components);
        emit(&means.video[label][comp], spec, &mut rng, &mut video);
        emit(&means.audio[label][comp], spec, &mut rng, &mut audio);
    }
    VideoRecord::new(
        format!("vid{index:06}"),
        labels,
        spec.video_dim,
        spec.audio_dim,
        video,
        audio,
    )
}

fn emit(mean: &[f32], spec: &SyntheticSpec, rng: &mut ChaCha8Rng, out: &mut Vec<f32>) {
    for &m in mean {
        let z1: f64 = StandardNormal.sample(rng);
        let mut v = m as f64 + spec.spread * z1;
        if spec.noise > 0.0 {
            let z2: f64 = StandardNormal.sample(rng);
            v += spec.noise * z2;
        }
        out.push(v as f32);
    }
}
