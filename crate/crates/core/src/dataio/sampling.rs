//! Fixed-length frame sampling, holdout splits and batch assembly.

use rand::seq::SliceRandom;

use super::record::VideoRecord;
use crate::error::{Error, Result};
use crate::tensor::{random, Tensor};

/// Frame index `floor(i * T / n)` for `i < n`.
pub fn sample_indices(frames: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| i * frames / n).collect()
}

/// `[n, video_dim + audio_dim]` descriptors taken at [`sample_indices`].
pub fn uniform_sample(record: &VideoRecord, n: usize) -> Tensor {
    let width = record.video_dim + record.audio_dim;
    let mut data = Vec::with_capacity(n * width);
    for t in sample_indices(record.frames, n) {
        data.extend(record.frame(t).map(f64::from));
    }
    Tensor::new([n, width], data).expect("sampled extents are positive")
}

/// Splits `items` into `(train, validation)` with
/// `round(fraction * len)` validation items chosen by `seed`. Both halves
/// keep the input order.
pub fn split<T: Clone>(items: &[T], fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if items.len() < 2 {
        return Err(Error::Data(format!("cannot split a corpus of {} records", items.len())));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!("holdout fraction {fraction} must lie in (0, 1)")));
    }
    let held = (fraction * items.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut random::rng(seed));
    let mut is_held = vec![false; items.len()];
    for &i in &order[..held] {
        is_held[i] = true;
    }
    let (mut train, mut validation) = (Vec::new(), Vec::new());
    for (item, held) in items.iter().zip(is_held) {
        if held {
            validation.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, validation))
}

/// Corpus positions of the `batch` items drawn at optimizer step `step`.
///
/// Positions `step * batch ..` walk a per-epoch shuffle seeded by
/// `(seed, epoch)`, so the batch is a pure function of its arguments.
pub fn batch_indices(count: usize, batch: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut cached: Option<(u64, Vec<usize>)> = None;
    (0..batch as u64)
        .map(|j| {
            let pos = step * batch as u64 + j;
            let epoch = pos / count as u64;
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                let mut perm: Vec<usize> = (0..count).collect();
                perm.shuffle(&mut random::derived_rng(seed, epoch));
                cached = Some((epoch, perm));
            }
            cached.as_ref().unwrap().1[(pos % count as u64) as usize]
        })
        .collect()
}

/// A video reduced to its sampled frames.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledVideo {
    pub id: String,
    pub labels: Vec<u32>,
    /// `[n, video_dim + audio_dim]`.
    pub frames: Tensor,
}

impl SampledVideo {
    pub fn from_record(record: &VideoRecord, n: usize) -> Self {
        SampledVideo {
            id: record.id.clone(),
            labels: record.labels.clone(),
            frames: uniform_sample(record, n),
        }
    }
}

/// Stacked inputs `[B, n, F]` and multi-hot targets `[B, labels]`.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Vec<String>,
    pub frames: Tensor,
    pub targets: Tensor,
}

pub fn make_batch(videos: &[&SampledVideo], labels: usize) -> Result<Batch> {
    let first = videos.first().ok_or_else(|| Error::Data("empty batch".into()))?;
    let dims = first.frames.dims().to_vec();
    let mut frames = Vec::with_capacity(videos.len() * first.frames.len());
    let mut targets = vec![0.0; videos.len() * labels];
    for (b, v) in videos.iter().enumerate() {
        if v.frames.dims() != dims.as_slice() {
            return Err(Error::Data(format!(
                "video {:?} has frame shape {:?}, expected {dims:?}",
                v.id,
                v.frames.dims()
            )));
        }
        frames.extend_from_slice(v.frames.data());
        for &l in &v.labels {
            if l as usize >= labels {
                return Err(Error::Data(format!("video {:?} has label {l} but the model has {labels}", v.id)));
            }
            targets[b * labels + l as usize] = 1.0;
        }
    }
    Ok(Batch {
        ids: videos.iter().map(|v| v.id.clone()).collect(),
        frames: Tensor::new([videos.len(), dims[0], dims[1]], frames)?,
        targets: Tensor::new([videos.len(), labels], targets)?,
    })
}
