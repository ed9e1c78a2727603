//! Global average precision over pooled top-k predictions, per-class AP,
//! and the plain-text predictions file.

mod predictions;

use serde::Serialize;

use crate::error::{Error, Result};

pub use predictions::{parse_predictions, read_predictions, write_predictions, PredictionRow};

/// Predictions kept per video.
pub const TOP_K: usize = 20;

/// One video's ranked predictions and ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPrediction {
    pub id: String,
    /// `(label, confidence)` pairs; only the `TOP_K` highest count.
    pub predictions: Vec<(u32, f64)>,
    pub truth: Vec<u32>,
}

impl VideoPrediction {
    /// Keeps the `k` most confident labels of a dense probability vector,
    /// ties going to the lower label.
    pub fn from_scores(id: impl Into<String>, scores: &[f64], truth: Vec<u32>, k: usize) -> Self {
        let mut ranked: Vec<(u32, f64)> = scores.iter().enumerate().map(|(l, &p)| (l as u32, p)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
        ranked.truncate(k);
        VideoPrediction {
            id: id.into(),
            predictions: ranked,
            truth,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.predictions.iter().any(|p| !p.1.is_finite()) {
            return Err(Error::Data(format!("video {:?} has a non-finite confidence", self.id)));
        }
        Ok(())
    }

    /// The top `k` predictions by confidence, stable on ties.
    fn top(&self, k: usize) -> Vec<(u32, f64)> {
        let mut p = self.predictions.clone();
        p.sort_by(|a, b| b.1.total_cmp(&a.1));
        p.truncate(k);
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GapVariant {
    /// `sum_i p(i) * (r(i) - r(i-1))`.
    #[default]
    Standard,
    /// `sum_i p(i) * r(i)`, kept only for comparison. Not bounded by 1.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapResult {
    pub gap: f64,
    /// Ground-truth labels over all videos (the recall denominator).
    pub positives: usize,
    /// Pooled predictions that were ranked.
    pub ranked: usize,
    /// Set when there are no positives, in which case `gap` is 0.
    pub no_positives: bool,
}

/// Average precision of a ranked list of hit flags against `positives`
/// relevant items in total. The sum is divided once at the end so a
/// perfect ranking yields exactly 1.
fn average_precision(hits: impl Iterator<Item = bool>, positives: usize, variant: GapVariant) -> f64 {
    let (mut correct, mut total) = (0usize, 0.0);
    for (i, hit) in hits.enumerate() {
        if hit {
            correct += 1;
        }
        let precision = correct as f64 / (i + 1) as f64;
        total += match variant {
            GapVariant::Standard if hit => precision,
            GapVariant::Standard => 0.0,
            GapVariant::Literal => precision * correct as f64,
        };
    }
    total / positives as f64
}

/// Pools every video's top `k` predictions, ranks them by confidence
/// (stable in input order), and integrates precision over recall.
pub fn gap(videos: &[VideoPrediction], k: usize, variant: GapVariant) -> Result<GapResult> {
    let mut pooled: Vec<(f64, bool)> = Vec::new();
    let mut positives = 0;
    for v in videos {
        v.validate()?;
        positives += v.truth.len();
        for (label, conf) in v.top(k) {
            pooled.push((conf, v.truth.contains(&label)));
        }
    }
    pooled.sort_by(|a, b| b.0.total_cmp(&a.0));
    if positives == 0 {
        log::warn!("GAP over {} videos with no positive labels is reported as 0", videos.len());
        return Ok(GapResult {
            gap: 0.0,
            positives,
            ranked: pooled.len(),
            no_positives: true,
        });
    }
    Ok(GapResult {
        gap: average_precision(pooled.iter().map(|p| p.1), positives, variant),
        positives,
        ranked: pooled.len(),
        no_positives: false,
    })
}

/// Standard GAP over the top 20 predictions of every video.
pub fn gap_at_20(videos: &[VideoPrediction]) -> Result<f64> {
    Ok(gap(videos, TOP_K, GapVariant::Standard)?.gap)
}

/// AP of every label in `0..labels` over the videos' top-20 lists; `None`
/// for labels without positives.
pub fn per_class_ap(videos: &[VideoPrediction], labels: usize) -> Result<Vec<Option<f64>>> {
    let mut ranked: Vec<Vec<(f64, bool)>> = vec![Vec::new(); labels];
    let mut positives = vec![0usize; labels];
    for v in videos {
        v.validate()?;
        for &t in &v.truth {
            if let Some(p) = positives.get_mut(t as usize) {
                *p += 1;
            }
        }
        for (label, conf) in v.top(TOP_K) {
            if let Some(list) = ranked.get_mut(label as usize) {
                list.push((conf, v.truth.contains(&label)));
            }
        }
    }
    Ok(ranked
        .into_iter()
        .zip(positives)
        .map(|(mut list, pos)| {
            if pos == 0 {
                return None;
            }
            list.sort_by(|a, b| b.0.total_cmp(&a.0));
            Some(average_precision(list.iter().map(|p| p.1), pos, GapVariant::Standard))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub gap: f64,
    pub per_class_ap: Vec<Option<f64>>,
    pub videos: usize,
    pub positives: usize,
    pub ranked: usize,
}

impl EvalReport {
    pub fn compute(videos: &[VideoPrediction], labels: usize) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::Data("cannot evaluate an empty dataset".into()));
        }
        let g = gap(videos, TOP_K, GapVariant::Standard)?;
        Ok(EvalReport {
            gap: g.gap,
            per_class_ap: per_class_ap(videos, labels)?,
            videos: videos.len(),
            positives: g.positives,
            ranked: g.ranked,
        })
    }

    /// Mean of the defined per-class APs.
    pub fn mean_ap(&self) -> Option<f64> {
        let defined: Vec<f64> = self.per_class_ap.iter().flatten().copied().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(preds: &[(u32, f64)], truth: &[u32]) -> VideoPrediction {
        VideoPrediction {
            id: "v".into(),
            predictions: preds.to_vec(),
            truth: truth.to_vec(),
        }
    }

    #[test]
    fn perfect_and_hopeless_predictions() {
        assert_eq!(gap_at_20(&[video(&[(3, 0.9)], &[3])]).unwrap(), 1.0);
        assert_eq!(gap_at_20(&[video(&[(1, 0.9), (2, 0.4)], &[3])]).unwrap(), 0.0);
    }

    #[test]
    fn missing_positives_lower_recall() {
        // One of two positives is ranked first, the other never predicted.
        assert_eq!(gap_at_20(&[video(&[(0, 0.9)], &[0, 1])]).unwrap(), 0.5);
    }

    #[test]
    fn no_positives_is_flagged() {
        let r = gap(&[video(&[(0, 0.5)], &[])], TOP_K, GapVariant::Standard).unwrap();
        assert!(r.no_positives);
        assert_eq!(r.gap, 0.0);
    }

    #[test]
    fn only_the_top_twenty_count() {
        let mut preds: Vec<(u32, f64)> = (0..25).map(|l| (l, 1.0 - l as f64 / 100.0)).collect();
        preds.reverse();
        assert_eq!(gap_at_20(&[video(&preds, &[24])]).unwrap(), 0.0);
        assert_eq!(gap_at_20(&[video(&preds, &[0])]).unwrap(), 1.0);
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(matches!(EvalReport::compute(&[], 3), Err(Error::Data(_))));
    }
}
