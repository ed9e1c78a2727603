//! GAP by its definition, with no sorting: every positive contributes the
//! precision at its own rank.

use poolforge::evalmetrics::VideoPrediction;
use rand::Rng;

/// Whether `(a_conf, a_pos)` ranks ahead of `(b_conf, b_pos)`.
fn ahead(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

pub fn brute_force_gap(videos: &[VideoPrediction], k: usize) -> f64 {
    // Pooled stream of (confidence, hit), in input order.
    let mut pooled: Vec<(f64, bool)> = Vec::new();
    for v in videos {
        let preds = &v.predictions;
        for (i, &(label, conf)) in preds.iter().enumerate() {
            let better = (0..preds.len()).filter(|&j| ahead((preds[j].1, j), (conf, i))).count();
            if better < k {
                pooled.push((conf, v.truth.contains(&label)));
            }
        }
    }
    let positives: usize = videos.iter().map(|v| v.truth.len()).sum();
    if positives == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, &(conf, hit)) in pooled.iter().enumerate() {
        if !hit {
            continue;
        }
        let rank = 1 + (0..pooled.len()).filter(|&j| ahead((pooled[j].0, j), (conf, i))).count();
        let hits_up_to = (0..pooled.len())
            .filter(|&j| pooled[j].1 && (j == i || ahead((pooled[j].0, j), (conf, i))))
            .count();
        total += hits_up_to as f64 / rank as f64;
    }
    total / positives as f64
}

/// Up to `max_videos` videos over `labels` labels, confidences in (0, 1]
/// with frequent ties.
pub fn random_instance(rng: &mut impl Rng, max_videos: usize, labels: usize) -> Vec<VideoPrediction> {
    let videos = rng.gen_range(1..=max_videos);
    (0..videos)
        .map(|v| {
            let coarse = rng.gen_bool(0.5);
            let mut predictions = Vec::new();
            for l in 0..labels as u32 {
                if rng.gen_bool(0.7) {
                    let c: f64 = if coarse {
                        rng.gen_range(1..=5) as f64 / 5.0
                    } else {
                        rng.gen_range(0.001..1.0)
                    };
                    predictions.push((l, c));
                }
            }
            let truth = (0..labels as u32).filter(|_| rng.gen_bool(0.3)).collect();
            VideoPrediction {
                id: format!("v{v}"),
                predictions,
                truth,
            }
        })
        .collect()
}
