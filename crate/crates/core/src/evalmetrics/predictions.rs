//! Predictions file: one line per video, `video_id label:confidence ...`,
//! at most 20 pairs, most confident first.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::TOP_K;
use crate::error::{Error, Result};

/// A video id and its `(label, confidence)` pairs.
pub type PredictionRow = (String, Vec<(u32, f64)>);

/// Confidences are written in shortest round-trip form.
pub fn write_predictions(path: &Path, rows: &[PredictionRow]) -> Result<()> {
    let mut text = String::new();
    for (id, preds) in rows {
        if preds.len() > TOP_K {
            return Err(Error::Data(format!("video {id:?} has {} predictions, limit {TOP_K}", preds.len())));
        }
        text.push_str(id);
        for (label, conf) in preds {
            write!(text, " {label}:{conf}").expect("writing to a String");
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRow>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let err = |msg: String| Error::Data(format!("predictions line {}: {msg}", n + 1));
        let mut fields = line.split_whitespace();
        let Some(id) = fields.next() else { continue };
        let mut preds = Vec::new();
        for field in fields {
            let (label, conf) = field
                .split_once(':')
                .ok_or_else(|| err(format!("expected label:confidence, got {field:?}")))?;
            let label: u32 = label.parse().map_err(|_| err(format!("bad label {label:?}")))?;
            let conf: f64 = conf.parse().map_err(|_| err(format!("bad confidence {conf:?}")))?;
            if !conf.is_finite() {
                return Err(err("non-finite confidence".into()));
            }
            preds.push((label, conf));
        }
        if preds.len() > TOP_K {
            return Err(err(format!("{} predictions, limit {TOP_K}", preds.len())));
        }
        rows.push((id.to_string(), preds));
    }
    Ok(rows)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    parse_predictions(&fs::read_to_string(path)?)
}
