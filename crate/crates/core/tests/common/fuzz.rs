//! Structural corruption of encoded record files.

use poolforge::dataio::VideoRecord;
use rand::Rng;

/// Byte offsets of one encoded record's fields.
#[derive(Debug, Clone)]
pub struct RecordLayout {
    pub start: usize,
    pub id_len: usize,
    pub label_count: usize,
    pub labels: Vec<usize>,
    pub frames: usize,
    pub video_dim: usize,
    pub audio_dim: usize,
    pub values: usize,
    pub end: usize,
}

/// Recomputes field offsets from the records alone (6-byte file header).
pub fn layout(records: &[VideoRecord]) -> Vec<RecordLayout> {
    let mut pos = 6;
    records
        .iter()
        .map(|r| {
            let start = pos;
            let label_count = start + 4 + r.id.len();
            let labels: Vec<usize> = (0..r.labels.len()).map(|i| label_count + 4 + 4 * i).collect();
            let frames = label_count + 4 + 4 * r.labels.len();
            let values = frames + 12;
            let end = values + 4 * r.frames * (r.video_dim + r.audio_dim);
            pos = end;
            RecordLayout {
                start,
                id_len: start,
                label_count,
                labels,
                frames,
                video_dim: frames + 4,
                audio_dim: frames + 8,
                values,
                end,
            }
        })
        .collect()
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn write_u32(bytes: &mut [u8], at: usize, v: u32) {
    bytes[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

/// A different value for a length-like field: small offsets, zero, or wild.
fn perturb(rng: &mut impl Rng, old: u32) -> u32 {
    loop {
        let v = match rng.gen_range(0..4) {
            0 => old.wrapping_add(rng.gen_range(1..=8)),
            1 => old.wrapping_sub(rng.gen_range(1..=8)),
            2 => 0,
            _ => rng.gen(),
        };
        if v != old {
            return v;
        }
    }
}

/// Applies one corruption and names it.
pub fn mutate(bytes: &[u8], layout: &[RecordLayout], rng: &mut impl Rng) -> (Vec<u8>, &'static str) {
    let mut out = bytes.to_vec();
    let rec = &layout[rng.gen_range(0..layout.len())];
    loop {
        match rng.gen_range(0..10) {
            0 => {
                let cut = rng.gen_range(rec.start + 1..rec.end);
                out.truncate(cut);
                return (out, "truncate inside a record");
            }
            1 => {
                let v = perturb(rng, read_u32(&out, rec.id_len));
                write_u32(&mut out, rec.id_len, v);
                return (out, "id length");
            }
            2 => {
                let v = perturb(rng, read_u32(&out, rec.label_count));
                write_u32(&mut out, rec.label_count, v);
                return (out, "label count");
            }
            3 if rec.labels.len() >= 2 => {
                let i = rng.gen_range(1..rec.labels.len());
                let prev = read_u32(&out, rec.labels[i - 1]);
                write_u32(&mut out, rec.labels[i], prev.saturating_sub(rng.gen_range(0..2)));
                return (out, "label order");
            }
            4 => {
                let v = perturb(rng, read_u32(&out, rec.frames));
                write_u32(&mut out, rec.frames, v);
                return (out, "frame count");
            }
            5 => {
                let at = if rng.gen() { rec.video_dim } else { rec.audio_dim };
                let v = perturb(rng, read_u32(&out, at));
                write_u32(&mut out, at, v);
                return (out, "stream width");
            }
            6 => {
                let at = rng.gen_range(0..6);
                out[at] ^= 1 << rng.gen_range(0..8);
                return (out, "magic or version");
            }
            7 => {
                let n = (rec.end - rec.values) / 4;
                let at = rec.values + 4 * rng.gen_range(0..n);
                let bad = [f32::NAN, f32::INFINITY, f32::NEG_INFINITY][rng.gen_range(0..3)];
                out[at..at + 4].copy_from_slice(&bad.to_le_bytes());
                return (out, "non-finite value");
            }
            8 => {
                let n = rng.gen_range(1..37);
                out.extend((0..n).map(|_| rng.gen::<u8>()));
                return (out, "trailing partial record");
            }
            9 => {
                out.truncate(rng.gen_range(0..6));
                return (out, "truncated header");
            }
            _ => {}
        }
    }
}
