//! Video records and their binary container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PFRC"  u16 version
//! then records until end of file:
//!   u32 id length, UTF-8 id
//!   u32 label count, u32 label per entry (strictly increasing)
//!   u32 T
//!   u32 video width, u32 audio width
//!   f32 video frames, row-major [T, video width]
//!   f32 audio frames, row-major [T, audio width]
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};

use crate::binio::ByteReader;
use crate::error::{Error, Result};

pub const RECORD_MAGIC: &[u8; 4] = b"PFRC";
pub const RECORD_VERSION: u16 = 1;

pub const MAX_ID_LEN: usize = 1024;
pub const MAX_LABELS: usize = 1 << 16;
pub const MAX_FRAMES: usize = 1 << 20;
pub const MAX_WIDTH: usize = 1 << 16;

/// One video: label set plus per-frame video and audio descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    /// Sorted, without duplicates.
    pub labels: Vec<u32>,
    pub frames: usize,
    pub video_dim: usize,
    pub audio_dim: usize,
    /// Row-major `[frames, video_dim]`.
    pub video: Vec<f32>,
    /// Row-major `[frames, audio_dim]`.
    pub audio: Vec<f32>,
}

impl VideoRecord {
    /// Builds a record, sorting and deduplicating `labels`.
    pub fn new(
        id: impl Into<String>,
        mut labels: Vec<u32>,
        video_dim: usize,
        audio_dim: usize,
        video: Vec<f32>,
        audio: Vec<f32>,
    ) -> Result<Self> {
        labels.sort_unstable();
        labels.dedup();
        let frames = video.len().checked_div(video_dim).unwrap_or(0);
        let record = VideoRecord {
            id: id.into(),
            labels,
            frames,
            video_dim,
            audio_dim,
            video,
            audio,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Data(format!("record {:?}: {msg}", self.id)));
        if let Err(msg) = check_id(&self.id) {
            return fail(msg);
        }
        if self.labels.is_empty() || self.labels.len() > MAX_LABELS {
            return fail("label set must be nonempty".into());
        }
        if self.labels.windows(2).any(|w| w[0] >= w[1]) {
            return fail("labels must be strictly increasing".into());
        }
        if self.frames == 0 || self.frames > MAX_FRAMES {
            return fail(format!("frame count {} out of range", self.frames));
        }
        for (name, width) in [("video", self.video_dim), ("audio", self.audio_dim)] {
            if width == 0 || width > MAX_WIDTH {
                return fail(format!("{name} width {width} out of range"));
            }
        }
        if self.video.len() != self.frames * self.video_dim || self.audio.len() != self.frames * self.audio_dim {
            return fail("video and audio streams disagree on the frame count".into());
        }
        if !self.video.iter().chain(&self.audio).all(|v| v.is_finite()) {
            return fail("non-finite frame value".into());
        }
        Ok(())
    }

    /// Concatenated `[video | audio]` descriptor of frame `t`.
    pub fn frame(&self, t: usize) -> impl Iterator<Item = f32> + '_ {
        let v = &self.video[t * self.video_dim..(t + 1) * self.video_dim];
        let a = &self.audio[t * self.audio_dim..(t + 1) * self.audio_dim];
        v.iter().chain(a).copied()
    }
}

/// Ids are nonempty tokens free of whitespace and control characters, so
/// they can head a whitespace-separated predictions line.
fn check_id(id: &str) -> Result<(), String> {
    if id.is_empty() || id.len() > MAX_ID_LEN {
        return Err(format!("id length must be in 1..={MAX_ID_LEN}"));
    }
    if id.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err("id contains whitespace or a control character".into());
    }
    Ok(())
}

pub fn encode_records(records: &[VideoRecord]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    buf.extend_from_slice(RECORD_MAGIC);
    buf.write_u16::<LittleEndian>(RECORD_VERSION)?;
    for r in records {
        r.validate()?;
        buf.write_u32::<LittleEndian>(r.id.len() as u32)?;
        buf.extend_from_slice(r.id.as_bytes());
        buf.write_u32::<LittleEndian>(r.labels.len() as u32)?;
        for &l in &r.labels {
            buf.write_u32::<LittleEndian>(l)?;
        }
        buf.write_u32::<LittleEndian>(r.frames as u32)?;
        buf.write_u32::<LittleEndian>(r.video_dim as u32)?;
        buf.write_u32::<LittleEndian>(r.audio_dim as u32)?;
        for &v in r.video.iter().chain(&r.audio) {
            buf.write_f32::<LittleEndian>(v)?;
        }
    }
    Ok(buf)
}

/// Strict decoder: any structural inconsistency is a format error carrying
/// the byte offset of the offending field.
pub fn decode_records(bytes: &[u8]) -> Result<Vec<VideoRecord>> {
    let mut r = ByteReader::new(bytes);
    r.header(RECORD_MAGIC, RECORD_VERSION)?;
    let mut out = Vec::new();
    while !r.is_empty() {
        let record = decode_one(&mut r)?;
        r.last_good = Some(record.id.clone());
        out.push(record);
    }
    Ok(out)
}

fn bounded(r: &mut ByteReader<'_>, min: usize, max: usize, what: &str) -> Result<usize> {
    let at = r.offset();
    let v = r.u32()? as usize;
    if v < min || v > max {
        return Err(r.invalid_at(at, format!("{what} {v} outside {min}..={max}")));
    }
    Ok(v)
}

fn decode_one(r: &mut ByteReader<'_>) -> Result<VideoRecord> {
    let at = r.offset();
    let id = r.string(MAX_ID_LEN, "record id")?;
    if let Err(msg) = check_id(&id) {
        return Err(r.invalid_at(at, msg));
    }
    let count = bounded(r, 1, MAX_LABELS, "label count")?;
    if count * 4 > r.remaining() {
        return Err(r.truncated());
    }
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.offset();
        let l = r.u32()?;
        if labels.last().is_some_and(|&prev| prev >= l) {
            return Err(r.invalid_at(at, "labels not strictly increasing"));
        }
        labels.push(l);
    }
    let frames = bounded(r, 1, MAX_FRAMES, "frame count")?;
    let video_dim = bounded(r, 1, MAX_WIDTH, "video width")?;
    let audio_dim = bounded(r, 1, MAX_WIDTH, "audio width")?;
    let values = frames * (video_dim + audio_dim);
    if values * 4 > r.remaining() {
        return Err(r.truncated());
    }
    let at = r.offset();
    let video: Vec<f32> = r.f32s(frames * video_dim)?;
    let audio: Vec<f32> = r.f32s(frames * audio_dim)?;
    if !video.iter().chain(&audio).all(|v| v.is_finite()) {
        return Err(r.invalid_at(at, format!("record {id:?} holds a non-finite frame value")));
    }
    Ok(VideoRecord {
        id,
        labels,
        frames,
        video_dim,
        audio_dim,
        video,
        audio,
    })
}

pub fn write_records(path: &Path, records: &[VideoRecord]) -> Result<()> {
    let bytes = encode_records(records)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<VideoRecord>> {
    decode_records(&fs::read(path)?)
}
