//! Video records: synthetic generation, binary storage, sampling, splits.

mod manifest;
mod record;
mod sampling;
mod synthetic;

pub use manifest::{load_manifest, read_manifest, write_manifest};
pub use record::{
    decode_records, encode_records, read_records, write_records, VideoRecord, MAX_FRAMES, MAX_ID_LEN, MAX_LABELS,
    MAX_WIDTH, RECORD_MAGIC, RECORD_VERSION,
};
pub use sampling::{batch_indices, make_batch, sample_indices, split, uniform_sample, Batch, SampledVideo};
pub use synthetic::{generate_corpus, mixture_means, MixtureMeans, SyntheticSpec};
