//! File formats: RTTM annotations, 16-bit PCM WAV, JSON-lines manifests.

pub mod manifest;
pub mod rttm;
pub mod wav;

pub use manifest::{read_jsonl, write_jsonl, SourceRecord};
pub use rttm::{format_rttm, parse_rttm, read_rttm, write_rttm};
pub use wav::{read_wav, write_wav};
