//! RTTM `SPEAKER` lines, with the language code stored in the speaker-name field:
//!
//! ```text
//! SPEAKER <recording> <channel> <onset> <duration> <NA> <NA> <language> <NA> <NA>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{Segment, SegmentAnnotation};

/// Decimal places used for onsets and durations.
pub const TIME_PRECISION: usize = 6;

pub fn parse_rttm(text: &str, origin: &str) -> Result<Vec<SegmentAnnotation>> {
    let mut by_recording: BTreeMap<String, Vec<Segment>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with(";;") {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 8 {
            return Err(err(format!("expected at least 8 fields, found {}", fields.len())));
        }
        if fields[0] != "SPEAKER" {
            return Err(err(format!("unsupported record type `{}`", fields[0])));
        }
        let onset: f64 = fields[3]
            .parse()
            .map_err(|_| err(format!("bad onset `{}`", fields[3])))?;
        let duration: f64 = fields[4]
            .parse()
            .map_err(|_| err(format!("bad duration `{}`", fields[4])))?;
        if !onset.is_finite() || !duration.is_finite() {
            return Err(err("non-finite time".into()));
        }
        if duration < 0.0 {
            return Err(err(format!("negative duration {duration}")));
        }
        if onset < 0.0 {
            return Err(err(format!("negative onset {onset}")));
        }
        if duration == 0.0 {
            continue;
        }
        let recording = fields[1].to_string();
        if !by_recording.contains_key(&recording) {
            order.push(recording.clone());
        }
        by_recording
            .entry(recording)
            .or_default()
            .push(Segment::new(onset, onset + duration, fields[7]));
    }
    order
        .into_iter()
        .map(|rec| {
            let segments = by_recording.remove(&rec).unwrap_or_default();
            Ok(SegmentAnnotation::new(rec, segments)?.normalized())
        })
        .collect()
}

pub fn read_rttm(path: impl AsRef<Path>) -> Result<Vec<SegmentAnnotation>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rttm(&text, &path.display().to_string())
}

pub fn format_rttm(anns: &[SegmentAnnotation]) -> String {
    let mut out = String::new();
    for ann in anns {
        for seg in &ann.segments {
            let _ = writeln!(
                out,
                "SPEAKER {} 1 {:.p$} {:.p$} <NA> <NA> {} <NA> <NA>",
                ann.recording_id,
                seg.start,
                seg.end - seg.start,
                seg.label,
                p = TIME_PRECISION
            );
        }
    }
    out
}

pub fn write_rttm(anns: &[SegmentAnnotation], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_rttm(anns)).map_err(|e| Error::io(path, e))
}
