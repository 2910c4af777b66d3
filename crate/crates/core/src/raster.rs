//! Conversion between time-stamped segments and the frame grid.
//!
//! A frame `t` covers `[t * period, (t + 1) * period)` and is active for a label
//! iff its center `(t + 0.5) * period` lies inside a segment carrying that label.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::types::{ChannelRole, LabelMatrix, LanguageInventory, Segment, SegmentAnnotation, VAD_LABEL};

/// Number of whole frames in `duration`. Durations that are integer multiples of the
/// period must not lose a frame to rounding.
pub fn frame_count(duration: f64, frame_period: f64) -> usize {
    let ratio = duration / frame_period;
    (ratio + 1e-9 * ratio.abs().max(1.0)).floor() as usize
}

pub fn frame_center(t: usize, frame_period: f64) -> f64 {
    (t as f64 + 0.5) * frame_period
}

/// Frame index range whose centers fall inside `[start, end)`.
fn covered_frames(start: f64, end: f64, frame_period: f64, frames: usize) -> std::ops::Range<usize> {
    // first t with (t + 0.5) p >= start
    let lo = ((start / frame_period) - 0.5).ceil().max(0.0) as usize;
    // first t with (t + 0.5) p >= end
    let hi = ((end / frame_period) - 0.5).ceil().max(0.0) as usize;
    let mut lo = lo.min(frames);
    let mut hi = hi.min(frames);
    // guard the closed-form bounds against rounding at exact half-frame boundaries
    while lo > 0 && frame_center(lo - 1, frame_period) >= start {
        lo -= 1;
    }
    while lo < frames && frame_center(lo, frame_period) < start {
        lo += 1;
    }
    while hi > 0 && frame_center(hi - 1, frame_period) >= end {
        hi -= 1;
    }
    while hi < frames && frame_center(hi, frame_period) < end {
        hi += 1;
    }
    lo..hi.max(lo)
}

/// Rasterize an annotation onto the frame grid. Channel 0 is VAD (the union of all
/// language channels and explicit VAD segments), followed by one channel per
/// inventory language in inventory order.
pub fn segments_to_label_matrix(
    ann: &SegmentAnnotation,
    inventory: &LanguageInventory,
    frame_period: f64,
    total_duration: f64,
) -> Result<LabelMatrix> {
    if !(frame_period > 0.0) {
        return Err(Error::invalid("frame period must be positive"));
    }
    if !(total_duration > 0.0) {
        return Err(Error::invalid(format!(
            "total duration must be positive, got {total_duration}"
        )));
    }
    let frames = frame_count(total_duration, frame_period);
    let mut roles = vec![ChannelRole::Vad];
    roles.extend(inventory.languages().iter().map(|code| ChannelRole::Language {
        code: code.clone(),
        embedded: inventory.is_embedded(code),
    }));
    let mut values = Array2::<f64>::zeros((roles.len(), frames));
    for seg in &ann.segments {
        let channel = if seg.label == VAD_LABEL {
            0
        } else {
            inventory
                .index_of(&seg.label)
                .map(|i| i + 1)
                .ok_or_else(|| Error::UnknownLabel(seg.label.clone()))?
        };
        for t in covered_frames(seg.start, seg.end, frame_period, frames) {
            values[[channel, t]] = 1.0;
            values[[0, t]] = 1.0;
        }
    }
    LabelMatrix::new(values, frame_period, roles)
}

/// Turn maximal runs of frames with value `>= threshold` into segments, per channel.
/// Runs shorter than `min_duration` are dropped.
pub fn label_matrix_to_segments(
    m: &LabelMatrix,
    recording_id: &str,
    threshold: f64,
    min_duration: f64,
) -> Result<SegmentAnnotation> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!("threshold must lie in (0, 1), got {threshold}")));
    }
    if !(min_duration >= 0.0) {
        return Err(Error::invalid("min_duration must be non-negative"));
    }
    let period = m.frame_period();
    let mut segments = Vec::new();
    for (k, role) in m.roles().iter().enumerate() {
        let row = m.values().row(k);
        let mut t = 0;
        while t < row.len() {
            if row[t] >= threshold {
                let start = t;
                while t < row.len() && row[t] >= threshold {
                    t += 1;
                }
                let seg = Segment::new(start as f64 * period, t as f64 * period, role.label());
                if seg.duration() + 1e-12 >= min_duration {
                    segments.push(seg);
                }
            } else {
                t += 1;
            }
        }
    }
    segments.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.label.cmp(&b.label)));
    SegmentAnnotation::new(recording_id, segments)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inv() -> LanguageInventory {
        LanguageInventory::matrix_only(&["en", "hi"]).unwrap()
    }

    fn oracle_active(start: f64, end: f64, t: usize, p: f64) -> bool {
        let c = (t as f64 + 0.5) * p;
        start <= c && c < end
    }

    #[test]
    fn empty_annotation_gives_zero_matrix() {
        let m = segments_to_label_matrix(&SegmentAnnotation::empty("r"), &inv(), 0.025, 1.0).unwrap();
        assert_eq!(m.frames(), 40);
        assert!(m.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_cover() {
        let ann = SegmentAnnotation::new("r", vec![Segment::new(0.0, 1.0, "en")]).unwrap();
        let m = segments_to_label_matrix(&ann, &inv(), 0.025, 1.0).unwrap();
        assert!(m.values().row(0).iter().all(|&v| v == 1.0));
        assert!(m.values().row(1).iter().all(|&v| v == 1.0));
        assert!(m.values().row(2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_segments_match_center_oracle() {
        let segs = vec![Segment::new(0.0, 0.5, "en"), Segment::new(0.5, 1.0, "hi")];
        let ann = SegmentAnnotation::new("r", segs.clone()).unwrap();
        let m = segments_to_label_matrix(&ann, &inv(), 0.025, 1.0).unwrap();
        for t in 0..40 {
            let en = oracle_active(0.0, 0.5, t, 0.025);
            let hi = oracle_active(0.5, 1.0, t, 0.025);
            assert_eq!(m.values()[[1, t]] == 1.0, en, "frame {t}");
            assert_eq!(m.values()[[2, t]] == 1.0, hi, "frame {t}");
            assert_eq!(en, t < 20);
        }
        let back = label_matrix_to_segments(&m, "r", 0.5, 0.0).unwrap();
        let langs: Vec<_> = back.segments.iter().filter(|s| s.label != VAD_LABEL).collect();
        assert_eq!(langs.len(), 2);
        assert!((langs[0].start - 0.0).abs() < 1e-9 && (langs[0].end - 0.5).abs() < 1e-9);
        assert_eq!(langs[0].label, "en");
        assert!((langs[1].start - 0.5).abs() < 1e-9 && (langs[1].end - 1.0).abs() < 1e-9);
        assert_eq!(langs[1].label, "hi");
    }

    #[test]
    fn unknown_label_and_bad_duration_rejected() {
        let ann = SegmentAnnotation::new("r", vec![Segment::new(0.0, 0.5, "fr")]).unwrap();
        match segments_to_label_matrix(&ann, &inv(), 0.025, 1.0) {
            Err(Error::UnknownLabel(l)) => assert_eq!(l, "fr"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(segments_to_label_matrix(&SegmentAnnotation::empty("r"), &inv(), 0.025, 0.0).is_err());
        assert!(segments_to_label_matrix(&SegmentAnnotation::empty("r"), &inv(), 0.0, 1.0).is_err());
    }

    #[test]
    fn short_runs_are_dropped() {
        let mut m = LabelMatrix::zeros(40, 0.025, vec![ChannelRole::Vad, ChannelRole::language("en")]).unwrap();
        m.values_mut()[[1, 3]] = 1.0;
        let ann = label_matrix_to_segments(&m, "r", 0.5, 0.05).unwrap();
        assert!(ann.segments.is_empty());
        let zero = LabelMatrix::zeros(40, 0.025, vec![ChannelRole::Vad]).unwrap();
        assert!(label_matrix_to_segments(&zero, "r", 0.5, 0.0).unwrap().segments.is_empty());
    }

    #[test]
    fn frame_count_exact_on_multiples() {
        for n in 1..2000usize {
            for &p in &[0.025, 0.02, 0.01, 0.105, 0.205] {
                assert_eq!(frame_count(n as f64 * p, p), n, "n={n} p={p}");
            }
        }
    }
}
