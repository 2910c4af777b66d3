use proptest::prelude::*;

use langdiar::metrics::{score, ScoringConfig, ScoringMode};
use langdiar::{Segment, SegmentAnnotation};

fn annotation(labels: &'static [&'static str]) -> impl Strategy<Value = SegmentAnnotation> {
    prop::collection::vec((0u32..300, 1u32..80, 0..labels.len()), 1..8).prop_map(move |segs| {
        let segments = segs
            .into_iter()
            .map(|(s, d, l)| Segment::new(f64::from(s) * 0.025, f64::from(s + d) * 0.025, labels[l]))
            .collect();
        SegmentAnnotation::new("r", segments).unwrap()
    })
}

fn swap_labels(ann: &SegmentAnnotation, a: &str, b: &str) -> SegmentAnnotation {
    let mut out = ann.clone();
    for s in &mut out.segments {
        if s.label == a {
            s.label = b.to_string();
        } else if s.label == b {
            s.label = a.to_string();
        }
    }
    out
}

const REF: &[&str] = &["en", "hi", "speech"];
const HYP: &[&str] = &["en", "hi", "ta", "speech"];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn decomposition_identity(r in annotation(REF), h in annotation(HYP)) {
        for mode in [ScoringMode::Practical, ScoringMode::Ideal] {
            let b = score(&r, &h, &ScoringConfig { mode, ..Default::default() }).unwrap();
            let c = b.counts;
            prop_assert_eq!(b.der, (c.false_alarm + c.miss + c.confusion) as f64 / c.speech as f64);
            prop_assert!((b.der - (b.false_alarm + b.miss + b.confusion)).abs() < 1e-12);
        }
    }

    #[test]
    fn ideal_mode_has_no_vad_errors_and_never_exceeds_practical(r in annotation(REF), h in annotation(HYP)) {
        let ideal = score(&r, &h, &ScoringConfig { mode: ScoringMode::Ideal, ..Default::default() }).unwrap();
        let practical = score(&r, &h, &ScoringConfig::default()).unwrap();
        prop_assert_eq!(ideal.counts.false_alarm, 0);
        prop_assert_eq!(ideal.counts.miss, 0);
        prop_assert!(ideal.der <= practical.der);
    }

    #[test]
    fn consistent_label_swap_changes_nothing(r in annotation(REF), h in annotation(HYP)) {
        let cfg = ScoringConfig::default();
        let a = score(&r, &h, &cfg).unwrap();
        let b = score(&swap_labels(&r, "en", "hi"), &swap_labels(&h, "en", "hi"), &cfg).unwrap();
        prop_assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn larger_collar_never_increases_a_component(r in annotation(REF), h in annotation(HYP), c in 0.0f64..0.3, extra in 0.0f64..0.3) {
        let small = score(&r, &h, &ScoringConfig { collar: c, ..Default::default() });
        let large = score(&r, &h, &ScoringConfig { collar: c + extra, ..Default::default() });
        if let (Ok(s), Ok(l)) = (small, large) {
            prop_assert!(l.counts.false_alarm <= s.counts.false_alarm);
            prop_assert!(l.counts.miss <= s.counts.miss);
            prop_assert!(l.counts.confusion <= s.counts.confusion);
        }
    }
}
