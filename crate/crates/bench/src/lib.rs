//! Input generators shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use langdiar::{Segment, SegmentAnnotation, WaveformBuffer, SAMPLE_RATE, VAD_LABEL};

pub fn cost_matrix(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(0.0..10.0)).collect()).collect()
}

/// `seconds` of alternating-language speech with short pauses, labels drawn from `languages`.
pub fn annotation(id: &str, seconds: f64, languages: &[&str], seed: u64) -> SegmentAnnotation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut segments = Vec::new();
    let mut t = 0.0;
    while t < seconds {
        let len = rng.gen_range(0.5..4.0f64).min(seconds - t);
        let lang = languages[rng.gen_range(0..languages.len())];
        segments.push(Segment::new(t, t + len, VAD_LABEL.to_string()));
        segments.push(Segment::new(t, t + len, lang.to_string()));
        t += len + rng.gen_range(0.0..0.5);
    }
    SegmentAnnotation::new(id.to_string(), segments).unwrap()
}

pub fn noise(seconds: f64, seed: u64) -> WaveformBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SAMPLE_RATE as f64) as usize;
    WaveformBuffer::new((0..n).map(|_| rng.gen_range(-0.3f32..0.3)).collect(), SAMPLE_RATE, "noise").unwrap()
}
