//! Reverberation and additive noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::types::WaveformBuffer;

use super::{SimulatedUtterance, SimulationRecipe};

/// Scaled components of a noisy mixture; `mixture = clean + noise` sample by sample.
#[derive(Debug, Clone)]
pub struct NoisyMixture {
    pub mixture: WaveformBuffer,
    pub clean: Vec<f32>,
    pub noise: Vec<f32>,
}

fn power(x: &[f32]) -> f64 {
    x.iter().map(|&s| s as f64 * s as f64).sum::<f64>() / x.len() as f64
}

/// Add `noise` at `snr_db` relative to `clean`, powers measured over the whole utterance.
/// The noise is looped or cropped to the clean length. The result is peak-normalized
/// only if a sample would exceed unit magnitude.
pub fn mix_noise_parts(clean: &WaveformBuffer, noise: &WaveformBuffer, snr_db: f64) -> Result<NoisyMixture> {
    if !snr_db.is_finite() {
        return Err(Error::NonFinite("SNR".into()));
    }
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::invalid(format!(
            "noise sample rate {} differs from clean {}",
            noise.sample_rate(),
            clean.sample_rate()
        )));
    }
    let p_clean = clean.power();
    if p_clean == 0.0 {
        return Err(Error::invalid("clean signal has zero power"));
    }
    let n = clean.len();
    let looped: Vec<f32> = noise.samples().iter().copied().cycle().take(n).collect();
    let p_noise = power(&looped);
    if p_noise == 0.0 {
        return Err(Error::invalid(format!("noise `{}` has zero power", noise.source_id())));
    }
    let gain = (p_clean / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut noise_part: Vec<f32> = looped.iter().map(|&s| (s as f64 * gain) as f32).collect();
    let mut clean_part = clean.samples().to_vec();
    let peak = clean_part
        .iter()
        .zip(&noise_part)
        .map(|(&c, &v)| (c + v).abs())
        .fold(0.0f32, f32::max);
    if peak > 1.0 {
        let scale = 1.0 / peak;
        clean_part.iter_mut().for_each(|s| *s *= scale);
        noise_part.iter_mut().for_each(|s| *s *= scale);
    }
    let mixture: Vec<f32> = clean_part.iter().zip(&noise_part).map(|(&c, &v)| c + v).collect();
    Ok(NoisyMixture {
        mixture: clean.with_samples(mixture)?,
        clean: clean_part,
        noise: noise_part,
    })
}

pub fn mix_noise(clean: &WaveformBuffer, noise: &WaveformBuffer, snr_db: f64) -> Result<WaveformBuffer> {
    Ok(mix_noise_parts(clean, noise, snr_db)?.mixture)
}

/// Linear convolution through the FFT, truncated to `x.len()` samples.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let full = x.len() + h.len() - 1;
    let size = full.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut a: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    a.resize(size, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    b.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    a.iter().take(x.len()).map(|c| c.re / size as f64).collect()
}

/// Convolve with a room impulse response, keep the input length, and rescale so the
/// output RMS equals the input RMS.
pub fn apply_rir(clean: &WaveformBuffer, rir: &WaveformBuffer) -> Result<WaveformBuffer> {
    if rir.samples().iter().all(|&s| s == 0.0) {
        return Err(Error::invalid(format!("impulse response `{}` is all zeros", rir.source_id())));
    }
    if rir.sample_rate() != clean.sample_rate() {
        return Err(Error::invalid(format!(
            "impulse response sample rate {} differs from signal {}",
            rir.sample_rate(),
            clean.sample_rate()
        )));
    }
    let x: Vec<f64> = clean.samples().iter().map(|&s| s as f64).collect();
    let h: Vec<f64> = rir.samples().iter().map(|&s| s as f64).collect();
    let mut y = fft_convolve(&x, &h);
    let p_in = x.iter().map(|v| v * v).sum::<f64>();
    let p_out = y.iter().map(|v| v * v).sum::<f64>();
    if p_in > 0.0 {
        if p_out == 0.0 {
            return Err(Error::invalid("reverberated signal vanished inside the input window"));
        }
        let g = (p_in / p_out).sqrt();
        y.iter_mut().for_each(|v| *v *= g);
    }
    clean.with_samples(y.into_iter().map(|v| v as f32).collect())
}

/// Seeded augmentation decision for one utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub fires: bool,
    pub rir: usize,
    pub noise: usize,
    pub snr_db: f64,
}

/// Draw all choices up front, whether or not augmentation fires, so the stream layout
/// does not depend on the outcome.
pub fn draw_augmentation(recipe: &SimulationRecipe, rirs: usize, noises: usize) -> AugmentDraw {
    let mut rng: ChaCha8Rng = super::recipe_rng(recipe.seed, super::AUGMENT_STREAM);
    let u: f64 = rng.gen();
    let rir = rng.gen_range(0..rirs.max(1));
    let noise = rng.gen_range(0..noises.max(1));
    let snr_idx = rng.gen_range(0..recipe.snr_choices_db.len().max(1));
    AugmentDraw {
        fires: u < recipe.augment_probability,
        rir,
        noise,
        snr_db: recipe.snr_choices_db.get(snr_idx).copied().unwrap_or(0.0),
    }
}

/// With probability `augment_probability`: reverberate, then add noise at an SNR drawn
/// from `snr_choices_db`. Labels are never touched.
pub fn augment(
    utt: &SimulatedUtterance,
    rir_pool: &[WaveformBuffer],
    noise_pool: &[WaveformBuffer],
    recipe: &SimulationRecipe,
) -> Result<SimulatedUtterance> {
    recipe.validate()?;
    let draw = draw_augmentation(recipe, rir_pool.len(), noise_pool.len());
    if !draw.fires {
        return Ok(utt.clone());
    }
    if rir_pool.is_empty() {
        return Err(Error::EmptyPool("impulse responses".into()));
    }
    if noise_pool.is_empty() {
        return Err(Error::EmptyPool("noise".into()));
    }
    let reverberant = apply_rir(&utt.audio, &rir_pool[draw.rir])?;
    let noisy = mix_noise(&reverberant, &noise_pool[draw.noise], draw.snr_db)?;
    Ok(SimulatedUtterance {
        audio: noisy,
        labels: utt.labels.clone(),
        provenance: utt.provenance.clone(),
        augmented: true,
        applied_snr_db: Some(draw.snr_db),
        rir_id: Some(rir_pool[draw.rir].source_id().to_string()),
        noise_id: Some(noise_pool[draw.noise].source_id().to_string()),
    })
}
