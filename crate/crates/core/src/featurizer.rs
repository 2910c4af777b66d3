//! Convolutional front end: raw 16 kHz waveform to frame-level acoustic features.
//!
//! A stack of strided 1-D convolutions (per-layer layer norm + GELU) followed by a
//! linear projection to `d_model`. With the default stack the total stride is 400
//! samples, one frame every 25 ms.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Init, LayerNorm, Linear, ParamStore};
use crate::types::WaveformBuffer;

pub const SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeaturizerConfig {
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    /// Conv channel width.
    pub channels: usize,
    pub d_model: usize,
    /// Layer norm after every conv layer.
    pub layer_norm: bool,
    /// Zero-mean / unit-variance normalization of the waveform before the stack.
    pub normalize_waveform: bool,
    /// Zero-pad `(receptive_field - stride) / 2` samples on each side so frame `t` is
    /// centered at `(t + 0.5) * stride` samples and `T = floor(n / stride)`.
    pub center: bool,
}

impl Default for FeaturizerConfig {
    fn default() -> Self {
        Self::stride_400(128)
    }
}

impl FeaturizerConfig {
    /// 7 layers, total stride 400 samples (25 ms at 16 kHz).
    pub fn stride_400(d_model: usize) -> Self {
        Self {
            kernels: vec![10, 5, 3, 3, 3, 2, 2],
            strides: vec![5, 5, 2, 2, 2, 2, 1],
            channels: d_model,
            d_model,
            layer_norm: true,
            normalize_waveform: true,
            center: true,
        }
    }

    /// wav2vec2/MMS-style stack, total stride 320 samples (20 ms), for loading exported
    /// front-end weights.
    pub fn stride_320(d_model: usize) -> Self {
        Self {
            kernels: vec![10, 3, 3, 3, 3, 2, 2],
            strides: vec![5, 2, 2, 2, 2, 2, 2],
            ..Self::stride_400(d_model)
        }
    }

    pub fn frame_period(&self) -> Result<f64> {
        let (_, stride) = receptive_field(self)?;
        Ok(stride as f64 / SAMPLE_RATE as f64)
    }

    fn padding(&self) -> Result<(usize, usize)> {
        if !self.center {
            return Ok((0, 0));
        }
        let (rf, stride) = receptive_field(self)?;
        let extra = rf.saturating_sub(stride);
        Ok((extra / 2, extra - extra / 2))
    }

    /// Minimum number of input samples accepted.
    pub fn min_samples(&self) -> Result<usize> {
        let (rf, _) = receptive_field(self)?;
        let (l, r) = self.padding()?;
        Ok(rf.saturating_sub(l + r).max(1))
    }

    /// Number of output frames for `n` input samples.
    pub fn frames_for(&self, n: usize) -> Result<usize> {
        let (rf, stride) = receptive_field(self)?;
        let (l, r) = self.padding()?;
        let n = n + l + r;
        if n < rf {
            return Ok(0);
        }
        Ok((n - rf) / stride + 1)
    }
}

/// Analytic receptive field and total stride, both in samples.
pub fn receptive_field(config: &FeaturizerConfig) -> Result<(usize, usize)> {
    if config.kernels.is_empty() {
        return Err(Error::invalid("conv stack has no layers"));
    }
    if config.kernels.len() != config.strides.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} strides", config.kernels.len()),
            actual: config.strides.len().to_string(),
        });
    }
    if config.kernels.iter().chain(&config.strides).any(|&v| v == 0) {
        return Err(Error::invalid("kernel sizes and strides must be positive"));
    }
    let mut rf = config.kernels[0];
    let mut jump = config.strides[0];
    for (&k, &s) in config.kernels.iter().zip(&config.strides).skip(1) {
        rf += (k - 1) * jump;
        jump *= s;
    }
    Ok((rf, jump))
}

#[derive(Debug, Clone)]
pub struct FeatureSequence {
    /// (T, D)
    pub features: Tensor,
    pub frame_period: f64,
    pub d_model: usize,
}

impl FeatureSequence {
    pub fn frames(&self) -> usize {
        self.features.dim(0).unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    weight: Tensor,
    bias: Tensor,
    norm: Option<LayerNorm>,
    stride: usize,
}

#[derive(Debug, Clone)]
pub struct Featurizer {
    config: FeaturizerConfig,
    layers: Vec<ConvLayer>,
    projection: Linear,
}

impl Featurizer {
    pub fn new(store: &mut ParamStore, config: &FeaturizerConfig) -> Result<Self> {
        receptive_field(config)?;
        let mut s = store.scope("featurizer");
        let mut layers = Vec::with_capacity(config.kernels.len());
        let mut c_in = 1;
        for (i, (&k, &stride)) in config.kernels.iter().zip(&config.strides).enumerate() {
            let mut ls = s.sub(&format!("conv.{i}"));
            let fan_in = c_in * k;
            let weight = ls.var("weight", &[config.channels, c_in, k], Init::FanIn(fan_in))?;
            let bias = ls.var("bias", &[config.channels], Init::FanIn(fan_in))?;
            let norm = if config.layer_norm {
                Some(LayerNorm::new(&mut ls, "norm", config.channels)?)
            } else {
                None
            };
            layers.push(ConvLayer {
                weight,
                bias,
                norm,
                stride,
            });
            c_in = config.channels;
        }
        let projection = Linear::new(&mut s, "projection", config.channels, config.d_model)?;
        Ok(Self {
            config: config.clone(),
            layers,
            projection,
        })
    }

    pub fn config(&self) -> &FeaturizerConfig {
        &self.config
    }

    pub fn extract(&self, wav: &WaveformBuffer) -> Result<FeatureSequence> {
        if wav.sample_rate() != SAMPLE_RATE {
            return Err(Error::invalid(format!(
                "featurizer expects {SAMPLE_RATE} Hz audio, got {} Hz",
                wav.sample_rate()
            )));
        }
        let required = self.config.min_samples()?;
        if wav.len() < required {
            return Err(Error::InputTooShort {
                required,
                actual: wav.len(),
            });
        }
        let mut samples: Vec<f64> = wav.samples().iter().map(|&s| s as f64).collect();
        if self.config.normalize_waveform {
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
            let scale = 1.0 / (var + 1e-7).sqrt();
            for s in &mut samples {
                *s = (*s - mean) * scale;
            }
        }
        let (l, r) = self.config.padding()?;
        let mut padded = vec![0.0; l];
        padded.extend_from_slice(&samples);
        padded.extend(std::iter::repeat(0.0).take(r));
        let dtype = self.projection.weight().dtype();
        let device = self.projection.weight().device().clone();
        let n = padded.len();
        let x = Tensor::from_vec(padded, (1, 1, n), &device)?.to_dtype(dtype)?;
        let features = self.forward(&x)?;
        Ok(FeatureSequence {
            features,
            frame_period: self.config.frame_period()?,
            d_model: self.config.d_model,
        })
    }

    /// `x`: (1, 1, N) already padded -> (T, d_model)
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = h.conv1d(&layer.weight, 0, layer.stride, 1, 1)?;
            h = h.broadcast_add(&layer.bias.reshape((1, (), 1))?)?;
            if let Some(norm) = &layer.norm {
                // normalize over channels, per frame
                h = norm.forward(&h.transpose(1, 2)?)?.transpose(1, 2)?;
            }
            h = h.gelu_erf()?;
        }
        let frames = h.squeeze(0)?.t()?.contiguous()?; // (T, C)
        let out = self.projection.forward(&frames)?;
        debug_assert_eq!(out.dim(D::Minus1)?, self.config.d_model);
        Ok(out)
    }
}

/// Stateless convenience wrapper around [`Featurizer::extract`].
pub fn extract_features(wav: &WaveformBuffer, featurizer: &Featurizer) -> Result<FeatureSequence> {
    featurizer.extract(wav)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    fn cfg(kernels: &[usize], strides: &[usize]) -> FeaturizerConfig {
        FeaturizerConfig {
            kernels: kernels.to_vec(),
            strides: strides.to_vec(),
            ..FeaturizerConfig::stride_400(8)
        }
    }

    #[test]
    fn receptive_field_arithmetic() {
        assert_eq!(receptive_field(&cfg(&[10], &[5])).unwrap(), (10, 5));
        assert_eq!(receptive_field(&cfg(&[10, 3], &[5, 2])).unwrap(), (20, 10));
        let (_, stride) = receptive_field(&FeaturizerConfig::default()).unwrap();
        assert_eq!(stride, FeaturizerConfig::default().strides.iter().product::<usize>());
        assert_eq!(stride, 400);
        assert_eq!(receptive_field(&FeaturizerConfig::stride_320(8)).unwrap(), (400, 320));
        assert!(receptive_field(&cfg(&[], &[])).is_err());
        assert!(receptive_field(&cfg(&[3, 3], &[1])).is_err());
    }

    #[test]
    fn four_seconds_give_160_frames() {
        let config = FeaturizerConfig::stride_400(16);
        let mut store = ParamStore::new(0, DType::F32);
        let f = Featurizer::new(&mut store, &config).unwrap();
        let wav = WaveformBuffer::new(
            (0..64000).map(|i| ((i as f32) * 0.05).sin() * 0.3).collect(),
            16000,
            "x",
        )
        .unwrap();
        let out = f.extract(&wav).unwrap();
        let t = out.frames() as i64;
        assert!((t - 160).abs() <= 2, "T = {t}");
        assert_eq!(out.features.dims(), &[t as usize, 16]);
        assert!((out.frame_period - 0.025).abs() < 1e-12);
        assert_eq!(config.frames_for(64000).unwrap(), out.frames());
    }

    #[test]
    fn uncentered_frame_count_matches_formula() {
        let mut config = FeaturizerConfig::stride_400(8);
        config.center = false;
        let (rf, stride) = receptive_field(&config).unwrap();
        let mut store = ParamStore::new(0, DType::F32);
        let f = Featurizer::new(&mut store, &config).unwrap();
        for n in [rf, rf + 1, 5000, 12345] {
            let wav = WaveformBuffer::new(vec![0.1; n], 16000, "x").unwrap();
            assert_eq!(f.extract(&wav).unwrap().frames(), (n - rf) / stride + 1);
        }
    }

    #[test]
    fn zero_signal_is_finite() {
        let mut store = ParamStore::new(0, DType::F32);
        let f = Featurizer::new(&mut store, &FeaturizerConfig::stride_400(8)).unwrap();
        let wav = WaveformBuffer::new(vec![0.0; 8000], 16000, "z").unwrap();
        let out = crate::nn::to_vec(&f.extract(&wav).unwrap().features).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn short_input_reports_minimum() {
        let mut config = FeaturizerConfig::stride_400(8);
        config.center = false;
        let mut store = ParamStore::new(0, DType::F32);
        let f = Featurizer::new(&mut store, &config).unwrap();
        let wav = WaveformBuffer::new(vec![0.0; 100], 16000, "z").unwrap();
        match f.extract(&wav) {
            Err(Error::InputTooShort { required, actual }) => {
                assert_eq!(required, receptive_field(&config).unwrap().0);
                assert_eq!(actual, 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_sample_rate_rejected() {
        let mut store = ParamStore::new(0, DType::F32);
        let f = Featurizer::new(&mut store, &FeaturizerConfig::stride_400(8)).unwrap();
        let wav = WaveformBuffer::new(vec![0.0; 8000], 8000, "z").unwrap();
        assert!(f.extract(&wav).is_err());
    }
}
