//! Waveform-to-label-matrix model: featurizer, encoder, optional pooling, decoder.

use candle_core::DType;
use serde::{Deserialize, Serialize};

use crate::decoder::{Decoder, DecoderConfig, DiarizationPrediction};
use crate::encoder::{AttentivePool, ContextualEmbeddings, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::featurizer::{Featurizer, FeaturizerConfig};
use crate::nn::{Mode, ParamStore};
use crate::raster::segments_to_label_matrix;
use crate::types::{LabelMatrix, LanguageInventory, SegmentAnnotation, WaveformBuffer};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub featurizer: FeaturizerConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    /// Small configuration for CPU experiments and tests.
    pub fn desk(d_model: usize) -> Self {
        let mut featurizer = FeaturizerConfig::stride_400(d_model);
        featurizer.channels = d_model;
        Self {
            featurizer,
            encoder: EncoderConfig {
                blocks: 2,
                d_model,
                heads: 4,
                conv_kernel: 7,
                ff_expansion: 2,
                dropout: 0.0,
                max_relative_position: 32,
                pooling_window: 1,
            },
            decoder: DecoderConfig {
                d_model,
                heads: 4,
                ff_expansion: 2,
                ..DecoderConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.featurizer.d_model;
        if self.encoder.d_model != d || self.decoder.d_model != d {
            return Err(Error::Config(format!(
                "model widths disagree: featurizer {d}, encoder {}, decoder {}",
                self.encoder.d_model, self.decoder.d_model
            )));
        }
        if self.encoder.pooling_window == 0 {
            return Err(Error::Config("pooling window must be at least 1".into()));
        }
        self.featurizer.frame_period()?;
        Ok(())
    }

    /// Output frame period in seconds, pooling included.
    pub fn frame_period(&self) -> Result<f64> {
        Ok(self.featurizer.frame_period()? * self.encoder.pooling_window as f64)
    }

    /// Output frames for `n` input samples, pooling included.
    pub fn frames_for(&self, n: usize) -> Result<usize> {
        Ok(self.featurizer.frames_for(n)? / self.encoder.pooling_window)
    }
}

pub struct LanguageDiarizer {
    config: ModelConfig,
    store: ParamStore,
    featurizer: Featurizer,
    encoder: Encoder,
    pool: Option<AttentivePool>,
    decoder: Decoder,
}

impl LanguageDiarizer {
    pub fn new(config: &ModelConfig, seed: u64, dtype: DType) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new(seed, dtype);
        let featurizer = Featurizer::new(&mut store, &config.featurizer)?;
        let encoder = Encoder::new(&mut store, &config.encoder)?;
        let pool = if config.encoder.pooling_window > 1 {
            Some(AttentivePool::new(&mut store, config.encoder.d_model, config.encoder.pooling_window)?)
        } else {
            None
        };
        let decoder = Decoder::new(&mut store, &config.decoder)?;
        Ok(Self {
            config: config.clone(),
            store,
            featurizer,
            encoder,
            pool,
            decoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn decoder(&self) -> &Decoder {
        &self.decoder
    }

    pub fn frame_period(&self) -> Result<f64> {
        self.config.frame_period()
    }

    /// Contextual embeddings on the output frame grid.
    pub fn embed(&self, wav: &WaveformBuffer, mode: &Mode) -> Result<ContextualEmbeddings> {
        let feat = self.featurizer.extract(wav)?;
        let emb = self.encoder.encode(&feat, mode)?;
        match &self.pool {
            Some(p) => p.forward(&emb),
            None => Ok(emb),
        }
    }

    pub fn forward(&self, wav: &WaveformBuffer, mode: &Mode) -> Result<DiarizationPrediction> {
        let emb = self.embed(wav, mode)?;
        self.decoder.decode(&emb, mode)
    }

    /// Evaluation-mode label matrix.
    pub fn diarize(&self, wav: &WaveformBuffer) -> Result<LabelMatrix> {
        Ok(self.forward(wav, &Mode::Eval)?.label_matrix)
    }

    /// Reference labels of `ann` on this model's output grid for an input of `samples`.
    pub fn target_for(&self, ann: &SegmentAnnotation, inventory: &LanguageInventory, samples: usize) -> Result<LabelMatrix> {
        let period = self.frame_period()?;
        let frames = self.config.frames_for(samples)?;
        let m = segments_to_label_matrix(ann, inventory, period, frames as f64 * period)?;
        if m.frames() != frames {
            return Err(Error::ShapeMismatch {
                expected: format!("{frames} target frames"),
                actual: m.frames().to_string(),
            });
        }
        Ok(m)
    }
}
