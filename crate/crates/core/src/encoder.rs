//! Conformer encoder. Refines acoustic features into contextual embeddings at the
//! same frame rate; an optional attentive pooling stage exists only for frame-rate
//! ablations.
//!
//! Block layout (macaron style):
//!
//! ```text
//! x = x + 1/2 FF(x)
//! x = x + MHSA(LN(x))          relative position bias per head
//! x = x + ConvModule(x)        LN, pointwise, GLU, depthwise, LN, SiLU, pointwise
//! x = x + 1/2 FF(x)
//! x = LN(x)
//! ```

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::FeatureSequence;
use crate::nn::{softmax, Init, LayerNorm, Linear, Mode, MultiHeadAttention, ParamStore, Scope};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub blocks: usize,
    pub d_model: usize,
    pub heads: usize,
    pub conv_kernel: usize,
    pub ff_expansion: usize,
    pub dropout: f64,
    /// Relative distances beyond this share one bias bucket.
    pub max_relative_position: usize,
    /// Attentive pooling window in frames; 1 disables pooling.
    pub pooling_window: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            blocks: 6,
            d_model: 128,
            heads: 4,
            conv_kernel: 15,
            ff_expansion: 4,
            dropout: 0.1,
            max_relative_position: 64,
            pooling_window: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ContextualEmbeddings {
    /// (T', D)
    pub embeddings: Tensor,
    pub frame_period: f64,
}

impl ContextualEmbeddings {
    pub fn frames(&self) -> usize {
        self.embeddings.dim(0).unwrap_or(0)
    }

    pub fn d_model(&self) -> usize {
        self.embeddings.dim(1).unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(s: &mut Scope<'_>, name: &str, d: usize, expansion: usize) -> Result<Self> {
        let mut s = s.sub(name);
        Ok(Self {
            norm: LayerNorm::new(&mut s, "norm", d)?,
            up: Linear::new(&mut s, "up", d, d * expansion)?,
            down: Linear::new(&mut s, "down", d * expansion, d)?,
        })
    }

    fn forward(&self, x: &Tensor, mode: &Mode) -> Result<Tensor> {
        let h = self.up.forward(&self.norm.forward(x)?)?.silu()?;
        let h = mode.dropout(&h)?;
        mode.dropout(&self.down.forward(&h)?)
    }
}

/// Self-attention with a learned per-head bias indexed by clipped relative distance.
#[derive(Debug, Clone)]
struct RelativeSelfAttention {
    norm: LayerNorm,
    attn: MultiHeadAttention,
    /// (2R + 1, H)
    rel_bias: Tensor,
    max_rel: usize,
}

impl RelativeSelfAttention {
    fn new(s: &mut Scope<'_>, name: &str, cfg: &EncoderConfig) -> Result<Self> {
        let mut s = s.sub(name);
        let max_rel = cfg.max_relative_position.max(1);
        Ok(Self {
            norm: LayerNorm::new(&mut s, "norm", cfg.d_model)?,
            attn: MultiHeadAttention::new(&mut s, "attn", cfg.d_model, cfg.heads)?,
            rel_bias: s.var("rel_bias", &[2 * max_rel + 1, cfg.heads], Init::Uniform(0.02))?,
            max_rel,
        })
    }

    fn position_bias(&self, t: usize) -> Result<Tensor> {
        let r = self.max_rel as i64;
        let idx: Vec<u32> = (0..t as i64)
            .flat_map(|i| (0..t as i64).map(move |j| ((j - i).clamp(-r, r) + r) as u32))
            .collect();
        let idx = Tensor::from_vec(idx, t * t, self.rel_bias.device())?;
        let heads = self.rel_bias.dim(1)?;
        Ok(self
            .rel_bias
            .index_select(&idx, 0)?
            .reshape((t, t, heads))?
            .permute((2, 0, 1))?
            .contiguous()?)
    }

    fn forward(&self, x: &Tensor, mode: &Mode) -> Result<Tensor> {
        let h = self.norm.forward(x)?;
        let bias = self.position_bias(x.dim(0)?)?;
        mode.dropout(&self.attn.forward(&h, &h, Some(&bias))?)
    }
}

#[derive(Debug, Clone)]
struct ConvModule {
    norm: LayerNorm,
    pointwise_in: Linear,
    /// (kernel, D)
    depthwise: Tensor,
    depthwise_bias: Tensor,
    mid_norm: LayerNorm,
    pointwise_out: Linear,
    kernel: usize,
}

impl ConvModule {
    fn new(s: &mut Scope<'_>, name: &str, d: usize, kernel: usize) -> Result<Self> {
        if kernel == 0 || kernel % 2 == 0 {
            return Err(Error::invalid(format!("conv kernel must be odd, got {kernel}")));
        }
        let mut s = s.sub(name);
        Ok(Self {
            norm: LayerNorm::new(&mut s, "norm", d)?,
            pointwise_in: Linear::new(&mut s, "pointwise_in", d, 2 * d)?,
            depthwise: s.var("depthwise.weight", &[kernel, d], Init::FanIn(kernel))?,
            depthwise_bias: s.var("depthwise.bias", &[d], Init::FanIn(kernel))?,
            mid_norm: LayerNorm::new(&mut s, "mid_norm", d)?,
            pointwise_out: Linear::new(&mut s, "pointwise_out", d, d)?,
            kernel,
        })
    }

    /// Same-padded depthwise convolution over time on a (T, D) tensor, written as a sum
    /// of shifted, channel-scaled copies so it differentiates with primitive ops.
    fn depthwise_conv(&self, x: &Tensor) -> Result<Tensor> {
        let (t, d) = x.dims2()?;
        let pad = self.kernel / 2;
        let padded = x.pad_with_zeros(0, pad, pad)?;
        let mut acc = self.depthwise_bias.reshape((1, d))?.broadcast_as((t, d))?.contiguous()?;
        for j in 0..self.kernel {
            let w = self.depthwise.narrow(0, j, 1)?; // (1, D)
            acc = (acc + padded.narrow(0, j, t)?.broadcast_mul(&w)?)?;
        }
        Ok(acc)
    }

    fn forward(&self, x: &Tensor, mode: &Mode) -> Result<Tensor> {
        let d = x.dim(1)?;
        let h = self.pointwise_in.forward(&self.norm.forward(x)?)?;
        let a = h.narrow(D::Minus1, 0, d)?;
        let g = h.narrow(D::Minus1, d, d)?;
        let h = a.mul(&candle_nn::ops::sigmoid(&g)?)?; // GLU
        let h = self.depthwise_conv(&h)?;
        let h = self.mid_norm.forward(&h)?.silu()?;
        mode.dropout(&self.pointwise_out.forward(&h)?)
    }
}

#[derive(Debug, Clone)]
struct ConformerBlock {
    ff1: FeedForward,
    mhsa: RelativeSelfAttention,
    conv: ConvModule,
    ff2: FeedForward,
    final_norm: LayerNorm,
}

impl ConformerBlock {
    fn forward(&self, x: &Tensor, mode: &Mode) -> Result<Tensor> {
        let x = (x + (self.ff1.forward(x, mode)? * 0.5)?)?;
        let x = (&x + self.mhsa.forward(&x, mode)?)?;
        let x = (&x + self.conv.forward(&x, mode)?)?;
        let x = (&x + (self.ff2.forward(&x, mode)? * 0.5)?)?;
        self.final_norm.forward(&x)
    }
}

/// Learned attentive pooling over non-overlapping windows of frames.
#[derive(Debug, Clone)]
pub struct AttentivePool {
    score: Linear,
    window: usize,
}

impl AttentivePool {
    pub fn new(store: &mut ParamStore, d_model: usize, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::invalid("pooling window must be at least 1 frame"));
        }
        let mut s = store.scope("pool");
        Ok(Self {
            score: Linear::new(&mut s, "score", d_model, 1)?,
            window,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn forward(&self, emb: &ContextualEmbeddings) -> Result<ContextualEmbeddings> {
        attentive_pool(emb, self.window, |x| {
            let scores = self.score.forward(x)?; // (T, 1)
            Ok(scores.squeeze(1)?)
        })
    }
}

/// Pool `window` consecutive frames into one: softmax of per-frame scores within the
/// window, then the weighted mean. Trailing frames that do not fill a window are dropped.
pub fn attentive_pool<F>(emb: &ContextualEmbeddings, window: usize, score: F) -> Result<ContextualEmbeddings>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    if window == 0 {
        return Err(Error::invalid("pooling window must be at least 1 frame"));
    }
    let (t, d) = emb.embeddings.dims2()?;
    if window > t {
        return Err(Error::invalid(format!(
            "pooling window {window} exceeds sequence length {t}"
        )));
    }
    if window == 1 {
        return Ok(emb.clone());
    }
    let out_t = t / window;
    let x = emb.embeddings.narrow(0, 0, out_t * window)?;
    let scores = score(&x)?.reshape((out_t, window))?;
    let weights = softmax(&scores)?.unsqueeze(2)?; // (T', w, 1)
    let grouped = x.reshape((out_t, window, d))?;
    let pooled = grouped.broadcast_mul(&weights)?.sum(1)?;
    Ok(ContextualEmbeddings {
        embeddings: pooled,
        frame_period: emb.frame_period * window as f64,
    })
}

#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
    blocks: Vec<ConformerBlock>,
}

impl Encoder {
    pub fn new(store: &mut ParamStore, config: &EncoderConfig) -> Result<Self> {
        let mut s = store.scope("encoder");
        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            let mut b = s.sub(&format!("block.{i}"));
            blocks.push(ConformerBlock {
                ff1: FeedForward::new(&mut b, "ff1", config.d_model, config.ff_expansion)?,
                mhsa: RelativeSelfAttention::new(&mut b, "mhsa", config)?,
                conv: ConvModule::new(&mut b, "conv", config.d_model, config.conv_kernel)?,
                ff2: FeedForward::new(&mut b, "ff2", config.d_model, config.ff_expansion)?,
                final_norm: LayerNorm::new(&mut b, "final_norm", config.d_model)?,
            });
        }
        Ok(Self {
            config: config.clone(),
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn encode(&self, feat: &FeatureSequence, mode: &Mode) -> Result<ContextualEmbeddings> {
        let (t, d) = feat.features.dims2()?;
        if t == 0 {
            return Err(Error::invalid("cannot encode an empty feature sequence"));
        }
        if d != self.config.d_model {
            return Err(Error::ShapeMismatch {
                expected: format!("d_model {}", self.config.d_model),
                actual: format!("d_model {d}"),
            });
        }
        let mut x = feat.features.clone();
        for block in &self.blocks {
            x = block.forward(&x, mode)?;
        }
        debug_assert_eq!(x.dim(0)?, t);
        Ok(ContextualEmbeddings {
            embeddings: x,
            frame_period: feat.frame_period,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::to_vec;
    use candle_core::{DType, Device};

    fn small() -> EncoderConfig {
        EncoderConfig {
            blocks: 2,
            d_model: 16,
            heads: 4,
            conv_kernel: 5,
            ff_expansion: 2,
            dropout: 0.0,
            max_relative_position: 8,
            pooling_window: 1,
        }
    }

    fn features(t: usize, d: usize, seed: u64) -> FeatureSequence {
        let mut store = ParamStore::new(seed, DType::F64);
        let x = store.var("x", &[t, d], Init::Uniform(1.0)).unwrap();
        FeatureSequence {
            features: x,
            frame_period: 0.025,
            d_model: d,
        }
    }

    #[test]
    fn preserves_shape_and_is_deterministic() {
        let mut store = ParamStore::new(3, DType::F64);
        let enc = Encoder::new(&mut store, &small()).unwrap();
        let f = features(40, 16, 1);
        let a = enc.encode(&f, &Mode::Eval).unwrap();
        let b = enc.encode(&f, &Mode::Eval).unwrap();
        assert_eq!(a.embeddings.dims(), &[40, 16]);
        assert_eq!(a.frame_period, 0.025);
        assert_eq!(to_vec(&a.embeddings).unwrap(), to_vec(&b.embeddings).unwrap());
    }

    #[test]
    fn dimension_mismatch_names_both_sizes() {
        let mut store = ParamStore::new(3, DType::F64);
        let enc = Encoder::new(&mut store, &small()).unwrap();
        let err = enc.encode(&features(5, 8, 1), &Mode::Eval).unwrap_err().to_string();
        assert!(err.contains("16") && err.contains('8'), "{err}");
    }

    #[test]
    fn single_frame_input_is_finite() {
        let mut store = ParamStore::new(3, DType::F64);
        let enc = Encoder::new(&mut store, &small()).unwrap();
        let out = enc.encode(&features(1, 16, 2), &Mode::Eval).unwrap();
        assert_eq!(out.frames(), 1);
        assert!(to_vec(&out.embeddings).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pooling_window_one_is_identity() {
        let f = features(10, 4, 0);
        let emb = ContextualEmbeddings {
            embeddings: f.features.clone(),
            frame_period: 0.025,
        };
        let out = attentive_pool(&emb, 1, |x| Ok(x.sum(1)?)).unwrap();
        assert_eq!(out.frames(), 10);
        assert_eq!(out.frame_period, 0.025);
        assert!(attentive_pool(&emb, 11, |x| Ok(x.sum(1)?)).is_err());
        assert!(attentive_pool(&emb, 0, |x| Ok(x.sum(1)?)).is_err());
    }

    #[test]
    fn uniform_scores_give_window_mean() {
        let f = features(160, 4, 5);
        let emb = ContextualEmbeddings {
            embeddings: f.features.clone(),
            frame_period: 0.025,
        };
        let out = attentive_pool(&emb, 4, |x| {
            Ok(Tensor::zeros(x.dim(0)?, DType::F64, &Device::Cpu)?)
        })
        .unwrap();
        assert_eq!(out.frames(), 40);
        assert!((out.frame_period - 0.1).abs() < 1e-12);
        let x = crate::nn::to_rows(&emb.embeddings).unwrap();
        let y = crate::nn::to_rows(&out.embeddings).unwrap();
        for (o, row) in y.iter().enumerate() {
            for c in 0..4 {
                let mean = (0..4).map(|j| x[o * 4 + j][c]).sum::<f64>() / 4.0;
                assert!((row[c] - mean).abs() < 1e-6);
            }
        }
    }
}
