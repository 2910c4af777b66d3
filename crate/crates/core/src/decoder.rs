//! Masked-attention query decoder.
//!
//! `K` learned queries are refined over `n` steps. Each step runs masked cross-attention
//! against the contextual embeddings (query `k` only sees frames its previous mask
//! marks as active), query self-attention and a feedforward layer, then re-predicts
//! per-frame masks and a per-query activity. Query 0 is reserved for voice activity.

use std::cmp::Ordering;

use candle_core::{DType, Tensor};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::encoder::ContextualEmbeddings;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, to_rows, to_vec, Init, LayerNorm, Linear, Mode, MultiHeadAttention, ParamStore, Scope};
use crate::types::{ChannelRole, LabelMatrix};

/// Slot reserved for voice activity.
pub const VAD_QUERY: usize = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderConfig {
    pub queries: usize,
    pub steps: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_expansion: usize,
    pub activity_threshold: f64,
    /// Frames with previous mask probability at or above this are visible to a query.
    pub mask_threshold: f64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            queries: 5,
            steps: 6,
            d_model: 128,
            heads: 4,
            ff_expansion: 4,
            activity_threshold: 0.5,
            mask_threshold: 0.5,
        }
    }
}

/// Decoder iterate after step `step`.
#[derive(Debug, Clone)]
pub struct QueryState {
    /// (K, D)
    pub queries: Tensor,
    /// (K, T) post-sigmoid
    pub masks: Tensor,
    /// (K) post-sigmoid
    pub activities: Tensor,
    pub step: usize,
}

impl QueryState {
    pub fn activities_vec(&self) -> Result<Vec<f64>> {
        to_vec(&self.activities)
    }

    pub fn masks_rows(&self) -> Result<Vec<Vec<f64>>> {
        to_rows(&self.masks)
    }
}

#[derive(Debug, Clone)]
pub struct DiarizationPrediction {
    pub label_matrix: LabelMatrix,
    /// Query index behind each language channel of `label_matrix`, in channel order.
    pub channel_queries: Vec<usize>,
    /// States 0..=n, for deep supervision.
    pub per_step_states: Vec<QueryState>,
}

/// Three-layer MLP mapping queries into mask-embedding space.
#[derive(Debug, Clone)]
pub struct MaskHead {
    layers: [Linear; 3],
}

impl MaskHead {
    fn new(s: &mut Scope<'_>, d: usize) -> Result<Self> {
        let mut s = s.sub("mask_head");
        Ok(Self {
            layers: [
                Linear::new(&mut s, "0", d, d)?,
                Linear::new(&mut s, "1", d, d)?,
                Linear::new(&mut s, "2", d, d)?,
            ],
        })
    }

    pub fn embed(&self, queries: &Tensor) -> Result<Tensor> {
        let h = self.layers[0].forward(queries)?.relu()?;
        let h = self.layers[1].forward(&h)?.relu()?;
        self.layers[2].forward(&h)
    }

    /// (K, D) x (T, D) -> (K, T) mask logits.
    pub fn forward(&self, queries: &Tensor, emb: &Tensor) -> Result<Tensor> {
        let (_, dq) = queries.dims2()?;
        let (_, de) = emb.dims2()?;
        if dq != de {
            return Err(Error::ShapeMismatch {
                expected: format!("embedding width {dq}"),
                actual: de.to_string(),
            });
        }
        Ok(self.embed(queries)?.matmul(&emb.t()?)?)
    }
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    cross_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    self_norm: LayerNorm,
    ff_up: Linear,
    ff_down: Linear,
    ff_norm: LayerNorm,
}

/// Additive attention bias for masked cross-attention: 0 on visible frames, -inf on
/// hidden ones. With `fallback`, a row with no visible frame is left unrestricted.
pub fn attention_bias(mask_probs: &[Vec<f64>], threshold: f64, fallback: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(mask_probs.iter().map(Vec::len).sum());
    for row in mask_probs {
        let any = row.iter().any(|&p| p >= threshold);
        for &p in row {
            let visible = p >= threshold || (fallback && !any);
            out.push(if visible { 0.0 } else { f64::NEG_INFINITY });
        }
    }
    out
}

impl DecoderBlock {
    fn new(s: &mut Scope<'_>, cfg: &DecoderConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            cross_attn: MultiHeadAttention::new(s, "cross_attn", d, cfg.heads)?,
            cross_norm: LayerNorm::new(s, "cross_norm", d)?,
            self_attn: MultiHeadAttention::new(s, "self_attn", d, cfg.heads)?,
            self_norm: LayerNorm::new(s, "self_norm", d)?,
            ff_up: Linear::new(s, "ff_up", d, d * cfg.ff_expansion)?,
            ff_down: Linear::new(s, "ff_down", d * cfg.ff_expansion, d)?,
            ff_norm: LayerNorm::new(s, "ff_norm", d)?,
        })
    }

    fn forward(
        &self,
        queries: &Tensor,
        emb: &Tensor,
        bias: &Tensor,
        mode: &Mode,
    ) -> Result<Tensor> {
        let cross = self.cross_attn.forward(queries, emb, Some(bias))?;
        let q = self.cross_norm.forward(&(queries + mode.dropout(&cross)?)?)?;
        let sa = self.self_attn.forward(&q, &q, None)?;
        let q = self.self_norm.forward(&(&q + mode.dropout(&sa)?)?)?;
        let ff = self.ff_down.forward(&self.ff_up.forward(&q)?.relu()?)?;
        self.ff_norm.forward(&(&q + mode.dropout(&ff)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Decoder {
    config: DecoderConfig,
    initial_queries: Tensor,
    blocks: Vec<DecoderBlock>,
    head_norm: LayerNorm,
    mask_head: MaskHead,
    classifier: Linear,
}

impl Decoder {
    pub fn new(store: &mut ParamStore, config: &DecoderConfig) -> Result<Self> {
        if config.queries < 1 {
            return Err(Error::invalid("decoder needs at least the VAD query"));
        }
        if config.steps < 1 {
            return Err(Error::invalid("decoder needs at least one refinement step"));
        }
        let mut s = store.scope("decoder");
        let initial_queries = s.var("queries", &[config.queries, config.d_model], Init::Uniform(1.0))?;
        let mut blocks = Vec::with_capacity(config.steps);
        for i in 0..config.steps {
            blocks.push(DecoderBlock::new(&mut s.sub(&format!("block.{i}")), config)?);
        }
        Ok(Self {
            config: config.clone(),
            initial_queries,
            blocks,
            head_norm: LayerNorm::new(&mut s, "head_norm", config.d_model)?,
            mask_head: MaskHead::new(&mut s, config.d_model)?,
            classifier: Linear::new(&mut s, "classifier", config.d_model, 1)?,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn mask_head(&self) -> &MaskHead {
        &self.mask_head
    }

    pub fn classifier(&self) -> &Linear {
        &self.classifier
    }

    pub fn initial_queries(&self) -> &Tensor {
        &self.initial_queries
    }

    /// Per-query activity logits (K).
    pub fn classify(&self, queries: &Tensor) -> Result<Tensor> {
        Ok(self.classifier.forward(queries)?.squeeze(1)?)
    }

    fn predict(&self, queries: &Tensor, emb: &Tensor, step: usize) -> Result<QueryState> {
        let normed = self.head_norm.forward(queries)?;
        let masks = sigmoid(&self.mask_head.forward(&normed, emb)?)?;
        let activities = sigmoid(&self.classify(&normed)?)?;
        Ok(QueryState {
            queries: queries.clone(),
            masks,
            activities,
            step,
        })
    }

    pub fn init_state(&self, emb: &ContextualEmbeddings) -> Result<QueryState> {
        if emb.frames() == 0 {
            return Err(Error::invalid("cannot decode an empty embedding sequence"));
        }
        if emb.d_model() != self.config.d_model {
            return Err(Error::ShapeMismatch {
                expected: format!("d_model {}", self.config.d_model),
                actual: format!("d_model {}", emb.d_model()),
            });
        }
        self.predict(&self.initial_queries, &emb.embeddings, 0)
    }

    /// Masked cross-attention of the current queries over the embeddings, exposed for
    /// inspection. Returns the block's cross-attention output (K, D) and weights (H, K, T).
    pub fn masked_cross_attention(
        &self,
        block: usize,
        queries: &Tensor,
        emb: &Tensor,
        mask_probs: &[Vec<f64>],
        fallback: bool,
    ) -> Result<(Tensor, Tensor)> {
        let bias = self.bias_tensor(mask_probs, fallback, emb.dtype())?;
        self.blocks[block]
            .cross_attn
            .forward_with_weights(queries, emb, Some(&bias))
    }

    /// Unrestricted cross-attention for comparison.
    pub fn unmasked_cross_attention(&self, block: usize, queries: &Tensor, emb: &Tensor) -> Result<(Tensor, Tensor)> {
        self.blocks[block].cross_attn.forward_with_weights(queries, emb, None)
    }

    pub fn cross_attention(&self, block: usize) -> &MultiHeadAttention {
        &self.blocks[block].cross_attn
    }

    fn bias_tensor(&self, mask_probs: &[Vec<f64>], fallback: bool, dtype: DType) -> Result<Tensor> {
        let k = mask_probs.len();
        let t = mask_probs.first().map(Vec::len).unwrap_or(0);
        let bias = attention_bias(mask_probs, self.config.mask_threshold, fallback);
        Ok(Tensor::from_vec(bias, (1, k, t), self.initial_queries.device())?.to_dtype(dtype)?)
    }

    pub fn refine(&self, state: &QueryState, emb: &ContextualEmbeddings, mode: &Mode) -> Result<QueryState> {
        if state.step >= self.config.steps {
            return Err(Error::invalid(format!(
                "decoder already ran all {} refinement steps",
                self.config.steps
            )));
        }
        // the attention mask is a constant of the previous prediction
        let probs = state.masks_rows()?;
        let bias = self.bias_tensor(&probs, true, emb.embeddings.dtype())?;
        let q = self.blocks[state.step].forward(&state.queries, &emb.embeddings, &bias, mode)?;
        self.predict(&q, &emb.embeddings, state.step + 1)
    }

    /// Run `init_state` and all refinement steps, then assemble the sorted prediction.
    pub fn decode(&self, emb: &ContextualEmbeddings, mode: &Mode) -> Result<DiarizationPrediction> {
        let mut states = Vec::with_capacity(self.config.steps + 1);
        states.push(self.init_state(emb)?);
        for _ in 0..self.config.steps {
            let next = self.refine(states.last().expect("non-empty"), emb, mode)?;
            states.push(next);
        }
        let last = states.last().expect("non-empty");
        let (label_matrix, channel_queries) =
            assemble(last, emb.frame_period, self.config.activity_threshold)?;
        Ok(DiarizationPrediction {
            label_matrix,
            channel_queries,
            per_step_states: states,
        })
    }
}

/// Language channel name for the `rank`-th sorted active query (1-based).
pub fn track_label(rank: usize) -> String {
    format!("L{rank}")
}

/// Non-reserved queries with activity >= threshold, by descending activity then index.
pub fn sorted_active_queries(activities: &[f64], threshold: f64) -> Vec<usize> {
    let mut active: Vec<usize> = (0..activities.len())
        .filter(|&k| k != VAD_QUERY && activities[k] >= threshold)
        .collect();
    active.sort_by(|&a, &b| {
        activities[b]
            .partial_cmp(&activities[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    active
}

fn assemble(state: &QueryState, frame_period: f64, threshold: f64) -> Result<(LabelMatrix, Vec<usize>)> {
    let masks = state.masks_rows()?;
    let acts = state.activities_vec()?;
    let order = sorted_active_queries(&acts, threshold);
    let t = masks[0].len();
    let mut values = Array2::<f64>::zeros((order.len() + 1, t));
    let mut roles = vec![ChannelRole::Vad];
    for (j, &v) in masks[VAD_QUERY].iter().enumerate() {
        values[[0, j]] = v;
    }
    for (rank, &k) in order.iter().enumerate() {
        for (j, &v) in masks[k].iter().enumerate() {
            values[[rank + 1, j]] = v;
        }
        roles.push(ChannelRole::language(track_label(rank + 1)));
    }
    Ok((LabelMatrix::new(values, frame_period, roles)?, order))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_fallback_rules() {
        let probs = vec![vec![0.9, 0.1, 0.6], vec![0.1, 0.2, 0.3]];
        let b = attention_bias(&probs, 0.5, true);
        assert_eq!(b[0], 0.0);
        assert_eq!(b[1], f64::NEG_INFINITY);
        assert_eq!(b[2], 0.0);
        assert!(b[3..].iter().all(|&v| v == 0.0));
        let strict = attention_bias(&probs, 0.5, false);
        assert!(strict[3..].iter().all(|&v| v == f64::NEG_INFINITY));
    }

    #[test]
    fn sorting_breaks_ties_by_index() {
        let acts = [0.99, 0.7, 0.9, 0.7, 0.2];
        assert_eq!(sorted_active_queries(&acts, 0.5), vec![2, 1, 3]);
        assert!(sorted_active_queries(&acts, 0.95).is_empty());
    }
}
