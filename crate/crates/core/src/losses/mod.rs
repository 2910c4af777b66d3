//! Training objective: focal diarization loss, focal Tversky overlap loss and
//! activation BCE, combined per decoder step after Hungarian matching of language
//! queries to reference channels, then averaged over steps (deep supervision).

pub mod hungarian;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::decoder::{DiarizationPrediction, QueryState, VAD_QUERY};
use crate::error::{Error, Result};
use crate::nn::{scalar, to_rows, to_vec};
use crate::types::{ChannelRole, LabelMatrix};

pub use hungarian::{hungarian_match, Assignment};

/// Probability clamp applied before logs and fractional powers.
pub const PROB_EPS: f64 = 1e-7;

/// Weights applied to one channel role.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleWeights {
    pub alpha_d: f64,
    pub alpha_o: f64,
    pub beta_o: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_dia: f64,
    pub lambda_ovr: f64,
    pub lambda_act: f64,
    pub gamma_d: f64,
    pub gamma_o: f64,
    pub vad: RoleWeights,
    pub matrix: RoleWeights,
    pub embedded: RoleWeights,
    /// Focal diarization loss; when off, plain BCE (gamma_d = 0, alpha_d = 1).
    pub use_focal: bool,
    /// Focal Tversky overlap loss; when off, soft Dice (alpha_o = beta_o = 0.5, gamma_o = 1).
    pub use_focal_tversky: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        let neutral = RoleWeights {
            alpha_d: 1.0,
            alpha_o: 0.5,
            beta_o: 0.5,
        };
        Self {
            lambda_dia: 1.0,
            lambda_ovr: 1.0,
            lambda_act: 1.0,
            gamma_d: 0.25,
            gamma_o: 0.75,
            vad: neutral,
            matrix: neutral,
            embedded: RoleWeights {
                alpha_d: 3.0,
                alpha_o: 0.7,
                beta_o: 0.3,
            },
            use_focal: true,
            use_focal_tversky: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_dia,
            self.lambda_ovr,
            self.lambda_act,
            self.vad.alpha_d,
            self.vad.alpha_o,
            self.vad.beta_o,
            self.matrix.alpha_d,
            self.matrix.alpha_o,
            self.matrix.beta_o,
            self.embedded.alpha_d,
            self.embedded.alpha_o,
            self.embedded.beta_o,
        ];
        if all.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        if !(self.gamma_d > 0.0 && self.gamma_o > 0.0) {
            return Err(Error::invalid("focal exponents must be positive"));
        }
        Ok(())
    }

    /// Weights with the ablation switches folded in.
    pub fn effective(&self) -> Self {
        let mut w = self.clone();
        if !w.use_focal {
            w.gamma_d = 0.0;
            for r in [&mut w.vad, &mut w.matrix, &mut w.embedded] {
                r.alpha_d = 1.0;
            }
        }
        if !w.use_focal_tversky {
            w.gamma_o = 1.0;
            for r in [&mut w.vad, &mut w.matrix, &mut w.embedded] {
                r.alpha_o = 0.5;
                r.beta_o = 0.5;
            }
        }
        w
    }

    pub fn role(&self, role: &ChannelRole) -> RoleWeights {
        match role {
            ChannelRole::Vad => self.vad,
            ChannelRole::Language { embedded: true, .. } => self.embedded,
            ChannelRole::Language { .. } => self.matrix,
        }
    }
}

fn clamp_prob(p: &Tensor) -> Result<Tensor> {
    Ok(p.clamp(PROB_EPS, 1.0 - PROB_EPS)?)
}

fn check_same_frames(pred: &Tensor, target: &Tensor) -> Result<()> {
    let tp = pred.dims().last().copied().unwrap_or(0);
    let tt = target.dims().last().copied().unwrap_or(0);
    if tp != tt {
        return Err(Error::ShapeMismatch {
            expected: format!("{tp} frames"),
            actual: format!("{tt} frames"),
        });
    }
    Ok(())
}

fn row_vector(values: &[f64], like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::from_vec(values.to_vec(), (1, values.len()), like.device())?.to_dtype(like.dtype())?)
}

/// Pairwise focal diarization loss, frame-mean reduced.
/// `pred`: (K, T) probabilities, `target`: (C, T) binary, `alpha`: per target channel.
/// Returns (K, C).
pub fn focal_dia_pairwise(pred: &Tensor, target: &Tensor, alpha: &[f64], gamma: f64) -> Result<Tensor> {
    check_same_frames(pred, target)?;
    let t = pred.dim(1)? as f64;
    let p = clamp_prob(pred)?;
    let q = p.affine(-1.0, 1.0)?; // 1 - p
    let pos = q.powf(gamma)?.mul(&p.log()?)?; // (1-p)^g log p
    let neg = p.powf(gamma)?.mul(&q.log()?)?; // p^g log(1-p)
    let target_neg = target.affine(-1.0, 1.0)?;
    let sum = (pos.matmul(&target.t()?)? + neg.matmul(&target_neg.t()?)?)?;
    let scale = row_vector(&alpha.iter().map(|a| -a / t).collect::<Vec<_>>(), pred)?;
    Ok(sum.broadcast_mul(&scale)?)
}

/// Pairwise focal Tversky loss with soft counts. Returns (K, C).
pub fn focal_tversky_pairwise(
    pred: &Tensor,
    target: &Tensor,
    alpha_o: &[f64],
    beta_o: &[f64],
    gamma_o: f64,
) -> Result<Tensor> {
    check_same_frames(pred, target)?;
    let tp = pred.matmul(&target.t()?)?; // (K, C)
    let fp = pred.sum_keepdim(1)?.broadcast_sub(&tp)?;
    let fn_ = target.sum_keepdim(1)?.t()?.broadcast_sub(&tp)?;
    let denom = tp
        .add(&fp.broadcast_mul(&row_vector(alpha_o, pred)?)?)?
        .add(&fn_.broadcast_mul(&row_vector(beta_o, pred)?)?)?
        .affine(1.0, PROB_EPS)?;
    let index = tp.div(&denom)?;
    let base = index.affine(-1.0, 1.0)?.clamp(PROB_EPS, 1.0)?;
    Ok(base.powf(gamma_o)?)
}

/// Focal diarization loss of one channel against one target (both (T)).
pub fn focal_dia_loss(pred: &Tensor, target: &Tensor, alpha: f64, gamma: f64) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", pred.dims()),
            actual: format!("{:?}", target.dims()),
        });
    }
    Ok(focal_dia_pairwise(&pred.unsqueeze(0)?, &target.unsqueeze(0)?, &[alpha], gamma)?.squeeze(0)?.squeeze(0)?)
}

/// Focal Tversky loss of one channel against one target (both (T)).
pub fn focal_tversky_loss(pred: &Tensor, target: &Tensor, alpha_o: f64, beta_o: f64, gamma_o: f64) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", pred.dims()),
            actual: format!("{:?}", target.dims()),
        });
    }
    Ok(
        focal_tversky_pairwise(&pred.unsqueeze(0)?, &target.unsqueeze(0)?, &[alpha_o], &[beta_o], gamma_o)?
            .squeeze(0)?
            .squeeze(0)?,
    )
}

/// Mean BCE between predicted activities and binary targets, both (K).
pub fn activation_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", pred.dims()),
            actual: format!("{:?}", target.dims()),
        });
    }
    let p = clamp_prob(pred)?;
    let pos = target.mul(&p.log()?)?;
    let neg = target.affine(-1.0, 1.0)?.mul(&p.affine(-1.0, 1.0)?.log()?)?;
    Ok((pos + neg)?.mean_all()?.neg()?)
}

/// Reference channels of a label matrix as tensors.
struct TargetTensors {
    vad: Tensor,
    /// (C, T), None when the reference has no language channel.
    languages: Option<Tensor>,
    roles: Vec<ChannelRole>,
}

fn target_tensors(target: &LabelMatrix, like: &Tensor) -> Result<TargetTensors> {
    let t = target.frames();
    let c = target.channels() - 1;
    let flat: Vec<f64> = target.values().iter().copied().collect();
    let all = Tensor::from_vec(flat, (c + 1, t), like.device())?.to_dtype(like.dtype())?;
    Ok(TargetTensors {
        vad: all.get(0)?,
        languages: if c > 0 { Some(all.narrow(0, 1, c)?) } else { None },
        roles: target.roles()[1..].to_vec(),
    })
}

/// Matching cost between language queries (rows, query indices `1..K`) and reference
/// language channels (columns).
#[derive(Debug, Clone)]
pub struct CostMatrix {
    pub queries: Vec<usize>,
    pub values: Vec<Vec<f64>>,
}

struct PairTerms {
    dia: Tensor,
    ovr: Tensor,
}

fn pair_terms(state: &QueryState, target: &TargetTensors, w: &LossWeights) -> Result<Option<PairTerms>> {
    let Some(langs) = &target.languages else {
        return Ok(None);
    };
    let roles: Vec<RoleWeights> = target.roles.iter().map(|r| w.role(r)).collect();
    let alpha_d: Vec<f64> = roles.iter().map(|r| r.alpha_d).collect();
    let alpha_o: Vec<f64> = roles.iter().map(|r| r.alpha_o).collect();
    let beta_o: Vec<f64> = roles.iter().map(|r| r.beta_o).collect();
    Ok(Some(PairTerms {
        dia: focal_dia_pairwise(&state.masks, langs, &alpha_d, w.gamma_d)?,
        ovr: focal_tversky_pairwise(&state.masks, langs, &alpha_o, &beta_o, w.gamma_o)?,
    }))
}

fn bce_to_one(c: f64) -> f64 {
    -c.clamp(PROB_EPS, 1.0 - PROB_EPS).ln()
}

fn cost_from_terms(state: &QueryState, terms: Option<&PairTerms>, w: &LossWeights) -> Result<CostMatrix> {
    let k = state.activities.dim(0)?;
    let queries: Vec<usize> = (0..k).filter(|&q| q != VAD_QUERY).collect();
    let acts = to_vec(&state.activities)?;
    let values = match terms {
        None => queries.iter().map(|_| Vec::new()).collect(),
        Some(t) => {
            let dia = to_rows(&t.dia)?;
            let ovr = to_rows(&t.ovr)?;
            queries
                .iter()
                .map(|&q| {
                    (0..dia[q].len())
                        .map(|c| {
                            w.lambda_dia * dia[q][c] + w.lambda_ovr * ovr[q][c] + w.lambda_act * bce_to_one(acts[q])
                        })
                        .collect()
                })
                .collect()
        }
    };
    Ok(CostMatrix { queries, values })
}

/// Cost of assigning each language query to each reference language channel.
pub fn pairwise_cost(state: &QueryState, target: &LabelMatrix, weights: &LossWeights) -> Result<CostMatrix> {
    let w = weights.effective();
    let tt = target_tensors(target, &state.masks)?;
    let terms = pair_terms(state, &tt, &w)?;
    cost_from_terms(state, terms.as_ref(), &w)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub dia: f64,
    pub ovr: f64,
    pub act: f64,
    pub total: f64,
    /// (query index, reference channel index starting at 1)
    pub matched: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossDiagnostics {
    pub total: f64,
    pub steps: Vec<StepDiagnostics>,
}

impl LossDiagnostics {
    pub fn mean_term(&self, f: impl Fn(&StepDiagnostics) -> f64) -> f64 {
        self.steps.iter().map(f).sum::<f64>() / self.steps.len().max(1) as f64
    }
}

/// Loss of one decoder step against the reference and the assignment used.
pub fn step_loss(state: &QueryState, target: &LabelMatrix, weights: &LossWeights) -> Result<(Tensor, StepDiagnostics)> {
    let w = weights.effective();
    let t = target.frames();
    let (k, tm) = state.masks.dims2()?;
    if tm != t {
        return Err(Error::ShapeMismatch {
            expected: format!("{t} reference frames"),
            actual: format!("{tm} predicted frames"),
        });
    }
    let tt = target_tensors(target, &state.masks)?;
    let terms = pair_terms(state, &tt, &w)?;
    let cost = cost_from_terms(state, terms.as_ref(), &w)?;
    let assignment = hungarian_match(&cost.values)?;

    let vad_w = w.vad;
    let vad_mask = state.masks.get(VAD_QUERY)?;
    let mut dia = focal_dia_loss(&vad_mask, &tt.vad, vad_w.alpha_d, w.gamma_d)?;
    let mut ovr = focal_tversky_loss(&vad_mask, &tt.vad, vad_w.alpha_o, vad_w.beta_o, w.gamma_o)?;

    let mut act_target = vec![0.0; k];
    act_target[VAD_QUERY] = 1.0;
    let mut matched = Vec::with_capacity(assignment.pairs.len());
    if let Some(terms) = &terms {
        if !assignment.pairs.is_empty() {
            let n = assignment.pairs.len() as f64;
            let mut dia_sum: Option<Tensor> = None;
            let mut ovr_sum: Option<Tensor> = None;
            for &(row, c) in &assignment.pairs {
                let q = cost.queries[row];
                act_target[q] = 1.0;
                matched.push((q, c + 1));
                let d = terms.dia.get(q)?.get(c)?;
                let o = terms.ovr.get(q)?.get(c)?;
                dia_sum = Some(match dia_sum {
                    None => d,
                    Some(s) => (s + d)?,
                });
                ovr_sum = Some(match ovr_sum {
                    None => o,
                    Some(s) => (s + o)?,
                });
            }
            if let (Some(ds), Some(os)) = (dia_sum, ovr_sum) {
                dia = (dia + (ds / n)?)?;
                ovr = (ovr + (os / n)?)?;
            }
        }
    }
    let act_t = Tensor::from_vec(act_target, k, state.activities.device())?.to_dtype(state.activities.dtype())?;
    let act = activation_loss(&state.activities, &act_t)?;
    let total = ((&dia * w.lambda_dia)? + (&ovr * w.lambda_ovr)? + (&act * w.lambda_act)?)?;
    let diag = StepDiagnostics {
        step: state.step,
        dia: scalar(&dia)?,
        ovr: scalar(&ovr)?,
        act: scalar(&act)?,
        total: scalar(&total)?,
        matched,
    };
    Ok((total, diag))
}

/// Deep-supervised objective: mean of [`step_loss`] over every decoder state.
pub fn total_loss(
    prediction: &DiarizationPrediction,
    target: &LabelMatrix,
    weights: &LossWeights,
) -> Result<(Tensor, LossDiagnostics)> {
    if prediction.per_step_states.is_empty() {
        return Err(Error::invalid("prediction carries no decoder states"));
    }
    let mut sum: Option<Tensor> = None;
    let mut steps = Vec::with_capacity(prediction.per_step_states.len());
    for state in &prediction.per_step_states {
        let (l, d) = step_loss(state, target, weights)?;
        steps.push(d);
        sum = Some(match sum {
            None => l,
            Some(s) => (s + l)?,
        });
    }
    let n = steps.len() as f64;
    let total = (sum.expect("non-empty") / n)?;
    let value = scalar(&total)?;
    Ok((total, LossDiagnostics { total: value, steps }))
}

/// Scalar tensor helper used by tests and the harness.
pub fn scalar_tensor(v: f64, like: &Tensor) -> Result<Tensor> {
    Ok(Tensor::new(v, like.device())?.to_dtype(like.dtype())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn t1(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec(), v.len(), &Device::Cpu).unwrap()
    }

    #[test]
    fn focal_spot_value() {
        let l = scalar(&focal_dia_loss(&t1(&[0.8]), &t1(&[1.0]), 1.0, 0.25).unwrap()).unwrap();
        let expected = -(0.2f64).powf(0.25) * (0.8f64).ln();
        assert!((l - expected).abs() < 1e-12);
        assert!((l - 0.1492).abs() < 1e-4);
    }

    #[test]
    fn focal_perfect_prediction_near_zero() {
        let target = [1.0, 0.0, 1.0, 1.0];
        let l = scalar(&focal_dia_loss(&t1(&target), &t1(&target), 3.0, 0.25).unwrap()).unwrap();
        let bound = 3.0 * (1.0 - PROB_EPS).powf(0.25) * -(1.0 - PROB_EPS).ln();
        assert!(l <= bound + 1e-15 && l >= 0.0, "{l}");
    }

    #[test]
    fn tversky_spot_value() {
        // TP = 1, FP = 1, FN = 1
        let pred = t1(&[1.0, 1.0, 0.0]);
        let target = t1(&[1.0, 0.0, 1.0]);
        let l = scalar(&focal_tversky_loss(&pred, &target, 0.5, 0.5, 0.75).unwrap()).unwrap();
        assert!((l - 0.5f64.powf(0.75)).abs() < 1e-4, "{l}");
        let zero = scalar(&focal_tversky_loss(&target, &target, 0.7, 0.3, 0.75).unwrap()).unwrap();
        assert!(zero < 1e-4);
    }

    #[test]
    fn activation_values() {
        let l = scalar(&activation_loss(&t1(&[0.5, 0.5, 0.5]), &t1(&[1.0, 0.0, 1.0])).unwrap()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let l = scalar(&activation_loss(&t1(&[0.9, 0.1]), &t1(&[1.0, 0.0])).unwrap()).unwrap();
        assert!((l - 0.1054).abs() < 1e-4);
        assert!(activation_loss(&t1(&[0.9]), &t1(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(focal_dia_loss(&t1(&[0.5, 0.5]), &t1(&[1.0]), 1.0, 0.25).is_err());
        assert!(focal_tversky_loss(&t1(&[0.5, 0.5]), &t1(&[1.0]), 0.5, 0.5, 0.75).is_err());
    }

    #[test]
    fn effective_weights_apply_ablation_switches() {
        let w = LossWeights {
            use_focal: false,
            use_focal_tversky: false,
            ..LossWeights::default()
        }
        .effective();
        assert_eq!(w.gamma_d, 0.0);
        assert_eq!(w.embedded.alpha_d, 1.0);
        assert_eq!(w.gamma_o, 1.0);
        assert_eq!((w.embedded.alpha_o, w.embedded.beta_o), (0.5, 0.5));
        let d = LossWeights::default();
        assert_eq!(d.effective(), d);
        assert!(d.validate().is_ok());
        assert!(LossWeights { gamma_d: 0.0, ..d.clone() }.validate().is_err());
        assert!(LossWeights { lambda_act: -1.0, ..d }.validate().is_err());
    }
}
