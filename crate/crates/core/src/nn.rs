//! Small layer library on top of candle tensors.
//!
//! Parameters live in a [`ParamStore`] so initialization is seeded (the candle CPU
//! device has no seedable RNG) and so checkpointing, finite-difference probing and
//! optimizer updates can address every variable by name.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// U(-bound, bound)
    Uniform(f64),
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    FanIn(usize),
}

/// Named trainable variables.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    rng: ChaCha8Rng,
    dtype: DType,
    device: Device,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        Self {
            vars: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            dtype,
            device: Device::Cpu,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name}: {shape:?}"),
                    actual: format!("{:?}", v.dims()),
                });
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(b) => (0..n).map(|_| self.rng.gen_range(-b..=b)).collect(),
            Init::FanIn(fan_in) => {
                let b = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| self.rng.gen_range(-b..=b)).collect()
            }
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn num_parameters(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    pub fn scope(&mut self, prefix: &str) -> Scope<'_> {
        Scope {
            store: self,
            prefix: prefix.to_string(),
        }
    }

    pub fn tensors(&self) -> HashMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        candle_core::safetensors::save(&self.tensors(), path.as_ref())?;
        Ok(())
    }

    /// Overwrite every variable from a safetensors file. All names must be present.
    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let loaded = candle_core::safetensors::load(path.as_ref(), &self.device)?;
        self.assign_from(&loaded, None)
    }

    /// Overwrite variables from `tensors`; with `prefix` only variables under it are touched.
    pub fn assign_from(&mut self, tensors: &HashMap<String, Tensor>, prefix: Option<&str>) -> Result<()> {
        for (name, var) in &self.vars {
            if let Some(p) = prefix {
                if !name.starts_with(p) {
                    continue;
                }
            }
            let t = tensors
                .get(name)
                .ok_or_else(|| Error::Config(format!("parameter `{name}` missing from checkpoint")))?;
            if t.dims() != var.dims() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name}: {:?}", var.dims()),
                    actual: format!("{:?}", t.dims()),
                });
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(())
    }

    /// Import externally exported weights: a JSON manifest `[{"name", "shape"}]` and a
    /// flat little-endian f32 blob holding the tensors back to back in manifest order.
    pub fn import_raw(&mut self, manifest: impl AsRef<Path>, blob: impl AsRef<Path>) -> Result<usize> {
        #[derive(Deserialize, Serialize)]
        struct Entry {
            name: String,
            shape: Vec<usize>,
        }
        let manifest = manifest.as_ref();
        let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let entries: Vec<Entry> = serde_json::from_str(&text)?;
        let blob = blob.as_ref();
        let bytes = std::fs::read(blob).map_err(|e| Error::io(blob, e))?;
        let needed: usize = entries.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum();
        if bytes.len() != needed {
            return Err(Error::ShapeMismatch {
                expected: format!("{needed} bytes in weight blob"),
                actual: bytes.len().to_string(),
            });
        }
        let mut offset = 0;
        let mut tensors = HashMap::new();
        for e in &entries {
            let n: usize = e.shape.iter().product();
            let data: Vec<f32> = bytes[offset..offset + 4 * n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += 4 * n;
            tensors.insert(e.name.clone(), Tensor::from_vec(data, e.shape.as_slice(), &self.device)?);
        }
        for (name, t) in &tensors {
            let var = self
                .vars
                .get(name)
                .ok_or_else(|| Error::Config(format!("imported weight `{name}` has no matching parameter")))?;
            if t.dims() != var.dims() {
                return Err(Error::ShapeMismatch {
                    expected: format!("{name}: {:?}", var.dims()),
                    actual: format!("{:?}", t.dims()),
                });
            }
            var.set(&t.to_dtype(self.dtype)?)?;
        }
        Ok(tensors.len())
    }
}

/// Prefixed view into a [`ParamStore`].
pub struct Scope<'a> {
    store: &'a mut ParamStore,
    prefix: String,
}

impl Scope<'_> {
    pub fn sub(&mut self, name: &str) -> Scope<'_> {
        Scope {
            prefix: format!("{}.{}", self.prefix, name),
            store: self.store,
        }
    }

    pub fn var(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let full = format!("{}.{}", self.prefix, name);
        self.store.var(&full, shape, init)
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype
    }
}

/// Forward-pass context: evaluation is deterministic, training draws dropout masks
/// from a seeded stream.
pub enum Mode {
    Eval,
    Train { dropout: f64, rng: RefCell<ChaCha8Rng> },
}

impl Mode {
    pub fn train(dropout: f64, seed: u64) -> Self {
        Mode::Train {
            dropout,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }

    pub fn dropout(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Mode::Train { dropout, rng } if *dropout > 0.0 => {
                let keep = 1.0 - dropout;
                let mut rng = rng.borrow_mut();
                let mask: Vec<f64> = (0..x.elem_count())
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
                Ok(x.mul(&mask)?)
            }
            _ => Ok(x.clone()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(s: &mut Scope<'_>, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let mut s = s.sub(name);
        let weight = s.var("weight", &[d_out, d_in], Init::FanIn(d_in))?;
        let bias = Some(s.var("bias", &[d_out], Init::FanIn(d_in))?);
        Ok(Self { weight, bias })
    }

    pub fn with_init(
        s: &mut Scope<'_>,
        name: &str,
        d_in: usize,
        d_out: usize,
        weight_init: Init,
        bias_init: Init,
    ) -> Result<Self> {
        let mut s = s.sub(name);
        let weight = s.var("weight", &[d_out, d_in], weight_init)?;
        let bias = Some(s.var("bias", &[d_out], bias_init)?);
        Ok(Self { weight, bias })
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    /// `x`: (..., d_in) -> (..., d_out)
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.t()?;
        let y = match x.rank() {
            2 => x.matmul(&w)?,
            _ => x.broadcast_matmul(&w)?,
        };
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// Layer normalization over the last dimension, built from differentiable primitives.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(s: &mut Scope<'_>, name: &str, dim: usize) -> Result<Self> {
        let mut s = s.sub(name);
        Ok(Self {
            gamma: s.var("weight", &[dim], Init::Ones)?,
            beta: s.var("bias", &[dim], Init::Zeros)?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let centered = x.broadcast_sub(&x.mean_keepdim(D::Minus1)?)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

/// Softmax over the last dimension.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

/// Multi-head scaled dot-product attention with separate query and key/value inputs.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(s: &mut Scope<'_>, name: &str, d_model: usize, heads: usize) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(Error::invalid(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        let mut s = s.sub(name);
        Ok(Self {
            q: Linear::new(&mut s, "q", d_model, d_model)?,
            k: Linear::new(&mut s, "k", d_model, d_model)?,
            v: Linear::new(&mut s, "v", d_model, d_model)?,
            out: Linear::new(&mut s, "out", d_model, d_model)?,
            heads,
            head_dim: d_model / heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn value_projection(&self) -> &Linear {
        &self.v
    }

    pub fn output_projection(&self) -> &Linear {
        &self.out
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let n = x.dim(0)?;
        Ok(x.reshape((n, self.heads, self.head_dim))?.transpose(0, 1)?.contiguous()?)
    }

    /// `query`: (Q, D), `kv`: (T, D), `bias`: optional additive score bias broadcastable
    /// to (H, Q, T). Returns the projected output (Q, D) and the attention weights (H, Q, T).
    pub fn forward_with_weights(
        &self,
        query: &Tensor,
        kv: &Tensor,
        bias: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        let nq = query.dim(0)?;
        let q = self.split(&self.q.forward(query)?)?;
        let k = self.split(&self.k.forward(kv)?)?;
        let v = self.split(&self.v.forward(kv)?)?;
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut scores = (q.matmul(&k.t()?)? * scale)?;
        if let Some(b) = bias {
            scores = scores.broadcast_add(b)?;
        }
        let weights = softmax(&scores)?;
        let ctx = weights.matmul(&v)?; // (H, Q, dh)
        let ctx = ctx.transpose(0, 1)?.contiguous()?.reshape((nq, self.heads * self.head_dim))?;
        Ok((self.out.forward(&ctx)?, weights))
    }

    pub fn forward(&self, query: &Tensor, kv: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.forward_with_weights(query, kv, bias)?.0)
    }
}

/// Scalar value of a rank-0 or single-element tensor as f64.
pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?[0])
}

/// Rank-2 tensor as rows of f64.
pub fn to_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    Ok(t.to_dtype(DType::F64)?.to_vec2::<f64>()?)
}

pub fn to_vec(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_init_is_reproducible() {
        let mut a = ParamStore::new(7, DType::F32);
        let mut b = ParamStore::new(7, DType::F32);
        let ta = a.var("x", &[3, 4], Init::FanIn(4)).unwrap();
        let tb = b.var("x", &[3, 4], Init::FanIn(4)).unwrap();
        assert_eq!(to_vec(&ta).unwrap(), to_vec(&tb).unwrap());
        // same name returns the same variable
        let again = a.var("x", &[3, 4], Init::Zeros).unwrap();
        assert_eq!(to_vec(&ta).unwrap(), to_vec(&again).unwrap());
        assert!(a.var("x", &[4, 3], Init::Zeros).is_err());
    }

    #[test]
    fn layer_norm_handles_constant_rows() {
        let mut store = ParamStore::new(0, DType::F64);
        let ln = LayerNorm::new(&mut store.scope("m"), "ln", 4).unwrap();
        let x = Tensor::zeros((3, 4), DType::F64, &Device::Cpu).unwrap();
        let y = to_vec(&ln.forward(&x).unwrap()).unwrap();
        assert!(y.iter().all(|v| v.is_finite() && *v == 0.0));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new(1, DType::F32);
        store.var("a.b", &[2, 2], Init::Uniform(1.0)).unwrap();
        let before = to_vec(store.get("a.b").unwrap().as_tensor()).unwrap();
        store.save(dir.path().join("p.safetensors")).unwrap();
        store
            .get("a.b")
            .unwrap()
            .set(&Tensor::zeros((2, 2), DType::F32, &Device::Cpu).unwrap())
            .unwrap();
        store.load(dir.path().join("p.safetensors")).unwrap();
        assert_eq!(to_vec(store.get("a.b").unwrap().as_tensor()).unwrap(), before);
    }

    #[test]
    fn import_raw_sets_named_weights() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new(1, DType::F32);
        store.var("conv.0.weight", &[2, 1, 3], Init::Zeros).unwrap();
        let manifest = dir.path().join("w.json");
        let blob = dir.path().join("w.bin");
        std::fs::write(&manifest, r#"[{"name":"conv.0.weight","shape":[2,1,3]}]"#).unwrap();
        let vals: Vec<f32> = (0..6).map(|i| i as f32).collect();
        let bytes: Vec<u8> = vals.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&blob, &bytes).unwrap();
        assert_eq!(store.import_raw(&manifest, &blob).unwrap(), 1);
        let got = to_vec(store.get("conv.0.weight").unwrap().as_tensor()).unwrap();
        assert_eq!(got, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        std::fs::write(&blob, &bytes[..8]).unwrap();
        assert!(store.import_raw(&manifest, &blob).is_err());
    }
}
