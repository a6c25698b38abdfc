//! `MPCK` checkpoints: parameters, optional Adam moments and the counters
//! needed to resume training.

use std::fs;
use std::path::Path;

use crate::data::io::{put_str, put_tensor, put_u32, AnyTensor, Reader};
use crate::error::{Error, Result};
use crate::nn::MedPrompt;
use crate::optim::{AdamConfig, AdamState};
use crate::param::ParamStore;
use crate::tensor::{Element, Tensor};

pub const MPCK_MAGIC: &[u8; 4] = b"MPCK";
pub const MPCK_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamSnapshot {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<AnyTensor>,
    pub v: Vec<AnyTensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// [`crate::nn::ModelConfig::echo`] of the model that wrote it.
    pub model_echo: String,
    /// Full training configuration as `key=value` lines; may be empty.
    pub train_config: String,
    pub params: Vec<(String, AnyTensor)>,
    pub adam: Option<AdamSnapshot>,
    /// Optimisation steps taken so far.
    pub step: u64,
    /// Master seed; every random draw of step `s` derives from it and `s`.
    pub rng_seed: u64,
}

fn any<E: Element>(t: &Tensor<E>) -> AnyTensor {
    match E::DTYPE {
        crate::tensor::DType::F32 => AnyTensor::F32(t.cast()),
        crate::tensor::DType::F64 => AnyTensor::F64(t.cast()),
    }
}

impl Checkpoint {
    pub fn capture<E: Element>(
        model: &MedPrompt<E>,
        adam: Option<&AdamState<E>>,
        step: u64,
        rng_seed: u64,
        train_config: String,
    ) -> Self {
        let params = model.params.iter().map(|p| (p.name().to_string(), any(&p.value))).collect();
        let adam = adam.map(|a| {
            let shapes: Vec<Vec<usize>> = model.params.iter().map(|p| p.shape().to_vec()).collect();
            let moment = |i: usize, data: &[E]| any(&Tensor::new(shapes[i].clone(), data.to_vec()).expect("moment shape"));
            AdamSnapshot {
                config: a.config,
                step: a.step_count(),
                m: (0..shapes.len()).map(|i| moment(i, a.first_moment(i))).collect(),
                v: (0..shapes.len()).map(|i| moment(i, a.second_moment(i))).collect(),
            }
        });
        Self { model_echo: model.config.echo(), train_config, params, adam, step, rng_seed }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MPCK_MAGIC);
        put_u32(&mut out, MPCK_VERSION);
        put_str(&mut out, &self.model_echo);
        put_str(&mut out, &self.train_config);
        put_u32(&mut out, self.params.len() as u32);
        for (name, t) in &self.params {
            put_str(&mut out, name);
            put_any(&mut out, t)?;
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                out.push(1);
                for v in [a.config.lr, a.config.beta1, a.config.beta2, a.config.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&a.step.to_le_bytes());
                for (m, v) in a.m.iter().zip(&a.v) {
                    put_any(&mut out, m)?;
                    put_any(&mut out, v)?;
                }
            }
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.rng_seed.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MPCK_MAGIC)?;
        let version = r.u32()?;
        if version != MPCK_VERSION {
            return Err(Error::VersionMismatch { expected: MPCK_VERSION, found: version });
        }
        let model_echo = r.string()?;
        let train_config = r.string()?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            params.push((name, r.tensor()?));
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamConfig { lr: r.f64()?, beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
                let step = r.u64()?;
                let (mut m, mut v) = (Vec::new(), Vec::new());
                for _ in 0..count {
                    m.push(r.tensor()?);
                    v.push(r.tensor()?);
                }
                Some(AdamSnapshot { config, step, m, v })
            }
            flag => return Err(Error::Malformed { kind: "checkpoint", msg: format!("optimizer flag {flag}") }),
        };
        let step = r.u64()?;
        let rng_seed = r.u64()?;
        if !r.is_empty() {
            return Err(Error::Malformed { kind: "checkpoint", msg: "trailing bytes".into() });
        }
        Ok(Self { model_echo, train_config, params, adam, step, rng_seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Copies stored parameter values into `model`, casting to its dtype.
    pub fn restore_params<E: Element>(&self, model: &mut MedPrompt<E>) -> Result<()> {
        let expected = model.config.echo();
        if self.model_echo != expected {
            return Err(Error::ConfigMismatch { checkpoint: self.model_echo.clone(), model: expected });
        }
        let values = self.match_store(&model.params, |i| &self.params[i].1)?;
        for (p, v) in model.params.iter_mut().zip(values) {
            p.value = v;
        }
        Ok(())
    }

    /// Rebuilds the optimizer state for `store`, which must already hold
    /// the restored parameters.
    pub fn restore_adam<E: Element>(&self, store: &ParamStore<E>) -> Result<Option<AdamState<E>>> {
        let Some(a) = &self.adam else { return Ok(None) };
        let m = self.match_store(store, |i| &a.m[i])?;
        let v = self.match_store(store, |i| &a.v[i])?;
        Ok(Some(AdamState::from_parts(
            a.config,
            a.step,
            m.into_iter().map(Tensor::into_vec).collect(),
            v.into_iter().map(Tensor::into_vec).collect(),
        )))
    }

    /// For every parameter of `store`, the stored tensor with the same name
    /// (looked up through `pick`), validated against its shape.
    fn match_store<'a, E: Element>(
        &'a self,
        store: &ParamStore<E>,
        pick: impl Fn(usize) -> &'a AnyTensor,
    ) -> Result<Vec<Tensor<E>>> {
        store
            .iter()
            .map(|p| {
                let idx = self
                    .params
                    .iter()
                    .position(|(n, _)| n == p.name())
                    .ok_or_else(|| Error::MissingParameter(p.name().to_string()))?;
                let t = pick(idx);
                let found: usize = t.shape().iter().product();
                if found != p.numel() {
                    return Err(Error::PayloadSize { name: p.name().to_string(), expected: p.numel(), found });
                }
                if t.shape() != p.shape() {
                    return Err(Error::shape(
                        "checkpoint",
                        format!("`{}` stored as {:?}, model expects {:?}", p.name(), t.shape(), p.shape()),
                    ));
                }
                Ok(t.cast())
            })
            .collect()
    }
}

fn put_any(out: &mut Vec<u8>, t: &AnyTensor) -> Result<()> {
    match t {
        AnyTensor::F32(t) => put_tensor(out, t),
        AnyTensor::F64(t) => put_tensor(out, t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, ModelConfig};

    fn model() -> MedPrompt<f64> {
        build_model(&ModelConfig::minimal(), 4).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let m = model();
        let mut adam = AdamState::new(&m.params, AdamConfig::default());
        let mut store = m.params.clone();
        for p in store.iter_mut() {
            p.grad = p.value.map(|v| v * 0.5 + 0.1);
        }
        adam.step(&mut store).unwrap();
        let m = MedPrompt { params: store, ..m };
        let ck = Checkpoint::capture(&m, Some(&adam), 7, 11, "epochs=1\n".into());
        let back = Checkpoint::decode(&ck.encode().unwrap()).unwrap();
        assert_eq!(back, ck);

        let mut fresh = build_model::<f64>(&ModelConfig::minimal(), 99).unwrap();
        back.restore_params(&mut fresh).unwrap();
        assert_eq!(fresh.params.fingerprint(), m.params.fingerprint());
        let restored = back.restore_adam(&fresh.params).unwrap().unwrap();
        assert_eq!(restored.step_count(), 1);
        for i in 0..fresh.params.len() {
            assert_eq!(restored.first_moment(i), adam.first_moment(i));
            assert_eq!(restored.second_moment(i), adam.second_moment(i));
        }
    }

    #[test]
    fn distinct_diagnostics() {
        let m = model();
        let ck = Checkpoint::capture(&m, None, 0, 0, String::new());

        let mut bytes = ck.encode().unwrap();
        bytes[4] = 2;
        assert!(matches!(Checkpoint::decode(&bytes), Err(Error::VersionMismatch { found: 2, .. })));

        let mut other = build_model::<f64>(&ModelConfig { num_prompts: 3, ..ModelConfig::minimal() }, 0).unwrap();
        let err = ck.restore_params(&mut other).unwrap_err();
        assert!(err.to_string().contains("config mismatch"), "{err}");

        let mut missing = ck.clone();
        missing.params.remove(0);
        let err = missing.restore_params(&mut model()).unwrap_err();
        assert!(matches!(err, Error::MissingParameter(ref n) if n == "stem.weight"), "{err}");

        let mut short = ck.clone();
        short.params[0].1 = AnyTensor::F64(Tensor::zeros(&[3]));
        assert!(matches!(short.restore_params(&mut model()), Err(Error::PayloadSize { .. })));

        let bytes = ck.encode().unwrap();
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 4]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn f32_checkpoint_loads_into_f64_model() {
        let m = build_model::<f32>(&ModelConfig::minimal(), 4).unwrap();
        let ck = Checkpoint::capture(&m, None, 0, 0, String::new());
        let mut wide = build_model::<f64>(&ModelConfig::minimal(), 5).unwrap();
        ck.restore_params(&mut wide).unwrap();
        let a = m.params.iter().next().unwrap().value.data()[0];
        let b = wide.params.iter().next().unwrap().value.data()[0];
        assert_eq!(f64::from(a), b);
    }
}
