//! Versioned binary checkpoint: magic `DCNT`, format version, a JSON header,
//! then named little-endian `f32` tensors for parameters, batch-norm buffers
//! and (optionally) Adam moments.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchitectureConfig, Model, ModelError, Variant};
use crate::nn::{Adam, AdamConfig, AdamState, Module};
use crate::task::TaskSet;
use crate::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"DCNT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub variant: Variant,
    pub config: ArchitectureConfig,
    pub config_hash: String,
    pub epoch: usize,
    pub iteration: u64,
    pub tasks: TaskSet,
    pub seed: u64,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerSnapshot {
    pub config: AdamConfig,
    /// `(parameter name, step count, m, v)`.
    pub states: Vec<(String, u64, Tensor<f32>, Tensor<f32>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<(String, Tensor<f32>)>,
    pub buffers: Vec<(String, Tensor<f32>)>,
    pub optimizer: Option<OptimizerSnapshot>,
}

impl Checkpoint {
    pub fn capture<T: Scalar>(
        model: &Model<T>,
        optimizer: Option<&Adam<T>>,
        epoch: usize,
        iteration: u64,
        tasks: TaskSet,
        seed: u64,
    ) -> Self {
        let mut params = Vec::new();
        model.visit_params(&mut |p| params.push((p.name.clone(), p.value.cast::<f32>())));
        let mut buffers = Vec::new();
        model.visit_buffers(&mut |name, t| buffers.push((name.to_string(), t.cast::<f32>())));
        let optimizer = optimizer.map(|adam| OptimizerSnapshot {
            config: adam.config,
            states: adam
                .states
                .iter()
                .map(|(n, s)| (n.clone(), s.t, s.m.cast::<f32>(), s.v.cast::<f32>()))
                .collect(),
        });
        Self {
            header: CheckpointHeader {
                variant: model.variant(),
                config: model.config().clone(),
                config_hash: model.config().hash(),
                epoch,
                iteration,
                tasks,
                seed,
                metrics: BTreeMap::new(),
            },
            params,
            buffers,
            optimizer,
        }
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<f32>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Rebuilds the model; every parameter and buffer must be present with
    /// matching shape.
    pub fn restore_model<T: Scalar>(&self) -> Result<Model<T>, ModelError> {
        let h = &self.header;
        if h.config.hash() != h.config_hash {
            return Err(ModelError::Checkpoint("config hash mismatch".into()));
        }
        let mut model = Model::<T>::new(h.config.clone(), 0)?;
        let params: BTreeMap<&str, &Tensor<f32>> =
            self.params.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let buffers: BTreeMap<&str, &Tensor<f32>> =
            self.buffers.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut err = None;
        let mut seen = 0;
        model.visit_params_mut(&mut |p| match params.get(p.name.as_str()) {
            Some(t) if t.shape() == p.value.shape() => {
                p.value = t.cast();
                seen += 1;
            }
            Some(_) => err = err.take().or(Some(format!("shape mismatch for `{}`", p.name))),
            None => err = err.take().or(Some(format!("missing parameter `{}`", p.name))),
        });
        model.visit_buffers_mut(&mut |name, b| match buffers.get(name) {
            Some(t) if t.shape() == b.shape() => *b = t.cast(),
            _ => err = err.take().or(Some(format!("missing or malformed buffer `{name}`"))),
        });
        if let Some(e) = err {
            return Err(ModelError::Checkpoint(e));
        }
        if seen != self.params.len() {
            return Err(ModelError::Checkpoint("checkpoint has unknown parameters".into()));
        }
        Ok(model)
    }

    pub fn restore_optimizer<T: Scalar>(&self) -> Option<Adam<T>> {
        self.optimizer.as_ref().map(|o| Adam {
            config: o.config,
            states: o
                .states
                .iter()
                .map(|(n, t, m, v)| {
                    (
                        n.clone(),
                        AdamState {
                            m: m.cast(),
                            v: v.cast(),
                            t: *t,
                        },
                    )
                })
                .collect(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        put_u32(&mut b, CHECKPOINT_VERSION);
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        put_u32(&mut b, header.len() as u32);
        b.extend_from_slice(&header);
        put_tensors(&mut b, &self.params);
        put_tensors(&mut b, &self.buffers);
        match &self.optimizer {
            None => b.push(0),
            Some(o) => {
                b.push(1);
                let cfg = serde_json::to_vec(&o.config).expect("adam config serializes");
                put_u32(&mut b, cfg.len() as u32);
                b.extend_from_slice(&cfg);
                put_u32(&mut b, o.states.len() as u32);
                for (name, t, m, v) in &o.states {
                    put_str(&mut b, name);
                    b.extend_from_slice(&t.to_le_bytes());
                    put_tensor(&mut b, m);
                    put_tensor(&mut b, v);
                }
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(ModelError::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
        let params = r.tensors()?;
        let buffers = r.tensors()?;
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let clen = r.u32()? as usize;
                let config = serde_json::from_slice(r.take(clen)?)
                    .map_err(|e| ModelError::Checkpoint(format!("optimizer config: {e}")))?;
                let n = r.u32()? as usize;
                let mut states = Vec::with_capacity(n);
                for _ in 0..n {
                    let name = r.string()?;
                    let t = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
                    states.push((name, t, r.tensor()?, r.tensor()?));
                }
                Some(OptimizerSnapshot { config, states })
            }
            other => return Err(ModelError::Checkpoint(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            header,
            params,
            buffers,
            optimizer,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        // write-then-rename so an interrupted save never clobbers the previous file
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    put_u32(b, s.len() as u32);
    b.extend_from_slice(s.as_bytes());
}

fn put_tensor(b: &mut Vec<u8>, t: &Tensor<f32>) {
    put_u32(b, t.ndim() as u32);
    for &d in t.shape() {
        put_u32(b, d as u32);
    }
    for v in t.data() {
        b.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_tensors(b: &mut Vec<u8>, ts: &[(String, Tensor<f32>)]) {
    put_u32(b, ts.len() as u32);
    for (name, t) in ts {
        put_str(b, name);
        put_tensor(b, t);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, ModelError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor<f32>, ModelError> {
        let nd = self.u32()? as usize;
        let shape = (0..nd).map(|_| self.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let data = self
            .take(4 * len)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Tensor::from_vec(&shape, data))
    }

    fn tensors(&mut self) -> Result<Vec<(String, Tensor<f32>)>, ModelError> {
        let n = self.u32()? as usize;
        (0..n).map(|_| Ok((self.string()?, self.tensor()?))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::task::Task;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_save_is_byte_identical() {
        let mut model = Model::<f32>::new(ArchitectureConfig::gradcheck(Variant::V3), 5).unwrap();
        let x = Tensor::from_fn(&[2, 1, 16, 16], |i| ((i * 7919) % 13) as f32 * 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        model.forward(&x, TaskSet::all(), Mode::Train, &mut rng).unwrap();
        let mut adam = Adam::new(AdamConfig::default());
        model.visit_params_mut(&mut |p| p.grad.fill(0.01));
        adam.step(&mut model).unwrap();

        let ck = Checkpoint::capture(&model, Some(&adam), 3, 42, TaskSet::only(Task::Sed), 7);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
        ck.save(&a).unwrap();
        let loaded = Checkpoint::load(&a).unwrap();
        assert_eq!(loaded, ck);
        let restored: Model<f32> = loaded.restore_model().unwrap();
        let again = Checkpoint::capture(
            &restored,
            loaded.restore_optimizer::<f32>().as_ref(),
            3,
            42,
            TaskSet::only(Task::Sed),
            7,
        );
        again.save(&b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn rejects_corrupt_files() {
        let model = Model::<f32>::new(ArchitectureConfig::gradcheck(Variant::V1), 0).unwrap();
        let bytes = Checkpoint::capture(&model, None, 0, 0, TaskSet::all(), 0).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"XXXX").is_err());
        let mut ck = Checkpoint::from_bytes(&bytes).unwrap();
        ck.params.pop();
        assert!(ck.restore_model::<f32>().is_err());
    }
}
