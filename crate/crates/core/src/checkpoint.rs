//! Model checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! "LSHRCKPT" | version u32 | precision tag | network config (JSON) | train config (JSON or "")
//! step u64 | pattern mode | bank seed u64 | tensor count u32
//! per tensor: name | rank u32 | extents u32... | values
//! crc32 of everything before it
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8. Optimizer moments are
//! stored as tensors named `adam.m.<param>` and `adam.v.<param>`.

use std::collections::BTreeMap;
use std::path::Path;

use lshr_tensor::{Real, Tensor};

use crate::error::{LshrError, Result};
use crate::io::{put_str, put_u32, put_u64, read_file, seal, unseal, write_atomic, Reader};
use crate::network::{ModelParams, NetworkConfig, ParamId};
use crate::sensing::{PatternBank, PatternMode};
use crate::training::{AdamState, TrainConfig};

/// First and second Adam moments of one parameter, as read back.
type Moments<T> = (Option<Tensor<T>>, Option<Tensor<T>>);

const MAGIC: &[u8; 8] = b"LSHRCKPT";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T: Real = f32> {
    pub network: NetworkConfig,
    pub train: Option<TrainConfig>,
    pub step: u64,
    pub params: ModelParams<T>,
    pub adam: Option<AdamState<T>>,
}

fn put_tensor<T: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    put_str(out, name);
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

fn json<S: serde::Serialize>(v: &S) -> String {
    serde_json::to_string(v).expect("config serializes")
}

impl<T: Real> Checkpoint<T> {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        put_u32(&mut out, VERSION);
        put_str(&mut out, T::TAG);
        put_str(&mut out, &json(&self.network));
        put_str(&mut out, &self.train.as_ref().map(json).unwrap_or_default());
        put_u64(&mut out, self.step);
        put_str(&mut out, &json(&self.params.bank.mode()));
        put_u64(&mut out, self.params.bank.seed());
        let mut tensors: Vec<(String, &Tensor<T>)> = self
            .params
            .ids()
            .into_iter()
            .map(|id| (id.name().to_string(), self.params.get(id).expect("listed")))
            .collect();
        if let Some(adam) = &self.adam {
            for (id, (m, v)) in &adam.moments {
                tensors.push((format!("adam.m.{}", id.name()), m));
                tensors.push((format!("adam.v.{}", id.name()), v));
            }
        }
        put_u32(&mut out, tensors.len() as u32);
        for (name, t) in tensors {
            put_tensor(&mut out, &name, t);
        }
        seal(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let body = unseal(bytes, "checkpoint")?;
        let mut r = Reader::new(body, "checkpoint");
        if r.take(8)? != MAGIC {
            return Err(LshrError::Format("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(LshrError::Format(format!("checkpoint version {version} is not supported")));
        }
        let tag = r.string()?;
        if tag != T::TAG {
            return Err(LshrError::Format(format!(
                "checkpoint holds {tag} weights, {} requested",
                T::TAG
            )));
        }
        let bad_json = |e: serde_json::Error| LshrError::Format(format!("checkpoint config: {e}"));
        let network: NetworkConfig = serde_json::from_str(&r.string()?).map_err(bad_json)?;
        let train_json = r.string()?;
        let train: Option<TrainConfig> = if train_json.is_empty() {
            None
        } else {
            Some(serde_json::from_str(&train_json).map_err(bad_json)?)
        };
        let step = r.u64()?;
        let mode: PatternMode = serde_json::from_str(&r.string()?).map_err(bad_json)?;
        let seed = r.u64()?;
        let count = r.u32()? as usize;
        let mut params = BTreeMap::new();
        let mut moments: BTreeMap<ParamId, Moments<T>> = BTreeMap::new();
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * T::BYTES)?;
            let t = Tensor::new(shape, raw.chunks(T::BYTES).map(T::read_le).collect())?;
            let unknown = || LshrError::Format(format!("unknown tensor `{name}` in checkpoint"));
            if let Some(rest) = name.strip_prefix("adam.m.") {
                moments.entry(ParamId::from_name(rest).ok_or_else(unknown)?).or_default().0 = Some(t);
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                moments.entry(ParamId::from_name(rest).ok_or_else(unknown)?).or_default().1 = Some(t);
            } else {
                params.insert(ParamId::from_name(&name).ok_or_else(unknown)?, t);
            }
        }
        if !r.is_done() {
            return Err(LshrError::Corrupt("trailing bytes in checkpoint".into()));
        }
        let shadow = params
            .remove(&ParamId::Shadow)
            .ok_or_else(|| LshrError::Format("checkpoint lacks bank.shadow".into()))?;
        let bank = PatternBank::from_shadow(shadow, mode, seed)?;
        let params = ModelParams::from_parts(&network, bank, params)?;
        let adam = if moments.is_empty() {
            None
        } else {
            let cfg = train.clone().unwrap_or_default();
            let mut state = AdamState::new(&cfg);
            state.step = step;
            for (id, pair) in moments {
                match pair {
                    (Some(m), Some(v)) => {
                        state.moments.insert(id, (m, v));
                    }
                    _ => {
                        return Err(LshrError::Format(format!(
                            "checkpoint has only one optimizer moment for {}",
                            id.name()
                        )))
                    }
                }
            }
            Some(state)
        };
        Ok(Checkpoint {
            network,
            train,
            step,
            params,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&read_file(path)?)
    }
}

/// Precision tag (`"f32"` or `"f64"`) of a checkpoint file, read without
/// decoding the tensors.
pub fn peek_precision(bytes: &[u8]) -> Result<String> {
    let mut r = Reader::new(bytes, "checkpoint");
    if r.take(8)? != MAGIC {
        return Err(LshrError::Format("not a checkpoint file".into()));
    }
    r.u32()?;
    r.string()
}
