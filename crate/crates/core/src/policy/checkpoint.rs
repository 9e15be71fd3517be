//! JSON checkpoints: model config, device geometry, every parameter by
//! name, the training step, and the trainer's RNG state.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::DeviceConfig;
use crate::nn::ParamSet;
use crate::scalar::Scalar;

use super::{ActorCritic, ModelConfig, ModelError};

const FORMAT: &str = "se-mapper-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Tensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Doc {
    format: String,
    version: u32,
    model: ModelConfig,
    num_tiles: usize,
    num_slots: usize,
    step: u64,
    rng: ChaCha8Rng,
    actor: BTreeMap<String, Tensor>,
    critic: BTreeMap<String, Tensor>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub model: ActorCritic<T>,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

fn dump<T: Scalar>(params: &ParamSet<T>) -> BTreeMap<String, Tensor> {
    params
        .ids()
        .map(|id| {
            let v = params.get(id);
            (params.name(id).to_string(), Tensor { shape: [v.nrows(), v.ncols()], data: v.iter().map(|x| x.f64()).collect() })
        })
        .collect()
}

fn fill<T: Scalar>(params: &mut ParamSet<T>, mut saved: BTreeMap<String, Tensor>, which: &str) -> Result<(), ModelError> {
    for id in params.ids().collect::<Vec<_>>() {
        let name = params.name(id).to_string();
        let t = saved
            .remove(&name)
            .ok_or_else(|| ModelError::Checkpoint(format!("{which} parameter {name} missing")))?;
        let want = params.get(id).raw_dim();
        if t.shape != [want[0], want[1]] || t.data.len() != want[0] * want[1] {
            return Err(ModelError::Checkpoint(format!(
                "{which} parameter {name} has shape {:?}, expected {:?}",
                t.shape,
                [want[0], want[1]]
            )));
        }
        *params.get_mut(id) = Array2::from_shape_vec(want, t.data.into_iter().map(T::of).collect())
            .expect("shape checked above");
    }
    if let Some(extra) = saved.keys().next() {
        return Err(ModelError::Checkpoint(format!("unexpected {which} parameter {extra}")));
    }
    Ok(())
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_json(&self) -> String {
        let doc = Doc {
            format: FORMAT.into(),
            version: VERSION,
            model: self.model.config().clone(),
            num_tiles: self.model.num_tiles(),
            num_slots: self.model.num_slots(),
            step: self.step,
            rng: self.rng.clone(),
            actor: dump(&self.model.actor),
            critic: dump(&self.model.critic),
        };
        serde_json::to_string(&doc).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: Doc = serde_json::from_str(text).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if doc.format != FORMAT || doc.version != VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported checkpoint {} v{} (expected {FORMAT} v{VERSION})",
                doc.format, doc.version
            )));
        }
        let device = DeviceConfig::new(doc.num_tiles, doc.num_slots, 1);
        let mut model = ActorCritic::new(doc.model, &device, 0)?;
        fill(&mut model.actor, doc.actor, "actor")?;
        fill(&mut model.critic, doc.critic, "critic")?;
        Ok(Self { model, step: doc.step, rng: doc.rng })
    }

    /// Rejects a checkpoint whose action space or embedding width differs
    /// from the target.
    pub fn ensure_compatible(&self, device: &DeviceConfig, model: Option<&ModelConfig>) -> Result<(), ModelError> {
        if self.model.action_dim() != device.action_dim() {
            return Err(ModelError::Checkpoint(format!(
                "action_dim mismatch: checkpoint has {} ({} tiles x {} slots), device has {} ({} x {})",
                self.model.action_dim(),
                self.model.num_tiles(),
                self.model.num_slots(),
                device.action_dim(),
                device.num_tiles,
                device.num_slots
            )));
        }
        if let Some(m) = model {
            let ours = self.model.config();
            if m.embed_width != ours.embed_width {
                return Err(ModelError::Checkpoint(format!(
                    "embed_width mismatch: checkpoint has {}, config has {}",
                    ours.embed_width, m.embed_width
                )));
            }
            if m != ours {
                return Err(ModelError::Checkpoint("model config differs from checkpoint".into()));
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint<T: Scalar>(path: &Path, checkpoint: &Checkpoint<T>) -> Result<(), ModelError> {
    std::fs::write(path, checkpoint.to_json())?;
    Ok(())
}

/// Reads a checkpoint and checks it against the target device and,
/// when given, the expected model config.
pub fn load_checkpoint<T: Scalar>(
    path: &Path,
    device: &DeviceConfig,
    model: Option<&ModelConfig>,
) -> Result<Checkpoint<T>, ModelError> {
    let text = std::fs::read_to_string(path)?;
    let ck = Checkpoint::from_json(&text)?;
    ck.ensure_compatible(device, model)?;
    Ok(ck)
}
