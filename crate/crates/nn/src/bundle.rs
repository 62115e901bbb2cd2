//! JSON parameter bundles with bit-exact tensor payloads.

use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tensor::Tensor;
use crate::Parameterized;

/// A tensor stored as its shape plus base64 of the little-endian `f64` bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedTensor {
    pub shape: Vec<usize>,
    pub data: String,
}

impl EncodedTensor {
    pub fn encode(t: &Tensor) -> Self {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        Self {
            shape: t.shape().to_vec(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Tensor> {
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| NnError::Bundle(format!("invalid base64 tensor payload: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(NnError::Bundle("tensor payload is not a multiple of 8 bytes".into()));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Tensor::new(self.shape.clone(), data).map_err(|e| NnError::Bundle(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub model_type: String,
    pub layer_specs: Vec<serde_json::Value>,
    pub tensors: BTreeMap<String, EncodedTensor>,
    pub rng_seed: u64,
    pub train_config: serde_json::Value,
}

impl ModelBundle {
    pub fn new(model_type: impl Into<String>, rng_seed: u64) -> Self {
        Self {
            model_type: model_type.into(),
            layer_specs: Vec::new(),
            tensors: BTreeMap::new(),
            rng_seed,
            train_config: serde_json::Value::Null,
        }
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.tensors.insert(name.into(), EncodedTensor::encode(t));
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| NnError::Bundle(format!("missing tensor `{name}`")))?
            .decode()
    }

    /// Stores every parameter of `module` under `prefix.<param name>`.
    pub fn export(&mut self, prefix: &str, module: &impl Parameterized) {
        for (name, t) in module.parameters() {
            self.insert_tensor(format!("{prefix}.{name}"), t);
        }
    }

    /// Overwrites every parameter of `module` from `prefix.<param name>`, checking shapes.
    pub fn import(&self, prefix: &str, module: &mut impl Parameterized) -> Result<()> {
        let names: Vec<String> = module.parameters().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.iter().zip(module.parameters_mut()) {
            let key = format!("{prefix}.{name}");
            let t = self.tensor(&key)?;
            if t.shape() != slot.shape() {
                return Err(NnError::Bundle(format!(
                    "tensor `{key}` has shape {:?}, architecture expects {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            slot.data_mut().copy_from_slice(t.data());
            slot.clear_grad();
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| NnError::Bundle(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| NnError::Bundle(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| NnError::Bundle(format!("writing {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| NnError::Bundle(format!("reading {}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Dense;

    #[test]
    fn special_values_survive_encoding() {
        let t = Tensor::vector(vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.25]);
        let back = EncodedTensor::encode(&t).decode().unwrap();
        let bits = |x: &Tensor| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&t), bits(&back));
    }

    #[test]
    fn import_rejects_shape_mismatch() {
        let mut rng = crate::seeded_rng(0);
        let small = Dense::new(2, 3, crate::Activation::Relu, &mut rng);
        let mut big = Dense::new(4, 3, crate::Activation::Relu, &mut rng);
        let mut b = ModelBundle::new("test", 0);
        b.export("head", &small);
        assert!(matches!(b.import("head", &mut big), Err(NnError::Bundle(_))));
        assert!(matches!(b.import("missing", &mut big), Err(NnError::Bundle(_))));
    }
}
