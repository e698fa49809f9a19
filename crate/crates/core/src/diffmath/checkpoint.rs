//! Flat, versioned parameter container.
//!
//! Layout: a single JSON object `{ "format_version": 1, "params": { name:
//! { "shape": [...], "data": [...] } } }` with names sorted, values stored as
//! `f64`. The same container backs offline checkpoints and fine-tuning
//! restarts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::array::Array;
use super::graph::Var;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: BTreeMap<String, ParamEntry>,
}

impl Checkpoint {
    pub fn from_named<F: Scalar>(named: &[(String, Var<F>)]) -> Self {
        let mut params = BTreeMap::new();
        for (name, var) in named {
            let value = var.value();
            params.insert(
                name.clone(),
                ParamEntry {
                    shape: value.shape().to_vec(),
                    data: value.as_slice().iter().map(|v| v.into_f64()).collect(),
                },
            );
        }
        Checkpoint { format_version: CHECKPOINT_VERSION, params }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(path, json).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    /// Copy stored values into an existing parameter set. Every target name
    /// must be present with a matching shape.
    pub fn apply<F: Scalar>(&self, named: &[(String, Var<F>)]) -> Result<()> {
        for (name, var) in named {
            let entry = self
                .params
                .get(name)
                .ok_or_else(|| Error::config(format!("checkpoint missing parameter '{name}'")))?;
            if entry.shape != var.shape() {
                return Err(Error::config(format!(
                    "checkpoint parameter '{name}' has shape {:?}, expected {:?}",
                    entry.shape,
                    var.shape()
                )));
            }
            let data = entry.data.iter().map(|&v| F::from_f64_lit(v)).collect();
            var.set_value(Array::new(entry.shape.clone(), data));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffmath::mlp::{Activation, Mlp};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_restores_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net: Mlp<f64> = Mlp::new(&[3, 5, 1], Activation::Relu, true, &mut rng).unwrap();
        let named = net.named_params("critic");
        Checkpoint::from_named(&named).save(&path).unwrap();

        let mut rng2 = ChaCha8Rng::seed_from_u64(99);
        let other: Mlp<f64> = Mlp::new(&[3, 5, 1], Activation::Relu, true, &mut rng2).unwrap();
        let other_named = other.named_params("critic");
        Checkpoint::load(&path).unwrap().apply(&other_named).unwrap();

        for ((_, a), (_, b)) in named.iter().zip(&other_named) {
            assert_eq!(a.value().as_slice(), b.value().as_slice());
        }
    }

    #[test]
    fn version_and_shape_mismatches_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"format_version":99,"params":{}}"#).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Config(_))));

        let var: Var<f64> = Var::leaf(Array::from_vec(vec![1.0, 2.0]), true);
        let named = vec![("p".to_string(), var)];
        let mut ckpt = Checkpoint::from_named(&named);
        ckpt.params.get_mut("p").unwrap().shape = vec![3];
        ckpt.params.get_mut("p").unwrap().data = vec![0.0; 3];
        assert!(matches!(ckpt.apply(&named), Err(Error::Config(_))));
    }
}
