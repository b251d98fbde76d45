use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_variant, Model, ModelHyper, ModelVariant};
use crate::error::{Error, Result};
use crate::features::{FeatureSchema, SchemaConfig};
use crate::tensor::Tensor;

const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    tensor: Tensor,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: u32,
    schema_hash: String,
    schema: SchemaConfig,
    variant: ModelVariant,
    hyper: ModelHyper,
    tensors: Vec<NamedTensor>,
}

impl Model {
    pub fn to_checkpoint_string(&self) -> Result<String> {
        let file = CheckpointFile {
            format: FORMAT_VERSION,
            schema_hash: self.schema.hash(),
            schema: self.schema.config().clone(),
            variant: self.variant,
            hyper: self.hyper.clone(),
            tensors: self
                .params
                .names()
                .iter()
                .zip(self.params.tensors())
                .map(|(name, t)| NamedTensor {
                    name: name.clone(),
                    tensor: t.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Restores a model. When `expected` is given, its hash must match the stored schema.
    pub fn from_checkpoint_str(text: &str, expected: Option<&FeatureSchema>) -> Result<Model> {
        let file: CheckpointFile =
            serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if file.format != FORMAT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint format {}",
                file.format
            )));
        }
        let schema = FeatureSchema::build(file.schema)?;
        if schema.hash() != file.schema_hash {
            return Err(Error::Schema(
                "checkpoint schema does not match its recorded hash".into(),
            ));
        }
        if let Some(s) = expected {
            if s.hash() != file.schema_hash {
                return Err(Error::Schema(
                    "checkpoint was trained with a different schema".into(),
                ));
            }
        }
        let mut model = build_variant(file.variant, &schema, &file.hyper, 0)?;
        if file.tensors.len() != model.params.len() {
            return Err(Error::Serde(format!(
                "checkpoint has {} tensors, variant `{}` needs {}",
                file.tensors.len(),
                file.variant,
                model.params.len()
            )));
        }
        for nt in file.tensors {
            let id = model
                .params
                .find(&nt.name)
                .ok_or_else(|| Error::Serde(format!("unexpected tensor `{}`", nt.name)))?;
            model.params.set(id, nt.tensor)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(&path, self.to_checkpoint_string()?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(path: impl AsRef<Path>, expected: Option<&FeatureSchema>) -> Result<Model> {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_checkpoint_str(&text, expected)
    }
}
