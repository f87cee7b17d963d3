use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, Entry};
use crate::error::{Error, Result};

use super::{Model, ModelConfig, Param, TransformerWeights};

const MAGIC: &[u8; 4] = b"GLCK";

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    config: ModelConfig,
}

impl Model {
    /// Serializes the configuration and base weights. Adapters are not
    /// included; merge them first or save them separately.
    pub fn checkpoint_bytes(&self) -> Result<Vec<u8>> {
        if self.adapters.is_some() {
            return Err(Error::contract(
                "checkpoint of a model with attached adapters; merge or save adapters separately",
            ));
        }
        let entries: Vec<Entry> = self
            .weights
            .named_params()
            .into_iter()
            .map(|(name, p)| Entry {
                name,
                frozen: p.frozen,
                tensor: p.value.clone(),
            })
            .collect();
        let header = Header {
            kind: "checkpoint".into(),
            config: self.config.clone(),
        };
        container::encode(MAGIC, &header, &entries)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, mut entries): (Header, _) = container::decode(MAGIC, bytes)?;
        let config = header.config;
        config.validate()?;
        // Start from a correctly shaped skeleton and overwrite every tensor.
        let mut weights = TransformerWeights::init(&config, 0)?;
        for (name, p) in weights.named_params_mut() {
            let e = container::take_entry(&mut entries, &name)?;
            *p = Param {
                value: e.tensor,
                frozen: e.frozen,
            };
        }
        if let Some(extra) = entries.first() {
            return Err(Error::data(format!(
                "unexpected tensor {} in checkpoint",
                extra.name
            )));
        }
        weights
            .check_shapes(&config)
            .map_err(|e| Error::data(e.to_string()))?;
        Ok(Self {
            config,
            weights,
            adapters: None,
        })
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.checkpoint_bytes()?)
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        Self::from_checkpoint_bytes(&container::read_file(path)?)
    }
}
