//! Low-rank adaptation of frozen projection matrices.
//!
//! For a frozen base matrix `W₀ ∈ ℝ^{d×k}` an adapter holds
//! `W_A ∈ ℝ^{d×r}` (zero at creation) and `W_B ∈ ℝ^{r×k}` (Gaussian at
//! creation), and the projection becomes
//!
//! ```text
//! h = W₀·x + (α/r) · W_A·(W_B·dropout(x))
//! ```
//!
//! Because `W_A` starts at zero the adapted model reproduces the base model
//! exactly until the first optimizer step. After training the update can be
//! folded into the base as `W₀ + (α/r)·W_A·W_B`.

use std::collections::BTreeMap;
use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{self, Entry};
use crate::error::{Error, Result};
use crate::model::{dropout_mask, MatrixRole, Model, ModelConfig, Param, CLASSIFIER_HEAD};
use crate::numerics::{Tape, Tensor};

const MAGIC: &[u8; 4] = b"GLAD";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub targets: Vec<MatrixRole>,
    pub init_std: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 16.0,
            dropout: 0.1,
            targets: vec![MatrixRole::Query, MatrixRole::Value],
            init_std: 0.02,
        }
    }
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::config("LoRA rank must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::config(format!(
                "LoRA alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!(
                "LoRA dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("LoRA init_std must be positive"));
        }
        if self.targets.is_empty() {
            return Err(Error::config("LoRA needs at least one target matrix"));
        }
        let mut seen = self.targets.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.targets.len() {
            return Err(Error::config("LoRA targets list a matrix role twice"));
        }
        Ok(())
    }

    /// Rejects ranks above `min(d, k)/2` for any targeted matrix.
    pub fn check_rank(&self, model: &ModelConfig) -> Result<()> {
        for &role in &self.targets {
            let (d, k) = role.dims(model);
            let limit = d.min(k);
            if 2 * self.rank > limit {
                return Err(Error::config(format!(
                    "LoRA rank {} is not low-rank for {role} ({d}×{k}); need rank ≤ {}",
                    self.rank,
                    limit / 2
                )));
            }
            if 2 * self.rank == limit {
                warn!(
                    "LoRA rank {} sits exactly at half of min({d}, {k}) for {role}",
                    self.rank
                );
            }
        }
        Ok(())
    }
}

/// Factor pair attached to one base matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `[d × r]`, zero at creation.
    pub a: Tensor,
    /// `[r × k]`, Gaussian at creation.
    pub b: Tensor,
    /// `α / r`.
    pub scale: f64,
    pub dropout: f64,
}

impl LoraAdapter {
    pub fn new(d: usize, k: usize, config: &LoraConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            a: Tensor::zeros(&[d, config.rank]),
            b: Tensor::randn(&[config.rank, k], config.init_std, rng),
            scale: config.scale(),
            dropout: config.dropout,
        }
    }

    pub fn rank(&self) -> usize {
        self.b.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    fn check_base(&self, base: &Tensor) -> Result<()> {
        let (d, k) = base.dims2()?;
        if self.a.shape() != [d, self.rank()] || self.b.shape() != [self.rank(), k] {
            return Err(Error::dim(format!(
                "adapter factors {:?}·{:?} do not fit base matrix {:?}",
                self.a.shape(),
                self.b.shape(),
                base.shape()
            )));
        }
        Ok(())
    }

    /// `x·W₀ᵀ + scale·(x̃·W_Bᵀ)·W_Aᵀ` for row-vector inputs `x[n×k]`, where
    /// `x̃` is `x` with inverted dropout when `training` and `x` otherwise.
    pub fn forward(
        &self,
        base: &Tensor,
        x: &Tensor,
        training: bool,
        rng_seed: u64,
    ) -> Result<Tensor> {
        self.check_base(base)?;
        let mut tape = Tape::new();
        let w0 = tape.constant(base.clone());
        let a = tape.constant(self.a.clone());
        let b = tape.constant(self.b.clone());
        let xv = tape.constant(x.clone());
        let h = tape.linear(xv, w0)?;
        let input = if training && self.dropout > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let m = tape.constant(dropout_mask(x.shape(), self.dropout, &mut rng));
            tape.mul(xv, m)?
        } else {
            xv
        };
        let low = tape.linear(input, b)?;
        let up = tape.linear(low, a)?;
        let up = tape.scale(up, self.scale)?;
        let out = tape.add(h, up)?;
        Ok(tape.value(out).clone())
    }

    /// `scale · W_A · W_B`.
    pub fn delta(&self) -> Result<Tensor> {
        let ab = crate::numerics::matmul(&self.a, &self.b)?;
        let data = ab.data().iter().map(|v| v * self.scale).collect();
        Tensor::new(ab.shape().to_vec(), data)
    }

    /// `W₀ + scale·W_A·W_B` as a new matrix; `base` is not modified.
    pub fn merge(&self, base: &Tensor) -> Result<Tensor> {
        self.check_base(base)?;
        let delta = self.delta()?;
        let data = base
            .data()
            .iter()
            .zip(delta.data())
            .map(|(w, d)| w + d)
            .collect();
        Tensor::new(base.shape().to_vec(), data)
    }
}

/// All adapters attached to one model, keyed by `(layer, role)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet {
    pub config: LoraConfig,
    pub adapters: BTreeMap<(usize, MatrixRole), LoraAdapter>,
}

impl AdapterSet {
    pub fn factor_name(layer: usize, role: MatrixRole, factor: &str) -> String {
        format!("layers.{layer}.{role}.{factor}")
    }

    pub fn param_count(&self) -> usize {
        self.adapters.values().map(LoraAdapter::param_count).sum()
    }
}

/// Attaches fresh adapters to every targeted matrix of every layer,
/// freezes all base weights and leaves the classifier head trainable.
pub fn inject(model: &mut Model, config: &LoraConfig, seed: u64) -> Result<()> {
    if model.adapters.is_some() {
        return Err(Error::config("model already carries LoRA adapters"));
    }
    config.validate()?;
    config.check_rank(&model.config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adapters = BTreeMap::new();
    for layer in 0..model.config.n_layers {
        for &role in &config.targets {
            let (d, k) = role.dims(&model.config);
            adapters.insert((layer, role), LoraAdapter::new(d, k, config, &mut rng));
        }
    }
    model.weights.set_frozen(true);
    model.weights.classifier_head.frozen = false;
    model.adapters = Some(AdapterSet {
        config: config.clone(),
        adapters,
    });
    Ok(())
}

impl Model {
    /// Folds every adapter into its base matrix and drops the adapters.
    /// Merged matrices stay frozen.
    pub fn merge_adapters(&mut self) -> Result<()> {
        let set = self
            .adapters
            .take()
            .ok_or_else(|| Error::contract("no adapters to merge"))?;
        for (&(layer, role), ad) in &set.adapters {
            let p = self.weights.layers[layer].matrix_mut(role);
            p.value = ad.merge(&p.value)?;
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct BaseShape {
    vocab_size: usize,
    d_model: usize,
    n_layers: usize,
    d_ff: usize,
    n_classes: usize,
}

impl BaseShape {
    fn of(c: &ModelConfig) -> Self {
        Self {
            vocab_size: c.vocab_size,
            d_model: c.d_model,
            n_layers: c.n_layers,
            d_ff: c.d_ff,
            n_classes: c.n_classes,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct AdapterHeader {
    kind: String,
    lora: LoraConfig,
    base: BaseShape,
}

/// Serializes the adapters and the classifier head of an adapted model.
pub fn adapter_bytes(model: &Model) -> Result<Vec<u8>> {
    let set = model
        .adapters
        .as_ref()
        .ok_or_else(|| Error::contract("model has no adapters to save"))?;
    let mut entries = Vec::new();
    for (&(layer, role), ad) in &set.adapters {
        for (factor, t) in [("lora_a", &ad.a), ("lora_b", &ad.b)] {
            entries.push(Entry {
                name: AdapterSet::factor_name(layer, role, factor),
                frozen: false,
                tensor: t.clone(),
            });
        }
    }
    let head = &model.weights.classifier_head;
    entries.push(Entry {
        name: CLASSIFIER_HEAD.into(),
        frozen: head.frozen,
        tensor: head.value.clone(),
    });
    let header = AdapterHeader {
        kind: "lora-adapters".into(),
        lora: set.config.clone(),
        base: BaseShape::of(&model.config),
    };
    container::encode(MAGIC, &header, &entries)
}

/// Re-attaches saved adapters and classifier head to a compatible base.
pub fn load_adapter_bytes(model: &mut Model, bytes: &[u8]) -> Result<()> {
    if model.adapters.is_some() {
        return Err(Error::config("model already carries LoRA adapters"));
    }
    let (header, mut entries): (AdapterHeader, _) = container::decode(MAGIC, bytes)?;
    let expected = BaseShape::of(&model.config);
    if header.base != expected {
        return Err(Error::data(format!(
            "adapters were trained for base {:?}, this model is {:?}",
            header.base, expected
        )));
    }
    header.lora.validate()?;
    let mut adapters = BTreeMap::new();
    for layer in 0..model.config.n_layers {
        for &role in &header.lora.targets {
            let (d, k) = role.dims(&model.config);
            let mut factor = |name: &str, shape: [usize; 2]| -> Result<Tensor> {
                let e = container::take_entry(
                    &mut entries,
                    &AdapterSet::factor_name(layer, role, name),
                )?;
                if e.tensor.shape() != shape {
                    return Err(Error::data(format!(
                        "{} has shape {:?}, base needs {shape:?}",
                        e.name,
                        e.tensor.shape()
                    )));
                }
                Ok(e.tensor)
            };
            let a = factor("lora_a", [d, header.lora.rank])?;
            let b = factor("lora_b", [header.lora.rank, k])?;
            adapters.insert(
                (layer, role),
                LoraAdapter {
                    a,
                    b,
                    scale: header.lora.scale(),
                    dropout: header.lora.dropout,
                },
            );
        }
    }
    let head = container::take_entry(&mut entries, CLASSIFIER_HEAD)?;
    if head.tensor.shape() != model.weights.classifier_head.value.shape() {
        return Err(Error::data(format!(
            "classifier head has shape {:?}, base needs {:?}",
            head.tensor.shape(),
            model.weights.classifier_head.value.shape()
        )));
    }
    if let Some(extra) = entries.first() {
        return Err(Error::data(format!(
            "unexpected tensor {} in adapter file",
            extra.name
        )));
    }
    model.weights.set_frozen(true);
    model.weights.classifier_head = Param {
        value: head.tensor,
        frozen: head.frozen,
    };
    model.adapters = Some(AdapterSet {
        config: header.lora,
        adapters,
    });
    Ok(())
}

pub fn save_adapters(model: &Model, path: &Path) -> Result<()> {
    container::write_file(path, &adapter_bytes(model)?)
}

pub fn load_adapters(model: &mut Model, path: &Path) -> Result<()> {
    load_adapter_bytes(model, &container::read_file(path)?)
}
