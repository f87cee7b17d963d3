//! Decoder-only transformer in the Llama style: pre-norm RMSNorm,
//! rotary multi-head causal attention, SwiGLU feed-forward.
//!
//! The same trunk feeds two heads. The language-model head predicts the
//! next token at every position; the classifier head reads the final
//! token's normalized hidden state and returns `n_classes` logits.

mod checkpoint;
mod config;
mod weights;

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lora::AdapterSet;
use crate::numerics::{Tape, Tensor, Var};
use crate::tokenizer::TokenId;

pub use config::ModelConfig;
pub use weights::{
    LayerWeights, MatrixRole, Param, TransformerWeights, CLASSIFIER_HEAD, EMBEDDING, FINAL_NORM,
    INIT_STD, LM_HEAD,
};

/// Total and trainable parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
}

/// Configuration, base weights and optional LoRA adapters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: TransformerWeights,
    pub adapters: Option<AdapterSet>,
}

/// Whether adapter dropout is active for a forward pass.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_training(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Which heads to place on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Heads {
    pub lm: bool,
    pub classifier: bool,
}

impl Heads {
    pub const LM: Heads = Heads {
        lm: true,
        classifier: false,
    };
    pub const CLASSIFIER: Heads = Heads {
        lm: false,
        classifier: true,
    };
}

struct BoundLayer {
    attn_norm: Var,
    matrices: [Var; 7],
    ffn_norm: Var,
}

struct BoundAdapter {
    a: Var,
    b: Var,
    scale: f64,
}

/// The model's parameters recorded as leaves on one tape.
pub struct BoundModel {
    embedding: Var,
    layers: Vec<BoundLayer>,
    final_norm: Var,
    lm_head: Option<Var>,
    classifier_head: Option<Var>,
    adapters: BTreeMap<(usize, MatrixRole), BoundAdapter>,
    dropout: f64,
    trainable: Vec<(String, Var)>,
}

impl BoundModel {
    /// Names and handles of leaves that require gradients.
    pub fn trainable(&self) -> &[(String, Var)] {
        &self.trainable
    }
}

fn role_index(role: MatrixRole) -> usize {
    MatrixRole::ALL
        .iter()
        .position(|&r| r == role)
        .expect("role is listed in ALL")
}

impl Model {
    /// A freshly initialized model with every parameter trainable.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let weights = TransformerWeights::init(&config, seed)?;
        Ok(Self {
            config,
            weights,
            adapters: None,
        })
    }

    pub fn from_parts(config: ModelConfig, weights: TransformerWeights) -> Result<Self> {
        config.validate()?;
        weights.check_shapes(&config)?;
        Ok(Self {
            config,
            weights,
            adapters: None,
        })
    }

    /// Records every parameter on `tape`. Leaves require gradients when
    /// `track_grads` is set and the parameter is not frozen.
    pub fn bind(&self, tape: &mut Tape, heads: Heads, track_grads: bool) -> BoundModel {
        let mut trainable = Vec::new();
        let mut leaf = |tape: &mut Tape, name: String, p: &Tensor, frozen: bool| {
            let requires = track_grads && !frozen;
            let v = tape.leaf(p.clone(), requires);
            if requires {
                trainable.push((name, v));
            }
            v
        };
        let w = &self.weights;
        let embedding = leaf(
            tape,
            EMBEDDING.into(),
            &w.embedding.value,
            w.embedding.frozen,
        );
        let mut layers = Vec::with_capacity(w.layers.len());
        for (i, l) in w.layers.iter().enumerate() {
            let attn_norm = leaf(
                tape,
                weights::layer_param_name(i, "attn_norm"),
                &l.attn_norm.value,
                l.attn_norm.frozen,
            );
            let matrices = MatrixRole::ALL.map(|role| {
                let p = l.matrix(role);
                leaf(
                    tape,
                    weights::layer_param_name(i, role.as_str()),
                    &p.value,
                    p.frozen,
                )
            });
            let ffn_norm = leaf(
                tape,
                weights::layer_param_name(i, "ffn_norm"),
                &l.ffn_norm.value,
                l.ffn_norm.frozen,
            );
            layers.push(BoundLayer {
                attn_norm,
                matrices,
                ffn_norm,
            });
        }
        let final_norm = leaf(
            tape,
            FINAL_NORM.into(),
            &w.final_norm.value,
            w.final_norm.frozen,
        );
        let lm_head = heads
            .lm
            .then(|| leaf(tape, LM_HEAD.into(), &w.lm_head.value, w.lm_head.frozen));
        let classifier_head = heads.classifier.then(|| {
            leaf(
                tape,
                CLASSIFIER_HEAD.into(),
                &w.classifier_head.value,
                w.classifier_head.frozen,
            )
        });
        let mut adapters = BTreeMap::new();
        let mut dropout = 0.0;
        if let Some(set) = &self.adapters {
            dropout = set.config.dropout;
            for (&(layer, role), ad) in &set.adapters {
                let a = leaf(
                    tape,
                    AdapterSet::factor_name(layer, role, "lora_a"),
                    &ad.a,
                    false,
                );
                let b = leaf(
                    tape,
                    AdapterSet::factor_name(layer, role, "lora_b"),
                    &ad.b,
                    false,
                );
                adapters.insert(
                    (layer, role),
                    BoundAdapter {
                        a,
                        b,
                        scale: ad.scale,
                    },
                );
            }
        }
        BoundModel {
            embedding,
            layers,
            final_norm,
            lm_head,
            classifier_head,
            adapters,
            dropout,
            trainable,
        }
    }

    pub fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::contract("forward pass over an empty token sequence"));
        }
        if ids.len() > self.config.max_seq_len {
            return Err(Error::contract(format!(
                "sequence of {} tokens exceeds max_seq_len {}; truncate before the forward pass",
                ids.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::data(format!(
                "token id {bad} outside a vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn project(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        layer: usize,
        role: MatrixRole,
        x: Var,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let base = tape.linear(x, bound.layers[layer].matrices[role_index(role)])?;
        let Some(ad) = bound.adapters.get(&(layer, role)) else {
            return Ok(base);
        };
        let input = match mode {
            Mode::Train(rng) if bound.dropout > 0.0 => {
                let mask = dropout_mask(tape.value(x).shape(), bound.dropout, rng);
                let m = tape.constant(mask);
                tape.mul(x, m)?
            }
            _ => x,
        };
        let low = tape.linear(input, ad.b)?;
        let up = tape.linear(low, ad.a)?;
        let scaled = tape.scale(up, ad.scale)?;
        tape.add(base, scaled)
    }

    /// Final-normalized hidden states, `[len × d_model]`.
    pub fn hidden_states(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        ids: &[TokenId],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        self.check_ids(ids)?;
        let cfg = &self.config;
        let eps = cfg.rmsnorm_eps;
        let mut x = tape.embedding(bound.embedding, ids)?;
        for (i, layer) in bound.layers.iter().enumerate() {
            let h = tape.rmsnorm(x, layer.attn_norm, eps)?;
            let q = self.project(tape, bound, i, MatrixRole::Query, h, mode)?;
            let k = self.project(tape, bound, i, MatrixRole::Key, h, mode)?;
            let v = self.project(tape, bound, i, MatrixRole::Value, h, mode)?;
            let q = tape.rope(q, cfg.head_dim(), 0, cfg.rope_theta)?;
            let k = tape.rope(k, cfg.head_dim(), 0, cfg.rope_theta)?;
            let attn = tape.causal_attention(q, k, v, cfg.n_heads)?;
            let o = self.project(tape, bound, i, MatrixRole::Output, attn, mode)?;
            x = tape.add(x, o)?;

            let h = tape.rmsnorm(x, layer.ffn_norm, eps)?;
            let gate = self.project(tape, bound, i, MatrixRole::Gate, h, mode)?;
            let gate = tape.silu(gate)?;
            let up = self.project(tape, bound, i, MatrixRole::Up, h, mode)?;
            let inner = tape.mul(gate, up)?;
            let down = self.project(tape, bound, i, MatrixRole::Down, inner, mode)?;
            x = tape.add(x, down)?;
        }
        tape.rmsnorm(x, bound.final_norm, eps)
    }

    /// Next-token logits on the tape, `[len × vocab_size]`.
    pub fn lm_logits(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        ids: &[TokenId],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let head = bound
            .lm_head
            .ok_or_else(|| Error::contract("language-model head was not bound"))?;
        let h = self.hidden_states(tape, bound, ids, mode)?;
        tape.matmul(h, head)
    }

    /// Class logits on the tape from the last position, `[1 × n_classes]`.
    pub fn classifier_logits(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        ids: &[TokenId],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let head = bound
            .classifier_head
            .ok_or_else(|| Error::contract("classifier head was not bound"))?;
        let h = self.hidden_states(tape, bound, ids, mode)?;
        let last = tape.row(h, ids.len() - 1)?;
        tape.matmul(last, head)
    }

    /// Evaluation-mode next-token logits, `[len × vocab_size]`.
    pub fn forward_lm(&self, ids: &[TokenId]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Heads::LM, false);
        let out = self.lm_logits(&mut tape, &bound, ids, &mut Mode::Eval)?;
        Ok(tape.value(out).clone())
    }

    /// Evaluation-mode class logits, a vector of length `n_classes`.
    pub fn forward_classifier(&self, ids: &[TokenId]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, Heads::CLASSIFIER, false);
        let out = self.classifier_logits(&mut tape, &bound, ids, &mut Mode::Eval)?;
        tape.value(out).clone().reshape(vec![self.config.n_classes])
    }

    /// Sums tensor sizes. Trainable counts non-frozen base tensors plus
    /// every attached adapter factor.
    pub fn count_params(&self) -> ParamCount {
        let mut total = 0;
        let mut trainable = 0;
        for (_, p) in self.weights.named_params() {
            total += p.value.len();
            if !p.frozen {
                trainable += p.value.len();
            }
        }
        if let Some(set) = &self.adapters {
            let n = set.param_count();
            total += n;
            trainable += n;
        }
        ParamCount { total, trainable }
    }

    /// Names and current values of every trainable tensor, base and
    /// adapter, in binding order.
    pub fn trainable_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .weights
            .named_params_mut()
            .into_iter()
            .filter(|(_, p)| !p.frozen)
            .map(|(n, p)| (n, &mut p.value))
            .collect();
        if let Some(set) = &mut self.adapters {
            for (&(layer, role), ad) in set.adapters.iter_mut() {
                out.push((AdapterSet::factor_name(layer, role, "lora_a"), &mut ad.a));
                out.push((AdapterSet::factor_name(layer, role, "lora_b"), &mut ad.b));
            }
        }
        out
    }
}

/// Inverted-dropout mask: each entry is 0 with probability `p`, else
/// `1/(1−p)`.
pub(crate) fn dropout_mask(shape: &[usize], p: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}
