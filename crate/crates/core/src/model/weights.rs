use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

use super::ModelConfig;

/// Standard deviation of the Gaussian used for every weight matrix.
pub const INIT_STD: f64 = 0.02;

/// A projection matrix inside a transformer layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixRole {
    Query,
    Key,
    Value,
    Output,
    Gate,
    Up,
    Down,
}

impl MatrixRole {
    pub const ALL: [MatrixRole; 7] = [
        MatrixRole::Query,
        MatrixRole::Key,
        MatrixRole::Value,
        MatrixRole::Output,
        MatrixRole::Gate,
        MatrixRole::Up,
        MatrixRole::Down,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MatrixRole::Query => "query",
            MatrixRole::Key => "key",
            MatrixRole::Value => "value",
            MatrixRole::Output => "output",
            MatrixRole::Gate => "gate",
            MatrixRole::Up => "up",
            MatrixRole::Down => "down",
        }
    }

    /// `(out, in)` dimensions of this matrix for a configuration.
    pub fn dims(self, config: &ModelConfig) -> (usize, usize) {
        let (d, f) = (config.d_model, config.d_ff);
        match self {
            MatrixRole::Query | MatrixRole::Key | MatrixRole::Value | MatrixRole::Output => (d, d),
            MatrixRole::Gate | MatrixRole::Up => (f, d),
            MatrixRole::Down => (d, f),
        }
    }
}

impl fmt::Display for MatrixRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatrixRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let normalized = s.trim().to_ascii_lowercase();
        let role = match normalized.as_str() {
            "query" | "q" | "q_proj" | "query_projection" => MatrixRole::Query,
            "key" | "k" | "k_proj" | "key_projection" => MatrixRole::Key,
            "value" | "v" | "v_proj" | "value_projection" => MatrixRole::Value,
            "output" | "o" | "o_proj" | "output_projection" => MatrixRole::Output,
            "gate" | "gate_proj" => MatrixRole::Gate,
            "up" | "up_proj" => MatrixRole::Up,
            "down" | "down_proj" => MatrixRole::Down,
            _ => return Err(Error::config(format!("unknown matrix role {s:?}"))),
        };
        Ok(role)
    }
}

/// A weight tensor with its trainability flag.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub frozen: bool,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Self {
            value,
            frozen: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Param,
    pub query: Param,
    pub key: Param,
    pub value: Param,
    pub output: Param,
    pub ffn_norm: Param,
    pub gate: Param,
    pub up: Param,
    pub down: Param,
}

impl LayerWeights {
    pub fn matrix(&self, role: MatrixRole) -> &Param {
        match role {
            MatrixRole::Query => &self.query,
            MatrixRole::Key => &self.key,
            MatrixRole::Value => &self.value,
            MatrixRole::Output => &self.output,
            MatrixRole::Gate => &self.gate,
            MatrixRole::Up => &self.up,
            MatrixRole::Down => &self.down,
        }
    }

    pub fn matrix_mut(&mut self, role: MatrixRole) -> &mut Param {
        match role {
            MatrixRole::Query => &mut self.query,
            MatrixRole::Key => &mut self.key,
            MatrixRole::Value => &mut self.value,
            MatrixRole::Output => &mut self.output,
            MatrixRole::Gate => &mut self.gate,
            MatrixRole::Up => &mut self.up,
            MatrixRole::Down => &mut self.down,
        }
    }
}

/// All base weights of the transformer.
///
/// Projection matrices are stored `[out × in]` and applied as `x · Wᵀ`
/// to row-vector activations. The two heads are stored `[d_model × out]`
/// and applied as `h · W`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerWeights {
    pub embedding: Param,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Param,
    pub lm_head: Param,
    pub classifier_head: Param,
}

pub const EMBEDDING: &str = "embedding";
pub const FINAL_NORM: &str = "final_norm";
pub const LM_HEAD: &str = "lm_head";
pub const CLASSIFIER_HEAD: &str = "classifier_head";

pub(crate) fn layer_param_name(layer: usize, part: &str) -> String {
    format!("layers.{layer}.{part}")
}

impl TransformerWeights {
    /// Gaussian(0, 0.02) matrices and unit norm gains, drawn in a fixed
    /// order from a generator seeded with `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.d_model;
        let mut gauss = |shape: &[usize]| Param::new(Tensor::randn(shape, INIT_STD, &mut rng));
        let embedding = gauss(&[config.vocab_size, d]);
        let mut layers = Vec::with_capacity(config.n_layers);
        for _ in 0..config.n_layers {
            let mut mat = |role: MatrixRole| {
                let (o, i) = role.dims(config);
                gauss(&[o, i])
            };
            let query = mat(MatrixRole::Query);
            let key = mat(MatrixRole::Key);
            let value = mat(MatrixRole::Value);
            let output = mat(MatrixRole::Output);
            let gate = mat(MatrixRole::Gate);
            let up = mat(MatrixRole::Up);
            let down = mat(MatrixRole::Down);
            layers.push(LayerWeights {
                attn_norm: Param::new(Tensor::full(&[d], 1.0)),
                query,
                key,
                value,
                output,
                ffn_norm: Param::new(Tensor::full(&[d], 1.0)),
                gate,
                up,
                down,
            });
        }
        let lm_head = gauss(&[d, config.vocab_size]);
        let classifier_head = gauss(&[d, config.n_classes]);
        Ok(Self {
            embedding,
            layers,
            final_norm: Param::new(Tensor::full(&[d], 1.0)),
            lm_head,
            classifier_head,
        })
    }

    /// Every parameter with its stable name, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = vec![(EMBEDDING.to_string(), &self.embedding)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((layer_param_name(i, "attn_norm"), &l.attn_norm));
            for role in MatrixRole::ALL {
                out.push((layer_param_name(i, role.as_str()), l.matrix(role)));
            }
            out.push((layer_param_name(i, "ffn_norm"), &l.ffn_norm));
        }
        out.push((FINAL_NORM.to_string(), &self.final_norm));
        out.push((LM_HEAD.to_string(), &self.lm_head));
        out.push((CLASSIFIER_HEAD.to_string(), &self.classifier_head));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = vec![(EMBEDDING.to_string(), &mut self.embedding)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let LayerWeights {
                attn_norm,
                query,
                key,
                value,
                output,
                ffn_norm,
                gate,
                up,
                down,
            } = l;
            out.push((layer_param_name(i, "attn_norm"), attn_norm));
            out.push((layer_param_name(i, "query"), query));
            out.push((layer_param_name(i, "key"), key));
            out.push((layer_param_name(i, "value"), value));
            out.push((layer_param_name(i, "output"), output));
            out.push((layer_param_name(i, "gate"), gate));
            out.push((layer_param_name(i, "up"), up));
            out.push((layer_param_name(i, "down"), down));
            out.push((layer_param_name(i, "ffn_norm"), ffn_norm));
        }
        out.push((FINAL_NORM.to_string(), &mut self.final_norm));
        out.push((LM_HEAD.to_string(), &mut self.lm_head));
        out.push((CLASSIFIER_HEAD.to_string(), &mut self.classifier_head));
        out
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        for (_, p) in self.named_params_mut() {
            p.frozen = frozen;
        }
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let d = config.d_model;
        let expect = |name: &str, p: &Param, shape: &[usize]| -> Result<()> {
            if p.value.shape() != shape {
                return Err(Error::dim(format!(
                    "{name} has shape {:?}, configuration requires {shape:?}",
                    p.value.shape()
                )));
            }
            Ok(())
        };
        if self.layers.len() != config.n_layers {
            return Err(Error::dim(format!(
                "{} layers present, configuration requires {}",
                self.layers.len(),
                config.n_layers
            )));
        }
        expect(EMBEDDING, &self.embedding, &[config.vocab_size, d])?;
        for (i, l) in self.layers.iter().enumerate() {
            expect(&layer_param_name(i, "attn_norm"), &l.attn_norm, &[d])?;
            expect(&layer_param_name(i, "ffn_norm"), &l.ffn_norm, &[d])?;
            for role in MatrixRole::ALL {
                let (o, k) = role.dims(config);
                expect(&layer_param_name(i, role.as_str()), l.matrix(role), &[o, k])?;
            }
        }
        expect(FINAL_NORM, &self.final_norm, &[d])?;
        expect(LM_HEAD, &self.lm_head, &[d, config.vocab_size])?;
        expect(
            CLASSIFIER_HEAD,
            &self.classifier_head,
            &[d, config.n_classes],
        )?;
        Ok(())
    }
}
