use serde::{Deserialize, Serialize};

use crate::autograd::GatVersion;
use crate::error::{CgtError, Result};
use crate::graph::GraphConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Hybrid,
    PureTransformer,
    PureGnn,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Hybrid => "hybrid",
            Variant::PureTransformer => "pure_transformer",
            Variant::PureGnn => "pure_gnn",
        }
    }

    pub fn uses_gnn(self) -> bool {
        self != Variant::PureTransformer
    }

    pub fn uses_transformer(self) -> bool {
        self != Variant::PureGnn
    }
}

impl std::str::FromStr for Variant {
    type Err = CgtError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(Variant::Hybrid),
            "pure_transformer" => Ok(Variant::PureTransformer),
            "pure_gnn" => Ok(Variant::PureGnn),
            other => Err(CgtError::Config(format!("unknown variant {other:?}"))),
        }
    }
}

fn default_slope() -> f64 {
    0.2
}

fn default_ln_eps() -> f64 {
    1e-5
}

fn default_init_std() -> f64 {
    0.02
}

fn default_true() -> bool {
    true
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub gnn_layers: usize,
    pub transformer_layers: usize,
    pub heads: usize,
    pub max_seq_len: usize,
    pub ffn_dim: usize,
    pub variant: Variant,
    #[serde(default)]
    pub graph: GraphConfig,
    /// Share the token-embedding matrix with the output projection.
    #[serde(default)]
    pub tie_lm_head: bool,
    #[serde(default = "default_gat_version")]
    pub gat_version: GatVersion,
    /// Split the GNN attention into `heads` heads; otherwise one full-width head.
    #[serde(default = "default_true")]
    pub gnn_multi_head: bool,
    /// Add `ln(edge weight)` to graph-attention logits.
    #[serde(default)]
    pub edge_weight_bias: bool,
    #[serde(default = "default_true")]
    pub gnn_residual: bool,
    #[serde(default = "default_true")]
    pub causal: bool,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_gat_version() -> GatVersion {
    GatVersion::V1
}

impl ModelConfig {
    /// Minimal config with defaults for everything but the sizes.
    pub fn new(vocab_size: usize, hidden_dim: usize, gnn_layers: usize, transformer_layers: usize, heads: usize, max_seq_len: usize) -> Self {
        ModelConfig {
            vocab_size,
            hidden_dim,
            gnn_layers,
            transformer_layers,
            heads,
            max_seq_len,
            ffn_dim: 4 * hidden_dim,
            variant: Variant::Hybrid,
            graph: GraphConfig::default(),
            tie_lm_head: false,
            gat_version: GatVersion::V1,
            gnn_multi_head: true,
            edge_weight_bias: false,
            gnn_residual: true,
            causal: true,
            leaky_slope: 0.2,
            layer_norm_eps: 1e-5,
            init_std: 0.02,
        }
    }

    /// Full-size configuration: GPT-2 vocabulary, 384 hidden, 3 GNN and 4
    /// transformer layers, 8 heads, 512 positions.
    pub fn full_size() -> Self {
        Self::new(50257, 384, 3, 4, 8, 512)
    }

    /// Desk-scale configuration over the byte-level vocabulary.
    pub fn desk(vocab_size: usize) -> Self {
        Self::new(vocab_size, 32, 1, 1, 4, 64)
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    /// Heads used by the graph-attention layers.
    pub fn gnn_heads(&self) -> usize {
        if self.gnn_multi_head {
            self.heads
        } else {
            1
        }
    }

    /// GNN layers actually allocated for this variant.
    pub fn active_gnn_layers(&self) -> usize {
        if self.variant.uses_gnn() {
            self.gnn_layers
        } else {
            0
        }
    }

    pub fn active_transformer_layers(&self) -> usize {
        if self.variant.uses_transformer() {
            self.transformer_layers
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CgtError::Config(m));
        if self.vocab_size == 0 || self.hidden_dim == 0 || self.heads == 0 || self.max_seq_len == 0 || self.ffn_dim == 0 {
            return fail("vocab_size, hidden_dim, heads, max_seq_len and ffn_dim must be >= 1".into());
        }
        if self.hidden_dim % self.heads != 0 {
            return fail(format!("hidden_dim {} not divisible by heads {}", self.hidden_dim, self.heads));
        }
        if self.hidden_dim % 2 != 0 {
            return fail("hidden_dim must be even for sinusoidal positions".into());
        }
        match self.variant {
            Variant::PureTransformer if self.transformer_layers == 0 => {
                return fail("pure_transformer needs transformer_layers >= 1".into())
            }
            Variant::PureGnn if self.gnn_layers == 0 => return fail("pure_gnn needs gnn_layers >= 1".into()),
            _ => {}
        }
        if !(self.layer_norm_eps > 0.0) || !(self.init_std >= 0.0) || !self.leaky_slope.is_finite() {
            return fail("layer_norm_eps must be > 0, init_std >= 0, leaky_slope finite".into());
        }
        self.graph.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_size_head_dim() {
        let c = ModelConfig::full_size();
        assert_eq!(c.head_dim(), 48);
        assert_eq!(c.ffn_dim, 1536);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_indivisible_heads() {
        let mut c = ModelConfig::desk(258);
        c.heads = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_defaults_fill_optional_fields() {
        let json = r#"{"vocab_size":258,"hidden_dim":16,"gnn_layers":1,"transformer_layers":1,
            "heads":2,"max_seq_len":32,"ffn_dim":64,"variant":"pure_gnn"}"#;
        let c: ModelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.variant, Variant::PureGnn);
        assert!(!c.tie_lm_head);
        assert_eq!(c.graph, GraphConfig::default());
        c.validate().unwrap();
    }
}
