use serde::{Deserialize, Serialize};

use crate::graph::EdgeKind;
use crate::{Error, Result};

/// Which edges the propagation matrix `Â` is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationEdges {
    /// Every edge kind, shortcuts and supernode links included.
    All,
    /// ORIGINAL, REVERSE and SELF_LOOP only.
    Structural,
}

impl PropagationEdges {
    pub fn kinds(self) -> &'static [EdgeKind] {
        match self {
            PropagationEdges::All => &EdgeKind::ALL,
            PropagationEdges::Structural => {
                &[EdgeKind::Original, EdgeKind::Reverse, EdgeKind::SelfLoop]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    /// Teleport probability, in `(0, 1]`.
    pub omega: f64,
    pub prop_steps: usize,
    /// When false the decoder's graph attention never touches the
    /// propagation code; `prop_steps = 0` must give the same numbers.
    pub graph_propagation: bool,
    pub propagation_edges: PropagationEdges,
    pub enc_layers: usize,
    pub graph_enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_width: usize,
    pub dropout_rate: f64,
    pub label_smoothing: f64,
    pub max_grad_norm: f64,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl Default for ModelConfig {
    /// Desk scale: a 2-layer, 64-wide text encoder stands in for a
    /// pretrained one.
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_heads: 4,
            omega: 0.9,
            prop_steps: 2,
            graph_propagation: true,
            propagation_edges: PropagationEdges::All,
            enc_layers: 2,
            graph_enc_layers: 2,
            dec_layers: 2,
            ffn_width: 128,
            dropout_rate: 0.1,
            label_smoothing: 0.1,
            max_grad_norm: 0.2,
            vocab_size: 64,
            max_len: 256,
        }
    }
}

impl ModelConfig {
    /// Full-size settings: 768 wide, 12 text-encoder, 2 graph-encoder and
    /// 6 decoder layers. Far beyond desk scale; kept for config files.
    pub fn full_scale(vocab_size: usize) -> Self {
        ModelConfig {
            d_model: 768,
            n_heads: 8,
            ffn_width: 2048,
            enc_layers: 12,
            graph_enc_layers: 2,
            dec_layers: 6,
            vocab_size,
            max_len: 1600,
            ..ModelConfig::default()
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return bad(format!("omega must lie in (0, 1], got {}", self.omega));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            ));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!(
                "label_smoothing must lie in [0, 1), got {}",
                self.label_smoothing
            ));
        }
        if self.max_grad_norm <= 0.0 {
            return bad(format!(
                "max_grad_norm must be positive, got {}",
                self.max_grad_norm
            ));
        }
        if self.vocab_size < 4 || self.max_len == 0 || self.ffn_width == 0 {
            return bad("vocab_size >= 4, max_len > 0 and ffn_width > 0 are required".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Reads either JSON or `key = value` lines (`#` starts a comment).
    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim_start();
        let cfg: ModelConfig = if trimmed.starts_with('{') {
            serde_json::from_str(text)
                .map_err(|e| Error::InvalidArgument(format!("config: {e}")))?
        } else {
            let mut map = serde_json::Map::new();
            for (n, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line.split_once('=').ok_or_else(|| {
                    Error::InvalidArgument(format!("config line {}: expected key = value", n + 1))
                })?;
                let v = v.trim();
                let value = serde_json::from_str(v)
                    .unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
                map.insert(k.trim().to_string(), value);
            }
            serde_json::from_value(serde_json::Value::Object(map))
                .map_err(|e| Error::InvalidArgument(format!("config: {e}")))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let mut out = String::new();
        for (k, v) in value.as_object().expect("struct serializes to an object") {
            let v = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_and_json_agree() {
        let cfg = ModelConfig {
            prop_steps: 5,
            omega: 0.5,
            propagation_edges: PropagationEdges::Structural,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::parse(&cfg.to_key_values()).unwrap(), cfg);
        assert_eq!(ModelConfig::parse(&cfg.to_json()).unwrap(), cfg);
        let partial = ModelConfig::parse("# desk run\nd_model = 32\nn_heads=2\n").unwrap();
        assert_eq!(partial.d_model, 32);
        assert_eq!(partial.omega, 0.9);
    }

    #[test]
    fn invalid_configs() {
        for text in [
            "d_model = 30\nn_heads = 4",
            "omega = 0",
            "omega = 1.5",
            "bogus = 1",
        ] {
            assert!(ModelConfig::parse(text).is_err(), "{text}");
        }
        assert!(ModelConfig::parse("omega = 1.0").is_ok());
    }

    #[test]
    fn default_and_full_scale_settings() {
        let d = ModelConfig::default();
        assert_eq!((d.omega, d.prop_steps), (0.9, 2));
        assert_eq!((d.label_smoothing, d.max_grad_norm), (0.1, 0.2));
        let p = ModelConfig::full_scale(50_000);
        assert_eq!(
            (p.d_model, p.ffn_width, p.graph_enc_layers, p.dec_layers),
            (768, 2048, 2, 6)
        );
        p.validate().unwrap();
    }
}
