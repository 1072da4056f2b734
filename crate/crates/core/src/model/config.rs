use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ModelError;

/// Encoder and head dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub hidden_size: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub max_position: usize,
    pub num_labels: usize,
    pub dropout_prob: f64,
}

/// Segment (token type) vocabulary size. Single utterances only use id 0.
pub const SEGMENT_VOCAB: usize = 2;

impl ModelConfig {
    /// Small default that trains in seconds on a CPU.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            num_layers: 2,
            num_heads: 4,
            hidden_size: 64,
            intermediate_size: 256,
            vocab_size,
            max_position: 128,
            num_labels: 4,
            dropout_prob: 0.1,
        }
    }

    /// The 12-layer, 12-head, 768-wide base configuration.
    pub fn base(vocab_size: usize) -> Self {
        Self {
            num_layers: 12,
            num_heads: 12,
            hidden_size: 768,
            intermediate_size: 3072,
            vocab_size,
            max_position: 512,
            num_labels: 4,
            dropout_prob: 0.1,
        }
    }

    pub fn head_size(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("hidden_size", self.hidden_size),
            ("intermediate_size", self.intermediate_size),
            ("vocab_size", self.vocab_size),
            ("max_position", self.max_position),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(ModelError::Config(format!(
                "hidden_size {} is not divisible by num_heads {}",
                self.hidden_size, self.num_heads
            )));
        }
        if self.num_labels < 2 {
            return Err(ModelError::Config("num_labels must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_prob) {
            return Err(ModelError::Config(format!(
                "dropout_prob {} outside [0, 1)",
                self.dropout_prob
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| ModelError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation() {
        assert!(ModelConfig::desk(100).validate().is_ok());
        assert!(ModelConfig::base(30522).validate().is_ok());
        let mut c = ModelConfig::desk(100);
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(100);
        c.num_labels = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(100);
        c.vocab_size = 0;
        assert!(c.validate().unwrap_err().to_string().contains("vocab_size"));
    }

    #[test]
    fn json_requires_exact_fields() {
        let json = serde_json::to_string(&ModelConfig::desk(50)).unwrap();
        assert_eq!(ModelConfig::from_json(&json).unwrap(), ModelConfig::desk(50));
        assert!(ModelConfig::from_json(r#"{"num_layers": 2}"#).is_err());
        let extra = json.replace('}', r#","pooler":true}"#);
        assert!(ModelConfig::from_json(&extra).is_err());
    }
}
