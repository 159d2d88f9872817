use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    /// Layers in the encoder and, separately, in the decoder.
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub share_embeddings: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 256,
            vocab_size: 512,
            max_len: 256,
            dropout: 0.0,
            share_embeddings: true,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(2) {
            return Err(Error::config("d_model must be even for sinusoidal positions"));
        }
        if self.ffn_dim == 0 || self.vocab_size == 0 || self.max_len == 0 {
            return Err(Error::config("ffn_dim, vocab_size and max_len must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub batch_tokens: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub length_limit: usize,
    pub stop_rel_threshold: f64,
    pub stop_window_frac: f64,
    pub min_steps: u64,
    pub label_smoothing: f64,
    /// Seed for batch shuffling and dropout masks.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.1,
            warmup_steps: 400,
            batch_tokens: 1024,
            max_steps: 4000,
            eval_every: 100,
            length_limit: 100,
            stop_rel_threshold: 0.005,
            stop_window_frac: 0.5,
            min_steps: 1000,
            label_smoothing: 0.1,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.stop_rel_threshold > 0.0 && self.stop_rel_threshold < 1.0) {
            return Err(Error::config("stop_rel_threshold must lie in (0, 1)"));
        }
        if !(self.stop_window_frac > 0.0 && self.stop_window_frac <= 1.0) {
            return Err(Error::config("stop_window_frac must lie in (0, 1]"));
        }
        if self.warmup_steps == 0 || self.eval_every == 0 || self.batch_tokens == 0 {
            return Err(Error::config("warmup_steps, eval_every and batch_tokens must be positive"));
        }
        if self.length_limit == 0 {
            return Err(Error::config("length_limit must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing must lie in [0, 1)"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("base_lr must be positive"));
        }
        Ok(())
    }
}

/// Adam hyperparameters. Stored in checkpoints so moments are only reused
/// under the same optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: AdamKind,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdamKind {
    Adam,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { kind: AdamKind::Adam, beta1: 0.9, beta2: 0.98, eps: 1e-9 }
    }
}

/// The four parameter groups used for freezing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// Shared word embeddings (also the output projection).
    Embeddings,
    /// Encoder feed-forward sublayers and layer norms.
    Encoder,
    /// Decoder feed-forward sublayers and layer norms.
    Decoder,
    /// Every multi-head attention projection, encoder and decoder.
    Attention,
}

impl Component {
    pub const ALL: [Component; 4] =
        [Component::Embeddings, Component::Encoder, Component::Decoder, Component::Attention];

    pub fn name(self) -> &'static str {
        match self {
            Component::Embeddings => "embeddings",
            Component::Encoder => "encoder",
            Component::Decoder => "decoder",
            Component::Attention => "attention",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Component::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::config(format!("unknown component {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezeMask {
    bits: u8,
}

impl FreezeMask {
    pub fn none() -> Self {
        FreezeMask { bits: 0 }
    }

    pub fn all() -> Self {
        FreezeMask { bits: 0b1111 }
    }

    pub fn only(c: Component) -> Self {
        FreezeMask::none().with(c)
    }

    pub fn all_but(c: Component) -> Self {
        let mut m = FreezeMask::all();
        m.bits &= !Self::bit(c);
        m
    }

    fn bit(c: Component) -> u8 {
        1 << (c as u8)
    }

    pub fn with(mut self, c: Component) -> Self {
        self.bits |= Self::bit(c);
        self
    }

    pub fn is_frozen(&self, c: Component) -> bool {
        self.bits & Self::bit(c) != 0
    }

    pub fn frozen(&self) -> Vec<Component> {
        Component::ALL.into_iter().filter(|&c| self.is_frozen(c)).collect()
    }

    /// Comma separated component names; empty or `none` means nothing frozen.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(FreezeMask::none());
        }
        if s == "all" {
            return Ok(FreezeMask::all());
        }
        s.split(',').try_fold(FreezeMask::none(), |m, part| Ok(m.with(Component::parse(part.trim())?)))
    }

    pub fn describe(&self) -> String {
        let names: Vec<&str> = self.frozen().into_iter().map(Component::name).collect();
        if names.is_empty() {
            String::from("none")
        } else {
            names.join(",")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn freeze_mask_parse() {
        assert_eq!(FreezeMask::parse("none").unwrap(), FreezeMask::none());
        assert_eq!(FreezeMask::parse("all").unwrap(), FreezeMask::all());
        let m = FreezeMask::parse("encoder, attention").unwrap();
        assert!(m.is_frozen(Component::Encoder) && m.is_frozen(Component::Attention));
        assert!(!m.is_frozen(Component::Decoder));
        assert_eq!(m.describe(), "encoder,attention");
        assert!(FreezeMask::parse("bogus").is_err());
        assert_eq!(FreezeMask::all_but(Component::Decoder).frozen().len(), 3);
    }

    #[test]
    fn config_validation() {
        let mut m = ModelConfig::default();
        m.validate().unwrap();
        m.n_heads = 3;
        assert!(m.validate().is_err());
        let mut t = TrainConfig::default();
        t.validate().unwrap();
        t.stop_window_frac = 0.0;
        assert!(t.validate().is_err());
    }
}
