use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Similarity;
use crate::tensor::{Activation, AdamConfig};

/// The six autoencoder variants, in the fixed order used for tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "AE")]
    Ae,
    #[serde(rename = "AAE")]
    Aae,
    #[serde(rename = "RNNAE")]
    RnnAe,
    #[serde(rename = "LSTMAE")]
    LstmAe,
    #[serde(rename = "GRUAE")]
    GruAe,
    #[serde(rename = "ATAE")]
    AtAe,
}

impl Architecture {
    pub const ALL: [Architecture; 6] = [
        Architecture::Ae,
        Architecture::Aae,
        Architecture::RnnAe,
        Architecture::LstmAe,
        Architecture::GruAe,
        Architecture::AtAe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::Ae => "AE",
            Architecture::Aae => "AAE",
            Architecture::RnnAe => "RNNAE",
            Architecture::LstmAe => "LSTMAE",
            Architecture::GruAe => "GRUAE",
            Architecture::AtAe => "ATAE",
        }
    }

    /// Tag byte used in model files.
    pub fn tag(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(usize::from(tag).checked_sub(1)?).copied()
    }

    pub fn is_recurrent(self) -> bool {
        matches!(
            self,
            Architecture::RnnAe | Architecture::LstmAe | Architecture::GruAe
        )
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        Self::ALL
            .into_iter()
            .find(|a| a.name() == upper)
            .ok_or_else(|| Error::Config(format!("unknown architecture `{}`", s.trim())))
    }
}

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    /// Attribute count `m`.
    pub input_dim: usize,
    /// Latent width `n`, strictly below `m`.
    pub latent_dim: usize,
    /// Encoder hidden widths between input and latent; the decoder mirrors them.
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub output_activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Weight of the adversarial term; set only for AAE.
    pub lambda: Option<f64>,
    /// When false the AAE discriminator keeps its initial weights.
    pub train_discriminator: bool,
    /// Width of each sequence position for the recurrent and attention models.
    pub chunk_size: usize,
    pub attention_similarity: Similarity,
}

impl ModelConfig {
    /// Defaults for an `m`-attribute dataset: latent `min(16, m/4)`, one
    /// hidden layer of `⌈m/2⌉`, tanh hidden units and a sigmoid output.
    pub fn new(architecture: Architecture, input_dim: usize) -> Self {
        let latent_dim = (input_dim / 4).clamp(1, 16);
        let half = input_dim.div_ceil(2);
        let hidden_sizes = if half > latent_dim { vec![half] } else { Vec::new() };
        Self {
            architecture,
            input_dim,
            latent_dim,
            hidden_sizes,
            activation: Activation::Tanh,
            output_activation: Activation::Sigmoid,
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            lambda: (architecture == Architecture::Aae).then_some(DEFAULT_LAMBDA),
            train_discriminator: true,
            chunk_size: DEFAULT_CHUNK,
            attention_similarity: Similarity::ScaledDot,
        }
    }

    /// The same hyper-parameters for a different architecture, with `lambda`
    /// set or cleared accordingly.
    pub fn for_architecture(&self, architecture: Architecture) -> Self {
        let mut out = self.clone();
        out.architecture = architecture;
        out.lambda = match (architecture, self.lambda) {
            (Architecture::Aae, Some(l)) => Some(l),
            (Architecture::Aae, None) => Some(DEFAULT_LAMBDA),
            _ => None,
        };
        out
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn lambda_or_zero(&self) -> f64 {
        self.lambda.unwrap_or(0.0)
    }

    /// Number of sequence positions the recurrent models unroll over.
    pub fn sequence_len(&self) -> usize {
        self.input_dim.div_ceil(self.chunk_size.max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.input_dim < 2 {
            return fail(format!("input_dim must be at least 2, got {}", self.input_dim));
        }
        if self.latent_dim == 0 || self.latent_dim >= self.input_dim {
            return fail(format!(
                "latent_dim must satisfy 0 < n < m, got n={} m={}",
                self.latent_dim, self.input_dim
            ));
        }
        if self.hidden_sizes.contains(&0) {
            return fail("hidden sizes must be positive".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.chunk_size == 0 {
            return fail("chunk_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must lie in [0, 1)".into());
        }
        if !(self.epsilon > 0.0) {
            return fail("Adam epsilon must be positive".into());
        }
        match (self.architecture, self.lambda) {
            (Architecture::Aae, Some(l)) if l >= 0.0 && l.is_finite() => {}
            (Architecture::Aae, Some(l)) => return fail(format!("lambda must be >= 0, got {l}")),
            (Architecture::Aae, None) => return fail("AAE requires lambda".into()),
            (arch, Some(_)) => return fail(format!("lambda is only meaningful for AAE, not {arch}")),
            (_, None) => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_halving_shape() {
        let c = ModelConfig::new(Architecture::Ae, 300);
        assert_eq!(c.hidden_sizes, vec![150]);
        assert_eq!(c.latent_dim, 16);
        assert_eq!(c.output_activation, Activation::Sigmoid);
        assert!(c.lambda.is_none());
        c.validate().unwrap();
    }

    #[test]
    fn lambda_default_only_for_aae() {
        let c = ModelConfig::new(Architecture::Aae, 30);
        assert_eq!(c.lambda, Some(0.5));
        let ae = c.for_architecture(Architecture::Ae);
        assert!(ae.lambda.is_none());
        ae.validate().unwrap();
        let mut bad = ae.clone();
        bad.lambda = Some(0.5);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut c = ModelConfig::new(Architecture::Ae, 10);
        c.latent_dim = 10;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Architecture::Ae, 10);
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Architecture::Ae, 10);
        c.batch_size = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn architecture_tags_round_trip() {
        for a in Architecture::ALL {
            assert_eq!(Architecture::from_tag(a.tag()), Some(a));
            assert_eq!(a.name().parse::<Architecture>().unwrap(), a);
        }
        assert_eq!(Architecture::from_tag(0), None);
        assert_eq!(Architecture::from_tag(7), None);
    }
}
