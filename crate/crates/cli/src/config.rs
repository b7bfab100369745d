//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; `aeapt --print-config` prints them all in a form that parses
//! back to the same configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aeapt_core::data::{DatasetMeta, View};
use aeapt_core::layers::Similarity;
use aeapt_core::models::{Architecture, ModelConfig, DEFAULT_CHUNK, DEFAULT_LAMBDA};
use aeapt_core::tensor::Activation;
use aeapt_core::{Error, Result};

/// Width-dependent size: either derived from the attribute count or fixed.
#[derive(Debug, Clone, PartialEq)]
pub enum Auto<T> {
    Auto,
    Fixed(T),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub os: String,
    pub scenario: String,
    pub view: View,
    pub architectures: Vec<Architecture>,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub latent_dim: Auto<usize>,
    pub hidden_sizes: Auto<Vec<usize>>,
    pub activation: Activation,
    pub output_activation: Activation,
    pub lambda: f64,
    pub train_discriminator: bool,
    pub chunk_size: usize,
    pub attention_similarity: Similarity,
}

impl Default for RunConfig {
    fn default() -> Self {
        let base = ModelConfig::new(Architecture::Ae, 2);
        Self {
            data: None,
            labels: None,
            out_dir: PathBuf::from("aeapt-out"),
            os: "unknown".into(),
            scenario: "unknown".into(),
            view: View::All,
            architectures: Architecture::ALL.to_vec(),
            seed: base.seed,
            epochs: base.epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            beta1: base.beta1,
            beta2: base.beta2,
            epsilon: base.epsilon,
            latent_dim: Auto::Auto,
            hidden_sizes: Auto::Auto,
            activation: base.activation,
            output_activation: base.output_activation,
            lambda: DEFAULT_LAMBDA,
            train_discriminator: true,
            chunk_size: DEFAULT_CHUNK,
            attention_similarity: Similarity::default(),
        }
    }
}

const KEYS: &[(&str, &str)] = &[
    ("data", "dataset file; `.csv` is dense, anything else sparse with a sibling `.dict`"),
    ("labels", "file of anomalous process ids, one per line"),
    ("out_dir", "directory for every artifact (AEAPT_OUT overrides it)"),
    ("os", "operating system recorded with the dataset"),
    ("scenario", "scenario recorded with the dataset"),
    ("view", "PE, PX, PP, PN or PA"),
    ("architectures", "comma-separated subset of AE,AAE,RNNAE,LSTMAE,GRUAE,ATAE"),
    ("seed", "seed for initialization and batch shuffling"),
    ("epochs", "training epochs per model"),
    ("batch_size", "mini-batch rows"),
    ("learning_rate", "Adam step size"),
    ("beta1", "Adam first-moment decay"),
    ("beta2", "Adam second-moment decay"),
    ("epsilon", "Adam denominator offset"),
    ("latent_dim", "bottleneck width, or `auto` for min(16, m/4)"),
    ("hidden_sizes", "comma-separated encoder widths, `none`, or `auto` for ceil(m/2)"),
    ("activation", "hidden activation: tanh, sigmoid, relu or identity"),
    ("output_activation", "reconstruction activation"),
    ("lambda", "adversarial weight of AAE"),
    ("train_discriminator", "whether AAE updates its discriminator"),
    ("chunk_size", "columns per step of the recurrent models"),
    ("attention_similarity", "dot or scaled_dot"),
];

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Tanh => "tanh",
        Activation::Sigmoid => "sigmoid",
        Activation::Relu => "relu",
        Activation::Identity => "identity",
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, message(&e))))?;
        }
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let optional_path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "data" => self.data = optional_path(value),
            "labels" => self.labels = optional_path(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "os" => self.os = value.to_owned(),
            "scenario" => self.scenario = value.to_owned(),
            "view" => self.view = value.parse()?,
            "architectures" => {
                let archs: Vec<Architecture> = parse_list(key, value)?;
                if archs.is_empty() {
                    return Err(Error::Config("`architectures` is empty".into()));
                }
                self.architectures = archs;
            }
            "seed" => self.seed = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "latent_dim" => {
                self.latent_dim = match value {
                    "auto" => Auto::Auto,
                    v => Auto::Fixed(parse(key, v)?),
                }
            }
            "hidden_sizes" => {
                self.hidden_sizes = match value {
                    "auto" => Auto::Auto,
                    "none" | "" => Auto::Fixed(Vec::new()),
                    v => Auto::Fixed(parse_list(key, v)?),
                }
            }
            "activation" => self.activation = value.parse()?,
            "output_activation" => self.output_activation = value.parse()?,
            "lambda" => self.lambda = parse(key, value)?,
            "train_discriminator" => self.train_discriminator = parse(key, value)?,
            "chunk_size" => self.chunk_size = parse(key, value)?,
            "attention_similarity" => self.attention_similarity = value.parse()?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    fn value_of(&self, key: &str) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        match key {
            "data" => path(&self.data),
            "labels" => path(&self.labels),
            "out_dir" => self.out_dir.display().to_string(),
            "os" => self.os.clone(),
            "scenario" => self.scenario.clone(),
            "view" => self.view.code().to_owned(),
            "architectures" => join(&self.architectures),
            "seed" => self.seed.to_string(),
            "epochs" => self.epochs.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "learning_rate" => self.learning_rate.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "epsilon" => self.epsilon.to_string(),
            "latent_dim" => match &self.latent_dim {
                Auto::Auto => "auto".into(),
                Auto::Fixed(n) => n.to_string(),
            },
            "hidden_sizes" => match &self.hidden_sizes {
                Auto::Auto => "auto".into(),
                Auto::Fixed(v) if v.is_empty() => "none".into(),
                Auto::Fixed(v) => join(v),
            },
            "activation" => activation_name(self.activation).into(),
            "output_activation" => activation_name(self.output_activation).into(),
            "lambda" => self.lambda.to_string(),
            "train_discriminator" => self.train_discriminator.to_string(),
            "chunk_size" => self.chunk_size.to_string(),
            "attention_similarity" => match self.attention_similarity {
                Similarity::Dot => "dot".into(),
                Similarity::ScaledDot => "scaled_dot".into(),
            },
            _ => unreachable!("unlisted key {key}"),
        }
    }

    /// Documented `key = value` listing of this configuration.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (key, doc) in KEYS {
            out.push_str(&format!("# {doc}\n{key} = {}\n", self.value_of(key)));
        }
        out
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta::new(self.view, self.os.clone(), self.scenario.clone())
    }

    /// Model configuration for one architecture on `m` attributes.
    pub fn model_config(&self, architecture: Architecture, m: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(architecture, m);
        if let Auto::Fixed(n) = self.latent_dim {
            c.latent_dim = n;
        }
        if let Auto::Fixed(h) = &self.hidden_sizes {
            c.hidden_sizes = h.clone();
        }
        c.activation = self.activation;
        c.output_activation = self.output_activation;
        c.epochs = self.epochs;
        c.batch_size = self.batch_size;
        c.learning_rate = self.learning_rate;
        c.beta1 = self.beta1;
        c.beta2 = self.beta2;
        c.epsilon = self.epsilon;
        c.seed = self.seed;
        if architecture == Architecture::Aae {
            c.lambda = Some(self.lambda);
            c.train_discriminator = self.train_discriminator;
        }
        c.chunk_size = self.chunk_size;
        c.attention_similarity = self.attention_similarity;
        c.validate()?;
        Ok(c)
    }

    pub fn model_configs(&self, m: usize) -> Result<Vec<ModelConfig>> {
        self.architectures
            .iter()
            .map(|&a| self.model_config(a, m))
            .collect()
    }
}

/// Error text without the variant prefix added by `Display`.
pub fn message(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::Domain(m) => m.clone(),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn printed_defaults_parse_back() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.render()).unwrap(), d);
    }

    #[test]
    fn every_key_is_printed() {
        let text = RunConfig::default().render();
        for (key, _) in KEYS {
            assert!(text.contains(&format!("\n{key} = ")), "{key}");
        }
    }

    #[test]
    fn overrides_and_comments() {
        let c = RunConfig::parse(
            "# run\n\nepochs = 3\narchitectures = ae, atae\nhidden_sizes = none\nlatent_dim=4\nview = PE\n",
        )
        .unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.architectures, vec![Architecture::Ae, Architecture::AtAe]);
        assert_eq!(c.hidden_sizes, Auto::Fixed(vec![]));
        assert_eq!(c.latent_dim, Auto::Fixed(4));
        assert_eq!(c.view, View::Event);
        let m = c.model_config(Architecture::Ae, 20).unwrap();
        assert_eq!((m.latent_dim, m.hidden_sizes.len(), m.epochs), (4, 0, 3));
    }

    #[test]
    fn bad_lines_name_their_line() {
        let e = RunConfig::parse("epochs = 2\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        assert!(RunConfig::parse("epochs 2").is_err());
        assert!(RunConfig::parse("epochs = -1").is_err());
    }

    #[test]
    fn invalid_model_settings_are_rejected() {
        let c = RunConfig::parse("learning_rate = 0").unwrap();
        assert!(c.model_config(Architecture::Ae, 10).is_err());
        let c = RunConfig::parse("latent_dim = 10").unwrap();
        assert!(c.model_config(Architecture::Ae, 10).is_err());
    }

    #[test]
    fn lambda_applies_to_aae_only() {
        let c = RunConfig::parse("lambda = 0.25").unwrap();
        assert_eq!(c.model_config(Architecture::Aae, 10).unwrap().lambda, Some(0.25));
        assert_eq!(c.model_config(Architecture::Ae, 10).unwrap().lambda, None);
    }
}
