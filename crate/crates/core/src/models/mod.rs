//! The six autoencoder models, their training loop, scoring and model files.

mod config;
mod networks;
mod serialize;
mod train;

pub use config::{Architecture, ModelConfig, DEFAULT_CHUNK, DEFAULT_LAMBDA};
pub use networks::{
    autoencoder_sizes, discriminator_sizes, AdversarialNet, AttentionAutoencoder, Autoencoder,
    BuildCell, DenseStack, Network, RecurrentAutoencoder,
};
pub use serialize::{load_model, model_from_bytes, model_to_bytes, save_model, FORMAT_VERSION, MAGIC};
pub use train::{
    discriminator_gradient, discriminator_objective, fit, generator_gradient, generator_objective,
    Optimizer,
};

use crate::data::BooleanDataset;
use crate::error::{Error, Result};
use crate::layers::ParamSet;
use crate::tensor::Matrix;

/// Rows scored per forward pass in [`TrainedModel::score_all`].
const SCORE_BATCH: usize = 256;

fn check_lengths(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, format!("length {a}"), format!("length {b}")));
    }
    Ok(())
}

/// Mean absolute difference between an input and its reconstruction.
pub fn ae_loss(x: &[f64], x_rec: &[f64]) -> Result<f64> {
    check_lengths("ae_loss", x.len(), x_rec.len())?;
    if x.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = x.iter().zip(x_rec).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / x.len() as f64)
}

/// `mean|1 − d_real| + mean|d_fake|`; every output must lie in `(0, 1)`.
pub fn discriminator_loss(d_real: &[f64], d_fake: &[f64]) -> Result<f64> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(Error::Domain("discriminator loss over no outputs".into()));
    }
    if let Some(v) = d_real
        .iter()
        .chain(d_fake)
        .find(|&&v| !(v > 0.0 && v < 1.0))
    {
        return Err(Error::Domain(format!(
            "discriminator output {v} outside (0, 1)"
        )));
    }
    let real: f64 = d_real.iter().map(|d| (1.0 - d).abs()).sum::<f64>() / d_real.len() as f64;
    let fake: f64 = d_fake.iter().map(|d| d.abs()).sum::<f64>() / d_fake.len() as f64;
    Ok(real + fake)
}

/// `rec_loss − λ·disc_loss`.
pub fn generator_loss(rec_loss: f64, disc_loss: f64, lambda: f64) -> f64 {
    debug_assert!(rec_loss >= 0.0 && lambda >= 0.0);
    rec_loss - lambda * disc_loss
}

/// Batch reconstruction loss (mean over every cell) and its gradient with
/// respect to the reconstruction.
pub fn reconstruction_loss(x: &Matrix, recon: &Matrix) -> Result<(f64, Matrix)> {
    if x.shape() != recon.shape() {
        return Err(Error::shape("reconstruction_loss", x.shape(), recon.shape()));
    }
    let count = x.len().max(1) as f64;
    let mut total = 0.0;
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(x.data()).zip(recon.data()) {
        let diff = a - b;
        total += diff.abs();
        *g = if diff > 0.0 {
            -1.0 / count
        } else if diff < 0.0 {
            1.0 / count
        } else {
            0.0
        };
    }
    Ok((total / count, grad))
}

/// Per-row mean absolute error.
pub fn row_errors(x: &Matrix, recon: &Matrix) -> Result<Vec<f64>> {
    if x.shape() != recon.shape() {
        return Err(Error::shape("row_errors", x.shape(), recon.shape()));
    }
    (0..x.rows()).map(|r| ae_loss(x.row(r), recon.row(r))).collect()
}

/// A fitted model: configuration, weights and training history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    config: ModelConfig,
    network: Network,
    loss_trace: Vec<(usize, f64)>,
    generator_steps: u64,
    discriminator_steps: u64,
}

impl TrainedModel {
    /// Freshly initialised weights with no training history. Scoring it is
    /// an error.
    pub fn untrained(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            network: train::initial_network(config),
            config: config.clone(),
            loss_trace: Vec::new(),
            generator_steps: 0,
            discriminator_steps: 0,
        })
    }

    pub fn from_parts(
        config: ModelConfig,
        network: Network,
        loss_trace: Vec<(usize, f64)>,
        generator_steps: u64,
        discriminator_steps: u64,
    ) -> Result<Self> {
        config.validate()?;
        if network.architecture() != config.architecture {
            return Err(Error::Config(format!(
                "network is {} but config says {}",
                network.architecture(),
                config.architecture
            )));
        }
        if network.input_dim() != config.input_dim {
            return Err(Error::shape(
                "TrainedModel",
                format!("network width {}", network.input_dim()),
                format!("config width {}", config.input_dim),
            ));
        }
        Ok(Self {
            config,
            network,
            loss_trace,
            generator_steps,
            discriminator_steps,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.network
    }

    /// `(epoch, mean loss)` with epochs counted from 1.
    pub fn loss_trace(&self) -> &[(usize, f64)] {
        &self.loss_trace
    }

    pub fn generator_steps(&self) -> u64 {
        self.generator_steps
    }

    pub fn discriminator_steps(&self) -> u64 {
        self.discriminator_steps
    }

    pub fn is_trained(&self) -> bool {
        !self.loss_trace.is_empty()
    }

    pub fn parameters_finite(&self) -> bool {
        self.network.params().iter().all(|m| m.is_finite())
    }

    fn ensure_trained(&self) -> Result<()> {
        if self.is_trained() {
            Ok(())
        } else {
            Err(Error::State(format!(
                "{} model has not been trained",
                self.architecture()
            )))
        }
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.ensure_trained()?;
        check_lengths("reconstruct", x.len(), self.config.input_dim)?;
        Ok(self.network.reconstruct(&Matrix::row_vector(x))?.into_data())
    }

    pub fn anomaly_score(&self, x: &[f64]) -> Result<f64> {
        let rec = self.reconstruct(x)?;
        ae_loss(x, &rec)
    }

    /// Scores for each row of `x`.
    pub fn score_matrix(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.ensure_trained()?;
        let recon = self.network.reconstruct(x)?;
        row_errors(x, &recon)
    }

    /// One score per dataset row, in row order.
    pub fn score_all(&self, dataset: &BooleanDataset) -> Result<Vec<f64>> {
        self.ensure_trained()?;
        if dataset.attribute_count() != self.config.input_dim {
            return Err(Error::shape(
                "score_all",
                format!("dataset with {} attributes", dataset.attribute_count()),
                format!("model input width {}", self.config.input_dim),
            ));
        }
        let indices: Vec<usize> = (0..dataset.len()).collect();
        let mut scores = Vec::with_capacity(dataset.len());
        for chunk in indices.chunks(SCORE_BATCH) {
            scores.extend(self.score_matrix(&dataset.dense_batch(chunk))?);
        }
        Ok(scores)
    }
}

pub fn anomaly_score(model: &TrainedModel, x: &[f64]) -> Result<f64> {
    model.anomaly_score(x)
}

pub fn score_all(model: &TrainedModel, dataset: &BooleanDataset) -> Result<Vec<f64>> {
    model.score_all(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, DatasetMeta, SyntheticSpec};

    #[test]
    fn ae_loss_examples() {
        assert_eq!(ae_loss(&[1., 0., 1.], &[1., 0., 1.]).unwrap(), 0.0);
        assert_eq!(ae_loss(&[1.; 4], &[0.; 4]).unwrap(), 1.0);
        assert_eq!(ae_loss(&[1., 0.], &[0.75, 0.25]).unwrap(), 0.25);
        assert!(matches!(ae_loss(&[1.], &[1., 0.]), Err(Error::Shape { .. })));
    }

    #[test]
    fn discriminator_loss_examples() {
        let l = discriminator_loss(&[0.9, 0.8], &[0.1, 0.3]).unwrap();
        assert!((l - 0.35).abs() < 1e-12);
        assert_eq!(discriminator_loss(&[0.5; 3], &[0.5; 3]).unwrap(), 1.0);
        let near = discriminator_loss(&[1.0 - 1e-12], &[1e-12]).unwrap();
        assert!(near < 1e-11);
        assert!(matches!(discriminator_loss(&[1.0], &[0.5]), Err(Error::Domain(_))));
        assert!(matches!(discriminator_loss(&[0.5], &[0.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn generator_loss_examples() {
        assert!((generator_loss(0.2, 0.35, 0.5) - 0.025).abs() < 1e-12);
        assert_eq!(generator_loss(0.2, 0.35, 0.0), 0.2);
        assert_eq!(DEFAULT_LAMBDA, 0.5);
        assert_eq!(ModelConfig::new(Architecture::Aae, 8).lambda, Some(0.5));
    }

    #[test]
    fn reconstruction_gradient_is_sign() {
        let x = Matrix::from_rows(&[vec![1., 0.]]).unwrap();
        let r = Matrix::from_rows(&[vec![0.75, 0.25]]).unwrap();
        let (l, g) = reconstruction_loss(&x, &r).unwrap();
        assert_eq!(l, 0.25);
        assert_eq!(g.data(), &[-0.5, 0.5]);
    }

    fn small_data() -> BooleanDataset {
        let spec = SyntheticSpec {
            normal_count: 40,
            anomaly_count: 2,
            attribute_count: 12,
            seed: 3,
            ..SyntheticSpec::default()
        };
        generate_synthetic(&spec).unwrap().0
    }

    fn small_config(arch: Architecture) -> ModelConfig {
        let mut c = ModelConfig::new(arch, 12);
        c.epochs = 2;
        c.batch_size = 16;
        c.chunk_size = 4;
        c
    }

    #[test]
    fn untrained_model_refuses_to_score() {
        let m = TrainedModel::untrained(&small_config(Architecture::Ae)).unwrap();
        assert!(matches!(m.anomaly_score(&[0.0; 12]), Err(Error::State(_))));
        assert!(matches!(m.score_all(&small_data()), Err(Error::State(_))));
    }

    #[test]
    fn zeroed_network_scores_one_half() {
        let data = small_data();
        for arch in Architecture::ALL {
            let mut m = fit(&small_config(arch), &data).unwrap();
            m.network_mut().zero();
            for i in 0..data.len() {
                let s = m.anomaly_score(&data.dense_row(i)).unwrap();
                assert_eq!(s, 0.5, "{arch}");
            }
        }
    }

    #[test]
    fn score_all_matches_single_row_scores() {
        let data = small_data();
        for arch in Architecture::ALL {
            let m = fit(&small_config(arch), &data).unwrap();
            let all = m.score_all(&data).unwrap();
            assert_eq!(all.len(), data.len());
            for (i, &s) in all.iter().enumerate() {
                assert_eq!(s, m.anomaly_score(&data.dense_row(i)).unwrap(), "{arch}");
                assert!(s.is_finite() && (0.0..=1.0).contains(&s));
            }
            let one = data.subset(&[5]);
            assert_eq!(m.score_all(&one).unwrap(), vec![all[5]]);
        }
    }

    #[test]
    fn permuting_rows_permutes_scores() {
        let data = small_data();
        let m = fit(&small_config(Architecture::LstmAe), &data).unwrap();
        let scores = m.score_all(&data).unwrap();
        let perm: Vec<usize> = (0..data.len()).rev().collect();
        let permuted = m.score_all(&data.subset(&perm)).unwrap();
        let expected: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        assert_eq!(permuted, expected);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let m = fit(&small_config(Architecture::Ae), &small_data()).unwrap();
        let narrow = BooleanDataset::new(
            vec!["p".into()],
            (0..5).map(|j| format!("a{j}")).collect(),
            vec![vec![1]],
            DatasetMeta::default(),
        )
        .unwrap();
        assert!(matches!(m.score_all(&narrow), Err(Error::Shape { .. })));
    }
}
