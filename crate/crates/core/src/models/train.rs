use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::networks::{with_generator, AdversarialNet, Autoencoder, DenseStack, Network};
use super::{discriminator_loss, generator_loss, reconstruction_loss, ModelConfig, TrainedModel};
use crate::data::BooleanDataset;
use crate::error::{Error, Result};
use crate::layers::ParamSet;
use crate::tensor::{adam_step, AdamConfig, AdamState, Matrix};

const GENERATOR_STREAM: u64 = 0;
const DISCRIMINATOR_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;

/// Batch losses above this magnitude abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub(crate) fn initial_network(config: &ModelConfig) -> Network {
    Network::build(
        config,
        &mut rng(config.seed, GENERATOR_STREAM),
        &mut rng(config.seed, DISCRIMINATOR_STREAM),
    )
}

/// Adam state for every matrix of one parameter set.
#[derive(Debug, Clone)]
pub struct Optimizer {
    states: Vec<AdamState>,
}

impl Optimizer {
    pub fn new(params: Vec<&Matrix>, config: AdamConfig) -> Self {
        Self {
            states: params.into_iter().map(|p| AdamState::new(p, config)).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Matrix>, grads: Vec<&Matrix>) -> Result<()> {
        if params.len() != self.states.len() || grads.len() != self.states.len() {
            return Err(Error::shape(
                "optimizer",
                format!("{} parameters", self.states.len()),
                format!("{} params / {} grads", params.len(), grads.len()),
            ));
        }
        for ((p, g), s) in params.into_iter().zip(grads).zip(&mut self.states) {
            adam_step(p, g, s)?;
        }
        Ok(())
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }
}

/// Loss and gradient of the generator objective on one batch. With a
/// discriminator and `lambda > 0` the objective is `rec − λ·L_D`, otherwise
/// the plain reconstruction loss.
fn generator_step<A: Autoencoder>(
    gen: &A,
    disc: Option<&DenseStack>,
    lambda: f64,
    x: &Matrix,
) -> Result<(f64, A)> {
    let (recon, cache) = gen.forward_train(x)?;
    let (rec, mut d_recon) = reconstruction_loss(x, &recon)?;
    let mut loss = rec;
    if let Some(d) = disc.filter(|_| lambda != 0.0) {
        let (d_fake, fake_cache) = d.forward(&recon)?;
        let d_real = d.infer(x)?;
        let ld = discriminator_loss(d_real.data(), d_fake.data())?;
        loss = generator_loss(rec, ld, lambda);
        // ∂(−λ·mean d_fake)/∂d_fake
        let g = Matrix::filled(d_fake.rows(), 1, -lambda / d_fake.rows() as f64);
        let mut scratch = d.zeros_like();
        let through = d.backward_input(&fake_cache, &g, &mut scratch)?;
        d_recon.add_assign(&through)?;
    }
    let mut grads = gen.zeros_like();
    gen.backward(&cache, &d_recon, &mut grads)?;
    Ok((loss, grads))
}

/// Loss and gradient of the discriminator objective, with the fake batch
/// held fixed.
fn discriminator_step(d: &DenseStack, real: &Matrix, fake: &Matrix) -> Result<(f64, DenseStack)> {
    let (d_real, real_cache) = d.forward(real)?;
    let (d_fake, fake_cache) = d.forward(fake)?;
    let loss = discriminator_loss(d_real.data(), d_fake.data())?;
    let mut grads = d.zeros_like();
    let g_real = Matrix::filled(d_real.rows(), 1, -1.0 / d_real.rows() as f64);
    let g_fake = Matrix::filled(d_fake.rows(), 1, 1.0 / d_fake.rows() as f64);
    d.backward_input(&real_cache, &g_real, &mut grads)?;
    d.backward_input(&fake_cache, &g_fake, &mut grads)?;
    Ok((loss, grads))
}

fn guard(loss: f64, epoch: usize) -> Result<()> {
    if !loss.is_finite() || loss.abs() > DIVERGENCE_LIMIT {
        return Err(Error::Divergence { epoch, loss });
    }
    Ok(())
}

struct History {
    trace: Vec<(usize, f64)>,
    generator_steps: u64,
    discriminator_steps: u64,
}

fn train_loop<A: Autoencoder>(
    gen: &mut A,
    mut disc: Option<&mut DenseStack>,
    config: &ModelConfig,
    data: &BooleanDataset,
) -> Result<History> {
    let adam = config.adam();
    let lambda = config.lambda_or_zero();
    let train_disc = config.train_discriminator;
    let mut g_opt = Optimizer::new(gen.params(), adam);
    let mut d_opt = disc.as_deref().map(|d| Optimizer::new(d.params(), adam));
    let mut shuffle = rng(config.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = History {
        trace: Vec::with_capacity(config.epochs),
        generator_steps: 0,
        discriminator_steps: 0,
    };

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle);
        let mut weighted = 0.0;
        for batch in order.chunks(config.batch_size) {
            let x = data.dense_batch(batch);
            if let (Some(d), Some(opt)) = (disc.as_deref_mut(), d_opt.as_mut()) {
                if train_disc {
                    let fake = gen.reconstruct(&x)?;
                    let (d_loss, grads) = discriminator_step(d, &x, &fake)?;
                    guard(d_loss, epoch)?;
                    opt.step(d.params_mut(), grads.params())?;
                    history.discriminator_steps += 1;
                }
            }
            let (loss, grads) = generator_step(gen, disc.as_deref(), lambda, &x)?;
            guard(loss, epoch)?;
            g_opt.step(gen.params_mut(), grads.params())?;
            history.generator_steps += 1;
            weighted += loss * batch.len() as f64;
        }
        let mean = weighted / data.len() as f64;
        guard(mean, epoch)?;
        if !gen.params().iter().all(|p| p.is_finite()) {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        history.trace.push((epoch, mean));
    }
    Ok(history)
}

/// Trains a model of `config.architecture` on `data`, which should hold
/// normal rows only.
pub fn fit(config: &ModelConfig, data: &BooleanDataset) -> Result<TrainedModel> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Domain("cannot train on an empty dataset".into()));
    }
    if data.attribute_count() != config.input_dim {
        return Err(Error::shape(
            "fit",
            format!("dataset with {} attributes", data.attribute_count()),
            format!("input_dim {}", config.input_dim),
        ));
    }
    let mut network = initial_network(config);
    let history = match &mut network {
        Network::Adversarial(AdversarialNet {
            generator,
            discriminator,
        }) => train_loop(generator, Some(discriminator), config, data)?,
        Network::Dense(g) => train_loop(g, None, config, data)?,
        Network::Rnn(g) => train_loop(g, None, config, data)?,
        Network::Lstm(g) => train_loop(g, None, config, data)?,
        Network::Gru(g) => train_loop(g, None, config, data)?,
        Network::Attention(g) => train_loop(g, None, config, data)?,
    };
    TrainedModel::from_parts(
        config.clone(),
        network,
        history.trace,
        history.generator_steps,
        history.discriminator_steps,
    )
}

/// Value of the per-batch generator objective.
pub fn generator_objective(network: &Network, x: &Matrix, lambda: f64) -> Result<f64> {
    generator_gradient(network, x, lambda).map(|(loss, _)| loss)
}

/// Generator objective and its gradient, flattened in the order of
/// [`Network::generator_params`].
pub fn generator_gradient(network: &Network, x: &Matrix, lambda: f64) -> Result<(f64, Vec<f64>)> {
    let disc = network.discriminator();
    with_generator!(network, |g| {
        let (loss, grads) = generator_step(g, disc, lambda, x)?;
        Ok((loss, grads.flatten()))
    })
}

/// Value of the discriminator objective with the generator output held fixed.
pub fn discriminator_objective(net: &AdversarialNet, x: &Matrix) -> Result<f64> {
    discriminator_gradient(net, x).map(|(loss, _)| loss)
}

pub fn discriminator_gradient(net: &AdversarialNet, x: &Matrix) -> Result<(f64, Vec<f64>)> {
    let fake = net.generator.reconstruct(x)?;
    let (loss, grads) = discriminator_step(&net.discriminator, x, &fake)?;
    Ok((loss, grads.flatten()))
}
