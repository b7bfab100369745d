use rand::Rng;

use super::config::{Architecture, ModelConfig};
use crate::error::{Error, Result};
use crate::layers::{
    AttentionCache, AttentionParams, CellState, DenseCache, DenseParams, GruCellParams,
    LstmCellParams, ParamSet, RecurrentCell, RnnCellParams,
};
use crate::tensor::{Activation, Matrix};

/// A network that maps a batch back onto its own input space.
pub trait Autoencoder: ParamSet + Clone {
    type Cache;

    fn input_dim(&self) -> usize;

    fn forward_train(&self, x: &Matrix) -> Result<(Matrix, Self::Cache)>;

    fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_train(x)?.0)
    }

    /// Accumulates parameter gradients into `grads`.
    fn backward(&self, cache: &Self::Cache, d_recon: &Matrix, grads: &mut Self) -> Result<()>;
}

fn check_width(op: &'static str, x: &Matrix, width: usize) -> Result<()> {
    if x.cols() != width {
        return Err(Error::shape(op, x.shape(), format!("input width {width}")));
    }
    Ok(())
}

/// A chain of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseStack {
    pub layers: Vec<DenseParams>,
}

impl DenseStack {
    /// `sizes` has one more entry than there are layers. Every layer uses
    /// `hidden` except the last, which uses `output`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Self {
        let count = sizes.len().saturating_sub(1);
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let act = if i + 1 == count { output } else { hidden };
                DenseParams::new(w[0], w[1], act, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, DenseParams::input_dim)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseParams::output_dim)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Vec<DenseCache>)> {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&h)?;
            caches.push(cache);
            h = out;
        }
        Ok((h, caches))
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.infer(&h)?;
        }
        Ok(h)
    }

    /// Returns the gradient with respect to the stack input.
    pub fn backward_input(
        &self,
        caches: &[DenseCache],
        grad_out: &Matrix,
        grads: &mut DenseStack,
    ) -> Result<Matrix> {
        let mut g = grad_out.clone();
        for ((layer, cache), lg) in self
            .layers
            .iter()
            .zip(caches)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            g = layer.backward(cache, &g, lg)?;
        }
        Ok(g)
    }
}

impl ParamSet for DenseStack {
    fn params(&self) -> Vec<&Matrix> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

impl Autoencoder for DenseStack {
    type Cache = Vec<DenseCache>;

    fn input_dim(&self) -> usize {
        DenseStack::input_dim(self)
    }

    fn forward_train(&self, x: &Matrix) -> Result<(Matrix, Vec<DenseCache>)> {
        check_width("autoencoder input", x, self.input_dim())?;
        self.forward(x)
    }

    fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        check_width("autoencoder input", x, self.input_dim())?;
        self.infer(x)
    }

    fn backward(&self, cache: &Vec<DenseCache>, d_recon: &Matrix, grads: &mut Self) -> Result<()> {
        self.backward_input(cache, d_recon, grads).map(drop)
    }
}

/// Layer widths `m → hidden… → n → hidden reversed… → m`.
pub fn autoencoder_sizes(config: &ModelConfig) -> Vec<usize> {
    let mut sizes = vec![config.input_dim];
    sizes.extend(&config.hidden_sizes);
    sizes.push(config.latent_dim);
    sizes.extend(config.hidden_sizes.iter().rev());
    sizes.push(config.input_dim);
    sizes
}

/// Layer widths `m → ⌈m/2⌉ → ⌈m/4⌉ → 1`.
pub fn discriminator_sizes(input_dim: usize) -> Vec<usize> {
    vec![input_dim, input_dim.div_ceil(2), input_dim.div_ceil(4), 1]
}

/// Generator plus a sigmoid-headed discriminator over `ℝ^m`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialNet {
    pub generator: DenseStack,
    pub discriminator: DenseStack,
}

impl AdversarialNet {
    /// Discriminator output per row, each in `(0, 1)`.
    pub fn discriminate(&self, x: &Matrix) -> Result<Vec<f64>> {
        check_width("discriminator input", x, self.discriminator.input_dim())?;
        Ok(self.discriminator.infer(x)?.into_data())
    }
}

impl ParamSet for AdversarialNet {
    fn params(&self) -> Vec<&Matrix> {
        let mut out = self.generator.params();
        out.extend(self.discriminator.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.generator.params_mut();
        out.extend(self.discriminator.params_mut());
        out
    }
}

/// Constructor shared by the three recurrent cells.
pub trait BuildCell: RecurrentCell {
    fn build<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self;
}

impl BuildCell for RnnCellParams {
    fn build<R: Rng + ?Sized>(input: usize, hidden: usize, act: Activation, rng: &mut R) -> Self {
        RnnCellParams::new(input, hidden, act, rng)
    }
}

impl BuildCell for LstmCellParams {
    fn build<R: Rng + ?Sized>(input: usize, hidden: usize, _: Activation, rng: &mut R) -> Self {
        LstmCellParams::new(input, hidden, rng)
    }
}

impl BuildCell for GruCellParams {
    fn build<R: Rng + ?Sized>(input: usize, hidden: usize, _: Activation, rng: &mut R) -> Self {
        GruCellParams::new(input, hidden, rng)
    }
}

/// Sequence autoencoder over the chunks of the input vector.
///
/// The encoder reads `⌈m/c⌉` chunks of width `c` (the last one zero-padded)
/// and its final hidden state is the latent code. The decoder is fed the
/// latent code at every step and a dense readout maps each hidden state back
/// to a chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentAutoencoder<C> {
    pub encoder: C,
    pub decoder: C,
    pub readout: DenseParams,
    input_dim: usize,
    chunk: usize,
}

pub struct RecurrentCache<C: RecurrentCell> {
    encoder: Vec<C::Cache>,
    decoder: Vec<C::Cache>,
    readout: Vec<DenseCache>,
    batch: usize,
}

impl<C: BuildCell> RecurrentAutoencoder<C> {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let (c, n) = (config.chunk_size, config.latent_dim);
        Self {
            encoder: C::build(c, n, config.activation, rng),
            decoder: C::build(n, n, config.activation, rng),
            readout: DenseParams::new(n, c, config.output_activation, rng),
            input_dim: config.input_dim,
            chunk: c,
        }
    }

    fn steps(&self) -> usize {
        self.input_dim.div_ceil(self.chunk)
    }

    /// Latent code for each row of `x`.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        check_width("recurrent autoencoder input", x, self.input_dim)?;
        let mut state = self.encoder.zero_state(x.rows());
        for t in 0..self.steps() {
            state = self.encoder.step(&x.column_block(t * self.chunk, self.chunk), &state)?.0;
        }
        Ok(state.h)
    }
}

fn zero_like_state(state: &CellState) -> CellState {
    CellState {
        h: Matrix::zeros(state.h.rows(), state.h.cols()),
        c: state.c.as_ref().map(|c| Matrix::zeros(c.rows(), c.cols())),
    }
}

impl<C: BuildCell> ParamSet for RecurrentAutoencoder<C> {
    fn params(&self) -> Vec<&Matrix> {
        let mut out = self.encoder.params();
        out.extend(self.decoder.params());
        out.extend(self.readout.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.encoder.params_mut();
        out.extend(self.decoder.params_mut());
        out.extend(self.readout.params_mut());
        out
    }
}

impl<C: BuildCell> Autoencoder for RecurrentAutoencoder<C> {
    type Cache = RecurrentCache<C>;

    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn forward_train(&self, x: &Matrix) -> Result<(Matrix, RecurrentCache<C>)> {
        check_width("recurrent autoencoder input", x, self.input_dim)?;
        let steps = self.steps();
        let batch = x.rows();
        let mut encoder = Vec::with_capacity(steps);
        let mut state = self.encoder.zero_state(batch);
        for t in 0..steps {
            let (next, cache) = self
                .encoder
                .step(&x.column_block(t * self.chunk, self.chunk), &state)?;
            encoder.push(cache);
            state = next;
        }
        let z = state.h;

        let mut decoder = Vec::with_capacity(steps);
        let mut readout = Vec::with_capacity(steps);
        let mut recon = Matrix::zeros(batch, self.input_dim);
        let mut state = self.decoder.zero_state(batch);
        for t in 0..steps {
            let (next, cache) = self.decoder.step(&z, &state)?;
            decoder.push(cache);
            let (y, rcache) = self.readout.forward(&next.h)?;
            readout.push(rcache);
            recon.set_column_block(t * self.chunk, &y)?;
            state = next;
        }
        Ok((
            recon,
            RecurrentCache {
                encoder,
                decoder,
                readout,
                batch,
            },
        ))
    }

    fn backward(&self, cache: &RecurrentCache<C>, d_recon: &Matrix, grads: &mut Self) -> Result<()> {
        let steps = self.steps();
        let n = self.decoder.hidden_dim();
        let batch = cache.batch;

        let mut d_state = zero_like_state(&self.decoder.zero_state(batch));
        let mut dz = Matrix::zeros(batch, n);
        for t in (0..steps).rev() {
            // Padding columns past `m` read as zero, so they carry no gradient.
            let dy = d_recon.column_block(t * self.chunk, self.chunk);
            let dh = self.readout.backward(&cache.readout[t], &dy, &mut grads.readout)?;
            d_state.h.add_assign(&dh)?;
            let (dx, prev) = self
                .decoder
                .step_backward(&cache.decoder[t], &d_state, &mut grads.decoder)?;
            dz.add_assign(&dx)?;
            d_state = prev;
        }

        let mut d_state = zero_like_state(&self.encoder.zero_state(batch));
        d_state.h = dz;
        for t in (0..steps).rev() {
            let (_, prev) = self
                .encoder
                .step_backward(&cache.encoder[t], &d_state, &mut grads.encoder)?;
            d_state = prev;
        }
        Ok(())
    }
}

/// Dense layer, attention over the chunk positions of its output, then a
/// dense decoder from the attention context.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionAutoencoder {
    pub encoder: DenseParams,
    pub attention: AttentionParams,
    pub decoder: DenseParams,
    positions: usize,
    chunk: usize,
}

pub struct AttentionAeCache {
    encoder: DenseCache,
    attention: AttentionCache,
    decoder: DenseCache,
}

impl AttentionAutoencoder {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let (m, n, c) = (config.input_dim, config.latent_dim, config.chunk_size);
        let hidden = config
            .hidden_sizes
            .first()
            .copied()
            .unwrap_or_else(|| m.div_ceil(2));
        let positions = hidden.div_ceil(c).max(2);
        let mut attention = AttentionParams::new(c, n, rng);
        attention.similarity = config.attention_similarity;
        Self {
            encoder: DenseParams::new(m, positions * c, config.activation, rng),
            attention,
            decoder: DenseParams::new(n, m, config.output_activation, rng),
            positions,
            chunk: c,
        }
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    fn split(&self, h: &Matrix) -> Vec<Matrix> {
        (0..self.positions)
            .map(|t| h.column_block(t * self.chunk, self.chunk))
            .collect()
    }

    /// Attention weights over the positions for each row of `x`.
    pub fn attention_weights(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_train(x)?.1.attention.weights().clone())
    }
}

impl ParamSet for AttentionAutoencoder {
    fn params(&self) -> Vec<&Matrix> {
        let mut out = self.encoder.params();
        out.extend(self.attention.params());
        out.extend(self.decoder.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.encoder.params_mut();
        out.extend(self.attention.params_mut());
        out.extend(self.decoder.params_mut());
        out
    }
}

impl Autoencoder for AttentionAutoencoder {
    type Cache = AttentionAeCache;

    fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    fn forward_train(&self, x: &Matrix) -> Result<(Matrix, AttentionAeCache)> {
        check_width("attention autoencoder input", x, self.input_dim())?;
        let (h, encoder) = self.encoder.forward(x)?;
        let (ctx, attention) = self.attention.forward(&self.split(&h))?;
        let (recon, decoder) = self.decoder.forward(&ctx)?;
        Ok((
            recon,
            AttentionAeCache {
                encoder,
                attention,
                decoder,
            },
        ))
    }

    fn backward(&self, cache: &AttentionAeCache, d_recon: &Matrix, grads: &mut Self) -> Result<()> {
        let d_ctx = self
            .decoder
            .backward(&cache.decoder, d_recon, &mut grads.decoder)?;
        let (d_seq, _) = self
            .attention
            .backward(&cache.attention, &d_ctx, &mut grads.attention)?;
        let mut d_h = Matrix::zeros(d_recon.rows(), self.positions * self.chunk);
        for (t, d) in d_seq.iter().enumerate() {
            d_h.set_column_block(t * self.chunk, d)?;
        }
        self.encoder
            .backward(&cache.encoder, &d_h, &mut grads.encoder)
            .map(drop)
    }
}

/// Parameters of any of the six models.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Dense(DenseStack),
    Adversarial(AdversarialNet),
    Rnn(RecurrentAutoencoder<RnnCellParams>),
    Lstm(RecurrentAutoencoder<LstmCellParams>),
    Gru(RecurrentAutoencoder<GruCellParams>),
    Attention(AttentionAutoencoder),
}

/// Runs `$body` with `$g` bound to the reconstructing network.
macro_rules! with_generator {
    ($net:expr, |$g:ident| $body:expr) => {
        match $net {
            Network::Dense($g) => $body,
            Network::Adversarial(AdversarialNet { generator: $g, .. }) => $body,
            Network::Rnn($g) => $body,
            Network::Lstm($g) => $body,
            Network::Gru($g) => $body,
            Network::Attention($g) => $body,
        }
    };
}
pub(crate) use with_generator;

impl Network {
    /// Fresh weights for `config`. The generator draws from `rng`, the
    /// discriminator (AAE only) from `disc_rng`.
    pub fn build<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R, disc_rng: &mut R) -> Self {
        let (hidden, output) = (config.activation, config.output_activation);
        match config.architecture {
            Architecture::Ae => {
                Network::Dense(DenseStack::new(&autoencoder_sizes(config), hidden, output, rng))
            }
            Architecture::Aae => Network::Adversarial(AdversarialNet {
                generator: DenseStack::new(&autoencoder_sizes(config), hidden, output, rng),
                discriminator: DenseStack::new(
                    &discriminator_sizes(config.input_dim),
                    hidden,
                    Activation::Sigmoid,
                    disc_rng,
                ),
            }),
            Architecture::RnnAe => Network::Rnn(RecurrentAutoencoder::new(config, rng)),
            Architecture::LstmAe => Network::Lstm(RecurrentAutoencoder::new(config, rng)),
            Architecture::GruAe => Network::Gru(RecurrentAutoencoder::new(config, rng)),
            Architecture::AtAe => Network::Attention(AttentionAutoencoder::new(config, rng)),
        }
    }

    pub fn architecture(&self) -> Architecture {
        match self {
            Network::Dense(_) => Architecture::Ae,
            Network::Adversarial(_) => Architecture::Aae,
            Network::Rnn(_) => Architecture::RnnAe,
            Network::Lstm(_) => Architecture::LstmAe,
            Network::Gru(_) => Architecture::GruAe,
            Network::Attention(_) => Architecture::AtAe,
        }
    }

    pub fn input_dim(&self) -> usize {
        with_generator!(self, |g| g.input_dim())
    }

    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        with_generator!(self, |g| g.reconstruct(x))
    }

    pub fn discriminator(&self) -> Option<&DenseStack> {
        match self {
            Network::Adversarial(a) => Some(&a.discriminator),
            _ => None,
        }
    }

    /// Parameters of the reconstructing part only.
    pub fn generator_params(&self) -> Vec<&Matrix> {
        with_generator!(self, |g| g.params())
    }

    pub fn generator_params_mut(&mut self) -> Vec<&mut Matrix> {
        with_generator!(self, |g| g.params_mut())
    }

    pub fn generator_flat(&self) -> Vec<f64> {
        self.generator_params()
            .into_iter()
            .flat_map(|m| m.data().iter().copied())
            .collect()
    }

    pub fn assign_generator_flat(&mut self, values: &[f64]) -> Result<()> {
        with_generator!(self, |g| g.assign_flat(values))
    }
}

impl ParamSet for Network {
    fn params(&self) -> Vec<&Matrix> {
        match self {
            Network::Adversarial(a) => a.params(),
            other => other.generator_params(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Network::Adversarial(a) => a.params_mut(),
            other => other.generator_params_mut(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn config(arch: Architecture) -> ModelConfig {
        let mut c = ModelConfig::new(arch, 10);
        c.latent_dim = 3;
        c.hidden_sizes = vec![5];
        c.chunk_size = 4;
        c
    }

    fn build(arch: Architecture) -> Network {
        let mut a = ChaCha8Rng::seed_from_u64(1);
        let mut b = ChaCha8Rng::seed_from_u64(2);
        Network::build(&config(arch), &mut a, &mut b)
    }

    #[test]
    fn layer_shapes() {
        assert_eq!(autoencoder_sizes(&config(Architecture::Ae)), vec![10, 5, 3, 5, 10]);
        assert_eq!(discriminator_sizes(300), vec![300, 150, 75, 1]);
        assert_eq!(discriminator_sizes(6), vec![6, 3, 2, 1]);
    }

    #[test]
    fn reconstructions_have_input_shape_and_lie_in_unit_interval() {
        let x = Matrix::from_rows(&[
            vec![1., 0., 0., 1., 1., 0., 0., 0., 1., 0.],
            vec![0.; 10],
        ])
        .unwrap();
        for arch in Architecture::ALL {
            let net = build(arch);
            assert_eq!(net.architecture(), arch);
            let r = net.reconstruct(&x).unwrap();
            assert_eq!((r.rows(), r.cols()), (2, 10), "{arch}");
            assert!(r.data().iter().all(|&v| v > 0.0 && v < 1.0), "{arch}");
        }
    }

    #[test]
    fn wrong_width_is_a_shape_error() {
        let x = Matrix::zeros(1, 7);
        for arch in Architecture::ALL {
            assert!(matches!(build(arch).reconstruct(&x), Err(Error::Shape { .. })), "{arch}");
        }
    }

    #[test]
    fn discriminator_outputs_probabilities() {
        let Network::Adversarial(a) = build(Architecture::Aae) else {
            unreachable!()
        };
        let d = a.discriminate(&Matrix::filled(3, 10, 1.0)).unwrap();
        assert_eq!(d.len(), 3);
        assert!(d.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn recurrent_latent_is_final_hidden_state() {
        let Network::Gru(g) = build(Architecture::GruAe) else {
            unreachable!()
        };
        let z = g.encode(&Matrix::filled(2, 10, 1.0)).unwrap();
        assert_eq!((z.rows(), z.cols()), (2, 3));
    }

    #[test]
    fn attention_has_at_least_two_positions() {
        let Network::Attention(a) = build(Architecture::AtAe) else {
            unreachable!()
        };
        assert_eq!(a.positions(), 2);
        let w = a.attention_weights(&Matrix::filled(1, 10, 1.0)).unwrap();
        assert!((w.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generator_flat_round_trips() {
        for arch in Architecture::ALL {
            let mut net = build(arch);
            let flat = net.generator_flat();
            let bumped: Vec<f64> = flat.iter().map(|v| v + 1.0).collect();
            net.assign_generator_flat(&bumped).unwrap();
            assert_eq!(net.generator_flat(), bumped);
            assert!(net.param_count() >= flat.len());
        }
    }
}
