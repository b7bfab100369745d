//! Forward and backward passes for the building blocks of every autoencoder:
//! dense layers, RNN/LSTM/GRU cells and a single-head attention layer.
//!
//! All layers work on batches: an input of shape `batch×in` produces an
//! output of shape `batch×out`. Weights are stored `out×in`, so a layer
//! computes `x·Wᵀ + b` row by row. Gradients are accumulated into a value of
//! the same type as the parameters (see [`ParamSet`]).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Activation, Matrix};

/// A bundle of parameter matrices exposed in a fixed canonical order.
///
/// The order drives serialization, optimizer state and gradient checks.
pub trait ParamSet {
    fn params(&self) -> Vec<&Matrix>;
    fn params_mut(&mut self) -> Vec<&mut Matrix>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|m| m.len()).sum()
    }

    /// Concatenation of every parameter, in canonical order.
    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for p in self.params() {
            out.extend_from_slice(p.data());
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`].
    fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if values.len() != expected {
            return Err(Error::shape(
                "assign_flat",
                format!("{expected} parameters"),
                format!("{} values", values.len()),
            ));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn zero(&mut self) {
        for p in self.params_mut() {
            p.data_mut().fill(0.0);
        }
    }

    /// A copy with every parameter set to zero, used as a gradient buffer.
    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut out = self.clone();
        out.zero();
        out
    }
}

pub(crate) fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// `x·Wᵀ`, checking that `x` has as many columns as `w`.
fn project(x: &Matrix, w: &Matrix) -> Result<Matrix> {
    x.matmul_transposed(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    /// `out×in`.
    pub weight: Matrix,
    /// `1×out`.
    pub bias: Matrix,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    input: Matrix,
    output: Matrix,
}

impl DenseCache {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

impl DenseParams {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        output_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = glorot_limit(input_dim, output_dim);
        Self {
            weight: Matrix::uniform(output_dim, input_dim, limit, rng),
            bias: Matrix::zeros(1, output_dim),
            activation,
        }
    }

    pub fn from_parts(weight: Matrix, bias: &[f64], activation: Activation) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(Error::shape(
                "DenseParams",
                weight.shape(),
                format!("bias of length {}", bias.len()),
            ));
        }
        Ok(Self {
            weight,
            bias: Matrix::row_vector(bias),
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, DenseCache)> {
        let output = self.infer(x)?;
        Ok((
            output.clone(),
            DenseCache {
                input: x.clone(),
                output,
            },
        ))
    }

    /// Forward pass without keeping a cache.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = project(x, &self.weight)?;
        z.add_row_broadcast(&self.bias)?;
        Ok(self.activation.forward(&z))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(
        &self,
        cache: &DenseCache,
        grad_output: &Matrix,
        grads: &mut DenseParams,
    ) -> Result<Matrix> {
        let dz = self.activation.backward(&cache.output, grad_output)?;
        grads.weight.add_assign(&dz.transposed_matmul(&cache.input)?)?;
        grads.bias.add_assign(&dz.column_sums())?;
        dz.matmul(&self.weight)
    }
}

impl ParamSet for DenseParams {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Single-vector convenience wrapper: `activation(W x + b)`.
pub fn dense_forward(x: &[f64], p: &DenseParams) -> Result<Vec<f64>> {
    Ok(p.infer(&Matrix::row_vector(x))?.into_data())
}

/// Hidden (and, for LSTM, cell) state of a recurrent cell for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Matrix,
    pub c: Option<Matrix>,
}

impl CellState {
    pub fn hidden(h: Matrix) -> Self {
        Self { h, c: None }
    }
}

/// A recurrent cell with an explicit per-step backward pass.
pub trait RecurrentCell: ParamSet + Clone {
    type Cache;

    fn input_dim(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn zero_state(&self, batch: usize) -> CellState;

    fn step(&self, x: &Matrix, state: &CellState) -> Result<(CellState, Self::Cache)>;

    /// Given the gradient with respect to this step's output state, accumulate
    /// parameter gradients into `grads` and return the gradients with respect
    /// to the step input and the previous state.
    fn step_backward(
        &self,
        cache: &Self::Cache,
        d_state: &CellState,
        grads: &mut Self,
    ) -> Result<(Matrix, CellState)>;
}

/// The `{W_x, W_h, b}` block shared by every gate.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `hidden×in`.
    pub w_x: Matrix,
    /// `hidden×hidden`.
    pub w_h: Matrix,
    /// `1×hidden`.
    pub bias: Matrix,
}

impl GateParams {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            w_x: Matrix::uniform(hidden_dim, input_dim, glorot_limit(input_dim, hidden_dim), rng),
            w_h: Matrix::uniform(
                hidden_dim,
                hidden_dim,
                glorot_limit(hidden_dim, hidden_dim),
                rng,
            ),
            bias: Matrix::zeros(1, hidden_dim),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_x: Matrix::zeros(hidden_dim, input_dim),
            w_h: Matrix::zeros(hidden_dim, hidden_dim),
            bias: Matrix::zeros(1, hidden_dim),
        }
    }

    fn check(&self, name: &'static str) -> Result<()> {
        let h = self.w_x.rows();
        if self.w_h.rows() != h || self.w_h.cols() != h {
            return Err(Error::shape(name, self.w_x.shape(), self.w_h.shape()));
        }
        if self.bias.rows() != 1 || self.bias.cols() != h {
            return Err(Error::shape(name, self.w_x.shape(), self.bias.shape()));
        }
        Ok(())
    }

    /// `x·W_xᵀ + h·W_hᵀ + b`.
    fn preactivation(&self, x: &Matrix, h: &Matrix) -> Result<Matrix> {
        let mut z = project(x, &self.w_x)?;
        z.add_assign(&project(h, &self.w_h)?)?;
        z.add_row_broadcast(&self.bias)?;
        Ok(z)
    }

    /// Accumulates gradients for pre-activation gradient `dz` and adds the
    /// input/hidden contributions to `dx` and `dh`.
    fn backward(
        &self,
        dz: &Matrix,
        x: &Matrix,
        h: &Matrix,
        grads: &mut GateParams,
        dx: &mut Matrix,
        dh: &mut Matrix,
    ) -> Result<()> {
        grads.w_x.add_assign(&dz.transposed_matmul(x)?)?;
        grads.w_h.add_assign(&dz.transposed_matmul(h)?)?;
        grads.bias.add_assign(&dz.column_sums())?;
        dx.add_assign(&dz.matmul(&self.w_x)?)?;
        dh.add_assign(&dz.matmul(&self.w_h)?)?;
        Ok(())
    }

    fn params(&self) -> [&Matrix; 3] {
        [&self.w_x, &self.w_h, &self.bias]
    }

    fn params_mut(&mut self) -> [&mut Matrix; 3] {
        [&mut self.w_x, &mut self.w_h, &mut self.bias]
    }
}

fn check_state(op: &'static str, x: &Matrix, h: &Matrix, input_dim: usize, hidden: usize) -> Result<()> {
    if x.cols() != input_dim {
        return Err(Error::shape(op, format!("input width {input_dim}"), x.shape()));
    }
    if h.cols() != hidden || h.rows() != x.rows() {
        return Err(Error::shape(op, x.shape(), h.shape()));
    }
    Ok(())
}

/// Elman cell: `h_t = f(W_hx x_t + W_hh h_{t-1} + b_h)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnCellParams {
    pub w_hx: Matrix,
    pub w_hh: Matrix,
    pub b_h: Matrix,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
pub struct RnnStepCache {
    x: Matrix,
    h_prev: Matrix,
    h: Matrix,
}

impl RnnCellParams {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let g = GateParams::new(input_dim, hidden_dim, rng);
        Self {
            w_hx: g.w_x,
            w_hh: g.w_h,
            b_h: g.bias,
            activation,
        }
    }

    pub fn from_parts(w_hx: Matrix, w_hh: Matrix, b_h: &[f64], activation: Activation) -> Result<Self> {
        if w_hh.rows() != w_hh.cols() {
            return Err(Error::shape("RnnCellParams W_hh", w_hh.shape(), "square"));
        }
        let p = Self {
            w_hx,
            w_hh,
            b_h: Matrix::row_vector(b_h),
            activation,
        };
        p.as_gate().check("RnnCellParams")?;
        Ok(p)
    }

    fn as_gate(&self) -> GateParams {
        GateParams {
            w_x: self.w_hx.clone(),
            w_h: self.w_hh.clone(),
            bias: self.b_h.clone(),
        }
    }

    fn preactivation(&self, x: &Matrix, h: &Matrix) -> Result<Matrix> {
        let mut z = project(x, &self.w_hx)?;
        z.add_assign(&project(h, &self.w_hh)?)?;
        z.add_row_broadcast(&self.b_h)?;
        Ok(z)
    }
}

impl ParamSet for RnnCellParams {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w_hx, &self.w_hh, &self.b_h]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_hx, &mut self.w_hh, &mut self.b_h]
    }
}

impl RecurrentCell for RnnCellParams {
    type Cache = RnnStepCache;

    fn input_dim(&self) -> usize {
        self.w_hx.cols()
    }

    fn hidden_dim(&self) -> usize {
        self.w_hh.rows()
    }

    fn zero_state(&self, batch: usize) -> CellState {
        CellState::hidden(Matrix::zeros(batch, self.hidden_dim()))
    }

    fn step(&self, x: &Matrix, state: &CellState) -> Result<(CellState, RnnStepCache)> {
        check_state("rnn_cell_step", x, &state.h, self.input_dim(), self.hidden_dim())?;
        let h = self.activation.forward(&self.preactivation(x, &state.h)?);
        let cache = RnnStepCache {
            x: x.clone(),
            h_prev: state.h.clone(),
            h: h.clone(),
        };
        Ok((CellState::hidden(h), cache))
    }

    fn step_backward(
        &self,
        cache: &RnnStepCache,
        d_state: &CellState,
        grads: &mut Self,
    ) -> Result<(Matrix, CellState)> {
        let dz = self.activation.backward(&cache.h, &d_state.h)?;
        grads.w_hx.add_assign(&dz.transposed_matmul(&cache.x)?)?;
        grads.w_hh.add_assign(&dz.transposed_matmul(&cache.h_prev)?)?;
        grads.b_h.add_assign(&dz.column_sums())?;
        let dx = dz.matmul(&self.w_hx)?;
        let dh = dz.matmul(&self.w_hh)?;
        Ok((dx, CellState::hidden(dh)))
    }
}

pub fn rnn_cell_step(x_t: &[f64], h_prev: &[f64], p: &RnnCellParams) -> Result<Vec<f64>> {
    let state = CellState::hidden(Matrix::row_vector(h_prev));
    let (next, _) = p.step(&Matrix::row_vector(x_t), &state)?;
    Ok(next.h.into_data())
}

/// LSTM cell. Gates are stored in the canonical order input, forget, output,
/// candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCellParams {
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub output_gate: GateParams,
    pub candidate: GateParams,
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Matrix,
    h_prev: Matrix,
    c_prev: Matrix,
    i: Matrix,
    f: Matrix,
    o: Matrix,
    g: Matrix,
    c_tanh: Matrix,
}

impl LstmCellParams {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            input_gate: GateParams::new(input_dim, hidden_dim, rng),
            forget_gate: GateParams::new(input_dim, hidden_dim, rng),
            output_gate: GateParams::new(input_dim, hidden_dim, rng),
            candidate: GateParams::new(input_dim, hidden_dim, rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_gate: GateParams::zeros(input_dim, hidden_dim),
            forget_gate: GateParams::zeros(input_dim, hidden_dim),
            output_gate: GateParams::zeros(input_dim, hidden_dim),
            candidate: GateParams::zeros(input_dim, hidden_dim),
        }
    }

    fn gates(&self) -> [&GateParams; 4] {
        [
            &self.input_gate,
            &self.forget_gate,
            &self.output_gate,
            &self.candidate,
        ]
    }
}

impl ParamSet for LstmCellParams {
    fn params(&self) -> Vec<&Matrix> {
        self.gates().into_iter().flat_map(GateParams::params).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(12);
        out.extend(self.input_gate.params_mut());
        out.extend(self.forget_gate.params_mut());
        out.extend(self.output_gate.params_mut());
        out.extend(self.candidate.params_mut());
        out
    }
}

impl RecurrentCell for LstmCellParams {
    type Cache = LstmStepCache;

    fn input_dim(&self) -> usize {
        self.input_gate.w_x.cols()
    }

    fn hidden_dim(&self) -> usize {
        self.input_gate.w_x.rows()
    }

    fn zero_state(&self, batch: usize) -> CellState {
        let h = self.hidden_dim();
        CellState {
            h: Matrix::zeros(batch, h),
            c: Some(Matrix::zeros(batch, h)),
        }
    }

    fn step(&self, x: &Matrix, state: &CellState) -> Result<(CellState, LstmStepCache)> {
        check_state("lstm_cell_step", x, &state.h, self.input_dim(), self.hidden_dim())?;
        for g in self.gates() {
            g.check("LstmCellParams")?;
        }
        let c_prev = match &state.c {
            Some(c) if c.shape() == state.h.shape() => c.clone(),
            Some(c) => return Err(Error::shape("lstm_cell_step", state.h.shape(), c.shape())),
            None => Matrix::zeros(state.h.rows(), state.h.cols()),
        };
        let h_prev = &state.h;
        let i = self.input_gate.preactivation(x, h_prev)?.map(sigmoid);
        let f = self.forget_gate.preactivation(x, h_prev)?.map(sigmoid);
        let o = self.output_gate.preactivation(x, h_prev)?.map(sigmoid);
        let g = self.candidate.preactivation(x, h_prev)?.map(f64::tanh);
        let mut c = f.hadamard(&c_prev)?;
        c.add_assign(&i.hadamard(&g)?)?;
        let c_tanh = c.map(f64::tanh);
        let h = o.hadamard(&c_tanh)?;
        let cache = LstmStepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            c_prev,
            i,
            f,
            o,
            g,
            c_tanh,
        };
        Ok((CellState { h, c: Some(c) }, cache))
    }

    fn step_backward(
        &self,
        cache: &LstmStepCache,
        d_state: &CellState,
        grads: &mut Self,
    ) -> Result<(Matrix, CellState)> {
        let dh = &d_state.h;
        let d_o = dh.hadamard(&cache.c_tanh)?;
        // dc = dc_next + dh ⊙ o ⊙ (1 − tanh²(c))
        let mut dc = dh
            .hadamard(&cache.o)?
            .zip_with(&cache.c_tanh, "lstm backward", |a, t| a * (1.0 - t * t))?;
        if let Some(dc_next) = &d_state.c {
            dc.add_assign(dc_next)?;
        }
        let d_i = dc.hadamard(&cache.g)?;
        let d_g = dc.hadamard(&cache.i)?;
        let d_f = dc.hadamard(&cache.c_prev)?;
        let dc_prev = dc.hadamard(&cache.f)?;

        let dz_i = Activation::Sigmoid.backward(&cache.i, &d_i)?;
        let dz_f = Activation::Sigmoid.backward(&cache.f, &d_f)?;
        let dz_o = Activation::Sigmoid.backward(&cache.o, &d_o)?;
        let dz_g = Activation::Tanh.backward(&cache.g, &d_g)?;

        let mut dx = Matrix::zeros(cache.x.rows(), cache.x.cols());
        let mut dh_prev = Matrix::zeros(dh.rows(), dh.cols());
        let (x, h) = (&cache.x, &cache.h_prev);
        self.input_gate
            .backward(&dz_i, x, h, &mut grads.input_gate, &mut dx, &mut dh_prev)?;
        self.forget_gate
            .backward(&dz_f, x, h, &mut grads.forget_gate, &mut dx, &mut dh_prev)?;
        self.output_gate
            .backward(&dz_o, x, h, &mut grads.output_gate, &mut dx, &mut dh_prev)?;
        self.candidate
            .backward(&dz_g, x, h, &mut grads.candidate, &mut dx, &mut dh_prev)?;
        Ok((
            dx,
            CellState {
                h: dh_prev,
                c: Some(dc_prev),
            },
        ))
    }
}

/// Returns `(h_t, c_t)`.
pub fn lstm_cell_step(
    x_t: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    p: &LstmCellParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let state = CellState {
        h: Matrix::row_vector(h_prev),
        c: Some(Matrix::row_vector(c_prev)),
    };
    let (next, _) = p.step(&Matrix::row_vector(x_t), &state)?;
    let c = next.c.expect("lstm state carries a cell vector");
    Ok((next.h.into_data(), c.into_data()))
}

/// GRU cell. Canonical gate order: update, reset, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCellParams {
    pub update_gate: GateParams,
    pub reset_gate: GateParams,
    pub candidate: GateParams,
}

#[derive(Debug, Clone)]
pub struct GruStepCache {
    x: Matrix,
    h_prev: Matrix,
    z: Matrix,
    r: Matrix,
    reset_h: Matrix,
    candidate: Matrix,
}

impl GruCellParams {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        Self {
            update_gate: GateParams::new(input_dim, hidden_dim, rng),
            reset_gate: GateParams::new(input_dim, hidden_dim, rng),
            candidate: GateParams::new(input_dim, hidden_dim, rng),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            update_gate: GateParams::zeros(input_dim, hidden_dim),
            reset_gate: GateParams::zeros(input_dim, hidden_dim),
            candidate: GateParams::zeros(input_dim, hidden_dim),
        }
    }

    /// The candidate state `h̃` for the given input, for inspection.
    pub fn candidate_state(&self, x: &Matrix, h_prev: &Matrix) -> Result<Matrix> {
        let r = self.reset_gate.preactivation(x, h_prev)?.map(sigmoid);
        let reset_h = r.hadamard(h_prev)?;
        Ok(self.candidate.preactivation(x, &reset_h)?.map(f64::tanh))
    }
}

impl ParamSet for GruCellParams {
    fn params(&self) -> Vec<&Matrix> {
        [&self.update_gate, &self.reset_gate, &self.candidate]
            .into_iter()
            .flat_map(GateParams::params)
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::with_capacity(9);
        out.extend(self.update_gate.params_mut());
        out.extend(self.reset_gate.params_mut());
        out.extend(self.candidate.params_mut());
        out
    }
}

impl RecurrentCell for GruCellParams {
    type Cache = GruStepCache;

    fn input_dim(&self) -> usize {
        self.update_gate.w_x.cols()
    }

    fn hidden_dim(&self) -> usize {
        self.update_gate.w_x.rows()
    }

    fn zero_state(&self, batch: usize) -> CellState {
        CellState::hidden(Matrix::zeros(batch, self.hidden_dim()))
    }

    fn step(&self, x: &Matrix, state: &CellState) -> Result<(CellState, GruStepCache)> {
        check_state("gru_cell_step", x, &state.h, self.input_dim(), self.hidden_dim())?;
        for g in [&self.update_gate, &self.reset_gate, &self.candidate] {
            g.check("GruCellParams")?;
        }
        let h_prev = &state.h;
        let z = self.update_gate.preactivation(x, h_prev)?.map(sigmoid);
        let r = self.reset_gate.preactivation(x, h_prev)?.map(sigmoid);
        let reset_h = r.hadamard(h_prev)?;
        let candidate = self.candidate.preactivation(x, &reset_h)?.map(f64::tanh);
        // h_t = (1 − z) ⊙ h_prev + z ⊙ h̃
        let mut h = h_prev.clone();
        for ((hv, &zv), &cv) in h.data_mut().iter_mut().zip(z.data()).zip(candidate.data()) {
            *hv = (1.0 - zv) * *hv + zv * cv;
        }
        let cache = GruStepCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            z,
            r,
            reset_h,
            candidate,
        };
        Ok((CellState::hidden(h), cache))
    }

    fn step_backward(
        &self,
        cache: &GruStepCache,
        d_state: &CellState,
        grads: &mut Self,
    ) -> Result<(Matrix, CellState)> {
        let dh = &d_state.h;
        let d_candidate = dh.hadamard(&cache.z)?;
        let d_z = dh.hadamard(&cache.candidate.sub(&cache.h_prev)?)?;
        let mut dh_prev = dh.zip_with(&cache.z, "gru backward", |g, z| g * (1.0 - z))?;
        let mut dx = Matrix::zeros(cache.x.rows(), cache.x.cols());

        let dz_c = Activation::Tanh.backward(&cache.candidate, &d_candidate)?;
        let mut d_reset_h = Matrix::zeros(dh.rows(), dh.cols());
        self.candidate.backward(
            &dz_c,
            &cache.x,
            &cache.reset_h,
            &mut grads.candidate,
            &mut dx,
            &mut d_reset_h,
        )?;
        let d_r = d_reset_h.hadamard(&cache.h_prev)?;
        dh_prev.add_assign(&d_reset_h.hadamard(&cache.r)?)?;

        let dz_z = Activation::Sigmoid.backward(&cache.z, &d_z)?;
        let dz_r = Activation::Sigmoid.backward(&cache.r, &d_r)?;
        let (x, h) = (&cache.x, &cache.h_prev);
        self.update_gate
            .backward(&dz_z, x, h, &mut grads.update_gate, &mut dx, &mut dh_prev)?;
        self.reset_gate
            .backward(&dz_r, x, h, &mut grads.reset_gate, &mut dx, &mut dh_prev)?;
        Ok((dx, CellState::hidden(dh_prev)))
    }
}

pub fn gru_cell_step(x_t: &[f64], h_prev: &[f64], p: &GruCellParams) -> Result<Vec<f64>> {
    let state = CellState::hidden(Matrix::row_vector(h_prev));
    let (next, _) = p.step(&Matrix::row_vector(x_t), &state)?;
    Ok(next.h.into_data())
}

/// Similarity between the query and each key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    /// `q·k`.
    Dot,
    /// `q·k / √d`.
    #[default]
    ScaledDot,
}

impl Similarity {
    fn scale(self, dim: usize) -> f64 {
        match self {
            Similarity::Dot => 1.0,
            Similarity::ScaledDot => 1.0 / (dim.max(1) as f64).sqrt(),
        }
    }
}

impl std::str::FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dot" => Ok(Similarity::Dot),
            "scaled_dot" | "scaled-dot" => Ok(Similarity::ScaledDot),
            other => Err(Error::Config(format!("unknown attention similarity `{other}`"))),
        }
    }
}

/// Single-head attention over a sequence.
///
/// Keys and values are projected from every position; the query is
/// projected from a separate query input, by default the mean of the
/// sequence positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `d×in`.
    pub w_query: Matrix,
    /// `d×in`.
    pub w_key: Matrix,
    /// `d_v×in`.
    pub w_value: Matrix,
    pub similarity: Similarity,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    seq: Vec<Matrix>,
    query_input: Matrix,
    pooled: bool,
    query: Matrix,
    keys: Vec<Matrix>,
    values: Vec<Matrix>,
    /// `batch×T`.
    weights: Matrix,
}

impl AttentionCache {
    pub fn weights(&self) -> &Matrix {
        &self.weights
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(scores: &Matrix) -> Matrix {
    let mut out = scores.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn row_dots(a: &Matrix, b: &Matrix) -> Vec<f64> {
    (0..a.rows())
        .map(|r| a.row(r).iter().zip(b.row(r)).map(|(x, y)| x * y).sum())
        .collect()
}

/// Multiplies row `r` of `m` by `factors[r]`.
fn scale_rows(m: &Matrix, factors: &[f64]) -> Matrix {
    let mut out = m.clone();
    for (r, &f) in factors.iter().enumerate() {
        for v in out.row_mut(r) {
            *v *= f;
        }
    }
    out
}

impl AttentionParams {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, dim: usize, rng: &mut R) -> Self {
        let limit = glorot_limit(input_dim, dim);
        Self {
            w_query: Matrix::uniform(dim, input_dim, limit, rng),
            w_key: Matrix::uniform(dim, input_dim, limit, rng),
            w_value: Matrix::uniform(dim, input_dim, limit, rng),
            similarity: Similarity::default(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_key.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w_value.rows()
    }

    fn check(&self, seq: &[Matrix]) -> Result<()> {
        if seq.is_empty() {
            return Err(Error::Domain("attention over an empty sequence".into()));
        }
        if self.w_query.rows() != self.w_key.rows() {
            return Err(Error::shape(
                "attention projections",
                self.w_query.shape(),
                self.w_key.shape(),
            ));
        }
        let batch = seq[0].rows();
        for x in seq {
            if x.cols() != self.input_dim() || x.rows() != batch {
                return Err(Error::shape("attention", seq[0].shape(), x.shape()));
            }
        }
        Ok(())
    }

    /// Attention with the query projected from the mean of the positions.
    pub fn forward(&self, seq: &[Matrix]) -> Result<(Matrix, AttentionCache)> {
        self.check(seq)?;
        let mut mean = Matrix::zeros(seq[0].rows(), seq[0].cols());
        for x in seq {
            mean.add_assign(x)?;
        }
        let mean = mean.scale(1.0 / seq.len() as f64);
        let (ctx, mut cache) = self.forward_with_query(seq, &mean)?;
        cache.pooled = true;
        Ok((ctx, cache))
    }

    /// Attention with an explicit query input (`batch×in`).
    pub fn forward_with_query(
        &self,
        seq: &[Matrix],
        query_input: &Matrix,
    ) -> Result<(Matrix, AttentionCache)> {
        self.check(seq)?;
        if query_input.shape() != seq[0].shape() {
            return Err(Error::shape("attention query", seq[0].shape(), query_input.shape()));
        }
        let scale = self.similarity.scale(self.w_key.rows());
        let query = project(query_input, &self.w_query)?;
        let keys = seq
            .iter()
            .map(|x| project(x, &self.w_key))
            .collect::<Result<Vec<_>>>()?;
        let values = seq
            .iter()
            .map(|x| project(x, &self.w_value))
            .collect::<Result<Vec<_>>>()?;
        let batch = query.rows();
        let steps = seq.len();
        let mut scores = Matrix::zeros(batch, steps);
        for (t, k) in keys.iter().enumerate() {
            for (b, e) in row_dots(&query, k).into_iter().enumerate() {
                scores.set(b, t, e * scale);
            }
        }
        let weights = softmax_rows(&scores);
        let mut context = Matrix::zeros(batch, self.output_dim());
        for (t, v) in values.iter().enumerate() {
            let alpha: Vec<f64> = (0..batch).map(|b| weights.get(b, t)).collect();
            context.add_assign(&scale_rows(v, &alpha))?;
        }
        let cache = AttentionCache {
            seq: seq.to_vec(),
            query_input: query_input.clone(),
            pooled: false,
            query,
            keys,
            values,
            weights,
        };
        Ok((context, cache))
    }

    /// Returns the gradient for each sequence position and for the query
    /// input. For a mean-pooled query the query gradient is already folded
    /// into the position gradients.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        d_context: &Matrix,
        grads: &mut AttentionParams,
    ) -> Result<(Vec<Matrix>, Matrix)> {
        let steps = cache.seq.len();
        let batch = d_context.rows();
        let scale = self.similarity.scale(self.w_key.rows());

        // dα_t = dctx · v_t ; dv_t = α_t dctx
        let mut d_alpha = Matrix::zeros(batch, steps);
        let mut d_values = Vec::with_capacity(steps);
        for (t, v) in cache.values.iter().enumerate() {
            for (b, d) in row_dots(d_context, v).into_iter().enumerate() {
                d_alpha.set(b, t, d);
            }
            let alpha: Vec<f64> = (0..batch).map(|b| cache.weights.get(b, t)).collect();
            d_values.push(scale_rows(d_context, &alpha));
        }
        // Softmax Jacobian: de = α ⊙ (dα − Σ α dα).
        let mut d_scores = Matrix::zeros(batch, steps);
        for b in 0..batch {
            let mut inner = 0.0;
            for t in 0..steps {
                inner += cache.weights.get(b, t) * d_alpha.get(b, t);
            }
            for t in 0..steps {
                let a = cache.weights.get(b, t);
                d_scores.set(b, t, a * (d_alpha.get(b, t) - inner) * scale);
            }
        }

        let mut d_query = Matrix::zeros(batch, cache.query.cols());
        let mut d_seq = Vec::with_capacity(steps);
        for t in 0..steps {
            let e: Vec<f64> = (0..batch).map(|b| d_scores.get(b, t)).collect();
            d_query.add_assign(&scale_rows(&cache.keys[t], &e))?;
            let d_key = scale_rows(&cache.query, &e);
            let x = &cache.seq[t];
            grads.w_key.add_assign(&d_key.transposed_matmul(x)?)?;
            grads.w_value.add_assign(&d_values[t].transposed_matmul(x)?)?;
            let mut dx = d_key.matmul(&self.w_key)?;
            dx.add_assign(&d_values[t].matmul(&self.w_value)?)?;
            d_seq.push(dx);
        }
        grads
            .w_query
            .add_assign(&d_query.transposed_matmul(&cache.query_input)?)?;
        let d_query_input = d_query.matmul(&self.w_query)?;
        if cache.pooled {
            let share = d_query_input.scale(1.0 / steps as f64);
            for dx in &mut d_seq {
                dx.add_assign(&share)?;
            }
        }
        Ok((d_seq, d_query_input))
    }
}

impl ParamSet for AttentionParams {
    fn params(&self) -> Vec<&Matrix> {
        vec![&self.w_query, &self.w_key, &self.w_value]
    }

    fn params_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w_query, &mut self.w_key, &mut self.w_value]
    }
}

fn sequence_to_matrices(x_seq: &[Vec<f64>]) -> Vec<Matrix> {
    x_seq.iter().map(|x| Matrix::row_vector(x)).collect()
}

/// Mean-pooled-query attention over one sequence; returns `(context, weights)`.
pub fn attention(x_seq: &[Vec<f64>], p: &AttentionParams) -> Result<(Vec<f64>, Vec<f64>)> {
    let (ctx, cache) = p.forward(&sequence_to_matrices(x_seq))?;
    Ok((ctx.into_data(), cache.weights.into_data()))
}

/// Attention over one sequence with an explicit query input.
pub fn attention_with_query(
    x_seq: &[Vec<f64>],
    query_input: &[f64],
    p: &AttentionParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (ctx, cache) = p.forward_with_query(
        &sequence_to_matrices(x_seq),
        &Matrix::row_vector(query_input),
    )?;
    Ok((ctx.into_data(), cache.weights.into_data()))
}
