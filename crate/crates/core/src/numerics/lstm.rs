//! Single-layer LSTM over one sequence.
//!
//! Gates are packed in the order input, forget, cell candidate, output, so
//! rows `[k·h, (k+1)·h)` of `w_input`, `w_hidden` and `bias` belong to gate `k`:
//!
//! ```text
//! z_t = W_x x_t + W_h h̃_{t-1} + b        h̃_{t-1} = mask_{t-1} ⊙ h_{t-1}
//! i = σ(z_i)  f = σ(z_f)  g = tanh(z_g)  o = σ(z_o)
//! c_t = f ⊙ c_{t-1} + i ⊙ g
//! h_t = o ⊙ tanh(c_t)
//! ```
//!
//! With dropout the mask is drawn fresh for every timestep and only touches
//! the recurrent path; the returned hidden states are unmasked.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::activation::{sigmoid, tanh};
use super::dropout::dropout_mask;
use super::tensor::{axpy, Tensor2};
use crate::error::{check_dim, Error, Result};
use crate::rng::{rng_from, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    /// `4h × D`
    pub w_input: Tensor2,
    /// `4h × h`
    pub w_hidden: Tensor2,
    /// `4h`
    pub bias: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        Self {
            w_input: Tensor2::zeros(4 * hidden_size, input_size),
            w_hidden: Tensor2::zeros(4 * hidden_size, hidden_size),
            bias: vec![0.0; 4 * hidden_size],
        }
    }

    /// Weights uniform in `[-1/√h, 1/√h]`, zero bias.
    pub fn uniform(input_size: usize, hidden_size: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / libm::sqrt(hidden_size as f64);
        let mut p = Self::zeros(input_size, hidden_size);
        for w in p.w_input.data_mut().iter_mut().chain(p.w_hidden.data_mut()) {
            *w = rng.gen_range(-bound..=bound);
        }
        p
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.cols()
    }

    pub fn input_size(&self) -> usize {
        self.w_input.cols()
    }

    fn validate(&self) -> Result<()> {
        let h = self.hidden_size();
        check_dim("lstm w_input rows", 4 * h, self.w_input.rows())?;
        check_dim("lstm w_hidden rows", 4 * h, self.w_hidden.rows())?;
        check_dim("lstm bias", 4 * h, self.bias.len())
    }
}

/// Forward intermediates for one sequence.
#[derive(Debug, Clone)]
pub struct LstmTape {
    input: Tensor2,
    /// Recurrent input actually fed to step `t` (masked `h_{t-1}`), `T × h`.
    h_in: Tensor2,
    /// Activated gates `[i, f, g, o]`, `T × 4h`.
    gates: Tensor2,
    /// Cell state `c_t`, `T × h`.
    cell: Tensor2,
    /// `tanh(c_t)`, `T × h`.
    cell_tanh: Tensor2,
    /// Mask applied to `h_t` before step `t+1`; empty without dropout.
    masks: Vec<Vec<f64>>,
}

/// Runs the recurrence over a `T × D` sequence and returns the `T × h` hidden
/// states. Dropout is active only when `rng_seed` is given.
pub fn lstm_forward(
    params: &LstmParams,
    sequence: &Tensor2,
    dropout_rate: f64,
    rng_seed: Option<u64>,
) -> Result<(Tensor2, LstmTape)> {
    params.validate()?;
    check_dim("lstm input features", params.input_size(), sequence.cols())?;
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Precondition(alloc::format!(
            "dropout rate must lie in [0, 1), got {dropout_rate}"
        )));
    }
    if !sequence.is_finite() {
        return Err(Error::NonFinite { context: "lstm input" });
    }

    let h = params.hidden_size();
    let steps = sequence.rows();
    let mut rng = match rng_seed {
        Some(seed) if dropout_rate > 0.0 => Some(rng_from(seed, &[])),
        _ => None,
    };

    let mut hidden = Tensor2::zeros(steps, h);
    let mut h_in = Tensor2::zeros(steps, h);
    let mut gates = Tensor2::zeros(steps, 4 * h);
    let mut cell = Tensor2::zeros(steps, h);
    let mut cell_tanh = Tensor2::zeros(steps, h);
    let mut masks = Vec::new();

    let mut c_prev = vec![0.0; h];
    let mut z = vec![0.0; 4 * h];
    for t in 0..steps {
        if t > 0 {
            let row = h_in.row_mut(t);
            row.copy_from_slice(hidden.row(t - 1));
            if let Some(rng) = rng.as_mut() {
                let mask = dropout_mask(h, dropout_rate, rng);
                for (v, m) in row.iter_mut().zip(&mask) {
                    *v *= m;
                }
                masks.push(mask);
            }
        }

        z.copy_from_slice(&params.bias);
        params.w_input.matvec_acc(sequence.row(t), &mut z);
        params.w_hidden.matvec_acc(h_in.row(t), &mut z);

        let g_row = gates.row_mut(t);
        for j in 0..h {
            g_row[j] = sigmoid(z[j]);
            g_row[h + j] = sigmoid(z[h + j]);
            g_row[2 * h + j] = tanh(z[2 * h + j]);
            g_row[3 * h + j] = sigmoid(z[3 * h + j]);
        }
        let g_row = gates.row(t);
        for j in 0..h {
            let c = g_row[h + j] * c_prev[j] + g_row[j] * g_row[2 * h + j];
            let tc = tanh(c);
            cell.set(t, j, c);
            cell_tanh.set(t, j, tc);
            hidden.set(t, j, g_row[3 * h + j] * tc);
            c_prev[j] = c;
        }
    }

    if !hidden.is_finite() {
        return Err(Error::NonFinite { context: "lstm hidden state" });
    }
    let tape = LstmTape { input: sequence.clone(), h_in, gates, cell, cell_tanh, masks };
    Ok((hidden, tape))
}

impl LstmTape {
    /// Backpropagation through time. `d_hidden` is `∂L/∂h_t` for every step
    /// (`T × h`); parameter gradients are added into `grads`.
    pub fn backward(self, params: &LstmParams, d_hidden: &Tensor2, grads: &mut LstmParams) -> Result<()> {
        let h = params.hidden_size();
        let steps = self.input.rows();
        check_dim("lstm d_hidden rows", steps, d_hidden.rows())?;
        check_dim("lstm d_hidden cols", h, d_hidden.cols())?;

        let mut dh = vec![0.0; h];
        let mut dc = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        let mut dh_in = vec![0.0; h];

        for t in (0..steps).rev() {
            axpy(1.0, d_hidden.row(t), &mut dh);
            let g = self.gates.row(t);
            let tc = self.cell_tanh.row(t);
            for j in 0..h {
                let (i, f, cand, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                let c_prev = if t > 0 { self.cell.get(t - 1, j) } else { 0.0 };
                let dct = dc[j] + dh[j] * o * (1.0 - tc[j] * tc[j]);
                dz[j] = dct * cand * i * (1.0 - i);
                dz[h + j] = dct * c_prev * f * (1.0 - f);
                dz[2 * h + j] = dct * i * (1.0 - cand * cand);
                dz[3 * h + j] = dh[j] * tc[j] * o * (1.0 - o);
                dc[j] = dct * f;
            }
            grads.w_input.outer_acc(&dz, self.input.row(t));
            grads.w_hidden.outer_acc(&dz, self.h_in.row(t));
            axpy(1.0, &dz, &mut grads.bias);

            if t > 0 {
                dh_in.iter_mut().for_each(|v| *v = 0.0);
                params.w_hidden.matvec_t_acc(&dz, &mut dh_in);
                match self.masks.get(t - 1) {
                    Some(mask) => {
                        for ((d, &din), &m) in dh.iter_mut().zip(&dh_in).zip(mask) {
                            *d = din * m;
                        }
                    }
                    None => dh.copy_from_slice(&dh_in),
                }
            }
        }
        Ok(())
    }
}
