use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};

/// Adam moments for a list of parameter tensors, with the usual defaults
/// (`lr = 1e-3`, `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self::with_lr(sizes, 1e-3)
    }

    pub fn with_lr(sizes: &[usize], lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
    check_dim("adam tensor count", state.first_moment.len(), params.len())?;
    check_dim("adam grad count", params.len(), grads.len())?;
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        check_dim("adam tensor size", m.len(), p.len())?;
        check_dim("adam grad size", p.len(), g.len())?;
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - libm::pow(b1, t as f64);
    let c2 = 1.0 - libm::pow(b2, t as f64);
    let step_size = state.lr / c1;
    let c2_sqrt = libm::sqrt(c2);

    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            // lr·m̂/(√v̂ + ε) with the corrections folded in.
            let denom = libm::sqrt(v[j]) / c2_sqrt + state.epsilon;
            p[j] -= step_size * m[j] / denom;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(state: &mut AdamState, x: &mut [f64], g: &[f64]) {
        adam_step(state, &mut [x], &[g]).unwrap();
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut st = AdamState::new(&[3]);
        let mut x = [1.0, -2.0, 0.5];
        run(&mut st, &mut x, &[0.0; 3]);
        assert_eq!(x, [1.0, -2.0, 0.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        for &g in &[3.7, -0.02, 1e-3, -250.0] {
            let mut st = AdamState::new(&[1]);
            let mut x = [0.0];
            run(&mut st, &mut x, &[g]);
            // m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε).
            let expected = -1e-3 * g / (f64::abs(g) + 1e-8);
            assert!((x[0] - expected).abs() < 1e-15);
            assert!((x[0] + 1e-3 * g.signum()).abs() < 1e-6);
        }
    }

    #[test]
    fn two_steps_on_quadratic_follow_the_recurrence() {
        // f(x) = x², ∇f = 2x, from x = 1.
        let mut st = AdamState::new(&[1]);
        let mut x = [1.0];
        run(&mut st, &mut x, &[2.0]);
        let g1: f64 = 2.0;
        let x1 = 1.0 - 1e-3 * g1 / (g1.abs() + 1e-8);
        assert!((x[0] - x1).abs() < 1e-15);

        let g2 = 2.0 * x1;
        run(&mut st, &mut x, &[g2]);
        let m = 0.9 * (0.1 * g1) + 0.1 * g2;
        let v = 0.999 * (0.001 * g1 * g1) + 0.001 * g2 * g2;
        let m_hat = m / (1.0 - 0.81);
        let v_hat = v / (1.0 - 0.999f64 * 0.999);
        let x2 = x1 - 1e-3 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((x[0] - x2).abs() < 1e-14);
        assert!(x2 * x2 < x1 * x1 && x1 * x1 < 1.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut st = AdamState::new(&[2]);
        let mut x = [0.0; 3];
        assert!(adam_step(&mut st, &mut [&mut x], &[&[0.0; 3]]).is_err());
        assert_eq!(st.step, 0);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let go = || {
            let mut st = AdamState::new(&[4]);
            let mut x = [0.3, -0.1, 2.0, 5.0];
            for k in 0..50 {
                let g: Vec<f64> = x.iter().map(|v| 2.0 * v + k as f64 * 1e-3).collect();
                run(&mut st, &mut x, &g);
            }
            x
        };
        assert_eq!(go().map(f64::to_bits), go().map(f64::to_bits));
    }
}
