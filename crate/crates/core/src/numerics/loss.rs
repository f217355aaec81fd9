use alloc::format;
use alloc::vec::Vec;

use crate::error::{check_dim, Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` inside the loss.
pub const PROB_CLAMP: f64 = 1e-7;

/// What [`bce_loss`] needs to differentiate itself.
#[derive(Debug, Clone)]
pub struct BceTape {
    preds: Vec<f64>,
    targets: Vec<f64>,
}

impl BceTape {
    /// `∂L/∂p` for each prediction; zero where the clamp was active.
    pub fn grad(&self) -> Vec<f64> {
        let n = self.preds.len() as f64;
        self.preds
            .iter()
            .zip(&self.targets)
            .map(|(&p, &t)| {
                if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                    0.0
                } else {
                    (-t / p + (1.0 - t) / (1.0 - p)) / n
                }
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }
}

/// Mean binary cross-entropy.
pub fn bce_loss(preds: &[f64], targets: &[f64]) -> Result<(f64, BceTape)> {
    check_dim("bce targets", preds.len(), targets.len())?;
    if preds.is_empty() {
        return Err(Error::Precondition("bce_loss needs at least one prediction".into()));
    }
    let mut total = 0.0;
    for (&p, &t) in preds.iter().zip(targets) {
        if !p.is_finite() {
            return Err(Error::NonFinite { context: "bce prediction" });
        }
        if t != 0.0 && t != 1.0 {
            return Err(Error::Precondition(format!("bce target must be 0 or 1, got {t}")));
        }
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        total -= if t == 1.0 { libm::log(p) } else { libm::log(1.0 - p) };
    }
    let loss = total / preds.len() as f64;
    Ok((loss, BceTape { preds: preds.to_vec(), targets: targets.to_vec() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::sigmoid;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn half_probability_costs_ln2() {
        let (l, _) = bce_loss(&[0.5], &[1.0]).unwrap();
        assert!((l - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn near_certain_correct_prediction_is_nearly_free() {
        let (l, _) = bce_loss(&[1.0 - 1e-7], &[1.0]).unwrap();
        assert!((l - 1e-7).abs() < 1e-12, "{l}");
    }

    #[test]
    fn mean_over_examples() {
        let (l, _) = bce_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap();
        // Both terms equal -ln(0.9).
        assert!((l - 0.105_360_515_657_826_3).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(bce_loss(&[], &[]), Err(Error::Precondition(_))));
    }

    #[test]
    fn sigmoid_composition_gradient_is_residual() {
        for &z in &[-3.0, -0.4, 0.0, 0.7, 2.5] {
            for &t in &[0.0, 1.0] {
                let p = sigmoid(z);
                let (_, tape) = bce_loss(&[p], &[t]).unwrap();
                let dz = tape.grad()[0] * p * (1.0 - p);
                assert!((dz - (p - t)).abs() < 1e-12, "z={z} t={t}");
            }
        }
    }

    #[test]
    fn clamped_predictions_do_not_explode() {
        let (l, tape) = bce_loss(&[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(l.is_finite());
        assert_eq!(tape.grad(), vec![0.0, 0.0]);
    }

    proptest! {
        #[test]
        fn loss_is_non_negative(p in 0.0f64..=1.0, t in 0u8..2) {
            let (l, _) = bce_loss(&[p], &[t as f64]).unwrap();
            prop_assert!(l >= 0.0);
        }
    }
}
