use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::bce_loss;

/// Batch loss `L = (W/α)·L_global + L_local` with `W = n_global / n_local`.
///
/// Each pool's BCE is averaged before weighting. A batch without local
/// examples uses the unweighted global loss (`w` is `None`); one without
/// global examples uses the local loss alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loss_global: f64,
    pub loss_local: f64,
    pub w: Option<f64>,
    pub alpha: f64,
    pub total: f64,
}

/// `∂L/∂p` for the global and local predictions.
#[derive(Debug, Clone)]
pub struct WeightedLossTape {
    pub d_global: Vec<f64>,
    pub d_local: Vec<f64>,
}

pub fn weighted_loss(
    global_preds: &[f64],
    global_targets: &[f64],
    local_preds: &[f64],
    local_targets: &[f64],
    alpha: f64,
) -> Result<(LossBreakdown, WeightedLossTape)> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Precondition(alloc::format!("alpha must be positive, got {alpha}")));
    }
    let (n_g, n_l) = (global_preds.len(), local_preds.len());
    if n_g == 0 && n_l == 0 {
        return Err(Error::Precondition("weighted loss needs a non-empty batch".into()));
    }
    let global = if n_g > 0 { Some(bce_loss(global_preds, global_targets)?) } else { None };
    let local = if n_l > 0 { Some(bce_loss(local_preds, local_targets)?) } else { None };

    let (loss_global, loss_local) =
        (global.as_ref().map_or(0.0, |g| g.0), local.as_ref().map_or(0.0, |l| l.0));
    let (w, global_scale) = match (n_g, n_l) {
        (_, 0) => (None, 1.0),
        (0, _) => (Some(0.0), 0.0),
        _ => {
            let w = n_g as f64 / n_l as f64;
            (Some(w), w / alpha)
        }
    };
    let total = match (n_g, n_l) {
        (_, 0) => loss_global,
        (0, _) => loss_local,
        _ => global_scale * loss_global + loss_local,
    };
    let d_global = global
        .map(|(_, tape)| tape.grad().into_iter().map(|g| g * global_scale).collect())
        .unwrap_or_default();
    let d_local = local.map(|(_, tape)| tape.grad()).unwrap_or_default();
    Ok((
        LossBreakdown { loss_global, loss_local, w, alpha, total },
        WeightedLossTape { d_global, d_local },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_substitution() {
        // Predictions chosen so each pool's mean BCE is known exactly.
        let p_one = libm::exp(-1.0);
        let p_half = libm::exp(-0.5);
        let (b, _) = weighted_loss(&[p_one; 6], &[1.0; 6], &[p_half; 2], &[1.0; 2], 10.0).unwrap();
        assert_eq!(b.w, Some(3.0));
        assert!((b.loss_global - 1.0).abs() < 1e-15);
        assert!((b.loss_local - 0.5).abs() < 1e-15);
        assert!((b.total - 0.8).abs() < 1e-12);
    }

    #[test]
    fn local_only_batch_is_plain_local_loss() {
        let (b, t) = weighted_loss(&[], &[], &[0.3, 0.8], &[0.0, 1.0], 10.0).unwrap();
        let (expect, _) = bce_loss(&[0.3, 0.8], &[0.0, 1.0]).unwrap();
        assert_eq!(b.total, expect);
        assert!(t.d_global.is_empty());
    }

    #[test]
    fn global_only_batch_is_unweighted() {
        let (b, t) = weighted_loss(&[0.3, 0.8], &[0.0, 1.0], &[], &[], 10.0).unwrap();
        let (expect, tape) = bce_loss(&[0.3, 0.8], &[0.0, 1.0]).unwrap();
        assert_eq!(b.total, expect);
        assert_eq!(b.w, None);
        assert_eq!(t.d_global, tape.grad());
    }

    #[test]
    fn equal_counts_give_unit_weight() {
        let (b, _) = weighted_loss(&[0.6, 0.2], &[1.0, 0.0], &[0.7, 0.1], &[1.0, 0.0], 10.0).unwrap();
        assert_eq!(b.w, Some(1.0));
        assert!((b.total - (0.1 * b.loss_global + b.loss_local)).abs() < 1e-15);
    }

    #[test]
    fn empty_batch_and_bad_alpha() {
        assert!(weighted_loss(&[], &[], &[], &[], 10.0).is_err());
        assert!(weighted_loss(&[0.5], &[1.0], &[0.5], &[1.0], 0.0).is_err());
    }
}
