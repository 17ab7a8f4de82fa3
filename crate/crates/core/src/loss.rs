//! Dice loss, its deeply supervised aggregate, and the binary Dice
//! similarity coefficient.

use u2seg_tensor::{Tape, Var};

use crate::u2net::SIDE_OUTPUTS;
use crate::volume::Mask;
use crate::{Error, Result};

/// Smoothing term of the Dice loss.
pub const DICE_EPS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub side: [f64; SIDE_OUTPUTS],
    pub fuse: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { side: [1.0; SIDE_OUTPUTS], fuse: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.side.iter().chain([&self.fuse]).all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::config("loss_weights", "weights must be finite"))
        }
    }

    /// Weighted sum of six side terms and the fused term.
    pub fn combine(&self, terms: &[f64; SIDE_OUTPUTS + 1]) -> f64 {
        self.side.iter().zip(terms).map(|(w, l)| w * l).sum::<f64>() + self.fuse * terms[SIDE_OUTPUTS]
    }
}

/// `1 − (2·Σ g·p + ε) / (Σ g² + Σ p² + ε)` for a single map.
pub fn dice_loss_values(pred: &[f64], gt: &[f64], eps: f64) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape { what: "dice loss", detail: format!("prediction has {} values, truth {}", pred.len(), gt.len()) });
    }
    let inter: f64 = pred.iter().zip(gt).map(|(p, g)| p * g).sum();
    let pp: f64 = pred.iter().map(|p| p * p).sum();
    let gg: f64 = gt.iter().map(|g| g * g).sum();
    Ok(1.0 - (2.0 * inter + eps) / (gg + pp + eps))
}

/// Dice loss on the tape. Sums run over each sample (everything but the
/// first axis); the per-sample losses are averaged over the batch.
pub fn dice_loss(tape: &mut Tape, pred: Var, gt: Var, eps: f64) -> Result<Var> {
    if tape.value(pred).shape() != tape.value(gt).shape() {
        return Err(Error::Shape {
            what: "dice loss",
            detail: format!("prediction {:?} vs truth {:?}", tape.value(pred).shape(), tape.value(gt).shape()),
        });
    }
    let pg = tape.mul(pred, gt)?;
    let inter = tape.sum_per_sample(pg)?;
    let pp = tape.mul(pred, pred)?;
    let pp = tape.sum_per_sample(pp)?;
    let gg = tape.mul(gt, gt)?;
    let gg = tape.sum_per_sample(gg)?;
    let num = tape.scale(inter, 2.0);
    let num = tape.add_scalar(num, eps);
    let den = tape.add(gg, pp)?;
    let den = tape.add_scalar(den, eps);
    let ratio = tape.div(num, den)?;
    let ratio = tape.mean(ratio);
    let neg = tape.scale(ratio, -1.0);
    Ok(tape.add_scalar(neg, 1.0))
}

/// The weighted total and the seven unweighted terms (side 1..6, fuse).
#[derive(Clone, Copy, Debug)]
pub struct SupervisedLoss {
    pub total: Var,
    pub terms: [Var; SIDE_OUTPUTS + 1],
}

impl SupervisedLoss {
    pub fn term_values(&self, tape: &Tape) -> [f64; SIDE_OUTPUTS + 1] {
        self.terms.map(|t| tape.value(t).item())
    }

    pub fn fuse(&self) -> Var {
        self.terms[SIDE_OUTPUTS]
    }
}

/// `Σ w_side·l_side + w_fuse·l_fuse` over single-channel probability maps
/// ordered side 1..6 then fuse.
pub fn deep_supervision_loss(
    tape: &mut Tape,
    maps: &[Var; SIDE_OUTPUTS + 1],
    gt: Var,
    w: &LossWeights,
) -> Result<SupervisedLoss> {
    let mut terms = [gt; SIDE_OUTPUTS + 1];
    for (t, &m) in terms.iter_mut().zip(maps) {
        *t = dice_loss(tape, m, gt, DICE_EPS)?;
    }
    let weights = w.side.iter().chain([&w.fuse]);
    let mut total: Option<Var> = None;
    for (&t, &wk) in terms.iter().zip(weights) {
        let s = tape.scale(t, wk);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    Ok(SupervisedLoss { total: total.expect("seven terms"), terms })
}

/// `2|A∩B| / (|A| + |B|)`, 1 when both masks are empty.
pub fn dsc(pred: &Mask, gt: &Mask) -> Result<f64> {
    if pred.dims != gt.dims {
        return Err(Error::Shape { what: "dsc", detail: format!("prediction {} vs truth {}", pred.dims, gt.dims) });
    }
    let inter = pred.data.iter().zip(&gt.data).filter(|(&a, &b)| a == 1 && b == 1).count();
    let total = pred.count() + gt.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}
