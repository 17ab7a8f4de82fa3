use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use u2seg_tensor::{grad_check, GradCheckConfig, GradCheckReport, Tape, Tensor};

use super::model::{u2net_forward, Bound, NetMode};
use super::params::ParamStore;
use super::spec::U2NetSpec;
use crate::loss::{deep_supervision_loss, LossWeights};
use crate::Result;

/// Batch-norm behaviour during a network gradient check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckMode {
    /// Running statistics; works for any batch size.
    Eval,
    /// Batch statistics; stages with one value per channel carry no gradient.
    Train,
}

/// A random input in [0, 2.5] and a disc-shaped binary target.
pub fn synthetic_pair(spec: &U2NetSpec, n: usize, h: usize, w: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[n, spec.input_channels, h, w], |_| rng.random_range(0.0..2.5));
    let (cy, cx, r) = (h as f64 / 2.0, w as f64 / 2.0, h.min(w) as f64 / 4.0);
    let gt = Tensor::from_fn(&[n, 1, h, w], |i| {
        let (y, x) = ((i / w) % h, i % w);
        let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
        if d2 <= r * r { 1.0 } else { 0.0 }
    });
    (x, gt)
}

/// Finite-difference check of the deeply supervised loss with respect to
/// every trainable tensor of `store`.
pub fn network_grad_check(
    spec: &U2NetSpec,
    store: &ParamStore,
    input: &Tensor,
    gt: &Tensor,
    weights: &LossWeights,
    mode: CheckMode,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut params: Vec<Tensor> = store.weights.values().cloned().collect();
    grad_check(
        &mut params,
        |tape: &mut Tape, vars| {
            let p = Bound::from_vars(store, vars)?;
            let x = tape.constant(input.clone());
            let g = tape.constant(gt.clone());
            let mut m = match mode {
                CheckMode::Eval => NetMode::Eval { running: &store.running },
                CheckMode::Train => NetMode::Train { running: None },
            };
            let out = u2net_forward(tape, x, spec, &p, &mut m)?;
            let maps = out.probability_maps(tape)?;
            Ok(deep_supervision_loss(tape, &maps, g, weights)?.total)
        },
        cfg,
    )
}
