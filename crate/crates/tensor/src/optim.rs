//! First-order optimizers over flat parameter lists.
//!
//! All optimizers share one [`OptimizerState`] layout: a step counter plus,
//! for every parameter, a list of same-shaped buffers. The layout is what
//! checkpoints persist.

use crate::{Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyper {
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { lr: 1e-3, momentum: 0.9, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// `slots[k]` holds the buffers of parameter `k`.
    pub slots: Vec<Vec<Tensor>>,
}

impl OptimizerState {
    /// Allocates zeroed buffers on first use and checks shapes afterwards.
    fn ensure(&mut self, params: &[&mut Tensor], per_param: usize) -> Result<(), TensorError> {
        if self.slots.is_empty() {
            self.slots = params.iter().map(|p| vec![Tensor::zeros(p.shape()); per_param]).collect();
            return Ok(());
        }
        if self.slots.len() != params.len() {
            return Err(TensorError::shape(
                "optimizer",
                format!("state holds {} parameters, got {}", self.slots.len(), params.len()),
            ));
        }
        for (k, (slot, p)) in self.slots.iter().zip(params).enumerate() {
            if slot.len() != per_param || slot.iter().any(|b| b.shape() != p.shape()) {
                return Err(TensorError::shape("optimizer", format!("buffer layout mismatch for parameter {k}")));
            }
        }
        Ok(())
    }

    pub fn round_to_f32(&mut self) {
        for b in self.slots.iter_mut().flatten() {
            b.round_to_f32();
        }
    }
}

pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    fn hyper(&self) -> &Hyper;

    /// Applies one update. `params` and `grads` are index-aligned.
    fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<(), TensorError>;

    fn state(&self) -> &OptimizerState;

    fn state_mut(&mut self) -> &mut OptimizerState;
}

fn check_grads(params: &[&mut Tensor], grads: &[&[f64]]) -> Result<(), TensorError> {
    if params.len() != grads.len() {
        return Err(TensorError::shape("optimizer", format!("{} parameters, {} gradients", params.len(), grads.len())));
    }
    for (k, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.numel() != g.len() {
            return Err(TensorError::shape("optimizer", format!("gradient {k} has {} entries, parameter has {}", g.len(), p.numel())));
        }
    }
    Ok(())
}

/// v ← μv + g; θ ← θ − lr·v
fn sgd_update(theta: &mut [f64], vel: &mut [f64], g: &[f64], h: &Hyper) {
    for ((t, v), &g) in theta.iter_mut().zip(vel.iter_mut()).zip(g) {
        *v = h.momentum * *v + g;
        *t -= h.lr * *v;
    }
}

/// Bias-corrected Adam update at (1-based) step `t`.
fn adam_update(theta: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64], h: &Hyper, t: u64) {
    let c1 = 1.0 - h.beta1.powi(t as i32);
    let c2 = 1.0 - h.beta2.powi(t as i32);
    for (((th, m), v), &g) in theta.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
        *m = h.beta1 * *m + (1.0 - h.beta1) * g;
        *v = h.beta2 * *v + (1.0 - h.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *th -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}

fn split2(slot: &mut [Tensor]) -> (&mut Tensor, &mut Tensor) {
    let (a, b) = slot.split_at_mut(1);
    (&mut a[0], &mut b[0])
}

/// Stochastic gradient descent with heavy-ball momentum.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    hyper: Hyper,
    state: OptimizerState,
}

impl SgdMomentum {
    pub fn new(hyper: Hyper) -> Self {
        SgdMomentum { hyper, state: OptimizerState::default() }
    }
}

impl Optimizer for SgdMomentum {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<(), TensorError> {
        check_grads(params, grads)?;
        self.state.ensure(params, 1)?;
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut self.state.slots) {
            sgd_update(p.data_mut(), slot[0].data_mut(), g, &self.hyper);
        }
        self.state.step += 1;
        Ok(())
    }

    fn state(&self) -> &OptimizerState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut OptimizerState {
        &mut self.state
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    hyper: Hyper,
    state: OptimizerState,
}

impl Adam {
    pub fn new(hyper: Hyper) -> Self {
        Adam { hyper, state: OptimizerState::default() }
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<(), TensorError> {
        check_grads(params, grads)?;
        self.state.ensure(params, 2)?;
        let t = self.state.step + 1;
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut self.state.slots) {
            let (m, v) = split2(slot);
            adam_update(p.data_mut(), m.data_mut(), v.data_mut(), g, &self.hyper, t);
        }
        self.state.step = t;
        Ok(())
    }

    fn state(&self) -> &OptimizerState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut OptimizerState {
        &mut self.state
    }
}

/// Adam for the first `switch_at` steps, SGD with momentum afterwards.
///
/// Buffers per parameter: Adam first moment, Adam second moment, SGD velocity.
#[derive(Clone, Debug)]
pub struct AdamThenSgd {
    hyper: Hyper,
    switch_at: u64,
    state: OptimizerState,
}

impl AdamThenSgd {
    pub fn new(hyper: Hyper, switch_at: u64) -> Self {
        AdamThenSgd { hyper, switch_at, state: OptimizerState::default() }
    }

    pub fn switch_at(&self) -> u64 {
        self.switch_at
    }
}

impl Optimizer for AdamThenSgd {
    fn name(&self) -> &'static str {
        "adam-then-sgd"
    }

    fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    fn step(&mut self, params: &mut [&mut Tensor], grads: &[&[f64]]) -> Result<(), TensorError> {
        check_grads(params, grads)?;
        self.state.ensure(params, 3)?;
        let t = self.state.step + 1;
        for ((p, g), slot) in params.iter_mut().zip(grads).zip(&mut self.state.slots) {
            if t <= self.switch_at {
                let (m, rest) = slot.split_at_mut(1);
                adam_update(p.data_mut(), m[0].data_mut(), rest[0].data_mut(), g, &self.hyper, t);
            } else {
                sgd_update(p.data_mut(), slot[2].data_mut(), g, &self.hyper);
            }
        }
        self.state.step = t;
        Ok(())
    }

    fn state(&self) -> &OptimizerState {
        &self.state
    }

    fn state_mut(&mut self) -> &mut OptimizerState {
        &mut self.state
    }
}
