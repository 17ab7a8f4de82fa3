use std::fmt;
use std::str::FromStr;

use u2seg_tensor::Hyper;

use crate::loss::LossWeights;
use crate::{Error, Result};

/// Precision of the trained state between steps.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NumericWidth {
    /// Weights, running statistics and optimizer buffers are rounded to f32
    /// after every step, so f32 checkpoints are lossless.
    #[default]
    F32,
    /// Full f64 state; checkpoints round it.
    F64,
}

impl fmt::Display for NumericWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NumericWidth::F32 => "f32",
            NumericWidth::F64 => "f64",
        })
    }
}

impl FromStr for NumericWidth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(NumericWidth::F32),
            "f64" => Ok(NumericWidth::F64),
            _ => Err(Error::config("numeric_width", format!("expected f32|f64, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Registry name: `adam`, `sgd` or `adam-then-sgd`.
    pub optimizer: String,
    pub lr: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Step after which `adam-then-sgd` switches to SGD.
    pub switch_step: u64,
    pub batch_size: usize,
    pub epochs: usize,
    pub test_fraction: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub numeric_width: NumericWidth,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let h = Hyper::default();
        TrainConfig {
            optimizer: "adam".into(),
            lr: h.lr,
            momentum: h.momentum,
            beta1: h.beta1,
            beta2: h.beta2,
            adam_eps: h.eps,
            switch_step: 1000,
            batch_size: 2,
            epochs: 10,
            test_fraction: 0.25,
            seed: 0,
            loss_weights: LossWeights::default(),
            numeric_width: NumericWidth::F32,
        }
    }
}

impl TrainConfig {
    pub fn hyper(&self) -> Hyper {
        Hyper { lr: self.lr, momentum: self.momentum, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config("lr", format!("must be finite and ≥ 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", format!("must lie in [0, 1), got {}", self.momentum)));
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, format!("must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("adam_eps", "must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be ≥ 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be ≥ 1"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::config("test_fraction", format!("must lie in (0, 1), got {}", self.test_fraction)));
        }
        self.loss_weights.validate()
    }
}
