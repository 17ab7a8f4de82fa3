//! Per-slice CT normalization, network input construction and the
//! case-level train/test split.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use u2seg_tensor::Tensor;

use crate::volume::{Dims, Volume};
use crate::{Error, Result};

/// Value given to every voxel of a slice with (near-)zero spread.
pub const SENTINEL: f32 = -9.0;
/// Standard deviation below which a slice counts as constant.
pub const SIGMA_MIN: f64 = 1e-6;
/// Upper end of the normalized range; the lower end is 0.
pub const NORM_MAX: f64 = 2.5;
const Z_CLIP: f64 = 3.0;

/// Maps a z-score onto [0, 2.5] after clamping it to [−3, 3].
pub fn rescale_z(z: f64) -> f64 {
    (z.clamp(-Z_CLIP, Z_CLIP) + Z_CLIP) * NORM_MAX / (2.0 * Z_CLIP)
}

/// Population mean and standard deviation.
fn moments(xs: &[f32]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu = xs.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = xs.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Z-scores each axial slice with its own mean and population standard
/// deviation, clamps to ±3 and rescales to [0, 2.5]. Slices with σ below
/// `sigma_min` become [`SENTINEL`] throughout.
pub fn normalize_volume(v: &Volume, sigma_min: f64) -> Volume {
    let mut out = v.clone();
    for z in 0..v.dims.d {
        let (mu, sigma) = moments(v.slice(z));
        let dst = out.slice_mut(z);
        if !(sigma >= sigma_min) {
            dst.fill(SENTINEL);
            continue;
        }
        for (o, &x) in dst.iter_mut().zip(v.slice(z)) {
            *o = rescale_z((x as f64 - mu) / sigma) as f32;
        }
    }
    out
}

/// How a normalized slice becomes network input channels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum InputMode {
    /// Slice k in both channels.
    #[default]
    Duplicate,
    /// Slices k and k+1 (the last slice pairs with itself).
    AdjacentPair,
    /// Slice k alone.
    Single,
}

impl InputMode {
    pub fn channels(self) -> usize {
        match self {
            InputMode::Duplicate | InputMode::AdjacentPair => 2,
            InputMode::Single => 1,
        }
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputMode::Duplicate => "duplicate",
            InputMode::AdjacentPair => "adjacent",
            InputMode::Single => "single",
        })
    }
}

impl FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "duplicate" => Ok(InputMode::Duplicate),
            "adjacent" => Ok(InputMode::AdjacentPair),
            "single" => Ok(InputMode::Single),
            _ => Err(Error::config("input_mode", format!("expected duplicate|adjacent|single, got `{s}`"))),
        }
    }
}

/// One network input: a C×H×W tensor and the slice it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSlice {
    pub index: usize,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InputStack {
    pub dims: Dims,
    pub mode: InputMode,
    pub slices: Vec<InputSlice>,
}

impl InputStack {
    pub fn channels(&self) -> usize {
        self.mode.channels()
    }

    /// Stacks the selected slices into an N×C×H×W batch.
    pub fn batch(&self, picks: &[usize]) -> Tensor {
        let c = self.channels();
        let (h, w) = (self.dims.h, self.dims.w);
        let mut data = Vec::with_capacity(picks.len() * c * h * w);
        for &k in picks {
            data.extend_from_slice(self.slices[k].tensor.data());
        }
        Tensor::new(vec![picks.len(), c, h, w], data).expect("slice tensors share one shape")
    }
}

/// One input per axial slice, in slice order.
pub fn make_inputs(nv: &Volume, mode: InputMode) -> InputStack {
    let d = nv.dims.d;
    let plane = |z: usize| nv.slice(z).iter().map(|&v| v as f64);
    let slices = (0..d)
        .map(|k| {
            let data: Vec<f64> = match mode {
                InputMode::Duplicate => plane(k).chain(plane(k)).collect(),
                InputMode::AdjacentPair => plane(k).chain(plane((k + 1).min(d - 1))).collect(),
                InputMode::Single => plane(k).collect(),
            };
            let tensor = Tensor::new(vec![mode.channels(), nv.dims.h, nv.dims.w], data).expect("slice-sized buffer");
            InputSlice { index: k, tensor }
        })
        .collect();
    InputStack { dims: nv.dims, mode, slices }
}

/// Seeded shuffle, then the first round(fraction·n) items form the test
/// set. Both halves keep the input order.
pub fn split_train_test<T: Clone>(ids: &[T], test_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config("test_fraction", format!("must lie in (0, 1), got {test_fraction}")));
    }
    let n = ids.len();
    if n < 2 {
        return Err(Error::Invalid(format!("cannot split {n} item(s); need at least 2")));
    }
    let n_test = (test_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (item, t) in ids.iter().zip(is_test) {
        if t { test.push(item.clone()) } else { train.push(item.clone()) }
    }
    Ok((train, test))
}
