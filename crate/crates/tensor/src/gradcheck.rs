//! Central finite-difference gradient checker.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub n_samples: usize,
    pub h: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { n_samples: 100, h: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradSample {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    /// A relu sign or max-pool winner differs between θ+h and θ−h, so the
    /// difference quotient straddles a kink.
    pub kink: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub samples: Vec<GradSample>,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradSample> {
        self.samples.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn kinks(&self) -> usize {
        self.samples.iter().filter(|s| s.kink).count()
    }

    /// Largest error among samples whose perturbation crossed no kink.
    pub fn max_smooth_rel_error(&self) -> f64 {
        self.samples.iter().filter(|s| !s.kink).map(|s| s.rel_error).fold(0.0, f64::max)
    }
}

/// `|a − n| / max(1, |a|, |n|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Compares the tape gradient of a scalar function against
/// `(f(θ+h) − f(θ−h)) / 2h` on randomly chosen parameter entries.
///
/// `f` receives a fresh tape and one trainable leaf per entry of `params`,
/// and must return a scalar node. Entries are drawn without replacement
/// across all parameters; when `n_samples` covers everything, every entry is
/// checked.
pub fn grad_check<F, E>(params: &mut [Tensor], mut f: F, cfg: GradCheckConfig) -> Result<GradCheckReport, E>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    if !(1e-4..=1e-2).contains(&cfg.h) {
        return Err(TensorError::invalid("grad_check", format!("step h = {} outside [1e-4, 1e-2]", cfg.h)).into());
    }

    let mut eval = |params: &[Tensor], backward: bool| -> Result<(f64, u64, Vec<Vec<f64>>), E> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
        let root = f(&mut tape, &vars)?;
        let value = tape.value(root).item();
        let mut grads = Vec::new();
        if backward {
            tape.backward(root)?;
            grads = vars
                .iter()
                .zip(params)
                .map(|(&v, p)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.numel()]))
                .collect();
        }
        Ok((value, tape.activation_pattern(), grads))
    };

    let (_, _, analytic) = eval(params, true)?;

    let offsets: Vec<usize> = params
        .iter()
        .scan(0, |acc, p| {
            let start = *acc;
            *acc += p.numel();
            Some(start)
        })
        .collect();
    let total: usize = params.iter().map(Tensor::numel).sum();
    let mut picks: Vec<usize> = if cfg.n_samples >= total {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        index::sample(&mut rng, total, cfg.n_samples).into_vec()
    };
    picks.sort_unstable();

    let mut samples = Vec::with_capacity(picks.len());
    for flat in picks {
        let param = offsets.partition_point(|&o| o <= flat) - 1;
        let index = flat - offsets[param];
        let orig = params[param].data()[index];
        params[param].data_mut()[index] = orig + cfg.h;
        let (plus, pat_plus, _) = eval(params, false)?;
        params[param].data_mut()[index] = orig - cfg.h;
        let (minus, pat_minus, _) = eval(params, false)?;
        params[param].data_mut()[index] = orig;

        let numeric = (plus - minus) / (2.0 * cfg.h);
        let a = analytic[param][index];
        samples.push(GradSample { param, index, analytic: a, numeric, rel_error: relative_error(a, numeric), kink: pat_plus != pat_minus });
    }
    let max_rel_error = samples.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { max_rel_error, samples })
}
