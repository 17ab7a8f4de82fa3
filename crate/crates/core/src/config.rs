//! Flat `key = value` run configuration shared by every CLI subcommand.
//!
//! Lines starting with `#` are comments. Unknown and repeated keys are
//! errors. A `preset` key (`full`, `lite`, `toy`) is applied before the
//! other network keys regardless of where it appears.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::data::PhantomConfig;
use crate::loss::LossWeights;
use crate::post::{Connectivity, THRESHOLD};
use crate::pre::{InputMode, SIGMA_MIN};
use crate::registry::{labelers, optimizers};
use crate::trainer::TrainConfig;
use crate::u2net::{U2NetSpec, SIDE_OUTPUTS};
use crate::volume::Dims;
use crate::{Error, Result};

/// Which gradient-check samples decide pass/fail.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum KinkPolicy {
    /// Samples whose ±h probes switch a relu sign or a max-pool winner are
    /// reported but do not count against the tolerance.
    #[default]
    Exclude,
    /// Every sample counts.
    Include,
}

impl FromStr for KinkPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exclude" => Ok(KinkPolicy::Exclude),
            "include" => Ok(KinkPolicy::Include),
            _ => Err(Error::config("gradcheck_kinks", format!("expected exclude|include, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSettings {
    pub samples: usize,
    pub h: f64,
    pub tolerance: f64,
    /// Spatial extent of the synthetic square input.
    pub extent: usize,
    pub kinks: KinkPolicy,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings { samples: 100, h: 1e-3, tolerance: 1e-3, extent: 32, kinks: KinkPolicy::Exclude }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub phantom: PhantomConfig,
    pub spec: U2NetSpec,
    pub train: TrainConfig,
    pub threshold: f64,
    pub connectivity: Connectivity,
    pub labeler: String,
    pub input_mode: InputMode,
    pub sigma_min: f64,
    pub gradcheck: GradCheckSettings,
    pub montage_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            phantom: PhantomConfig::default(),
            spec: U2NetSpec::full(),
            train: TrainConfig::default(),
            threshold: THRESHOLD,
            connectivity: Connectivity::default(),
            labeler: "union-find".into(),
            input_mode: InputMode::default(),
            sigma_min: SIGMA_MIN,
            gradcheck: GradCheckSettings::default(),
            montage_every: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn parse_floats(key: &str, v: &str, n: usize) -> Result<Vec<f64>> {
    let out: Vec<f64> = v.split_whitespace().flat_map(|s| s.split(',')).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect::<Result<_>>()?;
    if out.len() != n {
        return Err(Error::config(key, format!("expected {n} numbers, got {}", out.len())));
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: IndexMap<String, String> = IndexMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::config(line, format!("line {}: expected key = value", lineno + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if entries.insert(k.to_owned(), v.to_owned()).is_some() {
                return Err(Error::config(k, format!("line {}: key given twice", lineno + 1)));
            }
        }
        let mut cfg = RunConfig::default();
        if let Some(p) = entries.shift_remove("preset") {
            cfg.spec = U2NetSpec::preset(&p).ok_or_else(|| Error::config("preset", format!("expected full|lite|toy, got `{p}`")))?;
        }
        let explicit_channels = entries.contains_key("input_channels");
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        if !explicit_channels {
            cfg.spec.input_channels = cfg.input_mode.channels();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies one key; unknown keys are errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if key == "preset" {
            return Err(Error::config(key, "only allowed in a config file"));
        }
        if self.spec.set(key, v)? {
            return Ok(());
        }
        let p = &mut self.phantom;
        let t = &mut self.train;
        match key {
            "dims" => {
                let d = parse_floats(key, v, 3)?;
                if d.iter().any(|x| x.fract() != 0.0 || *x < 1.0) {
                    return Err(Error::config(key, format!("expected three positive integers, got `{v}`")));
                }
                p.dims = Dims::new(d[0] as usize, d[1] as usize, d[2] as usize);
            }
            "spacing" => {
                let s = parse_floats(key, v, 3)?;
                p.spacing = [s[0], s[1], s[2]];
            }
            "trunk_radius" => p.trunk_radius = parse(key, v)?,
            "trunk_length" => p.trunk_length = parse(key, v)?,
            "depth" => p.depth = parse(key, v)?,
            "angle_min" => p.angle_min = parse(key, v)?,
            "angle_max" => p.angle_max = parse(key, v)?,
            "radius_decay" => p.radius_decay = parse(key, v)?,
            "length_decay" => p.length_decay = parse(key, v)?,
            "hu_parenchyma" => p.hu_parenchyma = parse(key, v)?,
            "hu_lumen" => p.hu_lumen = parse(key, v)?,
            "hu_wall" => p.hu_wall = parse(key, v)?,
            "hu_soft_tissue" => p.hu_soft_tissue = parse(key, v)?,
            "noise_std" => p.noise_std = parse(key, v)?,

            "optimizer" => t.optimizer = v.to_owned(),
            "lr" => t.lr = parse(key, v)?,
            "momentum" => t.momentum = parse(key, v)?,
            "beta1" => t.beta1 = parse(key, v)?,
            "beta2" => t.beta2 = parse(key, v)?,
            "adam_eps" => t.adam_eps = parse(key, v)?,
            "switch_step" => t.switch_step = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "test_fraction" => t.test_fraction = parse(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "loss_weights" => {
                let w = parse_floats(key, v, SIDE_OUTPUTS + 1)?;
                let mut side = [0.0; SIDE_OUTPUTS];
                side.copy_from_slice(&w[..SIDE_OUTPUTS]);
                t.loss_weights = LossWeights { side, fuse: w[SIDE_OUTPUTS] };
            }
            "numeric_width" => t.numeric_width = v.parse()?,

            "threshold" => self.threshold = parse(key, v)?,
            "connectivity" => self.connectivity = v.parse()?,
            "labeler" => self.labeler = v.to_owned(),
            "input_mode" => self.input_mode = v.parse()?,
            "sigma_min" => self.sigma_min = parse(key, v)?,
            "gradcheck_samples" => self.gradcheck.samples = parse(key, v)?,
            "gradcheck_h" => self.gradcheck.h = parse(key, v)?,
            "gradcheck_tolerance" => self.gradcheck.tolerance = parse(key, v)?,
            "gradcheck_extent" => self.gradcheck.extent = parse(key, v)?,
            "gradcheck_kinks" => self.gradcheck.kinks = v.parse()?,
            "montage_every" => self.montage_every = parse(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.spec.validate()?;
        self.train.validate()?;
        optimizers().create(&self.train.optimizer, &self.train)?;
        labelers().create(&self.labeler, &())?;
        if self.spec.input_channels != self.input_mode.channels() {
            return Err(Error::config(
                "input_channels",
                format!("input_mode `{}` produces {} channels, network takes {}", self.input_mode, self.input_mode.channels(), self.spec.input_channels),
            ));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::config("threshold", format!("must lie in (0, 1), got {}", self.threshold)));
        }
        if !(self.sigma_min > 0.0) {
            return Err(Error::config("sigma_min", "must be positive"));
        }
        let g = &self.gradcheck;
        if g.samples == 0 {
            return Err(Error::config("gradcheck_samples", "must be ≥ 1"));
        }
        if !(1e-4..=1e-2).contains(&g.h) {
            return Err(Error::config("gradcheck_h", format!("must lie in [1e-4, 1e-2], got {}", g.h)));
        }
        if !(g.tolerance > 0.0) {
            return Err(Error::config("gradcheck_tolerance", "must be positive"));
        }
        if self.montage_every == 0 {
            return Err(Error::config("montage_every", "must be ≥ 1"));
        }
        Ok(())
    }
}
