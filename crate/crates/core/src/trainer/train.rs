use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use u2seg_tensor::{Optimizer, Tape};

use super::checkpoint::Checkpoint;
use super::config::{NumericWidth, TrainConfig};
use super::dataset::{batch, Dataset, Sample};
use crate::loss::deep_supervision_loss;
use crate::registry::optimizers;
use crate::u2net::{init_params, u2net_forward, Bound, NetMode, ParamStore, U2NetSpec};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: u64,
    /// Weighted deep-supervision total.
    pub train_loss: f64,
    /// Dice loss of the fused map alone.
    pub fuse_loss: f64,
    /// Held-out total, on the last step of each epoch.
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossCurve {
    pub records: Vec<LossRecord>,
}

impl LossCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,step,train_loss,val_loss\n");
        for r in &self.records {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{},{}", r.epoch, r.step, r.train_loss, val).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Mean of `f` over steps `from..=to` (1-based, inclusive).
    pub fn window_mean(&self, from: u64, to: u64, f: impl Fn(&LossRecord) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self.records.iter().filter(|r| (from..=to).contains(&r.step)).map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub curve: LossCurve,
}

fn check_samples(spec: &U2NetSpec, samples: &[Sample], which: &str) -> Result<()> {
    let Some(first) = samples.first() else { return Ok(()) };
    let shape = first.input.shape();
    if shape.len() != 3 || shape[0] != spec.input_channels {
        return Err(Error::Shape { what: "training sample", detail: format!("{which} input {shape:?}, network takes {} channels", spec.input_channels) });
    }
    spec.check_extent(shape[1], shape[2])?;
    for s in samples {
        if s.input.shape() != shape || s.target.shape() != [1, shape[1], shape[2]] {
            return Err(Error::Shape {
                what: "training sample",
                detail: format!("{which} case {} slice {}: input {:?} target {:?}", s.case, s.slice, s.input.shape(), s.target.shape()),
            });
        }
    }
    Ok(())
}

/// Eval-mode deep-supervision loss, averaged per sample over `samples`.
pub fn validation_loss(cfg: &TrainConfig, spec: &U2NetSpec, store: &ParamStore, samples: &[Sample]) -> Result<f64> {
    let mut acc = 0.0;
    let idx: Vec<usize> = (0..samples.len()).collect();
    for chunk in idx.chunks(cfg.batch_size) {
        let (x, gt) = batch(samples, chunk);
        let mut tape = Tape::new();
        let p = Bound::bind(&mut tape, store, false);
        let x = tape.constant(x);
        let gt = tape.constant(gt);
        let out = u2net_forward(&mut tape, x, spec, &p, &mut NetMode::Eval { running: &store.running })?;
        let maps = out.probability_maps(&mut tape)?;
        let loss = deep_supervision_loss(&mut tape, &maps, gt, &cfg.loss_weights)?;
        acc += tape.value(loss.total).item() * chunk.len() as f64;
    }
    Ok(acc / samples.len() as f64)
}

/// Trains from a fresh seeded initialization.
pub fn train(cfg: &TrainConfig, spec: &U2NetSpec, data: &Dataset) -> Result<TrainOutput> {
    let mut store = init_params(spec, cfg.seed);
    if cfg.numeric_width == NumericWidth::F32 {
        store.round_to_f32();
    }
    let opt = optimizers().create(&cfg.optimizer, cfg)?;
    train_from(cfg, spec, data, store, opt)
}

/// Trains starting from `store` with a given optimizer (and its state).
pub fn train_from(
    cfg: &TrainConfig,
    spec: &U2NetSpec,
    data: &Dataset,
    mut store: ParamStore,
    mut opt: Box<dyn Optimizer>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    spec.validate()?;
    if data.train.is_empty() {
        return Err(Error::Invalid("training set is empty".into()));
    }
    check_samples(spec, &data.train, "train")?;
    check_samples(spec, &data.val, "validation")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut curve = LossCurve::default();
    let mut step = opt.state().step;
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (x, gt) = batch(&data.train, chunk);
            let mut tape = Tape::new();
            let p = Bound::bind(&mut tape, &store, true);
            let x = tape.constant(x);
            let gt = tape.constant(gt);
            let out = u2net_forward(&mut tape, x, spec, &p, &mut NetMode::Train { running: Some(&mut store.running) })?;
            let maps = out.probability_maps(&mut tape)?;
            let loss = deep_supervision_loss(&mut tape, &maps, gt, &cfg.loss_weights)?;
            let total = tape.value(loss.total).item();
            step += 1;
            if !total.is_finite() {
                return Err(Error::NonFinite { step, epoch });
            }
            tape.backward(loss.total)?;
            let vars = p.vars();
            let zeros: Vec<Vec<f64>> = store.weights.values().map(|t| vec![0.0; t.numel()]).collect();
            let grads: Vec<&[f64]> = vars.iter().zip(&zeros).map(|(&v, z)| tape.grad(v).unwrap_or(z)).collect();
            let mut params: Vec<_> = store.weights.values_mut().collect();
            opt.step(&mut params, &grads)?;
            if cfg.numeric_width == NumericWidth::F32 {
                store.round_to_f32();
                opt.state_mut().round_to_f32();
            }
            curve.records.push(LossRecord { epoch, step, train_loss: total, fuse_loss: tape.value(loss.fuse()).item(), val_loss: None });
        }
        if !data.val.is_empty() {
            let v = validation_loss(cfg, spec, &store, &data.val)?;
            if !v.is_finite() {
                return Err(Error::NonFinite { step, epoch });
            }
            if let Some(last) = curve.records.last_mut() {
                last.val_loss = Some(v);
            }
        }
    }
    let checkpoint = Checkpoint { spec: spec.clone(), store, optimizer: opt.name().to_owned(), opt_state: opt.state().clone() };
    Ok(TrainOutput { checkpoint, curve })
}
