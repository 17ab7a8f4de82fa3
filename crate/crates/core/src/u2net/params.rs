use std::fmt::Write as _;
use std::hash::{DefaultHasher, Hash, Hasher};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use u2seg_tensor::{RunningStats, Tensor};

use super::spec::{RsuSpec, U2NetSpec, SIDE_OUTPUTS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv { in_ch: usize, out_ch: usize, k: usize, dilation: usize },
    BatchNorm { ch: usize },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layer {
    pub name: String,
    pub kind: LayerKind,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::Conv { in_ch, out_ch, k, .. } => out_ch * in_ch * k * k + out_ch,
            LayerKind::BatchNorm { ch } => 2 * ch,
        }
    }

    pub fn type_name(&self) -> String {
        match self.kind {
            LayerKind::Conv { k, dilation: 1, .. } => format!("conv{k}x{k}"),
            LayerKind::Conv { k, dilation, .. } => format!("conv{k}x{k}d{dilation}"),
            LayerKind::BatchNorm { .. } => "batchnorm".into(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self.kind {
            LayerKind::Conv { in_ch, out_ch, k, .. } => vec![out_ch, in_ch, k, k],
            LayerKind::BatchNorm { ch } => vec![ch],
        }
    }
}

fn rebnconv(out: &mut Vec<Layer>, name: String, in_ch: usize, out_ch: usize, dilation: usize) {
    out.push(Layer { name: format!("{name}.conv"), kind: LayerKind::Conv { in_ch, out_ch, k: 3, dilation } });
    out.push(Layer { name: format!("{name}.bn"), kind: LayerKind::BatchNorm { ch: out_ch } });
}

fn rsu_layers(out: &mut Vec<Layer>, prefix: &str, b: &RsuSpec) {
    rebnconv(out, format!("{prefix}.in"), b.in_ch, b.out_ch, 1);
    rebnconv(out, format!("{prefix}.e1"), b.out_ch, b.mid_ch, b.encoder_dilation(1));
    for l in 2..=b.height {
        rebnconv(out, format!("{prefix}.e{l}"), b.mid_ch, b.mid_ch, b.encoder_dilation(l));
    }
    for l in (1..b.height).rev() {
        let o = if l == 1 { b.out_ch } else { b.mid_ch };
        rebnconv(out, format!("{prefix}.d{l}"), 2 * b.mid_ch, o, b.decoder_dilation(l));
    }
}

/// Every layer of the network in execution order.
pub fn layers(spec: &U2NetSpec) -> Vec<Layer> {
    let mut out = Vec::new();
    for (i, b) in spec.encoder_blocks().iter().enumerate() {
        rsu_layers(&mut out, &format!("enc{}", i + 1), b);
    }
    for (i, b) in spec.decoder_blocks().iter().enumerate().rev() {
        rsu_layers(&mut out, &format!("dec{}", i + 1), b);
    }
    let sc = spec.side_channels;
    for (k, c) in spec.side_sources().iter().enumerate() {
        out.push(Layer { name: format!("side{}", k + 1), kind: LayerKind::Conv { in_ch: *c, out_ch: sc, k: 3, dilation: 1 } });
    }
    out.push(Layer { name: "fuse".into(), kind: LayerKind::Conv { in_ch: SIDE_OUTPUTS * sc, out_ch: sc, k: 1, dilation: 1 } });
    out
}

/// Named trainable tensors plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub weights: IndexMap<String, Tensor>,
    pub running: IndexMap<String, RunningStats>,
}

impl ParamStore {
    pub fn num_params(&self) -> usize {
        self.weights.values().map(Tensor::numel).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.weights.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.weights.get_mut(name)
    }

    pub fn round_to_f32(&mut self) {
        self.weights.values_mut().for_each(Tensor::round_to_f32);
        for s in self.running.values_mut() {
            for v in s.mean.iter_mut().chain(s.var.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Hash of every weight and running statistic bit pattern.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, t) in &self.weights {
            name.hash(&mut h);
            t.shape().hash(&mut h);
            t.data().iter().for_each(|v| v.to_bits().hash(&mut h));
        }
        for (name, s) in &self.running {
            name.hash(&mut h);
            s.mean.iter().chain(&s.var).for_each(|v| v.to_bits().hash(&mut h));
        }
        h.finish()
    }
}

/// He-normal convolution weights (σ = √(2/fan_in)), zero biases, γ = 1,
/// β = 0, running mean 0 / var 1. Deterministic in `seed`.
pub fn init_params(spec: &U2NetSpec, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut weights = IndexMap::new();
    let mut running = IndexMap::new();
    for layer in layers(spec) {
        match layer.kind {
            LayerKind::Conv { in_ch, out_ch, k, .. } => {
                let std = (2.0 / (in_ch * k * k) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("finite std");
                let shape = [out_ch, in_ch, k, k];
                let w = Tensor::from_fn(&shape, |_| normal.sample(&mut rng));
                weights.insert(format!("{}.w", layer.name), w);
                weights.insert(format!("{}.b", layer.name), Tensor::zeros(&[out_ch]));
            }
            LayerKind::BatchNorm { ch } => {
                weights.insert(format!("{}.gamma", layer.name), Tensor::ones(&[ch]));
                weights.insert(format!("{}.beta", layer.name), Tensor::zeros(&[ch]));
                running.insert(layer.name, RunningStats::new(ch));
            }
        }
    }
    ParamStore { weights, running }
}

/// Closed-form parameter count (weights, biases, γ, β).
pub fn param_count(spec: &U2NetSpec) -> usize {
    let rebn = |i: usize, o: usize| 9 * i * o + 3 * o;
    let rsu = |b: &RsuSpec| {
        rebn(b.in_ch, b.out_ch)
            + rebn(b.out_ch, b.mid_ch)
            + (b.height - 1) * rebn(b.mid_ch, b.mid_ch)
            + (b.height - 2) * rebn(2 * b.mid_ch, b.mid_ch)
            + rebn(2 * b.mid_ch, b.out_ch)
    };
    let sc = spec.side_channels;
    spec.encoder_blocks().iter().map(rsu).sum::<usize>()
        + spec.decoder_blocks().iter().map(rsu).sum::<usize>()
        + spec.side_sources().iter().map(|c| 9 * c * sc + sc).sum::<usize>()
        + (SIDE_OUTPUTS * sc * sc + sc)
}

/// Plain-text layer table: `name type shape params`, one row per layer,
/// then a `total` row.
pub fn describe(spec: &U2NetSpec) -> String {
    let layers = layers(spec);
    let width = layers.iter().map(|l| l.name.len()).max().unwrap_or(4).max(4);
    let mut out = String::new();
    writeln!(out, "{:<width$}  {:<12}  {:<16}  {:>10}", "name", "type", "shape", "params").unwrap();
    let mut total = 0;
    for l in &layers {
        let shape = l.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
        total += l.param_count();
        writeln!(out, "{:<width$}  {:<12}  {:<16}  {:>10}", l.name, l.type_name(), shape, l.param_count()).unwrap();
    }
    writeln!(out, "{:<width$}  {:<12}  {:<16}  {:>10}", "total", "", "", total).unwrap();
    out
}
