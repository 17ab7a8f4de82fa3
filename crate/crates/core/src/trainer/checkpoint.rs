//! U2CKPT1 checkpoints.
//!
//! ```text
//! U2CKPT1
//! @spec <single-line spec>
//! @optimizer <name>
//! @step <n>
//! <tensor name> <shape, x-separated> <byte offset into payload>
//! ...
//!
//! <f32 little-endian payload>
//! ```
//!
//! Tensors: every weight by name, `<bn>.running_mean` / `<bn>.running_var`,
//! and optimizer buffers as `opt<j>/<weight name>`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use u2seg_tensor::{Optimizer, OptimizerState, RunningStats, Tensor};

use super::config::TrainConfig;
use crate::registry::optimizers;
use crate::u2net::{init_params, ParamStore, U2NetSpec};
use crate::{Error, Result};

const MAGIC: &str = "U2CKPT1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: U2NetSpec,
    pub store: ParamStore,
    pub optimizer: String,
    pub opt_state: OptimizerState,
}

impl Checkpoint {
    pub fn step(&self) -> u64 {
        self.opt_state.step
    }

    /// Rebuilds the optimizer with `cfg`'s hyperparameters and the stored state.
    pub fn restore_optimizer(&self, cfg: &TrainConfig) -> Result<Box<dyn Optimizer>> {
        let mut opt = optimizers().create(&self.optimizer, cfg)?;
        *opt.state_mut() = self.opt_state.clone();
        Ok(opt)
    }

    fn entries(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for (name, t) in &self.store.weights {
            out.push((name.clone(), t.shape().to_vec(), t.data().to_vec()));
        }
        for (name, s) in &self.store.running {
            out.push((format!("{name}.running_mean"), vec![s.mean.len()], s.mean.clone()));
            out.push((format!("{name}.running_var"), vec![s.var.len()], s.var.clone()));
        }
        for (name, slot) in self.store.weights.keys().zip(&self.opt_state.slots) {
            for (j, b) in slot.iter().enumerate() {
                out.push((format!("opt{j}/{name}"), b.shape().to_vec(), b.data().to_vec()));
            }
        }
        out
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC}\n@spec {}\n@optimizer {}\n@step {}\n", self.spec, self.optimizer, self.step());
        let mut payload = Vec::new();
        for (name, shape, data) in self.entries() {
            let dims = shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
            writeln!(header, "{name} {dims} {}", payload.len()).unwrap();
            payload.extend(data.iter().flat_map(|&v| (v as f32).to_le_bytes()));
        }
        header.push('\n');
        let mut out = header.into_bytes();
        out.extend(payload);
        out
    }

    pub fn decode(path: &Path, bytes: &[u8]) -> Result<Self> {
        let err = |field: &str, detail: String| Error::format(path, field, detail);
        let split = bytes.windows(2).position(|w| w == b"\n\n").ok_or_else(|| err("header", "no blank line ends the manifest".into()))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| err("header", "not UTF-8".into()))?;
        let payload = &bytes[split + 2..];
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(err("magic", format!("expected `{MAGIC}`")));
        }

        let mut meta: IndexMap<&str, &str> = IndexMap::new();
        let mut manifest = Vec::new();
        for line in lines {
            if let Some(rest) = line.strip_prefix('@') {
                let (k, v) = rest.split_once(' ').ok_or_else(|| err("manifest", format!("bad meta line `{line}`")))?;
                meta.insert(k, v);
                continue;
            }
            let parts: Vec<&str> = line.split(' ').collect();
            let [name, dims, offset] = parts[..] else {
                return Err(err("manifest", format!("expected `name shape offset`, got `{line}`")));
            };
            let shape: Vec<usize> = dims.split('x').map(str::parse).collect::<std::result::Result<_, _>>().map_err(|_| err(name, format!("bad shape `{dims}`")))?;
            let offset: usize = offset.parse().map_err(|_| err(name, format!("bad offset `{offset}`")))?;
            manifest.push((name.to_owned(), shape, offset));
        }
        let get = |k: &str| meta.get(k).copied().ok_or_else(|| err(k, "missing meta entry".into()));
        let spec: U2NetSpec = get("spec")?.parse().map_err(|e: Error| err("spec", e.to_string()))?;
        let optimizer = get("optimizer")?.to_owned();
        let step: u64 = get("step")?.parse().map_err(|_| err("step", "not an integer".into()))?;

        let mut tensors = IndexMap::new();
        let mut expected = 0usize;
        for (name, shape, offset) in manifest {
            if offset != expected {
                return Err(err(&name, format!("offset {offset}, expected {expected}")));
            }
            let n: usize = shape.iter().product();
            let end = offset + 4 * n;
            let chunk = payload.get(offset..end).ok_or_else(|| {
                err(&name, format!("truncated payload: tensor needs bytes {offset}..{end}, payload has {}", payload.len()))
            })?;
            let data = chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
            tensors.insert(name, Tensor::new(shape, data)?);
            expected = end;
        }
        if payload.len() != expected {
            return Err(err("payload", format!("{} bytes after the last tensor", payload.len() - expected)));
        }

        // rebuild against the layout the spec implies
        let template = init_params(&spec, 0);
        let first = template.weights.keys().next().expect("a network has weights");
        let buffers = (0..).take_while(|j| tensors.contains_key(&format!("opt{j}/{first}"))).count();
        let mut take = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = tensors.shift_remove(name).ok_or_else(|| err(name, "missing tensor".into()))?;
            if t.shape() != shape {
                return Err(err(name, format!("shape {:?}, spec implies {shape:?}", t.shape())));
            }
            Ok(t)
        };
        let mut weights = IndexMap::new();
        for (name, t) in &template.weights {
            weights.insert(name.clone(), take(name, t.shape())?);
        }
        let mut running = IndexMap::new();
        for (name, s) in &template.running {
            let c = s.mean.len();
            let mean = take(&format!("{name}.running_mean"), &[c])?.into_data();
            let var = take(&format!("{name}.running_var"), &[c])?.into_data();
            running.insert(name.clone(), RunningStats { mean, var });
        }
        let mut slots = Vec::new();
        if buffers > 0 {
            for (name, t) in &template.weights {
                slots.push((0..buffers).map(|j| take(&format!("opt{j}/{name}"), t.shape())).collect::<Result<Vec<_>>>()?);
            }
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(err(extra, "tensor not used by this spec".into()));
        }
        Ok(Checkpoint { spec, store: ParamStore { weights, running }, optimizer, opt_state: OptimizerState { step, slots } })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(path, &bytes)
    }
}
