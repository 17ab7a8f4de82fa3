use indexmap::IndexMap;
use u2seg_tensor::{BatchNormMode, Conv2dGeom, ResizeMode, RunningStats, Tape, Tensor, Var, BN_EPS};

use super::params::ParamStore;
use super::spec::{RsuSpec, U2NetSpec, ENCODER_STAGES, SIDE_OUTPUTS};
use crate::{Error, Result};

/// How batch-norm layers normalize during a forward pass.
pub enum NetMode<'a> {
    /// Batch statistics; running statistics are updated when a map is given.
    Train { running: Option<&'a mut IndexMap<String, RunningStats>> },
    /// Stored running statistics.
    Eval { running: &'a IndexMap<String, RunningStats> },
}

impl NetMode<'_> {
    fn batchnorm(&mut self, name: &str) -> Result<BatchNormMode<'_>> {
        let missing = || Error::Invalid(format!("no running statistics for `{name}`"));
        Ok(match self {
            NetMode::Train { running: None } => BatchNormMode::Train { running: None },
            NetMode::Train { running: Some(map) } => {
                BatchNormMode::Train { running: Some(map.get_mut(name).ok_or_else(missing)?) }
            }
            NetMode::Eval { running } => BatchNormMode::Eval { running: running.get(name).ok_or_else(missing)? },
        })
    }
}

/// Parameter names bound to tape variables.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Pushes every weight of `store` onto the tape, as trainable leaves or constants.
    pub fn bind(tape: &mut Tape, store: &ParamStore, trainable: bool) -> Self {
        let vars = store
            .weights
            .iter()
            .map(|(name, t)| {
                let v = if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Pairs the store's names, in order, with already-created variables.
    pub fn from_vars(store: &ParamStore, vars: &[Var]) -> Result<Self> {
        if vars.len() != store.weights.len() {
            return Err(Error::Shape {
                what: "parameter binding",
                detail: format!("{} variables for {} parameters", vars.len(), store.weights.len()),
            });
        }
        Ok(Bound { vars: store.weights.keys().cloned().zip(vars.iter().copied()).collect() })
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::Invalid(format!("missing parameter `{name}`")))
    }

    /// Variables in store order.
    pub fn vars(&self) -> Vec<Var> {
        self.vars.values().copied().collect()
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct NetOutput {
    pub side_logits: [Var; SIDE_OUTPUTS],
    pub side: [Var; SIDE_OUTPUTS],
    pub fuse_logit: Var,
    pub fuse: Var,
}

impl NetOutput {
    /// Side maps 1..6 then the fused map, each reduced to one channel by
    /// channel mean when the heads are wider than one channel.
    pub fn probability_maps(&self, tape: &mut Tape) -> Result<[Var; SIDE_OUTPUTS + 1]> {
        let mut out = [self.fuse; SIDE_OUTPUTS + 1];
        out[..SIDE_OUTPUTS].copy_from_slice(&self.side);
        for v in &mut out {
            if tape.value(*v).shape()[1] > 1 {
                *v = tape.mean_channels(*v)?;
            }
        }
        Ok(out)
    }
}

/// Materialized probabilities of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMaps {
    pub side: Vec<Tensor>,
    pub fuse: Tensor,
}

impl SaliencyMaps {
    pub fn from_output(tape: &Tape, out: &NetOutput) -> Self {
        SaliencyMaps { side: out.side.iter().map(|&v| tape.value(v).clone()).collect(), fuse: tape.value(out.fuse).clone() }
    }

    /// Whether every value of every map lies strictly inside (0, 1).
    pub fn in_open_unit(&self) -> bool {
        self.side.iter().chain([&self.fuse]).all(|t| t.data().iter().all(|&p| p > 0.0 && p < 1.0))
    }
}

fn spatial(tape: &Tape, v: Var) -> (usize, usize) {
    let s = tape.value(v).shape();
    (s[2], s[3])
}

fn conv(tape: &mut Tape, p: &Bound, name: &str, x: Var, k: usize, dilation: usize) -> Result<Var> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    Ok(tape.conv2d(x, w, Some(b), Conv2dGeom::same(k, dilation))?)
}

/// conv3×3 → batch-norm → relu.
fn rebnconv(tape: &mut Tape, p: &Bound, mode: &mut NetMode<'_>, name: &str, x: Var, dilation: usize) -> Result<Var> {
    let y = conv(tape, p, &format!("{name}.conv"), x, 3, dilation)?;
    let bn = format!("{name}.bn");
    let gamma = p.get(&format!("{bn}.gamma"))?;
    let beta = p.get(&format!("{bn}.beta"))?;
    let y = tape.batchnorm2d(y, gamma, beta, mode.batchnorm(&bn)?, BN_EPS)?;
    Ok(tape.relu(y))
}

/// One Residual U-block: input transform plus an inner U over `mid_ch`,
/// added back onto the input transform.
pub fn rsu_forward(
    tape: &mut Tape,
    x: Var,
    prefix: &str,
    b: &RsuSpec,
    p: &Bound,
    mode: &mut NetMode<'_>,
    upsample: ResizeMode,
) -> Result<Var> {
    let (_, c, h, w) = tape.value(x).dims4("rsu")?;
    if c != b.in_ch {
        return Err(Error::Shape { what: "rsu input", detail: format!("{prefix}: {c} channels, expected {}", b.in_ch) });
    }
    if h < b.min_extent() || w < b.min_extent() {
        return Err(Error::Extent { min: b.min_extent(), got_h: h, got_w: w });
    }
    let l = b.height;
    let hx_in = rebnconv(tape, p, mode, &format!("{prefix}.in"), x, 1)?;
    let mut enc = vec![rebnconv(tape, p, mode, &format!("{prefix}.e1"), hx_in, b.encoder_dilation(1))?];
    for lvl in 2..=l {
        let prev = enc[lvl - 2];
        let input = if !b.dilated && lvl < l { tape.maxpool2d(prev)? } else { prev };
        enc.push(rebnconv(tape, p, mode, &format!("{prefix}.e{lvl}"), input, b.encoder_dilation(lvl))?);
    }
    let mut d = enc[l - 1];
    for lvl in (1..l).rev() {
        let skip = enc[lvl - 1];
        let up = if !b.dilated && lvl + 2 <= l {
            let (sh, sw) = spatial(tape, skip);
            tape.resize_to(d, sh, sw, upsample)?
        } else {
            d
        };
        let cat = tape.concat_channels(&[up, skip])?;
        d = rebnconv(tape, p, mode, &format!("{prefix}.d{lvl}"), cat, b.decoder_dilation(lvl))?;
    }
    Ok(tape.add(d, hx_in)?)
}

/// Full nested-U forward pass on an N×C×H×W batch.
pub fn u2net_forward(tape: &mut Tape, x: Var, spec: &U2NetSpec, p: &Bound, mode: &mut NetMode<'_>) -> Result<NetOutput> {
    let (_, c, h, w) = tape.value(x).dims4("u2net")?;
    if c != spec.input_channels {
        return Err(Error::Shape { what: "network input", detail: format!("{c} channels, expected {}", spec.input_channels) });
    }
    spec.check_extent(h, w)?;
    let enc_specs = spec.encoder_blocks();
    let dec_specs = spec.decoder_blocks();

    let mut enc = Vec::with_capacity(ENCODER_STAGES);
    for (i, b) in enc_specs.iter().enumerate() {
        let input = if i == 0 { x } else { tape.maxpool2d(enc[i - 1])? };
        enc.push(rsu_forward(tape, input, &format!("enc{}", i + 1), b, p, mode, spec.upsample)?);
    }

    let mut dec = vec![enc[ENCODER_STAGES - 1]; dec_specs.len()];
    let mut deeper = enc[ENCODER_STAGES - 1];
    for i in (0..dec_specs.len()).rev() {
        let (sh, sw) = spatial(tape, enc[i]);
        let up = tape.resize_to(deeper, sh, sw, spec.upsample)?;
        let cat = tape.concat_channels(&[up, enc[i]])?;
        dec[i] = rsu_forward(tape, cat, &format!("dec{}", i + 1), &dec_specs[i], p, mode, spec.upsample)?;
        deeper = dec[i];
    }

    let sources = [dec[0], dec[1], dec[2], dec[3], dec[4], enc[ENCODER_STAGES - 1]];
    let mut side_logits = [x; SIDE_OUTPUTS];
    let mut side = [x; SIDE_OUTPUTS];
    for (k, &src) in sources.iter().enumerate() {
        let logit = conv(tape, p, &format!("side{}", k + 1), src, 3, 1)?;
        let logit = if spatial(tape, logit) == (h, w) { logit } else { tape.resize_to(logit, h, w, spec.upsample)? };
        side_logits[k] = logit;
        side[k] = tape.sigmoid(logit);
    }
    let cat = tape.concat_channels(&side_logits)?;
    let fuse_logit = conv(tape, p, "fuse", cat, 1, 1)?;
    let fuse = tape.sigmoid(fuse_logit);
    Ok(NetOutput { side_logits, side, fuse_logit, fuse })
}

/// Eval-mode inference with frozen parameters.
pub fn infer(spec: &U2NetSpec, store: &ParamStore, input: &Tensor) -> Result<SaliencyMaps> {
    let mut tape = Tape::new();
    let p = Bound::bind(&mut tape, store, false);
    let x = tape.constant(input.clone());
    let out = u2net_forward(&mut tape, x, spec, &p, &mut NetMode::Eval { running: &store.running })?;
    Ok(SaliencyMaps::from_output(&tape, &out))
}
