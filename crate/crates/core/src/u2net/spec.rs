use std::fmt;
use std::str::FromStr;

use u2seg_tensor::{pool_output_extent, ResizeMode};

use crate::{Error, Result};

pub const ENCODER_STAGES: usize = 6;
pub const DECODER_STAGES: usize = 5;
pub const SIDE_OUTPUTS: usize = 6;

/// Shape of one Residual U-block before width scaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageSpec {
    /// Number of encoder convolutions inside the block (≥ 2).
    pub height: usize,
    /// Dilated ("F") variant: no resizing, dilation 1, 2, 4, …
    pub dilated: bool,
    pub mid_ch: usize,
    pub out_ch: usize,
}

impl StageSpec {
    pub const fn new(height: usize, dilated: bool, mid_ch: usize, out_ch: usize) -> Self {
        StageSpec { height, dilated, mid_ch, out_ch }
    }
}

/// A Residual U-block with resolved channel counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RsuSpec {
    pub height: usize,
    pub dilated: bool,
    pub in_ch: usize,
    pub mid_ch: usize,
    pub out_ch: usize,
}

impl RsuSpec {
    /// Smallest spatial extent the block accepts.
    pub fn min_extent(&self) -> usize {
        if self.dilated {
            1
        } else {
            1 << (self.height - 1)
        }
    }

    /// Dilation of encoder level `level` (1-based).
    pub fn encoder_dilation(&self, level: usize) -> usize {
        if self.dilated {
            1 << (level - 1)
        } else if level == self.height {
            2
        } else {
            1
        }
    }

    /// Dilation of the decoder convolution at `level` (1-based, < height).
    pub fn decoder_dilation(&self, level: usize) -> usize {
        if self.dilated {
            1 << (level - 1)
        } else {
            1
        }
    }

    /// Number of 2×2 pools along the descent.
    pub fn pools(&self) -> usize {
        if self.dilated {
            0
        } else {
            self.height - 2
        }
    }
}

/// Full nested-U network description.
#[derive(Clone, Debug, PartialEq)]
pub struct U2NetSpec {
    pub input_channels: usize,
    /// Stages En_1 … En_6, shallow to deep.
    pub encoder: [StageSpec; ENCODER_STAGES],
    /// Stages De_1 … De_5; De_i pairs with En_i.
    pub decoder: [StageSpec; DECODER_STAGES],
    pub side_channels: usize,
    /// Multiplies every mid/out channel count (rounded, at least 1).
    pub width_factor: f64,
    pub upsample: ResizeMode,
}

impl U2NetSpec {
    /// The canonical full-size configuration.
    pub fn full() -> Self {
        let s = StageSpec::new;
        U2NetSpec {
            input_channels: 2,
            encoder: [s(7, false, 32, 64), s(6, false, 32, 128), s(5, false, 64, 256), s(4, false, 128, 512), s(4, true, 256, 512), s(4, true, 256, 512)],
            decoder: [s(7, false, 16, 64), s(6, false, 32, 64), s(5, false, 64, 128), s(4, false, 128, 256), s(4, true, 256, 512)],
            side_channels: 1,
            width_factor: 1.0,
            upsample: ResizeMode::Bilinear,
        }
    }

    /// Canonical heights with 16 mid / 64 out channels in every stage.
    pub fn lite() -> Self {
        let s = |h, d| StageSpec::new(h, d, 16, 64);
        U2NetSpec {
            input_channels: 2,
            encoder: [s(7, false), s(6, false), s(5, false), s(4, false), s(4, true), s(4, true)],
            decoder: [s(7, false), s(6, false), s(5, false), s(4, false), s(4, true)],
            side_channels: 1,
            width_factor: 1.0,
            upsample: ResizeMode::Bilinear,
        }
    }

    /// Desk-scale network: encoder heights (3,3,2,2,2F,2F), mirrored decoder,
    /// 4 mid / 16 out channels.
    pub fn toy() -> Self {
        let s = |h, d| StageSpec::new(h, d, 16, 64);
        U2NetSpec {
            input_channels: 2,
            encoder: [s(3, false), s(3, false), s(2, false), s(2, false), s(2, true), s(2, true)],
            decoder: [s(3, false), s(3, false), s(2, false), s(2, false), s(2, true)],
            side_channels: 1,
            width_factor: 0.25,
            upsample: ResizeMode::Bilinear,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "full" => Some(Self::full()),
            "lite" => Some(Self::lite()),
            "toy" => Some(Self::toy()),
            _ => None,
        }
    }

    fn scaled(&self, c: usize) -> usize {
        ((c as f64 * self.width_factor).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(Error::config("input_channels", "must be ≥ 1"));
        }
        if self.side_channels == 0 {
            return Err(Error::config("side_channels", "must be ≥ 1"));
        }
        if !(self.width_factor.is_finite() && self.width_factor > 0.0) {
            return Err(Error::config("width_factor", format!("must be positive, got {}", self.width_factor)));
        }
        for (key, stages) in [("encoder_heights", &self.encoder[..]), ("decoder_heights", &self.decoder[..])] {
            if let Some(s) = stages.iter().find(|s| s.height < 2 || s.height > 12) {
                return Err(Error::config(key, format!("height {} outside 2..=12", s.height)));
            }
        }
        Ok(())
    }

    /// Encoder blocks En_1…En_6 with channel wiring resolved.
    pub fn encoder_blocks(&self) -> [RsuSpec; ENCODER_STAGES] {
        let mut in_ch = self.input_channels;
        self.encoder.map(|s| {
            let b = RsuSpec { height: s.height, dilated: s.dilated, in_ch, mid_ch: self.scaled(s.mid_ch), out_ch: self.scaled(s.out_ch) };
            in_ch = b.out_ch;
            b
        })
    }

    /// Decoder blocks De_1…De_5. De_i consumes [upsampled deeper feature, En_i output].
    pub fn decoder_blocks(&self) -> [RsuSpec; DECODER_STAGES] {
        let enc = self.encoder_blocks();
        let mut out = [RsuSpec { height: 2, dilated: false, in_ch: 0, mid_ch: 0, out_ch: 0 }; DECODER_STAGES];
        let mut deeper = enc[ENCODER_STAGES - 1].out_ch;
        for i in (0..DECODER_STAGES).rev() {
            let s = self.decoder[i];
            out[i] = RsuSpec {
                height: s.height,
                dilated: s.dilated,
                in_ch: deeper + enc[i].out_ch,
                mid_ch: self.scaled(s.mid_ch),
                out_ch: self.scaled(s.out_ch),
            };
            deeper = out[i].out_ch;
        }
        out
    }

    /// Channel counts feeding the side heads S_side^(1..6).
    pub fn side_sources(&self) -> [usize; SIDE_OUTPUTS] {
        let enc = self.encoder_blocks();
        let dec = self.decoder_blocks();
        [dec[0].out_ch, dec[1].out_ch, dec[2].out_ch, dec[3].out_ch, dec[4].out_ch, enc[5].out_ch]
    }

    /// Whether a square-or-not input of one spatial extent is legal.
    pub fn extent_ok(&self, extent: usize) -> bool {
        let enc = self.encoder_blocks();
        let dec = self.decoder_blocks();
        let mut e = extent;
        for i in 0..ENCODER_STAGES {
            if e < enc[i].min_extent() || (i < DECODER_STAGES && e < dec[i].min_extent()) {
                return false;
            }
            if i + 1 < ENCODER_STAGES {
                if e < 2 {
                    return false;
                }
                e = pool_output_extent(e);
            }
        }
        true
    }

    /// Smallest spatial extent accepted along each axis.
    pub fn min_extent(&self) -> usize {
        (1..=1 << 20).find(|&e| self.extent_ok(e)).expect("some extent is always legal")
    }

    /// Rejects an `h`×`w` input with the minimal legal extent.
    pub fn check_extent(&self, h: usize, w: usize) -> Result<()> {
        if self.extent_ok(h) && self.extent_ok(w) {
            Ok(())
        } else {
            Err(Error::Extent { min: self.min_extent(), got_h: h, got_w: w })
        }
    }
}

fn fmt_heights(stages: &[StageSpec]) -> String {
    stages.iter().map(|s| format!("{}{}", s.height, if s.dilated { "F" } else { "" })).collect::<Vec<_>>().join(",")
}

fn fmt_list(v: impl Iterator<Item = usize>) -> String {
    v.map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

/// Items separated by commas and/or whitespace.
fn items(s: &str) -> Vec<&str> {
    s.split(|c: char| c == ',' || c.is_whitespace()).filter(|x| !x.is_empty()).collect()
}

pub(crate) fn parse_heights(key: &str, s: &str, n: usize) -> Result<Vec<(usize, bool)>> {
    let items = items(s);
    if items.len() != n {
        return Err(Error::config(key, format!("expected {n} heights, got {}", items.len())));
    }
    items
        .iter()
        .map(|it| {
            let (num, dilated) = match it.strip_suffix(['F', 'f']) {
                Some(num) => (num, true),
                None => (*it, false),
            };
            num.parse::<usize>().map(|h| (h, dilated)).map_err(|_| Error::config(key, format!("bad height `{it}`")))
        })
        .collect()
}

pub(crate) fn parse_list(key: &str, s: &str, n: usize) -> Result<Vec<usize>> {
    let v: Vec<usize> = items(s)
        .into_iter()
        .map(|x| x.parse::<usize>().map_err(|_| Error::config(key, format!("bad integer `{x}`"))))
        .collect::<Result<_>>()?;
    if v.len() != n {
        return Err(Error::config(key, format!("expected {n} values, got {}", v.len())));
    }
    Ok(v)
}

pub(crate) fn parse_resize(key: &str, s: &str) -> Result<ResizeMode> {
    match s {
        "bilinear" => Ok(ResizeMode::Bilinear),
        "nearest" => Ok(ResizeMode::Nearest),
        _ => Err(Error::config(key, format!("expected bilinear|nearest, got `{s}`"))),
    }
}

/// Single-line `key=value;…` form used inside checkpoints.
impl fmt::Display for U2NetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "input_channels={};encoder_heights={};decoder_heights={};encoder_mid={};encoder_out={};decoder_mid={};decoder_out={};side_channels={};width_factor={};upsample={}",
            self.input_channels,
            fmt_heights(&self.encoder),
            fmt_heights(&self.decoder),
            fmt_list(self.encoder.iter().map(|s| s.mid_ch)),
            fmt_list(self.encoder.iter().map(|s| s.out_ch)),
            fmt_list(self.decoder.iter().map(|s| s.mid_ch)),
            fmt_list(self.decoder.iter().map(|s| s.out_ch)),
            self.side_channels,
            self.width_factor,
            match self.upsample {
                ResizeMode::Bilinear => "bilinear",
                ResizeMode::Nearest => "nearest",
            }
        )
    }
}

impl FromStr for U2NetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut spec = U2NetSpec::full();
        for item in s.split(';').filter(|x| !x.trim().is_empty()) {
            let (key, value) = item.split_once('=').ok_or_else(|| Error::config(item, "expected key=value"))?;
            let (key, value) = (key.trim(), value.trim());
            spec.set(key, value)?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

impl U2NetSpec {
    /// Applies one textual field; returns `Ok(false)` for keys it does not own.
    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let num = |v: &str| v.parse::<usize>().map_err(|_| Error::config(key, format!("bad integer `{v}`")));
        match key {
            "input_channels" => self.input_channels = num(value)?,
            "side_channels" => self.side_channels = num(value)?,
            "width_factor" => {
                self.width_factor = value.parse().map_err(|_| Error::config(key, format!("bad number `{value}`")))?
            }
            "upsample" => self.upsample = parse_resize(key, value)?,
            "encoder_heights" => {
                for (s, (h, d)) in self.encoder.iter_mut().zip(parse_heights(key, value, ENCODER_STAGES)?) {
                    s.height = h;
                    s.dilated = d;
                }
            }
            "decoder_heights" => {
                for (s, (h, d)) in self.decoder.iter_mut().zip(parse_heights(key, value, DECODER_STAGES)?) {
                    s.height = h;
                    s.dilated = d;
                }
            }
            "encoder_mid" => self.encoder.iter_mut().zip(parse_list(key, value, ENCODER_STAGES)?).for_each(|(s, c)| s.mid_ch = c),
            "encoder_out" => self.encoder.iter_mut().zip(parse_list(key, value, ENCODER_STAGES)?).for_each(|(s, c)| s.out_ch = c),
            "decoder_mid" => self.decoder.iter_mut().zip(parse_list(key, value, DECODER_STAGES)?).for_each(|(s, c)| s.mid_ch = c),
            "decoder_out" => self.decoder.iter_mut().zip(parse_list(key, value, DECODER_STAGES)?).for_each(|(s, c)| s.out_ch = c),
            _ => return Ok(false),
        }
        Ok(true)
    }
}
