//! RVOL1: a four-line text header, a blank line, then a little-endian
//! row-major (z, y, x) payload.
//!
//! ```text
//! RVOL1
//! dims: D H W
//! dtype: f32|i16|u8
//! spacing: sz sy sx
//!
//! <payload>
//! ```

use std::fmt;
use std::fs;
use std::path::Path;

use crate::volume::{Dims, Mask, Spacing, Volume};
use crate::{Error, Result};

const MAGIC: &str = "RVOL1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32,
    I16,
    U8,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::I16 => 2,
            Dtype::U8 => 1,
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dtype::F32 => "f32",
            Dtype::I16 => "i16",
            Dtype::U8 => "u8",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum VoxelData {
    F32(Vec<f32>),
    I16(Vec<i16>),
    U8(Vec<u8>),
}

impl VoxelData {
    pub fn dtype(&self) -> Dtype {
        match self {
            VoxelData::F32(_) => Dtype::F32,
            VoxelData::I16(_) => Dtype::I16,
            VoxelData::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VoxelData::F32(v) => v.len(),
            VoxelData::I16(v) => v.len(),
            VoxelData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            VoxelData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VoxelData::I16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            VoxelData::U8(v) => v.clone(),
        }
    }

    fn from_le_bytes(dtype: Dtype, b: &[u8]) -> Self {
        match dtype {
            Dtype::F32 => VoxelData::F32(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            Dtype::I16 => VoxelData::I16(b.chunks_exact(2).map(|c| i16::from_le_bytes(c.try_into().unwrap())).collect()),
            Dtype::U8 => VoxelData::U8(b.to_vec()),
        }
    }
}

/// File contents before interpretation as a volume or mask.
#[derive(Clone, Debug, PartialEq)]
pub struct RawVolume {
    pub dims: Dims,
    pub spacing: Spacing,
    pub data: VoxelData,
}

pub fn encode(raw: &RawVolume) -> Result<Vec<u8>> {
    if raw.data.len() != raw.dims.len() {
        return Err(Error::Shape { what: "rvol payload", detail: format!("{} voxels for {}", raw.data.len(), raw.dims) });
    }
    let [sz, sy, sx] = raw.spacing;
    let mut out = format!(
        "{MAGIC}\ndims: {} {} {}\ndtype: {}\nspacing: {sz:?} {sy:?} {sx:?}\n\n",
        raw.dims.d,
        raw.dims.h,
        raw.dims.w,
        raw.data.dtype()
    )
    .into_bytes();
    out.extend(raw.data.to_le_bytes());
    Ok(out)
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<RawVolume> {
    let err = |field: &str, detail: String| Error::format(path, field, detail);
    let split = bytes.windows(2).position(|w| w == b"\n\n").ok_or_else(|| err("header", "no blank line ends the header".into()))?;
    let header = std::str::from_utf8(&bytes[..split]).map_err(|_| err("header", "not UTF-8".into()))?;
    let payload = &bytes[split + 2..];
    let mut lines = header.lines();

    let magic = lines.next().unwrap_or_default();
    if magic != MAGIC {
        return Err(err("magic", format!("expected `{MAGIC}`, got `{magic}`")));
    }
    let mut field = |key: &str| -> Result<Vec<String>> {
        let line = lines.next().ok_or_else(|| err(key, "missing".into()))?;
        let rest = line.strip_prefix(key).and_then(|r| r.strip_prefix(':')).ok_or_else(|| err(key, format!("expected `{key}:`, got `{line}`")))?;
        Ok(rest.split_whitespace().map(str::to_owned).collect())
    };

    let d = field("dims")?;
    let dims: Vec<usize> = d.iter().map(|s| s.parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|_| err("dims", format!("bad integer in {d:?}")))?;
    if dims.len() != 3 || dims.contains(&0) {
        return Err(err("dims", format!("expected three positive extents, got {d:?}")));
    }
    let dims = Dims::new(dims[0], dims[1], dims[2]);

    let t = field("dtype")?;
    let dtype = match t.as_slice() {
        [s] if s == "f32" => Dtype::F32,
        [s] if s == "i16" => Dtype::I16,
        [s] if s == "u8" => Dtype::U8,
        _ => return Err(err("dtype", format!("unknown dtype {t:?}"))),
    };

    let s = field("spacing")?;
    let spacing: Vec<f64> = s.iter().map(|v| v.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| err("spacing", format!("bad number in {s:?}")))?;
    if spacing.len() != 3 || spacing.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(err("spacing", format!("expected three positive values, got {s:?}")));
    }
    if let Some(extra) = lines.next() {
        return Err(err("header", format!("unexpected line `{extra}`")));
    }

    let want = dims.len() * dtype.size();
    if payload.len() < want {
        return Err(err("payload", format!("truncated: {dims} {dtype} needs {want} bytes, found {}", payload.len())));
    }
    if payload.len() > want {
        return Err(err("payload", format!("{} trailing bytes after {want}", payload.len() - want)));
    }
    Ok(RawVolume { dims, spacing: [spacing[0], spacing[1], spacing[2]], data: VoxelData::from_le_bytes(dtype, payload) })
}

pub fn write_raw(raw: &RawVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(raw)?).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: impl AsRef<Path>) -> Result<RawVolume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

/// Writes an f32 volume.
pub fn write_volume(v: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_raw(&RawVolume { dims: v.dims, spacing: v.spacing, data: VoxelData::F32(v.data.clone()) }, path)
}

/// Writes a u8 mask.
pub fn write_mask(m: &Mask, path: impl AsRef<Path>) -> Result<()> {
    write_raw(&RawVolume { dims: m.dims, spacing: m.spacing, data: VoxelData::U8(m.data.clone()) }, path)
}

/// Reads any dtype as f32 values (exact for i16 and u8).
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let raw = read_raw(path)?;
    let data = match raw.data {
        VoxelData::F32(v) => v,
        VoxelData::I16(v) => v.into_iter().map(f32::from).collect(),
        VoxelData::U8(v) => v.into_iter().map(f32::from).collect(),
    };
    Volume::new(raw.dims, raw.spacing, data)
}

/// Reads a u8 file whose values are all 0 or 1.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let raw = read_raw(path)?;
    match raw.data {
        VoxelData::U8(v) => {
            if let Some(i) = v.iter().position(|&x| x > 1) {
                return Err(Error::format(path, "payload", format!("mask value {} at voxel {i} is not binary", v[i])));
            }
            Mask::new(raw.dims, raw.spacing, v)
        }
        other => Err(Error::format(path, "dtype", format!("masks are u8, got {}", other.dtype()))),
    }
}
