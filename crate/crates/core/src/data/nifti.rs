//! Read-only support for uncompressed single-file NIfTI-1 volumes.

use std::fs;
use std::path::Path;

use crate::volume::{Dims, Volume};
use crate::{Error, Result};

const HEADER_LEN: usize = 348;
const MAGIC: &[u8; 4] = b"n+1\0";

struct Reader<'a> {
    b: &'a [u8],
    big: bool,
}

impl Reader<'_> {
    fn arr<const N: usize>(&self, at: usize) -> [u8; N] {
        self.b[at..at + N].try_into().unwrap()
    }

    fn i16(&self, at: usize) -> i16 {
        if self.big { i16::from_be_bytes(self.arr(at)) } else { i16::from_le_bytes(self.arr(at)) }
    }

    fn f32(&self, at: usize) -> f32 {
        if self.big { f32::from_be_bytes(self.arr(at)) } else { f32::from_le_bytes(self.arr(at)) }
    }
}

pub fn read_nifti(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, &bytes)
}

/// Parses NIfTI-1 bytes; `path` only labels errors.
pub fn decode(path: &Path, b: &[u8]) -> Result<Volume> {
    let err = |field: &str, detail: String| Error::format(path, field, detail);
    if b.len() < HEADER_LEN {
        return Err(err("header", format!("{} bytes, need {HEADER_LEN}", b.len())));
    }
    let size_bytes: [u8; 4] = b[0..4].try_into().unwrap();
    let big = if i32::from_le_bytes(size_bytes) == HEADER_LEN as i32 {
        false
    } else if i32::from_be_bytes(size_bytes) == HEADER_LEN as i32 {
        true
    } else {
        return Err(err("sizeof_hdr", format!("expected 348 in either byte order, got {}", i32::from_le_bytes(size_bytes))));
    };
    let r = Reader { b, big };

    if &b[344..348] != MAGIC {
        return Err(err("magic", format!("expected \"n+1\\0\", got {:?}", String::from_utf8_lossy(&b[344..348]))));
    }
    let dim: Vec<i16> = (0..8).map(|k| r.i16(40 + 2 * k)).collect();
    if dim[0] != 3 {
        return Err(err("dim", format!("dim[0] = {}, only 3D volumes are supported", dim[0])));
    }
    if dim[1..4].iter().any(|&n| n < 1) {
        return Err(err("dim", format!("non-positive extent in {:?}", &dim[1..4])));
    }
    let (nx, ny, nz) = (dim[1] as usize, dim[2] as usize, dim[3] as usize);
    let datatype = r.i16(70);
    let elem = match datatype {
        4 => 2,
        16 => 4,
        other => return Err(err("datatype", format!("code {other} unsupported (int16 = 4, float32 = 16)"))),
    };
    let pixdim: Vec<f32> = (0..8).map(|k| r.f32(76 + 4 * k)).collect();
    let vox_offset = r.f32(108);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_LEN as f32) {
        return Err(err("vox_offset", format!("{vox_offset} is not a valid payload offset")));
    }
    let mut slope = r.f32(112) as f64;
    if slope == 0.0 || !slope.is_finite() {
        slope = 1.0;
    }
    let inter = r.f32(116) as f64;
    let inter = if inter.is_finite() { inter } else { 0.0 };

    let start = vox_offset as usize;
    let n = nx * ny * nz;
    let payload = b.get(start..start + n * elem).ok_or_else(|| {
        err("payload", format!("truncated: {n} voxels of {elem} bytes from offset {start}, file has {} bytes", b.len()))
    })?;
    let raw: Vec<f64> = match datatype {
        4 => (0..n).map(|i| Reader { b: payload, big }.i16(2 * i) as f64).collect(),
        _ => (0..n).map(|i| Reader { b: payload, big }.f32(4 * i) as f64).collect(),
    };
    let data = raw.into_iter().map(|v| (v * slope + inter) as f32).collect();
    let spacing_of = |v: f32| if v.is_finite() && v > 0.0 { v as f64 } else { 1.0 };
    let spacing = [spacing_of(pixdim[3]), spacing_of(pixdim[2]), spacing_of(pixdim[1])];
    Volume::new(Dims::new(nz, ny, nx), spacing, data)
}
