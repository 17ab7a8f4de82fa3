//! 3D scalar, binary and label fields on a (D, H, W) grid.

use crate::{Error, Result};

/// Grid extents: depth (axial slices), height, width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(d: usize, h: usize, w: usize) -> Self {
        Dims { d, h, w }
    }

    pub fn len(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn slice_len(&self) -> usize {
        self.h * self.w
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.h + y) * self.w + x
    }

    pub fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.w;
        let y = (i / self.w) % self.h;
        (i / self.slice_len(), y, x)
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}×{}×{}", self.d, self.h, self.w)
    }
}

/// Voxel size in mm along (z, y, x).
pub type Spacing = [f64; 3];

/// Scalar field, e.g. CT intensities or probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: Dims,
    pub spacing: Spacing,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Shape { what: "volume", detail: format!("{dims} needs {} values, got {}", dims.len(), data.len()) });
        }
        Ok(Volume { dims, spacing, data })
    }

    pub fn filled(dims: Dims, spacing: Spacing, value: f32) -> Self {
        Volume { dims, spacing, data: vec![value; dims.len()] }
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.dims.slice_len();
        &self.data[z * n..][..n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [f32] {
        let n = self.dims.slice_len();
        &mut self.data[z * n..][..n]
    }
}

/// Binary field with values in {0, 1}.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub dims: Dims,
    pub spacing: Spacing,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<u8>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::Shape { what: "mask", detail: format!("{dims} needs {} values, got {}", dims.len(), data.len()) });
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::Invalid(format!("mask value {} at voxel {i} is not binary", data[i])));
        }
        Ok(Mask { dims, spacing, data })
    }

    pub fn empty(dims: Dims, spacing: Spacing) -> Self {
        Mask { dims, spacing, data: vec![0; dims.len()] }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let n = self.dims.slice_len();
        &self.data[z * n..][..n]
    }

    /// The mask as a {0, 1} probability volume.
    pub fn to_volume(&self) -> Volume {
        Volume { dims: self.dims, spacing: self.spacing, data: self.data.iter().map(|&v| v as f32).collect() }
    }
}

/// Connected-component labels: 0 is background, 1..=K are components in
/// decreasing size order.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelMap {
    pub dims: Dims,
    pub spacing: Spacing,
    pub labels: Vec<u32>,
    /// `sizes[k]` is the voxel count of label `k + 1`.
    pub sizes: Vec<usize>,
}

impl LabelMap {
    pub fn num_components(&self) -> usize {
        self.sizes.len()
    }

    pub fn size_of(&self, label: u32) -> Option<usize> {
        label.checked_sub(1).and_then(|k| self.sizes.get(k as usize)).copied()
    }
}
