//! Thresholding, 3D connected-component labeling and largest-component
//! refinement.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::volume::{Dims, LabelMap, Mask, Volume};
use crate::{Error, Result};

/// Default probability threshold; values equal to it count as foreground.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    /// Neighbour offsets (dz, dy, dx).
    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let manhattan = dz.abs() + dy.abs() + dx.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Connectivity::Six => "6",
            Connectivity::TwentySix => "26",
        })
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "6" => Ok(Connectivity::Six),
            "26" => Ok(Connectivity::TwentySix),
            _ => Err(Error::config("connectivity", format!("expected 6 or 26, got `{s}`"))),
        }
    }
}

fn neighbour(dims: Dims, z: usize, y: usize, x: usize, o: [isize; 3]) -> Option<usize> {
    let nz = z.checked_add_signed(o[0]).filter(|&v| v < dims.d)?;
    let ny = y.checked_add_signed(o[1]).filter(|&v| v < dims.h)?;
    let nx = x.checked_add_signed(o[2]).filter(|&v| v < dims.w)?;
    Some(dims.index(nz, ny, nx))
}

/// Voxel is 1 iff its probability is ≥ `t`.
pub fn binarize(maps: &Volume, t: f64) -> Mask {
    let data = maps.data.iter().map(|&v| u8::from(v as f64 >= t)).collect();
    Mask { dims: maps.dims, spacing: maps.spacing, data }
}

/// A connected-component labeling algorithm.
pub trait Labeler: Send + Sync {
    fn name(&self) -> &'static str;

    /// Assigns each foreground voxel a component id (any nonzero value,
    /// equal iff connected); background stays 0.
    fn raw_labels(&self, m: &Mask, conn: Connectivity) -> Vec<u32>;

    /// Labels renumbered 1..=K by decreasing size, ties by first voxel.
    fn label(&self, m: &Mask, conn: Connectivity) -> LabelMap {
        canonicalize(m, &self.raw_labels(m, conn))
    }
}

fn canonicalize(m: &Mask, raw: &[u32]) -> LabelMap {
    // (size, first voxel) per raw id
    let mut stats: HashMap<u32, (usize, usize)> = HashMap::new();
    for (i, &l) in raw.iter().enumerate() {
        if l != 0 {
            stats.entry(l).or_insert((0, i)).0 += 1;
        }
    }
    let mut order: Vec<(u32, usize, usize)> = stats.into_iter().map(|(l, (n, first))| (l, n, first)).collect();
    order.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let remap: HashMap<u32, u32> =
        order.iter().enumerate().map(|(k, &(l, _, _))| (l, k as u32 + 1)).collect();
    LabelMap {
        dims: m.dims,
        spacing: m.spacing,
        labels: raw.iter().map(|l| if *l == 0 { 0 } else { remap[l] }).collect(),
        sizes: order.iter().map(|&(_, n, _)| n).collect(),
    }
}

/// Explicit-stack flood fill.
#[derive(Clone, Copy, Debug, Default)]
pub struct FloodFill;

impl Labeler for FloodFill {
    fn name(&self) -> &'static str {
        "flood-fill"
    }

    fn raw_labels(&self, m: &Mask, conn: Connectivity) -> Vec<u32> {
        let offsets = conn.offsets();
        let mut labels = vec![0u32; m.data.len()];
        let mut next = 0u32;
        let mut stack = Vec::new();
        for seed in 0..m.data.len() {
            if m.data[seed] == 0 || labels[seed] != 0 {
                continue;
            }
            next += 1;
            labels[seed] = next;
            stack.push(seed);
            while let Some(i) = stack.pop() {
                let (z, y, x) = m.dims.coords(i);
                for &o in &offsets {
                    if let Some(j) = neighbour(m.dims, z, y, x, o) {
                        if m.data[j] != 0 && labels[j] == 0 {
                            labels[j] = next;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        labels
    }
}

/// Raster-scan union-find over already-visited neighbours.
#[derive(Clone, Copy, Debug, Default)]
pub struct UnionFind;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

impl Labeler for UnionFind {
    fn name(&self) -> &'static str {
        "union-find"
    }

    fn raw_labels(&self, m: &Mask, conn: Connectivity) -> Vec<u32> {
        // neighbours that precede the voxel in row-major order
        let back: Vec<[isize; 3]> = conn.offsets().into_iter().filter(|o| (o[0], o[1], o[2]) < (0, 0, 0)).collect();
        let n = m.data.len();
        let mut parent: Vec<usize> = (0..n).collect();
        for i in 0..n {
            if m.data[i] == 0 {
                continue;
            }
            let (z, y, x) = m.dims.coords(i);
            for &o in &back {
                if let Some(j) = neighbour(m.dims, z, y, x, o) {
                    if m.data[j] != 0 {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        if a != b {
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
        (0..n).map(|i| if m.data[i] == 0 { 0 } else { find(&mut parent, i) as u32 + 1 }).collect()
    }
}

/// Labels with the default (union-find) algorithm.
pub fn label_components(m: &Mask, conn: Connectivity) -> LabelMap {
    UnionFind.label(m, conn)
}

/// Mask of label 1; empty when there are no components.
pub fn extract_largest(lm: &LabelMap) -> Mask {
    Mask { dims: lm.dims, spacing: lm.spacing, data: lm.labels.iter().map(|&l| u8::from(l == 1)).collect() }
}

/// binarize → label → keep the largest component; also returns the labels.
pub fn refine_with(maps: &Volume, t: f64, conn: Connectivity, labeler: &dyn Labeler) -> (Mask, LabelMap) {
    let lm = labeler.label(&binarize(maps, t), conn);
    (extract_largest(&lm), lm)
}

pub fn refine(maps: &Volume, t: f64, conn: Connectivity) -> Mask {
    refine_with(maps, t, conn, &UnionFind).0
}
