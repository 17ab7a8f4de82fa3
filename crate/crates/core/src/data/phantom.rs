//! Procedural airway phantoms: a recursively bifurcating tube tree in a
//! noisy chest-like background.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::volume::{Dims, Mask, Spacing, Volume};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomConfig {
    pub dims: Dims,
    pub spacing: Spacing,
    /// Lumen radius of the trunk, in voxels.
    pub trunk_radius: f64,
    /// Trunk length along +z, in voxels.
    pub trunk_length: f64,
    /// Generations of bifurcation below the trunk.
    pub depth: usize,
    /// Branch angle range relative to the parent axis, degrees.
    pub angle_min: f64,
    pub angle_max: f64,
    pub radius_decay: f64,
    pub length_decay: f64,
    pub hu_parenchyma: f64,
    pub hu_lumen: f64,
    pub hu_wall: f64,
    pub hu_soft_tissue: f64,
    pub noise_std: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            dims: Dims::new(32, 64, 64),
            spacing: [1.0; 3],
            trunk_radius: 3.0,
            trunk_length: 12.0,
            depth: 2,
            angle_min: 25.0,
            angle_max: 45.0,
            radius_decay: 0.7,
            length_decay: 0.8,
            hu_parenchyma: -800.0,
            hu_lumen: -1000.0,
            hu_wall: 0.0,
            hu_soft_tissue: 40.0,
            noise_std: 20.0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::config("dims", format!("extents must be positive, got {}", self.dims)));
        }
        let smallest = self.trunk_radius * self.radius_decay.powi(self.depth as i32);
        if !(smallest >= 1.0) {
            return Err(Error::config(
                "trunk_radius",
                format!("radius at depth {} is {smallest:.3} voxels; must stay ≥ 1", self.depth),
            ));
        }
        if !(self.trunk_length > 0.0) {
            return Err(Error::config("trunk_length", "must be positive"));
        }
        if !(0.0 <= self.angle_min && self.angle_min <= self.angle_max && self.angle_max < 180.0) {
            return Err(Error::config("angle_min", format!("need 0 ≤ min ≤ max < 180, got {}..{}", self.angle_min, self.angle_max)));
        }
        if !(self.radius_decay > 0.0 && self.length_decay > 0.0) {
            return Err(Error::config("radius_decay", "decay factors must be positive"));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::config("noise_std", "must be ≥ 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Phantom {
    pub volume: Volume,
    pub mask: Mask,
    /// Segments that reach outside the grid and were cut at its border.
    pub clipped: usize,
}

type P3 = [f64; 3];

fn sub(a: P3, b: P3) -> P3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: P3, b: P3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn axpy(a: f64, x: P3, y: P3) -> P3 {
    [a * x[0] + y[0], a * x[1] + y[1], a * x[2] + y[2]]
}

fn normalize(a: P3) -> P3 {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

fn cross(a: P3, b: P3) -> P3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[derive(Clone, Copy, Debug)]
struct Segment {
    a: P3,
    b: P3,
    r: f64,
}

#[derive(Clone, Copy, Debug)]
struct Ball {
    c: P3,
    r: f64,
}

fn inside_grid(dims: Dims, p: P3) -> bool {
    let lim = [dims.d as f64 - 1.0, dims.h as f64 - 1.0, dims.w as f64 - 1.0];
    (0..3).all(|k| p[k] >= 0.0 && p[k] <= lim[k])
}

/// Segments and branch-point balls of the tree, parents before children.
fn build_tree(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> (Vec<Segment>, Vec<Ball>) {
    let start = [0.0, (cfg.dims.h as f64 - 1.0) / 2.0, (cfg.dims.w as f64 - 1.0) / 2.0];
    let mut segs = Vec::new();
    let mut balls = Vec::new();
    // (start, direction, radius, length, generation)
    let mut todo = vec![(start, [1.0, 0.0, 0.0], cfg.trunk_radius, cfg.trunk_length, 0usize)];
    while let Some((a, dir, r, len, gen)) = todo.pop() {
        let b = axpy(len, dir, a);
        segs.push(Segment { a, b, r });
        if gen == cfg.depth || !inside_grid(cfg.dims, b) {
            continue;
        }
        balls.push(Ball { c: b, r });
        let helper = if dir[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let u = normalize(cross(dir, helper));
        let v = cross(dir, u);
        let phi = rng.random_range(0.0..2.0 * PI);
        for side in [0.0, PI] {
            let theta = rng.random_range(cfg.angle_min..=cfg.angle_max).to_radians();
            let (s, c) = (phi + side).sin_cos();
            let perp = axpy(s, v, [c * u[0], c * u[1], c * u[2]]);
            let child = normalize(axpy(theta.sin(), perp, [theta.cos() * dir[0], theta.cos() * dir[1], theta.cos() * dir[2]]));
            todo.push((b, child, r * cfg.radius_decay, len * cfg.length_decay, gen + 1));
        }
    }
    (segs, balls)
}

/// Voxel range covering `[lo, hi]` along an axis of extent `n`.
fn span(lo: f64, hi: f64, n: usize) -> std::ops::Range<usize> {
    let a = lo.floor().max(0.0) as usize;
    let b = (hi.ceil() + 1.0).clamp(0.0, n as f64) as usize;
    a.min(b)..b
}

pub fn gen_phantom(cfg: &PhantomConfig, seed: u64) -> Result<Phantom> {
    cfg.validate()?;
    let dims = cfg.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (segs, balls) = build_tree(cfg, &mut rng);

    let mut lumen = vec![false; dims.len()];
    let mut shell = vec![false; dims.len()];
    let mut clipped = 0;
    let mut mark = |lo: P3, hi: P3, r: f64, dist: &dyn Fn(P3) -> Option<f64>| {
        for z in span(lo[0] - r - 1.0, hi[0] + r + 1.0, dims.d) {
            for y in span(lo[1] - r - 1.0, hi[1] + r + 1.0, dims.h) {
                for x in span(lo[2] - r - 1.0, hi[2] + r + 1.0, dims.w) {
                    if let Some(d) = dist([z as f64, y as f64, x as f64]) {
                        let i = dims.index(z, y, x);
                        if d <= r {
                            lumen[i] = true;
                        } else if d <= r + 1.0 {
                            shell[i] = true;
                        }
                    }
                }
            }
        }
    };
    for (k, s) in segs.iter().enumerate() {
        let ab = sub(s.b, s.a);
        let len2 = dot(ab, ab);
        let lo = [s.a[0].min(s.b[0]), s.a[1].min(s.b[1]), s.a[2].min(s.b[2])];
        let hi = [s.a[0].max(s.b[0]), s.a[1].max(s.b[1]), s.a[2].max(s.b[2])];
        let mut outer_lo = sub(lo, [s.r; 3]);
        if k == 0 {
            // the trunk enters through the top face by design
            outer_lo[0] = outer_lo[0].max(0.0);
        }
        if !inside_grid(dims, outer_lo) || !inside_grid(dims, axpy(1.0, [s.r; 3], hi)) {
            clipped += 1;
        }
        // open-ended tube: projection parameter t ∈ [0, 1)
        mark(lo, hi, s.r, &|p| {
            let ap = sub(p, s.a);
            let t = dot(ap, ab) / len2;
            (0.0..1.0).contains(&t).then(|| dot(ap, ap) - t * t * len2).map(|d2| d2.max(0.0).sqrt())
        });
    }
    for bl in &balls {
        mark(bl.c, bl.c, bl.r, &|p| {
            let d = sub(p, bl.c);
            Some(dot(d, d).sqrt())
        });
    }

    let centre = [(dims.d as f64 - 1.0) / 2.0, (dims.h as f64 - 1.0) / 2.0, (dims.w as f64 - 1.0) / 2.0];
    let semi = [dims.d as f64 * 0.6, dims.h as f64 * 0.45, dims.w as f64 * 0.45];
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::config("noise_std", e.to_string()))?;
    let data = (0..dims.len())
        .map(|i| {
            let (z, y, x) = dims.coords(i);
            let base = if lumen[i] {
                cfg.hu_lumen
            } else if shell[i] {
                cfg.hu_wall
            } else {
                let q = [z as f64, y as f64, x as f64];
                let e: f64 = (0..3).map(|k| ((q[k] - centre[k]) / semi[k]).powi(2)).sum();
                if e <= 1.0 { cfg.hu_parenchyma } else { cfg.hu_soft_tissue }
            };
            (base + noise.sample(&mut rng)) as f32
        })
        .collect();
    let mask = Mask::new(dims, cfg.spacing, lumen.iter().map(|&l| u8::from(l)).collect())?;
    Ok(Phantom { volume: Volume::new(dims, cfg.spacing, data)?, mask, clipped })
}
