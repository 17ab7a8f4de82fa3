use std::collections::VecDeque;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use u2seg_core::post::*;
use u2seg_core::registry::labelers;
use u2seg_core::{Dims, Mask, Volume};

fn mask(dims: Dims, data: Vec<u8>) -> Mask {
    Mask::new(dims, [1.0; 3], data).unwrap()
}

/// Breadth-first labeling with labels renumbered by size (descending), ties
/// broken by the smallest voxel index.
fn oracle(m: &Mask, diag: bool) -> (Vec<u32>, Vec<usize>) {
    let Dims { d, h, w } = m.dims;
    let mut comp = vec![usize::MAX; m.data.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for start in 0..m.data.len() {
        if m.data[start] == 0 || comp[start] != usize::MAX {
            continue;
        }
        let id = members.len();
        let mut list = vec![start];
        comp[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            let (z, y, x) = (i / (h * w), (i / w) % h, i % w);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let steps = dz.abs() + dy.abs() + dx.abs();
                        if steps == 0 || (!diag && steps > 1) {
                            continue;
                        }
                        let (nz, ny, nx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                        if nz < 0 || ny < 0 || nx < 0 || nz >= d as i64 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let j = (nz as usize * h + ny as usize) * w + nx as usize;
                        if m.data[j] == 1 && comp[j] == usize::MAX {
                            comp[j] = id;
                            list.push(j);
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
        members.push(list);
    }
    let mut order: Vec<usize> = (0..members.len()).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(members[c].len()), *members[c].iter().min().unwrap()));
    let mut rank = vec![0u32; members.len()];
    for (r, &c) in order.iter().enumerate() {
        rank[c] = r as u32 + 1;
    }
    let labels = comp.iter().map(|&c| if c == usize::MAX { 0 } else { rank[c] }).collect();
    let sizes = order.iter().map(|&c| members[c].len()).collect();
    (labels, sizes)
}

fn random_mask(dims: Dims, density: f64, rng: &mut ChaCha8Rng) -> Mask {
    mask(dims, (0..dims.len()).map(|_| u8::from(rng.random_bool(density))).collect())
}

#[test]
fn labeling_matches_oracle_on_random_masks() {
    let dims = Dims::new(16, 16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let reg = labelers();
    for k in 0..200 {
        let density = 0.05 + 0.55 * k as f64 / 199.0;
        let m = random_mask(dims, density, &mut rng);
        for (conn, diag) in [(Connectivity::Six, false), (Connectivity::TwentySix, true)] {
            let (labels, sizes) = oracle(&m, diag);
            for name in reg.names() {
                let lm = reg.create(name, &()).unwrap().label(&m, conn);
                assert_eq!(lm.labels, labels, "{name}, mask {k}, {conn}-connectivity");
                assert_eq!(lm.sizes, sizes);
            }
            assert_eq!(label_components(&m, conn).labels, labels);
        }
    }
}

#[test]
fn binarize_tie_rule() {
    let v = Volume::new(Dims::new(1, 1, 4), [1.0; 3], vec![0.7, 0.3, 0.5, 0.49]).unwrap();
    assert_eq!(binarize(&v, THRESHOLD).data, vec![1, 0, 1, 0]);
    let low = Volume::filled(Dims::new(2, 3, 3), [1.0; 3], 0.49);
    assert_eq!(binarize(&low, 0.5).count(), 0);
}

#[test]
fn labeling_extremes_and_corners() {
    let dims = Dims::new(3, 3, 3);
    let empty = mask(dims, vec![0; 27]);
    for conn in [Connectivity::Six, Connectivity::TwentySix] {
        let lm = label_components(&empty, conn);
        assert_eq!(lm.num_components(), 0);
        assert!(lm.labels.iter().all(|&l| l == 0));
        let lm = label_components(&mask(dims, vec![1; 27]), conn);
        assert_eq!(lm.num_components(), 1);
        assert!(lm.labels.iter().all(|&l| l == 1));
    }

    let mut far = vec![0; 27];
    far[dims.index(0, 0, 0)] = 1;
    far[dims.index(2, 2, 2)] = 1;
    let far = mask(dims, far);
    assert_eq!(label_components(&far, Connectivity::Six).num_components(), 2);
    assert_eq!(label_components(&far, Connectivity::TwentySix).num_components(), 2);

    let mut diag = vec![0; 27];
    diag[dims.index(0, 0, 0)] = 1;
    diag[dims.index(1, 1, 1)] = 1;
    let diag = mask(dims, diag);
    assert_eq!(label_components(&diag, Connectivity::TwentySix).num_components(), 1);
    assert_eq!(label_components(&diag, Connectivity::Six).num_components(), 2);
}

/// Filled boxes `(z0, y0, x0, dz, dy, dx)` in a 12×12×12 grid.
fn boxes(spec: &[(usize, usize, usize, usize, usize, usize)]) -> Mask {
    let dims = Dims::new(12, 12, 12);
    let mut data = vec![0u8; dims.len()];
    for &(z0, y0, x0, dz, dy, dx) in spec {
        for z in z0..z0 + dz {
            for y in y0..y0 + dy {
                for x in x0..x0 + dx {
                    data[dims.index(z, y, x)] = 1;
                }
            }
        }
    }
    mask(dims, data)
}

#[test]
fn largest_component_kept() {
    // sizes 100, 7 and 3, mutually separated
    let m = boxes(&[(0, 0, 0, 4, 5, 5), (6, 6, 4, 1, 1, 7), (10, 0, 0, 1, 3, 1)]);
    assert_eq!(m.count(), 110);
    for conn in [Connectivity::Six, Connectivity::TwentySix] {
        let lm = label_components(&m, conn);
        assert_eq!(lm.sizes, vec![100, 7, 3]);
        let keep = extract_largest(&lm);
        assert_eq!(keep.count(), 100);
    }
    let single = boxes(&[(2, 2, 2, 3, 3, 3)]);
    assert_eq!(extract_largest(&label_components(&single, Connectivity::TwentySix)), single);
    let empty = boxes(&[]);
    assert_eq!(extract_largest(&label_components(&empty, Connectivity::TwentySix)).count(), 0);
}

#[test]
fn refine_drops_spurious_blob_and_is_idempotent() {
    let dims = Dims::new(12, 12, 12);
    let big = boxes(&[(1, 1, 1, 5, 5, 5)]);
    let small = boxes(&[(9, 9, 9, 2, 2, 2)]);
    let data = (0..dims.len())
        .map(|i| if big.data[i] == 1 { 0.9 } else if small.data[i] == 1 { 0.8 } else { 0.1 })
        .collect();
    let maps = Volume::new(dims, [1.0; 3], data).unwrap();
    let out = refine(&maps, THRESHOLD, Connectivity::TwentySix);
    assert_eq!(out, big);
    assert_eq!(refine(&out.to_volume(), 0.5, Connectivity::TwentySix), out);
    assert_eq!(refine(&Volume::filled(dims, [1.0; 3], 0.2), 0.5, Connectivity::TwentySix).count(), 0);
}

#[test]
fn flood_fill_handles_a_long_path() {
    // a single-voxel-wide serpentine would overflow a recursive fill
    let dims = Dims::new(1, 64, 64);
    let mut data = vec![0u8; dims.len()];
    for y in (0..64).step_by(2) {
        for x in 0..64 {
            data[dims.index(0, y, x)] = 1;
        }
        if y + 1 < 64 {
            let x = if (y / 2) % 2 == 0 { 63 } else { 0 };
            data[dims.index(0, y + 1, x)] = 1;
        }
    }
    let m = mask(dims, data);
    let lm = FloodFill.label(&m, Connectivity::Six);
    assert_eq!(lm.num_components(), 1);
    assert_eq!(lm.sizes[0], m.count());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn threshold_monotone(vals in prop::collection::vec(0.0f32..=1.0, 64), i in 1usize..9, j in 1usize..9) {
        let v = Volume::new(Dims::new(4, 4, 4), [1.0; 3], vals).unwrap();
        let (t1, t2) = (0.1 * i.min(j) as f64, 0.1 * i.max(j) as f64);
        let lo = binarize(&v, t1);
        let hi = binarize(&v, t2);
        prop_assert!(hi.data.iter().zip(&lo.data).all(|(&h, &l)| h <= l));
    }

    #[test]
    fn largest_is_connected_subset(seed in 0u64..10_000, density in 0.05f64..0.6, six in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = random_mask(Dims::new(8, 8, 8), density, &mut rng);
        let conn = if six { Connectivity::Six } else { Connectivity::TwentySix };
        let lm = label_components(&m, conn);
        let keep = extract_largest(&lm);
        prop_assert!(keep.data.iter().zip(&m.data).all(|(&k, &o)| k <= o));
        prop_assert_eq!(keep.count(), lm.sizes.iter().copied().max().unwrap_or(0));
        prop_assert!(label_components(&keep, conn).num_components() <= 1);
        prop_assert_eq!(label_components(&m, conn), lm);
    }
}
