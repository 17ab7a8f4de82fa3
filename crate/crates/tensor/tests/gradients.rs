//! Finite-difference checks of every differentiable op, plus shape and range
//! properties.

use proptest::prelude::*;
use u2seg_tensor::{
    conv_output_extent, grad_check, pool_output_extent, BatchNormMode, Conv2dGeom, GradCheckConfig, ResizeMode, Tape,
    Tensor, TensorError, Var, BN_EPS,
};

const TOL: f64 = 1e-4;

/// SplitMix64-driven uniform values in [-1, 1).
fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut s = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    (0..n)
        .map(|_| {
            s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^= z >> 31;
            (z >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), noise(seed, n)).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay outside ±h.
fn away_from_zero(seed: u64, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let v = noise(seed, n).into_iter().map(|x| if x >= 0.0 { x + 0.05 } else { x - 0.05 }).collect();
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn check(params: &mut [Tensor], f: impl FnMut(&mut Tape, &[Var]) -> Result<Var, TensorError>) -> f64 {
    let cfg = GradCheckConfig { n_samples: 100_000, h: 1e-3, seed: 7 };
    let report = grad_check(params, f, cfg).unwrap();
    assert!(!report.samples.is_empty());
    report.max_rel_error
}

/// A fixed linear readout so that gradients are not all equal.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, TensorError> {
    let shape = tape.value(y).shape().to_vec();
    let w = tape.constant(rand_tensor(seed, &shape));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

#[test]
fn conv2d_weight_gradient_of_sum() {
    let x = rand_tensor(1, &[1, 2, 8, 8]);
    let mut params = vec![rand_tensor(2, &[3, 2, 3, 3])];
    let err = check(&mut params, |t, v| {
        let xv = t.constant(x.clone());
        let y = t.conv2d(xv, v[0], None, Conv2dGeom::same(3, 1))?;
        Ok(t.sum(y))
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn conv2d_all_inputs_strided_dilated() {
    let mut params = vec![rand_tensor(3, &[2, 2, 9, 7]), rand_tensor(4, &[3, 2, 3, 3]), rand_tensor(5, &[3])];
    let err = check(&mut params, |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), Conv2dGeom { stride: 2, pad: 2, dilation: 2 })?;
        weighted_sum(t, y, 6)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn batchnorm_train_gradients() {
    let mut params = vec![rand_tensor(7, &[2, 3, 4, 4]), rand_tensor(8, &[3]), rand_tensor(9, &[3])];
    let err = check(&mut params, |t, v| {
        let y = t.batchnorm2d(v[0], v[1], v[2], BatchNormMode::Train { running: None }, BN_EPS)?;
        weighted_sum(t, y, 10)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn batchnorm_sum_gradients() {
    let mut params = vec![rand_tensor(11, &[3, 2, 2, 3]), rand_tensor(12, &[2]), rand_tensor(13, &[2])];
    let err = check(&mut params, |t, v| {
        let y = t.batchnorm2d(v[0], v[1], v[2], BatchNormMode::Train { running: None }, BN_EPS)?;
        Ok(t.sum(y))
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn batchnorm_eval_gradients() {
    let stats = u2seg_tensor::RunningStats { mean: vec![0.3, -0.2], var: vec![0.5, 2.0] };
    let mut params = vec![rand_tensor(14, &[2, 2, 3, 3]), rand_tensor(15, &[2]), rand_tensor(16, &[2])];
    let err = check(&mut params, |t, v| {
        let y = t.batchnorm2d(v[0], v[1], v[2], BatchNormMode::Eval { running: &stats }, BN_EPS)?;
        weighted_sum(t, y, 17)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn relu_sigmoid_gradients() {
    let mut params = vec![away_from_zero(18, &[2, 3, 4])];
    let err = check(&mut params, |t, v| {
        let y = t.relu(v[0]);
        weighted_sum(t, y, 19)
    });
    assert!(err < TOL, "{err}");

    let mut params = vec![Tensor::new(vec![6], vec![-50.0, -5.0, -0.3, 0.0, 2.0, 12.0]).unwrap()];
    let report = grad_check(
        &mut params,
        |t, v| -> Result<Var, TensorError> {
            let y = t.sigmoid(v[0]);
            Ok(t.sum(y))
        },
        GradCheckConfig { n_samples: 6, h: 1e-3, seed: 0 },
    )
    .unwrap();
    for s in &report.samples {
        let x = [-50.0f64, -5.0, -0.3, 0.0, 2.0, 12.0][s.index];
        let sig = 1.0 / (1.0 + (-x).exp());
        assert!((s.analytic - sig * (1.0 - sig)).abs() < 1e-15);
    }
    assert!(report.max_rel_error < TOL);
}

#[test]
fn dead_relu_region_has_zero_error() {
    let mut params = vec![Tensor::full(&[5], -1.0)];
    let report = grad_check(
        &mut params,
        |t, v| -> Result<Var, TensorError> {
            let y = t.relu(v[0]);
            Ok(t.sum(y))
        },
        GradCheckConfig { n_samples: 5, h: 1e-3, seed: 0 },
    )
    .unwrap();
    assert!(report.samples.iter().all(|s| s.analytic == 0.0 && s.numeric == 0.0));
    assert_eq!(report.max_rel_error, 0.0);
}

#[test]
fn probes_straddling_a_relu_kink_are_flagged() {
    // entry 0 sits within h of the kink, entry 1 well away from it
    let mut params = vec![Tensor::new(vec![2], vec![4e-4, 0.5]).unwrap()];
    let report = grad_check(
        &mut params,
        |t, v| -> Result<Var, TensorError> {
            let y = t.relu(v[0]);
            Ok(t.sum(y))
        },
        GradCheckConfig { n_samples: 2, h: 1e-3, seed: 0 },
    )
    .unwrap();
    let near = &report.samples[0];
    assert!(near.kink);
    assert!(near.rel_error > 0.1, "{near:?}");
    assert!(!report.samples[1].kink);
    assert_eq!(report.kinks(), 1);
    assert!(report.max_smooth_rel_error() < 1e-10);
}

#[test]
fn max_pool_winner_switch_is_flagged() {
    let mut params = vec![Tensor::new(vec![1, 1, 2, 2], vec![1.0, 1.0005, -3.0, -2.0]).unwrap()];
    let report = grad_check(
        &mut params,
        |t, v| -> Result<Var, TensorError> {
            let y = t.maxpool2d(v[0])?;
            Ok(t.sum(y))
        },
        GradCheckConfig { n_samples: 4, h: 1e-3, seed: 0 },
    )
    .unwrap();
    let flagged: Vec<usize> = report.samples.iter().filter(|s| s.kink).map(|s| s.index).collect();
    assert_eq!(flagged, vec![0, 1]);
}

#[test]
fn sum_has_exact_gradient() {
    let mut params = vec![rand_tensor(20, &[4, 5])];
    let err = check(&mut params, |t, v| Ok(t.sum(v[0])));
    assert!(err < 1e-10, "{err}");
}

#[test]
fn maxpool_gradients() {
    // distinct values spaced well beyond h so the argmax never flips
    let n = 2 * 2 * 5 * 5;
    let mut order: Vec<usize> = (0..n).collect();
    let keys = noise(21, n);
    order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
    let mut vals = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        vals[i] = rank as f64 * 0.01;
    }
    let mut params = vec![Tensor::new(vec![2, 2, 5, 5], vals).unwrap()];
    let err = check(&mut params, |t, v| {
        let y = t.maxpool2d(v[0])?;
        weighted_sum(t, y, 22)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn resize_gradients() {
    for (mode, oh, ow) in [(ResizeMode::Bilinear, 8, 6), (ResizeMode::Bilinear, 5, 9), (ResizeMode::Nearest, 6, 4)] {
        let mut params = vec![rand_tensor(23, &[1, 2, 3, 2])];
        let err = check(&mut params, |t, v| {
            let y = t.resize_to(v[0], oh, ow, mode)?;
            weighted_sum(t, y, 24)
        });
        assert!(err < TOL, "{mode:?} {err}");
    }
}

#[test]
fn concat_gradients_route_slices() {
    let mut params = vec![rand_tensor(25, &[2, 1, 3, 3]), rand_tensor(26, &[2, 2, 3, 3])];
    let err = check(&mut params, |t, v| {
        let y = t.concat_channels(&[v[0], v[1]])?;
        weighted_sum(t, y, 27)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn elementwise_gradients() {
    let mut params = vec![rand_tensor(28, &[3, 4]), away_from_zero(29, &[3, 4])];
    let err = check(&mut params, |t, v| {
        let a = t.add(v[0], v[1])?;
        let s = t.sub(a, v[0])?;
        let m = t.mul(s, v[0])?;
        let d = t.div(m, v[1])?;
        let d = t.scale(d, -1.5);
        let d = t.add_scalar(d, 0.25);
        weighted_sum(t, d, 30)
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn mean_of_square_gradient_closed_form() {
    let x = rand_tensor(31, &[10]);
    let mut params = vec![x.clone()];
    let report = grad_check(
        &mut params,
        |t, v| -> Result<Var, TensorError> {
            let sq = t.mul(v[0], v[0])?;
            Ok(t.mean(sq))
        },
        GradCheckConfig { n_samples: 10, h: 1e-3, seed: 0 },
    )
    .unwrap();
    for s in &report.samples {
        assert!((s.analytic - 2.0 * x.data()[s.index] / 10.0).abs() < 1e-15);
    }
    assert!(report.max_rel_error < TOL);
}

#[test]
fn per_sample_and_channel_reductions() {
    let mut params = vec![rand_tensor(32, &[3, 3, 2, 2])];
    let err = check(&mut params, |t, v| {
        let m = t.mean_channels(v[0])?;
        let s = t.sum_per_sample(m)?;
        let sq = t.mul(s, s)?;
        Ok(t.sum(sq))
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn composite_chain_gradients() {
    // conv → bn → relu → pool → upsample → concat → 1×1 conv → sigmoid
    let x = rand_tensor(33, &[2, 2, 6, 6]);
    let mut params = vec![
        rand_tensor(34, &[3, 2, 3, 3]),
        rand_tensor(35, &[3]),
        Tensor::ones(&[3]),
        Tensor::zeros(&[3]),
        rand_tensor(36, &[1, 5, 1, 1]),
    ];
    let err = check(&mut params, |t, v| {
        let xv = t.constant(x.clone());
        let h = t.conv2d(xv, v[0], Some(v[1]), Conv2dGeom::same(3, 1))?;
        let h = t.batchnorm2d(h, v[2], v[3], BatchNormMode::Train { running: None }, BN_EPS)?;
        let h = t.relu(h);
        let p = t.maxpool2d(h)?;
        let u = t.upsample2d(p, 2, ResizeMode::Bilinear)?;
        let c = t.concat_channels(&[u, xv])?;
        let o = t.conv2d(c, v[4], None, Conv2dGeom::default())?;
        let s = t.sigmoid(o);
        weighted_sum(t, s, 37)
    });
    assert!(err < 1e-3, "{err}");
}

#[test]
fn k_consumers_accumulate_k_fold() {
    for k in 1..5 {
        let mut tape = Tape::new();
        let x = tape.param(rand_tensor(38, &[2, 3]));
        let w = tape.constant(rand_tensor(39, &[2, 3]));
        let mut terms = Vec::new();
        for _ in 0..k {
            let m = tape.mul(x, w).unwrap();
            terms.push(tape.sum(m));
        }
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = tape.add(acc, t).unwrap();
        }
        tape.backward(acc).unwrap();
        let g = tape.grad(x).unwrap();
        for (gi, wi) in g.iter().zip(tape.value(w).data()) {
            assert!((gi - k as f64 * wi).abs() < 1e-14);
        }
    }
}

#[test]
fn grad_check_rejects_step_out_of_range() {
    let mut params = vec![Tensor::ones(&[2])];
    let r = grad_check(&mut params, |t, v| -> Result<Var, TensorError> { Ok(t.sum(v[0])) }, GradCheckConfig {
        n_samples: 2,
        h: 0.5,
        seed: 0,
    });
    assert!(r.is_err());
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut t = Tape::new();
        let x = t.constant(rand_tensor(40, &[1, 2, 9, 9]));
        let w = t.constant(rand_tensor(41, &[4, 2, 3, 3]));
        let y = t.conv2d(x, w, None, Conv2dGeom::same(3, 2)).unwrap();
        let y = t.maxpool2d(y).unwrap();
        let y = t.resize_to(y, 9, 9, ResizeMode::Bilinear).unwrap();
        t.value(y).clone()
    };
    let a = run();
    let b = run();
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_extents_follow_formula(h in 1usize..=32, w in 1usize..=32, k in prop::sample::select(vec![1usize, 3, 5]),
                                   stride in 1usize..=3, pad in 0usize..=3, dil in 1usize..=3) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 1, h, w]));
        let wt = t.constant(Tensor::zeros(&[1, 1, k, k]));
        let r = t.conv2d(x, wt, None, Conv2dGeom { stride, pad, dilation: dil });
        let ext = |n: usize| {
            let v = n as isize + 2 * pad as isize - dil as isize * (k as isize - 1) - 1;
            if v < 0 { None } else { Some(v as usize / stride + 1) }
        };
        match (ext(h), ext(w)) {
            (Some(oh), Some(ow)) => {
                prop_assert_eq!(t.value(r.unwrap()).shape(), &[1, 1, oh, ow]);
                prop_assert_eq!(conv_output_extent(h, k, stride, pad, dil), Some(oh));
            }
            _ => prop_assert!(r.is_err()),
        }
    }

    #[test]
    fn pool_and_upsample_extents(h in 2usize..=32, w in 2usize..=32, f in 2usize..=4) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::zeros(&[1, 2, h, w]));
        let p = t.maxpool2d(x).unwrap();
        prop_assert_eq!(t.value(p).shape(), &[1, 2, h.div_ceil(2), w.div_ceil(2)]);
        prop_assert_eq!(pool_output_extent(h), h.div_ceil(2));
        let u = t.upsample2d(x, f, ResizeMode::Bilinear).unwrap();
        prop_assert_eq!(t.value(u).shape(), &[1, 2, f * h, f * w]);
    }

    #[test]
    fn activation_ranges(xs in prop::collection::vec(-1e3f64..1e3, 1..64)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(vec![xs.len()], xs.clone()).unwrap());
        let s = t.sigmoid(x);
        let r = t.relu(x);
        prop_assert!(t.value(s).data().iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(t.value(r).data().iter().all(|&v| v >= 0.0));
    }
}
