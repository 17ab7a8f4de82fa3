use std::collections::BTreeSet;
use std::path::Path;

use u2seg_core::data::{gen_phantom, PhantomConfig};
use u2seg_core::post::Connectivity;
use u2seg_core::pre::InputMode;
use u2seg_core::registry::optimizers;
use u2seg_core::trainer::*;
use u2seg_core::u2net::{infer, init_params, synthetic_pair, U2NetSpec};
use u2seg_core::{Dims, Error, Mask, Volume};

fn small_case(depth_slices: usize, seed: u64) -> (Volume, Mask) {
    let cfg = PhantomConfig { dims: Dims::new(depth_slices, 17, 17), trunk_radius: 2.5, trunk_length: 4.0, depth: 0, ..Default::default() };
    let ph = gen_phantom(&cfg, seed).unwrap();
    (ph.volume, ph.mask)
}

fn one_case_data(slices: usize) -> Dataset {
    let (v, m) = small_case(slices, 0);
    Dataset { train: case_samples(0, &v, &m, InputMode::Duplicate).unwrap(), val: Vec::new() }
}

fn short_cfg(epochs: usize) -> TrainConfig {
    TrainConfig { epochs, ..Default::default() }
}

#[test]
fn single_sample_epoch_is_one_step() {
    let data = one_case_data(1);
    assert_eq!(data.train.len(), 1);
    let out = train(&short_cfg(1), &U2NetSpec::toy(), &data).unwrap();
    assert_eq!(out.curve.records.len(), 1);
    assert_eq!(out.checkpoint.step(), 1);
    assert_eq!(out.curve.records[0].step, 1);
}

#[test]
fn steps_per_epoch_round_up() {
    // 5 slices at batch 2 → 3 steps per epoch
    let data = one_case_data(5);
    let out = train(&short_cfg(2), &U2NetSpec::toy(), &data).unwrap();
    let steps: Vec<u64> = out.curve.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, (1..=6).collect::<Vec<_>>());
    assert_eq!(out.curve.records.iter().filter(|r| r.epoch == 2).count(), 3);
    assert!(out.curve.to_csv().starts_with("epoch,step,train_loss,val_loss\n1,1,"));
}

#[test]
fn zero_learning_rate_keeps_weights() {
    let spec = U2NetSpec::toy();
    let data = one_case_data(3);
    for opt in ["adam", "sgd", "adam-then-sgd"] {
        let cfg = TrainConfig { lr: 0.0, optimizer: opt.into(), ..short_cfg(2) };
        let out = train(&cfg, &spec, &data).unwrap();
        let mut init = init_params(&spec, cfg.seed);
        init.round_to_f32();
        for (name, t) in &init.weights {
            let got = &out.checkpoint.store.weights[name];
            assert!(t.data().iter().zip(got.data()).all(|(a, b)| a.to_bits() == b.to_bits()), "{opt}: {name} moved");
        }
    }
}

#[test]
fn training_is_deterministic() {
    let spec = U2NetSpec::toy();
    let data = one_case_data(4);
    let a = train(&short_cfg(2), &spec, &data).unwrap();
    let b = train(&short_cfg(2), &spec, &data).unwrap();
    assert_eq!(a.curve.to_csv(), b.curve.to_csv());
    assert_eq!(a.checkpoint.encode(), b.checkpoint.encode());
    let c = train(&TrainConfig { seed: 9, ..short_cfg(2) }, &spec, &data).unwrap();
    assert_ne!(a.checkpoint.encode(), c.checkpoint.encode());
}

#[test]
fn validation_loss_is_recorded_per_epoch() {
    let cases: Vec<_> = (0..4).map(|s| small_case(2, s)).collect();
    let data = Dataset::from_cases(&cases, 0.25, 0, InputMode::Duplicate).unwrap();
    let train_cases: BTreeSet<usize> = data.train.iter().map(|s| s.case).collect();
    let val_cases: BTreeSet<usize> = data.val.iter().map(|s| s.case).collect();
    assert_eq!(val_cases.len(), 1);
    assert!(train_cases.is_disjoint(&val_cases));
    assert_eq!(train_cases.len() + val_cases.len(), 4);

    let out = train(&short_cfg(2), &U2NetSpec::toy(), &data).unwrap();
    let with_val: Vec<_> = out.curve.records.iter().filter(|r| r.val_loss.is_some()).collect();
    assert_eq!(with_val.len(), 2);
    assert_eq!(with_val[1].step, out.checkpoint.step());
}

#[test]
fn validation_and_evaluation_leave_the_store_alone() {
    let spec = U2NetSpec::toy();
    let data = one_case_data(3);
    let store = train(&short_cfg(1), &spec, &data).unwrap().checkpoint.store;
    let before = store.fingerprint();
    let v1 = validation_loss(&short_cfg(1), &spec, &store, &data.train).unwrap();
    let v2 = validation_loss(&short_cfg(1), &spec, &store, &data.train).unwrap();
    assert_eq!(v1.to_bits(), v2.to_bits());
    let case = small_case(3, 0);
    evaluate(&spec, &store, &[case], InputMode::Duplicate, 0.5, Connectivity::TwentySix);
    assert_eq!(store.fingerprint(), before);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let spec = U2NetSpec::toy();
    let data = one_case_data(3);
    for opt in ["adam", "sgd", "adam-then-sgd"] {
        let cfg = TrainConfig { optimizer: opt.into(), ..short_cfg(1) };
        let ckpt = train(&cfg, &spec, &data).unwrap().checkpoint;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt, "{opt}");
        assert_eq!(back.encode(), std::fs::read(&path).unwrap());

        let (x, _) = synthetic_pair(&spec, 2, 17, 17, 5);
        let a = infer(&spec, &ckpt.store, &x).unwrap();
        let b = infer(&spec, &back.store, &x).unwrap();
        assert_eq!(a.fuse.data(), b.fuse.data());

        let case = small_case(3, 1);
        let ea = evaluate(&spec, &ckpt.store, std::slice::from_ref(&case), InputMode::Duplicate, 0.5, Connectivity::TwentySix);
        let eb = evaluate(&spec, &back.store, &[case], InputMode::Duplicate, 0.5, Connectivity::TwentySix);
        assert_eq!(ea.to_csv(), eb.to_csv());

        let restored = back.restore_optimizer(&cfg).unwrap();
        assert_eq!(restored.name(), opt);
        assert_eq!(restored.state(), &ckpt.opt_state);
    }
}

fn manifest(bytes: &[u8]) -> (usize, Vec<(String, usize, usize)>) {
    let split = bytes.windows(2).position(|w| w == b"\n\n").unwrap();
    let header = std::str::from_utf8(&bytes[..split]).unwrap();
    let rows = header
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with('@'))
        .map(|l| {
            let p: Vec<&str> = l.split(' ').collect();
            let n: usize = p[1].split('x').map(|d| d.parse::<usize>().unwrap()).product();
            (p[0].to_owned(), n, p[2].parse().unwrap())
        })
        .collect();
    (split + 2, rows)
}

#[test]
fn manifest_accounts_for_every_payload_byte() {
    let spec = U2NetSpec::toy();
    let ckpt = train(&short_cfg(1), &spec, &one_case_data(1)).unwrap().checkpoint;
    let bytes = ckpt.encode();
    let (header_len, rows) = manifest(&bytes);
    let total: usize = rows.iter().map(|(_, n, _)| 4 * n).sum();
    assert_eq!(total, bytes.len() - header_len);
    // weights, two stats per BN, and two Adam moments per weight
    let weights = ckpt.store.weights.len();
    assert_eq!(rows.len(), weights + 2 * ckpt.store.running.len() + 2 * weights);
    let header = String::from_utf8_lossy(&bytes[..header_len]);
    assert!(header.starts_with("U2CKPT1\n@spec "));
    assert!(header.contains("\n@optimizer adam\n@step 1\n"));
}

#[test]
fn truncated_checkpoint_names_first_missing_tensor() {
    let spec = U2NetSpec::toy();
    let ckpt = train(&short_cfg(1), &spec, &one_case_data(1)).unwrap().checkpoint;
    let bytes = ckpt.encode();
    let (header_len, rows) = manifest(&bytes);
    for k in [0, 7, rows.len() / 2, rows.len() - 1] {
        let (name, n, off) = &rows[k];
        let cut = header_len + off + 4 * n - 1;
        let err = Checkpoint::decode(Path::new("t.ckpt"), &bytes[..cut]).unwrap_err();
        match &err {
            Error::Format { field, detail, .. } => {
                assert_eq!(field, name);
                assert!(detail.contains("truncated"), "{detail}");
            }
            other => panic!("{other}"),
        }
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let spec = U2NetSpec::toy();
    let bytes = train(&short_cfg(1), &spec, &one_case_data(1)).unwrap().checkpoint.encode();
    let p = Path::new("c.ckpt");
    let mut bad = bytes.clone();
    bad[6] = b'2';
    assert!(matches!(Checkpoint::decode(p, &bad), Err(Error::Format { field, .. }) if field == "magic"));
    let mut long = bytes.clone();
    long.extend([0, 0, 0, 0]);
    assert!(matches!(Checkpoint::decode(p, &long), Err(Error::Format { field, .. }) if field == "payload"));
    let at = bytes.windows(7).position(|w| w == b"@step 1").unwrap();
    let mut bad_step = bytes.clone();
    bad_step[at + 6] = b'x';
    assert!(matches!(Checkpoint::decode(p, &bad_step), Err(Error::Format { field, .. }) if field == "step"));
}

#[test]
fn dsc_of_truth_and_of_nothing() {
    let (_, m) = small_case(4, 2);
    assert!(m.count() > 0);
    let perfect = score_prediction(&m.to_volume(), &m, 0.5, Connectivity::TwentySix).unwrap();
    assert_eq!(perfect, 1.0);
    let nothing = Volume::filled(m.dims, m.spacing, 0.1);
    assert_eq!(score_prediction(&nothing, &m, 0.5, Connectivity::TwentySix).unwrap(), 0.0);
}

#[test]
fn failing_case_does_not_stop_evaluation() {
    let spec = U2NetSpec::toy();
    let store = init_params(&spec, 0);
    let good = small_case(2, 0);
    let (v, _) = small_case(2, 1);
    let mismatched = (v, Mask::empty(Dims::new(3, 17, 17), [1.0; 3]));
    let tiny = (Volume::filled(Dims::new(1, 8, 8), [1.0; 3], 0.0), Mask::empty(Dims::new(1, 8, 8), [1.0; 3]));
    let report = evaluate(&spec, &store, &[good.clone(), mismatched, tiny, good], InputMode::Duplicate, 0.5, Connectivity::TwentySix);
    assert!(report.cases[0].dsc.is_ok());
    assert!(report.cases[1].dsc.as_ref().unwrap_err().contains("shape mismatch"));
    assert!(report.cases[2].dsc.as_ref().unwrap_err().contains("17×17"));
    assert!(report.cases[3].dsc.is_ok());
    let m = report.mean.unwrap();
    assert_eq!(m, *report.cases[0].dsc.as_ref().unwrap());
    let csv = report.to_csv();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn divergence_is_a_numeric_error() {
    let cfg = TrainConfig { lr: 1e300, optimizer: "sgd".into(), numeric_width: NumericWidth::F64, ..short_cfg(20) };
    let err = train(&cfg, &U2NetSpec::toy(), &one_case_data(2)).unwrap_err();
    assert!(matches!(err, Error::NonFinite { .. }), "{err}");
    assert!(err.is_numeric());
}

#[test]
fn bad_inputs_are_reported_before_training() {
    let spec = U2NetSpec::toy();
    assert!(matches!(train(&short_cfg(1), &spec, &Dataset::default()), Err(Error::Invalid(_))));
    let (v, m) = small_case(1, 0);
    let wrong_channels = Dataset { train: case_samples(0, &v, &m, InputMode::Single).unwrap(), val: Vec::new() };
    assert!(matches!(train(&short_cfg(1), &spec, &wrong_channels), Err(Error::Shape { .. })));
    let cfg = TrainConfig { optimizer: "rmsprop".into(), ..short_cfg(1) };
    assert!(matches!(train(&cfg, &spec, &one_case_data(1)), Err(Error::UnknownStrategy { .. })));
    assert!(optimizers().contains("adam-then-sgd"));
}
