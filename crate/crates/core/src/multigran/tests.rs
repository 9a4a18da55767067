use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::data::sequence::tests::records;
use crate::data::{build_match_sequences, generate_synthetic_matches, MatchSequence, Modality, SynthConfig};
use crate::error::Error;
use crate::tensor::{grad_check, Tape, Tensor, Var};

fn sample(granularity: Granularity, t: usize, label: u8) -> GranularitySample {
    GranularitySample { granularity, t, label }
}

fn bce(scores: &[f64], samples: &[GranularitySample]) -> f64 {
    let mut tape = Tape::new();
    let s = tape.constant(Tensor::new(&[scores.len(), 1], scores.to_vec()).unwrap());
    let refs: Vec<&GranularitySample> = samples.iter().collect();
    let l = classification_loss(&mut tape, s, &refs).unwrap();
    tape.value(l).item().unwrap()
}

#[test]
fn classification_loss_examples() {
    let samples: Vec<_> = (0..4).map(|t| sample(Granularity::Point, t, (t % 2) as u8)).collect();
    assert!((bce(&[0.5; 4], &samples) - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((bce(&[0.9], &[sample(Granularity::Point, 0, 1)]) - 0.10536).abs() < 1e-5);
    assert!((bce(&[0.9], &[sample(Granularity::Point, 0, 1)]) + 0.9f64.ln()).abs() < 1e-15);
    let confident = bce(&[1.0, 0.0], &[sample(Granularity::Point, 0, 1), sample(Granularity::Point, 1, 0)]);
    assert!(confident > 0.0 && confident <= 1.7e-7, "{confident}");
    // Totally wrong predictions are bounded by the clamp.
    let wrong = bce(&[0.0], &[sample(Granularity::Point, 0, 1)]);
    assert!((wrong + 1e-7f64.ln()).abs() < 1e-12);
    assert_eq!(bce(&[0.3], &[]), 0.0);
}

fn total(l_ver: f64, cla: [f64; 4], w: [f64; 4]) -> f64 {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::scalar(l_ver));
    let c = cla.map(|x| tape.constant(Tensor::scalar(x)));
    let t = total_loss(&mut tape, v, c, w).unwrap();
    tape.value(t).item().unwrap()
}

#[test]
fn total_loss_examples() {
    assert_eq!(total(0.0, [0.0; 4], [1.0; 4]), 0.0);
    assert!((total(0.5, [0.1, 0.2, 0.3, 0.4], [1.0; 4]) - 1.5).abs() < 1e-15);
    assert_eq!(total(0.5, [0.1, 0.2, 0.3, 0.4], [0.0; 4]), 0.5);
}

fn head_store(d: usize, hidden: usize) -> (crate::tensor::ParamStore, HeadParams) {
    let mut store = crate::tensor::ParamStore::new();
    let head = HeadParams::init(&mut store, "h", d, hidden, &mut ChaCha8Rng::seed_from_u64(0));
    (store, head)
}

fn head_scores(store: &crate::tensor::ParamStore, head: &HeadParams, z1: &Tensor, z2: &Tensor) -> Vec<f64> {
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(z1.clone()), tape.constant(z2.clone()));
    let s = predict_momentum_score(&mut tape, store, head, a, b).unwrap();
    tape.value(s).data().to_vec()
}

#[test]
fn head_zero_weights_and_range() {
    let (mut store, head) = head_store(3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z1 = Tensor::uniform(&[5, 3], 10.0, &mut rng);
    let z2 = Tensor::uniform(&[5, 3], 10.0, &mut rng);
    for s in head_scores(&store, &head, &z1, &z2) {
        assert!(s > 0.0 && s < 1.0);
    }
    for id in [head.w1, head.b1, head.w2, head.b2] {
        store.value_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    assert!(head_scores(&store, &head, &z1, &z2).iter().all(|&s| s == 0.5));
}

#[test]
fn head_antisymmetric_fixture() {
    // Hidden units (u·z1 + v·z2, v·z1 + u·z2) with output weights (1, -1):
    // swapping the players negates the logit.
    let d = 3;
    let (mut store, head) = head_store(d, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let u = Tensor::uniform(&[d], 1.0, &mut rng);
    let v = Tensor::uniform(&[d], 1.0, &mut rng);
    let mut w1 = Tensor::zeros(&[2 * d, 2]);
    for i in 0..d {
        w1.set(&[i, 0], u.data()[i]);
        w1.set(&[d + i, 0], v.data()[i]);
        w1.set(&[i, 1], v.data()[i]);
        w1.set(&[d + i, 1], u.data()[i]);
    }
    *store.value_mut(head.w1) = w1;
    *store.value_mut(head.b1) = Tensor::zeros(&[2]);
    *store.value_mut(head.w2) = Tensor::new(&[2, 1], vec![1.0, -1.0]).unwrap();
    *store.value_mut(head.b2) = Tensor::zeros(&[1]);
    let z1 = Tensor::uniform(&[6, d], 2.0, &mut rng);
    let z2 = Tensor::uniform(&[6, d], 2.0, &mut rng);
    let ab = head_scores(&store, &head, &z1, &z2);
    let ba = head_scores(&store, &head, &z2, &z1);
    for (x, y) in ab.iter().zip(&ba) {
        assert!((x + y - 1.0).abs() < 1e-15);
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        heads: 2,
        head_dim: 2,
        embed_dim: 8,
        caam_heads: 2,
        head_hidden: 4,
        epochs: 2,
        lr: 5e-3,
        seed: 3,
        ..Default::default()
    }
}

/// Two games of four points each inside one set, with random features.
fn two_game_match(seed: u64) -> MatchSequence {
    let plan = [(1, 1, 1), (1, 1, 1), (1, 1, 2), (1, 1, 1), (1, 2, 2), (1, 2, 2), (1, 2, 1), (1, 2, 2)];
    let mut m = build_match_sequences(&records("g", &plan)).unwrap().remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in m.p1.iter_mut().chain(m.p2.iter_mut()) {
        let t = Tensor::uniform(&[16], 2.0, &mut rng);
        row.copy_from_slice(t.data());
    }
    m
}

#[test]
fn end_to_end_gradient_check() {
    let m = two_game_match(11);
    let samples = assemble_granularity_targets(&m);
    let mut model = HydraNetModel::new(small_config(), None).unwrap();
    // Larger attention weights keep gradients well above finite-difference noise.
    for k in 0..2 {
        let p = model.hydra[k];
        for id in [p.q_diag, p.k_diag, p.q_off, p.k_off, p.out_w, p.game_w, p.set_w] {
            store_scale(&mut model.store, id, 3.0);
        }
    }
    for id in [model.caam.q, model.caam.k] {
        store_scale(&mut model.store, id, 4.0);
    }
    for k in 0..2 {
        for id in model.embed[k].w1.into_iter().chain(model.embed[k].w2) {
            store_scale(&mut model.store, id, 2.0);
        }
    }
    let ids: Vec<_> = model.store.ids().collect();
    let mut worst: f64 = 0.0;
    for id in ids {
        let value = model.store.value(id).clone();
        let err = grad_check(
            |tape: &mut Tape, v: Var| {
                tape.bind_param(id, v);
                let (t, _, _) = model.match_loss::<ChaCha8Rng>(tape, &m, &samples, None)?;
                Ok(t)
            },
            &value,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "{}: {err}", model.store.name(id));
        worst = worst.max(err);
    }
    assert!(worst.is_finite());
}

fn store_scale(store: &mut crate::tensor::ParamStore, id: crate::tensor::ParamId, c: f64) {
    store.value_mut(id).data_mut().iter_mut().for_each(|v| *v *= c);
}

#[test]
fn causal_scores() {
    let base = two_game_match(5);
    let model = HydraNetModel::new(small_config(), None).unwrap();
    let s0 = model.predict(&base).unwrap();
    for u in 0..base.len() {
        let mut m = base.clone();
        m.p1[u][3] += 1.5;
        m.p2[u][9] -= 0.7;
        let s = model.predict(&m).unwrap();
        for t in 0..u {
            assert!((s[t] - s0[t]).abs() <= 1e-12, "u={u} t={t}");
        }
        assert!(s[u..].iter().zip(&s0[u..]).any(|(a, b)| a != b));
    }
}

#[test]
fn ablation_ignores_zeroed_modality() {
    let base = two_game_match(6);
    let model = HydraNetModel::new(small_config(), Some(Modality::Fatigue)).unwrap();
    let mut m = base.clone();
    for row in m.p1.iter_mut().chain(m.p2.iter_mut()) {
        row[15] = 100.0;
    }
    assert_eq!(model.predict(&base).unwrap(), model.predict(&m).unwrap());
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let m = two_game_match(7);
    let mut model = HydraNetModel::new(small_config(), Some(Modality::Serve)).unwrap();
    train(&mut model, std::slice::from_ref(&m)).unwrap();
    let back = HydraNetModel::from_checkpoint_str(&model.to_checkpoint_string()).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.ablation, Some(Modality::Serve));
    assert_eq!(back.predict(&m).unwrap(), model.predict(&m).unwrap());
}

#[test]
fn training_edge_cases() {
    let mut model = HydraNetModel::new(small_config(), None).unwrap();
    assert!(matches!(train(&mut model, &[]), Err(Error::Config(_))));
    let before = model.store.to_checkpoint_string();
    model.config.epochs = 0;
    let log = train(&mut model, &[two_game_match(1)]).unwrap();
    assert!(log.rows.is_empty());
    assert_eq!(model.store.to_checkpoint_string(), before);
}

#[test]
fn training_is_deterministic_and_learns() {
    let matches = generate_synthetic_matches(6, 21, &SynthConfig::default()).unwrap();
    let run = || {
        let mut model = HydraNetModel::new(TrainConfig { epochs: 5, lr: 3e-3, ..small_config() }, None).unwrap();
        train(&mut model, &matches).unwrap().to_csv()
    };
    let a = run();
    assert_eq!(a, run());
    let mut model = HydraNetModel::new(TrainConfig { epochs: 5, lr: 3e-3, ..small_config() }, None).unwrap();
    let log = train(&mut model, &matches).unwrap();
    assert_eq!(log.to_csv(), a);
    assert_eq!(log.rows.len(), 30);
    assert!(a.starts_with(LossLog::HEADER));
    let means = log.epoch_means();
    assert!(means[0] > means[4], "{means:?}");
}

