//! Built-in verification suites shared by the command line and the test
//! targets: kernel against the loop reference, the chunked scan against the
//! sequential recurrence, finite-difference gradients and causality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{build_match_sequences, generate_synthetic_matches, MatchSequence, PlayerPoint, PointRecord, SynthConfig};
use crate::error::{Error, Result};
use crate::hydra::reference::{naive_mssd_reference, sequential_scan};
use crate::hydra::{forward_game, mssd_kernel, Fusion, HydraConfig, HydraParams, WindowLayout};
use crate::multigran::{assemble_granularity_targets, HydraNetModel, TrainConfig};
use crate::tensor::{grad_check, ParamStore, Tape, Tensor, Unary, Var, DEFAULT_STEP};

/// Largest error seen by one named check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub cases: usize,
    pub max_error: f64,
}

fn random_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..rows).map(|_| (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Runs the tape kernel and the loop reference on `cases` random games
/// (`L` in 1..=16, `H` in {1, 2, 4}, `P` in {2, 8}, `d` = 16) and returns the
/// largest absolute output difference.
pub fn kernel_oracle_suite(cases: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let heads = [1, 2, 4][rng.gen_range(0..3)];
        let head_dim = [2, 8][rng.gen_range(0..2)];
        let cfg = HydraConfig { heads, head_dim, ..Default::default() };
        let mut store = ParamStore::new();
        let p = HydraParams::init(&mut store, "h", &cfg, &mut rng);
        for id in [p.in_b, p.a_log, p.dt_bias, p.d_skip, p.norm_w, p.out_b] {
            store.value_mut(id).data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.5..0.5));
        }
        let len = rng.gen_range(1..=16);
        let pts = random_rows(len, cfg.d, &mut rng);
        let m: Vec<f64> = (0..cfg.d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_rows(&pts)?);
        let mv = tape.constant(Tensor::new(&[1, cfg.d], m.clone())?);
        let out = forward_game::<ChaCha8Rng>(&mut tape, &store, &p, &cfg, x, mv, None)?;
        let slow = naive_mssd_reference(&store, &p, &cfg, &pts, &m)?;
        worst = worst.max(tape.value(out.full).max_abs_diff(&slow));
    }
    Ok(CheckResult { name: "kernel vs reference".into(), cases, max_error: worst })
}

/// Non-overlapping windows with sum fusion against the sequential scan
/// `h_t = exp(a_t) h_{t-1} + B_t x_t, y_t = C_t h_t`.
pub fn duality_suite(cases: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let size = rng.gen_range(1..=4);
        let windows = rng.gen_range(1..=5);
        let t = size * windows;
        let (h, hp, n) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=5));
        let x = random_rows(t, h * hp, &mut rng);
        let a: Vec<Vec<f64>> = (0..t).map(|_| (0..h).map(|_| -rng.gen_range(0.01..2.0)).collect()).collect();
        let b = random_rows(t, n, &mut rng);
        let c = random_rows(t, n, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(Tensor::new(&[t, h, hp], x.concat())?);
        let av = tape.constant(Tensor::from_rows(&a)?);
        let bv = tape.constant(Tensor::from_rows(&b)?);
        let cv = tape.constant(Tensor::from_rows(&c)?);
        let y = mssd_kernel(&mut tape, xv, av, bv, cv, WindowLayout { size, stride: size }, Fusion::Sum)?;
        let y = tape.value(y);
        for head in 0..h {
            let xh: Vec<Vec<f64>> = x.iter().map(|r| r[head * hp..(head + 1) * hp].to_vec()).collect();
            let ah: Vec<f64> = a.iter().map(|r| r[head]).collect();
            for (ti, row) in sequential_scan(&xh, &ah, &b, &c).iter().enumerate() {
                for (q, want) in row.iter().enumerate() {
                    worst = worst.max((y.at(&[ti, head, q]) - want).abs());
                }
            }
        }
    }
    Ok(CheckResult { name: "chunked scan vs recurrence".into(), cases, max_error: worst })
}

type OpFn = Box<dyn Fn(&mut Tape, Var) -> Result<Var>>;

fn fixed(tape: &mut Tape, shape: &[usize], lo: f64, hi: f64, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    tape.constant(Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape"))
}

fn op_cases() -> Vec<(String, Vec<usize>, f64, f64, OpFn)> {
    let mut ops: Vec<(String, Vec<usize>, f64, f64, OpFn)> = Vec::new();
    let mut add = |name: &str, shape: &[usize], lo: f64, hi: f64, f: OpFn| ops.push((name.into(), shape.to_vec(), lo, hi, f));
    for u in [Unary::Exp, Unary::Sigmoid, Unary::Softplus, Unary::Silu, Unary::Neg, Unary::Scale(-2.5), Unary::AddScalar(0.7)] {
        add(&format!("{u:?}").to_lowercase(), &[3, 4], -3.0, 3.0, Box::new(move |t, x| t.unary(x, u)));
    }
    add("log", &[3, 4], 0.2, 3.0, Box::new(|t, x| t.log(x)));
    add("sqrt", &[3, 4], 0.2, 3.0, Box::new(|t, x| t.sqrt(x)));
    add("relu", &[3, 4], 0.1, 3.0, Box::new(|t, x| Ok(t.relu(x))));
    add("clamp", &[3, 4], 0.1, 0.9, Box::new(|t, x| Ok(t.clamp(x, 0.0, 1.0))));
    add("add", &[2, 3], -2.0, 2.0, Box::new(|t, x| { let b = fixed(t, &[3], 0.5, 2.0, 1); t.add(x, b) }));
    add("sub", &[3], -2.0, 2.0, Box::new(|t, x| { let b = fixed(t, &[2, 3], 0.5, 2.0, 2); t.sub(b, x) }));
    add("mul", &[2, 1, 3], -2.0, 2.0, Box::new(|t, x| { let b = fixed(t, &[4, 1], 0.5, 2.0, 3); t.mul(x, b) }));
    add("div", &[2, 1], 0.5, 2.0, Box::new(|t, x| { let b = fixed(t, &[2, 3], 0.5, 2.0, 4); t.div(b, x) }));
    add("matmul", &[3, 4], -1.0, 1.0, Box::new(|t, x| { let b = fixed(t, &[4, 2], -1.0, 1.0, 5); t.matmul(x, b) }));
    add("bmm", &[2, 4, 2], -1.0, 1.0, Box::new(|t, x| { let a = fixed(t, &[2, 3, 4], -1.0, 1.0, 6); t.bmm(a, x) }));
    add("reshape", &[2, 6], -1.0, 1.0, Box::new(|t, x| t.reshape(x, &[3, 4])));
    add("permute", &[2, 3, 4], -1.0, 1.0, Box::new(|t, x| t.permute(x, &[2, 0, 1])));
    add("slice", &[3, 5, 2], -1.0, 1.0, Box::new(|t, x| t.slice(x, 1, 1, 3)));
    add("concat", &[2, 3], -1.0, 1.0, Box::new(|t, x| { let y = t.scale(x, 2.0); t.concat(&[x, y], 1) }));
    add("gather_rows", &[4, 3], -1.0, 1.0, Box::new(|t, x| t.gather_rows(x, &[3, 0, 0, 2])));
    add("sum_axis", &[2, 3, 4], -1.0, 1.0, Box::new(|t, x| t.sum_axis(x, 1)));
    add("mean_axis", &[2, 3, 4], -1.0, 1.0, Box::new(|t, x| t.mean_axis(x, 2)));
    add("cumsum", &[3, 5], -1.0, 1.0, Box::new(|t, x| t.cumsum(x, 1)));
    add("segsum_exp", &[2, 5], -1.5, 0.5, Box::new(|t, x| t.segsum_exp(x)));
    add("softmax", &[3, 5], -3.0, 3.0, Box::new(|t, x| t.softmax_masked(x, None)));
    let causal: Vec<bool> = (0..16).map(|k| k % 4 <= k / 4).collect();
    add("softmax_masked", &[2, 4, 4], -3.0, 3.0, Box::new(move |t, x| t.softmax_masked(x, Some(&causal))));
    ops
}

/// Central-difference checks of every tape operation over `seeds` random
/// inputs each, reduced to a scalar by a fixed random weighting.
pub fn op_gradient_suite(seeds: u64) -> Result<Vec<CheckResult>> {
    op_cases()
        .into_iter()
        .map(|(name, shape, lo, hi, f)| {
            let mut worst: f64 = 0.0;
            for seed in 0..seeds {
                let x = {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let n: usize = shape.iter().product();
                    Tensor::new(&shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())?
                };
                let err = grad_check(
                    |t, x| {
                        let y = f(t, x)?;
                        let shape = t.shape(y).to_vec();
                        let w = fixed(t, &shape, -1.0, 1.0, seed ^ 0x5eed);
                        let p = t.mul(y, w)?;
                        Ok(t.sum(p))
                    },
                    &x,
                    DEFAULT_STEP,
                )?;
                worst = worst.max(err);
            }
            Ok(CheckResult { name, cases: seeds as usize, max_error: worst })
        })
        .collect()
}

/// A one-set match of two four-point games with random features.
pub fn two_game_fixture(seed: u64) -> Result<MatchSequence> {
    let victors = [1u8, 1, 2, 1, 2, 2, 1, 2];
    let records: Vec<PointRecord> = victors
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut r = PointRecord {
                match_id: "fixture".into(),
                player1: "A".into(),
                player2: "B".into(),
                set_no: 1,
                game_no: 1 + i as u32 / 4,
                point_no: i as u32 + 1,
                points_victor: v,
                players: [PlayerPoint { serve: 1, ..Default::default() }, PlayerPoint::default()],
                ..Default::default()
            };
            r.recompute_derived();
            r
        })
        .collect();
    let mut m = build_match_sequences(&records)?.remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in m.p1.iter_mut().chain(m.p2.iter_mut()) {
        row.iter_mut().for_each(|v| *v = rng.gen_range(-2.0..2.0));
    }
    Ok(m)
}

/// Small model whose attention and projection weights are enlarged so every
/// gradient entry stays well above finite-difference noise.
pub fn conditioned_model() -> Result<HydraNetModel> {
    let cfg = TrainConfig { heads: 2, head_dim: 2, embed_dim: 8, caam_heads: 2, head_hidden: 4, seed: 3, ..Default::default() };
    let mut model = HydraNetModel::new(cfg, None)?;
    let scale = |store: &mut ParamStore, id, c: f64| store.value_mut(id).data_mut().iter_mut().for_each(|v| *v *= c);
    for k in 0..2 {
        let p = model.hydra[k];
        for id in [p.q_diag, p.k_diag, p.q_off, p.k_off, p.out_w, p.game_w, p.set_w] {
            scale(&mut model.store, id, 3.0);
        }
        for id in model.embed[k].w1.into_iter().chain(model.embed[k].w2) {
            scale(&mut model.store, id, 2.0);
        }
    }
    for id in [model.caam.q, model.caam.k] {
        scale(&mut model.store, id, 4.0);
    }
    Ok(model)
}

/// Finite-difference check of the total loss with respect to every model
/// parameter on [`two_game_fixture`].
pub fn model_gradient_suite() -> Result<Vec<CheckResult>> {
    let m = two_game_fixture(11)?;
    let samples = assemble_granularity_targets(&m);
    let model = conditioned_model()?;
    model
        .store
        .ids()
        .map(|id| {
            let err = grad_check(
                |tape, v| {
                    tape.bind_param(id, v);
                    Ok(model.match_loss::<ChaCha8Rng>(tape, &m, &samples, None)?.0)
                },
                model.store.value(id),
                DEFAULT_STEP,
            )?;
            Ok(CheckResult { name: format!("total_loss/{}", model.store.name(id)), cases: 1, max_error: err })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalityResult {
    pub perturbations: usize,
    /// Largest change of a score before the perturbed point.
    pub max_prior_change: f64,
    /// Whether every score in games before the perturbed point's game was
    /// bit-for-bit unchanged.
    pub earlier_games_exact: bool,
}

/// Perturbs `per_match` random points of each of `matches` synthetic matches
/// and compares the scores before them.
pub fn causality_suite(matches: usize, per_match: usize, seed: u64) -> Result<CausalityResult> {
    let corpus = generate_synthetic_matches(matches, seed, &SynthConfig::default())?;
    let model = HydraNetModel::new(TrainConfig { seed, ..Default::default() }, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xca05);
    let mut out = CausalityResult { perturbations: 0, max_prior_change: 0.0, earlier_games_exact: true };
    for m in &corpus {
        let base = model.predict(m)?;
        for _ in 0..per_match {
            let u = rng.gen_range(0..m.len());
            let mut p = m.clone();
            for row in [&mut p.p1[u], &mut p.p2[u]] {
                row.iter_mut().for_each(|v| *v += rng.gen_range(-1.0..1.0));
            }
            let s = model.predict(&p)?;
            let game_start = m.games.iter().find(|g| g.start <= u && u < g.end).map(|g| g.start).unwrap_or(0);
            for t in 0..u {
                out.max_prior_change = out.max_prior_change.max((s[t] - base[t]).abs());
                if t < game_start && s[t].to_bits() != base[t].to_bits() {
                    out.earlier_games_exact = false;
                }
            }
            out.perturbations += 1;
        }
    }
    if out.perturbations == 0 {
        return Err(Error::Config("causality suite ran no perturbations".into()));
    }
    Ok(out)
}
