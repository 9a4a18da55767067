use std::path::PathBuf;
use std::time::Instant;

use hydranet::data::record::write_points_csv_to;
use hydranet::data::{self, generate_synthetic_matches, normalize_serve_speed, zscore_distance_run, SynthConfig};
use hydranet::evaluation::{auc, auprc, fisher_combined, split_matches, train_and_test};
use hydranet::interaction::versus_loss;
use hydranet::multigran::{Granularity, TrainConfig};
use hydranet::selfcheck;
use hydranet::tensor::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    lines: Vec<String>,
    failed: usize,
}

impl Outcome {
    fn record(&mut self, id: &str, ok: bool, detail: String) {
        let line = format!("[{}] {id}: {detail}", if ok { "PASS" } else { "FAIL" });
        println!("{line}");
        self.lines.push(line);
        self.failed += usize::from(!ok);
    }
}

fn kernel_oracle(out: &mut Outcome) {
    let start = Instant::now();
    let r = selfcheck::kernel_oracle_suite(100, 2024).unwrap();
    let secs = start.elapsed().as_secs_f64();
    out.record(
        "1 kernel oracle",
        r.max_error < 1e-9 && secs < 30.0,
        format!("{} configs, max |diff| {:.2e} < 1e-9, {secs:.2}s < 30s", r.cases, r.max_error),
    );
}

fn duality(out: &mut Outcome) {
    let r = selfcheck::duality_suite(50, 2025).unwrap();
    out.record("2 scan duality", r.max_error <= 1e-8, format!("{} cases, max |diff| {:.2e} <= 1e-8", r.cases, r.max_error));
}

fn gradients(out: &mut Outcome) {
    let ops = selfcheck::op_gradient_suite(20).unwrap();
    let model = selfcheck::model_gradient_suite().unwrap();
    let worst = |rs: &[selfcheck::CheckResult]| {
        rs.iter().max_by(|a, b| a.max_error.total_cmp(&b.max_error)).map(|r| (r.name.clone(), r.max_error)).unwrap()
    };
    let (op_name, op_err) = worst(&ops);
    let (p_name, p_err) = worst(&model);
    out.record(
        "3 gradient suite",
        op_err <= 1e-4 && p_err <= 1e-4,
        format!(
            "{} ops worst {op_name} {op_err:.2e}; {} model params worst {p_name} {p_err:.2e}; h = 1e-5, tol 1e-4",
            ops.len(),
            model.len()
        ),
    );
}

fn causality(out: &mut Outcome) {
    let r = selfcheck::causality_suite(20, 1, 99).unwrap();
    out.record(
        "4 causality",
        r.max_prior_change <= 1e-12 && r.earlier_games_exact,
        format!(
            "{} matches, max prior change {:.2e} <= 1e-12, earlier games identical: {}",
            r.perturbations, r.max_prior_change, r.earlier_games_exact
        ),
    );
}

fn brute_auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    (pairs > 0.0).then(|| wins / pairs)
}

/// Precision-weighted recall increments over every distinct threshold.
fn step_auprc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let pos = labels.iter().filter(|&&l| l == 1).count() as f64;
    if pos == 0.0 {
        return None;
    }
    let mut thresholds = scores.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut area, mut prev_recall) = (0.0, 0.0);
    for thr in thresholds {
        let sel: Vec<u8> = scores.iter().zip(labels).filter(|(s, _)| **s >= thr).map(|(_, l)| *l).collect();
        let tp = sel.iter().filter(|&&l| l == 1).count() as f64;
        let recall = tp / pos;
        area += (recall - prev_recall) * (tp / sel.len() as f64);
        prev_recall = recall;
    }
    Some(area)
}

fn metric_oracles(out: &mut Outcome) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut auc_exact, mut auprc_worst) = (true, 0.0f64);
    for case in 0..200 {
        let n = rng.gen_range(2..60);
        let scores: Vec<f64> =
            (0..n).map(|_| if case % 2 == 0 { rng.gen_range(0..6) as f64 / 5.0 } else { rng.gen() }).collect();
        let labels: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2)).collect();
        auc_exact &= auc(&scores, &labels).unwrap() == brute_auc(&scores, &labels);
        if let (Some(a), Some(b)) = (auprc(&scores, &labels).unwrap(), step_auprc(&scores, &labels)) {
            auprc_worst = auprc_worst.max((a - b).abs());
        }
    }
    let six = fisher_combined(&[0.05; 6]).unwrap().statistic;
    let ones = fisher_combined(&[1.0; 6]).unwrap().statistic;
    let want = -2.0 * 6.0 * 0.05f64.ln();
    out.record(
        "5 metric oracles",
        auc_exact && auprc_worst <= 1e-12 && (six - want).abs() <= 1e-3 && (six - 35.9488).abs() <= 1e-3 && ones == 0.0,
        format!("AUC exact on 200: {auc_exact}; AUPRC max |diff| {auprc_worst:.1e}; Fisher 6 x 0.05 = {six:.4}; all ones = {ones}"),
    );
}

fn versus(out: &mut Outcome) {
    let m = 0.5;
    let loss = |a: &[f64], b: &[f64]| {
        let mut tape = Tape::new();
        let y1 = tape.constant(Tensor::new(&[1, a.len()], a.to_vec()).unwrap());
        let y2 = tape.constant(Tensor::new(&[1, b.len()], b.to_vec()).unwrap());
        let l = versus_loss(&mut tape, y1, y2, m).unwrap();
        tape.value(l).data()[0]
    };
    let same = loss(&[0.6, 0.8], &[0.6, 0.8]);
    let orth = loss(&[1.0, 0.0], &[0.0, 1.0]);
    let opp = loss(&[0.6, 0.8], &[-0.6, -0.8]);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bounded = (0..10_000).all(|_| {
        let a: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let l = loss(&a, &b);
        (0.0..=1.0 + m).contains(&l)
    });
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12;
    out.record(
        "6 versus loss",
        close(same, 1.0 + m) && close(orth, m) && close(opp, 0.0) && bounded,
        format!("identical {same}, orthogonal {orth}, opposite {opp}; 1e4 random pairs in [0, 1.5]: {bounded}"),
    );
}

fn normalization(out: &mut Outcome) {
    let ends = [80.0, 100.0, 120.0].map(|x| normalize_serve_speed(x, 80.0, 120.0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let values: Vec<f64> = (0..1000).map(|_| rng.gen_range(0.0..50.0)).collect();
    let z = zscore_distance_run(&values).values;
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    out.record(
        "7 normalization",
        ends == [-1.0, 0.0, 1.0] && mean.abs() <= 1e-10 && (var - 1.0).abs() <= 1e-10,
        format!("speed endpoints {ends:?}; z-score mean {mean:.1e}, variance {var:.12}"),
    );
}

fn synthetic_end_to_end(out: &mut Outcome) {
    let start = Instant::now();
    let matches = generate_synthetic_matches(200, 7, &SynthConfig::default()).unwrap();
    let cfg = TrainConfig { seed: 7, epochs: 5, weights: [1.0, 1.0, 0.1, 0.02], ..Default::default() };
    let split = split_matches(&matches, &cfg).unwrap();
    let (_, log, metrics) = train_and_test(&matches, &split, &cfg, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let auc_of = |g: Granularity| metrics[g.index()].and_then(|m| m.auc).unwrap_or(f64::NAN);
    let (point, game) = (auc_of(Granularity::Point), auc_of(Granularity::Game));
    out.record(
        "8 synthetic end-to-end",
        point >= 0.99 && game >= 0.70 && cfg.epochs <= 5 && secs <= 600.0,
        format!(
            "{} train / {} test matches, {} epochs, point AUC {point:.4} >= 0.99, game AUC {game:.4} >= 0.70, {secs:.1}s <= 600s",
            split.train.len(),
            split.test.len(),
            log.epoch_means().len()
        ),
    );
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn pipeline_fixtures(out: &mut Outcome) {
    let raw = data::parse_point_csv(&fixture("raw_20.csv")).unwrap();
    let clean = data::clean_points(&raw).unwrap();
    let mut buf = Vec::new();
    write_points_csv_to(&mut buf, &clean).unwrap();
    let want = std::fs::read_to_string(fixture("clean_20_expected.csv")).unwrap();
    let rows_match = String::from_utf8(buf).unwrap() == want;
    let dir = tempfile::tempdir().unwrap();
    let runs: Vec<(Vec<u8>, Vec<u8>)> = (0..2)
        .map(|k| {
            let sub = dir.path().join(k.to_string());
            data::ingest_file(&fixture("raw_20.csv"), 17).unwrap().write_to(&sub).unwrap();
            (std::fs::read(sub.join("points.csv")).unwrap(), std::fs::read(sub.join("normalization.txt")).unwrap())
        })
        .collect();
    let deterministic = runs[0] == runs[1];
    out.record(
        "10 pipeline fixtures",
        raw.len() == 20 && rows_match && deterministic,
        format!("{} raw rows -> {} cleaned, expected file matches: {rows_match}; ingest byte-identical: {deterministic}", raw.len(), clean.len()),
    );
}

fn main() {
    let mut out = Outcome { lines: Vec::new(), failed: 0 };
    kernel_oracle(&mut out);
    duality(&mut out);
    gradients(&mut out);
    causality(&mut out);
    metric_oracles(&mut out);
    versus(&mut out);
    normalization(&mut out);
    synthetic_end_to_end(&mut out);
    println!("[SKIP] 9 reproduction on the released match data: needs the external dataset, not gated");
    pipeline_fixtures(&mut out);
    println!("acceptance: {} passed, {} failed, 1 skipped", out.lines.len() - out.failed, out.failed);
    if out.failed > 0 {
        std::process::exit(1);
    }
}
