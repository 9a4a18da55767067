use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hydranet::data::{
    build_match_sequences, generate_synthetic_records, ingest_file, ingest_records, load_points_csv, MatchSequence,
    Modality, SynthConfig,
};
use hydranet::evaluation::{
    cross_validate, evaluate_model, export_ms_trace, run_mlmm_ablation, split_matches, train_and_test, write_json,
    MetricReport,
};
use hydranet::multigran::{HydraNetModel, TrainConfig};
use hydranet::selfcheck;
use hydranet::{Error, Result};

const GRAD_TOL: f64 = 1e-4;
const KERNEL_TOL: f64 = 1e-9;
const DUALITY_TOL: f64 = 1e-8;
const CAUSAL_TOL: f64 = 1e-12;

/// Momentum modelling for point-by-point tennis data.
#[derive(Parser)]
#[command(name = "hydranet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Clean, impute and normalize a raw point-by-point CSV.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Directory receiving points.csv and normalization.txt.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic corpus with planted momentum signals.
    Synth {
        #[arg(long, default_value_t = 50)]
        matches: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        best_of: u32,
        /// Probability that a game winner also wins the next game.
        #[arg(long, default_value_t = 0.8)]
        carryover: f64,
    },
    /// Train on the training split and write a checkpoint and loss log.
    Train(RunArgs),
    /// Score a checkpoint on the test split, or cross-validate with --cv.
    Eval {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint to score. Defaults to <out>/checkpoint.txt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Retrain one model per fold instead of scoring a checkpoint.
        #[arg(long)]
        cv: bool,
    },
    /// Compare cross-validated runs with and without one modality.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// serve, return, psychology or fatigue.
        #[arg(long)]
        modality: String,
    },
    /// Export the momentum trace of one match.
    Trace {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "match")]
        match_id: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every operation and of the full model loss.
    Gradcheck {
        /// Random inputs per operation.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Kernel, scan and causality self-checks.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// key=value file applied over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cleaned points CSV, or a directory holding points.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Extra key=value overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_text(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?;
        }
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(d) = &self.out {
            cfg.out_dir = Some(d.clone());
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        for kv in &self.overrides {
            let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got {kv:?}")))?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_matches(path: &Path) -> Result<Vec<MatchSequence>> {
    let file = if path.is_dir() { path.join("points.csv") } else { path.to_path_buf() };
    build_match_sequences(&load_points_csv(&file)?)
}

fn data_of(cfg: &TrainConfig) -> Result<Vec<MatchSequence>> {
    let path = cfg.data.as_ref().ok_or_else(|| Error::Config("no data path (use --data or data=)".into()))?;
    load_matches(path)
}

fn out_of(cfg: &TrainConfig) -> Result<PathBuf> {
    let dir = cfg.out_dir.clone().ok_or_else(|| Error::Config("no output directory (use --out or out_dir=)".into()))?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn report(name: &str, err: f64, tol: f64) -> bool {
    let ok = err < tol;
    println!("{} {name}: max error {err:.3e} (tolerance {tol:e})", if ok { "ok  " } else { "FAIL" });
    ok
}

fn run(command: Command) -> Result<bool> {
    match command {
        Command::Ingest { input, out, seed } => {
            let ing = ingest_file(&input, seed)?;
            ing.write_to(&out)?;
            println!("{} points written to {}", ing.records.len(), out.display());
        }
        Command::Synth { matches, seed, out, best_of, carryover } => {
            let cfg = SynthConfig { best_of, carryover, ..Default::default() };
            let ing = ingest_records(generate_synthetic_records(matches, seed, &cfg)?, seed)?;
            ing.write_to(&out)?;
            println!("{matches} matches, {} points written to {}", ing.records.len(), out.display());
        }
        Command::Train(args) => {
            let cfg = args.config()?;
            let matches = data_of(&cfg)?;
            let out = out_of(&cfg)?;
            let split = split_matches(&matches, &cfg)?;
            let (model, log, metrics) = train_and_test(&matches, &split, &cfg, None)?;
            model.save(&out.join("checkpoint.txt"))?;
            log.save(&out.join("loss_log.csv"))?;
            std::fs::write(out.join("config.txt"), cfg.to_text()).map_err(|e| Error::io(&out, e))?;
            write_json(&out.join("metrics.json"), &MetricReport::from_folds(&[metrics]).to_json()?)?;
            for (e, loss) in log.epoch_means().iter().enumerate() {
                println!("epoch {}: mean loss {loss:.6}", e + 1);
            }
        }
        Command::Eval { run, checkpoint, cv } => {
            let cfg = run.config()?;
            let matches = data_of(&cfg)?;
            let out = out_of(&cfg)?;
            let report = if cv {
                let split = split_matches(&matches, &cfg)?;
                MetricReport::from_folds(&cross_validate(&matches, &split, &cfg, None)?)
            } else {
                let path = checkpoint.unwrap_or_else(|| out.join("checkpoint.txt"));
                let model = HydraNetModel::load(&path)?;
                let split = split_matches(&matches, &model.config)?;
                let test: Vec<MatchSequence> =
                    matches.iter().filter(|m| split.test.contains(&m.match_id)).cloned().collect();
                if test.is_empty() {
                    return Err(Error::Config("test split is empty".into()));
                }
                MetricReport::from_folds(&[evaluate_model(&model, &test)?])
            };
            let json = report.to_json()?;
            write_json(&out.join(if cv { "metrics_cv.json" } else { "metrics_eval.json" }), &json)?;
            println!("{json}");
        }
        Command::Ablate { run, modality } => {
            let cfg = run.config()?;
            let matches = data_of(&cfg)?;
            let out = out_of(&cfg)?;
            let split = split_matches(&matches, &cfg)?;
            let rep = run_mlmm_ablation(&matches, &split, &cfg, &modality)?;
            let name = Modality::parse(&modality).map(|m| m.name()).unwrap_or("unknown");
            let json = rep.to_json()?;
            write_json(&out.join(format!("ablation_{name}.json")), &json)?;
            println!("{json}");
        }
        Command::Trace { checkpoint, data, match_id, out } => {
            let model = HydraNetModel::load(&checkpoint)?;
            let matches = load_matches(&data)?;
            let m = matches
                .iter()
                .find(|m| m.match_id == match_id)
                .ok_or_else(|| Error::Data(format!("match {match_id:?} not found")))?;
            export_ms_trace(&model, m)?.write_csv(&out)?;
            println!("{} points traced to {}", m.len(), out.display());
        }
        Command::Gradcheck { seeds } => {
            let mut ok = true;
            for r in selfcheck::op_gradient_suite(seeds)?.iter().chain(&selfcheck::model_gradient_suite()?) {
                ok &= report(&r.name, r.max_error, GRAD_TOL);
            }
            return Ok(ok);
        }
        Command::Selftest { seed } => {
            let k = selfcheck::kernel_oracle_suite(100, seed)?;
            let d = selfcheck::duality_suite(50, seed)?;
            let c = selfcheck::causality_suite(20, 1, seed)?;
            let mut ok = report(&k.name, k.max_error, KERNEL_TOL);
            ok &= report(&d.name, d.max_error, DUALITY_TOL);
            ok &= report("causality, earlier points", c.max_prior_change, CAUSAL_TOL);
            println!("{} causality, earlier games bit-identical", if c.earlier_games_exact { "ok  " } else { "FAIL" });
            return Ok(ok && c.earlier_games_exact);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_internal() { 2 } else { 1 })
        }
    }
}
