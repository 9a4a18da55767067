use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::MatchSequence;
use crate::error::{Error, Result};
use crate::multigran::model::{HydraNetModel, InputScaling, LossParts};
use crate::multigran::targets::{assemble_granularity_targets, GranularitySample};
use crate::tensor::{AdamConfig, AdamState, Tape};

/// One optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub epoch: usize,
    /// Running step counter across epochs.
    pub batch: usize,
    pub parts: LossParts,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<LossRow>,
}

impl LossLog {
    pub const HEADER: &'static str = "epoch,batch,L_ver,L_point,L_game,L_set,L_match,total";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let p = &r.parts;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.epoch, r.batch, p.versus, p.cla[0], p.cla[1], p.cla[2], p.cla[3], p.total
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Mean total loss of each epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let epochs = self.rows.iter().map(|r| r.epoch).max().unwrap_or(0);
        (1..=epochs)
            .map(|e| {
                let v: Vec<f64> = self.rows.iter().filter(|r| r.epoch == e).map(|r| r.parts.total).collect();
                v.iter().sum::<f64>() / v.len().max(1) as f64
            })
            .collect()
    }
}

/// Evaluates the joint loss of one match without dropout or gradients.
pub fn evaluate_loss(model: &HydraNetModel, m: &MatchSequence) -> Result<LossParts> {
    let samples = assemble_granularity_targets(m);
    let mut tape = Tape::new();
    let (total, cla, fwd) = model.match_loss::<ChaCha8Rng>(&mut tape, m, &samples, None)?;
    Ok(parts(&tape, fwd.l_ver, cla, total))
}

fn parts(tape: &Tape, l_ver: crate::tensor::Var, cla: [crate::tensor::Var; 4], total: crate::tensor::Var) -> LossParts {
    let item = |v| tape.value(v).data()[0];
    LossParts { versus: item(l_ver), cla: cla.map(item), total: item(total) }
}

/// Trains `model` in place after fitting its input scaling to `matches`:
/// each epoch visits the matches in a seeded
/// shuffled order and takes one Adam step per match.
pub fn train(model: &mut HydraNetModel, matches: &[MatchSequence]) -> Result<LossLog> {
    if matches.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let cfg = model.config.clone();
    model.input = InputScaling::fit(matches);
    let samples: Vec<Vec<GranularitySample>> = matches.iter().map(assemble_granularity_targets).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let mut adam = AdamState::new(&model.store, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    let mut log = LossLog::default();
    let mut order: Vec<usize> = (0..matches.len()).collect();
    let mut batch = 0;
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let mut tape = Tape::new();
            let (total, cla, fwd) = model.match_loss(&mut tape, &matches[i], &samples[i], Some(&mut rng))?;
            let row = parts(&tape, fwd.l_ver, cla, total);
            if !row.total.is_finite() {
                return Err(Error::NonFinite(format!("loss on match {} in epoch {epoch}", matches[i].match_id)));
            }
            let grads = tape.backward(total)?;
            model.store.zero_grad();
            grads.accumulate_into(&mut model.store);
            if cfg.clip > 0.0 {
                model.store.clip_grad_norm(cfg.clip);
            }
            adam.step(&mut model.store)?;
            batch += 1;
            log.rows.push(LossRow { epoch, batch, parts: row });
        }
    }
    Ok(log)
}
