use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{MatchSequence, Modality, FEATURE_DIM};
use crate::error::{Error, Result};
use crate::hydra::{
    forward_game, init_implicit_momentum, update_implicit_momentum, HydraConfig, HydraParams, Transition, WindowLayout,
};
use crate::interaction::{caam_attention, embed_modalities, split_modality_groups, versus_loss, CaamParams, EmbedParams};
use crate::multigran::config::TrainConfig;
use crate::multigran::targets::{Granularity, GranularitySample};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Probability clamp applied before taking logs.
pub const PROB_CLAMP: f64 = 1e-7;

/// Two-layer perceptron mapping `[Ẑ₁ | Ẑ₂]` to the momentum score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl HeadParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, hidden: usize, rng: &mut R) -> Self {
        HeadParams {
            w1: store.insert(format!("{prefix}.w1"), Tensor::uniform(&[2 * d, hidden], 1.0 / ((2 * d) as f64).sqrt(), rng)),
            b1: store.insert(format!("{prefix}.b1"), Tensor::zeros(&[hidden])),
            w2: store.insert(format!("{prefix}.w2"), Tensor::uniform(&[hidden, 1], 1.0 / (hidden as f64).sqrt(), rng)),
            b2: store.insert(format!("{prefix}.b2"), Tensor::zeros(&[1])),
        }
    }
}

/// `sigmoid(silu([z1 | z2] W1 + b1) W2 + b2)` as an `[L, 1]` column.
pub fn predict_momentum_score(tape: &mut Tape, store: &ParamStore, head: &HeadParams, z1: Var, z2: Var) -> Result<Var> {
    let w1 = tape.param(store, head.w1);
    let b1 = tape.param(store, head.b1);
    let w2 = tape.param(store, head.w2);
    let b2 = tape.param(store, head.b2);
    let z = tape.concat(&[z1, z2], 1)?;
    let h = tape.matmul(z, w1)?;
    let h = tape.add(h, b1)?;
    let h = tape.silu(h);
    let o = tape.matmul(h, w2)?;
    let o = tape.add(o, b2)?;
    Ok(tape.sigmoid(o))
}

/// Mean binary cross-entropy of the `[L, 1]` scores at the samples' points.
/// An empty sample list contributes a constant zero.
pub fn classification_loss(tape: &mut Tape, scores: Var, samples: &[&GranularitySample]) -> Result<Var> {
    if samples.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let n = tape.shape(scores)[0];
    if let Some(s) = samples.iter().find(|s| s.t >= n) {
        return Err(Error::Shape(format!("sample at point {} of a {n}-point score column", s.t)));
    }
    let idx: Vec<usize> = samples.iter().map(|s| s.t).collect();
    let p = tape.gather_rows(scores, &idx)?;
    let p = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let y = Tensor::new(&[idx.len(), 1], samples.iter().map(|s| f64::from(s.label)).collect())?;
    let not_y = y.map(|v| 1.0 - v);
    let (y, not_y) = (tape.constant(y), tape.constant(not_y));
    let lp = tape.log(p)?;
    let q = tape.neg(p);
    let q = tape.add_scalar(q, 1.0);
    let lq = tape.log(q)?;
    let a = tape.mul(y, lp)?;
    let b = tape.mul(not_y, lq)?;
    let s = tape.add(a, b)?;
    let m = tape.mean(s);
    Ok(tape.neg(m))
}

/// `L_ver + Σ w_g L_g` over point, game, set and match losses.
pub fn total_loss(tape: &mut Tape, l_ver: Var, l_cla: [Var; 4], weights: [f64; 4]) -> Result<Var> {
    let mut total = l_ver;
    for (l, w) in l_cla.into_iter().zip(weights) {
        let term = tape.scale(l, w);
        total = tape.add(total, term)?;
    }
    Ok(total)
}

/// Per-feature affine map applied to raw feature rows before the network.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaling {
    pub mean: [f64; FEATURE_DIM],
    pub scale: [f64; FEATURE_DIM],
}

impl Default for InputScaling {
    fn default() -> Self {
        InputScaling { mean: [0.0; FEATURE_DIM], scale: [1.0; FEATURE_DIM] }
    }
}

impl InputScaling {
    /// Population mean and inverse standard deviation of every feature over
    /// all points of both players. Constant features keep scale 1.
    pub fn fit(matches: &[MatchSequence]) -> Self {
        let rows: Vec<&[f64; FEATURE_DIM]> = matches.iter().flat_map(|m| m.p1.iter().chain(&m.p2)).collect();
        let mut out = InputScaling::default();
        if rows.is_empty() {
            return out;
        }
        let n = rows.len() as f64;
        for j in 0..FEATURE_DIM {
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            out.mean[j] = mean;
            out.scale[j] = if var > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        }
        out
    }

    fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        format!("#input mean={}\n#input scale={}\n", join(&self.mean), join(&self.scale))
    }

    fn parse_line(&mut self, line: &str) -> Result<()> {
        let (key, values) =
            line.split_once('=').ok_or_else(|| Error::Config(format!("bad checkpoint input line {line:?}")))?;
        let parsed: Vec<f64> = values
            .split_whitespace()
            .map(|v| v.parse().map_err(|_| Error::Config(format!("bad input scaling value {v:?}"))))
            .collect::<Result<_>>()?;
        let target = match key {
            "mean" => &mut self.mean,
            "scale" => &mut self.scale,
            _ => return Err(Error::Config(format!("unknown input scaling key {key:?}"))),
        };
        if parsed.len() != FEATURE_DIM {
            return Err(Error::Config(format!("input {key} has {} values, expected {FEATURE_DIM}", parsed.len())));
        }
        target.copy_from_slice(&parsed);
        Ok(())
    }
}

/// Every parameter of the network plus the configuration it was built from.
#[derive(Debug, Clone)]
pub struct HydraNetModel {
    pub config: TrainConfig,
    pub ablation: Option<Modality>,
    pub store: ParamStore,
    pub hydra: [HydraParams; 2],
    pub embed: [EmbedParams; 2],
    pub caam: CaamParams,
    pub head: HeadParams,
    pub input: InputScaling,
}

/// Tape handles produced by one pass over a match.
#[derive(Debug, Clone, Copy)]
pub struct MatchForward {
    /// `[N, d]` self-momentum of each player.
    pub y1: Var,
    pub y2: Var,
    pub z1: Var,
    pub z2: Var,
    /// `[N, 1]` momentum score of player 1.
    pub scores: Var,
    pub l_ver: Var,
}

/// Per-component losses of one match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub versus: f64,
    /// Point, game, set and match.
    pub cla: [f64; 4],
    pub total: f64,
}

impl HydraNetModel {
    /// Fresh parameters drawn from `config.seed`.
    pub fn new(config: TrainConfig, ablation: Option<Modality>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let hcfg = hydra_config(&config);
        let d = FEATURE_DIM;
        let hydra = [
            HydraParams::init(&mut store, "hydra1", &hcfg, &mut rng),
            HydraParams::init(&mut store, "hydra2", &hcfg, &mut rng),
        ];
        let embed = [
            EmbedParams::init(&mut store, "embed1", config.embed_dim, &mut rng),
            EmbedParams::init(&mut store, "embed2", config.embed_dim, &mut rng),
        ];
        let caam = CaamParams::init(&mut store, "caam", config.embed_dim, d, &mut rng);
        let head = HeadParams::init(&mut store, "head", d, config.head_hidden, &mut rng);
        Ok(HydraNetModel { config, ablation, store, hydra, embed, caam, head, input: InputScaling::default() })
    }

    pub fn hydra_config(&self) -> HydraConfig {
        hydra_config(&self.config)
    }

    /// Runs the whole match. Dropout is active when `rng` is given.
    pub fn forward_match<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        m: &MatchSequence,
        mut rng: Option<&mut R>,
    ) -> Result<MatchForward> {
        if m.games.is_empty() {
            return Err(Error::Data(format!("match {} has no games", m.match_id)));
        }
        let hcfg = self.hydra_config();
        let store = &self.store;
        let mut momentum = init_implicit_momentum(tape, FEATURE_DIM);
        let mut last: [Option<Var>; 2] = [None, None];
        let mut outputs: [Vec<Var>; 2] = [Vec::new(), Vec::new()];
        for (g, span) in m.games.iter().enumerate() {
            for k in 0..2 {
                if let Some(prev) = last[k] {
                    let transition =
                        if m.games[g - 1].set != span.set { Transition::CrossSet } else { Transition::CrossGame };
                    momentum[k] = update_implicit_momentum(tape, store, &self.hydra[k], prev, transition)?;
                }
                let feats = if k == 0 { &m.p1 } else { &m.p2 };
                let pts = tape.constant(self.input_tensor(&feats[span.start..span.end])?);
                let out = forward_game(tape, store, &self.hydra[k], &hcfg, pts, momentum[k].value, rng.as_deref_mut())?;
                outputs[k].push(out.points);
                last[k] = Some(out.last);
            }
        }
        let y1 = tape.concat(&outputs[0], 0)?;
        let y2 = tape.concat(&outputs[1], 0)?;
        let l_ver = versus_loss(tape, y1, y2, self.config.margin)?;
        let mut embedded = [y1, y2];
        for (k, y) in [y1, y2].into_iter().enumerate() {
            let mut groups = split_modality_groups(tape, y)?;
            if let Some(mo) = self.ablation {
                let shape = tape.shape(groups[mo.index()]).to_vec();
                groups[mo.index()] = tape.constant(Tensor::zeros(&shape));
            }
            embedded[k] =
                embed_modalities(tape, store, &self.embed[k], groups, self.config.dropout, rng.as_deref_mut())?;
        }
        let caam = caam_attention(tape, store, &self.caam, self.config.caam_heads, embedded[0], embedded[1])?;
        let scores = predict_momentum_score(tape, store, &self.head, caam.z1, caam.z2)?;
        Ok(MatchForward { y1, y2, z1: caam.z1, z2: caam.z2, scores, l_ver })
    }

    /// Builds the joint loss of one match on the tape.
    pub fn match_loss<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        m: &MatchSequence,
        samples: &[GranularitySample],
        rng: Option<&mut R>,
    ) -> Result<(Var, [Var; 4], MatchForward)> {
        let fwd = self.forward_match(tape, m, rng)?;
        let mut cla = [fwd.l_ver; 4];
        for g in Granularity::ALL {
            let picked: Vec<&GranularitySample> = samples.iter().filter(|s| s.granularity == g).collect();
            cla[g.index()] = classification_loss(tape, fwd.scores, &picked)?;
        }
        let total = total_loss(tape, fwd.l_ver, cla, self.config.weights)?;
        Ok((total, cla, fwd))
    }

    /// Momentum score of player 1 at every point, without dropout.
    pub fn predict(&self, m: &MatchSequence) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let fwd = self.forward_match::<ChaCha8Rng>(&mut tape, m, None)?;
        Ok(tape.value(fwd.scores).data().to_vec())
    }

    fn input_tensor(&self, rows: &[[f64; FEATURE_DIM]]) -> Result<Tensor> {
        let mut data: Vec<f64> = rows
            .iter()
            .flat_map(|r| (0..FEATURE_DIM).map(move |j| (r[j] - self.input.mean[j]) * self.input.scale[j]))
            .collect();
        if let Some(mo) = self.ablation {
            let r = mo.range();
            for row in data.chunks_mut(FEATURE_DIM) {
                row[r.clone()].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Tensor::new(&[rows.len(), FEATURE_DIM], data)
    }

    /// Configuration lines prefixed with `#cfg ` followed by the parameters.
    /// Data and output paths are left out.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = String::new();
        let paths = TrainConfig { data: None, out_dir: None, ..self.config.clone() };
        for line in paths.to_text().lines() {
            out.push_str("#cfg ");
            out.push_str(line);
            out.push('\n');
        }
        if let Some(mo) = self.ablation {
            out.push_str(&format!("#cfg ablation={}\n", mo.name()));
        }
        out.push_str(&self.input.to_text());
        out.push_str(&self.store.to_checkpoint_string());
        out
    }

    pub fn from_checkpoint_str(text: &str) -> Result<Self> {
        let mut config = TrainConfig::default();
        let mut ablation = None;
        for line in text.lines().filter_map(|l| l.strip_prefix("#cfg ")) {
            match line.split_once('=') {
                Some(("ablation", v)) => {
                    ablation = Some(
                        Modality::parse(v.trim())
                            .ok_or_else(|| Error::Value(format!("unknown modality {:?}", v.trim())))?,
                    )
                }
                Some((k, v)) => config.set(k, v)?,
                None => return Err(Error::Config(format!("bad checkpoint config line {line:?}"))),
            }
        }
        let mut model = HydraNetModel::new(config, ablation)?;
        for line in text.lines().filter_map(|l| l.strip_prefix("#input ")) {
            model.input.parse_line(line)?;
        }
        model.store.load_checkpoint_str(text)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

fn hydra_config(c: &TrainConfig) -> HydraConfig {
    HydraConfig {
        d: FEATURE_DIM,
        heads: c.heads,
        head_dim: c.head_dim,
        window: WindowLayout::OVERLAPPING,
        dropout: c.dropout,
    }
}
