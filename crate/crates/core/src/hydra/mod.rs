//! Per-player self-momentum: a windowed state-space kernel over the points
//! of one game, fused by cross attention and gated normalization, with an
//! implicit momentum vector carried from game to game.

mod kernel;
pub mod reference;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub use kernel::{
    build_game_input, compute_decay_a, finalize_output, forward_game, fuse_cross_attention, inter_window_states,
    intra_window_output, mssd_kernel, off_diagonal_output, project_core_parameters, unfold_windows,
    update_implicit_momentum, window_states, CoreParameters, Fusion, GameOutput, WindowedTensors,
};

/// Windows of `size` consecutive positions starting every `stride` positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowLayout {
    pub size: usize,
    pub stride: usize,
}

impl WindowLayout {
    /// Size 2, stride 1: each window pairs a point with its predecessor.
    pub const OVERLAPPING: WindowLayout = WindowLayout { size: 2, stride: 1 };

    /// Number of windows over a sequence of `len` positions. The windows
    /// must cover the sequence exactly.
    pub fn count(&self, len: usize) -> Result<usize> {
        if self.size == 0 || self.stride == 0 || self.stride > self.size {
            return Err(Error::Config(format!("invalid window layout {self:?}")));
        }
        if len < self.size || !(len - self.size).is_multiple_of(self.stride) {
            return Err(Error::Shape(format!(
                "sequence of {len} positions does not tile into windows of {} with stride {}",
                self.size, self.stride
            )));
        }
        Ok((len - self.size) / self.stride + 1)
    }

    /// For each sequence position, the flat `window * size + slot` entry it
    /// is read back from: the first window supplies all of its slots and
    /// every later window supplies its last `stride` slots.
    pub fn fold_index(&self, len: usize) -> Result<Vec<usize>> {
        let windows = self.count(len)?;
        let mut idx: Vec<usize> = (0..self.size).collect();
        for n in 1..windows {
            idx.extend((self.size - self.stride..self.size).map(|s| n * self.size + s));
        }
        debug_assert_eq!(idx.len(), len);
        Ok(idx)
    }

    /// Sequence position held by every `(window, slot)` entry, flattened.
    pub fn unfold_index(&self, len: usize) -> Result<Vec<usize>> {
        let windows = self.count(len)?;
        Ok((0..windows).flat_map(|n| (0..self.size).map(move |s| n * self.stride + s)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HydraConfig {
    /// Feature width of a point.
    pub d: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub window: WindowLayout,
    pub dropout: f64,
}

impl Default for HydraConfig {
    fn default() -> Self {
        HydraConfig { d: 16, heads: 4, head_dim: 8, window: WindowLayout::OVERLAPPING, dropout: 0.1 }
    }
}

impl HydraConfig {
    pub fn d_inner(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn d_state(&self) -> usize {
        self.d
    }

    /// Width of the input projection: `z | x | B | C | dt`.
    pub fn d_in_proj(&self) -> usize {
        2 * self.d_inner() + 2 * self.d_state() + self.heads
    }
}

/// Handles to one player's Hydra parameters inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HydraParams {
    pub in_w: ParamId,
    pub in_b: ParamId,
    pub a_log: ParamId,
    pub dt_bias: ParamId,
    pub d_skip: ParamId,
    pub norm_w: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub q_diag: ParamId,
    pub k_diag: ParamId,
    pub v_diag: ParamId,
    pub q_off: ParamId,
    pub k_off: ParamId,
    pub v_off: ParamId,
    pub game_w: ParamId,
    pub game_b: ParamId,
    pub set_w: ParamId,
    pub set_b: ParamId,
}

impl HydraParams {
    /// Registers freshly initialized parameters named `{prefix}.{field}`.
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, cfg: &HydraConfig, rng: &mut R) -> Self {
        let (d, h, di) = (cfg.d, cfg.heads, cfg.d_inner());
        let mut add = |name: &str, t: Tensor| store.insert(format!("{prefix}.{name}"), t);
        let in_bound = 1.0 / (d as f64).sqrt();
        let inner_bound = 1.0 / (di as f64).sqrt();
        let a_log = Tensor::vector((0..h).map(|i| ((i + 1) as f64).ln()).collect());
        // dt starts between 0.01 and 0.1; the bias is its inverse softplus.
        let dt_bias = Tensor::vector(
            (0..h)
                .map(|i| {
                    let frac = if h > 1 { i as f64 / (h - 1) as f64 } else { 0.5 };
                    let dt = (0.01f64.ln() + frac * (0.1f64.ln() - 0.01f64.ln())).exp();
                    dt.exp_m1().ln()
                })
                .collect(),
        );
        HydraParams {
            in_w: add("in_w", Tensor::uniform(&[d, cfg.d_in_proj()], in_bound, rng)),
            in_b: add("in_b", Tensor::zeros(&[cfg.d_in_proj()])),
            a_log: add("a_log", a_log),
            dt_bias: add("dt_bias", dt_bias),
            d_skip: add("d_skip", Tensor::ones(&[h])),
            norm_w: add("norm_w", Tensor::ones(&[di])),
            out_w: add("out_w", Tensor::uniform(&[di, d], inner_bound, rng)),
            out_b: add("out_b", Tensor::zeros(&[d])),
            q_diag: add("q_diag", Tensor::uniform(&[di, di], inner_bound, rng)),
            k_diag: add("k_diag", Tensor::uniform(&[di, di], inner_bound, rng)),
            v_diag: add("v_diag", Tensor::uniform(&[di, di], inner_bound, rng)),
            q_off: add("q_off", Tensor::uniform(&[di, di], inner_bound, rng)),
            k_off: add("k_off", Tensor::uniform(&[di, di], inner_bound, rng)),
            v_off: add("v_off", Tensor::uniform(&[di, di], inner_bound, rng)),
            game_w: add("game_w", Tensor::uniform(&[d, d], in_bound, rng)),
            game_b: add("game_b", Tensor::zeros(&[d])),
            set_w: add("set_w", Tensor::uniform(&[d, d], in_bound, rng)),
            set_b: add("set_b", Tensor::zeros(&[d])),
        }
    }

    pub fn all(&self) -> [ParamId; 18] {
        [
            self.in_w, self.in_b, self.a_log, self.dt_bias, self.d_skip, self.norm_w, self.out_w, self.out_b,
            self.q_diag, self.k_diag, self.v_diag, self.q_off, self.k_off, self.v_off, self.game_w, self.game_b,
            self.set_w, self.set_b,
        ]
    }
}

/// What the implicit momentum vector was last derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    MatchStart,
    CrossGame,
    CrossSet,
}

/// Kind of boundary crossed between two consecutive games.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    CrossGame,
    CrossSet,
}

/// A player's implicit momentum `[1, d]` on the tape.
#[derive(Debug, Clone, Copy)]
pub struct ImplicitMomentum {
    pub value: Var,
    pub provenance: Provenance,
}

/// Zero momentum for both players at the start of a match.
pub fn init_implicit_momentum(tape: &mut Tape, d: usize) -> [ImplicitMomentum; 2] {
    let mut make = || ImplicitMomentum { value: tape.constant(Tensor::zeros(&[1, d])), provenance: Provenance::MatchStart };
    [make(), make()]
}
