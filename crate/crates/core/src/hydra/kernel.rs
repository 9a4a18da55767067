use rand::Rng;

use super::{HydraConfig, HydraParams, ImplicitMomentum, Provenance, Transition, WindowLayout};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tape, Tensor, Var};

const RMS_EPS: f64 = 1e-6;

/// Stacks the implicit momentum `[1, d]` on top of the game's points `[L, d]`.
pub fn build_game_input(tape: &mut Tape, m_i: Var, points: Var) -> Result<Var> {
    let (ps, ms) = (tape.shape(points).to_vec(), tape.shape(m_i).to_vec());
    if ps.len() != 2 || ps[0] == 0 {
        return Err(Error::Shape(format!("a game needs at least one point, got shape {ps:?}")));
    }
    if ms != [1, ps[1]] {
        return Err(Error::Shape(format!("implicit momentum {ms:?} does not match points {ps:?}")));
    }
    tape.concat(&[m_i, points], 0)
}

/// Outputs of the input projection for a `[T, d]` game input.
#[derive(Debug, Clone, Copy)]
pub struct CoreParameters {
    /// `[T, D_inner]`.
    pub z: Var,
    /// `[T, H, P]`.
    pub x: Var,
    /// `[T, D_state]`, shared by every head.
    pub b: Var,
    pub c: Var,
    /// `[T, H]`.
    pub dt: Var,
}

pub fn project_core_parameters(
    tape: &mut Tape,
    store: &ParamStore,
    p: &HydraParams,
    cfg: &HydraConfig,
    g: Var,
) -> Result<CoreParameters> {
    let (di, n, h) = (cfg.d_inner(), cfg.d_state(), cfg.heads);
    let w = tape.param(store, p.in_w);
    let bias = tape.param(store, p.in_b);
    let proj = tape.matmul(g, w)?;
    let proj = tape.add(proj, bias)?;
    let t = tape.shape(proj)[0];
    let z = tape.slice(proj, 1, 0, di)?;
    let x = tape.slice(proj, 1, di, di)?;
    let x = tape.reshape(x, &[t, h, cfg.head_dim])?;
    let b = tape.slice(proj, 1, 2 * di, n)?;
    let c = tape.slice(proj, 1, 2 * di + n, n)?;
    let dt = tape.slice(proj, 1, 2 * di + 2 * n, h)?;
    Ok(CoreParameters { z, x, b, c, dt })
}

/// `A = -exp(A_log) * softplus(dt + dt_bias)`, strictly negative.
pub fn compute_decay_a(tape: &mut Tape, store: &ParamStore, p: &HydraParams, dt: Var) -> Result<Var> {
    let a_log = tape.param(store, p.a_log);
    let bias = tape.param(store, p.dt_bias);
    let rate = tape.exp(a_log);
    let shifted = tape.add(dt, bias)?;
    let sp = tape.softplus(shifted);
    let prod = tape.mul(sp, rate)?;
    Ok(tape.neg(prod))
}

/// Sequence tensors regrouped into windows.
#[derive(Debug, Clone, Copy)]
pub struct WindowedTensors {
    /// `[W, S, H, P]`.
    pub x: Var,
    /// `[H, W, S]`.
    pub a: Var,
    /// `[W, S, N]`.
    pub b: Var,
    pub c: Var,
    pub windows: usize,
    pub layout: WindowLayout,
}

pub fn unfold_windows(tape: &mut Tape, x: Var, a: Var, b: Var, c: Var, layout: WindowLayout) -> Result<WindowedTensors> {
    let xs = tape.shape(x).to_vec();
    if xs.len() != 3 {
        return Err(Error::Shape(format!("x must be [T, H, P], got {xs:?}")));
    }
    let (t, h, p) = (xs[0], xs[1], xs[2]);
    let n = tape.shape(b)[1];
    let idx = layout.unfold_index(t)?;
    let w = layout.count(t)?;
    let s = layout.size;

    let x2 = tape.reshape(x, &[t, h * p])?;
    let xw = tape.gather_rows(x2, &idx)?;
    let xw = tape.reshape(xw, &[w, s, h, p])?;
    let aw = tape.gather_rows(a, &idx)?;
    let aw = tape.reshape(aw, &[w, s, h])?;
    let aw = tape.permute(aw, &[2, 0, 1])?;
    let bw = tape.gather_rows(b, &idx)?;
    let bw = tape.reshape(bw, &[w, s, n])?;
    let cw = tape.gather_rows(c, &idx)?;
    let cw = tape.reshape(cw, &[w, s, n])?;
    Ok(WindowedTensors { x: xw, a: aw, b: bw, c: cw, windows: w, layout })
}

/// Broadcasts a `[W, S, N]` tensor over heads and flattens to `[W*H, S, N]`.
fn per_head(tape: &mut Tape, v: Var, heads: usize) -> Result<Var> {
    let s = tape.shape(v).to_vec();
    let v4 = tape.reshape(v, &[s[0], 1, s[1], s[2]])?;
    let ones = tape.constant(Tensor::ones(&[1, heads, 1, 1]));
    let rep = tape.mul(v4, ones)?;
    tape.reshape(rep, &[s[0] * heads, s[1], s[2]])
}

/// Intra-window output `Y_diag`, `[W, S, H, P]`.
pub fn intra_window_output(tape: &mut Tape, w: &WindowedTensors) -> Result<Var> {
    let xs = tape.shape(w.x).to_vec();
    let (nw, s, h, p) = (xs[0], xs[1], xs[2], xs[3]);
    let bt = tape.permute(w.b, &[0, 2, 1])?;
    let cb = tape.bmm(w.c, bt)?;
    let l = tape.segsum_exp(w.a)?;
    let m = tape.mul(l, cb)?;
    let m = tape.permute(m, &[1, 0, 2, 3])?;
    let m = tape.reshape(m, &[nw * h, s, s])?;
    let xh = tape.permute(w.x, &[0, 2, 1, 3])?;
    let xh = tape.reshape(xh, &[nw * h, s, p])?;
    let y = tape.bmm(m, xh)?;
    let y = tape.reshape(y, &[nw, h, s, p])?;
    tape.permute(y, &[0, 2, 1, 3])
}

/// Cumulative decay `[H, W, S]` and end-of-window states `[W, H, P, N]`.
pub fn window_states(tape: &mut Tape, w: &WindowedTensors) -> Result<(Var, Var)> {
    let xs = tape.shape(w.x).to_vec();
    let (nw, s, h, p) = (xs[0], xs[1], xs[2], xs[3]);
    let n = tape.shape(w.b)[2];
    let cum = tape.cumsum(w.a, 2)?;
    let last = tape.slice(cum, 2, s - 1, 1)?;
    let diff = tape.sub(last, cum)?;
    let e = tape.exp(diff);
    let e = tape.permute(e, &[1, 0, 2])?;
    let e = tape.reshape(e, &[nw, h, s, 1])?;
    let xh = tape.permute(w.x, &[0, 2, 1, 3])?;
    let xe = tape.mul(xh, e)?;
    let xe = tape.permute(xe, &[0, 1, 3, 2])?;
    let xe = tape.reshape(xe, &[nw * h, p, s])?;
    let bh = per_head(tape, w.b, h)?;
    let states = tape.bmm(xe, bh)?;
    let states = tape.reshape(states, &[nw, h, p, n])?;
    Ok((cum, states))
}

/// State entering each window, `[W, H, P, N]`, starting from zero.
pub fn inter_window_states(tape: &mut Tape, a_cumsum: Var, states: Var) -> Result<Var> {
    let cs = tape.shape(a_cumsum).to_vec();
    let ss = tape.shape(states).to_vec();
    let (h, nw, s) = (cs[0], cs[1], cs[2]);
    let (p, n) = (ss[2], ss[3]);
    let last = tape.slice(a_cumsum, 2, s - 1, 1)?;
    let last = tape.reshape(last, &[h, nw])?;
    let zero_col = tape.constant(Tensor::zeros(&[h, 1]));
    let padded = tape.concat(&[zero_col, last], 1)?;
    let f = tape.segsum_exp(padded)?;
    let zero_state = tape.constant(Tensor::zeros(&[1, h, p, n]));
    let aug = tape.concat(&[zero_state, states], 0)?;
    let aug = tape.permute(aug, &[1, 0, 2, 3])?;
    let aug = tape.reshape(aug, &[h, nw + 1, p * n])?;
    let prop = tape.bmm(f, aug)?;
    let carried = tape.slice(prop, 1, 0, nw)?;
    let carried = tape.reshape(carried, &[h, nw, p, n])?;
    tape.permute(carried, &[1, 0, 2, 3])
}

/// Contribution of carried state, `[W, S, H, P]`.
pub fn off_diagonal_output(tape: &mut Tape, c: Var, carried: Var, a_cumsum: Var) -> Result<Var> {
    let ks = tape.shape(carried).to_vec();
    let (nw, h, p, n) = (ks[0], ks[1], ks[2], ks[3]);
    let s = tape.shape(c)[1];
    let ch = per_head(tape, c, h)?;
    let kt = tape.permute(carried, &[0, 1, 3, 2])?;
    let kt = tape.reshape(kt, &[nw * h, n, p])?;
    let y = tape.bmm(ch, kt)?;
    let y = tape.reshape(y, &[nw, h, s, p])?;
    let decay = tape.exp(a_cumsum);
    let decay = tape.permute(decay, &[1, 0, 2])?;
    let decay = tape.reshape(decay, &[nw, h, s, 1])?;
    let y = tape.mul(y, decay)?;
    tape.permute(y, &[0, 2, 1, 3])
}

/// How the intra-window and carried streams are combined.
#[derive(Debug, Clone, Copy)]
pub enum Fusion<'a> {
    /// Causally masked bidirectional cross attention with learned projections.
    CrossAttention { store: &'a ParamStore, params: &'a HydraParams },
    /// Plain sum, used to check the kernel against a sequential scan.
    Sum,
}

fn causal_mask(t: usize) -> Vec<bool> {
    (0..t * t).map(|k| k % t <= k / t).collect()
}

/// `softmax(Q_diag K_offᵀ/√D) V_off + softmax(Q_off K_diagᵀ/√D) V_diag` over
/// sequence positions, causally masked. Inputs and output are `[T, D_inner]`.
pub fn fuse_cross_attention(
    tape: &mut Tape,
    store: &ParamStore,
    p: &HydraParams,
    y_diag: Var,
    y_off: Var,
) -> Result<Var> {
    let t = tape.shape(y_diag)[0];
    let scale = 1.0 / (tape.shape(y_diag)[1] as f64).sqrt();
    let mask = causal_mask(t);
    let proj = |tape: &mut Tape, v: Var, id| -> Result<Var> {
        let w = tape.param(store, id);
        tape.matmul(v, w)
    };
    let q_d = proj(tape, y_diag, p.q_diag)?;
    let k_d = proj(tape, y_diag, p.k_diag)?;
    let v_d = proj(tape, y_diag, p.v_diag)?;
    let q_o = proj(tape, y_off, p.q_off)?;
    let k_o = proj(tape, y_off, p.k_off)?;
    let v_o = proj(tape, y_off, p.v_off)?;
    let attend = |tape: &mut Tape, q: Var, k: Var, v: Var| -> Result<Var> {
        let kt = tape.transpose(k)?;
        let scores = tape.matmul(q, kt)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_masked(scores, Some(&mask))?;
        tape.matmul(weights, v)
    };
    let a = attend(tape, q_d, k_o, v_o)?;
    let b = attend(tape, q_o, k_d, v_d)?;
    tape.add(a, b)
}

/// Windowed kernel from projected sequence tensors to `[T, H, P]`.
///
/// `x` is `[T, H, P]`, `a` is `[T, H]`, `b` and `c` are `[T, N]`.
pub fn mssd_kernel(
    tape: &mut Tape,
    x: Var,
    a: Var,
    b: Var,
    c: Var,
    layout: WindowLayout,
    fusion: Fusion<'_>,
) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let (t, h, p) = (xs[0], xs[1], xs[2]);
    let w = unfold_windows(tape, x, a, b, c, layout)?;
    let y_diag = intra_window_output(tape, &w)?;
    let (cum, states) = window_states(tape, &w)?;
    let carried = inter_window_states(tape, cum, states)?;
    let y_off = off_diagonal_output(tape, w.c, carried, cum)?;

    let fold = layout.fold_index(t)?;
    let to_seq = |tape: &mut Tape, y: Var| -> Result<Var> {
        let flat = tape.reshape(y, &[w.windows * layout.size, h * p])?;
        tape.gather_rows(flat, &fold)
    };
    let diag_seq = to_seq(tape, y_diag)?;
    let off_seq = to_seq(tape, y_off)?;
    let y = match fusion {
        Fusion::Sum => tape.add(diag_seq, off_seq)?,
        Fusion::CrossAttention { store, params } => fuse_cross_attention(tape, store, params, diag_seq, off_seq)?,
    };
    tape.reshape(y, &[t, h, p])
}

/// Residual, gated RMS normalization and output projection: `[T, H, P]` to `[T, d]`.
pub fn finalize_output(
    tape: &mut Tape,
    store: &ParamStore,
    p: &HydraParams,
    y: Var,
    x: Var,
    z: Var,
) -> Result<Var> {
    let ys = tape.shape(y).to_vec();
    let (t, h, hd) = (ys[0], ys[1], ys[2]);
    let d_skip = tape.param(store, p.d_skip);
    let d_skip = tape.reshape(d_skip, &[h, 1])?;
    let skip = tape.mul(x, d_skip)?;
    let y1 = tape.add(y, skip)?;
    let y2 = tape.reshape(y1, &[t, h * hd])?;
    let gate = tape.silu(z);
    let gated = tape.mul(y2, gate)?;
    let sq = tape.mul(y2, y2)?;
    let ms = tape.mean_axis(sq, 1)?;
    let ms = tape.add_scalar(ms, RMS_EPS);
    let rms = tape.sqrt(ms)?;
    let rms = tape.reshape(rms, &[t, 1])?;
    let normed = tape.div(gated, rms)?;
    let w = tape.param(store, p.norm_w);
    let y3 = tape.mul(normed, w)?;
    let out_w = tape.param(store, p.out_w);
    let out_b = tape.param(store, p.out_b);
    let out = tape.matmul(y3, out_w)?;
    tape.add(out, out_b)
}

/// Result of running one game through the kernel.
#[derive(Debug, Clone, Copy)]
pub struct GameOutput {
    /// `[1 + L, d]`, row 0 aligned with the implicit momentum.
    pub full: Var,
    /// `[L, d]`, one row per point.
    pub points: Var,
    /// `[1, d]`, the final row.
    pub last: Var,
}

/// One game for one player. `points` is `[L, d]` and `m_i` is `[1, d]`.
/// Dropout on the fused output is applied when `rng` is given.
pub fn forward_game<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    params: &HydraParams,
    cfg: &HydraConfig,
    points: Var,
    m_i: Var,
    rng: Option<&mut R>,
) -> Result<GameOutput> {
    let g = build_game_input(tape, m_i, points)?;
    let core = project_core_parameters(tape, store, params, cfg, g)?;
    let a = compute_decay_a(tape, store, params, core.dt)?;
    let fusion = Fusion::CrossAttention { store, params };
    let mut y = mssd_kernel(tape, core.x, a, core.b, core.c, cfg.window, fusion)?;
    if let Some(rng) = rng {
        y = tape.dropout(y, cfg.dropout, rng)?;
    }
    let full = finalize_output(tape, store, params, y, core.x, core.z)?;
    let t = tape.shape(full)[0];
    let pts = tape.slice(full, 0, 1, t - 1)?;
    let last = tape.slice(full, 0, t - 1, 1)?;
    Ok(GameOutput { full, points: pts, last })
}

/// `M_i = Ŷ_last W + b` with the game or set matrices.
pub fn update_implicit_momentum(
    tape: &mut Tape,
    store: &ParamStore,
    params: &HydraParams,
    last: Var,
    transition: Transition,
) -> Result<ImplicitMomentum> {
    let (w, b, provenance) = match transition {
        Transition::CrossGame => (params.game_w, params.game_b, Provenance::CrossGame),
        Transition::CrossSet => (params.set_w, params.set_b, Provenance::CrossSet),
    };
    let w = tape.param(store, w);
    let b = tape.param(store, b);
    let m = tape.matmul(last, w)?;
    Ok(ImplicitMomentum { value: tape.add(m, b)?, provenance })
}
