//! Loop-by-loop evaluation of one game, written independently of the tape
//! kernel and used to check it.

#![allow(clippy::needless_range_loop)]

use super::{HydraConfig, HydraParams};
use crate::error::{Error, Result};
use crate::tensor::{softplus, ParamStore, Tensor};

fn get(store: &ParamStore, id: crate::tensor::ParamId) -> &[f64] {
    store.value(id).data()
}

/// `[rows, k] x [k, cols]` with explicit loops.
fn matmul_rows(a: &[Vec<f64>], w: &[f64], cols: usize) -> Vec<Vec<f64>> {
    a.iter()
        .map(|row| {
            (0..cols).map(|j| row.iter().enumerate().map(|(k, v)| v * w[k * cols + j]).sum()).collect()
        })
        .collect()
}

fn silu(v: f64) -> f64 {
    v / (1.0 + (-v).exp())
}

/// Evaluates the overlapping-window model on `points` (`L` rows of width d)
/// starting from implicit momentum `m_i`, without dropout. Returns the
/// `[1 + L, d]` output.
pub fn naive_mssd_reference(
    store: &ParamStore,
    p: &HydraParams,
    cfg: &HydraConfig,
    points: &[Vec<f64>],
    m_i: &[f64],
) -> Result<Tensor> {
    if points.is_empty() {
        return Err(Error::Shape("a game needs at least one point".into()));
    }
    let (d, h, hp, n) = (cfg.d, cfg.heads, cfg.head_dim, cfg.d_state());
    let di = h * hp;
    let d_in = cfg.d_in_proj();

    // Input rows: implicit momentum then the points.
    let mut g = vec![m_i.to_vec()];
    g.extend(points.iter().cloned());
    let t_len = g.len();

    let in_w = get(store, p.in_w);
    let in_b = get(store, p.in_b);
    let mut proj = matmul_rows(&g, in_w, d_in);
    for row in proj.iter_mut() {
        for (v, b) in row.iter_mut().zip(in_b) {
            *v += b;
        }
    }
    let z: Vec<Vec<f64>> = proj.iter().map(|r| r[..di].to_vec()).collect();
    let x: Vec<Vec<f64>> = proj.iter().map(|r| r[di..2 * di].to_vec()).collect();
    let bm: Vec<Vec<f64>> = proj.iter().map(|r| r[2 * di..2 * di + n].to_vec()).collect();
    let cm: Vec<Vec<f64>> = proj.iter().map(|r| r[2 * di + n..2 * di + 2 * n].to_vec()).collect();
    let a_log = get(store, p.a_log);
    let dt_bias = get(store, p.dt_bias);
    let a: Vec<Vec<f64>> = proj
        .iter()
        .map(|r| (0..h).map(|k| -a_log[k].exp() * softplus(r[2 * di + 2 * n + k] + dt_bias[k])).collect())
        .collect();

    // Window w holds positions w and w + 1.
    let nw = t_len - 1;
    let xv = |t: usize, head: usize, q: usize| x[t][head * hp + q];
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();

    let mut y_diag = vec![vec![vec![0.0; di]; 2]; nw];
    let mut y_off = vec![vec![vec![0.0; di]; 2]; nw];
    // states[w][head][q][k]
    let mut states = vec![vec![vec![vec![0.0; n]; hp]; h]; nw];
    let mut cum = vec![vec![[0.0f64; 2]; nw]; h];
    for w in 0..nw {
        let pos = [w, w + 1];
        for head in 0..h {
            let aw = [a[pos[0]][head], a[pos[1]][head]];
            cum[head][w] = [aw[0], aw[0] + aw[1]];
            for s in 0..2 {
                for t in 0..=s {
                    let decay: f64 = (t + 1..=s).map(|k| aw[k]).sum::<f64>().exp();
                    let cb = dot(&cm[pos[s]], &bm[pos[t]]);
                    for q in 0..hp {
                        y_diag[w][s][head * hp + q] += cb * decay * xv(pos[t], head, q);
                    }
                }
            }
            for s in 0..2 {
                let e = (cum[head][w][1] - cum[head][w][s]).exp();
                for q in 0..hp {
                    for k in 0..n {
                        states[w][head][q][k] += bm[pos[s]][k] * e * xv(pos[s], head, q);
                    }
                }
            }
        }
    }

    // Decay chunk over window totals padded with a leading zero.
    for head in 0..h {
        let mut padded = vec![0.0];
        padded.extend((0..nw).map(|w| cum[head][w][1]));
        for zi in 0..nw {
            let mut carried = vec![vec![0.0; n]; hp];
            for c in 1..=zi {
                let f: f64 = (c + 1..=zi).map(|k| padded[k]).sum::<f64>().exp();
                for q in 0..hp {
                    for k in 0..n {
                        carried[q][k] += f * states[c - 1][head][q][k];
                    }
                }
            }
            for s in 0..2 {
                let decay = cum[head][zi][s].exp();
                for q in 0..hp {
                    y_off[zi][s][head * hp + q] = decay * dot(&cm[zi + s], &carried[q]);
                }
            }
        }
    }

    let fold = |y: &Vec<Vec<Vec<f64>>>| -> Vec<Vec<f64>> {
        let mut seq = vec![y[0][0].clone()];
        seq.extend((0..nw).map(|w| y[w][1].clone()));
        seq
    };
    let yd = fold(&y_diag);
    let yo = fold(&y_off);

    let q_d = matmul_rows(&yd, get(store, p.q_diag), di);
    let k_d = matmul_rows(&yd, get(store, p.k_diag), di);
    let v_d = matmul_rows(&yd, get(store, p.v_diag), di);
    let q_o = matmul_rows(&yo, get(store, p.q_off), di);
    let k_o = matmul_rows(&yo, get(store, p.k_off), di);
    let v_o = matmul_rows(&yo, get(store, p.v_off), di);
    let scale = 1.0 / (di as f64).sqrt();
    let attend = |q: &Vec<Vec<f64>>, k: &Vec<Vec<f64>>, v: &Vec<Vec<f64>>, i: usize| -> Vec<f64> {
        let scores: Vec<f64> = (0..=i).map(|j| dot(&q[i], &k[j]) * scale).collect();
        let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let total: f64 = e.iter().sum();
        let mut out = vec![0.0; di];
        for (j, ej) in e.iter().enumerate() {
            for c in 0..di {
                out[c] += ej / total * v[j][c];
            }
        }
        out
    };

    let d_skip = get(store, p.d_skip);
    let norm_w = get(store, p.norm_w);
    let mut y3 = Vec::with_capacity(t_len);
    for i in 0..t_len {
        let a1 = attend(&q_d, &k_o, &v_o, i);
        let a2 = attend(&q_o, &k_d, &v_d, i);
        let y2: Vec<f64> = (0..di).map(|c| a1[c] + a2[c] + x[i][c] * d_skip[c / hp]).collect();
        let rms = (y2.iter().map(|v| v * v).sum::<f64>() / di as f64 + 1e-6).sqrt();
        y3.push((0..di).map(|c| y2[c] * silu(z[i][c]) / rms * norm_w[c]).collect::<Vec<f64>>());
    }
    let out_b = get(store, p.out_b);
    let mut out = matmul_rows(&y3, get(store, p.out_w), d);
    for row in out.iter_mut() {
        for (v, b) in row.iter_mut().zip(out_b) {
            *v += b;
        }
    }
    Tensor::from_rows(&out)
}

/// Sequential scan `h_t = exp(a_t) h_{t-1} + B_t x_t`, `y_t = C_t · h_t`
/// for a single head: `x` is `[T][P]`, `a` is `[T]`, `b` and `c` are `[T][N]`.
pub fn sequential_scan(x: &[Vec<f64>], a: &[f64], b: &[Vec<f64>], c: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let (p, n) = (x[0].len(), b[0].len());
    let mut state = vec![vec![0.0; n]; p];
    let mut out = Vec::with_capacity(x.len());
    for t in 0..x.len() {
        let decay = a[t].exp();
        for q in 0..p {
            for k in 0..n {
                state[q][k] = decay * state[q][k] + b[t][k] * x[t][q];
            }
        }
        out.push((0..p).map(|q| (0..n).map(|k| c[t][k] * state[q][k]).sum()).collect());
    }
    out
}
