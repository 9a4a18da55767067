//! Interplay between the two players: a hinge on the cosine similarity of
//! their momentum vectors, and attention from each player's modality
//! embeddings over both players' embeddings.

use rand::Rng;

use crate::data::Modality;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Floor applied to row norms before normalizing.
pub const NORM_FLOOR: f64 = 1e-12;

/// `mean_rows max(0, m + cos(y1, y2))` for `[B, d]` inputs.
pub fn versus_loss(tape: &mut Tape, y1: Var, y2: Var, margin: f64) -> Result<Var> {
    if tape.shape(y1) != tape.shape(y2) || tape.shape(y1).len() != 2 {
        return Err(Error::Shape(format!("versus loss on {:?} and {:?}", tape.shape(y1), tape.shape(y2))));
    }
    let n1 = row_normalize(tape, y1)?;
    let n2 = row_normalize(tape, y2)?;
    let prod = tape.mul(n1, n2)?;
    let cos = tape.sum_axis(prod, 1)?;
    let shifted = tape.add_scalar(cos, margin);
    let hinge = tape.relu(shifted);
    Ok(tape.mean(hinge))
}

fn row_normalize(tape: &mut Tape, y: Var) -> Result<Var> {
    let rows = tape.shape(y)[0];
    let sq = tape.mul(y, y)?;
    let ss = tape.sum_axis(sq, 1)?;
    let ss = tape.clamp(ss, NORM_FLOOR * NORM_FLOOR, f64::INFINITY);
    let norm = tape.sqrt(ss)?;
    let norm = tape.reshape(norm, &[rows, 1])?;
    tape.div(y, norm)
}

/// Slices `[L, 16]` rows into serve, return, psychology and fatigue groups.
pub fn split_modality_groups(tape: &mut Tape, y: Var) -> Result<[Var; 4]> {
    let shape = tape.shape(y).to_vec();
    let width = Modality::Fatigue.range().end;
    if shape.len() != 2 || shape[1] != width {
        return Err(Error::Shape(format!("modality split needs [L, {width}], got {shape:?}")));
    }
    let mut out = Vec::with_capacity(4);
    for m in Modality::ALL {
        let r = m.range();
        out.push(tape.slice(y, 1, r.start, r.len())?);
    }
    Ok([out[0], out[1], out[2], out[3]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub margin: f64,
    pub dropout: f64,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        InteractionConfig { embed_dim: 32, heads: 8, margin: 0.5, dropout: 0.1 }
    }
}

/// Two-layer perceptron per modality for one player role.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedParams {
    pub w1: [ParamId; 4],
    pub b1: [ParamId; 4],
    pub w2: [ParamId; 4],
    pub b2: [ParamId; 4],
}

impl EmbedParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, embed_dim: usize, rng: &mut R) -> Self {
        let mut ids = [[None; 4]; 4];
        for (k, m) in Modality::ALL.into_iter().enumerate() {
            let w = m.width();
            let name = m.name();
            ids[0][k] = Some(store.insert(
                format!("{prefix}.{name}.w1"),
                Tensor::uniform(&[w, embed_dim], 1.0 / (w as f64).sqrt(), rng),
            ));
            ids[1][k] = Some(store.insert(format!("{prefix}.{name}.b1"), Tensor::zeros(&[embed_dim])));
            ids[2][k] = Some(store.insert(
                format!("{prefix}.{name}.w2"),
                Tensor::uniform(&[embed_dim, embed_dim], 1.0 / (embed_dim as f64).sqrt(), rng),
            ));
            ids[3][k] = Some(store.insert(format!("{prefix}.{name}.b2"), Tensor::zeros(&[embed_dim])));
        }
        let take = |row: [Option<ParamId>; 4]| row.map(|v| v.expect("initialized"));
        EmbedParams { w1: take(ids[0]), b1: take(ids[1]), w2: take(ids[2]), b2: take(ids[3]) }
    }
}

/// Embeds each modality group, returning `[L, 4, D_e]`. Dropout after the
/// hidden layer is applied when `rng` is given.
pub fn embed_modalities<R: Rng + ?Sized>(
    tape: &mut Tape,
    store: &ParamStore,
    params: &EmbedParams,
    groups: [Var; 4],
    dropout: f64,
    mut rng: Option<&mut R>,
) -> Result<Var> {
    let mut parts = Vec::with_capacity(4);
    for (k, g) in groups.into_iter().enumerate() {
        let w1 = tape.param(store, params.w1[k]);
        let b1 = tape.param(store, params.b1[k]);
        let w2 = tape.param(store, params.w2[k]);
        let b2 = tape.param(store, params.b2[k]);
        let h = tape.matmul(g, w1)?;
        let h = tape.add(h, b1)?;
        let mut h = tape.silu(h);
        if let Some(rng) = rng.as_deref_mut() {
            h = tape.dropout(h, dropout, rng)?;
        }
        let o = tape.matmul(h, w2)?;
        let o = tape.add(o, b2)?;
        let shape = tape.shape(o).to_vec();
        parts.push(tape.reshape(o, &[shape[0], 1, shape[1]])?);
    }
    tape.concat(&parts, 1)
}

/// Attention weights shared by both players plus the map to width `d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CaamParams {
    pub q: ParamId,
    pub k: ParamId,
    pub v: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

impl CaamParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, embed_dim: usize, d: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (embed_dim as f64).sqrt();
        CaamParams {
            q: store.insert(format!("{prefix}.q"), Tensor::uniform(&[embed_dim, embed_dim], bound, rng)),
            k: store.insert(format!("{prefix}.k"), Tensor::uniform(&[embed_dim, embed_dim], bound, rng)),
            v: store.insert(format!("{prefix}.v"), Tensor::uniform(&[embed_dim, embed_dim], bound, rng)),
            out_w: store.insert(format!("{prefix}.out_w"), Tensor::uniform(&[embed_dim, d], bound, rng)),
            out_b: store.insert(format!("{prefix}.out_b"), Tensor::zeros(&[d])),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CaamOutput {
    /// `[L, d]` per player.
    pub z1: Var,
    pub z2: Var,
    /// `[L, heads, 4, 8]` attention weights of each player's queries.
    pub weights1: Var,
    pub weights2: Var,
}

/// Each player's four modality embeddings attend over all eight embeddings
/// of both players; outputs are summed over modalities and mapped to width
/// `d`. `f1` and `f2` are `[L, 4, D_e]`.
pub fn caam_attention(
    tape: &mut Tape,
    store: &ParamStore,
    params: &CaamParams,
    heads: usize,
    f1: Var,
    f2: Var,
) -> Result<CaamOutput> {
    let shape = tape.shape(f1).to_vec();
    if shape.len() != 3 || shape[1] != 4 || tape.shape(f2) != shape.as_slice() {
        return Err(Error::Shape(format!("CAAM inputs {:?} and {:?}", shape, tape.shape(f2))));
    }
    let (l, de) = (shape[0], shape[2]);
    if heads == 0 || de % heads != 0 {
        return Err(Error::Config(format!("{heads} heads do not divide embedding width {de}")));
    }
    let dh = de / heads;
    let wq = tape.param(store, params.q);
    let wk = tape.param(store, params.k);
    let wv = tape.param(store, params.v);
    let out_w = tape.param(store, params.out_w);
    let out_b = tape.param(store, params.out_b);

    let project = |tape: &mut Tape, f: Var, w: Var, rows: usize| -> Result<Var> {
        let flat = tape.reshape(f, &[l * rows, de])?;
        let p = tape.matmul(flat, w)?;
        let p = tape.reshape(p, &[l, rows, heads, dh])?;
        let p = tape.permute(p, &[0, 2, 1, 3])?;
        tape.reshape(p, &[l * heads, rows, dh])
    };
    let scale = 1.0 / (dh as f64).sqrt();
    let attend = |tape: &mut Tape, own: Var, other: Var| -> Result<(Var, Var)> {
        let union = tape.concat(&[own, other], 1)?;
        let q = project(tape, own, wq, 4)?;
        let k = project(tape, union, wk, 8)?;
        let v = project(tape, union, wv, 8)?;
        let kt = tape.permute(k, &[0, 2, 1])?;
        let scores = tape.bmm(q, kt)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_masked(scores, None)?;
        let o = tape.bmm(weights, v)?;
        let o = tape.reshape(o, &[l, heads, 4, dh])?;
        let o = tape.permute(o, &[0, 2, 1, 3])?;
        let o = tape.reshape(o, &[l, 4, de])?;
        let summed = tape.sum_axis(o, 1)?;
        let z = tape.matmul(summed, out_w)?;
        let z = tape.add(z, out_b)?;
        let weights = tape.reshape(weights, &[l, heads, 4, 8])?;
        Ok((z, weights))
    };
    let (z1, weights1) = attend(tape, f1, f2)?;
    let (z2, weights2) = attend(tape, f2, f1)?;
    Ok(CaamOutput { z1, z2, weights1, weights2 })
}
