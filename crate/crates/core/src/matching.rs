//! Multi-perspective matching: the function `g` and the one-sided operator `X ⊳ X'`.
//!
//! Each position of `X` is compared with the whole of `X'` in four ways (full,
//! max-pooled, attentive, max-attentive), each through its own perspective
//! matrix. Forward and backward directions are matched separately, so every
//! output direction has `4N` components, all cosines in `[−1, 1]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::seqnet::{cos, BiSeq, NodeId, ParamId, ParamStore, Tape, Tensor};

/// `N × d` perspective matrix; row `k` masks both operands before the `k`-th cosine.
#[derive(Clone, Copy, Debug)]
pub struct PerspectiveWeights {
    pub w: ParamId,
    pub perspectives: usize,
    pub dim: usize,
}

impl PerspectiveWeights {
    pub fn new(store: &mut ParamStore, name: &str, perspectives: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if perspectives == 0 || dim == 0 {
            return Err(Error::Shape(format!("{name}: perspective matrix {perspectives}x{dim}")));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let w = store.add_uniform(name, perspectives, dim, bound, rng);
        Ok(Self { w, perspectives, dim })
    }
}

/// Part order inside each output direction.
pub const PARTS: [&str; 4] = ["full", "maxpool", "attentive", "max_attentive"];

/// Weights of one `⊳` instance: `w[0..8]` are `W_o1..W_o8`; even indices serve
/// the forward direction, odd indices the backward one.
#[derive(Clone, Copy, Debug)]
pub struct MatchOpWeights {
    pub w: [PerspectiveWeights; 8],
}

impl MatchOpWeights {
    pub fn new(store: &mut ParamStore, name: &str, perspectives: usize, dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut ws = Vec::with_capacity(8);
        for k in 0..8 {
            ws.push(PerspectiveWeights::new(store, &format!("{name}.w_o{}", k + 1), perspectives, dim, rng)?);
        }
        Ok(Self {
            w: ws.try_into().expect("eight perspective matrices"),
        })
    }

    pub fn dim(&self) -> usize {
        self.w[0].dim
    }

    pub fn perspectives(&self) -> usize {
        self.w[0].perspectives
    }

    /// Width of each output direction.
    pub fn out_dim(&self) -> usize {
        4 * self.perspectives()
    }
}

/// Plain-value `g(v1, v2; W)`: one guarded cosine per perspective row.
pub fn mp_g(v1: &[f64], v2: &[f64], w: &Tensor) -> Result<Vec<f64>> {
    if v1.len() != v2.len() || v1.len() != w.cols() {
        return Err(Error::Shape(format!(
            "mp_g: operands {} and {}, perspectives over {}",
            v1.len(),
            v2.len(),
            w.cols()
        )));
    }
    Ok((0..w.rows())
        .map(|k| {
            let wk = w.row(k);
            let a: Vec<f64> = v1.iter().zip(wk).map(|(x, m)| x * m).collect();
            let b: Vec<f64> = v2.iter().zip(wk).map(|(x, m)| x * m).collect();
            cos(&a, &b)
        })
        .collect())
}

fn lowest_argmax_rows(t: &Tensor) -> Vec<usize> {
    (0..t.rows()).map(|i| crate::seqnet::argmax(t.row(i))).collect()
}

/// One direction of `⊳`. `endpoint` is the row of `xp` used by full matching.
fn match_direction(
    tape: &mut Tape,
    x: NodeId,
    xp: NodeId,
    endpoint: usize,
    w: [&PerspectiveWeights; 4],
) -> NodeId {
    let [w_full, w_max, w_att, w_maxatt] = w.map(|p| tape.param(p.w));

    let end = tape.row(xp, endpoint);
    let full = tape.perspective(x, end, w_full);

    let maxpool = tape.perspective_max(x, xp, w_max);

    let alpha = tape.cos_matrix(x, xp);
    let weighted = tape.matmul(alpha, xp);
    let mass = tape.sum_cols(alpha);
    let mean = tape.div_rows_guarded(weighted, mass);
    let attentive = tape.perspective(x, mean, w_att);

    let best = lowest_argmax_rows(tape.value(alpha));
    let picked = tape.gather_rows(xp, best);
    let max_attentive = tape.perspective(x, picked, w_maxatt);

    tape.concat_cols(&[full, maxpool, attentive, max_attentive])
}

/// `X ⊳ X'`: one output position per position of `X`.
pub fn mp_match(tape: &mut Tape, x: &BiSeq, xp: &BiSeq, w: &MatchOpWeights) -> Result<BiSeq> {
    if xp.len == 0 {
        return Err(Error::Shape("⊳ against an empty sequence".into()));
    }
    if x.dim != w.dim() || xp.dim != w.dim() {
        return Err(Error::Shape(format!(
            "⊳ bound to dimension {}, operands have {} and {}",
            w.dim(),
            x.dim,
            xp.dim
        )));
    }
    let fwd = match_direction(tape, x.fwd, xp.fwd, xp.len - 1, [&w.w[0], &w.w[2], &w.w[4], &w.w[6]]);
    let bwd = match_direction(tape, x.bwd, xp.bwd, 0, [&w.w[1], &w.w[3], &w.w[5], &w.w[7]]);
    BiSeq::new(tape, fwd, bwd)
}

/// Splits a joint question+answer sequence into its `l_q` prefix and `l_a` suffix.
pub fn split(tape: &mut Tape, m: &BiSeq, l_q: usize, l_a: usize) -> Result<(BiSeq, BiSeq)> {
    if l_q == 0 || l_a == 0 || l_q + l_a != m.len {
        return Err(Error::Shape(format!(
            "split {l_q}+{l_a} of a sequence with length {}",
            m.len
        )));
    }
    Ok((m.slice(tape, 0, l_q)?, m.slice(tape, l_q, l_a)?))
}
