use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn shape_err(what: impl Into<String>) -> Error {
    Error::Shape(what.into())
}

/// Dense layer `y = x Wᵀ (+ b)`.
#[derive(Clone, Copy, Debug)]
pub struct LinearParams {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl LinearParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input == 0 || output == 0 {
            return Err(shape_err(format!("{name}: zero-sized linear {input}->{output}")));
        }
        let bound = 1.0 / (input as f64).sqrt();
        let w = store.add_uniform(format!("{name}.w"), output, input, bound, rng);
        let b = bias.then(|| store.add_zeros(format!("{name}.b"), 1, output));
        Ok(Self {
            w,
            b,
            input,
            output,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let cols = tape.shape(x).1;
        if cols != self.input {
            return Err(shape_err(format!(
                "linear expects input width {}, got {cols}",
                self.input
            )));
        }
        let w = tape.param(self.w);
        let b = self.b.map(|b| tape.param(b));
        Ok(tape.affine(x, w, b))
    }
}

/// One direction of an LSTM. Gates are packed `[input, forget, candidate, output]`.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmParams {
    /// Weights uniform in `±1/sqrt(fan_in)`, forget bias 1, other biases 0.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(shape_err(format!("{name}: zero-sized lstm {input}->{hidden}")));
        }
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        let w_x = store.add_uniform(format!("{name}.w_x"), 4 * hidden, input, bound, rng);
        let w_h = store.add_uniform(format!("{name}.w_h"), 4 * hidden, hidden, bound, rng);
        let mut bias = Tensor::zeros(1, 4 * hidden);
        for k in hidden..2 * hidden {
            bias.data_mut()[k] = 1.0;
        }
        let b = store.add(format!("{name}.b"), bias, false);
        Ok(Self {
            w_x,
            w_h,
            b,
            input,
            hidden,
        })
    }

    fn check_input(&self, tape: &Tape, x: NodeId) -> Result<()> {
        let cols = tape.shape(x).1;
        if cols != self.input {
            return Err(shape_err(format!(
                "lstm expects input width {}, got {cols}",
                self.input
            )));
        }
        Ok(())
    }
}

/// One LSTM step. `state` is `(h, c)`; `None` means the zero state.
/// `x` may hold several rows, each advanced independently.
pub fn lstm_cell(
    tape: &mut Tape,
    x: NodeId,
    state: Option<(NodeId, NodeId)>,
    p: &LstmParams,
) -> Result<(NodeId, NodeId)> {
    p.check_input(tape, x)?;
    let w_x = tape.param(p.w_x);
    let b = tape.param(p.b);
    let pre_x = tape.affine(x, w_x, Some(b));
    Ok(lstm_step(tape, pre_x, state, p))
}

fn lstm_step(
    tape: &mut Tape,
    pre_x: NodeId,
    state: Option<(NodeId, NodeId)>,
    p: &LstmParams,
) -> (NodeId, NodeId) {
    let (pre, c_prev) = match state {
        Some((h, c)) => {
            let w_h = tape.param(p.w_h);
            let rec = tape.matmul_nt(h, w_h);
            (tape.add(pre_x, rec), Some(c))
        }
        None => (pre_x, None),
    };
    let c = tape.lstm_cell_state(pre, c_prev);
    let h = tape.lstm_hidden(pre, c);
    (h, c)
}

/// Runs one LSTM direction over the rows of `xs` from the zero state.
/// Returns the hidden states as an `L × hidden` node in input order.
pub fn lstm_sequence(tape: &mut Tape, xs: NodeId, p: &LstmParams, reverse: bool) -> Result<NodeId> {
    p.check_input(tape, xs)?;
    let len = tape.shape(xs).0;
    if len == 0 {
        return Err(shape_err("lstm over empty sequence"));
    }
    let w_x = tape.param(p.w_x);
    let b = tape.param(p.b);
    let pre_all = tape.affine(xs, w_x, Some(b));
    let mut hs = vec![None; len];
    let mut state = None;
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    };
    for t in order {
        let pre_x = tape.row(pre_all, t);
        let (h, c) = lstm_step(tape, pre_x, state, p);
        hs[t] = Some(h);
        state = Some((h, c));
    }
    let hs: Vec<NodeId> = hs.into_iter().map(Option::unwrap).collect();
    Ok(tape.stack_rows(&hs))
}

/// Final hidden state of a left-to-right LSTM over `xs`.
pub fn lstm_last(tape: &mut Tape, xs: NodeId, p: &LstmParams) -> Result<NodeId> {
    p.check_input(tape, xs)?;
    let len = tape.shape(xs).0;
    if len == 0 {
        return Err(shape_err("lstm over empty sequence"));
    }
    let w_x = tape.param(p.w_x);
    let b = tape.param(p.b);
    let pre_all = tape.affine(xs, w_x, Some(b));
    let mut state = None;
    for t in 0..len {
        let pre_x = tape.row(pre_all, t);
        state = Some(lstm_step(tape, pre_x, state, p));
    }
    Ok(state.unwrap().0)
}

/// Paired forward/backward activations, one row per position.
#[derive(Clone, Copy, Debug)]
pub struct BiSeq {
    pub fwd: NodeId,
    pub bwd: NodeId,
    pub len: usize,
    pub dim: usize,
}

impl BiSeq {
    pub fn new(tape: &Tape, fwd: NodeId, bwd: NodeId) -> Result<Self> {
        let (fs, bs) = (tape.shape(fwd), tape.shape(bwd));
        if fs != bs {
            return Err(shape_err(format!("bidirectional stream shapes differ: {fs:?} vs {bs:?}")));
        }
        if fs.0 == 0 {
            return Err(shape_err("empty bidirectional sequence"));
        }
        Ok(Self {
            fwd,
            bwd,
            len: fs.0,
            dim: fs.1,
        })
    }

    /// Directions side by side: `L × 2·dim`.
    pub fn concat(&self, tape: &mut Tape) -> NodeId {
        tape.concat_cols(&[self.fwd, self.bwd])
    }

    pub fn slice(&self, tape: &mut Tape, start: usize, len: usize) -> Result<BiSeq> {
        if len == 0 || start + len > self.len {
            return Err(shape_err(format!(
                "slice {start}+{len} outside sequence of length {}",
                self.len
            )));
        }
        let fwd = tape.slice_rows(self.fwd, start, len);
        let bwd = tape.slice_rows(self.bwd, start, len);
        BiSeq::new(tape, fwd, bwd)
    }

    /// Positions of every sequence in order, as one sequence.
    pub fn stack(tape: &mut Tape, seqs: &[BiSeq]) -> Result<BiSeq> {
        if seqs.len() == 1 {
            return Ok(seqs[0]);
        }
        let f: Vec<NodeId> = seqs.iter().map(|s| s.fwd).collect();
        let b: Vec<NodeId> = seqs.iter().map(|s| s.bwd).collect();
        let fwd = tape.stack_rows(&f);
        let bwd = tape.stack_rows(&b);
        BiSeq::new(tape, fwd, bwd)
    }

    /// Inverse of [`BiSeq::stack`] for pieces of the given lengths.
    pub fn unstack(&self, tape: &mut Tape, lens: &[usize]) -> Result<Vec<BiSeq>> {
        if lens.iter().sum::<usize>() != self.len {
            return Err(shape_err(format!("unstack {lens:?} from a sequence of length {}", self.len)));
        }
        if lens.len() == 1 {
            return Ok(vec![*self]);
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(lens.len());
        for &l in lens {
            out.push(self.slice(tape, start, l)?);
            start += l;
        }
        Ok(out)
    }

    /// `[last forward ; first backward]` as a `1 × 2·dim` row.
    pub fn final_state(&self, tape: &mut Tape) -> NodeId {
        let last = tape.row(self.fwd, self.len - 1);
        let first = tape.row(self.bwd, 0);
        tape.concat_cols(&[last, first])
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            fwd: LstmParams::new(store, &format!("{name}.fwd"), input, hidden, rng)?,
            bwd: LstmParams::new(store, &format!("{name}.bwd"), input, hidden, rng)?,
        })
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden
    }
}

/// Forward pass left to right and backward pass right to left, both from zero state.
pub fn bilstm(tape: &mut Tape, xs: NodeId, p: &BiLstmParams) -> Result<BiSeq> {
    let fwd = lstm_sequence(tape, xs, &p.fwd, false)?;
    let bwd = lstm_sequence(tape, xs, &p.bwd, true)?;
    BiSeq::new(tape, fwd, bwd)
}

/// Output of one LSTM direction over a group of equal-length sequences run as rows.
struct GroupRun {
    /// `hs[t]` is `G × hidden`, row `m` belonging to member `m`.
    hs: Vec<NodeId>,
    /// State after the last processed position.
    last: NodeId,
}

fn lstm_group(tape: &mut Tape, members: &[NodeId], p: &LstmParams, reverse: bool) -> Result<GroupRun> {
    let len = tape.shape(members[0]).0;
    let xs = if members.len() == 1 {
        members[0]
    } else {
        tape.stack_rows(members)
    };
    p.check_input(tape, xs)?;
    let w_x = tape.param(p.w_x);
    let b = tape.param(p.b);
    let pre_all = tape.affine(xs, w_x, Some(b));
    let g = members.len();
    let mut hs = vec![None; len];
    let mut state = None;
    for k in 0..len {
        let t = if reverse { len - 1 - k } else { k };
        let pre_x = if g == 1 {
            tape.row(pre_all, t)
        } else {
            tape.gather_rows(pre_all, (0..g).map(|m| m * len + t).collect())
        };
        let (h, c) = lstm_step(tape, pre_x, state, p);
        hs[t] = Some(h);
        state = Some((h, c));
    }
    Ok(GroupRun {
        hs: hs.into_iter().map(Option::unwrap).collect(),
        last: state.unwrap().0,
    })
}

/// Indices of `lens` grouped by equal length, in order of first appearance.
fn length_groups(lens: &[usize]) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, &l) in lens.iter().enumerate() {
        match groups.iter_mut().find(|g| lens[g[0]] == l) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
}

fn check_nonempty(tape: &Tape, xs: &[NodeId]) -> Result<Vec<usize>> {
    let lens: Vec<usize> = xs.iter().map(|&x| tape.shape(x).0).collect();
    if lens.contains(&0) {
        return Err(shape_err("lstm over empty sequence"));
    }
    Ok(lens)
}

/// [`lstm_last`] of several sequences. Sequences of equal length advance
/// together as rows of one batch, which gives the same values as separate runs.
pub fn lstm_last_many(tape: &mut Tape, xs: &[NodeId], p: &LstmParams) -> Result<Vec<NodeId>> {
    let lens = check_nonempty(tape, xs)?;
    let mut out = vec![None; xs.len()];
    for group in length_groups(&lens) {
        let members: Vec<NodeId> = group.iter().map(|&i| xs[i]).collect();
        let run = lstm_group(tape, &members, p, false)?;
        for (m, &i) in group.iter().enumerate() {
            out[i] = Some(if group.len() == 1 { run.last } else { tape.row(run.last, m) });
        }
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// [`bilstm`] of several sequences, batched by length like [`lstm_last_many`].
pub fn bilstm_many(tape: &mut Tape, xs: &[NodeId], p: &BiLstmParams) -> Result<Vec<BiSeq>> {
    let lens = check_nonempty(tape, xs)?;
    let mut out = vec![None; xs.len()];
    for group in length_groups(&lens) {
        let members: Vec<NodeId> = group.iter().map(|&i| xs[i]).collect();
        let f = lstm_group(tape, &members, &p.fwd, false)?;
        let b = lstm_group(tape, &members, &p.bwd, true)?;
        let len = lens[group[0]];
        if group.len() == 1 {
            let fwd = tape.stack_rows(&f.hs);
            let bwd = tape.stack_rows(&b.hs);
            out[group[0]] = Some(BiSeq::new(tape, fwd, bwd)?);
            continue;
        }
        let g = group.len();
        let fs = tape.stack_rows(&f.hs);
        let bs = tape.stack_rows(&b.hs);
        for (m, &i) in group.iter().enumerate() {
            let rows: Vec<usize> = (0..len).map(|t| t * g + m).collect();
            let fwd = tape.gather_rows(fs, rows.clone());
            let bwd = tape.gather_rows(bs, rows);
            out[i] = Some(BiSeq::new(tape, fwd, bwd)?);
        }
    }
    Ok(out.into_iter().map(Option::unwrap).collect())
}

/// `[last forward ; first backward]` of [`bilstm`] over each sequence, as one
/// `n × 2·hidden` node with a row per sequence.
pub fn bilstm_ends_many(tape: &mut Tape, xs: &[NodeId], p: &BiLstmParams) -> Result<NodeId> {
    let lens = check_nonempty(tape, xs)?;
    let groups = length_groups(&lens);
    let mut parts = Vec::with_capacity(groups.len());
    let mut order = Vec::with_capacity(xs.len());
    for group in &groups {
        let members: Vec<NodeId> = group.iter().map(|&i| xs[i]).collect();
        let f = lstm_group(tape, &members, &p.fwd, false)?;
        let b = lstm_group(tape, &members, &p.bwd, true)?;
        parts.push(tape.concat_cols(&[f.last, b.last]));
        order.extend_from_slice(group);
    }
    let stacked = if parts.len() == 1 { parts[0] } else { tape.stack_rows(&parts) };
    if order.iter().enumerate().all(|(k, &i)| k == i) {
        return Ok(stacked);
    }
    let mut pos = vec![0; xs.len()];
    for (k, &i) in order.iter().enumerate() {
        pos[i] = k;
    }
    Ok(tape.gather_rows(stacked, pos))
}

/// Standard GRU:
/// `z, r = σ(W x + U h + b)`, `h̃ = tanh(W_h x + U_h (r∘h) + b_h)`, `h' = (1−z)∘h + z∘h̃`.
#[derive(Clone, Copy, Debug)]
pub struct GruParams {
    /// `3d × input`, rows packed `[update, reset, candidate]`.
    pub w_x: ParamId,
    pub b: ParamId,
    /// `2d × d` recurrent weights of the update and reset gates.
    pub u_zr: ParamId,
    /// `d × d` recurrent weights of the candidate.
    pub u_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(shape_err(format!("{name}: zero-sized gru {input}->{hidden}")));
        }
        let bound = 1.0 / ((input + hidden) as f64).sqrt();
        Ok(Self {
            w_x: store.add_uniform(format!("{name}.w_x"), 3 * hidden, input, bound, rng),
            b: store.add_zeros(format!("{name}.b"), 1, 3 * hidden),
            u_zr: store.add_uniform(format!("{name}.u_zr"), 2 * hidden, hidden, bound, rng),
            u_h: store.add_uniform(format!("{name}.u_h"), hidden, hidden, bound, rng),
            input,
            hidden,
        })
    }
}

/// One GRU step; each row of `x`/`h` is an independent state.
pub fn gru_cell(tape: &mut Tape, x: NodeId, h: NodeId, p: &GruParams) -> Result<NodeId> {
    let (xs, hs) = (tape.shape(x), tape.shape(h));
    if xs.1 != p.input || hs.1 != p.hidden || xs.0 != hs.0 {
        return Err(shape_err(format!(
            "gru expects ({}, {}) inputs, got {xs:?} and {hs:?}",
            p.input, p.hidden
        )));
    }
    let d = p.hidden;
    let w_x = tape.param(p.w_x);
    let b = tape.param(p.b);
    let u_zr = tape.param(p.u_zr);
    let u_h = tape.param(p.u_h);
    let px = tape.affine(x, w_x, Some(b));
    let pzr_x = tape.slice_cols(px, 0, 2 * d);
    let ph_x = tape.slice_cols(px, 2 * d, d);
    let pzr_h = tape.matmul_nt(h, u_zr);
    let pzr = tape.add(pzr_x, pzr_h);
    let zr = tape.sigmoid(pzr);
    let z = tape.slice_cols(zr, 0, d);
    let r = tape.slice_cols(zr, d, d);
    let rh = tape.mul(r, h);
    let ph_h = tape.matmul_nt(rh, u_h);
    let ph = tape.add(ph_x, ph_h);
    let cand = tape.tanh(ph);
    let delta = tape.sub(cand, h);
    let step = tape.mul(z, delta);
    Ok(tape.add(h, step))
}

/// Inverted dropout. `None` rng means evaluation mode (identity).
pub fn dropout(tape: &mut Tape, x: NodeId, rate: f64, rng: Option<&mut ChaCha8Rng>) -> NodeId {
    let Some(rng) = rng else { return x };
    if rate <= 0.0 {
        return x;
    }
    let (r, c) = tape.shape(x);
    let keep = 1.0 - rate;
    let mask = (0..r * c)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    tape.mul_const(x, Tensor::from_vec(r, c, mask))
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cosine similarity; zero when either norm is below `1e-12`.
pub fn cos(u: &[f64], v: &[f64]) -> f64 {
    let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        uv += a * b;
        uu += a * a;
        vv += b * b;
    }
    let (nu, nv) = (uu.sqrt(), vv.sqrt());
    if nu < super::tape::COS_EPS || nv < super::tape::COS_EPS {
        return 0.0;
    }
    (uv / (nu * nv)).clamp(-1.0, 1.0)
}

/// Index of the largest element; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
