//! Passage memory and the answer scoring module.
//!
//! Every candidate keeps its own GRU state. At each step it reads the memory
//! through a sharpened cosine attention, updates its state, and the shared
//! termination gate looks at the sum of all candidate states to decide
//! whether reading stops. Scores are produced at every decision point so
//! the policy can marginalize over stop times exactly.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matching::{mp_match, MatchOpWeights};
use crate::seqnet::{bilstm, dropout, gru_cell, BiLstmParams, BiSeq, GruParams, LinearParams, NodeId, ParamStore, Tape};

#[derive(Clone, Copy, Debug)]
pub struct ReasonerParams {
    /// `P^c ⊳ Q^c`.
    pub mem_match: MatchOpWeights,
    pub memory: BiLstmParams,
    pub gru: GruParams,
    pub w2: LinearParams,
    pub w3: LinearParams,
    pub w4: LinearParams,
    pub w5: LinearParams,
    pub w6: LinearParams,
    pub lambda: f64,
}

impl ReasonerParams {
    pub fn new(
        store: &mut ParamStore,
        hidden: usize,
        perspectives: usize,
        state_dim: usize,
        lambda: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mem_match = MatchOpWeights::new(store, "memory.match", perspectives, hidden, rng)?;
        let memory = BiLstmParams::new(store, "memory.lstm", 8 * perspectives, hidden, rng)?;
        let m = 2 * hidden;
        Ok(Self {
            mem_match,
            memory,
            gru: GruParams::new(store, "reason.gru", m, state_dim, rng)?,
            w2: LinearParams::new(store, "reason.w2", m, state_dim, false, rng)?,
            w3: LinearParams::new(store, "reason.w3", state_dim, state_dim, false, rng)?,
            w4: LinearParams::new(store, "reason.w4", state_dim, state_dim, true, rng)?,
            w5: LinearParams::new(store, "reason.w5", state_dim, 1, false, rng)?,
            w6: LinearParams::new(store, "reason.w6", state_dim, 2, false, rng)?,
            lambda,
        })
    }
}

/// `BiLSTM_2(P^c ⊳ Q^c)` with directions concatenated: `l_p × 2h`.
pub fn gen_memory(
    tape: &mut Tape,
    q: &BiSeq,
    p: &BiSeq,
    params: &ReasonerParams,
    rate: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    let matched = mp_match(tape, p, q, &params.mem_match)?;
    let x = matched.concat(tape);
    let out = bilstm(tape, x, &params.memory)?;
    let f = dropout(tape, out.fwd, rate, rng.as_deref_mut());
    let b = dropout(tape, out.bwd, rate, rng.as_deref_mut());
    Ok(tape.concat_cols(&[f, b]))
}

/// Attention read for every row of `s`: `softmax_i(λ cos(W_2 m_i, W_3 s_j)) · M`.
/// `w2m` is `W_2 M`, computed once per memory.
pub fn attend_memory(tape: &mut Tape, mem: NodeId, w2m: NodeId, s: NodeId, params: &ReasonerParams) -> Result<NodeId> {
    let query = params.w3.forward(tape, s)?;
    let sim = tape.cos_matrix(query, w2m);
    let sharp = tape.scale(sim, params.lambda);
    let attn = tape.softmax_rows(sharp);
    Ok(tape.matmul(attn, mem))
}

/// Log `(p_t, 1 − p_t)` from `W_6 Σ_j s_j`, as a `1 × 2` node.
pub fn termination(tape: &mut Tape, s: NodeId, params: &ReasonerParams) -> Result<NodeId> {
    let total = tape.sum_rows(s);
    let logits = params.w6.forward(tape, total)?;
    Ok(tape.log_softmax_rows(logits))
}

/// Candidate scores `W_5 ReLU(W_4 s_j + b_4)` as a `1 × r` row.
pub fn score(tape: &mut Tape, s: NodeId, params: &ReasonerParams) -> Result<NodeId> {
    let h = params.w4.forward(tape, s)?;
    let h = tape.relu(h);
    let c = params.w5.forward(tape, h)?;
    Ok(tape.transpose(c))
}

/// Graph nodes of one rollout, one entry per decision point.
#[derive(Clone, Debug)]
pub struct Rollout {
    /// Number of GRU updates performed before each decision point.
    pub steps: Vec<usize>,
    /// Log `(p, 1 − p)` per decision point; `None` where stopping is forced.
    pub stop_logp: Vec<Option<NodeId>>,
    /// Answer log-probabilities (`1 × r`) per decision point.
    pub answer_logp: Vec<NodeId>,
    /// Candidate states (`r × d_s`) per decision point.
    pub states: Vec<NodeId>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Rolls every candidate state forward for `t_max` reading steps.
///
/// With `step_zero` the first decision point precedes any update, giving
/// `t_max + 1` points; otherwise points follow updates `1..=t_max`. The last
/// point always stops.
pub fn rollout(
    tape: &mut Tape,
    mem: NodeId,
    s0: NodeId,
    params: &ReasonerParams,
    t_max: usize,
    step_zero: bool,
) -> Result<Rollout> {
    if t_max == 0 {
        return Err(Error::Config("t_max must be at least 1".into()));
    }
    let w2m = params.w2.forward(tape, mem)?;
    let first = if step_zero { 0 } else { 1 };
    let mut out = Rollout {
        steps: Vec::new(),
        stop_logp: Vec::new(),
        answer_logp: Vec::new(),
        states: Vec::new(),
    };
    let mut s = s0;
    for t in 0..=t_max {
        if t > 0 {
            let read = attend_memory(tape, mem, w2m, s, params)?;
            s = gru_cell(tape, read, s, &params.gru)?;
        }
        if t < first {
            continue;
        }
        let stop = if t < t_max { Some(termination(tape, s, params)?) } else { None };
        let c = score(tape, s, params)?;
        out.steps.push(t);
        out.stop_logp.push(stop);
        out.answer_logp.push(tape.log_softmax_rows(c));
        out.states.push(s);
    }
    Ok(out)
}

/// Single decision point scored straight from the fusion output.
pub fn direct_scores(tape: &mut Tape, s0: NodeId, params: &ReasonerParams) -> Result<Rollout> {
    let c = score(tape, s0, params)?;
    let lp = tape.log_softmax_rows(c);
    Ok(Rollout {
        steps: vec![0],
        stop_logp: vec![None],
        answer_logp: vec![lp],
        states: vec![s0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqnet::Tensor;
    use rand::SeedableRng;

    fn setup(seed: u64, lambda: f64) -> (ParamStore, ReasonerParams) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let p = ReasonerParams::new(&mut store, 3, 2, 5, lambda, &mut rng).unwrap();
        (store, p)
    }

    fn random(tape: &mut Tape, r: usize, c: usize, rng: &mut ChaCha8Rng) -> NodeId {
        let data = (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect();
        tape.constant(Tensor::from_vec(r, c, data))
    }

    #[test]
    fn single_memory_slot_is_read_verbatim() {
        let (store, p) = setup(0, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut tape = Tape::new(&store);
        let mem = random(&mut tape, 1, 6, &mut rng);
        let s = random(&mut tape, 3, 5, &mut rng);
        let w2m = p.w2.forward(&mut tape, mem).unwrap();
        let f = attend_memory(&mut tape, mem, w2m, s, &p).unwrap();
        for j in 0..3 {
            assert_eq!(tape.value(f).row(j), tape.value(mem).row(0));
        }
    }

    #[test]
    fn zero_lambda_reads_the_mean() {
        let (store, p) = setup(2, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::new(&store);
        let mem = random(&mut tape, 7, 6, &mut rng);
        let s = random(&mut tape, 2, 5, &mut rng);
        let w2m = p.w2.forward(&mut tape, mem).unwrap();
        let f = attend_memory(&mut tape, mem, w2m, s, &p).unwrap();
        let m = tape.value(mem);
        for k in 0..6 {
            let mean: f64 = (0..7).map(|i| m.get(i, k)).sum::<f64>() / 7.0;
            assert!((tape.value(f).get(1, k) - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_w6_gives_even_stop_odds() {
        let (mut store, p) = setup(4, 10.0);
        store.get_mut(p.w6.w).scale_assign(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new(&store);
        let s = random(&mut tape, 4, 5, &mut rng);
        let lp = termination(&mut tape, s, &p).unwrap();
        for v in tape.value(lp).data() {
            assert!((v.exp() - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn termination_ignores_candidate_order() {
        let (store, p) = setup(6, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new(&store);
        let s = random(&mut tape, 4, 5, &mut rng);
        let perm = tape.gather_rows(s, vec![2, 0, 3, 1]);
        let a = termination(&mut tape, s, &p).unwrap();
        let b = termination(&mut tape, perm, &p).unwrap();
        for (x, y) in tape.value(a).data().iter().zip(tape.value(b).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_w5_gives_uniform_answers() {
        let (mut store, p) = setup(8, 10.0);
        store.get_mut(p.w5.w).scale_assign(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new(&store);
        let s = random(&mut tape, 4, 5, &mut rng);
        let c = score(&mut tape, s, &p).unwrap();
        assert!(tape.value(c).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn decision_points_follow_step_counting() {
        let (store, p) = setup(10, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut tape = Tape::new(&store);
        let mem = random(&mut tape, 5, 6, &mut rng);
        let s = random(&mut tape, 4, 5, &mut rng);
        let r = rollout(&mut tape, mem, s, &p, 5, true).unwrap();
        assert_eq!(r.steps, vec![0, 1, 2, 3, 4, 5]);
        assert!(r.stop_logp[5].is_none() && r.stop_logp[..5].iter().all(Option::is_some));
        let r = rollout(&mut tape, mem, s, &p, 5, false).unwrap();
        assert_eq!(r.steps, vec![1, 2, 3, 4, 5]);
        assert!(rollout(&mut tape, mem, s, &p, 0, true).is_err());
    }

    #[test]
    fn rollout_is_candidate_equivariant() {
        let (store, p) = setup(12, 10.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut tape = Tape::new(&store);
        let mem = random(&mut tape, 5, 6, &mut rng);
        let s = random(&mut tape, 3, 5, &mut rng);
        let perm = vec![1, 2, 0];
        let sp = tape.gather_rows(s, perm.clone());
        let a = rollout(&mut tape, mem, s, &p, 3, true).unwrap();
        let b = rollout(&mut tape, mem, sp, &p, 3, true).unwrap();
        for t in 0..a.len() {
            let (sa, sb) = (tape.value(a.states[t]), tape.value(b.states[t]));
            for (k, &src) in perm.iter().enumerate() {
                for (x, y) in sa.row(src).iter().zip(sb.row(k)) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
            if let (Some(x), Some(y)) = (a.stop_logp[t], b.stop_logp[t]) {
                assert!((tape.value(x).get(0, 0) - tape.value(y).get(0, 0)).abs() < 1e-12);
            }
        }
    }
}
