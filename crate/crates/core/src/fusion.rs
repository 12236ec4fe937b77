//! Strategy gate, the three attention strategies and their aggregation into
//! one fixed-width vector `s_j` per candidate.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::Encoded;
use crate::error::{Error, Result};
use crate::matching::{mp_match, split, MatchOpWeights};
use crate::seqnet::{bilstm_ends_many, dropout, BiLstmParams, BiSeq, LinearParams, NodeId, ParamStore, Tape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Question and answer matched against the passage as one sequence.
    Integral,
    /// Only answer words are matched; the question stream is left unattended.
    AnswerOnly,
    /// Question and answer are matched against the passage separately, then against each other.
    Entangled,
}

pub const NUM_STRATEGIES: usize = 3;

impl Strategy {
    pub const ALL: [Strategy; NUM_STRATEGIES] = [Strategy::Integral, Strategy::AnswerOnly, Strategy::Entangled];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL.get(index).copied().ok_or(Error::StrategyOutOfRange {
            index,
            count: NUM_STRATEGIES,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Integral => "integral",
            Strategy::AnswerOnly => "answer-only",
            Strategy::Entangled => "entangled",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected integral, answer-only, entangled)")))
    }
}

/// Aggregation BiLSTMs and output projection of one strategy.
#[derive(Clone, Copy, Debug)]
pub struct Aggregator {
    pub q: BiLstmParams,
    pub a: BiLstmParams,
    pub proj: LinearParams,
}

impl Aggregator {
    /// `q_in`/`a_in` are the direction-concatenated stream widths. When they agree
    /// a single BiLSTM serves both streams.
    fn new(store: &mut ParamStore, name: &str, q_in: usize, a_in: usize, hidden: usize, state_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let a = BiLstmParams::new(store, &format!("{name}.agg"), a_in, hidden, rng)?;
        let q = if q_in == a_in {
            a
        } else {
            BiLstmParams::new(store, &format!("{name}.agg_q"), q_in, hidden, rng)?
        };
        let proj = LinearParams::new(store, &format!("{name}.proj"), 4 * hidden, state_dim, true, rng)?;
        Ok(Self { q, a, proj })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FusionParams {
    pub gate: LinearParams,
    pub int_match: MatchOpWeights,
    /// `A ⊳ P`, shared by the answer-only and entangled strategies.
    pub ans_match: MatchOpWeights,
    pub ent_q_match: MatchOpWeights,
    pub ent_qa_match: MatchOpWeights,
    pub ent_aq_match: MatchOpWeights,
    pub agg: [Aggregator; NUM_STRATEGIES],
    pub hidden: usize,
    pub state_dim: usize,
}

impl FusionParams {
    pub fn new(store: &mut ParamStore, hidden: usize, perspectives: usize, state_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        let gate = LinearParams::new(store, "fusion.gate", 2 * hidden, NUM_STRATEGIES, true, rng)?;
        let int_match = MatchOpWeights::new(store, "fusion.int.match", perspectives, hidden, rng)?;
        let ans_match = MatchOpWeights::new(store, "fusion.ans.match", perspectives, hidden, rng)?;
        let ent_q_match = MatchOpWeights::new(store, "fusion.ent.q_match", perspectives, hidden, rng)?;
        let m = 4 * perspectives;
        let ent_qa_match = MatchOpWeights::new(store, "fusion.ent.qa_match", perspectives, m, rng)?;
        let ent_aq_match = MatchOpWeights::new(store, "fusion.ent.aq_match", perspectives, m, rng)?;
        let agg = [
            Aggregator::new(store, "fusion.int", 2 * m, 2 * m, hidden, state_dim, rng)?,
            Aggregator::new(store, "fusion.aso", 2 * hidden, 2 * m, hidden, state_dim, rng)?,
            Aggregator::new(store, "fusion.ent", 2 * m, 2 * m, hidden, state_dim, rng)?,
        ];
        Ok(Self {
            gate,
            int_match,
            ans_match,
            ent_q_match,
            ent_qa_match,
            ent_aq_match,
            agg,
            hidden,
            state_dim,
        })
    }
}

/// Gate log-probabilities (`1 × n`) from `[last forward ; first backward]` of `Q^c`.
pub fn strategy_gate(tape: &mut Tape, q: &BiSeq, p: &FusionParams) -> Result<NodeId> {
    let ends = q.final_state(tape);
    let logits = p.gate.forward(tape, ends)?;
    Ok(tape.log_softmax_rows(logits))
}

pub fn strategy_integral(tape: &mut Tape, qa: &BiSeq, pc: &BiSeq, l_q: usize, p: &FusionParams) -> Result<(BiSeq, BiSeq)> {
    let m = mp_match(tape, qa, pc, &p.int_match)?;
    split(tape, &m, l_q, qa.len - l_q)
}

pub fn strategy_answer_only(tape: &mut Tape, q: &BiSeq, a: &BiSeq, pc: &BiSeq, p: &FusionParams) -> Result<(BiSeq, BiSeq)> {
    Ok((*q, mp_match(tape, a, pc, &p.ans_match)?))
}

/// `(M_q ⊳ M_a, M_a ⊳ M_q)`. `m_q = Q^c ⊳ P^c` is candidate independent and
/// passed in so it is computed once per sample.
pub fn strategy_entangled(tape: &mut Tape, m_q: &BiSeq, a: &BiSeq, pc: &BiSeq, p: &FusionParams) -> Result<(BiSeq, BiSeq)> {
    let m_a = mp_match(tape, a, pc, &p.ans_match)?;
    let qe = mp_match(tape, m_q, &m_a, &p.ent_qa_match)?;
    let ae = mp_match(tape, &m_a, m_q, &p.ent_aq_match)?;
    Ok((qe, ae))
}

/// Candidate streams of one strategy: `(question streams, answer streams)`, one
/// entry per candidate.
pub type Streams = (Vec<BiSeq>, Vec<BiSeq>);

/// Question and answer streams of every candidate under strategy `g`.
/// Candidates are stacked into one left operand wherever `⊳` allows it.
pub fn strategy_streams(tape: &mut Tape, enc: &Encoded, g: Strategy, p: &FusionParams) -> Result<Streams> {
    let r = enc.a.len();
    let l_q = enc.q.len;
    let a_lens: Vec<usize> = enc.a.iter().map(|a| a.len).collect();
    match g {
        Strategy::Integral => {
            let lens: Vec<usize> = enc.qa.iter().map(|s| s.len).collect();
            let qa = BiSeq::stack(tape, &enc.qa)?;
            let m = mp_match(tape, &qa, &enc.p, &p.int_match)?;
            let mut qs = Vec::with_capacity(r);
            let mut as_ = Vec::with_capacity(r);
            for (mj, l_a) in m.unstack(tape, &lens)?.iter().zip(&a_lens) {
                let (q, a) = split(tape, mj, l_q, *l_a)?;
                qs.push(q);
                as_.push(a);
            }
            Ok((qs, as_))
        }
        Strategy::AnswerOnly => {
            let a = BiSeq::stack(tape, &enc.a)?;
            let m = mp_match(tape, &a, &enc.p, &p.ans_match)?;
            Ok((vec![enc.q; r], m.unstack(tape, &a_lens)?))
        }
        Strategy::Entangled => {
            let m_q = mp_match(tape, &enc.q, &enc.p, &p.ent_q_match)?;
            let a = BiSeq::stack(tape, &enc.a)?;
            let m_a = mp_match(tape, &a, &enc.p, &p.ans_match)?;
            let ae = mp_match(tape, &m_a, &m_q, &p.ent_aq_match)?.unstack(tape, &a_lens)?;
            let qe = m_a
                .unstack(tape, &a_lens)?
                .iter()
                .map(|m_aj| mp_match(tape, &m_q, m_aj, &p.ent_qa_match))
                .collect::<Result<_>>()?;
            Ok((qe, ae))
        }
    }
}

/// Final states of the aggregation BiLSTM over each stream, `n × 2h`.
fn aggregate_ends(tape: &mut Tape, streams: &[BiSeq], lstm: &BiLstmParams) -> Result<NodeId> {
    let xs: Vec<NodeId> = streams.iter().map(|s| s.concat(tape)).collect();
    bilstm_ends_many(tape, &xs, lstm)
}

/// `r × d_s`: aggregation and projection of the streams of strategy `g`.
pub fn aggregate(
    tape: &mut Tape,
    (q, a): &Streams,
    g: Strategy,
    p: &FusionParams,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    let agg = &p.agg[g.index()];
    let r = a.len();
    let qs = if g == Strategy::AnswerOnly {
        // the question stream is the same for every candidate
        let one = aggregate_ends(tape, &q[..1], &agg.q)?;
        tape.gather_rows(one, vec![0; r])
    } else {
        aggregate_ends(tape, q, &agg.q)?
    };
    let as_ = aggregate_ends(tape, a, &agg.a)?;
    let cat = tape.concat_cols(&[qs, as_]);
    let cat = dropout(tape, cat, rate, rng);
    agg.proj.forward(tape, cat)
}

/// Applies strategy `g` to every candidate; returns `r × d_s`, one row per candidate.
pub fn fuse(
    tape: &mut Tape,
    enc: &Encoded,
    g: Strategy,
    p: &FusionParams,
    rate: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<NodeId> {
    let streams = strategy_streams(tape, enc, g, p)?;
    aggregate(tape, &streams, g, p, rate, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn names_round_trip() {
        for g in Strategy::ALL {
            assert_eq!(g.name().parse::<Strategy>().unwrap(), g);
            assert_eq!(Strategy::from_index(g.index()).unwrap(), g);
        }
        assert!(matches!(
            Strategy::from_index(3),
            Err(Error::StrategyOutOfRange { index: 3, count: 3 })
        ));
        assert!("fused".parse::<Strategy>().is_err());
    }

    #[test]
    fn zero_gate_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let p = FusionParams::new(&mut store, 3, 2, 4, &mut rng).unwrap();
        store.get_mut(p.gate.w).scale_assign(0.0);
        let mut tape = Tape::new(&store);
        let x = tape.constant(crate::seqnet::Tensor::filled(2, 3, 0.7));
        let q = BiSeq::new(&tape, x, x).unwrap();
        let lp = strategy_gate(&mut tape, &q, &p).unwrap();
        for v in tape.value(lp).data() {
            assert!((v.exp() - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn answer_only_uses_its_own_question_aggregator() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let p = FusionParams::new(&mut store, 6, 2, 4, &mut rng).unwrap();
        assert_eq!(p.agg[1].q.fwd.input, 12);
        assert_eq!(p.agg[1].a.fwd.input, 16);
        assert_eq!(p.agg[0].q.fwd.w_x, p.agg[0].a.fwd.w_x);
    }
}
