//! Exact policy-gradient training over the enumerated `(strategy, stop step,
//! answer)` episode space, plus greedy and sampled evaluation.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Ablation, AdvantageForm, TrainConfig};
use crate::corpus::{batches, Family, Sample};
use crate::error::{Error, Result};
use crate::fusion::{Strategy, NUM_STRATEGIES};
use crate::model::{Branches, ForwardGraph, Model};
use crate::seqnet::{argmax, Adam, Gradients, ParamStore, Tape, Tensor};

/// Numeric view of one strategy branch.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchTrace {
    pub strategy: Strategy,
    /// Stop probability at each decision point; the last is exactly 1.
    pub stop: Vec<f64>,
    /// Answer distribution at each decision point.
    pub answers: Vec<Vec<f64>>,
}

impl BranchTrace {
    /// `q(t) = p_t Π_{τ<t} (1 − p_τ)`.
    pub fn stop_law(&self) -> Vec<f64> {
        let mut survive = 1.0;
        self.stop
            .iter()
            .map(|&p| {
                let q = survive * p;
                survive *= 1.0 - p;
                q
            })
            .collect()
    }

    /// First decision point whose stop probability reaches one half.
    pub fn greedy_stop(&self) -> usize {
        self.stop.iter().position(|&p| p >= 0.5).unwrap_or(self.stop.len() - 1)
    }
}

/// All episodes of one sample with their probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    /// Gate distribution over every registered strategy; `None` without dynamic fusion.
    pub gate: Option<Vec<f64>>,
    /// GRU updates before each decision point.
    pub steps: Vec<usize>,
    pub branches: Vec<BranchTrace>,
    pub gold: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Episode {
    pub branch: usize,
    pub strategy: Strategy,
    /// Decision-point index into `steps`.
    pub point: usize,
    pub step: usize,
    pub answer: usize,
    pub prob: f64,
    pub reward: f64,
}

impl EpisodeTrace {
    pub fn from_graph(tape: &Tape, fwd: &ForwardGraph, gold: usize) -> Self {
        let gate = fwd
            .gate_logp
            .map(|lp| tape.value(lp).data().iter().map(|v| v.exp()).collect());
        let branches = fwd
            .branches
            .iter()
            .map(|b| BranchTrace {
                strategy: b.strategy,
                stop: b
                    .rollout
                    .stop_logp
                    .iter()
                    .map(|lp| lp.map_or(1.0, |n| tape.value(n).data()[0].exp()))
                    .collect(),
                answers: b
                    .rollout
                    .answer_logp
                    .iter()
                    .map(|&n| tape.value(n).data().iter().map(|v| v.exp()).collect())
                    .collect(),
            })
            .collect();
        let steps = fwd.branches.first().map(|b| b.rollout.steps.clone()).unwrap_or_default();
        Self { gate, steps, branches, gold }
    }

    pub fn num_candidates(&self) -> usize {
        self.branches[0].answers[0].len()
    }

    /// Probability that the episode uses branch `k`.
    pub fn branch_prob(&self, k: usize) -> f64 {
        match &self.gate {
            Some(g) => g[self.branches[k].strategy.index()],
            None => 1.0 / self.branches.len() as f64,
        }
    }

    pub fn episodes(&self) -> Vec<Episode> {
        let mut out = Vec::new();
        for (k, b) in self.branches.iter().enumerate() {
            let pg = self.branch_prob(k);
            for (t, q) in b.stop_law().into_iter().enumerate() {
                for (c, &pa) in b.answers[t].iter().enumerate() {
                    out.push(Episode {
                        branch: k,
                        strategy: b.strategy,
                        point: t,
                        step: self.steps[t],
                        answer: c,
                        prob: pg * q * pa,
                        reward: if c == self.gold { 1.0 } else { 0.0 },
                    });
                }
            }
        }
        out
    }

    pub fn total_probability(&self) -> f64 {
        self.episodes().iter().map(|e| e.prob).sum()
    }

    /// `b = Σ_g π(g) Σ_t q_g(t) π(gold | g, t)`.
    pub fn expected_reward(&self) -> f64 {
        self.branches
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let inner: f64 = b
                    .stop_law()
                    .iter()
                    .zip(&b.answers)
                    .map(|(q, a)| q * a[self.gold])
                    .sum();
                self.branch_prob(k) * inner
            })
            .sum()
    }

    /// Per-episode weights `π_e · A_e` of the surrogate loss.
    pub fn advantage_weights(&self, form: AdvantageForm, b_floor: f64) -> Vec<(Episode, f64)> {
        let b = self.expected_reward();
        self.episodes()
            .into_iter()
            .map(|e| {
                let adv = match form {
                    AdvantageForm::Ratio => e.reward / b.max(b_floor) - 1.0,
                    AdvantageForm::Difference => e.reward - b,
                };
                (e, e.prob * adv)
            })
            .collect()
    }

    /// Surrogate value `−Σ_e w_e log π_e` evaluated numerically.
    pub fn surrogate_value(&self, form: AdvantageForm, b_floor: f64) -> f64 {
        -self
            .advantage_weights(form, b_floor)
            .iter()
            .map(|(e, w)| if *w == 0.0 { 0.0 } else { w * e.prob.ln() })
            .sum::<f64>()
    }

    pub fn gate_entropy(&self) -> f64 {
        self.gate
            .as_ref()
            .map_or(0.0, |g| -g.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
    }

    /// Greedy decision: most likely strategy, first point with `p ≥ 0.5`, most likely answer.
    pub fn greedy(&self) -> Decision {
        let k = match &self.gate {
            Some(g) => {
                let best = Strategy::ALL[argmax(g)];
                self.branches.iter().position(|b| b.strategy == best).expect("greedy branch built")
            }
            None => 0,
        };
        let b = &self.branches[k];
        let t = b.greedy_stop();
        let dist = b.answers[t].clone();
        Decision {
            strategy: b.strategy,
            step: self.steps[t],
            answer: argmax(&dist),
            answer_dist: dist,
        }
    }

    /// Draws one episode from the policy.
    pub fn sample(&self, rng: &mut impl Rng) -> Episode {
        let probs: Vec<f64> = (0..self.branches.len()).map(|k| self.branch_prob(k)).collect();
        let k = draw(&probs, rng);
        let b = &self.branches[k];
        let mut t = 0;
        while t + 1 < b.stop.len() && rng.random::<f64>() >= b.stop[t] {
            t += 1;
        }
        let c = draw(&b.answers[t], rng);
        Episode {
            branch: k,
            strategy: b.strategy,
            point: t,
            step: self.steps[t],
            answer: c,
            prob: probs[k] * b.stop_law()[t] * b.answers[t][c],
            reward: if c == self.gold { 1.0 } else { 0.0 },
        }
    }
}

fn draw(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub strategy: Strategy,
    pub step: usize,
    pub answer: usize,
    pub answer_dist: Vec<f64>,
}

/// Builds the differentiable surrogate `L = −Σ_e stopgrad(w_e) log π_e` on `tape`.
///
/// `log π_e` is a sum of gate, stop and answer log-probabilities, so the
/// episode weights are folded into one coefficient per log-probability entry.
pub fn surrogate_loss(
    tape: &mut Tape,
    fwd: &ForwardGraph,
    trace: &EpisodeTrace,
    form: AdvantageForm,
    b_floor: f64,
) -> crate::seqnet::NodeId {
    let weighted = trace.advantage_weights(form, b_floor);
    let r = trace.num_candidates();
    let points = trace.steps.len();
    let mut gate_coef = vec![0.0; NUM_STRATEGIES];
    // per branch: stop coefficients per point, answer coefficients per point
    let mut stop_coef = vec![vec![[0.0; 2]; points]; trace.branches.len()];
    let mut ans_coef = vec![vec![vec![0.0; r]; points]; trace.branches.len()];
    for (e, w) in &weighted {
        gate_coef[e.strategy.index()] -= w;
        for tau in 0..e.point {
            stop_coef[e.branch][tau][1] -= w;
        }
        stop_coef[e.branch][e.point][0] -= w;
        ans_coef[e.branch][e.point][e.answer] -= w;
    }
    let mut terms = Vec::new();
    if let Some(lp) = fwd.gate_logp {
        terms.push(tape.dot_const(lp, Tensor::row_vector(gate_coef)));
    }
    for (k, b) in fwd.branches.iter().enumerate() {
        for t in 0..points {
            if let Some(lp) = b.rollout.stop_logp[t] {
                terms.push(tape.dot_const(lp, Tensor::row_vector(stop_coef[k][t].to_vec())));
            }
            let coef = std::mem::take(&mut ans_coef[k][t]);
            terms.push(tape.dot_const(b.rollout.answer_logp[t], Tensor::row_vector(coef)));
        }
    }
    let stacked = tape.concat_cols(&terms);
    tape.sum_cols(stacked)
}

/// Evaluation-mode enumeration of every episode of `sample` against `store`.
pub fn enumerate_with(model: &Model, store: &ParamStore, sample: &Sample) -> Result<EpisodeTrace> {
    let mut tape = Tape::new(store);
    let fwd = model.forward(&mut tape, sample, Branches::All, None)?;
    Ok(EpisodeTrace::from_graph(&tape, &fwd, sample.gold))
}

pub fn enumerate(model: &Model, sample: &Sample) -> Result<EpisodeTrace> {
    enumerate_with(model, &model.store, sample)
}

/// Surrogate value, its gradient, and the trace of one sample.
pub fn sample_gradient(
    model: &Model,
    store: &ParamStore,
    sample: &Sample,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(f64, Gradients, EpisodeTrace)> {
    let c = &model.config;
    let mut tape = Tape::new(store);
    let fwd = model.forward(&mut tape, sample, Branches::All, rng)?;
    let trace = EpisodeTrace::from_graph(&tape, &fwd, sample.gold);
    let loss = surrogate_loss(&mut tape, &fwd, &trace, c.advantage, c.b_floor);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFinite {
            sample_id: sample.id.clone(),
        });
    }
    let grads = tape.backward(loss);
    if !grads.is_finite() {
        return Err(Error::NonFinite {
            sample_id: sample.id.clone(),
        });
    }
    Ok((value, grads, trace))
}

/// One line of the metrics stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub expected_reward: f64,
    pub accuracy: f64,
    pub gate_entropy: f64,
    /// Greedy strategy counts in registry order.
    pub strategy_hist: Vec<usize>,
    /// Greedy stop-step counts for steps `0..=t_max`.
    pub step_hist: Vec<usize>,
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    loss: f64,
    reward: f64,
    correct: usize,
    entropy: f64,
    strategy_hist: Vec<usize>,
    step_hist: Vec<usize>,
}

impl Accumulator {
    fn new(t_max: usize) -> Self {
        Self {
            strategy_hist: vec![0; NUM_STRATEGIES],
            step_hist: vec![0; t_max + 1],
            ..Default::default()
        }
    }

    fn add(&mut self, loss: f64, trace: &EpisodeTrace) {
        let d = trace.greedy();
        self.n += 1;
        self.loss += loss;
        self.reward += trace.expected_reward();
        self.entropy += trace.gate_entropy();
        self.correct += usize::from(d.answer == trace.gold);
        self.strategy_hist[d.strategy.index()] += 1;
        self.step_hist[d.step] += 1;
    }

    fn finish(self, epoch: usize, split: &str) -> EpochMetrics {
        let n = self.n.max(1) as f64;
        EpochMetrics {
            epoch,
            split: split.to_string(),
            loss: self.loss / n,
            expected_reward: self.reward / n,
            accuracy: self.correct as f64 / n,
            gate_entropy: self.entropy / n,
            strategy_hist: self.strategy_hist,
            step_hist: self.step_hist,
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Dropout stream of one sample in one epoch.
pub fn dropout_rng(seed: u64, epoch: usize, sample_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ 0xd20f) ^ mix(epoch as u64) ^ fnv1a(sample_id)))
}

/// Batch order seed of one epoch.
pub fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    mix(seed.wrapping_mul(31).wrapping_add(epoch as u64))
}

/// Metrics of an evaluation-mode pass (exact enumeration) over `samples`.
pub fn eval_metrics(model: &Model, samples: &[Sample], epoch: usize, split: &str) -> Result<EpochMetrics> {
    let c = &model.config;
    let traces: Vec<EpisodeTrace> = samples
        .par_iter()
        .map(|s| enumerate(model, s))
        .collect::<Result<_>>()?;
    let mut acc = Accumulator::new(c.t_max);
    for t in &traces {
        acc.add(t.surrogate_value(c.advantage, c.b_floor), t);
    }
    Ok(acc.finish(epoch, split))
}

/// One ADAM step over the mean surrogate gradient of `batch`. Returns the
/// per-sample losses and traces in batch order.
pub fn train_step(
    model: &mut Model,
    adam: &mut Adam,
    batch: &[&Sample],
    epoch: usize,
) -> Result<Vec<(f64, EpisodeTrace)>> {
    let seed = model.config.seed;
    let results: Vec<Result<(f64, Gradients, EpisodeTrace)>> = {
        let m: &Model = model;
        batch
            .par_iter()
            .map(|s| {
                let mut rng = dropout_rng(seed, epoch, &s.id);
                sample_gradient(m, &m.store, s, Some(&mut rng))
            })
            .collect()
    };
    let mut total = Gradients::new(model.store.len());
    let mut out = Vec::with_capacity(batch.len());
    for r in results {
        let (loss, g, trace) = r?;
        total.add_assign(&g);
        out.push((loss, trace));
    }
    total.scale(1.0 / batch.len() as f64);
    adam.step(&mut model.store, &total);
    model.store.quantize_f32();
    Ok(out)
}

/// Trains for up to `config.epochs` epochs. After every epoch a `train` metrics
/// line (from the training-mode traces) and, when `eval` is given, an `eval`
/// line are passed to `on_epoch` and collected. Training ends early once
/// `on_epoch` returns `ControlFlow::Break`.
pub fn train(
    model: &mut Model,
    train: &[Sample],
    eval: Option<&[Sample]>,
    mut on_epoch: impl FnMut(&EpochMetrics) -> ControlFlow<()>,
) -> Result<Vec<EpochMetrics>> {
    if train.is_empty() {
        return Err(Error::Config("empty training corpus".into()));
    }
    let mut adam = Adam::new(&model.store, model.config.lr);
    let mut metrics = Vec::new();
    for epoch in 1..=model.config.epochs {
        let mut acc = Accumulator::new(model.config.t_max);
        let seed = shuffle_seed(model.config.seed, epoch);
        for batch in batches(train, model.config.batch_size, seed) {
            for (loss, trace) in train_step(model, &mut adam, &batch, epoch)? {
                acc.add(loss, &trace);
            }
        }
        let m = acc.finish(epoch, "train");
        log::info!(
            "epoch {epoch}: loss {:.4} reward {:.4} acc {:.4}",
            m.loss,
            m.expected_reward,
            m.accuracy
        );
        let mut flow = on_epoch(&m);
        metrics.push(m);
        if let Some(ev) = eval {
            let m = eval_metrics(model, ev, epoch, "eval")?;
            log::info!("epoch {epoch}: eval acc {:.4}", m.accuracy);
            if on_epoch(&m).is_break() {
                flow = ControlFlow::Break(());
            }
            metrics.push(m);
        }
        if flow.is_break() {
            break;
        }
    }
    Ok(metrics)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    pub strategy: Strategy,
    pub step: usize,
    pub answer: usize,
    pub gold: usize,
    pub correct: bool,
    pub answer_dist: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub records: Vec<SampleRecord>,
}

impl Evaluation {
    fn from_records(records: Vec<SampleRecord>) -> Self {
        let correct = records.iter().filter(|r| r.correct).count();
        Self {
            accuracy: correct as f64 / records.len().max(1) as f64,
            records,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Greedy,
    /// One sampled episode per sample, seeded per sample id.
    Sampled { seed: u64 },
}

fn greedy_decision(model: &Model, sample: &Sample) -> Result<Decision> {
    let mut tape = Tape::new(&model.store);
    let fwd = model.forward(&mut tape, sample, Branches::Greedy, None)?;
    Ok(EpisodeTrace::from_graph(&tape, &fwd, sample.gold).greedy())
}

pub fn evaluate(model: &Model, samples: &[Sample], mode: EvalMode) -> Result<Evaluation> {
    let records = samples
        .par_iter()
        .map(|s| {
            let (strategy, step, answer, answer_dist) = match mode {
                EvalMode::Greedy => {
                    let d = greedy_decision(model, s)?;
                    (d.strategy, d.step, d.answer, d.answer_dist)
                }
                EvalMode::Sampled { seed } => {
                    let trace = enumerate(model, s)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed) ^ fnv1a(&s.id));
                    let e = trace.sample(&mut rng);
                    (e.strategy, e.step, e.answer, trace.branches[e.branch].answers[e.point].clone())
                }
            };
            Ok(SampleRecord {
                id: s.id.clone(),
                family: s.family,
                strategy,
                step,
                answer,
                gold: s.gold,
                correct: answer == s.gold,
                answer_dist,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation::from_records(records))
}

/// Joint distribution of greedy `(strategy, step)` over samples whose question
/// contains one keyword.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordRow {
    pub keyword: String,
    pub count: usize,
    /// `(strategy, step) → share`, shares summing to 1 unless `count == 0`.
    pub cells: Vec<((Strategy, usize), f64)>,
    pub dominant: Option<((Strategy, usize), f64)>,
    /// Marginal share of each strategy in registry order.
    pub strategy_share: Vec<f64>,
}

impl KeywordRow {
    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Strategy with the largest marginal share.
    pub fn dominant_strategy(&self) -> Option<Strategy> {
        (self.count > 0).then(|| Strategy::ALL[argmax(&self.strategy_share)])
    }
}

pub fn keyword_table(samples: &[Sample], records: &[SampleRecord], keywords: &[&str]) -> Vec<KeywordRow> {
    keywords
        .iter()
        .map(|&kw| {
            let mut cells: BTreeMap<(Strategy, usize), usize> = BTreeMap::new();
            let mut count = 0;
            for (s, r) in samples.iter().zip(records) {
                if s.question_contains(kw) {
                    count += 1;
                    *cells.entry((r.strategy, r.step)).or_default() += 1;
                }
            }
            let n = count.max(1) as f64;
            let cells: Vec<((Strategy, usize), f64)> = cells.into_iter().map(|(k, v)| (k, v as f64 / n)).collect();
            let mut share = vec![0.0; NUM_STRATEGIES];
            for ((g, _), p) in &cells {
                share[g.index()] += p;
            }
            let dominant = cells
                .iter()
                .copied()
                .fold(None, |best: Option<((Strategy, usize), f64)>, c| match best {
                    Some(b) if b.1 >= c.1 => Some(b),
                    _ => Some(c),
                });
            KeywordRow {
                keyword: kw.to_string(),
                count,
                cells,
                dominant,
                strategy_share: share,
            }
        })
        .collect()
}

/// Greedy evaluation followed by [`keyword_table`].
pub fn strategy_stats(model: &Model, samples: &[Sample], keywords: &[&str]) -> Result<Vec<KeywordRow>> {
    let ev = evaluate(model, samples, EvalMode::Greedy)?;
    Ok(keyword_table(samples, &ev.records, keywords))
}

/// Share of each strategy among the greedy choices of every synthetic family.
pub fn family_strategy_shares(records: &[SampleRecord]) -> BTreeMap<Family, Vec<f64>> {
    let mut counts: BTreeMap<Family, Vec<usize>> = BTreeMap::new();
    for r in records {
        if let Some(f) = r.family {
            counts.entry(f).or_insert_with(|| vec![0; NUM_STRATEGIES])[r.strategy.index()] += 1;
        }
    }
    counts
        .into_iter()
        .map(|(f, c)| {
            let n: usize = c.iter().sum();
            (f, c.into_iter().map(|k| k as f64 / n as f64).collect())
        })
        .collect()
}

/// Accuracy of each synthetic family.
pub fn family_accuracy(records: &[SampleRecord]) -> BTreeMap<Family, f64> {
    let mut counts: BTreeMap<Family, (usize, usize)> = BTreeMap::new();
    for r in records {
        if let Some(f) = r.family {
            let e = counts.entry(f).or_default();
            e.0 += usize::from(r.correct);
            e.1 += 1;
        }
    }
    counts.into_iter().map(|(f, (c, n))| (f, c as f64 / n as f64)).collect()
}

/// Configuration of an ablated variant.
pub fn ablate(config: &TrainConfig, ablation: Ablation, fixed: Option<Strategy>) -> Result<TrainConfig> {
    let c = TrainConfig {
        ablation,
        fixed_strategy: fixed.or(config.fixed_strategy),
        ..config.clone()
    };
    c.validate()?;
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleEvaluation {
    pub accuracy: f64,
    pub member_accuracy: Vec<f64>,
    pub predictions: Vec<usize>,
}

/// Mean of the members' greedy answer distributions, then argmax.
pub fn ensemble_eval(members: &[Model], samples: &[Sample]) -> Result<EnsembleEvaluation> {
    if members.is_empty() {
        return Err(Error::Config("ensemble needs at least one member".into()));
    }
    let evals: Vec<Evaluation> = members
        .iter()
        .map(|m| evaluate(m, samples, EvalMode::Greedy))
        .collect::<Result<_>>()?;
    let mut correct = 0;
    let mut predictions = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let mut mean = vec![0.0; s.num_candidates()];
        for ev in &evals {
            for (m, p) in mean.iter_mut().zip(&ev.records[i].answer_dist) {
                *m += p / evals.len() as f64;
            }
        }
        let pred = argmax(&mean);
        correct += usize::from(pred == s.gold);
        predictions.push(pred);
    }
    Ok(EnsembleEvaluation {
        accuracy: correct as f64 / samples.len().max(1) as f64,
        member_accuracy: evals.iter().map(|e| e.accuracy).collect(),
        predictions,
    })
}
