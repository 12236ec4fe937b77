//! Acceptance criteria C1 to C8, one PASS/FAIL/SKIP line each.
//!
//! Runs as a plain binary (`harness = false`) so the report reaches the
//! console under `cargo test`. Set `DFN_ACCEPT=C1,C3` to run a subset and
//! `DFN_RACE_DIR` to a RACE root (with `train/`, `dev/`, `test/`) to enable C7.

mod common;

use std::collections::BTreeMap;
use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use dfn::corpus::{gen_mixed, load_race, Family, OnMalformed, Truncation};
use dfn::embed::Vocabulary;
use dfn::policy::{
    self, enumerate, enumerate_with, evaluate, family_strategy_shares, keyword_table, sample_gradient, EvalMode,
    Evaluation,
};
use dfn::seqnet::gradcheck::{central_difference, relative_error, sample_coordinates};
use dfn::{checkpoint, Ablation, AdvantageForm, Model, Sample, Strategy, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];
/// Epoch budget of the synthetic runs; training may continue up to
/// `MAX_EPOCHS` only while the accuracy target is still unmet.
const MIN_EPOCHS: usize = 15;
const MAX_EPOCHS: usize = 30;
const TARGET_ACCURACY: f64 = 0.90;
const SYNTH_VOCAB: usize = 200;

struct Report {
    lines: Vec<(String, Option<bool>, String)>,
}

impl Report {
    fn record(&mut self, id: &str, outcome: Option<bool>, detail: String) {
        let tag = match outcome {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("[{tag}] {id} {detail}");
        self.lines.push((id.to_string(), outcome, detail));
    }
}

fn selected(id: &str) -> bool {
    match std::env::var("DFN_ACCEPT") {
        Ok(list) => list.split(',').any(|s| s.trim().eq_ignore_ascii_case(id)),
        Err(_) => true,
    }
}

fn c1_exact_gradients(report: &mut Report) {
    let t0 = Instant::now();
    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    let mut tensors = 0;
    for seed in 0..2u64 {
        let samples = common::tiny_corpus(2, seed);
        let mut config = common::tiny_config(seed);
        config.advantage = AdvantageForm::Difference;
        let model = common::tiny_model(config, &samples);
        let sample = &samples[seed as usize + 1];
        let (_, grads, _) = sample_gradient(&model, &model.store, sample, None).unwrap();
        let mut store = model.store.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0xc1 + seed);
        let coords = sample_coordinates(&store, 120, &mut rng);
        tensors = tensors.max(store.trainable_ids().count());
        for (id, idx) in coords {
            let numeric = -central_difference(&mut store, id, idx, 1e-5, |s| {
                enumerate_with(&model, s, sample).unwrap().expected_reward()
            });
            let analytic = grads.get(id).map_or(0.0, |g| g.data()[idx]);
            let e = relative_error(analytic, numeric);
            checked += 1;
            if e > worst.0 {
                worst = (e, format!("{}[{idx}]", store.name(id)));
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = worst.0 <= 1e-4 && checked >= 200 && secs < 120.0;
    report.record(
        "C1",
        Some(ok),
        format!(
            "exact gradients: max rel err {:.2e} at {} over {checked} coordinates covering all {tensors} tensors \
             (need <= 1e-4, >= 200), {secs:.1}s (need < 120s)",
            worst.0, worst.1
        ),
    );
}

fn c2_probability_measure(report: &mut Report) {
    let mut pairs = 0;
    let (mut total_dev, mut law_dev, mut adv_dev) = (0.0f64, 0.0f64, 0.0f64);
    let mut b_in_range = true;
    for seed in 0..20u64 {
        let samples = common::tiny_corpus(2, 100 + seed);
        let mut config = common::tiny_config(100 + seed);
        config.step_zero = seed % 2 == 0;
        let model = common::tiny_model(config, &samples);
        for s in samples.iter().take(5) {
            let trace = enumerate(&model, s).unwrap();
            total_dev = total_dev.max((trace.total_probability() - 1.0).abs());
            for b in &trace.branches {
                law_dev = law_dev.max((b.stop_law().iter().sum::<f64>() - 1.0).abs());
            }
            for form in [AdvantageForm::Ratio, AdvantageForm::Difference] {
                let sum: f64 = trace.advantage_weights(form, 1e-6).iter().map(|(_, w)| w).sum();
                adv_dev = adv_dev.max(sum.abs());
            }
            let b = trace.expected_reward();
            b_in_range &= b > 0.0 && b <= 1.0;
            pairs += 1;
        }
    }
    let ok = pairs >= 100 && total_dev <= 1e-9 && law_dev <= 1e-9 && adv_dev <= 1e-9 && b_in_range;
    report.record(
        "C2",
        Some(ok),
        format!(
            "probability measure over {pairs} pairs: |sum-1| {total_dev:.1e}, stop law |sum-1| {law_dev:.1e}, \
             |expected advantage| {adv_dev:.1e} (each need <= 1e-9), 0 < b <= 1: {b_in_range}"
        ),
    );
}

fn c3_monte_carlo(report: &mut Report) {
    let n = 10_000;
    let mut worst_z = 0.0f64;
    let mut failures = 0;
    for seed in 0..10u64 {
        let samples = common::tiny_corpus(2, 200 + seed);
        let model = common::tiny_model(common::tiny_config(200 + seed), &samples);
        let trace = enumerate(&model, &samples[seed as usize % samples.len()]).unwrap();
        let b = trace.expected_reward();
        let mut rng = ChaCha8Rng::seed_from_u64(0xc3 ^ seed);
        let hits = (0..n).filter(|_| trace.sample(&mut rng).reward == 1.0).count();
        let sigma = (b * (1.0 - b) / n as f64).sqrt();
        let z = (hits as f64 / n as f64 - b).abs() / sigma;
        worst_z = worst_z.max(z);
        failures += usize::from(z > 3.0);
    }
    report.record(
        "C3",
        Some(failures == 0),
        format!("monte carlo: 10 models x {n} episodes, worst |mean - b| = {worst_z:.2} sigma (need <= 3)"),
    );
}

fn synth_config(seed: u64, ablation: Ablation) -> TrainConfig {
    TrainConfig {
        hidden: 32,
        char_hidden: 16,
        char_dim: 8,
        word_dim: 32,
        perspectives: 5,
        state_dim: 64,
        t_max: 5,
        batch_size: 32,
        epochs: MAX_EPOCHS,
        seed,
        ablation,
        fixed_strategy: (!ablation.dynamic_fusion()).then_some(Strategy::AnswerOnly),
        ..TrainConfig::default()
    }
}

struct SynthData {
    train: Vec<Sample>,
    test: Vec<Sample>,
    vocab: Vocabulary,
}

fn synth_data(seed: u64) -> SynthData {
    let train = gen_mixed(SYNTH_VOCAB, 500, 1000 + seed).unwrap();
    let test = gen_mixed(SYNTH_VOCAB, 100, 9000 + seed).unwrap();
    let vocab = Vocabulary::build(train.iter().chain(&test));
    SynthData { train, test, vocab }
}

struct Run {
    model: Model,
    /// Held-out greedy accuracy after each epoch.
    curve: Vec<f64>,
    secs: f64,
}

/// Trains until `epochs` epochs have passed, or with `until_target` until the
/// target is met after at least `MIN_EPOCHS` (capped at `MAX_EPOCHS`).
fn synth_run(data: &SynthData, config: TrainConfig, epochs: usize, until_target: bool) -> Run {
    let t0 = Instant::now();
    let mut model = Model::with_random_words(config, data.vocab.clone()).unwrap();
    model.config.epochs = if until_target { MAX_EPOCHS } else { epochs };
    let mut curve = Vec::new();
    policy::train(&mut model, &data.train, Some(&data.test), |m| {
        if m.split != "eval" {
            return ControlFlow::Continue(());
        }
        curve.push(m.accuracy);
        let met = curve.iter().any(|&a| a >= TARGET_ACCURACY);
        if until_target && curve.len() >= MIN_EPOCHS && met {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    })
    .unwrap();
    Run {
        model,
        curve,
        secs: t0.elapsed().as_secs_f64(),
    }
}

fn fmt_curve(c: &[f64]) -> String {
    c.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>().join(" ")
}

fn designed(f: Family) -> Strategy {
    match f {
        Family::Cloze => Strategy::Integral,
        Family::Longneg => Strategy::AnswerOnly,
        Family::Entangle => Strategy::Entangled,
    }
}

struct FullRun {
    data: SynthData,
    run: Run,
    eval: Evaluation,
}

fn c4_c5(report: &mut Report, runs: &[FullRun]) {
    let mut lines = Vec::new();
    let mut passing = 0;
    for (seed, r) in SEEDS.iter().zip(runs) {
        let first = r.run.curve.iter().position(|&a| a >= TARGET_ACCURACY).map(|e| e + 1);
        let ok = first.is_some() && r.run.secs < 15.0 * 60.0;
        passing += usize::from(ok);
        lines.push(format!(
            "seed {seed}: first epoch >= 0.90: {}, final {:.3}, {:.0}s [{}]",
            first.map_or("never".to_string(), |e| e.to_string()),
            r.eval.accuracy,
            r.run.secs,
            fmt_curve(&r.run.curve)
        ));
    }
    report.record(
        "C4",
        Some(passing >= 2),
        format!(
            "synthetic learning: {passing}/3 seeds reach >= 0.90 greedy test accuracy within {MAX_EPOCHS} epochs \
             and 15 min on one core (need >= 2); {}",
            lines.join("; ")
        ),
    );

    let mut lines = Vec::new();
    let mut passing = 0;
    for (seed, r) in SEEDS.iter().zip(runs) {
        let shares = family_strategy_shares(&r.eval.records);
        let hits: BTreeMap<Family, f64> = shares.iter().map(|(&f, s)| (f, s[designed(f).index()])).collect();
        let specialized = hits.values().filter(|&&h| h >= 0.70).count();
        let row = &keyword_table(&r.data.test, &r.eval.records, &["_"])[0];
        let blank_integral = row.dominant_strategy() == Some(Strategy::Integral);
        let ok = specialized >= 2 && blank_integral;
        passing += usize::from(ok);
        let detail: Vec<String> = hits.iter().map(|(f, h)| format!("{f}->{} {h:.2}", designed(*f))).collect();
        lines.push(format!(
            "seed {seed}: {} | \"_\" row integral share {:.2}",
            detail.join(", "),
            row.strategy_share[Strategy::Integral.index()]
        ));
    }
    report.record(
        "C5",
        Some(passing >= 2),
        format!(
            "strategy specialization: {passing}/3 trained models have >= 2 families on their designed strategy \
             at >= 0.70 and an integral-dominated \"_\" row (need >= 2); {}",
            lines.join("; ")
        ),
    );
}

fn c6_ablations(report: &mut Report, runs: &[FullRun]) {
    let mut deltas = Vec::new();
    for (ablation, name) in [(Ablation::NoDf, "no-DF (answer-only)"), (Ablation::NoMr, "no-MR")] {
        let mut accs = Vec::new();
        for (&seed, r) in SEEDS.iter().zip(runs) {
            let run = synth_run(&r.data, synth_config(seed, ablation), r.run.curve.len(), false);
            let acc = evaluate(&run.model, &r.data.test, EvalMode::Greedy).unwrap().accuracy;
            accs.push(acc);
        }
        let full: f64 = runs.iter().map(|r| r.eval.accuracy).sum::<f64>() / runs.len() as f64;
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        deltas.push((name, 100.0 * (full - mean), fmt_curve(&accs)));
    }
    let ok = deltas.iter().all(|(_, d, _)| *d >= 2.0);
    let full: Vec<f64> = runs.iter().map(|r| r.eval.accuracy).collect();
    let detail: Vec<String> = deltas
        .iter()
        .map(|(name, d, accs)| format!("full - {name} = {d:+.1} points [{accs}]"))
        .collect();
    report.record(
        "C6",
        Some(ok),
        format!(
            "ablation direction over matched seeds and epochs: full [{}]; {} (each need >= +2.0)",
            fmt_curve(&full),
            detail.join("; ")
        ),
    );
}

fn c7_race_counts(report: &mut Report) {
    let Ok(root) = std::env::var("DFN_RACE_DIR") else {
        report.record("C7", None, "RACE counts: DFN_RACE_DIR not set, check skipped".into());
        return;
    };
    let expected = [("train", 25_137, 87_866), ("dev", 1_389, 4_887), ("test", 1_407, 4_934)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (split, passages, questions) in expected {
        let dir = Path::new(&root).join(split);
        match load_race(&dir, Truncation::default(), OnMalformed::Abort) {
            Ok(load) => {
                ok &= load.passages == passages && load.samples.len() == questions;
                parts.push(format!("{split} {}/{} (want {passages}/{questions})", load.passages, load.samples.len()));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{split}: {e}"));
            }
        }
    }
    report.record("C7", Some(ok), format!("RACE counts: {}", parts.join(", ")));
}

fn epoch_one_loss(seed: u64) -> f64 {
    let samples = common::tiny_corpus(6, seed);
    let mut config = common::tiny_config(seed);
    config.dropout = 0.2;
    config.epochs = 1;
    config.batch_size = 4;
    let mut model = common::tiny_model(config, &samples);
    let metrics = policy::train(&mut model, &samples, None, |_| ControlFlow::Continue(())).unwrap();
    metrics[0].loss
}

fn c8_determinism(report: &mut Report, runs: &[FullRun]) {
    let (a, b) = (epoch_one_loss(8), epoch_one_loss(8));
    let same_loss = a.to_bits() == b.to_bits();
    let mut round_trips = Vec::new();
    let models: Vec<(&Model, &[Sample])> = if runs.is_empty() {
        Vec::new()
    } else {
        vec![(&runs[0].run.model, &runs[0].data.test[..])]
    };
    let tiny_samples = common::tiny_corpus(4, 8);
    let tiny = common::tiny_model(common::tiny_config(8), &tiny_samples);
    for (model, samples) in models.into_iter().chain([(&tiny, &tiny_samples[..])]) {
        let dir = tempfile::tempdir().unwrap();
        let before = evaluate(model, samples, EvalMode::Greedy).unwrap();
        checkpoint::save(model, dir.path()).unwrap();
        let loaded = checkpoint::load(dir.path()).unwrap();
        let after = evaluate(&loaded, samples, EvalMode::Greedy).unwrap();
        round_trips.push(before == after && loaded.same_parameters(model));
    }
    let ok = same_loss && round_trips.iter().all(|&r| r);
    report.record(
        "C8",
        Some(ok),
        format!(
            "determinism: epoch-1 loss {a:e} vs {b:e} bit-identical {same_loss}; \
             save/load/eval bitwise equal on {} model(s): {round_trips:?}",
            round_trips.len()
        ),
    );
}

fn ensemble_check(report: &mut Report, runs: &[FullRun]) {
    // members are scored on the first seed's test corpus
    let test = &runs[0].data.test;
    let members: Vec<Model> = runs.iter().map(|r| r.run.model.clone()).collect();
    let ev = policy::ensemble_eval(&members, test).unwrap();
    let mean = ev.member_accuracy.iter().sum::<f64>() / ev.member_accuracy.len() as f64;
    report.record(
        "ensemble",
        Some(ev.accuracy >= mean - 0.01),
        format!(
            "3-member ensemble {:.3} vs mean member {mean:.3} (need >= mean - 0.01), members {}",
            ev.accuracy,
            fmt_curve(&ev.member_accuracy)
        ),
    );
}

fn main() {
    let mut report = Report { lines: Vec::new() };
    let t0 = Instant::now();
    if selected("C1") {
        c1_exact_gradients(&mut report);
    }
    if selected("C2") {
        c2_probability_measure(&mut report);
    }
    if selected("C3") {
        c3_monte_carlo(&mut report);
    }
    let needs_runs = ["C4", "C5", "C6", "ensemble"].iter().any(|c| selected(c));
    let runs: Vec<FullRun> = if needs_runs {
        SEEDS
            .iter()
            .map(|&seed| {
                let data = synth_data(seed);
                let run = synth_run(&data, synth_config(seed, Ablation::Full), MAX_EPOCHS, true);
                let eval = evaluate(&run.model, &data.test, EvalMode::Greedy).unwrap();
                eprintln!("full run seed {seed}: {:.0}s [{}]", run.secs, fmt_curve(&run.curve));
                FullRun { data, run, eval }
            })
            .collect()
    } else {
        Vec::new()
    };
    if selected("C4") || selected("C5") {
        c4_c5(&mut report, &runs);
    }
    if selected("C6") {
        c6_ablations(&mut report, &runs);
    }
    if selected("C7") {
        c7_race_counts(&mut report);
    }
    if selected("C8") {
        c8_determinism(&mut report, &runs);
    }
    if selected("ensemble") {
        ensemble_check(&mut report, &runs);
    }
    let failed: Vec<&str> = report
        .lines
        .iter()
        .filter(|(_, o, _)| *o == Some(false))
        .map(|(id, _, _)| id.as_str())
        .collect();
    println!(
        "acceptance: {} checked, {} failed {:?}, {:.0}s",
        report.lines.len(),
        failed.len(),
        failed,
        t0.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
