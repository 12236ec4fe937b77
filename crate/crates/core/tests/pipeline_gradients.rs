mod common;

use dfn::policy::{enumerate_with, sample_gradient};
use dfn::seqnet::gradcheck::{central_difference, relative_error, sample_coordinates};
use dfn::AdvantageForm;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Worst relative error between the surrogate gradient and `∓∇b` by central differences.
fn worst_error(form: AdvantageForm, seed: u64, coords: usize) -> (f64, String) {
    let samples = common::tiny_corpus(2, seed);
    let mut config = common::tiny_config(seed);
    config.advantage = form;
    let model = common::tiny_model(config, &samples);
    let sample = &samples[(seed as usize) % samples.len()];
    let (_, grads, trace) = sample_gradient(&model, &model.store, sample, None).unwrap();
    let b = trace.expected_reward();
    let scale = match form {
        AdvantageForm::Difference => -1.0,
        AdvantageForm::Ratio => -1.0 / b,
    };
    let mut store = model.store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    let mut worst = (0.0, String::new());
    for (id, idx) in sample_coordinates(&store, coords, &mut rng) {
        let numeric = scale
            * central_difference(&mut store, id, idx, 1e-5, |s| {
                enumerate_with(&model, s, sample).unwrap().expected_reward()
            });
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[idx]);
        let e = relative_error(analytic, numeric);
        if e > worst.0 {
            worst = (e, format!("{}[{idx}]: {analytic:e} vs {numeric:e}", store.name(id)));
        }
    }
    worst
}

#[test]
fn difference_surrogate_matches_expected_reward_gradient() {
    for seed in 0..3 {
        let (e, at) = worst_error(AdvantageForm::Difference, seed, 120);
        assert!(e <= 1e-4, "seed {seed}: rel err {e:e} at {at}");
    }
}

#[test]
fn ratio_surrogate_is_scaled_expected_reward_gradient() {
    for seed in 3..5 {
        let (e, at) = worst_error(AdvantageForm::Ratio, seed, 120);
        assert!(e <= 1e-4, "seed {seed}: rel err {e:e} at {at}");
    }
}
