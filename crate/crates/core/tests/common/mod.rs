#![allow(dead_code)]

use dfn::corpus::{gen_mixed, Sample};
use dfn::embed::Vocabulary;
use dfn::{Model, TrainConfig};

/// The acceptance-sized tiny network.
pub fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        hidden: 8,
        char_hidden: 4,
        char_dim: 4,
        word_dim: 6,
        perspectives: 2,
        state_dim: 12,
        t_max: 3,
        dropout: 0.0,
        seed,
        ..TrainConfig::default()
    }
}

/// Mixed synthetic samples over a 30-word content vocabulary.
pub fn tiny_corpus(per_family: usize, seed: u64) -> Vec<Sample> {
    gen_mixed(30, per_family, seed).unwrap()
}

pub fn tiny_model(config: TrainConfig, samples: &[Sample]) -> Model {
    Model::with_random_words(config, Vocabulary::build(samples)).unwrap()
}
