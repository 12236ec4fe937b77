//! A complete network instance: configuration, vocabulary, parameters, and the
//! forward graph of one sample.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::corpus::Sample;
use crate::embed::{context_encode, random_word_vectors, EmbedParams, Encoder, Vocabulary};
use crate::error::{Error, Result};
use crate::fusion::{fuse, strategy_gate, FusionParams, Strategy};
use crate::reasoner::{direct_scores, gen_memory, rollout, ReasonerParams, Rollout};
use crate::seqnet::{argmax, NodeId, ParamStore, Tape, Tensor};

/// Standard deviation of generated word vectors.
pub const RANDOM_WORD_STD: f64 = 1.0;

#[derive(Clone, Copy, Debug)]
pub struct ModelParams {
    pub embed: EmbedParams,
    pub fusion: FusionParams,
    pub reasoner: ReasonerParams,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: TrainConfig,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub params: ModelParams,
}

/// Which strategy branches a forward pass builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branches {
    /// Every strategy the configuration allows.
    All,
    /// Only the gate's most likely strategy.
    Greedy,
}

/// One strategy's branch of the forward graph.
#[derive(Clone, Debug)]
pub struct BranchGraph {
    pub strategy: Strategy,
    pub rollout: Rollout,
}

#[derive(Clone, Debug)]
pub struct ForwardGraph {
    /// Gate log-probabilities over all strategies; `None` when fusion is fixed.
    pub gate_logp: Option<NodeId>,
    pub branches: Vec<BranchGraph>,
}

impl Model {
    /// Parameters are initialized from `config.seed`; the word table is frozen.
    pub fn new(config: TrainConfig, vocab: Vocabulary, word_table: Tensor) -> Result<Self> {
        config.validate()?;
        if word_table.rows() != vocab.num_words() || word_table.cols() != config.word_dim {
            return Err(Error::Shape(format!(
                "word table {:?} does not match vocabulary {} x word_dim {}",
                word_table.shape(),
                vocab.num_words(),
                config.word_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let c = &config;
        let embed = EmbedParams::new(&mut store, word_table, vocab.num_chars(), c.char_dim, c.char_hidden, c.hidden, &mut rng)?;
        let fusion = FusionParams::new(&mut store, c.hidden, c.perspectives, c.state_dim, &mut rng)?;
        let reasoner = ReasonerParams::new(&mut store, c.hidden, c.perspectives, c.state_dim, c.lambda, &mut rng)?;
        store.quantize_f32();
        Ok(Self {
            config,
            vocab,
            store,
            params: ModelParams { embed, fusion, reasoner },
        })
    }

    /// Like [`Model::new`] with normal random word vectors drawn from a stream
    /// derived from `config.seed`.
    pub fn with_random_words(config: TrainConfig, vocab: Vocabulary) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_3070);
        let table = random_word_vectors(&vocab, config.word_dim, RANDOM_WORD_STD, &mut rng);
        Self::new(config, vocab, table)
    }

    /// Strategies an episode can use under the current ablation.
    pub fn strategies(&self) -> Vec<Strategy> {
        if self.config.ablation.dynamic_fusion() {
            Strategy::ALL.to_vec()
        } else {
            vec![self.config.fixed_strategy.expect("validated config")]
        }
    }

    /// Builds the forward graph of `sample` on `tape` (whose store may differ
    /// from `self.store` as long as it has the same layout). `rng` enables dropout.
    pub fn forward(
        &self,
        tape: &mut Tape,
        sample: &Sample,
        branches: Branches,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardGraph> {
        sample.validate().map_err(Error::Shape)?;
        let c = &self.config;
        let p = &self.params;
        let rate = c.dropout;
        let mut enc = Encoder::new(&p.embed, &self.vocab);
        let e = context_encode(tape, &mut enc, sample, rate, rng.as_deref_mut())?;

        let gate_logp = if c.ablation.dynamic_fusion() {
            Some(strategy_gate(tape, &e.q, &p.fusion)?)
        } else {
            None
        };
        let strategies = match (branches, gate_logp) {
            (Branches::Greedy, Some(lp)) => vec![Strategy::from_index(argmax(tape.value(lp).data()))?],
            _ => self.strategies(),
        };

        let mem = if c.ablation.multi_step() {
            Some(gen_memory(tape, &e.q, &e.p, &p.reasoner, rate, rng.as_deref_mut())?)
        } else {
            None
        };
        let mut out = Vec::with_capacity(strategies.len());
        for g in strategies {
            let s0 = fuse(tape, &e, g, &p.fusion, rate, rng.as_deref_mut())?;
            let r = match mem {
                Some(m) => rollout(tape, m, s0, &p.reasoner, c.t_max, c.step_zero)?,
                None => direct_scores(tape, s0, &p.reasoner)?,
            };
            out.push(BranchGraph { strategy: g, rollout: r });
        }
        Ok(ForwardGraph {
            gate_logp,
            branches: out,
        })
    }

    /// Tensor data of `other` equals this model's, name by name.
    pub fn same_parameters(&self, other: &Model) -> bool {
        self.store.len() == other.store.len()
            && self
                .store
                .ids()
                .all(|id| self.store.name(id) == other.store.name(id) && self.store.get(id) == other.store.get(id))
    }
}
