//! Hyperparameters, ablation switches and the flat `key = value` config format.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{Strategy, NUM_STRATEGIES};

/// Which parts of the dynamic architecture are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    Full,
    /// Strategy gate removed; one fixed strategy for every sample.
    NoDf,
    /// Answer scoring module removed; scores come straight from the fusion output.
    NoMr,
    NoDfMr,
}

impl Ablation {
    pub fn dynamic_fusion(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoMr)
    }

    pub fn multi_step(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoDf)
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoDf => "no-df",
            Ablation::NoMr => "no-mr",
            Ablation::NoDfMr => "no-df-mr",
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no-df" => Ok(Ablation::NoDf),
            "no-mr" => Ok(Ablation::NoMr),
            "no-df-mr" => Ok(Ablation::NoDfMr),
            other => Err(Error::Config(format!(
                "unknown ablation {other:?} (expected full, no-df, no-mr, no-df-mr)"
            ))),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Advantage used to weight `∇ log π` in the surrogate loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageForm {
    /// `r/b − 1`; the gradient is `−∇b / b`.
    Ratio,
    /// `r − b`; the gradient is `−∇b`.
    Difference,
}

impl FromStr for AdvantageForm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ratio" => Ok(AdvantageForm::Ratio),
            "difference" => Ok(AdvantageForm::Difference),
            other => Err(Error::Config(format!(
                "unknown advantage {other:?} (expected ratio or difference)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Hidden size of every LSTM except the character LSTM.
    pub hidden: usize,
    pub char_hidden: usize,
    pub char_dim: usize,
    pub word_dim: usize,
    /// Number of matching perspectives `N`.
    pub perspectives: usize,
    /// Sharpness of the memory attention.
    pub lambda: f64,
    /// Maximum number of reasoning updates.
    pub t_max: usize,
    /// Width of the strategy output and reasoning state.
    pub state_dim: usize,
    pub dropout: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_passage: usize,
    pub max_question: usize,
    pub max_answer: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub fixed_strategy: Option<Strategy>,
    pub b_floor: f64,
    /// Evaluate termination before the first reasoning update.
    pub step_zero: bool,
    pub advantage: AdvantageForm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: 100,
            char_hidden: 50,
            char_dim: 20,
            word_dim: 300,
            perspectives: 10,
            lambda: 10.0,
            t_max: 5,
            state_dim: 300,
            dropout: 0.1,
            lr: 0.001,
            batch_size: 64,
            epochs: 20,
            max_passage: 500,
            max_question: 100,
            max_answer: 100,
            seed: 1,
            ablation: Ablation::Full,
            fixed_strategy: None,
            b_floor: 1e-6,
            step_zero: true,
            advantage: AdvantageForm::Ratio,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "hidden",
        "char_hidden",
        "char_dim",
        "word_dim",
        "perspectives",
        "lambda",
        "t_max",
        "state_dim",
        "strategies",
        "dropout",
        "lr",
        "batch_size",
        "epochs",
        "max_passage",
        "max_question",
        "max_answer",
        "seed",
        "ablation",
        "fixed_strategy",
        "b_floor",
        "step_zero",
        "advantage",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "hidden" => self.hidden = num(key, value)?,
            "char_hidden" => self.char_hidden = num(key, value)?,
            "char_dim" => self.char_dim = num(key, value)?,
            "word_dim" => self.word_dim = num(key, value)?,
            "perspectives" => self.perspectives = num(key, value)?,
            "lambda" => self.lambda = num(key, value)?,
            "t_max" => self.t_max = num(key, value)?,
            "state_dim" => self.state_dim = num(key, value)?,
            "strategies" => {
                let n: usize = num(key, value)?;
                if n != NUM_STRATEGIES {
                    return Err(Error::Config(format!(
                        "strategies: only {NUM_STRATEGIES} strategies are registered"
                    )));
                }
            }
            "dropout" => self.dropout = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "max_passage" => self.max_passage = num(key, value)?,
            "max_question" => self.max_question = num(key, value)?,
            "max_answer" => self.max_answer = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "ablation" => self.ablation = value.parse()?,
            "fixed_strategy" => {
                self.fixed_strategy = match value {
                    "" | "none" => None,
                    s => Some(s.parse()?),
                }
            }
            "b_floor" => self.b_floor = num(key, value)?,
            "step_zero" => self.step_zero = num(key, value)?,
            "advantage" => self.advantage = value.parse()?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key {other:?}; valid keys: {}",
                    Self::KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let fixed = self.fixed_strategy.map_or("none", Strategy::name);
        format!(
            "hidden = {}\nchar_hidden = {}\nchar_dim = {}\nword_dim = {}\nperspectives = {}\n\
             lambda = {}\nt_max = {}\nstate_dim = {}\nstrategies = {}\ndropout = {}\nlr = {}\n\
             batch_size = {}\nepochs = {}\nmax_passage = {}\nmax_question = {}\nmax_answer = {}\n\
             seed = {}\nablation = {}\nfixed_strategy = {}\nb_floor = {}\nstep_zero = {}\n\
             advantage = {}\n",
            self.hidden,
            self.char_hidden,
            self.char_dim,
            self.word_dim,
            self.perspectives,
            self.lambda,
            self.t_max,
            self.state_dim,
            NUM_STRATEGIES,
            self.dropout,
            self.lr,
            self.batch_size,
            self.epochs,
            self.max_passage,
            self.max_question,
            self.max_answer,
            self.seed,
            self.ablation,
            fixed,
            self.b_floor,
            self.step_zero,
            match self.advantage {
                AdvantageForm::Ratio => "ratio",
                AdvantageForm::Difference => "difference",
            }
        )
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("char_hidden", self.char_hidden),
            ("char_dim", self.char_dim),
            ("word_dim", self.word_dim),
            ("perspectives", self.perspectives),
            ("t_max", self.t_max),
            ("state_dim", self.state_dim),
            ("batch_size", self.batch_size),
            ("max_passage", self.max_passage),
            ("max_question", self.max_question),
            ("max_answer", self.max_answer),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("lr must be finite and non-negative".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be finite and non-negative".into()));
        }
        if !(self.b_floor > 0.0) {
            return Err(Error::Config("b_floor must be positive".into()));
        }
        match (self.ablation.dynamic_fusion(), self.fixed_strategy) {
            (false, None) => Err(Error::Config(format!(
                "ablation {} requires fixed_strategy",
                self.ablation
            ))),
            _ => Ok(()),
        }
    }
}
