//! Lexicon encoding (frozen word vectors plus a character LSTM) and the shared
//! context BiLSTM over passage, question and question+answer sequences.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::seqnet::{bilstm_many, dropout, lstm_last, lstm_last_many, BiLstmParams, BiSeq, LstmParams, NodeId, ParamId, ParamStore, Tape, Tensor};

pub const UNK_WORD: &str = "<unk>";

/// Word and character indices. Index 0 of both maps is the unknown entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    words: Vec<String>,
    chars: Vec<char>,
    #[serde(skip)]
    word_index: HashMap<String, usize>,
    #[serde(skip)]
    char_index: HashMap<char, usize>,
}

impl Vocabulary {
    /// Builds from every token of `samples`, in first-occurrence order.
    pub fn build<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Self {
        let mut words = vec![UNK_WORD.to_string()];
        let mut chars = vec!['\0'];
        let mut seen_w: HashMap<String, usize> = HashMap::new();
        let mut seen_c: HashMap<char, usize> = HashMap::new();
        for s in samples {
            let seqs = std::iter::once(&s.passage)
                .chain(std::iter::once(&s.question))
                .chain(s.candidates.iter());
            for tok in seqs.flatten() {
                if !seen_w.contains_key(tok) {
                    seen_w.insert(tok.clone(), words.len());
                    words.push(tok.clone());
                }
                for ch in tok.chars() {
                    if let std::collections::hash_map::Entry::Vacant(e) = seen_c.entry(ch) {
                        e.insert(chars.len());
                        chars.push(ch);
                    }
                }
            }
        }
        Self::from_parts(words, chars)
    }

    pub fn from_parts(words: Vec<String>, chars: Vec<char>) -> Self {
        let mut v = Self {
            words,
            chars,
            word_index: HashMap::new(),
            char_index: HashMap::new(),
        };
        v.reindex();
        v
    }

    /// Rebuilds the lookup maps; needed after deserializing.
    pub fn reindex(&mut self) {
        self.word_index = self.words.iter().cloned().enumerate().map(|(i, w)| (w, i)).collect();
        self.char_index = self.chars.iter().enumerate().skip(1).map(|(i, &c)| (c, i)).collect();
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn word_id(&self, tok: &str) -> usize {
        self.word_index.get(tok).copied().unwrap_or(0)
    }

    pub fn char_id(&self, ch: char) -> usize {
        self.char_index.get(&ch).copied().unwrap_or(0)
    }
}

/// Reads a GloVe-style text file (`word v1 .. v_dim` per line) into a
/// `|V| × dim` matrix. Rows for words absent from the file stay zero.
pub fn load_pretrained(path: &Path, vocab: &Vocabulary, dim: usize) -> Result<Tensor> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut table = Tensor::zeros(vocab.num_words(), dim);
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        };
        let values = fields
            .map(|f| f.parse::<f64>().map_err(|e| parse_err(format!("{f:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != dim {
            return Err(parse_err(format!("expected {dim} values, found {}", values.len())));
        }
        let id = vocab.word_id(word);
        if id != 0 {
            table.row_mut(id).copy_from_slice(&values);
        }
    }
    Ok(table)
}

/// Independent normal word vectors for corpora without pretrained embeddings.
/// The unknown row stays zero.
pub fn random_word_vectors(vocab: &Vocabulary, dim: usize, std: f64, rng: &mut impl Rng) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    let mut table = Tensor::zeros(vocab.num_words(), dim);
    for i in 1..vocab.num_words() {
        for v in table.row_mut(i) {
            *v = normal.sample(rng);
        }
    }
    table
}

/// Lexicon and context encoder parameters.
#[derive(Clone, Copy, Debug)]
pub struct EmbedParams {
    /// Frozen word table.
    pub words: ParamId,
    pub chars: ParamId,
    pub char_lstm: LstmParams,
    /// The shared context BiLSTM.
    pub context: BiLstmParams,
    pub word_dim: usize,
}

pub const CHAR_INIT_BOUND: f64 = 0.1;

impl EmbedParams {
    pub fn new(
        store: &mut ParamStore,
        word_table: Tensor,
        num_chars: usize,
        char_dim: usize,
        char_hidden: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let word_dim = word_table.cols();
        let words = store.add("embed.words", word_table, true);
        let chars = store.add_uniform("embed.chars", num_chars, char_dim, CHAR_INIT_BOUND, rng);
        let char_lstm = LstmParams::new(store, "embed.char_lstm", char_dim, char_hidden, rng)?;
        let context = BiLstmParams::new(store, "context", word_dim + char_hidden, hidden, rng)?;
        Ok(Self {
            words,
            chars,
            char_lstm,
            context,
            word_dim,
        })
    }

    pub fn lexicon_dim(&self) -> usize {
        self.word_dim + self.char_lstm.hidden
    }
}

/// Per-tape encoder state: memoizes character encodings by word.
pub struct Encoder<'a> {
    params: &'a EmbedParams,
    vocab: &'a Vocabulary,
    char_cache: HashMap<String, NodeId>,
}

impl<'a> Encoder<'a> {
    pub fn new(params: &'a EmbedParams, vocab: &'a Vocabulary) -> Self {
        Self {
            params,
            vocab,
            char_cache: HashMap::new(),
        }
    }

    /// Final state of the character LSTM over `word` (`1 × char_hidden`).
    pub fn char_encode(&mut self, tape: &mut Tape, word: &str) -> Result<NodeId> {
        if let Some(&n) = self.char_cache.get(word) {
            return Ok(n);
        }
        let idx: Vec<usize> = word.chars().map(|c| self.vocab.char_id(c)).collect();
        if idx.is_empty() {
            return Err(Error::Shape("char_encode on an empty word".into()));
        }
        let table = tape.param(self.params.chars);
        let xs = tape.gather_rows(table, idx);
        let h = lstm_last(tape, xs, &self.params.char_lstm)?;
        self.char_cache.insert(word.to_string(), h);
        Ok(h)
    }

    /// Encodes every not yet cached word of `words` in one batched character pass.
    pub fn prepare<'w>(&mut self, tape: &mut Tape, words: impl IntoIterator<Item = &'w String>) -> Result<()> {
        let mut fresh: Vec<&str> = Vec::new();
        let mut seen = HashSet::new();
        for w in words {
            if !self.char_cache.contains_key(w.as_str()) && seen.insert(w.as_str()) {
                if w.is_empty() {
                    return Err(Error::Shape("char_encode on an empty word".into()));
                }
                fresh.push(w);
            }
        }
        if fresh.is_empty() {
            return Ok(());
        }
        let table = tape.param(self.params.chars);
        let xs: Vec<NodeId> = fresh
            .iter()
            .map(|w| {
                let idx = w.chars().map(|c| self.vocab.char_id(c)).collect();
                tape.gather_rows(table, idx)
            })
            .collect();
        let hs = lstm_last_many(tape, &xs, &self.params.char_lstm)?;
        for (w, h) in fresh.into_iter().zip(hs) {
            self.char_cache.insert(w.to_string(), h);
        }
        Ok(())
    }

    /// `L × (word_dim + char_hidden)`: word vector then character encoding per token.
    pub fn lexicon_encode(&mut self, tape: &mut Tape, tokens: &[String]) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(Error::Shape("lexicon_encode on an empty sequence".into()));
        }
        let table = tape.store().get(self.params.words);
        let mut data = Vec::with_capacity(tokens.len() * self.params.word_dim);
        for t in tokens {
            data.extend_from_slice(table.row(self.vocab.word_id(t)));
        }
        let words = tape.constant(Tensor::from_vec(tokens.len(), self.params.word_dim, data));
        let chars: Vec<NodeId> = tokens
            .iter()
            .map(|t| self.char_encode(tape, t))
            .collect::<Result<_>>()?;
        let chars = tape.stack_rows(&chars);
        Ok(tape.concat_cols(&[words, chars]))
    }
}

/// Context encodings of one sample. `qa[j]` is the joint encoding of the
/// question followed by candidate `j`; `a[j]` is its last `l_a^j` positions.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub q: BiSeq,
    pub p: BiSeq,
    pub qa: Vec<BiSeq>,
    pub a: Vec<BiSeq>,
}

fn drop_seq(tape: &mut Tape, s: BiSeq, rate: f64, rng: &mut Option<&mut ChaCha8Rng>) -> Result<BiSeq> {
    let f = dropout(tape, s.fwd, rate, rng.as_deref_mut());
    let b = dropout(tape, s.bwd, rate, rng.as_deref_mut());
    BiSeq::new(tape, f, b)
}

/// Runs the shared context BiLSTM over P, Q and every Q+A_j. Dropout is
/// applied to lexicon and context outputs when `rng` is given.
pub fn context_encode(
    tape: &mut Tape,
    enc: &mut Encoder,
    sample: &Sample,
    rate: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Encoded> {
    let ctx = enc.params.context;
    enc.prepare(
        tape,
        sample.question.iter().chain(&sample.passage).chain(sample.candidates.iter().flatten()),
    )?;
    let q_lex = enc.lexicon_encode(tape, &sample.question)?;
    let q_lex = dropout(tape, q_lex, rate, rng.as_deref_mut());
    let p_lex = enc.lexicon_encode(tape, &sample.passage)?;
    let p_lex = dropout(tape, p_lex, rate, rng.as_deref_mut());
    let mut inputs = vec![q_lex, p_lex];
    for cand in &sample.candidates {
        let a_lex = enc.lexicon_encode(tape, cand)?;
        let a_lex = dropout(tape, a_lex, rate, rng.as_deref_mut());
        inputs.push(tape.stack_rows(&[q_lex, a_lex]));
    }

    let mut seqs = bilstm_many(tape, &inputs, &ctx)?.into_iter();
    let q = drop_seq(tape, seqs.next().unwrap(), rate, &mut rng)?;
    let p = drop_seq(tape, seqs.next().unwrap(), rate, &mut rng)?;
    let l_q = sample.question.len();
    let mut qa = Vec::with_capacity(sample.candidates.len());
    let mut a = Vec::with_capacity(sample.candidates.len());
    for (s, cand) in seqs.zip(&sample.candidates) {
        let s = drop_seq(tape, s, rate, &mut rng)?;
        a.push(s.slice(tape, l_q, cand.len())?);
        qa.push(s);
    }
    Ok(Encoded { q, p, qa, a })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic, Family, SynthSpec};
    use rand::SeedableRng;
    use std::io::Write;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn sample() -> Sample {
        Sample {
            id: "s".into(),
            family: None,
            passage: toks("the cat sat on the mat ."),
            question: toks("where did the cat sit ?"),
            candidates: vec![toks("mat"), toks("on the hat")],
            gold: 0,
        }
    }

    fn setup(seed: u64) -> (ParamStore, EmbedParams, Vocabulary) {
        let s = sample();
        let vocab = Vocabulary::build([&s]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = random_word_vectors(&vocab, 6, 1.0, &mut rng);
        let mut store = ParamStore::new();
        let p = EmbedParams::new(&mut store, table, vocab.num_chars(), 3, 4, 5, &mut rng).unwrap();
        (store, p, vocab)
    }

    #[test]
    fn vocabulary_is_bijective_with_unknown_at_zero() {
        let (_, _, v) = setup(0);
        assert_eq!(v.word_id(UNK_WORD), 0);
        assert_eq!(v.word_id("never-seen"), 0);
        for (i, w) in v.words().iter().enumerate() {
            assert_eq!(v.word_id(w), i);
        }
        assert_eq!(v.char_id('§'), 0);
    }

    #[test]
    fn pretrained_rows_copied_and_oov_zero() {
        let (_, _, v) = setup(0);
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "cat 0.5 1 2").unwrap();
        writeln!(f, "zebra 3 3 3").unwrap();
        let t = load_pretrained(f.path(), &v, 3).unwrap();
        assert_eq!(t.row(v.word_id("cat")), &[0.5, 1.0, 2.0]);
        assert_eq!(t.row(v.word_id("mat")), &[0.0, 0.0, 0.0]);

        let mut bad = tempfile::NamedTempFile::new().unwrap();
        writeln!(bad, "cat 1 2 3").unwrap();
        writeln!(bad, "mat 1 2").unwrap();
        match load_pretrained(bad.path(), &v, 3) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn zero_char_params_give_zero_encoding() {
        let (mut store, p, v) = setup(1);
        for id in [p.char_lstm.w_x, p.char_lstm.w_h, p.char_lstm.b] {
            store.get_mut(id).scale_assign(0.0);
        }
        let mut tape = Tape::new(&store);
        let mut enc = Encoder::new(&p, &v);
        let h = enc.char_encode(&mut tape, "cat").unwrap();
        assert!(tape.value(h).data().iter().all(|&x| x == 0.0));
        let lex = enc.lexicon_encode(&mut tape, &toks("qwerty")).unwrap();
        assert!(tape.value(lex).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn one_character_word_is_one_cell_step() {
        let (store, p, v) = setup(2);
        let mut tape = Tape::new(&store);
        let mut enc = Encoder::new(&p, &v);
        let h = enc.char_encode(&mut tape, "a").unwrap();
        let table = tape.param(p.chars);
        let x = tape.gather_rows(table, vec![v.char_id('a')]);
        let (h2, _) = crate::seqnet::lstm_cell(&mut tape, x, None, &p.char_lstm).unwrap();
        assert_eq!(tape.value(h), tape.value(h2));
    }

    #[test]
    fn lexicon_word_slice_is_table_row() {
        let (store, p, v) = setup(3);
        let mut tape = Tape::new(&store);
        let mut enc = Encoder::new(&p, &v);
        let lex = enc.lexicon_encode(&mut tape, &toks("cat sat")).unwrap();
        let val = tape.value(lex);
        assert_eq!(val.shape(), (2, 10));
        assert_eq!(&val.row(0)[..6], store.get(p.words).row(v.word_id("cat")));
    }

    #[test]
    fn context_lengths_and_eval_determinism() {
        let (store, p, v) = setup(4);
        let s = sample();
        let run = || {
            let mut tape = Tape::new(&store);
            let mut enc = Encoder::new(&p, &v);
            let e = context_encode(&mut tape, &mut enc, &s, 0.5, None).unwrap();
            assert_eq!((e.q.len, e.p.len), (6, 7));
            assert_eq!(e.qa[0].len, 7);
            assert_eq!(e.qa[1].len, 9);
            assert_eq!(e.a[1].len, 3);
            tape.value(e.qa[1].bwd).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn joint_encoding_differs_from_question_only_backward() {
        let (store, p, v) = setup(5);
        let s = sample();
        let mut tape = Tape::new(&store);
        let mut enc = Encoder::new(&p, &v);
        let e = context_encode(&mut tape, &mut enc, &s, 0.0, None).unwrap();
        let prefix = e.qa[0].slice(&mut tape, 0, 6).unwrap();
        // the forward LSTM is causal, so the prefix matches; the backward one sees the answer
        assert_eq!(tape.value(prefix.fwd), tape.value(e.q.fwd));
        assert_ne!(tape.value(prefix.bwd), tape.value(e.q.bwd));
    }

    #[test]
    fn synthetic_vocab_covers_corpus() {
        let samples = gen_synthetic(&SynthSpec::new(Family::Entangle, 30, 20, 1)).unwrap();
        let v = Vocabulary::build(&samples);
        for s in &samples {
            assert!(s.passage.iter().all(|t| v.word_id(t) != 0));
        }
    }
}
