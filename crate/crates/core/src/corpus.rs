//! Samples, tokenization, RACE ingestion, synthetic task families and batching.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stand-in token for a field whose text tokenizes to nothing.
pub const EMPTY_TOKEN: &str = "<empty>";

/// Blank marker used by cloze-style questions.
pub const BLANK: &str = "_";

/// One passage, one question and `r ≥ 2` candidate answers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    pub passage: Vec<String>,
    pub question: Vec<String>,
    pub candidates: Vec<Vec<String>>,
    pub gold: usize,
}

impl Sample {
    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.candidates.len() < 2 {
            return Err(format!("{}: fewer than two candidates", self.id));
        }
        if self.gold >= self.candidates.len() {
            return Err(format!("{}: gold index {} out of range", self.id, self.gold));
        }
        if self.passage.is_empty() || self.question.is_empty() {
            return Err(format!("{}: empty passage or question", self.id));
        }
        if self.candidates.iter().any(Vec::is_empty) {
            return Err(format!("{}: empty candidate", self.id));
        }
        Ok(())
    }

    pub fn question_contains(&self, word: &str) -> bool {
        self.question.iter().any(|t| t == word)
    }

    /// Same sample with candidates reordered so that new position `k` holds old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Sample {
        assert_eq!(perm.len(), self.candidates.len());
        let candidates = perm.iter().map(|&k| self.candidates[k].clone()).collect();
        let gold = perm.iter().position(|&k| k == self.gold).expect("perm is a permutation");
        Sample {
            candidates,
            gold,
            ..self.clone()
        }
    }
}

/// Lowercases and splits on whitespace; every character that is neither
/// alphanumeric nor whitespace becomes its own token (so `_` survives alone).
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in lower.chars() {
        if ch.is_alphanumeric() {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn tokenize_truncated(text: &str, max: usize) -> Vec<String> {
    let mut toks = tokenize(text);
    toks.truncate(max.max(1));
    if toks.is_empty() {
        toks.push(EMPTY_TOKEN.to_string());
    }
    toks
}

/// Length limits applied while converting raw text.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Truncation {
    pub passage: usize,
    pub question: usize,
    pub answer: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            passage: 500,
            question: 100,
            answer: 100,
        }
    }
}

/// One RACE file: an article with its questions, four options each, and answer letters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RaceRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub article: String,
    pub questions: Vec<String>,
    pub options: Vec<Vec<String>>,
    pub answers: Vec<String>,
}

impl RaceRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.questions.len();
        if self.options.len() != n || self.answers.len() != n {
            return Err(format!(
                "field lengths differ: {} questions, {} option lists, {} answers",
                n,
                self.options.len(),
                self.answers.len()
            ));
        }
        for (i, opts) in self.options.iter().enumerate() {
            if opts.len() != 4 {
                return Err(format!("question {i}: expected 4 options, got {}", opts.len()));
            }
        }
        for (i, a) in self.answers.iter().enumerate() {
            if answer_index(a).is_none() {
                return Err(format!("question {i}: answer {a:?} is not one of A-D"));
            }
        }
        Ok(())
    }

    /// One sample per question. Call [`RaceRecord::validate`] first.
    pub fn to_samples(&self, fallback_id: &str, trunc: Truncation) -> Vec<Sample> {
        let id = self.id.clone().unwrap_or_else(|| fallback_id.to_string());
        let passage = tokenize_truncated(&self.article, trunc.passage);
        self.questions
            .iter()
            .zip(&self.options)
            .zip(&self.answers)
            .enumerate()
            .map(|(i, ((q, opts), a))| Sample {
                id: format!("{id}#{i}"),
                family: None,
                passage: passage.clone(),
                question: tokenize_truncated(q, trunc.question),
                candidates: opts
                    .iter()
                    .map(|o| tokenize_truncated(o, trunc.answer))
                    .collect(),
                gold: answer_index(a).expect("validated answer letter"),
            })
            .collect()
    }
}

fn answer_index(letter: &str) -> Option<usize> {
    match letter.trim() {
        "A" => Some(0),
        "B" => Some(1),
        "C" => Some(2),
        "D" => Some(3),
        _ => None,
    }
}

/// What to do with a file that fails to parse or validate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OnMalformed {
    SkipAndWarn,
    Abort,
}

#[derive(Debug, Default)]
pub struct RaceLoad {
    pub samples: Vec<Sample>,
    pub passages: usize,
    pub skipped: Vec<Error>,
}

fn parse_race_file(path: &Path) -> Result<Vec<RaceRecord>> {
    let malformed = |reason: String| Error::MalformedRecord {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| malformed(format!("invalid JSON: {e}")))?;
    let items = match value {
        serde_json::Value::Array(items) => items,
        obj @ serde_json::Value::Object(_) => vec![obj],
        _ => return Err(malformed("expected a record object or an array of records".into())),
    };
    items
        .into_iter()
        .map(|v| {
            let rec: RaceRecord =
                serde_json::from_value(v).map_err(|e| malformed(e.to_string()))?;
            rec.validate().map_err(malformed)?;
            Ok(rec)
        })
        .collect()
}

/// Loads every RACE record file under `dir` (recursively, in path order).
pub fn load_race(dir: &Path, trunc: Truncation, policy: OnMalformed) -> Result<RaceLoad> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is not a directory", dir.display()),
        )));
    }
    let mut files: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| e.into_path())
        .filter(|p| {
            !p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with('.'))
        })
        .collect();
    files.sort();
    let mut load = RaceLoad::default();
    for path in files {
        match parse_race_file(&path) {
            Ok(records) => {
                let stem = path
                    .strip_prefix(dir)
                    .unwrap_or(&path)
                    .to_string_lossy()
                    .into_owned();
                for (k, rec) in records.iter().enumerate() {
                    let fallback = if records.len() == 1 {
                        stem.clone()
                    } else {
                        format!("{stem}[{k}]")
                    };
                    load.samples.extend(rec.to_samples(&fallback, trunc));
                    load.passages += 1;
                }
            }
            Err(e) => match policy {
                OnMalformed::Abort => return Err(e),
                OnMalformed::SkipAndWarn => {
                    log::warn!("skipping {e}");
                    load.skipped.push(e);
                }
            },
        }
    }
    Ok(load)
}

/// Synthetic question families, one per attention strategy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Question ends in a blank completed by a short span of one passage sentence.
    Cloze,
    /// Negated question over full-sentence candidates; the one contradicting the passage wins.
    Longneg,
    /// The answer pairs one word from each of two passage sentences.
    Entangle,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Cloze, Family::Longneg, Family::Entangle];

    pub fn name(self) -> &'static str {
        match self {
            Family::Cloze => "cloze",
            Family::Longneg => "longneg",
            Family::Entangle => "entangle",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cloze" => Ok(Family::Cloze),
            "longneg" => Ok(Family::Longneg),
            "entangle" => Ok(Family::Entangle),
            other => Err(Error::Config(format!("unknown family {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthSpec {
    pub family: Family,
    pub vocab_size: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Inclusive passage length range in sentences.
    pub sentences: (usize, usize),
}

impl SynthSpec {
    pub fn new(family: Family, vocab_size: usize, n_samples: usize, seed: u64) -> Self {
        Self {
            family,
            vocab_size,
            n_samples,
            seed,
            sentences: (5, 6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 20 {
            return Err(Error::Config("synthetic vocab_size must be at least 20".into()));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("synthetic n_samples must be at least 1".into()));
        }
        let (lo, hi) = self.sentences;
        if lo < 4 || hi < lo {
            return Err(Error::Config("synthetic passages need at least 4 sentences".into()));
        }
        if hi * SENTENCE_LEN + 4 > self.vocab_size {
            return Err(Error::Config(format!(
                "vocab_size {} too small for {hi} sentences of {SENTENCE_LEN} distinct words",
                self.vocab_size
            )));
        }
        Ok(())
    }
}

/// Content words per synthetic sentence (a period follows).
pub const SENTENCE_LEN: usize = 4;

const SYLLABLE_ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const SYLLABLE_VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Deterministic pseudo-word for content-vocabulary slot `i`.
pub fn content_word(i: usize) -> String {
    let n = SYLLABLE_ONSETS.len() * SYLLABLE_VOWELS.len();
    let syl = |k: usize| {
        format!(
            "{}{}",
            SYLLABLE_ONSETS[k % SYLLABLE_ONSETS.len()],
            SYLLABLE_VOWELS[(k / SYLLABLE_ONSETS.len()) % SYLLABLE_VOWELS.len()]
        )
    };
    let mut w = syl(i % n);
    w.push_str(&syl((i / n + 7 * i + 3) % n));
    if i >= n * n {
        w.push_str(&syl(i / (n * n)));
    }
    w
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn gen_one(family: Family, vocab: &[String], n_sent: usize, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>, Vec<Vec<String>>, usize) {
    // Passage words are drawn without replacement so co-occurrence is unambiguous.
    let mut pool: Vec<usize> = (0..vocab.len()).collect();
    pool.shuffle(rng);
    let sents: Vec<Vec<String>> = (0..n_sent)
        .map(|s| {
            pool[s * SENTENCE_LEN..(s + 1) * SENTENCE_LEN]
                .iter()
                .map(|&i| vocab[i].clone())
                .collect()
        })
        .collect();
    let unused: Vec<usize> = pool[n_sent * SENTENCE_LEN..].to_vec();
    let mut passage = Vec::new();
    for s in &sents {
        passage.extend(s.iter().cloned());
        passage.push(".".into());
    }
    let mut order: Vec<usize> = (0..n_sent).collect();
    order.shuffle(rng);

    let (question, mut candidates) = match family {
        Family::Cloze => {
            let target = &sents[order[0]];
            let mut q = target[..SENTENCE_LEN - 1].to_vec();
            q.push(BLANK.into());
            let cands: Vec<Vec<String>> = order[..4]
                .iter()
                .map(|&s| vec![sents[s][SENTENCE_LEN - 1].clone()])
                .collect();
            (q, cands)
        }
        Family::Longneg => {
            let q = if rng.random_bool(0.5) {
                words("which is not true ?")
            } else {
                words("all are true except ?")
            };
            let mut gold = sents[order[0]].clone();
            let pos = rng.random_range(0..SENTENCE_LEN);
            gold[pos] = vocab[*unused.choose(rng).expect("vocab larger than passage")].clone();
            let mut cands = vec![gold];
            for &s in &order[1..4] {
                cands.push(sents[s].clone());
            }
            (q, cands)
        }
        Family::Entangle => {
            let (sa, sb) = (&sents[order[0]], &sents[order[1]]);
            let pick = |s: &Vec<String>, rng: &mut ChaCha8Rng| -> (String, String) {
                let k = rng.random_range(0..SENTENCE_LEN - 1);
                (s[k].clone(), s[k + 1].clone())
            };
            let (qa, xa) = pick(sa, rng);
            let (qb, xb) = pick(sb, rng);
            let q = vec!["what".into(), "follows".into(), qa, "and".into(), qb, "?".into()];
            let other = |k: usize, rng: &mut ChaCha8Rng| sents[order[2 + k % (n_sent - 2)]].choose(rng).unwrap().clone();
            let z1 = other(0, rng);
            let z2 = other(1, rng);
            let z3 = other(2, rng);
            // either word order answers the question; distractors keep one or no successor
            let (first, second) = if rng.random_bool(0.5) { (xa.clone(), xb.clone()) } else { (xb.clone(), xa.clone()) };
            let cands = vec![
                vec![first, second],
                vec![xa, z1],
                vec![z2, xb],
                vec![z3.clone(), other(3, rng)],
            ];
            (q, cands)
        }
    };
    // gold sits at index 0 before shuffling
    let mut perm: Vec<usize> = (0..candidates.len()).collect();
    perm.shuffle(rng);
    let gold = perm.iter().position(|&k| k == 0).unwrap();
    candidates = perm.iter().map(|&k| candidates[k].clone()).collect();
    (passage, question, candidates, gold)
}

/// Generates `spec.n_samples` samples of one family, deterministic in `spec.seed`.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let vocab: Vec<String> = (0..spec.vocab_size).map(content_word).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((spec.family as u64 + 1) << 56));
    let (lo, hi) = spec.sentences;
    Ok((0..spec.n_samples)
        .map(|i| {
            let n_sent = rng.random_range(lo..=hi);
            let (passage, question, candidates, gold) = gen_one(spec.family, &vocab, n_sent, &mut rng);
            Sample {
                id: format!("{}-{}-{i}", spec.family, spec.seed),
                family: Some(spec.family),
                passage,
                question,
                candidates,
                gold,
            }
        })
        .collect())
}

/// Balanced corpus with `per_family` samples of each family, interleaved.
pub fn gen_mixed(vocab_size: usize, per_family: usize, seed: u64) -> Result<Vec<Sample>> {
    let parts: Vec<Vec<Sample>> = Family::ALL
        .iter()
        .map(|&f| gen_synthetic(&SynthSpec::new(f, vocab_size, per_family, seed)))
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(3 * per_family);
    for i in 0..per_family {
        for p in &parts {
            out.push(p[i].clone());
        }
    }
    Ok(out)
}

/// A `synth:` data source such as `synth:mixed,n=300,vocab=200,seed=1`.
/// The first field is a family name or `mixed`; omitted keys take the defaults
/// `n=300`, `vocab=200`, `seed=1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthSource {
    /// `None` generates a balanced mix of every family.
    pub family: Option<Family>,
    pub n: usize,
    pub vocab_size: usize,
    pub seed: u64,
}

impl FromStr for SynthSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let body = s.strip_prefix("synth:").unwrap_or(s);
        let mut fields = body.split(',').map(str::trim);
        let family = match fields.next().unwrap_or("") {
            "" | "mixed" => None,
            name => Some(name.parse()?),
        };
        let mut out = Self {
            family,
            n: 300,
            vocab_size: 200,
            seed: 1,
        };
        for field in fields {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("synth source: expected key=value, got {field:?}")))?;
            let bad = || Error::Config(format!("synth source: cannot parse {k}={v:?}"));
            match k {
                "n" => out.n = v.parse().map_err(|_| bad())?,
                "vocab" => out.vocab_size = v.parse().map_err(|_| bad())?,
                "seed" => out.seed = v.parse().map_err(|_| bad())?,
                other => return Err(Error::Config(format!("synth source: unknown key {other:?} (n, vocab, seed)"))),
            }
        }
        Ok(out)
    }
}

impl SynthSource {
    pub fn generate(&self) -> Result<Vec<Sample>> {
        match self.family {
            Some(f) => gen_synthetic(&SynthSpec::new(f, self.vocab_size, self.n, self.seed)),
            None => {
                let mut all = gen_mixed(self.vocab_size, self.n.div_ceil(Family::ALL.len()), self.seed)?;
                all.truncate(self.n);
                Ok(all)
            }
        }
    }
}

/// Loads samples from a `synth:` source, a RACE directory (malformed files are
/// skipped with a warning) or a JSONL file of samples.
pub fn load_source(source: &str, trunc: Truncation) -> Result<Vec<Sample>> {
    let samples = if source.starts_with("synth:") {
        source.parse::<SynthSource>()?.generate()?
    } else {
        let path = Path::new(source);
        if path.is_dir() {
            load_race(path, trunc, OnMalformed::SkipAndWarn)?.samples
        } else {
            read_jsonl(path)?
        }
    };
    if samples.is_empty() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no samples found in {source}"),
        )));
    }
    Ok(samples)
}

fn passage_sentences(passage: &[String]) -> Vec<&[String]> {
    passage
        .split(|t| t == ".")
        .filter(|s| !s.is_empty())
        .collect()
}

/// Independent re-check of a synthetic sample: the indices of candidates that
/// satisfy the family's question given only the passage text.
pub fn satisfying_candidates(sample: &Sample) -> Vec<usize> {
    let Some(family) = sample.family else {
        return Vec::new();
    };
    let sents = passage_sentences(&sample.passage);
    let passage_words: HashSet<&str> = sample.passage.iter().map(String::as_str).collect();
    let ok = |c: &Vec<String>| -> bool {
        match family {
            Family::Cloze => {
                let prefix: Vec<&String> = sample.question.iter().take_while(|t| *t != BLANK).collect();
                let mut span: Vec<&String> = prefix.clone();
                span.extend(c.iter());
                sample
                    .passage
                    .windows(span.len())
                    .any(|w| w.iter().zip(&span).all(|(a, b)| a == *b))
            }
            Family::Longneg => {
                // "not true": the candidate is not a passage sentence
                !sents.iter().any(|s| *s == c.as_slice())
                    || c.iter().any(|w| !passage_words.contains(w.as_str()))
            }
            Family::Entangle => {
                let (qa, qb) = (&sample.question[2], &sample.question[4]);
                let follows_question = |w: &String| {
                    sents
                        .iter()
                        .any(|s| s.windows(2).any(|p| (p[0] == *qa || p[0] == *qb) && p[1] == *w))
                };
                c.len() == 2 && c[0] != c[1] && c.iter().all(follows_question)
            }
        }
    };
    sample
        .candidates
        .iter()
        .enumerate()
        .filter(|(_, c)| ok(c))
        .map(|(i, _)| i)
        .collect()
}

pub fn write_jsonl(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            reason,
        };
        let s: Sample = serde_json::from_str(&line).map_err(|e| parse(e.to_string()))?;
        s.validate().map_err(parse)?;
        out.push(s);
    }
    Ok(out)
}

/// Shuffled mini-batches; the final partial batch is kept.
pub struct Batches<'a> {
    samples: &'a [Sample],
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl<'a> Iterator for Batches<'a> {
    type Item = Vec<&'a Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].iter().map(|&i| &self.samples[i]).collect();
        self.pos = end;
        Some(batch)
    }
}

pub fn batches(samples: &[Sample], batch_size: usize, seed: u64) -> Batches<'_> {
    assert!(batch_size >= 1, "batch_size must be at least 1");
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Batches {
        samples,
        order,
        batch_size,
        pos: 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_splits_punctuation() {
        assert_eq!(tokenize("The cat sat."), vec!["the", "cat", "sat", "."]);
        assert_eq!(
            tokenize("we can infer that _ ."),
            vec!["we", "can", "infer", "that", "_", "."]
        );
        assert_eq!(tokenize("a_b"), vec!["a", "_", "b"]);
        assert!(tokenize("   ").is_empty());
    }

    #[test]
    fn answer_letter_outside_range_is_malformed() {
        let rec = RaceRecord {
            id: None,
            article: "x".into(),
            questions: vec!["q".into()],
            options: vec![vec!["a".into(), "b".into(), "c".into(), "d".into()]],
            answers: vec!["E".into()],
        };
        assert!(rec.validate().unwrap_err().contains("\"E\""));
    }

    #[test]
    fn option_count_checked() {
        let rec = RaceRecord {
            id: None,
            article: "x".into(),
            questions: vec!["q".into()],
            options: vec![vec!["a".into(), "b".into(), "c".into()]],
            answers: vec!["A".into()],
        };
        assert!(rec.validate().is_err());
    }

    #[test]
    fn truncation_limits_and_never_empties() {
        let rec = RaceRecord {
            id: Some("r".into()),
            article: "w ".repeat(600),
            questions: vec!["q ".repeat(150)],
            options: vec![vec!["".into(), "b".into(), "c".into(), "d".into()]],
            answers: vec!["B".into()],
        };
        let s = &rec.to_samples("f", Truncation::default())[0];
        assert_eq!(s.passage.len(), 500);
        assert_eq!(s.question.len(), 100);
        assert_eq!(s.candidates[0], vec![EMPTY_TOKEN]);
        assert_eq!(s.gold, 1);
        s.validate().unwrap();
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SynthSpec::new(Family::Cloze, 50, 3, 7);
        assert_eq!(gen_synthetic(&spec).unwrap(), gen_synthetic(&spec).unwrap());
    }

    #[test]
    fn synthetic_has_unique_satisfying_candidate() {
        for family in Family::ALL {
            let samples = gen_synthetic(&SynthSpec::new(family, 60, 200, 3)).unwrap();
            for s in &samples {
                s.validate().unwrap();
                assert_eq!(satisfying_candidates(s), vec![s.gold], "{family}: {s:?}");
            }
        }
    }

    #[test]
    fn longneg_questions_are_negated() {
        let samples = gen_synthetic(&SynthSpec::new(Family::Longneg, 40, 100, 1)).unwrap();
        assert!(samples
            .iter()
            .all(|s| s.question_contains("not") || s.question_contains("except")));
    }

    #[test]
    fn small_vocab_rejected() {
        assert!(gen_synthetic(&SynthSpec::new(Family::Cloze, 19, 1, 0)).is_err());
        assert!(gen_synthetic(&SynthSpec::new(Family::Cloze, 50, 0, 0)).is_err());
    }

    #[test]
    fn content_words_distinct() {
        let w: HashSet<String> = (0..5000).map(content_word).collect();
        assert_eq!(w.len(), 5000);
    }

    #[test]
    fn batch_sizes_and_determinism() {
        let samples = gen_mixed(40, 44, 0).unwrap();
        let samples = &samples[..130];
        let sizes: Vec<usize> = batches(samples, 64, 9).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![64, 64, 2]);
        let ids = |seed| -> Vec<String> {
            batches(samples, 64, seed).flatten().map(|s| s.id.clone()).collect()
        };
        assert_eq!(ids(9), ids(9));
        assert_ne!(ids(9), ids(10));
    }

    #[test]
    fn permuted_tracks_gold() {
        let s = gen_synthetic(&SynthSpec::new(Family::Cloze, 40, 1, 2)).unwrap().remove(0);
        let p = s.permuted(&[3, 2, 1, 0]);
        assert_eq!(p.candidates[p.gold], s.candidates[s.gold]);
    }
}
