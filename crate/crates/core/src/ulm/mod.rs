//! Unit language models: autoregressive distributions over discrete units.
//!
//! Every backend predicts over `V + 1` outcomes (the `V` units followed by
//! end-of-sequence) and conditions on a begin-of-sequence marker plus the
//! units seen so far. All log-probabilities are natural logs.

pub mod arpa;
pub mod ngram;
pub mod rnn;

use std::path::Path;

use crate::error::{Error, Result};
use crate::tokenizer::{TokenPolicy, TokenSequence};

pub use arpa::BackoffModel;
pub use ngram::NgramModel;
pub use rnn::{RnnConfig, RnnModel};

/// Unit inventory plus the two boundary symbols.
///
/// Units are `0..V`, `bos = V`, `eos = V + 1`. In probability vectors the
/// end-of-sequence outcome sits at index `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    size: usize,
}

impl Vocabulary {
    pub fn new(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvariantViolation("vocabulary must contain at least one unit".into()));
        }
        Ok(Self { size })
    }

    /// Number of units `V`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bos(&self) -> u32 {
        self.size as u32
    }

    pub fn eos(&self) -> u32 {
        self.size as u32 + 1
    }

    /// Number of predictable outcomes, `V + 1`.
    pub fn num_outcomes(&self) -> usize {
        self.size + 1
    }

    /// Position of a unit or EOS symbol in an outcome vector.
    pub fn outcome_index(&self, symbol: u32) -> usize {
        if symbol == self.eos() {
            self.size
        } else {
            debug_assert!((symbol as usize) < self.size, "bos is never predicted");
            symbol as usize
        }
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<()> {
        match tokens.iter().find(|&&t| t as usize >= self.size) {
            Some(&token) => Err(Error::TokenOutOfRange { token, vocab_size: self.size }),
            None => Ok(()),
        }
    }
}

/// An autoregressive model over discrete units.
pub trait UnitLanguageModel: Send + Sync {
    fn vocab(&self) -> Vocabulary;

    /// The repeat policy of the training data, when known.
    fn policy(&self) -> Option<TokenPolicy>;

    fn backend(&self) -> &'static str;

    /// Log-distributions over the `V + 1` outcomes at each of the `T + 1`
    /// positions of `tokens` (the last one predicts end-of-sequence).
    fn step_log_distributions(&self, tokens: &[u32]) -> Vec<Vec<f64>>;

    /// `ln p(d_i | d_<i)` for every token followed by `ln p(eos | d)`.
    fn sequence_logprobs(&self, tokens: &[u32]) -> Vec<f64> {
        let vocab = self.vocab();
        let dists = self.step_log_distributions(tokens);
        tokens
            .iter()
            .copied()
            .chain(std::iter::once(vocab.eos()))
            .zip(&dists)
            .map(|(sym, dist)| dist[vocab.outcome_index(sym)])
            .collect()
    }
}

/// Log-softmax of `logp / temperature` over one outcome vector.
pub fn temper(log_dist: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = log_dist.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|s| s - lse).collect()
}

fn check_scoring_inputs(lm: &dyn UnitLanguageModel, ts: &TokenSequence, temperature: f64) -> Result<()> {
    if ts.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvariantViolation(format!("temperature must be positive, got {temperature}")));
    }
    let vocab = lm.vocab();
    if ts.vocab_size() != vocab.size() {
        return Err(Error::ComponentMismatch(format!(
            "tokens use V={} but the language model has V={}",
            ts.vocab_size(),
            vocab.size()
        )));
    }
    if let Some(model) = lm.policy() {
        if model != ts.policy() {
            return Err(Error::PolicyMismatch { model, tokens: ts.policy() });
        }
    }
    vocab.check_tokens(ts.tokens())
}

/// Per-position log-probabilities including the end-of-sequence term, which
/// is the last element.
pub fn cond_logprobs_with_eos(lm: &dyn UnitLanguageModel, ts: &TokenSequence, temperature: f64) -> Result<Vec<f64>> {
    check_scoring_inputs(lm, ts, temperature)?;
    if temperature == 1.0 {
        return Ok(lm.sequence_logprobs(ts.tokens()));
    }
    let vocab = lm.vocab();
    let dists = lm.step_log_distributions(ts.tokens());
    Ok(ts
        .tokens()
        .iter()
        .copied()
        .chain(std::iter::once(vocab.eos()))
        .zip(&dists)
        .map(|(sym, dist)| temper(dist, temperature)[vocab.outcome_index(sym)])
        .collect())
}

/// `ln p(d_i | d_<i)` for `i = 1..T`, optionally tempered by raising each
/// step's distribution to `1 / temperature` and renormalizing.
pub fn cond_logprobs(lm: &dyn UnitLanguageModel, ts: &TokenSequence, temperature: f64) -> Result<Vec<f64>> {
    let mut lp = cond_logprobs_with_eos(lm, ts, temperature)?;
    lp.pop();
    Ok(lp)
}

/// Training-time settings for both backends.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainConfig {
    Ngram { order: usize, discount: f64 },
    Rnn(RnnConfig),
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::Ngram { order: 3, discount: 0.75 }
    }
}

/// A trained or loaded model of either backend.
pub enum UnitLm {
    Ngram(NgramModel),
    Backoff(BackoffModel),
    Rnn(RnnModel),
}

impl UnitLm {
    pub fn as_model(&self) -> &dyn UnitLanguageModel {
        match self {
            UnitLm::Ngram(m) => m,
            UnitLm::Backoff(m) => m,
            UnitLm::Rnn(m) => m,
        }
    }

    /// One-line human readable summary used by `info`.
    pub fn describe(&self) -> String {
        let policy = |p: Option<TokenPolicy>| p.map_or("unknown".to_string(), |p| p.to_string());
        match self {
            UnitLm::Ngram(m) => format!(
                "backend=ngram V={} order={} discount={} policy={}",
                m.vocab().size(),
                m.order(),
                m.discount(),
                policy(m.policy())
            ),
            UnitLm::Backoff(m) => format!(
                "backend=ngram V={} order={} policy={}",
                m.vocab().size(),
                m.order(),
                policy(m.policy())
            ),
            UnitLm::Rnn(m) => format!(
                "backend=rnn V={} E={} H={} layers={} policy={}",
                m.vocab().size(),
                m.embed_dim(),
                m.hidden(),
                m.num_layers(),
                policy(m.policy())
            ),
        }
    }
}

/// Train a model of the configured backend.
pub fn train(corpus: &[TokenSequence], vocab: Vocabulary, cfg: &TrainConfig) -> Result<UnitLm> {
    let policy = corpus.first().ok_or(Error::EmptyCorpus)?.policy();
    if corpus.iter().any(|ts| ts.policy() != policy) {
        return Err(Error::InvariantViolation("corpus mixes token policies".into()));
    }
    let seqs: Vec<&[u32]> = corpus.iter().map(TokenSequence::tokens).collect();
    match cfg {
        TrainConfig::Ngram { order, discount } => {
            Ok(UnitLm::Ngram(NgramModel::train(&seqs, vocab, *order, *discount, policy)?))
        }
        TrainConfig::Rnn(rc) => Ok(UnitLm::Rnn(rnn::train_rnn(&seqs, vocab, rc, policy)?.0)),
    }
}

/// Persist a model: n-grams as ARPA text, recurrent models as `SLMR` binary.
pub fn save_lm(lm: &UnitLm, path: impl AsRef<Path>) -> Result<()> {
    match lm {
        UnitLm::Ngram(m) => std::fs::write(path, arpa::write_arpa(m))?,
        UnitLm::Backoff(m) => std::fs::write(path, arpa::write_backoff(m))?,
        UnitLm::Rnn(m) => std::fs::write(path, rnn::encode_rnn(m))?,
    }
    Ok(())
}

/// Load either format, detected from the leading bytes.
pub fn load_lm(path: impl AsRef<Path>) -> Result<UnitLm> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"SLMR") {
        return Ok(UnitLm::Rnn(rnn::decode_rnn(&bytes)?));
    }
    let text = String::from_utf8(bytes)
        .map_err(|_| Error::MalformedArpa("file is neither SLMR binary nor UTF-8 text".into()))?;
    Ok(UnitLm::Backoff(arpa::parse_arpa(&text)?))
}
