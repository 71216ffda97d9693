//! Interpolated absolute-discounting n-gram model over units.
//!
//! For a history `h` seen `c(h)` times with `N1+(h)` distinct continuations,
//!
//! ```text
//! p(w | h) = max(c(h, w) - d, 0) / c(h) + d * N1+(h) / c(h) * p(w | h')
//! ```
//!
//! where `h'` drops the oldest symbol, the recursion bottoms out in a uniform
//! distribution over the `V + 1` outcomes, and histories never seen in
//! training fall through to `h'` unchanged.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tokenizer::TokenPolicy;

use super::{UnitLanguageModel, Vocabulary};

/// Counts gathered for one history.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContextCounts {
    pub total: u64,
    pub continuations: BTreeMap<u32, u64>,
}

impl ContextCounts {
    pub fn distinct(&self) -> usize {
        self.continuations.len()
    }

    pub fn count(&self, symbol: u32) -> u64 {
        self.continuations.get(&symbol).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramModel {
    order: usize,
    discount: f64,
    vocab: Vocabulary,
    policy: Option<TokenPolicy>,
    /// `contexts[k]` maps every history of length `k` to its counts.
    contexts: Vec<BTreeMap<Vec<u32>, ContextCounts>>,
}

impl NgramModel {
    /// Count all orders `1..=order` over sequences padded with `order - 1`
    /// begin markers and one end marker.
    pub fn train(
        corpus: &[&[u32]],
        vocab: Vocabulary,
        order: usize,
        discount: f64,
        policy: TokenPolicy,
    ) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if order == 0 {
            return Err(Error::InvariantViolation("n-gram order must be at least 1".into()));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvariantViolation(format!("discount must lie in (0, 1), got {discount}")));
        }
        let mut contexts = vec![BTreeMap::<Vec<u32>, ContextCounts>::new(); order];
        for seq in corpus {
            vocab.check_tokens(seq)?;
            let padded = pad(seq, vocab, order);
            for i in (order - 1)..padded.len() {
                let target = padded[i];
                for (k, table) in contexts.iter_mut().enumerate() {
                    let entry = table.entry(padded[i - k..i].to_vec()).or_default();
                    entry.total += 1;
                    *entry.continuations.entry(target).or_default() += 1;
                }
            }
        }
        Ok(Self { order, discount, vocab, policy: Some(policy), contexts })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn context(&self, history: &[u32]) -> Option<&ContextCounts> {
        self.contexts.get(history.len())?.get(history)
    }

    /// All histories of length `k` with their counts, in sorted order.
    pub fn contexts_of_len(&self, k: usize) -> &BTreeMap<Vec<u32>, ContextCounts> {
        &self.contexts[k]
    }

    /// Probability of `symbol` (a unit or EOS) after `history`, which may be
    /// any length; only its last `order - 1` symbols are used.
    pub fn prob(&self, symbol: u32, history: &[u32]) -> f64 {
        let max_ctx = (self.order - 1).min(history.len());
        let mut p = 1.0 / self.vocab.num_outcomes() as f64;
        for k in 0..=max_ctx {
            let h = &history[history.len() - k..];
            if let Some(c) = self.contexts[k].get(h) {
                let total = c.total as f64;
                let seen = (c.count(symbol) as f64 - self.discount).max(0.0);
                p = seen / total + self.discount * c.distinct() as f64 / total * p;
            }
        }
        p
    }

    /// Backoff mass `d * N1+(h) / c(h)` of a seen history.
    pub fn backoff_weight(&self, history: &[u32]) -> Option<f64> {
        self.context(history).map(|c| self.discount * c.distinct() as f64 / c.total as f64)
    }

    fn distribution(&self, history: &[u32]) -> Vec<f64> {
        let eos = self.vocab.eos();
        (0..self.vocab.size() as u32)
            .chain(std::iter::once(eos))
            .map(|w| self.prob(w, history).ln())
            .collect()
    }

    fn histories(&self, tokens: &[u32]) -> Vec<u32> {
        let mut h = vec![self.vocab.bos(); self.order - 1];
        h.extend_from_slice(tokens);
        h
    }
}

pub(crate) fn pad(seq: &[u32], vocab: Vocabulary, order: usize) -> Vec<u32> {
    let mut padded = vec![vocab.bos(); order - 1];
    padded.extend_from_slice(seq);
    padded.push(vocab.eos());
    padded
}

impl UnitLanguageModel for NgramModel {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn policy(&self) -> Option<TokenPolicy> {
        self.policy
    }

    fn backend(&self) -> &'static str {
        "ngram"
    }

    fn step_log_distributions(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        let hist = self.histories(tokens);
        (0..=tokens.len()).map(|i| self.distribution(&hist[..self.order - 1 + i])).collect()
    }

    fn sequence_logprobs(&self, tokens: &[u32]) -> Vec<f64> {
        let hist = self.histories(tokens);
        tokens
            .iter()
            .copied()
            .chain(std::iter::once(self.vocab.eos()))
            .enumerate()
            .map(|(i, w)| self.prob(w, &hist[..self.order - 1 + i]).ln())
            .collect()
    }
}
