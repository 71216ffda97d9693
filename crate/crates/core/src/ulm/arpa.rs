//! ARPA back-off text format.
//!
//! Interpolated absolute discounting maps exactly onto back-off form: a seen
//! n-gram stores its interpolated probability, a seen history stores its
//! leftover mass as the back-off weight, and everything else recurses to the
//! shorter history. Units are written as decimal ids, with `<s>` and `</s>`
//! for the boundaries. Probabilities are log10 on disk and natural log in
//! memory.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tokenizer::TokenPolicy;

use super::ngram::NgramModel;
use super::{UnitLanguageModel, Vocabulary};

const BOS: &str = "<s>";
const EOS: &str = "</s>";
/// Placeholder log10 probability for entries that are never predicted.
const NEVER: f64 = -99.0;

/// One ARPA line: log10 probability and optional log10 back-off weight.
type Entry = (f64, Option<f64>);

/// A model read back from ARPA text.
#[derive(Debug, Clone)]
pub struct BackoffModel {
    order: usize,
    vocab: Vocabulary,
    policy: Option<TokenPolicy>,
    /// `tables[k]` holds n-grams of length `k + 1`, natural-log valued.
    tables: Vec<HashMap<Vec<u32>, (f64, f64)>>,
}

fn symbol_text(sym: u32, vocab: Vocabulary) -> String {
    if sym == vocab.bos() {
        BOS.to_string()
    } else if sym == vocab.eos() {
        EOS.to_string()
    } else {
        sym.to_string()
    }
}

fn render(sections: &[BTreeMap<Vec<u32>, Entry>], vocab: Vocabulary, header: &str) -> String {
    let mut out = String::new();
    out.push_str(header);
    out.push_str("\n\\data\\\n");
    for (k, s) in sections.iter().enumerate() {
        let _ = writeln!(out, "ngram {}={}", k + 1, s.len());
    }
    for (k, s) in sections.iter().enumerate() {
        let _ = write!(out, "\n\\{}-grams:\n", k + 1);
        for (gram, (logp, bow)) in s {
            let words: Vec<String> = gram.iter().map(|&w| symbol_text(w, vocab)).collect();
            let _ = write!(out, "{logp:.10}\t{}", words.join(" "));
            if let Some(b) = bow {
                let _ = write!(out, "\t{b:.10}");
            }
            out.push('\n');
        }
    }
    out.push_str("\n\\end\\\n");
    out
}

fn header_line(vocab: Vocabulary, order: usize, policy: Option<TokenPolicy>) -> String {
    let policy = policy.map_or("unknown".to_string(), |p| p.to_string());
    format!("# speechlmscore unit-lm version=1 vocab={} order={order} policy={policy}", vocab.size())
}

/// Serialize a trained n-gram model.
pub fn write_arpa(model: &NgramModel) -> String {
    let vocab = model.vocab();
    let order = model.order();
    let mut sections: Vec<BTreeMap<Vec<u32>, Entry>> = vec![BTreeMap::new(); order];
    let bow = |gram: &[u32]| {
        if gram.len() < order {
            model.backoff_weight(gram).map(f64::log10)
        } else {
            None
        }
    };

    // Every outcome appears as a unigram so lookups never fall off the end.
    for w in (0..vocab.size() as u32).chain(std::iter::once(vocab.eos())) {
        sections[0].insert(vec![w], (model.prob(w, &[]).log10(), bow(&[w])));
    }
    sections[0].insert(vec![vocab.bos()], (NEVER, bow(&[vocab.bos()])));

    for k in 1..order {
        for (hist, counts) in model.contexts_of_len(k) {
            for &w in counts.continuations.keys() {
                let mut gram = hist.clone();
                gram.push(w);
                let entry = (model.prob(w, hist).log10(), bow(&gram));
                sections[k].insert(gram, entry);
            }
        }
    }
    // Histories ending in <s> are never predicted but still carry back-off mass.
    for k in 2..order {
        for hist in model.contexts_of_len(k).keys() {
            sections[k - 1].entry(hist.clone()).or_insert_with(|| (NEVER, bow(hist)));
        }
    }
    render(&sections, vocab, &header_line(vocab, order, model.policy()))
}

/// Serialize a model that was itself loaded from ARPA.
pub fn write_backoff(model: &BackoffModel) -> String {
    let ln10 = std::f64::consts::LN_10;
    let sections: Vec<BTreeMap<Vec<u32>, Entry>> = model
        .tables
        .iter()
        .enumerate()
        .map(|(k, t)| {
            t.iter()
                .map(|(g, &(lp, bow))| {
                    let lp10 = if lp == f64::NEG_INFINITY { NEVER } else { lp / ln10 };
                    let has_bow = k + 1 < model.order && bow != 0.0;
                    (g.clone(), (lp10, has_bow.then_some(bow / ln10)))
                })
                .collect()
        })
        .collect();
    render(&sections, model.vocab, &header_line(model.vocab, model.order, model.policy))
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedArpa(msg.into())
}

/// Parse ARPA text. Unit tokens must be the decimal ids `0..V`, all of which
/// must be listed among the unigrams.
pub fn parse_arpa(text: &str) -> Result<BackoffModel> {
    let mut policy = None;
    let mut lines = text.lines().map(str::trim).peekable();

    // Preamble: anything before \data\, with our own header as an optional hint.
    loop {
        let line = lines.next().ok_or_else(|| malformed("missing \\data\\ section"))?;
        if line == "\\data\\" {
            break;
        }
        if let Some(rest) = line.strip_prefix("# speechlmscore unit-lm") {
            for kv in rest.split_whitespace() {
                if let Some(p) = kv.strip_prefix("policy=") {
                    policy = p.parse().ok();
                }
            }
        }
    }

    let mut declared: Vec<usize> = Vec::new();
    while let Some(&line) = lines.peek() {
        if line.is_empty() {
            lines.next();
            continue;
        }
        let Some(rest) = line.strip_prefix("ngram ") else { break };
        let (k, n) = rest.split_once('=').ok_or_else(|| malformed(format!("bad count line {line:?}")))?;
        let k: usize = k.trim().parse().map_err(|_| malformed(format!("bad count line {line:?}")))?;
        let n: usize = n.trim().parse().map_err(|_| malformed(format!("bad count line {line:?}")))?;
        if k != declared.len() + 1 {
            return Err(malformed(format!("n-gram orders out of sequence at {line:?}")));
        }
        declared.push(n);
        lines.next();
    }
    let order = declared.len();
    if order == 0 {
        return Err(malformed("no n-gram counts declared"));
    }

    let mut raw: Vec<Vec<(Vec<String>, f64, Option<f64>)>> = vec![Vec::new(); order];
    let mut current: Option<usize> = None;
    let mut ended = false;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        if line == "\\end\\" {
            ended = true;
            break;
        }
        if let Some(head) = line.strip_prefix('\\') {
            let k: usize = head
                .strip_suffix("-grams:")
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| malformed(format!("unexpected section header {line:?}")))?;
            if k == 0 || k > order {
                return Err(malformed(format!("section {k}-grams not declared")));
            }
            current = Some(k - 1);
            continue;
        }
        let k = current.ok_or_else(|| malformed(format!("entry outside any section: {line:?}")))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != k + 2 && fields.len() != k + 3 {
            return Err(malformed(format!("{}-gram entry has {} fields: {line:?}", k + 1, fields.len())));
        }
        let logp: f64 = fields[0].parse().map_err(|_| malformed(format!("bad probability in {line:?}")))?;
        let words = fields[1..=k + 1].iter().map(|s| s.to_string()).collect();
        let bow = match fields.get(k + 2) {
            Some(b) => Some(b.parse::<f64>().map_err(|_| malformed(format!("bad back-off in {line:?}")))?),
            None => None,
        };
        raw[k].push((words, logp, bow));
    }
    if !ended {
        return Err(malformed("missing \\end\\ marker"));
    }
    for (k, (entries, &n)) in raw.iter().zip(&declared).enumerate() {
        if entries.len() != n {
            return Err(malformed(format!("declared {n} {}-grams but found {}", k + 1, entries.len())));
        }
    }

    // Vocabulary: the numeric unigrams, which must be exactly 0..V.
    let mut units: Vec<u32> = Vec::new();
    for (words, _, _) in &raw[0] {
        let w = &words[0];
        if w != BOS && w != EOS {
            units.push(w.parse().map_err(|_| malformed(format!("non-numeric unit {w:?}")))?);
        }
    }
    units.sort_unstable();
    if units.iter().enumerate().any(|(i, &u)| i as u32 != u) {
        return Err(malformed("unigram units are not exactly 0..V"));
    }
    let vocab = Vocabulary::new(units.len()).map_err(|_| malformed("no units listed"))?;

    let symbol = |w: &str| -> Result<u32> {
        match w {
            BOS => Ok(vocab.bos()),
            EOS => Ok(vocab.eos()),
            _ => {
                let id: u32 = w.parse().map_err(|_| malformed(format!("unknown word {w:?}")))?;
                vocab.check_tokens(&[id]).map_err(|_| malformed(format!("unit {id} not in unigrams")))?;
                Ok(id)
            }
        }
    };
    let ln10 = std::f64::consts::LN_10;
    let mut tables = vec![HashMap::new(); order];
    for (k, entries) in raw.into_iter().enumerate() {
        for (words, logp, bow) in entries {
            let gram = words.iter().map(|w| symbol(w)).collect::<Result<Vec<u32>>>()?;
            let lp = if logp <= NEVER { f64::NEG_INFINITY } else { logp * ln10 };
            if tables[k].insert(gram, (lp, bow.unwrap_or(0.0) * ln10)).is_some() {
                return Err(malformed(format!("duplicate {}-gram {words:?}", k + 1)));
            }
        }
    }
    if !tables[0].contains_key(&vec![vocab.eos()]) {
        return Err(malformed("</s> missing from unigrams"));
    }
    Ok(BackoffModel { order, vocab, policy, tables })
}

impl BackoffModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn num_entries(&self, n: usize) -> usize {
        self.tables[n - 1].len()
    }

    /// Natural-log probability of `symbol` after `history` using standard
    /// back-off lookup.
    pub fn logprob(&self, symbol: u32, history: &[u32]) -> f64 {
        let max_ctx = (self.order - 1).min(history.len());
        let mut acc = 0.0;
        let mut gram = Vec::with_capacity(max_ctx + 1);
        for k in (0..=max_ctx).rev() {
            let ctx = &history[history.len() - k..];
            gram.clear();
            gram.extend_from_slice(ctx);
            gram.push(symbol);
            if let Some(&(lp, _)) = self.tables[k].get(&gram) {
                return acc + lp;
            }
            if k > 0 {
                if let Some(&(_, bow)) = self.tables[k - 1].get(ctx) {
                    acc += bow;
                }
            }
        }
        f64::NEG_INFINITY
    }

    fn histories(&self, tokens: &[u32]) -> Vec<u32> {
        let mut h = vec![self.vocab.bos(); self.order - 1];
        h.extend_from_slice(tokens);
        h
    }
}

impl UnitLanguageModel for BackoffModel {
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
        let eos = self.vocab.eos();
        (0..=tokens.len())
            .map(|i| {
                let h = &hist[..self.order - 1 + i];
                (0..self.vocab.size() as u32)
                    .chain(std::iter::once(eos))
                    .map(|w| self.logprob(w, h))
                    .collect()
            })
            .collect()
    }

    fn sequence_logprobs(&self, tokens: &[u32]) -> Vec<f64> {
        let hist = self.histories(tokens);
        tokens
            .iter()
            .copied()
            .chain(std::iter::once(self.vocab.eos()))
            .enumerate()
            .map(|(i, w)| self.logprob(w, &hist[..self.order - 1 + i]))
            .collect()
    }
}
