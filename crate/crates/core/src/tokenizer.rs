//! Discrete unit sequences, the repeated-token policy and the token corpus
//! text format.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::features::{extract_logmel, FeatureSequence, LogMelConfig};
use crate::quantizer::{assign, Codebook};

/// Whether runs of identical consecutive units are collapsed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenPolicy {
    Dedup,
    KeepRepeats,
}

impl TokenPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenPolicy::Dedup => "dedup",
            TokenPolicy::KeepRepeats => "keep-repeats",
        }
    }
}

impl fmt::Display for TokenPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dedup" => Ok(TokenPolicy::Dedup),
            "keep-repeats" | "keep_repeats" => Ok(TokenPolicy::KeepRepeats),
            other => Err(Error::Parse(format!("unknown token policy {other:?}"))),
        }
    }
}

/// Discrete units of one utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub utt_id: String,
    tokens: Vec<u32>,
    vocab_size: usize,
    policy: TokenPolicy,
}

impl TokenSequence {
    /// Validates range and, for [`TokenPolicy::Dedup`], the absence of
    /// adjacent repeats.
    pub fn new(utt_id: impl Into<String>, tokens: Vec<u32>, vocab_size: usize, policy: TokenPolicy) -> Result<Self> {
        if let Some(&token) = tokens.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::TokenOutOfRange { token, vocab_size });
        }
        if policy == TokenPolicy::Dedup && tokens.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvariantViolation(
                "deduplicated sequence contains adjacent repeats".into(),
            ));
        }
        Ok(Self { utt_id: utt_id.into(), tokens, vocab_size, policy })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn policy(&self) -> TokenPolicy {
        self.policy
    }

    pub fn dedup_applied(&self) -> bool {
        self.policy == TokenPolicy::Dedup
    }
}

/// Collapse each run of equal consecutive units to a single unit.
///
/// ```
/// use speechlmscore::tokenizer::{dedup, TokenPolicy, TokenSequence};
/// let ts = TokenSequence::new("u", vec![20, 20, 20, 16, 17, 17], 50, TokenPolicy::KeepRepeats).unwrap();
/// assert_eq!(dedup(&ts).unwrap().tokens(), &[20, 16, 17]);
/// ```
pub fn dedup(ts: &TokenSequence) -> Result<TokenSequence> {
    if ts.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut tokens = ts.tokens.clone();
    tokens.dedup();
    Ok(TokenSequence {
        utt_id: ts.utt_id.clone(),
        tokens,
        vocab_size: ts.vocab_size,
        policy: TokenPolicy::Dedup,
    })
}

/// Quantize features and apply the repeat policy.
pub fn tokenize_features(
    utt_id: impl Into<String>,
    fs: &FeatureSequence,
    cb: &Codebook,
    policy: TokenPolicy,
) -> Result<TokenSequence> {
    let raw = TokenSequence::new(utt_id, assign(fs, cb)?, cb.vocab_size(), TokenPolicy::KeepRepeats)?;
    match policy {
        TokenPolicy::KeepRepeats => Ok(raw),
        TokenPolicy::Dedup => dedup(&raw),
    }
}

/// Log-mel extraction followed by [`tokenize_features`].
pub fn tokenize_waveform(
    utt_id: impl Into<String>,
    w: &Waveform,
    logmel: &LogMelConfig,
    cb: &Codebook,
    policy: TokenPolicy,
) -> Result<TokenSequence> {
    let fs = extract_logmel(w, logmel)?;
    tokenize_features(utt_id, &fs, cb, policy)
}

/// One line of a token corpus file: `utt_id<TAB>t1 t2 ...`.
pub fn format_token_line(ts: &TokenSequence) -> String {
    let body: Vec<String> = ts.tokens.iter().map(u32::to_string).collect();
    format!("{}\t{}", ts.utt_id, body.join(" "))
}

pub fn write_token_corpus<W: Write>(mut out: W, corpus: &[TokenSequence]) -> Result<()> {
    for ts in corpus {
        writeln!(out, "{}", format_token_line(ts))?;
    }
    Ok(())
}

pub fn save_token_corpus(path: impl AsRef<Path>, corpus: &[TokenSequence]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_token_corpus(file, corpus)
}

/// Parse a token corpus. Blank lines are skipped; every token must be below
/// `vocab_size` and, under [`TokenPolicy::Dedup`], free of adjacent repeats.
pub fn read_token_corpus<R: BufRead>(input: R, vocab_size: usize, policy: TokenPolicy) -> Result<Vec<TokenSequence>> {
    let mut corpus = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (utt_id, body) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse(format!("line {}: missing tab after utterance id", lineno + 1)))?;
        let tokens = body
            .split_ascii_whitespace()
            .map(|t| t.parse::<u32>().map_err(|e| Error::Parse(format!("line {}: {t:?}: {e}", lineno + 1))))
            .collect::<Result<Vec<_>>>()?;
        corpus.push(TokenSequence::new(utt_id, tokens, vocab_size, policy)?);
    }
    Ok(corpus)
}

pub fn load_token_corpus(path: impl AsRef<Path>, vocab_size: usize, policy: TokenPolicy) -> Result<Vec<TokenSequence>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    read_token_corpus(std::io::BufReader::new(std::fs::File::open(path)?), vocab_size, policy)
}
