//! Utterance and corpus scoring: the mean per-token log-probability of an
//! utterance's unit sequence.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::audio::{load_wav, resample_linear, CANONICAL_RATE};
use crate::error::{Error, Result};
use crate::features::{read_features, FeatureSequence, LogMelConfig, LogMelExtractor};
use crate::manifest::Manifest;
use crate::quantizer::Codebook;
use crate::tokenizer::{tokenize_features, TokenPolicy, TokenSequence};
use crate::ulm::{cond_logprobs_with_eos, UnitLanguageModel};

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ScoreReport {
    pub utt_id: String,
    /// Mean natural-log probability per token.
    pub score: f64,
    pub num_tokens: usize,
    pub policy: TokenPolicy,
    pub temperature: f64,
}

impl ScoreReport {
    /// Per-token perplexity, `exp(-score)`.
    pub fn perplexity(&self) -> f64 {
        (-self.score).exp()
    }
}

/// Mean of `ln p(d_i | d_<i)` over the `T` tokens, summed in order. With
/// `include_eos` the end-of-sequence term joins the sum and the count.
///
/// ```
/// use speechlmscore::scoring::speechlm_score;
/// use speechlmscore::tokenizer::{TokenPolicy, TokenSequence};
/// use speechlmscore::ulm::{NgramModel, Vocabulary};
///
/// let vocab = Vocabulary::new(4).unwrap();
/// let lm = NgramModel::train(&[&[0, 1, 2, 3]], vocab, 2, 0.5, TokenPolicy::Dedup).unwrap();
/// let ts = TokenSequence::new("u", vec![0, 1, 2], 4, TokenPolicy::Dedup).unwrap();
/// let report = speechlm_score(&ts, &lm, 1.0, false).unwrap();
/// assert!(report.score < 0.0);
/// assert_eq!(report.num_tokens, 3);
/// ```
pub fn speechlm_score(
    tokens: &TokenSequence,
    lm: &dyn UnitLanguageModel,
    temperature: f64,
    include_eos: bool,
) -> Result<ScoreReport> {
    let mut lp = cond_logprobs_with_eos(lm, tokens, temperature)?;
    if !include_eos {
        lp.pop();
    }
    let mut sum = 0.0;
    for v in &lp {
        sum += v;
    }
    let score = sum / lp.len() as f64;
    if !score.is_finite() {
        return Err(Error::InvariantViolation(format!("non-finite score for {}", tokens.utt_id)));
    }
    Ok(ScoreReport {
        utt_id: tokens.utt_id.clone(),
        score,
        num_tokens: tokens.len(),
        policy: tokens.policy(),
        temperature,
    })
}

/// What to do when an input's sample rate differs from the canonical rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResampleMode {
    On,
    Error,
}

/// Everything needed to turn an audio or feature file into a score.
pub struct Pipeline<'a> {
    pub codebook: &'a Codebook,
    pub lm: &'a dyn UnitLanguageModel,
    pub policy: TokenPolicy,
    pub temperature: f64,
    pub include_eos: bool,
    pub logmel: LogMelConfig,
    pub resample: ResampleMode,
    pub peak_normalize: bool,
}

impl Pipeline<'_> {
    /// Cross-check vocabulary size, feature dimension and repeat policy.
    pub fn check(&self) -> Result<()> {
        let v_cb = self.codebook.vocab_size();
        let v_lm = self.lm.vocab().size();
        if v_cb != v_lm {
            return Err(Error::ComponentMismatch(format!(
                "codebook has V={v_cb} but the language model has V={v_lm}"
            )));
        }
        if let Some(p) = self.lm.policy() {
            if p != self.policy {
                return Err(Error::ComponentMismatch(format!(
                    "language model was trained with policy {p}, pipeline uses {}",
                    self.policy
                )));
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvariantViolation("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn tokenize_file(&self, utt_id: &str, path: &Path) -> Result<TokenSequence> {
        let fs = features_for_path(path, &self.logmel, self.resample, self.peak_normalize)?;
        tokenize_features(utt_id, &fs, self.codebook, self.policy)
    }

    pub fn score_file(&self, utt_id: &str, path: &Path) -> Result<ScoreReport> {
        let ts = self.tokenize_file(utt_id, path)?;
        speechlm_score(&ts, self.lm, self.temperature, self.include_eos)
    }
}

/// Feature files (`.slmf`) are read as-is; anything else is decoded as WAV
/// and passed through the log-mel front end.
pub fn features_for_path(
    path: &Path,
    logmel: &LogMelConfig,
    resample: ResampleMode,
    peak_normalize: bool,
) -> Result<FeatureSequence> {
    if path.extension().is_some_and(|e| e == "slmf") {
        return read_features(path);
    }
    let mut w = load_wav(path)?;
    if w.sample_rate() != CANONICAL_RATE {
        match resample {
            ResampleMode::On => w = resample_linear(&w, CANONICAL_RATE)?,
            ResampleMode::Error => {
                return Err(Error::InvariantViolation(format!(
                    "{} is {} Hz, expected {CANONICAL_RATE} Hz",
                    path.display(),
                    w.sample_rate()
                )))
            }
        }
    }
    if peak_normalize {
        w = w.peak_normalized();
    }
    LogMelExtractor::new(logmel.clone(), w.sample_rate())?.extract(&w)
}

/// One row of a corpus scoring run.
#[derive(Debug, Clone, PartialEq)]
pub enum ScoreRow {
    Ok(ScoreReport),
    Failed { utt_id: String, error: String },
}

impl ScoreRow {
    pub fn utt_id(&self) -> &str {
        match self {
            ScoreRow::Ok(r) => &r.utt_id,
            ScoreRow::Failed { utt_id, .. } => utt_id,
        }
    }
}

/// Score every manifest row. Rows come back sorted by `utt_id`; files that
/// fail to load or score become [`ScoreRow::Failed`] entries.
pub fn score_corpus(manifest: &Manifest, pipeline: &Pipeline<'_>) -> Result<Vec<ScoreRow>> {
    pipeline.check()?;
    let mut rows: Vec<ScoreRow> = manifest
        .rows()
        .par_iter()
        .map(|row| match pipeline.score_file(&row.utt_id, &manifest.resolve(&row.path)) {
            Ok(r) => ScoreRow::Ok(r),
            Err(e) => ScoreRow::Failed { utt_id: row.utt_id.clone(), error: e.to_string() },
        })
        .collect();
    rows.sort_by(|a, b| a.utt_id().cmp(b.utt_id()));
    Ok(rows)
}

/// Format with nine significant digits in plain decimal notation.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (8 - magnitude).max(0) as usize;
    let s = format!("{x:.decimals$}");
    // rounding can add a digit (9.9999999995 -> 10.00000000)
    let digits = s.chars().filter(char::is_ascii_digit).collect::<String>();
    if digits.trim_start_matches('0').len() > 9 && decimals > 0 {
        format!("{x:.prec$}", prec = decimals - 1)
    } else {
        s
    }
}

/// Scores CSV: `utt_id,score,num_tokens,status`.
pub fn write_scores_csv<W: std::io::Write>(out: W, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(["utt_id", "score", "num_tokens", "status"])?;
    for row in rows {
        match row {
            ScoreRow::Ok(r) => {
                w.write_record([r.utt_id.as_str(), &format_sig9(r.score), &r.num_tokens.to_string(), "ok"])?
            }
            ScoreRow::Failed { utt_id, error } => {
                w.write_record([utt_id.as_str(), "", "0", &format!("error: {error}")])?
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// A parsed scores CSV row; `score` is `None` for failed utterances.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub utt_id: String,
    pub score: Option<f64>,
    pub num_tokens: usize,
    pub status: String,
}

pub fn read_scores_csv<R: std::io::Read>(input: R) -> Result<Vec<ScoreEntry>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["utt_id", "score", "num_tokens", "status"] {
        return Err(Error::Parse(format!("unexpected scores header {headers:?}")));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let status = rec[3].to_string();
        let score = if status == "ok" {
            Some(rec[1].parse::<f64>().map_err(|e| Error::Parse(format!("score {:?}: {e}", &rec[1])))?)
        } else {
            None
        };
        let num_tokens = rec[2].parse().map_err(|e| Error::Parse(format!("num_tokens {:?}: {e}", &rec[2])))?;
        out.push(ScoreEntry { utt_id: rec[0].to_string(), score, num_tokens, status });
    }
    Ok(out)
}

pub fn load_scores_csv(path: impl AsRef<Path>) -> Result<Vec<ScoreEntry>> {
    let path: PathBuf = path.as_ref().to_path_buf();
    if !path.exists() {
        return Err(Error::FileNotFound(path));
    }
    read_scores_csv(std::fs::File::open(path)?)
}
