//! Correlation of scores with listener MOS at utterance and system level,
//! and the token-substitution degradation benchmark.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::manifest::Manifest;
use crate::scoring::{speechlm_score, ScoreEntry};
use crate::tokenizer::{dedup, TokenPolicy, TokenSequence};
use crate::ulm::UnitLanguageModel;

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateInput(format!("need at least 2 samples, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvariantViolation("correlation inputs must be finite".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample Pearson correlation (population-normalized moments).
///
/// ```
/// let r = speechlmscore::evaluation::pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
/// assert!((r - 0.8).abs() < 1e-15);
/// ```
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateInput("constant input has no linear correlation".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Kendall tau-b, `(C - D) / sqrt((n0 - n1)(n0 - n2))`, by counting all pairs.
pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len();
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            if dx == 0.0 {
                ties_x += 1;
            }
            if dy == 0.0 {
                ties_y += 1;
            }
            if dx != 0.0 && dy != 0.0 {
                if (dx > 0.0) == (dy > 0.0) {
                    concordant += 1;
                } else {
                    discordant += 1;
                }
            }
        }
    }
    let n0 = (n * (n - 1) / 2) as i64;
    let denom = ((n0 - ties_x) as f64 * (n0 - ties_y) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::DegenerateInput("every pair is tied".into()));
    }
    Ok(((concordant - discordant) as f64 / denom).clamp(-1.0, 1.0))
}

/// Three coefficients over one set of pairs; `None` marks a degenerate input.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CorrelationResult {
    pub lcc: Option<f64>,
    pub srcc: Option<f64>,
    pub ktau: Option<f64>,
    pub n: usize,
}

impl CorrelationResult {
    /// Errors only on length mismatch or fewer than two pairs; constant
    /// inputs yield `None` coefficients instead.
    pub fn compute(x: &[f64], y: &[f64]) -> Result<Self> {
        check_pair(x, y)?;
        let flag = |r: Result<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(Error::DegenerateInput(_)) => Ok(None),
            Err(e) => Err(e),
        };
        Ok(Self {
            lcc: flag(pearson(x, y))?,
            srcc: flag(spearman(x, y))?,
            ktau: flag(kendall_tau_b(x, y))?,
            n: x.len(),
        })
    }

    fn degenerate_flags(&self, level: &str) -> Vec<String> {
        [("lcc", self.lcc), ("srcc", self.srcc), ("ktau", self.ktau)]
            .into_iter()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| format!("{level}.{k}"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SystemAggregate {
    pub system_id: String,
    pub mean_score: f64,
    pub mean_mos: f64,
    pub num_scored: usize,
    /// Manifest rows of this system without a successful score.
    pub num_missing: usize,
}

impl SystemAggregate {
    pub fn is_partial(&self) -> bool {
        self.num_missing > 0
    }
}

/// Successful (score, MOS) pairs sorted by utterance id.
fn scored_pairs<'a>(manifest: &'a Manifest, scores: &[ScoreEntry]) -> Result<Vec<(&'a str, &'a str, f64, f64)>> {
    let by_id: HashMap<&str, usize> = manifest.rows().iter().enumerate().map(|(i, r)| (r.utt_id.as_str(), i)).collect();
    let mut pairs = Vec::new();
    for s in scores {
        let &i = by_id.get(s.utt_id.as_str()).ok_or_else(|| Error::UnknownUttId(s.utt_id.clone()))?;
        let Some(score) = s.score else { continue };
        let row = &manifest.rows()[i];
        let mos = row.mos.ok_or_else(|| Error::MissingMos(row.utt_id.clone()))?;
        pairs.push((row.utt_id.as_str(), row.system_id.as_str(), score, mos));
    }
    pairs.sort_by(|a, b| a.0.cmp(b.0));
    Ok(pairs)
}

/// Per-system arithmetic means of score and MOS over successfully scored
/// utterances, sorted by `system_id`. Systems with no successful utterance
/// are left out.
pub fn aggregate_system_level(manifest: &Manifest, scores: &[ScoreEntry]) -> Result<Vec<SystemAggregate>> {
    let pairs = scored_pairs(manifest, scores)?;
    let mut rows_per_system: BTreeMap<&str, usize> = BTreeMap::new();
    for row in manifest.rows() {
        *rows_per_system.entry(row.system_id.as_str()).or_default() += 1;
    }
    let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (_, sys, score, mos) in pairs {
        let g = groups.entry(sys).or_default();
        g.0.push(score);
        g.1.push(mos);
    }
    Ok(groups
        .into_iter()
        .map(|(sys, (s, m))| SystemAggregate {
            system_id: sys.to_string(),
            mean_score: mean(&s),
            mean_mos: mean(&m),
            num_scored: s.len(),
            num_missing: rows_per_system[sys] - s.len(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct EvalReport {
    pub utterance: CorrelationResult,
    pub system: CorrelationResult,
    pub degenerate_flags: Vec<String>,
    pub partial_systems: Vec<String>,
    /// Resolved run configuration, filled in by the caller.
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Utterance-level and system-level correlation of scores with MOS.
pub fn evaluate(manifest: &Manifest, scores: &[ScoreEntry]) -> Result<EvalReport> {
    let pairs = scored_pairs(manifest, scores)?;
    let (us, um): (Vec<f64>, Vec<f64>) = pairs.iter().map(|p| (p.2, p.3)).unzip();
    let utterance = CorrelationResult::compute(&us, &um)?;
    let systems = aggregate_system_level(manifest, scores)?;
    let (ss, sm): (Vec<f64>, Vec<f64>) = systems.iter().map(|s| (s.mean_score, s.mean_mos)).unzip();
    let system = CorrelationResult::compute(&ss, &sm)?;
    let mut degenerate_flags = utterance.degenerate_flags("utterance");
    degenerate_flags.extend(system.degenerate_flags("system"));
    let partial_systems = systems.iter().filter(|s| s.is_partial()).map(|s| s.system_id.clone()).collect();
    Ok(EvalReport { utterance, system, degenerate_flags, partial_systems, config: BTreeMap::new() })
}

/// Replace each token, with probability `rate`, by a different unit drawn
/// uniformly. Deduplicated input is deduplicated again afterwards.
pub fn corrupt(ts: &TokenSequence, rate: f64, rng: &mut impl Rng) -> Result<TokenSequence> {
    let v = ts.vocab_size() as u32;
    let tokens: Vec<u32> = ts
        .tokens()
        .iter()
        .map(|&t| {
            if v > 1 && rng.gen::<f64>() < rate {
                let r = rng.gen_range(0..v - 1);
                if r >= t {
                    r + 1
                } else {
                    r
                }
            } else {
                t
            }
        })
        .collect();
    let raw = TokenSequence::new(ts.utt_id.clone(), tokens, ts.vocab_size(), TokenPolicy::KeepRepeats)?;
    match ts.policy() {
        TokenPolicy::KeepRepeats => Ok(raw),
        TokenPolicy::Dedup => dedup(&raw),
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CorruptionPoint {
    pub rate: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CorruptionReport {
    pub points: Vec<CorruptionPoint>,
    /// Spearman correlation between rate and mean score.
    pub srcc: Option<f64>,
}

/// Mean score of the corpus after corrupting it at each rate. Rate `k` uses
/// the seed `seed + k`.
pub fn corruption_benchmark(
    lm: &dyn UnitLanguageModel,
    clean: &[TokenSequence],
    rates: &[f64],
    seed: u64,
) -> Result<CorruptionReport> {
    if clean.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if rates.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(Error::InvariantViolation("substitution rates must lie in [0, 1]".into()));
    }
    let points = rates
        .par_iter()
        .enumerate()
        .map(|(k, &rate)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
            let mut total = 0.0;
            for ts in clean {
                let noisy = if rate == 0.0 { ts.clone() } else { corrupt(ts, rate, &mut rng)? };
                total += speechlm_score(&noisy, lm, 1.0, false)?.score;
            }
            Ok(CorruptionPoint { rate, mean_score: total / clean.len() as f64 })
        })
        .collect::<Result<Vec<_>>>()?;
    let (r, s): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p.rate, p.mean_score)).unzip();
    let srcc = if points.len() >= 2 { spearman(&r, &s).ok() } else { None };
    Ok(CorruptionReport { points, srcc })
}
