//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL` line and
//! then asserts on the same condition. Run with
//! `cargo test -p speechlmscore --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use speechlmscore::evaluation::{corruption_benchmark, evaluate, kendall_tau_b, pearson, spearman};
use speechlmscore::features::{FeatureSequence, LogMelConfig};
use speechlmscore::manifest::{load_manifest, Manifest, ManifestRow};
use speechlmscore::quantizer::{assign, fit_kmeans, reservoir_sample, Codebook, KMeansConfig};
use speechlmscore::scoring::{
    features_for_path, read_scores_csv, score_corpus, speechlm_score, write_scores_csv, Pipeline, ResampleMode,
    ScoreEntry,
};
use speechlmscore::synth::{markov_corpus, write_demo_corpus};
use speechlmscore::tokenizer::{dedup, tokenize_features, TokenPolicy, TokenSequence};
use speechlmscore::ulm::arpa::{parse_arpa, write_arpa};
use speechlmscore::ulm::rnn::gradcheck_rnn;
use speechlmscore::ulm::{cond_logprobs_with_eos, train, NgramModel, RnnModel, TrainConfig, UnitLanguageModel, Vocabulary};

fn verdict(n: u8, title: &str, pass: bool, detail: String, elapsed: Duration) {
    let status = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n}: {status}  {title}  [{detail}; {:.2?}]", elapsed);
    assert!(pass, "criterion {n} failed: {title} ({detail})");
}

/// Fixed log-probability table indexed by the previous symbol.
struct TableLm {
    vocab: Vocabulary,
    rows: BTreeMap<u32, Vec<f64>>,
}

impl UnitLanguageModel for TableLm {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }
    fn policy(&self) -> Option<TokenPolicy> {
        None
    }
    fn backend(&self) -> &'static str {
        "table"
    }
    fn step_log_distributions(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        std::iter::once(self.vocab.bos()).chain(tokens.iter().copied()).map(|prev| self.rows[&prev].clone()).collect()
    }
}

fn uniform(v: usize) -> TableLm {
    let vocab = Vocabulary::new(v).unwrap();
    let row = vec![-((v + 1) as f64).ln(); v + 1];
    TableLm { vocab, rows: (0..=v as u32).map(|s| (s, row.clone())).collect() }
}

#[test]
fn criterion_1_score_is_the_mean_token_log_probability() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_uniform = 0.0f64;
    for v in [50usize, 100, 200] {
        let lm = uniform(v);
        for _ in 0..20 {
            let tokens: Vec<u32> = (0..10).map(|_| rng.gen_range(0..v as u32)).collect();
            let ts = TokenSequence::new("u", tokens, v, TokenPolicy::KeepRepeats).unwrap();
            let s = speechlm_score(&ts, &lm, 1.0, false).unwrap().score;
            worst_uniform = worst_uniform.max((s + ((v + 1) as f64).ln()).abs());
        }
    }

    // a = 0, b = 1: p(a | BOS) = 0.5, p(b | a) = 0.25.
    let vocab = Vocabulary::new(2).unwrap();
    let rows = BTreeMap::from([
        (vocab.bos(), vec![0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()]),
        (0, vec![0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()]),
        (1, vec![0.4f64.ln(), 0.4f64.ln(), 0.2f64.ln()]),
    ]);
    let lm = TableLm { vocab, rows };
    let ts = TokenSequence::new("ab", vec![0, 1], 2, TokenPolicy::Dedup).unwrap();
    let s = speechlm_score(&ts, &lm, 1.0, false).unwrap().score;
    let bigram_err = (s - (0.5f64.ln() + 0.25f64.ln()) / 2.0).abs();

    let elapsed = start.elapsed();
    verdict(
        1,
        "uniform LM scores -ln(V+1); hand bigram matches",
        worst_uniform <= 1e-12 && bigram_err <= 1e-9 && elapsed < Duration::from_secs(1),
        format!("uniform err {worst_uniform:.1e} (tol 1e-12), bigram {s:.6} err {bigram_err:.1e} (tol 1e-9), limit 1 s"),
        elapsed,
    );
}

#[test]
fn criterion_2_dedup_collapses_runs() {
    let start = Instant::now();
    let ex = TokenSequence::new("ex", vec![20, 20, 20, 16, 17, 17], 50, TokenPolicy::KeepRepeats).unwrap();
    let example_ok = dedup(&ex).unwrap().tokens() == [20, 16, 17];

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    for _ in 0..10_000 {
        let v = rng.gen_range(1..8usize);
        let len = rng.gen_range(1..60);
        let tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..v as u32)).collect();
        let ts = TokenSequence::new("r", tokens.clone(), v, TokenPolicy::KeepRepeats).unwrap();
        let d = dedup(&ts).unwrap();
        let heads: Vec<u32> =
            tokens.iter().enumerate().filter(|&(i, t)| i == 0 || tokens[i - 1] != *t).map(|(_, &t)| t).collect();
        let runs = 1 + tokens.windows(2).filter(|w| w[0] != w[1]).count();
        let again = dedup(&d).unwrap();
        let ok = d.tokens() == heads.as_slice()
            && d.len() == runs
            && d.len() <= ts.len()
            && d.len() >= 1
            && again.tokens() == d.tokens()
            && d.tokens().windows(2).all(|w| w[0] != w[1]);
        failures += usize::from(!ok);
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        "dedup example and 10,000 random sequences",
        example_ok && failures == 0 && elapsed < Duration::from_secs(5),
        format!("example ok: {example_ok}, property failures {failures}/10000, limit 5 s"),
        elapsed,
    );
}

#[test]
fn criterion_3_ngram_distributions_are_sound() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v = 20usize;
    let vocab = Vocabulary::new(v).unwrap();
    let corpus: Vec<Vec<u32>> =
        (0..200).map(|_| (0..rng.gen_range(5..40)).map(|_| rng.gen_range(0..v as u32 / 2)).collect()).collect();
    let refs: Vec<&[u32]> = corpus.iter().map(Vec::as_slice).collect();
    let model = NgramModel::train(&refs, vocab, 3, 0.7, TokenPolicy::KeepRepeats).unwrap();

    let mut worst_sum = 0.0f64;
    for _ in 0..1000 {
        let len = rng.gen_range(0..4);
        let mut history: Vec<u32> = (0..len).map(|_| rng.gen_range(0..v as u32)).collect();
        if rng.gen_bool(0.3) {
            history.insert(0, vocab.bos());
        }
        let total: f64 = (0..v as u32).chain([vocab.eos()]).map(|w| model.prob(w, &history)).sum();
        worst_sum = worst_sum.max((total - 1.0).abs());
    }

    // Fully covered toy corpus: every bigram over {BOS, 0, 1, 2} x {0, 1, 2, EOS}
    // occurs except BOS EOS, which would need an empty utterance.
    let toy_vocab = Vocabulary::new(3).unwrap();
    let toy: Vec<Vec<u32>> = vec![
        vec![0, 0, 1, 1, 2, 2, 0, 2, 1, 0],
        vec![1, 2, 0, 1],
        vec![2, 1, 2],
        vec![0, 1, 0, 0, 2],
        vec![1, 1, 1, 0],
    ];
    let toy_refs: Vec<&[u32]> = toy.iter().map(Vec::as_slice).collect();
    let near_ml = NgramModel::train(&toy_refs, toy_vocab, 2, 1e-6, TokenPolicy::KeepRepeats).unwrap();
    let mut counts: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    let mut history_totals: BTreeMap<u32, f64> = BTreeMap::new();
    for seq in &toy {
        let padded: Vec<u32> = [toy_vocab.bos()].into_iter().chain(seq.iter().copied()).chain([toy_vocab.eos()]).collect();
        for w in padded.windows(2) {
            *counts.entry((w[0], w[1])).or_default() += 1.0;
            *history_totals.entry(w[0]).or_default() += 1.0;
        }
    }
    let mut worst_ml = 0.0f64;
    for (&h, &n) in &history_totals {
        for w in (0..3).chain([toy_vocab.eos()]) {
            let ml = counts.get(&(h, w)).copied().unwrap_or(0.0) / n;
            worst_ml = worst_ml.max((near_ml.prob(w, &[h]) - ml).abs());
        }
    }
    let covered = history_totals.len() == 4 && counts.len() == 15;

    let back = parse_arpa(&write_arpa(&model)).unwrap();
    let mut worst_arpa = 0.0f64;
    for _ in 0..200 {
        let tokens: Vec<u32> = (0..rng.gen_range(1..30)).map(|_| rng.gen_range(0..v as u32)).collect();
        let ts = TokenSequence::new("a", tokens, v, TokenPolicy::KeepRepeats).unwrap();
        let a = cond_logprobs_with_eos(&model, &ts, 1.0).unwrap();
        let b = cond_logprobs_with_eos(&back, &ts, 1.0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            worst_arpa = worst_arpa.max((x - y).abs());
        }
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        "n-gram sums to one, reaches ML counts as discount -> 0, survives ARPA",
        worst_sum <= 1e-9 && covered && worst_ml <= 1e-4 && worst_arpa <= 1e-6,
        format!(
            "sum err {worst_sum:.1e} (tol 1e-9), ML err {worst_ml:.1e} (tol 1e-4), ARPA err {worst_arpa:.1e} (tol 1e-6)"
        ),
        elapsed,
    );
}

#[test]
fn criterion_4_lstm_gradient_matches_finite_differences() {
    let start = Instant::now();
    let mut errors = Vec::new();
    for seed in 0..5u64 {
        let model = RnnModel::init(Vocabulary::new(5).unwrap(), 4, 8, 1, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let batch = vec![(0..10).map(|_| rng.gen_range(0..5)).collect::<Vec<u32>>()];
        errors.push(gradcheck_rnn(&model, &batch, 1e-4).unwrap());
    }
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    verdict(
        4,
        "LSTM analytic gradient vs central differences, H=8, 5 seeds",
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!("max relative error {worst:.2e} (tol 1e-4, eps 1e-4, f64), limit 30 s"),
        elapsed,
    );
}

#[test]
fn criterion_5_kmeans() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);

    let mut monotone_runs = 0;
    let mut runs = 0;
    for (i, &(k, n, d, standardize)) in [(4, 300, 3, false), (10, 500, 5, true), (25, 400, 8, false), (3, 60, 2, true)]
        .iter()
        .enumerate()
    {
        let rows: Vec<Vec<f32>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect()).collect();
        let fs = FeatureSequence::from_rows(&rows, 0.02, "random").unwrap();
        for seed in 0..3 {
            let cfg = KMeansConfig { seed: seed + 10 * i as u64, standardize, ..KMeansConfig::default() };
            let fit = fit_kmeans(std::slice::from_ref(&fs), k, &cfg).unwrap();
            runs += 1;
            monotone_runs += usize::from(fit.inertia_trace.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (label, centre) in [(0u32, 0.0f64), (1, 10.0)] {
        for _ in 0..500 {
            rows.push(vec![(centre + noise.sample(&mut rng)) as f32, (centre + noise.sample(&mut rng)) as f32]);
            labels.push(label);
        }
    }
    let blobs = FeatureSequence::from_rows(&rows, 0.02, "blobs").unwrap();
    let fit = fit_kmeans(std::slice::from_ref(&blobs), 2, &KMeansConfig::default()).unwrap();
    let got = assign(&blobs, &fit.codebook).unwrap();
    let agree = got.iter().zip(&labels).filter(|(a, b)| a == b).count();
    let accuracy = agree.max(labels.len() - agree) as f64 / labels.len() as f64;

    let (v, d) = (16usize, 6usize);
    let centroids: Vec<f32> = (0..v * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cb = Codebook::new(centroids.clone(), v, d, None).unwrap();
    let frames: Vec<Vec<f32>> = (0..100).map(|_| (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect()).collect();
    let fs = FeatureSequence::from_rows(&frames, 0.02, "probe").unwrap();
    let brute: Vec<u32> = frames
        .iter()
        .map(|f| {
            let mut best = (f64::INFINITY, 0u32);
            for c in 0..v {
                let dist: f64 =
                    (0..d).map(|j| (f[j] as f64 - centroids[c * d + j] as f64).powi(2)).sum();
                if dist < best.0 {
                    best = (dist, c as u32);
                }
            }
            best.1
        })
        .collect();
    let brute_ok = assign(&fs, &cb).unwrap() == brute;

    let elapsed = start.elapsed();
    verdict(
        5,
        "k-means: monotone inertia, 2-blob recovery, exact nearest-centroid assignment",
        monotone_runs == runs && accuracy >= 0.99 && brute_ok,
        format!("monotone {monotone_runs}/{runs}, blob accuracy {accuracy:.4} (min 0.99), brute-force match: {brute_ok}"),
        elapsed,
    );
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

/// Rank of each element: one plus the number of smaller elements, plus half
/// the number of other equal elements.
fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let less = x.iter().filter(|&&b| b < a).count() as f64;
            let equal = x.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn oracle_kendall(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut c, mut d, mut tx, mut ty) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            if i >= j {
                continue;
            }
            let sx = (x[i] - x[j]).signum() * f64::from(x[i] != x[j]);
            let sy = (y[i] - y[j]).signum() * f64::from(y[i] != y[j]);
            match (sx * sy).partial_cmp(&0.0).unwrap() {
                std::cmp::Ordering::Greater => c += 1.0,
                std::cmp::Ordering::Less => d += 1.0,
                std::cmp::Ordering::Equal => {}
            }
            tx += f64::from(sx == 0.0);
            ty += f64::from(sy == 0.0);
        }
    }
    let n0 = (n * (n - 1)) as f64 / 2.0;
    (c - d) / ((n0 - tx) * (n0 - ty)).sqrt()
}

#[test]
fn criterion_6_correlations_match_brute_force() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    let mut pairs = 0;
    let mut with_ties = 0;
    while pairs < 100 {
        let n = rng.gen_range(2..=200);
        let levels = rng.gen_range(2..12);
        let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let mut y: Vec<f64> = x.iter().map(|a| a * rng.gen_range(-1.0..1.0) + rng.gen_range(-2.0..2.0)).collect();
        if pairs % 2 == 0 {
            x.iter_mut().for_each(|a| *a = (*a * levels as f64 / 6.0).round());
        }
        if pairs % 3 == 0 {
            y.iter_mut().for_each(|b| *b = b.round());
        }
        let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
        if constant(&x) || constant(&y) {
            continue;
        }
        let has_ties = |v: &[f64]| oracle_ranks(v).iter().any(|r| r.fract() != 0.0);
        with_ties += usize::from(has_ties(&x) || has_ties(&y));
        worst = worst.max((pearson(&x, &y).unwrap() - oracle_pearson(&x, &y)).abs());
        worst = worst.max((spearman(&x, &y).unwrap() - oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y))).abs());
        worst = worst.max((kendall_tau_b(&x, &y).unwrap() - oracle_kendall(&x, &y)).abs());
        pairs += 1;
    }
    let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
    let tau = kendall_tau_b(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap();
    let elapsed = start.elapsed();
    verdict(
        6,
        "pearson/spearman/kendall tau-b equal definitional oracles",
        worst <= 1e-12 && with_ties > 50 && r == 0.8 && tau == 1.0 / 3.0,
        format!("max diff {worst:.1e} over {pairs} pairs ({with_ties} with ties) (tol 1e-12), r={r}, tau={tau}"),
        elapsed,
    );
}

#[test]
fn criterion_7_scores_fall_as_tokens_are_corrupted() {
    let start = Instant::now();
    let v = 50;
    let clean = markov_corpus(v, 500, 7);
    let lm = train(&clean, Vocabulary::new(v).unwrap(), &TrainConfig::Ngram { order: 3, discount: 0.75 }).unwrap();
    let rates = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5];
    let report = corruption_benchmark(lm.as_model(), &clean, &rates, 7).unwrap();
    let srcc = report.srcc.unwrap_or(f64::NAN);
    let first = report.points[0].mean_score;
    let last = report.points[5].mean_score;
    let means: Vec<String> = report.points.iter().map(|p| format!("{:.3}", p.mean_score)).collect();
    let elapsed = start.elapsed();
    verdict(
        7,
        "order-3 n-gram, 500 clean sequences, V=50: score drops with substitution rate",
        srcc <= -0.9 && last < first && elapsed < Duration::from_secs(60),
        format!("means [{}], SRCC {srcc:.3} (max -0.9), limit 60 s", means.join(", ")),
        elapsed,
    );
}

#[test]
fn criterion_8_evaluation_protocol_shape() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rows = Vec::new();
    let mut scores = Vec::new();
    for s in 0..187 {
        let quality: f64 = rng.gen_range(1.5..4.5);
        for u in 0..38 {
            // Mean of eight 1-5 ratings.
            let ratings: u32 = (0..8).map(|_| (quality + rng.gen_range(-1.5..1.5)).round().clamp(1.0, 5.0) as u32).sum();
            let mos = ratings as f64 / 8.0;
            let utt_id = format!("s{s:03}_u{u:02}");
            scores.push(ScoreEntry {
                utt_id: utt_id.clone(),
                score: Some(0.5 * mos - 4.0),
                num_tokens: 100,
                status: "ok".into(),
            });
            rows.push(ManifestRow { utt_id, system_id: format!("s{s:03}"), path: "unused.wav".into(), mos: Some(mos) });
        }
    }
    let manifest = Manifest::new(rows, ".").unwrap();
    let report = evaluate(&manifest, &scores).unwrap();
    let coefs = [
        report.utterance.lcc,
        report.utterance.srcc,
        report.utterance.ktau,
        report.system.lcc,
        report.system.srcc,
        report.system.ktau,
    ];
    let all_one = coefs.iter().all(|c| *c == Some(1.0));
    let elapsed = start.elapsed();
    verdict(
        8,
        "187 systems x 38 utterances, affine scores",
        report.system.n == 187 && report.utterance.n == 7106 && all_one,
        format!("system n={}, utterance n={}, coefficients {coefs:?}", report.system.n, report.utterance.n),
        elapsed,
    );
}

/// The demo pipeline (features, quantizer, tokens, n-gram, scores, report)
/// on a thread pool of the given size.
fn demo_pipeline(dir: &Path, threads: usize) -> (Vec<u8>, Vec<u8>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    pool.install(|| {
        let demo = write_demo_corpus(dir, 11).unwrap();
        let logmel = LogMelConfig::default();
        let feats: Vec<FeatureSequence> = demo
            .train
            .par_iter()
            .map(|p| features_for_path(p, &logmel, ResampleMode::On, false).unwrap())
            .collect();
        let sample = reservoir_sample(&feats, 2_000_000, 5).unwrap();
        let fit = fit_kmeans(&[sample], 50, &KMeansConfig { seed: 5, ..KMeansConfig::default() }).unwrap();
        let tokens: Vec<TokenSequence> = feats
            .par_iter()
            .enumerate()
            .map(|(i, f)| tokenize_features(format!("train{i:03}"), f, &fit.codebook, TokenPolicy::Dedup).unwrap())
            .collect();
        let lm = train(&tokens, Vocabulary::new(50).unwrap(), &TrainConfig::default()).unwrap();
        let manifest = load_manifest(&demo.manifest_path).unwrap();
        let pipeline = Pipeline {
            codebook: &fit.codebook,
            lm: lm.as_model(),
            policy: TokenPolicy::Dedup,
            temperature: 1.0,
            include_eos: false,
            logmel,
            resample: ResampleMode::On,
            peak_normalize: false,
        };
        let rows = score_corpus(&manifest, &pipeline).unwrap();
        let mut csv = Vec::new();
        write_scores_csv(&mut csv, &rows).unwrap();
        let entries = read_scores_csv(&csv[..]).unwrap();
        let report = evaluate(&manifest, &entries).unwrap().to_json().unwrap();
        (csv, report.into_bytes())
    })
}

#[test]
fn criterion_9_demo_pipeline_is_deterministic() {
    let start = Instant::now();
    let outputs: Vec<(usize, (Vec<u8>, Vec<u8>))> = [1usize, 1, 8, 8]
        .iter()
        .map(|&threads| {
            let dir = tempfile::tempdir().unwrap();
            (threads, demo_pipeline(dir.path(), threads))
        })
        .collect();
    let reference = &outputs[0].1;
    let identical = outputs.iter().all(|(_, o)| o == reference);
    let rows = String::from_utf8_lossy(&reference.0).lines().count() - 1;
    let elapsed = start.elapsed();
    verdict(
        9,
        "demo pipeline twice at 1 and at 8 workers gives byte-identical scores CSV and report JSON",
        identical && rows == 20,
        format!("{} runs, {rows} scored utterances, identical: {identical}", outputs.len()),
        elapsed,
    );
}
