use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speechlmscore::evaluation::{aggregate_system_level, evaluate, kendall_tau_b, pearson, spearman, CorrelationResult};
use speechlmscore::manifest::{Manifest, ManifestRow};
use speechlmscore::scoring::{read_scores_csv, write_scores_csv, ScoreEntry, ScoreReport, ScoreRow};
use speechlmscore::tokenizer::TokenPolicy;

fn synthetic(systems: usize, per_system: usize, seed: u64) -> (Vec<ManifestRow>, Vec<ScoreEntry>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut scores = Vec::new();
    for s in 0..systems {
        let q: f64 = rng.gen_range(1.5..4.5);
        for u in 0..per_system {
            let mos = ((q + rng.gen_range(-1.0..1.0)).clamp(1.0, 5.0) * 8.0).round() / 8.0;
            let id = format!("s{s}_u{u}");
            rows.push(ManifestRow { utt_id: id.clone(), system_id: format!("s{s}"), path: format!("{id}.wav"), mos: Some(mos) });
            scores.push(ScoreEntry {
                utt_id: id,
                score: Some(-3.0 + 0.3 * mos + rng.gen_range(-0.5..0.5)),
                num_tokens: 50,
                status: "ok".into(),
            });
        }
    }
    (rows, scores)
}

#[test]
fn evaluation_ignores_row_order() {
    let (rows, scores) = synthetic(12, 9, 1);
    let reference = evaluate(&Manifest::new(rows.clone(), ".").unwrap(), &scores).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..5 {
        let mut r = rows.clone();
        let mut s = scores.clone();
        r.shuffle(&mut rng);
        s.shuffle(&mut rng);
        let report = evaluate(&Manifest::new(r, ".").unwrap(), &s).unwrap();
        assert_eq!(report.to_json().unwrap(), reference.to_json().unwrap());
    }
}

#[test]
fn unrelated_scores_correlate_weakly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mos: Vec<f64> = (0..1000).map(|_| (rng.gen_range(1.0..5.0f64) * 8.0).round() / 8.0).collect();
    let mut scores = mos.clone();
    scores.shuffle(&mut rng);
    let r = CorrelationResult::compute(&scores, &mos).unwrap();
    for c in [r.lcc, r.srcc, r.ktau] {
        assert!(c.unwrap().abs() < 0.1, "{r:?}");
    }
}

#[test]
fn negated_mos_gives_minus_one_everywhere() {
    let (rows, _) = synthetic(6, 5, 3);
    let scores: Vec<ScoreEntry> = rows
        .iter()
        .map(|r| ScoreEntry { utt_id: r.utt_id.clone(), score: r.mos.map(|m| -m), num_tokens: 1, status: "ok".into() })
        .collect();
    let report = evaluate(&Manifest::new(rows, ".").unwrap(), &scores).unwrap();
    for c in [report.utterance.lcc, report.utterance.srcc, report.utterance.ktau, report.system.lcc, report.system.srcc, report.system.ktau]
    {
        assert_eq!(c, Some(-1.0));
    }
}

#[test]
fn failed_rows_flag_partial_systems_through_the_csv() {
    let (rows, _) = synthetic(3, 4, 4);
    let mut out = Vec::new();
    let score_rows: Vec<ScoreRow> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if i == 5 {
                ScoreRow::Failed { utt_id: r.utt_id.clone(), error: "file not found: x.wav".into() }
            } else {
                ScoreRow::Ok(ScoreReport {
                    utt_id: r.utt_id.clone(),
                    score: -2.0 + r.mos.unwrap() * 0.1,
                    num_tokens: 10,
                    policy: TokenPolicy::Dedup,
                    temperature: 1.0,
                })
            }
        })
        .collect();
    write_scores_csv(&mut out, &score_rows).unwrap();
    let entries = read_scores_csv(&out[..]).unwrap();
    let manifest = Manifest::new(rows, ".").unwrap();
    let systems = aggregate_system_level(&manifest, &entries).unwrap();
    assert_eq!(systems.len(), 3);
    assert_eq!(systems[1].num_scored, 3);
    assert!(systems[1].is_partial());
    let report = evaluate(&manifest, &entries).unwrap();
    assert_eq!(report.partial_systems, vec!["s1".to_string()]);
    assert_eq!(report.utterance.n, 11);
}

proptest! {
    #[test]
    fn rank_coefficients_ignore_monotone_maps(xs in proptest::collection::vec(-50i32..50, 3..60), seed in 0u64..1000) {
        let x: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = x.iter().map(|v| v + rng.gen_range(-30.0..30.0f64).round()).collect();
        prop_assume!(x.iter().any(|v| *v != x[0]) && y.iter().any(|v| *v != y[0]));
        let fx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp()).collect();
        let gy: Vec<f64> = y.iter().map(|v| v * v * v + 7.0).collect();
        prop_assert!((spearman(&x, &y).unwrap() - spearman(&fx, &gy).unwrap()).abs() < 1e-12);
        prop_assert!((kendall_tau_b(&x, &y).unwrap() - kendall_tau_b(&fx, &gy).unwrap()).abs() < 1e-12);
        let ax: Vec<f64> = x.iter().map(|v| 2.5 * v - 4.0).collect();
        let by: Vec<f64> = y.iter().map(|v| 0.1 * v + 100.0).collect();
        prop_assert!((pearson(&x, &y).unwrap() - pearson(&ax, &by).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn coefficients_stay_in_range(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..80)) {
        let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = CorrelationResult::compute(&x, &y).unwrap();
        for c in [r.lcc, r.srcc, r.ktau].into_iter().flatten() {
            prop_assert!((-1.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn system_means_ignore_order_within_system(seed in 0u64..500) {
        let (rows, scores) = synthetic(4, 6, seed);
        let manifest = Manifest::new(rows, ".").unwrap();
        let reference = aggregate_system_level(&manifest, &scores).unwrap();
        let mut shuffled = scores.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 1));
        let again = aggregate_system_level(&manifest, &shuffled).unwrap();
        for (a, b) in reference.iter().zip(&again) {
            prop_assert_eq!(&a.system_id, &b.system_id);
            prop_assert!((a.mean_score - b.mean_score).abs() < 1e-12);
            prop_assert_eq!(a.mean_mos, b.mean_mos);
        }
    }
}
