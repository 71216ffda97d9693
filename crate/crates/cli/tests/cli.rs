use std::path::Path;
use std::process::{Command, Output};

use speechlmscore::audio::{write_wav_pcm16, Waveform};
use speechlmscore::quantizer::{save_codebook, Codebook};
use speechlmscore::tokenizer::TokenPolicy;
use speechlmscore::ulm::{save_lm, NgramModel, UnitLm, Vocabulary};

fn slms(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slms"))
        .args(args)
        .current_dir(dir)
        .env_remove("SLMS_WORKERS")
        .output()
        .expect("slms runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = slms(dir, args);
    assert!(out.status.success(), "slms {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn codebook(v: usize, d: usize) -> Codebook {
    let centroids = (0..v * d).map(|i| (i % 7) as f32 - 3.0 + i as f32 * 1e-3).collect();
    Codebook::new(centroids, v, d, None).unwrap()
}

#[test]
fn info_reports_codebook_metadata() {
    let dir = tempfile::tempdir().unwrap();
    save_codebook(&codebook(50, 40), dir.path().join("cb.slmc")).unwrap();
    let out = ok(dir.path(), &["info", "cb.slmc"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("V=50"), "{text}");
    assert!(text.contains("D=40"), "{text}");
    assert!(text.contains("standardize=false"), "{text}");
}

#[test]
fn vocabulary_disagreement_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    save_codebook(&codebook(50, 40), dir.path().join("cb.slmc")).unwrap();
    let vocab = Vocabulary::new(100).unwrap();
    let lm = NgramModel::train(&[&[0, 1, 2, 99]], vocab, 2, 0.5, TokenPolicy::Dedup).unwrap();
    save_lm(&UnitLm::Ngram(lm), dir.path().join("lm.arpa")).unwrap();
    let tone: Vec<f32> = (0..8000).map(|i| (i as f32 * 0.05).sin() * 0.3).collect();
    write_wav_pcm16(dir.path().join("a.wav"), &Waveform::new(tone, 16000).unwrap()).unwrap();
    std::fs::write(dir.path().join("m.csv"), "utt_id,system_id,path,mos\na,s,a.wav,3.0\n").unwrap();

    let out = slms(
        dir.path(),
        &["score", "--codebook", "cb.slmc", "--ulm", "lm.arpa", "--manifest", "m.csv", "--out", "s.csv"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("component mismatch"), "{err}");
    assert!(!dir.path().join("s.csv").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(slms(dir.path(), &["score", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(slms(dir.path(), &["no-such-command"]).status.code(), Some(1));
    std::fs::write(dir.path().join("run.cfg"), "temperature = 2\nunknown_key = 1\n").unwrap();
    let out = slms(dir.path(), &["score", "--config", "run.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("unknown_key"));
    let out = slms(dir.path(), &["train-ulm", "--in", "t.txt", "--out", "lm.arpa"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(ok(dir.path(), &["--help"]).stdout.len() > 100);
}

#[test]
fn missing_input_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = slms(dir.path(), &["info", "absent.slmc"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("absent.slmc"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("toks.txt"), "a\t0 1 2 3 1 0\nb\t2 3 0 1\n").unwrap();
    std::fs::write(d.join("lm.cfg"), "in = toks.txt\nvocab-size = 4\norder = 3\nout = lm.arpa\n").unwrap();
    ok(d, &["train-ulm", "--config", "lm.cfg", "--order", "2"]);
    let info = String::from_utf8(ok(d, &["info", "lm.arpa"]).stdout).unwrap();
    assert!(info.contains("order=2"), "{info}");
    let echoed = std::fs::read_to_string(d.join("lm.arpa.config")).unwrap();
    assert!(echoed.contains("order = 2\n"), "{echoed}");
    assert!(echoed.contains("discount = 0.75\n"), "{echoed}");

    // The echoed configuration reproduces the run.
    std::fs::rename(d.join("lm.arpa"), d.join("first.arpa")).unwrap();
    ok(d, &["train-ulm", "--config", "lm.arpa.config"]);
    assert_eq!(std::fs::read(d.join("first.arpa")).unwrap(), std::fs::read(d.join("lm.arpa")).unwrap());
}

/// Run the whole pipeline from the synthetic demo corpus inside `dir` and
/// return the scores CSV and the report JSON.
fn demo_pipeline(dir: &Path, workers: &str) -> (Vec<u8>, Vec<u8>) {
    let w = ["--workers", workers];
    ok(dir, &["demo-corpus", "--out", "demo", "--seed", "11"]);
    ok(dir, &[&["features", "--in", "demo/train", "--out", "feats"][..], &w].concat());
    ok(
        dir,
        &[&["train-quantizer", "--in", "feats", "--out", "cb.slmc", "--vocab-size", "50", "--seed", "5"][..], &w].concat(),
    );
    ok(dir, &[&["tokenize", "--codebook", "cb.slmc", "--in", "feats", "--out", "train.tok"][..], &w].concat());
    ok(dir, &["train-ulm", "--in", "train.tok", "--codebook", "cb.slmc", "--out", "lm.arpa"]);
    ok(
        dir,
        &[
            &["score", "--codebook", "cb.slmc", "--ulm", "lm.arpa", "--manifest", "demo/eval/manifest.csv", "--out", "scores.csv"][..],
            &w,
        ]
        .concat(),
    );
    ok(dir, &["evaluate", "--manifest", "demo/eval/manifest.csv", "--scores", "scores.csv", "--out", "report.json"]);
    (std::fs::read(dir.join("scores.csv")).unwrap(), std::fs::read(dir.join("report.json")).unwrap())
}

#[test]
fn demo_pipeline_is_byte_identical_across_runs_and_worker_counts() {
    let runs: Vec<_> = ["1", "1", "8", "8"]
        .iter()
        .map(|w| {
            let dir = tempfile::tempdir().unwrap();
            let out = demo_pipeline(dir.path(), w);
            (dir, out)
        })
        .collect();
    let (scores, report) = &runs[0].1;
    let text = String::from_utf8(scores.clone()).unwrap();
    assert!(text.starts_with("utt_id,score,num_tokens,status\n"));
    assert_eq!(text.lines().count(), 21);
    let json: serde_json::Value = serde_json::from_slice(report).unwrap();
    assert_eq!(json["utterance"]["n"], 20);
    assert_eq!(json["system"]["n"], 4);
    for (_, other) in &runs[1..] {
        assert_eq!(&other.0, scores);
        assert_eq!(&other.1, report);
    }
    let d = runs[0].0.path();
    for artifact in ["cb.slmc", "lm.arpa", "feats/train000.slmf"] {
        let out = ok(d, &["info", artifact]);
        assert!(String::from_utf8(out.stdout).unwrap().contains("format="));
    }
}
