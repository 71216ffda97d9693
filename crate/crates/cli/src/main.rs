//! `slms`: the SpeechLMScore pipeline as a command-line tool.
//!
//! Exit status is 0 on success, 1 for usage errors (bad flags, bad config
//! files) and 2 for data errors (unreadable inputs, inconsistent models).

mod config;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use speechlmscore::evaluation::{corruption_benchmark, evaluate};
use speechlmscore::features::{write_features, FeatureSequence, LogMelConfig};
use speechlmscore::manifest::load_manifest;
use speechlmscore::quantizer::{fit_kmeans, load_codebook, reservoir_sample, save_codebook, KMeansConfig};
use speechlmscore::scoring::{features_for_path, load_scores_csv, score_corpus, write_scores_csv, Pipeline, ResampleMode, ScoreRow};
use speechlmscore::synth::write_demo_corpus;
use speechlmscore::tokenizer::{load_token_corpus, save_token_corpus, tokenize_features, TokenPolicy};
use speechlmscore::ulm::rnn::train_rnn;
use speechlmscore::ulm::{load_lm, save_lm, train, RnnConfig, TrainConfig, UnitLm, Vocabulary};

/// An error in how the tool was invoked rather than in the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser)]
#[command(name = "slms", version, about = "Score speech quality with a discrete-unit language model")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Extract log-mel feature files (.slmf) from WAV audio.
    Features {
        /// WAV file, directory of WAV files, or manifest CSV.
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        front: FrontEnd,
        #[command(flatten)]
        run: Run,
    },
    /// Fit a k-means codebook (.slmc) on features or audio.
    TrainQuantizer {
        /// Directory of .slmf/.wav files, a single file, or a manifest CSV.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        vocab_size: usize,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        /// Stop when inertia improves by less than this fraction.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Z-score each feature dimension before clustering.
        #[arg(long)]
        standardize: bool,
        #[arg(long, default_value_t = 3)]
        n_init: usize,
        /// Reservoir-sample at most this many frames for clustering.
        #[arg(long, default_value_t = 2_000_000)]
        max_frames: usize,
        #[command(flatten)]
        front: FrontEnd,
        #[command(flatten)]
        run: Run,
    },
    /// Turn audio or features into a unit token corpus.
    Tokenize {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long, value_enum, default_value_t = Policy::Dedup)]
        policy: Policy,
        /// Directory of .slmf/.wav files, a single file, or a manifest CSV.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        front: FrontEnd,
        #[command(flatten)]
        run: Run,
    },
    /// Train a unit language model on a token corpus.
    TrainUlm {
        /// Token corpus file.
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Policy::Dedup)]
        policy: Policy,
        /// Vocabulary size; alternatively taken from --codebook.
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Backend::Ngram)]
        backend: Backend,
        #[arg(long, default_value_t = 3)]
        order: usize,
        #[arg(long, default_value_t = 0.75)]
        discount: f64,
        #[arg(long, default_value_t = 128)]
        hidden: usize,
        #[arg(long, default_value_t = 64)]
        embed: usize,
        #[arg(long, default_value_t = 1)]
        layers: usize,
        #[arg(long, default_value_t = 0.002)]
        lr: f64,
        #[arg(long, default_value_t = 0.2)]
        dropout: f64,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        bptt: usize,
        #[arg(long, default_value_t = 5.0)]
        clip: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        run: Run,
    },
    /// Score every utterance of a manifest.
    Score {
        #[arg(long)]
        codebook: PathBuf,
        /// Unit LM file (ARPA or SLMR).
        #[arg(long)]
        ulm: PathBuf,
        #[arg(long, value_enum, default_value_t = Policy::Dedup)]
        policy: Policy,
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
        /// Add the end-of-sequence term to the average.
        #[arg(long)]
        include_eos: bool,
        #[arg(long)]
        manifest: PathBuf,
        /// Scores CSV to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        front: FrontEnd,
        #[command(flatten)]
        run: Run,
    },
    /// Correlate scores with MOS at utterance and system level.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        scores: PathBuf,
        /// Report JSON to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: Run,
    },
    /// Mean score of a clean token corpus under increasing random substitution.
    CorruptionBench {
        #[arg(long)]
        ulm: PathBuf,
        /// Clean token corpus file.
        #[arg(long = "in")]
        input: PathBuf,
        /// Token policy of the corpus; defaults to the model's own.
        #[arg(long, value_enum)]
        policy: Option<Policy>,
        /// Optional codebook checked against the model vocabulary.
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Report JSON to write; printed to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: Run,
    },
    /// Print metadata of a feature, codebook or language model file.
    Info {
        path: PathBuf,
    },
    /// Write a small synthetic corpus (clean training audio plus a MOS-labelled
    /// evaluation set) for trying the pipeline.
    DemoCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct FrontEnd {
    #[arg(long, default_value_t = 40)]
    n_mels: usize,
    /// Analysis window in seconds.
    #[arg(long, default_value_t = 0.025)]
    win_length: f64,
    /// Frame hop in seconds.
    #[arg(long, default_value_t = 0.020)]
    hop_length: f64,
    #[arg(long, default_value_t = 512)]
    n_fft: usize,
    #[arg(long, default_value_t = 20.0)]
    fmin: f64,
    #[arg(long, default_value_t = 7600.0)]
    fmax: f64,
    /// Resample non-16 kHz input (`on`) or reject it (`error`).
    #[arg(long, value_enum, default_value_t = Resample::On)]
    resample: Resample,
    #[arg(long)]
    peak_normalize: bool,
}

impl FrontEnd {
    fn logmel(&self) -> LogMelConfig {
        LogMelConfig {
            n_mels: self.n_mels,
            window: self.win_length,
            hop: self.hop_length,
            fft_size: self.n_fft,
            mel_low: self.fmin,
            mel_high: self.fmax,
            ..LogMelConfig::default()
        }
    }

    fn features(&self, path: &Path) -> Result<FeatureSequence> {
        let mode = match self.resample {
            Resample::On => ResampleMode::On,
            Resample::Error => ResampleMode::Error,
        };
        features_for_path(path, &self.logmel(), mode, self.peak_normalize)
            .with_context(|| format!("{}", path.display()))
    }
}

#[derive(Args)]
struct Run {
    /// File of `key = value` lines; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, env = "SLMS_WORKERS")]
    workers: Option<usize>,
}

impl Run {
    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        match self.workers {
            Some(0) => return Err(usage("--workers must be at least 1")),
            Some(n) => b = b.num_threads(n),
            None => {}
        }
        Ok(b.build()?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Dedup,
    KeepRepeats,
}

impl From<Policy> for TokenPolicy {
    fn from(p: Policy) -> Self {
        match p {
            Policy::Dedup => TokenPolicy::Dedup,
            Policy::KeepRepeats => TokenPolicy::KeepRepeats,
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Backend {
    Ngram,
    Rnn,
}

#[derive(Clone, Copy, ValueEnum)]
enum Resample {
    On,
    Error,
}

/// Inputs named by `--in`: a directory (its `.wav` and `.slmf` files, by
/// name), a manifest CSV, or one file. Utterance ids are file stems or the
/// manifest's ids.
fn collect_inputs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    if path.is_dir() {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(path).with_context(|| format!("{}", path.display()))? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "wav" || e == "slmf") {
                files.push(p);
            }
        }
        files.sort();
        let mut out: Vec<(String, PathBuf)> = files.into_iter().map(|p| (stem(&p), p)).collect();
        out.dedup_by(|a, b| a.0 == b.0);
        if out.is_empty() {
            bail!("{}: no .wav or .slmf files", path.display());
        }
        return Ok(out);
    }
    if path.extension().is_some_and(|e| e == "csv") {
        let m = load_manifest(path).with_context(|| format!("{}", path.display()))?;
        return Ok(m.rows().iter().map(|r| (r.utt_id.clone(), m.resolve(&r.path))).collect());
    }
    if !path.exists() {
        bail!("input not found: {}", path.display());
    }
    Ok(vec![(stem(path), path.to_path_buf())])
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(suffix);
    PathBuf::from(name)
}

fn load_model(path: &Path) -> Result<UnitLm> {
    load_lm(path).with_context(|| format!("{}", path.display()))
}

fn run(cmd: Cmd, resolved: BTreeMap<String, String>) -> Result<()> {
    match cmd {
        Cmd::Features { input, out, front, run } => {
            let inputs = collect_inputs(&input)?;
            std::fs::create_dir_all(&out)?;
            run.pool()?.install(|| {
                inputs.par_iter().try_for_each(|(id, path)| -> Result<()> {
                    let fs = front.features(path)?;
                    write_features(&fs, out.join(format!("{id}.slmf")))?;
                    Ok(())
                })
            })?;
            config::write_sidecar(&out.join("features.config"), &resolved)?;
            eprintln!("wrote {} feature files to {}", inputs.len(), out.display());
        }
        Cmd::TrainQuantizer { input, out, vocab_size, max_iters, tol, seed, standardize, n_init, max_frames, front, run } => {
            let inputs = collect_inputs(&input)?;
            let corpus = run
                .pool()?
                .install(|| inputs.par_iter().map(|(_, p)| front.features(p)).collect::<Result<Vec<_>>>())?;
            let sample = reservoir_sample(&corpus, max_frames, seed)?;
            let cfg = KMeansConfig { max_iters, rel_tol: tol, seed, n_init, standardize };
            let fit = run.pool()?.install(|| fit_kmeans(&[sample], vocab_size, &cfg))?;
            save_codebook(&fit.codebook, &out)?;
            config::write_sidecar(&sidecar(&out, ".config"), &resolved)?;
            eprintln!(
                "codebook V={} D={} inertia={:.6} after {} iterations (restart {} of {})",
                fit.codebook.vocab_size(),
                fit.codebook.dim(),
                fit.inertia(),
                fit.inertia_trace.len(),
                fit.best_restart + 1,
                fit.restart_inertias.len()
            );
        }
        Cmd::Tokenize { codebook, policy, input, out, front, run } => {
            let cb = load_codebook(&codebook).with_context(|| format!("{}", codebook.display()))?;
            let mut inputs = collect_inputs(&input)?;
            inputs.sort();
            let corpus = run.pool()?.install(|| {
                inputs
                    .par_iter()
                    .map(|(id, p)| {
                        let fs = front.features(p)?;
                        tokenize_features(id, &fs, &cb, policy.into()).with_context(|| format!("{}", p.display()))
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            save_token_corpus(&out, &corpus)?;
            config::write_sidecar(&sidecar(&out, ".config"), &resolved)?;
            eprintln!("wrote {} token sequences to {}", corpus.len(), out.display());
        }
        Cmd::TrainUlm {
            input,
            out,
            policy,
            vocab_size,
            codebook,
            backend,
            order,
            discount,
            hidden,
            embed,
            layers,
            lr,
            dropout,
            epochs,
            bptt,
            clip,
            batch_size,
            seed,
            run,
        } => {
            let v = match (vocab_size, &codebook) {
                (Some(v), None) => v,
                (None, Some(c)) => load_codebook(c).with_context(|| format!("{}", c.display()))?.vocab_size(),
                (Some(v), Some(c)) => {
                    let cv = load_codebook(c).with_context(|| format!("{}", c.display()))?.vocab_size();
                    if cv != v {
                        bail!(speechlmscore::Error::ComponentMismatch(format!(
                            "--vocab-size {v} disagrees with codebook V={cv}"
                        )));
                    }
                    v
                }
                (None, None) => return Err(usage("train-ulm needs --vocab-size or --codebook")),
            };
            let vocab = Vocabulary::new(v)?;
            let corpus = load_token_corpus(&input, v, policy.into()).with_context(|| format!("{}", input.display()))?;
            let lm = match backend {
                Backend::Ngram => train(&corpus, vocab, &TrainConfig::Ngram { order, discount })?,
                Backend::Rnn => {
                    let cfg = RnnConfig {
                        embed,
                        hidden,
                        layers,
                        lr,
                        dropout,
                        epochs,
                        bptt_len: bptt,
                        grad_clip: clip,
                        seed,
                        batch_size,
                    };
                    let seqs: Vec<&[u32]> = corpus.iter().map(|t| t.tokens()).collect();
                    let (model, trace) = run.pool()?.install(|| train_rnn(&seqs, vocab, &cfg, policy.into()))?;
                    for (epoch, loss) in trace.iter().enumerate() {
                        eprintln!("epoch {epoch:>3}  loss {loss:.6}");
                    }
                    UnitLm::Rnn(model)
                }
            };
            save_lm(&lm, &out)?;
            config::write_sidecar(&sidecar(&out, ".config"), &resolved)?;
            eprintln!("{}", lm.describe());
        }
        Cmd::Score { codebook, ulm, policy, temperature, include_eos, manifest, out, front, run } => {
            let cb = load_codebook(&codebook).with_context(|| format!("{}", codebook.display()))?;
            let lm = load_model(&ulm)?;
            let m = load_manifest(&manifest).with_context(|| format!("{}", manifest.display()))?;
            let resample = match front.resample {
                Resample::On => ResampleMode::On,
                Resample::Error => ResampleMode::Error,
            };
            let pipeline = Pipeline {
                codebook: &cb,
                lm: lm.as_model(),
                policy: policy.into(),
                temperature,
                include_eos,
                logmel: front.logmel(),
                resample,
                peak_normalize: front.peak_normalize,
            };
            let rows = run.pool()?.install(|| score_corpus(&m, &pipeline))?;
            write_scores_csv(std::fs::File::create(&out).with_context(|| format!("{}", out.display()))?, &rows)?;
            config::write_sidecar(&sidecar(&out, ".config"), &resolved)?;
            let failed = rows.iter().filter(|r| matches!(r, ScoreRow::Failed { .. })).count();
            if failed > 0 {
                eprintln!("warning: {failed} of {} utterances failed; see the status column", rows.len());
            }
        }
        Cmd::Evaluate { manifest, scores, out, run: _ } => {
            let m = load_manifest(&manifest).with_context(|| format!("{}", manifest.display()))?;
            let s = load_scores_csv(&scores).with_context(|| format!("{}", scores.display()))?;
            let mut report = evaluate(&m, &s)?;
            report.config = resolved;
            std::fs::write(&out, report.to_json()?).with_context(|| format!("{}", out.display()))?;
            for flag in &report.degenerate_flags {
                eprintln!("warning: {flag}");
            }
        }
        Cmd::CorruptionBench { ulm, input, policy, codebook, rates, seed, out, run } => {
            let lm = load_model(&ulm)?;
            let v = lm.as_model().vocab().size();
            if let Some(c) = &codebook {
                let cv = load_codebook(c).with_context(|| format!("{}", c.display()))?.vocab_size();
                if cv != v {
                    bail!(speechlmscore::Error::ComponentMismatch(format!(
                        "codebook has V={cv} but the language model has V={v}"
                    )));
                }
            }
            let policy: TokenPolicy = match (policy, lm.as_model().policy()) {
                (Some(p), _) => p.into(),
                (None, Some(p)) => p,
                (None, None) => return Err(usage("the model records no token policy; pass --policy")),
            };
            let corpus = load_token_corpus(&input, v, policy).with_context(|| format!("{}", input.display()))?;
            let report = run.pool()?.install(|| corruption_benchmark(lm.as_model(), &corpus, &rates, seed))?;
            let json = serde_json::json!({
                "points": report.points,
                "srcc": report.srcc,
                "config": resolved,
            });
            let text = serde_json::to_string_pretty(&json)? + "\n";
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("{}", path.display()))?,
                None => print!("{text}"),
            }
        }
        Cmd::Info { path } => println!("{}", info(&path)?),
        Cmd::DemoCorpus { out, seed } => {
            let demo = write_demo_corpus(&out, seed)?;
            println!("training audio: {} files in {}", demo.train.len(), out.join("train").display());
            println!("evaluation manifest: {}", demo.manifest_path.display());
        }
    }
    Ok(())
}

fn info(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("{}", path.display()))?;
    let version = || bytes.get(4..8).map(|b| u32::from_le_bytes(b.try_into().unwrap())).unwrap_or(0);
    let text = match bytes.get(..4) {
        Some(b"SLMF") => {
            let fs = speechlmscore::features::decode_features(&bytes)?;
            format!("format=features version={} T={} D={}", version(), fs.num_frames(), fs.dim())
        }
        Some(b"SLMC") => {
            let cb = speechlmscore::quantizer::decode_codebook(&bytes)?;
            format!(
                "format=codebook version={} V={} D={} standardize={}",
                version(),
                cb.vocab_size(),
                cb.dim(),
                cb.standardizer().is_some()
            )
        }
        Some(b"SLMR") => format!("format=slmr version={} {}", version(), load_model(path)?.describe()),
        _ => format!("format=arpa {}", load_model(path)?.describe()),
    };
    Ok(text)
}

fn main() -> ExitCode {
    let cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::expand_config_file(&cmd, argv) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let matches = match cmd.clone().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let resolved = match matches.subcommand() {
        Some((name, sub_matches)) => {
            let sub = cmd.find_subcommand(name).expect("matched subcommand exists");
            config::resolved(sub, sub_matches)
        }
        None => BTreeMap::new(),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command, resolved) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
