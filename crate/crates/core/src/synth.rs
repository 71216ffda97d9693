//! Synthetic data: Markov unit corpora and a small "speech-like" audio
//! corpus with graded degradations and MOS labels, so the whole pipeline
//! runs without external data.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{write_wav_pcm16, Waveform, CANONICAL_RATE};
use crate::error::Result;
use crate::manifest::{write_manifest, Manifest, ManifestRow};
use crate::tokenizer::{TokenPolicy, TokenSequence};

/// A first-order chain where every unit has a few preferred successors and
/// never repeats itself.
#[derive(Debug, Clone)]
pub struct MarkovSource {
    vocab_size: usize,
    /// Cumulative successor distributions, one row per unit.
    cdf: Vec<Vec<(f64, u32)>>,
}

impl MarkovSource {
    pub fn new(vocab_size: usize, successors: usize, seed: u64) -> Self {
        assert!(vocab_size >= 2, "need at least two units");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = successors.clamp(1, vocab_size - 1);
        let cdf = (0..vocab_size as u32)
            .map(|u| {
                let mut next = Vec::with_capacity(k);
                while next.len() < k {
                    let c = rng.gen_range(0..vocab_size as u32);
                    if c != u && !next.contains(&c) {
                        next.push(c);
                    }
                }
                let weights: Vec<f64> = (0..k).map(|i| 1.0 / (i + 1) as f64).collect();
                let z: f64 = weights.iter().sum();
                let mut acc = 0.0;
                next.into_iter()
                    .zip(weights)
                    .map(|(c, w)| {
                        acc += w / z;
                        (acc, c)
                    })
                    .collect()
            })
            .collect();
        Self { vocab_size, cdf }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn sample(&self, len: usize, rng: &mut impl Rng) -> Vec<u32> {
        let mut out = Vec::with_capacity(len);
        let mut cur = rng.gen_range(0..self.vocab_size as u32);
        for _ in 0..len {
            out.push(cur);
            let u: f64 = rng.gen();
            let row = &self.cdf[cur as usize];
            cur = row.iter().find(|(c, _)| u < *c).unwrap_or(row.last().unwrap()).1;
        }
        out
    }
}

/// `count` deduplicated sequences of 20 to 60 units from a seeded chain.
pub fn markov_corpus(vocab_size: usize, count: usize, seed: u64) -> Vec<TokenSequence> {
    let source = MarkovSource::new(vocab_size, 3, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    (0..count)
        .map(|i| {
            let len = rng.gen_range(20..=60);
            let tokens = source.sample(len, &mut rng);
            TokenSequence::new(format!("syn{i:05}"), tokens, vocab_size, TokenPolicy::Dedup)
                .expect("chain never repeats a unit")
        })
        .collect()
}

/// Harmonic "phones": fundamental and two formant-like partials.
const PHONES: [(f64, f64, f64); 12] = [
    (120.0, 700.0, 1200.0),
    (130.0, 300.0, 2300.0),
    (110.0, 500.0, 1700.0),
    (140.0, 400.0, 800.0),
    (125.0, 650.0, 1900.0),
    (115.0, 350.0, 1000.0),
    (135.0, 550.0, 2600.0),
    (145.0, 800.0, 1400.0),
    (105.0, 450.0, 2000.0),
    (150.0, 250.0, 1600.0),
    (128.0, 600.0, 2900.0),
    (118.0, 750.0, 1100.0),
];

/// Degradation applied by one synthetic "system".
#[derive(Debug, Clone, Copy)]
pub struct Degradation {
    /// Probability that a phone is replaced by a random one.
    pub substitution: f64,
    /// Additive white noise amplitude.
    pub noise: f64,
}

impl Degradation {
    /// Nominal MOS before listener jitter.
    pub fn nominal_mos(&self) -> f64 {
        (4.6 - 4.0 * self.substitution - 6.0 * self.noise).clamp(1.0, 5.0)
    }
}

pub fn synth_utterance(
    source: &MarkovSource,
    phones: usize,
    degradation: Degradation,
    rng: &mut impl Rng,
) -> Waveform {
    let seq = source.sample(phones, rng);
    let rate = CANONICAL_RATE as f64;
    let mut samples = Vec::new();
    let mut phase = [0.0f64; 3];
    for &p in &seq {
        let p = if rng.gen::<f64>() < degradation.substitution {
            rng.gen_range(0..PHONES.len())
        } else {
            p as usize % PHONES.len()
        };
        let (f0, f1, f2) = PHONES[p];
        let dur = rng.gen_range(0.06..0.15);
        let n = (dur * rate) as usize;
        for i in 0..n {
            let env = (std::f64::consts::PI * i as f64 / n as f64).sin().powf(0.3);
            let mut v = 0.0;
            for (k, (f, a)) in [(f0, 0.5), (f1, 0.3), (f2, 0.2)].iter().enumerate() {
                phase[k] += 2.0 * std::f64::consts::PI * f / rate;
                v += a * phase[k].sin();
            }
            let noise = degradation.noise * (rng.gen::<f64>() * 2.0 - 1.0);
            samples.push((0.6 * env * v + noise).clamp(-1.0, 1.0) as f32);
        }
    }
    Waveform::new(samples, CANONICAL_RATE).expect("synthesized audio is finite and non-empty")
}

/// Layout of a generated demo corpus.
#[derive(Debug, Clone)]
pub struct DemoCorpus {
    /// Clean utterances for training the quantizer and the unit LM.
    pub train: Vec<std::path::PathBuf>,
    /// Manifest of degraded utterances with MOS labels.
    pub manifest_path: std::path::PathBuf,
}

/// Write `train/*.wav`, `eval/*.wav` and `eval/manifest.csv` under `dir`.
/// The evaluation set has four systems of five utterances each.
pub fn write_demo_corpus(dir: impl AsRef<Path>, seed: u64) -> Result<DemoCorpus> {
    let dir = dir.as_ref();
    let train_dir = dir.join("train");
    let eval_dir = dir.join("eval");
    std::fs::create_dir_all(&train_dir)?;
    std::fs::create_dir_all(&eval_dir)?;
    let source = MarkovSource::new(PHONES.len(), 3, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(17));

    let clean = Degradation { substitution: 0.0, noise: 0.0 };
    let mut train = Vec::new();
    for i in 0..40 {
        let w = synth_utterance(&source, rng.gen_range(14..24), clean, &mut rng);
        let path = train_dir.join(format!("train{i:03}.wav"));
        write_wav_pcm16(&path, &w)?;
        train.push(path);
    }

    let systems = [
        Degradation { substitution: 0.0, noise: 0.005 },
        Degradation { substitution: 0.2, noise: 0.05 },
        Degradation { substitution: 0.4, noise: 0.15 },
        Degradation { substitution: 0.7, noise: 0.3 },
    ];
    let mut rows = Vec::new();
    for (s, deg) in systems.iter().enumerate() {
        for u in 0..5 {
            let w = synth_utterance(&source, rng.gen_range(14..24), *deg, &mut rng);
            let name = format!("sys{s}_utt{u}.wav");
            write_wav_pcm16(eval_dir.join(&name), &w)?;
            let jitter = rng.gen_range(-0.3..0.3);
            let mos = ((deg.nominal_mos() + jitter).clamp(1.0, 5.0) * 8.0).round() / 8.0;
            rows.push(ManifestRow { utt_id: format!("sys{s}_utt{u}"), system_id: format!("sys{s}"), path: name, mos: Some(mos) });
        }
    }
    let manifest = Manifest::new(rows, &eval_dir)?;
    let manifest_path = eval_dir.join("manifest.csv");
    write_manifest(std::fs::File::create(&manifest_path)?, &manifest)?;
    Ok(DemoCorpus { train, manifest_path })
}
