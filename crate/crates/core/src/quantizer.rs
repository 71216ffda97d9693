//! k-means codebook training and nearest-centroid assignment.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::binfmt::{check_version, Reader, Writer};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;

const CODEBOOK_MAGIC: &[u8; 4] = b"SLMC";
const CODEBOOK_VERSION: u32 = 1;

/// Per-dimension affine map `(x - mean) / std` applied before distances.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f32>,
    pub stds: Vec<f32>,
}

impl Standardizer {
    /// Pooled mean and population standard deviation per dimension.
    /// Constant dimensions get a std of 1.
    pub fn fit(corpus: &[FeatureSequence]) -> Result<Self> {
        let dim = common_dim(corpus)?;
        let mut sum = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        let mut n = 0usize;
        for fs in corpus {
            for frame in fs.frames() {
                for (j, &v) in frame.iter().enumerate() {
                    sum[j] += v as f64;
                    sq[j] += v as f64 * v as f64;
                }
                n += 1;
            }
        }
        let means: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let stds = sq
            .iter()
            .zip(&means)
            .map(|(s, m)| {
                let var = (s / n as f64 - m * m).max(0.0);
                let sd = var.sqrt() as f32;
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { means: means.iter().map(|&m| m as f32).collect(), stds })
    }

    pub fn apply(&self, frame: &[f32], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = (frame[j] as f64 - self.means[j] as f64) / self.stds[j] as f64;
        }
    }
}

/// `V` centroids of dimension `D`, optionally in standardized space.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centroids: Vec<f32>,
    vocab_size: usize,
    dim: usize,
    standardize: Option<Standardizer>,
}

impl Codebook {
    pub fn new(
        centroids: Vec<f32>,
        vocab_size: usize,
        dim: usize,
        standardize: Option<Standardizer>,
    ) -> Result<Self> {
        if vocab_size == 0 || dim == 0 {
            return Err(Error::InvariantViolation(format!(
                "codebook must have V >= 1 and D >= 1, got V={vocab_size} D={dim}"
            )));
        }
        if centroids.len() != vocab_size * dim {
            return Err(Error::DimensionMismatch { expected: vocab_size * dim, got: centroids.len() });
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvariantViolation("centroid entries must be finite".into()));
        }
        if let Some(s) = &standardize {
            if s.means.len() != dim || s.stds.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: s.means.len().min(s.stds.len()) });
            }
            if s.stds.iter().any(|&v| !(v > 0.0) || !v.is_finite()) || s.means.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvariantViolation("standardization stds must be positive".into()));
            }
        }
        Ok(Self { centroids, vocab_size, dim, standardize })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn standardizer(&self) -> Option<&Standardizer> {
        self.standardize.as_ref()
    }

    pub fn centroid(&self, v: usize) -> &[f32] {
        &self.centroids[v * self.dim..(v + 1) * self.dim]
    }

    /// Index of the nearest centroid by squared Euclidean distance; ties go
    /// to the lowest index.
    pub fn nearest(&self, frame: &[f32]) -> usize {
        let mut x = vec![0.0f64; self.dim];
        self.project(frame, &mut x);
        self.nearest_projected(&x)
    }

    fn project(&self, frame: &[f32], out: &mut [f64]) {
        match &self.standardize {
            Some(s) => s.apply(frame, out),
            None => out.iter_mut().zip(frame).for_each(|(o, &v)| *o = v as f64),
        }
    }

    fn nearest_projected(&self, x: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for v in 0..self.vocab_size {
            let d = sq_dist_f32(x, self.centroid(v));
            if d < best_d {
                best_d = d;
                best = v;
            }
        }
        best
    }
}

fn sq_dist_f32(x: &[f64], c: &[f32]) -> f64 {
    x.iter().zip(c).map(|(a, &b)| (a - b as f64) * (a - b as f64)).sum()
}

fn sq_dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn common_dim(corpus: &[FeatureSequence]) -> Result<usize> {
    let first = corpus.first().ok_or(Error::EmptyCorpus)?;
    let dim = first.dim();
    for fs in corpus {
        if fs.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: fs.dim() });
        }
    }
    Ok(dim)
}

/// Map every frame to its nearest centroid.
pub fn assign(fs: &FeatureSequence, cb: &Codebook) -> Result<Vec<u32>> {
    if fs.dim() != cb.dim() {
        return Err(Error::DimensionMismatch { expected: cb.dim(), got: fs.dim() });
    }
    let mut x = vec![0.0f64; cb.dim()];
    Ok(fs
        .frames()
        .map(|frame| {
            cb.project(frame, &mut x);
            cb.nearest_projected(&x) as u32
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct KMeansConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub n_init: usize,
    pub standardize: bool,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iters: 100, rel_tol: 1e-6, seed: 0, n_init: 3, standardize: false }
    }
}

/// Result of [`fit_kmeans`].
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Total squared distance after each assignment step of the kept restart.
    pub inertia_trace: Vec<f64>,
    /// Final inertia of every restart, in restart order.
    pub restart_inertias: Vec<f64>,
    pub best_restart: usize,
}

impl KMeansFit {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().expect("trace is never empty")
    }
}

/// Pooled-frame k-means with k-means++ seeding and `n_init` restarts.
pub fn fit_kmeans(corpus: &[FeatureSequence], vocab_size: usize, cfg: &KMeansConfig) -> Result<KMeansFit> {
    if cfg.max_iters == 0 || !(cfg.rel_tol >= 0.0) || cfg.n_init == 0 {
        return Err(Error::InvariantViolation(
            "k-means needs max_iters >= 1, n_init >= 1 and rel_tol >= 0".into(),
        ));
    }
    if vocab_size == 0 {
        return Err(Error::InvariantViolation("vocabulary size must be positive".into()));
    }
    let dim = common_dim(corpus)?;
    let n: usize = corpus.iter().map(FeatureSequence::num_frames).sum();
    if n < vocab_size {
        return Err(Error::NotEnoughPoints { points: n, clusters: vocab_size });
    }
    let standardize = if cfg.standardize { Some(Standardizer::fit(corpus)?) } else { None };
    let mut points = Vec::with_capacity(n * dim);
    let mut row = vec![0.0f64; dim];
    for fs in corpus {
        for frame in fs.frames() {
            match &standardize {
                Some(s) => s.apply(frame, &mut row),
                None => row.iter_mut().zip(frame).for_each(|(o, &v)| *o = v as f64),
            }
            points.extend_from_slice(&row);
        }
    }

    let mut best: Option<(usize, Vec<f64>, Vec<f64>)> = None;
    let mut restart_inertias = Vec::with_capacity(cfg.n_init);
    for restart in 0..cfg.n_init {
        let seed = cfg.seed.wrapping_add(restart as u64);
        let (centroids, trace) = lloyd(&points, dim, vocab_size, cfg, seed);
        let inertia = *trace.last().unwrap();
        restart_inertias.push(inertia);
        if best.as_ref().map_or(true, |(_, _, t)| inertia < *t.last().unwrap()) {
            best = Some((restart, centroids, trace));
        }
    }
    let (best_restart, centroids, inertia_trace) = best.unwrap();
    let codebook = Codebook::new(
        centroids.iter().map(|&v| v as f32).collect(),
        vocab_size,
        dim,
        standardize,
    )?;
    Ok(KMeansFit { codebook, inertia_trace, restart_inertias, best_restart })
}

fn kmeans_plus_plus(points: &[f64], dim: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = points.len() / dim;
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), point(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            if d2[chosen] == 0.0 {
                // rounding ran off the end; take the last point with mass
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap();
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let c = point(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &c));
        }
        centroids.extend_from_slice(&c);
    }
    centroids
}

/// Lloyd iterations; returns final centroids and the per-iteration inertia.
fn lloyd(points: &[f64], dim: usize, k: usize, cfg: &KMeansConfig, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let n = points.len() / dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, dim, k, &mut rng);
    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();

    for _ in 0..cfg.max_iters {
        let assigned: Vec<(usize, f64)> = points
            .par_chunks(dim)
            .map(|p| {
                let mut best = (0, f64::INFINITY);
                for v in 0..k {
                    let d = sq_dist(p, &centroids[v * dim..(v + 1) * dim]);
                    if d < best.1 {
                        best = (v, d);
                    }
                }
                best
            })
            .collect();
        let mut dists: Vec<f64> = assigned.iter().map(|a| a.1).collect();
        let new_labels: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let changed = new_labels != labels;
        labels = new_labels;

        // Empty clusters take the point currently farthest from its centroid.
        let mut counts = vec![0usize; k];
        for &l in &labels {
            counts[l] += 1;
        }
        for v in 0..k {
            if counts[v] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("n >= k guarantees a donor cluster");
            counts[labels[far]] -= 1;
            counts[v] = 1;
            labels[far] = v;
            dists[far] = 0.0;
            centroids[v * dim..(v + 1) * dim].copy_from_slice(&points[far * dim..(far + 1) * dim]);
        }

        let inertia: f64 = dists.iter().sum();
        let prev = trace.last().copied();
        trace.push(inertia);

        let mut sums = vec![0.0f64; k * dim];
        for (i, &l) in labels.iter().enumerate() {
            for j in 0..dim {
                sums[l * dim + j] += points[i * dim + j];
            }
        }
        for v in 0..k {
            for j in 0..dim {
                centroids[v * dim + j] = sums[v * dim + j] / counts[v] as f64;
            }
        }

        if !changed {
            break;
        }
        if let Some(p) = prev {
            if p <= 0.0 || (p - inertia) / p < cfg.rel_tol {
                break;
            }
        }
    }
    // Inertia of the returned centroids (after the final mean update).
    let final_inertia: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(&points[i * dim..(i + 1) * dim], &centroids[l * dim..(l + 1) * dim]))
        .sum();
    if final_inertia < *trace.last().unwrap() {
        trace.push(final_inertia);
    }
    (centroids, trace)
}

/// Uniform reservoir sample of at most `max_frames` frames across a corpus,
/// returned as a single feature sequence in reservoir order.
pub fn reservoir_sample(corpus: &[FeatureSequence], max_frames: usize, seed: u64) -> Result<FeatureSequence> {
    let dim = common_dim(corpus)?;
    if max_frames == 0 {
        return Err(Error::InvariantViolation("max_frames must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reservoir: Vec<&[f32]> = Vec::with_capacity(max_frames);
    let mut seen = 0usize;
    for fs in corpus {
        for frame in fs.frames() {
            if reservoir.len() < max_frames {
                reservoir.push(frame);
            } else {
                let j = rng.gen_range(0..=seen);
                if j < max_frames {
                    reservoir[j] = frame;
                }
            }
            seen += 1;
        }
    }
    let frames: Vec<f32> = reservoir.concat();
    FeatureSequence::new(frames, reservoir.len(), dim, corpus[0].frame_hop(), "reservoir")
}

pub fn encode_codebook(cb: &Codebook) -> Vec<u8> {
    let mut w = Writer::new(CODEBOOK_MAGIC, CODEBOOK_VERSION);
    w.u32(cb.vocab_size as u32);
    w.u32(cb.dim as u32);
    match &cb.standardize {
        Some(s) => {
            w.u8(1);
            w.f32s(s.means.iter().copied());
            w.f32s(s.stds.iter().copied());
        }
        None => w.u8(0),
    }
    w.f32s(cb.centroids.iter().copied());
    w.finish()
}

pub fn decode_codebook(bytes: &[u8]) -> Result<Codebook> {
    let (mut r, version) = Reader::open(bytes, CODEBOOK_MAGIC)?;
    check_version(version, CODEBOOK_VERSION)?;
    let v = r.u32()? as usize;
    let d = r.u32()? as usize;
    if v == 0 || d == 0 {
        return Err(Error::InvariantViolation(format!("codebook declares V={v} D={d}")));
    }
    let standardize = match r.u8()? {
        0 => None,
        1 => {
            let means = r.f32s(d)?;
            let stds = r.f32s(d)?;
            Some(Standardizer { means, stds })
        }
        other => return Err(Error::InvariantViolation(format!("bad standardize flag {other}"))),
    };
    let centroids = r.f32s(v * d)?;
    if r.remaining() != 0 {
        return Err(Error::DimensionMismatch { expected: v * d * 4, got: v * d * 4 + r.remaining() });
    }
    Codebook::new(centroids, v, d, standardize)
}

pub fn save_codebook(cb: &Codebook, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_codebook(cb))?;
    Ok(())
}

pub fn load_codebook(path: impl AsRef<Path>) -> Result<Codebook> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    decode_codebook(&std::fs::read(path)?)
}
