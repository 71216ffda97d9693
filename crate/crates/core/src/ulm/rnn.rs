//! Recurrent unit language model: embedding, stacked LSTM, softmax over
//! units plus end-of-sequence. Forward, backpropagation through time, Adam
//! and the finite-difference gradient check are all implemented here in
//! `f64`.
//!
//! Parameters live in one flat vector, laid out in the same order as the
//! `SLMR` file:
//!
//! 1. embedding, `(V + 2) x E`
//! 2. per layer: input weights `4H x in`, recurrent weights `4H x H`, bias `4H`
//!    (gate rows in i, f, g, o order)
//! 3. output projection `H x (V + 1)`, then output bias `V + 1`

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::binfmt::{check_version, Reader, Writer};
use crate::error::{Error, Result};
use crate::tokenizer::TokenPolicy;

use super::{UnitLanguageModel, Vocabulary};

const RNN_MAGIC: &[u8; 4] = b"SLMR";
const RNN_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct RnnConfig {
    pub embed: usize,
    pub hidden: usize,
    pub layers: usize,
    pub lr: f64,
    pub dropout: f64,
    pub epochs: usize,
    pub bptt_len: usize,
    pub grad_clip: f64,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for RnnConfig {
    fn default() -> Self {
        Self {
            embed: 64,
            hidden: 128,
            layers: 1,
            lr: 0.002,
            dropout: 0.2,
            epochs: 40,
            bptt_len: 128,
            grad_clip: 5.0,
            seed: 0,
            batch_size: 32,
        }
    }
}

impl RnnConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvariantViolation(m.into()));
        if self.embed == 0 || self.hidden == 0 || self.layers == 0 {
            return bad("embedding size, hidden size and layer count must be positive");
        }
        if !(self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.epochs == 0 || self.bptt_len == 0 || self.batch_size == 0 {
            return bad("epochs, bptt length and batch size must be positive");
        }
        if !(self.grad_clip > 0.0) {
            return bad("gradient clip must be positive");
        }
        Ok(())
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    vocab: usize,
    embed: usize,
    hidden: usize,
    layers: Vec<LayerLayout>,
    out_w: usize,
    out_b: usize,
    total: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerLayout {
    input: usize,
    w_ih: usize,
    w_hh: usize,
    bias: usize,
}

impl Layout {
    fn new(vocab: usize, embed: usize, hidden: usize, layers: usize) -> Self {
        let mut off = (vocab + 2) * embed;
        let layers = (0..layers)
            .map(|l| {
                let input = if l == 0 { embed } else { hidden };
                let w_ih = off;
                let w_hh = w_ih + 4 * hidden * input;
                let bias = w_hh + 4 * hidden * hidden;
                off = bias + 4 * hidden;
                LayerLayout { input, w_ih, w_hh, bias }
            })
            .collect();
        let out_w = off;
        let out_b = out_w + hidden * (vocab + 1);
        let total = out_b + vocab + 1;
        Self { vocab, embed, hidden, layers, out_w, out_b, total }
    }

    fn outcomes(&self) -> usize {
        self.vocab + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RnnModel {
    vocab: Vocabulary,
    policy: Option<TokenPolicy>,
    layout: Layout,
    params: Vec<f64>,
    dropout: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one layer at one time step.
#[derive(Clone)]
struct Cell {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>, // i, f, g, o after nonlinearity
    tanh_c: Vec<f64>,
}

struct Step {
    cells: Vec<Cell>,
    /// Dropout multipliers applied to the input of each layer and to the
    /// output of the top layer (`layers + 1` masks).
    masks: Vec<Option<Vec<f64>>>,
    top: Vec<f64>,
    probs: Vec<f64>,
    symbol: u32,
    target: usize,
}

/// Recurrent state carried between steps (and between BPTT segments).
#[derive(Clone)]
pub struct State {
    h: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
}

impl RnnModel {
    /// Uniform `[-1/sqrt(H), 1/sqrt(H)]` LSTM and output weights and biases,
    /// standard normal embeddings, forget-gate bias shifted by +1.
    pub fn init(vocab: Vocabulary, embed: usize, hidden: usize, layers: usize, seed: u64) -> Result<Self> {
        if embed == 0 || hidden == 0 || layers == 0 {
            return Err(Error::InvariantViolation("model dimensions must be positive".into()));
        }
        let layout = Layout::new(vocab.size(), embed, hidden, layers);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 1.0 / (hidden as f64).sqrt();
        let mut params: Vec<f64> = (0..layout.total).map(|_| rng.gen_range(-k..k)).collect();
        for p in &mut params[..(vocab.size() + 2) * embed] {
            *p = rng.sample(StandardNormal);
        }
        for l in &layout.layers {
            for p in &mut params[l.bias + hidden..l.bias + 2 * hidden] {
                *p += 1.0;
            }
        }
        Ok(Self { vocab, policy: None, layout, params, dropout: 0.0 })
    }

    pub fn embed_dim(&self) -> usize {
        self.layout.embed
    }

    pub fn hidden(&self) -> usize {
        self.layout.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.layout.layers.len()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn with_policy(mut self, policy: TokenPolicy) -> Self {
        self.policy = Some(policy);
        self
    }

    /// Range of flat parameter indices holding the embedding row of `symbol`.
    pub fn embedding_row(&self, symbol: u32) -> std::ops::Range<usize> {
        let e = self.layout.embed;
        symbol as usize * e..(symbol as usize + 1) * e
    }

    /// Round every weight to the nearest `f32`, the precision of the file format.
    pub fn round_to_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    pub fn zero_state(&self) -> State {
        let h = self.layout.hidden;
        State { h: vec![vec![0.0; h]; self.num_layers()], c: vec![vec![0.0; h]; self.num_layers()] }
    }

    fn forward_step(
        &self,
        state: &mut State,
        symbol: u32,
        target: usize,
        dropout: Option<(&mut ChaCha8Rng, f64)>,
    ) -> Step {
        let lay = &self.layout;
        let hsz = lay.hidden;
        let p = &self.params;
        let nl = lay.layers.len();
        let mut masks: Vec<Option<Vec<f64>>> = vec![None; nl + 1];
        if let Some((rng, rate)) = dropout {
            if rate > 0.0 {
                let keep = 1.0 - rate;
                for (l, m) in masks.iter_mut().enumerate() {
                    let n = if l == 0 { lay.embed } else { hsz };
                    *m = Some((0..n).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect());
                }
            }
        }
        let mut x: Vec<f64> = p[self.embedding_row(symbol)].to_vec();
        let mut cells = Vec::with_capacity(nl);
        for (l, ll) in lay.layers.iter().enumerate() {
            if let Some(m) = &masks[l] {
                x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            let h_prev = state.h[l].clone();
            let c_prev = state.c[l].clone();
            let mut z = p[ll.bias..ll.bias + 4 * hsz].to_vec();
            for (r, zr) in z.iter_mut().enumerate() {
                let wi = &p[ll.w_ih + r * ll.input..ll.w_ih + (r + 1) * ll.input];
                let wh = &p[ll.w_hh + r * hsz..ll.w_hh + (r + 1) * hsz];
                *zr += wi.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
                    + wh.iter().zip(&h_prev).map(|(a, b)| a * b).sum::<f64>();
            }
            let mut gates = vec![0.0; 4 * hsz];
            for j in 0..hsz {
                gates[j] = sigmoid(z[j]);
                gates[hsz + j] = sigmoid(z[hsz + j]);
                gates[2 * hsz + j] = z[2 * hsz + j].tanh();
                gates[3 * hsz + j] = sigmoid(z[3 * hsz + j]);
            }
            let c: Vec<f64> = (0..hsz).map(|j| gates[hsz + j] * c_prev[j] + gates[j] * gates[2 * hsz + j]).collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h: Vec<f64> = (0..hsz).map(|j| gates[3 * hsz + j] * tanh_c[j]).collect();
            state.h[l] = h.clone();
            state.c[l] = c;
            cells.push(Cell { input: x, h_prev, c_prev, gates, tanh_c });
            x = h;
        }
        if let Some(m) = &masks[nl] {
            x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
        }
        let probs = self.output_probs(&x);
        Step { cells, masks, top: x, probs, symbol, target }
    }

    fn output_logits(&self, top: &[f64]) -> Vec<f64> {
        let lay = &self.layout;
        let no = lay.outcomes();
        let mut logits = self.params[lay.out_b..lay.out_b + no].to_vec();
        for (j, &hj) in top.iter().enumerate() {
            let row = &self.params[lay.out_w + j * no..lay.out_w + (j + 1) * no];
            for (lo, w) in logits.iter_mut().zip(row) {
                *lo += hj * w;
            }
        }
        logits
    }

    fn output_probs(&self, top: &[f64]) -> Vec<f64> {
        let logits = self.output_logits(top);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    fn log_softmax(&self, top: &[f64]) -> Vec<f64> {
        let logits = self.output_logits(top);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits.into_iter().map(|l| l - lse).collect()
    }

    /// Backpropagate through a run of steps, adding `scale * dLoss/dθ` into
    /// `grad`. The incoming state gradient at the end of the run is zero
    /// (truncated BPTT).
    fn backward(&self, steps: &[Step], scale: f64, grad: &mut [f64]) {
        let lay = &self.layout;
        let hsz = lay.hidden;
        let no = lay.outcomes();
        let nl = lay.layers.len();
        let p = &self.params;
        let mut dh_next = vec![vec![0.0; hsz]; nl];
        let mut dc_next = vec![vec![0.0; hsz]; nl];
        for step in steps.iter().rev() {
            let mut dlogits = step.probs.clone();
            dlogits[step.target] -= 1.0;
            dlogits.iter_mut().for_each(|d| *d *= scale);
            for (g, d) in grad[lay.out_b..lay.out_b + no].iter_mut().zip(&dlogits) {
                *g += d;
            }
            let mut dx = vec![0.0; hsz];
            for j in 0..hsz {
                let row = lay.out_w + j * no;
                let mut acc = 0.0;
                for o in 0..no {
                    grad[row + o] += step.top[j] * dlogits[o];
                    acc += p[row + o] * dlogits[o];
                }
                dx[j] = acc;
            }
            if let Some(m) = &step.masks[nl] {
                dx.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
            }
            for l in (0..nl).rev() {
                let ll = &lay.layers[l];
                let cell = &step.cells[l];
                let g = &cell.gates;
                let mut dz = vec![0.0; 4 * hsz];
                for j in 0..hsz {
                    let dh = dx[j] + dh_next[l][j];
                    let (i, f, gg, o) = (g[j], g[hsz + j], g[2 * hsz + j], g[3 * hsz + j]);
                    let tc = cell.tanh_c[j];
                    let dc = dh * o * (1.0 - tc * tc) + dc_next[l][j];
                    dz[j] = dc * gg * i * (1.0 - i);
                    dz[hsz + j] = dc * cell.c_prev[j] * f * (1.0 - f);
                    dz[2 * hsz + j] = dc * i * (1.0 - gg * gg);
                    dz[3 * hsz + j] = dh * tc * o * (1.0 - o);
                    dc_next[l][j] = dc * f;
                }
                let mut d_in = vec![0.0; ll.input];
                let mut d_h = vec![0.0; hsz];
                for (r, &dzr) in dz.iter().enumerate() {
                    if dzr == 0.0 {
                        continue;
                    }
                    grad[ll.bias + r] += dzr;
                    let wi = ll.w_ih + r * ll.input;
                    for (k, &xk) in cell.input.iter().enumerate() {
                        grad[wi + k] += dzr * xk;
                        d_in[k] += p[wi + k] * dzr;
                    }
                    let wh = ll.w_hh + r * hsz;
                    for (k, &hk) in cell.h_prev.iter().enumerate() {
                        grad[wh + k] += dzr * hk;
                        d_h[k] += p[wh + k] * dzr;
                    }
                }
                dh_next[l] = d_h;
                if let Some(m) = &step.masks[l] {
                    d_in.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
                }
                dx = d_in;
            }
            let row = self.embedding_row(step.symbol);
            for (g, d) in grad[row].iter_mut().zip(&dx) {
                *g += d;
            }
        }
    }

    fn inputs_targets(&self, tokens: &[u32]) -> (Vec<u32>, Vec<usize>) {
        let mut inputs = Vec::with_capacity(tokens.len() + 1);
        inputs.push(self.vocab.bos());
        inputs.extend_from_slice(tokens);
        let mut targets: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();
        targets.push(self.vocab.size());
        (inputs, targets)
    }

    /// Mean next-unit cross-entropy over every target (EOS included) of the
    /// batch, with full backpropagation and no dropout.
    pub fn loss_and_gradient(&self, batch: &[Vec<u32>]) -> Result<(f64, Vec<f64>)> {
        let total: usize = batch.iter().map(|s| s.len() + 1).sum();
        if batch.is_empty() || batch.iter().any(Vec::is_empty) {
            return Err(Error::EmptyInput);
        }
        for s in batch {
            self.vocab.check_tokens(s)?;
        }
        let mut grad = vec![0.0; self.params.len()];
        let mut loss = 0.0;
        let scale = 1.0 / total as f64;
        for seq in batch {
            let (inputs, targets) = self.inputs_targets(seq);
            let mut state = self.zero_state();
            let steps: Vec<Step> = inputs
                .iter()
                .zip(&targets)
                .map(|(&s, &t)| self.forward_step(&mut state, s, t, None))
                .collect();
            loss += steps.iter().map(|s| -s.probs[s.target].ln()).sum::<f64>();
            self.backward(&steps, scale, &mut grad);
        }
        Ok((loss * scale, grad))
    }

    /// Loss only; used by the finite-difference check.
    pub fn loss(&self, batch: &[Vec<u32>]) -> f64 {
        let total: usize = batch.iter().map(|s| s.len() + 1).sum();
        let mut loss = 0.0;
        for seq in batch {
            let (inputs, targets) = self.inputs_targets(seq);
            let mut state = self.zero_state();
            for (&s, &t) in inputs.iter().zip(&targets) {
                let step = self.forward_step(&mut state, s, t, None);
                loss -= self.log_softmax(&step.top)[t];
            }
        }
        loss / total as f64
    }
}

impl UnitLanguageModel for RnnModel {
    fn vocab(&self) -> Vocabulary {
        self.vocab
    }

    fn policy(&self) -> Option<TokenPolicy> {
        self.policy
    }

    fn backend(&self) -> &'static str {
        "rnn"
    }

    fn step_log_distributions(&self, tokens: &[u32]) -> Vec<Vec<f64>> {
        let (inputs, targets) = self.inputs_targets(tokens);
        let mut state = self.zero_state();
        inputs
            .iter()
            .zip(&targets)
            .map(|(&s, &t)| {
                let step = self.forward_step(&mut state, s, t, None);
                self.log_softmax(&step.top)
            })
            .collect()
    }
}

/// Adam with bias correction.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

fn clip_by_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Train with Adam on mean per-token cross-entropy using truncated BPTT.
///
/// Sequences are shuffled each epoch with a seeded generator and grouped
/// into batches; within a batch the `k`-th window of `bptt_len` steps of
/// every sequence forms one update, and recurrent state carries over from
/// one window to the next. Returns the model (weights rounded to `f32`)
/// and the mean training loss of each epoch.
pub fn train_rnn(
    corpus: &[&[u32]],
    vocab: Vocabulary,
    cfg: &RnnConfig,
    policy: TokenPolicy,
) -> Result<(RnnModel, Vec<f64>)> {
    cfg.validate()?;
    if corpus.is_empty() || corpus.iter().all(|s| s.is_empty()) {
        return Err(Error::EmptyCorpus);
    }
    for s in corpus {
        vocab.check_tokens(s)?;
    }
    let mut model = RnnModel::init(vocab, cfg.embed, cfg.hidden, cfg.layers, cfg.seed)?.with_policy(policy);
    model.dropout = cfg.dropout;
    let mut adam = Adam::new(model.params.len(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_d40f);
    let mut order: Vec<usize> = (0..corpus.len()).filter(|&i| !corpus[i].is_empty()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let seqs: Vec<(Vec<u32>, Vec<usize>)> = batch.iter().map(|&i| model.inputs_targets(corpus[i])).collect();
            let mut states: Vec<State> = seqs.iter().map(|_| model.zero_state()).collect();
            let longest = seqs.iter().map(|s| s.0.len()).max().unwrap_or(0);
            let mut start = 0;
            while start < longest {
                let end = start + cfg.bptt_len;
                let mut grad = vec![0.0; model.params.len()];
                let mut runs = Vec::new();
                let mut n_tok = 0usize;
                for ((inputs, targets), state) in seqs.iter().zip(states.iter_mut()) {
                    if start >= inputs.len() {
                        continue;
                    }
                    let stop = end.min(inputs.len());
                    let steps: Vec<Step> = (start..stop)
                        .map(|t| model.forward_step(state, inputs[t], targets[t], Some((&mut rng, cfg.dropout))))
                        .collect();
                    n_tok += steps.len();
                    runs.push(steps);
                }
                let scale = 1.0 / n_tok as f64;
                for steps in &runs {
                    epoch_loss += steps.iter().map(|s| -s.probs[s.target].ln()).sum::<f64>();
                    model.backward(steps, scale, &mut grad);
                }
                epoch_tokens += n_tok;
                if grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::DivergedLoss { epoch });
                }
                clip_by_norm(&mut grad, cfg.grad_clip);
                adam.step(&mut model.params, &grad);
                start = end;
            }
        }
        let mean = epoch_loss / epoch_tokens as f64;
        if !mean.is_finite() {
            return Err(Error::DivergedLoss { epoch });
        }
        trace.push(mean);
    }
    model.round_to_f32();
    Ok((model, trace))
}

/// Largest relative disagreement between the analytic gradient and central
/// finite differences, `|a - n| / max(1e-8, |a| + |n|)`, over every parameter.
pub fn gradcheck_rnn(model: &RnnModel, batch: &[Vec<u32>], epsilon: f64) -> Result<f64> {
    if model.hidden() > 16 {
        return Err(Error::InvariantViolation("gradient check is limited to H <= 16".into()));
    }
    if !(1e-6..=1e-3).contains(&epsilon) {
        return Err(Error::InvariantViolation(format!("epsilon {epsilon} outside [1e-6, 1e-3]")));
    }
    let (_, analytic) = model.loss_and_gradient(batch)?;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for i in 0..probe.params.len() {
        let orig = probe.params[i];
        probe.params[i] = orig + epsilon;
        let up = probe.loss(batch);
        probe.params[i] = orig - epsilon;
        let down = probe.loss(batch);
        probe.params[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

pub fn encode_rnn(model: &RnnModel) -> Vec<u8> {
    let mut w = Writer::new(RNN_MAGIC, RNN_VERSION);
    w.u32(model.vocab.size() as u32);
    w.u32(model.layout.embed as u32);
    w.u32(model.layout.hidden as u32);
    w.u32(model.num_layers() as u32);
    w.u8(match model.policy {
        None => 0,
        Some(TokenPolicy::Dedup) => 1,
        Some(TokenPolicy::KeepRepeats) => 2,
    });
    w.f32s(model.params.iter().map(|&p| p as f32));
    w.finish()
}

pub fn decode_rnn(bytes: &[u8]) -> Result<RnnModel> {
    let (mut r, version) = Reader::open(bytes, RNN_MAGIC)?;
    check_version(version, RNN_VERSION)?;
    let v = r.u32()? as usize;
    let e = r.u32()? as usize;
    let h = r.u32()? as usize;
    let layers = r.u32()? as usize;
    if v == 0 || e == 0 || h == 0 || layers == 0 {
        return Err(Error::InvariantViolation(format!("rnn header V={v} E={e} H={h} layers={layers}")));
    }
    let policy = match r.u8()? {
        0 => None,
        1 => Some(TokenPolicy::Dedup),
        2 => Some(TokenPolicy::KeepRepeats),
        other => return Err(Error::InvariantViolation(format!("bad policy byte {other}"))),
    };
    let layout = Layout::new(v, e, h, layers);
    let params: Vec<f64> = r.f32s(layout.total)?.into_iter().map(f64::from).collect();
    if r.remaining() != 0 {
        return Err(Error::DimensionMismatch { expected: layout.total * 4, got: layout.total * 4 + r.remaining() });
    }
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::InvariantViolation("rnn weights must be finite".into()));
    }
    Ok(RnnModel { vocab: Vocabulary::new(v)?, policy, layout, params, dropout: 0.0 })
}
