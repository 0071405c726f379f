//! Small-scale CBOW and PV-DBOW trainers.
//!
//! CBOW predicts a word from the mean of its context vectors; PV-DBOW
//! predicts every word of a document from the document's own vector. Both
//! share the output-side update, either a full softmax over the vocabulary
//! or negative sampling with a unigram^0.75 noise distribution.
//!
//! Training is single-threaded and visits documents in file order, so a
//! fixed seed gives bit-identical vectors.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embeddings::VectorTable;
use crate::synthetic::rng;
use crate::{Error, Matrix, Result};

/// Largest vocabulary for which the full softmax is allowed.
pub const FULL_SOFTMAX_MAX_VOCAB: usize = 2000;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    documents: Vec<(String, Vec<String>)>,
}

impl Corpus {
    pub fn new(documents: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (id, _) in &documents {
            if !seen.insert(id.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate document id {id:?}")));
            }
        }
        Ok(Corpus { documents })
    }

    /// One document per line: `doc-id<TAB>space-separated-tokens`.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut docs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (id, tokens) = line.split_once('\t').ok_or_else(|| {
                Error::parse(origin, idx + 1, "expected doc-id<TAB>tokens")
            })?;
            docs.push((
                id.trim().to_string(),
                tokens.split_whitespace().map(str::to_string).collect(),
            ));
        }
        Self::new(docs).map_err(|e| Error::parse(origin, 0, e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn documents(&self) -> &[(String, Vec<String>)] {
        &self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SoftmaxMode {
    Full,
    NegativeSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub dim: usize,
    /// Context radius: up to `window` tokens on each side.
    pub window: usize,
    pub epochs: usize,
    pub negative: usize,
    /// Learning rate decays linearly from `lr_start` to `lr_end`.
    pub lr_start: f64,
    pub lr_end: f64,
    pub seed: u64,
    pub mode: SoftmaxMode,
    pub min_count: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            dim: 100,
            window: 5,
            epochs: 20,
            negative: 5,
            lr_start: 0.025,
            lr_end: 0.0001,
            seed: 1,
            mode: SoftmaxMode::NegativeSampling,
            min_count: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 {
            return bad("dim must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.mode == SoftmaxMode::NegativeSampling && self.negative == 0 {
            return bad("negative must be >= 1 for negative sampling");
        }
        if !(self.lr_start > 0.0 && self.lr_end >= 0.0 && self.lr_end <= self.lr_start) {
            return bad("need lr_start > 0 and 0 <= lr_end <= lr_start");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    pub vocab_size: usize,
    pub examples_per_epoch: usize,
    /// Mean full-softmax objective before training and after each epoch;
    /// empty when the vocabulary is too large to evaluate it.
    pub loss_history: Vec<f64>,
}

struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Vocab {
    fn build(corpus: &Corpus, min_count: usize) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for (_, toks) in &corpus.documents {
            for t in toks {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c as usize >= min_count.max(1))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words: Vec<String> = entries.iter().map(|(w, _)| w.to_string()).collect();
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Vocab {
            words,
            index,
            counts: entries.iter().map(|e| e.1).collect(),
        }
    }

    fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().filter_map(|t| self.index.get(t).copied()).collect()
    }
}

/// Cumulative unigram^0.75 distribution.
struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    fn new(counts: &[u64]) -> Self {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        NoiseTable { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty vocabulary");
        let u = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= u)
            .min(self.cumulative.len() - 1)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Full softmax over output rows `u` (V×d, row-major) for hidden vector `v`:
/// returns `err[j] = p_j − [j == target]` and the objective
/// `−u_t·v + log Σ_j exp(u_j·v)`.
fn softmax_errors(u: &[f64], v: &[f64], target: usize, dim: usize) -> (Vec<f64>, f64) {
    let scores: Vec<f64> = u.chunks_exact(dim).map(|row| dot(row, v)).collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    let log_z = max + sum.ln();
    let mut err: Vec<f64> = scores.iter().map(|s| (s - log_z).exp()).collect();
    err[target] -= 1.0;
    (err, log_z - scores[target])
}

/// Row-major parameters shared by both trainers: `input` holds word (CBOW)
/// or document (PV-DBOW) vectors, `output` the prediction vectors.
struct Model {
    dim: usize,
    input: Vec<f64>,
    output: Vec<f64>,
}

impl Model {
    fn new<R: Rng>(rows: usize, vocab: usize, dim: usize, rng: &mut R) -> Self {
        let scale = 0.5 / dim as f64;
        let input = (0..rows * dim).map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale).collect();
        Model {
            dim,
            input,
            output: vec![0.0; vocab * dim],
        }
    }

    fn hidden(&self, ctx: &[usize]) -> Vec<f64> {
        let mut h = vec![0.0; self.dim];
        for &c in ctx {
            for (hv, w) in h.iter_mut().zip(&self.input[c * self.dim..(c + 1) * self.dim]) {
                *hv += w;
            }
        }
        let n = ctx.len() as f64;
        h.iter_mut().for_each(|x| *x /= n);
        h
    }

    fn objective(&self, ctx: &[usize], target: usize) -> f64 {
        softmax_errors(&self.output, &self.hidden(ctx), target, self.dim).1
    }

    /// One SGD step; returns nothing, updates in place.
    #[allow(clippy::too_many_arguments)]
    fn step<R: Rng>(
        &mut self,
        ctx: &[usize],
        target: usize,
        lr: f64,
        mode: SoftmaxMode,
        negative: usize,
        noise: &NoiseTable,
        rng: &mut R,
    ) {
        let d = self.dim;
        let h = self.hidden(ctx);
        let mut grad_h = vec![0.0; d];
        match mode {
            SoftmaxMode::Full => {
                let (err, _) = softmax_errors(&self.output, &h, target, d);
                for (j, e) in err.iter().enumerate() {
                    let row = &mut self.output[j * d..(j + 1) * d];
                    for k in 0..d {
                        grad_h[k] += e * row[k];
                        row[k] -= lr * e * h[k];
                    }
                }
            }
            SoftmaxMode::NegativeSampling => {
                for s in 0..=negative {
                    let (j, label) = if s == 0 {
                        (target, 1.0)
                    } else {
                        let j = noise.sample(rng);
                        if j == target {
                            continue;
                        }
                        (j, 0.0)
                    };
                    let row = &mut self.output[j * d..(j + 1) * d];
                    let e = sigmoid(dot(row, &h)) - label;
                    for k in 0..d {
                        grad_h[k] += e * row[k];
                        row[k] -= lr * e * h[k];
                    }
                }
            }
        }
        let scale = lr / ctx.len() as f64;
        for &c in ctx {
            let row = &mut self.input[c * d..(c + 1) * d];
            for k in 0..d {
                row[k] -= scale * grad_h[k];
            }
        }
    }
}

/// `(context rows, target word)` examples.
type Examples = Vec<(Vec<usize>, usize)>;

fn cbow_examples(docs: &[Vec<usize>], window: usize) -> Examples {
    let mut out = Vec::new();
    for ids in docs {
        for pos in 0..ids.len() {
            let lo = pos.saturating_sub(window);
            let hi = (pos + window + 1).min(ids.len());
            let ctx: Vec<usize> = (lo..hi).filter(|&p| p != pos).map(|p| ids[p]).collect();
            if !ctx.is_empty() {
                out.push((ctx, ids[pos]));
            }
        }
    }
    out
}

fn run(
    model: &mut Model,
    examples: &Examples,
    vocab: &Vocab,
    cfg: &TrainerConfig,
    rng: &mut impl Rng,
) -> TrainReport {
    let noise = NoiseTable::new(&vocab.counts);
    let track = vocab.words.len() <= FULL_SOFTMAX_MAX_VOCAB;
    let mean_loss = |m: &Model| {
        examples.iter().map(|(c, t)| m.objective(c, *t)).sum::<f64>() / examples.len() as f64
    };
    let mut history = Vec::new();
    if track {
        history.push(mean_loss(model));
    }
    let total = (cfg.epochs * examples.len()) as f64;
    let mut done = 0usize;
    for _ in 0..cfg.epochs {
        for (ctx, target) in examples {
            let progress = done as f64 / total;
            let lr = cfg.lr_start + (cfg.lr_end - cfg.lr_start) * progress;
            model.step(ctx, *target, lr, cfg.mode, cfg.negative, &noise, rng);
            done += 1;
        }
        if track {
            history.push(mean_loss(model));
        }
    }
    TrainReport {
        vocab_size: vocab.words.len(),
        examples_per_epoch: examples.len(),
        loss_history: history,
    }
}

fn prepare(corpus: &Corpus, cfg: &TrainerConfig) -> Result<Vocab> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Empty("corpus has no documents".into()));
    }
    let vocab = Vocab::build(corpus, cfg.min_count);
    if vocab.words.is_empty() {
        return Err(Error::NoTrainingPairs("empty vocabulary".into()));
    }
    if cfg.mode == SoftmaxMode::Full && vocab.words.len() > FULL_SOFTMAX_MAX_VOCAB {
        return Err(Error::Config(format!(
            "full softmax needs a vocabulary of at most {FULL_SOFTMAX_MAX_VOCAB}, got {}",
            vocab.words.len()
        )));
    }
    Ok(vocab)
}

fn to_table(tokens: Vec<String>, data: &[f64], dim: usize) -> Result<VectorTable> {
    let n = tokens.len();
    VectorTable::new(tokens, Matrix::from_row_slice(n, dim, data))
}

/// Train CBOW word vectors; the input matrix rows are returned.
pub fn train_cbow(corpus: &Corpus, cfg: &TrainerConfig) -> Result<(VectorTable, TrainReport)> {
    let vocab = prepare(corpus, cfg)?;
    let docs: Vec<Vec<usize>> = corpus.documents.iter().map(|(_, t)| vocab.ids(t)).collect();
    let examples = cbow_examples(&docs, cfg.window);
    if examples.is_empty() {
        return Err(Error::NoTrainingPairs(
            "no document has two in-vocabulary tokens".into(),
        ));
    }
    let mut rng = rng(cfg.seed);
    let v = vocab.words.len();
    let mut model = Model::new(v, v, cfg.dim, &mut rng);
    let report = run(&mut model, &examples, &vocab, cfg, &mut rng);
    Ok((to_table(vocab.words.clone(), &model.input, cfg.dim)?, report))
}

/// Train PV-DBOW document vectors, one per document id.
pub fn train_pvdbow(corpus: &Corpus, cfg: &TrainerConfig) -> Result<(VectorTable, TrainReport)> {
    let vocab = prepare(corpus, cfg)?;
    let mut examples = Vec::new();
    for (doc, (id, toks)) in corpus.documents.iter().enumerate() {
        let ids = vocab.ids(toks);
        if ids.is_empty() {
            return Err(Error::NoTrainingPairs(format!(
                "document {id:?} has no in-vocabulary tokens"
            )));
        }
        examples.extend(ids.into_iter().map(|w| (vec![doc], w)));
    }
    let mut rng = rng(cfg.seed);
    let mut model = Model::new(corpus.len(), vocab.words.len(), cfg.dim, &mut rng);
    let report = run(&mut model, &examples, &vocab, cfg, &mut rng);
    let ids = corpus.documents.iter().map(|(id, _)| id.clone()).collect();
    Ok((to_table(ids, &model.input, cfg.dim)?, report))
}

/// A tiny CBOW state for gradient checking.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeState {
    /// V×d context (input) vectors.
    pub input: Matrix,
    /// V×d prediction (output) vectors.
    pub output: Matrix,
    pub context: Vec<usize>,
    pub target: usize,
}

impl ProbeState {
    /// Random state with entries in (−scale, scale).
    pub fn random(vocab: usize, dim: usize, context: Vec<usize>, target: usize, scale: f64, seed: u64) -> Self {
        let mut r = rng(seed);
        let mut draw = |rows: usize| {
            let mut m = Matrix::zeros(rows, dim);
            for i in 0..rows {
                for j in 0..dim {
                    m[(i, j)] = (r.random::<f64>() * 2.0 - 1.0) * scale;
                }
            }
            m
        };
        let input = draw(vocab);
        let output = draw(vocab);
        ProbeState {
            input,
            output,
            context,
            target,
        }
    }

    fn model(&self) -> Model {
        let flat = |m: &Matrix| -> Vec<f64> { m.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()).collect() };
        Model {
            dim: self.input.ncols(),
            input: flat(&self.input),
            output: flat(&self.output),
        }
    }

    fn validate(&self) -> Result<()> {
        let v = self.input.nrows();
        if self.output.shape() != self.input.shape() {
            return Err(Error::Dimension("input and output shapes differ".into()));
        }
        if self.context.is_empty() {
            return Err(Error::NoTrainingPairs("empty context".into()));
        }
        if self.target >= v || self.context.iter().any(|&c| c >= v) {
            return Err(Error::InvalidArgument("index out of vocabulary".into()));
        }
        Ok(())
    }

    pub fn objective(&self) -> Result<f64> {
        self.validate()?;
        Ok(self.model().objective(&self.context, self.target))
    }
}

/// Analytic gradient of the CBOW objective at a probe state.
#[derive(Debug, Clone, PartialEq)]
pub struct CbowGradient {
    pub input: Matrix,
    pub output: Matrix,
    /// Contribution of `−u_t·v` to `output` (only row `target` is nonzero).
    pub output_linear: Matrix,
    /// Contribution of `log Σ exp(u_j·v)` to `output`.
    pub output_softmax: Matrix,
}

pub fn cbow_gradient(state: &ProbeState) -> Result<CbowGradient> {
    state.validate()?;
    let model = state.model();
    let (v, d) = state.input.shape();
    let h = model.hidden(&state.context);
    let (err, _) = softmax_errors(&model.output, &h, state.target, d);
    let mut output_linear = Matrix::zeros(v, d);
    let mut output_softmax = Matrix::zeros(v, d);
    let mut grad_h = vec![0.0; d];
    for j in 0..v {
        let p = err[j] + if j == state.target { 1.0 } else { 0.0 };
        for k in 0..d {
            output_softmax[(j, k)] = p * h[k];
            grad_h[k] += err[j] * state.output[(j, k)];
        }
    }
    for k in 0..d {
        output_linear[(state.target, k)] = -h[k];
    }
    let output = &output_linear + &output_softmax;
    let mut input = Matrix::zeros(v, d);
    let n = state.context.len() as f64;
    for &c in &state.context {
        for k in 0..d {
            input[(c, k)] += grad_h[k] / n;
        }
    }
    Ok(CbowGradient {
        input,
        output,
        output_linear,
        output_softmax,
    })
}

/// Entries smaller than this are compared on an absolute scale.
pub const GRADIENT_CHECK_FLOOR: f64 = 1e-4;

/// Maximum of `|analytic − numeric| / max(|analytic|, |numeric|, floor)` over
/// all parameters, with central differences of step 1e-5.
pub fn gradient_check(cfg: &TrainerConfig, probe: &ProbeState) -> Result<f64> {
    if cfg.mode != SoftmaxMode::Full {
        return Err(Error::InvalidArgument("gradient check needs full softmax".into()));
    }
    let (v, d) = probe.input.shape();
    if v > 50 || d > 8 {
        return Err(Error::InvalidArgument(format!(
            "gradient check limited to vocabulary <= 50 and dim <= 8, got {v}x{d}"
        )));
    }
    let analytic = cbow_gradient(probe)?;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for which in 0..2 {
        for i in 0..v {
            for k in 0..d {
                let mut plus = probe.clone();
                let mut minus = probe.clone();
                let (p, m, a) = if which == 0 {
                    (&mut plus.input, &mut minus.input, analytic.input[(i, k)])
                } else {
                    (&mut plus.output, &mut minus.output, analytic.output[(i, k)])
                };
                p[(i, k)] += h;
                m[(i, k)] -= h;
                let numeric = (plus.objective()? - minus.objective()?) / (2.0 * h);
                let denom = a.abs().max(numeric.abs()).max(GRADIENT_CHECK_FLOOR);
                worst = worst.max((a - numeric).abs() / denom);
            }
        }
    }
    Ok(worst)
}
