//! Teacher-forced training, greedy decoding, presets and checkpoints.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backend::{Backend, ToyBackend, ToyConfig};
use super::{copy_step, generation_distribution, step_loss, CandidateTable, HeadChoice, Target};
use crate::corpus::AnnotatedQuestion;
use crate::error::{Error, Result};
use crate::scalar::{argmax, log_softmax, softmax, Scalar};
use crate::sparqltok::detokenize;
use crate::vocab::{mask_kb_tokens, Example, Side, TriVocabulary, EOS};

/// Decoder input ids: begin marker, copy marker, then generation ids shifted
/// by two.
const BOS_IN: usize = 0;
const COPY_IN: usize = 1;

fn gen_input(g: usize) -> usize {
    g + 2
}

/// Output vocabulary of the decoder: S, then (without copy) K, then the
/// end-of-sequence marker.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenVocab {
    pub tokens: Vec<String>,
    /// Number of leading S tokens; the copy gate reads their logits.
    pub s_len: usize,
}

impl GenVocab {
    pub fn with_copy(vocab: &TriVocabulary) -> Self {
        let mut tokens = vocab.s_tokens().to_vec();
        tokens.push(EOS.to_string());
        Self {
            tokens,
            s_len: vocab.s_tokens().len(),
        }
    }

    /// Generation over S and the training K inventory.
    pub fn without_copy(vocab: &TriVocabulary) -> Self {
        let mut tokens = vocab.s_tokens().to_vec();
        tokens.extend(vocab.k_tokens().iter().cloned());
        tokens.push(EOS.to_string());
        Self {
            tokens,
            s_len: vocab.s_tokens().len(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.tokens[..self.eos()].iter().position(|t| t == token)
    }
}

/// An example in id form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedExample {
    pub id: String,
    pub src: Vec<usize>,
    pub table: CandidateTable,
    pub tgt_in: Vec<usize>,
    pub targets: Vec<Target>,
}

impl EncodedExample {
    pub fn num_tokens(&self) -> usize {
        self.targets.len()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub tokens: Vec<String>,
    pub query: String,
    pub truncated: bool,
}

/// A backend, its parameters and the copy head. Parameters are stored flat:
/// backend parameters, then `B` when copying is enabled.
#[derive(Debug, Clone)]
pub struct Model<T, B = ToyBackend> {
    pub backend: B,
    pub params: Vec<T>,
    pub copy: bool,
    pub head: HeadChoice,
    pub gen: GenVocab,
    pub vocab: TriVocabulary,
}

impl<T: Scalar> Model<T, ToyBackend> {
    /// A toy backend sized for `train`, randomly initialized from `seed`.
    pub fn toy(vocab: TriVocabulary, train: &[Example], hidden: usize, copy: bool, seed: u64) -> Self {
        let gen = if copy {
            GenVocab::with_copy(&vocab)
        } else {
            GenVocab::without_copy(&vocab)
        };
        let max_src = train.iter().map(|e| e.question.tokens.len()).max().unwrap_or(0) + 8;
        let max_tgt = train.iter().map(|e| e.query.len() + 1).max().unwrap_or(0) + 8;
        let backend = ToyBackend::new(ToyConfig {
            src_vocab: vocab.len(),
            tgt_vocab: gen.len() + 2,
            gen_size: gen.len(),
            hidden,
            max_src,
            max_tgt,
            mask_id: copy.then(|| TriVocabulary::reserved_id(crate::vocab::MASK)).flatten(),
        });
        Self::new(backend, vocab, gen, copy, seed)
    }
}

impl<T: Scalar, B: Backend<T>> Model<T, B> {
    pub fn new(backend: B, vocab: TriVocabulary, gen: GenVocab, copy: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = backend.init(&mut rng);
        if copy {
            params.extend(std::iter::repeat_n(T::zero(), gen.s_len));
        }
        Self {
            backend,
            params,
            copy,
            head: HeadChoice::Last,
            gen,
            vocab,
        }
    }

    fn split(&self) -> (&[T], &[T]) {
        self.params.split_at(self.backend.num_params())
    }

    /// Gate weights `B` (empty without copy).
    pub fn gate_weights(&self) -> &[T] {
        self.split().1
    }

    /// Encoder ids and candidate table for one annotated question.
    pub fn encode_input(&self, q: &AnnotatedQuestion) -> Result<(Vec<usize>, CandidateTable)> {
        if self.copy {
            let masked = mask_kb_tokens(q, &self.vocab)?;
            let src = self.vocab.encode(&masked.tokens, Side::Question);
            Ok((src, CandidateTable::from_masked(&masked)))
        } else {
            Ok((self.vocab.encode(&q.tokens, Side::Question), CandidateTable::default()))
        }
    }

    pub fn encode(&self, ex: &Example) -> Result<EncodedExample> {
        let (src, table) = self.encode_input(&ex.question)?;
        let mut tgt_in = vec![BOS_IN];
        let mut targets = Vec::with_capacity(ex.query.len() + 1);
        for tok in &ex.query {
            if let Some(g) = self.gen.index_of(tok) {
                targets.push(Target::Generate(g));
                tgt_in.push(gen_input(g));
            } else if let Some(c) = table.index_of(tok) {
                targets.push(Target::Copy(c));
                tgt_in.push(COPY_IN);
            } else {
                return Err(Error::UncoveredTarget {
                    entry: ex.id.clone(),
                    token: tok.clone(),
                });
            }
        }
        targets.push(Target::Generate(self.gen.eos()));
        Ok(EncodedExample {
            id: ex.id.clone(),
            src,
            table,
            tgt_in,
            targets,
        })
    }

    pub fn encode_all(&self, examples: &[Example]) -> Result<Vec<EncodedExample>> {
        examples.iter().map(|e| self.encode(e)).collect()
    }

    /// Summed negative log-likelihood of the gold tokens under teacher
    /// forcing. When `grads` is given, the gradient of that sum is added.
    pub fn loss(&self, ex: &EncodedExample, grads: Option<&mut [T]>) -> Result<T> {
        let (bp, b) = self.split();
        let out = self.backend.forward(bp, &ex.src, &ex.tgt_in);
        let head = self.head.resolve(self.backend.num_heads())?;
        let steps = ex.targets.len();
        let mut total = T::zero();
        let mut d_logits = Vec::with_capacity(steps);
        let mut d_att = Vec::with_capacity(steps);
        let mut d_b = vec![T::zero(); b.len()];
        for (i, &target) in ex.targets.iter().enumerate() {
            let logits = &out.logits[i];
            if self.copy {
                let g = step_loss(logits, &out.attention[head][i], b, &ex.table, target)?;
                total += g.loss;
                for (acc, v) in d_b.iter_mut().zip(&g.d_b) {
                    *acc += *v;
                }
                d_logits.push(g.d_logits);
                d_att.push(g.d_attention);
            } else {
                let Target::Generate(y) = target else {
                    return Err(Error::UncoveredTarget {
                        entry: ex.id.clone(),
                        token: format!("{target:?}"),
                    });
                };
                total -= log_softmax(logits)[y];
                let mut d = softmax(logits);
                d[y] -= T::one();
                d_logits.push(d);
                d_att.push(vec![T::zero(); ex.src.len()]);
            }
        }
        if let Some(grads) = grads {
            let (gb, gg) = grads.split_at_mut(self.backend.num_params());
            self.backend.backward(bp, &out, &d_logits, head, &d_att, gb);
            for (acc, v) in gg.iter_mut().zip(&d_b) {
                *acc += *v;
            }
        }
        Ok(total)
    }

    /// Mean per-token loss over a set of examples.
    pub fn mean_loss(&self, examples: &[EncodedExample]) -> Result<f64> {
        let mut sum = 0.0;
        let mut tokens = 0;
        for ex in examples {
            sum += self.loss(ex, None)?.as_f64();
            tokens += ex.num_tokens();
        }
        Ok(if tokens == 0 { 0.0 } else { sum / tokens as f64 })
    }

    fn next_distribution(&self, src: &[usize], table: &CandidateTable, tgt_in: &[usize]) -> Result<Vec<T>> {
        let (bp, b) = self.split();
        let out = self.backend.forward(bp, src, tgt_in);
        let i = tgt_in.len() - 1;
        let logits = &out.logits[i];
        if self.copy {
            let head = self.head.resolve(self.backend.num_heads())?;
            Ok(copy_step(logits, &out.attention[head][i], b, table)?.p_t)
        } else {
            Ok(generation_distribution(logits))
        }
    }
}

/// Emits the argmax of `p_t` at each step until end-of-sequence or
/// `max_len` tokens. Copied slots resolve to the candidate's KB token.
pub fn greedy_decode<T: Scalar, B: Backend<T>>(
    model: &Model<T, B>,
    id: &str,
    question: &AnnotatedQuestion,
    max_len: usize,
) -> Result<Prediction> {
    let (src, table) = model.encode_input(question)?;
    let mut tgt_in = vec![BOS_IN];
    let mut tokens = Vec::new();
    let mut truncated = false;
    loop {
        if tokens.len() >= max_len {
            truncated = true;
            break;
        }
        let p = model.next_distribution(&src, &table, &tgt_in)?;
        let k = argmax(&p).unwrap_or(model.gen.eos());
        if k == model.gen.eos() {
            break;
        }
        if k < model.gen.len() {
            tokens.push(model.gen.tokens[k].clone());
            tgt_in.push(gen_input(k));
        } else {
            tokens.push(table.tokens[k - model.gen.len()].clone());
            tgt_in.push(COPY_IN);
        }
    }
    Ok(Prediction {
        id: id.to_string(),
        query: detokenize(&tokens),
        tokens,
        truncated,
    })
}

// ---------------------------------------------------------------------------
// optimization

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            ..Self::sgd(lr)
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Linear warmup, then polynomial decay to zero at the last update.
    PolynomialDecayWarmup { warmup_updates: usize, power: f64 },
}

impl LrSchedule {
    pub fn factor(&self, update: usize, total_updates: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::PolynomialDecayWarmup { warmup_updates, power } => {
                if update < warmup_updates {
                    (update + 1) as f64 / warmup_updates as f64
                } else {
                    let span = total_updates.saturating_sub(warmup_updates).max(1) as f64;
                    let done = (update - warmup_updates) as f64;
                    (1.0 - done / span).max(0.0).powf(power)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub updates: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

struct Optimizer<T> {
    config: OptimizerConfig,
    updates: usize,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Optimizer<T> {
    fn new(config: OptimizerConfig, n: usize) -> Self {
        Self {
            config,
            updates: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    fn restore(config: OptimizerConfig, state: &OptimizerState) -> Self {
        Self {
            config,
            updates: state.updates,
            m: state.m.iter().map(|&x| T::lit(x)).collect(),
            v: state.v.iter().map(|&x| T::lit(x)).collect(),
        }
    }

    fn state(&self) -> OptimizerState {
        OptimizerState {
            updates: self.updates,
            m: self.m.iter().map(|x| x.as_f64()).collect(),
            v: self.v.iter().map(|x| x.as_f64()).collect(),
        }
    }

    fn step(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        self.updates += 1;
        let lr = T::lit(lr);
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, &g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                let c = &self.config;
                let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
                let t = self.updates as i32;
                let bc1 = T::one() - T::lit(c.beta1.powi(t));
                let bc2 = T::one() - T::lit(c.beta2.powi(t));
                let eps = T::lit(c.eps);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
                    self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// How examples are grouped into updates. One update sums the gradients of
/// `batch_size * grad_accum` examples and divides by their token count, so
/// accumulation over micro-batches equals one larger batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Batching {
    pub batch_size: usize,
    pub grad_accum: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batching: Batching,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Global gradient-norm cap.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    /// Seed for example shuffling.
    pub seed: u64,
    #[serde(default = "default_shuffle")]
    pub shuffle: bool,
}

fn default_shuffle() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batching.batch_size == 0 || self.batching.grad_accum == 0 {
            return Err(Error::Config("batch size and accumulation steps must be at least 1".into()));
        }
        if !(self.optimizer.lr > 0.0) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
}

/// Resumable training state, stored with `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Completed epochs.
    pub epoch: usize,
    pub params: Vec<f64>,
    pub optimizer: OptimizerState,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub best_params: Vec<f64>,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub seed: u64,
    pub epoch: usize,
    pub validation_loss: f64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
}

fn to_f64<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}

fn from_f64<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

/// Trains with teacher forcing for `config.epochs` epochs, evaluating the
/// validation loss after each one, and leaves the model holding the
/// parameters of the best epoch. `resume` continues from a checkpoint;
/// `on_epoch` receives the state after every epoch.
pub fn train<T: Scalar, B: Backend<T>>(
    model: &mut Model<T, B>,
    train_set: &[EncodedExample],
    validation: &[EncodedExample],
    config: &TrainConfig,
    resume: Option<Checkpoint>,
    mut on_epoch: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<TrainReport> {
    config.validate()?;
    let n = model.params.len();
    let per_update = config.batching.batch_size * config.batching.grad_accum;
    let updates_per_epoch = train_set.len().div_ceil(per_update.max(1));
    let total_updates = updates_per_epoch * config.epochs;
    let (mut optimizer, mut state) = match resume {
        Some(ck) => {
            if ck.params.len() != n {
                return Err(Error::Dimension {
                    expected: n,
                    actual: ck.params.len(),
                });
            }
            model.params = from_f64(&ck.params);
            (Optimizer::restore(config.optimizer, &ck.optimizer), ck)
        }
        None => (
            Optimizer::new(config.optimizer, n),
            Checkpoint {
                epoch: 0,
                params: Vec::new(),
                optimizer: OptimizerState::default(),
                best_epoch: 0,
                best_validation_loss: f64::INFINITY,
                best_params: to_f64(&model.params),
                log: Vec::new(),
            },
        ),
    };
    let mut grads = vec![T::zero(); n];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in state.epoch + 1..=config.epochs {
        if config.shuffle {
            order.sort_unstable();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9)));
        }
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for chunk in order.chunks(per_update.max(1)) {
            grads.iter_mut().for_each(|g| *g = T::zero());
            let mut tokens = 0usize;
            for &i in chunk {
                let ex = &train_set[i];
                epoch_loss += model.loss(ex, Some(&mut grads))?.as_f64();
                tokens += ex.num_tokens();
            }
            epoch_tokens += tokens;
            if tokens == 0 {
                continue;
            }
            let inv = T::lit(1.0 / tokens as f64);
            grads.iter_mut().for_each(|g| *g *= inv);
            if let Some(cap) = config.clip_norm {
                let norm = grads.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt();
                if norm > cap {
                    let s = T::lit(cap / norm);
                    grads.iter_mut().for_each(|g| *g *= s);
                }
            }
            let lr = config.optimizer.lr * config.schedule.factor(optimizer.updates, total_updates);
            optimizer.step(&mut model.params, &grads, lr);
        }
        let validation_loss = model.mean_loss(validation)?;
        let entry = EpochLog {
            epoch,
            train_loss: if epoch_tokens == 0 { 0.0 } else { epoch_loss / epoch_tokens as f64 },
            validation_loss,
        };
        log::info!(
            "epoch {epoch}: train loss {:.4}, validation loss {:.4}",
            entry.train_loss,
            validation_loss
        );
        state.log.push(entry);
        if validation_loss < state.best_validation_loss || state.best_epoch == 0 {
            state.best_validation_loss = validation_loss;
            state.best_epoch = epoch;
            state.best_params = to_f64(&model.params);
        }
        state.epoch = epoch;
        state.params = to_f64(&model.params);
        state.optimizer = optimizer.state();
        on_epoch(&state)?;
    }
    if !state.best_params.is_empty() && state.best_epoch > 0 {
        model.params = from_f64(&state.best_params);
    }
    Ok(TrainReport {
        log: state.log,
        best_epoch: state.best_epoch,
        best_validation_loss: state.best_validation_loss,
    })
}

/// Outcome of one seed of [`train_seeds`].
pub type SeedRun<T> = std::result::Result<(Model<T>, TrainReport), Error>;

/// Trains one toy model per seed; each seed drives both initialization and
/// shuffling. Failures are kept per seed.
pub fn train_seeds<T: Scalar>(
    vocab: &TriVocabulary,
    train_examples: &[Example],
    validation: &[Example],
    hidden: usize,
    copy: bool,
    config: &TrainConfig,
    seeds: &[u64],
) -> Vec<(u64, SeedRun<T>)> {
    seeds
        .iter()
        .map(|&seed| {
            let run = (|| {
                let mut model = Model::<T>::toy(vocab.clone(), train_examples, hidden, copy, seed);
                let tr = model.encode_all(train_examples)?;
                let va = model.encode_all(validation)?;
                let cfg = TrainConfig { seed, ..config.clone() };
                let report = train(&mut model, &tr, &va, &cfg, None, |_| Ok(()))?;
                Ok((model, report))
            })();
            (seed, run)
        })
        .collect()
}

// ---------------------------------------------------------------------------
// persistence

/// A toy model on disk. The vocabulary is stored alongside, in its own file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub config: ToyConfig,
    pub copy: bool,
    pub head: HeadChoice,
    pub gen: GenVocab,
    pub params: Vec<f64>,
}

impl<T: Scalar> Model<T, ToyBackend> {
    pub fn to_file(&self) -> ModelFile {
        ModelFile {
            config: *self.backend.config(),
            copy: self.copy,
            head: self.head,
            gen: self.gen.clone(),
            params: to_f64(&self.params),
        }
    }

    pub fn from_file(file: ModelFile, vocab: TriVocabulary) -> Result<Self> {
        let backend = ToyBackend::new(file.config);
        let expected = Backend::<T>::num_params(&backend) + if file.copy { file.gen.s_len } else { 0 };
        if file.params.len() != expected {
            return Err(Error::Dimension {
                expected,
                actual: file.params.len(),
            });
        }
        if file.config.src_vocab != vocab.len() {
            return Err(Error::Dimension {
                expected: file.config.src_vocab,
                actual: vocab.len(),
            });
        }
        Ok(Self {
            backend,
            params: from_f64(&file.params),
            copy: file.copy,
            head: file.head,
            gen: file.gen,
            vocab,
        })
    }
}

// ---------------------------------------------------------------------------
// presets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Toy,
    ConvSeq2Seq,
    Transformer,
    Bart,
    T5,
}

impl ModelKind {
    pub fn is_pretrained(self) -> bool {
        matches!(self, ModelKind::Bart | ModelKind::T5)
    }

    pub fn hyperparameters(self) -> Hyperparameters {
        let pdsw = LrSchedule::PolynomialDecayWarmup {
            warmup_updates: 500,
            power: 1.0,
        };
        let (layers, hidden, optimizer, schedule, dropout) = match self {
            ModelKind::Toy => (1, 64, OptimizerConfig::adam(0.01), LrSchedule::Constant, 0.0),
            ModelKind::ConvSeq2Seq => (15, 512, OptimizerConfig::sgd(0.5), LrSchedule::Constant, 0.2),
            ModelKind::Transformer => (6, 1024, OptimizerConfig::adam(0.0005), LrSchedule::Constant, 0.3),
            ModelKind::Bart => (6, 768, OptimizerConfig::adam(0.000015), pdsw, 0.1),
            ModelKind::T5 => (6, 512, OptimizerConfig::adam(0.0015), pdsw, 0.1),
        };
        Hyperparameters {
            layers,
            hidden,
            optimizer,
            schedule,
            dropout,
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "toy" => Ok(ModelKind::Toy),
            "convseq2seq" | "cnn" => Ok(ModelKind::ConvSeq2Seq),
            "transformer" => Ok(ModelKind::Transformer),
            "bart" => Ok(ModelKind::Bart),
            "t5" => Ok(ModelKind::T5),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Toy => "toy",
            ModelKind::ConvSeq2Seq => "convseq2seq",
            ModelKind::Transformer => "transformer",
            ModelKind::Bart => "bart",
            ModelKind::T5 => "t5",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub layers: usize,
    pub hidden: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    pub dropout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Lcq1,
    Lcq2,
    Dbnqa,
    Synthetic,
}

impl DatasetKind {
    pub fn batch_size(self, model: ModelKind) -> usize {
        match (self, model.is_pretrained()) {
            (DatasetKind::Lcq1, false) => 32,
            (DatasetKind::Lcq2, false) => 16,
            (DatasetKind::Dbnqa, false) if model == ModelKind::Transformer => 32,
            (DatasetKind::Dbnqa, _) => 5,
            (DatasetKind::Lcq1, true) => 16,
            (DatasetKind::Lcq2, true) => 8,
            (DatasetKind::Synthetic, _) => 16,
        }
    }

    pub fn epochs(self, model: ModelKind) -> usize {
        match (self, model.is_pretrained()) {
            (DatasetKind::Lcq1, false) => 500,
            (DatasetKind::Lcq2, false) => 150,
            (DatasetKind::Dbnqa, false) => 50,
            (DatasetKind::Lcq1, true) => 200,
            (DatasetKind::Lcq2, true) => 50,
            (DatasetKind::Dbnqa, true) => 20,
            (DatasetKind::Synthetic, _) => 80,
        }
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lcq1" | "lcquad1" => Ok(DatasetKind::Lcq1),
            "lcq2" | "lcquad2" => Ok(DatasetKind::Lcq2),
            "dbnqa" => Ok(DatasetKind::Dbnqa),
            "synthetic" => Ok(DatasetKind::Synthetic),
            other => Err(Error::Config(format!("unknown dataset preset `{other}`"))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Lcq1 => "lcq1",
            DatasetKind::Lcq2 => "lcq2",
            DatasetKind::Dbnqa => "dbnqa",
            DatasetKind::Synthetic => "synthetic",
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_shape() {
        let s = LrSchedule::PolynomialDecayWarmup {
            warmup_updates: 4,
            power: 1.0,
        };
        assert_eq!(s.factor(0, 10), 0.25);
        assert_eq!(s.factor(3, 10), 1.0);
        assert_eq!(s.factor(4, 10), 1.0);
        assert!((s.factor(7, 10) - 0.5).abs() < 1e-12);
        assert_eq!(LrSchedule::Constant.factor(99, 10), 1.0);
    }

    #[test]
    fn table_three_presets() {
        let t5 = ModelKind::T5.hyperparameters();
        assert_eq!((t5.layers, t5.hidden, t5.optimizer.lr, t5.dropout), (6, 512, 0.0015, 0.1));
        let cnn = ModelKind::ConvSeq2Seq.hyperparameters();
        assert_eq!(cnn.optimizer.kind, OptimizerKind::Sgd);
        assert_eq!(cnn.schedule, LrSchedule::Constant);
        assert_eq!(DatasetKind::Dbnqa.batch_size(ModelKind::Transformer), 32);
        assert_eq!(DatasetKind::Dbnqa.batch_size(ModelKind::ConvSeq2Seq), 5);
        assert_eq!(DatasetKind::Lcq2.epochs(ModelKind::Bart), 50);
    }
}
