//! Copy-mechanism decoding layer and its training harness.
//!
//! At each decoding step the layer mixes a generation distribution over the
//! SPARQL vocabulary with a copy distribution over the masked KB candidates
//! of the input:
//!
//! ```text
//! p_t    = p_copy * p_C + (1 - p_copy) * p_G
//! p_G    = softmax(DEC_i)                       over the generation vocabulary
//! p_C    = softmax(A[k, i]) at masked positions k, summed per candidate token
//! p_copy = sigmoid(DEC_i . B)
//! ```
//!
//! `p_t` is laid out as `[generation vocabulary | candidate table]`; K tokens
//! absent from the input have no slot and therefore probability zero.

mod backend;
mod train;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use backend::{Backend, BackendOutput, ToyBackend, ToyConfig};
pub use train::{
    greedy_decode, train, train_seeds, Batching, Checkpoint, CheckpointManifest, DatasetKind, EncodedExample,
    EpochLog, GenVocab, Hyperparameters, LrSchedule, Model, ModelFile, ModelKind, OptimizerConfig, OptimizerKind,
    OptimizerState, Prediction, SeedRun, TrainConfig, TrainReport,
};

use crate::error::{Error, Result};
use crate::scalar::{log_softmax, log_sum_exp, sigmoid, softmax, Scalar};
use crate::vocab::MaskedInput;

/// Tolerance used when checking that an input distribution is normalized.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// Which attention head feeds the copy scores.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadChoice {
    #[default]
    Last,
    Index(usize),
}

impl HeadChoice {
    pub fn resolve(self, num_heads: usize) -> Result<usize> {
        match self {
            HeadChoice::Last if num_heads > 0 => Ok(num_heads - 1),
            HeadChoice::Index(i) if i < num_heads => Ok(i),
            HeadChoice::Last => Err(Error::Dimension {
                expected: 1,
                actual: 0,
            }),
            HeadChoice::Index(i) => Err(Error::Dimension {
                expected: i + 1,
                actual: num_heads,
            }),
        }
    }
}

/// Learned gate weights `B`, one per S token.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyHead<T> {
    pub b: Vec<T>,
    pub head: HeadChoice,
}

impl<T: Scalar> CopyHead<T> {
    pub fn zeros(gen_size: usize) -> Self {
        Self {
            b: vec![T::zero(); gen_size],
            head: HeadChoice::Last,
        }
    }

    /// The copy distribution over `table` for one step, read from the
    /// designated head. `heads[h]` is that head's attention row.
    pub fn step(&self, logits: &[T], heads: &[Vec<T>], table: &CandidateTable) -> Result<CopyDistribution<T>> {
        let h = self.head.resolve(heads.len())?;
        copy_step(logits, &heads[h], &self.b, table)
    }
}

/// Distinct KB candidates of one input with the positions holding them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateTable {
    pub tokens: Vec<String>,
    pub positions: Vec<Vec<usize>>,
}

impl CandidateTable {
    pub fn new(candidates: &[(usize, String)]) -> Self {
        let mut table = Self::default();
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (pos, tok) in candidates {
            let i = *index.entry(tok.as_str()).or_insert_with(|| {
                table.tokens.push(tok.clone());
                table.positions.push(Vec::new());
                table.tokens.len() - 1
            });
            table.positions[i].push(*pos);
        }
        table
    }

    pub fn from_masked(input: &MaskedInput) -> Self {
        Self::new(&input.candidates)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.tokens.iter().position(|t| t == token)
    }

    fn all_positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.positions
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (c, p)))
    }
}

/// Per-step probabilities of the copy layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CopyDistribution<T> {
    /// Over the generation vocabulary.
    pub p_g: Vec<T>,
    /// Over the candidate table.
    pub p_c: Vec<T>,
    pub p_copy: T,
    /// Over `[generation vocabulary | candidate table]`.
    pub p_t: Vec<T>,
}

impl<T: Scalar> CopyDistribution<T> {
    pub fn gen_size(&self) -> usize {
        self.p_g.len()
    }

    /// Highest-probability slot; ties go to the lowest index, so generation
    /// wins over copy and earlier candidates over later ones.
    pub fn argmax(&self) -> usize {
        crate::scalar::argmax(&self.p_t).unwrap_or(0)
    }

    /// Probability of emitting `token`, zero when it is neither generable nor
    /// a candidate of this input.
    pub fn prob_of(&self, token: &str, gen: &[String], table: &CandidateTable) -> T {
        let mut p = T::zero();
        if let Some(g) = gen.iter().position(|t| t == token) {
            p += self.p_t[g];
        }
        if let Some(c) = table.index_of(token) {
            p += self.p_t[self.gen_size() + c];
        }
        p
    }
}

pub fn generation_distribution<T: Scalar>(logits: &[T]) -> Vec<T> {
    softmax(logits)
}

/// `sigmoid(logits . b)` for logits over S.
pub fn copy_gate<T: Scalar>(logits: &[T], b: &[T]) -> Result<T> {
    if logits.len() != b.len() {
        return Err(Error::Dimension {
            expected: b.len(),
            actual: logits.len(),
        });
    }
    Ok(sigmoid(gate_logit(logits, b)?))
}

/// The gate reads the first `b.len()` logits, which hold the S tokens; a
/// trailing end-of-sequence logit does not feed it.
fn gate_logit<T: Scalar>(logits: &[T], b: &[T]) -> Result<T> {
    if logits.len() < b.len() {
        return Err(Error::Dimension {
            expected: b.len(),
            actual: logits.len(),
        });
    }
    Ok(logits.iter().zip(b).map(|(&z, &w)| z * w).sum())
}

fn check_positions<T>(attention_row: &[T], table: &CandidateTable) -> Result<()> {
    match table.all_positions().map(|(_, p)| p).max() {
        Some(p) if p >= attention_row.len() => Err(Error::Dimension {
            expected: p + 1,
            actual: attention_row.len(),
        }),
        _ => Ok(()),
    }
}

/// Softmax of the attention weights over all masked positions; a token held
/// at several positions receives the sum of their masses.
pub fn copy_distribution<T: Scalar>(attention_row: &[T], table: &CandidateTable) -> Result<Vec<T>> {
    check_positions(attention_row, table)?;
    if table.is_empty() {
        return Ok(Vec::new());
    }
    let scores: Vec<T> = table.all_positions().map(|(_, p)| attention_row[p]).collect();
    let masses = softmax(&scores);
    let mut p_c = vec![T::zero(); table.len()];
    for ((c, _), m) in table.all_positions().zip(masses) {
        p_c[c] += m;
    }
    Ok(p_c)
}

fn check_normalized<T: Scalar>(name: &'static str, p: &[T]) -> Result<()> {
    let sum: f64 = p.iter().map(|x| x.as_f64()).sum();
    if (sum - 1.0).abs() > NORM_TOLERANCE || p.iter().any(|x| x.as_f64() < 0.0) {
        return Err(Error::NotNormalized { name, sum });
    }
    Ok(())
}

/// Mixes the two distributions. With no candidates the result is `p_g`.
pub fn combine<T: Scalar>(p_g: Vec<T>, p_c: Vec<T>, p_copy: T) -> Result<CopyDistribution<T>> {
    check_normalized("p_G", &p_g)?;
    if !p_c.is_empty() {
        check_normalized("p_C", &p_c)?;
    }
    if !(p_copy >= T::zero() && p_copy <= T::one()) {
        return Err(Error::NotNormalized {
            name: "p_copy",
            sum: p_copy.as_f64(),
        });
    }
    let p_t = if p_c.is_empty() {
        p_g.clone()
    } else {
        let keep = T::one() - p_copy;
        p_g.iter()
            .map(|&g| keep * g)
            .chain(p_c.iter().map(|&c| p_copy * c))
            .collect()
    };
    Ok(CopyDistribution { p_g, p_c, p_copy, p_t })
}

/// One full copy-layer step from backend outputs.
pub fn copy_step<T: Scalar>(
    logits: &[T],
    attention_row: &[T],
    b: &[T],
    table: &CandidateTable,
) -> Result<CopyDistribution<T>> {
    let p_copy = sigmoid(gate_logit(logits, b)?);
    combine(generation_distribution(logits), copy_distribution(attention_row, table)?, p_copy)
}

/// Gold output at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    /// Index into the generation vocabulary.
    Generate(usize),
    /// Index into the candidate table.
    Copy(usize),
}

/// Loss of one step and its gradients with respect to the backend logits,
/// the designated attention row and the gate weights.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGrad<T> {
    pub loss: T,
    pub d_logits: Vec<T>,
    pub d_attention: Vec<T>,
    pub d_b: Vec<T>,
}

/// Negative log-likelihood of the gold output under `p_t`, computed in log
/// space, with analytic gradients.
pub fn step_loss<T: Scalar>(
    logits: &[T],
    attention_row: &[T],
    b: &[T],
    table: &CandidateTable,
    target: Target,
) -> Result<StepGrad<T>> {
    check_positions(attention_row, table)?;
    let x = gate_logit(logits, b)?;
    let g = sigmoid(x);
    let p_g = softmax(logits);
    let mut d_logits = vec![T::zero(); logits.len()];
    let mut d_attention = vec![T::zero(); attention_row.len()];
    let mut d_b = vec![T::zero(); b.len()];
    let loss = match target {
        Target::Generate(y) => {
            if y >= logits.len() {
                return Err(Error::IdOutOfRange {
                    id: y,
                    size: logits.len(),
                });
            }
            let log_pg = log_softmax(logits)[y];
            for (d, &p) in d_logits.iter_mut().zip(&p_g) {
                *d = p;
            }
            d_logits[y] -= T::one();
            if table.is_empty() {
                -log_pg
            } else {
                // -log(1 - sigmoid(x)) has derivative sigmoid(x)
                for ((d, &w), (db, &z)) in d_logits.iter_mut().zip(b).zip(d_b.iter_mut().zip(logits)) {
                    *d += g * w;
                    *db = g * z;
                }
                -(crate::scalar::log_sigmoid(-x) + log_pg)
            }
        }
        Target::Copy(u) => {
            if u >= table.len() {
                return Err(Error::IdOutOfRange {
                    id: u,
                    size: table.len(),
                });
            }
            let all: Vec<(usize, usize)> = table.all_positions().collect();
            let scores: Vec<T> = all.iter().map(|&(_, p)| attention_row[p]).collect();
            let gold: Vec<T> = all.iter().filter(|(c, _)| *c == u).map(|&(_, p)| attention_row[p]).collect();
            let log_pc = log_sum_exp(&gold) - log_sum_exp(&scores);
            let q = softmax(&scores);
            let p_u = log_pc.exp();
            for (&(c, p), &qj) in all.iter().zip(&q) {
                let own = if c == u { qj / p_u } else { T::zero() };
                d_attention[p] += qj - own;
            }
            // -log sigmoid(x) has derivative -(1 - sigmoid(x))
            let coef = -(T::one() - g);
            for ((d, &w), (db, &z)) in d_logits.iter_mut().zip(b).zip(d_b.iter_mut().zip(logits)) {
                *d = coef * w;
                *db = coef * z;
            }
            -(crate::scalar::log_sigmoid(x) + log_pc)
        }
    };
    Ok(StepGrad {
        loss,
        d_logits,
        d_attention,
        d_b,
    })
}
