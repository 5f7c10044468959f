//! One decoding step with semantic rescoring.
//!
//! Logits become temperature-scaled probabilities, a truncation filter
//! (top-M or top-p) picks the candidate set, and each candidate is rescored
//! by the probability mass of its kept neighbor slots. Steps whose candidate
//! set contains a non-content token skip rescoring entirely and fall back to
//! the default decoding rule.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neighbors::NeighborTable;
use crate::vocab::VocabPartition;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("temperature must be > 0 for softmax, got {0}")]
    BadTemperature(f32),
    #[error("logits length {got} does not match vocabulary size {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("non-finite logit at index {0}")]
    NonFiniteLogit(usize),
    #[error("sample mode requires a seed")]
    MissingSeed,
    #[error("k_prime {k_prime} exceeds table k {k}")]
    KPrimeTooLarge { k_prime: usize, k: usize },
    #[error("candidate {0} is not a content token")]
    NonContentCandidate(u32),
}

/// Truncation filter restricting the candidate set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FilterSpec {
    TopM { m: usize },
    TopP { p: f64 },
}

/// Which neighbor slots contribute to a candidate's score.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KeepSpec {
    KPrime { k_prime: usize },
    Threshold { t: f32 },
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    Argmax,
    Sample,
}

#[derive(Debug, Clone)]
pub struct DecodeRequest {
    pub logits: Vec<f32>,
    pub temperature: f32,
    pub filter: FilterSpec,
    pub keep: KeepSpec,
    pub select: SelectMode,
    pub seed: Option<u64>,
    /// Temperature for the stochastic softmax over scores; independent of
    /// the probability temperature.
    pub tau_score: f32,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Candidate {
    pub token: u32,
    pub p: f32,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepOutcome {
    pub token: u32,
    pub deferred: bool,
    pub candidates: Vec<Candidate>,
    /// Number of neighbor-table lookups performed while scoring.
    #[serde(default)]
    pub lookups: u64,
}

/// Temperature-scaled softmax over the full vocabulary, computed with
/// max-subtraction.
pub fn softmax_probs(logits: &[f32], temperature: f32) -> Result<Vec<f32>, DecodeError> {
    if !(temperature > 0.0) {
        return Err(DecodeError::BadTemperature(temperature));
    }
    for (i, l) in logits.iter().enumerate() {
        if !l.is_finite() {
            return Err(DecodeError::NonFiniteLogit(i));
        }
    }
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let inv_t = 1.0f64 / temperature as f64;
    let mut out = vec![0f32; logits.len()];
    let mut sum = 0f64;
    for (o, &l) in out.iter_mut().zip(logits) {
        let e = (((l - max) as f64) * inv_t).exp();
        *o = e as f32;
        sum += e;
    }
    let inv = 1.0 / sum;
    for o in &mut out {
        *o = (*o as f64 * inv) as f32;
    }
    Ok(out)
}

/// Candidate ids selected by the filter, in descending-probability order
/// with ties broken by ascending id. Never empty for a valid distribution.
pub fn apply_filter(p: &[f32], f: &FilterSpec) -> Vec<u32> {
    let by_prob_desc = |&a: &u32, &b: &u32| {
        p[b as usize]
            .partial_cmp(&p[a as usize])
            .unwrap()
            .then(a.cmp(&b))
    };
    match *f {
        FilterSpec::TopM { m } => {
            let m = m.max(1).min(p.len());
            let mut idx: Vec<u32> = (0..p.len() as u32).collect();
            if m < idx.len() {
                idx.select_nth_unstable_by(m - 1, by_prob_desc);
                idx.truncate(m);
            }
            idx.sort_unstable_by(by_prob_desc);
            idx
        }
        FilterSpec::TopP { p: mass } => {
            let mut idx: Vec<u32> = (0..p.len() as u32).collect();
            idx.sort_unstable_by(by_prob_desc);
            let mut kept = Vec::new();
            let mut cum = 0f64;
            for id in idx {
                let pi = p[id as usize];
                if pi <= 0.0 && !kept.is_empty() {
                    break;
                }
                kept.push(id);
                cum += pi as f64;
                if cum >= mass {
                    break;
                }
            }
            kept
        }
    }
}

/// Which neighbor slots of row `row` are kept under `keep`. Slot 0 (self)
/// is always kept.
fn kept_slots(table: &NeighborTable, row: usize, keep: &KeepSpec) -> Result<usize, DecodeError> {
    match *keep {
        KeepSpec::KPrime { k_prime } => {
            if k_prime > table.k {
                return Err(DecodeError::KPrimeTooLarge {
                    k_prime,
                    k: table.k,
                });
            }
            Ok(k_prime.max(1))
        }
        KeepSpec::Threshold { t } => {
            let vals = table.row_vals(row);
            let mut n = 1;
            while n < table.k && vals[n] >= t {
                n += 1;
            }
            Ok(n)
        }
    }
}

/// Semantic score for each candidate: the clamped-cosine-weighted sum of
/// full-vocabulary probability over its kept neighbors. The self slot
/// contributes with weight exactly 1, so `score >= p` always holds.
/// Returns the scores plus the number of table lookups performed.
pub fn semantic_scores(
    candidates: &[u32],
    p: &[f32],
    table: &NeighborTable,
    keep: &KeepSpec,
) -> Result<(Vec<f64>, u64), DecodeError> {
    let mut scores = Vec::with_capacity(candidates.len());
    let mut lookups = 0u64;
    for &c in candidates {
        let row = table
            .row_of(c)
            .ok_or(DecodeError::NonContentCandidate(c))?;
        let n_kept = kept_slots(table, row, keep)?;
        let ids = table.row_ids(row);
        let vals = table.row_vals(row);
        let mut score = p[ids[0] as usize] as f64; // self weight forced to 1
        lookups += 1;
        for k in 1..n_kept {
            let w = vals[k].max(0.0) as f64;
            score += w * p[ids[k] as usize] as f64;
            lookups += 1;
        }
        scores.push(score);
    }
    Ok((scores, lookups))
}

fn argmax_ties_low_id(values: impl Iterator<Item = (u32, f64)>) -> u32 {
    let mut best_id = 0u32;
    let mut best = f64::NEG_INFINITY;
    for (id, v) in values {
        if v > best || (v == best && id < best_id) {
            best = v;
            best_id = id;
        }
    }
    best_id
}

/// Reference categorical sampler: walks `weights` in the given order,
/// accumulating, and picks the first element whose cumulative weight
/// exceeds `u * total` for a single `f64` draw from Xoshiro256**.
fn sample_categorical(ids: &[u32], weights: &[f64], seed: u64) -> u32 {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let total: f64 = weights.iter().sum();
    let target = rng.gen::<f64>() * total;
    let mut cum = 0f64;
    for (&id, &w) in ids.iter().zip(weights) {
        cum += w;
        if cum > target {
            return id;
        }
    }
    *ids.last().expect("non-empty candidate set")
}

/// Fallback selection used when rescoring is skipped: argmax of the
/// filtered probabilities, or seeded sampling from the renormalized
/// filtered distribution.
pub fn default_select(
    candidates: &[u32],
    p: &[f32],
    select: SelectMode,
    seed: Option<u64>,
) -> Result<u32, DecodeError> {
    match select {
        SelectMode::Argmax => Ok(argmax_ties_low_id(
            candidates.iter().map(|&c| (c, p[c as usize] as f64)),
        )),
        SelectMode::Sample => {
            let seed = seed.ok_or(DecodeError::MissingSeed)?;
            let weights: Vec<f64> = candidates.iter().map(|&c| p[c as usize] as f64).collect();
            Ok(sample_categorical(candidates, &weights, seed))
        }
    }
}

/// The rescoring path after probabilities are known. Split out so callers
/// can time it independently of the softmax over the full vocabulary.
pub fn rescore_and_select(
    probs: &[f32],
    req: &DecodeRequest,
    table: &NeighborTable,
    partition: &VocabPartition,
) -> Result<StepOutcome, DecodeError> {
    let candidates = apply_filter(probs, &req.filter);
    let any_non_content = candidates
        .iter()
        .any(|&c| !partition.is_content(c).unwrap_or(false));

    if any_non_content {
        let token = default_select(&candidates, probs, req.select, req.seed)?;
        let cands = candidates
            .iter()
            .map(|&c| Candidate {
                token: c,
                p: probs[c as usize],
                score: probs[c as usize] as f64,
            })
            .collect();
        return Ok(StepOutcome {
            token,
            deferred: true,
            candidates: cands,
            lookups: 0,
        });
    }

    let (scores, lookups) = semantic_scores(&candidates, probs, table, &req.keep)?;
    let token = match req.select {
        SelectMode::Argmax => argmax_ties_low_id(
            candidates.iter().copied().zip(scores.iter().copied()),
        ),
        SelectMode::Sample => {
            let seed = req.seed.ok_or(DecodeError::MissingSeed)?;
            let tau = if req.tau_score > 0.0 { req.tau_score as f64 } else { 1.0 };
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = scores.iter().map(|s| ((s - max) / tau).exp()).collect();
            sample_categorical(&candidates, &weights, seed)
        }
    };
    let cands = candidates
        .iter()
        .zip(&scores)
        .map(|(&c, &s)| Candidate {
            token: c,
            p: probs[c as usize],
            score: s,
        })
        .collect();
    Ok(StepOutcome {
        token,
        deferred: false,
        candidates: cands,
        lookups,
    })
}

pub fn decode_step(
    req: &DecodeRequest,
    table: &NeighborTable,
    partition: &VocabPartition,
) -> Result<StepOutcome, DecodeError> {
    if req.logits.len() != partition.v_emb as usize {
        return Err(DecodeError::DimMismatch {
            got: req.logits.len(),
            want: partition.v_emb as usize,
        });
    }
    for (i, l) in req.logits.iter().enumerate() {
        if !l.is_finite() {
            return Err(DecodeError::NonFiniteLogit(i));
        }
    }

    // T = 0 is pure greedy deferral for the whole step; rescoring needs a
    // defined softmax.
    if req.temperature == 0.0 {
        let token = argmax_ties_low_id(
            req.logits
                .iter()
                .enumerate()
                .map(|(i, &l)| (i as u32, l as f64)),
        );
        return Ok(StepOutcome {
            token,
            deferred: true,
            candidates: Vec::new(),
            lookups: 0,
        });
    }

    let probs = softmax_probs(&req.logits, req.temperature)?;
    rescore_and_select(&probs, req, table, partition)
}
