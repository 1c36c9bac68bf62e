//! Exact cosine kNN over per-lexelt training exemplars.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{most_frequent, Instance, Lexelt, Pos, SenseKey, Split};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("cosine undefined for a zero-norm vector")]
    ZeroNorm,
    #[error("vector has {found} components, expected {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no exemplars for {0} and no fallback sense for its part of speech")]
    UnknownLexelt(Lexelt),
    #[error("instance {id}: {message}")]
    BadExemplar { id: String, message: String },
}

pub type Result<T> = std::result::Result<T, ClassifyError>;

fn dot_and_norm(a: &[f32], b: &[f32]) -> (f64, f64, f64) {
    let mut dot = 0.0f64;
    let mut aa = 0.0f64;
    let mut bb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    (dot, aa.sqrt(), bb.sqrt())
}

fn norm(a: &[f32]) -> f64 {
    a.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Cosine similarity accumulated in f64, clamped to [-1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(ClassifyError::DimMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let (d, na, nb) = dot_and_norm(a, b);
    if na == 0.0 || nb == 0.0 {
        return Err(ClassifyError::ZeroNorm);
    }
    Ok((d / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct Exemplar {
    pub instance_id: String,
    pub sense: SenseKey,
    vector: Arc<[f32]>,
    norm: f64,
}

impl Exemplar {
    pub fn vector(&self) -> &[f32] {
        &self.vector
    }
}

/// Training exemplars grouped by lexelt. Immutable once built.
#[derive(Debug, Clone)]
pub struct ExemplarIndex {
    dim: usize,
    exemplars: BTreeMap<Lexelt, Vec<Exemplar>>,
    sense_freq: BTreeMap<Lexelt, BTreeMap<SenseKey, usize>>,
    mfs: BTreeMap<Lexelt, SenseKey>,
    pos_fallback: BTreeMap<Pos, SenseKey>,
}

impl ExemplarIndex {
    /// One exemplar per (instance, gold sense); an instance with several gold
    /// senses contributes the same vector once per sense.
    pub fn build(pairs: &[(&Instance, &[f32])]) -> Result<Self> {
        let dim = pairs.first().map_or(0, |(_, v)| v.len());
        let mut exemplars: BTreeMap<Lexelt, Vec<Exemplar>> = BTreeMap::new();
        let mut sense_freq: BTreeMap<Lexelt, BTreeMap<SenseKey, usize>> = BTreeMap::new();

        for (inst, vector) in pairs {
            let bad = |message: String| ClassifyError::BadExemplar {
                id: inst.id.clone(),
                message,
            };
            if inst.split != Split::Train {
                return Err(bad("not a training instance".into()));
            }
            if inst.gold_senses.is_empty() {
                return Err(bad("no gold sense".into()));
            }
            if vector.len() != dim {
                return Err(bad(format!("dimension {} differs from {dim}", vector.len())));
            }
            let n = norm(vector);
            if n == 0.0 || !n.is_finite() {
                return Err(bad("zero-norm or non-finite vector".into()));
            }
            let shared: Arc<[f32]> = Arc::from(*vector);
            let list = exemplars.entry(inst.lexelt.clone()).or_default();
            let freq = sense_freq.entry(inst.lexelt.clone()).or_default();
            for sense in &inst.gold_senses {
                list.push(Exemplar {
                    instance_id: inst.id.clone(),
                    sense: sense.clone(),
                    vector: Arc::clone(&shared),
                    norm: n,
                });
                *freq.entry(sense.clone()).or_default() += 1;
            }
        }

        let mfs = sense_freq
            .iter()
            .filter_map(|(lx, counts)| most_frequent(counts).map(|s| (lx.clone(), s)))
            .collect();
        let mut by_pos: BTreeMap<Pos, BTreeMap<&SenseKey, usize>> = BTreeMap::new();
        for (lx, counts) in &sense_freq {
            let pooled = by_pos.entry(lx.pos).or_default();
            for (sense, c) in counts {
                *pooled.entry(sense).or_default() += c;
            }
        }
        let pos_fallback = by_pos
            .into_iter()
            .filter_map(|(pos, counts)| {
                most_frequent(counts.iter().map(|(k, c)| (*k, c))).map(|s| (pos, s))
            })
            .collect();

        Ok(ExemplarIndex {
            dim,
            exemplars,
            sense_freq,
            mfs,
            pos_fallback,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn exemplars(&self, lexelt: &Lexelt) -> &[Exemplar] {
        self.exemplars.get(lexelt).map_or(&[], Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.exemplars.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lexelts(&self) -> impl Iterator<Item = &Lexelt> {
        self.exemplars.keys()
    }

    pub fn sense_freq(&self, lexelt: &Lexelt) -> Option<&BTreeMap<SenseKey, usize>> {
        self.sense_freq.get(lexelt)
    }

    pub fn mfs(&self, lexelt: &Lexelt) -> Option<&SenseKey> {
        self.mfs.get(lexelt)
    }

    /// Most frequent training sense pooled over all lexelts of one POS.
    pub fn pos_fallback(&self, pos: Pos) -> Option<&SenseKey> {
        self.pos_fallback.get(&pos)
    }

    fn freq_of(&self, lexelt: &Lexelt, sense: &SenseKey) -> usize {
        self.sense_freq
            .get(lexelt)
            .and_then(|m| m.get(sense))
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SenseVotes {
    pub sense: SenseKey,
    pub votes: usize,
    pub similarity_sum: f64,
}

/// Senses among the neighbors, winner first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VoteTally(pub Vec<SenseVotes>);

impl VoteTally {
    pub fn total_votes(&self) -> usize {
        self.0.iter().map(|s| s.votes).sum()
    }

    pub fn get(&self, sense: &SenseKey) -> Option<&SenseVotes> {
        self.0.iter().find(|s| &s.sense == sense)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictionSource {
    Knn,
    MfsFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub lexelt: Lexelt,
    pub predicted: SenseKey,
    pub tally: VoteTally,
    pub source: PredictionSource,
}

/// Neighbor ranking: higher similarity first, then sense key, then instance id.
fn neighbor_order(a: &(f64, &Exemplar), b: &(f64, &Exemplar)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then_with(|| a.1.sense.cmp(&b.1.sense))
        .then_with(|| a.1.instance_id.cmp(&b.1.instance_id))
}

/// Classify one query vector among the exemplars of `lexelt`.
///
/// Takes the exact top `min(k, n)` exemplars by cosine similarity and returns the
/// sense with most votes. Vote ties go to the larger similarity sum, then the
/// higher training frequency, then the smaller sense key. A lexelt without
/// exemplars falls back to the most frequent training sense of its POS.
pub fn classify(
    index: &ExemplarIndex,
    lexelt: &Lexelt,
    query: &[f32],
    k: usize,
) -> Result<(SenseKey, VoteTally, PredictionSource)> {
    if k == 0 {
        return Err(ClassifyError::InvalidK);
    }
    if query.len() != index.dim {
        return Err(ClassifyError::DimMismatch {
            expected: index.dim,
            found: query.len(),
        });
    }
    let qn = norm(query);
    if qn == 0.0 {
        return Err(ClassifyError::ZeroNorm);
    }

    let exemplars = index.exemplars(lexelt);
    if exemplars.is_empty() {
        let sense = index
            .pos_fallback(lexelt.pos)
            .ok_or_else(|| ClassifyError::UnknownLexelt(lexelt.clone()))?;
        return Ok((sense.clone(), VoteTally::default(), PredictionSource::MfsFallback));
    }

    let mut scored: Vec<(f64, &Exemplar)> = exemplars
        .iter()
        .map(|e| ((dot(query, &e.vector) / (qn * e.norm)).clamp(-1.0, 1.0), e))
        .collect();
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, neighbor_order);
        scored.truncate(k);
    }
    scored.sort_by(neighbor_order);

    let mut tally: Vec<SenseVotes> = Vec::new();
    for (sim, e) in &scored {
        match tally.iter_mut().find(|t| t.sense == e.sense) {
            Some(t) => {
                t.votes += 1;
                t.similarity_sum += sim;
            }
            None => tally.push(SenseVotes {
                sense: e.sense.clone(),
                votes: 1,
                similarity_sum: *sim,
            }),
        }
    }
    tally.sort_by(|a, b| {
        b.votes
            .cmp(&a.votes)
            .then_with(|| b.similarity_sum.total_cmp(&a.similarity_sum))
            .then_with(|| index.freq_of(lexelt, &b.sense).cmp(&index.freq_of(lexelt, &a.sense)))
            .then_with(|| a.sense.cmp(&b.sense))
    });
    let winner = tally[0].sense.clone();
    Ok((winner, VoteTally(tally), PredictionSource::Knn))
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("instance {instance_id}: {error}")]
pub struct InstanceFailure {
    pub instance_id: String,
    pub error: ClassifyError,
}

pub type Outcome = std::result::Result<Prediction, InstanceFailure>;

/// Classify every test pair, in input order. Failures are recorded per instance.
pub fn classify_all(index: &ExemplarIndex, test_pairs: &[(&Instance, &[f32])], k: usize) -> Vec<Outcome> {
    test_pairs
        .par_iter()
        .map(|(inst, vector)| {
            classify(index, &inst.lexelt, vector, k)
                .map(|(predicted, tally, source)| Prediction {
                    instance_id: inst.id.clone(),
                    lexelt: inst.lexelt.clone(),
                    predicted,
                    tally,
                    source,
                })
                .map_err(|error| InstanceFailure {
                    instance_id: inst.id.clone(),
                    error,
                })
        })
        .collect()
}

/// SensEval answer format: `lexelt instance-id sense-key` per line.
pub fn render_answers<'a>(preds: impl IntoIterator<Item = &'a Prediction>) -> String {
    let mut out = String::new();
    for p in preds {
        let _ = writeln!(out, "{} {} {}", p.lexelt, p.instance_id, p.predicted);
    }
    out
}
