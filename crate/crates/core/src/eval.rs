//! Micro-averaged scoring, k sweeps, the MFS baseline and per-POS accuracy.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{classify_all, ExemplarIndex, InstanceFailure, Prediction, PredictionSource, VoteTally};
use crate::corpus::{mfs_table, most_frequent, sense_frequencies, Corpus, CorpusError, Instance, Lexelt, Pos, SenseKey};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction for unknown instance {0}")]
    UnknownInstance(String),
    #[error("more than one prediction for instance {0}")]
    DuplicatePrediction(String),
    #[error("k values must be a non-empty list of positive integers")]
    InvalidKs,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Percentages are kept at full precision and rounded only when rendered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub attempted: usize,
    pub total: usize,
    pub correct: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl EvalReport {
    pub fn from_counts(correct: usize, attempted: usize, total: usize) -> Self {
        let pct = |num: usize, den: usize| if den == 0 { 0.0 } else { 100.0 * num as f64 / den as f64 };
        let precision = pct(correct, attempted);
        let recall = pct(correct, total);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        EvalReport {
            attempted,
            total,
            correct,
            precision,
            recall,
            f1,
        }
    }
}

/// Half-up rounding to two decimals.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Scored predictions: (gold instance, whether the prediction is correct).
/// Predictions for instances without gold senses are ignored.
fn judged<'a>(preds: &[Prediction], gold: &'a Corpus) -> Result<Vec<(&'a Instance, bool)>> {
    let by_id = gold.by_id();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(preds.len());
    for p in preds {
        let inst = *by_id
            .get(p.instance_id.as_str())
            .ok_or_else(|| EvalError::UnknownInstance(p.instance_id.clone()))?;
        if !seen.insert(p.instance_id.as_str()) {
            return Err(EvalError::DuplicatePrediction(p.instance_id.clone()));
        }
        if inst.is_scored() {
            out.push((inst, inst.gold_senses.contains(&p.predicted)));
        }
    }
    Ok(out)
}

/// Micro precision, recall and F1 over all gold instances. A prediction is
/// correct when it is any one of the instance's gold senses.
pub fn score(preds: &[Prediction], gold: &Corpus) -> Result<EvalReport> {
    let judged = judged(preds, gold)?;
    let correct = judged.iter().filter(|(_, ok)| *ok).count();
    let total = gold.instances.iter().filter(|i| i.is_scored()).count();
    Ok(EvalReport::from_counts(correct, judged.len(), total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosRow {
    pub pos: Pos,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosBreakdown {
    pub rows: Vec<PosRow>,
}

impl PosBreakdown {
    pub fn empty() -> Self {
        PosBreakdown {
            rows: Pos::ALL
                .iter()
                .map(|&pos| PosRow {
                    pos,
                    correct: 0,
                    total: 0,
                    accuracy: 0.0,
                })
                .collect(),
        }
    }

    pub fn get(&self, pos: Pos) -> &PosRow {
        self.rows.iter().find(|r| r.pos == pos).expect("all POS rows present")
    }
}

/// Accuracy per part of speech of the gold lexelt. Totals count every scored
/// gold instance, so unattempted instances count as wrong.
pub fn pos_breakdown(preds: &[Prediction], gold: &Corpus) -> Result<PosBreakdown> {
    let judged = judged(preds, gold)?;
    let mut out = PosBreakdown::empty();
    for row in &mut out.rows {
        row.total = gold
            .instances
            .iter()
            .filter(|i| i.is_scored() && i.lexelt.pos == row.pos)
            .count();
        row.correct = judged
            .iter()
            .filter(|(i, ok)| *ok && i.lexelt.pos == row.pos)
            .count();
        row.accuracy = if row.total == 0 {
            0.0
        } else {
            100.0 * row.correct as f64 / row.total as f64
        };
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub k: usize,
    pub report: EvalReport,
    pub predictions: Vec<Prediction>,
    pub failures: Vec<InstanceFailure>,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub best_k: usize,
}

impl SweepTable {
    pub fn row(&self, k: usize) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.k == k)
    }

    pub fn best(&self) -> &SweepRow {
        self.row(self.best_k).expect("best_k is one of the rows")
    }
}

pub const DEFAULT_KS: [usize; 6] = [1, 3, 5, 7, 10, 11];

/// Best F1; equal F1 goes to the smaller k.
fn pick_best(rows: &[SweepRow]) -> usize {
    rows.iter()
        .max_by(|a, b| a.report.f1.total_cmp(&b.report.f1).then_with(|| b.k.cmp(&a.k)))
        .map(|r| r.k)
        .unwrap_or(0)
}

/// Run the classifier and scorer once per k.
pub fn sweep(
    index: &ExemplarIndex,
    test_pairs: &[(&Instance, &[f32])],
    gold: &Corpus,
    ks: &[usize],
) -> Result<SweepTable> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(EvalError::InvalidKs);
    }
    let rows = ks
        .par_iter()
        .map(|&k| {
            let (predictions, failures): (Vec<_>, Vec<_>) =
                classify_all(index, test_pairs, k).into_iter().partition(|o| o.is_ok());
            let predictions: Vec<Prediction> = predictions.into_iter().map(|o| o.unwrap()).collect();
            let failures = failures.into_iter().map(|o| o.unwrap_err()).collect();
            let report = score(&predictions, gold)?;
            Ok(SweepRow {
                k,
                report,
                predictions,
                failures,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best_k = pick_best(&rows);
    Ok(SweepTable { rows, best_k })
}

/// Most-frequent-sense predictor built from training counts, with the same
/// per-POS fallback the kNN classifier uses for unseen lexelts.
#[derive(Debug, Clone)]
pub struct MfsBaseline {
    pub table: BTreeMap<Lexelt, SenseKey>,
    pos_fallback: HashMap<Pos, SenseKey>,
}

impl MfsBaseline {
    pub fn from_train(train: &Corpus) -> Result<Self> {
        let table = mfs_table(train)?;
        let mut pooled: BTreeMap<Pos, BTreeMap<SenseKey, usize>> = BTreeMap::new();
        for (lexelt, counts) in sense_frequencies(train) {
            let acc = pooled.entry(lexelt.pos).or_default();
            for (sense, c) in counts {
                *acc.entry(sense).or_default() += c;
            }
        }
        let pos_fallback = pooled
            .into_iter()
            .filter_map(|(pos, counts)| most_frequent(&counts).map(|s| (pos, s)))
            .collect();
        Ok(MfsBaseline { table, pos_fallback })
    }

    /// Predictions for every test instance whose lexelt (or POS) has a training sense.
    pub fn predict(&self, test: &Corpus) -> Vec<Prediction> {
        test.instances
            .iter()
            .filter_map(|inst| {
                let sense = self
                    .table
                    .get(&inst.lexelt)
                    .or_else(|| self.pos_fallback.get(&inst.lexelt.pos))?;
                Some(Prediction {
                    instance_id: inst.id.clone(),
                    lexelt: inst.lexelt.clone(),
                    predicted: sense.clone(),
                    tally: VoteTally::default(),
                    source: PredictionSource::MfsFallback,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonRow {
    pub k: usize,
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonPos {
    pub pos: String,
    pub correct: usize,
    pub total: usize,
    pub acc: f64,
}

/// Machine-readable evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonReport {
    pub model_tag: String,
    pub dataset: String,
    pub rows: Vec<JsonRow>,
    pub best_k: Option<usize>,
    pub pos: Vec<JsonPos>,
    pub mfs_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedReport {
    pub text: String,
    pub json: String,
}

fn pct(x: f64) -> String {
    format!("{:.2}", round2(x))
}

/// Render a sweep and POS breakdown as an aligned text table and JSON.
/// The best k is wrapped in underscores in the text table.
pub fn report_render(
    model_tag: &str,
    dataset: &str,
    sweep: Option<&SweepTable>,
    breakdown: &PosBreakdown,
    mfs_f1: Option<f64>,
) -> RenderedReport {
    let rows: &[SweepRow] = sweep.map_or(&[], |s| &s.rows);
    let best_k = sweep.map(|s| s.best_k);

    let json = JsonReport {
        model_tag: model_tag.to_string(),
        dataset: dataset.to_string(),
        rows: rows
            .iter()
            .map(|r| JsonRow {
                k: r.k,
                p: round2(r.report.precision),
                r: round2(r.report.recall),
                f1: round2(r.report.f1),
            })
            .collect(),
        best_k,
        pos: breakdown
            .rows
            .iter()
            .map(|r| JsonPos {
                pos: r.pos.name().to_string(),
                correct: r.correct,
                total: r.total,
                acc: round2(r.accuracy),
            })
            .collect(),
        mfs_f1: mfs_f1.map(round2),
    };

    let mut text = String::new();
    let _ = writeln!(text, "model: {model_tag}  dataset: {dataset}");
    if !rows.is_empty() {
        let mut header = vec![String::new()];
        let mut lines: Vec<Vec<String>> = vec![vec!["P".into()], vec!["R".into()], vec!["F1".into()]];
        for r in rows {
            header.push(format!("k={}", r.k));
            lines[0].push(pct(r.report.precision));
            lines[1].push(pct(r.report.recall));
            let f1 = pct(r.report.f1);
            lines[2].push(if Some(r.k) == best_k { format!("_{f1}_") } else { f1 });
        }
        let all: Vec<&Vec<String>> = std::iter::once(&header).chain(lines.iter()).collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| all.iter().map(|row| row[c].len()).max().unwrap_or(0))
            .collect();
        for row in all {
            let cells: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if c == 0 {
                        format!("{:<w$}", s, w = widths[c])
                    } else {
                        format!("{:>w$}", s, w = widths[c])
                    }
                })
                .collect();
            let _ = writeln!(text, "{}", cells.join("  ").trim_end());
        }
    }
    if let Some(m) = mfs_f1 {
        let _ = writeln!(text, "MFS F1: {}", pct(m));
    }
    let _ = writeln!(text, "{:<9}  {:>7}  {:>5}  {:>6}", "POS", "correct", "total", "acc");
    for r in &breakdown.rows {
        let _ = writeln!(
            text,
            "{:<9}  {:>7}  {:>5}  {:>6}",
            r.pos.name(),
            r.correct,
            r.total,
            pct(r.accuracy)
        );
    }

    RenderedReport {
        text,
        json: serde_json::to_string_pretty(&json).expect("report serializes") + "\n",
    }
}
