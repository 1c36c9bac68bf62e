//! Acceptance criteria, one line each. Run with `--nocapture` to see the table.
//!
//! Criteria that need the licensed lexical-sample data or real model embeddings
//! are gated on environment variables and report NOT RUN when those are absent:
//!
//! - `SENSEKNN_SENSEVAL_DIR`: directory with `senseval2/` and `senseval3/`, each
//!   holding `train.xml`, `test.xml`, `test.key` and optionally `train.key`.
//! - `SENSEKNN_MODEL_EMB_DIR`: directory with `senseval2/` and `senseval3/`, each
//!   holding `<model>.train.cwe` and `<model>.test.cwe` for `bert` and `distilbert`.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;

use common::*;
use senseknn_core::classifier::{classify, ExemplarIndex};
use senseknn_core::corpus::{HeadSpan, Instance, Lexelt, SenseKey, Split};
use senseknn_core::embedstore::{
    read_embeddings, write_embeddings, EmbeddingFileHeader, EmbeddingRecord, LayerPolicy, StoreError,
};
use senseknn_core::tsne::{joint_affinities, perplexity_calibration, project, squared_distances, ProjectionConfig};

enum Status {
    Pass(String),
    Fail(String),
    NotRun(String),
}

type Check = std::result::Result<String, String>;
type Criterion = (&'static str, Option<Duration>, fn() -> Status);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn timed(limit: Option<Duration>, f: impl FnOnce() -> Status) -> (Status, Duration) {
    let start = Instant::now();
    let status = f();
    let took = start.elapsed();
    let status = match (status, limit) {
        (Status::Pass(d), Some(l)) if took > l => Status::Fail(format!("{d}; runtime {took:.2?} exceeds {l:?}")),
        (s, _) => s,
    };
    (status, took)
}

fn from_check(c: Check) -> Status {
    match c {
        Ok(d) => Status::Pass(d),
        Err(d) => Status::Fail(d),
    }
}

#[test]
fn acceptance() {
    let criteria: Vec<Criterion> = vec![
        ("Dataset statistics reference counts", Some(Duration::from_secs(10)), dataset_statistics),
        ("MFS baseline F1", Some(Duration::from_secs(10)), mfs_baseline),
        ("kNN oracle equivalence (1000 cases)", Some(Duration::from_secs(30)), || from_check(knn_oracle())),
        ("Separable fixture F1 = 100 at every k", None, || from_check(separable_fixture())),
        ("Scale invariance (x7.3)", None, || from_check(scale_invariance())),
        ("t-SNE properties", Some(Duration::from_secs(60)), || from_check(tsne_properties())),
        ("Embedding format round-trip", None, || from_check(embedding_round_trip())),
        ("Reference model F1 with real embeddings (optional)", None, reference_model_f1),
    ];

    let mut failed = Vec::new();
    println!();
    for (name, limit, f) in criteria {
        let (status, took) = timed(limit, f);
        let (tag, detail) = match &status {
            Status::Pass(d) => ("PASS", d),
            Status::Fail(d) => ("FAIL", d),
            Status::NotRun(d) => ("NOT RUN", d),
        };
        println!("[{tag}] {name} ({:.2} s): {detail}", took.as_secs_f64());
        if matches!(status, Status::Fail(_)) {
            failed.push(name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}

// ---------------------------------------------------------------- datasets

struct Dataset {
    name: &'static str,
    train_xml: PathBuf,
    train_key: Option<PathBuf>,
    test_xml: PathBuf,
    test_key: PathBuf,
}

impl Dataset {
    fn args(&self) -> Vec<String> {
        let mut v = vec![
            "--train-xml".to_string(),
            self.train_xml.display().to_string(),
            "--test-xml".into(),
            self.test_xml.display().to_string(),
            "--test-key".into(),
            self.test_key.display().to_string(),
        ];
        if let Some(k) = &self.train_key {
            v.push("--train-key".into());
            v.push(k.display().to_string());
        }
        v
    }
}

fn datasets() -> Option<Vec<Dataset>> {
    let root = PathBuf::from(std::env::var_os("SENSEKNN_SENSEVAL_DIR")?);
    let mut out = Vec::new();
    for name in ["senseval2", "senseval3"] {
        let dir = root.join(name);
        let train_key = dir.join("train.key");
        out.push(Dataset {
            name,
            train_xml: dir.join("train.xml"),
            train_key: train_key.exists().then_some(train_key),
            test_xml: dir.join("test.xml"),
            test_key: dir.join("test.key"),
        });
    }
    Some(out)
}

fn run_owned(args: &[String]) -> std::process::Output {
    senseknn().args(args).output().expect("spawn senseknn")
}

const NO_DATA: &str = "SENSEKNN_SENSEVAL_DIR not set; lexical-sample data unavailable";

// sentences, avg length, distinct senses, sense embeddings, distinct words, nouns, adjectives, verbs
const REFERENCE_STATS: [(&str, &str, [u64; 8]); 4] = [
    ("senseval3", "train", [7860, 30, 285, 9280, 172, 3632, 308, 3879]),
    ("senseval3", "test", [3944, 30, 260, 4520, 168, 1777, 153, 1999]),
    ("senseval2", "train", [8611, 29, 783, 8742, 187, 3492, 1400, 2559]),
    ("senseval2", "test", [4328, 29, 620, 4385, 184, 1737, 702, 1800]),
];
const STATS_FIELDS: [&str; 8] = [
    "sentence_count",
    "avg_sentence_length",
    "distinct_sense_ids",
    "sense_embedding_count",
    "distinct_words",
    "noun_count",
    "adjective_count",
    "verb_count",
];

fn dataset_statistics() -> Status {
    let Some(sets) = datasets() else {
        return Status::NotRun(NO_DATA.into());
    };
    let mut mismatches = Vec::new();
    let mut word_flags = Vec::new();
    for ds in &sets {
        let mut args = vec!["stats".to_string(), "--json".into()];
        args.extend(ds.args());
        let o = run_owned(&args);
        if o.status.code() != Some(0) {
            return Status::Fail(format!("{}: stats failed: {}", ds.name, stderr(&o)));
        }
        let v: Value = serde_json::from_str(&stdout(&o)).expect("stats json");
        for (set, split, expected) in REFERENCE_STATS.iter().filter(|(s, _, _)| *s == ds.name) {
            let row = v
                .as_object()
                .unwrap()
                .iter()
                .find(|(k, _)| k.ends_with(&format!(" {split}")))
                .map(|(_, r)| r)
                .expect("stats row");
            for (field, want) in STATS_FIELDS.iter().zip(expected) {
                let got = row[field].as_u64().unwrap_or(u64::MAX);
                if got != *want {
                    let line = format!("{set} {split} {field}: {got} != {want}");
                    if *field == "distinct_words" {
                        word_flags.push(line);
                    } else {
                        mismatches.push(line);
                    }
                }
            }
        }
    }
    let flags = if word_flags.is_empty() {
        String::new()
    } else {
        format!("; distinct-words definition flagged: {}", word_flags.join(", "))
    };
    if mismatches.is_empty() {
        Status::Pass(format!("all integers match{flags}"))
    } else {
        Status::Fail(format!("{}{flags}", mismatches.join("; ")))
    }
}

fn mfs_baseline() -> Status {
    let Some(sets) = datasets() else {
        return Status::NotRun(NO_DATA.into());
    };
    let mut lines = Vec::new();
    let mut ok = true;
    for ds in &sets {
        let want = if ds.name == "senseval2" { 54.79 } else { 58.95 };
        let out = tempfile::tempdir().unwrap();
        let mut args = vec!["evaluate".to_string(), "--mfs-only".into(), "--out".into()];
        args.push(out.path().display().to_string());
        args.extend(ds.args());
        let o = run_owned(&args);
        if o.status.code() != Some(0) {
            return Status::Fail(format!("{}: evaluate failed: {}", ds.name, stderr(&o)));
        }
        let v: Value = serde_json::from_slice(&std::fs::read(out.path().join("mfs/report.json")).unwrap()).unwrap();
        let got = v["mfs_f1"].as_f64().unwrap_or(f64::NAN);
        ok &= (got - want).abs() <= 0.5;
        lines.push(format!("{} {got:.2} (target {want:.2})", ds.name));
    }
    let detail = lines.join(", ");
    if ok {
        Status::Pass(detail)
    } else {
        Status::Fail(detail)
    }
}

fn reference_model_f1() -> Status {
    let Some(root) = std::env::var_os("SENSEKNN_MODEL_EMB_DIR").map(PathBuf::from) else {
        return Status::NotRun("SENSEKNN_MODEL_EMB_DIR not set; needs model embeddings from the extractor".into());
    };
    let Some(sets) = datasets() else {
        return Status::NotRun(NO_DATA.into());
    };
    // (dataset, model, k, target F1)
    let targets = [
        ("senseval3", "bert", 7, 80.96),
        ("senseval2", "bert", 11, 76.81),
        ("senseval3", "distilbert", 10, 80.23),
    ];
    let pos_targets = [("Noun", 81.64), ("Verb", 67.22), ("Adjective", 81.62)];
    let mut lines = Vec::new();
    let mut ok = true;
    for (set, model, k, want) in targets {
        let ds = sets.iter().find(|d| d.name == set).unwrap();
        let out = tempfile::tempdir().unwrap();
        let emb = |split: &str| root.join(set).join(format!("{model}.{split}.cwe")).display().to_string();
        let mut args = vec![
            "evaluate".to_string(),
            "--train-emb".into(),
            emb("train"),
            "--test-emb".into(),
            emb("test"),
            "--out".into(),
            out.path().display().to_string(),
        ];
        args.extend(ds.args());
        let o = run_owned(&args);
        if o.status.code() != Some(0) {
            return Status::Fail(format!("{set} {model}: evaluate failed: {}", stderr(&o)));
        }
        let report = find_report(out.path()).expect("report.json");
        let v: Value = serde_json::from_slice(&std::fs::read(report).unwrap()).unwrap();
        let row = v["rows"].as_array().unwrap().iter().find(|r| r["k"] == k).unwrap();
        let got = row["f1"].as_f64().unwrap();
        ok &= (got - want).abs() <= 1.0;
        lines.push(format!("{set} {model} k={k}: {got:.2} (target {want:.2})"));
        if set == "senseval2" && model == "bert" {
            for (pos, want) in pos_targets {
                let got = v["pos"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .find(|p| p["pos"] == pos)
                    .and_then(|p| p["acc"].as_f64())
                    .unwrap_or(f64::NAN);
                ok &= (got - want).abs() <= 1.5;
                lines.push(format!("{set} {model} k=1 {pos}: {got:.2} (target {want:.2})"));
            }
        }
    }
    let detail = lines.join("; ");
    if ok {
        Status::Pass(detail)
    } else {
        Status::Fail(detail)
    }
}

fn find_report(dir: &Path) -> Option<PathBuf> {
    std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .map(|e| e.path().join("report.json"))
        .find(|p| p.exists())
}

// ---------------------------------------------------------------- kNN oracle

fn cos_oracle(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut aa = 0.0f64;
    let mut bb = 0.0f64;
    for i in 0..a.len() {
        dot += a[i] as f64 * b[i] as f64;
        aa += a[i] as f64 * a[i] as f64;
        bb += b[i] as f64 * b[i] as f64;
    }
    (dot / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0)
}

struct OracleAnswer {
    winner: String,
    tally: BTreeMap<String, (usize, f64)>,
}

/// Rank every exemplar by full sort, take the first k and vote.
fn knn_brute_force(exemplars: &[(String, String, Vec<f32>)], query: &[f32], k: usize) -> OracleAnswer {
    let mut ranked: Vec<(f64, &str, &str)> = exemplars
        .iter()
        .map(|(id, sense, v)| (cos_oracle(query, v), sense.as_str(), id.as_str()))
        .collect();
    ranked.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(b.1))
            .then(a.2.cmp(b.2))
    });
    let mut freq: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, sense, _) in exemplars {
        *freq.entry(sense).or_default() += 1;
    }
    let mut tally: BTreeMap<String, (usize, f64)> = BTreeMap::new();
    for (sim, sense, _) in ranked.iter().take(k) {
        let e = tally.entry(sense.to_string()).or_default();
        e.0 += 1;
        e.1 += sim;
    }
    let mut best: Option<(&String, &(usize, f64))> = None;
    for cand in &tally {
        best = match best {
            None => Some(cand),
            Some(b) => {
                let better = (cand.1 .0, cand.1 .1, freq[cand.0.as_str()]) > (b.1 .0, b.1 .1, freq[b.0.as_str()]);
                Some(if better { cand } else { b })
            }
        };
    }
    OracleAnswer {
        winner: best.unwrap().0.clone(),
        tally,
    }
}

fn oracle_vector(rng: &mut ChaCha8Rng, dim: usize, quantized: bool) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim)
            .map(|_| {
                if quantized {
                    rng.random_range(-2i32..=2) as f32
                } else {
                    rng.sample(StandardNormal)
                }
            })
            .collect();
        if v.iter().any(|&x| x != 0.0) {
            return v;
        }
    }
}

fn knn_oracle() -> Check {
    const KS: [usize; 6] = [1, 3, 5, 7, 10, 11];
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let lexelt: Lexelt = "word.n".parse().unwrap();
    let mut ties_exercised = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=200);
        // quantized low-dimensional cases produce many exact similarity ties
        let quantized = case % 2 == 0;
        let dim = if quantized { rng.random_range(1..=4) } else { rng.random_range(1..=64) };
        let senses = rng.random_range(1..=6);
        let k = KS[rng.random_range(0..KS.len())];

        let mut instances = Vec::with_capacity(n);
        let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut gold = BTreeSet::new();
            gold.insert(format!("s{}", rng.random_range(0..senses)));
            if rng.random_bool(0.1) {
                gold.insert(format!("s{}", rng.random_range(0..senses)));
            }
            // occasional exact duplicates of an earlier vector
            let v = if i > 0 && rng.random_bool(0.1) {
                vectors[rng.random_range(0..i)].clone()
            } else {
                oracle_vector(&mut rng, dim, quantized)
            };
            vectors.push(v);
            instances.push(Instance {
                id: format!("i{:03}", rng.random_range(0..1000)) + &format!("-{i}"),
                lexelt: lexelt.clone(),
                tokens: vec!["word".into()],
                head_span: HeadSpan { start: 0, end: 0 },
                head_lemma: "word".into(),
                gold_senses: gold.iter().map(|s| SenseKey::new(s.as_str()).unwrap()).collect(),
                split: Split::Train,
            });
        }
        let exemplars: Vec<(String, String, Vec<f32>)> = instances
            .iter()
            .zip(&vectors)
            .flat_map(|(inst, v)| {
                inst.gold_senses
                    .iter()
                    .map(move |s| (inst.id.clone(), s.as_str().to_string(), v.clone()))
            })
            .collect();
        let pairs: Vec<(&Instance, &[f32])> = instances.iter().zip(&vectors).map(|(i, v)| (i, v.as_slice())).collect();
        let index = ExemplarIndex::build(&pairs).map_err(|e| format!("case {case}: build: {e}"))?;
        let query = oracle_vector(&mut rng, dim, quantized);

        let (winner, tally, _) = classify(&index, &lexelt, &query, k).map_err(|e| format!("case {case}: {e}"))?;
        let want = knn_brute_force(&exemplars, &query, k);
        ensure(winner.as_str() == want.winner, || {
            format!("case {case} (n={n}, dim={dim}, k={k}): got {winner}, oracle {}", want.winner)
        })?;
        let got: BTreeMap<String, (usize, f64)> = tally
            .0
            .iter()
            .map(|s| (s.sense.as_str().to_string(), (s.votes, s.similarity_sum)))
            .collect();
        ensure(got == want.tally, || format!("case {case}: tally {got:?} != oracle {:?}", want.tally))?;
        let top = want.tally.values().map(|t| t.0).max().unwrap();
        if want.tally.values().filter(|t| t.0 == top).count() > 1 {
            ties_exercised += 1;
        }
    }
    Ok(format!("1000/1000 cases agree; {ties_exercised} with tied top vote counts"))
}

// ---------------------------------------------------------------- fixture runs

fn evaluate_fixture(fx: &Fixture, out: &Path) -> std::result::Result<Value, String> {
    let mut args = vec![
        "evaluate".to_string(),
        "--train-emb".into(),
        fx.train_emb.display().to_string(),
        "--test-emb".into(),
        fx.test_emb.display().to_string(),
        "--out".into(),
        out.display().to_string(),
    ];
    args.extend(fx.data_args());
    let o = run_owned(&args);
    if o.status.code() != Some(0) {
        return Err(format!("evaluate exited {:?}: {}", o.status.code(), stderr(&o)));
    }
    let report = std::fs::read(out.join("synthetic-model/report.json")).map_err(|e| e.to_string())?;
    serde_json::from_slice(&report).map_err(|e| e.to_string())
}

fn separable_fixture() -> Check {
    let fx = separable(1.0);
    let v = evaluate_fixture(&fx, &fx.path("out"))?;
    let rows = v["rows"].as_array().ok_or("no rows")?;
    ensure(rows.len() == 6, || format!("{} rows", rows.len()))?;
    for r in rows {
        ensure(r["f1"].as_f64() == Some(100.0) && r["p"].as_f64() == Some(100.0), || {
            format!("k={}: P={} F1={}", r["k"], r["p"], r["f1"])
        })?;
    }
    let ks: Vec<String> = rows.iter().map(|r| r["k"].to_string()).collect();
    Ok(format!("F1 100.00 at k = {}", ks.join(", ")))
}

fn scale_invariance() -> Check {
    let base = separable(1.0);
    let scaled = separable(7.3);
    let a = evaluate_fixture(&base, &base.path("out"))?;
    let b = evaluate_fixture(&scaled, &scaled.path("out"))?;
    ensure(a["rows"] == b["rows"], || "report rows differ after scaling".into())?;
    let mut answer_files = 0;
    for k in [1, 3, 5, 7, 10, 11] {
        let name = format!("out/synthetic-model/answers.k{k}.key");
        let x = std::fs::read(base.path(&name)).map_err(|e| e.to_string())?;
        let y = std::fs::read(scaled.path(&name)).map_err(|e| e.to_string())?;
        ensure(x == y, || format!("answers differ at k={k}"))?;
        answer_files += 1;
    }

    // overlapping senses, so predictions depend on fine-grained neighbor order
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let lexelt: Lexelt = "word.n".parse().unwrap();
    let train: Vec<(Instance, Vec<f32>)> = (0..300)
        .map(|i| {
            let sense = format!("s{}", i % 4);
            let mut gold = BTreeSet::new();
            gold.insert(SenseKey::new(sense).unwrap());
            let inst = Instance {
                id: format!("t{i}"),
                lexelt: lexelt.clone(),
                tokens: vec!["word".into()],
                head_span: HeadSpan { start: 0, end: 0 },
                head_lemma: "word".into(),
                gold_senses: gold,
                split: Split::Train,
            };
            (inst, oracle_vector(&mut rng, 32, false))
        })
        .collect();
    let scaled_train: Vec<Vec<f32>> = train.iter().map(|(_, v)| v.iter().map(|x| x * 7.3).collect()).collect();
    let pairs: Vec<(&Instance, &[f32])> = train.iter().map(|(i, v)| (i, v.as_slice())).collect();
    let scaled_pairs: Vec<(&Instance, &[f32])> =
        train.iter().zip(&scaled_train).map(|((i, _), v)| (i, v.as_slice())).collect();
    let idx = ExemplarIndex::build(&pairs).map_err(|e| e.to_string())?;
    let idx_scaled = ExemplarIndex::build(&scaled_pairs).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for _ in 0..300 {
        let q = oracle_vector(&mut rng, 32, false);
        let qs: Vec<f32> = q.iter().map(|x| x * 7.3).collect();
        for k in [1, 3, 5, 7, 10, 11] {
            let x = classify(&idx, &lexelt, &q, k).map_err(|e| e.to_string())?.0;
            let y = classify(&idx_scaled, &lexelt, &qs, k).map_err(|e| e.to_string())?.0;
            ensure(x == y, || format!("random index: prediction changed at k={k}"))?;
            compared += 1;
        }
    }
    Ok(format!(
        "CLI reports and {answer_files} answer files identical; {compared} random-index predictions unchanged"
    ))
}

// ---------------------------------------------------------------- t-SNE

fn gaussian_points(rng: &mut ChaCha8Rng, n: usize, center: &[f32]) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| center.iter().map(|c| c + rng.sample::<f32, _>(StandardNormal)).collect())
        .collect()
}

/// Row entropy in bits recomputed from a bandwidth, shifting by the row minimum.
fn entropy_from_sigma(distances: &[f64], n: usize, i: usize, sigma: f64) -> f64 {
    let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| distances[i * n + j]).collect();
    let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = row.iter().map(|d| (-(d - min) / (2.0 * sigma * sigma)).exp()).collect();
    let z: f64 = w.iter().sum();
    -w.iter()
        .map(|x| x / z)
        .filter(|&p| p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

fn silhouette(coords: &[[f64; 2]], labels: &[usize]) -> f64 {
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let clusters: BTreeSet<usize> = labels.iter().copied().collect();
    let mut total = 0.0;
    for i in 0..coords.len() {
        let mean_to = |c: usize| {
            let (sum, count) = (0..coords.len())
                .filter(|&j| j != i && labels[j] == c)
                .fold((0.0, 0usize), |(s, k), j| (s + dist(coords[i], coords[j]), k + 1));
            sum / count as f64
        };
        let a = mean_to(labels[i]);
        let b = clusters
            .iter()
            .filter(|&&c| c != labels[i])
            .map(|&c| mean_to(c))
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / coords.len() as f64
}

fn tsne_properties() -> Check {
    const N: usize = 50;
    const DIM: usize = 768;
    let mut rng = ChaCha8Rng::seed_from_u64(768);
    let points = gaussian_points(&mut rng, N, &[0.0; DIM]);
    let config = ProjectionConfig::default();
    let perp = config.perplexity_for(N);

    let d = squared_distances(&points).map_err(|e| e.to_string())?;
    let cal = perplexity_calibration(&d, N, perp).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for i in 0..N {
        let h = entropy_from_sigma(&d, N, i, cal.sigmas[i]);
        worst = worst.max((h.exp2() - perp).abs());
    }
    ensure(worst <= 1e-4, || format!("2^H off target by {worst:.3e}"))?;

    let p = joint_affinities(&cal.conditionals, N);
    let sum = p.sum();
    ensure((sum - 1.0).abs() <= 1e-9, || format!("P sums to {sum}"))?;
    for i in 0..N {
        for j in 0..N {
            ensure(p.get(i, j).to_bits() == p.get(j, i).to_bits(), || format!("P[{i},{j}] != P[{j},{i}]"))?;
        }
    }

    let proj = project(&points, &config).map_err(|e| e.to_string())?;
    let kl250 = proj.kl_at(250).ok_or("no KL at iteration 250")?;
    let kl_final = *proj.kl_trace.last().ok_or("empty KL trace")?;
    ensure(kl_final < kl250, || format!("final KL {kl_final} >= KL@250 {kl250}"))?;

    let offset: Vec<f32> = (0..DIM).map(|d| if d < 64 { 4.0 } else { 0.0 }).collect();
    let neg: Vec<f32> = offset.iter().map(|x| -x).collect();
    let mut two = gaussian_points(&mut rng, N / 2, &offset);
    two.extend(gaussian_points(&mut rng, N / 2, &neg));
    let labels: Vec<usize> = (0..N).map(|i| i / (N / 2)).collect();
    let proj2 = project(&two, &config).map_err(|e| e.to_string())?;
    let s = silhouette(&proj2.coords, &labels);
    ensure(s > 0.5, || format!("silhouette {s:.3}"))?;

    Ok(format!(
        "perplexity {perp}: max |2^H - perp| {worst:.1e}; |sum P - 1| {:.1e}; KL@250 {kl250:.4} > final {kl_final:.4}; silhouette {s:.3}",
        (sum - 1.0).abs()
    ))
}

// ---------------------------------------------------------------- embedding store

fn embedding_round_trip() -> Check {
    const DIM: usize = 24;
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let records: Vec<EmbeddingRecord> = (0..1000)
        .map(|i| {
            // arbitrary finite bit patterns, including subnormals and signed zeros
            let mut v: Vec<f32> = (0..DIM)
                .map(|_| loop {
                    let x = f32::from_bits(rng.random());
                    if x.is_finite() {
                        break x;
                    }
                })
                .collect();
            v[0] = if v[0] == 0.0 { 1.0 } else { v[0] };
            let id = if i % 7 == 0 { format!("ìnstance-{i}-ß") } else { format!("d{:03}.s{i}", i % 97) };
            EmbeddingRecord::new(id, v)
        })
        .collect();
    let tag = "roundtrip-model";
    let header = EmbeddingFileHeader::new(tag, DIM as u32, LayerPolicy::FinalLayer);
    let mut cur = Cursor::new(Vec::new());
    write_embeddings(&header, records.clone(), &mut cur).map_err(|e| e.to_string())?;
    let bytes = cur.into_inner();

    let store = read_embeddings(Cursor::new(&bytes)).map_err(|e| e.to_string())?;
    ensure(store.len() == 1000 && store.header.count == 1000, || "record count changed".into())?;
    for r in &records {
        let got = store.get(&r.instance_id).ok_or_else(|| format!("{} missing", r.instance_id))?;
        ensure(got.iter().zip(&r.vector).all(|(a, b)| a.to_bits() == b.to_bits()), || {
            format!("{} not bit-exact", r.instance_id)
        })?;
    }

    // independent layout: record boundaries from the documented field sizes
    let header_len = 8 + 4 + 8 + 4 + tag.len() + 1;
    let mut bounds = vec![header_len];
    for r in &records {
        bounds.push(bounds.last().unwrap() + 4 + r.instance_id.len() + 4 * DIM);
    }
    ensure(*bounds.last().unwrap() == bytes.len(), || "file length disagrees with layout".into())?;

    let mut checked = 0;
    for _ in 0..200 {
        let cut = rng.random_range(header_len..bytes.len());
        let rec = bounds.partition_point(|&b| b <= cut) - 1;
        let err = read_embeddings(Cursor::new(&bytes[..cut])).err().ok_or("truncated file accepted")?;
        if cut == bounds[rec] {
            ensure(
                matches!(err, StoreError::CountMismatch { offset, declared: 1000, found } if offset == cut as u64 && found == rec as u64),
                || format!("cut at boundary {cut}: {err}"),
            )?;
        } else {
            let start = bounds[rec];
            let id_end = start + 4 + records[rec].instance_id.len();
            let field_end = [start + 4, id_end, bounds[rec + 1]].into_iter().find(|&e| e > cut).unwrap();
            ensure(
                matches!(err, StoreError::Truncated { offset, needed } if offset == cut as u64 && needed == field_end - cut),
                || format!("cut inside record at {cut}: {err}"),
            )?;
        }
        checked += 1;
    }

    let with_count = |count: u64| {
        let mut b = bytes.clone();
        b[12..20].copy_from_slice(&count.to_le_bytes());
        read_embeddings(Cursor::new(b)).err()
    };
    let end = bytes.len() as u64;
    let more = with_count(1001).ok_or("overstated count accepted")?;
    ensure(
        matches!(more, StoreError::CountMismatch { offset, declared: 1001, found: 1000 } if offset == end),
        || format!("overstated count: {more}"),
    )?;
    let fewer = with_count(999).ok_or("understated count accepted")?;
    ensure(
        matches!(fewer, StoreError::TrailingBytes { offset, declared: 999 } if offset == bounds[999] as u64),
        || format!("understated count: {fewer}"),
    )?;
    Ok(format!(
        "1000 records bit-exact ({} bytes); {checked} truncations and 2 count corruptions rejected at the predicted offsets",
        bytes.len()
    ))
}
