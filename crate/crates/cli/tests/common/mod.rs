#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use senseknn_core::embedstore::{write_embeddings_file, EmbeddingFileHeader, EmbeddingRecord, LayerPolicy};

pub fn senseknn() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_senseknn"));
    cmd.env_remove("SENSEKNN_OUT");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    senseknn().args(args).output().expect("spawn senseknn")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// (lexelt, senses); each sense owns one coordinate axis.
pub const LAYOUT: [(&str, &[&str]); 3] = [
    ("bank.n", &["bank%1:14:00::", "bank%1:17:01::", "bank%1:04:00::"]),
    ("run.v", &["run%2:38:00::", "run%2:41:00::"]),
    ("bright.a", &["bright%3:00:00::", "bright%5:00:00::"]),
];
pub const DIM: usize = 16;
pub const TRAIN_PER_SENSE: usize = 12;
pub const TEST_PER_SENSE: usize = 5;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub train_xml: PathBuf,
    pub test_xml: PathBuf,
    pub test_key: PathBuf,
    pub train_emb: PathBuf,
    pub test_emb: PathBuf,
}

impl Fixture {
    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn data_args(&self) -> Vec<String> {
        [
            "--train-xml",
            self.train_xml.to_str().unwrap(),
            "--test-xml",
            self.test_xml.to_str().unwrap(),
            "--test-key",
            self.test_key.to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }
}

struct Item {
    id: String,
    lexelt: &'static str,
    sense: &'static str,
    axis: usize,
}

fn items(split: &str, per_sense: usize) -> Vec<Item> {
    let mut out = Vec::new();
    let mut axis = 0;
    for (lexelt, senses) in LAYOUT {
        for sense in senses {
            for i in 0..per_sense {
                out.push(Item {
                    id: format!("{lexelt}.{split}.{axis}.{i}"),
                    lexelt,
                    sense,
                    axis,
                });
            }
            axis += 1;
        }
    }
    out
}

fn lexical_sample_xml(items: &[Item], inline_answers: bool) -> String {
    let mut xml = String::from("<?xml version=\"1.0\" encoding=\"utf-8\"?>\n<corpus lang=\"english\">\n");
    for (lexelt, _) in LAYOUT {
        let word = lexelt.split('.').next().unwrap();
        writeln!(xml, "<lexelt item=\"{lexelt}\">").unwrap();
        for (n, it) in items.iter().filter(|it| it.lexelt == lexelt).enumerate() {
            writeln!(xml, "<instance id=\"{}\" docsrc=\"synthetic\">", it.id).unwrap();
            if inline_answers {
                writeln!(xml, "<answer instance=\"{}\" senseid=\"{}\"/>", it.id, it.sense).unwrap();
            }
            writeln!(
                xml,
                "<context>\nsentence {n} mentions the <head>{word}</head> in passing .\n</context>\n</instance>"
            )
            .unwrap();
        }
        xml.push_str("</lexelt>\n");
    }
    xml.push_str("</corpus>\n");
    xml
}

fn clustered_vector(rng: &mut ChaCha8Rng, axis: usize, scale: f32) -> Vec<f32> {
    (0..DIM)
        .map(|d| {
            let noise: f32 = rng.sample::<f32, _>(StandardNormal) * 0.05;
            (if d == axis { 1.0 + noise } else { noise }) * scale
        })
        .collect()
}

fn write_store(path: &Path, items: &[Item], tag: &str, scale: f32, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<EmbeddingRecord> = items
        .iter()
        .map(|it| EmbeddingRecord::new(it.id.clone(), clustered_vector(&mut rng, it.axis, scale)))
        .collect();
    let header = EmbeddingFileHeader::new(tag, DIM as u32, LayerPolicy::FinalLayer);
    write_embeddings_file(path, &header, records).unwrap();
}

/// Three lexelts whose senses occupy orthogonal directions, so every k up to
/// `TRAIN_PER_SENSE` recovers the gold sense exactly.
pub fn separable(scale: f32) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let train = items("train", TRAIN_PER_SENSE);
    let test = items("test", TEST_PER_SENSE);
    let train_xml = dir.path().join("synthetic_train.xml");
    let test_xml = dir.path().join("synthetic_test.xml");
    let test_key = dir.path().join("synthetic_test.key");
    std::fs::write(&train_xml, lexical_sample_xml(&train, true)).unwrap();
    std::fs::write(&test_xml, lexical_sample_xml(&test, false)).unwrap();
    let key: String = test.iter().map(|it| format!("{} {} {}\n", it.lexelt, it.id, it.sense)).collect();
    std::fs::write(&test_key, key).unwrap();
    let train_emb = dir.path().join("train.cwe");
    let test_emb = dir.path().join("test.cwe");
    write_store(&train_emb, &train, "synthetic-model", scale, 1);
    write_store(&test_emb, &test, "synthetic-model", scale, 2);
    Fixture {
        dir,
        train_xml,
        test_xml,
        test_key,
        train_emb,
        test_emb,
    }
}

/// Same fixture but with the training store written at another dimension.
pub fn write_store_with_dim(path: &Path, tag: &str, dim: usize) {
    let records: Vec<EmbeddingRecord> = items("train", TRAIN_PER_SENSE)
        .iter()
        .map(|it| EmbeddingRecord::new(it.id.clone(), vec![1.0 + it.axis as f32; dim]))
        .collect();
    let header = EmbeddingFileHeader::new(tag, dim as u32, LayerPolicy::FinalLayer);
    write_embeddings_file(path, &header, records).unwrap();
}
