//! SensEval lexical-sample corpora.
//!
//! A lexical-sample file is a `<corpus>` of `<lexelt item="bank.n">` blocks, each
//! holding `<instance id="...">` elements. An instance carries zero or more
//! `<answer senseid="..."/>` elements and a `<context>` in which the target word is
//! wrapped in `<head>`. Answer keys may also come from a separate plain-text file
//! with one `lexelt instance-id sense-key [sense-key...]` entry per line.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Xml {
        line: u32,
        column: u32,
        message: String,
    },
    #[error("line {line}: {message}")]
    Structure { line: u32, message: String },
    #[error("key file line {line}: {message}")]
    Key { line: usize, message: String },
    #[error("instance {id}: {message}")]
    Consistency { id: String, message: String },
    #[error("invalid lexelt {0:?}: expected <lemma>.<n|v|a>")]
    Lexelt(String),
    #[error("expected a {expected} corpus, got {found}")]
    WrongSplit { expected: Split, found: Split },
    #[error("corpus serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pos {
    Noun,
    Verb,
    Adjective,
}

impl Pos {
    pub const ALL: [Pos; 3] = [Pos::Noun, Pos::Verb, Pos::Adjective];

    pub fn suffix(self) -> &'static str {
        match self {
            Pos::Noun => "n",
            Pos::Verb => "v",
            Pos::Adjective => "a",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Pos::Noun => "Noun",
            Pos::Verb => "Verb",
            Pos::Adjective => "Adjective",
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An ambiguous word type: lemma plus part of speech, written `bank.n`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Lexelt {
    pub lemma: String,
    pub pos: Pos,
}

impl Lexelt {
    pub fn new(lemma: &str, pos: Pos) -> Result<Self> {
        let lemma = lemma.trim().to_lowercase();
        if lemma.is_empty() {
            return Err(CorpusError::Lexelt(format!(".{}", pos.suffix())));
        }
        Ok(Lexelt { lemma, pos })
    }
}

impl FromStr for Lexelt {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        let (lemma, suffix) = s
            .trim()
            .rsplit_once('.')
            .ok_or_else(|| CorpusError::Lexelt(s.to_string()))?;
        let pos = match suffix.to_ascii_lowercase().as_str() {
            "n" => Pos::Noun,
            "v" => Pos::Verb,
            "a" | "j" | "s" | "adj" => Pos::Adjective,
            _ => return Err(CorpusError::Lexelt(s.to_string())),
        };
        Lexelt::new(lemma, pos).map_err(|_| CorpusError::Lexelt(s.to_string()))
    }
}

impl fmt::Display for Lexelt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.lemma, self.pos.suffix())
    }
}

/// Opaque sense identifier. Only equality and ordering are ever used.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SenseKey(String);

impl SenseKey {
    /// Returns `None` for an empty or all-whitespace key.
    pub fn new(key: impl Into<String>) -> Option<Self> {
        let key = key.into();
        let trimmed = key.trim();
        if trimmed.is_empty() {
            None
        } else if trimmed.len() == key.len() {
            Some(SenseKey(key))
        } else {
            Some(SenseKey(trimmed.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for SenseKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Inclusive token range of the target word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpan {
    pub start: usize,
    pub end: usize,
}

impl HeadSpan {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub lexelt: Lexelt,
    pub tokens: Vec<String>,
    pub head_span: HeadSpan,
    pub head_lemma: String,
    pub gold_senses: BTreeSet<SenseKey>,
    pub split: Split,
}

impl Instance {
    pub fn head_tokens(&self) -> &[String] {
        &self.tokens[self.head_span.start..=self.head_span.end]
    }

    pub fn is_scored(&self) -> bool {
        !self.gold_senses.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub split: Split,
    pub instances: Vec<Instance>,
    pub lexelts: BTreeSet<Lexelt>,
}

impl Corpus {
    pub fn empty(split: Split) -> Self {
        Corpus {
            split,
            instances: Vec::new(),
            lexelts: BTreeSet::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|inst| inst.id == id)
    }

    pub fn by_id(&self) -> HashMap<&str, &Instance> {
        self.instances.iter().map(|i| (i.id.as_str(), i)).collect()
    }

    /// Canonical serialized form, used for caching parsed corpora.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Parse a lexical-sample XML file, merging gold senses from an optional key file.
///
/// Gold senses are the union of inline `<answer>` elements and key entries. Key
/// entries must name instances that exist in the XML; when a key is supplied for
/// the training split every instance must appear in it.
pub fn parse_lexical_sample(xml: &[u8], key: Option<&[u8]>, split: Split) -> Result<Corpus> {
    let text = decode_text(xml);
    let opts = roxmltree::ParsingOptions {
        allow_dtd: true,
        ..Default::default()
    };
    let doc = roxmltree::Document::parse_with_options(&text, opts).map_err(|e| {
        let pos = e.pos();
        CorpusError::Xml {
            line: pos.row,
            column: pos.col,
            message: e.to_string(),
        }
    })?;

    let mut corpus = Corpus::empty(split);
    let mut seen = HashSet::new();
    for lexelt_node in doc.descendants().filter(|n| n.has_tag_name("lexelt")) {
        let line = doc.text_pos_at(lexelt_node.range().start).row;
        let item = lexelt_node.attribute("item").ok_or(CorpusError::Structure {
            line,
            message: "<lexelt> without item attribute".into(),
        })?;
        let lexelt: Lexelt = item.parse()?;
        corpus.lexelts.insert(lexelt.clone());

        for inst_node in lexelt_node.children().filter(|n| n.has_tag_name("instance")) {
            let inst = parse_instance(&doc, inst_node, &lexelt, split)?;
            if !seen.insert(inst.id.clone()) {
                return Err(CorpusError::Consistency {
                    id: inst.id,
                    message: format!("duplicate instance id in {split} split"),
                });
            }
            corpus.instances.push(inst);
        }
    }

    if let Some(key) = key {
        apply_key(&mut corpus, &parse_key(key)?)?;
    }
    if split == Split::Train {
        if let Some(inst) = corpus.instances.iter().find(|i| i.gold_senses.is_empty()) {
            return Err(CorpusError::Consistency {
                id: inst.id.clone(),
                message: "training instance has no gold sense".into(),
            });
        }
    }
    Ok(corpus)
}

// Some distributions of the SensEval files are Latin-1 rather than UTF-8.
fn decode_text(bytes: &[u8]) -> String {
    match std::str::from_utf8(bytes) {
        Ok(s) => s.to_string(),
        Err(_) => bytes.iter().map(|&b| b as char).collect(),
    }
}

fn parse_instance(
    doc: &roxmltree::Document,
    node: roxmltree::Node,
    lexelt: &Lexelt,
    split: Split,
) -> Result<Instance> {
    let line = doc.text_pos_at(node.range().start).row;
    let id = node
        .attribute("id")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or(CorpusError::Structure {
            line,
            message: "<instance> without id attribute".into(),
        })?
        .to_string();

    let gold_senses: BTreeSet<SenseKey> = node
        .children()
        .filter(|n| n.has_tag_name("answer"))
        .filter_map(|n| n.attribute("senseid"))
        .filter_map(SenseKey::new)
        .collect();

    let context = node
        .children()
        .find(|n| n.has_tag_name("context"))
        .ok_or_else(|| CorpusError::Structure {
            line,
            message: format!("instance {id} has no <context>"),
        })?;

    let mut tokens = Vec::new();
    let mut head: Option<(HeadSpan, Option<String>)> = None;
    collect_tokens(context, &mut tokens, &mut head);

    let (head_span, lemma_attr) = head.ok_or_else(|| CorpusError::Structure {
        line,
        message: format!("instance {id} has no non-empty <head>"),
    })?;
    let head_lemma = lemma_attr
        .filter(|l| !l.trim().is_empty())
        .unwrap_or_else(|| lexelt.lemma.clone());

    Ok(Instance {
        id,
        lexelt: lexelt.clone(),
        tokens,
        head_span,
        head_lemma,
        gold_senses,
        split,
    })
}

// Element boundaries are token boundaries. Only the first non-empty <head> is the
// target; later heads and satellite marks contribute plain tokens.
fn collect_tokens(
    node: roxmltree::Node,
    tokens: &mut Vec<String>,
    head: &mut Option<(HeadSpan, Option<String>)>,
) {
    for child in node.children() {
        if child.is_text() {
            if let Some(text) = child.text() {
                tokens.extend(text.split_whitespace().map(str::to_string));
            }
        } else if child.is_element() {
            if head.is_none() && child.has_tag_name("head") {
                let start = tokens.len();
                collect_plain(child, tokens);
                if tokens.len() > start {
                    let span = HeadSpan {
                        start,
                        end: tokens.len() - 1,
                    };
                    *head = Some((span, child.attribute("lemma").map(str::to_string)));
                }
            } else {
                collect_tokens(child, tokens, head);
            }
        }
    }
}

fn collect_plain(node: roxmltree::Node, tokens: &mut Vec<String>) {
    for text in node.descendants().filter(|n| n.is_text()).filter_map(|n| n.text()) {
        tokens.extend(text.split_whitespace().map(str::to_string));
    }
}

#[derive(Debug, Clone)]
pub struct KeyEntry {
    pub lexelt: String,
    pub senses: Vec<SenseKey>,
    pub line: usize,
}

/// Parse a plain-text answer key. Repeated ids accumulate their senses.
pub fn parse_key(bytes: &[u8]) -> Result<BTreeMap<String, KeyEntry>> {
    let text = decode_text(bytes);
    let mut entries: BTreeMap<String, KeyEntry> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let mut fields = line.split_whitespace();
        let Some(lexelt) = fields.next() else { continue };
        let id = fields.next().ok_or_else(|| CorpusError::Key {
            line: lineno,
            message: "missing instance id".into(),
        })?;
        let senses: Vec<SenseKey> = fields.filter_map(SenseKey::new).collect();
        if senses.is_empty() {
            return Err(CorpusError::Key {
                line: lineno,
                message: format!("no sense key for instance {id}"),
            });
        }
        let entry = entries.entry(id.to_string()).or_insert_with(|| KeyEntry {
            lexelt: lexelt.to_string(),
            senses: Vec::new(),
            line: lineno,
        });
        entry.senses.extend(senses);
    }
    Ok(entries)
}

fn apply_key(corpus: &mut Corpus, key: &BTreeMap<String, KeyEntry>) -> Result<()> {
    let positions: HashMap<String, usize> = corpus
        .instances
        .iter()
        .enumerate()
        .map(|(i, inst)| (inst.id.clone(), i))
        .collect();

    for (id, entry) in key {
        let &pos = positions.get(id).ok_or_else(|| CorpusError::Consistency {
            id: id.clone(),
            message: format!("listed in key file (line {}) but absent from XML", entry.line),
        })?;
        let inst = &mut corpus.instances[pos];
        if let Ok(lexelt) = entry.lexelt.parse::<Lexelt>() {
            if lexelt != inst.lexelt {
                return Err(CorpusError::Consistency {
                    id: id.clone(),
                    message: format!("key says {lexelt}, XML says {}", inst.lexelt),
                });
            }
        }
        inst.gold_senses.extend(entry.senses.iter().cloned());
    }

    if corpus.split == Split::Train {
        if let Some(inst) = corpus.instances.iter().find(|i| !key.contains_key(&i.id)) {
            return Err(CorpusError::Consistency {
                id: inst.id.clone(),
                message: "training instance missing from key file".into(),
            });
        }
    }
    Ok(())
}

/// Token sequence handed to the embedding model, with the new head position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preprocessed {
    pub tokens: Vec<String>,
    pub head_span: HeadSpan,
}

/// Replace the head with its lemma and keep every other token's surface form.
/// A multi-token head collapses to a single lemma token.
pub fn preprocess_instance(inst: &Instance) -> Preprocessed {
    let HeadSpan { start, end } = inst.head_span;
    let mut tokens = Vec::with_capacity(inst.tokens.len() + start - end);
    tokens.extend_from_slice(&inst.tokens[..start]);
    tokens.push(inst.head_lemma.clone());
    tokens.extend_from_slice(&inst.tokens[end + 1..]);
    Preprocessed {
        tokens,
        head_span: HeadSpan { start, end: start },
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsReport {
    pub sentence_count: usize,
    pub avg_sentence_length: usize,
    pub distinct_sense_ids: usize,
    pub sense_embedding_count: usize,
    /// Distinct lowercased surface forms of the target word.
    pub distinct_words: usize,
    pub lexelt_count: usize,
    pub noun_count: usize,
    pub adjective_count: usize,
    pub verb_count: usize,
}

pub fn corpus_stats(corpus: &Corpus) -> StatsReport {
    let n = corpus.instances.len();
    let total_tokens: usize = corpus.instances.iter().map(|i| i.tokens.len()).sum();
    let mut senses = HashSet::new();
    let mut words = HashSet::new();
    let mut report = StatsReport {
        sentence_count: n,
        // Integer half-up rounding of total / n.
        avg_sentence_length: if n == 0 { 0 } else { (2 * total_tokens + n) / (2 * n) },
        lexelt_count: corpus.lexelts.len(),
        ..Default::default()
    };
    for inst in &corpus.instances {
        let heads = inst.gold_senses.len();
        senses.extend(inst.gold_senses.iter());
        words.insert(inst.head_tokens().join(" ").to_lowercase());
        report.sense_embedding_count += heads;
        match inst.lexelt.pos {
            Pos::Noun => report.noun_count += heads,
            Pos::Verb => report.verb_count += heads,
            Pos::Adjective => report.adjective_count += heads,
        }
    }
    report.distinct_sense_ids = senses.len();
    report.distinct_words = words.len();
    report
}

/// Aligned text table, one row per named report.
pub fn render_stats_table(rows: &[(String, StatsReport)]) -> String {
    const HEADERS: [&str; 10] = [
        "Dataset",
        "Sentences",
        "AvgLen",
        "SenseIds",
        "SenseEmb",
        "Words",
        "Lexelts",
        "Nouns",
        "Adjectives",
        "Verbs",
    ];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                r.sentence_count.to_string(),
                r.avg_sentence_length.to_string(),
                r.distinct_sense_ids.to_string(),
                r.sense_embedding_count.to_string(),
                r.distinct_words.to_string(),
                r.lexelt_count.to_string(),
                r.noun_count.to_string(),
                r.adjective_count.to_string(),
                r.verb_count.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..HEADERS.len())
        .map(|c| {
            cells
                .iter()
                .map(|row| row[c].len())
                .chain(std::iter::once(HEADERS[c].len()))
                .max()
                .unwrap_or(0)
        })
        .collect();

    let mut out = String::new();
    let mut push_row = |row: &[&str]| {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{:<w$}", cell, w = widths[c])
                } else {
                    format!("{:>w$}", cell, w = widths[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    };
    push_row(&HEADERS);
    for row in &cells {
        let refs: Vec<&str> = row.iter().map(String::as_str).collect();
        push_row(&refs);
    }
    out
}

/// Per-lexelt sense counts, one count per (instance, gold sense) pair.
pub fn sense_frequencies(corpus: &Corpus) -> BTreeMap<Lexelt, BTreeMap<SenseKey, usize>> {
    let mut freq: BTreeMap<Lexelt, BTreeMap<SenseKey, usize>> = BTreeMap::new();
    for inst in &corpus.instances {
        let counts = freq.entry(inst.lexelt.clone()).or_default();
        for sense in &inst.gold_senses {
            *counts.entry(sense.clone()).or_default() += 1;
        }
    }
    freq.retain(|_, counts| !counts.is_empty());
    freq
}

/// Highest count wins; equal counts go to the lexicographically smallest key.
pub fn most_frequent<'a, I>(counts: I) -> Option<SenseKey>
where
    I: IntoIterator<Item = (&'a SenseKey, &'a usize)>,
{
    counts
        .into_iter()
        .max_by(|(ka, ca), (kb, cb)| ca.cmp(cb).then_with(|| kb.cmp(ka)))
        .map(|(k, _)| k.clone())
}

/// Most frequent training sense of every lexelt that has annotated instances.
pub fn mfs_table(train: &Corpus) -> Result<BTreeMap<Lexelt, SenseKey>> {
    if train.split != Split::Train {
        return Err(CorpusError::WrongSplit {
            expected: Split::Train,
            found: train.split,
        });
    }
    Ok(sense_frequencies(train)
        .into_iter()
        .filter_map(|(lexelt, counts)| most_frequent(&counts).map(|k| (lexelt, k)))
        .collect())
}
