use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use senseknn_core::classifier::{classify_all, render_answers, ExemplarIndex, Prediction};
use senseknn_core::corpus::{
    corpus_stats, parse_lexical_sample, render_stats_table, sense_frequencies, Corpus, CorpusError, Lexelt, Split,
};
use senseknn_core::embedstore::{self, join, read_embeddings_file, EmbeddingStore};
use senseknn_core::eval::{self, pos_breakdown, report_render, score, sweep, MfsBaseline};
use senseknn_core::plot::{build_plot, emit_plot, parse_sense_labels, select_lexelt_points, PlotError, PlotFormat};
use senseknn_core::tsne::ProjectionConfig;

use crate::{DataArgs, EvaluateArgs, InspectArgs, MfsArgs, StatsArgs, TsneArgs};

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_CONSISTENCY: u8 = 3;
pub const EXIT_USAGE: u8 = 4;

const DEFAULT_OUT: &str = "senseknn_out";

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    fn consistency(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONSISTENCY,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_corpus(xml: &Path, key: Option<&Path>, split: Split) -> Result<Corpus> {
    let xml_bytes = read_file(xml)?;
    let key_bytes = key.map(read_file).transpose()?;
    parse_lexical_sample(&xml_bytes, key_bytes.as_deref(), split).map_err(|e| {
        let message = format!("{}: {e}", xml.display());
        match e {
            CorpusError::Consistency { .. } => CliError::consistency(message),
            _ => CliError::input(message),
        }
    })
}

fn load_store(path: &Path) -> Result<EmbeddingStore> {
    read_embeddings_file(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn require<'a>(path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| CliError::usage(format!("{flag} is required for this command")))
}

fn load_train(data: &DataArgs) -> Result<Corpus> {
    load_corpus(require(&data.train_xml, "--train-xml")?, data.train_key.as_deref(), Split::Train)
}

fn load_test(data: &DataArgs) -> Result<Corpus> {
    load_corpus(require(&data.test_xml, "--test-xml")?, data.test_key.as_deref(), Split::Test)
}

/// SENSEKNN_OUT takes precedence over --out.
fn out_dir(data: &DataArgs) -> Option<PathBuf> {
    std::env::var_os("SENSEKNN_OUT")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| data.out.clone())
}

fn write_artifact(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::input(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn dataset_name(data: &DataArgs) -> String {
    data.dataset.clone().unwrap_or_else(|| {
        data.test_xml
            .as_deref()
            .or(data.train_xml.as_deref())
            .map(file_stem)
            .unwrap_or_else(|| "dataset".into())
    })
}

/// Model tags may contain `/` (hub ids); keep directory names flat.
fn sanitize(tag: &str) -> String {
    let s: String = tag
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    if s.is_empty() {
        "untagged".into()
    } else {
        s
    }
}

fn print(text: &str) {
    let mut out = io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
}

pub fn stats(args: &StatsArgs) -> Result<()> {
    let data = &args.data;
    if data.train_xml.is_none() && data.test_xml.is_none() {
        return Err(CliError::usage("give --train-xml and/or --test-xml"));
    }
    let mut rows = Vec::new();
    if let Some(xml) = &data.train_xml {
        let c = load_corpus(xml, data.train_key.as_deref(), Split::Train)?;
        rows.push((format!("{} train", file_stem(xml)), corpus_stats(&c)));
    }
    if let Some(xml) = &data.test_xml {
        let c = load_corpus(xml, data.test_key.as_deref(), Split::Test)?;
        rows.push((format!("{} test", file_stem(xml)), corpus_stats(&c)));
    }

    let json_map: BTreeMap<&str, _> = rows.iter().map(|(n, r)| (n.as_str(), r)).collect();
    let json = serde_json::to_string_pretty(&json_map).expect("stats serialize") + "\n";
    let table = render_stats_table(&rows);
    if let Some(dir) = out_dir(data) {
        write_artifact(&dir.join("stats.json"), json.as_bytes())?;
        write_artifact(&dir.join("stats.txt"), table.as_bytes())?;
    }
    print(if args.json { &json } else { &table });
    Ok(())
}

pub fn mfs(args: &MfsArgs) -> Result<()> {
    let data = &args.data;
    let train = load_train(data)?;
    let baseline = MfsBaseline::from_train(&train).map_err(|e| CliError::input(e.to_string()))?;
    let freq = sense_frequencies(&train);

    let mut rows = Vec::new();
    for (lexelt, sense) in &baseline.table {
        let counts = &freq[lexelt];
        rows.push(serde_json::json!({
            "lexelt": lexelt.to_string(),
            "sense": sense.as_str(),
            "count": counts[sense],
            "total": counts.values().sum::<usize>(),
        }));
    }

    let mut f1 = None;
    if data.test_xml.is_some() {
        let test = load_test(data)?;
        let preds = baseline.predict(&test);
        let report = score(&preds, &test).map_err(|e| CliError::consistency(e.to_string()))?;
        if let Some(dir) = out_dir(data) {
            write_artifact(&dir.join("mfs").join("answers.key"), render_answers(&preds).as_bytes())?;
        }
        f1 = Some(eval::round2(report.f1));
    }

    if args.json {
        let doc = serde_json::json!({ "table": rows, "mfs_f1": f1 });
        print(&(serde_json::to_string_pretty(&doc).expect("json") + "\n"));
    } else {
        let mut text = String::new();
        for r in &rows {
            text.push_str(&format!("{}\t{}\t{}/{}\n", r["lexelt"].as_str().unwrap(), r["sense"].as_str().unwrap(), r["count"], r["total"]));
        }
        if let Some(f1) = f1 {
            text.push_str(&format!("MFS F1: {f1:.2}\n"));
        }
        print(&text);
    }
    Ok(())
}

struct ModelRun {
    tag: String,
    train: EmbeddingStore,
    test: EmbeddingStore,
}

fn pair_stores(train: Vec<EmbeddingStore>, test: Vec<EmbeddingStore>) -> Result<Vec<ModelRun>> {
    let mut by_tag: BTreeMap<String, (Option<EmbeddingStore>, Option<EmbeddingStore>)> = BTreeMap::new();
    for s in train {
        let slot = by_tag.entry(s.header.model_tag.clone()).or_default();
        if slot.0.replace(s).is_some() {
            return Err(CliError::usage("two training embedding files share a model tag"));
        }
    }
    for s in test {
        let slot = by_tag.entry(s.header.model_tag.clone()).or_default();
        if slot.1.replace(s).is_some() {
            return Err(CliError::usage("two test embedding files share a model tag"));
        }
    }
    by_tag
        .into_iter()
        .map(|(tag, pair)| match pair {
            (Some(train), Some(test)) => {
                if train.header.dim != test.header.dim {
                    return Err(CliError::consistency(format!(
                        "model {tag:?}: train dim {} differs from test dim {}",
                        train.header.dim, test.header.dim
                    )));
                }
                Ok(ModelRun { tag, train, test })
            }
            (Some(_), None) => Err(CliError::consistency(format!("model {tag:?} has no test embeddings"))),
            (None, _) => Err(CliError::consistency(format!("model {tag:?} has no training embeddings"))),
        })
        .collect()
}

fn pos_predictions(
    table: &eval::SweepTable,
    index: &ExemplarIndex,
    pairs: &[(&senseknn_core::Instance, &[f32])],
    k: usize,
) -> Vec<Prediction> {
    match table.row(k) {
        Some(row) => row.predictions.clone(),
        None => classify_all(index, pairs, k).into_iter().filter_map(|o| o.ok()).collect(),
    }
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let data = &args.data;
    if args.k.is_empty() || args.k.contains(&0) || args.pos_k == 0 {
        return Err(CliError::usage("k values must be positive integers"));
    }
    for path in args.train_emb.iter().chain(&args.test_emb) {
        if !path.exists() {
            return Err(CliError::input(format!("{}: no such file", path.display())));
        }
    }
    let train = load_train(data)?;
    let test = load_test(data)?;
    let dataset = dataset_name(data);
    let out = out_dir(data).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    let baseline = MfsBaseline::from_train(&train).map_err(|e| CliError::input(e.to_string()))?;
    let mfs_preds = baseline.predict(&test);
    let mfs_report = score(&mfs_preds, &test).map_err(|e| CliError::consistency(e.to_string()))?;

    if args.mfs_only {
        let breakdown = pos_breakdown(&mfs_preds, &test).map_err(|e| CliError::consistency(e.to_string()))?;
        let rendered = report_render("mfs", &dataset, None, &breakdown, Some(mfs_report.f1));
        let dir = out.join("mfs");
        write_artifact(&dir.join("report.json"), rendered.json.as_bytes())?;
        write_artifact(&dir.join("report.txt"), rendered.text.as_bytes())?;
        write_artifact(&dir.join("answers.key"), render_answers(&mfs_preds).as_bytes())?;
        print(if args.json { &rendered.json } else { &rendered.text });
        return Ok(());
    }

    if args.train_emb.is_empty() || args.test_emb.is_empty() {
        return Err(CliError::usage("--train-emb and --test-emb are required unless --mfs-only is given"));
    }
    let train_stores = args.train_emb.iter().map(|p| load_store(p)).collect::<Result<Vec<_>>>()?;
    let test_stores = args.test_emb.iter().map(|p| load_store(p)).collect::<Result<Vec<_>>>()?;

    for run in pair_stores(train_stores, test_stores)? {
        let train_join = join(&train, &run.train);
        if !train_join.missing.is_empty() {
            eprintln!(
                "warning: model {:?}: {} training instances have no embedding and are left out of the index",
                run.tag,
                train_join.missing.len()
            );
        }
        let index = ExemplarIndex::build(&train_join.pairs)
            .map_err(|e| CliError::consistency(format!("model {:?}: {e}", run.tag)))?;
        let test_join = join(&test, &run.test);
        if !test_join.missing.is_empty() {
            eprintln!(
                "warning: model {:?}: {} of {} test instances have no embedding; they count as unattempted",
                run.tag,
                test_join.missing.len(),
                test.instances.len()
            );
        }

        let table = sweep(&index, &test_join.pairs, &test, &args.k).map_err(|e| CliError::consistency(e.to_string()))?;
        for row in &table.rows {
            if !row.failures.is_empty() {
                eprintln!(
                    "warning: model {:?}, k={}: {} instances failed to classify (first: {})",
                    run.tag,
                    row.k,
                    row.failures.len(),
                    row.failures[0]
                );
            }
        }
        let pos_preds = pos_predictions(&table, &index, &test_join.pairs, args.pos_k);
        let breakdown = pos_breakdown(&pos_preds, &test).map_err(|e| CliError::consistency(e.to_string()))?;
        let rendered = report_render(&run.tag, &dataset, Some(&table), &breakdown, Some(mfs_report.f1));

        let dir = out.join(sanitize(&run.tag));
        write_artifact(&dir.join("report.json"), rendered.json.as_bytes())?;
        write_artifact(&dir.join("report.txt"), rendered.text.as_bytes())?;
        for row in &table.rows {
            write_artifact(
                &dir.join(format!("answers.k{}.key", row.k)),
                render_answers(&row.predictions).as_bytes(),
            )?;
        }
        print(if args.json { &rendered.json } else { &rendered.text });
    }
    Ok(())
}

pub fn tsne(args: &TsneArgs) -> Result<()> {
    let data = &args.data;
    if args.iterations == 0 {
        return Err(CliError::usage("--iterations must be at least 1"));
    }
    let mut lexelts = Vec::new();
    for raw in &args.lexelt {
        let lx: Lexelt = raw
            .parse()
            .map_err(|e: CorpusError| CliError::usage(e.to_string()))?;
        lexelts.push(lx);
    }
    let train = load_train(data)?;
    for lx in &lexelts {
        if !train.lexelts.contains(lx) {
            let available: Vec<String> = train.lexelts.iter().map(ToString::to_string).collect();
            return Err(CliError::usage(format!(
                "unknown lexelt {lx}; available: {}",
                available.join(", ")
            )));
        }
    }
    let store = load_store(&args.train_emb)?;
    let labels = match &args.labels {
        Some(p) => parse_sense_labels(&String::from_utf8_lossy(&read_file(p)?)),
        None => BTreeMap::new(),
    };
    let config = ProjectionConfig {
        perplexity: args.perplexity,
        iterations: args.iterations,
        ..ProjectionConfig::with_seed(args.seed)
    };
    let out = out_dir(data).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));

    for lx in &lexelts {
        let points = select_lexelt_points(&train, &store, lx, args.min_freq).map_err(|e| match e {
            PlotError::NothingToPlot { .. } | PlotError::UnknownLexelt(_) => CliError::usage(e.to_string()),
            other => CliError::consistency(other.to_string()),
        })?;
        if points.missing > 0 {
            eprintln!("warning: {lx}: {} instances have no embedding", points.missing);
        }
        let plot_data = build_plot(&points, &store.header.model_tag, &config, &labels).map_err(|e| match e {
            PlotError::Tsne(senseknn_core::tsne::TsneError::TooFewPoints { .. }) => CliError::usage(format!("{lx}: {e}")),
            other => CliError::consistency(format!("{lx}: {other}")),
        })?;
        let stem = format!("tsne_{}_{}", sanitize(&store.header.model_tag), sanitize(&lx.to_string()));
        write_artifact(&out.join(format!("{stem}.json")), &emit_plot(&plot_data, PlotFormat::Json))?;
        write_artifact(&out.join(format!("{stem}.svg")), &emit_plot(&plot_data, PlotFormat::Svg))?;
        eprintln!(
            "{lx}: {} points, {} senses -> {}",
            plot_data.points.len(),
            plot_data.legend.len(),
            out.join(format!("{stem}.svg")).display()
        );
    }
    Ok(())
}

pub fn inspect(args: &InspectArgs) -> Result<()> {
    let store = load_store(&args.file)?;
    if args.jsonl {
        let mut out = io::stdout().lock();
        embedstore::write_jsonl(store.records(), &mut out).map_err(|e| CliError::input(e.to_string()))?;
        return Ok(());
    }
    if args.json {
        print(&(serde_json::to_string_pretty(&store.header).expect("header serializes") + "\n"));
    } else {
        let h = &store.header;
        print(&format!(
            "file: {}\nmodel_tag: {}\ndim: {}\ncount: {}\nlayer_policy: {:?}\n",
            args.file.display(),
            h.model_tag,
            h.dim,
            h.count,
            h.layer_policy
        ));
    }
    Ok(())
}
