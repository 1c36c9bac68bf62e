//! Sense-space plots: choose a lexelt's training points, project them and emit
//! JSON or SVG scatter plots labeled by gold sense.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{sense_frequencies, Corpus, Lexelt, SenseKey};
use crate::embedstore::EmbeddingStore;
use crate::tsne::{project, ProjectionConfig, TsneError};

pub const DEFAULT_MIN_FREQ: usize = 3;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("unknown lexelt {0}")]
    UnknownLexelt(Lexelt),
    #[error("nothing to plot for {lexelt}: no sense has frequency >= {min_freq} with stored embeddings")]
    NothingToPlot { lexelt: Lexelt, min_freq: usize },
    #[error(transparent)]
    Tsne(#[from] TsneError),
    #[error("plot JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PlotError>;

/// Training points of one lexelt, one per (instance, qualifying gold sense).
#[derive(Debug, Clone)]
pub struct LexeltPoints<'a> {
    pub lexelt: Lexelt,
    pub vectors: Vec<&'a [f32]>,
    pub senses: Vec<SenseKey>,
    pub ids: Vec<String>,
    /// Corpus frequency of every kept sense.
    pub freq: BTreeMap<SenseKey, usize>,
    /// Instances of the lexelt without a stored vector.
    pub missing: usize,
}

/// Keep senses whose corpus frequency is at least `min_freq` and pair their
/// instances with stored vectors.
pub fn select_lexelt_points<'a>(
    corpus: &'a Corpus,
    store: &'a EmbeddingStore,
    lexelt: &Lexelt,
    min_freq: usize,
) -> Result<LexeltPoints<'a>> {
    if !corpus.lexelts.contains(lexelt) && !corpus.instances.iter().any(|i| &i.lexelt == lexelt) {
        return Err(PlotError::UnknownLexelt(lexelt.clone()));
    }
    let mut freq = sense_frequencies(corpus).remove(lexelt).unwrap_or_default();
    freq.retain(|_, c| *c >= min_freq);

    let mut points = LexeltPoints {
        lexelt: lexelt.clone(),
        vectors: Vec::new(),
        senses: Vec::new(),
        ids: Vec::new(),
        freq,
        missing: 0,
    };
    for inst in corpus.instances.iter().filter(|i| &i.lexelt == lexelt) {
        let Some(vector) = store.get(&inst.id) else {
            points.missing += 1;
            continue;
        };
        for sense in inst.gold_senses.iter().filter(|s| points.freq.contains_key(*s)) {
            points.vectors.push(vector);
            points.senses.push(sense.clone());
            points.ids.push(inst.id.clone());
        }
    }
    if points.vectors.is_empty() {
        return Err(PlotError::NothingToPlot {
            lexelt: lexelt.clone(),
            min_freq,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub sense: SenseKey,
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegendEntry {
    pub sense: SenseKey,
    pub freq: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensePlotData {
    pub lexelt: String,
    pub model_tag: String,
    pub seed: u64,
    /// Configuration actually used, with the perplexity resolved.
    pub config: ProjectionConfig,
    pub points: Vec<PlotPoint>,
    /// Most frequent sense first.
    pub legend: Vec<LegendEntry>,
    pub kl_trace: Vec<f64>,
}

/// `sense-key<whitespace>label` per line; blank lines and `#` comments skipped.
pub fn parse_sense_labels(text: &str) -> BTreeMap<SenseKey, String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let (key, label) = l.split_once(char::is_whitespace)?;
            Some((SenseKey::new(key)?, label.trim().to_string()))
        })
        .collect()
}

/// Project the selected points and attach labels. Labels default to the sense key.
pub fn build_plot(
    points: &LexeltPoints,
    model_tag: &str,
    config: &ProjectionConfig,
    labels: &BTreeMap<SenseKey, String>,
) -> Result<SensePlotData> {
    let projection = project(&points.vectors, config)?;
    let mut legend: Vec<LegendEntry> = points
        .freq
        .iter()
        .map(|(sense, &freq)| LegendEntry {
            sense: sense.clone(),
            freq,
            label: labels.get(sense).cloned().unwrap_or_else(|| sense.to_string()),
        })
        .collect();
    legend.sort_by(|a, b| b.freq.cmp(&a.freq).then_with(|| a.sense.cmp(&b.sense)));

    let plotted = projection
        .coords
        .iter()
        .zip(&points.senses)
        .zip(&points.ids)
        .map(|((c, sense), id)| PlotPoint {
            x: c[0],
            y: c[1],
            sense: sense.clone(),
            id: id.clone(),
        })
        .collect();

    Ok(SensePlotData {
        lexelt: points.lexelt.to_string(),
        model_tag: model_tag.to_string(),
        seed: config.seed,
        config: ProjectionConfig {
            perplexity: Some(projection.perplexity),
            ..config.clone()
        },
        points: plotted,
        legend,
        kl_trace: projection.kl_trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotFormat {
    Json,
    Svg,
}

pub fn emit_plot(data: &SensePlotData, format: PlotFormat) -> Vec<u8> {
    match format {
        PlotFormat::Json => {
            let mut out = serde_json::to_vec_pretty(data).expect("plot data serializes");
            out.push(b'\n');
            out
        }
        PlotFormat::Svg => render_svg(data).into_bytes(),
    }
}

pub fn parse_plot_json(bytes: &[u8]) -> Result<SensePlotData> {
    Ok(serde_json::from_slice(bytes)?)
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf",
];
const PLOT_SIZE: f64 = 480.0;
const MARGIN: f64 = 20.0;
const LEGEND_WIDTH: f64 = 260.0;
const LEGEND_ROW: f64 = 18.0;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn render_svg(data: &SensePlotData) -> String {
    let color_of: BTreeMap<&SenseKey, &str> = data
        .legend
        .iter()
        .enumerate()
        .map(|(i, e)| (&e.sense, PALETTE[i % PALETTE.len()]))
        .collect();

    let (mut min_x, mut max_x, mut min_y, mut max_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &data.points {
        min_x = min_x.min(p.x);
        max_x = max_x.max(p.x);
        min_y = min_y.min(p.y);
        max_y = max_y.max(p.y);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1e-12);
    let scale = (PLOT_SIZE - 2.0 * MARGIN) / span;
    let to_px = |x: f64, y: f64| {
        (
            MARGIN + (x - min_x) * scale,
            // SVG y grows downwards
            PLOT_SIZE - MARGIN - (y - min_y) * scale,
        )
    };

    let width = PLOT_SIZE + LEGEND_WIDTH;
    let height = PLOT_SIZE.max(2.0 * MARGIN + LEGEND_ROW * (data.legend.len() as f64 + 1.0));
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(svg, r#"  <rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"  <text x="{MARGIN}" y="14" font-family="sans-serif" font-size="12">{} ({})</text>"#,
        escape(&data.lexelt),
        escape(&data.model_tag)
    );
    let _ = writeln!(svg, r#"  <g class="points">"#);
    for p in &data.points {
        let (cx, cy) = to_px(p.x, p.y);
        let color = color_of.get(&p.sense).copied().unwrap_or("#000000");
        let _ = writeln!(
            svg,
            r#"    <circle cx="{cx:.3}" cy="{cy:.3}" r="4" fill="{color}" fill-opacity="0.8"><title>{}</title></circle>"#,
            escape(&p.id)
        );
    }
    let _ = writeln!(svg, "  </g>");
    let _ = writeln!(svg, r#"  <g class="legend" font-family="sans-serif" font-size="12">"#);
    for (i, e) in data.legend.iter().enumerate() {
        let y = MARGIN + LEGEND_ROW * (i as f64 + 1.0);
        let x = PLOT_SIZE + 10.0;
        let _ = writeln!(
            svg,
            r#"    <rect x="{x}" y="{}" width="10" height="10" fill="{}"/>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(
            svg,
            r#"    <text x="{}" y="{y}">{} ({})</text>"#,
            x + 16.0,
            escape(&e.label),
            e.freq
        );
    }
    let _ = writeln!(svg, "  </g>");
    svg.push_str("</svg>\n");
    svg
}
