//! Markdown summary and SVG charts of a finished (or partial) run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::stages::{
    paths, read_eval, CorrelationRow, EVAL_GRU_M, EVAL_GRU_M_PRIME, EVAL_RIDGE, SERIES_DI, SERIES_M_ALL,
    SERIES_M_FILTERED, SERIES_M_PRIME,
};
use super::{stage_names, RunManifest};
use crate::error::{Error, Result};
use crate::index::{svg_chart, IndexPoint, IndexSeries, Period};
use crate::io;

pub const REPORT_DIR: &str = "report";
const REPORT_MD: &str = "report/report.md";
const INDEX_SVG: &str = "report/index.svg";
const INFLUENCE_SVG: &str = "report/influence.svg";
const LEXICON_ROWS: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportOutput {
    pub markdown: PathBuf,
    pub charts: Vec<PathBuf>,
    /// Artifacts the manifest lists but that are gone, plus stages never run.
    pub missing: Vec<String>,
}

struct LexiconLine {
    word: String,
    rank_before: String,
    rank_after: String,
    score_before: f64,
    score_after: f64,
    movement: String,
}

fn read_lexicon(path: &Path) -> Result<Vec<LexiconLine>> {
    let text = io::read_text(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Data(format!("{}: malformed row", path.display())))
        };
        out.push(LexiconLine {
            word: rec.get(0).unwrap_or("").to_string(),
            rank_before: rec.get(1).unwrap_or("").to_string(),
            rank_after: rec.get(2).unwrap_or("").to_string(),
            score_before: num(3)?,
            score_after: num(4)?,
            movement: rec.get(5).unwrap_or("").to_string(),
        });
    }
    Ok(out)
}

/// Long-format influence CSV back into one series per word, in first-seen
/// order.
fn read_influence(path: &Path) -> Result<Vec<IndexSeries>> {
    let text = io::read_text(path)?;
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut order: Vec<String> = Vec::new();
    let mut points: BTreeMap<String, Vec<IndexPoint>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let period: Period = rec.get(0).unwrap_or("").parse()?;
        let word = rec.get(1).unwrap_or("").to_string();
        let raw = rec.get(2).unwrap_or("").trim();
        let value = if raw.is_empty() {
            None
        } else {
            Some(
                raw.parse::<f64>()
                    .map_err(|_| Error::Data(format!("{}: bad influence `{raw}`", path.display())))?,
            )
        };
        if !points.contains_key(&word) {
            order.push(word.clone());
        }
        points.entry(word).or_default().push(IndexPoint {
            period,
            value,
            n: usize::from(value.is_some()),
        });
    }
    Ok(order
        .into_iter()
        .map(|w| {
            let pts = points.remove(&w).unwrap_or_default();
            IndexSeries {
                bucketing: pts.first().map(|p| p.period.bucketing).unwrap_or_default(),
                id: w,
                points: pts,
            }
        })
        .collect())
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "n/a".to_string())
}

/// Writes `report/report.md` plus charts for the run in `out_dir` and adds
/// them to the manifest. Missing inputs are listed in the report instead of
/// aborting it. Output depends only on the manifest and the artifacts.
pub fn report(out_dir: &Path) -> Result<ReportOutput> {
    let mut manifest = RunManifest::load(out_dir)?;
    let have = |rel: &str| out_dir.join(rel).is_file();
    let mut missing = Vec::new();
    for name in stage_names() {
        match manifest.stage(name) {
            Some(s) => missing.extend(s.files.keys().filter(|f| !have(f)).cloned()),
            None => missing.push(format!("stage `{name}` was not run")),
        }
    }

    let mut md = String::new();
    writeln!(md, "# Business sentiment run report\n").ok();
    writeln!(md, "- config hash: `{}`", manifest.config_hash).ok();
    writeln!(md, "- seed: {}", manifest.seed).ok();
    writeln!(md, "- tool version: {}", manifest.tool_version).ok();
    for m in &manifest.models {
        writeln!(md, "- model {}: `{}` ({})", m.role, m.id, m.path).ok();
    }

    writeln!(md, "\n## Regression error on held-out survey statements\n").ok();
    writeln!(md, "| model | MSE | examples |\n|---|---|---|").ok();
    let mut evals = BTreeMap::new();
    for rel in [paths::EVAL_M, paths::EVAL_M_PRIME] {
        if have(rel) {
            evals.extend(read_eval(&out_dir.join(rel))?);
        }
    }
    for name in [EVAL_RIDGE, EVAL_GRU_M, EVAL_GRU_M_PRIME] {
        match evals.get(name) {
            Some(e) => writeln!(md, "| {name} | {:.4} | {} |", e.mse, e.n_examples).ok(),
            None => writeln!(md, "| {name} | n/a | n/a |").ok(),
        };
    }

    writeln!(md, "\n## Correlation with the survey diffusion index\n").ok();
    if have(paths::CORRELATIONS) {
        let rows: Vec<CorrelationRow> = io::read_json(&out_dir.join(paths::CORRELATIONS))?;
        writeln!(md, "| series | reference | r | periods |\n|---|---|---|---|").ok();
        for r in rows {
            writeln!(md, "| {} | {} | {} | {} |", r.series, r.reference, cell(r.r), r.n).ok();
        }
    } else {
        writeln!(md, "Not available.").ok();
    }

    writeln!(md, "\n## Word scores before and after adaptation\n").ok();
    if have(paths::LEXICON) {
        let rows = read_lexicon(&out_dir.join(paths::LEXICON))?;
        let k = LEXICON_ROWS.min(rows.len().div_ceil(2));
        let sections: [(&str, Vec<&LexiconLine>); 2] = [
            ("Highest scoring after adaptation", rows.iter().take(k).collect()),
            ("Lowest scoring after adaptation", rows.iter().rev().take(k).collect()),
        ];
        for (title, lines) in sections {
            writeln!(md, "### {title}\n").ok();
            writeln!(
                md,
                "| word | rank after | rank before | move | score after | score before |\n|---|---|---|---|---|---|"
            )
            .ok();
            for l in lines {
                writeln!(
                    md,
                    "| {} | {} | {} | {} | {:.4} | {:.4} |",
                    l.word, l.rank_after, l.rank_before, l.movement, l.score_after, l.score_before
                )
                .ok();
            }
            md.push('\n');
        }
    } else {
        writeln!(md, "Not available.\n").ok();
    }

    let mut charts = Vec::new();
    let mut series = Vec::new();
    for (rel, id) in [
        (paths::INDEX_M_ALL, SERIES_M_ALL),
        (paths::INDEX_M_FILTERED, SERIES_M_FILTERED),
        (paths::INDEX, SERIES_M_PRIME),
        (paths::DIFFUSION, SERIES_DI),
    ] {
        if have(rel) {
            series.push(IndexSeries::from_csv(id, &io::read_text(&out_dir.join(rel))?)?);
        }
    }
    writeln!(md, "## Charts\n").ok();
    if !series.is_empty() {
        let refs: Vec<&IndexSeries> = series.iter().collect();
        io::write_text(&out_dir.join(INDEX_SVG), &svg_chart("Sentiment and diffusion indices (standardized)", &refs))?;
        charts.push(INDEX_SVG);
        writeln!(md, "![indices](index.svg)\n").ok();
    }
    if have(paths::INFLUENCE) {
        let words = read_influence(&out_dir.join(paths::INFLUENCE))?;
        if !words.is_empty() {
            let refs: Vec<&IndexSeries> = words.iter().collect();
            io::write_text(&out_dir.join(INFLUENCE_SVG), &svg_chart("Word influence (standardized)", &refs))?;
            charts.push(INFLUENCE_SVG);
            writeln!(md, "![influence](influence.svg)\n").ok();
        }
    }
    if charts.is_empty() {
        writeln!(md, "None.\n").ok();
    }

    if !missing.is_empty() {
        writeln!(md, "## Missing artifacts\n").ok();
        for m in &missing {
            writeln!(md, "- {m}").ok();
        }
    }
    io::write_text(&out_dir.join(REPORT_MD), &md)?;

    manifest.reports = std::iter::once(REPORT_MD).chain(charts.iter().copied()).map(String::from).collect();
    manifest.save(out_dir)?;
    Ok(ReportOutput {
        markdown: out_dir.join(REPORT_MD),
        charts: charts.iter().map(|c| out_dir.join(c)).collect(),
        missing,
    })
}
