//! Report rendering: turn the CSV artifacts of one or more runs into a
//! markdown summary plus SVG figures.
//!
//! A report covers either a single run directory or a directory whose
//! immediate children are runs of the same configuration family (for the
//! in-distribution vs held-out comparison figure). Artifacts carry the
//! config hash of the run that wrote them; any mismatch is rejected.

use crate::config::SplitSpec;
use crate::harness::{
    RunManifest, ABLATION_CSV, HISTOGRAM_CSV, MANIFEST_FILE, METRICS_CSV, SIGNIFICANCE_CSV,
};
use crate::metrics::METRIC_NAMES;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const REPORT_MD: &str = "report.md";
pub const HISTOGRAM_SVG: &str = "curiosity_hist.svg";
pub const BARS_SVG: &str = "comparison_bars.svg";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("run directory {dir} is missing artifacts: {missing}")]
    MissingArtifacts { dir: String, missing: String },
    #[error("artifact {artifact} carries config hash {found}, expected {expected}")]
    MixedConfigs { artifact: String, expected: String, found: String },
    #[error("runs under {dir} come from different configuration families: {details}")]
    MixedFamilies { dir: String, details: String },
    #[error("malformed artifact {artifact}: {message}")]
    Malformed { artifact: String, message: String },
    #[error("failed to access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn malformed(artifact: &Path, message: impl Into<String>) -> ReportError {
    ReportError::Malformed {
        artifact: artifact.display().to_string(),
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, ReportError> {
    std::fs::read_to_string(path)
        .map_err(|source| ReportError::Io { path: path.display().to_string(), source })
}

/// One "m ±s" cell parsed back into numbers (display kept verbatim).
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub display: String,
}

fn parse_mean_sd(cell: &str, artifact: &Path) -> Result<MeanSd, ReportError> {
    let (m, s) = cell
        .split_once(" \u{b1}")
        .ok_or_else(|| malformed(artifact, format!("expected \"m \u{b1}s\" cell, got {cell:?}")))?;
    let mean = m
        .parse::<f64>()
        .map_err(|_| malformed(artifact, format!("bad mean in cell {cell:?}")))?;
    let sd = s
        .parse::<f64>()
        .map_err(|_| malformed(artifact, format!("bad sd in cell {cell:?}")))?;
    Ok(MeanSd { mean, sd, display: cell.to_string() })
}

/// Aggregate row of `metrics.csv` for one method.
#[derive(Debug, Clone)]
pub struct MethodSummary {
    pub method: String,
    /// Keyed by metric name, in `METRIC_NAMES` order.
    pub metrics: Vec<(String, MeanSd)>,
    pub attr_acc: Option<MeanSd>,
    pub noise_attr_acc: Option<MeanSd>,
    pub flags: String,
}

#[derive(Debug, Clone)]
pub struct SignificanceRow {
    pub metric: String,
    pub icm_mean: f64,
    pub baseline_mean: f64,
    pub mean_delta: f64,
    pub t: String,
    pub df: String,
    pub p: String,
    pub significant: bool,
    pub flag: String,
}

#[derive(Debug, Clone)]
pub struct HistogramData {
    pub bins: Vec<(f64, f64, usize, usize)>,
    pub match_n: usize,
    pub mismatch_n: usize,
    pub match_mean_abs: f64,
    pub mismatch_mean_abs: f64,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub method: String,
    pub annotation: String,
    pub cells: Vec<String>,
}

/// Everything the renderer needs from one run directory.
#[derive(Debug, Clone)]
pub struct RunView {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub fold_rows: usize,
    pub summaries: Vec<MethodSummary>,
    pub significance: Vec<SignificanceRow>,
    pub histogram: Option<HistogramData>,
    pub ablation: Vec<AblationRow>,
    pub chance_attribution: Option<f64>,
}

fn check_hash(
    content: &str,
    artifact: &Path,
    expected: &str,
) -> Result<(), ReportError> {
    let found = content
        .lines()
        .find_map(|l| l.strip_prefix("# config_hash="))
        .unwrap_or("")
        .to_string();
    if found != expected {
        return Err(ReportError::MixedConfigs {
            artifact: artifact.display().to_string(),
            expected: expected.to_string(),
            found,
        });
    }
    Ok(())
}

fn data_lines(content: &str) -> impl Iterator<Item = &str> {
    content.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty())
}

fn parse_metrics_csv(
    path: &Path,
    expected_hash: &str,
) -> Result<(usize, Vec<MethodSummary>), ReportError> {
    let content = read(path)?;
    check_hash(&content, path, expected_hash)?;
    let mut fold_rows = 0usize;
    let mut summaries = Vec::new();
    for line in data_lines(&content).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 + METRIC_NAMES.len() + 3 {
            return Err(malformed(path, format!("row has {} fields: {line:?}", fields.len())));
        }
        if fields[0] == "all" {
            let metrics = METRIC_NAMES
                .iter()
                .enumerate()
                .map(|(i, &name)| {
                    Ok((name.to_string(), parse_mean_sd(fields[5 + i], path)?))
                })
                .collect::<Result<Vec<_>, ReportError>>()?;
            let attr_cell = fields[5 + METRIC_NAMES.len()];
            let noise_cell = fields[6 + METRIC_NAMES.len()];
            summaries.push(MethodSummary {
                method: fields[2].to_string(),
                metrics,
                attr_acc: (!attr_cell.is_empty())
                    .then(|| parse_mean_sd(attr_cell, path))
                    .transpose()?,
                noise_attr_acc: (!noise_cell.is_empty())
                    .then(|| parse_mean_sd(noise_cell, path))
                    .transpose()?,
                flags: fields[7 + METRIC_NAMES.len()].to_string(),
            });
        } else {
            fold_rows += 1;
        }
    }
    if summaries.is_empty() {
        return Err(malformed(path, "no aggregate rows"));
    }
    Ok((fold_rows, summaries))
}

fn parse_significance_csv(
    path: &Path,
    expected_hash: &str,
) -> Result<Vec<SignificanceRow>, ReportError> {
    let content = read(path)?;
    check_hash(&content, path, expected_hash)?;
    let mut rows = Vec::new();
    for line in data_lines(&content).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(malformed(path, format!("row has {} fields: {line:?}", fields.len())));
        }
        let num = |i: usize| -> Result<f64, ReportError> {
            fields[i]
                .parse::<f64>()
                .map_err(|_| malformed(path, format!("bad number {:?}", fields[i])))
        };
        rows.push(SignificanceRow {
            metric: fields[0].to_string(),
            icm_mean: num(1)?,
            baseline_mean: num(2)?,
            mean_delta: num(3)?,
            t: fields[4].to_string(),
            df: fields[5].to_string(),
            p: fields[6].to_string(),
            significant: fields[7] == "true",
            flag: fields[8].to_string(),
        });
    }
    Ok(rows)
}

fn parse_histogram_csv(path: &Path, expected_hash: &str) -> Result<HistogramData, ReportError> {
    let content = read(path)?;
    check_hash(&content, path, expected_hash)?;
    let comment = |key: &str| -> Option<&str> {
        content.lines().find_map(|l| {
            l.strip_prefix("# ")
                .and_then(|rest| rest.split_whitespace().find_map(|kv| kv.strip_prefix(key)))
        })
    };
    let parse_usize = |key: &str| -> Result<usize, ReportError> {
        comment(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed(path, format!("missing {key} header")))
    };
    let parse_f64 = |key: &str| -> Result<f64, ReportError> {
        comment(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed(path, format!("missing {key} header")))
    };
    let mut bins = Vec::new();
    for line in data_lines(&content).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(malformed(path, format!("bin row has {} fields", fields.len())));
        }
        let lo = fields[0].parse().map_err(|_| malformed(path, "bad bin edge"))?;
        let hi = fields[1].parse().map_err(|_| malformed(path, "bad bin edge"))?;
        let m = fields[2].parse().map_err(|_| malformed(path, "bad count"))?;
        let mm = fields[3].parse().map_err(|_| malformed(path, "bad count"))?;
        bins.push((lo, hi, m, mm));
    }
    Ok(HistogramData {
        bins,
        match_n: parse_usize("match_n=")?,
        mismatch_n: parse_usize("mismatch_n=")?,
        match_mean_abs: parse_f64("match_mean_abs=")?,
        mismatch_mean_abs: parse_f64("mismatch_mean_abs=")?,
    })
}

fn parse_ablation_csv(
    path: &Path,
    expected_hash: &str,
) -> Result<(Vec<AblationRow>, f64), ReportError> {
    let content = read(path)?;
    check_hash(&content, path, expected_hash)?;
    let chance = content
        .lines()
        .find_map(|l| l.strip_prefix("# chance_attribution="))
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| malformed(path, "missing chance_attribution header"))?;
    let mut rows = Vec::new();
    for line in data_lines(&content).skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 2 + METRIC_NAMES.len() + 2 {
            return Err(malformed(path, format!("row has {} fields: {line:?}", fields.len())));
        }
        rows.push(AblationRow {
            method: fields[0].to_string(),
            annotation: fields[1].to_string(),
            cells: fields[2..].iter().map(|s| s.to_string()).collect(),
        });
    }
    Ok((rows, chance))
}

/// Load one run directory. `metrics.csv` (comparison runs) or
/// `ablation.csv` (ablations) must be present alongside the manifest.
pub fn load_run(dir: &Path) -> Result<RunView, ReportError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.is_file() {
        return Err(ReportError::MissingArtifacts {
            dir: dir.display().to_string(),
            missing: MANIFEST_FILE.to_string(),
        });
    }
    let manifest = RunManifest::load(&manifest_path)
        .map_err(|e| malformed(&manifest_path, e.to_string()))?;
    let hash = manifest.config_hash.clone();

    let metrics_path = dir.join(METRICS_CSV);
    let ablation_path = dir.join(ABLATION_CSV);
    let mut view = RunView {
        dir: dir.to_path_buf(),
        manifest,
        fold_rows: 0,
        summaries: Vec::new(),
        significance: Vec::new(),
        histogram: None,
        ablation: Vec::new(),
        chance_attribution: None,
    };
    if ablation_path.is_file() {
        let (rows, chance) = parse_ablation_csv(&ablation_path, &hash)?;
        view.ablation = rows;
        view.chance_attribution = Some(chance);
    }
    if metrics_path.is_file() {
        let (fold_rows, summaries) = parse_metrics_csv(&metrics_path, &hash)?;
        view.fold_rows = fold_rows;
        view.summaries = summaries;
        let sig_path = dir.join(SIGNIFICANCE_CSV);
        if sig_path.is_file() {
            view.significance = parse_significance_csv(&sig_path, &hash)?;
        }
        let hist_path = dir.join(HISTOGRAM_CSV);
        if hist_path.is_file() {
            view.histogram = Some(parse_histogram_csv(&hist_path, &hash)?);
        }
    }
    if view.summaries.is_empty() && view.ablation.is_empty() {
        return Err(ReportError::MissingArtifacts {
            dir: dir.display().to_string(),
            missing: format!("{METRICS_CSV} or {ABLATION_CSV}"),
        });
    }
    Ok(view)
}

/// Gather the runs a report covers: the directory itself if it is a run,
/// otherwise its immediate child runs (same configuration family required).
pub fn gather_runs(dir: &Path) -> Result<Vec<RunView>, ReportError> {
    if dir.join(MANIFEST_FILE).is_file() {
        return Ok(vec![load_run(dir)?]);
    }
    let entries = std::fs::read_dir(dir)
        .map_err(|source| ReportError::Io { path: dir.display().to_string(), source })?;
    let mut children: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(MANIFEST_FILE).is_file())
        .collect();
    children.sort();
    if children.is_empty() {
        return Err(ReportError::MissingArtifacts {
            dir: dir.display().to_string(),
            missing: format!("{MANIFEST_FILE} (here or in a child run directory)"),
        });
    }
    let runs: Vec<RunView> =
        children.iter().map(|c| load_run(c)).collect::<Result<_, _>>()?;
    let family = &runs[0].manifest.family_hash;
    for r in &runs[1..] {
        if &r.manifest.family_hash != family {
            return Err(ReportError::MixedFamilies {
                dir: dir.display().to_string(),
                details: format!(
                    "{} has family {} but {} has {}",
                    runs[0].dir.display(),
                    family,
                    r.dir.display(),
                    r.manifest.family_hash
                ),
            });
        }
    }
    Ok(runs)
}

fn split_label(split: &SplitSpec) -> String {
    match split {
        SplitSpec::Kfold { k, seed } => format!("{k}-fold cross-validation (split seed {seed})"),
        SplitSpec::Ood { heldout } => format!("held-out dimension {heldout}"),
    }
}

fn panel_label(command: &str) -> &'static str {
    match command {
        "crossval" => "ID",
        "ood" => "OOD",
        _ => "run",
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

const SVG_W: f64 = 760.0;
const SVG_H: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 64.0;
const SERIES_COLORS: [(&str, &str); 2] = [("icm", "#4c78a8"), ("baseline", "#f58518")];

fn svg_open(title: &str, hash_note: &str) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<!-- config_hash={hash_note} -->\n<svg \
         xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" \
         viewBox=\"0 0 {SVG_W} {SVG_H}\" font-family=\"sans-serif\" font-size=\"12\">\n<title>{}\
         </title>\n",
        xml_escape(title)
    )
}

fn y_axis(out: &mut String, lo: f64, hi: f64, plot_w: f64, plot_h: f64, ticks: usize) {
    for i in 0..=ticks {
        let v = lo + (hi - lo) * i as f64 / ticks as f64;
        let y = MARGIN_T + plot_h - (v - lo) / (hi - lo) * plot_h;
        writeln!(
            out,
            "<line x1=\"{MARGIN_L}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" \
             stroke=\"#ddd\"/><text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.2}</text>",
            MARGIN_L + plot_w,
            MARGIN_L - 6.0,
            y + 4.0,
        )
        .unwrap();
    }
}

/// Grouped bar chart: one group per (panel, metric), one bar per method,
/// with ±SD whiskers.
pub fn grouped_bars_svg(
    groups: &[(String, Vec<(String, MeanSd)>)],
    hash_note: &str,
) -> String {
    let mut out = svg_open("method comparison", hash_note);
    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;

    let mut lo = 0.0f64;
    let mut hi = 0.0f64;
    for (_, bars) in groups {
        for (_, cell) in bars {
            lo = lo.min(cell.mean - cell.sd);
            hi = hi.max(cell.mean + cell.sd);
        }
    }
    let hi = (hi + 0.05).max(0.1);
    let lo = if lo < 0.0 { lo - 0.05 } else { 0.0 };
    let scale_y = |v: f64| MARGIN_T + plot_h - (v - lo) / (hi - lo) * plot_h;

    y_axis(&mut out, lo, hi, plot_w, plot_h, 5);
    let zero_y = scale_y(0.0);
    writeln!(
        out,
        "<line x1=\"{MARGIN_L}\" y1=\"{zero_y:.2}\" x2=\"{:.2}\" y2=\"{zero_y:.2}\" \
         stroke=\"#444\"/>",
        MARGIN_L + plot_w
    )
    .unwrap();

    let slot = plot_w / groups.len() as f64;
    for (g, (label, bars)) in groups.iter().enumerate() {
        let x0 = MARGIN_L + slot * g as f64;
        let bw = slot * 0.72 / bars.len() as f64;
        for (b, (series, cell)) in bars.iter().enumerate() {
            let color = SERIES_COLORS
                .iter()
                .find(|(name, _)| name == series)
                .map(|(_, c)| *c)
                .unwrap_or("#72b7b2");
            let x = x0 + slot * 0.14 + bw * b as f64;
            let top = scale_y(cell.mean.max(0.0));
            let bottom = scale_y(cell.mean.min(0.0));
            writeln!(
                out,
                "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
                 fill=\"{color}\"/>",
                bw * 0.9,
                (bottom - top).abs().max(0.5),
            )
            .unwrap();
            let cx = x + bw * 0.45;
            let w_lo = scale_y(cell.mean - cell.sd);
            let w_hi = scale_y(cell.mean + cell.sd);
            writeln!(
                out,
                "<line x1=\"{cx:.2}\" y1=\"{w_hi:.2}\" x2=\"{cx:.2}\" y2=\"{w_lo:.2}\" \
                 stroke=\"#222\"/><line x1=\"{:.2}\" y1=\"{w_hi:.2}\" x2=\"{:.2}\" \
                 y2=\"{w_hi:.2}\" stroke=\"#222\"/><line x1=\"{:.2}\" y1=\"{w_lo:.2}\" \
                 x2=\"{:.2}\" y2=\"{w_lo:.2}\" stroke=\"#222\"/>",
                cx - 4.0,
                cx + 4.0,
                cx - 4.0,
                cx + 4.0,
            )
            .unwrap();
        }
        writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            x0 + slot / 2.0,
            MARGIN_T + plot_h + 20.0,
            xml_escape(label)
        )
        .unwrap();
    }

    for (i, (name, color)) in SERIES_COLORS.iter().enumerate() {
        let x = MARGIN_L + plot_w - 180.0 + i as f64 * 96.0;
        writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"14\" width=\"12\" height=\"12\" fill=\"{color}\"/>\
             <text x=\"{:.2}\" y=\"24\">{name}</text>",
            x + 16.0
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// Histogram figure: per-bin match/mismatch counts side by side.
pub fn histogram_svg(h: &HistogramData, hash_note: &str) -> String {
    let mut out = svg_open("curiosity score separation", hash_note);
    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;
    let max_count = h
        .bins
        .iter()
        .map(|&(_, _, m, mm)| m.max(mm))
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let scale_y = |c: f64| MARGIN_T + plot_h - c / max_count * plot_h;

    y_axis(&mut out, 0.0, max_count, plot_w, plot_h, 5);
    let n = h.bins.len().max(1);
    let slot = plot_w / n as f64;
    for (i, &(lo, hi, m, mm)) in h.bins.iter().enumerate() {
        let x0 = MARGIN_L + slot * i as f64;
        let bw = slot * 0.4;
        for (j, (count, color)) in [(m, SERIES_COLORS[0].1), (mm, SERIES_COLORS[1].1)]
            .iter()
            .enumerate()
        {
            let top = scale_y(*count as f64);
            writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{top:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
                 fill=\"{color}\"/>",
                x0 + slot * 0.1 + bw * j as f64,
                bw * 0.95,
                MARGIN_T + plot_h - top,
            )
            .unwrap();
        }
        if i % 5 == 0 || i + 1 == n {
            writeln!(
                out,
                "<text x=\"{x0:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{lo:.2}</text>",
                MARGIN_T + plot_h + 20.0
            )
            .unwrap();
            let _ = hi;
        }
    }
    for (i, (name, color)) in
        [("match", SERIES_COLORS[0].1), ("mismatch", SERIES_COLORS[1].1)].iter().enumerate()
    {
        let x = MARGIN_L + plot_w - 190.0 + i as f64 * 96.0;
        writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"14\" width=\"12\" height=\"12\" fill=\"{color}\"/>\
             <text x=\"{:.2}\" y=\"24\">{name}</text>",
            x + 16.0
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn md_metrics_table(out: &mut String, summaries: &[MethodSummary]) {
    writeln!(out, "| method | {} | attr_acc | noise_attr_acc | flags |", METRIC_NAMES.join(" | "))
        .unwrap();
    let cols = METRIC_NAMES.len() + 4;
    writeln!(out, "|{}", "---|".repeat(cols)).unwrap();
    for s in summaries {
        let cells: Vec<&str> = s.metrics.iter().map(|(_, c)| c.display.as_str()).collect();
        writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            s.method,
            cells.join(" | "),
            s.attr_acc.as_ref().map(|c| c.display.as_str()).unwrap_or(""),
            s.noise_attr_acc.as_ref().map(|c| c.display.as_str()).unwrap_or(""),
            s.flags,
        )
        .unwrap();
    }
}

fn md_significance_table(out: &mut String, rows: &[SignificanceRow]) {
    writeln!(out, "| metric | icm | baseline | delta | t | df | p | significant | flag |")
        .unwrap();
    writeln!(out, "|{}", "---|".repeat(9)).unwrap();
    for r in rows {
        writeln!(
            out,
            "| {} | {:.3} | {:.3} | {:+.3} | {} | {} | {} | {} | {} |",
            r.metric,
            r.icm_mean,
            r.baseline_mean,
            r.mean_delta,
            r.t,
            r.df,
            r.p,
            if r.significant { "yes" } else { "no" },
            r.flag,
        )
        .unwrap();
    }
}

fn md_ablation_table(out: &mut String, view: &RunView) {
    writeln!(
        out,
        "| method | annotation | {} | attr_acc | noise_attr_acc |",
        METRIC_NAMES.join(" | ")
    )
    .unwrap();
    writeln!(out, "|{}", "---|".repeat(METRIC_NAMES.len() + 4)).unwrap();
    for r in &view.ablation {
        writeln!(out, "| {} | {} | {} |", r.method, r.annotation, r.cells.join(" | ")).unwrap();
    }
    if let Some(chance) = view.chance_attribution {
        writeln!(out, "\nUniform-guess attribution accuracy: {chance:.3}.").unwrap();
    }
}

/// Render `report.md` and the SVG figures for a run directory (or a parent
/// of sibling runs). Returns the paths written.
pub fn render_report(dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let runs = gather_runs(dir)?;
    let mut written = Vec::new();

    let hash_note = runs
        .iter()
        .map(|r| r.manifest.config_hash.as_str())
        .collect::<Vec<_>>()
        .join(",");

    let mut md = String::new();
    writeln!(md, "<!-- config_hash={hash_note} -->\n").unwrap();
    writeln!(md, "# Run report\n").unwrap();
    for r in &runs {
        writeln!(md, "## {} run (`{}`)\n", panel_label(&r.manifest.command), r.manifest.command)
            .unwrap();
        writeln!(md, "- config_hash: `{}`", r.manifest.config_hash).unwrap();
        writeln!(md, "- split: {}", split_label(&r.manifest.split)).unwrap();
        writeln!(
            md,
            "- seeds: {}",
            r.manifest.seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")
        )
        .unwrap();
        if !r.manifest.warnings.is_empty() {
            writeln!(md, "- warnings: {}", r.manifest.warnings.join("; ")).unwrap();
        }
        writeln!(md).unwrap();

        if !r.summaries.is_empty() {
            writeln!(md, "### Verdict metrics (mean \u{b1}SD over {} fold rows)\n", r.fold_rows)
                .unwrap();
            md_metrics_table(&mut md, &r.summaries);
            writeln!(md).unwrap();
        }
        if !r.significance.is_empty() {
            writeln!(md, "### Paired significance (curiosity judge vs baseline)\n").unwrap();
            md_significance_table(&mut md, &r.significance);
            writeln!(md).unwrap();
        }
        if !r.ablation.is_empty() {
            writeln!(md, "### Attribution ablation\n").unwrap();
            md_ablation_table(&mut md, r);
            writeln!(md).unwrap();
        }
        if let Some(h) = &r.histogram {
            writeln!(md, "### Curiosity separation\n").unwrap();
            writeln!(
                md,
                "- mean |score| when the pre-explanation prediction already matched: \
                 {:.4} (n={})",
                h.match_mean_abs, h.match_n
            )
            .unwrap();
            writeln!(
                md,
                "- mean |score| on pre-explanation mismatches: {:.4} (n={})",
                h.mismatch_mean_abs, h.mismatch_n
            )
            .unwrap();
            writeln!(md).unwrap();
        }
    }

    // Figures: histogram from the first run that has one; grouped bars over
    // every run with method summaries (one panel group per run x metric).
    if let Some((r, h)) = runs.iter().find_map(|r| r.histogram.as_ref().map(|h| (r, h))) {
        let svg = histogram_svg(h, &r.manifest.config_hash);
        let path = dir.join(HISTOGRAM_SVG);
        std::fs::write(&path, svg)
            .map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
        writeln!(md, "![curiosity histogram]({HISTOGRAM_SVG})\n").unwrap();
        written.push(path);
    }

    let mut groups: Vec<(String, Vec<(String, MeanSd)>)> = Vec::new();
    for r in &runs {
        if r.summaries.is_empty() {
            continue;
        }
        for metric in ["pearson", "f1"] {
            let bars: Vec<(String, MeanSd)> = r
                .summaries
                .iter()
                .map(|s| {
                    let cell = s
                        .metrics
                        .iter()
                        .find(|(name, _)| name == metric)
                        .expect("metric present")
                        .1
                        .clone();
                    (s.method.clone(), cell)
                })
                .collect();
            groups.push((format!("{} {}", panel_label(&r.manifest.command), metric), bars));
        }
    }
    if !groups.is_empty() {
        let svg = grouped_bars_svg(&groups, &hash_note);
        let path = dir.join(BARS_SVG);
        std::fs::write(&path, svg)
            .map_err(|source| ReportError::Io { path: path.display().to_string(), source })?;
        writeln!(md, "![method comparison]({BARS_SVG})\n").unwrap();
        written.push(path);
    }

    let md_path = dir.join(REPORT_MD);
    std::fs::write(&md_path, md)
        .map_err(|source| ReportError::Io { path: md_path.display().to_string(), source })?;
    written.insert(0, md_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use crate::data::{save_corpus, Dimension};
    use crate::encoder::EncoderConfig;
    use crate::harness::{run_ablation, run_crossval, run_ood, ArmSelect};
    use crate::synth::{default_profiles, generate_corpus, SyntheticSpec};

    const TWO_DIMS: [Dimension; 2] = [Dimension::OriginalityInThought, Dimension::OriginalityInForm];

    fn tiny_corpus_file(dir: &Path, n_stories: usize, seed: u64) -> PathBuf {
        let mut spec = SyntheticSpec::default();
        spec.n_stories = n_stories;
        spec.dimensions = TWO_DIMS.to_vec();
        spec.annotators = default_profiles()[..2].to_vec();
        spec.seed = seed;
        let generated = generate_corpus(&spec).expect("generate corpus");
        let path = dir.join("corpus.jsonl");
        save_corpus(&generated.corpus, &path, true).expect("save corpus");
        path
    }

    fn tiny_cfg(out_dir: PathBuf, corpus: PathBuf, k: usize) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.corpus = vec![corpus];
        cfg.output_dir = out_dir;
        cfg.seeds = vec![11];
        cfg.split = SplitSpec::Kfold { k, seed: 3 };
        cfg.encoder = EncoderConfig {
            feature_dim: 128,
            hidden_width: 8,
            repr_dim: 4,
            hidden_layers: 1,
            max_chars: 2048,
            expert_ids: vec![1, 2],
            adapters: None,
        };
        cfg.optimizer.base_lr = 5e-3;
        cfg.optimizer.batch_size = 8;
        cfg.optimizer.grad_accum_steps = 1;
        cfg.optimizer.epochs = 2;
        cfg.finish().expect("valid config")
    }

    #[test]
    fn empty_dir_is_missing_artifacts() {
        let tmp = tempfile::tempdir().unwrap();
        let err = render_report(tmp.path()).unwrap_err();
        assert!(matches!(err, ReportError::MissingArtifacts { .. }), "got {err}");
    }

    #[test]
    fn single_run_report_renders_markdown_and_figures() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus_file(tmp.path(), 5, 7);
        let run_dir = tmp.path().join("run");
        let cfg = tiny_cfg(run_dir.clone(), corpus, 5);
        let manifest = run_crossval(&cfg).expect("crossval");

        let written = render_report(&run_dir).expect("render");
        assert_eq!(written[0], run_dir.join(REPORT_MD));
        let md = std::fs::read_to_string(run_dir.join(REPORT_MD)).unwrap();
        assert!(md.contains(&format!("<!-- config_hash={} -->", manifest.config_hash)));
        assert!(md.contains("## ID run (`crossval`)"));
        assert!(md.contains("| method | pearson | spearman | kappa |"));
        assert!(md.contains("| icm |"));
        assert!(md.contains("| baseline |"));
        assert!(md.contains("### Paired significance"));
        assert!(md.contains("### Curiosity separation"));
        assert!(md.contains(&format!("![curiosity histogram]({HISTOGRAM_SVG})")));
        assert!(md.contains(&format!("![method comparison]({BARS_SVG})")));
        assert!(run_dir.join(HISTOGRAM_SVG).is_file());
        assert!(run_dir.join(BARS_SVG).is_file());
    }

    #[test]
    fn figures_parse_as_xml_and_embed_the_hash() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus_file(tmp.path(), 5, 9);
        let run_dir = tmp.path().join("run");
        let cfg = tiny_cfg(run_dir.clone(), corpus, 5);
        let manifest = run_crossval(&cfg).expect("crossval");
        render_report(&run_dir).expect("render");

        for name in [HISTOGRAM_SVG, BARS_SVG] {
            let svg = std::fs::read_to_string(run_dir.join(name)).unwrap();
            let doc = roxmltree::Document::parse(&svg)
                .unwrap_or_else(|e| panic!("{name} is not well-formed XML: {e}"));
            assert_eq!(doc.root_element().tag_name().name(), "svg");
            assert!(
                svg.contains(&format!("config_hash={}", manifest.config_hash)),
                "{name} must embed the config hash"
            );
        }
    }

    #[test]
    fn doctored_metrics_hash_is_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus_file(tmp.path(), 5, 13);
        let run_dir = tmp.path().join("run");
        let cfg = tiny_cfg(run_dir.clone(), corpus, 5);
        run_crossval(&cfg).expect("crossval");

        let metrics_path = run_dir.join(METRICS_CSV);
        let doctored = std::fs::read_to_string(&metrics_path)
            .unwrap()
            .lines()
            .map(|l| {
                if l.starts_with("# config_hash=") {
                    "# config_hash=0000".to_string()
                } else {
                    l.to_string()
                }
            })
            .collect::<Vec<_>>()
            .join("\n");
        std::fs::write(&metrics_path, doctored).unwrap();

        let err = render_report(&run_dir).unwrap_err();
        match err {
            ReportError::MixedConfigs { artifact, found, .. } => {
                assert!(artifact.ends_with(METRICS_CSV));
                assert_eq!(found, "0000");
            }
            other => panic!("expected MixedConfigs, got {other}"),
        }
    }

    #[test]
    fn sibling_id_ood_runs_group_into_panels() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus_file(tmp.path(), 5, 21);
        let parent = tmp.path().join("family");
        let cfg_id = tiny_cfg(parent.join("id"), corpus.clone(), 5);
        let cfg_ood = tiny_cfg(parent.join("ood"), corpus, 5);
        run_crossval(&cfg_id).expect("crossval");
        run_ood(&cfg_ood).expect("ood");

        render_report(&parent).expect("render family report");
        let md = std::fs::read_to_string(parent.join(REPORT_MD)).unwrap();
        assert!(md.contains("## ID run (`crossval`)"));
        assert!(md.contains("## OOD run (`ood`)"));
        let bars = std::fs::read_to_string(parent.join(BARS_SVG)).unwrap();
        for label in ["ID pearson", "ID f1", "OOD pearson", "OOD f1"] {
            assert!(bars.contains(label), "bars figure missing panel {label}");
        }
        roxmltree::Document::parse(&bars).expect("combined bars parse as XML");
    }

    #[test]
    fn different_family_siblings_are_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus_file(tmp.path(), 5, 23);
        let parent = tmp.path().join("family");
        let cfg_a = tiny_cfg(parent.join("a"), corpus.clone(), 5);
        let mut cfg_b = tiny_cfg(parent.join("b"), corpus, 5);
        cfg_b.icm.lambda = 0.5;
        run_crossval(&cfg_a).expect("crossval a");
        run_crossval(&cfg_b).expect("crossval b");

        let err = render_report(&parent).unwrap_err();
        assert!(matches!(err, ReportError::MixedFamilies { .. }), "got {err}");
    }

    #[test]
    fn ablation_run_report_renders_the_grid_table() {
        let tmp = tempfile::tempdir().unwrap();
        let corpus = tiny_corpus_file(tmp.path(), 5, 29);
        let run_dir = tmp.path().join("ablate");
        let cfg = tiny_cfg(run_dir.clone(), corpus, 5);
        run_ablation(&cfg, ArmSelect { no_inverse_only: true, with_noise_only: true })
            .expect("ablation");

        render_report(&run_dir).expect("render ablation report");
        let md = std::fs::read_to_string(run_dir.join(REPORT_MD)).unwrap();
        assert!(md.contains("### Attribution ablation"));
        assert!(md.contains("| without-inverse | with-noise |"));
        assert!(md.contains("Uniform-guess attribution accuracy: 0.333"));
    }
}
