//! Metric, mining and architecture reports as CSV, JSON and Markdown tables.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use deblur_core::metrics::{Label, MetricRecord, MetricReport};
use deblur_core::model::ArchReport;
use serde::Serialize;

use crate::error::{with_path, CliError, CliResult};

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_JSONL: &str = "report.jsonl";
pub const SUMMARY_MD: &str = "summary.md";
pub const SUMMARY_JSON: &str = "summary.json";
pub const MINE_JSON: &str = "mine.json";
pub const MINE_MD: &str = "mine.md";
pub const HARD_POSITIVE_TXT: &str = "hard_positive.txt";
pub const HARD_NEGATIVE_TXT: &str = "hard_negative.txt";
pub const ARCH_MD: &str = "arch.md";
pub const ARCH_JSON: &str = "arch.json";

/// Placeholder for the perceptual column this tool does not compute.
pub const LPIPS_NA: &str = "NA";

pub const CSV_HEADER: [&str; 7] = ["id", "psnr", "ssim", "mae", "lpips", "deltaE00", "label"];

/// Shortest round-tripping text; the identical-image sentinel prints as `inf`.
fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else {
        format!("{v}")
    }
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(with_path(path))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn json_psnr(v: f64) -> serde_json::Value {
    if v.is_finite() {
        v.into()
    } else {
        num(v).into()
    }
}

pub fn write_metric_report(report: &MetricReport, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(with_path(dir))?;
    let csv_path = dir.join(REPORT_CSV);
    let mut w = csv::Writer::from_path(&csv_path).map_err(csv_err(&csv_path))?;
    w.write_record(CSV_HEADER).map_err(csv_err(&csv_path))?;
    let mut jsonl = String::new();
    for r in &report.records {
        w.write_record([
            r.id.clone(),
            num(r.psnr),
            num(r.ssim),
            num(r.mae),
            LPIPS_NA.into(),
            num(r.delta_e),
            r.label.as_str().into(),
        ])
        .map_err(csv_err(&csv_path))?;
        let row = serde_json::json!({
            "id": r.id,
            "psnr": json_psnr(r.psnr),
            "ssim": r.ssim,
            "mae": r.mae,
            "lpips": LPIPS_NA,
            "deltaE00": r.delta_e,
            "label": r.label.as_str(),
        });
        writeln!(jsonl, "{row}").unwrap();
    }
    w.flush().map_err(|e| CliError::io(&csv_path, e))?;
    write(&dir.join(REPORT_JSONL), &jsonl)?;

    let a = &report.aggregates;
    let summary = serde_json::json!({
        "images": report.records.len(),
        "identical": a.identical,
        "psnr": a.psnr.map_or_else(|| json_psnr(f64::INFINITY), json_psnr),
        "ssim": a.ssim,
        "mae": a.mae,
        "lpips": LPIPS_NA,
        "deltaE00": a.delta_e,
    });
    write(&dir.join(SUMMARY_JSON), &format!("{summary:#}\n"))?;
    write(&dir.join(SUMMARY_MD), &summary_table(report))
}

/// The means in the column order PSNR, SSIM, MAE, LPIPS, DeltaE.
pub fn summary_table(report: &MetricReport) -> String {
    let a = &report.aggregates;
    let psnr = a.psnr.map_or_else(|| "inf".to_string(), |p| format!("{p:.3}"));
    let mut s = String::new();
    writeln!(s, "| Images | PSNR | SSIM | MAE | LPIPS | DeltaE |").unwrap();
    writeln!(s, "|---|---|---|---|---|---|").unwrap();
    writeln!(
        s,
        "| {} | {psnr} | {:.4} | {:.4} | {LPIPS_NA} | {:.4} |",
        report.records.len(),
        a.ssim,
        a.mae,
        a.delta_e
    )
    .unwrap();
    if a.identical > 0 {
        writeln!(s, "\n{} identical pair(s) excluded from the PSNR mean.", a.identical).unwrap();
    }
    s
}

/// Reads a `report.csv`. Only `id` and `psnr` are required; the other metric
/// columns are carried along when present.
pub fn read_metric_csv(path: &Path) -> CliResult<Vec<MetricRecord>> {
    if !path.is_file() {
        return Err(CliError::missing(path));
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = r.headers().map_err(csv_err(path))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (Some(id_col), Some(psnr_col)) = (col("id"), col("psnr")) else {
        return Err(CliError::Data(format!("{}: needs id and psnr columns", path.display())));
    };
    let optional = [col("ssim"), col("mae"), col("deltaE00")];
    let mut out = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row.map_err(csv_err(path))?;
        let field = |c: usize, name: &str| -> CliResult<f64> {
            let raw = row.get(c).unwrap_or("");
            raw.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| !v.is_nan())
                .ok_or_else(|| CliError::Data(format!("{}: row {}: bad {name} value {raw:?}", path.display(), line + 2)))
        };
        let psnr = field(psnr_col, "psnr")?;
        let [ssim, mae, delta_e] = [(optional[0], "ssim"), (optional[1], "mae"), (optional[2], "deltaE00")]
            .map(|(c, n)| c.map_or(Ok(f64::NAN), |c| field(c, n)));
        out.push(MetricRecord {
            id: row.get(id_col).unwrap_or("").to_string(),
            psnr,
            ssim: ssim?,
            mae: mae?,
            delta_e: delta_e?,
            label: Label::Neither,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MineCounts {
    pub hard_positive: usize,
    pub hard_negative: usize,
    pub neither: usize,
    pub total: usize,
}

impl MineCounts {
    pub fn of(report: &MetricReport) -> Self {
        MineCounts {
            hard_positive: report.hard_positive,
            hard_negative: report.hard_negative,
            neither: report.neither,
            total: report.records.len(),
        }
    }
}

pub fn write_mine(report: &MetricReport, dir: &Path) -> CliResult<MineCounts> {
    fs::create_dir_all(dir).map_err(with_path(dir))?;
    let counts = MineCounts::of(report);
    let json = serde_json::json!({
        "hard_positive": counts.hard_positive,
        "hard_negative": counts.hard_negative,
        "neither": counts.neither,
        "total": counts.total,
        "lo_db": report.lo,
        "hi_db": report.hi,
        "hard_positive_ids": report.ids_with(Label::HardPositive).collect::<Vec<_>>(),
        "hard_negative_ids": report.ids_with(Label::HardNegative).collect::<Vec<_>>(),
    });
    write(&dir.join(MINE_JSON), &format!("{json:#}\n"))?;
    let md = format!(
        "| Hard positives (> {hi} dB) | Hard negatives (< {lo} dB) | Total |\n|---|---|---|\n| {} | {} | {} |\n",
        counts.hard_positive,
        counts.hard_negative,
        counts.total,
        hi = report.hi,
        lo = report.lo,
    );
    write(&dir.join(MINE_MD), &md)?;
    for (file, label) in [(HARD_POSITIVE_TXT, Label::HardPositive), (HARD_NEGATIVE_TXT, Label::HardNegative)] {
        let ids: String = report.ids_with(label).map(|id| format!("{id}\n")).collect();
        write(&dir.join(file), &ids)?;
    }
    Ok(counts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchSide {
    pub name: String,
    pub params: usize,
    pub blocks: usize,
    pub fp32_bytes: usize,
    /// `(stage, blocks, channels, heads)`.
    pub stages: Vec<(String, usize, usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArchComparison {
    pub a: ArchSide,
    pub b: ArchSide,
    pub param_delta_pct: f64,
    pub block_delta_pct: f64,
    pub size_delta_pct: f64,
    pub fp32_size_ratio: f64,
}

fn pct(a: usize, b: usize) -> f64 {
    if a == 0 {
        0.0
    } else {
        (b as f64 - a as f64) / a as f64 * 100.0
    }
}

fn side(name: &str, r: &ArchReport) -> ArchSide {
    ArchSide {
        name: name.into(),
        params: r.total_params,
        blocks: r.total_blocks,
        fp32_bytes: r.checkpoint_bytes,
        stages: r
            .stages
            .iter()
            .map(|s| (s.name.to_string(), s.blocks, s.channels, s.heads))
            .collect(),
    }
}

pub fn compare(name_a: &str, a: &ArchReport, name_b: &str, b: &ArchReport) -> ArchComparison {
    let (sa, sb) = (side(name_a, a), side(name_b, b));
    ArchComparison {
        param_delta_pct: pct(sa.params, sb.params),
        block_delta_pct: pct(sa.blocks, sb.blocks),
        size_delta_pct: pct(sa.fp32_bytes, sb.fp32_bytes),
        fp32_size_ratio: sb.fp32_bytes as f64 / sa.fp32_bytes as f64,
        a: sa,
        b: sb,
    }
}

const MB: f64 = 1_000_000.0;

pub fn arch_table(c: &ArchComparison) -> String {
    let mut s = String::new();
    let (a, b) = (&c.a, &c.b);
    writeln!(s, "| | {} | {} | Δ |", a.name, b.name).unwrap();
    writeln!(s, "|---|---|---|---|").unwrap();
    writeln!(s, "| Parameters | {} | {} | {:+.2}% |", a.params, b.params, c.param_delta_pct).unwrap();
    writeln!(s, "| Blocks | {} | {} | {:+.2}% |", a.blocks, b.blocks, c.block_delta_pct).unwrap();
    writeln!(
        s,
        "| fp32 size (MB) | {:.2} | {:.2} | {:+.2}% |",
        a.fp32_bytes as f64 / MB,
        b.fp32_bytes as f64 / MB,
        c.size_delta_pct
    )
    .unwrap();
    writeln!(s, "\n| Stage | Blocks | Heads | Channels |").unwrap();
    writeln!(s, "|---|---|---|---|").unwrap();
    for (x, y) in a.stages.iter().zip(&b.stages) {
        writeln!(s, "| {} | {} → {} | {} → {} | {} → {} |", x.0, x.1, y.1, x.3, y.3, x.2, y.2).unwrap();
    }
    s
}

pub fn write_arch(c: &ArchComparison, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(with_path(dir))?;
    write(&dir.join(ARCH_MD), &arch_table(c))?;
    let json = serde_json::to_string_pretty(c).expect("serializable");
    write(&dir.join(ARCH_JSON), &(json + "\n"))
}
