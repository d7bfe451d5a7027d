//! Result bundles, CSV series files, SVG overlays and cross-run comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::{BucketStats, MetricSeries};
use crate::scenario::ScenarioConfig;
use crate::sim::{CellReport, RunOutput, RunSummary};

pub const CSV_HEADER: &str =
    "bucket_start_s,n_samples,mean_jitter_ms,mean_delay_ms,loss_frac,mean_mos,delay_band,jitter_band";

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("bucket width mismatch: {scenario} uses {found} s, expected {expected} s")]
    BucketMismatch {
        scenario: String,
        expected: f64,
        found: f64,
    },
    #[error("compare needs at least two bundles, got {0}")]
    TooFewBundles(usize),
    #[error("CSV line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

/// Everything needed to reproduce and inspect one `(config, seed)` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBundle {
    pub scenario: String,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub series: MetricSeries,
    pub summary: RunSummary,
    pub cells: Vec<CellReport>,
}

impl ResultBundle {
    pub fn from_output(out: &RunOutput) -> Self {
        ResultBundle {
            scenario: out.config.name.clone(),
            seed: out.config.seed,
            config: out.config.clone(),
            series: out.series.clone(),
            summary: out.summary.clone(),
            cells: out.cells.clone(),
        }
    }

    /// Base file name shared by the CSV and JSON outputs.
    pub fn stem(&self) -> String {
        format!("{}_seed{}", self.scenario, self.seed)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), ReportError> {
        create_dir(dir)?;
        let csv = dir.join(format!("{}.csv", self.stem()));
        let json = dir.join(format!("{}.json", self.stem()));
        write_file(&csv, &series_to_csv(&self.series))?;
        let mut text = serde_json::to_string_pretty(self).expect("bundle serializes");
        text.push('\n');
        write_file(&json, &text)?;
        Ok((csv, json))
    }

    pub fn load(path: &Path) -> Result<Self, ReportError> {
        let text = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ReportError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn create_dir(dir: &Path) -> Result<(), ReportError> {
    std::fs::create_dir_all(dir).map_err(|source| ReportError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> Result<(), ReportError> {
    std::fs::write(path, text).map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn series_to_csv(series: &MetricSeries) -> String {
    let mut out = String::with_capacity(64 * (series.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for b in &series.buckets {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            b.bucket_start_s,
            b.n_samples,
            b.mean_jitter_ms,
            b.mean_delay_ms,
            b.loss_frac,
            b.mean_mos,
            b.delay_band,
            b.jitter_band
        )
        .expect("writing to a String");
    }
    out
}

/// Parses a series CSV. The bucket width is not part of the file and must be
/// supplied by the caller.
pub fn series_from_csv(text: &str, bucket_width_s: f64) -> Result<MetricSeries, ReportError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(ReportError::Csv {
                line: 1,
                message: "missing or unexpected header".into(),
            })
        }
    }
    let mut buckets = Vec::new();
    for (i, line) in lines {
        let err = |message: String| ReportError::Csv {
            line: i + 1,
            message,
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(err(format!("expected 8 fields, found {}", f.len())));
        }
        let num = |k: usize| {
            f[k].parse::<f64>()
                .map_err(|e| err(format!("field {k}: {e}")))
        };
        buckets.push(BucketStats {
            bucket_start_s: num(0)?,
            n_samples: f[1].parse().map_err(|e| err(format!("field 1: {e}")))?,
            mean_jitter_ms: num(2)?,
            mean_delay_ms: num(3)?,
            loss_frac: num(4)?,
            mean_mos: num(5)?,
            delay_band: f[6].parse().map_err(err)?,
            jitter_band: f[7].parse().map_err(err)?,
        });
    }
    Ok(MetricSeries {
        bucket_width_s,
        buckets,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Jitter,
    Delay,
    Mos,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Jitter, Metric::Delay, Metric::Mos];

    pub fn key(self) -> &'static str {
        match self {
            Metric::Jitter => "jitter",
            Metric::Delay => "delay",
            Metric::Mos => "mos",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Metric::Jitter => "Average VoIP jitter (ms)",
            Metric::Delay => "Average end-to-end delay (ms)",
            Metric::Mos => "Average MOS",
        }
    }

    pub fn value(self, b: &BucketStats) -> f64 {
        match self {
            Metric::Jitter => b.mean_jitter_ms,
            Metric::Delay => b.mean_delay_ms,
            Metric::Mos => b.mean_mos,
        }
    }
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

/// Renders one metric of several runs as an overlaid line chart.
pub fn overlay_svg(metric: Metric, curves: &[(&str, &MetricSeries)]) -> String {
    const W: f64 = 720.0;
    const H: f64 = 400.0;
    const L: f64 = 70.0;
    const R: f64 = 180.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    let points = |s: &MetricSeries| -> Vec<(f64, f64)> {
        s.buckets
            .iter()
            .map(|b| (b.bucket_start_s, metric.value(b)))
            .collect()
    };
    let all: Vec<(f64, f64)> = curves.iter().flat_map(|(_, s)| points(s)).collect();
    let x_max = all.iter().map(|p| p.0).fold(0.0, f64::max).max(1.0);
    let mut y_max = all.iter().map(|p| p.1).fold(0.0, f64::max);
    if metric == Metric::Mos {
        y_max = y_max.max(5.0);
    }
    if y_max <= 0.0 {
        y_max = 1.0;
    }
    let px = |x: f64| L + x / x_max * (W - L - R);
    let py = |y: f64| H - B - y / y_max * (H - T - B);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{} (overlaid)</text>"#,
        (W - R + L) / 2.0,
        metric.title()
    )
    .unwrap();
    writeln!(
        svg,
        r#"<path d="M{L:.1},{T:.1} V{:.1} H{:.1}" stroke="black" fill="none"/>"#,
        H - B,
        W - R
    )
    .unwrap();
    for k in 0..=4 {
        let y = y_max * f64::from(k) / 4.0;
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.3}</text>"#,
            L - 6.0,
            py(y) + 4.0,
            y
        )
        .unwrap();
        let x = x_max * f64::from(k) / 4.0;
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{:.0}</text>"#,
            px(x),
            H - B + 16.0,
            x
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">simulation time (s)</text>"#,
        (W - R + L) / 2.0,
        H - 12.0
    )
    .unwrap();
    for (i, (name, series)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let d: Vec<String> = points(series)
            .iter()
            .enumerate()
            .map(|(k, &(x, y))| {
                format!(
                    "{}{:.1},{:.1}",
                    if k == 0 { "M" } else { "L" },
                    px(x),
                    py(y)
                )
            })
            .collect();
        if !d.is_empty() {
            writeln!(
                svg,
                r#"<path d="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#,
                d.join(" ")
            )
            .unwrap();
        }
        let ly = T + 16.0 + 18.0 * i as f64;
        writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
            W - R + 12.0,
            W - R + 32.0
        )
        .unwrap();
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            W - R + 38.0,
            ly + 4.0,
            xml_escape(name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Per-bucket record of which curve is lowest for each metric.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingRow {
    pub bucket_start_s: f64,
    /// Names of the lowest curve(s) per metric; several on a tie.
    pub lowest: BTreeMap<Metric, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderingTable {
    pub curves: Vec<String>,
    pub rows: Vec<OrderingRow>,
}

impl OrderingTable {
    /// Fraction of buckets, among those where at least two curves report
    /// the metric, in which `name` is lowest (ties included).
    pub fn lowest_share(&self, metric: Metric, name: &str) -> f64 {
        let rows: Vec<&Vec<String>> = self
            .rows
            .iter()
            .filter_map(|r| r.lowest.get(&metric))
            .collect();
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter()
            .filter(|names| names.iter().any(|n| n == name))
            .count() as f64
            / rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bucket_start_s,lowest_jitter,lowest_delay,lowest_mos\n");
        for r in &self.rows {
            let cell = |m: Metric| r.lowest.get(&m).map(|v| v.join("|")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{}",
                r.bucket_start_s,
                cell(Metric::Jitter),
                cell(Metric::Delay),
                cell(Metric::Mos)
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub svgs: Vec<(Metric, String)>,
    pub ordering: OrderingTable,
}

impl Comparison {
    /// Writes one SVG per metric plus `ordering.csv`. Returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
        create_dir(dir)?;
        let mut paths = Vec::new();
        for (metric, svg) in &self.svgs {
            let p = dir.join(format!("{}.svg", metric.key()));
            write_file(&p, svg)?;
            paths.push(p);
        }
        let p = dir.join("ordering.csv");
        write_file(&p, &self.ordering.to_csv())?;
        paths.push(p);
        Ok(paths)
    }
}

/// Curve label for a bundle: its scenario name, with the seed appended when
/// several bundles share a scenario.
fn labels(bundles: &[ResultBundle]) -> Vec<String> {
    bundles
        .iter()
        .map(|b| {
            let dup = bundles.iter().filter(|o| o.scenario == b.scenario).count() > 1;
            if dup {
                format!("{} (seed {})", b.scenario, b.seed)
            } else {
                b.scenario.clone()
            }
        })
        .collect()
}

pub fn compare(bundles: &[ResultBundle]) -> Result<Comparison, ReportError> {
    if bundles.len() < 2 {
        return Err(ReportError::TooFewBundles(bundles.len()));
    }
    let width = bundles[0].series.bucket_width_s;
    for b in &bundles[1..] {
        if b.series.bucket_width_s != width {
            return Err(ReportError::BucketMismatch {
                scenario: b.scenario.clone(),
                expected: width,
                found: b.series.bucket_width_s,
            });
        }
    }
    let names = labels(bundles);
    let curves: Vec<(&str, &MetricSeries)> = names
        .iter()
        .map(String::as_str)
        .zip(bundles.iter().map(|b| &b.series))
        .collect();
    let svgs = Metric::ALL
        .iter()
        .map(|&m| (m, overlay_svg(m, &curves)))
        .collect();

    // Bucket starts are exact multiples of the shared width, so integer keys
    // in microseconds line them up across runs.
    let mut by_bucket: BTreeMap<u64, Vec<(&str, &BucketStats)>> = BTreeMap::new();
    for (name, series) in &curves {
        for b in &series.buckets {
            let key = (b.bucket_start_s * 1e6).round() as u64;
            by_bucket.entry(key).or_default().push((name, b));
        }
    }
    let rows = by_bucket
        .into_iter()
        .map(|(key, entries)| {
            let mut lowest = BTreeMap::new();
            if entries.len() >= 2 {
                for m in Metric::ALL {
                    let min = entries
                        .iter()
                        .map(|(_, b)| m.value(b))
                        .fold(f64::INFINITY, f64::min);
                    let names = entries
                        .iter()
                        .filter(|(_, b)| m.value(b) == min)
                        .map(|(n, _)| n.to_string())
                        .collect();
                    lowest.insert(m, names);
                }
            }
            OrderingRow {
                bucket_start_s: key as f64 / 1e6,
                lowest,
            }
        })
        .collect();
    Ok(Comparison {
        svgs,
        ordering: OrderingTable {
            curves: names,
            rows,
        },
    })
}
