//! Plot files, their data tables and run manifests.

pub mod svg;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adlib::{DatasetStats, Mode};
use crate::analytics::{CoverageCorrelation, FitResult, SpendDistribution, SpendSkewPoint, TopSpendRow, UsageShares};
use crate::pages::TradeoffPoint;
use crate::skew::Histogram;
use svg::{Chart, PALETTE};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Everything the analyses produce, as consumed by the plot writer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBundle {
    /// Keyed by pair label, plus `PAGE` for page-based skews.
    pub skew_histograms: BTreeMap<String, Histogram>,
    pub coverage: Vec<CoverageCorrelation>,
    pub spend_cdfs: Vec<SpendDistribution>,
    pub spend_points: BTreeMap<Mode, Vec<SpendSkewPoint>>,
    pub fits: BTreeMap<Mode, FitResult>,
    pub fit_failures: BTreeMap<Mode, String>,
    pub tradeoff: Vec<TradeoffPoint>,
    pub usage: Option<UsageShares>,
    pub top_spend: Vec<TopSpendRow>,
    pub dataset_stats: Option<DatasetStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmitReport {
    pub written: Vec<PathBuf>,
    /// Plots that could not be drawn, with the reason.
    pub skipped: Vec<(String, String)>,
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

struct Emitter<'a> {
    dir: &'a Path,
    report: EmitReport,
}

impl Emitter<'_> {
    fn write(&mut self, stem: &str, svg: String, csv: Vec<u8>) -> io::Result<()> {
        for (ext, bytes) in [("svg", svg.into_bytes()), ("csv", csv)] {
            let path = self.dir.join(format!("{stem}.{ext}"));
            fs::write(&path, bytes)?;
            self.report.written.push(path);
        }
        Ok(())
    }

    fn skip(&mut self, stem: &str, why: &str) {
        log::warn!("plot {stem} skipped: {why}");
        self.report.skipped.push((stem.to_string(), why.to_string()));
    }
}

pub fn histogram_plot(label: &str, h: &Histogram) -> (String, Vec<u8>) {
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut chart = Chart::new(&format!("Skew distribution ({label})"), "skew", "interests", (-1.0, 1.0), (0.0, max));
    let heights: Vec<f64> = h.counts.iter().map(|&c| c as f64).collect();
    chart.bars(&h.edges, h.bin_width, &heights, PALETTE[0]);
    let rows = h
        .edges
        .iter()
        .zip(&h.counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&e, &c)| vec![format!("{e:.4}"), format!("{:.4}", e + h.bin_width), c.to_string()]);
    (chart.finish(), csv_bytes(&["bin_start", "bin_end", "count"], rows))
}

pub fn coverage_plot(c: &CoverageCorrelation) -> (String, Vec<u8>) {
    let (a, b) = c.pair.selectors();
    let hi = c.points.iter().flat_map(|p| [p.coverage_a, p.coverage_b]).fold(0.0f64, f64::max).max(1e-6) * 1.05;
    let r = c.r.map_or_else(|| "n/a".to_string(), |r| format!("{r:.2}"));
    let mut chart = Chart::new(
        &format!("Coverage {} vs {} (r = {r})", a.label(), b.label()),
        &format!("coverage in {}", a.label()),
        &format!("coverage in {}", b.label()),
        (0.0, hi),
        (0.0, hi),
    );
    chart.line(&[(0.0, 0.0), (hi, hi)], PALETTE[2], None);
    let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.coverage_a, p.coverage_b)).collect();
    chart.points(&pts, PALETTE[0], None);
    let rows = c.points.iter().map(|p| vec![p.interest_id.clone(), p.coverage_a.to_string(), p.coverage_b.to_string()]);
    (chart.finish(), csv_bytes(&["interest_id", "coverage_a", "coverage_b"], rows))
}

fn series_name(d: &SpendDistribution) -> String {
    match d.leaning {
        Some(l) => format!("{} / {}", d.group, l.as_str()),
        None => d.group.to_string(),
    }
}

pub fn spend_cdf_plot(mode: Mode, dists: &[&SpendDistribution]) -> (String, Vec<u8>) {
    let lo = dists.iter().filter_map(|d| d.sorted.first()).fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = dists.iter().filter_map(|d| d.sorted.last()).fold(0.0f64, |a, &b| a.max(b));
    let lo = if lo.is_finite() && lo > 0.0 { lo } else { 1.0 };
    let mut chart = Chart::new(&format!("Spend per interest ({mode})"), "spend", "CDF", (lo, hi.max(lo * 10.0)), (0.0, 1.0)).log_x();
    let mut rows = Vec::new();
    for (i, d) in dists.iter().enumerate() {
        let name = series_name(d);
        chart.cdf(&d.sorted, PALETTE[i % PALETTE.len()], Some(&name));
        let n = d.sorted.len() as f64;
        for (k, v) in d.sorted.iter().enumerate() {
            rows.push(vec![name.clone(), v.to_string(), ((k + 1) as f64 / n).to_string()]);
        }
    }
    (chart.finish(), csv_bytes(&["series", "spend", "cdf"], rows))
}

pub fn fit_plot(mode: Mode, points: &[SpendSkewPoint], fit: Option<&FitResult>) -> (String, Vec<u8>) {
    let title = match fit {
        Some(f) => format!("Spend skew vs audience skew ({mode}): a={:.2} b={:.2} R2={:.2}", f.intercept, f.coefficient, f.r_squared),
        None => format!("Spend skew vs audience skew ({mode})"),
    };
    let mut chart = Chart::new(&title, "audience skew (R-D)", "spend skew", (-1.0, 1.0), (-1.0, 1.0));
    let pts: Vec<(f64, f64)> = points.iter().map(|p| (p.audience_skew, p.spend_skew)).collect();
    chart.points(&pts, PALETTE[0], Some("interests"));
    if let Some(f) = fit {
        let curve: Vec<(f64, f64)> = (0..=200).map(|k| -1.0 + k as f64 * 0.01).map(|x| (x, f.predict(x))).collect();
        chart.line(&curve, PALETTE[1], Some("fit"));
    }
    let rows = points.iter().map(|p| {
        vec![
            p.interest_id.clone(),
            p.audience_skew.to_string(),
            p.spend_skew.to_string(),
            fit.map_or_else(String::new, |f| f.predict(p.audience_skew).to_string()),
        ]
    });
    (chart.finish(), csv_bytes(&["interest_id", "audience_skew", "spend_skew", "fitted"], rows))
}

pub fn tradeoff_plot(curve: &[TradeoffPoint]) -> (String, Vec<u8>) {
    let kmax = curve.iter().map(|p| p.k).max().unwrap_or(1).max(1) as f64;
    let mut chart = Chart::new("Pruning top domains", "domains dropped (k)", "value", (0.0, kmax), (-1.0, 1.0));
    let cov: Vec<(f64, f64)> = curve.iter().map(|p| (p.k as f64, p.coverage)).collect();
    let r: Vec<(f64, f64)> = curve.iter().filter_map(|p| Some((p.k as f64, p.r?))).collect();
    chart.line(&cov, PALETTE[0], Some("coverage"));
    chart.line(&r, PALETTE[1], Some("correlation r"));
    let rows = curve.iter().map(|p| {
        vec![p.k.to_string(), p.coverage.to_string(), p.r.map_or_else(String::new, |r| r.to_string()), p.joint.to_string()]
    });
    (chart.finish(), csv_bytes(&["k", "coverage", "r", "joint"], rows))
}

/// Writes every plot the bundle supports into `dir`, each SVG next to a CSV
/// of exactly the plotted values.
pub fn emit_plots(bundle: &AnalysisBundle, dir: &Path) -> io::Result<EmitReport> {
    fs::create_dir_all(dir)?;
    let mut e = Emitter { dir, report: EmitReport::default() };
    for pair in ["RD", "WB", "WH", "BH", "PAGE"] {
        let stem = format!("skew_hist_{}", pair.to_ascii_lowercase());
        match bundle.skew_histograms.get(pair) {
            Some(h) => {
                let (s, c) = histogram_plot(pair, h);
                e.write(&stem, s, c)?;
            }
            None => e.skip(&stem, "no histogram in bundle"),
        }
    }
    for c in &bundle.coverage {
        let (s, csv) = coverage_plot(c);
        e.write(&format!("coverage_{}", c.pair.as_str().to_ascii_lowercase()), s, csv)?;
    }
    if bundle.coverage.is_empty() {
        e.skip("coverage", "no coverage correlations in bundle");
    }
    for mode in Mode::ALL {
        let stem = format!("spend_cdf_{mode}");
        let dists: Vec<&SpendDistribution> = bundle.spend_cdfs.iter().filter(|d| d.mode == mode).collect();
        if dists.is_empty() {
            e.skip(&stem, "no spend distributions");
        } else {
            let (s, c) = spend_cdf_plot(mode, &dists);
            e.write(&stem, s, c)?;
        }
        let stem = format!("fit_{mode}");
        match bundle.spend_points.get(&mode) {
            Some(points) if !points.is_empty() => {
                let (s, c) = fit_plot(mode, points, bundle.fits.get(&mode));
                e.write(&stem, s, c)?;
            }
            _ => e.skip(&stem, "no spend-skew points"),
        }
    }
    if bundle.tradeoff.is_empty() {
        e.skip("pruning_tradeoff", "no page-skew tradeoff curve");
    } else {
        let (s, c) = tradeoff_plot(&bundle.tradeoff);
        e.write("pruning_tradeoff", s, c)?;
    }
    Ok(e.report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn hash_file(path: &Path, shown_as: String) -> io::Result<FileEntry> {
    let data = fs::read(path)?;
    Ok(FileEntry { path: shown_as, sha256: hex::encode(Sha256::digest(&data)), bytes: data.len() as u64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub toolkit_version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileEntry>,
    /// Paths relative to the output directory, sorted.
    pub outputs: Vec<FileEntry>,
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            walk(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

impl Manifest {
    /// Hashes the inputs and every file under `out_dir` except its own manifest.
    pub fn build(command: &str, config: serde_json::Value, inputs: &[PathBuf], out_dir: &Path) -> io::Result<Manifest> {
        let mut input_entries = Vec::new();
        for p in inputs {
            if p.is_dir() {
                let mut files = Vec::new();
                walk(p, &mut files)?;
                for f in files {
                    input_entries.push(hash_file(&f, f.display().to_string())?);
                }
            } else {
                input_entries.push(hash_file(p, p.display().to_string())?);
            }
        }
        let mut files = Vec::new();
        walk(out_dir, &mut files)?;
        let mut outputs = Vec::new();
        for f in files {
            if f == out_dir.join(MANIFEST_FILE) {
                continue;
            }
            let rel = f.strip_prefix(out_dir).unwrap_or(&f).to_string_lossy().replace('\\', "/");
            outputs.push(hash_file(&f, rel)?);
        }
        Ok(Manifest {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
            inputs: input_entries,
            outputs,
        })
    }

    pub fn write(&self, out_dir: &Path) -> io::Result<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        let mut text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytics::{scaled_sigmoid, CoveragePoint};
    use crate::demographics::Pair;

    #[test]
    fn empty_histogram_gives_axes_and_header_only() {
        let (svg, csv) = histogram_plot("RD", &Histogram::empty(0.1));
        assert!(!svg.contains(r#"stroke="white""#));
        assert_eq!(String::from_utf8(csv).unwrap(), "bin_start,bin_end,count\n");
    }

    #[test]
    fn identical_coverage_on_diagonal() {
        let c = CoverageCorrelation {
            pair: Pair::RD,
            r: Some(1.0),
            points: (1..5).map(|i| CoveragePoint { interest_id: i.to_string(), coverage_a: i as f64 / 10.0, coverage_b: i as f64 / 10.0 }).collect(),
        };
        let (svg, _) = coverage_plot(&c);
        for line in svg.lines().filter(|l| l.starts_with("<circle")) {
            let grab = |key: &str| -> f64 {
                let start = line.find(key).unwrap() + key.len();
                line[start..].split('"').next().unwrap().parse().unwrap()
            };
            let (cx, cy) = (grab("cx=\""), grab("cy=\""));
            // same data value on both axes maps to mirrored pixel offsets
            let fx = (cx - 70.0) / 550.0;
            let fy = (365.0 - cy) / 325.0;
            assert!((fx - fy).abs() < 0.01);
        }
    }

    #[test]
    fn fit_curve_passes_through_generating_points() {
        let points: Vec<SpendSkewPoint> = (0..21)
            .map(|i| {
                let x = -0.5 + i as f64 * 0.05;
                SpendSkewPoint {
                    interest_id: i.to_string(),
                    audience_skew: x,
                    spend_skew: scaled_sigmoid(-0.73 + 6.25 * x),
                    mode: Mode::Include,
                    spend_r: crate::adlib::Micros(1),
                    spend_d: crate::adlib::Micros(1),
                }
            })
            .collect();
        let fit = crate::analytics::fit_spend_vs_audience_skew(&points).unwrap();
        let (_, csv) = fit_plot(Mode::Include, &points, Some(&fit));
        let mut rdr = csv::Reader::from_reader(csv.as_slice());
        for row in rdr.records() {
            let row = row.unwrap();
            let (y, fitted): (f64, f64) = (row[2].parse().unwrap(), row[3].parse().unwrap());
            // 1.5 px stroke on a 162.5 px per unit axis
            assert!((y - fitted).abs() * 162.5 < 0.75);
        }
    }

    #[test]
    fn partial_bundle_lists_skips_and_manifest_covers_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut bundle = AnalysisBundle::default();
        bundle.skew_histograms.insert("RD".into(), Histogram::empty(0.1));
        let report = emit_plots(&bundle, dir.path()).unwrap();
        assert_eq!(report.written.len(), 2);
        assert!(report.skipped.iter().any(|(s, _)| s == "skew_hist_wb"));
        let m = Manifest::build("report", serde_json::json!({}), &[], dir.path()).unwrap();
        assert_eq!(m.outputs.len(), 2);
        m.write(dir.path()).unwrap();
        let again = Manifest::build("report", serde_json::json!({}), &[], dir.path()).unwrap();
        assert_eq!(again, m);
    }
}
