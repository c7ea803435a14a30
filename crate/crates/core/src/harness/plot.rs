//! Mean ± standard-error line charts rendered as standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{read_metrics, HarnessError, RunConfig, CONFIG_FILE, METRICS_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Figure {
    /// Evaluation success per room count against frames.
    MultiroomSuccess,
    /// Both KL proxies against frames.
    KlProxy,
    /// Final test loss against the swept axis.
    SupSweep,
}

impl std::str::FromStr for Figure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "multiroom-success" => Ok(Figure::MultiroomSuccess),
            "kl-proxy" => Ok(Figure::KlProxy),
            "sup-sweep" => Ok(Figure::SupSweep),
            _ => Err(format!("unknown figure `{s}` (expected multiroom-success, kl-proxy or sup-sweep)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
}

/// Aggregate of several runs on one x grid; `stderr` is 0 for a single run.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub label: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub runs: usize,
    pub resampled: bool,
}

fn interp(run: &[(f64, f64)], x: f64) -> f64 {
    match run.iter().position(|&(rx, _)| rx >= x) {
        Some(0) => run[0].1,
        Some(i) => {
            let ((x0, y0), (x1, y1)) = (run[i - 1], run[i]);
            if x1 == x0 {
                y1
            } else {
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        }
        None => run[run.len() - 1].1,
    }
}

/// Mean and standard error across runs. Runs whose x values differ are
/// linearly resampled onto the coarsest run's grid, clipped to the range
/// every run covers.
pub fn aggregate(label: &str, runs: &[Vec<(f64, f64)>]) -> Option<Curve> {
    let runs: Vec<&Vec<(f64, f64)>> = runs.iter().filter(|r| !r.is_empty()).collect();
    let first = runs.first()?;
    let same = runs.iter().all(|r| r.len() == first.len() && r.iter().zip(first.iter()).all(|(a, b)| a.0 == b.0));
    let x: Vec<f64> = if same {
        first.iter().map(|p| p.0).collect()
    } else {
        let lo = runs.iter().map(|r| r[0].0).fold(f64::NEG_INFINITY, f64::max);
        let hi = runs.iter().map(|r| r[r.len() - 1].0).fold(f64::INFINITY, f64::min);
        let coarsest = runs.iter().min_by_key(|r| r.len())?;
        log::warn!("{label}: x grids differ across {} runs; resampling to the coarsest ({} points)", runs.len(), coarsest.len());
        coarsest.iter().map(|p| p.0).filter(|&v| v >= lo && v <= hi).collect()
    };
    let n = runs.len() as f64;
    let (mut mean, mut stderr) = (Vec::with_capacity(x.len()), Vec::with_capacity(x.len()));
    for (i, &xi) in x.iter().enumerate() {
        let ys: Vec<f64> = runs.iter().map(|r| if same { r[i].1 } else { interp(r, xi) }).collect();
        let m = ys.iter().sum::<f64>() / n;
        let se = if runs.len() < 2 { 0.0 } else { (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt() };
        mean.push(m);
        stderr.push(se);
    }
    Some(Curve { label: label.to_string(), x, mean, stderr, runs: runs.len(), resampled: !same })
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];
const W: f64 = 760.0;
const H: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|&s| s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-3) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Deterministic SVG for fixed inputs.
pub fn render_svg(spec: &PlotSpec, curves: &[Curve]) -> String {
    let pts = || curves.iter().flat_map(|c| c.x.iter().zip(c.mean.iter().zip(&c.stderr)));
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (&x, (&m, &s)) in pts() {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(m - s);
        y1 = y1.max(m + s);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(&spec.title));
    for t in nice_ticks(x0, x1) {
        let _ = writeln!(s, r##"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}" stroke="#e5e5e5"/><text x="{0:.2}" y="{3:.2}" text-anchor="middle">{4}</text>"##, sx(t), TOP, TOP + ph, TOP + ph + 16.0, fmt_tick(t));
    }
    for t in nice_ticks(y0, y1) {
        let _ = writeln!(s, r##"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}" stroke="#e5e5e5"/><text x="{3:.2}" y="{4:.2}" text-anchor="end">{5}</text>"##, LEFT, sy(t), LEFT + pw, LEFT - 6.0, sy(t) + 4.0, fmt_tick(t));
    }
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 14.0, escape(&spec.x_label));
    let _ = writeln!(s, r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#, TOP + ph / 2.0, escape(&spec.y_label));
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let upper = c.x.iter().zip(c.mean.iter().zip(&c.stderr)).map(|(&x, (&m, &e))| format!("{:.2},{:.2}", sx(x), sy(m + e)));
        let lower = c.x.iter().zip(c.mean.iter().zip(&c.stderr)).rev().map(|(&x, (&m, &e))| format!("{:.2},{:.2}", sx(x), sy(m - e)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.join(" "));
        let line: Vec<String> = c.x.iter().zip(&c.mean).map(|(&x, &m)| format!("{:.2},{:.2}", sx(x), sy(m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#, line.join(" "));
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(s, r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="3"/><text x="{:.1}" y="{:.1}">{} (n={})</text>"#, lx + 18.0, lx + 24.0, ly + 4.0, escape(&c.label), c.runs);
    }
    s.push_str("</svg>\n");
    s
}

fn find_files(root: &Path, name: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = walkdir::WalkDir::new(root)
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.file_name() == name)
        .map(|e| e.into_path())
        .collect();
    out.sort();
    out
}

fn run_label(dir: &Path) -> Result<String, HarnessError> {
    let text = std::fs::read_to_string(dir.join(CONFIG_FILE))?;
    match serde_json::from_str::<RunConfig>(&text)? {
        RunConfig::RlMultiroom(c) => {
            let sni = c.train.sni();
            Ok(match c.train.arch {
                crate::netblocks::MultiroomArch::Baseline => "baseline".to_string(),
                a => format!("{} λ={}", a.name(), sni.lambda),
            })
        }
        RunConfig::SupSweep(_) => Ok("sweep".to_string()),
    }
}

/// `label → runs`, each run a sequence of `(x, y)` with nulls dropped.
type Series = BTreeMap<String, Vec<Vec<(f64, f64)>>>;

fn rl_series(input: &Path, metrics: &[String]) -> Result<Series, HarnessError> {
    let mut series = Series::new();
    for file in find_files(input, METRICS_FILE) {
        let dir = file.parent().unwrap_or(Path::new("."));
        let Ok(label) = run_label(dir) else {
            log::warn!("{}: no readable {CONFIG_FILE}; skipped", dir.display());
            continue;
        };
        let recs = read_metrics(&file)?;
        for m in metrics {
            let pts: Vec<(f64, f64)> = recs.iter().filter_map(|r| r.get(m).map(|y| (r.frames_or_epochs as f64, y))).collect();
            series.entry(format!("{label} {m}")).or_default().push(pts);
        }
    }
    Ok(series)
}

#[derive(Deserialize)]
struct CsvRow {
    arch: String,
    final_test_loss: f64,
}

fn sweep_series(input: &Path) -> Result<(Series, String), HarnessError> {
    let mut axis = String::from("axis value");
    // label → seed → points
    let mut by_seed: BTreeMap<String, BTreeMap<String, Vec<(f64, f64)>>> = BTreeMap::new();
    for (fi, file) in find_files(input, "sweep.csv").into_iter().enumerate() {
        let mut rdr = csv::Reader::from_path(&file)?;
        let headers = rdr.headers()?.clone();
        axis = headers.get(0).unwrap_or("axis value").to_string();
        for rec in rdr.records() {
            let rec = rec?;
            let x: f64 = rec.get(0).and_then(|v| v.parse().ok()).ok_or_else(|| HarnessError::Plot(format!("{}: bad axis value", file.display())))?;
            let seed = rec.get(2).unwrap_or("0").to_string();
            let row: CsvRow = rec.deserialize(Some(&headers))?;
            if row.final_test_loss.is_finite() {
                by_seed.entry(row.arch).or_default().entry(format!("{fi}:{seed}")).or_default().push((x, row.final_test_loss));
            }
        }
    }
    let series = by_seed.into_iter().map(|(k, runs)| (k, runs.into_values().collect())).collect();
    Ok((series, axis))
}

/// Collects the runs under `input` and renders the requested figure.
pub fn render_figure(figure: Figure, input: &Path) -> Result<String, HarnessError> {
    let (series, spec) = match figure {
        Figure::MultiroomSuccess => {
            let names: Vec<String> = (1..=3).map(|k| format!("success_rate_rooms{k}")).collect();
            let s = rl_series(input, &names)?;
            let s = s.into_iter().map(|(k, v)| (k.replace("success_rate_rooms", "rooms="), v)).collect();
            (s, PlotSpec { title: "Multiroom evaluation success".into(), x_label: "frames".into(), y_label: "success probability".into() })
        }
        Figure::KlProxy => {
            let s = rl_series(input, &["kl_proxy_det".to_string(), "kl_proxy_stoch".to_string()])?;
            (s, PlotSpec { title: "Approximate KL between rollout and updated policy".into(), x_label: "frames".into(), y_label: "KL proxy".into() })
        }
        Figure::SupSweep => {
            let (s, axis) = sweep_series(input)?;
            (s, PlotSpec { title: "Final test loss".into(), x_label: axis, y_label: "cross-entropy".into() })
        }
    };
    let curves: Vec<Curve> = series.iter().filter_map(|(label, runs)| aggregate(label, runs)).collect();
    if curves.is_empty() {
        return Err(HarnessError::Plot(format!("no plottable runs under {}", input.display())));
    }
    Ok(render_svg(&spec, &curves))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_identical_runs_have_zero_band() {
        let run = vec![(0.0, 1.0), (1.0, 3.0)];
        let c = aggregate("a", std::slice::from_ref(&run)).unwrap();
        assert_eq!(c.stderr, vec![0.0, 0.0]);
        let c = aggregate("a", &[run.clone(), run.clone()]).unwrap();
        assert_eq!(c.mean, vec![1.0, 3.0]);
        assert_eq!(c.stderr, vec![0.0, 0.0]);
    }

    #[test]
    fn three_known_values() {
        let c = aggregate("a", &[vec![(5.0, 1.0)], vec![(5.0, 2.0)], vec![(5.0, 3.0)]]).unwrap();
        assert_eq!(c.mean, vec![2.0]);
        assert!((c.stderr[0] - 1.0 / 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn mismatched_grids_resample_to_coarsest() {
        let fine: Vec<(f64, f64)> = (0..=10).map(|i| (i as f64, i as f64)).collect();
        let coarse = vec![(0.0, 0.0), (4.0, 8.0), (8.0, 16.0)];
        let c = aggregate("a", &[fine, coarse]).unwrap();
        assert!(c.resampled);
        assert_eq!(c.x, vec![0.0, 4.0, 8.0]);
        assert_eq!(c.mean, vec![0.0, 6.0, 12.0]);
    }

    #[test]
    fn svg_is_deterministic_and_well_formed() {
        let c = aggregate("x<y", &[vec![(0.0, 0.1), (1.0, 0.5)], vec![(0.0, 0.2), (1.0, 0.4)]]).unwrap();
        let spec = PlotSpec { title: "t".into(), x_label: "frames".into(), y_label: "y".into() };
        let a = render_svg(&spec, std::slice::from_ref(&c));
        assert_eq!(a, render_svg(&spec, &[c]));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert!(a.contains("x&lt;y") && a.contains("<polygon"));
    }
}
