//! Versioned outputs: JSON reports, CSV tables and static SVG plots.
//!
//! Every artifact carries the schema version, the tool version, a SHA-256 of
//! the run configuration and the seed. CSV files put them in leading `#`
//! comment lines. Floats are written in shortest round-trip form, so equal
//! numbers give byte-equal files.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::eprstat::ConfidenceCurve;
use crate::gfit::GaussModel;
use crate::specorr::CrossCorrMap;
use crate::sqz::NrPoint;
use crate::TOOL_VERSION;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub schema: u32,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

impl Provenance {
    pub fn new(config_bytes: &[u8], seed: u64) -> Self {
        Self {
            schema: SCHEMA_VERSION,
            tool_version: TOOL_VERSION.to_string(),
            config_hash: sha256_hex(config_bytes),
            seed,
        }
    }

    fn csv_header(&self, kind: &str) -> String {
        format!(
            "# twinbeam {kind}\n# schema: {}\n# tool_version: {}\n# config_hash: {}\n# seed: {}\n",
            self.schema, self.tool_version, self.config_hash, self.seed
        )
    }
}

/// `{"schema": 1, "kind": ..., provenance..., payload fields...}`.
pub fn json_report<T: Serialize>(kind: &str, prov: &Provenance, payload: &T) -> Value {
    let mut obj = Map::new();
    obj.insert("schema".into(), json!(prov.schema));
    obj.insert("kind".into(), json!(kind));
    obj.insert("tool_version".into(), json!(prov.tool_version));
    obj.insert("config_hash".into(), json!(prov.config_hash));
    obj.insert("seed".into(), json!(prov.seed));
    match serde_json::to_value(payload).unwrap_or(Value::Null) {
        Value::Object(fields) => obj.extend(fields),
        other => {
            obj.insert("data".into(), other);
        }
    }
    Value::Object(obj)
}

pub fn write_json<W: Write>(mut w: W, value: &Value) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)
}

pub fn write_map_csv<W: Write>(mut w: W, prov: &Provenance, map: &CrossCorrMap) -> io::Result<()> {
    w.write_all(prov.csv_header("correlation-map").as_bytes())?;
    writeln!(w, "lag_x,lag_y,value")?;
    for (lx, ly, v) in map.rows() {
        writeln!(w, "{lx},{ly},{v}")?;
    }
    Ok(())
}

pub fn write_nr_csv<W: Write>(mut w: W, prov: &Provenance, points: &[NrPoint]) -> io::Result<()> {
    w.write_all(prov.csv_header("nr-curve").as_bytes())?;
    writeln!(w, "k,nr_mean,sem,corrected")?;
    for p in points {
        writeln!(
            w,
            "{},{},{},{}",
            p.bin_k, p.nr, p.sem, p.background_corrected
        )?;
    }
    Ok(())
}

pub fn write_confidence_csv<W: Write>(
    mut w: W,
    prov: &Provenance,
    curves: &[ConfidenceCurve],
) -> io::Result<()> {
    w.write_all(prov.csv_header("confidence-curve").as_bytes())?;
    writeln!(w, "axis,N,mean_C,sd_C,n_groups,n_failed")?;
    for c in curves {
        let axis = serde_json::to_value(c.axis).unwrap_or(Value::Null);
        let axis = axis.as_str().unwrap_or("?");
        for e in &c.entries {
            writeln!(
                w,
                "{axis},{},{},{},{},{}",
                e.n, e.mean_c, e.sd_c, e.n_groups, e.n_failed
            )?;
        }
    }
    Ok(())
}

/// Hand-rolled SVG line plot.
pub struct SvgPlot {
    title: String,
    x_label: String,
    y_label: String,
    log_x: bool,
    log_y: bool,
    series: Vec<Series>,
    hlines: Vec<(f64, String)>,
}

struct Series {
    label: String,
    points: Vec<(f64, f64, f64)>,
    markers: bool,
    dashed: bool,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 70.0;
const MR: f64 = 20.0;
const MT: f64 = 40.0;
const MB: f64 = 55.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn nice_ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![lo];
    }
    let raw = span / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= n as f64)
        .unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

/// Ticks for an axis in log10 units: 1-2-5 steps, or whole decades when
/// that would be crowded.
fn log_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for mults in [&[1.0, 2.0, 5.0][..], &[1.0][..]] {
        out.clear();
        for d in (lo.floor() as i32)..=(hi.ceil() as i32) {
            for m in mults {
                let t = (m * 10f64.powi(d)).log10();
                if t >= lo - 1e-9 && t <= hi + 1e-9 {
                    out.push(t);
                }
            }
        }
        if out.len() <= 8 {
            break;
        }
    }
    if out.len() < 2 {
        return nice_ticks(lo, hi, 5);
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl SvgPlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            log_x: false,
            log_y: false,
            series: Vec::new(),
            hlines: Vec::new(),
        }
    }

    pub fn log_x(mut self) -> Self {
        self.log_x = true;
        self
    }

    pub fn log_y(mut self) -> Self {
        self.log_y = true;
        self
    }

    /// Points `(x, y, error)`; error bars drawn when error > 0.
    pub fn series(mut self, label: &str, points: Vec<(f64, f64, f64)>, markers: bool) -> Self {
        self.series.push(Series {
            label: label.into(),
            points,
            markers,
            dashed: false,
        });
        self
    }

    pub fn dashed_series(mut self, label: &str, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series {
            label: label.into(),
            points: points.into_iter().map(|(x, y)| (x, y, 0.0)).collect(),
            markers: false,
            dashed: true,
        });
        self
    }

    pub fn hline(mut self, y: f64, label: &str) -> Self {
        self.hlines.push((y, label.into()));
        self
    }

    fn tx(&self, x: f64) -> f64 {
        if self.log_x {
            x.log10()
        } else {
            x
        }
    }

    fn ty(&self, y: f64) -> f64 {
        if self.log_y {
            y.log10()
        } else {
            y
        }
    }

    pub fn render(&self) -> String {
        let usable = |v: f64, log: bool| v.is_finite() && (!log || v > 0.0);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for s in &self.series {
            for &(x, y, e) in &s.points {
                if usable(x, self.log_x) && usable(y, self.log_y) {
                    xs.push(self.tx(x));
                    for v in [y - e, y + e] {
                        if usable(v, self.log_y) {
                            ys.push(self.ty(v));
                        }
                    }
                }
            }
        }
        for (y, _) in &self.hlines {
            if usable(*y, self.log_y) {
                ys.push(self.ty(*y));
            }
        }
        let range = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        let (x0, x1) = range(&xs);
        let (y0, y1) = range(&ys);
        let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
        let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
            W / 2.0,
            escape(&self.title)
        );
        // axes box and ticks
        let _ = writeln!(
            svg,
            r#"<rect x="{ML}" y="{MT}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - ML - MR,
            H - MT - MB
        );
        let fmt_tick = |v: f64, log: bool| {
            let v = if log { 10f64.powf(v) } else { v };
            if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
                format!("{v:.1e}")
            } else {
                format!("{}", (v * 1000.0).round() / 1000.0)
            }
        };
        let ticks = |lo, hi, log| {
            if log {
                log_ticks(lo, hi)
            } else {
                nice_ticks(lo, hi, 6)
            }
        };
        for t in ticks(x0, x1, self.log_x) {
            let x = px(t);
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
                H - MB,
                H - MB + 5.0,
                H - MB + 18.0,
                fmt_tick(t, self.log_x)
            );
        }
        for t in ticks(y0, y1, self.log_y) {
            let y = py(t);
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{y:.2}" x2="{ML}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                ML - 5.0,
                ML - 8.0,
                y + 4.0,
                fmt_tick(t, self.log_y)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (ML + W - MR) / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            (MT + H - MB) / 2.0,
            escape(&self.y_label)
        );
        for (y, label) in &self.hlines {
            if !usable(*y, self.log_y) {
                continue;
            }
            let yy = py(self.ty(*y));
            let _ = writeln!(
                svg,
                r##"<line x1="{ML}" y1="{yy:.2}" x2="{}" y2="{yy:.2}" stroke="#555" stroke-dasharray="6 4"/><text x="{}" y="{:.2}" text-anchor="end" fill="#555">{}</text>"##,
                W - MR,
                W - MR - 4.0,
                yy - 4.0,
                escape(label)
            );
        }
        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let pts: Vec<(f64, f64, f64)> = s
                .points
                .iter()
                .filter(|(x, y, _)| usable(*x, self.log_x) && usable(*y, self.log_y))
                .map(|&(x, y, e)| (x, y, e))
                .collect();
            let path: Vec<String> = pts
                .iter()
                .map(|&(x, y, _)| format!("{:.2},{:.2}", px(self.tx(x)), py(self.ty(y))))
                .collect();
            let dash = if s.dashed {
                r#" stroke-dasharray="4 3""#
            } else {
                ""
            };
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{}"/>"#,
                path.join(" ")
            );
            for &(x, y, e) in &pts {
                let (cx, cy) = (px(self.tx(x)), py(self.ty(y)));
                if e > 0.0 {
                    let lo = y - e;
                    let top = py(self.ty(y + e));
                    let bottom = if usable(lo, self.log_y) {
                        py(self.ty(lo))
                    } else {
                        H - MB
                    };
                    let _ = writeln!(
                        svg,
                        r#"<line x1="{cx:.2}" y1="{top:.2}" x2="{cx:.2}" y2="{bottom:.2}" stroke="{color}"/>"#
                    );
                }
                if s.markers {
                    let _ = writeln!(
                        svg,
                        r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="3" fill="{color}"/>"#
                    );
                }
            }
            let ly = MT + 16.0 + 16.0 * i as f64;
            let _ = writeln!(
                svg,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
                ML + 10.0,
                ML + 30.0,
                ML + 35.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// Noise ratio against super-pixel size, with the shot-noise level at 1.
pub fn nr_plot(title: &str, curves: &[(&str, &[NrPoint])]) -> String {
    let mut plot = SvgPlot::new(title, "super-pixel size k (pixels)", "noise ratio")
        .log_x()
        .hline(1.0, "shot-noise limit");
    for (label, pts) in curves {
        plot = plot.series(
            label,
            pts.iter().map(|p| (p.bin_k as f64, p.nr, p.sem)).collect(),
            true,
        );
    }
    plot.render()
}

/// Mean confidence level against group size, with the C = 5 threshold.
pub fn confidence_plot(curves: &[ConfidenceCurve]) -> String {
    let mut plot = SvgPlot::new("Confidence level", "images per group N", "C")
        .log_x()
        .log_y()
        .hline(5.0, "C = 5");
    for c in curves {
        let label = match c.axis {
            crate::eprstat::Axis::X => "x",
            crate::eprstat::Axis::Y => "y",
        };
        plot = plot.series(
            label,
            c.entries
                .iter()
                .map(|e| (e.n as f64, e.mean_c, e.sd_c))
                .collect(),
            true,
        );
        if c.fitted_a0.is_finite() {
            plot = plot.dashed_series(
                &format!("{label}: A0 sqrt(N)"),
                c.entries
                    .iter()
                    .map(|e| (e.n as f64, c.fitted_a0 * (e.n as f64).sqrt()))
                    .collect(),
            );
        }
    }
    plot.render()
}

/// Cuts of a correlation map through the fitted centre, with the fit overlaid.
pub fn profile_plot(title: &str, map: &CrossCorrMap, fit: &GaussModel) -> String {
    let (w, h) = map.values.dims();
    let iy = (fit.y0.round().max(0.0) as usize).min(h - 1);
    let ix = (fit.x0.round().max(0.0) as usize).min(w - 1);
    let lag_x = |x: usize| x as f64 + map.lag_origin.0 as f64;
    let lag_y = |y: usize| y as f64 + map.lag_origin.1 as f64;
    let row: Vec<(f64, f64, f64)> = (0..w)
        .map(|x| (lag_x(x), map.values.get(x, iy), 0.0))
        .collect();
    let col: Vec<(f64, f64, f64)> = (0..h)
        .map(|y| (lag_y(y), map.values.get(ix, y), 0.0))
        .collect();
    let fine = |n: usize, f: &dyn Fn(f64) -> (f64, f64)| -> Vec<(f64, f64)> {
        (0..=10 * (n - 1)).map(|i| f(i as f64 / 10.0)).collect()
    };
    let fit_row = fine(w, &|x| {
        (x + map.lag_origin.0 as f64, fit.eval(x, iy as f64))
    });
    let fit_col = fine(h, &|y| {
        (y + map.lag_origin.1 as f64, fit.eval(ix as f64, y))
    });
    SvgPlot::new(title, "lag (pixels)", "correlation")
        .series("x cut", row, true)
        .series("y cut", col, true)
        .dashed_series("fit, x", fit_row)
        .dashed_series("fit, y", fit_col)
        .render()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specorr::Normalization;
    use crate::stackio::Frame;

    fn prov() -> Provenance {
        Provenance::new(b"{}", 7)
    }

    #[test]
    fn hash_is_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn json_carries_provenance() {
        #[derive(Serialize)]
        struct P {
            value: f64,
        }
        let v = json_report("test", &prov(), &P { value: 0.5 });
        assert_eq!(v["schema"], 1);
        assert_eq!(v["seed"], 7);
        assert_eq!(v["value"], 0.5);
        assert_eq!(v["config_hash"].as_str().unwrap().len(), 64);
        assert_eq!(v["tool_version"], TOOL_VERSION);
    }

    #[test]
    fn csv_layout() {
        let pts = [NrPoint {
            bin_k: 4,
            nr: 0.25,
            sem: 0.01,
            background_corrected: false,
        }];
        let mut buf = Vec::new();
        write_nr_csv(&mut buf, &prov(), &pts).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("# schema: 1\n"));
        assert!(text.ends_with("k,nr_mean,sem,corrected\n4,0.25,0.01,false\n"));

        let map = CrossCorrMap {
            values: Frame::from_fn(3, 3, |x, y| (x + 3 * y) as f64),
            lag_origin: (-1, -1),
            normalization: Normalization::Covariance,
            n_acq_accumulated: 1,
        };
        let mut buf = Vec::new();
        write_map_csv(&mut buf, &prov(), &map).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], "lag_x,lag_y,value");
        assert_eq!(rows[1], "-1,-1,0");
        assert_eq!(rows[9], "1,1,8");
    }

    #[test]
    fn svg_is_well_formed() {
        let pts: Vec<NrPoint> = [1, 2, 4, 8]
            .iter()
            .map(|&k| NrPoint {
                bin_k: k,
                nr: 1.0 / k as f64,
                sem: 0.01,
                background_corrected: false,
            })
            .collect();
        let svg = nr_plot("NR", &[("twin <beams>", &pts)]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("shot-noise limit"));
        assert!(svg.contains("twin &lt;beams&gt;"));
        assert_eq!(svg.matches("<circle").count(), 4);
    }

    #[test]
    fn ticks() {
        assert_eq!(
            nice_ticks(0.0, 1.0, 5),
            vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]
        );
        assert_eq!(nice_ticks(3.0, 3.0, 5), vec![3.0]);
        let t: Vec<f64> = log_ticks(0.0, 32f64.log10())
            .iter()
            .map(|t| 10f64.powf(*t))
            .collect();
        assert_eq!(t.len(), 5);
        assert!((t[4] - 20.0).abs() < 1e-9);
    }
}
