use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{pareto_front, ParetoPoint};

use super::config::Method;
use super::run::{load_record, RunRecord, SweepRow};

/// One row of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    #[serde(rename = "MPD_pix")]
    pub mpd: f64,
    #[serde(rename = "Vendi_pix")]
    pub vendi: f64,
    #[serde(rename = "Frechet_pix")]
    pub frechet: f64,
    #[serde(rename = "Q_proxy")]
    pub quality: f64,
    pub d_mpd_pct: f64,
    pub d_vendi_pct: f64,
    pub d_frechet_pct: f64,
    pub d_quality_pct: f64,
}

fn delta(x: f64, base: f64) -> f64 {
    if base == 0.0 {
        if x == 0.0 { 0.0 } else { f64::INFINITY.copysign(x) }
    } else {
        100.0 * (x - base) / base.abs()
    }
}

/// Summary rows relative to the baseline record (or the first one when no
/// baseline is present).
pub fn summarize(records: &[RunRecord]) -> Result<Vec<ReportRow>> {
    let base = records
        .iter()
        .find(|r| r.method == Method::Baseline)
        .or(records.first())
        .ok_or_else(|| Error::Range("report needs at least one run record".into()))?;
    let b = base.mean;
    Ok(records
        .iter()
        .map(|r| {
            let m = r.mean;
            ReportRow {
                method: r.method.name().into(),
                mpd: m.mpd,
                vendi: m.vendi,
                frechet: m.frechet,
                quality: m.quality,
                d_mpd_pct: delta(m.mpd, b.mpd),
                d_vendi_pct: delta(m.vendi, b.vendi),
                d_frechet_pct: delta(m.frechet, b.frechet),
                d_quality_pct: delta(m.quality, b.quality),
            }
        })
        .collect())
}

pub fn load_records(dirs: &[&Path]) -> Result<Vec<RunRecord>> {
    dirs.iter().map(|d| load_record(d)).collect()
}

pub fn markdown(rows: &[ReportRow]) -> String {
    let mut s = String::from(
        "| method | MPD_pix | Vendi_pix | Frechet_pix | Q_proxy | ΔMPD | ΔVendi | ΔFrechet | ΔQ |\n\
         |---|---|---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        writeln!(
            s,
            "| {} | {:.4} | {:.3} | {:.4} | {:.4} | {:+.1}% | {:+.1}% | {:+.1}% | {:+.1}% |",
            r.method, r.mpd, r.vendi, r.frechet, r.quality, r.d_mpd_pct, r.d_vendi_pct, r.d_frechet_pct, r.d_quality_pct
        )
        .unwrap();
    }
    s.push_str("\nPixel-space proxies; only comparisons between rows are meaningful.\n");
    s
}

pub fn report_csv(rows: &[ReportRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Invariant(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Invariant(format!("csv: {e}")))
}

fn color(method: &str) -> &'static str {
    match method {
        "baseline" => "#555555",
        "anneal" => "#d9822b",
        "scale_travel" => "#2b7bd9",
        _ => "#888888",
    }
}

/// Scatter of (Vendi_pix, Q_proxy) with each method's front and the global
/// front as polylines.
pub fn pareto_svg(rows: &[SweepRow], timestamp: bool) -> String {
    let (w, h, pad) = (640.0, 420.0, 50.0);
    let xs: Vec<f64> = rows.iter().map(|r| r.vendi).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.quality).collect();
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            let m = 0.05 * (hi - lo);
            (lo - m, hi + m)
        }
    };
    let ((x0, x1), (y0, y1)) = (range(&xs), range(&ys));
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    if timestamp {
        let secs = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        writeln!(s, "<!-- generated at unix time {secs} -->").unwrap();
    }
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad,
        h - pad
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">Vendi_pix ({x0:.2} to {x1:.2})</text>"#,
        w / 2.0,
        h - 12.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="14" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {})">Q_proxy ({y0:.3} to {y1:.3})</text>"#,
        h / 2.0,
        h / 2.0
    )
    .unwrap();
    let polyline = |s: &mut String, pts: &[ParetoPoint], stroke: &str, dash: &str| {
        let coords: Vec<String> = pts.iter().map(|p| format!("{:.2},{:.2}", px(p.diversity), py(p.quality))).collect();
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5" stroke-dasharray="{dash}"/>"#,
            coords.join(" ")
        )
        .unwrap();
    };
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    methods.dedup();
    for (i, m) in methods.iter().enumerate() {
        let mut pts: Vec<ParetoPoint> = rows
            .iter()
            .filter(|r| r.method == *m)
            .map(|r| ParetoPoint::new(r.config_digest.clone(), r.vendi, r.quality))
            .collect();
        let front = pareto_front(&mut pts);
        polyline(&mut s, &front, color(m), "none");
        writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{}">{m}</text>"#,
            w - pad - 90.0,
            pad + 16.0 * i as f64,
            color(m)
        )
        .unwrap();
    }
    let mut all: Vec<ParetoPoint> = rows
        .iter()
        .map(|r| ParetoPoint::new(r.config_digest.clone(), r.vendi, r.quality))
        .collect();
    let global = pareto_front(&mut all);
    polyline(&mut s, &global, "black", "4 3");
    for r in rows {
        writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
            px(r.vendi),
            py(r.quality),
            color(&r.method)
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsReport;
    use std::collections::BTreeMap;

    fn record(method: Method, vendi: f64, quality: f64) -> RunRecord {
        RunRecord {
            method,
            config_digest: "d".into(),
            samples: vec![],
            rows: vec![],
            mean: MetricsReport {
                mpd: 0.1 * vendi,
                vendi,
                frechet: 1.0,
                quality,
                n: 10,
            },
            wall_ns: BTreeMap::new(),
        }
    }

    #[test]
    fn baseline_alone_has_zero_deltas() {
        let rows = summarize(&[record(Method::Baseline, 1.1, -0.1)]).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!([r.d_mpd_pct, r.d_vendi_pct, r.d_frechet_pct, r.d_quality_pct], [0.0; 4]);
    }

    #[test]
    fn deltas_for_every_method() {
        let recs = [
            record(Method::Anneal, 2.2, -0.2),
            record(Method::Baseline, 1.1, -0.1),
            record(Method::ScaleTravel, 1.65, -0.12),
        ];
        let rows = summarize(&recs).unwrap();
        assert!((rows[0].d_vendi_pct - 100.0).abs() < 1e-9);
        assert!((rows[0].d_quality_pct + 100.0).abs() < 1e-9);
        assert!((rows[2].d_vendi_pct - 50.0).abs() < 1e-9);
        let md = markdown(&rows);
        assert!(md.contains("Vendi_pix") && md.contains("scale_travel") && md.contains("+100.0%"));
        let csv = String::from_utf8(report_csv(&rows).unwrap()).unwrap();
        assert!(csv.starts_with("method,MPD_pix,Vendi_pix,Frechet_pix,Q_proxy"));
        assert_eq!(csv.lines().count(), 4);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn malformed_record_names_the_file() {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("record.json"), b"{\"method\": ").unwrap();
        match load_records(&[d.path()]) {
            Err(e @ Error::Corrupt { .. }) => assert!(e.to_string().contains("record.json")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn svg_is_deterministic_without_timestamp() {
        let row = |m: &str, v: f64, q: f64, d: &str| SweepRow {
            method: m.into(),
            sigma: 1.0,
            k_max: 3,
            m: 2,
            omega: "2".into(),
            tau: 1.0,
            top_p: 1.0,
            mpd: 0.1,
            vendi: v,
            frechet: 0.0,
            quality: q,
            n: 10,
            config_digest: d.into(),
            method_front: true,
            global_front: true,
        };
        let rows = vec![row("baseline", 1.0, -0.05, "a"), row("scale_travel", 1.8, -0.07, "b")];
        let a = pareto_svg(&rows, false);
        assert_eq!(a, pareto_svg(&rows, false));
        assert!(a.starts_with("<svg") && a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<circle").count(), 2);
        assert!(pareto_svg(&rows, true).contains("generated at"));
    }
}
