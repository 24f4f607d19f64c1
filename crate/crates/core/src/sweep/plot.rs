//! Median/IQR curves and a dependency-free SVG renderer.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{quantile, SweepResult, SweepRow};
use crate::estimate::Estimator;
use crate::model::{ModelKind, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub estimator: Estimator,
    /// Shape of the first contributing row.
    pub spec: ModelSpec,
    pub points: Vec<CurvePoint>,
}

/// Key identifying the curve a row belongs to. Dense baselines of
/// convolutional shapes share the input dimension, so they pool across
/// filter sizes and strides; recurrent baselines stay per hidden size.
fn curve_key(row: &SweepRow) -> (Estimator, ModelSpec) {
    let s = row.spec;
    match row.estimator {
        Estimator::Model => (Estimator::Model, s),
        Estimator::Fnn => match s.kind() {
            ModelKind::Rnn => (Estimator::Fnn, s),
            _ => (Estimator::Fnn, s.fnn_counterpart()),
        },
    }
}

fn label(est: Estimator, spec: &ModelSpec) -> String {
    match (est, spec.kind()) {
        (Estimator::Model, ModelKind::Ca | ModelKind::Cw) => {
            format!("{} m={} s={}", spec.kind().as_str().to_uppercase(), spec.m(), spec.s())
        }
        (Estimator::Model, ModelKind::Rnn) => format!("RNN r={}", spec.r()),
        (Estimator::Fnn, ModelKind::Rnn) => format!("FNN (RNN r={})", spec.r()),
        (_, _) if spec.seq_len() > 1 => format!("FNN d={} L={}", spec.d(), spec.seq_len()),
        (_, _) => format!("FNN d={}", spec.d()),
    }
}

/// Groups rows into curves in order of first appearance and summarizes each
/// sample size by median and interquartile range.
pub fn curves(result: &SweepResult) -> Vec<Curve> {
    let mut order: Vec<(Estimator, ModelSpec)> = Vec::new();
    let mut groups: BTreeMap<usize, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut first: Vec<ModelSpec> = Vec::new();
    for row in &result.rows {
        let key = curve_key(row);
        let idx = match order.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                order.push(key);
                first.push(row.spec);
                order.len() - 1
            }
        };
        groups.entry(idx).or_default().entry(row.n).or_default().push(row.pred_err);
    }
    // structured curves first, baselines after
    let mut idxs: Vec<usize> = (0..order.len()).collect();
    idxs.sort_by_key(|&i| (order[i].0 == Estimator::Fnn, i));
    idxs.into_iter()
        .map(|i| {
            let (est, key_spec) = order[i];
            let points = groups[&i]
                .iter()
                .map(|(&n, errs)| CurvePoint {
                    n,
                    median: quantile(errs, 0.5),
                    q25: quantile(errs, 0.25),
                    q75: quantile(errs, 0.75),
                    count: errs.len(),
                })
                .collect();
            Curve {
                label: label(est, &key_spec),
                estimator: est,
                spec: first[i],
                points,
            }
        })
        .collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

/// Log–log plot of median error against `n` with interquartile bands.
pub fn render_svg(curves: &[Curve], title: &str) -> String {
    let (w, h) = (720.0, 480.0);
    let (left, right, top, bottom) = (80.0, 190.0, 40.0, 60.0);
    let pts = curves.iter().flat_map(|c| c.points.iter());
    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::INFINITY, 0.0f64, f64::INFINITY, 0.0f64);
    for p in pts {
        xmin = xmin.min(p.n as f64);
        xmax = xmax.max(p.n as f64);
        for v in [p.q25, p.median, p.q75] {
            if v > 0.0 && v.is_finite() {
                ymin = ymin.min(v);
                ymax = ymax.max(v);
            }
        }
    }
    if !(xmin < xmax) {
        xmin = xmin.min(1.0);
        xmax = xmin * 2.0;
    }
    if !(ymin < ymax) {
        ymin = if ymin.is_finite() { ymin / 2.0 } else { 0.1 };
        ymax = ymin * 4.0;
    }
    let (lx0, lx1) = (xmin.log2(), xmax.log2());
    let (ly0, ly1) = (ymin.log10().floor(), ymax.log10().ceil());
    let px = |x: f64| left + (x.log2() - lx0) / (lx1 - lx0) * (w - left - right);
    let py = |y: f64| {
        let y = y.max(10f64.powf(ly0));
        h - bottom - (y.log10() - ly0) / (ly1 - ly0) * (h - top - bottom)
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        (left + w - right) / 2.0,
        escape(title)
    );
    // axes and grid
    let (x0, x1, y0, y1) = (left, w - right, h - bottom, top);
    let _ = writeln!(
        s,
        r#"<rect x="{x0}" y="{y1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    let mut e = lx0.ceil() as i32;
    while e as f64 <= lx1 {
        let x = px(2f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{x:.1}" y1="{y1}" x2="{x:.1}" y2="{y0}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">2^{e}</text>"##,
            y0 + 18.0
        );
        e += 1;
    }
    let mut e = ly0 as i32;
    while e as f64 <= ly1 {
        let y = py(10f64.powi(e));
        let _ = writeln!(
            s,
            r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">1e{e}</text>"##,
            x0 - 6.0,
            y + 4.0
        );
        e += 1;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">sample size n</text>"#,
        (x0 + x1) / 2.0,
        h - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(20,{:.1}) rotate(-90)" text-anchor="middle">prediction error</text>"#,
        (y0 + y1) / 2.0
    );

    for (k, c) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let dash = if c.estimator == Estimator::Fnn {
            r#" stroke-dasharray="6,4""#
        } else {
            ""
        };
        let mut band = String::new();
        for p in &c.points {
            let _ = write!(band, "{:.2},{:.2} ", px(p.n as f64), py(p.q75));
        }
        for p in c.points.iter().rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(p.n as f64), py(p.q25));
        }
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.18" stroke="none"/>"#,
            band.trim_end()
        );
        let line: Vec<String> = c
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.n as f64), py(p.median)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"{dash}/>"#,
            line.join(" ")
        );
        for p in &c.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(p.n as f64),
                py(p.median)
            );
        }
        let ly = top + 16.0 + 20.0 * k as f64;
        let lx = w - right + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.1}" y="{:.1}">{}</text>"#,
            lx + 24.0,
            lx + 30.0,
            ly + 4.0,
            escape(&c.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
