//! Scatter plot of stored 2-D samples over contours of the prior density.
//! Reads the samples CSV text so the picture is a view of the stored data.

use std::fmt::Write as _;

use lmaps_core::metrics::DensityThreshold;
use lmaps_core::GaussianMixture;
use nalgebra::DVector;

use crate::error::HarnessError;

const SIZE: f64 = 640.0;
const GRID: usize = 160;
const PALETTE: [&str; 8] = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// Samples grouped by solver label, in order of first appearance.
pub fn parse_samples(csv: &str) -> Result<Vec<(String, Vec<(f64, f64)>)>, HarnessError> {
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let head: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |name: &str| head.iter().position(|h| *h == name);
    let (Some(cs), Some(cx), Some(cy)) = (col("solver"), col("x0"), col("x1")) else {
        return Err(HarnessError::Config("samples file lacks solver/x0/x1 columns".into()));
    };
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| -> Result<f64, HarnessError> {
            f.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| HarnessError::Config(format!("bad sample row {line:?}")))
        };
        let p = (num(cx)?, num(cy)?);
        match groups.iter_mut().find(|(l, _)| l == f[cs]) {
            Some((_, pts)) => pts.push(p),
            None => groups.push((f[cs].to_string(), vec![p])),
        }
    }
    Ok(groups)
}

struct Frame {
    lo: (f64, f64),
    span: f64,
}

impl Frame {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.lo.0) / self.span * SIZE, SIZE - (y - self.lo.1) / self.span * SIZE)
    }
}

pub fn scatter(prior: &GaussianMixture, threshold: &DensityThreshold, samples_csv: &str, hash: &str) -> Result<String, HarnessError> {
    if prior.dim() != 2 {
        return Err(HarnessError::Dimension(format!("scatter needs a 2-D prior, got {}", prior.dim())));
    }
    let groups = parse_samples(samples_csv)?;
    let spread = (0..prior.len())
        .map(|k| prior.covariance(k).symmetric_eigenvalues().max().sqrt())
        .fold(0.0, f64::max);
    let (mut lo, mut hi) = ((f64::INFINITY, f64::INFINITY), (f64::NEG_INFINITY, f64::NEG_INFINITY));
    for m in prior.means() {
        lo = (lo.0.min(m[0]), lo.1.min(m[1]));
        hi = (hi.0.max(m[0]), hi.1.max(m[1]));
    }
    let pad = 4.0 * spread;
    let span = (hi.0 - lo.0).max(hi.1 - lo.1) + 2.0 * pad;
    let centre = ((lo.0 + hi.0) / 2.0, (lo.1 + hi.1) / 2.0);
    let frame = Frame {
        lo: (centre.0 - span / 2.0, centre.1 - span / 2.0),
        span,
    };

    let step = span / GRID as f64;
    let field: Vec<Vec<f64>> = (0..=GRID)
        .map(|i| {
            (0..=GRID)
                .map(|j| {
                    let x = DVector::from_vec(vec![frame.lo.0 + i as f64 * step, frame.lo.1 + j as f64 * step]);
                    prior.log_density(&x).unwrap_or(f64::NEG_INFINITY)
                })
                .collect()
        })
        .collect();
    let peak = field.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);

    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{s}" height="{s}" viewBox="0 0 {s} {s}">"#,
        s = SIZE
    )
    .unwrap();
    writeln!(out, "<!-- config_hash={hash} -->").unwrap();
    writeln!(out, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    writeln!(out, r##"<g id="prior-contours" fill="none" stroke="#888888" stroke-width="1">"##).unwrap();
    for drop in [1.0, 3.0, 6.0] {
        let path = contour(&field, peak - drop, &frame, step);
        writeln!(out, r#"<path d="{path}"/>"#).unwrap();
    }
    let path = contour(&field, threshold.log_density, &frame, step);
    writeln!(out, r##"<path d="{path}" stroke="#000000" stroke-dasharray="4 3"/>"##).unwrap();
    out.push_str("</g>\n");

    for (n, (label, pts)) in groups.iter().enumerate() {
        writeln!(
            out,
            r#"<g id="solver-{label}" fill="{}" fill-opacity="0.45">"#,
            PALETTE[n % PALETTE.len()]
        )
        .unwrap();
        for &(x, y) in pts {
            let (px, py) = frame.px(x, y);
            writeln!(out, r#"<circle cx="{px:.2}" cy="{py:.2}" r="2"/>"#).unwrap();
        }
        out.push_str("</g>\n");
    }
    writeln!(out, r#"<g id="legend" font-family="sans-serif" font-size="13">"#).unwrap();
    for (n, (label, _)) in groups.iter().enumerate() {
        let y = 20.0 + 18.0 * n as f64;
        writeln!(
            out,
            r#"<circle cx="14" cy="{:.0}" r="5" fill="{}"/><text x="24" y="{:.0}">{label}</text>"#,
            y - 4.0,
            PALETTE[n % PALETTE.len()],
            y
        )
        .unwrap();
    }
    out.push_str("</g>\n</svg>\n");
    Ok(out)
}

/// Marching squares; returns an SVG path of disjoint segments.
fn contour(field: &[Vec<f64>], level: f64, frame: &Frame, step: f64) -> String {
    let mut path = String::new();
    let at = |i: usize, j: usize| (frame.lo.0 + i as f64 * step, frame.lo.1 + j as f64 * step);
    for i in 0..field.len() - 1 {
        for j in 0..field[i].len() - 1 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let mut hits = Vec::with_capacity(4);
            for e in 0..4 {
                let (a, b) = (corners[e], corners[(e + 1) % 4]);
                let (fa, fb) = (field[a.0][a.1] - level, field[b.0][b.1] - level);
                if (fa < 0.0) != (fb < 0.0) && fa.is_finite() && fb.is_finite() {
                    let t = fa / (fa - fb);
                    let (pa, pb) = (at(a.0, a.1), at(b.0, b.1));
                    hits.push(frame.px(pa.0 + t * (pb.0 - pa.0), pa.1 + t * (pb.1 - pa.1)));
                }
            }
            for pair in hits.chunks_exact(2) {
                write!(path, "M{:.1} {:.1}L{:.1} {:.1}", pair[0].0, pair[0].1, pair[1].0, pair[1].1).unwrap();
            }
        }
    }
    path
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_grouped_samples() {
        let csv = "# config_hash=x\nsolver,instance,sample,seed,x0,x1\na,0,0,1,0.5,1\nb,0,0,2,1,2\na,0,1,3,-1,0\n";
        let g = parse_samples(csv).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].1, vec![(0.5, 1.0), (-1.0, 0.0)]);
        assert!(parse_samples("solver,x0\n").is_err());
    }
}
