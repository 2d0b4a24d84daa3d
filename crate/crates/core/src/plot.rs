//! Self-contained SVG rendering for trajectories and 2-D projections of
//! the invariant ellipsoid.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::reachability::UnsafeSet;

const WIDTH: f64 = 820.0;
const HEIGHT: f64 = 460.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Series {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            x,
            y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Horizontal reference lines with labels.
    pub hlines: Vec<(f64, String)>,
}

/// Axis range with a guard against zero span.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn from_values(values: impl Iterator<Item = f64>, axis: &str) -> Option<Range> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            return None;
        }
        let span = hi - lo;
        if span <= 1e-12 * lo.abs().max(hi.abs()).max(1e-300) || span == 0.0 {
            log::warn!("{axis} axis has zero variance; auto-ranging around {lo}");
            let half = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
            return Some(Range {
                lo: lo - half,
                hi: hi + half,
            });
        }
        let pad = 0.05 * span;
        Some(Range {
            lo: lo - pad,
            hi: hi + pad,
        })
    }

    fn ticks(&self) -> Vec<f64> {
        let span = self.hi - self.lo;
        let raw = span / 6.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|f| f * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let first = (self.lo / step).ceil() as i64;
        let last = (self.hi / step).floor() as i64;
        (first..=last).map(|i| i as f64 * step).collect()
    }
}

struct Frame {
    x: Range,
    y: Range,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.lo) / (self.x.hi - self.x.lo) * (WIDTH - LEFT - RIGHT)
    }
    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.lo) / (self.y.hi - self.y.lo) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        let _ = writeln!(
            out,
            r##"<rect x="{x0}" y="{y1}" width="{}" height="{}" fill="none" stroke="#333"/>"##,
            x1 - x0,
            y0 - y1
        );
        for t in self.x.ticks() {
            let p = self.px(t);
            let _ = writeln!(
                out,
                r##"<line x1="{p:.2}" y1="{y0}" x2="{p:.2}" y2="{y1}" stroke="#ddd"/><text x="{p:.2}" y="{}" font-size="11" text-anchor="middle">{}</text>"##,
                y0 + 16.0,
                fmt_tick(t)
            );
        }
        for t in self.y.ticks() {
            let p = self.py(t);
            let _ = writeln!(
                out,
                r##"<line x1="{x0}" y1="{p:.2}" x2="{x1}" y2="{p:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" font-size="11" text-anchor="end">{}</text>"##,
                x0 - 6.0,
                p + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="24" font-size="15" text-anchor="middle">{}</text>"##,
            (x0 + x1) / 2.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{}" font-size="12" text-anchor="middle">{}</text>"##,
            (x0 + x1) / 2.0,
            HEIGHT - 18.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r##"<text x="18" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"##,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        );
    }

    fn polyline(&self, out: &mut String, pts: impl Iterator<Item = (f64, f64)>, style: &str) {
        let mut d = String::new();
        for (x, y) in pts {
            let _ = write!(d, "{:.2},{:.2} ", self.px(x), self.py(y));
        }
        let _ = writeln!(out, r#"<polyline points="{}" {style}/>"#, d.trim_end());
    }
}

fn legend(out: &mut String, entries: &[(String, &str)]) {
    for (k, (label, color)) in entries.iter().enumerate() {
        let y = TOP + 14.0 + 18.0 * k as f64;
        let x = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.1}" width="12" height="12" fill="{color}"/><text x="{}" y="{:.1}" font-size="11">{}</text>"#,
            y - 10.0,
            x + 18.0,
            y,
            escape(label)
        );
    }
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn header() -> String {
    format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">
<rect width="100%" height="100%" fill="white"/>
"#
    )
}

impl LinePlot {
    pub fn to_svg(&self) -> Result<String> {
        if self.series.iter().all(|s| s.x.is_empty()) {
            return Err(Error::param("plot", "no data to draw"));
        }
        if let Some(s) = self.series.iter().find(|s| s.x.len() != s.y.len()) {
            return Err(Error::param(
                "plot",
                format!("series `{}` has mismatched lengths", s.label),
            ));
        }
        let x = Range::from_values(self.series.iter().flat_map(|s| s.x.iter().copied()), "x")
            .expect("nonempty");
        let y = Range::from_values(
            self.series
                .iter()
                .flat_map(|s| s.y.iter().copied())
                .chain(self.hlines.iter().map(|h| h.0)),
            "y",
        )
        .expect("nonempty");
        let frame = Frame { x, y };
        let mut out = header();
        frame.axes(&mut out, &self.title, &self.x_label, &self.y_label);
        for (v, label) in &self.hlines {
            let p = frame.py(*v);
            let _ = writeln!(
                out,
                r##"<line x1="{LEFT}" y1="{p:.2}" x2="{}" y2="{p:.2}" stroke="#d62728" stroke-dasharray="6 4"/><text x="{}" y="{:.2}" font-size="10" fill="#d62728">{}</text>"##,
                WIDTH - RIGHT,
                LEFT + 4.0,
                p - 3.0,
                escape(label)
            );
        }
        let mut entries = Vec::new();
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            frame.polyline(
                &mut out,
                s.x.iter().copied().zip(s.y.iter().copied()),
                &format!(r#"fill="none" stroke="{color}" stroke-width="1.5""#),
            );
            entries.push((s.label.clone(), color));
        }
        legend(&mut out, &entries);
        out.push_str("</svg>\n");
        Ok(out)
    }
}

/// Shadow of `{x : xᵀW⁻¹x ≤ 1}` on coordinates `(i, j)`: the ellipse with
/// shape matrix `W[{i,j},{i,j}]`.
pub fn project_ellipse(w: &DMatrix<f64>, i: usize, j: usize) -> Result<Matrix2<f64>> {
    let n = w.nrows();
    if i >= n || j >= n || i == j {
        return Err(Error::param(
            "projection",
            format!("need two distinct axes below {n}, got ({i}, {j})"),
        ));
    }
    Ok(Matrix2::new(w[(i, i)], w[(i, j)], w[(j, i)], w[(j, j)]))
}

/// Boundary points `V √Λ (cos θ, sin θ)` of a 2-D ellipse shape matrix.
pub fn ellipse_boundary(shape: &Matrix2<f64>, samples: usize) -> Vec<[f64; 2]> {
    let sym = (shape + shape.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = Vector2::new(
        eig.eigenvalues[0].max(0.0).sqrt(),
        eig.eigenvalues[1].max(0.0).sqrt(),
    );
    (0..=samples)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
            let p = eig.eigenvectors * Vector2::new(scale[0] * th.cos(), scale[1] * th.sin());
            [p[0], p[1]]
        })
        .collect()
}

/// Largest `cᵀp` over the projected ellipse: `sqrt(cᵀ S c)`.
pub fn ellipse_support(shape: &Matrix2<f64>, c: [f64; 2]) -> f64 {
    let v = Vector2::new(c[0], c[1]);
    (v.transpose() * shape * v)[(0, 0)].max(0.0).sqrt()
}

/// Unsafe half-plane `{p : cᵀp ≥ g}` in projected coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfPlane {
    pub c: [f64; 2],
    pub g: f64,
}

/// Half-spaces whose normal lies in the `(i, j)` coordinate plane; others
/// have no exact 2-D picture and are skipped.
pub fn project_unsafe(set: &UnsafeSet, i: usize, j: usize) -> Vec<HalfPlane> {
    set.halfspaces()
        .iter()
        .filter(|h| {
            h.c.iter()
                .enumerate()
                .all(|(k, v)| k == i || k == j || *v == 0.0)
        })
        .map(|h| HalfPlane {
            c: [h.c[i], h.c[j]],
            g: h.g,
        })
        .collect()
}

/// Clips a convex polygon to `{p : cᵀp ≥ g}`.
fn clip(poly: &[[f64; 2]], h: &HalfPlane) -> Vec<[f64; 2]> {
    let side = |p: &[f64; 2]| h.c[0] * p[0] + h.c[1] * p[1] - h.g;
    let mut out = Vec::new();
    for k in 0..poly.len() {
        let a = poly[k];
        let b = poly[(k + 1) % poly.len()];
        let (sa, sb) = (side(&a), side(&b));
        if sa >= 0.0 {
            out.push(a);
        }
        if (sa >= 0.0) != (sb >= 0.0) {
            let t = sa / (sa - sb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EllipsePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub ellipses: Vec<(String, Matrix2<f64>)>,
    pub unsafe_regions: Vec<HalfPlane>,
    pub points: Vec<[f64; 2]>,
}

impl EllipsePlot {
    pub fn to_svg(&self) -> Result<String> {
        if self.ellipses.is_empty() && self.points.is_empty() {
            return Err(Error::param("plot", "no ellipse or points to draw"));
        }
        let outlines: Vec<Vec<[f64; 2]>> = self
            .ellipses
            .iter()
            .map(|(_, s)| ellipse_boundary(s, 180))
            .collect();
        // Frame includes the nearest point of each unsafe boundary.
        let anchors: Vec<[f64; 2]> = self
            .unsafe_regions
            .iter()
            .map(|h| {
                let n2 = h.c[0] * h.c[0] + h.c[1] * h.c[1];
                [h.g * h.c[0] / n2, h.g * h.c[1] / n2]
            })
            .collect();
        let all = || {
            outlines
                .iter()
                .flatten()
                .chain(self.points.iter())
                .chain(anchors.iter())
        };
        let x = Range::from_values(all().map(|p| p[0]), &self.x_label).expect("nonempty");
        let y = Range::from_values(all().map(|p| p[1]), &self.y_label).expect("nonempty");
        let pad = |r: Range| {
            let s = 0.1 * (r.hi - r.lo);
            Range {
                lo: r.lo - s,
                hi: r.hi + s,
            }
        };
        let frame = Frame {
            x: pad(x),
            y: pad(y),
        };
        let mut out = header();
        let rect = [
            [frame.x.lo, frame.y.lo],
            [frame.x.hi, frame.y.lo],
            [frame.x.hi, frame.y.hi],
            [frame.x.lo, frame.y.hi],
        ];
        for h in &self.unsafe_regions {
            let poly = clip(&rect, h);
            if poly.len() >= 3 {
                let mut d = String::new();
                for p in &poly {
                    let _ = write!(d, "{:.2},{:.2} ", frame.px(p[0]), frame.py(p[1]));
                }
                let _ = writeln!(
                    out,
                    r##"<polygon points="{}" fill="#d62728" fill-opacity="0.15" stroke="#d62728"/>"##,
                    d.trim_end()
                );
            }
        }
        frame.axes(&mut out, &self.title, &self.x_label, &self.y_label);
        for p in &self.points {
            let _ = writeln!(
                out,
                r##"<circle cx="{:.2}" cy="{:.2}" r="1.3" fill="#555" fill-opacity="0.5"/>"##,
                frame.px(p[0]),
                frame.py(p[1])
            );
        }
        let mut entries = Vec::new();
        for (k, ((label, _), pts)) in self.ellipses.iter().zip(&outlines).enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            frame.polyline(
                &mut out,
                pts.iter().map(|p| (p[0], p[1])),
                &format!(r#"fill="none" stroke="{color}" stroke-width="2""#),
            );
            entries.push((label.clone(), color));
        }
        if !self.unsafe_regions.is_empty() {
            entries.push(("unsafe".into(), "#f4b6b6"));
        }
        if !self.points.is_empty() {
            entries.push(("sampled states".into(), "#555"));
        }
        legend(&mut out, &entries);
        out.push_str("</svg>\n");
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn boundary_matches_support() {
        let s = Matrix2::new(0.04, 0.01, 0.01, 0.09);
        let pts = ellipse_boundary(&s, 2000);
        for c in [[1.0, 0.0], [0.0, 1.0], [0.6, -0.8]] {
            let best = pts
                .iter()
                .map(|p| c[0] * p[0] + c[1] * p[1])
                .fold(f64::NEG_INFINITY, f64::max);
            assert_relative_eq!(best, ellipse_support(&s, c), max_relative = 1e-5);
        }
        // every boundary point has level one
        let inv = s.try_inverse().unwrap();
        for p in pts.iter().step_by(97) {
            let v = Vector2::new(p[0], p[1]);
            assert_relative_eq!((v.transpose() * inv * v)[(0, 0)], 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn projection_picks_submatrix() {
        let w = DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64);
        let p = project_ellipse(&w, 0, 2).unwrap();
        assert_eq!(p, Matrix2::new(0.0, 2.0, 6.0, 8.0));
        assert!(project_ellipse(&w, 1, 1).is_err());
        assert!(project_ellipse(&w, 0, 3).is_err());
    }

    #[test]
    fn unsafe_projection_keeps_planar_halfspaces() {
        let set = UnsafeSet::frequency_limit(4, 0.2).unwrap();
        let planes = project_unsafe(&set, 0, 1);
        assert_eq!(planes.len(), 2);
        assert!(project_unsafe(&set, 1, 2).is_empty());
    }

    #[test]
    fn clipping_half_plane() {
        let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let poly = clip(
            &square,
            &HalfPlane {
                c: [1.0, 0.0],
                g: 0.5,
            },
        );
        let area: f64 = (0..poly.len())
            .map(|k| {
                let (a, b) = (poly[k], poly[(k + 1) % poly.len()]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
            / 2.0;
        assert_relative_eq!(area.abs(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn line_plot_renders() {
        let plot = LinePlot {
            title: "f".into(),
            x_label: "t".into(),
            y_label: "df".into(),
            series: vec![Series::new("a", vec![0.0, 1.0, 2.0], vec![0.1, -0.1, 0.0])],
            hlines: vec![(0.2, "limit".into())],
        };
        let svg = plot.to_svg().unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("polyline"));
        assert!(LinePlot::default().to_svg().is_err());
    }

    #[test]
    fn constant_series_is_auto_ranged() {
        let plot = LinePlot {
            series: vec![Series::new("flat", vec![0.0, 1.0], vec![0.0, 0.0])],
            ..Default::default()
        };
        let svg = plot.to_svg().unwrap();
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn ellipse_only_plot() {
        let plot = EllipsePlot {
            ellipses: vec![("W".into(), Matrix2::new(0.04, 0.0, 0.0, 0.01))],
            ..Default::default()
        };
        let svg = plot.to_svg().unwrap();
        assert!(svg.contains("polyline"));
        assert!(!svg.contains("circle"));
    }
}
