//! SVG renderings of a normalised landscape: a filled contour map with the
//! projected training path, and an isometric surface view.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::landscape::{quantile_sorted, LandscapeGrid, ProjectedPath};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub width: f64,
    pub height: f64,
    /// Number of filled colour bands.
    pub levels: usize,
    /// Values above this quantile of the finite cells share the top colour.
    pub clip_quantile: f64,
    pub title: Option<String>,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            width: 640.0,
            height: 520.0,
            levels: 12,
            clip_quantile: 0.95,
            title: None,
        }
    }
}

const VIRIDIS: [(f64, f64, f64); 9] = [
    (68.0, 1.0, 84.0),
    (71.0, 44.0, 122.0),
    (59.0, 81.0, 139.0),
    (44.0, 113.0, 142.0),
    (33.0, 144.0, 141.0),
    (39.0, 173.0, 129.0),
    (92.0, 200.0, 99.0),
    (170.0, 220.0, 50.0),
    (253.0, 231.0, 37.0),
];

const MISSING: &str = "#bdbdbd";

/// Viridis-like colour for `t` in `[0, 1]`, as `#rrggbb`.
pub fn colour(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let k = (t.floor() as usize).min(VIRIDIS.len() - 2);
    let f = t - k as f64;
    let (a, b) = (VIRIDIS[k], VIRIDIS[k + 1]);
    let mix = |x: f64, y: f64| (x + f * (y - x)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Compact tick label.
pub fn tick_label(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 {
        "0".into()
    } else if a >= 1e4 || a < 1e-3 {
        format!("{v:.2e}")
    } else {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        if s == "-0" { "0".into() } else { s.into() }
    }
}

struct Scale {
    lo: f64,
    hi: f64,
    levels: usize,
}

impl Scale {
    fn new(grid: &LandscapeGrid, opts: &PlotOptions) -> Result<Self> {
        if opts.levels < 2 || !(opts.clip_quantile > 0.0 && opts.clip_quantile <= 1.0) {
            return Err(Error::InvalidArgument("need >= 2 levels and a clip quantile in (0, 1]".into()));
        }
        if !(opts.width >= 200.0 && opts.height >= 200.0) {
            return Err(Error::InvalidArgument("plot must be at least 200x200".into()));
        }
        let mut finite: Vec<f64> = grid.l_tilde.iter().copied().filter(|v| v.is_finite()).collect();
        finite.sort_by(f64::total_cmp);
        let (lo, mut hi) = match finite.first() {
            Some(&lo) => (lo, quantile_sorted(&finite, opts.clip_quantile)),
            None => (0.0, 1.0),
        };
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        Ok(Self {
            lo,
            hi,
            levels: opts.levels,
        })
    }

    fn unit(&self, v: f64) -> f64 {
        ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0)
    }

    fn band(&self, v: f64) -> usize {
        ((self.unit(v) * self.levels as f64) as usize).min(self.levels - 1)
    }

    fn band_colour(&self, band: usize) -> String {
        colour((band as f64 + 0.5) / self.levels as f64)
    }

    fn threshold(&self, k: usize) -> f64 {
        self.lo + (self.hi - self.lo) * k as f64 / self.levels as f64
    }
}

fn header(out: &mut String, opts: &PlotOptions) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#,
        w = opts.width,
        h = opts.height
    );
    let _ = writeln!(out, r#"<rect width="{}" height="{}" fill="white"/>"#, opts.width, opts.height);
    if let Some(t) = &opts.title {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            opts.width / 2.0,
            escape(t)
        );
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn colourbar(out: &mut String, scale: &Scale, x: f64, top: f64, bottom: f64) {
    let h = (bottom - top) / scale.levels as f64;
    for k in 0..scale.levels {
        let y = bottom - (k + 1) as f64 * h;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{y:.2}" width="16" height="{h:.2}" fill="{}"/>"#,
            scale.band_colour(k)
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{x:.2}" y="{top:.2}" width="16" height="{:.2}" fill="none" stroke="black" stroke-width="0.8"/>"#,
        bottom - top
    );
    let step = scale.levels.div_ceil(6);
    for k in (0..=scale.levels).step_by(step) {
        let y = bottom - k as f64 * h;
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-width="0.8"/>"#,
            x + 16.0,
            x + 20.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            x + 23.0,
            y + 4.0,
            tick_label(scale.threshold(k))
        );
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">L̃</text>"#, x + 8.0, top - 8.0);
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    a0: f64,
    a1: f64,
    b0: f64,
    b1: f64,
}

impl Frame {
    fn x(&self, a: f64) -> f64 {
        self.x0 + (a - self.a0) / (self.a1 - self.a0) * (self.x1 - self.x0)
    }
    fn y(&self, b: f64) -> f64 {
        self.y1 - (b - self.b0) / (self.b1 - self.b0) * (self.y1 - self.y0)
    }
}

/// Midpoints between neighbouring axis values, extended half a step at the ends.
fn tile_edges(axis: &[f64]) -> Vec<f64> {
    let n = axis.len();
    let mut e = Vec::with_capacity(n + 1);
    e.push(axis[0] - 0.5 * (axis[1] - axis[0]));
    for k in 0..n - 1 {
        e.push(0.5 * (axis[k] + axis[k + 1]));
    }
    e.push(axis[n - 1] + 0.5 * (axis[n - 1] - axis[n - 2]));
    e
}

/// Marching-squares segments of the level set `L̃ = t`.
fn level_segments(grid: &LandscapeGrid, t: f64) -> Vec<[(f64, f64); 2]> {
    let (na, nb) = (grid.n_alpha(), grid.n_beta());
    let mut segs = Vec::new();
    for i in 0..na - 1 {
        for j in 0..nb - 1 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let v: Vec<f64> = corners.iter().map(|&(a, b)| grid.l_tilde_at(a, b)).collect();
            if v.iter().any(|x| !x.is_finite()) {
                continue;
            }
            let mut pts = Vec::with_capacity(4);
            for e in 0..4 {
                let (p, q) = (e, (e + 1) % 4);
                if (v[p] >= t) != (v[q] >= t) {
                    let f = (t - v[p]) / (v[q] - v[p]);
                    let (pa, pb) = corners[p];
                    let (qa, qb) = corners[q];
                    let a = grid.alphas[pa] + f * (grid.alphas[qa] - grid.alphas[pa]);
                    let b = grid.betas[pb] + f * (grid.betas[qb] - grid.betas[pb]);
                    pts.push((a, b));
                }
            }
            match pts.len() {
                2 => segs.push([pts[0], pts[1]]),
                4 => {
                    // Saddle: the cell mean decides which corners are joined.
                    let mean = v.iter().sum::<f64>() / 4.0;
                    if (mean >= t) == (v[0] >= t) {
                        segs.push([pts[0], pts[3]]);
                        segs.push([pts[1], pts[2]]);
                    } else {
                        segs.push([pts[0], pts[1]]);
                        segs.push([pts[2], pts[3]]);
                    }
                }
                _ => {}
            }
        }
    }
    segs
}

/// Filled contour map of `L̃` with optional training path overlay.
pub fn contour_svg(grid: &LandscapeGrid, path: Option<&ProjectedPath>, opts: &PlotOptions) -> Result<String> {
    let scale = Scale::new(grid, opts)?;
    let (ea, eb) = (tile_edges(&grid.alphas), tile_edges(&grid.betas));
    let f = Frame {
        x0: 64.0,
        x1: opts.width - 100.0,
        y0: 40.0,
        y1: opts.height - 50.0,
        a0: ea[0],
        a1: ea[ea.len() - 1],
        b0: eb[0],
        b1: eb[eb.len() - 1],
    };
    let mut out = String::new();
    header(&mut out, opts);
    let _ = writeln!(
        out,
        r#"<defs><clipPath id="plot-area"><rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}"/></clipPath></defs>"#,
        f.x0,
        f.y0,
        f.x1 - f.x0,
        f.y1 - f.y0
    );
    let _ = writeln!(out, r#"<g clip-path="url(#plot-area)" shape-rendering="crispEdges">"#);
    // One rectangle per run of equal colour along alpha.
    for j in 0..grid.n_beta() {
        let fill_of = |i: usize| {
            let v = grid.l_tilde_at(i, j);
            if v.is_finite() { scale.band_colour(scale.band(v)) } else { MISSING.to_string() }
        };
        let mut i = 0;
        while i < grid.n_alpha() {
            let fill = fill_of(i);
            let mut end = i + 1;
            while end < grid.n_alpha() && fill_of(end) == fill {
                end += 1;
            }
            let (x, y) = (f.x(ea[i]), f.y(eb[j + 1]));
            let _ = writeln!(
                out,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                f.x(ea[end]) - x,
                f.y(eb[j]) - y
            );
            i = end;
        }
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r#"<g clip-path="url(#plot-area)" fill="none" stroke="black" stroke-width="0.5" stroke-opacity="0.6">"#
    );
    for k in 1..scale.levels {
        let segs = level_segments(grid, scale.threshold(k));
        if segs.is_empty() {
            continue;
        }
        let mut d = String::new();
        for [p, q] in segs {
            let _ = write!(d, "M{:.2} {:.2}L{:.2} {:.2}", f.x(p.0), f.y(p.1), f.x(q.0), f.y(q.1));
        }
        let _ = writeln!(out, r#"<path d="{d}"/>"#);
    }
    let _ = writeln!(out, "</g>");

    if let Some(p) = path.filter(|p| !p.points.is_empty()) {
        let pts: Vec<String> = p.points.iter().map(|&(a, b)| format!("{:.2},{:.2}", f.x(a), f.y(b))).collect();
        let _ = writeln!(
            out,
            r#"<g clip-path="url(#plot-area)"><polyline points="{}" fill="none" stroke="white" stroke-width="1.6"/>"#,
            pts.join(" ")
        );
        for &(a, b) in &p.points {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="1.8" fill="white"/>"#, f.x(a), f.y(b));
        }
        let (sa, sb) = p.points[0];
        let (la, lb) = p.points[p.points.len() - 1];
        let _ = writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4.5" fill="none" stroke="white" stroke-width="1.6"/>"#,
            f.x(sa),
            f.y(sb)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="8" height="8" fill="white" stroke="black" stroke-width="0.8"/></g>"#,
            f.x(la) - 4.0,
            f.y(lb) - 4.0
        );
    }
    let (cx, cy) = (f.x(0.0), f.y(0.0));
    let _ = writeln!(
        out,
        r#"<path d="M{:.2} {cy:.2}H{:.2}M{cx:.2} {:.2}V{:.2}" stroke="red" stroke-width="1.6"/>"#,
        cx - 6.0,
        cx + 6.0,
        cy - 6.0,
        cy + 6.0
    );

    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black" stroke-width="0.8"/>"#,
        f.x0,
        f.y0,
        f.x1 - f.x0,
        f.y1 - f.y0
    );
    for k in 0..5 {
        let t = k as f64 / 4.0;
        let a = grid.alphas[0] + t * (grid.alphas[grid.n_alpha() - 1] - grid.alphas[0]);
        let b = grid.betas[0] + t * (grid.betas[grid.n_beta() - 1] - grid.betas[0]);
        let (x, y) = (f.x(a), f.y(b));
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            f.y1,
            f.y1 + 4.0,
            f.y1 + 16.0,
            tick_label(a)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            f.x0 - 4.0,
            f.x0,
            f.x0 - 6.0,
            y + 4.0,
            tick_label(b)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">α</text><text x="16" y="{:.2}" text-anchor="middle">β</text>"#,
        0.5 * (f.x0 + f.x1),
        opts.height - 14.0,
        0.5 * (f.y0 + f.y1)
    );
    colourbar(&mut out, &scale, opts.width - 80.0, f.y0, f.y1);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Isometric surface of `L̃`, drawn back to front with clipped heights.
pub fn surface_svg(grid: &LandscapeGrid, opts: &PlotOptions) -> Result<String> {
    let scale = Scale::new(grid, opts)?;
    let (na, nb) = (grid.n_alpha(), grid.n_beta());
    let (cos30, sin30) = (3f64.sqrt() / 2.0, 0.5);
    let norm = |axis: &[f64], k: usize| 2.0 * (axis[k] - axis[0]) / (axis[axis.len() - 1] - axis[0]) - 1.0;
    let raw = |i: usize, j: usize, z: f64| {
        let (u, w) = (norm(&grid.alphas, i), norm(&grid.betas, j));
        ((u - w) * cos30, (u + w) * sin30 - 0.8 * z)
    };
    // Raw extents: x in [-2cos30, 2cos30], y in [-1.8, 1].
    let (plot_w, plot_h) = (opts.width - 180.0, opts.height - 100.0);
    let s = (plot_w / (4.0 * cos30)).min(plot_h / 2.8);
    let (ox, oy) = (60.0 + plot_w / 2.0, 40.0 + 1.8 * s);
    let screen = |i: usize, j: usize, z: f64| {
        let (x, y) = raw(i, j, z);
        (ox + s * x, oy + s * y)
    };
    let mut out = String::new();
    header(&mut out, opts);
    let _ = writeln!(out, r#"<g stroke="black" stroke-width="0.15" stroke-opacity="0.5">"#);
    // Larger u + w is nearer the viewer, so cells are drawn in increasing i + j.
    let mut cells: Vec<(usize, usize)> = (0..na - 1).flat_map(|i| (0..nb - 1).map(move |j| (i, j))).collect();
    cells.sort_by_key(|&(i, j)| (i + j, i));
    for (i, j) in cells {
        let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
        let v: Vec<f64> = corners.iter().map(|&(a, b)| grid.l_tilde_at(a, b)).collect();
        if v.iter().any(|x| !x.is_finite()) {
            continue;
        }
        let mean = v.iter().sum::<f64>() / 4.0;
        let pts: Vec<String> = corners
            .iter()
            .zip(&v)
            .map(|(&(a, b), &z)| {
                let (x, y) = screen(a, b, scale.unit(z));
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polygon points="{}" fill="{}"/>"#,
            pts.join(" "),
            scale.band_colour(scale.band(mean))
        );
    }
    let _ = writeln!(out, "</g>");
    let label = |out: &mut String, i: usize, j: usize, text: &str| {
        let (x, y) = screen(i, j, 0.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{text}</text>"#, y + 18.0);
    };
    label(&mut out, na - 1, 0, &format!("α = {}", tick_label(grid.alphas[na - 1])));
    label(&mut out, 0, nb - 1, &format!("β = {}", tick_label(grid.betas[nb - 1])));
    colourbar(&mut out, &scale, opts.width - 80.0, 40.0, opts.height - 50.0);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Numeric CSV with a header; empty fields read as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Rows where both columns hold finite values.
    pub fn pairs(&self, x: usize, y: usize) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter_map(|r| match (r[x], r[y]) {
                (Some(a), Some(b)) if a.is_finite() && b.is_finite() => Some((a, b)),
                _ => None,
            })
            .collect()
    }
}

pub fn read_numeric_csv(r: impl std::io::BufRead) -> Result<CsvTable> {
    let what = "numeric csv";
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    for (k, line) in r.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let Some(h) = &header else {
            header = Some(cells.iter().map(|s| s.to_string()).collect());
            continue;
        };
        if cells.len() != h.len() {
            return Err(Error::format(what, format!("line {}: expected {} fields, got {}", k + 1, h.len(), cells.len())));
        }
        let row = cells
            .iter()
            .map(|c| match *c {
                "" => Ok(None),
                c => c
                    .parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::format(what, format!("line {}: bad number {c:?}", k + 1))),
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let header = header.ok_or_else(|| Error::format(what, "missing header"))?;
    Ok(CsvTable { header, rows })
}

/// Line chart of `(x, y)` points with axis ticks.
pub fn curve_svg(points: &[(f64, f64)], x_label: &str, y_label: &str, opts: &PlotOptions) -> Result<String> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points to plot".into()));
    }
    let span = |vals: Vec<f64>| {
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) }
    };
    let (a0, a1) = span(points.iter().map(|p| p.0).collect());
    let (b0, b1) = span(points.iter().map(|p| p.1).collect());
    let f = Frame {
        x0: 70.0,
        x1: opts.width - 30.0,
        y0: 40.0,
        y1: opts.height - 50.0,
        a0,
        a1,
        b0,
        b1,
    };
    let mut out = String::new();
    header(&mut out, opts);
    let pts: Vec<String> = points.iter().map(|&(a, b)| format!("{:.2},{:.2}", f.x(a), f.y(b))).collect();
    if points.len() == 1 {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, f.x(points[0].0), f.y(points[0].1), colour(0.3));
    } else {
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.2"/>"#,
            pts.join(" "),
            colour(0.3)
        );
    }
    let _ = writeln!(
        out,
        r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black" stroke-width="0.8"/>"#,
        f.x0,
        f.y0,
        f.x1 - f.x0,
        f.y1 - f.y0
    );
    for k in 0..5 {
        let t = k as f64 / 4.0;
        let (a, b) = (a0 + t * (a1 - a0), b0 + t * (b1 - b0));
        let (x, y) = (f.x(a), f.y(b));
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            f.y1,
            f.y1 + 4.0,
            f.y1 + 16.0,
            tick_label(a)
        );
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            f.x0 - 4.0,
            f.x0,
            f.x0 - 6.0,
            y + 4.0,
            tick_label(b)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text><text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        0.5 * (f.x0 + f.x1),
        opts.height - 14.0,
        escape(x_label),
        0.5 * (f.y0 + f.y1),
        0.5 * (f.y0 + f.y1),
        escape(y_label)
    );
    out.push_str("</svg>\n");
    Ok(out)
}
