//! PCA plane over recorded critic weights, frozen-target loss grids on that
//! plane and the projected weight trajectory.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{forward_batch, MlpSpec, ParamVector};
use crate::snapshot::{FrozenTargetSet, ProbeBatch};

/// Second eigenvalue at or below this fraction of the first counts as rank 1.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub center: ParamVector,
    pub delta: ParamVector,
    pub eta: ParamVector,
    /// Fractions of total variance along `delta` and `eta`.
    pub variance_ratios: [f64; 2],
    /// The snapshots span fewer than two directions; `eta` (and possibly
    /// `delta`) were completed with arbitrary orthonormal vectors.
    pub degenerate: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn remove_component(v: &mut [f64], u: &[f64]) {
    let c = dot(v, u);
    v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
}

/// Flips `v` so that its first coordinate of non-negligible magnitude is positive.
fn fix_sign(v: &mut [f64]) {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(x) = v.iter().find(|x| x.abs() > 1e-9 * max) {
        if *x < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Unit vector orthogonal to every vector in `basis`, built from the
/// coordinate axis least aligned with them.
fn complete(basis: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut best: Option<(f64, usize)> = None;
    for k in 0..dim.min(basis.len() + 2) {
        let align: f64 = basis.iter().map(|b| b[k] * b[k]).sum();
        if best.is_none_or(|(a, _)| align < a) {
            best = Some((align, k));
        }
    }
    let mut v = vec![0.0; dim];
    v[best.map_or(0, |b| b.1)] = 1.0;
    for _ in 0..2 {
        for b in basis {
            remove_component(&mut v, b);
        }
    }
    normalize(&mut v);
    v
}

/// Top two principal directions of the mean-centred snapshots, computed from
/// the snapshot Gram matrix.
pub fn pca_basis(snapshots: &[&ParamVector], center: &ParamVector) -> Result<PcaBasis> {
    if snapshots.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 3 snapshots, got {}",
            snapshots.len()
        )));
    }
    let dim = center.len();
    if dim < 2 {
        return Err(Error::InvalidArgument("PCA needs at least 2 parameters".into()));
    }
    for s in snapshots {
        if s.len() != dim {
            return Err(Error::dim("snapshot", dim, s.len()));
        }
        if !s.is_finite() {
            return Err(Error::InvalidArgument("snapshot contains non-finite weights".into()));
        }
    }
    let m = snapshots.len();
    let mut mean = vec![0.0; dim];
    for s in snapshots {
        mean.iter_mut().zip(&s.values).for_each(|(a, b)| *a += b);
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let rows: Vec<Vec<f64>> = snapshots
        .iter()
        .map(|s| s.values.iter().zip(&mean).map(|(a, b)| a - b).collect())
        .collect();
    let gram = DMatrix::from_fn(m, m, |i, j| dot(&rows[i], &rows[j]));
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = lambda.iter().sum();

    let direction = |k: usize| -> Vec<f64> {
        let u = eig.eigenvectors.column(order[k]);
        let mut v = vec![0.0; dim];
        for (i, row) in rows.iter().enumerate() {
            let c = u[i];
            v.iter_mut().zip(row).for_each(|(a, b)| *a += c * b);
        }
        v
    };

    let mut degenerate = false;
    let mut delta = if lambda[0] > 0.0 {
        direction(0)
    } else {
        degenerate = true;
        complete(&[], dim)
    };
    normalize(&mut delta);
    fix_sign(&mut delta);
    let mut eta = if !degenerate && lambda[1] > RANK_TOL * lambda[0] {
        let mut e = direction(1);
        // Gram-matrix round-off leaves a small overlap with delta.
        remove_component(&mut e, &delta);
        remove_component(&mut e, &delta);
        normalize(&mut e);
        e
    } else {
        degenerate = true;
        complete(&[&delta], dim)
    };
    fix_sign(&mut eta);

    let ratios = if total > 0.0 {
        [lambda[0] / total, if degenerate { 0.0 } else { lambda[1] / total }]
    } else {
        [0.0, 0.0]
    };
    Ok(PcaBasis {
        center: center.clone(),
        delta: ParamVector {
            values: delta,
            spec_hash: center.spec_hash,
        },
        eta: ParamVector {
            values: eta,
            spec_hash: center.spec_hash,
        },
        variance_ratios: ratios,
        degenerate,
    })
}

impl PcaBasis {
    /// `center + α·δ + β·η`; the center itself is returned unchanged at (0, 0).
    pub fn reconstruct(&self, alpha: f64, beta: f64) -> ParamVector {
        if alpha == 0.0 && beta == 0.0 {
            return self.center.clone();
        }
        let values = self
            .center
            .values
            .iter()
            .zip(self.delta.values.iter().zip(&self.eta.values))
            .map(|(c, (d, e))| c + (alpha * d + beta * e))
            .collect();
        ParamVector {
            values,
            spec_hash: self.center.spec_hash,
        }
    }

    pub fn coordinates(&self, w: &ParamVector) -> (f64, f64) {
        let diff: Vec<f64> = w.values.iter().zip(&self.center.values).map(|(a, b)| a - b).collect();
        (dot(&diff, &self.delta.values), dot(&diff, &self.eta.values))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedPath {
    pub steps: Vec<u64>,
    pub points: Vec<(f64, f64)>,
}

pub fn project_path(snapshots: &[&ParamVector], steps: &[u64], basis: &PcaBasis) -> Result<ProjectedPath> {
    if snapshots.len() != steps.len() {
        return Err(Error::dim("path steps", snapshots.len(), steps.len()));
    }
    let mut points = Vec::with_capacity(snapshots.len());
    for s in snapshots {
        if s.len() != basis.center.len() {
            return Err(Error::dim("snapshot", basis.center.len(), s.len()));
        }
        points.push(basis.coordinates(s));
    }
    Ok(ProjectedPath {
        steps: steps.to_vec(),
        points,
    })
}

/// `n` points from `−half` to `half` with 0 exact and exact mirror symmetry.
pub fn symmetric_axis(half: f64, n: usize) -> Result<Vec<f64>> {
    if n < 3 || n % 2 == 0 {
        return Err(Error::InvalidArgument(format!("axis length must be odd and >= 3, got {n}")));
    }
    if !(half > 0.0 && half.is_finite()) {
        return Err(Error::InvalidArgument(format!("axis half-width must be positive, got {half}")));
    }
    let c = (n / 2) as f64;
    Ok((0..n).map(|i| half * ((i as f64 - c) / c)).collect())
}

/// Half-width used when the path has no extent along an axis.
pub const FALLBACK_HALF_WIDTH: f64 = 1.0;

/// Symmetric axes covering `margin` times the path's extent along each direction.
pub fn default_grid_ranges(path: &ProjectedPath, margin: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n < 11 || n % 2 == 0 {
        return Err(Error::InvalidArgument(format!("grid size must be odd and >= 11, got {n}")));
    }
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!("margin must be positive, got {margin}")));
    }
    let extent = |f: fn(&(f64, f64)) -> f64| {
        let m = path.points.iter().map(f).fold(0.0f64, |m, x| m.max(x.abs()));
        if m > 1e-12 {
            margin * m
        } else {
            FALLBACK_HALF_WIDTH
        }
    };
    Ok((
        symmetric_axis(extent(|p| p.0), n)?,
        symmetric_axis(extent(|p| p.1), n)?,
    ))
}

/// Mean squared error between the critic's outputs on the probe and the
/// frozen targets.
pub fn critic_match_loss(critic_spec: &MlpSpec, critic: &[f64], state_actions: &[f64], y: &[f64]) -> Result<f64> {
    let q = forward_batch(critic_spec, critic, state_actions, y.len())?.into_output();
    Ok(q.iter().zip(y).map(|(q, y)| (q - y) * (q - y)).sum::<f64>() / y.len() as f64)
}

/// Linear-interpolation quantile of sorted data, `p ∈ [0, 1]`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// IQR at or below this fraction of the largest `|ΔL|` is treated as flat.
pub const IQR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Row-major over `alphas × betas`: cell `(i, j)` at `i·n_β + j`.
    pub l: Vec<f64>,
    pub l_star: f64,
    pub delta_l: Vec<f64>,
    pub l_tilde: Vec<f64>,
    pub iqr: f64,
    /// Divisor used for `L̃`; the IQR unless the fallback is active.
    pub normalizer: f64,
    pub iqr_fallback: bool,
    pub non_finite_cells: usize,
}

impl LandscapeGrid {
    /// Fills `ΔL` and `L̃` from raw losses.
    pub fn from_losses(alphas: Vec<f64>, betas: Vec<f64>, l: Vec<f64>, l_star: f64) -> Result<Self> {
        check_axis("alpha", &alphas)?;
        check_axis("beta", &betas)?;
        if l.len() != alphas.len() * betas.len() {
            return Err(Error::dim("loss grid", alphas.len() * betas.len(), l.len()));
        }
        let delta_l: Vec<f64> = l.iter().map(|v| v - l_star).collect();
        let mut finite: Vec<f64> = delta_l.iter().copied().filter(|v| v.is_finite()).collect();
        let non_finite_cells = delta_l.len() - finite.len();
        finite.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&finite, 0.75) - quantile_sorted(&finite, 0.25);
        let max_abs = finite.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (normalizer, iqr_fallback) = if iqr > IQR_FLOOR * max_abs {
            (iqr, false)
        } else if max_abs > 0.0 {
            (max_abs, true)
        } else {
            (1.0, true)
        };
        let l_tilde = delta_l.iter().map(|v| v / normalizer).collect();
        Ok(Self {
            alphas,
            betas,
            l,
            l_star,
            delta_l,
            l_tilde,
            iqr,
            normalizer,
            iqr_fallback,
            non_finite_cells,
        })
    }

    /// A grid whose normalised surface is given directly, with `L* = 0` and
    /// unit normaliser.
    pub fn from_normalized(alphas: Vec<f64>, betas: Vec<f64>, l_tilde: Vec<f64>) -> Result<Self> {
        check_axis("alpha", &alphas)?;
        check_axis("beta", &betas)?;
        if l_tilde.len() != alphas.len() * betas.len() {
            return Err(Error::dim("loss grid", alphas.len() * betas.len(), l_tilde.len()));
        }
        let non_finite_cells = l_tilde.iter().filter(|v| !v.is_finite()).count();
        Ok(Self {
            alphas,
            betas,
            l: l_tilde.clone(),
            l_star: 0.0,
            delta_l: l_tilde.clone(),
            l_tilde,
            iqr: 1.0,
            normalizer: 1.0,
            iqr_fallback: false,
            non_finite_cells,
        })
    }

    /// Samples `f(α, β)` as a normalised surface.
    pub fn from_fn(alphas: Vec<f64>, betas: Vec<f64>, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let vals = alphas.iter().flat_map(|&a| betas.iter().map(move |&b| (a, b))).map(|(a, b)| f(a, b)).collect();
        Self::from_normalized(alphas, betas, vals)
    }

    pub fn n_alpha(&self) -> usize {
        self.alphas.len()
    }

    pub fn n_beta(&self) -> usize {
        self.betas.len()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.betas.len() + j
    }

    pub fn l_tilde_at(&self, i: usize, j: usize) -> f64 {
        self.l_tilde[self.index(i, j)]
    }

    /// Grid indices of the origin.
    pub fn center_index(&self) -> Result<(usize, usize)> {
        let find = |axis: &[f64], what: &str| {
            axis.iter()
                .position(|&x| x == 0.0)
                .ok_or_else(|| Error::InvalidArgument(format!("{what} axis does not contain 0")))
        };
        Ok((find(&self.alphas, "alpha")?, find(&self.betas, "beta")?))
    }
}

fn check_axis(what: &str, axis: &[f64]) -> Result<()> {
    if axis.len() < 2 {
        return Err(Error::InvalidArgument(format!("{what} axis needs at least 2 points")));
    }
    if axis.iter().any(|x| !x.is_finite()) || axis.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("{what} axis must be finite and strictly increasing")));
    }
    Ok(())
}

/// Critic match loss at every `(α, β)` with only the primary critic moved.
/// Cells are evaluated in parallel; each cell's value does not depend on the
/// partitioning.
pub fn evaluate_grid(
    basis: &PcaBasis,
    probe: &ProbeBatch,
    targets: &FrozenTargetSet,
    critic_spec: &MlpSpec,
    alphas: &[f64],
    betas: &[f64],
) -> Result<LandscapeGrid> {
    check_axis("alpha", alphas)?;
    check_axis("beta", betas)?;
    if !alphas.contains(&0.0) || !betas.contains(&0.0) {
        return Err(Error::InvalidArgument("grid axes must contain 0".into()));
    }
    if targets.y.len() != probe.len() {
        return Err(Error::dim("frozen targets", probe.len(), targets.y.len()));
    }
    if targets.probe_digest != probe.digest() {
        return Err(Error::InvalidArgument("targets were frozen for a different probe batch".into()));
    }
    basis.center.check(critic_spec)?;
    let sa = probe.to_batch().state_actions();
    let y = &targets.y;
    let l_star = critic_match_loss(critic_spec, &basis.center.values, &sa, y)?;
    let nb = betas.len();
    let l = (0..alphas.len() * nb)
        .into_par_iter()
        .map(|k| {
            let w = basis.reconstruct(alphas[k / nb], betas[k % nb]);
            critic_match_loss(critic_spec, &w.values, &sa, y)
        })
        .collect::<Result<Vec<f64>>>()?;
    LandscapeGrid::from_losses(alphas.to_vec(), betas.to_vec(), l, l_star)
}

pub fn write_grid_csv(w: &mut impl Write, g: &LandscapeGrid) -> Result<()> {
    writeln!(w, "alpha,beta,L,delta_L,L_tilde")?;
    for (i, a) in g.alphas.iter().enumerate() {
        for (j, b) in g.betas.iter().enumerate() {
            let k = g.index(i, j);
            writeln!(w, "{a},{b},{},{},{}", g.l[k], g.delta_l[k], g.l_tilde[k])?;
        }
    }
    Ok(())
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| Error::format("csv", format!("line {line}: invalid number {field:?}")))
}

/// Reads a long-format grid in alpha-major order. `L*`, the IQR and the
/// normaliser are recovered from the rows.
pub fn read_grid_csv(r: impl BufRead) -> Result<LandscapeGrid> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.starts_with('#') || s.trim().is_empty()));
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == "alpha,beta,L,delta_L,L_tilde" => {}
        _ => return Err(Error::format("grid csv", "missing header alpha,beta,L,delta_L,L_tilde")),
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::format("grid csv", format!("line {}: expected 5 fields", n + 1)));
        }
        let mut v = [0.0; 5];
        for (k, x) in f.iter().enumerate() {
            v[k] = parse_f64(x, n + 1)?;
        }
        rows.push(v);
    }
    if rows.is_empty() {
        return Err(Error::format("grid csv", "no rows"));
    }
    let first_alpha = rows[0][0];
    let nb = rows.iter().take_while(|r| r[0] == first_alpha).count();
    if rows.len() % nb != 0 {
        return Err(Error::format("grid csv", "rows do not form a rectangular grid"));
    }
    let na = rows.len() / nb;
    let alphas: Vec<f64> = (0..na).map(|i| rows[i * nb][0]).collect();
    let betas: Vec<f64> = (0..nb).map(|j| rows[j][1]).collect();
    for (k, r) in rows.iter().enumerate() {
        if r[0] != alphas[k / nb] || r[1] != betas[k % nb] {
            return Err(Error::format("grid csv", format!("row {} is out of grid order", k + 1)));
        }
    }
    check_axis("alpha", &alphas).map_err(|e| Error::format("grid csv", e.to_string()))?;
    check_axis("beta", &betas).map_err(|e| Error::format("grid csv", e.to_string()))?;
    let l: Vec<f64> = rows.iter().map(|r| r[2]).collect();
    let delta_l: Vec<f64> = rows.iter().map(|r| r[3]).collect();
    let l_tilde: Vec<f64> = rows.iter().map(|r| r[4]).collect();
    let l_star = rows.iter().find(|r| r[2].is_finite()).map_or(0.0, |r| r[2] - r[3]);
    let normalizer = rows
        .iter()
        .find(|r| r[3].is_finite() && r[4].is_finite() && r[4] != 0.0)
        .map_or(1.0, |r| r[3] / r[4]);
    let mut finite: Vec<f64> = delta_l.iter().copied().filter(|v| v.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&finite, 0.75) - quantile_sorted(&finite, 0.25);
    let non_finite_cells = delta_l.len() - finite.len();
    Ok(LandscapeGrid {
        alphas,
        betas,
        l,
        l_star,
        delta_l,
        l_tilde,
        iqr,
        normalizer,
        iqr_fallback: (normalizer - iqr).abs() > 1e-12 * normalizer.abs(),
        non_finite_cells,
    })
}

pub fn write_path_csv(w: &mut impl Write, p: &ProjectedPath) -> Result<()> {
    writeln!(w, "step,alpha,beta")?;
    for (s, (a, b)) in p.steps.iter().zip(&p.points) {
        writeln!(w, "{s},{a},{b}")?;
    }
    Ok(())
}

pub fn read_path_csv(r: impl BufRead) -> Result<ProjectedPath> {
    let mut lines = r.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.starts_with('#') || s.trim().is_empty()));
    match lines.next() {
        Some((_, Ok(h))) if h.trim() == "step,alpha,beta" => {}
        _ => return Err(Error::format("path csv", "missing header step,alpha,beta")),
    }
    let mut path = ProjectedPath {
        steps: Vec::new(),
        points: Vec::new(),
    };
    for (n, line) in lines {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 {
            return Err(Error::format("path csv", format!("line {}: expected 3 fields", n + 1)));
        }
        let step = f[0]
            .trim()
            .parse()
            .map_err(|_| Error::format("path csv", format!("line {}: invalid step {:?}", n + 1, f[0])))?;
        path.steps.push(step);
        path.points.push((parse_f64(f[1], n + 1)?, parse_f64(f[2], n + 1)?));
    }
    Ok(path)
}

/// Summary written next to a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub n_alpha: usize,
    pub n_beta: usize,
    pub alpha_range: [f64; 2],
    pub beta_range: [f64; 2],
    pub delta_norm: f64,
    pub eta_norm: f64,
    pub delta_dot_eta: f64,
    pub variance_ratios: [f64; 2],
    pub degenerate_basis: bool,
    pub l_star: f64,
    pub iqr: f64,
    pub normalizer: f64,
    pub iqr_fallback: bool,
    pub non_finite_cells: usize,
}

impl GridSidecar {
    pub fn new(grid: &LandscapeGrid, basis: &PcaBasis) -> Self {
        Self {
            n_alpha: grid.n_alpha(),
            n_beta: grid.n_beta(),
            alpha_range: [grid.alphas[0], *grid.alphas.last().expect("non-empty")],
            beta_range: [grid.betas[0], *grid.betas.last().expect("non-empty")],
            delta_norm: basis.delta.norm(),
            eta_norm: basis.eta.norm(),
            delta_dot_eta: dot(&basis.delta.values, &basis.eta.values),
            variance_ratios: basis.variance_ratios,
            degenerate_basis: basis.degenerate,
            l_star: grid.l_star,
            iqr: grid.iqr,
            normalizer: grid.normalizer,
            iqr_fallback: grid.iqr_fallback,
            non_finite_cells: grid.non_finite_cells,
        }
    }
}
