//! Geometric indices of a normalised loss surface: worst-case sharpness on a
//! circle, sub-threshold basin area and the local Hessian condition number.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landscape::LandscapeGrid;

pub const DEFAULT_EPS: f64 = 0.1;
pub const DEFAULT_RHO: f64 = 0.25;
pub const DEFAULT_N_ANGLES: usize = 720;
pub const DEFAULT_WINDOW: usize = 3;
/// Non-positive curvature is floored at this fraction of `|λ_max|`.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Bilinear interpolation of `L̃` at `(a, b)`; `None` outside the grid.
pub fn interpolate(grid: &LandscapeGrid, a: f64, b: f64) -> Option<f64> {
    let locate = |axis: &[f64], x: f64| -> Option<(usize, f64)> {
        let (first, last) = (axis[0], *axis.last()?);
        if !(first..=last).contains(&x) {
            return None;
        }
        let k = axis.partition_point(|&v| v <= x).clamp(1, axis.len() - 1) - 1;
        Some((k, (x - axis[k]) / (axis[k + 1] - axis[k])))
    };
    let (i, ta) = locate(&grid.alphas, a)?;
    let (j, tb) = locate(&grid.betas, b)?;
    let f = |di: usize, dj: usize| grid.l_tilde_at(i + di, j + dj);
    Some((1.0 - ta) * ((1.0 - tb) * f(0, 0) + tb * f(0, 1)) + ta * ((1.0 - tb) * f(1, 0) + tb * f(1, 1)))
}

/// Largest interpolated `L̃` on the circle of radius `eps` about the origin.
/// Any non-finite sample makes the result infinite.
pub fn sharpness(grid: &LandscapeGrid, eps: f64, n_angles: usize) -> Result<f64> {
    if n_angles < 16 {
        return Err(Error::InvalidArgument(format!("need at least 16 angles, got {n_angles}")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    let mut worst = f64::NEG_INFINITY;
    for k in 0..n_angles {
        let theta = std::f64::consts::TAU * k as f64 / n_angles as f64;
        let v = interpolate(grid, eps * theta.cos(), eps * theta.sin()).ok_or(Error::CircleOutsideGrid { radius: eps })?;
        if !v.is_finite() {
            return Ok(f64::INFINITY);
        }
        worst = worst.max(v);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasinMode {
    /// The 4-connected sub-threshold region around the origin, which must
    /// close before reaching the grid edge.
    Connected,
    /// Every sub-threshold cell.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BasinArea {
    Area(f64),
    NonExistent,
}

impl BasinArea {
    pub fn value(self) -> Option<f64> {
        match self {
            BasinArea::Area(a) => Some(a),
            BasinArea::NonExistent => None,
        }
    }
}

fn cell_area(grid: &LandscapeGrid) -> f64 {
    let span = |axis: &[f64]| (axis[axis.len() - 1] - axis[0]) / (axis.len() - 1) as f64;
    span(&grid.alphas) * span(&grid.betas)
}

pub fn basin_area(grid: &LandscapeGrid, rho: f64, mode: BasinMode) -> Result<BasinArea> {
    if !(rho > 0.0) {
        return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
    }
    let (na, nb) = (grid.n_alpha(), grid.n_beta());
    let below = |i: usize, j: usize| {
        let v = grid.l_tilde_at(i, j);
        v.is_finite() && v <= rho
    };
    let count = match mode {
        BasinMode::Global => (0..na).flat_map(|i| (0..nb).map(move |j| (i, j))).filter(|&(i, j)| below(i, j)).count(),
        BasinMode::Connected => {
            let (i0, j0) = grid.center_index()?;
            if !below(i0, j0) {
                return Ok(BasinArea::NonExistent);
            }
            let mut seen = vec![false; na * nb];
            let mut queue = VecDeque::from([(i0, j0)]);
            seen[grid.index(i0, j0)] = true;
            let mut count = 0;
            while let Some((i, j)) = queue.pop_front() {
                count += 1;
                if i == 0 || j == 0 || i == na - 1 || j == nb - 1 {
                    return Ok(BasinArea::NonExistent);
                }
                for (di, dj) in [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)] {
                    let k = grid.index(di, dj);
                    if !seen[k] && below(di, dj) {
                        seen[k] = true;
                        queue.push_back((di, dj));
                    }
                }
            }
            count
        }
    };
    Ok(BasinArea::Area(count as f64 * cell_area(grid)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anisotropy {
    pub log_kappa: f64,
    pub lambda_max: f64,
    /// After flooring.
    pub lambda_min: f64,
    /// Symmetric fitted Hessian `[[H_αα, H_αβ], [H_αβ, H_ββ]]`.
    pub hessian: [[f64; 2]; 2],
    pub window_halfwidth: usize,
    /// The fitted Hessian has a non-positive eigenvalue.
    pub indefinite: bool,
}

/// Eigenvalues of a symmetric 2×2 matrix, larger first.
pub fn sym2_eigenvalues(h: [[f64; 2]; 2]) -> (f64, f64) {
    let mean = 0.5 * (h[0][0] + h[1][1]);
    let half_diff = 0.5 * (h[0][0] - h[1][1]);
    let r = half_diff.hypot(h[0][1]);
    (mean + r, mean - r)
}

/// Least-squares quadratic fit of `L̃` over the `(2k+1)²` window at the origin.
pub fn hessian_log_kappa(grid: &LandscapeGrid, window_halfwidth: usize) -> Result<Anisotropy> {
    let k = window_halfwidth;
    if k == 0 {
        return Err(Error::InvalidArgument("window half-width must be >= 1".into()));
    }
    let (i0, j0) = grid.center_index()?;
    if i0 < k || j0 < k || i0 + k >= grid.n_alpha() || j0 + k >= grid.n_beta() {
        return Err(Error::InvalidArgument(format!("window half-width {k} does not fit in the grid")));
    }
    // Offsets are scaled to the window so the design matrix stays well conditioned.
    let sa = grid.alphas[i0 + k] - grid.alphas[i0];
    let sb = grid.betas[j0 + k] - grid.betas[j0];
    let n = (2 * k + 1) * (2 * k + 1);
    let mut x = DMatrix::zeros(n, 6);
    let mut y = DVector::zeros(n);
    let mut row = 0;
    for i in i0 - k..=i0 + k {
        for j in j0 - k..=j0 + k {
            let v = grid.l_tilde_at(i, j);
            if !v.is_finite() {
                return Err(Error::SingularFit);
            }
            let u = (grid.alphas[i] - grid.alphas[i0]) / sa;
            let w = (grid.betas[j] - grid.betas[j0]) / sb;
            for (c, val) in [1.0, u, w, 0.5 * u * u, u * w, 0.5 * w * w].into_iter().enumerate() {
                x[(row, c)] = val;
            }
            y[row] = v;
            row += 1;
        }
    }
    let svd = x.svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() <= 1e-12 * sv.max() {
        return Err(Error::SingularFit);
    }
    let coef = svd.solve(&y, 0.0).map_err(|_| Error::SingularFit)?;
    let h = [
        [coef[3] / (sa * sa), coef[4] / (sa * sb)],
        [coef[4] / (sa * sb), coef[5] / (sb * sb)],
    ];
    let (lmax, lmin) = sym2_eigenvalues(h);
    let indefinite = lmin <= 0.0;
    let floor = LAMBDA_FLOOR * lmax.abs();
    let lmin_used = if indefinite { floor } else { lmin };
    let log_kappa = if lmax.abs() == 0.0 { 0.0 } else { (lmax.abs() / lmin_used).ln() };
    Ok(Anisotropy {
        log_kappa,
        lambda_max: lmax,
        lambda_min: lmin_used,
        hessian: h,
        window_halfwidth: k,
        indefinite,
    })
}

/// Parameters used for a report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsParams {
    pub eps: f64,
    pub n_angles: usize,
    pub rho: f64,
    pub basin_mode: BasinMode,
    pub window_halfwidth: usize,
}

impl Default for MetricsParams {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            n_angles: DEFAULT_N_ANGLES,
            rho: DEFAULT_RHO,
            basin_mode: BasinMode::Connected,
            window_halfwidth: DEFAULT_WINDOW,
        }
    }
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessEntry {
    pub value: f64,
    pub eps: f64,
    pub n_angles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinEntry {
    pub area: Option<f64>,
    pub non_existent: bool,
    pub rho: f64,
    pub mode: BasinMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub sharpness: SharpnessEntry,
    pub basin: BasinEntry,
    pub anisotropy: Anisotropy,
    pub l_star: f64,
    pub iqr: f64,
    pub normalizer: f64,
    pub iqr_fallback: bool,
    pub pca_variance_ratios: Option<[f64; 2]>,
}

pub fn metrics_report(grid: &LandscapeGrid, params: &MetricsParams, variance_ratios: Option<[f64; 2]>) -> Result<MetricsReport> {
    let sharp = sharpness(grid, params.eps, params.n_angles)?;
    let basin = basin_area(grid, params.rho, params.basin_mode)?;
    let anisotropy = hessian_log_kappa(grid, params.window_halfwidth)?;
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        sharpness: SharpnessEntry {
            value: sharp,
            eps: params.eps,
            n_angles: params.n_angles,
        },
        basin: BasinEntry {
            area: basin.value(),
            non_existent: basin == BasinArea::NonExistent,
            rho: params.rho,
            mode: params.basin_mode,
        },
        anisotropy,
        l_star: grid.l_star,
        iqr: grid.iqr,
        normalizer: grid.normalizer,
        iqr_fallback: grid.iqr_fallback,
        pca_variance_ratios: variance_ratios,
    })
}

/// Published index values kept for comparison; they are not reproducible
/// targets because they depend on an unstated grid and stochastic training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub algorithm: String,
    pub sharpness: f64,
    /// `None` when no closed basin was found.
    pub basin_area: Option<f64>,
    pub log_kappa: f64,
}
