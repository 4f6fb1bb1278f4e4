//! Local planar guidance: per-cell plane coefficients expanded to full-resolution
//! depth cues by ray-plane intersection.
//!
//! A cell at scale `k` owns a `k x k` patch of the output. Inside the patch each
//! pixel has normalized coordinates `u = (j + 0.5) / k`, `v = (i + 0.5) / k`, and
//! the cue is
//!
//! ```text
//! c = n4 / max(n1 * u + n2 * v + n3, eps)
//! ```
//!
//! where `(n1, n2, n3)` is the unit normal given by polar angle `theta` and
//! azimuth `phi` and `n4 > 0` is the plane distance. Evaluation runs in `f64`
//! and rounds once on output.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Lower clamp for the ray-plane denominator.
pub const DENOM_EPS: f64 = 1e-4;

/// Scale factors that carry an LPG head.
pub const SCALES: [usize; 3] = [8, 4, 2];

#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    k: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl PatchGrid {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("patch size must be >= 1"));
        }
        let mut u = Vec::with_capacity(k * k);
        let mut v = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                u.push((j as f64 + 0.5) / k as f64);
                v.push((i as f64 + 0.5) / k as f64);
            }
        }
        Ok(Self { k, u, v })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `(u, v)` of patch pixel `(row, col)`.
    pub fn coord(&self, row: usize, col: usize) -> (f64, f64) {
        let idx = row * self.k + col;
        (self.u[idx], self.v[idx])
    }
}

/// Plane coefficients for every cell of a `[B, 1, H/k, W/k]` grid.
#[derive(Clone, Debug)]
pub struct PlaneCoeffMap {
    pub theta: Tensor,
    pub phi: Tensor,
    pub n4: Tensor,
    pub k: usize,
    pub kappa: f32,
}

impl PlaneCoeffMap {
    pub fn new(theta: Tensor, phi: Tensor, n4: Tensor, k: usize, kappa: f32) -> Result<Self> {
        let dims = theta.dims4()?;
        if dims.1 != 1 || phi.shape() != theta.shape() || n4.shape() != theta.shape() {
            return Err(Error::invalid(
                "plane coefficients must share a [B, 1, h, w] shape",
            ));
        }
        Ok(Self {
            theta,
            phi,
            n4,
            k,
            kappa,
        })
    }

    /// Unit normal of cell `idx` (flat index into the coefficient grid).
    pub fn normal(&self, idx: usize) -> [f64; 3] {
        angles_to_normal(self.theta.data()[idx] as f64, self.phi.data()[idx] as f64)
    }
}

/// Spherical parameterization: `(sin t cos p, sin t sin p, cos t)`.
pub fn angles_to_normal(theta: f64, phi: f64) -> [f64; 3] {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [st * cp, st * sp, ct]
}

/// Inverse of [`angles_to_normal`] for a unit vector.
pub fn normal_to_angles(n: [f64; 3]) -> (f64, f64) {
    (n[2].clamp(-1.0, 1.0).acos(), n[1].atan2(n[0]))
}

pub fn ray_plane_depth(n: [f64; 3], n4: f64, u: f64, v: f64, eps: f64) -> f64 {
    n4 / (n[0] * u + n[1] * v + n[2]).max(eps)
}

/// Extents of a coefficient grid: `(batch, rows, cols)`.
pub(crate) type CellDims = (usize, usize, usize);

pub(crate) fn expand_forward(
    theta: &[f32],
    phi: &[f32],
    n4: &[f32],
    (batch, rows, cols): CellDims,
    grid: &PatchGrid,
    eps: f64,
) -> Vec<f32> {
    let k = grid.k;
    let (out_h, out_w) = (rows * k, cols * k);
    let mut out = vec![0.0f32; batch * out_h * out_w];
    for b in 0..batch {
        for r in 0..rows {
            for c in 0..cols {
                let cell = (b * rows + r) * cols + c;
                let n = angles_to_normal(theta[cell] as f64, phi[cell] as f64);
                let dist = n4[cell] as f64;
                for i in 0..k {
                    let row = &mut out[(b * out_h + r * k + i) * out_w + c * k..][..k];
                    for (j, px) in row.iter_mut().enumerate() {
                        let (u, v) = grid.coord(i, j);
                        *px = ray_plane_depth(n, dist, u, v, eps) as f32;
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d theta, d phi, d n4)` given the upstream gradient over the expanded map.
pub(crate) fn expand_backward(
    theta: &[f32],
    phi: &[f32],
    n4: &[f32],
    (batch, rows, cols): CellDims,
    grid: &PatchGrid,
    eps: f64,
    grad_out: &[f32],
) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    let k = grid.k;
    let (out_h, out_w) = (rows * k, cols * k);
    let cells = batch * rows * cols;
    let (mut gt, mut gp, mut gn) = (vec![0.0f32; cells], vec![0.0f32; cells], vec![0.0f32; cells]);
    for b in 0..batch {
        for r in 0..rows {
            for c in 0..cols {
                let cell = (b * rows + r) * cols + c;
                let (st, ct) = (theta[cell] as f64).sin_cos();
                let (sp, cp) = (phi[cell] as f64).sin_cos();
                let n = [st * cp, st * sp, ct];
                let dist = n4[cell] as f64;
                let (mut acc_t, mut acc_p, mut acc_n) = (0.0f64, 0.0f64, 0.0f64);
                for i in 0..k {
                    let row = &grad_out[(b * out_h + r * k + i) * out_w + c * k..][..k];
                    for (j, &g) in row.iter().enumerate() {
                        let (u, v) = grid.coord(i, j);
                        let g = g as f64;
                        let denom = n[0] * u + n[1] * v + n[2];
                        if denom > eps {
                            acc_n += g / denom;
                            let dc_dden = -dist / (denom * denom);
                            let dden_dt = ct * cp * u + ct * sp * v - st;
                            let dden_dp = -st * sp * u + st * cp * v;
                            acc_t += g * dc_dden * dden_dt;
                            acc_p += g * dc_dden * dden_dp;
                        } else {
                            acc_n += g / eps;
                        }
                    }
                }
                gt[cell] = acc_t as f32;
                gp[cell] = acc_p as f32;
                gn[cell] = acc_n as f32;
            }
        }
    }
    (gt, gp, gn)
}

/// Expands a coefficient map to a `[B, 1, H, W]` depth-cue tensor.
pub fn lpg_expand(coeffs: &PlaneCoeffMap, grid: &PatchGrid) -> Result<Tensor> {
    if grid.k != coeffs.k {
        return Err(Error::invalid(format!(
            "patch grid k={} does not match coefficient map k={}",
            grid.k, coeffs.k
        )));
    }
    let (b, _, rows, cols) = coeffs.theta.dims4()?;
    let data = expand_forward(
        coeffs.theta.data(),
        coeffs.phi.data(),
        coeffs.n4.data(),
        (b, rows, cols),
        grid,
        DENOM_EPS,
    );
    Tensor::new(vec![b, 1, rows * grid.k, cols * grid.k], data)
}

/// Channel widths of the 1x1 reduction stack for a `channels`-wide feature map.
///
/// Widths halve while the halved width stays above 3; one last layer maps to
/// exactly 3 channels (theta, phi, raw distance).
pub fn reduction_widths(channels: usize) -> Result<Vec<usize>> {
    if channels < 4 {
        return Err(Error::invalid(format!(
            "LPG reduction needs at least 4 input channels, got {channels}"
        )));
    }
    let mut widths = vec![channels];
    let mut c = channels;
    while c / 2 > 3 {
        c /= 2;
        widths.push(c);
    }
    widths.push(3);
    Ok(widths)
}

/// Initial point for [`fit_plane_to_patch`].
#[derive(Clone, Copy, Debug)]
pub enum FitInit {
    /// Start from the given `(theta, phi, n4)`.
    Given(f64, f64, f64),
    /// Closed-form start from a linear least-squares fit of `1 / c = a u + b v + d`.
    Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct PlaneFit {
    pub theta: f64,
    pub phi: f64,
    pub n4: f64,
    /// RMS difference between the fitted expansion and the patch.
    pub residual: f64,
}

fn patch_rms(patch: &[f64], grid: &PatchGrid, theta: f64, phi: f64, n4: f64) -> f64 {
    let n = angles_to_normal(theta, phi);
    let sse: f64 = patch
        .iter()
        .enumerate()
        .map(|(idx, &p)| {
            let (u, v) = grid.coord(idx / grid.k, idx % grid.k);
            let d = ray_plane_depth(n, n4, u, v, DENOM_EPS) - p;
            d * d
        })
        .sum();
    (sse / patch.len() as f64).sqrt()
}

fn linear_init(patch: &[f64], grid: &PatchGrid) -> Option<(f64, f64, f64)> {
    // Normal equations for inv_depth ~ a u + b v + d.
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for (idx, &p) in patch.iter().enumerate() {
        let (u, v) = grid.coord(idx / grid.k, idx % grid.k);
        let row = [u, v, 1.0];
        for r in 0..3 {
            for c in 0..3 {
                ata[r][c] += row[r] * row[c];
            }
            atb[r] += row[r] / p;
        }
    }
    let x = solve3(ata, atb)?;
    let norm = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    if !(norm > 0.0) {
        return None;
    }
    let n = [x[0] / norm, x[1] / norm, x[2] / norm];
    let (theta, phi) = normal_to_angles(n);
    Some((theta, phi, 1.0 / norm))
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for c in col..3 {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|c| a[row][c] * x[c]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Fits `(theta, phi, n4)` to a `k x k` patch of positive depths by minimizing
/// the mean squared expansion error with Adam-style gradient steps.
///
/// The step size decays polynomially (power 0.9) to zero over `iterations`.
/// Returns the best point seen.
pub fn fit_plane_to_patch(
    patch: &[f32],
    grid: &PatchGrid,
    init: FitInit,
    iterations: usize,
    lr: f64,
) -> Result<PlaneFit> {
    let k = grid.k;
    if patch.len() != k * k {
        return Err(Error::invalid(format!(
            "patch has {} values, expected {}",
            patch.len(),
            k * k
        )));
    }
    if let Some(bad) = patch.iter().find(|&&p| !(p > 0.0) || !p.is_finite()) {
        return Err(Error::invalid(format!(
            "patch entries must be positive and finite, found {bad}"
        )));
    }
    let target: Vec<f64> = patch.iter().map(|&p| p as f64).collect();
    let mean = target.iter().sum::<f64>() / target.len() as f64;
    let (mut theta, mut phi, mut n4) = match init {
        FitInit::Given(t, p, n) => (t, p, n),
        FitInit::Linear => linear_init(&target, grid).unwrap_or((0.0, 0.0, mean)),
    };

    let mut best = (patch_rms(&target, grid, theta, phi, n4), theta, phi, n4);
    let (b1, b2, adam_eps) = (0.9f64, 0.999f64, 1e-12f64);
    let mut m = [0.0f64; 3];
    let mut v = [0.0f64; 3];
    // Errors are measured relative to the patch mean so the step size is scale free.
    let scale = 1.0 / (mean * mean);
    for step in 0..iterations {
        let n = angles_to_normal(theta, phi);
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        let mut grad = [0.0f64; 3];
        for (idx, &p) in target.iter().enumerate() {
            let (u, v) = grid.coord(idx / k, idx % k);
            let denom = n[0] * u + n[1] * v + n[2];
            if denom <= DENOM_EPS {
                grad[2] += 2.0 * (n4 / DENOM_EPS - p) / DENOM_EPS;
                continue;
            }
            let r = 2.0 * (n4 / denom - p);
            let dc_dden = -n4 / (denom * denom);
            grad[0] += r * dc_dden * (ct * cp * u + ct * sp * v - st);
            grad[1] += r * dc_dden * (-st * sp * u + st * cp * v);
            grad[2] += r / denom;
        }
        let t = (step + 1) as i32;
        let step_lr = lr * (1.0 - step as f64 / iterations as f64).powf(0.9);
        let mut params = [theta, phi, n4];
        for i in 0..3 {
            let g = grad[i] * scale / target.len() as f64;
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mh = m[i] / (1.0 - b1.powi(t));
            let vh = v[i] / (1.0 - b2.powi(t));
            params[i] -= step_lr * mh / (vh.sqrt() + adam_eps);
        }
        [theta, phi, n4] = params;
        n4 = n4.max(1e-9);
        let rms = patch_rms(&target, grid, theta, phi, n4);
        if rms < best.0 {
            best = (rms, theta, phi, n4);
        }
    }
    let (residual, theta, phi, n4) = best;
    Ok(PlaneFit {
        theta,
        phi,
        n4,
        residual,
    })
}
