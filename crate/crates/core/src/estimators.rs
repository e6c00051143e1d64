//! Relative-density estimators on the quadrature mesh.
//!
//! - Spatial: the edge-corrected kernel intensity estimate divided by the
//!   number of events, `λ̂₀,H(x) = Σ K_H(x − X_i) / (p_H(x) N)`.
//! - Covariate: the weighted univariate density of the covariate at the
//!   events, `f̂_b(z) = g*(z) N⁻¹ Σ L_b(z − Z_i) / g*(Z_i)`, mapped back to
//!   space through `ρ̂₀,b(Z(x)) = f̂_b(Z(x)) / g*(Z(x))`.
//!
//! Empty patterns yield zero surfaces flagged as empty.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{Mesh, PointPattern, SpatialCovariateDistribution, NO_LEVEL};
use crate::kernels::{eval_kh, Bandwidth1D, BandwidthMatrix, Kernel1D, Kernel2D};

/// Edge-correction mass below which the bandwidth is declared too large.
const MIN_EDGE_MASS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeCorrection {
    /// Divide by `p_H(x) = ∫_W K_H(x − y) dy`.
    #[default]
    Diggle,
    /// `p_H ≡ 1`.
    None,
}

/// Gridded intensity (events per unit area); zero outside the window.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensitySurface {
    values: Vec<f64>,
}

impl IntensitySurface {
    pub fn new(values: Vec<f64>, mesh: &Mesh) -> Result<Self> {
        if values.len() != mesh.len() {
            return Err(Error::invalid(format!("intensity has {} cells, mesh has {}", values.len(), mesh.len())));
        }
        let mut values = values;
        for (v, &ins) in values.iter_mut().zip(mesh.inside()) {
            if !ins {
                *v = 0.0;
            } else if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::invalid(format!("intensity values must be finite and nonnegative, got {v}")));
            }
        }
        Ok(IntensitySurface { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn integral(&self, mesh: &Mesh) -> Result<f64> {
        mesh.integrate(&self.values)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        IntensitySurface { values: self.values.iter().map(|v| v * factor).collect() }
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Gridded relative density `λ̂₀` with the event count used to normalize it.
#[derive(Clone, Debug, PartialEq)]
pub struct RelativeDensitySurface {
    values: Vec<f64>,
    n: usize,
}

impl RelativeDensitySurface {
    fn zero(mesh: &Mesh) -> Self {
        RelativeDensitySurface { values: vec![0.0; mesh.len()], n: 0 }
    }

    pub fn from_values(values: Vec<f64>, n: usize) -> Self {
        RelativeDensitySurface { values, n }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Set when built from an empty pattern; the surface is then identically zero.
    pub fn is_empty_flagged(&self) -> bool {
        self.n == 0
    }

    pub fn integral(&self, mesh: &Mesh) -> Result<f64> {
        mesh.integrate(&self.values)
    }
}

/// `p_H(x)`: quadrature of `K_H(x − ·)` over the window, capped at 1.
pub fn edge_correction(kernel: Kernel2D, h: &BandwidthMatrix, mesh: &Mesh, x: [f64; 2]) -> Result<f64> {
    let mut sum = 0.0;
    for row in 0..mesh.nrows() {
        for col in 0..mesh.ncols() {
            if mesh.inside()[row * mesh.ncols() + col] {
                let c = mesh.cell_center(row, col);
                sum += eval_kh(kernel, h, [x[0] - c[0], x[1] - c[1]]);
            }
        }
    }
    finish_edge_mass(sum * mesh.cell_area())
}

fn finish_edge_mass(mass: f64) -> Result<f64> {
    if mass <= MIN_EDGE_MASS {
        Err(Error::numeric("bandwidth too large for window"))
    } else {
        Ok(mass.min(1.0))
    }
}

// Offsets -(n-1)..=(n-1) of the scaled univariate kernel, indexed by offset + n - 1.
fn offset_table(kernel: Kernel1D, n: usize, step: f64, scale: f64) -> Vec<f64> {
    (0..2 * n - 1).map(|k| kernel.eval_scaled((k as f64 - (n as f64 - 1.0)) * step, scale)).collect()
}

/// `p_H` at every mesh cell (1 outside the window).
pub fn edge_correction_surface(kernel: Kernel2D, h: &BandwidthMatrix, mesh: &Mesh) -> Result<Vec<f64>> {
    let (nr, nc) = (mesh.nrows(), mesh.ncols());
    let inside = mesh.inside();
    let area = mesh.cell_area();
    let mut out = vec![1.0; mesh.len()];

    if h.is_diagonal() {
        let f = kernel.factor();
        let kx = offset_table(f, nc, mesh.dx(), h.h11.sqrt());
        let ky = offset_table(f, nr, mesh.dy(), h.h22.sqrt());
        if mesh.all_inside() {
            let px: Vec<f64> = (0..nc).map(|c| (0..nc).map(|c2| kx[c + nc - 1 - c2]).sum()).collect();
            let py: Vec<f64> = (0..nr).map(|r| (0..nr).map(|r2| ky[r + nr - 1 - r2]).sum()).collect();
            for r in 0..nr {
                for c in 0..nc {
                    out[r * nc + c] = finish_edge_mass(px[c] * py[r] * area)?;
                }
            }
            return Ok(out);
        }
        // Row pass then column pass of the separable kernel over the mask.
        let mut rows = vec![0.0; mesh.len()];
        for r2 in 0..nr {
            for c in 0..nc {
                rows[r2 * nc + c] = (0..nc).filter(|&c2| inside[r2 * nc + c2]).map(|c2| kx[c + nc - 1 - c2]).sum();
            }
        }
        for r in 0..nr {
            for c in 0..nc {
                if inside[r * nc + c] {
                    let s: f64 = (0..nr).map(|r2| ky[r + nr - 1 - r2] * rows[r2 * nc + c]).sum();
                    out[r * nc + c] = finish_edge_mass(s * area)?;
                }
            }
        }
        return Ok(out);
    }

    let [bx, by] = h.support_box(kernel);
    let reach_c = (bx / mesh.dx()).ceil() as i64;
    let reach_r = (by / mesh.dy()).ceil() as i64;
    for r in 0..nr {
        for c in 0..nc {
            if !inside[r * nc + c] {
                continue;
            }
            let x = mesh.cell_center(r, c);
            let mut s = 0.0;
            for r2 in (r as i64 - reach_r).max(0)..=(r as i64 + reach_r).min(nr as i64 - 1) {
                for c2 in (c as i64 - reach_c).max(0)..=(c as i64 + reach_c).min(nc as i64 - 1) {
                    let (r2, c2) = (r2 as usize, c2 as usize);
                    if inside[r2 * nc + c2] {
                        let y = mesh.cell_center(r2, c2);
                        s += eval_kh(kernel, h, [x[0] - y[0], x[1] - y[1]]);
                    }
                }
            }
            out[r * nc + c] = finish_edge_mass(s * area)?;
        }
    }
    Ok(out)
}

/// `Σ_i K_H(x − X_i)` at every mesh cell center (0 outside the window).
/// Points are accumulated in pattern order.
pub fn kernel_sum_surface(points: &[[f64; 2]], kernel: Kernel2D, h: &BandwidthMatrix, mesh: &Mesh) -> Vec<f64> {
    let (nr, nc) = (mesh.nrows(), mesh.ncols());
    let mut out = vec![0.0; mesh.len()];
    if h.is_diagonal() {
        let f = kernel.factor();
        let (sx, sy) = (h.h11.sqrt(), h.h22.sqrt());
        let xs = mesh.col_centers();
        let ys = mesh.row_centers();
        let ax: Vec<Vec<f64>> =
            points.iter().map(|p| xs.iter().map(|&x| f.eval_scaled(x - p[0], sx)).collect()).collect();
        let ay: Vec<Vec<f64>> =
            points.iter().map(|p| ys.iter().map(|&y| f.eval_scaled(y - p[1], sy)).collect()).collect();
        for r in 0..nr {
            let row = &mut out[r * nc..(r + 1) * nc];
            for (axi, ayi) in ax.iter().zip(&ay) {
                let wy = ayi[r];
                if wy == 0.0 {
                    continue;
                }
                for (o, &wx) in row.iter_mut().zip(axi) {
                    *o += wy * wx;
                }
            }
        }
    } else {
        let [bx, by] = h.support_box(kernel);
        let rect = mesh.rect();
        for p in points {
            let c_lo = (((p[0] - bx - rect.xmin) / mesh.dx()).floor().max(0.0) as usize).min(nc - 1);
            let c_hi = (((p[0] + bx - rect.xmin) / mesh.dx()).ceil().max(0.0) as usize).min(nc - 1);
            let r_lo = (((p[1] - by - rect.ymin) / mesh.dy()).floor().max(0.0) as usize).min(nr - 1);
            let r_hi = (((p[1] + by - rect.ymin) / mesh.dy()).ceil().max(0.0) as usize).min(nr - 1);
            for r in r_lo..=r_hi {
                for c in c_lo..=c_hi {
                    let x = mesh.cell_center(r, c);
                    out[r * nc + c] += eval_kh(kernel, h, [x[0] - p[0], x[1] - p[1]]);
                }
            }
        }
    }
    for (o, &ins) in out.iter_mut().zip(mesh.inside()) {
        if !ins {
            *o = 0.0;
        }
    }
    out
}

/// Diggle's edge-corrected kernel intensity `Σ K_H(x − X_i) / p_H(x)` at `x`.
pub fn diggle_intensity(
    pattern: &PointPattern,
    kernel: Kernel2D,
    h: &BandwidthMatrix,
    mesh: &Mesh,
    x: [f64; 2],
    edge: EdgeCorrection,
) -> Result<f64> {
    if pattern.is_empty() {
        return Err(Error::invalid("empty pattern"));
    }
    let sum: f64 = pattern.points().iter().map(|p| eval_kh(kernel, h, [x[0] - p[0], x[1] - p[1]])).sum();
    let p = match edge {
        EdgeCorrection::Diggle => edge_correction(kernel, h, mesh, x)?,
        EdgeCorrection::None => 1.0,
    };
    Ok(sum / p)
}

/// `λ̂₀,H = λ̂ᴰ_H / N` on the mesh.
pub fn relative_density_spatial(
    pattern: &PointPattern,
    kernel: Kernel2D,
    h: &BandwidthMatrix,
    mesh: &Mesh,
    edge: EdgeCorrection,
) -> Result<RelativeDensitySurface> {
    if pattern.is_empty() {
        return Ok(RelativeDensitySurface::zero(mesh));
    }
    let n = pattern.len();
    let mut values = kernel_sum_surface(pattern.points(), kernel, h, mesh);
    match edge {
        EdgeCorrection::Diggle => {
            let p = edge_correction_surface(kernel, h, mesh)?;
            for (v, p) in values.iter_mut().zip(&p) {
                *v /= p * n as f64;
            }
        }
        EdgeCorrection::None => {
            for v in &mut values {
                *v /= n as f64;
            }
        }
    }
    Ok(RelativeDensitySurface { values, n })
}

/// Covariate-based estimate built from the event covariate values.
#[derive(Clone, Debug)]
pub struct CovariateEstimate<'a> {
    dist: &'a SpatialCovariateDistribution,
    kernel: Kernel1D,
    b: f64,
    z: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> CovariateEstimate<'a> {
    pub fn new(
        pattern: &PointPattern,
        dist: &'a SpatialCovariateDistribution,
        kernel: Kernel1D,
        b: Bandwidth1D,
    ) -> Self {
        let z = pattern.z_values().to_vec();
        let weights = z.iter().map(|&zi| 1.0 / dist.gstar(zi)).collect();
        CovariateEstimate { dist, kernel, b: b.get(), z, weights }
    }

    pub fn n(&self) -> usize {
        self.z.len()
    }

    /// `N⁻¹ Σ L_b(z − Z_i) / g*(Z_i)`, which equals `f̂_b(z) / g*(z)`: the
    /// factor `g*(z)` of the density estimate cancels.
    pub fn relative(&self, z: f64) -> f64 {
        if self.z.is_empty() {
            return 0.0;
        }
        let s: f64 =
            self.z.iter().zip(&self.weights).map(|(&zi, &w)| w * self.kernel.eval_scaled(z - zi, self.b)).sum();
        s / self.z.len() as f64
    }

    /// `f̂_b(z)`.
    pub fn density(&self, z: f64) -> f64 {
        self.dist.gstar(z) * self.relative(z)
    }

    /// `ρ̂_b(z) = f̂_b(z) n / g*(z)` with the expected count estimated by `n`.
    pub fn rho(&self, z: f64) -> f64 {
        self.relative(z) * self.z.len() as f64
    }
}

/// `f̂_b(z)`; zero for an empty pattern.
pub fn covariate_density(
    pattern: &PointPattern,
    dist: &SpatialCovariateDistribution,
    kernel: Kernel1D,
    b: Bandwidth1D,
    z: f64,
) -> f64 {
    CovariateEstimate::new(pattern, dist, kernel, b).density(z)
}

/// `ρ̂₀,b(Z(x))` at every mesh cell. Evaluated once per distinct covariate
/// value, so cells sharing a covariate value carry identical values.
pub fn covariate_relative_density(
    pattern: &PointPattern,
    dist: &SpatialCovariateDistribution,
    kernel: Kernel1D,
    b: Bandwidth1D,
    mesh: &Mesh,
) -> RelativeDensitySurface {
    if pattern.is_empty() {
        return RelativeDensitySurface::zero(mesh);
    }
    let est = CovariateEstimate::new(pattern, dist, kernel, b);
    let by_level: Vec<f64> = mesh.levels().iter().map(|&z| est.relative(z)).collect();
    let values = mesh.level_of().iter().map(|&l| if l == NO_LEVEL { 0.0 } else { by_level[l as usize] }).collect();
    RelativeDensitySurface { values, n: pattern.len() }
}
