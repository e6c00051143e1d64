//! The integrated squared distance between the spatial and the covariate
//! relative-density estimates, its smooth-bootstrap calibration, the normal
//! approximation of its null distribution, and a term-by-term U-statistic
//! evaluation used to cross-check the statistic.

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::estimators::{
    covariate_relative_density, relative_density_spatial, EdgeCorrection, IntensitySurface, RelativeDensitySurface,
};
use crate::geometry::{Domain, Mesh, PointPattern, SpatialCovariateDistribution};
use crate::kernels::{eval_kh, select_b, select_h, Bandwidth1D, BandwidthMatrix, Kernel1D, Kernel2D};
use crate::rng::{stream, tags};
use crate::simulate::CellSampler;

/// Bootstrap size for data analyses.
pub const DEFAULT_REPLICATES: usize = 500;
/// Bootstrap size for power studies; rejection rates stabilize from here on.
pub const DEFAULT_POWER_REPLICATES: usize = 200;

#[derive(Clone, Debug, Serialize)]
pub struct TestConfig {
    pub kernel2d: Kernel2D,
    pub kernel1d: Kernel1D,
    /// Fixed `H`; `None` selects it from each pattern.
    #[serde(rename = "H")]
    pub h: Option<BandwidthMatrix>,
    /// Fixed `b`; `None` selects it from each pattern.
    pub b: Option<Bandwidth1D>,
    /// Pilot bandwidth; `None` uses the `b` selector on the data.
    pub pilot_t: Option<Bandwidth1D>,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub seed: u64,
    pub edge: EdgeCorrection,
    /// Reselect the data-driven bandwidths on every bootstrap pattern.
    pub reselect: bool,
}

impl Default for TestConfig {
    fn default() -> Self {
        TestConfig {
            kernel2d: Kernel2D::Gaussian,
            kernel1d: Kernel1D::Gaussian,
            h: None,
            b: None,
            pilot_t: None,
            replicates: DEFAULT_REPLICATES,
            seed: 0,
            edge: EdgeCorrection::Diggle,
            reselect: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestResult {
    #[serde(rename = "T")]
    pub statistic: f64,
    #[serde(rename = "B")]
    pub replicates: usize,
    #[serde(rename = "T_star")]
    pub t_star: Vec<f64>,
    pub p_value: f64,
    #[serde(rename = "H")]
    pub h: BandwidthMatrix,
    pub b: Bandwidth1D,
    pub t: Bandwidth1D,
    pub seed: u64,
    pub n: usize,
    /// Bootstrap patterns with no events (their statistic is 0).
    pub empty_replicates: usize,
    /// Bootstrap patterns on which bandwidth selection failed and the
    /// data bandwidths were used instead.
    pub fallback_replicates: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AsymptoticApprox {
    pub mu_t: f64,
    pub sigma2_t: f64,
    pub z_score: f64,
    pub p_normal: f64,
    /// The three summands of the mean: variance, cross-bias and squared-bias parts.
    pub mu_terms: [f64; 3],
    /// The two summands of the variance.
    pub sigma2_terms: [f64; 2],
}

/// `T = ∫_W (a − b)²` by the mesh midpoint rule.
pub fn statistic_t(a: &RelativeDensitySurface, b: &RelativeDensitySurface, mesh: &Mesh) -> Result<f64> {
    if a.values().len() != mesh.len() || b.values().len() != mesh.len() {
        return Err(Error::invalid("surfaces are not on the same mesh"));
    }
    let sq: Vec<f64> = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).collect();
    mesh.integrate(&sq)
}

/// Bandwidths used for one evaluation of the statistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bandwidths {
    #[serde(rename = "H")]
    pub h: BandwidthMatrix,
    pub b: Bandwidth1D,
}

/// Fixed bandwidths from the configuration, the selectors otherwise.
pub fn resolve_bandwidths(pattern: &PointPattern, config: &TestConfig) -> Result<Bandwidths> {
    let h = match config.h {
        Some(h) => h,
        None => select_h(pattern.points())?,
    };
    let b = match config.b {
        Some(b) => b,
        None => select_b(pattern.z_values())?,
    };
    Ok(Bandwidths { h, b })
}

/// Both relative-density surfaces and `T` for one pattern.
pub fn evaluate_statistic(
    pattern: &PointPattern,
    mesh: &Mesh,
    dist: &SpatialCovariateDistribution,
    config: &TestConfig,
    bw: &Bandwidths,
) -> Result<f64> {
    let spatial = relative_density_spatial(pattern, config.kernel2d, &bw.h, mesh, config.edge)?;
    let covariate = covariate_relative_density(pattern, dist, config.kernel1d, bw.b, mesh);
    statistic_t(&spatial, &covariate, mesh)
}

/// `λ̂(x) = ρ̂_t(Z(x))`: the covariate-based intensity, `n` times the
/// covariate relative density at bandwidth `t`.
pub fn pilot_intensity(
    pattern: &PointPattern,
    dist: &SpatialCovariateDistribution,
    kernel: Kernel1D,
    t: Bandwidth1D,
    mesh: &Mesh,
) -> Result<IntensitySurface> {
    if pattern.is_empty() {
        return Err(Error::invalid("cannot build pilot from empty pattern"));
    }
    let rel = covariate_relative_density(pattern, dist, kernel, t, mesh);
    let n = pattern.len() as f64;
    IntensitySurface::new(rel.values().iter().map(|v| v * n).collect(), mesh)
}

/// `(1 + #{T*_j ≥ T}) / (B + 1)`.
pub fn bootstrap_p_value(statistic: f64, t_star: &[f64]) -> f64 {
    let exceed = t_star.iter().filter(|&&t| t >= statistic).count();
    (1 + exceed) as f64 / (t_star.len() + 1) as f64
}

struct Replicate {
    statistic: f64,
    empty: bool,
    fallback: bool,
}

fn run_replicates(
    domain: &Domain,
    dist: &SpatialCovariateDistribution,
    config: &TestConfig,
    observed: &Bandwidths,
    sampler: &CellSampler,
) -> Result<Vec<Replicate>> {
    let mesh = domain.mesh();
    (0..config.replicates as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(config.seed, tags::BOOTSTRAP, 0, 0, j);
            let pattern = sampler.sample(&mut rng, domain);
            if pattern.is_empty() {
                return Ok(Replicate { statistic: 0.0, empty: true, fallback: false });
            }
            let (bw, fallback) = if config.reselect {
                match resolve_bandwidths(&pattern, config) {
                    Ok(bw) => (bw, false),
                    Err(_) => (*observed, true),
                }
            } else {
                (*observed, false)
            };
            let statistic = evaluate_statistic(&pattern, mesh, dist, config, &bw)?;
            Ok(Replicate { statistic, empty: false, fallback })
        })
        .collect()
}

/// Smooth-bootstrap test of the covariate model on `pattern`.
///
/// Each replicate draws `n* ~ Poisson(∫ λ̂)` events from the pilot intensity,
/// re-estimates both surfaces (reselecting data-driven bandwidths when
/// `config.reselect` is set) and recomputes the statistic. Replicate `j`
/// uses its own keyed random stream, so results do not depend on the
/// number of worker threads.
pub fn bootstrap_test(
    pattern: &PointPattern,
    domain: &Domain,
    dist: &SpatialCovariateDistribution,
    config: &TestConfig,
) -> Result<TestResult> {
    let t = match config.pilot_t {
        Some(t) => vec![t],
        None => Vec::new(),
    };
    let mut results = bootstrap_scan(pattern, domain, dist, config, &t)?;
    Ok(results.remove(0))
}

/// Runs the bootstrap once per pilot bandwidth in `pilots` (or once with the
/// default pilot when `pilots` is empty). The observed statistic and the
/// random streams are shared across pilots.
pub fn bootstrap_scan(
    pattern: &PointPattern,
    domain: &Domain,
    dist: &SpatialCovariateDistribution,
    config: &TestConfig,
    pilots: &[Bandwidth1D],
) -> Result<Vec<TestResult>> {
    if pattern.is_empty() {
        return Err(Error::invalid("cannot test an empty pattern"));
    }
    if config.replicates < 1 {
        return Err(Error::invalid("bootstrap needs at least one replicate"));
    }
    let mesh = domain.mesh();
    let observed = resolve_bandwidths(pattern, config)?;
    let statistic = evaluate_statistic(pattern, mesh, dist, config, &observed)?;
    let pilots = if pilots.is_empty() { vec![select_b(pattern.z_values())?] } else { pilots.to_vec() };

    pilots
        .into_iter()
        .map(|t| {
            let pilot = pilot_intensity(pattern, dist, config.kernel1d, t, mesh)?;
            let sampler = CellSampler::new(&pilot, mesh)?;
            let reps = run_replicates(domain, dist, config, &observed, &sampler)?;
            let t_star: Vec<f64> = reps.iter().map(|r| r.statistic).collect();
            Ok(TestResult {
                statistic,
                replicates: config.replicates,
                p_value: bootstrap_p_value(statistic, &t_star),
                t_star,
                h: observed.h,
                b: observed.b,
                t,
                seed: config.seed,
                n: pattern.len(),
                empty_replicates: reps.iter().filter(|r| r.empty).count(),
                fallback_replicates: reps.iter().filter(|r| r.fallback).count(),
            })
        })
        .collect()
}

// First difference along one axis at position k of a line with the given
// in-window flags: centered when possible, one-sided otherwise.
fn first_diff(f: impl Fn(usize) -> f64, ok: impl Fn(usize) -> bool, k: usize, n: usize, step: f64) -> f64 {
    let prev = k > 0 && ok(k - 1);
    let next = k + 1 < n && ok(k + 1);
    match (prev, next) {
        (true, true) => (f(k + 1) - f(k - 1)) / (2.0 * step),
        (false, true) => (f(k + 1) - f(k)) / step,
        (true, false) => (f(k) - f(k - 1)) / step,
        (false, false) => 0.0,
    }
}

fn second_diff(f: impl Fn(usize) -> f64, ok: impl Fn(usize) -> bool, k: usize, n: usize, step: f64) -> f64 {
    let has = |i: i64| i >= 0 && (i as usize) < n && ok(i as usize);
    let k = k as i64;
    let at = |i: i64| f(i as usize);
    let (fk, s2) = (at(k), step * step);
    if has(k - 1) && has(k + 1) {
        (at(k + 1) - 2.0 * fk + at(k - 1)) / s2
    } else if has(k + 1) && has(k + 2) {
        (fk - 2.0 * at(k + 1) + at(k + 2)) / s2
    } else if has(k - 1) && has(k - 2) {
        (fk - 2.0 * at(k - 1) + at(k - 2)) / s2
    } else {
        0.0
    }
}

/// `tr(H D²f)` at every in-window cell by finite differences; one-sided
/// stencils at the window boundary.
pub fn hessian_trace(values: &[f64], mesh: &Mesh, h: &BandwidthMatrix) -> Vec<f64> {
    let (nr, nc) = (mesh.nrows(), mesh.ncols());
    let inside = mesh.inside();
    let (dx, dy) = (mesh.dx(), mesh.dy());
    let mut fx = vec![0.0; mesh.len()];
    for r in 0..nr {
        for c in 0..nc {
            if inside[r * nc + c] {
                fx[r * nc + c] = first_diff(|k| values[r * nc + k], |k| inside[r * nc + k], c, nc, dx);
            }
        }
    }
    let mut out = vec![0.0; mesh.len()];
    for r in 0..nr {
        for c in 0..nc {
            let i = r * nc + c;
            if !inside[i] {
                continue;
            }
            let fxx = second_diff(|k| values[r * nc + k], |k| inside[r * nc + k], c, nc, dx);
            let fyy = second_diff(|k| values[k * nc + c], |k| inside[k * nc + c], r, nr, dy);
            let fxy =
                if h.h12 != 0.0 { first_diff(|k| fx[k * nc + c], |k| inside[k * nc + c], r, nr, dy) } else { 0.0 };
            out[i] = h.h11 * fxx + 2.0 * h.h12 * fxy + h.h22 * fyy;
        }
    }
    out
}

// C(x) = Σ_y f(y) (K∘K)(H^{-1/2}(x − y)) |cell| over in-window cells.
fn kk_smooth(values: &[f64], mesh: &Mesh, kernel: Kernel2D, h: &BandwidthMatrix) -> Vec<f64> {
    let (nr, nc) = (mesh.nrows(), mesh.ncols());
    let inside = mesh.inside();
    let area = mesh.cell_area();
    let mut out = vec![0.0; mesh.len()];
    if h.is_diagonal() {
        let f = kernel.factor();
        let (sx, sy) = (h.h11.sqrt(), h.h22.sqrt());
        let tx: Vec<f64> =
            (0..2 * nc - 1).map(|k| f.self_convolution((k as f64 - (nc as f64 - 1.0)) * mesh.dx() / sx)).collect();
        let ty: Vec<f64> =
            (0..2 * nr - 1).map(|k| f.self_convolution((k as f64 - (nr as f64 - 1.0)) * mesh.dy() / sy)).collect();
        let mut rows = vec![0.0; mesh.len()];
        for r2 in 0..nr {
            for c in 0..nc {
                rows[r2 * nc + c] = (0..nc)
                    .filter(|&c2| inside[r2 * nc + c2])
                    .map(|c2| tx[c + nc - 1 - c2] * values[r2 * nc + c2])
                    .sum();
            }
        }
        for r in 0..nr {
            for c in 0..nc {
                if inside[r * nc + c] {
                    out[r * nc + c] = (0..nr).map(|r2| ty[r + nr - 1 - r2] * rows[r2 * nc + c]).sum::<f64>() * area;
                }
            }
        }
        return out;
    }
    // K∘K reaches twice as far as K.
    let [bx, by] = h.support_box(kernel);
    let reach_c = (2.0 * bx / mesh.dx()).ceil() as i64;
    let reach_r = (2.0 * by / mesh.dy()).ceil() as i64;
    for r in 0..nr {
        for c in 0..nc {
            if !inside[r * nc + c] {
                continue;
            }
            let x = mesh.cell_center(r, c);
            let mut s = 0.0;
            for r2 in (r as i64 - reach_r).max(0)..=(r as i64 + reach_r).min(nr as i64 - 1) {
                for c2 in (c as i64 - reach_c).max(0)..=(c as i64 + reach_c).min(nc as i64 - 1) {
                    let j = r2 as usize * nc + c2 as usize;
                    if inside[j] {
                        let y = mesh.cell_center(r2 as usize, c2 as usize);
                        let u = h.standardize([x[0] - y[0], x[1] - y[1]]);
                        s += values[j] * kernel.self_convolutions(u).kk;
                    }
                }
            }
            out[r * nc + c] = s * area;
        }
    }
    out
}

/// Mean and variance of `T` under the null with `λ₀` replaced by the
/// spatial estimate, the expected count by `n` and `E[N⁻¹ 1{N≠0}]` by
/// `1/n`. Diagnostic only: the normal limit is reached slowly.
pub fn asymptotic_moments(
    spatial: &RelativeDensitySurface,
    kernel: Kernel2D,
    h: &BandwidthMatrix,
    mesh: &Mesh,
    n: usize,
    statistic: f64,
) -> Result<AsymptoticApprox> {
    if n == 0 {
        return Err(Error::invalid("asymptotic moments need n >= 1"));
    }
    let lam = spatial.values();
    if lam.len() != mesh.len() {
        return Err(Error::invalid("surface is not on the mesh"));
    }
    let a_m = 1.0 / n as f64;
    let (rk, mu2) = kernel.constants();
    let scale = h.det_inv_sqrt();
    let tr = hessian_trace(lam, mesh, h);

    let cross: Vec<f64> = lam.iter().zip(&tr).map(|(l, t)| l * t).collect();
    let squared: Vec<f64> = tr.iter().map(|t| t * t).collect();
    let mu_terms =
        [a_m * scale * rk, 0.5 * mu2 * mesh.integrate(&cross)?, 0.25 * mu2 * mu2 * mesh.integrate(&squared)?];

    let smooth = kk_smooth(lam, mesh, kernel, h);
    let triple: Vec<f64> = lam.iter().zip(&smooth).map(|(l, s)| l * l * s).collect();
    let lam_sq: Vec<f64> = lam.iter().map(|l| l * l).collect();
    let sigma2_terms = [a_m * scale * mesh.integrate(&triple)?, 2.0 * a_m * scale * mesh.integrate(&lam_sq)? * rk];

    let mu_t: f64 = mu_terms.iter().sum();
    let sigma2_t: f64 = sigma2_terms.iter().sum();
    if !(sigma2_t > 0.0) {
        return Err(Error::numeric("degenerate variance"));
    }
    let z_score = (statistic - mu_t) / sigma2_t.sqrt();
    let p_normal = 0.5 * erfc(z_score / std::f64::consts::SQRT_2);
    Ok(AsymptoticApprox { mu_t, sigma2_t, z_score, p_normal, mu_terms, sigma2_terms })
}

/// The six addends of the U-statistic expansion of `T` (without edge
/// correction), each already divided by `N²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UStatTerms {
    /// `Σ_i ∫ K_H(x − X_i)²`.
    pub spatial_diagonal: f64,
    /// `Σ_i Σ_{j≠i} ∫ K_H(x − X_i) K_H(x − X_j)`.
    pub spatial_cross: f64,
    /// `Σ_i ∫ (L_b(Z(x) − Z_i) / g*(Z_i))²`.
    pub covariate_diagonal: f64,
    /// `Σ_i Σ_{j≠i} ∫ L_b(Z(x) − Z_i) L_b(Z(x) − Z_j) / (g*(Z_i) g*(Z_j))`.
    pub covariate_cross: f64,
    /// `−2 Σ_i ∫ K_H(x − X_i) L_b(Z(x) − Z_i) / g*(Z_i)`.
    pub mixed_diagonal: f64,
    /// `−2 Σ_i Σ_{j≠i} ∫ K_H(x − X_i) L_b(Z(x) − Z_j) / g*(Z_j)`.
    pub mixed_cross: f64,
}

impl UStatTerms {
    pub fn total(&self) -> f64 {
        self.spatial_diagonal
            + self.spatial_cross
            + self.covariate_diagonal
            + self.covariate_cross
            + self.mixed_diagonal
            + self.mixed_cross
    }
}

/// Evaluates the U-statistic expansion term by term from direct pairwise
/// kernel products on the mesh. Shares no code with the surface estimators,
/// so it serves as an independent route to `T` with `p_H ≡ 1`.
pub fn ustat_terms(
    pattern: &PointPattern,
    dist: &SpatialCovariateDistribution,
    kernel2d: Kernel2D,
    h: &BandwidthMatrix,
    kernel1d: Kernel1D,
    b: Bandwidth1D,
    mesh: &Mesh,
) -> Result<UStatTerms> {
    let n = pattern.len();
    if n == 0 {
        return Err(Error::invalid("U-statistic needs at least one point"));
    }
    let cells: Vec<(usize, [f64; 2], f64)> = (0..mesh.nrows())
        .flat_map(|r| (0..mesh.ncols()).map(move |c| (r, c)))
        .filter(|&(r, c)| mesh.inside()[r * mesh.ncols() + c])
        .map(|(r, c)| (r, mesh.cell_center(r, c), mesh.z()[r * mesh.ncols() + c]))
        .collect();
    let spatial: Vec<Vec<f64>> = pattern
        .points()
        .iter()
        .map(|p| cells.iter().map(|(_, x, _)| eval_kh(kernel2d, h, [x[0] - p[0], x[1] - p[1]])).collect())
        .collect();
    let covariate: Vec<Vec<f64>> = pattern
        .z_values()
        .iter()
        .map(|&zi| {
            let w = 1.0 / dist.gstar(zi);
            cells.iter().map(|&(_, _, z)| w * kernel1d.eval_scaled(z - zi, b.get())).collect()
        })
        .collect();
    let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() * mesh.cell_area() };

    let mut t = UStatTerms {
        spatial_diagonal: 0.0,
        spatial_cross: 0.0,
        covariate_diagonal: 0.0,
        covariate_cross: 0.0,
        mixed_diagonal: 0.0,
        mixed_cross: 0.0,
    };
    for i in 0..n {
        t.spatial_diagonal += dot(&spatial[i], &spatial[i]);
        t.covariate_diagonal += dot(&covariate[i], &covariate[i]);
        t.mixed_diagonal -= 2.0 * dot(&spatial[i], &covariate[i]);
        for j in (0..n).filter(|&j| j != i) {
            t.spatial_cross += dot(&spatial[i], &spatial[j]);
            t.covariate_cross += dot(&covariate[i], &covariate[j]);
            t.mixed_cross -= 2.0 * dot(&spatial[i], &covariate[j]);
        }
    }
    let n2 = (n * n) as f64;
    t.spatial_diagonal /= n2;
    t.spatial_cross /= n2;
    t.covariate_diagonal /= n2;
    t.covariate_cross /= n2;
    t.mixed_diagonal /= n2;
    t.mixed_cross /= n2;
    Ok(t)
}

pub fn ustat_t_oracle(
    pattern: &PointPattern,
    dist: &SpatialCovariateDistribution,
    kernel2d: Kernel2D,
    h: &BandwidthMatrix,
    kernel1d: Kernel1D,
    b: Bandwidth1D,
    mesh: &Mesh,
) -> Result<f64> {
    Ok(ustat_terms(pattern, dist, kernel2d, h, kernel1d, b, mesh)?.total())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CovariateGrid, RasterGeometry};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn unit_domain(n: usize) -> Domain {
        Domain::from_grid(CovariateGrid::from_fn(RasterGeometry::unit_square(n), |p| p[0]).unwrap()).unwrap()
    }

    fn constant(mesh: &Mesh, v: f64) -> RelativeDensitySurface {
        RelativeDensitySurface::from_values(vec![v; mesh.len()], 1)
    }

    #[test]
    fn statistic_simple_cases() {
        let domain = unit_domain(32);
        let mesh = domain.mesh();
        let a = constant(mesh, 2.0);
        assert_eq!(statistic_t(&a, &a, mesh).unwrap(), 0.0);
        let b = constant(mesh, 1.0);
        assert!((statistic_t(&a, &b, mesh).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(statistic_t(&a, &b, mesh).unwrap(), statistic_t(&b, &a, mesh).unwrap());

        // Differ by 0.5 on the first 5 rows: area 5/32, T = 0.25 * 5/32.
        let mut vals = vec![1.0; mesh.len()];
        for v in vals.iter_mut().take(5 * 32) {
            *v += 0.5;
        }
        let c = RelativeDensitySurface::from_values(vals, 1);
        assert!((statistic_t(&c, &b, mesh).unwrap() - 0.25 * 5.0 / 32.0).abs() < 1e-14);

        let other = unit_domain(16);
        assert!(statistic_t(&constant(other.mesh(), 1.0), &b, mesh).is_err());
    }

    #[test]
    fn p_value_boundaries() {
        let reps: Vec<f64> = (0..199).map(|i| i as f64 / 1000.0).collect();
        assert_eq!(bootstrap_p_value(10.0, &reps), 1.0 / 200.0);
        assert_eq!(bootstrap_p_value(-1.0, &reps), 1.0);
        assert_eq!(bootstrap_p_value(0.0, &reps), 1.0);
        assert_eq!(DEFAULT_REPLICATES, 500);
        assert_eq!(DEFAULT_POWER_REPLICATES, 200);
    }

    #[test]
    fn homogeneous_moments_closed_form() {
        let domain = unit_domain(64);
        let mesh = domain.mesh();
        let h = BandwidthMatrix::isotropic(0.1).unwrap();
        let lam = constant(mesh, 1.0);
        let approx = asymptotic_moments(&lam, Kernel2D::Gaussian, &h, mesh, 100, 0.0).unwrap();
        let expected = (1.0 / 100.0) * (1.0 / 0.01) * (1.0 / (4.0 * PI));
        assert_relative_eq!(approx.mu_t, expected, max_relative = 1e-6);
        assert_eq!(approx.mu_terms[1], 0.0);
        assert_eq!(approx.mu_terms[2], 0.0);
        assert_relative_eq!(approx.sigma2_terms[1], 2.0 * expected, max_relative = 1e-6);

        let doubled = asymptotic_moments(&lam, Kernel2D::Gaussian, &h, mesh, 200, 0.0).unwrap();
        assert_relative_eq!(doubled.mu_terms[0], 0.5 * approx.mu_terms[0], max_relative = 1e-12);
        assert_relative_eq!(doubled.sigma2_terms[0], 0.5 * approx.sigma2_terms[0], max_relative = 1e-12);
        assert_relative_eq!(doubled.sigma2_terms[1], 0.5 * approx.sigma2_terms[1], max_relative = 1e-12);
        assert!(approx.p_normal > 0.0 && approx.p_normal < 1.0);
    }

    #[test]
    fn kk_smooth_diagonal_matches_direct() {
        let domain = unit_domain(20);
        let mesh = domain.mesh();
        let vals: Vec<f64> = (0..mesh.len()).map(|i| 1.0 + (i % 7) as f64 * 0.1).collect();
        // A tiny off-diagonal entry forces the direct path on nearly the same H.
        let diag = BandwidthMatrix::diagonal(0.01, 0.02).unwrap();
        let skew = BandwidthMatrix::new(0.01, 1e-12, 0.02).unwrap();
        for kernel in [Kernel2D::Gaussian, Kernel2D::Epanechnikov] {
            let a = kk_smooth(&vals, mesh, kernel, &diag);
            let b = kk_smooth(&vals, mesh, kernel, &skew);
            for (x, y) in a.iter().zip(&b) {
                assert_relative_eq!(*x, *y, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn hessian_of_quadratic() {
        let domain = unit_domain(40);
        let mesh = domain.mesh();
        let mut vals = Vec::new();
        for r in 0..40 {
            for c in 0..40 {
                let p = mesh.cell_center(r, c);
                vals.push(3.0 * p[0] * p[0] - p[0] * p[1] + 2.0 * p[1] * p[1]);
            }
        }
        let h = BandwidthMatrix::new(0.02, 0.005, 0.01).unwrap();
        let tr = hessian_trace(&vals, mesh, &h);
        // D² = [[6, -1], [-1, 4]] -> tr(H D²) = 0.02*6 + 2*0.005*(-1) + 0.01*4 = 0.15
        for v in &tr {
            assert!((v - 0.15).abs() < 1e-8, "{v}");
        }
    }

    #[test]
    fn pilot_scaling() {
        let domain = unit_domain(64);
        let mesh = domain.mesh();
        let dist = SpatialCovariateDistribution::with_default_smoothing(mesh).unwrap();
        let pts = vec![[0.2, 0.2], [0.4, 0.7], [0.8, 0.3], [0.55, 0.5]];
        let pat = PointPattern::new(pts, &domain).unwrap();
        let t = Bandwidth1D::new(0.15).unwrap();
        let pilot = pilot_intensity(&pat, &dist, Kernel1D::Gaussian, t, mesh).unwrap();
        let rel = covariate_relative_density(&pat, &dist, Kernel1D::Gaussian, t, mesh);
        for (p, r) in pilot.values().iter().zip(rel.values()) {
            assert_relative_eq!(*p, 4.0 * r, max_relative = 1e-14);
        }
        let doubled = pilot_intensity(&pat.repeated(2), &dist, Kernel1D::Gaussian, t, mesh).unwrap();
        for (p, d) in pilot.values().iter().zip(doubled.values()) {
            assert_relative_eq!(2.0 * p, *d, max_relative = 1e-13);
        }
        let total = pilot.integral(mesh).unwrap();
        assert!((total / 4.0 - 1.0).abs() < 0.1, "{total}");
        assert!(pilot_intensity(&PointPattern::empty(), &dist, Kernel1D::Gaussian, t, mesh).is_err());
    }

    #[test]
    fn ustat_single_point_has_no_cross_terms() {
        let domain = unit_domain(64);
        let mesh = domain.mesh();
        let dist = SpatialCovariateDistribution::with_default_smoothing(mesh).unwrap();
        let pat = PointPattern::new(vec![[0.4, 0.6]], &domain).unwrap();
        let h = BandwidthMatrix::isotropic(0.08).unwrap();
        let b = Bandwidth1D::new(0.1).unwrap();
        let terms = ustat_terms(&pat, &dist, Kernel2D::Gaussian, &h, Kernel1D::Gaussian, b, mesh).unwrap();
        assert_eq!(terms.spatial_cross, 0.0);
        assert_eq!(terms.covariate_cross, 0.0);
        assert_eq!(terms.mixed_cross, 0.0);
        let config = TestConfig { edge: EdgeCorrection::None, ..TestConfig::default() };
        let t = evaluate_statistic(&pat, mesh, &dist, &config, &Bandwidths { h, b }).unwrap();
        assert_relative_eq!(terms.total(), t, max_relative = 1e-9);
    }

    #[test]
    fn ustat_duplicates_shift_terms_not_total() {
        let domain = unit_domain(48);
        let mesh = domain.mesh();
        let dist = SpatialCovariateDistribution::with_default_smoothing(mesh).unwrap();
        let pat = PointPattern::new(vec![[0.3, 0.6], [0.7, 0.2], [0.5, 0.5]], &domain).unwrap();
        let dup = pat.repeated(2);
        let h = BandwidthMatrix::isotropic(0.1).unwrap();
        let b = Bandwidth1D::new(0.1).unwrap();
        let a = ustat_terms(&pat, &dist, Kernel2D::Gaussian, &h, Kernel1D::Gaussian, b, mesh).unwrap();
        let d = ustat_terms(&dup, &dist, Kernel2D::Gaussian, &h, Kernel1D::Gaussian, b, mesh).unwrap();
        assert!((a.spatial_diagonal - d.spatial_diagonal).abs() > 1e-3 * a.spatial_diagonal);
        assert!((a.spatial_cross - d.spatial_cross).abs() > 1e-3 * a.spatial_cross.abs());
        assert_relative_eq!(a.total(), d.total(), max_relative = 1e-9);
    }

    #[test]
    fn bootstrap_small_run_is_reproducible() {
        let domain = unit_domain(24);
        let mesh = domain.mesh();
        let dist = SpatialCovariateDistribution::with_default_smoothing(mesh).unwrap();
        let pts: Vec<[f64; 2]> =
            (0..30).map(|i| [((i * 37) % 29) as f64 / 29.0 + 0.01, ((i * 11) % 31) as f64 / 31.0 + 0.01]).collect();
        let pat = PointPattern::new(pts, &domain).unwrap();
        let config = TestConfig { replicates: 19, seed: 5, ..TestConfig::default() };
        let a = bootstrap_test(&pat, &domain, &dist, &config).unwrap();
        let b = bootstrap_test(&pat, &domain, &dist, &config).unwrap();
        assert_eq!(a, b);
        assert!(a.p_value >= 1.0 / 20.0 && a.p_value <= 1.0);
        assert!(a.statistic >= 0.0 && a.t_star.iter().all(|&t| t >= 0.0));
        assert_eq!(a.t_star.len(), 19);

        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let c = pool.install(|| bootstrap_test(&pat, &domain, &dist, &config).unwrap());
        assert_eq!(a, c);

        let zero = TestConfig { replicates: 0, ..config };
        assert!(bootstrap_test(&pat, &domain, &dist, &zero).is_err());
        assert!(bootstrap_test(&PointPattern::empty(), &domain, &dist, &config).is_err());
    }
}
