//! Kernel families, bandwidth objects and rule-of-thumb bandwidth selectors.
//!
//! Both bivariate families are products of a univariate profile, so every
//! bivariate quantity (roughness, self-convolutions, evaluation with a
//! diagonal bandwidth matrix) factors into univariate pieces.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radius (in standardized units) beyond which the Gaussian kernel is below
/// `1e-17` of its peak and is treated as zero by truncated convolutions.
const GAUSSIAN_CUTOFF: f64 = 9.0;

// 5-point Gauss-Legendre rule on [-1, 1]; exact for polynomials of degree <= 9.
const GL5_NODES: [f64; 5] =
    [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
const GL5_WEIGHTS: [f64; 5] =
    [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel1D {
    #[default]
    Gaussian,
    Epanechnikov,
}

impl Kernel1D {
    #[inline]
    pub fn eval(self, t: f64) -> f64 {
        match self {
            Kernel1D::Gaussian => (-0.5 * t * t).exp() / (2.0 * PI).sqrt(),
            Kernel1D::Epanechnikov => {
                if t.abs() <= 1.0 {
                    0.75 * (1.0 - t * t)
                } else {
                    0.0
                }
            }
        }
    }

    /// `L_h(t) = L(t / h) / h`.
    #[inline]
    pub fn eval_scaled(self, t: f64, h: f64) -> f64 {
        self.eval(t / h) / h
    }

    /// `R(L) = ∫ L²`.
    pub fn roughness(self) -> f64 {
        match self {
            Kernel1D::Gaussian => 1.0 / (2.0 * PI.sqrt()),
            Kernel1D::Epanechnikov => 0.6,
        }
    }

    /// `μ₂(L) = ∫ t² L(t) dt`.
    pub fn second_moment(self) -> f64 {
        match self {
            Kernel1D::Gaussian => 1.0,
            Kernel1D::Epanechnikov => 0.2,
        }
    }

    /// Standardized radius outside of which the kernel is (numerically) zero.
    pub fn support_radius(self) -> f64 {
        match self {
            Kernel1D::Gaussian => GAUSSIAN_CUTOFF,
            Kernel1D::Epanechnikov => 1.0,
        }
    }

    /// `(L ∘ L)(s)`.
    pub fn self_convolution(self, s: f64) -> f64 {
        match self {
            Kernel1D::Gaussian => (-s * s / 4.0).exp() / (2.0 * PI.sqrt()),
            Kernel1D::Epanechnikov => self.convolve_numeric(s, 1, 1),
        }
    }

    /// `(L² ∘ L)(s)`.
    pub fn square_convolution(self, s: f64) -> f64 {
        match self {
            Kernel1D::Gaussian => (-s * s / 3.0).exp() / (2.0 * PI.sqrt() * (3.0 * PI).sqrt()),
            Kernel1D::Epanechnikov => self.convolve_numeric(s, 2, 1),
        }
    }

    /// `(L² ∘ L²)(s)`.
    pub fn square_square_convolution(self, s: f64) -> f64 {
        match self {
            Kernel1D::Gaussian => (-s * s / 2.0).exp() / (4.0 * PI * (2.0 * PI).sqrt()),
            Kernel1D::Epanechnikov => self.convolve_numeric(s, 2, 2),
        }
    }

    // ∫ L(v)^p L(s - v)^q dv over the overlap of the two supports. The
    // integrand is a polynomial of degree <= 8 there, so Gauss-Legendre is exact.
    fn convolve_numeric(self, s: f64, p: i32, q: i32) -> f64 {
        let r = self.support_radius();
        let lo = (-r).max(s - r);
        let hi = r.min(s + r);
        if hi <= lo {
            return 0.0;
        }
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        GL5_NODES
            .iter()
            .zip(GL5_WEIGHTS.iter())
            .map(|(&node, &w)| {
                let v = mid + half * node;
                w * self.eval(v).powi(p) * self.eval(s - v).powi(q)
            })
            .sum::<f64>()
            * half
    }
}

/// Bivariate product kernels `K(u) = L(u₁) L(u₂)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel2D {
    #[default]
    Gaussian,
    /// Product of two univariate Epanechnikov kernels.
    Epanechnikov,
}

/// Values of `(K∘K)(u)`, `(K²∘K)(u)` and `(K²∘K²)(u)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SelfConvolutions {
    pub kk: f64,
    pub k2k: f64,
    pub k2k2: f64,
}

impl Kernel2D {
    /// Univariate profile of the product kernel.
    pub fn factor(self) -> Kernel1D {
        match self {
            Kernel2D::Gaussian => Kernel1D::Gaussian,
            Kernel2D::Epanechnikov => Kernel1D::Epanechnikov,
        }
    }

    #[inline]
    pub fn eval(self, u: [f64; 2]) -> f64 {
        let f = self.factor();
        f.eval(u[0]) * f.eval(u[1])
    }

    /// `R(K) = ∫ K²`.
    pub fn roughness(self) -> f64 {
        self.factor().roughness().powi(2)
    }

    /// `μ₂(K)` with `∫ u uᵀ K(u) du = μ₂(K) I₂`.
    pub fn second_moment(self) -> f64 {
        self.factor().second_moment()
    }

    /// `(R(K), μ₂(K))`.
    pub fn constants(self) -> (f64, f64) {
        (self.roughness(), self.second_moment())
    }

    pub fn self_convolutions(self, u: [f64; 2]) -> SelfConvolutions {
        let f = self.factor();
        SelfConvolutions {
            kk: f.self_convolution(u[0]) * f.self_convolution(u[1]),
            k2k: f.square_convolution(u[0]) * f.square_convolution(u[1]),
            k2k2: f.square_square_convolution(u[0]) * f.square_square_convolution(u[1]),
        }
    }
}

/// Symmetric positive-definite bandwidth matrix `H`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BandwidthMatrix {
    pub h11: f64,
    pub h12: f64,
    pub h22: f64,
    #[serde(skip)]
    det_inv_sqrt: f64,
    #[serde(skip)]
    inv_sqrt: [[f64; 2]; 2],
    #[serde(skip)]
    sqrt: [[f64; 2]; 2],
}

impl BandwidthMatrix {
    pub fn new(h11: f64, h12: f64, h22: f64) -> Result<Self> {
        if ![h11, h12, h22].iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("bandwidth matrix entries must be finite"));
        }
        let det = h11 * h22 - h12 * h12;
        if h11 <= 0.0 || h22 <= 0.0 || det <= 0.0 {
            return Err(Error::invalid(format!("bandwidth matrix ({h11}, {h12}, {h22}) is not positive definite")));
        }
        let (inv_sqrt, sqrt) = if h12 == 0.0 {
            ([[1.0 / h11.sqrt(), 0.0], [0.0, 1.0 / h22.sqrt()]], [[h11.sqrt(), 0.0], [0.0, h22.sqrt()]])
        } else {
            (symmetric_power(h11, h12, h22, -0.5), symmetric_power(h11, h12, h22, 0.5))
        };
        Ok(BandwidthMatrix { h11, h12, h22, det_inv_sqrt: 1.0 / det.sqrt(), inv_sqrt, sqrt })
    }

    pub fn diagonal(h11: f64, h22: f64) -> Result<Self> {
        Self::new(h11, 0.0, h22)
    }

    /// `H = h² I`.
    pub fn isotropic(h: f64) -> Result<Self> {
        Self::new(h * h, 0.0, h * h)
    }

    pub fn is_diagonal(&self) -> bool {
        self.h12 == 0.0
    }

    pub fn det(&self) -> f64 {
        self.h11 * self.h22 - self.h12 * self.h12
    }

    /// `|H|^{-1/2}`.
    pub fn det_inv_sqrt(&self) -> f64 {
        self.det_inv_sqrt
    }

    /// Symmetric inverse square root `H^{-1/2}`.
    pub fn inv_sqrt(&self) -> [[f64; 2]; 2] {
        self.inv_sqrt
    }

    /// Symmetric square root `H^{1/2}`.
    pub fn sqrt(&self) -> [[f64; 2]; 2] {
        self.sqrt
    }

    #[inline]
    pub fn standardize(&self, v: [f64; 2]) -> [f64; 2] {
        let m = &self.inv_sqrt;
        [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
    }

    /// Half-widths of an axis-aligned box outside of which `K_H` vanishes.
    pub fn support_box(&self, kernel: Kernel2D) -> [f64; 2] {
        let r = kernel.factor().support_radius();
        match kernel {
            // Bounding box of the Mahalanobis ellipse of radius r.
            Kernel2D::Gaussian => [r * self.h11.sqrt(), r * self.h22.sqrt()],
            // Image of the square [-r, r]² under H^{1/2}.
            Kernel2D::Epanechnikov => [
                r * (self.sqrt[0][0].abs() + self.sqrt[0][1].abs()),
                r * (self.sqrt[1][0].abs() + self.sqrt[1][1].abs()),
            ],
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.h11, self.h12, self.h22]
    }
}

// V diag(λ^p) Vᵀ for the symmetric matrix [[a, b], [b, c]] with b != 0.
fn symmetric_power(a: f64, b: f64, c: f64, p: f64) -> [[f64; 2]; 2] {
    let mean = 0.5 * (a + c);
    let rad = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let l1 = mean + rad;
    let l2 = mean - rad;
    let (mut vx, mut vy) = (l1 - c, b);
    let norm = (vx * vx + vy * vy).sqrt();
    vx /= norm;
    vy /= norm;
    let (p1, p2) = (l1.powf(p), l2.powf(p));
    // Second eigenvector is (-vy, vx).
    [[p1 * vx * vx + p2 * vy * vy, (p1 - p2) * vx * vy], [(p1 - p2) * vx * vy, p1 * vy * vy + p2 * vx * vx]]
}

/// `K_H(v) = |H|^{-1/2} K(H^{-1/2} v)`.
#[inline]
pub fn eval_kh(kernel: Kernel2D, h: &BandwidthMatrix, v: [f64; 2]) -> f64 {
    h.det_inv_sqrt * kernel.eval(h.standardize(v))
}

/// Positive scalar bandwidth (covariate smoothing `b`, pilot `t`, or the
/// smoothing used for the covariate's spatial density).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Bandwidth1D(f64);

impl Bandwidth1D {
    pub fn new(b: f64) -> Result<Self> {
        if b.is_finite() && b > 0.0 {
            Ok(Bandwidth1D(b))
        } else {
            Err(Error::invalid(format!("bandwidth must be positive, got {b}")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

fn sample_variance(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Normal-reference bandwidth matrix `H = diag(s_x², s_y²) N^{-1/3}`.
///
/// Coordinates are sorted before summation so the result does not depend
/// on the order of the points.
pub fn select_h(points: &[[f64; 2]]) -> Result<BandwidthMatrix> {
    let n = points.len();
    if n < 2 {
        return Err(Error::numeric(format!("cannot select H from {n} points")));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p[0]).collect();
    let mut ys: Vec<f64> = points.iter().map(|p| p[1]).collect();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (vx, vy) = (sample_variance(&xs), sample_variance(&ys));
    if !(vx > 0.0 && vy > 0.0) {
        return Err(Error::numeric("cannot select H: zero coordinate spread"));
    }
    let factor = (n as f64).powf(-1.0 / 3.0);
    BandwidthMatrix::diagonal(vx * factor, vy * factor)
}

/// Silverman's rule `1.06 min(s, IQR/1.34) n^{-1/5}`; falls back to `s` when
/// the interquartile range is zero.
pub fn select_b(z_values: &[f64]) -> Result<Bandwidth1D> {
    let n = z_values.len();
    if n < 2 {
        return Err(Error::numeric(format!("cannot select b from {n} values")));
    }
    let mut sorted = z_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let s = sample_variance(&sorted).sqrt();
    if !(s > 0.0) {
        return Err(Error::numeric("cannot select b: zero spread"));
    }
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { s.min(iqr / 1.34) } else { s };
    Bandwidth1D::new(1.06 * spread * (n as f64).powf(-0.2))
}
