//! Poisson sampling from intensity surfaces, band-perturbed alternatives and
//! the Monte Carlo power-study harness.

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::IntensitySurface;
use crate::geometry::{CovariateGrid, Domain, Mesh, PointPattern, RasterGeometry, SpatialCovariateDistribution};
use crate::goftest::{bootstrap_test, TestConfig};
use crate::rng::{stream, tags};

const JITTER_ATTEMPTS: usize = 16;

/// Draws inhomogeneous Poisson patterns from a piecewise-constant intensity:
/// a Poisson total count, cells chosen proportionally to their mass, then a
/// uniform position inside the chosen cell.
#[derive(Clone, Debug)]
pub struct CellSampler {
    cells: Vec<usize>,
    cumulative: Vec<f64>,
    total: f64,
    poisson: Poisson<f64>,
}

impl CellSampler {
    pub fn new(intensity: &IntensitySurface, mesh: &Mesh) -> Result<Self> {
        let values = intensity.values();
        if values.len() != mesh.len() {
            return Err(Error::invalid("intensity is not on the mesh"));
        }
        let area = mesh.cell_area();
        let mut cells = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for (i, (&v, &inside)) in values.iter().zip(mesh.inside()).enumerate() {
            if inside && v > 0.0 {
                acc += v * area;
                cells.push(i);
                cumulative.push(acc);
            }
        }
        if !(acc > 0.0) || !acc.is_finite() {
            return Err(Error::invalid("intensity has zero integral"));
        }
        let poisson = Poisson::new(acc).map_err(|e| Error::numeric(format!("poisson mean {acc}: {e}")))?;
        Ok(CellSampler { cells, cumulative, total: acc, poisson })
    }

    /// Expected number of events.
    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, domain: &Domain) -> PointPattern {
        let n = self.poisson.sample(rng) as usize;
        self.sample_n(rng, domain, n)
    }

    /// Places exactly `n` events.
    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, domain: &Domain, n: usize) -> PointPattern {
        let mesh = domain.mesh();
        let (x0, y0) = (mesh.rect().xmin, mesh.rect().ymin);
        let mut points = Vec::with_capacity(n);
        let mut z = Vec::with_capacity(n);
        for _ in 0..n {
            let u = rng.random::<f64>() * self.total;
            let k = self.cumulative.partition_point(|&c| c <= u).min(self.cells.len() - 1);
            let cell = self.cells[k];
            let (r, c) = (cell / mesh.ncols(), cell % mesh.ncols());
            let mut p = mesh.cell_center(r, c);
            for _ in 0..JITTER_ATTEMPTS {
                let q = [
                    x0 + (c as f64 + rng.random::<f64>()) * mesh.dx(),
                    y0 + (r as f64 + rng.random::<f64>()) * mesh.dy(),
                ];
                if domain.window().contains(q) {
                    p = q;
                    break;
                }
            }
            z.push(domain.covariate_at(p).unwrap_or(mesh.z()[cell]));
            points.push(p);
        }
        PointPattern::from_parts(points, z)
    }
}

/// One draw from the Poisson process with the given intensity.
pub fn sample_nhpp(intensity: &IntensitySurface, domain: &Domain, seed: u64) -> Result<PointPattern> {
    let sampler = CellSampler::new(intensity, domain.mesh())?;
    Ok(sampler.sample(&mut stream(seed, tags::SIMULATE, 0, 0, 0), domain))
}

/// How the signed distance to the band center line is measured.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BandKind {
    /// `s = u − (offset − v − v₀)`: a band along the line `u + v = offset − v₀`.
    AxisAligned { offset: f64 },
    /// `s = (u − u₀) − (v − v₀)`: a band along the diagonal through the center.
    Diagonal,
    /// `s = v₀ − u₀`: the perturbation read verbatim with `u` cancelling,
    /// which leaves the base model unchanged after rescaling.
    DiagonalLiteral,
    /// `s = direction · (p − center)` for a unit direction.
    General { direction: [f64; 2] },
}

/// Default offset of the axis-aligned band.
pub const AXIS_ALIGNED_OFFSET: f64 = 15.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationBand {
    #[serde(flatten)]
    pub kind: BandKind,
    pub center: [f64; 2],
    pub d: f64,
}

impl PerturbationBand {
    pub fn new(kind: BandKind, center: [f64; 2], d: f64) -> Result<Self> {
        let band = PerturbationBand { kind, center, d };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0) || !self.d.is_finite() {
            return Err(Error::invalid(format!("band scale must be positive and finite, got {}", self.d)));
        }
        if let BandKind::General { direction } = self.kind {
            let norm = direction[0].hypot(direction[1]);
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("band direction must be a unit vector"));
            }
        }
        if !self.center.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("band center must be finite"));
        }
        Ok(())
    }

    pub fn with_scale(&self, d: f64) -> Result<Self> {
        PerturbationBand::new(self.kind, self.center, d)
    }

    /// Signed coordinate across the band.
    pub fn offset(&self, p: [f64; 2]) -> f64 {
        let [u0, v0] = self.center;
        match self.kind {
            BandKind::AxisAligned { offset } => p[0] - (offset - p[1] - v0),
            BandKind::Diagonal => (p[0] - u0) - (p[1] - v0),
            BandKind::DiagonalLiteral => v0 - u0,
            BandKind::General { direction } => direction[0] * (p[0] - u0) + direction[1] * (p[1] - v0),
        }
    }
}

/// `r(p) = φ(s(p); 0, d)`.
pub fn band_r(band: &PerturbationBand, p: [f64; 2]) -> f64 {
    let t = band.offset(p) / band.d;
    (-0.5 * t * t).exp() / (band.d * (2.0 * std::f64::consts::PI).sqrt())
}

/// Intensity of the unperturbed model.
#[derive(Clone, Debug)]
pub enum BaseIntensity {
    Surface(IntensitySurface),
    /// `ρ(z) = intercept + slope · z` evaluated on the mesh covariate.
    LinearInCovariate {
        intercept: f64,
        slope: f64,
    },
}

#[derive(Clone, Debug)]
pub struct SyntheticModel {
    pub base: BaseIntensity,
    /// `None` leaves the base model unperturbed.
    pub band: Option<PerturbationBand>,
    pub target_m: f64,
}

/// `λ = λ_ini · r`, rescaled so that its integral is `target_m`.
pub fn perturbed_intensity(model: &SyntheticModel, mesh: &Mesh) -> Result<IntensitySurface> {
    if !(model.target_m > 0.0) || !model.target_m.is_finite() {
        return Err(Error::invalid("target_m must be positive"));
    }
    let mut values = match &model.base {
        BaseIntensity::Surface(s) => {
            if s.values().len() != mesh.len() {
                return Err(Error::invalid("base intensity is not on the mesh"));
            }
            s.values().to_vec()
        }
        BaseIntensity::LinearInCovariate { intercept, slope } => mesh
            .z()
            .iter()
            .zip(mesh.inside())
            .map(|(z, &inside)| if inside { intercept + slope * z } else { 0.0 })
            .collect(),
    };
    if let Some(band) = &model.band {
        band.validate()?;
        for r in 0..mesh.nrows() {
            for c in 0..mesh.ncols() {
                values[r * mesh.ncols() + c] *= band_r(band, mesh.cell_center(r, c));
            }
        }
    }
    let raw = IntensitySurface::new(values, mesh)?;
    let total = raw.integral(mesh)?;
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::numeric("perturbed intensity integrates to zero"));
    }
    Ok(raw.scaled(model.target_m / total))
}

/// Unit square with covariate `Z(x, y) = x` on an `n × n` raster.
pub fn synthetic_domain(n: usize) -> Result<Domain> {
    Domain::from_grid(CovariateGrid::from_fn(RasterGeometry::unit_square(n), |p| p[0])?)
}

/// `ρ(z) ∝ 0.5 + z`; the scale is fixed by `target_m`.
pub fn synthetic_base() -> BaseIntensity {
    BaseIntensity::LinearInCovariate { intercept: 0.5, slope: 1.0 }
}

/// A Monte Carlo study of rejection rates over a grid of band scales and
/// expected sample sizes.
#[derive(Clone, Debug)]
pub struct PowerStudy {
    pub base: BaseIntensity,
    /// Kind and center of the band; its scale is taken from `d_values`.
    pub band: PerturbationBand,
    /// `None` is the unperturbed column.
    pub d_values: Vec<Option<f64>>,
    pub m_values: Vec<f64>,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Test settings; its seed is replaced per replicate.
    pub test: TestConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerCell {
    pub m: f64,
    pub d: Option<f64>,
    pub rejections: usize,
    pub completed: usize,
    /// Replicates with fewer than two events or a failed test.
    pub skipped: usize,
    /// `rejections / completed`; `None` when nothing completed.
    pub proportion: Option<f64>,
    pub flagged: bool,
}

impl PowerCell {
    /// Binomial standard error of the proportion.
    pub fn standard_error(&self) -> Option<f64> {
        self.proportion.map(|p| (p * (1.0 - p) / self.completed as f64).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PowerTable {
    pub m_values: Vec<f64>,
    pub d_values: Vec<Option<f64>>,
    /// Row-major: one row per `m`, one column per `d`.
    pub cells: Vec<Vec<PowerCell>>,
}

impl PowerTable {
    pub fn cell(&self, m_index: usize, d_index: usize) -> &PowerCell {
        &self.cells[m_index][d_index]
    }
}

enum Outcome {
    Rejected(bool),
    Skipped,
}

fn run_scenario(
    study: &PowerStudy,
    domain: &Domain,
    dist: &SpatialCovariateDistribution,
    scenario: u64,
    m: f64,
    d: Option<f64>,
) -> Result<PowerCell> {
    let band = d.map(|d| study.band.with_scale(d)).transpose()?;
    let model = SyntheticModel { base: study.base.clone(), band, target_m: m };
    let intensity = perturbed_intensity(&model, domain.mesh())?;
    let sampler = CellSampler::new(&intensity, domain.mesh())?;
    let outcomes: Vec<Outcome> = (0..study.replicates as u64)
        .into_par_iter()
        .map(|rep| {
            let pattern = sampler.sample(&mut stream(study.seed, tags::SIMULATE, scenario, rep, 0), domain);
            if pattern.len() < 2 {
                return Outcome::Skipped;
            }
            let seed = stream(study.seed, tags::BOOTSTRAP_SEED, scenario, rep, 0).next_u64();
            let config = TestConfig { seed, ..study.test.clone() };
            match bootstrap_test(&pattern, domain, dist, &config) {
                Ok(result) => Outcome::Rejected(result.p_value <= study.alpha),
                Err(_) => Outcome::Skipped,
            }
        })
        .collect();
    let rejections = outcomes.iter().filter(|o| matches!(o, Outcome::Rejected(true))).count();
    let skipped = outcomes.iter().filter(|o| matches!(o, Outcome::Skipped)).count();
    let completed = outcomes.len() - skipped;
    Ok(PowerCell {
        m,
        d,
        rejections,
        completed,
        skipped,
        proportion: (completed > 0).then(|| rejections as f64 / completed as f64),
        flagged: skipped > 0,
    })
}

/// Runs every `(m, d)` scenario. Scenario `k = m_index · |d| + d_index`
/// and replicate `r` draw from their own keyed streams, so the table is a
/// function of the seed alone.
pub fn power_study(study: &PowerStudy, domain: &Domain, dist: &SpatialCovariateDistribution) -> Result<PowerTable> {
    if study.replicates < 1 {
        return Err(Error::invalid("power study needs at least one replicate"));
    }
    if study.test.replicates < 1 {
        return Err(Error::invalid("bootstrap needs at least one replicate"));
    }
    if !(study.alpha > 0.0 && study.alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1], got {}", study.alpha)));
    }
    if study.m_values.is_empty() || study.d_values.is_empty() {
        return Err(Error::invalid("power study needs at least one m and one d"));
    }
    study.band.validate()?;
    let nd = study.d_values.len();
    let cells = study
        .m_values
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            study
                .d_values
                .iter()
                .enumerate()
                .map(|(j, &d)| run_scenario(study, domain, dist, (i * nd + j) as u64, m, d))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PowerTable { m_values: study.m_values.clone(), d_values: study.d_values.clone(), cells })
}
