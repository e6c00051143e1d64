//! Acceptance criteria for the test, the estimators, the sampler and the
//! command-line front end. Each check prints one PASS/FAIL line to stderr
//! (bypassing the test harness capture) and then asserts.
//!
//! The Monte Carlo checks (level and power) run on a 64 × 64 mesh to keep
//! the suite to minutes on one core; the deterministic checks use 256 × 256.

use std::io::Write;
use std::path::Path;
use std::process::Command;

use ppcov::estimators::relative_density_spatial;
use ppcov::goftest::{
    asymptotic_moments, evaluate_statistic, resolve_bandwidths, statistic_t, ustat_t_oracle, Bandwidths, TestConfig,
};
use ppcov::rng::stream;
use ppcov::simulate::{
    perturbed_intensity, power_study, sample_nhpp, synthetic_base, synthetic_domain, BandKind, CellSampler,
    PerturbationBand, PowerStudy, PowerTable, SyntheticModel,
};
use ppcov::{
    Bandwidth1D, BandwidthMatrix, CovariateGrid, Domain, EdgeCorrection, IntensitySurface, Kernel1D, Kernel2D,
    RasterGeometry, RelativeDensitySurface, SpatialCovariateDistribution,
};

const MC_MESH: usize = 64;
const FINE_MESH: usize = 256;
const ALPHA: f64 = 0.05;

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let status = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[{status}] criterion {id}: {name}: {detail}");
}

fn diagonal_band() -> PerturbationBand {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    PerturbationBand::new(BandKind::General { direction: [s, -s] }, [0.5, 0.5], 1.0).unwrap()
}

fn study(d_values: Vec<Option<f64>>, m_values: Vec<f64>, replicates: usize, seed: u64) -> PowerStudy {
    PowerStudy {
        base: synthetic_base(),
        band: diagonal_band(),
        d_values,
        m_values,
        replicates,
        alpha: ALPHA,
        seed,
        test: TestConfig { replicates: 199, ..TestConfig::default() },
    }
}

fn run_study(study: &PowerStudy) -> PowerTable {
    let domain = synthetic_domain(MC_MESH).unwrap();
    let dist = SpatialCovariateDistribution::with_default_smoothing(domain.mesh()).unwrap();
    power_study(study, &domain, &dist).unwrap()
}

fn proportions(table: &PowerTable, row: usize) -> Vec<(f64, f64)> {
    table.cells[row].iter().map(|c| (c.proportion.unwrap(), c.standard_error().unwrap())).collect()
}

fn proportions_by_m(table: &PowerTable) -> Vec<(f64, f64)> {
    table.cells.iter().map(|row| (row[0].proportion.unwrap(), row[0].standard_error().unwrap())).collect()
}

#[test]
fn criterion_1_level() {
    let table = run_study(&study(vec![None], vec![100.0], 300, 101));
    let cell = table.cell(0, 0);
    let p = cell.proportion.unwrap();
    let pass = (0.02..=0.09).contains(&p) && cell.completed == 300;
    report(
        1,
        "level under the null (m=100, R=300, B=199)",
        pass,
        &format!("rejection proportion {p:.4}, target [0.02, 0.09]"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_power_decreases_in_d() {
    let d = vec![Some(0.05), Some(0.1), Some(0.2), None];
    let table = run_study(&study(d, vec![200.0], 200, 202));
    let p = proportions(&table, 0);
    let mut pass = p[0].0 >= 0.9;
    let mut detail = format!("proportions at d = 0.05, 0.1, 0.2, inf: {:?}", p.iter().map(|x| x.0).collect::<Vec<_>>());
    for w in p.windows(2) {
        let gap = w[0].0 - w[1].0;
        let se = (w[0].1.powi(2) + w[1].1.powi(2)).sqrt();
        let ok = gap > 0.0 && gap > 2.0 * se;
        pass &= ok;
        detail.push_str(&format!("; gap {gap:.4} vs 2se {:.4}{}", 2.0 * se, if ok { "" } else { " (not separated)" }));
    }
    report(2, "power strictly decreasing in d (m=200, R=200, B=199)", pass, &detail);
    assert!(pass);
}

#[test]
fn criterion_3_power_increases_in_m() {
    let table = run_study(&study(vec![Some(0.4)], vec![50.0, 100.0, 200.0], 200, 303));
    let p = proportions_by_m(&table);
    let nondecreasing = p.windows(2).all(|w| w[1].0 >= w[0].0);
    let span = p[2].0 - p[0].0;
    let pass = nondecreasing && span >= 0.15;
    report(
        3,
        "power nondecreasing in m at d=0.4 (R=200, B=199)",
        pass,
        &format!("proportions at m = 50, 100, 200: {:?}; span {span:.4}", p.iter().map(|x| x.0).collect::<Vec<_>>()),
    );
    assert!(pass);
}

fn oracle_domain() -> Domain {
    let grid = CovariateGrid::from_fn(RasterGeometry::unit_square(FINE_MESH), |p| p[0] + 0.5 * p[1] * p[1]).unwrap();
    Domain::from_grid(grid).unwrap()
}

#[test]
fn criterion_4_ustat_oracle() {
    let domain = oracle_domain();
    let mesh = domain.mesh();
    let dist = SpatialCovariateDistribution::with_default_smoothing(mesh).unwrap();
    let uniform = IntensitySurface::new(vec![1.0; mesh.len()], mesh).unwrap();
    let sampler = CellSampler::new(&uniform, mesh).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..20u64 {
        let n = 1 + (i % 10) as usize;
        let pattern = sampler.sample_n(&mut stream(404, 0, 0, 0, i), &domain, n);
        let h0 = 0.04 + 0.005 * i as f64;
        let h = if i % 4 == 3 {
            BandwidthMatrix::new(h0 * h0, 0.3 * h0 * h0, 1.4 * h0 * h0).unwrap()
        } else {
            BandwidthMatrix::diagonal(h0 * h0, 0.8 * h0 * h0).unwrap()
        };
        let b = Bandwidth1D::new(0.05 + 0.01 * (i % 7) as f64).unwrap();
        let (k2, k1) = if i % 2 == 1 {
            (Kernel2D::Epanechnikov, Kernel1D::Epanechnikov)
        } else {
            (Kernel2D::Gaussian, Kernel1D::Gaussian)
        };
        let config = TestConfig { kernel2d: k2, kernel1d: k1, edge: EdgeCorrection::None, ..TestConfig::default() };
        let t = evaluate_statistic(&pattern, mesh, &dist, &config, &Bandwidths { h, b }).unwrap();
        let oracle = ustat_t_oracle(&pattern, &dist, k2, &h, k1, b, mesh).unwrap();
        worst = worst.max((oracle - t).abs() / t);
    }
    let pass = worst <= 1e-3;
    report(
        4,
        "U-statistic expansion equals the statistic (20 patterns, N <= 10)",
        pass,
        &format!("max relative error {worst:.3e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_5_sampler() {
    let domain = synthetic_domain(MC_MESH).unwrap();
    let mesh = domain.mesh();
    let lam = IntensitySurface::new(vec![100.0; mesh.len()], mesh).unwrap();
    let draws = 2000;
    let regions: [([f64; 2], [f64; 2]); 2] = [([0.0, 0.0], [0.25, 1.0]), ([0.5, 0.1], [0.8, 0.6])];
    let mut counts = Vec::with_capacity(draws);
    let mut region_totals = [0usize; 2];
    for seed in 0..draws as u64 {
        let pattern = sample_nhpp(&lam, &domain, seed).unwrap();
        counts.push(pattern.len() as f64);
        for (k, (lo, hi)) in regions.iter().enumerate() {
            region_totals[k] += pattern
                .points()
                .iter()
                .filter(|p| p[0] >= lo[0] && p[0] < hi[0] && p[1] >= lo[1] && p[1] < hi[1])
                .count();
        }
    }
    let n = draws as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut pass = (97.7..=102.3).contains(&mean) && (85.0..=115.0).contains(&var);
    let mut detail = format!("mean {mean:.3}, variance {var:.3}");
    for (k, (lo, hi)) in regions.iter().enumerate() {
        let expected = n * 100.0 * (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let z = (region_totals[k] as f64 - expected) / expected.sqrt();
        pass &= z.abs() <= 3.0;
        detail.push_str(&format!("; region {k}: {} events vs {expected:.0} expected (z {z:.2})", region_totals[k]));
    }
    report(5, "Poisson sampler counts (2000 draws, lambda=100)", pass, &detail);
    assert!(pass);
}

#[test]
fn criterion_6_covariate_distribution() {
    let mut pass = true;
    let mut detail: Vec<String> = Vec::new();
    type Covariate = (&'static str, fn([f64; 2]) -> f64);
    let covariates: [Covariate; 2] = [("Z=x", |p| p[0]), ("Z=x+y", |p| p[0] + p[1])];
    for (name, f) in covariates {
        let grid = CovariateGrid::from_fn(RasterGeometry::unit_square(FINE_MESH), f).unwrap();
        let domain = Domain::from_grid(grid).unwrap();
        let dist = SpatialCovariateDistribution::with_default_smoothing(domain.mesh()).unwrap();
        let rel = (dist.integral_gstar() - 1.0).abs();
        let zs = dist.z_grid();
        let cdf: Vec<f64> = zs.iter().map(|&z| dist.cdf(z)).collect();
        let monotone = cdf.windows(2).all(|w| w[1] >= w[0]);
        let ends = cdf[0] == 0.0 && (cdf[cdf.len() - 1] - 1.0).abs() < 1e-12;
        pass &= rel <= 1e-3 && monotone && ends;
        detail.push(format!("{name}: |int g* - |W||/|W| = {rel:.2e}, G monotone {monotone}, G from 0 to 1 {ends}"));
    }
    report(6, "spatial covariate distribution on 256x256 grids", pass, &detail.join("; "));
    assert!(pass);
}

#[test]
fn criterion_7_normal_approximation() {
    let domain = synthetic_domain(FINE_MESH).unwrap();
    let mesh = domain.mesh();
    let h = BandwidthMatrix::isotropic(0.1).unwrap();
    let flat = RelativeDensitySurface::from_values(vec![1.0; mesh.len()], 1);
    let approx = asymptotic_moments(&flat, Kernel2D::Gaussian, &h, mesh, 100, 0.0).unwrap();
    let expected = (1.0 / 100.0) * (1.0 / (0.1f64 * 0.1)) / (4.0 * std::f64::consts::PI);
    let closed = ((approx.mu_t - expected) / expected).abs();

    let dist = SpatialCovariateDistribution::with_default_smoothing(mesh).unwrap();
    let null =
        perturbed_intensity(&SyntheticModel { base: synthetic_base(), band: None, target_m: 1000.0 }, mesh).unwrap();
    let config = TestConfig::default();
    let replicates = 200;
    let mut z_sum = 0.0;
    for r in 0..replicates {
        let pattern = sample_nhpp(&null, &domain, 7000 + r).unwrap();
        let bw = resolve_bandwidths(&pattern, &config).unwrap();
        let spatial = relative_density_spatial(&pattern, config.kernel2d, &bw.h, mesh, config.edge).unwrap();
        let covariate = ppcov::estimators::covariate_relative_density(&pattern, &dist, config.kernel1d, bw.b, mesh);
        let t = statistic_t(&spatial, &covariate, mesh).unwrap();
        let a = asymptotic_moments(&spatial, config.kernel2d, &bw.h, mesh, pattern.len(), t).unwrap();
        z_sum += a.z_score;
    }
    let z_mean = z_sum / replicates as f64;
    let pass = closed <= 1e-6 && (-1.0..=1.0).contains(&z_mean);
    report(
        7,
        "normal approximation (closed-form mean, z-scores under the null)",
        pass,
        &format!("mu_T relative error {closed:.2e}; mean z over {replicates} null patterns (m=1000) {z_mean:.4}"),
    );
    assert!(pass);
}

fn ppcov(args: &[&str], dir: &Path) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_ppcov"))
        .args(args)
        .current_dir(dir)
        .env_remove("PPCOV_SEED")
        .output()
        .unwrap();
    assert!(out.status.success(), "ppcov {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn criterion_8_determinism_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ppcov(&["simulate", "--m", "120", "--seed", "8", "--grid-cells", "48", "--out", "data"], d);
    std::fs::write(
        d.join("study.toml"),
        "seed = 8\nreplicates = 6\nbootstrap = 19\nm = [60]\nd = [0.2, \"inf\"]\ngrid_cells = 32\n\n[band]\nkind = \"general\"\ndirection = [1, -1]\n",
    )
    .unwrap();
    let mut identical = true;
    let mut compared = Vec::new();
    for jobs in ["1", "3"] {
        let test_out = format!("test_{jobs}.json");
        let power_out = format!("power_{jobs}.csv");
        let sim_out = format!("sim_{jobs}");
        ppcov(
            &[
                "--jobs",
                jobs,
                "test",
                "--covariate",
                "data/covariate.asc",
                "--points",
                "data/pattern_0000.csv",
                "--grid-cells",
                "48",
                "--B",
                "49",
                "--seed",
                "42",
                "--pilot-t",
                "0.1:0.2:0.05",
                "--out",
                &test_out,
            ],
            d,
        );
        ppcov(&["--jobs", jobs, "power", "--config", "study.toml", "--out", &power_out], d);
        ppcov(
            &[
                "--jobs",
                jobs,
                "simulate",
                "--m",
                "80",
                "--count",
                "4",
                "--seed",
                "3",
                "--grid-cells",
                "32",
                "--out",
                &sim_out,
            ],
            d,
        );
    }
    for (a, b) in [
        ("test_1.json", "test_3.json"),
        ("power_1.csv", "power_3.csv"),
        ("power_1.json", "power_3.json"),
        ("sim_1/pattern_0003.csv", "sim_3/pattern_0003.csv"),
    ] {
        let same = std::fs::read(d.join(a)).unwrap() == std::fs::read(d.join(b)).unwrap();
        identical &= same;
        compared.push(format!("{a} vs {b}: {}", if same { "identical" } else { "DIFFERENT" }));
    }
    report(8, "same seed, different --jobs gives byte-identical artifacts", identical, &compared.join("; "));
    assert!(identical);
}
