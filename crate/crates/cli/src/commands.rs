use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ppcov::estimators::{covariate_relative_density, relative_density_spatial, CovariateEstimate};
use ppcov::geometry::covariate_at;
use ppcov::goftest::{
    asymptotic_moments, bootstrap_scan, evaluate_statistic, resolve_bandwidths, AsymptoticApprox, Bandwidths,
    TestConfig, TestResult,
};
use ppcov::io::{
    read_covariate_grid, read_mask, read_pattern_file, write_ascii_grid, write_pattern_csv, write_surface,
};
use ppcov::kernels::select_b;
use ppcov::rng::{stream, tags};
use ppcov::simulate::{
    perturbed_intensity, power_study, synthetic_base, synthetic_domain, BaseIntensity, CellSampler, PowerStudy,
    PowerTable, SyntheticModel,
};
use ppcov::{
    Bandwidth1D, BandwidthMatrix, Domain, EdgeCorrection, IntensitySurface, MeshResolution, ObservationWindow,
    PointPattern, SpatialCovariateDistribution,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, BandSection, ModelSection, PowerFile, DEFAULT_GRID_CELLS};
use crate::{CliError, EdgeName, InputArgs, SimulateArgs, SmoothingArgs};

type Result<T> = std::result::Result<T, CliError>;

const RHO_CURVE_POINTS: usize = 201;

fn load_domain(covariate: &Path, mask: Option<&Path>, grid_cells: usize) -> Result<Domain> {
    let grid = read_covariate_grid(covariate).map_err(|e| with_path(covariate, e))?;
    let window = match mask {
        Some(p) => ObservationWindow::masked(read_mask(p).map_err(|e| with_path(p, e))?),
        None => ObservationWindow::rectangle(grid.geometry().extent()),
    };
    Ok(Domain::new(grid, window, MeshResolution::LongAxis(grid_cells))?)
}

fn with_path(path: &Path, e: ppcov::Error) -> CliError {
    match CliError::from(e) {
        CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn load_input(input: &InputArgs) -> Result<(Domain, PointPattern)> {
    let domain = load_domain(&input.covariate, input.mask.as_deref(), input.grid_cells)?;
    let points = read_pattern_file(&input.points).map_err(|e| with_path(&input.points, e))?;
    let pattern = PointPattern::new(points, &domain)?;
    Ok((domain, pattern))
}

fn test_config(smoothing: &SmoothingArgs) -> Result<TestConfig> {
    let (kernel2d, kernel1d) = smoothing.kernel.kernels();
    Ok(TestConfig {
        kernel2d,
        kernel1d,
        h: smoothing.h.map(|[a, b, c]| BandwidthMatrix::new(a, b, c)).transpose()?,
        b: smoothing.b.map(Bandwidth1D::new).transpose()?,
        edge: match smoothing.edge {
            EdgeName::Diggle => EdgeCorrection::Diggle,
            EdgeName::None => EdgeCorrection::None,
        },
        ..TestConfig::default()
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct FitOutput<'a> {
    command: &'static str,
    input: &'a InputArgs,
    smoothing: &'a SmoothingArgs,
    n: usize,
    bandwidths: Bandwidths,
    #[serde(rename = "T")]
    statistic: f64,
    files: [&'static str; 3],
}

pub fn fit(input: &InputArgs, smoothing: &SmoothingArgs, out: &Path) -> Result<()> {
    let (domain, pattern) = load_input(input)?;
    let mesh = domain.mesh();
    let config = test_config(smoothing)?;
    let dist = SpatialCovariateDistribution::with_default_smoothing(mesh)?;
    let bw = resolve_bandwidths(&pattern, &config)?;
    let spatial = relative_density_spatial(&pattern, config.kernel2d, &bw.h, mesh, config.edge)?;
    let covariate = covariate_relative_density(&pattern, &dist, config.kernel1d, bw.b, mesh);
    let statistic = evaluate_statistic(&pattern, mesh, &dist, &config, &bw)?;

    create_dir(out)?;
    let files = ["lambda0_spatial.asc", "rho0_covariate.asc", "rho_curve.csv"];
    write_surface(&out.join(files[0]), mesh, spatial.values())?;
    write_surface(&out.join(files[1]), mesh, covariate.values())?;

    let estimate = CovariateEstimate::new(&pattern, &dist, config.kernel1d, bw.b);
    let levels = mesh.levels();
    let (lo, hi) = (levels[0], levels[levels.len() - 1]);
    let mut csv = String::from("z,density,relative_density,gstar\n");
    for k in 0..RHO_CURVE_POINTS {
        let z = lo + (hi - lo) * k as f64 / (RHO_CURVE_POINTS - 1) as f64;
        csv.push_str(&format!("{z},{},{},{}\n", estimate.density(z), estimate.relative(z), dist.gstar(z)));
    }
    fs::write(out.join(files[2]), csv)?;

    write_json(
        &out.join("fit.json"),
        &FitOutput { command: "fit", input, smoothing, n: pattern.len(), bandwidths: bw, statistic, files },
    )
}

pub struct TestOptions {
    pub input: InputArgs,
    pub smoothing: SmoothingArgs,
    pub pilot_t: Option<String>,
    pub replicates: usize,
    pub seed: Option<u64>,
    pub reselect: bool,
    pub asymptotic: bool,
    pub out: PathBuf,
}

#[derive(Serialize)]
struct TestRunConfig<'a> {
    command: &'static str,
    input: &'a InputArgs,
    smoothing: &'a SmoothingArgs,
    pilot_t: Vec<f64>,
    #[serde(rename = "B")]
    replicates: usize,
    seed: u64,
    reselect: bool,
}

#[derive(Serialize)]
struct TestOutput<'a> {
    config: TestRunConfig<'a>,
    results: Vec<TestResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    asymptotic: Option<AsymptoticApprox>,
}

pub fn test(opts: TestOptions) -> Result<()> {
    let (domain, pattern) = load_input(&opts.input)?;
    let mesh = domain.mesh();
    let seed = config::resolve_seed(opts.seed, None)?;
    let pilots = match &opts.pilot_t {
        Some(s) => config::parse_pilot_t(s)?,
        None => vec![select_b(pattern.z_values())?.get()],
    };
    let config =
        TestConfig { replicates: opts.replicates, seed, reselect: opts.reselect, ..test_config(&opts.smoothing)? };
    let dist = SpatialCovariateDistribution::with_default_smoothing(mesh)?;
    let pilot_bw = pilots.iter().map(|&t| Bandwidth1D::new(t)).collect::<ppcov::Result<Vec<_>>>()?;
    let results = bootstrap_scan(&pattern, &domain, &dist, &config, &pilot_bw)?;

    let asymptotic = if opts.asymptotic {
        let bw = resolve_bandwidths(&pattern, &config)?;
        let spatial = relative_density_spatial(&pattern, config.kernel2d, &bw.h, mesh, config.edge)?;
        Some(asymptotic_moments(&spatial, config.kernel2d, &bw.h, mesh, pattern.len(), results[0].statistic)?)
    } else {
        None
    };

    let output = TestOutput {
        config: TestRunConfig {
            command: "test",
            input: &opts.input,
            smoothing: &opts.smoothing,
            pilot_t: pilots,
            replicates: opts.replicates,
            seed,
            reselect: opts.reselect,
        },
        results,
        asymptotic,
    };
    write_json(&opts.out, &output)
}

/// Covariate domain and base intensity from a model description.
fn build_model(model: &ModelSection, grid_cells: usize) -> Result<(Domain, BaseIntensity)> {
    let domain = match &model.covariate {
        Some(path) => load_domain(path, model.mask.as_deref(), grid_cells)?,
        None => {
            if model.mask.is_some() {
                return Err(CliError::Input("a mask needs a covariate raster".into()));
            }
            synthetic_domain(grid_cells)?
        }
    };
    let base = match (&model.intensity, model.rho) {
        (Some(_), Some(_)) => {
            return Err(CliError::Input("give either a base intensity raster or rho, not both".into()))
        }
        (Some(path), None) => {
            let grid = read_covariate_grid(path).map_err(|e| with_path(path, e))?;
            let mesh = domain.mesh();
            let mut values = vec![0.0; mesh.len()];
            for r in 0..mesh.nrows() {
                for c in 0..mesh.ncols() {
                    let i = r * mesh.ncols() + c;
                    if mesh.inside()[i] {
                        values[i] = covariate_at(&grid, domain.window(), mesh.cell_center(r, c))
                            .map_err(|e| with_path(path, e))?;
                    }
                }
            }
            BaseIntensity::Surface(IntensitySurface::new(values, mesh)?)
        }
        (None, Some([intercept, slope])) => BaseIntensity::LinearInCovariate { intercept, slope },
        (None, None) => synthetic_base(),
    };
    Ok((domain, base))
}

fn window_center(domain: &Domain) -> [f64; 2] {
    let r = domain.mesh().rect();
    [0.5 * (r.xmin + r.xmax), 0.5 * (r.ymin + r.ymax)]
}

#[derive(Serialize)]
struct PowerOutput<'a> {
    command: &'static str,
    config: &'a PowerFile,
    table: &'a PowerTable,
}

fn format_scale(d: Option<f64>) -> String {
    d.map_or_else(|| "inf".to_string(), |d| d.to_string())
}

fn power_csv(table: &PowerTable) -> String {
    let mut out = String::from("m");
    for d in &table.d_values {
        out.push(',');
        out.push_str(&format_scale(*d));
    }
    out.push_str(",flagged\n");
    for row in &table.cells {
        out.push_str(&row[0].m.to_string());
        for cell in row {
            out.push(',');
            out.push_str(&cell.proportion.map_or_else(|| "NA".to_string(), |p| p.to_string()));
        }
        out.push_str(if row.iter().any(|c| c.flagged) { ",true\n" } else { ",false\n" });
    }
    out
}

pub fn power(config_path: &Path, seed_flag: Option<u64>, out: &Path) -> Result<()> {
    let mut file = PowerFile::load(config_path)?;
    let seed = config::resolve_seed(seed_flag, file.seed)?;
    file.seed = Some(seed);
    let grid_cells = *file.grid_cells.get_or_insert(DEFAULT_GRID_CELLS);
    let kernel = *file.kernel.get_or_insert_with(Default::default);
    let alpha = *file.alpha.get_or_insert(0.05);
    let bootstrap = *file.bootstrap.get_or_insert(ppcov::goftest::DEFAULT_POWER_REPLICATES);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Input(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if file.m.iter().any(|m| !(*m > 0.0)) {
        return Err(CliError::Input("expected sizes m must be positive".into()));
    }

    let (domain, base) = build_model(&file.model, grid_cells)?;
    let band = file.band.template(window_center(&domain))?;
    let d_values = file.d.iter().map(|d| d.resolve()).collect::<std::result::Result<Vec<_>, _>>()?;
    let (kernel2d, kernel1d) = kernel.kernels();
    let study = PowerStudy {
        base,
        band,
        d_values,
        m_values: file.m.clone(),
        replicates: file.replicates,
        alpha,
        seed,
        test: TestConfig {
            kernel2d,
            kernel1d,
            pilot_t: file.pilot_t.map(Bandwidth1D::new).transpose()?,
            replicates: bootstrap,
            ..TestConfig::default()
        },
    };
    let dist = SpatialCovariateDistribution::with_default_smoothing(domain.mesh())?;
    let table = power_study(&study, &domain, &dist)?;

    fs::write(out, power_csv(&table)).map_err(|e| CliError::Input(format!("{}: {e}", out.display())))?;
    write_json(&out.with_extension("json"), &PowerOutput { command: "power", config: &file, table: &table })
}

#[derive(Serialize)]
struct SimulateOutput<'a> {
    command: &'static str,
    config: &'a SimulateArgs,
    seed: u64,
    expected_count: f64,
    counts: Vec<usize>,
    files: Vec<String>,
}

pub fn simulate(args: &SimulateArgs) -> Result<()> {
    let seed = config::resolve_seed(args.seed, None)?;
    let model = ModelSection {
        covariate: args.covariate.clone(),
        mask: args.mask.clone(),
        intensity: args.intensity.clone(),
        rho: args.rho,
    };
    let (domain, base) = build_model(&model, args.grid_cells)?;
    let band = match args.band {
        Some(kind) => {
            let section = BandSection { kind, center: args.center, direction: args.direction, offset: args.offset };
            let d = args.d.ok_or_else(|| CliError::Input("--band needs --d".into()))?;
            Some(section.template(window_center(&domain))?.with_scale(d)?)
        }
        None => None,
    };
    let intensity = perturbed_intensity(&SyntheticModel { base, band, target_m: args.m }, domain.mesh())?;
    let sampler = CellSampler::new(&intensity, domain.mesh())?;
    let patterns: Vec<PointPattern> = (0..args.count as u64)
        .into_par_iter()
        .map(|i| sampler.sample(&mut stream(seed, tags::SIMULATE, 0, i, 0), &domain))
        .collect();

    create_dir(&args.out)?;
    let mut files = Vec::new();
    for (i, pattern) in patterns.iter().enumerate() {
        let name = format!("pattern_{i:04}.csv");
        write_pattern_csv(fs::File::create(args.out.join(&name))?, pattern.points())?;
        files.push(name);
    }
    if args.covariate.is_none() {
        // The synthetic covariate, so that the patterns can be fed back to `fit` and `test`.
        let grid = domain.grid();
        let g = grid.geometry();
        let mut w = std::io::BufWriter::new(fs::File::create(args.out.join("covariate.asc"))?);
        write_ascii_grid(
            &mut w,
            g.nrows,
            g.ncols,
            [g.x_origin, g.y_origin],
            [g.cellsize; 2],
            grid.values(),
            grid.valid(),
        )?;
        w.flush()?;
        files.push("covariate.asc".into());
    }
    write_json(
        &args.out.join("simulate.json"),
        &SimulateOutput {
            command: "simulate",
            config: args,
            seed,
            expected_count: args.m,
            counts: patterns.iter().map(|p| p.len()).collect(),
            files,
        },
    )
}

#[derive(Serialize)]
struct BandwidthOutput {
    n: usize,
    #[serde(rename = "H")]
    h: BandwidthMatrix,
    b: Bandwidth1D,
}

pub fn bandwidth(input: &InputArgs) -> Result<()> {
    let (_, pattern) = load_input(input)?;
    let bw = resolve_bandwidths(&pattern, &TestConfig::default())?;
    let out = BandwidthOutput { n: pattern.len(), h: bw.h, b: bw.b };
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| CliError::Input(e.to_string()))?);
    Ok(())
}
