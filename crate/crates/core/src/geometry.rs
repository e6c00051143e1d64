//! Observation window, covariate raster, quadrature mesh, and the spatial
//! distribution of the covariate over the window.
//!
//! Every integral over the window is a midpoint sum over the cells of one
//! [`Mesh`]. Cells are stored row-major with row 0 at the bottom (smallest y).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::{quantile_sorted, Bandwidth1D, Kernel1D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rect {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
}

impl Rect {
    pub fn new(xmin: f64, xmax: f64, ymin: f64, ymax: f64) -> Result<Self> {
        let finite = [xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite());
        if !finite || xmax <= xmin || ymax <= ymin {
            return Err(Error::invalid(format!("degenerate rectangle [{xmin}, {xmax}] x [{ymin}, {ymax}]")));
        }
        Ok(Rect { xmin, xmax, ymin, ymax })
    }

    pub fn unit_square() -> Self {
        Rect { xmin: 0.0, xmax: 1.0, ymin: 0.0, ymax: 1.0 }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.xmin && p[0] <= self.xmax && p[1] >= self.ymin && p[1] <= self.ymax
    }
}

/// Shape and placement of a square-celled raster. `(x_origin, y_origin)` is
/// the lower-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RasterGeometry {
    pub nrows: usize,
    pub ncols: usize,
    pub x_origin: f64,
    pub y_origin: f64,
    pub cellsize: f64,
}

impl RasterGeometry {
    pub fn new(nrows: usize, ncols: usize, x_origin: f64, y_origin: f64, cellsize: f64) -> Result<Self> {
        if nrows == 0 || ncols == 0 {
            return Err(Error::invalid("raster must have at least one row and column"));
        }
        if !(cellsize.is_finite() && cellsize > 0.0) || !x_origin.is_finite() || !y_origin.is_finite() {
            return Err(Error::invalid("raster origin and cell size must be finite, cell size positive"));
        }
        Ok(RasterGeometry { nrows, ncols, x_origin, y_origin, cellsize })
    }

    /// Square raster of `n × n` cells covering the unit square.
    pub fn unit_square(n: usize) -> Self {
        RasterGeometry { nrows: n, ncols: n, x_origin: 0.0, y_origin: 0.0, cellsize: 1.0 / n as f64 }
    }

    pub fn len(&self) -> usize {
        self.nrows * self.ncols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extent(&self) -> Rect {
        Rect {
            xmin: self.x_origin,
            xmax: self.x_origin + self.ncols as f64 * self.cellsize,
            ymin: self.y_origin,
            ymax: self.y_origin + self.nrows as f64 * self.cellsize,
        }
    }

    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [self.x_origin + (col as f64 + 0.5) * self.cellsize, self.y_origin + (row as f64 + 0.5) * self.cellsize]
    }

    /// Cell containing `p`; points on the upper/right edge belong to the last cell.
    pub fn locate(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        if !self.extent().contains(p) {
            return None;
        }
        let col = (((p[0] - self.x_origin) / self.cellsize).floor() as usize).min(self.ncols - 1);
        let row = (((p[1] - self.y_origin) / self.cellsize).floor() as usize).min(self.nrows - 1);
        Some((row, col))
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.ncols + col
    }
}

/// Raster of the covariate `Z`. Cells flagged invalid carry no value.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateGrid {
    geometry: RasterGeometry,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl CovariateGrid {
    pub fn new(geometry: RasterGeometry, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if values.len() != geometry.len() || valid.len() != geometry.len() {
            return Err(Error::invalid(format!(
                "covariate grid expects {} cells, got {} values and {} flags",
                geometry.len(),
                values.len(),
                valid.len()
            )));
        }
        if let Some(i) = (0..values.len()).find(|&i| valid[i] && !values[i].is_finite()) {
            return Err(Error::invalid(format!("non-finite covariate value in cell {i}")));
        }
        if !valid.iter().any(|&v| v) {
            return Err(Error::invalid("covariate grid has no data cells"));
        }
        Ok(CovariateGrid { geometry, values, valid })
    }

    /// Samples `f` at every cell center.
    pub fn from_fn(geometry: RasterGeometry, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(geometry.len());
        for row in 0..geometry.nrows {
            for col in 0..geometry.ncols {
                values.push(f(geometry.cell_center(row, col)));
            }
        }
        let valid = vec![true; values.len()];
        Self::new(geometry, values, valid)
    }

    pub fn geometry(&self) -> &RasterGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn value(&self, row: usize, col: usize) -> Option<f64> {
        let i = self.geometry.index(row, col);
        self.valid[i].then_some(self.values[i])
    }

    /// Shifts the raster origin; used to move a whole configuration rigidly.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = self.clone();
        out.geometry.x_origin += dx;
        out.geometry.y_origin += dy;
        out
    }
}

/// Boolean raster marking the cells that belong to the window.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    geometry: RasterGeometry,
    inside: Vec<bool>,
}

impl Mask {
    pub fn new(geometry: RasterGeometry, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != geometry.len() {
            return Err(Error::invalid(format!("mask expects {} cells, got {}", geometry.len(), inside.len())));
        }
        Ok(Mask { geometry, inside })
    }

    pub fn geometry(&self) -> &RasterGeometry {
        &self.geometry
    }

    pub fn cells(&self) -> &[bool] {
        &self.inside
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.geometry.locate(p).is_some_and(|(r, c)| self.inside[self.geometry.index(r, c)])
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = self.clone();
        out.geometry.x_origin += dx;
        out.geometry.y_origin += dy;
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationWindow {
    rect: Rect,
    mask: Option<Mask>,
}

impl ObservationWindow {
    pub fn rectangle(rect: Rect) -> Self {
        ObservationWindow { rect, mask: None }
    }

    /// Window bounded by the mask extent, restricted to its true cells.
    pub fn masked(mask: Mask) -> Self {
        ObservationWindow { rect: mask.geometry.extent(), mask: Some(mask) }
    }

    pub fn rect(&self) -> &Rect {
        &self.rect
    }

    pub fn mask(&self) -> Option<&Mask> {
        self.mask.as_ref()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.rect.contains(p) && self.mask.as_ref().is_none_or(|m| m.contains(p))
    }

    /// `|W|`: the rectangle area, or the count of true mask cells times the
    /// mask cell area.
    pub fn area(&self) -> Result<f64> {
        let area = match &self.mask {
            None => self.rect.area(),
            Some(m) => {
                let cell = m.geometry.cellsize * m.geometry.cellsize;
                m.inside.iter().filter(|&&v| v).count() as f64 * cell
            }
        };
        if area > 0.0 {
            Ok(area)
        } else {
            Err(Error::invalid("window has zero area"))
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        ObservationWindow {
            rect: Rect {
                xmin: self.rect.xmin + dx,
                xmax: self.rect.xmax + dx,
                ymin: self.rect.ymin + dy,
                ymax: self.rect.ymax + dy,
            },
            mask: self.mask.as_ref().map(|m| m.translated(dx, dy)),
        }
    }
}

pub fn window_area(window: &ObservationWindow) -> Result<f64> {
    window.area()
}

/// Bilinear interpolation of `Z` at `p` from the four surrounding cell
/// centers. Within half a cell of the raster border the nearest 2×2 block is
/// extrapolated linearly, so linear fields are reproduced everywhere. Invalid
/// cells are dropped and the remaining weights renormalized; if none of the
/// four carries weight, the nearest valid center within two cells is used.
pub fn covariate_at(grid: &CovariateGrid, window: &ObservationWindow, p: [f64; 2]) -> Result<f64> {
    if !window.contains(p) {
        return Err(Error::invalid(format!("point ({}, {}) lies outside the window", p[0], p[1])));
    }
    interpolate(grid, p).ok_or_else(|| Error::invalid(format!("no covariate data near ({}, {})", p[0], p[1])))
}

fn interpolate(grid: &CovariateGrid, p: [f64; 2]) -> Option<f64> {
    let g = &grid.geometry;
    if !p[0].is_finite() || !p[1].is_finite() {
        return None;
    }
    let fx = (p[0] - g.x_origin) / g.cellsize - 0.5;
    let fy = (p[1] - g.y_origin) / g.cellsize - 0.5;
    let block = |f: f64, n: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let lo = (f.floor().max(0.0) as usize).min(n - 2);
        (lo, lo + 1, f - lo as f64)
    };
    let (c0, c1, tx) = block(fx, g.ncols);
    let (r0, r1, ty) = block(fy, g.nrows);
    let corners = [(r0, c0), (r0, c1), (r1, c0), (r1, c1)];
    let values = corners.map(|(r, c)| grid.value(r, c));
    let weights = |tx: f64, ty: f64| [(1.0 - tx) * (1.0 - ty), tx * (1.0 - ty), (1.0 - tx) * ty, tx * ty];

    if values.iter().all(|v| v.is_some()) && g.extent().contains(p) {
        let w = weights(tx, ty);
        return Some((0..4).map(|k| w[k] * values[k].unwrap_or(0.0)).sum());
    }

    let w = weights(tx.clamp(0.0, 1.0), ty.clamp(0.0, 1.0));
    let (mut acc, mut total) = (0.0, 0.0);
    for k in 0..4 {
        if let Some(v) = values[k] {
            if w[k] > 0.0 {
                acc += w[k] * v;
                total += w[k];
            }
        }
    }
    if total > 0.0 {
        return Some(acc / total);
    }
    nearest_valid(grid, p, 2)
}

fn nearest_valid(grid: &CovariateGrid, p: [f64; 2], radius: i64) -> Option<f64> {
    let g = &grid.geometry;
    let col = ((p[0] - g.x_origin) / g.cellsize).floor() as i64;
    let row = ((p[1] - g.y_origin) / g.cellsize).floor() as i64;
    let mut best: Option<(f64, f64)> = None;
    for r in (row - radius)..=(row + radius) {
        for c in (col - radius)..=(col + radius) {
            if r < 0 || c < 0 || r >= g.nrows as i64 || c >= g.ncols as i64 {
                continue;
            }
            let (r, c) = (r as usize, c as usize);
            if let Some(v) = grid.value(r, c) {
                let center = g.cell_center(r, c);
                let d2 = (center[0] - p[0]).powi(2) + (center[1] - p[1]).powi(2);
                if best.is_none_or(|(bd, _)| d2 < bd) {
                    best = Some((d2, v));
                }
            }
        }
    }
    best.map(|(_, v)| v)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MeshResolution {
    /// One mesh cell per covariate raster cell over the window rectangle.
    Native,
    /// This many cells along the longer side of the window rectangle.
    LongAxis(usize),
}

/// Midpoint quadrature mesh over the window rectangle. A cell belongs to
/// the window when its center does and the covariate is available there.
#[derive(Clone, Debug)]
pub struct Mesh {
    rect: Rect,
    nrows: usize,
    ncols: usize,
    dx: f64,
    dy: f64,
    inside: Vec<bool>,
    z: Vec<f64>,
    n_inside: usize,
    levels: Vec<f64>,
    level_of: Vec<u32>,
}

/// Marker for mesh cells outside the window in [`Mesh::level_of`].
pub const NO_LEVEL: u32 = u32::MAX;

impl Mesh {
    pub fn build(grid: &CovariateGrid, window: &ObservationWindow, resolution: MeshResolution) -> Result<Self> {
        let rect = *window.rect();
        let (ncols, nrows) = match resolution {
            MeshResolution::Native => {
                let cs = grid.geometry.cellsize;
                (((rect.width() / cs).round() as usize).max(1), ((rect.height() / cs).round() as usize).max(1))
            }
            MeshResolution::LongAxis(n) => {
                if n == 0 {
                    return Err(Error::invalid("mesh needs at least one cell per axis"));
                }
                if rect.width() >= rect.height() {
                    (n, ((n as f64 * rect.height() / rect.width()).round() as usize).max(1))
                } else {
                    (((n as f64 * rect.width() / rect.height()).round() as usize).max(1), n)
                }
            }
        };
        let dx = rect.width() / ncols as f64;
        let dy = rect.height() / nrows as f64;
        let mut inside = vec![false; nrows * ncols];
        let mut z = vec![f64::NAN; nrows * ncols];
        for row in 0..nrows {
            for col in 0..ncols {
                let c = [rect.xmin + (col as f64 + 0.5) * dx, rect.ymin + (row as f64 + 0.5) * dy];
                if let Ok(v) = covariate_at(grid, window, c) {
                    inside[row * ncols + col] = true;
                    z[row * ncols + col] = v;
                }
            }
        }
        let n_inside = inside.iter().filter(|&&v| v).count();
        if n_inside == 0 {
            return Err(Error::invalid("window has zero area"));
        }
        let mut levels: Vec<f64> = z.iter().copied().filter(|v| !v.is_nan()).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let level_of =
            z.iter().map(|v| if v.is_nan() { NO_LEVEL } else { levels.partition_point(|l| l < v) as u32 }).collect();
        Ok(Mesh { rect, nrows, ncols, dx, dy, inside, z, n_inside, levels, level_of })
    }

    pub fn rect(&self) -> &Rect {
        &self.rect
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn len(&self) -> usize {
        self.nrows * self.ncols
    }

    pub fn is_empty(&self) -> bool {
        self.n_inside == 0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn dy(&self) -> f64 {
        self.dy
    }

    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    /// Quadrature measure of the window: in-window cells times cell area.
    pub fn area(&self) -> f64 {
        self.n_inside as f64 * self.cell_area()
    }

    pub fn n_inside(&self) -> usize {
        self.n_inside
    }

    pub fn inside(&self) -> &[bool] {
        &self.inside
    }

    pub fn all_inside(&self) -> bool {
        self.n_inside == self.len()
    }

    /// Covariate at each cell center (NaN outside the window).
    pub fn z(&self) -> &[f64] {
        &self.z
    }

    /// Sorted distinct covariate values over in-window cells.
    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Index into [`Mesh::levels`] for each cell, [`NO_LEVEL`] outside.
    pub fn level_of(&self) -> &[u32] {
        &self.level_of
    }

    #[inline]
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [self.rect.xmin + (col as f64 + 0.5) * self.dx, self.rect.ymin + (row as f64 + 0.5) * self.dy]
    }

    pub fn col_centers(&self) -> Vec<f64> {
        (0..self.ncols).map(|c| self.rect.xmin + (c as f64 + 0.5) * self.dx).collect()
    }

    pub fn row_centers(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.rect.ymin + (r as f64 + 0.5) * self.dy).collect()
    }

    pub fn same_shape(&self, other: &Mesh) -> bool {
        self.nrows == other.nrows && self.ncols == other.ncols && self.inside == other.inside
    }

    /// Midpoint rule: sum of in-window values times cell area.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.len() {
            return Err(Error::invalid(format!("surface has {} cells, mesh has {}", values.len(), self.len())));
        }
        let sum: f64 = values.iter().zip(&self.inside).filter(|(_, &ins)| ins).map(|(v, _)| *v).sum();
        Ok(sum * self.cell_area())
    }
}

pub fn quadrature(values: &[f64], mesh: &Mesh) -> Result<f64> {
    mesh.integrate(values)
}

/// Covariate raster, window and the shared quadrature mesh.
#[derive(Clone, Debug)]
pub struct Domain {
    grid: CovariateGrid,
    window: ObservationWindow,
    mesh: Mesh,
}

impl Domain {
    pub fn new(grid: CovariateGrid, window: ObservationWindow, resolution: MeshResolution) -> Result<Self> {
        if let Some(mask) = window.mask() {
            if mask.geometry() != grid.geometry() {
                return Err(Error::invalid("mask raster does not match the covariate raster"));
            }
        }
        window.area()?;
        let mesh = Mesh::build(&grid, &window, resolution)?;
        Ok(Domain { grid, window, mesh })
    }

    /// Window equal to the raster extent, one mesh cell per raster cell.
    pub fn from_grid(grid: CovariateGrid) -> Result<Self> {
        let window = ObservationWindow::rectangle(grid.geometry().extent());
        Self::new(grid, window, MeshResolution::Native)
    }

    pub fn grid(&self) -> &CovariateGrid {
        &self.grid
    }

    pub fn window(&self) -> &ObservationWindow {
        &self.window
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn covariate_at(&self, p: [f64; 2]) -> Result<f64> {
        covariate_at(&self.grid, &self.window, p)
    }
}

/// Event locations with the covariate value cached at each of them.
#[derive(Clone, Debug, PartialEq)]
pub struct PointPattern {
    points: Vec<[f64; 2]>,
    z: Vec<f64>,
}

impl PointPattern {
    pub fn new(points: Vec<[f64; 2]>, domain: &Domain) -> Result<Self> {
        let z = points.iter().map(|&p| domain.covariate_at(p)).collect::<Result<Vec<_>>>()?;
        Ok(PointPattern { points, z })
    }

    pub fn empty() -> Self {
        PointPattern { points: Vec::new(), z: Vec::new() }
    }

    pub(crate) fn from_parts(points: Vec<[f64; 2]>, z: Vec<f64>) -> Self {
        debug_assert_eq!(points.len(), z.len());
        PointPattern { points, z }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn z_values(&self) -> &[f64] {
        &self.z
    }

    /// Every point repeated `k` times (in blocks).
    pub fn repeated(&self, k: usize) -> Self {
        PointPattern { points: self.points.repeat(k), z: self.z.repeat(k) }
    }
}

/// Spatial distribution of the covariate over the window: the CDF `G`, its
/// smoothed density `g` and `g* = |W| g`, tabulated on `z_grid`.
#[derive(Clone, Debug)]
pub struct SpatialCovariateDistribution {
    z_grid: Vec<f64>,
    g_values: Vec<f64>,
    gstar_values: Vec<f64>,
    gstar_floor: f64,
    area: f64,
    smoothing: Bandwidth1D,
    levels: Vec<f64>,
    cumulative: Vec<f64>,
}

const ZGRID_MIN_POINTS: usize = 4097;
const ZGRID_MAX_POINTS: usize = 1 << 17;
const GSTAR_FLOOR_FRACTION: f64 = 1e-6;

impl SpatialCovariateDistribution {
    pub fn build(mesh: &Mesh, smoothing: Bandwidth1D) -> Result<Self> {
        let levels = mesh.levels().to_vec();
        if levels.len() < 2 {
            return Err(Error::numeric("degenerate covariate: fewer than 2 distinct values"));
        }
        let mut counts = vec![0usize; levels.len()];
        for &l in mesh.level_of() {
            if l != NO_LEVEL {
                counts[l as usize] += 1;
            }
        }
        let n = mesh.n_inside() as f64;
        let area = mesh.area();
        let mut cumulative = Vec::with_capacity(levels.len());
        let mut running = 0usize;
        for &c in &counts {
            running += c;
            cumulative.push(running as f64 / n);
        }

        let s = smoothing.get();
        let kernel = Kernel1D::Gaussian;
        let reach = kernel.support_radius() * s;
        let lo = levels[0] - reach;
        let hi = levels[levels.len() - 1] + reach;
        let npts = (((hi - lo) / (s / 16.0)).ceil() as usize + 1).clamp(ZGRID_MIN_POINTS, ZGRID_MAX_POINTS);
        let step = (hi - lo) / (npts - 1) as f64;
        let z_grid: Vec<f64> = (0..npts).map(|i| lo + i as f64 * step).collect();

        let mut gstar_values: Vec<f64> = z_grid
            .iter()
            .map(|&z| {
                let a = levels.partition_point(|&v| v < z - reach);
                let b = levels.partition_point(|&v| v <= z + reach);
                let dens: f64 =
                    (a..b).map(|k| counts[k] as f64 * kernel.eval_scaled(z - levels[k], s)).sum::<f64>() / n;
                area * dens
            })
            .collect();
        let max = gstar_values.iter().copied().fold(0.0, f64::max);
        if !(max > 0.0) {
            return Err(Error::numeric("degenerate covariate: zero spatial density"));
        }
        let gstar_floor = GSTAR_FLOOR_FRACTION * max;
        for v in &mut gstar_values {
            *v = v.max(gstar_floor);
        }

        let mut dist = SpatialCovariateDistribution {
            z_grid,
            g_values: Vec::new(),
            gstar_values,
            gstar_floor,
            area,
            smoothing,
            levels,
            cumulative,
        };
        dist.g_values = dist.z_grid.iter().map(|&z| dist.cdf(z)).collect();
        Ok(dist)
    }

    /// Builds with the normal-reference smoothing of the cell covariate values.
    pub fn with_default_smoothing(mesh: &Mesh) -> Result<Self> {
        Self::build(mesh, default_smoothing(mesh)?)
    }

    /// `G(z)`: fraction of window area with `Z ≤ z`.
    pub fn cdf(&self, z: f64) -> f64 {
        let k = self.levels.partition_point(|&v| v <= z);
        if k == 0 {
            0.0
        } else {
            self.cumulative[k - 1]
        }
    }

    /// `g*(z)`, clipped below at the floor; the floor outside the tabulated range.
    pub fn gstar(&self, z: f64) -> f64 {
        let lo = self.z_grid[0];
        let hi = self.z_grid[self.z_grid.len() - 1];
        if !(z >= lo && z <= hi) {
            return self.gstar_floor;
        }
        let step = (hi - lo) / (self.z_grid.len() - 1) as f64;
        let pos = (z - lo) / step;
        let i = (pos.floor() as usize).min(self.z_grid.len() - 2);
        let t = pos - i as f64;
        let v = (1.0 - t) * self.gstar_values[i] + t * self.gstar_values[i + 1];
        v.max(self.gstar_floor)
    }

    /// `g(z) = g*(z) / |W|`.
    pub fn density(&self, z: f64) -> f64 {
        self.gstar(z) / self.area
    }

    pub fn z_grid(&self) -> &[f64] {
        &self.z_grid
    }

    pub fn g_values(&self) -> &[f64] {
        &self.g_values
    }

    pub fn gstar_values(&self) -> &[f64] {
        &self.gstar_values
    }

    pub fn gstar_floor(&self) -> f64 {
        self.gstar_floor
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn smoothing(&self) -> Bandwidth1D {
        self.smoothing
    }

    /// Trapezoidal `∫ g*(z) dz` over the tabulation range.
    pub fn integral_gstar(&self) -> f64 {
        self.z_grid.windows(2).zip(self.gstar_values.windows(2)).map(|(z, g)| 0.5 * (z[1] - z[0]) * (g[0] + g[1])).sum()
    }
}

/// Silverman's rule applied to the in-window cell covariate values (equal
/// cell areas make this the area-weighted rule).
pub fn default_smoothing(mesh: &Mesh) -> Result<Bandwidth1D> {
    let mut values: Vec<f64> = mesh.z().iter().copied().filter(|v| !v.is_nan()).collect();
    if mesh.levels().len() < 2 {
        return Err(Error::numeric("degenerate covariate: fewer than 2 distinct values"));
    }
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let s = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let iqr = quantile_sorted(&values, 0.75) - quantile_sorted(&values, 0.25);
    let spread = if iqr > 0.0 { s.min(iqr / 1.34) } else { s };
    Bandwidth1D::new(1.06 * spread * n.powf(-0.2))
}

pub fn build_spatial_distribution(domain: &Domain, smoothing: Bandwidth1D) -> Result<SpatialCovariateDistribution> {
    SpatialCovariateDistribution::build(domain.mesh(), smoothing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn linear_domain(n: usize, f: impl Fn([f64; 2]) -> f64) -> Domain {
        let grid = CovariateGrid::from_fn(RasterGeometry::unit_square(n), f).unwrap();
        Domain::from_grid(grid).unwrap()
    }

    #[test]
    fn window_areas() {
        let w = ObservationWindow::rectangle(Rect::unit_square());
        assert_eq!(window_area(&w).unwrap(), 1.0);

        let geom = RasterGeometry::unit_square(4);
        let half: Vec<bool> = (0..16).map(|i| i % 4 < 2).collect();
        let w = ObservationWindow::masked(Mask::new(geom, half).unwrap());
        assert_relative_eq!(window_area(&w).unwrap(), 0.5, max_relative = 1e-15);

        let w = ObservationWindow::rectangle(Rect::new(0.0, 330.0, 0.0, 394.0).unwrap());
        assert_eq!(window_area(&w).unwrap(), 130_020.0);

        let empty = ObservationWindow::masked(Mask::new(geom, vec![false; 16]).unwrap());
        assert!(window_area(&empty).unwrap_err().to_string().contains("zero area"));
    }

    #[test]
    fn rect_rejects_degenerate() {
        assert!(Rect::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(Rect::new(0.0, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn bilinear_reproduces_linear_field() {
        let grid = CovariateGrid::from_fn(RasterGeometry::unit_square(101), |p| p[0]).unwrap();
        let w = ObservationWindow::rectangle(Rect::unit_square());
        assert!((covariate_at(&grid, &w, [0.30, 0.70]).unwrap() - 0.30).abs() < 1e-12);
        // Border half-cells use linear extrapolation.
        assert!((covariate_at(&grid, &w, [0.001, 0.999]).unwrap() - 0.001).abs() < 1e-12);
        assert!((covariate_at(&grid, &w, [1.0, 0.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_at_cell_center_is_cell_value() {
        let geom = RasterGeometry::unit_square(7);
        let grid = CovariateGrid::from_fn(geom, |p| (5.0 * p[0]).sin() * p[1] * p[1]).unwrap();
        let w = ObservationWindow::rectangle(Rect::unit_square());
        for (r, c) in [(0, 0), (3, 4), (6, 6), (2, 5)] {
            let v = covariate_at(&grid, &w, geom.cell_center(r, c)).unwrap();
            assert!((v - grid.value(r, c).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn bilinear_two_by_two_hand_computed() {
        // Row 0 is the bottom row: bottom-left 0, bottom-right 1, top-left 2, top-right 3.
        let geom = RasterGeometry::unit_square(2);
        let grid = CovariateGrid::new(geom, vec![0.0, 1.0, 2.0, 3.0], vec![true; 4]).unwrap();
        let w = ObservationWindow::rectangle(Rect::unit_square());
        // (0.25, 0.25) is the bottom-left center.
        assert!((covariate_at(&grid, &w, [0.25, 0.25]).unwrap() - 0.0).abs() < 1e-15);
        // (0.5, 0.5): weights 1/4 each -> (0 + 1 + 2 + 3) / 4.
        assert!((covariate_at(&grid, &w, [0.5, 0.5]).unwrap() - 1.5).abs() < 1e-15);
        // (0.375, 0.625): tx = 0.25, ty = 0.75 ->
        // 0.75*0.25*0 + 0.25*0.25*1 + 0.75*0.75*2 + 0.25*0.75*3 = 0.0625 + 1.125 + 0.5625 = 1.75
        assert!((covariate_at(&grid, &w, [0.375, 0.625]).unwrap() - 1.75).abs() < 1e-15);
    }

    #[test]
    fn bilinear_skips_nodata() {
        let geom = RasterGeometry::unit_square(2);
        let grid = CovariateGrid::new(geom, vec![0.0, 1.0, 2.0, 99.0], vec![true, true, true, false]).unwrap();
        let w = ObservationWindow::rectangle(Rect::unit_square());
        // Equal weights over the three valid corners.
        assert!((covariate_at(&grid, &w, [0.5, 0.5]).unwrap() - 1.0).abs() < 1e-15);
        // At the invalid center the valid neighbors carry no weight: nearest valid wins.
        let v = covariate_at(&grid, &w, [0.75, 0.75]).unwrap();
        assert!(v == 1.0 || v == 2.0);
    }

    #[test]
    fn covariate_at_errors() {
        let grid = CovariateGrid::from_fn(RasterGeometry::unit_square(4), |p| p[0]).unwrap();
        let w = ObservationWindow::rectangle(Rect::unit_square());
        assert!(covariate_at(&grid, &w, [1.2, 0.5]).is_err());

        let geom = RasterGeometry::unit_square(12);
        let valid: Vec<bool> = (0..144).map(|i| i % 12 == 0).collect();
        let sparse = CovariateGrid::new(geom, vec![1.0; 144], valid).unwrap();
        assert!(covariate_at(&sparse, &w, [0.95, 0.5]).is_err());
    }

    #[test]
    fn grid_validation() {
        let geom = RasterGeometry::unit_square(2);
        assert!(CovariateGrid::new(geom, vec![0.0; 3], vec![true; 3]).is_err());
        assert!(CovariateGrid::new(geom, vec![0.0, f64::NAN, 0.0, 0.0], vec![true; 4]).is_err());
        assert!(CovariateGrid::new(geom, vec![0.0; 4], vec![false; 4]).is_err());
        assert!(CovariateGrid::new(geom, vec![0.0, f64::NAN, 0.0, 0.0], vec![true, false, true, true]).is_ok());
    }

    #[test]
    fn cdf_of_linear_covariate() {
        let domain = linear_domain(101, |p| p[0]);
        let dist = SpatialCovariateDistribution::with_default_smoothing(domain.mesh()).unwrap();
        // Brute-force area fraction of {x <= 0.3} by counting cells.
        let g = domain.grid().geometry();
        let mut count = 0;
        for r in 0..g.nrows {
            for c in 0..g.ncols {
                if g.cell_center(r, c)[0] <= 0.3 {
                    count += 1;
                }
            }
        }
        let oracle = count as f64 / g.len() as f64;
        assert_eq!(dist.cdf(0.3), oracle);
        assert!((dist.cdf(0.3) - 0.3).abs() < 0.01);
        assert_eq!(dist.cdf(-0.1), 0.0);
        assert_eq!(dist.cdf(1.0), 1.0);
        assert!(dist.g_values().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn gstar_integrates_to_area() {
        let domain = linear_domain(128, |p| p[0]);
        let dist = SpatialCovariateDistribution::with_default_smoothing(domain.mesh()).unwrap();
        assert_relative_eq!(dist.integral_gstar(), 1.0, max_relative = 1e-3);
        assert!(dist.gstar_values().iter().all(|&v| v >= dist.gstar_floor()));
        assert!(dist.gstar(50.0) == dist.gstar_floor());
        assert!(dist.gstar_floor() > 0.0);
    }

    #[test]
    fn degenerate_covariate() {
        let domain = linear_domain(8, |_| 3.0);
        let err = SpatialCovariateDistribution::with_default_smoothing(domain.mesh()).unwrap_err();
        assert!(err.to_string().contains("degenerate covariate"));
    }

    #[test]
    fn quadrature_rules() {
        let domain = linear_domain(256, |p| p[0]);
        let mesh = domain.mesh();
        assert_relative_eq!(quadrature(&vec![1.0; mesh.len()], mesh).unwrap(), 1.0, max_relative = 1e-14);
        let x = mesh.z().to_vec();
        assert!((quadrature(&x, mesh).unwrap() - 0.5).abs() < 1e-3);
        assert!(quadrature(&[1.0; 3], mesh).is_err());
    }

    #[test]
    fn quadrature_converges_under_refinement() {
        let f = |p: [f64; 2]| (PI * p[0]).sin() * (PI * p[1]).sin();
        let exact = 4.0 / (PI * PI);
        let err = |n: usize| {
            let domain = linear_domain(n, |p| p[0] + 0.1 * p[1]);
            let mesh = domain.mesh();
            let mut vals = Vec::with_capacity(mesh.len());
            for r in 0..mesh.nrows() {
                for c in 0..mesh.ncols() {
                    vals.push(f(mesh.cell_center(r, c)));
                }
            }
            (quadrature(&vals, mesh).unwrap() - exact).abs()
        };
        let (e1, e2) = (err(32), err(64));
        assert!(e2 < e1 && e2 < 0.3 * e1, "e1 = {e1}, e2 = {e2}");
    }

    #[test]
    fn all_nodata_window_rejected() {
        let geom = RasterGeometry::unit_square(4);
        let grid = CovariateGrid::from_fn(geom, |p| p[0]).unwrap();
        let mask = Mask::new(geom, vec![false; 16]).unwrap();
        assert!(Domain::new(grid, ObservationWindow::masked(mask), MeshResolution::Native).is_err());
    }

    #[test]
    fn masked_mesh_counts_cells() {
        let geom = RasterGeometry::unit_square(8);
        let grid = CovariateGrid::from_fn(geom, |p| p[0] + p[1]).unwrap();
        let cells: Vec<bool> = (0..64).map(|i| (i / 8) < 6).collect();
        let domain =
            Domain::new(grid, ObservationWindow::masked(Mask::new(geom, cells).unwrap()), MeshResolution::Native)
                .unwrap();
        assert_eq!(domain.mesh().n_inside(), 48);
        assert_relative_eq!(domain.mesh().area(), 0.75, max_relative = 1e-14);
        assert_relative_eq!(domain.window().area().unwrap(), 0.75, max_relative = 1e-14);
    }

    #[test]
    fn resampled_mesh_shape() {
        let geom = RasterGeometry::new(10, 20, 0.0, 0.0, 0.5).unwrap();
        let grid = CovariateGrid::from_fn(geom, |p| p[0]).unwrap();
        let window = ObservationWindow::rectangle(geom.extent());
        let mesh = Mesh::build(&grid, &window, MeshResolution::LongAxis(64)).unwrap();
        assert_eq!((mesh.ncols(), mesh.nrows()), (64, 32));
        assert_relative_eq!(mesh.area(), 50.0, max_relative = 1e-12);
    }

    #[test]
    fn pattern_outside_window_rejected() {
        let domain = linear_domain(16, |p| p[0]);
        assert!(PointPattern::new(vec![[0.5, 1.5]], &domain).is_err());
        let p = PointPattern::new(vec![[0.5, 0.25]], &domain).unwrap();
        assert!((p.z_values()[0] - 0.5).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linear_fields_exact(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -1.0f64..1.0,
                                   x in 0.0f64..1.0, y in 0.0f64..1.0) {
                let grid = CovariateGrid::from_fn(RasterGeometry::unit_square(23), |p| a * p[0] + b * p[1] + c).unwrap();
                let w = ObservationWindow::rectangle(Rect::unit_square());
                let v = covariate_at(&grid, &w, [x, y]).unwrap();
                prop_assert!((v - (a * x + b * y + c)).abs() < 1e-12);
            }

            #[test]
            fn cdf_monotone(z1 in -0.5f64..2.5, z2 in -0.5f64..2.5) {
                let domain = linear_domain(32, |p| p[0] + p[1] * p[1]);
                let dist = SpatialCovariateDistribution::with_default_smoothing(domain.mesh()).unwrap();
                let (lo, hi) = if z1 <= z2 { (z1, z2) } else { (z2, z1) };
                prop_assert!(dist.cdf(lo) <= dist.cdf(hi));
            }
        }
    }
}
