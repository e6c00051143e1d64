//! File formats: ESRI ASCII grids for rasters and surfaces, headed CSV for
//! point patterns.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{CovariateGrid, Mask, Mesh, RasterGeometry};

/// Raw contents of an ASCII grid, rows stored bottom-up.
#[derive(Clone, Debug, PartialEq)]
pub struct AsciiGrid {
    pub geometry: RasterGeometry,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}

/// Parses `ncols`, `nrows`, `xllcorner|xllcenter`, `yllcorner|yllcenter`,
/// `cellsize` and an optional `NODATA_value`, followed by `nrows` rows of
/// `ncols` values, top row first.
pub fn read_ascii_grid<R: Read>(reader: R) -> Result<AsciiGrid> {
    let reader = BufReader::new(reader);
    let mut ncols = None;
    let mut nrows = None;
    let mut xll: Option<(f64, bool)> = None;
    let mut yll: Option<(f64, bool)> = None;
    let mut cellsize = None;
    let mut nodata: Option<f64> = None;
    let mut data: Vec<(usize, String)> = Vec::new();
    let mut values_started = false;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let first = trimmed.split_whitespace().next().unwrap_or("");
        let is_key = first.chars().next().is_some_and(|c| c.is_ascii_alphabetic());
        if !values_started && is_key {
            let mut parts = trimmed.split_whitespace();
            let key = parts.next().unwrap_or("").to_ascii_lowercase();
            let raw = parts.next().ok_or_else(|| parse_err(lineno, format!("header key '{key}' has no value")))?;
            let num: f64 = raw.parse().map_err(|_| parse_err(lineno, format!("invalid number '{raw}' for '{key}'")))?;
            let count = |v: f64| -> Result<usize> {
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(parse_err(lineno, format!("'{key}' must be a positive integer")))
                }
            };
            match key.as_str() {
                "ncols" => ncols = Some(count(num)?),
                "nrows" => nrows = Some(count(num)?),
                "xllcorner" => xll = Some((num, false)),
                "xllcenter" => xll = Some((num, true)),
                "yllcorner" => yll = Some((num, false)),
                "yllcenter" => yll = Some((num, true)),
                "cellsize" => cellsize = Some(num),
                "nodata_value" => nodata = Some(num),
                _ => return Err(parse_err(lineno, format!("unknown header key '{key}'"))),
            }
        } else {
            values_started = true;
            data.push((lineno, line));
        }
    }

    let missing = |k: &str| parse_err(0, format!("missing header key '{k}'"));
    let ncols = ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = nrows.ok_or_else(|| missing("nrows"))?;
    let cellsize = cellsize.ok_or_else(|| missing("cellsize"))?;
    let (mut x0, xcenter) = xll.ok_or_else(|| missing("xllcorner"))?;
    let (mut y0, ycenter) = yll.ok_or_else(|| missing("yllcorner"))?;
    if xcenter {
        x0 -= 0.5 * cellsize;
    }
    if ycenter {
        y0 -= 0.5 * cellsize;
    }
    let geometry = RasterGeometry::new(nrows, ncols, x0, y0, cellsize).map_err(|e| parse_err(0, e.to_string()))?;

    let mut file_order = Vec::with_capacity(nrows * ncols);
    let mut last_line = 0;
    for (lineno, line) in &data {
        last_line = *lineno;
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| parse_err(*lineno, format!("invalid cell value '{tok}'")))?;
            if file_order.len() == nrows * ncols {
                return Err(parse_err(*lineno, format!("more than {} cell values", nrows * ncols)));
            }
            file_order.push(v);
        }
    }
    if file_order.len() != nrows * ncols {
        return Err(parse_err(
            last_line,
            format!("expected {} cell values, found {}", nrows * ncols, file_order.len()),
        ));
    }

    let mut values = vec![0.0; nrows * ncols];
    let mut valid = vec![false; nrows * ncols];
    for file_row in 0..nrows {
        let row = nrows - 1 - file_row;
        for col in 0..ncols {
            let v = file_order[file_row * ncols + col];
            let ok = v.is_finite() && nodata.is_none_or(|nd| v != nd);
            values[row * ncols + col] = if ok { v } else { f64::NAN };
            valid[row * ncols + col] = ok;
        }
    }
    Ok(AsciiGrid { geometry, values, valid })
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))
}

pub fn read_covariate_grid(path: &Path) -> Result<CovariateGrid> {
    let raw = read_ascii_grid(open(path)?)?;
    CovariateGrid::new(raw.geometry, raw.values, raw.valid)
}

/// Mask raster: nonzero cells are inside, zero and nodata cells outside.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let raw = read_ascii_grid(open(path)?)?;
    let cells = raw.values.iter().zip(&raw.valid).map(|(&v, &ok)| ok && v != 0.0).collect();
    Mask::new(raw.geometry, cells)
}

pub const NODATA: f64 = -9999.0;

/// Writes a raster; cells with `valid == false` are written as [`NODATA`].
/// Non-square cells are written with GDAL-style `dx`/`dy` header keys.
pub fn write_ascii_grid<W: Write>(
    mut w: W,
    nrows: usize,
    ncols: usize,
    origin: [f64; 2],
    cell: [f64; 2],
    values: &[f64],
    valid: &[bool],
) -> Result<()> {
    writeln!(w, "ncols {ncols}")?;
    writeln!(w, "nrows {nrows}")?;
    writeln!(w, "xllcorner {}", origin[0])?;
    writeln!(w, "yllcorner {}", origin[1])?;
    if ((cell[0] - cell[1]) / cell[0]).abs() < 1e-12 {
        writeln!(w, "cellsize {}", cell[0])?;
    } else {
        writeln!(w, "dx {}", cell[0])?;
        writeln!(w, "dy {}", cell[1])?;
    }
    writeln!(w, "NODATA_value {NODATA}")?;
    for row in (0..nrows).rev() {
        let line: Vec<String> = (0..ncols)
            .map(|col| {
                let i = row * ncols + col;
                if valid[i] {
                    format!("{}", values[i])
                } else {
                    format!("{NODATA}")
                }
            })
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Writes a mesh-aligned surface as an ASCII grid.
pub fn write_surface(path: &Path, mesh: &Mesh, values: &[f64]) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    let rect = mesh.rect();
    write_ascii_grid(
        w,
        mesh.nrows(),
        mesh.ncols(),
        [rect.xmin, rect.ymin],
        [mesh.dx(), mesh.dy()],
        values,
        mesh.inside(),
    )
}

/// Reads a CSV with header `x,y`.
pub fn read_pattern_csv<R: Read>(reader: R) -> Result<Vec<[f64; 2]>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "y" {
        return Err(parse_err(
            1,
            format!("expected header 'x,y', found '{}'", headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let coord = |k: usize| -> Result<f64> {
            let raw = &rec[k];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(line, format!("invalid coordinate '{raw}'")))
        };
        points.push([coord(0)?, coord(1)?]);
    }
    Ok(points)
}

pub fn read_pattern_file(path: &Path) -> Result<Vec<[f64; 2]>> {
    read_pattern_csv(open(path)?)
}

/// Writes `x,y` rows using the shortest round-trip decimal form of each value.
pub fn write_pattern_csv<W: Write>(writer: W, points: &[[f64; 2]]) -> Result<()> {
    let mut w = BufWriter::new(writer);
    writeln!(w, "x,y")?;
    for p in points {
        writeln!(w, "{},{}", p[0], p[1])?;
    }
    w.flush()?;
    Ok(())
}
