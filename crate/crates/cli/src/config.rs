use std::path::{Path, PathBuf};

use ppcov::simulate::{BandKind, PerturbationBand, AXIS_ALIGNED_OFFSET};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "PPCOV_SEED";
pub const DEFAULT_GRID_CELLS: usize = 256;

/// Parses `t` or `start:stop:step` (inclusive of `stop` up to rounding).
pub fn parse_pilot_t(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.trim().parse::<f64>().map_err(|_| format!("invalid number '{p}' in pilot bandwidth"));
    let values = match parts.as_slice() {
        [t] => vec![num(t)?],
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if !(step > 0.0) || b < a {
                return Err(format!("invalid pilot range '{s}': need start <= stop and step > 0"));
            }
            let count = ((b - a) / step + 1e-9).floor() as usize + 1;
            // Rounded so that 0.3 + 1 * 0.05 prints as 0.35.
            (0..count).map(|k| ((a + k as f64 * step) * 1e12).round() / 1e12).collect()
        }
        _ => return Err(format!("invalid pilot bandwidth '{s}': expected t or start:stop:step")),
    };
    if values.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
        return Err("pilot bandwidths must be positive".into());
    }
    Ok(values)
}

pub fn parse_triplet(s: &str) -> Result<[f64; 3], String> {
    let v = parse_list(s)?;
    v.try_into().map_err(|_| format!("expected h11,h12,h22, got '{s}'"))
}

pub fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let v = parse_list(s)?;
    v.try_into().map_err(|_| format!("expected two comma-separated numbers, got '{s}'"))
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| format!("invalid number '{p}'"))).collect()
}

/// An explicit flag wins over the environment, which wins over a config file.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64, String> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw.trim().parse().map_err(|_| format!("{SEED_ENV} is not an unsigned integer: '{raw}'")),
        Err(_) => Ok(file.unwrap_or(0)),
    }
}

/// A band scale, or `"inf"` for the unperturbed model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scale {
    Finite(f64),
    Named(String),
}

impl Scale {
    pub fn resolve(&self) -> Result<Option<f64>, String> {
        match self {
            Scale::Finite(d) if *d > 0.0 && d.is_finite() => Ok(Some(*d)),
            Scale::Finite(d) => Err(format!("band scale must be positive, got {d}")),
            Scale::Named(s) if s.eq_ignore_ascii_case("inf") => Ok(None),
            Scale::Named(s) => Err(format!("unknown band scale '{s}'")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum BandKindName {
    AxisAligned,
    #[default]
    Diagonal,
    DiagonalLiteral,
    General,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSection {
    #[serde(default)]
    pub kind: BandKindName,
    /// Defaults to the center of the window rectangle.
    pub center: Option<[f64; 2]>,
    pub direction: Option<[f64; 2]>,
    pub offset: Option<f64>,
}

impl BandSection {
    /// Band template with unit scale; callers substitute the scale.
    pub fn template(&self, window_center: [f64; 2]) -> Result<PerturbationBand, String> {
        let kind = match self.kind {
            BandKindName::AxisAligned => BandKind::AxisAligned { offset: self.offset.unwrap_or(AXIS_ALIGNED_OFFSET) },
            BandKindName::Diagonal => BandKind::Diagonal,
            BandKindName::DiagonalLiteral => BandKind::DiagonalLiteral,
            BandKindName::General => {
                let [a, b] = self.direction.ok_or("general band needs a direction")?;
                let norm = a.hypot(b);
                if !(norm > 0.0) {
                    return Err("band direction must be nonzero".into());
                }
                BandKind::General { direction: [a / norm, b / norm] }
            }
        };
        PerturbationBand::new(kind, self.center.unwrap_or(window_center), 1.0).map_err(|e| e.to_string())
    }
}

/// Where the covariate and the base intensity come from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Covariate raster; the unit square with `Z(x, y) = x` when absent.
    pub covariate: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    /// Base intensity raster, sampled at mesh cell centers.
    pub intensity: Option<PathBuf>,
    /// `[intercept, slope]` of a base intensity linear in the covariate.
    pub rho: Option<[f64; 2]>,
}

impl ModelSection {
    fn rebase(&mut self, dir: &Path) {
        for p in [&mut self.covariate, &mut self.mask, &mut self.intensity].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerFile {
    pub seed: Option<u64>,
    /// Monte Carlo replicates per scenario.
    pub replicates: usize,
    /// Bootstrap resamples per test.
    pub bootstrap: Option<usize>,
    pub alpha: Option<f64>,
    pub m: Vec<f64>,
    pub d: Vec<Scale>,
    pub grid_cells: Option<usize>,
    pub kernel: Option<crate::KernelName>,
    pub pilot_t: Option<f64>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub band: BandSection,
}

impl PowerFile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut file: PowerFile = toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        if let Some(dir) = path.parent() {
            file.model.rebase(dir);
        }
        Ok(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pilot_range_has_nine_values() {
        let v = parse_pilot_t("0.3:0.7:0.05").unwrap();
        assert_eq!(v.len(), 9);
        assert_eq!(v[1], 0.35);
        assert_eq!(v[8], 0.7);
        assert_eq!(parse_pilot_t("0.25").unwrap(), vec![0.25]);
        assert!(parse_pilot_t("0.7:0.3:0.05").is_err());
        assert!(parse_pilot_t("0.3:0.7:0").is_err());
        assert!(parse_pilot_t("-1").is_err());
        assert!(parse_pilot_t("a:b").is_err());
    }

    #[test]
    fn lists() {
        assert_eq!(parse_triplet("0.01, 0, 0.02").unwrap(), [0.01, 0.0, 0.02]);
        assert!(parse_triplet("1,2").is_err());
        assert_eq!(parse_pair("0.5,0.5").unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn scales() {
        assert_eq!(Scale::Finite(0.1).resolve().unwrap(), Some(0.1));
        assert_eq!(Scale::Named("inf".into()).resolve().unwrap(), None);
        assert!(Scale::Finite(0.0).resolve().is_err());
        assert!(Scale::Named("wide".into()).resolve().is_err());
    }

    #[test]
    fn power_file_parses() {
        let text = r#"
            seed = 3
            replicates = 10
            m = [50, 100]
            d = [0.1, "inf"]
            [band]
            kind = "general"
            direction = [1, -1]
        "#;
        let file: PowerFile = toml::from_str(text).unwrap();
        assert_eq!(file.d.len(), 2);
        let band = file.band.template([0.5, 0.5]).unwrap();
        match band.kind {
            BandKind::General { direction } => assert!((direction[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15),
            _ => panic!("wrong kind"),
        }
        assert!(toml::from_str::<PowerFile>("replicates = 1\nm = [1]\nd = [1]\nbogus = 2").is_err());
    }
}
