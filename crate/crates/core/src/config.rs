//! Experiment configuration: TOML schema, validation and time-grid parsing.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profile::{GeometryConfig, ProfileDescriptor};

/// Sample times `a, a + step, ..., b` written as `"a:step:b"`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub start: f64,
    pub step: f64,
    pub end: f64,
}

impl TimeGrid {
    pub fn times(&self) -> Vec<f64> {
        let n = ((self.end - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

impl FromStr for TimeGrid {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected start:step:end, got {s:?}"));
        }
        let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
        let g = TimeGrid { start: num(parts[0])?, step: num(parts[1])?, end: num(parts[2])? };
        if !(g.start >= 0.0 && g.step > 0.0 && g.end >= g.start) {
            return Err(format!("need 0 <= start <= end and step > 0, got {s:?}"));
        }
        Ok(g)
    }
}

impl Serialize for TimeGrid {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}:{}:{}", self.start, self.step, self.end))
    }
}

impl<'de> Deserialize<'de> for TimeGrid {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Direct,
    Contour,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Weighted,
    H1k,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweeps {
    #[serde(default)]
    pub k: Vec<u32>,
    #[serde(default)]
    pub nu: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LapConfig {
    pub gamma: f64,
    /// Scan points per critical window.
    pub lambda_points: usize,
    pub norm: NormKind,
    pub sigma_sharp: f64,
}

impl Default for LapConfig {
    fn default() -> Self {
        LapConfig { gamma: 1.875, lambda_points: 5, norm: NormKind::Weighted, sigma_sharp: 0.02 }
    }
}

/// `"bump"` for the built-in smooth odd datum, otherwise a `y,re,im` CSV path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialCondition {
    Named(String),
}

impl InitialCondition {
    pub fn csv_path(&self) -> Option<&Path> {
        let InitialCondition::Named(s) = self;
        (s != "bump").then(|| Path::new(s.as_str()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolutionConfig {
    pub routes: Vec<Route>,
    pub t: TimeGrid,
    pub ic: InitialCondition,
    pub contour_alpha: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            routes: vec![Route::Direct],
            t: TimeGrid { start: 0.0, step: 0.25, end: 50.0 },
            ic: InitialCondition::Named("bump".into()),
            contour_alpha: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesConfig {
    pub window: [f64; 2],
    pub seed: u64,
}

impl Default for RatesConfig {
    fn default() -> Self {
        RatesConfig { window: [5.0, 50.0], seed: 0 }
    }
}

/// Initial datum of the depletion sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepletionDatum {
    /// Unit-width Gaussian centered half a unit from the critical point.
    Gaussian,
    /// The datum of the `[evolution]` section.
    Evolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepletionConfig {
    #[serde(default)]
    pub nu: Vec<f64>,
    pub k: u32,
    /// Critical point index (1 or 2) where the plateau is read.
    pub j: usize,
    /// Runs end at `t_scale / sqrt(nu)`.
    pub t_scale: f64,
    pub samples: usize,
    pub ic: DepletionDatum,
}

impl Default for DepletionConfig {
    fn default() -> Self {
        DepletionConfig { nu: vec![], k: 1, j: 1, t_scale: 8.0, samples: 200, ic: DepletionDatum::Gaussian }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: ProfileDescriptor,
    pub grid: GridConfig,
    #[serde(default)]
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub sweeps: Sweeps,
    #[serde(default)]
    pub lap: LapConfig,
    #[serde(default)]
    pub evolution: EvolutionConfig,
    #[serde(default)]
    pub rates: RatesConfig,
    #[serde(default)]
    pub depletion: DepletionConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

fn section_line(src: &str, name: &str) -> Option<usize> {
    src.lines().position(|l| {
        let l = l.trim();
        l == format!("[{name}]") || l.starts_with(&format!("{name} ")) || l.starts_with(&format!("{name}="))
    })
    .map(|i| i + 1)
}

fn invalid(field: &str, line: Option<usize>, message: impl Into<String>) -> Error {
    Error::ConfigInvalid { field: field.to_string(), line, message: message.into() }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let ProfileDescriptor::Table { path: table, .. } = &mut cfg.profile {
            if table.is_relative() {
                *table = path.parent().unwrap_or(Path::new(".")).join(&*table);
            }
        }
        Ok(cfg)
    }

    pub fn parse(src: &str) -> Result<Self> {
        let raw: toml::Table = src
            .parse()
            .map_err(|e: toml::de::Error| invalid("config", e.span().map(|s| line_of(src, s.start)), e.message()))?;
        Self::check_required(src, &raw)?;
        let cfg: ExperimentConfig = toml::from_str(src).map_err(|e| {
            invalid("config", e.span().map(|s| line_of(src, s.start)), e.message().to_string())
        })?;
        cfg.validate(src)?;
        Ok(cfg)
    }

    fn check_required(src: &str, raw: &toml::Table) -> Result<()> {
        let Some(profile) = raw.get("profile").and_then(|p| p.as_table()) else {
            return Err(invalid("profile", None, "missing [profile] section"));
        };
        let line = section_line(src, "profile");
        let family = profile.get("family").and_then(|f| f.as_str());
        let needed: &[&str] = match family {
            Some("kolmogorov") => &["period"],
            Some("table") => &["path", "order"],
            Some(other) => return Err(invalid("profile.family", line, format!("unknown family {other:?}"))),
            None => return Err(invalid("profile.family", line, "missing profile family")),
        };
        for key in needed {
            if !profile.contains_key(*key) {
                return Err(invalid(&format!("profile.{key}"), line, format!("missing required key `{key}`")));
            }
        }
        let Some(grid) = raw.get("grid").and_then(|g| g.as_table()) else {
            return Err(invalid("grid", None, "missing [grid] section"));
        };
        if !grid.contains_key("n") {
            return Err(invalid("grid.n", section_line(src, "grid"), "missing required key `n`"));
        }
        Ok(())
    }

    fn validate(&self, src: &str) -> Result<()> {
        let at = |s: &str| section_line(src, s);
        if let ProfileDescriptor::Kolmogorov { period } = self.profile {
            if !(period > 2.0 * std::f64::consts::PI) {
                return Err(invalid("profile.period", at("profile"), format!("period {period} must exceed 2*pi")));
            }
        }
        if self.grid.n < 16 || self.grid.n % 2 != 0 {
            return Err(invalid("grid.n", at("grid"), "need an even node count of at least 16"));
        }
        if self.sweeps.k.iter().any(|&k| k == 0) {
            return Err(invalid("sweeps.k", at("sweeps"), "wavenumbers must be positive"));
        }
        if self.sweeps.nu.iter().chain(&self.depletion.nu).any(|&nu| !(nu > 0.0)) {
            return Err(invalid("sweeps.nu", at("sweeps"), "viscosities must be positive"));
        }
        if !(1.875..2.0).contains(&self.lap.gamma) {
            return Err(invalid("lap.gamma", at("lap"), "gamma must lie in [15/8, 2)"));
        }
        if self.lap.lambda_points == 0 {
            return Err(invalid("lap.lambda_points", at("lap"), "need at least one scan point"));
        }
        let [a, b] = self.rates.window;
        if !(b > a) {
            return Err(invalid("rates.window", at("rates"), "window end must exceed its start"));
        }
        if !matches!(self.depletion.j, 1 | 2) || self.depletion.k == 0 {
            return Err(invalid("depletion.j", at("depletion"), "j must be 1 or 2 and k positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[profile]\nfamily = \"kolmogorov\"\nperiod = 8.0\n\n[grid]\nn = 64\n";

    #[test]
    fn minimal_config_takes_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.profile, ProfileDescriptor::Kolmogorov { period: 8.0 });
        assert!(c.sweeps.k.is_empty() && c.sweeps.nu.is_empty());
        assert_eq!(c.lap.gamma, 1.875);
        assert_eq!(c.evolution.t.times().len(), 201);
    }

    #[test]
    fn missing_period_names_the_field() {
        let src = "# run\n[profile]\nfamily = \"kolmogorov\"\n[grid]\nn = 64\n";
        match ExperimentConfig::parse(src) {
            Err(Error::ConfigInvalid { field, line, .. }) => {
                assert_eq!(field, "profile.period");
                assert_eq!(line, Some(2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_and_unknown_keys_report_lines() {
        let src = format!("{MINIMAL}[lap]\ngama = 1.9\n");
        match ExperimentConfig::parse(&src) {
            Err(Error::ConfigInvalid { line, message, .. }) => {
                assert_eq!(line, Some(8));
                assert!(message.contains("gama"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(ExperimentConfig::parse("[profile\n"), Err(Error::ConfigInvalid { line: Some(1), .. })));
    }

    #[test]
    fn time_grid_parsing() {
        let g: TimeGrid = "0:0.25:20".parse().unwrap();
        let t = g.times();
        assert_eq!(t.len(), 81);
        assert_eq!(*t.last().unwrap(), 20.0);
        assert!("0:0:1".parse::<TimeGrid>().is_err());
        assert!("1:2".parse::<TimeGrid>().is_err());
    }
}
