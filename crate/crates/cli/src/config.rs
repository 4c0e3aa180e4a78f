//! Run settings shared by every subcommand.
//!
//! Values come from command-line flags, then an optional JSON config file,
//! then the built-in defaults.

use std::path::Path;

use efk_core::dataset::DEFAULT_MIN_DIAG;
use efk_core::represent::DEFAULT_SLICES;
use efk_core::structure::{CcConfig, EdgeOperator};
use serde::Deserialize;

use crate::error::{io_at, CliError};

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub window_ms: Option<f64>,
    pub slices: Option<usize>,
    pub omega: Option<usize>,
    pub operator: Option<String>,
    pub min_diag: Option<f64>,
    pub seed: Option<u64>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub window_ms: f64,
    pub slices: usize,
    pub omega: usize,
    pub operator: EdgeOperator,
    pub min_diag: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            window_ms: 100.0,
            slices: DEFAULT_SLICES,
            omega: CcConfig::default().omega,
            operator: EdgeOperator::Sobel,
            min_diag: DEFAULT_MIN_DIAG,
            seed: 0,
        }
    }
}

impl RunConfig {
    /// Layers `flags` over `file` over the defaults, then validates.
    pub fn resolve(flags: &ConfigFile, file: Option<&ConfigFile>) -> Result<Self, CliError> {
        let empty = ConfigFile::default();
        let file = file.unwrap_or(&empty);
        let d = RunConfig::default();
        let operator = match flags.operator.as_ref().or(file.operator.as_ref()) {
            Some(s) => s.parse().map_err(CliError::Config)?,
            None => d.operator,
        };
        let cfg = RunConfig {
            window_ms: flags.window_ms.or(file.window_ms).unwrap_or(d.window_ms),
            slices: flags.slices.or(file.slices).unwrap_or(d.slices),
            omega: flags.omega.or(file.omega).unwrap_or(d.omega),
            operator,
            min_diag: flags.min_diag.or(file.min_diag).unwrap_or(d.min_diag),
            seed: flags.seed.or(file.seed).unwrap_or(d.seed),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        if !(self.window_ms > 0.0 && self.window_ms.is_finite()) {
            return Err(CliError::Config(format!("window_ms must be positive, got {}", self.window_ms)));
        }
        if self.window_us() == 0 {
            return Err(CliError::Config("window_ms is shorter than one microsecond".into()));
        }
        if self.slices == 0 {
            return Err(CliError::Config("slices must be at least 1".into()));
        }
        if self.omega < 3 || self.omega % 2 == 0 {
            return Err(CliError::Config(format!("omega must be odd and at least 3, got {}", self.omega)));
        }
        if !(self.min_diag >= 0.0 && self.min_diag.is_finite()) {
            return Err(CliError::Config(format!("min_diag must be non-negative, got {}", self.min_diag)));
        }
        Ok(())
    }

    pub fn window_us(&self) -> u64 {
        (self.window_ms * 1000.0).round() as u64
    }

    pub fn cc(&self) -> CcConfig {
        CcConfig { omega: self.omega, ..CcConfig::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let file = ConfigFile { slices: Some(5), omega: Some(7), ..Default::default() };
        let flags = ConfigFile { omega: Some(3), ..Default::default() };
        let cfg = RunConfig::resolve(&flags, Some(&file)).unwrap();
        assert_eq!(cfg.omega, 3);
        assert_eq!(cfg.slices, 5);
        assert_eq!(cfg.window_ms, 100.0);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let bad = ConfigFile { omega: Some(4), ..Default::default() };
        assert!(RunConfig::resolve(&bad, None).is_err());
        let bad = ConfigFile { operator: Some("canny".into()), ..Default::default() };
        assert!(RunConfig::resolve(&bad, None).is_err());
    }

    #[test]
    fn unknown_config_keys_fail() {
        assert!(serde_json::from_str::<ConfigFile>(r#"{"omgea": 3}"#).is_err());
    }
}
