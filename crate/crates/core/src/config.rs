//! Whole-system configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::SerialConfig;
use crate::calibration::{CalibrationError, CalibrationSet};
use crate::drivetrain::DriveDefaults;
use crate::simulator::{Arena, SimConfig};
use crate::translator::BackendConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobotConfig {
    pub arena: Arena,
    pub sim: SimConfig,
    pub drive: DriveDefaults,
    /// Calibration JSON; the built-in models are used when unset. Relative
    /// paths resolve against the config file's directory.
    pub calibration_path: Option<PathBuf>,
    pub backend: BackendConfig,
    pub serial: SerialConfig,
    pub service_port: u16,
    pub bridge_port: u16,
    /// Plans waiting behind the one executing.
    pub queue_capacity: usize,
    /// Telemetry ceiling for the service's push stream.
    pub telemetry_hz: f64,
}

impl Default for RobotConfig {
    fn default() -> Self {
        Self {
            arena: Arena::default(),
            sim: SimConfig::default(),
            drive: DriveDefaults::default(),
            calibration_path: None,
            backend: BackendConfig::RuleBased,
            serial: SerialConfig::default(),
            service_port: 8700,
            bridge_port: 8701,
            queue_capacity: 8,
            telemetry_hz: 30.0,
        }
    }
}

impl RobotConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let mut cfg: RobotConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Json { path: path.into(), source })?;
        if let (Some(rel), Some(dir)) = (cfg.calibration_path.as_ref(), path.parent()) {
            if rel.is_relative() {
                cfg.calibration_path = Some(dir.join(rel));
            }
        }
        Ok(cfg)
    }

    pub fn calibration(&self) -> Result<CalibrationSet, ConfigError> {
        match &self.calibration_path {
            None => Ok(CalibrationSet::default()),
            Some(p) => Ok(CalibrationSet::load(p)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_files_fill_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("robot.json");
        std::fs::write(
            &path,
            r#"{"sim": {"dt": 0.02}, "backend": {"kind": "remote_chat", "credential_env": "MY_KEY"},
                "calibration_path": "cal.json"}"#,
        )
        .unwrap();
        let cfg = RobotConfig::load(&path).unwrap();
        assert_eq!(cfg.sim.dt, 0.02);
        assert_eq!(cfg.sim.sma_window, 5);
        assert_eq!(cfg.service_port, 8700);
        assert_eq!(cfg.calibration_path, Some(dir.path().join("cal.json")));
        match &cfg.backend {
            BackendConfig::RemoteChat { credential_env, .. } => assert_eq!(credential_env, "MY_KEY"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(cfg.calibration(), Err(ConfigError::Calibration(_))));
    }

    #[test]
    fn default_round_trips() {
        let cfg = RobotConfig::default();
        let back: RobotConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.calibration().unwrap(), CalibrationSet::default());
    }
}
