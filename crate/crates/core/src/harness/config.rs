//! Instance files: one `key = value` per line, `#` starts a comment.
//!
//! ```text
//! map = two_chambers.txt
//! n = 3
//! sensor = 2
//! goals = (1,0);(0,6);(2,5)
//! scenario = none
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::grid::{parse_cell_list, Cell, GridMap};
use crate::restrict::Scenario;
use crate::states::{Configuration, SensorRange};

use super::HarnessError;

/// Every field is optional so that command-line flags can fill the gaps.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InstanceConfig {
    pub map: Option<PathBuf>,
    pub agents: Option<usize>,
    pub sensor: Option<SensorRange>,
    pub goals: Option<Vec<Cell>>,
    pub scenario: Option<Scenario>,
    pub traffic_with_default: bool,
}

fn bad(line: usize, message: impl Into<String>) -> HarnessError {
    HarnessError::Config {
        line,
        message: message.into(),
    }
}

impl FromStr for InstanceConfig {
    type Err = HarnessError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let mut cfg = InstanceConfig::default();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| bad(line, "expected `key = value`"))?;
            let value = value.trim();
            match key.trim() {
                "map" => cfg.map = Some(PathBuf::from(value)),
                "n" | "agents" => {
                    cfg.agents = Some(value.parse().map_err(|_| bad(line, "n must be a positive integer"))?)
                }
                "sensor" => cfg.sensor = Some(value.parse().map_err(|e| bad(line, format!("{e}")))?),
                "goals" => cfg.goals = Some(parse_cell_list(value).map_err(|e| bad(line, format!("{e}")))?),
                "scenario" => cfg.scenario = Some(value.parse().map_err(|e| bad(line, format!("{e}")))?),
                "traffic_with_default" => {
                    cfg.traffic_with_default = value
                        .parse()
                        .map_err(|_| bad(line, "traffic_with_default must be true or false"))?
                }
                other => return Err(bad(line, format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }
}

impl fmt::Display for InstanceConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(m) = &self.map {
            writeln!(f, "map = {}", m.display())?;
        }
        if let Some(n) = self.agents {
            writeln!(f, "n = {n}")?;
        }
        if let Some(s) = self.sensor {
            writeln!(f, "sensor = {s}")?;
        }
        if let Some(goals) = &self.goals {
            let parts: Vec<String> = goals.iter().map(Cell::to_string).collect();
            writeln!(f, "goals = {}", parts.join(";"))?;
        }
        if let Some(s) = self.scenario {
            writeln!(f, "scenario = {s}")?;
        }
        if self.traffic_with_default {
            writeln!(f, "traffic_with_default = true")?;
        }
        Ok(())
    }
}

impl InstanceConfig {
    /// Reads a config file; a relative `map` path is resolved against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = read(path)?;
        let mut cfg: InstanceConfig = text.parse()?;
        if let (Some(m), Some(dir)) = (&cfg.map, path.parent()) {
            if m.is_relative() {
                cfg.map = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    /// Fields set in `over` replace ours.
    pub fn overridden_by(mut self, over: InstanceConfig) -> Self {
        self.map = over.map.or(self.map);
        self.agents = over.agents.or(self.agents);
        self.sensor = over.sensor.or(self.sensor);
        self.goals = over.goals.or(self.goals);
        self.scenario = over.scenario.or(self.scenario);
        self.traffic_with_default |= over.traffic_with_default;
        self
    }

    pub fn effective_scenario(&self) -> Result<Scenario, HarnessError> {
        let mut s = self.scenario.unwrap_or_default();
        if self.traffic_with_default {
            if !s.kind.is_traffic() {
                return Err(HarnessError::InvalidSpec(
                    "traffic_with_default needs a traffic scenario".into(),
                ));
            }
            s.with_default = true;
        }
        Ok(s)
    }

    /// Builds the configuration on `map`. Missing sensor defaults to 1.
    pub fn to_configuration(&self, map: &GridMap) -> Result<Configuration, HarnessError> {
        let goals = self.goals.clone().ok_or(HarnessError::Missing("goals"))?;
        if let Some(n) = self.agents {
            if n != goals.len() {
                return Err(HarnessError::InvalidSpec(format!(
                    "n = {n} but {} goals given",
                    goals.len()
                )));
            }
        }
        let sensor = self.sensor.unwrap_or(SensorRange::Range(1));
        Ok(Configuration::new(map.clone(), sensor, goals, self.effective_scenario()?)?)
    }

    pub fn load_map(&self) -> Result<GridMap, HarnessError> {
        load_map(self.map.as_deref().ok_or(HarnessError::Missing("map"))?)
    }
}

fn read(path: &Path) -> Result<String, HarnessError> {
    fs::read_to_string(path).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads an ASCII map: `.` free, `#` blocked, one row per line.
pub fn load_map(path: &Path) -> Result<GridMap, HarnessError> {
    Ok(read(path)?.parse()?)
}
