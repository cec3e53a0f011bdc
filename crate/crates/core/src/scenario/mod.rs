//! Scenario grid, closed-loop world, metrics and Monte Carlo aggregation.

pub mod metrics;
pub mod monte_carlo;
pub mod trace;
pub mod world;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    A1,
    A2,
    A3,
    B1,
    B2,
    B3,
    B4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Still,
    Circle,
}

/// Which tasks run and which defenses are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioFlags {
    pub nominal: TaskKind,
    pub attacker: Option<TaskKind>,
    pub chi2_on: bool,
    pub vd_on: bool,
    pub mr_on: bool,
}

impl ScenarioId {
    pub const ALL: [ScenarioId; 7] = [
        ScenarioId::A1,
        ScenarioId::A2,
        ScenarioId::A3,
        ScenarioId::B1,
        ScenarioId::B2,
        ScenarioId::B3,
        ScenarioId::B4,
    ];

    pub fn flags(self) -> ScenarioFlags {
        use ScenarioId::*;
        use TaskKind::*;
        let (nominal, attacker, chi2_on, vd_on, mr_on) = match self {
            A1 => (Circle, None, false, false, false),
            A2 => (Circle, None, false, true, false),
            A3 => (Circle, None, false, true, true),
            B1 => (Still, Some(Circle), false, false, false),
            B2 => (Still, Some(Circle), true, false, false),
            B3 => (Still, Some(Circle), true, true, false),
            B4 => (Still, Some(Circle), true, true, true),
        };
        ScenarioFlags {
            nominal,
            attacker,
            chi2_on,
            vd_on,
            mr_on,
        }
    }

    pub fn is_attacked(self) -> bool {
        self.flags().attacker.is_some()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioId::A1 => "A1",
            ScenarioId::A2 => "A2",
            ScenarioId::A3 => "A3",
            ScenarioId::B1 => "B1",
            ScenarioId::B2 => "B2",
            ScenarioId::B3 => "B3",
            ScenarioId::B4 => "B4",
        }
    }
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioId::ALL
            .iter()
            .copied()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown scenario id '{s}' (expected A1–A3 or B1–B4)")))
    }
}

/// Per-run scenario description: flags plus horizon and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub id: Option<ScenarioId>,
    pub flags: ScenarioFlags,
    pub horizon: usize,
    pub seed: u64,
    pub mc_runs: usize,
}

impl ScenarioConfig {
    pub fn named(id: ScenarioId, horizon: usize, seed: u64, mc_runs: usize) -> Self {
        Self {
            id: Some(id),
            flags: id.flags(),
            horizon,
            seed,
            mc_runs,
        }
    }

    pub fn label(&self) -> String {
        self.id.map_or_else(|| "custom".to_string(), |id| id.to_string())
    }
}
