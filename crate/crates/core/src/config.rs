//! TOML run configuration with an optional kinematic-chain include and
//! dotted-path overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::attacker::AttackerConfig;
use crate::controller::LqrWeights;
use crate::damping::DampingConfig;
use crate::detector::DetectorConfig;
use crate::error::{Error, Result};
use crate::kinematics::ChainConfig;
use crate::manipulability::ManipConfig;
use crate::plant::PlantParams;
use crate::scenario::{ScenarioConfig, ScenarioId};

/// Threshold with its default used when nothing else is configured.
pub const DEFAULT_TAU: f64 = 71.5735;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorSettings {
    pub tau: Option<f64>,
    pub alpha_f: Option<f64>,
    pub arl_samples: Option<f64>,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            tau: Some(DEFAULT_TAU),
            alpha_f: None,
            arl_samples: None,
        }
    }
}

impl DetectorSettings {
    pub fn resolve(&self, dof: u32) -> Result<DetectorConfig> {
        match (self.tau, self.alpha_f, self.arl_samples) {
            (Some(t), None, None) => DetectorConfig::from_tau(t, dof),
            (None, Some(a), None) => DetectorConfig::from_alpha(a, dof),
            (None, None, Some(arl)) => DetectorConfig::from_arl(arl, dof),
            (Some(t), Some(a), None) => DetectorConfig::checked(t, a, dof),
            _ => Err(Error::InvalidParameter(
                "detector: set tau, alpha_f or arl_samples (tau with alpha_f is cross-checked)".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSettings {
    pub lqr: LqrWeights,
    pub c_w: f64,
}

impl Default for ControllerSettings {
    fn default() -> Self {
        Self {
            lqr: LqrWeights::default(),
            c_w: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSettings {
    pub horizon: usize,
    pub seed: u64,
    pub mc_runs_a: usize,
    pub mc_runs_b: usize,
    /// Initial joint configuration; its hand pose is the Still reference.
    pub q_init: Vec<f64>,
    /// Final point of the Circle Task (m).
    pub circle_end: [f64; 3],
    /// Resync the projector to the estimate every this many steps.
    pub resync_interval: Option<usize>,
}

impl Default for ScenarioSettings {
    // vendor home pose; 3.14 is the published joint value, not π
    #[allow(clippy::approx_constant)]
    fn default() -> Self {
        Self {
            horizon: 5000,
            seed: 0,
            mc_runs_a: 100,
            mc_runs_b: 1,
            q_init: vec![0.0, 0.26, 3.14, -2.27, 0.0, 0.96, 1.57],
            circle_end: [0.0, 0.456, 0.434],
            resync_interval: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    pub dir: PathBuf,
    /// Keep every n-th step in the trace.
    pub decimate: usize,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            decimate: 1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub plant: PlantParams,
    /// TOML file holding a `ChainConfig`; replaces `chain` when set.
    pub chain_file: Option<PathBuf>,
    pub chain: ChainConfig,
    pub detector: DetectorSettings,
    pub controller: ControllerSettings,
    pub damping: DampingConfig,
    pub manip: ManipConfig,
    pub attacker: AttackerConfig,
    pub scenario: ScenarioSettings,
    pub output: OutputSettings,
}

fn parse_toml<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    serde_path_to_error::deserialize(de).map_err(|e| Error::Config {
        path: format!("{origin}: {}", e.path()),
        message: e.inner().to_string(),
    })
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        parse_toml(text, "<config>")
    }

    /// Read a config file and resolve its chain include relative to it.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut cfg: RunConfig = parse_toml(&text, &path.display().to_string())?;
        if let Some(rel) = cfg.chain_file.take() {
            let base = path.parent().unwrap_or(Path::new("."));
            let full = if rel.is_absolute() { rel } else { base.join(rel) };
            cfg.load_chain(&full)?;
        }
        Ok(cfg)
    }

    pub fn load_chain(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config {
            path: format!("chain_file {}", path.display()),
            message: e.to_string(),
        })?;
        self.chain = parse_toml(&text, &path.display().to_string())?;
        self.chain_file = Some(path.canonicalize().unwrap_or_else(|_| path.to_path_buf()));
        Ok(())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        // the include has already been merged into `chain`
        let mut flat = self.clone();
        flat.chain_file = None;
        toml::to_string(&flat).map_err(|e| Error::Config {
            path: "<serialize>".into(),
            message: e.to_string(),
        })
    }

    /// Apply `key.path=value`; the value is read as a TOML literal, falling
    /// back to a bare string.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, raw) = spec.split_once('=').ok_or_else(|| Error::Config {
            path: spec.to_string(),
            message: "override must look like key.path=value".into(),
        })?;
        let key = key.trim();
        let value = parse_literal(raw.trim());
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config {
            path: key.to_string(),
            message: e.to_string(),
        })?;
        let parts: Vec<&str> = key.split('.').collect();
        let (leaf, parents) = parts.split_last().ok_or_else(|| Error::Config {
            path: key.to_string(),
            message: "empty key".into(),
        })?;
        let mut node = &mut root;
        for part in parents {
            node = node
                .as_table_mut()
                .and_then(|t| t.get_mut(*part))
                .ok_or_else(|| Error::Config {
                    path: key.to_string(),
                    message: format!("no section '{part}'"),
                })?;
        }
        node.as_table_mut()
            .ok_or_else(|| Error::Config {
                path: key.to_string(),
                message: "parent is not a table".into(),
            })?
            .insert(leaf.to_string(), value);
        let text = toml::to_string(&root).map_err(|e| Error::Config {
            path: key.to_string(),
            message: e.to_string(),
        })?;
        let chain_file = self.chain_file.clone();
        *self = parse_toml(&text, &format!("override {key}"))?;
        self.chain_file = chain_file;
        Ok(())
    }

    pub fn scenario_config(&self, id: ScenarioId) -> ScenarioConfig {
        let runs = if id.is_attacked() {
            self.scenario.mc_runs_b
        } else {
            self.scenario.mc_runs_a
        };
        ScenarioConfig::named(id, self.scenario.horizon, self.scenario.seed, runs)
    }
}

fn parse_literal(raw: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Holder {
        v: toml::Value,
    }
    toml::from_str::<Holder>(&format!("v = {raw}"))
        .map(|h| h.v)
        .unwrap_or_else(|_| toml::Value::String(raw.to_string()))
}
