//! Experiment orchestration: configuration, seeded runs, timing study and
//! plot-data emission.

mod plot;
mod run;
mod timing;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ChannelConfig;
use crate::drl::policy::Registry;
use crate::drl::TrainConfig;
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::params::NetworkParams;

pub use plot::{emit_plotdata, smooth};
pub use run::{run_experiment, run_seed, seed_dir, RunSummary, SeedResult};
pub use timing::{timing_study, TimingRow};

/// Environment variable that overrides the results root.
pub const RESULTS_ENV: &str = "WNCS_RESULTS_DIR";

pub const ALL_ALGORITHMS: [&str; 5] = ["optimization", "dqn", "ddqn", "bdq", "random"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub name: String,
    /// Named parameter set applied before the file's own values.
    pub preset: Option<String>,
    pub algorithms: Vec<String>,
    /// Results root; relative paths resolve against the working directory.
    pub results_dir: PathBuf,
    /// Node counts of the timing study.
    pub timing_nodes: Vec<usize>,
    pub timing_steps: usize,
    /// Write one metrics record per step instead of per episode.
    pub metrics_per_step: bool,
    /// Parallel seed jobs; 0 uses every available core.
    pub jobs: usize,
    /// Moving-average window for plot data, episodes.
    pub smoothing_window: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            preset: None,
            algorithms: ALL_ALGORITHMS.iter().map(|s| s.to_string()).collect(),
            results_dir: PathBuf::from("results"),
            timing_nodes: vec![5, 25, 50],
            timing_steps: 1000,
            metrics_per_step: false,
            jobs: 0,
            smoothing_window: 50,
        }
    }
}

/// Full experiment description, one section per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub network: NetworkParams,
    pub channel: ChannelConfig,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            network: NetworkParams::default(),
            channel: ChannelConfig::default(),
            env: EnvConfig {
                power_scale: DEFAULT_POWER_SCALE,
                // with power visible in the reward, an unmasked agent learns
                // that a violation is cheaper than a deep-fade transmission
                mask_infeasible: true,
                ..EnvConfig::default()
            },
            train: TrainConfig::default(),
        }
    }
}

pub const PRESETS: [&str; 6] = ["fig3", "fig4", "fig5", "fig6", "desk", "desk2"];

/// Named scenario presets.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    c.scenario.name = name.to_string();
    c.scenario.preset = Some(name.to_string());
    match name {
        "fig3" => {}
        "fig4" => c.network.mati_s = 0.06,
        "fig5" => c.network.mad_s = 0.01,
        "fig6" => c.network.n_nodes = 25,
        "desk" | "desk2" => {
            c.network.n_nodes = if name == "desk" { 5 } else { 2 };
            c.network.m_max = 50;
            c.train.episodes = 500;
            // a fifth of the episodes, so the learning rate ends near where
            // the full-length schedule ends
            c.train.lr_decay = 1e-2;
            c.train.seeds = 5;
            c.train.test_episodes = 20;
            c.env.h_levels = 64;
            c.env.p_levels = 64;
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    }
    Ok(c)
}

/// Reward power scale of experiment configs: the reward sees power in units
/// of 0.1 mW, so a one-symbol change in blocklength moves it visibly.
pub const DEFAULT_POWER_SCALE: f64 = 1e4;

fn merge(base: &mut toml::Table, over: &toml::Table) {
    for (k, v) in over {
        match (base.get_mut(k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            _ => {
                base.insert(k.clone(), v.clone());
            }
        }
    }
}

/// Line number (1-based) of `field = …` inside `[section]`.
fn locate(text: &str, section: &str, field: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == field {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

impl ExperimentConfig {
    /// Parse a TOML config, applying its preset (if any) underneath.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let direct: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        let table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{origin}: {e}")))?;
        let mut cfg = match &direct.scenario.preset {
            Some(p) => {
                let base = preset(p)?;
                let mut merged = toml::Table::try_from(&base).map_err(|e| Error::Config(e.to_string()))?;
                merge(&mut merged, &table);
                merged
                    .try_into::<ExperimentConfig>()
                    .map_err(|e| Error::Config(format!("{origin}: {e}")))?
            }
            None => direct,
        };
        let net_table = table.get("network").and_then(|v| v.as_table());
        if !net_table.is_some_and(|t| t.contains_key("noise_power_w")) {
            cfg.network.rederive_noise();
        }
        cfg.validate_with_source(text, origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with_source("", "config")
    }

    fn validate_with_source(&self, text: &str, origin: &str) -> Result<()> {
        let wrap = |section: &str, e: Error| -> Error {
            match e {
                Error::InvalidParam { field, reason } => {
                    let at = locate(text, section, field).map_or(String::new(), |l| format!(" (line {l})"));
                    Error::Config(format!("{origin}: [{section}] {field}{at}: {reason}"))
                }
                other => other,
            }
        };
        self.network.validate().map_err(|e| wrap("network", e))?;
        self.channel.validate().map_err(|e| wrap("channel", e))?;
        self.env.validate().map_err(|e| wrap("env", e))?;
        self.train.validate().map_err(|e| wrap("train", e))?;
        let s = &self.scenario;
        let scen = |field: &'static str, reason: String| {
            wrap("scenario", Error::InvalidParam { field, reason })
        };
        if s.name.is_empty() || s.name.contains(['/', '\\']) {
            return Err(scen("name", format!("must be a plain directory name, got `{}`", s.name)));
        }
        if s.algorithms.is_empty() {
            return Err(scen("algorithms", "at least one algorithm is required".into()));
        }
        let reg = Registry::default();
        if let Some(a) = s.algorithms.iter().find(|a| !reg.contains(a)) {
            let at = locate(text, "scenario", "algorithms").map_or(String::new(), |l| format!(" (line {l})"));
            return Err(Error::UnknownAlgorithm(format!("{a}{at}; known: {}", reg.names().join(", "))));
        }
        if s.timing_nodes.contains(&0) || s.timing_steps == 0 {
            return Err(scen("timing_nodes", "node counts and step count must be >= 1".into()));
        }
        if s.smoothing_window == 0 {
            return Err(scen("smoothing_window", "must be >= 1".into()));
        }
        Ok(())
    }

    /// Results directory for this scenario, honouring [`RESULTS_ENV`].
    pub fn results_root(&self) -> PathBuf {
        let root = std::env::var_os(RESULTS_ENV).map_or_else(|| self.scenario.results_dir.clone(), PathBuf::from);
        root.join(&self.scenario.name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in PRESETS {
            let c = preset(p).unwrap();
            c.validate().unwrap();
        }
        assert_eq!(preset("fig6").unwrap().network.n_nodes, 25);
        assert_eq!(preset("fig4").unwrap().network.mati_s, 0.06);
        assert!(preset("fig9").is_err());
    }

    #[test]
    fn file_values_override_preset() {
        let text = "[scenario]\npreset = \"desk\"\nname = \"mine\"\n\n[network]\nn_nodes = 2\n";
        let c = ExperimentConfig::from_toml_str(text, "t").unwrap();
        assert_eq!(c.network.n_nodes, 2);
        assert_eq!(c.network.m_max, 50);
        assert_eq!(c.scenario.name, "mine");
        assert_eq!(c.train.episodes, 500);
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let text = "[network]\nmati_prob = 1.5\n";
        let e = ExperimentConfig::from_toml_str(text, "cfg.toml").unwrap_err().to_string();
        assert!(e.contains("mati_prob") && e.contains("line 2"), "{e}");
        let text = "[network]\nbogus = 1\n";
        let e = ExperimentConfig::from_toml_str(text, "cfg.toml").unwrap_err().to_string();
        assert!(e.contains("bogus") && e.contains("line 2"), "{e}");
        let text = "[scenario]\nalgorithms = [\"dqn\", \"a3c\"]\n";
        let e = ExperimentConfig::from_toml_str(text, "cfg.toml").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn bandwidth_change_rederives_noise() {
        let text = "[network]\nbandwidth_hz = 2e5\nmad_s = 1e-3\n";
        let c = ExperimentConfig::from_toml_str(text, "t").unwrap();
        assert!((c.network.noise_power_w - 2.0 * NetworkParams::default().noise_power_w).abs() < 1e-25);
    }

    #[test]
    fn resolved_config_roundtrips() {
        let c = preset("desk").unwrap();
        let text = c.to_toml_string().unwrap();
        let back = ExperimentConfig::from_toml_str(&text, "t").unwrap();
        assert_eq!(back, c);
    }
}
