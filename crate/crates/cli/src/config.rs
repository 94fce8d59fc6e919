//! Flat TOML configuration with layered overrides.
//!
//! Layers, lowest first: built-in defaults, a named preset, the config file,
//! `SFTBLOOM_*` environment variables, then command-line flags. Sweep axes
//! accept either a scalar or a list.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sftbloom_core::dqn::{parse_hidden_layers, AgentConfig};
use sftbloom_core::lab::{Experiment, LabConfig};
use sftbloom_core::sim::{Policy, SimConfig};
use sftbloom_core::trace::SyntheticSpec;

use crate::presets;

pub const ENV_PREFIX: &str = "SFTBLOOM_";
/// Environment variables under the prefix that are not config keys.
const ENV_RESERVED: [&str; 2] = ["CONFIG", "LOG"];

/// One or more values of a sweepable setting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Axis<T>(pub Vec<T>);

impl<T> Axis<T> {
    pub fn one(v: T) -> Self {
        Axis(vec![v])
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The single value of a non-sweep setting.
    pub fn single(&self, name: &str) -> Result<&T> {
        match self.0.as_slice() {
            [v] => Ok(v),
            [] => bail!("`{name}` is not set"),
            _ => bail!("`{name}` has {} values; only `sweep` accepts lists", self.0.len()),
        }
    }

    /// The single value if set, `None` if unset.
    pub fn optional(&self, name: &str) -> Result<Option<&T>> {
        if self.0.is_empty() {
            Ok(None)
        } else {
            self.single(name).map(Some)
        }
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for Axis<T> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum OneOrMany<T> {
            Many(Vec<T>),
            One(T),
        }
        Ok(match OneOrMany::deserialize(d)? {
            OneOrMany::Many(v) => Axis(v),
            OneOrMany::One(v) => Axis(vec![v]),
        })
    }
}

impl<T: Serialize> Serialize for Axis<T> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self.0.as_slice() {
            [v] => v.serialize(s),
            vs => vs.serialize(s),
        }
    }
}

/// Every setting of every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    pub preset: Option<String>,

    /// Trace files (CSV, optionally gzipped). Empty means a synthetic trace.
    pub trace: Axis<PathBuf>,
    pub out: PathBuf,
    pub jobs: Option<usize>,

    pub synth_flows: usize,
    pub synth_packets: usize,
    pub synth_duration_s: f64,
    pub synth_locality: f64,
    pub synth_zipf: f64,
    pub synth_seed: u64,

    pub policy: Axis<Policy>,
    pub capacity: Axis<usize>,
    pub rti_s: Axis<f64>,
    pub idle_timeout_s: f64,
    pub eti_multiple: Axis<u32>,
    pub tick_s: Option<f64>,
    pub report_period_s: f64,
    pub eviction_fp_rate: f64,
    pub seed: Axis<u64>,
    /// Share of reporting intervals used for trailing-window metrics.
    pub trailing_fraction: f64,

    /// Required for agent policies; no default.
    pub learning_rate: Axis<f64>,
    pub gamma: Axis<f64>,
    pub hidden_layers: Axis<String>,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_fraction: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync_steps: u64,
    pub warmup: usize,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,

    pub experiments: Vec<Experiment>,
    pub window_sizes: Vec<usize>,
    pub fp_rates: Vec<f64>,
    pub flip_pcts: Vec<f64>,
    pub trials: usize,
    pub size_items: usize,
    pub size_fp_rates: Vec<f64>,
    pub distance_window: usize,
    pub design_window: usize,
    pub design_fp_rate: f64,
    pub design_flip_pcts: Vec<f64>,
    pub space_flows: usize,
    pub space_locality: f64,
    /// Also write one row per trial.
    pub lab_per_trial: bool,
}

impl Default for AppConfig {
    fn default() -> Self {
        let sim = SimConfig::default();
        let agent = AgentConfig::default();
        let lab = LabConfig::default();
        Self {
            preset: None,
            trace: Axis::default(),
            out: PathBuf::from("out"),
            jobs: None,
            synth_flows: 600,
            synth_packets: 300_000,
            synth_duration_s: 1_800.0,
            synth_locality: 0.9,
            synth_zipf: 1.0,
            synth_seed: 7,
            policy: Axis::one(sim.policy),
            capacity: Axis::one(sim.capacity),
            rti_s: Axis::one(sim.rti_s),
            idle_timeout_s: sim.idle_timeout_s,
            eti_multiple: Axis::one(sim.eti_multiple),
            tick_s: sim.tick_s,
            report_period_s: sim.report_period_s,
            eviction_fp_rate: sim.eviction_fp_rate,
            seed: Axis::one(sim.seed),
            trailing_fraction: 0.5,
            learning_rate: Axis::default(),
            gamma: Axis::default(),
            hidden_layers: Axis::default(),
            epsilon_start: agent.epsilon_start,
            epsilon_end: agent.epsilon_end,
            epsilon_decay_fraction: agent.epsilon_decay_fraction,
            replay_capacity: agent.replay_capacity,
            batch_size: agent.batch_size,
            target_sync_steps: agent.target_sync_steps,
            warmup: agent.warmup,
            checkpoint_in: None,
            checkpoint_out: None,
            experiments: Experiment::ALL.to_vec(),
            window_sizes: lab.window_sizes,
            fp_rates: lab.fp_rates,
            flip_pcts: lab.flip_pcts,
            trials: lab.trials,
            size_items: lab.size_items,
            size_fp_rates: lab.size_fp_rates,
            distance_window: lab.distance_window,
            design_window: lab.design_window,
            design_fp_rate: lab.design_fp_rate,
            design_flip_pcts: lab.design_flip_pcts,
            space_flows: lab.space_flows,
            space_locality: lab.space_locality,
            lab_per_trial: false,
        }
    }
}

/// Raw inputs to configuration resolution.
#[derive(Debug, Clone, Default)]
pub struct ConfigSources {
    pub file: Option<PathBuf>,
    pub preset: Option<String>,
    /// `(name, value)` pairs; only names with [`ENV_PREFIX`] are used.
    pub env: Vec<(String, String)>,
    /// Flag overrides, already keyed by config name.
    pub flags: toml::Table,
}

impl ConfigSources {
    pub fn with_process_env(mut self) -> Self {
        self.env = std::env::vars().collect();
        self
    }
}

/// Parses a scalar the way TOML would, falling back to a bare string.
pub fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn env_layer(env: &[(String, String)]) -> toml::Table {
    let mut layer = toml::Table::new();
    for (name, value) in env {
        let Some(key) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        if key.is_empty() || ENV_RESERVED.contains(&key) {
            continue;
        }
        layer.insert(key.to_ascii_lowercase(), parse_value(value));
    }
    layer
}

fn read_file_layer(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Resolves every layer into one validated config.
pub fn resolve(sources: &ConfigSources) -> Result<AppConfig> {
    let file = match &sources.file {
        Some(p) => read_file_layer(p)?,
        None => toml::Table::new(),
    };
    let env = env_layer(&sources.env);
    let preset_name = sources
        .flags
        .get("preset")
        .and_then(|v| v.as_str().map(str::to_string))
        .or_else(|| sources.preset.clone())
        .or_else(|| env.get("preset").and_then(|v| v.as_str()).map(str::to_string))
        .or_else(|| file.get("preset").and_then(|v| v.as_str()).map(str::to_string));

    let mut merged = match &preset_name {
        Some(name) => presets::preset(name)?,
        None => toml::Table::new(),
    };
    for layer in [file, env, sources.flags.clone()] {
        merged.extend(layer);
    }
    if let Some(name) = preset_name {
        merged.insert("preset".into(), toml::Value::String(name));
    }
    let config: AppConfig = toml::Value::Table(merged)
        .try_into()
        .context("invalid configuration")?;
    config.validate()?;
    Ok(config)
}

impl AppConfig {
    /// Checks value ranges shared by every subcommand.
    pub fn validate(&self) -> Result<()> {
        if self.policy.is_empty() || self.capacity.is_empty() || self.rti_s.is_empty() || self.eti_multiple.is_empty() || self.seed.is_empty() {
            bail!("policy, capacity, rti_s, eti_multiple and seed need at least one value");
        }
        for h in self.hidden_layers.values() {
            parse_hidden_layers(h)?;
        }
        if !(self.trailing_fraction > 0.0 && self.trailing_fraction <= 1.0) {
            bail!("trailing_fraction must lie in (0, 1]");
        }
        if self.jobs == Some(0) {
            bail!("jobs must be at least 1");
        }
        Ok(())
    }

    pub fn lab_config(&self) -> Result<LabConfig> {
        let lab = LabConfig {
            window_sizes: self.window_sizes.clone(),
            fp_rates: self.fp_rates.clone(),
            flip_pcts: self.flip_pcts.clone(),
            trials: self.trials,
            seed: *self.seed.single("seed")?,
            size_items: self.size_items,
            size_fp_rates: self.size_fp_rates.clone(),
            distance_window: self.distance_window,
            design_window: self.design_window,
            design_fp_rate: self.design_fp_rate,
            design_flip_pcts: self.design_flip_pcts.clone(),
            space_flows: self.space_flows,
            space_locality: self.space_locality,
        };
        lab.validate()?;
        if self.experiments.is_empty() {
            bail!("experiments must list at least one of A, B, C, D");
        }
        Ok(lab)
    }

    pub fn synthetic_spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            n_flows: self.synth_flows,
            n_packets: self.synth_packets,
            duration_s: self.synth_duration_s,
            locality: self.synth_locality,
            zipf_s: self.synth_zipf,
            seed: self.synth_seed,
        }
    }

    /// Expands sweep axes into single-valued configs, in a fixed order.
    ///
    /// Agent-only axes are collapsed for baseline policies so each distinct
    /// run appears once.
    pub fn cells(&self) -> Vec<AppConfig> {
        let traces: Vec<Option<PathBuf>> = if self.trace.is_empty() {
            vec![None]
        } else {
            self.trace.values().iter().cloned().map(Some).collect()
        };
        let opt_axis = |v: &[f64]| -> Vec<Option<f64>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        };
        let hidden: Vec<Option<String>> = if self.hidden_layers.is_empty() {
            vec![None]
        } else {
            self.hidden_layers.values().iter().cloned().map(Some).collect()
        };

        let mut out = Vec::new();
        for trace in &traces {
            for &policy in self.policy.values() {
                let agent = policy.uses_agent();
                let etis: &[u32] = if agent { self.eti_multiple.values() } else { &self.eti_multiple.values()[..1] };
                let lrs = if agent { opt_axis(self.learning_rate.values()) } else { vec![None] };
                let gammas = if agent { opt_axis(self.gamma.values()) } else { vec![None] };
                let hids = if agent { hidden.clone() } else { vec![None] };
                for &capacity in self.capacity.values() {
                    for &rti in self.rti_s.values() {
                        for &eti in etis {
                            for &lr in &lrs {
                                for &gamma in &gammas {
                                    for h in &hids {
                                        for &seed in self.seed.values() {
                                            let mut cell = self.clone();
                                            cell.trace = Axis(trace.iter().cloned().collect());
                                            cell.policy = Axis::one(policy);
                                            cell.capacity = Axis::one(capacity);
                                            cell.rti_s = Axis::one(rti);
                                            cell.eti_multiple = Axis::one(eti);
                                            cell.learning_rate = Axis(lr.into_iter().collect());
                                            cell.gamma = Axis(gamma.into_iter().collect());
                                            cell.hidden_layers = Axis(h.iter().cloned().collect());
                                            cell.seed = Axis::one(seed);
                                            out.push(cell);
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// A single simulation run, fully resolved.
#[derive(Debug, Clone)]
pub struct RunPlan {
    pub trace: Option<PathBuf>,
    pub sim: SimConfig,
    pub agent: Option<AgentConfig>,
}

impl RunPlan {
    pub fn from_config(cfg: &AppConfig) -> Result<Self> {
        let policy = *cfg.policy.single("policy")?;
        let seed = *cfg.seed.single("seed")?;
        let sim = SimConfig {
            capacity: *cfg.capacity.single("capacity")?,
            rti_s: *cfg.rti_s.single("rti_s")?,
            idle_timeout_s: cfg.idle_timeout_s,
            eti_multiple: *cfg.eti_multiple.single("eti_multiple")?,
            tick_s: cfg.tick_s,
            policy,
            report_period_s: cfg.report_period_s,
            eviction_fp_rate: cfg.eviction_fp_rate,
            seed,
        };
        sim.validate()?;
        let agent = if policy.uses_agent() {
            let missing = |name: &str| anyhow::anyhow!("policy {policy} needs `{name}` (set it or use a preset)");
            let agent = AgentConfig {
                learning_rate: *cfg.learning_rate.optional("learning_rate")?.ok_or_else(|| missing("learning_rate"))?,
                gamma: *cfg.gamma.optional("gamma")?.ok_or_else(|| missing("gamma"))?,
                hidden_layers: parse_hidden_layers(cfg.hidden_layers.optional("hidden_layers")?.ok_or_else(|| missing("hidden_layers"))?)?,
                epsilon_start: cfg.epsilon_start,
                epsilon_end: cfg.epsilon_end,
                epsilon_decay_fraction: cfg.epsilon_decay_fraction,
                epsilon_decay_steps: None,
                replay_capacity: cfg.replay_capacity,
                batch_size: cfg.batch_size,
                target_sync_steps: cfg.target_sync_steps,
                warmup: cfg.warmup,
                seed,
            };
            agent.validate()?;
            Some(agent)
        } else {
            None
        };
        Ok(Self {
            trace: cfg.trace.optional("trace")?.cloned(),
            sim,
            agent,
        })
    }
}

/// The parts of `cfg` that determine a run's results, for embedding in
/// artifacts; output locations and parallelism are cleared.
pub fn config_echo(cfg: &AppConfig) -> serde_json::Value {
    let mut echo = cfg.clone();
    echo.out = PathBuf::new();
    echo.jobs = None;
    echo.checkpoint_out = None;
    serde_json::to_value(&echo).expect("config serialises")
}

/// Labels a cell for grouping and directory naming.
pub fn run_labels(cfg: &AppConfig) -> Result<BTreeMap<String, String>> {
    let plan = RunPlan::from_config(cfg)?;
    let mut labels = BTreeMap::new();
    labels.insert("trace".into(), trace_label(plan.trace.as_deref()));
    labels.insert("policy".into(), plan.sim.policy.name().into());
    labels.insert("capacity".into(), plan.sim.capacity.to_string());
    labels.insert("rti_s".into(), plan.sim.rti_s.to_string());
    labels.insert("seed".into(), plan.sim.seed.to_string());
    if let Some(agent) = &plan.agent {
        labels.insert("eti_multiple".into(), plan.sim.eti_multiple.to_string());
        labels.insert("learning_rate".into(), agent.learning_rate.to_string());
        labels.insert("gamma".into(), agent.gamma.to_string());
        labels.insert(
            "hidden_layers".into(),
            agent.hidden_layers.iter().map(|w| w.to_string()).collect::<Vec<_>>().join("_"),
        );
    }
    Ok(labels)
}

pub fn trace_label(trace: Option<&Path>) -> String {
    match trace {
        None => "synthetic".into(),
        Some(p) => {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            name.trim_end_matches(".gz").trim_end_matches(".csv").to_string()
        }
    }
}
