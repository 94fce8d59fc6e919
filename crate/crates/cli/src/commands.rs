use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sftbloom_core::dqn::{load_network, save_network, DqnAgent};
use sftbloom_core::eviction::{state_dim, write_decisions_csv, EvictionAgent};
use sftbloom_core::lab::{experiment_a_size_vs_fp, run_experiment, write_cells_csv, write_sizes_csv, write_trials_csv, Experiment};
use sftbloom_core::metrics::{aggregate, normalized_miss_rate, write_groups_csv, RunSummary};
use sftbloom_core::sim::{run_simulation, Policy, SimConfig, SimOutcome};
use sftbloom_core::trace::{generate_synthetic, load_trace, save_trace, Trace};

use crate::config::{config_echo, run_labels, trace_label, AppConfig, RunPlan};

pub const SUMMARY_FILE: &str = "summary.json";
pub const TIMESERIES_FILE: &str = "timeseries.csv";
pub const DECISIONS_FILE: &str = "decisions.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.csv";
/// Labels the report groups by.
pub const REPORT_GROUPS: [&str; 2] = ["policy", "trace"];

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

/// Writes the lab experiments; returns the files written.
pub fn cmd_lab(cfg: &AppConfig) -> Result<Vec<PathBuf>> {
    let lab = cfg.lab_config()?;
    let space = match cfg.trace.optional("trace")? {
        Some(path) => {
            let trace = load_trace(path)?;
            info!("lab over {} flows of {}", trace.flow_space().len(), path.display());
            trace.flow_space().clone()
        }
        None => lab.synthetic_space(),
    };
    let mut written = Vec::new();
    for &exp in &cfg.experiments {
        let path = cfg.out.join(format!("lab_{exp}.csv"));
        if exp == Experiment::A {
            let rows = experiment_a_size_vs_fp(lab.size_items, &lab.size_fp_rates)?;
            write_with(&path, |w| Ok(write_sizes_csv(&rows, w)?))?;
        } else {
            let run = run_experiment(exp, &lab, &space)?;
            write_with(&path, |w| Ok(write_cells_csv(&run.cells, w)?))?;
            if cfg.lab_per_trial {
                let trials = cfg.out.join(format!("lab_{exp}_trials.csv"));
                write_with(&trials, |w| Ok(write_trials_csv(&run, w)?))?;
                written.push(trials);
            }
        }
        info!("experiment {exp} -> {}", path.display());
        written.push(path);
    }
    Ok(written)
}

pub fn load_or_generate_trace(cfg: &AppConfig, path: Option<&Path>) -> Result<Trace> {
    match path {
        Some(p) => Ok(load_trace(p)?),
        None => Ok(generate_synthetic(&cfg.synthetic_spec())?),
    }
}

/// Writes a synthetic trace built from the `synth_*` settings.
pub fn cmd_gen_trace(cfg: &AppConfig, path: &Path) -> Result<()> {
    let trace = generate_synthetic(&cfg.synthetic_spec())?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    save_trace(&trace, path)?;
    info!("wrote {} packets over {} flows to {}", trace.len(), trace.flow_space().len(), path.display());
    Ok(())
}

/// Result of one simulated cell, before it is written anywhere.
pub struct CellRun {
    pub summary: RunSummary,
    pub outcome: SimOutcome,
    pub agent: Option<DqnAgent>,
}

/// Runs one single-valued config on `trace`, including the Optimal reference
/// used for the normalized miss rate.
pub fn simulate_cell(cfg: &AppConfig, trace: &Trace) -> Result<CellRun> {
    let plan = RunPlan::from_config(cfg)?;
    let mut agent = match &plan.agent {
        Some(agent_cfg) => {
            let dim = state_dim(plan.sim.capacity, plan.sim.eviction_fp_rate)?;
            let agent = match &cfg.checkpoint_in {
                Some(path) => {
                    let net = load_network(path).with_context(|| format!("loading {}", path.display()))?;
                    if net.input_dim() != dim {
                        bail!("checkpoint expects {} features, this config produces {dim}", net.input_dim());
                    }
                    DqnAgent::with_network(net, agent_cfg.clone())?
                }
                None => DqnAgent::new(dim, agent_cfg.clone())?,
            };
            Some(agent)
        }
        None => None,
    };
    let outcome = run_simulation(trace, &plan.sim, agent.as_mut().map(|a| a as &mut dyn EvictionAgent))?;

    let reference = if plan.sim.policy == Policy::Optimal {
        None
    } else {
        let opt_cfg = SimConfig {
            policy: Policy::Optimal,
            ..plan.sim.clone()
        };
        Some(run_simulation(trace, &opt_cfg, None)?)
    };
    let opt = reference.as_ref().unwrap_or(&outcome);

    let stats = &outcome.stats;
    let miss_rate = stats.miss_rate().unwrap_or(0.0);
    let trailing = stats.trailing_miss_rate(cfg.trailing_fraction);
    let opt_trailing = opt.stats.trailing_miss_rate(cfg.trailing_fraction);
    let summary = RunSummary {
        labels: run_labels(cfg)?,
        config: config_echo(cfg),
        seed: plan.sim.seed,
        packets: stats.packets(),
        hits: stats.hits,
        misses: stats.misses,
        miss_rate,
        hit_rate: stats.hit_rate().unwrap_or(0.0),
        trailing_miss_rate: trailing,
        optimal_misses: Some(opt.stats.misses),
        normalized_miss_rate: opt.stats.miss_rate().and_then(|m| normalized_miss_rate(miss_rate, m)),
        trailing_normalized_miss_rate: trailing.zip(opt_trailing).and_then(|(s, o)| normalized_miss_rate(s, o)),
        report_period_s: stats.report_period_s,
        hit_rate_series: stats.hit_rate_series(),
        evictions: outcome.events.iter().filter(|e| e.is_eviction()).count() as u64,
        eti_decisions: outcome.decisions.len() as u64,
    };
    Ok(CellRun { summary, outcome, agent })
}

/// Writes a cell's artifacts into `dir`.
pub fn write_cell(run: &CellRun, cfg: &AppConfig, dir: &Path) -> Result<()> {
    write_with(&dir.join(TIMESERIES_FILE), |w| Ok(run.outcome.stats.write_timeseries_csv(w)?))?;
    write_with(&dir.join(DECISIONS_FILE), |w| Ok(write_decisions_csv(&run.outcome.decisions, w)?))?;
    if let (Some(agent), Some(path)) = (&run.agent, &cfg.checkpoint_out) {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        save_network(agent.online(), path).with_context(|| format!("saving {}", path.display()))?;
    }
    // Written last: its presence marks the cell complete.
    write_with(&dir.join(SUMMARY_FILE), |w| {
        serde_json::to_writer_pretty(&mut *w, &run.summary)?;
        Ok(w.write_all(b"\n")?)
    })
}

pub fn cmd_sim(cfg: &AppConfig) -> Result<RunSummary> {
    let plan = RunPlan::from_config(cfg)?;
    let trace = load_or_generate_trace(cfg, plan.trace.as_deref())?;
    info!(
        "simulating {} on {} ({} packets)",
        plan.sim.policy,
        trace_label(plan.trace.as_deref()),
        trace.len()
    );
    let run = simulate_cell(cfg, &trace)?;
    write_cell(&run, cfg, &cfg.out)?;
    info!(
        "misses {} / {} (miss rate {:.4}, normalized {})",
        run.summary.misses,
        run.summary.packets,
        run.summary.miss_rate,
        run.summary
            .normalized_miss_rate
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "undefined".into())
    );
    Ok(run.summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub status: CellStatus,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cells: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Option<Self>> {
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?))
    }

    /// Atomic replace, so an interrupted write never leaves a torn manifest.
    pub fn store(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        write_with(&tmp, |w| {
            serde_json::to_writer_pretty(&mut *w, self)?;
            Ok(w.write_all(b"\n")?)
        })?;
        fs::rename(&tmp, path).with_context(|| format!("replacing {}", path.display()))
    }
}

/// Stable, filesystem-safe identifier for a cell.
pub fn cell_id(cfg: &AppConfig) -> Result<String> {
    let labels = run_labels(cfg)?;
    let order = ["trace", "policy", "capacity", "rti_s", "eti_multiple", "learning_rate", "gamma", "hidden_layers", "seed"];
    let parts: Vec<String> = order
        .iter()
        .filter_map(|k| labels.get(*k).map(|v| format!("{k}={v}")))
        .collect();
    Ok(parts
        .join(",")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "=,._-".contains(c) { c } else { '_' })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepReport {
    pub total: usize,
    pub skipped: usize,
    pub completed: usize,
    pub failed: usize,
}

impl SweepReport {
    pub fn all_done(&self) -> bool {
        self.failed == 0 && self.skipped + self.completed == self.total
    }
}

/// Runs every cell of the configured grid under `out/cells/<id>`.
/// Cells recorded as done in an existing manifest (with their summary on
/// disk) are skipped.
pub fn cmd_sweep(cfg: &AppConfig) -> Result<SweepReport> {
    let cells = cfg.cells();
    let ids = cells.iter().map(cell_id).collect::<Result<Vec<_>>>()?;
    let cells_dir = cfg.out.join("cells");
    let manifest_path = cfg.out.join(MANIFEST_FILE);
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;

    let previous = Manifest::load(&manifest_path)?.unwrap_or_default();
    let done_before = |id: &str| {
        previous.cells.iter().any(|e| e.id == id && e.status == CellStatus::Done) && cells_dir.join(id).join(SUMMARY_FILE).exists()
    };
    let manifest = Manifest {
        cells: ids
            .iter()
            .map(|id| ManifestEntry {
                id: id.clone(),
                status: if done_before(id) { CellStatus::Done } else { CellStatus::Pending },
                error: None,
            })
            .collect(),
    };
    let skipped = manifest.cells.iter().filter(|e| e.status == CellStatus::Done).count();
    manifest.store(&manifest_path)?;
    info!("sweep: {} cells, {} already complete", cells.len(), skipped);

    // Traces are shared read-only across cells.
    let mut traces = std::collections::BTreeMap::new();
    for cell in &cells {
        let path = cell.trace.optional("trace")?.cloned();
        if let std::collections::btree_map::Entry::Vacant(slot) = traces.entry(path) {
            let trace = load_or_generate_trace(cfg, slot.key().as_deref())?;
            slot.insert(trace);
        }
    }

    let manifest = Mutex::new(manifest);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .context("building worker pool")?;
    pool.install(|| {
        (0..cells.len()).into_par_iter().for_each(|i| {
            if manifest.lock().expect("manifest lock").cells[i].status == CellStatus::Done {
                return;
            }
            let cell = &cells[i];
            let trace = &traces[&cell.trace.optional("trace").ok().flatten().cloned()];
            let run = simulate_cell(cell, trace).and_then(|run| write_cell(&run, cell, &cells_dir.join(&ids[i])));
            let mut m = manifest.lock().expect("manifest lock");
            match run {
                Ok(()) => m.cells[i].status = CellStatus::Done,
                Err(e) => {
                    warn!("cell {} failed: {e:#}", ids[i]);
                    m.cells[i].status = CellStatus::Failed;
                    m.cells[i].error = Some(format!("{e:#}"));
                }
            }
            if let Err(e) = m.store(&manifest_path) {
                warn!("manifest update failed: {e:#}");
            }
        })
    });

    let manifest = manifest.into_inner().expect("manifest lock");
    let failed = manifest.cells.iter().filter(|e| e.status == CellStatus::Failed).count();
    let done = manifest.cells.iter().filter(|e| e.status == CellStatus::Done).count();
    Ok(SweepReport {
        total: cells.len(),
        skipped,
        completed: done - skipped,
        failed,
    })
}

#[derive(Debug)]
pub struct ReportOutput {
    pub csv: String,
    pub runs: usize,
    pub corrupt: Vec<(PathBuf, String)>,
}

/// Aggregates every summary under `input`, grouped by policy and trace.
pub fn cmd_report(input: &Path) -> Result<ReportOutput> {
    if !input.is_dir() {
        bail!("{} is not a directory", input.display());
    }
    let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(input)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file() && e.file_name() == SUMMARY_FILE)
        .map(|e| e.into_path())
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no {SUMMARY_FILE} files under {}", input.display());
    }
    let mut runs = Vec::new();
    let mut corrupt = Vec::new();
    for p in paths {
        let parsed = fs::read_to_string(&p)
            .map_err(|e| anyhow!(e))
            .and_then(|t| serde_json::from_str::<RunSummary>(&t).map_err(|e| anyhow!(e)));
        match parsed {
            Ok(s) => runs.push(s),
            Err(e) => corrupt.push((p, e.to_string())),
        }
    }
    if runs.is_empty() {
        bail!("every summary under {} is unreadable", input.display());
    }
    let rows = aggregate(&runs, &REPORT_GROUPS);
    let mut buf = Vec::new();
    write_groups_csv(&rows, &REPORT_GROUPS, &mut buf)?;
    Ok(ReportOutput {
        csv: String::from_utf8(buf).expect("csv output is utf-8"),
        runs: runs.len(),
        corrupt,
    })
}
