//! Controlled Bloom-filter locality experiments over a sorted flow space.
//!
//! A trial samples a window of the sorted space, inserts half of it into a
//! filter, perturbs the filter, queries every flow of the space, and measures
//! how far the detected flows sit from the window center.
//!
//! - `A`: filter size against target false-positive rate.
//! - `B`: true-positive retention against flip percentage.
//! - `C`: false-positive distance against flip percentage at a fixed window.
//! - `D`: retention and distance over a wide flip range at the agent's setting.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bloom::{compute_size, BloomError, BloomFilter};
use crate::flowspace::{center_distances_by_position, sample_window, FlowError, SortedFlowSpace};
use crate::metrics::MeanStd;
use crate::seed::derive_seed;
use crate::trace::synthetic_flow_space;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid lab config: {0}")]
    Config(String),
    #[error(transparent)]
    Bloom(#[from] BloomError),
    #[error(transparent)]
    Flow(#[from] FlowError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Experiment {
    A,
    B,
    C,
    D,
}

impl Experiment {
    pub const ALL: [Experiment; 4] = [Experiment::A, Experiment::B, Experiment::C, Experiment::D];

    fn id(self) -> u64 {
        self as u64
    }

    pub fn name(self) -> &'static str {
        match self {
            Experiment::A => "A",
            Experiment::B => "B",
            Experiment::C => "C",
            Experiment::D => "D",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Experiment::A),
            "B" => Ok(Experiment::B),
            "C" => Ok(Experiment::C),
            "D" => Ok(Experiment::D),
            _ => Err(format!("unknown experiment {s:?} (expected A, B, C or D)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabConfig {
    pub window_sizes: Vec<usize>,
    pub fp_rates: Vec<f64>,
    pub flip_pcts: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Item count for the sizing table.
    pub size_items: usize,
    /// False-positive grid for the sizing table.
    pub size_fp_rates: Vec<f64>,
    /// Fixed window of experiment C.
    pub distance_window: usize,
    /// Window, false-positive rate and flip grid of experiment D.
    pub design_window: usize,
    pub design_fp_rate: f64,
    pub design_flip_pcts: Vec<f64>,
    /// Synthetic flow space used when no trace is supplied.
    pub space_flows: usize,
    pub space_locality: f64,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self {
            window_sizes: (30..=290).step_by(20).collect(),
            fp_rates: vec![0.01, 0.05, 0.10, 0.30],
            flip_pcts: (1..=6).map(|i| (i * 5) as f64).collect(),
            trials: 200,
            seed: 101,
            size_items: 55,
            size_fp_rates: vec![0.01, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30],
            distance_window: 110,
            design_window: 64,
            design_fp_rate: 0.01,
            design_flip_pcts: (1..=80).map(f64::from).collect(),
            space_flows: 1_000,
            space_locality: 0.8,
        }
    }
}

impl LabConfig {
    pub fn validate(&self) -> Result<(), LabError> {
        let bad = |m: &str| Err(LabError::Config(m.into()));
        if self.window_sizes.is_empty() || self.fp_rates.is_empty() || self.flip_pcts.is_empty() {
            return bad("window_sizes, fp_rates and flip_pcts must be non-empty");
        }
        if self.size_fp_rates.is_empty() || self.design_flip_pcts.is_empty() {
            return bad("size_fp_rates and design_flip_pcts must be non-empty");
        }
        if self.trials < 1 {
            return bad("trials must be at least 1");
        }
        let windows = self.window_sizes.iter().chain([&self.distance_window, &self.design_window]);
        if windows.clone().any(|&w| w < 2) {
            return bad("window sizes must be at least 2");
        }
        if self.space_flows < 2 {
            return bad("space_flows must be at least 2");
        }
        Ok(())
    }

    /// The synthetic space described by `space_flows` and `space_locality`.
    pub fn synthetic_space(&self) -> SortedFlowSpace {
        synthetic_flow_space(self.space_flows, self.space_locality, derive_seed(self.seed, &[0x5bace]))
    }
}

/// Outcome of one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub inserted: usize,
    pub tp_count: usize,
    pub fp_count: usize,
    /// Inserted flows still detected, over inserted flows.
    pub tp_rate: f64,
    pub mean_tp_dist: Option<f64>,
    pub mean_fp_dist: Option<f64>,
    pub mean_detected_dist: Option<f64>,
}

/// One perturbed-window trial, fully determined by its arguments.
pub fn run_trial(
    space: &SortedFlowSpace,
    window_size: usize,
    fp_rate: f64,
    flip_pct: f64,
    rng_seed: u64,
) -> Result<TrialRecord, LabError> {
    let window = sample_window(space, window_size, derive_seed(rng_seed, &[1]))?;
    let inserted = window.inserted.len();
    let mut filter = BloomFilter::with_rate(inserted, fp_rate, derive_seed(rng_seed, &[2]))?;
    for &pos in &window.inserted {
        filter.insert(&space.flows()[pos].canonical());
    }
    let perturbed = filter.perturb(flip_pct, derive_seed(rng_seed, &[3]))?;
    let detected = space
        .flows()
        .iter()
        .enumerate()
        .filter(|(_, f)| perturbed.query(&f.canonical()))
        .map(|(i, _)| i);
    let d = center_distances_by_position(&window, detected);
    Ok(TrialRecord {
        inserted,
        tp_count: d.tp_count,
        fp_count: d.fp_count,
        tp_rate: d.tp_count as f64 / inserted as f64,
        mean_tp_dist: d.mean_tp_dist,
        mean_fp_dist: d.mean_fp_dist,
        mean_detected_dist: d.mean_detected_dist,
    })
}

/// Grid coordinates of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub experiment: Experiment,
    pub fp_rate: f64,
    pub flip_pct: f64,
    pub window_size: usize,
}

/// Aggregate over the trials of one cell. Distance means skip trials where
/// the category was empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub key: CellKey,
    pub trials: usize,
    pub tp_rate: MeanStd,
    pub fp_dist: Option<MeanStd>,
    pub tp_dist: Option<MeanStd>,
    pub detected_dist: Option<MeanStd>,
}

impl CellSummary {
    fn from_trials(key: CellKey, trials: &[TrialRecord]) -> Self {
        Self {
            key,
            trials: trials.len(),
            tp_rate: MeanStd::of(trials.iter().map(|t| t.tp_rate)).expect("at least one trial"),
            fp_dist: MeanStd::of(trials.iter().filter_map(|t| t.mean_fp_dist)),
            tp_dist: MeanStd::of(trials.iter().filter_map(|t| t.mean_tp_dist)),
            detected_dist: MeanStd::of(trials.iter().filter_map(|t| t.mean_detected_dist)),
        }
    }
}

/// One row of the sizing table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub n_items: usize,
    pub fp_rate: f64,
    pub m_bits: usize,
    pub k_hashes: usize,
}

pub fn experiment_a_size_vs_fp(n_items: usize, fp_rates: &[f64]) -> Result<Vec<SizeRow>, LabError> {
    fp_rates
        .iter()
        .map(|&p| {
            let (m, k) = compute_size(n_items, p)?;
            Ok(SizeRow {
                n_items,
                fp_rate: p,
                m_bits: m,
                k_hashes: k,
            })
        })
        .collect()
}

/// Trials of one experiment, in grid order, with their aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRun {
    pub cells: Vec<CellSummary>,
    /// `(cell index, trial index, record)`.
    pub trials: Vec<(usize, usize, TrialRecord)>,
}

/// Runs a trial experiment (`B`, `C` or `D`) on `space`.
///
/// Trials run in parallel; each trial's seed depends only on the master seed
/// and the trial's grid coordinates, so results do not depend on scheduling.
pub fn run_experiment(experiment: Experiment, config: &LabConfig, space: &SortedFlowSpace) -> Result<ExperimentRun, LabError> {
    config.validate()?;
    // (fp index, fp), (flip index, flip), (window index, window)
    let (fps, flips, windows): (Vec<f64>, Vec<f64>, Vec<usize>) = match experiment {
        Experiment::A => return Err(LabError::Config("experiment A is a sizing table, not a trial grid".into())),
        Experiment::B => (config.fp_rates.clone(), config.flip_pcts.clone(), config.window_sizes.clone()),
        Experiment::C => (config.fp_rates.clone(), config.flip_pcts.clone(), vec![config.distance_window]),
        Experiment::D => (vec![config.design_fp_rate], config.design_flip_pcts.clone(), vec![config.design_window]),
    };
    if let Some(&w) = windows.iter().find(|&&w| w > space.len()) {
        return Err(FlowError::BadWindow { size: w, len: space.len() }.into());
    }

    let mut cells = Vec::new();
    let mut coords = Vec::new();
    for (fi, &fp) in fps.iter().enumerate() {
        for (pi, &flip) in flips.iter().enumerate() {
            for (wi, &w) in windows.iter().enumerate() {
                cells.push(CellKey {
                    experiment,
                    fp_rate: fp,
                    flip_pct: flip,
                    window_size: w,
                });
                coords.push([experiment.id(), fi as u64, pi as u64, wi as u64]);
            }
        }
    }
    let trials = config.trials;
    let records: Vec<TrialRecord> = (0..cells.len() * trials)
        .into_par_iter()
        .map(|job| {
            let (cell, trial) = (job / trials, job % trials);
            let [e, f, p, w] = coords[cell];
            let seed = derive_seed(config.seed, &[e, f, p, w, trial as u64]);
            let key = &cells[cell];
            run_trial(space, key.window_size, key.fp_rate, key.flip_pct, seed)
        })
        .collect::<Result<_, _>>()?;

    let summaries = cells
        .iter()
        .zip(records.chunks(trials))
        .map(|(key, recs)| CellSummary::from_trials(*key, recs))
        .collect();
    let per_trial = records
        .into_iter()
        .enumerate()
        .map(|(job, r)| (job / trials, job % trials, r))
        .collect();
    Ok(ExperimentRun {
        cells: summaries,
        trials: per_trial,
    })
}

pub const CELL_HEADER: [&str; 13] = [
    "experiment",
    "fp_rate",
    "flip_pct",
    "window_size",
    "trials",
    "tp_rate_mean",
    "tp_rate_std",
    "fp_dist_mean",
    "fp_dist_std",
    "tp_dist_mean",
    "tp_dist_std",
    "det_dist_mean",
    "det_dist_std",
];

fn mean_std_fields(v: Option<MeanStd>) -> [String; 2] {
    match v {
        Some(m) => [m.mean.to_string(), m.std.to_string()],
        None => [String::new(), String::new()],
    }
}

pub fn write_cells_csv(cells: &[CellSummary], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CELL_HEADER)?;
    for c in cells {
        let [fp_m, fp_s] = mean_std_fields(c.fp_dist);
        let [tp_m, tp_s] = mean_std_fields(c.tp_dist);
        let [det_m, det_s] = mean_std_fields(c.detected_dist);
        w.write_record([
            c.key.experiment.name().to_string(),
            c.key.fp_rate.to_string(),
            c.key.flip_pct.to_string(),
            c.key.window_size.to_string(),
            c.trials.to_string(),
            c.tp_rate.mean.to_string(),
            c.tp_rate.std.to_string(),
            fp_m,
            fp_s,
            tp_m,
            tp_s,
            det_m,
            det_s,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trials_csv(run: &ExperimentRun, out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "experiment",
        "fp_rate",
        "flip_pct",
        "window_size",
        "trial",
        "inserted",
        "tp_count",
        "fp_count",
        "tp_rate",
        "tp_dist",
        "fp_dist",
        "det_dist",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for &(cell, trial, ref r) in &run.trials {
        let key = &run.cells[cell].key;
        w.write_record([
            key.experiment.name().to_string(),
            key.fp_rate.to_string(),
            key.flip_pct.to_string(),
            key.window_size.to_string(),
            trial.to_string(),
            r.inserted.to_string(),
            r.tp_count.to_string(),
            r.fp_count.to_string(),
            r.tp_rate.to_string(),
            opt(r.mean_tp_dist),
            opt(r.mean_fp_dist),
            opt(r.mean_detected_dist),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sizes_csv(rows: &[SizeRow], out: impl Write) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["experiment", "n_items", "fp_rate", "m_bits", "k_hashes"])?;
    for r in rows {
        w.write_record([
            "A".to_string(),
            r.n_items.to_string(),
            r.fp_rate.to_string(),
            r.m_bits.to_string(),
            r.k_hashes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
