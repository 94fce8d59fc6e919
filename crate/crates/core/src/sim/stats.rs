use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::flowspace::FlowId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub hits: u64,
    pub misses: u64,
}

impl IntervalStats {
    pub fn packets(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn hit_rate(&self) -> Option<f64> {
        let n = self.packets();
        (n > 0).then(|| self.hits as f64 / n as f64)
    }
}

/// Hit/miss totals plus a time series bucketed by packet timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub hits: u64,
    pub misses: u64,
    pub report_period_s: f64,
    /// Bucket `i` covers `[i * report_period_s, (i + 1) * report_period_s)`.
    pub intervals: Vec<IntervalStats>,
    pub max_occupancy: usize,
}

impl SimStats {
    pub fn new(report_period_s: f64) -> Self {
        Self {
            hits: 0,
            misses: 0,
            report_period_s,
            intervals: Vec::new(),
            max_occupancy: 0,
        }
    }

    pub fn packets(&self) -> u64 {
        self.hits + self.misses
    }

    pub fn miss_rate(&self) -> Option<f64> {
        let n = self.packets();
        (n > 0).then(|| self.misses as f64 / n as f64)
    }

    pub fn hit_rate(&self) -> Option<f64> {
        self.miss_rate().map(|m| 1.0 - m)
    }

    pub(crate) fn record(&mut self, timestamp: f64, hit: bool) {
        let idx = (timestamp / self.report_period_s).floor() as usize;
        if self.intervals.len() <= idx {
            self.intervals.resize(idx + 1, IntervalStats { hits: 0, misses: 0 });
        }
        let bucket = &mut self.intervals[idx];
        if hit {
            self.hits += 1;
            bucket.hits += 1;
        } else {
            self.misses += 1;
            bucket.misses += 1;
        }
    }

    /// Per-interval hit rate; empty intervals report 0.
    pub fn hit_rate_series(&self) -> Vec<f64> {
        self.intervals.iter().map(|b| b.hit_rate().unwrap_or(0.0)).collect()
    }

    /// Miss rate over the trailing `fraction` of intervals (at least one).
    pub fn trailing_miss_rate(&self, fraction: f64) -> Option<f64> {
        let n = self.intervals.len();
        if n == 0 {
            return None;
        }
        let take = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
        let (h, m) = self.intervals[n - take..]
            .iter()
            .fold((0u64, 0u64), |(h, m), b| (h + b.hits, m + b.misses));
        (h + m > 0).then(|| m as f64 / (h + m) as f64)
    }

    /// Writes `interval_start_s,hits,misses,hit_rate,cumulative_hit_rate`.
    pub fn write_timeseries_csv(&self, out: impl Write) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["interval_start_s", "hits", "misses", "hit_rate", "cumulative_hit_rate"])?;
        let (mut cum_h, mut cum_n) = (0u64, 0u64);
        for (i, b) in self.intervals.iter().enumerate() {
            cum_h += b.hits;
            cum_n += b.packets();
            let cumulative = (cum_n > 0).then(|| cum_h as f64 / cum_n as f64);
            w.write_record([
                (i as f64 * self.report_period_s).to_string(),
                b.hits.to_string(),
                b.misses.to_string(),
                opt_to_string(b.hit_rate()),
                opt_to_string(cumulative),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn opt_to_string(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvictCause {
    /// The baseline policy made room for a completing install.
    Install,
    /// The agent hook evicted at an eviction-interval boundary.
    Eti,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SimEventKind {
    PacketIn,
    Install,
    Evict(EvictCause),
    Expire,
}

/// One table-level event, at simulator tick `tick`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimEvent {
    pub tick: u64,
    pub flow: FlowId,
    pub kind: SimEventKind,
}

impl SimEvent {
    pub fn new(tick: u64, flow: FlowId, kind: SimEventKind) -> Self {
        Self { tick, flow, kind }
    }

    pub fn evict(tick: u64, flow: FlowId, cause: EvictCause) -> Self {
        Self::new(tick, flow, SimEventKind::Evict(cause))
    }

    pub fn is_eviction(&self) -> bool {
        matches!(self.kind, SimEventKind::Evict(_))
    }
}
