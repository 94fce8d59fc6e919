//! The switch forwarding table and the baseline victim-selection rules.

use std::collections::{BTreeMap, BTreeSet};

use crate::flowspace::FlowId;

/// An installed rule. Times are simulator ticks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlowRule {
    pub flow: FlowId,
    pub installed_at: u64,
    pub last_match: u64,
    /// Packets matched since install.
    pub hit_count: u64,
}

impl FlowRule {
    /// Tick at which the idle timer fires, `None` for an infinite timeout.
    pub fn idle_deadline(&self, idle_ticks: Option<u64>) -> Option<u64> {
        idle_ticks.map(|t| self.last_match + t)
    }
}

/// Capacity-bounded rule set plus the installs waiting on the controller.
///
/// Rules iterate in ascending flow-key order, which every tie rule relies on.
#[derive(Debug, Clone)]
pub struct FlowTable {
    capacity: usize,
    rules: BTreeMap<FlowId, FlowRule>,
    pending: BTreeMap<FlowId, u64>,
    due: BTreeSet<(u64, FlowId)>,
}

impl FlowTable {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            rules: BTreeMap::new(),
            pending: BTreeMap::new(),
            due: BTreeSet::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.rules.len() >= self.capacity
    }

    pub fn contains(&self, flow: FlowId) -> bool {
        self.rules.contains_key(&flow)
    }

    pub fn get(&self, flow: FlowId) -> Option<&FlowRule> {
        self.rules.get(&flow)
    }

    pub fn rules(&self) -> impl Iterator<Item = &FlowRule> + Clone + '_ {
        self.rules.values()
    }

    pub fn is_pending(&self, flow: FlowId) -> bool {
        self.pending.contains_key(&flow)
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Earliest pending completion tick.
    pub fn next_due(&self) -> Option<u64> {
        self.due.first().map(|&(t, _)| t)
    }

    /// Earliest idle deadline among installed rules.
    pub fn next_idle_deadline(&self, idle_ticks: Option<u64>) -> Option<u64> {
        self.rules
            .values()
            .filter_map(|r| r.idle_deadline(idle_ticks))
            .min()
    }

    /// Queues an install. Returns false (and changes nothing) when the flow is
    /// already installed or already pending.
    pub fn add_pending(&mut self, flow: FlowId, complete_at: u64) -> bool {
        if self.rules.contains_key(&flow) || self.pending.contains_key(&flow) {
            return false;
        }
        self.pending.insert(flow, complete_at);
        self.due.insert((complete_at, flow));
        true
    }

    /// Removes and returns every pending flow due at or before `now`,
    /// ordered by completion tick then flow key.
    pub fn take_due(&mut self, now: u64) -> Vec<FlowId> {
        let mut out = Vec::new();
        while let Some(&(t, flow)) = self.due.first() {
            if t > now {
                break;
            }
            self.due.pop_first();
            self.pending.remove(&flow);
            out.push(flow);
        }
        out
    }

    /// Installs a fresh rule. The caller guarantees a free slot.
    pub fn install(&mut self, flow: FlowId, now: u64) {
        debug_assert!(self.rules.len() < self.capacity, "install into a full table");
        debug_assert!(!self.pending.contains_key(&flow));
        self.rules.insert(
            flow,
            FlowRule {
                flow,
                installed_at: now,
                last_match: now,
                hit_count: 0,
            },
        );
    }

    pub fn remove(&mut self, flow: FlowId) -> Option<FlowRule> {
        self.rules.remove(&flow)
    }

    /// Records a matching packet. Returns false when no rule matches.
    pub fn touch(&mut self, flow: FlowId, now: u64) -> bool {
        match self.rules.get_mut(&flow) {
            Some(rule) => {
                rule.last_match = now;
                rule.hit_count += 1;
                true
            }
            None => false,
        }
    }

    /// Removes every rule whose idle deadline is at or before `now`, in key order.
    pub fn expire_idle(&mut self, now: u64, idle_ticks: Option<u64>) -> Vec<FlowId> {
        let expired: Vec<FlowId> = self
            .rules
            .values()
            .filter(|r| r.idle_deadline(idle_ticks).is_some_and(|d| d <= now))
            .map(|r| r.flow)
            .collect();
        for f in &expired {
            self.rules.remove(f);
        }
        expired
    }
}

/// Least recently matched rule; ties go to the smallest key.
pub fn lru_victim<'a>(candidates: impl IntoIterator<Item = &'a FlowRule>) -> Option<FlowId> {
    candidates
        .into_iter()
        .min_by_key(|r| (r.last_match, r.flow))
        .map(|r| r.flow)
}

/// Least frequently matched rule; ties by oldest last match, then smallest key.
pub fn lfu_victim<'a>(candidates: impl IntoIterator<Item = &'a FlowRule>) -> Option<FlowId> {
    candidates
        .into_iter()
        .min_by_key(|r| (r.hit_count, r.last_match, r.flow))
        .map(|r| r.flow)
}

/// Rule whose next packet arrives farthest in the future.
///
/// `next_arrival` returns the time of a flow's next packet, or `None` when it
/// has no further packets; such flows are preferred victims. Ties go to the
/// smallest key.
pub fn optimal_victim<'a>(
    candidates: impl IntoIterator<Item = &'a FlowRule>,
    next_arrival: impl Fn(FlowId) -> Option<f64>,
) -> Option<FlowId> {
    let mut best: Option<(f64, FlowId)> = None;
    for r in candidates {
        let t = next_arrival(r.flow).unwrap_or(f64::INFINITY);
        // Candidates arrive in key order, so strict comparison keeps the smallest key on ties.
        if best.is_none_or(|(bt, _)| t > bt) {
            best = Some((t, r.flow));
        }
    }
    best.map(|(_, f)| f)
}

pub fn evict_lru(table: &FlowTable) -> Option<FlowId> {
    lru_victim(table.rules())
}

pub fn evict_lfu(table: &FlowTable) -> Option<FlowId> {
    lfu_victim(table.rules())
}

pub fn evict_optimal(table: &FlowTable, next_arrival: impl Fn(FlowId) -> Option<f64>) -> Option<FlowId> {
    optimal_victim(table.rules(), next_arrival)
}
