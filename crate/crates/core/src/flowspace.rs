//! IPv4 pair identifiers, the key-sorted flow space, and window geometry.

use std::collections::HashMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::rng_from_seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("malformed IPv4 address {0:?}")]
    BadAddress(String),
    #[error("malformed flow string {0:?} (expected eight dot-separated octets)")]
    BadFlowString(String),
    #[error("window size {size} is invalid for a flow space of {len} flows (need 2 <= size <= len)")]
    BadWindow { size: usize, len: usize },
    #[error("flow {0} is not part of the flow space")]
    UnknownFlow(FlowId),
}

/// A directed source/destination IPv4 pair.
///
/// Ordering, equality and hashing all follow the 64-bit key
/// `src * 2^32 + dst`, so sorting by key is lexicographic on `(src, dst)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct FlowId(u64);

impl FlowId {
    pub fn new(src: Ipv4Addr, dst: Ipv4Addr) -> Self {
        Self(((u32::from(src) as u64) << 32) | u32::from(dst) as u64)
    }

    pub fn from_key(key: u64) -> Self {
        Self(key)
    }

    pub fn key(self) -> u64 {
        self.0
    }

    pub fn src(self) -> Ipv4Addr {
        Ipv4Addr::from((self.0 >> 32) as u32)
    }

    pub fn dst(self) -> Ipv4Addr {
        Ipv4Addr::from(self.0 as u32)
    }

    /// Canonical `srcIP.dstIP` form, e.g. `192.168.1.1.10.0.0.1`.
    pub fn canonical(self) -> String {
        self.to_string()
    }
}

/// Parses both addresses and forms the identifier.
pub fn make_flow_id(src: &str, dst: &str) -> Result<FlowId, FlowError> {
    let parse = |s: &str| {
        Ipv4Addr::from_str(s.trim()).map_err(|_| FlowError::BadAddress(s.to_string()))
    };
    Ok(FlowId::new(parse(src)?, parse(dst)?))
}

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.src(), self.dst())
    }
}

impl fmt::Debug for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FlowId({self})")
    }
}

impl FromStr for FlowId {
    type Err = FlowError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || FlowError::BadFlowString(s.to_string());
        let octets: Vec<&str> = s.split('.').collect();
        if octets.len() != 8 {
            return Err(bad());
        }
        let src = octets[..4].join(".");
        let dst = octets[4..].join(".");
        make_flow_id(&src, &dst).map_err(|_| bad())
    }
}

impl From<FlowId> for String {
    fn from(f: FlowId) -> String {
        f.to_string()
    }
}

impl TryFrom<String> for FlowId {
    type Error = FlowError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Unique flows sorted ascending by key, with a key-to-position index.
#[derive(Debug, Clone, Default)]
pub struct SortedFlowSpace {
    flows: Vec<FlowId>,
    positions: HashMap<FlowId, usize>,
}

impl SortedFlowSpace {
    /// Sorts and deduplicates `flows`.
    pub fn build(flows: impl IntoIterator<Item = FlowId>) -> Self {
        let mut flows: Vec<FlowId> = flows.into_iter().collect();
        flows.sort_unstable();
        flows.dedup();
        let positions = flows.iter().enumerate().map(|(i, &f)| (f, i)).collect();
        Self { flows, positions }
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn flows(&self) -> &[FlowId] {
        &self.flows
    }

    pub fn get(&self, i: usize) -> Option<FlowId> {
        self.flows.get(i).copied()
    }

    pub fn position(&self, flow: FlowId) -> Option<usize> {
        self.positions.get(&flow).copied()
    }

    pub fn contains(&self, flow: FlowId) -> bool {
        self.positions.contains_key(&flow)
    }
}

/// A contiguous run of the sorted space and the positions placed in a filter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalityWindow {
    pub start: usize,
    pub size: usize,
    /// Always `start + size / 2`.
    pub center: usize,
    /// Sorted positions (into the flow space) of the inserted flows.
    pub inserted: Vec<usize>,
}

impl LocalityWindow {
    /// Builds a window with an explicit inserted subset. Positions are sorted.
    pub fn new(start: usize, size: usize, mut inserted: Vec<usize>) -> Self {
        inserted.sort_unstable();
        Self {
            start,
            size,
            center: start + size / 2,
            inserted,
        }
    }

    pub fn end(&self) -> usize {
        self.start + self.size
    }

    pub fn is_inserted(&self, position: usize) -> bool {
        self.inserted.binary_search(&position).is_ok()
    }
}

/// Draws a window start uniformly and inserts `size / 2` distinct window flows.
pub fn sample_window(
    space: &SortedFlowSpace,
    size: usize,
    rng_seed: u64,
) -> Result<LocalityWindow, FlowError> {
    let len = space.len();
    if size < 2 || size > len {
        return Err(FlowError::BadWindow { size, len });
    }
    let mut rng = rng_from_seed(rng_seed);
    let start = rng.random_range(0..=len - size);
    let inserted = index::sample(&mut rng, size, size / 2)
        .into_iter()
        .map(|offset| start + offset)
        .collect();
    Ok(LocalityWindow::new(start, size, inserted))
}

/// Mean absolute distances to the window center, split into true and false positives.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CenterDistances {
    pub tp_count: usize,
    pub fp_count: usize,
    pub mean_tp_dist: Option<f64>,
    pub mean_fp_dist: Option<f64>,
    /// Mean over every detected flow regardless of category.
    pub mean_detected_dist: Option<f64>,
}

/// Distances in sorted-index units for detected positions.
pub fn center_distances_by_position(
    window: &LocalityWindow,
    detected: impl IntoIterator<Item = usize>,
) -> CenterDistances {
    let (mut tp_sum, mut fp_sum) = (0u64, 0u64);
    let (mut tp, mut fp) = (0usize, 0usize);
    for pos in detected {
        let d = pos.abs_diff(window.center) as u64;
        if window.is_inserted(pos) {
            tp += 1;
            tp_sum += d;
        } else {
            fp += 1;
            fp_sum += d;
        }
    }
    let mean = |sum: u64, n: usize| (n > 0).then(|| sum as f64 / n as f64);
    CenterDistances {
        tp_count: tp,
        fp_count: fp,
        mean_tp_dist: mean(tp_sum, tp),
        mean_fp_dist: mean(fp_sum, fp),
        mean_detected_dist: mean(tp_sum + fp_sum, tp + fp),
    }
}

/// Splits `detected` into true and false positives and averages their center distances.
///
/// Duplicate flows in `detected` are counted once.
pub fn mean_center_distance(
    space: &SortedFlowSpace,
    window: &LocalityWindow,
    detected: &[FlowId],
) -> Result<CenterDistances, FlowError> {
    let mut positions = detected
        .iter()
        .map(|&f| space.position(f).ok_or(FlowError::UnknownFlow(f)))
        .collect::<Result<Vec<_>, _>>()?;
    positions.sort_unstable();
    positions.dedup();
    Ok(center_distances_by_position(window, positions))
}
