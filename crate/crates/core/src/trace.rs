//! Packet traces: CSV ingestion (plain or gzip) and a seeded synthetic generator.
//!
//! The on-disk schema is a header line `timestamp,src_ip,dst_ip` followed by
//! one packet per row, timestamps in seconds.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use thiserror::Error;

use crate::flowspace::{make_flow_id, FlowId, SortedFlowSpace};
use crate::seed::rng_from_seed;

pub const CSV_HEADER: [&str; 3] = ["timestamp", "src_ip", "dst_ip"];

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: expected header `timestamp,src_ip,dst_ip`, found `{found}`")]
    Header { path: PathBuf, found: String },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{0}: trace contains no packets")]
    Empty(PathBuf),
    #[error("invalid packet timestamp {0} (must be finite and non-negative)")]
    BadTimestamp(f64),
    #[error("invalid synthetic trace parameters: {0}")]
    BadSynthetic(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Packet {
    pub timestamp: f64,
    pub flow: FlowId,
}

/// Time-ordered packets and the sorted space of flows they use.
#[derive(Debug, Clone)]
pub struct Trace {
    packets: Vec<Packet>,
    flow_space: SortedFlowSpace,
}

impl Trace {
    /// Validates timestamps, stably sorts by time and builds the flow space.
    pub fn from_packets(mut packets: Vec<Packet>) -> Result<Self, TraceError> {
        if let Some(p) = packets
            .iter()
            .find(|p| !p.timestamp.is_finite() || p.timestamp < 0.0)
        {
            return Err(TraceError::BadTimestamp(p.timestamp));
        }
        if packets.windows(2).any(|w| w[1].timestamp < w[0].timestamp) {
            log::warn!("trace timestamps are not monotone; sorting {} packets", packets.len());
            packets.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
        }
        let flow_space = SortedFlowSpace::build(packets.iter().map(|p| p.flow));
        Ok(Self {
            packets,
            flow_space,
        })
    }

    pub fn empty() -> Self {
        Self {
            packets: Vec::new(),
            flow_space: SortedFlowSpace::default(),
        }
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    pub fn flow_space(&self) -> &SortedFlowSpace {
        &self.flow_space
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// Timestamp of the last packet, or 0 for an empty trace.
    pub fn duration(&self) -> f64 {
        self.packets.last().map_or(0.0, |p| p.timestamp)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TraceError + '_ {
    move |source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a CSV trace. Gzip input is detected from its magic bytes.
pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace, TraceError> {
    let path = path.as_ref();
    let mut file = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut magic = [0u8; 2];
    let n = read_prefix(&mut file, &mut magic).map_err(io_err(path))?;
    let prefix = std::io::Cursor::new(magic[..n].to_vec());
    let reader: Box<dyn Read> = if n == 2 && magic == [0x1f, 0x8b] {
        Box::new(MultiGzDecoder::new(prefix.chain(file)))
    } else {
        Box::new(prefix.chain(file))
    };
    read_trace(reader, path)
}

fn read_prefix(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 => break,
            k => filled += k,
        }
    }
    Ok(filled)
}

/// Parses CSV trace text from any reader; `origin` is used in error messages.
pub fn read_trace(reader: impl Read, origin: &Path) -> Result<Trace, TraceError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| TraceError::Parse {
        path: origin.to_path_buf(),
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().ne(CSV_HEADER) {
        if headers.is_empty() {
            return Err(TraceError::Empty(origin.to_path_buf()));
        }
        return Err(TraceError::Header {
            path: origin.to_path_buf(),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut packets = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| TraceError::Parse {
            path: origin.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let fail = |message: String| TraceError::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let timestamp: f64 = record[0]
            .parse()
            .map_err(|_| fail(format!("bad timestamp {:?}", &record[0])))?;
        if !timestamp.is_finite() || timestamp < 0.0 {
            return Err(fail(format!("timestamp {timestamp} must be finite and non-negative")));
        }
        let flow = make_flow_id(&record[1], &record[2]).map_err(|e| fail(e.to_string()))?;
        packets.push(Packet { timestamp, flow });
    }
    if packets.is_empty() {
        return Err(TraceError::Empty(origin.to_path_buf()));
    }
    Trace::from_packets(packets)
}

/// Writes a trace as CSV, gzip-compressed when the path ends in `.gz`.
///
/// Timestamps use the shortest representation that parses back to the same `f64`.
pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    let file = BufWriter::new(File::create(path).map_err(io_err(path))?);
    if path.extension().is_some_and(|e| e == "gz") {
        let mut gz = GzEncoder::new(file, Compression::default());
        write_trace(trace, &mut gz)?;
        gz.finish().map_err(io_err(path))?.flush().map_err(io_err(path))?;
    } else {
        let mut file = file;
        write_trace(trace, &mut file)?;
        file.flush().map_err(io_err(path))?;
    }
    Ok(())
}

pub fn write_trace(trace: &Trace, out: impl Write) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for p in trace.packets() {
        w.write_record([
            p.timestamp.to_string(),
            p.flow.src().to_string(),
            p.flow.dst().to_string(),
        ])?;
    }
    w.flush().map_err(|e| TraceError::Csv(e.into()))?;
    Ok(())
}

/// Parameters of a synthetic trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_flows: usize,
    pub n_packets: usize,
    pub duration_s: f64,
    /// Probability that a flow belongs to a subnet cluster (and, for the
    /// popularity ranking, how strongly clusters share popularity).
    pub locality: f64,
    /// Zipf exponent of per-flow packet shares; 0 is uniform.
    pub zipf_s: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: &str| Err(TraceError::BadSynthetic(m.to_string()));
        if self.n_flows < 2 {
            return bad("n_flows must be at least 2");
        }
        if self.n_packets < 1 {
            return bad("n_packets must be at least 1");
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration_s must be positive and finite");
        }
        if !(0.0..=1.0).contains(&self.locality) {
            return bad("locality must lie in [0, 1]");
        }
        if !(self.zipf_s.is_finite() && self.zipf_s >= 0.0) {
            return bad("zipf_s must be finite and non-negative");
        }
        Ok(())
    }
}

/// Flows per subnet cluster in synthetic traces.
const CLUSTER_SIZE: usize = 24;

/// Generates a locality-tunable trace; a pure function of `spec`.
///
/// Clustered flows share a source /24 and a destination /16, so they sit
/// next to each other in key order; the rest are uniform over the key space.
/// Popularity ranks blend a per-cluster draw with a per-flow draw in
/// proportion to `locality`, and packet flows are drawn with Zipf weights
/// over those ranks. Arrival times are uniform over the duration.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Trace, TraceError> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let flows = clustered_flows(&mut rng, spec.n_flows, spec.locality);

    let weights: Vec<f64> = (1..=flows.len())
        .map(|rank| (rank as f64).powf(-spec.zipf_s))
        .collect();
    let pick = WeightedIndex::new(&weights)
        .map_err(|e| TraceError::BadSynthetic(format!("zipf weights: {e}")))?;
    let mut packets: Vec<Packet> = (0..spec.n_packets)
        .map(|_| Packet {
            timestamp: rng.random_range(0.0..spec.duration_s),
            flow: flows[pick.sample(&mut rng)].0,
        })
        .collect();
    packets.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    Trace::from_packets(packets)
}

/// Draws `n` distinct flows ordered by popularity rank (most popular first).
fn clustered_flows(rng: &mut impl Rng, n: usize, locality: f64) -> Vec<(FlowId, f64)> {
    let n_clusters = n.div_ceil(CLUSTER_SIZE).max(1);
    let clusters: Vec<(u32, u32)> = (0..n_clusters)
        .map(|_| (rng.random::<u32>() & 0xFFFF_FF00, rng.random::<u32>() & 0xFFFF_0000))
        .collect();
    let cluster_priority: Vec<f64> = (0..n_clusters).map(|_| rng.random()).collect();

    let mut seen = HashSet::with_capacity(n);
    // (flow, popularity score)
    let mut flows: Vec<(FlowId, f64)> = Vec::with_capacity(n);
    while flows.len() < n {
        let (key, cluster_score) = if rng.random_bool(locality) {
            let c = rng.random_range(0..n_clusters);
            let (src_base, dst_base) = clusters[c];
            let src = src_base | rng.random_range(0..=255u32);
            let dst = dst_base | rng.random_range(0..=0xFFFFu32);
            (((src as u64) << 32) | dst as u64, cluster_priority[c])
        } else {
            (rng.random::<u64>(), rng.random())
        };
        let flow = FlowId::from_key(key);
        if seen.insert(flow) {
            let own: f64 = rng.random();
            flows.push((flow, locality * cluster_score + (1.0 - locality) * own));
        }
    }
    flows.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    flows
}

/// A flow space of exactly `n_flows` synthetic flows, built like the flows of
/// [`generate_synthetic`] but without drawing packets.
pub fn synthetic_flow_space(n_flows: usize, locality: f64, seed: u64) -> SortedFlowSpace {
    let mut rng = rng_from_seed(seed);
    SortedFlowSpace::build(
        clustered_flows(&mut rng, n_flows, locality.clamp(0.0, 1.0))
            .into_iter()
            .map(|(f, _)| f),
    )
}
