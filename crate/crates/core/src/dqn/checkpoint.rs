//! Binary network checkpoints.
//!
//! Layout, all little-endian: magic `SFTQ`, `u32` format version, `u32` layer
//! count `L`, `L + 1` `u32` layer widths, then per layer the `in x out`
//! weight matrix in row-major order followed by the bias vector, as `f64`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::network::{Dense, QNetwork};
use super::DqnError;

const MAGIC: &[u8; 4] = b"SFTQ";
const VERSION: u32 = 1;
/// Guards against allocating absurd buffers from a corrupt header.
const MAX_WIDTH: usize = 1 << 20;

pub fn write_network(net: &QNetwork, mut out: impl Write) -> Result<(), DqnError> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    let sizes = net.layer_sizes();
    out.write_all(&((sizes.len() - 1) as u32).to_le_bytes())?;
    for s in &sizes {
        out.write_all(&(*s as u32).to_le_bytes())?;
    }
    for layer in net.layers() {
        for v in layer.weights.iter().chain(layer.bias.iter()) {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_network(mut input: impl Read) -> Result<QNetwork, DqnError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DqnError::Checkpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut input)?;
    if version != VERSION {
        return Err(DqnError::Checkpoint(format!("unsupported version {version}")));
    }
    let n_layers = read_u32(&mut input)? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(DqnError::Checkpoint(format!("implausible layer count {n_layers}")));
    }
    let mut sizes = Vec::with_capacity(n_layers + 1);
    for _ in 0..=n_layers {
        let s = read_u32(&mut input)? as usize;
        if s == 0 || s > MAX_WIDTH {
            return Err(DqnError::Checkpoint(format!("implausible layer width {s}")));
        }
        sizes.push(s);
    }
    let mut layers = Vec::with_capacity(n_layers);
    for w in sizes.windows(2) {
        let weights = read_f64s(&mut input, w[0] * w[1])?;
        let bias = read_f64s(&mut input, w[1])?;
        layers.push(Dense {
            weights: Array2::from_shape_vec((w[0], w[1]), weights).expect("length matches shape"),
            bias: Array1::from_vec(bias),
        });
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(DqnError::Checkpoint("trailing bytes after last layer".into()));
    }
    QNetwork::from_layers(layers).map_err(|e| DqnError::Checkpoint(e.to_string()))
}

pub fn save_network(net: &QNetwork, path: &Path) -> Result<(), DqnError> {
    let file = std::fs::File::create(path)?;
    write_network(net, std::io::BufWriter::new(file))
}

pub fn load_network(path: &Path) -> Result<QNetwork, DqnError> {
    let file = std::fs::File::open(path)?;
    read_network(std::io::BufReader::new(file))
}

fn read_u32(input: &mut impl Read) -> Result<u32, DqnError> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s(input: &mut impl Read, n: usize) -> Result<Vec<f64>, DqnError> {
    let mut buf = vec![0u8; n * 8];
    input.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}
