//! Binary checkpoint format for score networks.
//!
//! Layout (all multi-byte values little-endian):
//!
//! ```text
//! magic           b"NLGM"
//! version         u16      (currently 1; unknown versions are rejected)
//! parameterization u8      (0 = epsilon prediction, 1 = velocity)
//! schedule kind   u8       (0 = VP, 1 = VE, 2 = RF)
//! schedule T      u32
//! sigma_max       f64
//! levels          T x f64  (VP: alpha_bar, VE: sigma, RF: time grid)
//! cond_vocab_size u32
//! layer_count     u16
//! per layer:      rows u32, cols u32, rows*cols f32 weights (row-major),
//!                 rows f32 biases
//! ```
//!
//! Record 0 is the condition-embedding table (rows = vocab size, cols = 16,
//! biases unused and stored as zeros); the remaining records are the dense
//! layers in forward order. Parameters are stored as f32; computation is f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mlp::{DenseLayer, Mlp};
use crate::models::scorenet::{CondVocab, ScoreNet, EMBED_DIM};
use crate::models::{Denoiser, Parameterization};
use crate::schedule::{NoiseSchedule, ScheduleKind};

const MAGIC: &[u8; 4] = b"NLGM";
const FORMAT_VERSION: u16 = 1;

pub fn save(net: &ScoreNet, writer: &mut impl Write) -> Result<()> {
    writer.write_all(MAGIC)?;
    writer.write_all(&FORMAT_VERSION.to_le_bytes())?;
    let param: u8 = match net.parameterization() {
        Parameterization::EpsilonPrediction => 0,
        Parameterization::Velocity => 1,
    };
    writer.write_all(&[param])?;

    let schedule = net.schedule();
    let kind: u8 = match schedule.kind() {
        ScheduleKind::VariancePreserving => 0,
        ScheduleKind::VarianceExploding => 1,
        ScheduleKind::RectifiedFlow => 2,
    };
    writer.write_all(&[kind])?;
    writer.write_all(&(schedule.num_steps() as u32).to_le_bytes())?;
    writer.write_all(&schedule.initial_noise_std().to_le_bytes())?;
    for &level in schedule.levels() {
        writer.write_all(&level.to_le_bytes())?;
    }

    let vocab_size = net.vocab().size();
    writer.write_all(&(vocab_size as u32).to_le_bytes())?;

    let layer_count = net.mlp.layers().len() + 1;
    writer.write_all(&(layer_count as u16).to_le_bytes())?;

    // Record 0: embedding table.
    write_record(writer, vocab_size, EMBED_DIM, &net.embedding, &vec![0.0; vocab_size])?;
    for layer in net.mlp.layers() {
        write_record(writer, layer.rows, layer.cols, &layer.weights, &layer.biases)?;
    }
    Ok(())
}

fn write_record(
    writer: &mut impl Write,
    rows: usize,
    cols: usize,
    weights: &[f64],
    biases: &[f64],
) -> Result<()> {
    writer.write_all(&(rows as u32).to_le_bytes())?;
    writer.write_all(&(cols as u32).to_le_bytes())?;
    for &w in weights {
        writer.write_all(&(w as f32).to_le_bytes())?;
    }
    for &b in biases {
        writer.write_all(&(b as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn load(reader: &mut impl Read) -> Result<ScoreNet> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = read_u16(reader)?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    let parameterization = match read_u8(reader)? {
        0 => Parameterization::EpsilonPrediction,
        1 => Parameterization::Velocity,
        other => {
            return Err(Error::Checkpoint(format!(
                "unknown parameterization tag {other}"
            )))
        }
    };
    let kind = read_u8(reader)?;
    let num_steps = read_u32(reader)? as usize;
    if num_steps < 2 || num_steps > 1_000_000 {
        return Err(Error::Checkpoint(format!("implausible step count {num_steps}")));
    }
    let sigma_max = read_f64(reader)?;
    let mut levels = Vec::with_capacity(num_steps);
    for _ in 0..num_steps {
        levels.push(read_f64(reader)?);
    }
    let schedule = match kind {
        0 => NoiseSchedule::vp_from_alpha_bar(levels)
            .map_err(|e| Error::Checkpoint(format!("bad VP schedule: {e}")))?,
        1 => {
            let s = NoiseSchedule::ve_from_sigma(levels)
                .map_err(|e| Error::Checkpoint(format!("bad VE schedule: {e}")))?;
            if s.initial_noise_std() != sigma_max {
                return Err(Error::Checkpoint("VE sigma_max disagrees with levels".into()));
            }
            s
        }
        2 => {
            let canonical = NoiseSchedule::rectified_flow(num_steps)
                .map_err(|e| Error::Checkpoint(format!("bad RF schedule: {e}")))?;
            if canonical.levels() != levels.as_slice() {
                return Err(Error::Checkpoint("RF grid is not the canonical uniform grid".into()));
            }
            canonical
        }
        other => {
            return Err(Error::Checkpoint(format!("unknown schedule kind {other}")))
        }
    };
    if kind != 1 && sigma_max != schedule.initial_noise_std() {
        return Err(Error::Checkpoint("sigma_max disagrees with schedule kind".into()));
    }

    let vocab_size = read_u32(reader)? as usize;
    if vocab_size < 4 {
        return Err(Error::Checkpoint("vocabulary too small".into()));
    }
    let layer_count = read_u16(reader)? as usize;
    if layer_count < 2 {
        return Err(Error::Checkpoint("checkpoint needs embedding plus dense layers".into()));
    }

    let (erows, ecols, embedding, _ebias) = read_record(reader)?;
    if erows != vocab_size || ecols != EMBED_DIM {
        return Err(Error::Checkpoint(format!(
            "embedding record shape {erows}x{ecols} does not match vocab {vocab_size}x{EMBED_DIM}"
        )));
    }
    let mut layers = Vec::with_capacity(layer_count - 1);
    for _ in 0..layer_count - 1 {
        let (rows, cols, weights, biases) = read_record(reader)?;
        layers.push(DenseLayer {
            rows,
            cols,
            weights,
            biases,
        });
    }
    let mlp = Mlp::from_layers(layers)
        .map_err(|e| Error::Checkpoint(format!("bad layer chain: {e}")))?;
    let vocab = CondVocab {
        num_classes: vocab_size - 3,
    };
    ScoreNet::from_parts(mlp, embedding, vocab, parameterization, schedule)
        .map_err(|e| Error::Checkpoint(format!("inconsistent checkpoint: {e}")))
}

fn read_record(reader: &mut impl Read) -> Result<(usize, usize, Vec<f64>, Vec<f64>)> {
    let rows = read_u32(reader)? as usize;
    let cols = read_u32(reader)? as usize;
    if rows == 0 || cols == 0 || rows.saturating_mul(cols) > 100_000_000 {
        return Err(Error::Checkpoint(format!("implausible layer shape {rows}x{cols}")));
    }
    let mut weights = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        weights.push(read_f32(reader)? as f64);
    }
    let mut biases = Vec::with_capacity(rows);
    for _ in 0..rows {
        biases.push(read_f32(reader)? as f64);
    }
    Ok((rows, cols, weights, biases))
}

pub fn save_to_path(net: &ScoreNet, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save(net, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_from_path(path: impl AsRef<Path>) -> Result<ScoreNet> {
    let mut r = BufReader::new(File::open(path)?);
    let net = load(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after checkpoint".into()));
    }
    Ok(net)
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
