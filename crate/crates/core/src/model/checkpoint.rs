//! Binary checkpoint format.
//!
//! ```text
//! magic            8 bytes "ATRKCKPT"
//! version          u32
//! emb_dim          u64
//! att_dim          u64
//! hidden1_dim      u64
//! hidden2_dim      u64
//! head_hidden_dim  u64
//! lrelu_slope      f64
//! attention_mode   u8   (0 scalar, 1 featurewise, 2 uniform)
//! pooling_mode     u8   (0 max, 1 sum)
//! max_q_len        u64
//! max_a_len        u64
//! question_overlap u8   (0 off, 1 on)
//! tensor_count     u32
//! tensor_count x:  rows u64, cols u64, rows*cols f64
//! ```
//!
//! Integers and floats are little-endian. Tensors follow
//! [`ModelParams::tensors`](super::ModelParams::tensors) order.

use std::io::{Read, Write};

use super::{AttentionMode, Model, ModelConfig, ModelParams, PoolingMode};
use crate::binio::{read_f64, read_u32, read_u64, read_u8, write_f64};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ATRKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn attention_code(mode: AttentionMode) -> u8 {
    match mode {
        AttentionMode::Scalar => 0,
        AttentionMode::Featurewise => 1,
        AttentionMode::Uniform => 2,
    }
}

fn pooling_code(mode: PoolingMode) -> u8 {
    match mode {
        PoolingMode::Max => 0,
        PoolingMode::Sum => 1,
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, model: &Model) -> Result<()> {
    let c = &model.config;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for d in [c.emb_dim, c.att_dim, c.hidden1_dim, c.hidden2_dim, c.head_hidden_dim] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    write_f64(&mut w, c.lrelu_slope)?;
    w.write_all(&[attention_code(c.attention_mode), pooling_code(c.pooling_mode)])?;
    w.write_all(&(c.max_q_len as u64).to_le_bytes())?;
    w.write_all(&(c.max_a_len as u64).to_le_bytes())?;
    w.write_all(&[u8::from(c.question_overlap)])?;
    let tensors = model.params.tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in tensors {
        w.write_all(&(t.rows as u64).to_le_bytes())?;
        w.write_all(&(t.cols as u64).to_le_bytes())?;
        for &v in t.values {
            write_f64(&mut w, v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint too short for header".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 5];
    for d in &mut dims {
        *d = read_u64(&mut r)? as usize;
    }
    let lrelu_slope = read_f64(&mut r)?;
    let attention_mode = match read_u8(&mut r)? {
        0 => AttentionMode::Scalar,
        1 => AttentionMode::Featurewise,
        2 => AttentionMode::Uniform,
        other => return Err(Error::Format(format!("unknown attention mode code {other}"))),
    };
    let pooling_mode = match read_u8(&mut r)? {
        0 => PoolingMode::Max,
        1 => PoolingMode::Sum,
        other => return Err(Error::Format(format!("unknown pooling mode code {other}"))),
    };
    let max_q_len = read_u64(&mut r)? as usize;
    let max_a_len = read_u64(&mut r)? as usize;
    let question_overlap = match read_u8(&mut r)? {
        0 => false,
        1 => true,
        other => return Err(Error::Format(format!("invalid question_overlap flag {other}"))),
    };
    let config = ModelConfig {
        emb_dim: dims[0],
        att_dim: dims[1],
        hidden1_dim: dims[2],
        hidden2_dim: dims[3],
        head_hidden_dim: dims[4],
        lrelu_slope,
        attention_mode,
        pooling_mode,
        max_q_len,
        max_a_len,
        question_overlap,
    };
    config.validate()?;

    let mut params = ModelParams::zeros(&config);
    let count = read_u32(&mut r)? as usize;
    let expected = params.tensors().len();
    if count != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, config implies {expected}"
        )));
    }
    for (name, values) in params.tensors_mut() {
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        if rows.checked_mul(cols) != Some(values.len()) {
            return Err(Error::Format(format!(
                "tensor {name} stored as {rows}x{cols}, expected {} values",
                values.len()
            )));
        }
        for v in values.iter_mut() {
            *v = read_f64(&mut r)?;
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Model::new(config, params)
}
