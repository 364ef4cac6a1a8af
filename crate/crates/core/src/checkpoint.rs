//! Checkpoint files: little-endian binary, magic "TSVZ", format version,
//! network config, then every parameter (name, shape, raw f64 values).
//! Momentum buffers are deliberately not persisted; loading starts them at
//! zero.

use crate::autodiff::Parameter;
use crate::model::{ModelError, NetworkConfig, TeacherStudentModel};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"TSVZ";
const VERSION: u32 = 1;
/// Upper bounds that keep a corrupt length field from ballooning allocation.
const MAX_NAME_LEN: usize = 4096;
const MAX_TENSOR_LEN: usize = 1 << 28;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint malformed: {0}")]
    Malformed(String),
    #[error("checkpoint config does not match: expected {expected:?}, found {found:?}")]
    ConfigMismatch {
        expected: NetworkConfig,
        found: NetworkConfig,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn save_checkpoint(model: &TeacherStudentModel, path: &Path) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_config(&mut w, &model.config)?;
    write_u32(&mut w, model.n_params() as u32)?;
    for p in model.params() {
        let name = p.name.as_bytes();
        write_u32(&mut w, name.len() as u32)?;
        w.write_all(name)?;
        write_u32(&mut w, p.value.rank() as u32)?;
        for &extent in p.value.shape() {
            write_u32(&mut w, extent as u32)?;
        }
        for &v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<TeacherStudentModel, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config = read_config(&mut r)?;
    let n_params = read_u32(&mut r)? as usize;
    if n_params > 100_000 {
        return Err(CheckpointError::Malformed(format!(
            "{n_params} parameters"
        )));
    }
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(CheckpointError::Malformed(format!(
                "parameter name of {name_len} bytes"
            )));
        }
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Malformed("parameter name not utf-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        if !(1..=4).contains(&rank) {
            return Err(CheckpointError::Malformed(format!("rank {rank} tensor")));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut len = 1usize;
        for _ in 0..rank {
            let extent = read_u32(&mut r)? as usize;
            len = len.saturating_mul(extent);
            shape.push(extent);
        }
        if len == 0 || len > MAX_TENSOR_LEN {
            return Err(CheckpointError::Malformed(format!(
                "tensor {name} with {len} elements"
            )));
        }
        let mut data = vec![0.0f64; len];
        let mut buf = [0u8; 8];
        for slot in data.iter_mut() {
            read_exact(&mut r, &mut buf)?;
            *slot = f64::from_le_bytes(buf);
        }
        let value = Tensor::from_vec(shape, data)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        params.push(Parameter::new(name, value));
    }
    Ok(TeacherStudentModel::from_parts(config, params)?)
}

/// Load and require the stored config to equal `expected`.
pub fn load_checkpoint_expecting(
    path: &Path,
    expected: &NetworkConfig,
) -> Result<TeacherStudentModel, CheckpointError> {
    let model = load_checkpoint(path)?;
    if &model.config != expected {
        return Err(CheckpointError::ConfigMismatch {
            expected: expected.clone(),
            found: model.config,
        });
    }
    Ok(model)
}

fn write_config<W: Write>(w: &mut W, cfg: &NetworkConfig) -> Result<(), CheckpointError> {
    write_u32(w, cfg.image_size as u32)?;
    write_u32(w, cfg.channels.len() as u32)?;
    for &c in &cfg.channels {
        write_u32(w, c as u32)?;
    }
    write_u32(w, cfg.fc_width as u32)?;
    write_u32(w, cfg.num_classes as u32)?;
    w.write_all(&cfg.alpha.to_le_bytes())?;
    Ok(())
}

fn read_config<R: Read>(r: &mut R) -> Result<NetworkConfig, CheckpointError> {
    let image_size = read_u32(r)? as usize;
    let blocks = read_u32(r)? as usize;
    if blocks > 16 {
        return Err(CheckpointError::Malformed(format!("{blocks} blocks")));
    }
    let mut channels = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        channels.push(read_u32(r)? as usize);
    }
    let fc_width = read_u32(r)? as usize;
    let num_classes = read_u32(r)? as usize;
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf)?;
    let alpha = f64::from_le_bytes(buf);
    Ok(NetworkConfig {
        image_size,
        channels,
        fc_width,
        num_classes,
        alpha,
    })
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<(), CheckpointError> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, CheckpointError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Truncated
        } else {
            CheckpointError::Io(e)
        }
    })
}
