//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//! magic `OFFN`, format version `u32`, parameter count `u32`, then per
//! parameter: name length `u32`, UTF-8 name bytes, rank `u32`, extents
//! `u32[rank]`, `f32` data. Parameters are written in registration order, so
//! save -> load -> save reproduces files byte for byte.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::rc::Rc;

use crate::tensor::Parameter;

use super::{ModelError, Result};

const MAGIC: &[u8; 4] = b"OFFN";
const VERSION: u32 = 1;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn save_checkpoint(path: &Path, params: &[Rc<Parameter>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(path))?;
        }
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &e in p.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in p.tensor().data().iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = std::fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&out).map_err(io_err(path))?;
    Ok(())
}

/// Load a checkpoint into an existing parameter set. Names and shapes must
/// match the model exactly; extra or missing entries are errors.
pub fn load_checkpoint(path: &Path, params: &[Rc<Parameter>]) -> Result<()> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(io_err(path))?
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > bytes.len() {
            return Err(ModelError::Checkpoint(format!(
                "{}: truncated at byte {}",
                path.display(),
                *cursor
            )));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };
    let take_u32 = |cursor: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(cursor, 4)?.try_into().unwrap()))
    };

    if take(&mut cursor, 4)? != MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "{}: bad magic bytes",
            path.display()
        )));
    }
    let version = take_u32(&mut cursor)?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "{}: unsupported format version {version}",
            path.display()
        )));
    }
    let count = take_u32(&mut cursor)? as usize;

    let mut stored: HashMap<String, (Vec<usize>, Vec<f32>)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = take_u32(&mut cursor)? as usize;
        let name = String::from_utf8(take(&mut cursor, name_len)?.to_vec()).map_err(|_| {
            ModelError::Checkpoint(format!("{}: non-UTF8 parameter name", path.display()))
        })?;
        let rank = take_u32(&mut cursor)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32(&mut cursor)? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = take(&mut cursor, len * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        stored.insert(name, (shape, data));
    }
    if cursor != bytes.len() {
        return Err(ModelError::Checkpoint(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - cursor
        )));
    }

    for p in params {
        let (shape, data) = stored.remove(p.name()).ok_or_else(|| {
            ModelError::Checkpoint(format!(
                "{}: missing parameter {}",
                path.display(),
                p.name()
            ))
        })?;
        if shape != p.shape() {
            return Err(ModelError::Checkpoint(format!(
                "{}: parameter {} has shape {:?}, model expects {:?}",
                path.display(),
                p.name(),
                shape,
                p.shape()
            )));
        }
        p.tensor().set_data(&data)?;
    }
    if let Some(extra) = stored.keys().next() {
        return Err(ModelError::Checkpoint(format!(
            "{}: unexpected parameter {extra}",
            path.display()
        )));
    }
    Ok(())
}
