//! Checkpoint container.
//!
//! A checkpoint is a directory holding:
//!
//! * `manifest.toml` — architecture, schedule, step counters and the
//!   curriculum state, human-readable.
//! * `params.bin` — every named parameter array, binary.
//!
//! `params.bin` layout (all integers and floats little-endian):
//!
//! ```text
//! magic   8 bytes  b"LISSPRM1"
//! count   u32      number of records
//! record: name_len u32, name bytes (utf-8),
//!         dtype    u8  (0 = f32, 1 = f64),
//!         ndim     u8,
//!         dims     u32 * ndim,
//!         payload  dtype-sized scalars, row-major
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use liss_tensor::Scalar;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::ArchConfig;
use crate::schedule::{ScheduleKind, TransitionRow};

const MAGIC: &[u8; 8] = b"LISSPRM1";

/// Human-readable checkpoint metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub schedule: ScheduleKind,
    pub seed: u64,
    pub step: u64,
    pub translation_steps: u64,
    pub arch: ArchConfig,
    pub current_task_index: usize,
    pub task_start_step: u64,
    pub transitions: Vec<TransitionRow>,
    /// Domain tag -> last reference-encoder update index (continual only).
    pub reference_tasks: BTreeMap<String, usize>,
}

fn dtype_tag<T: Scalar>() -> u8 {
    match std::mem::size_of::<T>() {
        4 => 0,
        8 => 1,
        _ => unreachable!("Scalar is f32 or f64"),
    }
}

/// Writes named arrays in declaration order.
pub fn write_params<T: Scalar>(path: &Path, entries: &[(String, ArrayD<T>)]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    let tag = dtype_tag::<T>();
    for (name, arr) in entries {
        w.write_u32::<LittleEndian>(name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        w.write_u8(tag)?;
        w.write_u8(arr.ndim() as u8)?;
        for &d in arr.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        match tag {
            0 => {
                for &v in arr.iter() {
                    w.write_f32::<LittleEndian>(v.as_f64() as f32)?;
                }
            }
            _ => {
                for &v in arr.iter() {
                    w.write_f64::<LittleEndian>(v.as_f64())?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads the arrays back; the stored dtype must match `T`.
pub fn read_params<T: Scalar>(path: &Path) -> Result<Vec<(String, ArrayD<T>)>> {
    let bytes = std::fs::read(path)?;
    let mut r = std::io::Cursor::new(&bytes);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic in '{}'",
            path.display()
        )));
    }
    let count = r.read_u32::<LittleEndian>()?;
    let want_tag = dtype_tag::<T>();
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.read_u32::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|e| Error::Checkpoint(format!("bad parameter name: {e}")))?;
        let tag = r.read_u8()?;
        if tag != want_tag {
            return Err(Error::Checkpoint(format!(
                "dtype mismatch for '{name}': stored tag {tag}, expected {want_tag}"
            )));
        }
        let ndim = r.read_u8()? as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let n: usize = dims.iter().product();
        let mut data = Vec::with_capacity(n);
        match tag {
            0 => {
                for _ in 0..n {
                    data.push(T::from_f64(r.read_f32::<LittleEndian>()? as f64));
                }
            }
            _ => {
                for _ in 0..n {
                    data.push(T::from_f64(r.read_f64::<LittleEndian>()?));
                }
            }
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&dims), data)
            .map_err(|e| Error::Checkpoint(format!("bad shape for '{name}': {e}")))?;
        out.push((name, arr));
    }
    Ok(out)
}

/// Writes a complete checkpoint directory.
pub fn save<T: Scalar>(
    dir: &Path,
    manifest: &Manifest,
    entries: &[(String, ArrayD<T>)],
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let toml_text = toml::to_string_pretty(manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;
    std::fs::write(dir.join("manifest.toml"), toml_text)?;
    write_params(&dir.join("params.bin"), entries)?;
    Ok(dir.to_path_buf())
}

/// Reads manifest and parameters from a checkpoint directory.
pub fn load<T: Scalar>(dir: &Path) -> Result<(Manifest, Vec<(String, ArrayD<T>)>)> {
    let toml_text = std::fs::read_to_string(dir.join("manifest.toml"))?;
    let manifest: Manifest = toml::from_str(&toml_text)
        .map_err(|e| Error::Checkpoint(format!("manifest decode: {e}")))?;
    let params = read_params(&dir.join("params.bin"))?;
    Ok((manifest, params))
}
