//! `PMPB` study image files.
//!
//! ```text
//! magic    b"PMPB"
//! version  u32 = 1
//! grid     u32            side length G
//! count    u32            number of modalities K
//! ids      K × u32        modality codes (CT=0, CTC=1, DCE1=2, DCE2=3, DCE3=4)
//! images   K × G·G × f64  row-major, in id order
//! ```
//!
//! Everything is little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{ModalityId, Study};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const STUDY_MAGIC: &[u8; 4] = b"PMPB";
pub const STUDY_VERSION: u32 = 1;

pub fn write_study<W: Write>(w: &mut W, study: &Study) -> Result<()> {
    write_images(w, &study.images)
}

pub fn write_images<W: Write>(w: &mut W, images: &BTreeMap<ModalityId, Tensor>) -> Result<()> {
    let grid = match images.values().next().map(|t| t.shape().to_vec()) {
        Some(s) if s.len() == 2 && s[0] == s[1] => s[0],
        Some(s) => return Err(Error::Format(format!("images must be square, got {s:?}"))),
        None => return Err(Error::Format("study has no images".into())),
    };
    w.write_all(STUDY_MAGIC)?;
    w.write_all(&STUDY_VERSION.to_le_bytes())?;
    w.write_all(&(grid as u32).to_le_bytes())?;
    w.write_all(&(images.len() as u32).to_le_bytes())?;
    for m in images.keys() {
        w.write_all(&m.code().to_le_bytes())?;
    }
    for t in images.values() {
        if t.shape() != [grid, grid] {
            return Err(Error::Format(format!("image shape {:?} in a {grid}-grid study", t.shape())));
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_study_images<R: Read>(r: &mut R) -> Result<BTreeMap<ModalityId, Tensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != STUDY_MAGIC {
        return Err(Error::Format(format!("bad study magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != STUDY_VERSION {
        return Err(Error::Format(format!("unsupported study version {version}")));
    }
    let grid = read_u32(r)? as usize;
    let count = read_u32(r)? as usize;
    if count > ModalityId::ALL.len() {
        return Err(Error::Format(format!("{count} modalities in one study")));
    }
    let mut ids = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(ModalityId::from_code(read_u32(r)?)?);
    }
    let mut images = BTreeMap::new();
    for m in ids {
        let mut data = Vec::with_capacity(grid * grid);
        for _ in 0..grid * grid {
            data.push(read_f64(r)?);
        }
        if images.insert(m, Tensor::new(vec![grid, grid], data)?).is_some() {
            return Err(Error::Format(format!("modality {m} appears twice")));
        }
    }
    Ok(images)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
