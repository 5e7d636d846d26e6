//! Flat binary volumes with JSON sidecars, and grayscale slice stacks.
//!
//! A volume `foo` lives in `foo.json` (sidecar), `foo.raw` (little-endian
//! samples) and optionally `foo.mask` (one byte per voxel, 0 or 1).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::volume::{Dims, RawVolume, Spacing, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    U8,
    U16,
    F32,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::U16 => 2,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub dims: Dims,
    pub spacing_um: Spacing,
    pub dtype: Dtype,
    /// Sample file relative to the sidecar; defaults to `<stem>.raw`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
}

fn sibling(sidecar: &Path, name: &str) -> PathBuf {
    sidecar.parent().unwrap_or(Path::new(".")).join(name)
}

fn default_data_name(sidecar: &Path) -> String {
    let stem = sidecar.file_stem().and_then(|s| s.to_str()).unwrap_or("volume");
    format!("{stem}.raw")
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads any supported dtype into `f32` samples (exact for u8/u16).
pub fn read_raw(sidecar_path: &Path) -> Result<RawVolume<f32>> {
    let meta = read_sidecar(sidecar_path)?;
    let name = meta.data.clone().unwrap_or_else(|| default_data_name(sidecar_path));
    let data_path = sibling(sidecar_path, &name);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expect = meta.dims.len() * meta.dtype.size();
    if bytes.len() != expect {
        return Err(Error::storage(
            data_path.display(),
            format!("expected {expect} bytes for {} {:?}, found {}", meta.dims, meta.dtype, bytes.len()),
        ));
    }
    let data = match meta.dtype {
        Dtype::U8 => bytes.iter().map(|&b| b as f32).collect(),
        Dtype::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
            .collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    RawVolume::new(meta.dims, meta.spacing_um, data)
}

/// Reads a `u16` volume (and its mask, if declared).
pub fn read_volume(sidecar_path: &Path) -> Result<Volume> {
    let meta = read_sidecar(sidecar_path)?;
    if meta.dtype != Dtype::U16 {
        return Err(invalid!(
            "{} holds {:?} samples; normalize it with ingest first",
            sidecar_path.display(),
            meta.dtype
        ));
    }
    let name = meta.data.clone().unwrap_or_else(|| default_data_name(sidecar_path));
    let data_path = sibling(sidecar_path, &name);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    if bytes.len() != meta.dims.len() * 2 {
        return Err(Error::storage(
            data_path.display(),
            format!("expected {} bytes, found {}", meta.dims.len() * 2, bytes.len()),
        ));
    }
    let mut vol = Volume::new(meta.dims, meta.spacing_um, u16s_from_le(&bytes))?;
    if let Some(mask_name) = &meta.mask {
        let mask_path = sibling(sidecar_path, mask_name);
        let m = fs::read(&mask_path).map_err(|e| Error::io(&mask_path, e))?;
        vol = vol.with_mask(m.into_iter().map(|b| b != 0).collect())?;
    }
    Ok(vol)
}

/// Writes `<stem>.json`, `<stem>.raw` and, when masked, `<stem>.mask`.
pub fn write_volume(sidecar_path: &Path, volume: &Volume) -> Result<()> {
    let stem = sidecar_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| invalid!("bad output path {}", sidecar_path.display()))?
        .to_string();
    if let Some(parent) = sidecar_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let data_name = format!("{stem}.raw");
    let data_path = sibling(sidecar_path, &data_name);
    fs::write(&data_path, u16s_to_le(volume.data())).map_err(|e| Error::io(&data_path, e))?;
    let mask_name = if let Some(mask) = volume.mask() {
        let name = format!("{stem}.mask");
        let p = sibling(sidecar_path, &name);
        let bytes: Vec<u8> = mask.iter().map(|&b| b as u8).collect();
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        Some(name)
    } else {
        None
    };
    let meta = Sidecar {
        dims: volume.dims(),
        spacing_um: volume.spacing(),
        dtype: Dtype::U16,
        data: Some(data_name),
        mask: mask_name,
    };
    let text = serde_json::to_string_pretty(&meta)?;
    fs::write(sidecar_path, text).map_err(|e| Error::io(sidecar_path, e))
}

/// Loads one 16-bit grayscale image per z-slice, in lexicographic file order.
pub fn read_slice_stack(dir: &Path, spacing: Spacing) -> Result<RawVolume<f32>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "tif" | "tiff"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(invalid!("no png/tiff slices in {}", dir.display()));
    }
    let mut data = Vec::new();
    let mut plane: Option<(usize, usize)> = None;
    for f in &files {
        let img = image::open(f)
            .map_err(|e| Error::storage(f.display(), e))?
            .into_luma16();
        let (w, h) = (img.width() as usize, img.height() as usize);
        match plane {
            None => plane = Some((h, w)),
            Some(p) if p != (h, w) => {
                return Err(invalid!("slice {} is {h}x{w}, expected {}x{}", f.display(), p.0, p.1))
            }
            _ => {}
        }
        data.extend(img.into_raw().into_iter().map(|v| v as f32));
    }
    let (h, w) = plane.expect("at least one slice");
    RawVolume::new(Dims::new(files.len(), h, w), spacing, data)
}

pub(crate) fn u16s_from_le(bytes: &[u8]) -> Vec<u16> {
    bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect()
}

pub(crate) fn u16s_to_le(values: &[u16]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 2);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
