use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AugmentRecord, LevelRef, PatchPair};
use crate::error::{Error, Result};
use crate::io::u16s_to_le;
use crate::volume::Dims;

/// One pair in a dump directory's `index.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpEntry {
    pub sample_id: u64,
    pub lr_file: String,
    pub hr_file: String,
    pub lr_dims: Dims,
    pub hr_dims: Dims,
    pub lr_level: LevelRef,
    pub hr_level: LevelRef,
    pub lr_origin: [usize; 3],
    pub hr_origin: [usize; 3],
    pub augmentation: AugmentRecord,
}

/// Writes pairs as raw little-endian `u16` blobs plus a JSON index.
pub fn dump_pairs(pairs: impl IntoIterator<Item = Result<PatchPair>>, dir: impl AsRef<Path>) -> Result<Vec<DumpEntry>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut index = Vec::new();
    for pair in pairs {
        let p = pair?;
        let lr_file = format!("{:08}_lr.raw", p.sample_id);
        let hr_file = format!("{:08}_hr.raw", p.sample_id);
        for (file, v) in [(&lr_file, &p.lr), (&hr_file, &p.hr)] {
            let path = dir.join(file);
            fs::write(&path, u16s_to_le(v.data())).map_err(|e| Error::io(&path, e))?;
        }
        index.push(DumpEntry {
            sample_id: p.sample_id,
            lr_file,
            hr_file,
            lr_dims: p.lr.dims(),
            hr_dims: p.hr.dims(),
            lr_level: p.lr_level,
            hr_level: p.hr_level,
            lr_origin: p.lr_origin,
            hr_origin: p.hr_origin,
            augmentation: p.augmentation,
        });
    }
    let path = dir.join("index.json");
    fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}
