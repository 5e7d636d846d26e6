//! Tile-by-tile application of an SR operator with Hann-weighted blending.

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{u16s_from_le, u16s_to_le};
use crate::scalar::{to_u16, Real};
use crate::upsample::{upsample, Interp};
use crate::volume::{Dims, Volume};

/// Maps an LR tile to an HR tile of `scale()` times its dims.
pub trait SrOperator: Send + Sync {
    fn scale(&self) -> usize;

    /// `origin` is the tile position in the LR volume.
    fn predict(&self, origin: [usize; 3], tile: &Volume) -> Result<Volume>;
}

impl<T: SrOperator + ?Sized> SrOperator for &T {
    fn scale(&self) -> usize {
        (**self).scale()
    }

    fn predict(&self, origin: [usize; 3], tile: &Volume) -> Result<Volume> {
        (**self).predict(origin, tile)
    }
}

/// Returns each tile unchanged (`scale` 1).
#[derive(Clone, Copy, Debug, Default)]
pub struct Identity;

impl SrOperator for Identity {
    fn scale(&self) -> usize {
        1
    }

    fn predict(&self, _: [usize; 3], tile: &Volume) -> Result<Volume> {
        Ok(tile.clone())
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Upsampler {
    pub kind: Interp,
    pub scale: usize,
}

impl SrOperator for Upsampler {
    fn scale(&self) -> usize {
        self.scale
    }

    fn predict(&self, _: [usize; 3], tile: &Volume) -> Result<Volume> {
        upsample(tile, self.scale, self.kind)
    }
}

/// `w(i) = 0.5 - 0.5 cos(2π (i + 0.5) / T)`: strictly positive and symmetric.
pub fn hann_weights<R: Real>(len: usize) -> Vec<R> {
    let t = len as f64;
    (0..len)
        .map(|i| R::lit(0.5 - 0.5 * (2.0 * std::f64::consts::PI * (i as f64 + 0.5) / t).cos()))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileOptions {
    /// LR tile dims.
    pub tile: Dims,
    /// LR voxels shared with each neighbour on every side.
    pub overlap: usize,
}

impl Default for TileOptions {
    fn default() -> Self {
        Self { tile: Dims::cube(32), overlap: 4 }
    }
}

fn axis_positions(n: usize, t: usize, stride: usize) -> Vec<usize> {
    let mut p = vec![0];
    while p[p.len() - 1] + t < n {
        p.push((p[p.len() - 1] + stride).min(n - t));
    }
    p
}

/// LR tile origins in z-major order. The last tile on each axis is clamped
/// to the volume edge.
pub fn tile_origins(lr: Dims, opts: &TileOptions) -> Result<Vec<[usize; 3]>> {
    let (n, t) = (lr.as_array(), opts.tile.as_array());
    let mut per_axis = Vec::with_capacity(3);
    for a in 0..3 {
        if t[a] == 0 || t[a] > n[a] {
            return Err(Error::Config(format!("tile {} does not fit volume {lr}", opts.tile)));
        }
        if 2 * opts.overlap >= t[a] {
            return Err(Error::Config(format!(
                "overlap {} must be below half the tile {}",
                opts.overlap, opts.tile
            )));
        }
        per_axis.push(axis_positions(n[a], t[a], t[a] - 2 * opts.overlap));
    }
    let mut out = Vec::new();
    for &z in &per_axis[0] {
        for &y in &per_axis[1] {
            for &x in &per_axis[2] {
                out.push([z, y, x]);
            }
        }
    }
    Ok(out)
}

/// Runs `op` over overlapping tiles of `lr` and blends the predictions.
///
/// Tiles sharing an LR z origin form a row. Rows are predicted in parallel
/// and accumulated into a sliding slab of wide-precision sums, one output
/// slice per task; slices behind the next row are finalized.
pub fn tiled_apply<O: SrOperator + ?Sized>(lr: &Volume, op: &O, opts: &TileOptions) -> Result<Volume> {
    let s = op.scale();
    let origins = tile_origins(lr.dims(), opts)?;
    let out_dims = lr.dims().scaled(s);
    let ht = opts.tile.scaled(s);
    let w = [ht.z, ht.y, ht.x].map(hann_weights::<f64>);
    let plane = out_dims.y * out_dims.x;

    // The weight sum factorizes over the axes because tiles form a full grid.
    let mut den: [Vec<f64>; 3] = [0, 1, 2].map(|a| vec![0.0; out_dims.as_array()[a]]);
    for a in 0..3 {
        let mut seen: Vec<usize> = origins.iter().map(|o| o[a]).collect();
        seen.sort_unstable();
        seen.dedup();
        for p in seen {
            for (i, wi) in w[a].iter().enumerate() {
                den[a][s * p + i] += wi;
            }
        }
    }

    let mut out = vec![0u16; out_dims.len()];
    let mut slab: VecDeque<(usize, Vec<f64>)> = VecDeque::new();
    let finalize = |z: usize, num: &[f64], out: &mut [u16]| {
        let dst = &mut out[z * plane..(z + 1) * plane];
        for y in 0..out_dims.y {
            for x in 0..out_dims.x {
                let d = den[0][z] * den[1][y] * den[2][x];
                dst[y * out_dims.x + x] = to_u16(num[y * out_dims.x + x] / d);
            }
        }
    };

    let mut rows: Vec<&[[usize; 3]]> = Vec::new();
    let mut start = 0;
    for i in 1..=origins.len() {
        if i == origins.len() || origins[i][0] != origins[start][0] {
            rows.push(&origins[start..i]);
            start = i;
        }
    }

    for row in rows {
        let z0 = s * row[0][0];
        while slab.front().is_some_and(|(z, _)| *z < z0) {
            let (z, num) = slab.pop_front().expect("non-empty");
            finalize(z, &num, &mut out);
        }
        let next = slab.back().map_or(z0, |(z, _)| z + 1);
        for z in next..z0 + ht.z {
            slab.push_back((z, vec![0.0; plane]));
        }

        let preds = row
            .par_iter()
            .map(|&o| {
                let tile = lr.crop(o, opts.tile)?;
                let p = op.predict(o, &tile)?;
                if p.dims() != ht {
                    return Err(Error::Contract(format!(
                        "operator returned {} for a {} tile at scale {s}, expected {ht}",
                        p.dims(),
                        opts.tile
                    )));
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;

        slab.par_iter_mut().for_each(|(z, num)| {
            let Some(lz) = z.checked_sub(z0).filter(|&lz| lz < ht.z) else { return };
            for (o, p) in row.iter().zip(&preds) {
                let (oy, ox) = (s * o[1], s * o[2]);
                let src = p.slice(lz);
                for ly in 0..ht.y {
                    let wzy = w[0][lz] * w[1][ly];
                    let dst = &mut num[(oy + ly) * out_dims.x + ox..][..ht.x];
                    for (lx, d) in dst.iter_mut().enumerate() {
                        *d += wzy * w[2][lx] * src[ly * ht.x + lx] as f64;
                    }
                }
            }
        });
    }
    for (z, num) in slab {
        finalize(z, &num, &mut out);
    }
    Volume::new(out_dims, lr.spacing().map(|v| v / s as f64), out)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub origin: [usize; 3],
    pub file: String,
    pub dims: Dims,
}

/// Index of stored HR predictions, one per LR tile origin.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayManifest {
    pub scale: usize,
    pub tile_lr: Dims,
    pub overlap: usize,
    pub entries: Vec<ReplayEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Serves HR tiles from raw little-endian `u16` blobs listed in a manifest.
#[derive(Debug)]
pub struct ReplayOperator {
    dir: PathBuf,
    manifest: ReplayManifest,
    by_origin: HashMap<[usize; 3], usize>,
}

impl ReplayOperator {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: ReplayManifest = serde_json::from_str(&text)?;
        let expected = manifest.tile_lr.scaled(manifest.scale);
        for e in &manifest.entries {
            if e.dims != expected {
                return Err(Error::Contract(format!(
                    "manifest entry at {:?} has dims {} but tiles are {expected}",
                    e.origin, e.dims
                )));
            }
        }
        let by_origin = manifest.entries.iter().enumerate().map(|(i, e)| (e.origin, i)).collect();
        Ok(Self { dir, manifest, by_origin })
    }

    pub fn manifest(&self) -> &ReplayManifest {
        &self.manifest
    }

    pub fn tile_options(&self) -> TileOptions {
        TileOptions {
            tile: self.manifest.tile_lr,
            overlap: self.manifest.overlap,
        }
    }
}

impl SrOperator for ReplayOperator {
    fn scale(&self) -> usize {
        self.manifest.scale
    }

    fn predict(&self, origin: [usize; 3], tile: &Volume) -> Result<Volume> {
        let key = format!("tile {origin:?}");
        let entry = self
            .by_origin
            .get(&origin)
            .map(|&i| &self.manifest.entries[i])
            .ok_or_else(|| Error::storage(&key, "no stored prediction for this tile origin"))?;
        if tile.dims() != self.manifest.tile_lr {
            return Err(Error::Contract(format!(
                "tile at {origin:?} is {} but the manifest expects {}",
                tile.dims(),
                self.manifest.tile_lr
            )));
        }
        let path = self.dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::storage(&key, format!("{}: {e}", path.display())))?;
        if bytes.len() != entry.dims.len() * 2 {
            return Err(Error::storage(
                &key,
                format!("blob has {} bytes, expected {}", bytes.len(), entry.dims.len() * 2),
            ));
        }
        Volume::new(entry.dims, tile.spacing().map(|v| v / self.manifest.scale as f64), u16s_from_le(&bytes))
    }
}

/// Predicts every tile of `lr` with `op` and stores the blobs plus a
/// manifest in `dir`, ready for [`ReplayOperator`].
pub fn record_predictions<O: SrOperator + ?Sized>(
    lr: &Volume,
    op: &O,
    opts: &TileOptions,
    dir: impl AsRef<Path>,
) -> Result<ReplayManifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = op.scale();
    let mut entries = Vec::new();
    for o in tile_origins(lr.dims(), opts)? {
        let p = op.predict(o, &lr.crop(o, opts.tile)?)?;
        let file = format!("tile_{}_{}_{}.raw", o[0], o[1], o[2]);
        let path = dir.join(&file);
        fs::write(&path, u16s_to_le(p.data())).map_err(|e| Error::io(&path, e))?;
        entries.push(ReplayEntry { origin: o, file, dims: p.dims() });
    }
    let manifest = ReplayManifest {
        scale: s,
        tile_lr: opts.tile,
        overlap: opts.overlap,
        entries,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
