//! Chunked multiscale store (an OME-NGFF 0.4 / Zarr v2 compatible subset).
//!
//! Layout under the store root:
//!
//! ```text
//! root/.zgroup
//! root/{HR|LR|REG}/.zgroup
//! root/{HR|LR|REG}/.zattrs            multiscales metadata
//! root/{group}/{level}/.zarray        array metadata
//! root/{group}/{level}/{cz}.{cy}.{cx} little-endian u16 chunk, C order
//! ```
//!
//! Edge chunks are zero padded so every chunk file has the same size. Each
//! file is written to a temporary name and renamed into place, so readers
//! never observe a partial chunk.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::{u16s_from_le, u16s_to_le};
use crate::volume::{Dims, Spacing, Volume};

/// Default chunk edge for full-resolution data.
pub const HR_CHUNK: usize = 160;
/// Default chunk edge for the (smaller) LR and registered arrays.
pub const LR_CHUNK: usize = 96;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "HR")]
    Hr,
    #[serde(rename = "LR")]
    Lr,
    #[serde(rename = "REG")]
    Reg,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Hr, Group::Lr, Group::Reg];

    pub fn dir_name(self) -> &'static str {
        match self {
            Group::Hr => "HR",
            Group::Lr => "LR",
            Group::Reg => "REG",
        }
    }

    pub fn default_chunk(self) -> Dims {
        match self {
            Group::Hr => Dims::cube(HR_CHUNK),
            Group::Lr | Group::Reg => Dims::cube(LR_CHUNK),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl std::str::FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HR" => Ok(Group::Hr),
            "LR" => Ok(Group::Lr),
            "REG" => Ok(Group::Reg),
            other => Err(invalid!("unknown group {other:?} (expected HR, LR or REG)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChunkKey {
    pub group: Group,
    pub level: usize,
    pub coords: [usize; 3],
}

impl ChunkKey {
    pub fn file_name(&self) -> String {
        format!("{}.{}.{}", self.coords[0], self.coords[1], self.coords[2])
    }
}

impl fmt::Display for ChunkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.group, self.level, self.file_name())
    }
}

// ---- on-disk metadata -------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZlibCodec {
    pub id: String,
    pub level: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZArray {
    pub shape: [usize; 3],
    pub chunks: [usize; 3],
    pub dtype: String,
    pub order: String,
    pub fill_value: u16,
    pub compressor: Option<ZlibCodec>,
    pub filters: Option<Vec<serde_json::Value>>,
    pub zarr_format: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: String,
    pub unit: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoordinateTransformation {
    #[serde(rename = "type")]
    pub kind: String,
    pub scale: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub path: String,
    #[serde(rename = "coordinateTransformations")]
    pub coordinate_transformations: Vec<CoordinateTransformation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Multiscale {
    pub version: String,
    pub axes: Vec<Axis>,
    pub datasets: Vec<Dataset>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZAttrs {
    pub multiscales: Vec<Multiscale>,
}

impl ZAttrs {
    fn for_levels(spacings: &[Spacing]) -> Self {
        let axes = ["z", "y", "x"]
            .iter()
            .map(|n| Axis {
                name: n.to_string(),
                kind: "space".into(),
                unit: "micrometer".into(),
            })
            .collect();
        let datasets = spacings
            .iter()
            .enumerate()
            .map(|(k, s)| Dataset {
                path: k.to_string(),
                coordinate_transformations: vec![CoordinateTransformation {
                    kind: "scale".into(),
                    scale: *s,
                }],
            })
            .collect();
        ZAttrs {
            multiscales: vec![Multiscale {
                version: "0.4".into(),
                axes,
                datasets,
            }],
        }
    }
}

const ZGROUP: &str = r#"{"zarr_format":2}"#;

// ---- store ------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct LevelMeta {
    pub dims: Dims,
    pub chunks: Dims,
    pub spacing: Spacing,
    pub compressed: bool,
}

impl LevelMeta {
    pub fn chunk_grid(&self) -> [usize; 3] {
        let d = self.dims.as_array();
        let c = self.chunks.as_array();
        [0, 1, 2].map(|a| d[a].div_ceil(c[a]))
    }

    pub fn chunk_count(&self) -> usize {
        self.chunk_grid().iter().product()
    }
}

#[derive(Clone, Debug)]
pub struct StoreOptions {
    /// Chunk shape shared by every level of the group.
    pub chunk: Dims,
    pub overwrite: bool,
    /// zlib level; `None` stores raw chunks.
    pub compression: Option<u32>,
}

impl StoreOptions {
    pub fn for_group(group: Group) -> Self {
        Self {
            chunk: group.default_chunk(),
            overwrite: false,
            compression: None,
        }
    }
}

/// Anything that can serve voxel boxes from pyramid levels.
pub trait RegionSource: Send + Sync {
    fn level_dims(&self, group: Group, level: usize) -> Option<Dims>;
    fn level_spacing(&self, group: Group, level: usize) -> Option<Spacing>;
    fn read_region(&self, group: Group, level: usize, origin: [usize; 3], shape: Dims) -> Result<Volume>;
}

#[derive(Default)]
struct CacheInner {
    map: HashMap<ChunkKey, Arc<Vec<u16>>>,
    order: VecDeque<ChunkKey>,
    bytes: usize,
}

/// Bounded FIFO cache of decoded chunks. Lookups take a short lock; no lock is
/// held while a chunk is read from disk.
pub struct ChunkCache {
    capacity_bytes: usize,
    inner: Mutex<CacheInner>,
}

impl ChunkCache {
    pub fn new(capacity_bytes: usize) -> Self {
        Self {
            capacity_bytes,
            inner: Mutex::new(CacheInner::default()),
        }
    }

    pub fn capacity_bytes(&self) -> usize {
        self.capacity_bytes
    }

    pub fn resident_bytes(&self) -> usize {
        self.inner.lock().expect("cache lock").bytes
    }

    fn get(&self, key: &ChunkKey) -> Option<Arc<Vec<u16>>> {
        if self.capacity_bytes == 0 {
            return None;
        }
        self.inner.lock().expect("cache lock").map.get(key).cloned()
    }

    fn insert(&self, key: ChunkKey, chunk: Arc<Vec<u16>>) {
        let size = chunk.len() * 2;
        if size > self.capacity_bytes {
            return;
        }
        let mut inner = self.inner.lock().expect("cache lock");
        if inner.map.contains_key(&key) {
            return;
        }
        while inner.bytes + size > self.capacity_bytes {
            let Some(old) = inner.order.pop_front() else { break };
            if let Some(c) = inner.map.remove(&old) {
                inner.bytes -= c.len() * 2;
            }
        }
        inner.bytes += size;
        inner.order.push_back(key);
        inner.map.insert(key, chunk);
    }
}

pub struct PyramidStore {
    root: PathBuf,
    groups: BTreeMap<Group, Vec<LevelMeta>>,
    cache: ChunkCache,
    chunk_loads: AtomicUsize,
    chunk_accesses: AtomicUsize,
}

impl fmt::Debug for PyramidStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PyramidStore")
            .field("root", &self.root)
            .field("groups", &self.groups)
            .finish()
    }
}

impl PyramidStore {
    /// Opens whatever groups exist under `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if !root.is_dir() {
            return Err(Error::storage(root.display(), "store root does not exist"));
        }
        let mut groups = BTreeMap::new();
        for group in Group::ALL {
            let gdir = root.join(group.dir_name());
            let attrs_path = gdir.join(".zattrs");
            if !attrs_path.exists() {
                continue;
            }
            let attrs: ZAttrs = read_json(&attrs_path)?;
            let ms = attrs
                .multiscales
                .first()
                .ok_or_else(|| Error::storage(attrs_path.display(), "no multiscales entry"))?;
            let mut levels = Vec::with_capacity(ms.datasets.len());
            for ds in &ms.datasets {
                let arr: ZArray = read_json(&gdir.join(&ds.path).join(".zarray"))?;
                if arr.dtype != "<u2" || arr.order != "C" {
                    return Err(Error::storage(
                        format!("{group}/{}", ds.path),
                        format!("unsupported dtype {} / order {}", arr.dtype, arr.order),
                    ));
                }
                let spacing = ds
                    .coordinate_transformations
                    .iter()
                    .find(|t| t.kind == "scale")
                    .map(|t| t.scale)
                    .unwrap_or([1.0; 3]);
                levels.push(LevelMeta {
                    dims: arr.shape.into(),
                    chunks: arr.chunks.into(),
                    spacing,
                    compressed: arr.compressor.is_some(),
                });
            }
            groups.insert(group, levels);
        }
        Ok(Self {
            root,
            groups,
            cache: ChunkCache::new(0),
            chunk_loads: AtomicUsize::new(0),
            chunk_accesses: AtomicUsize::new(0),
        })
    }

    pub fn with_cache(mut self, capacity_bytes: usize) -> Self {
        self.cache = ChunkCache::new(capacity_bytes);
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn groups(&self) -> impl Iterator<Item = Group> + '_ {
        self.groups.keys().copied()
    }

    pub fn levels(&self, group: Group) -> Option<&[LevelMeta]> {
        self.groups.get(&group).map(|v| v.as_slice())
    }

    pub fn level(&self, group: Group, level: usize) -> Result<&LevelMeta> {
        self.groups
            .get(&group)
            .and_then(|l| l.get(level))
            .ok_or_else(|| Error::Range(format!("store has no level {group}/{level}")))
    }

    pub fn cache(&self) -> &ChunkCache {
        &self.cache
    }

    /// Chunk files decoded from disk so far.
    pub fn chunk_loads(&self) -> usize {
        self.chunk_loads.load(Ordering::Relaxed)
    }

    /// Chunks touched by reads so far (disk or cache).
    pub fn chunk_accesses(&self) -> usize {
        self.chunk_accesses.load(Ordering::Relaxed)
    }

    pub fn chunk_path(&self, key: &ChunkKey) -> PathBuf {
        self.root
            .join(key.group.dir_name())
            .join(key.level.to_string())
            .join(key.file_name())
    }

    fn load_chunk(&self, key: ChunkKey, meta: &LevelMeta) -> Result<Arc<Vec<u16>>> {
        self.chunk_accesses.fetch_add(1, Ordering::Relaxed);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let path = self.chunk_path(&key);
        let raw = fs::read(&path).map_err(|e| Error::storage(key, e))?;
        let bytes = if meta.compressed {
            let mut out = Vec::with_capacity(meta.chunks.len() * 2);
            ZlibDecoder::new(raw.as_slice())
                .read_to_end(&mut out)
                .map_err(|e| Error::storage(key, format!("corrupt compressed chunk: {e}")))?;
            out
        } else {
            raw
        };
        if bytes.len() != meta.chunks.len() * 2 {
            return Err(Error::storage(
                key,
                format!("chunk holds {} bytes, expected {}", bytes.len(), meta.chunks.len() * 2),
            ));
        }
        self.chunk_loads.fetch_add(1, Ordering::Relaxed);
        let chunk = Arc::new(u16s_from_le(&bytes));
        self.cache.insert(key, chunk.clone());
        Ok(chunk)
    }

    /// Assembles the box `[origin, origin + shape)` of one level, touching
    /// only the chunks it intersects.
    pub fn read_region(&self, group: Group, level: usize, origin: [usize; 3], shape: Dims) -> Result<Volume> {
        let meta = self.level(group, level)?;
        if !shape.fits_within(origin, meta.dims) {
            return Err(Error::Range(format!(
                "region {shape} at {origin:?} exceeds {group}/{level} dims {}",
                meta.dims
            )));
        }
        let mut out = Volume::zeros(shape, meta.spacing);
        if shape.is_empty() {
            return Ok(out);
        }
        let c = meta.chunks.as_array();
        let s = shape.as_array();
        let first = [0, 1, 2].map(|a| origin[a] / c[a]);
        let last = [0, 1, 2].map(|a| (origin[a] + s[a] - 1) / c[a]);
        let dst = out.data_mut();
        for cz in first[0]..=last[0] {
            for cy in first[1]..=last[1] {
                for cx in first[2]..=last[2] {
                    let key = ChunkKey { group, level, coords: [cz, cy, cx] };
                    let chunk = self.load_chunk(key, meta)?;
                    let cc = [cz, cy, cx];
                    // Intersection in absolute voxel coordinates.
                    let lo = [0, 1, 2].map(|a| origin[a].max(cc[a] * c[a]));
                    let hi = [0, 1, 2].map(|a| (origin[a] + s[a]).min((cc[a] + 1) * c[a]));
                    let run = hi[2] - lo[2];
                    for z in lo[0]..hi[0] {
                        for y in lo[1]..hi[1] {
                            let src_i = meta
                                .chunks
                                .index(z - cc[0] * c[0], y - cc[1] * c[1], lo[2] - cc[2] * c[2]);
                            let dst_i = shape.index(z - origin[0], y - origin[1], lo[2] - origin[2]);
                            dst[dst_i..dst_i + run].copy_from_slice(&chunk[src_i..src_i + run]);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn read_level(&self, group: Group, level: usize) -> Result<Volume> {
        let dims = self.level(group, level)?.dims;
        self.read_region(group, level, [0; 3], dims)
    }
}

impl RegionSource for PyramidStore {
    fn level_dims(&self, group: Group, level: usize) -> Option<Dims> {
        self.level(group, level).ok().map(|m| m.dims)
    }

    fn level_spacing(&self, group: Group, level: usize) -> Option<Spacing> {
        self.level(group, level).ok().map(|m| m.spacing)
    }

    fn read_region(&self, group: Group, level: usize, origin: [usize; 3], shape: Dims) -> Result<Volume> {
        PyramidStore::read_region(self, group, level, origin, shape)
    }
}

/// Writes `levels` as one group of the store at `root` and reopens the store.
pub fn write_store(root: impl AsRef<Path>, group: Group, levels: &[Volume], opts: &StoreOptions) -> Result<PyramidStore> {
    let root = root.as_ref();
    if levels.is_empty() {
        return Err(invalid!("nothing to write: empty level list"));
    }
    if opts.chunk.is_empty() {
        return Err(invalid!("chunk shape must be positive, got {}", opts.chunk));
    }
    check_level_geometry(levels)?;

    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let root_zgroup = root.join(".zgroup");
    if !root_zgroup.exists() {
        write_atomic(&root_zgroup, ZGROUP.as_bytes()).map_err(|e| Error::io(&root_zgroup, e))?;
    }
    let gdir = root.join(group.dir_name());
    if gdir.exists() {
        if !opts.overwrite {
            return Err(Error::Conflict(format!(
                "group {group} already exists in {}",
                root.display()
            )));
        }
        fs::remove_dir_all(&gdir).map_err(|e| Error::io(&gdir, e))?;
    }
    fs::create_dir_all(&gdir).map_err(|e| Error::io(&gdir, e))?;

    for (k, vol) in levels.iter().enumerate() {
        write_level(&gdir.join(k.to_string()), group, k, vol, opts)?;
    }
    let spacings: Vec<Spacing> = levels.iter().map(|l| l.spacing()).collect();
    let attrs = serde_json::to_string(&ZAttrs::for_levels(&spacings))?;
    let p = gdir.join(".zattrs");
    write_atomic(&p, attrs.as_bytes()).map_err(|e| Error::io(&p, e))?;
    let p = gdir.join(".zgroup");
    write_atomic(&p, ZGROUP.as_bytes()).map_err(|e| Error::io(&p, e))?;
    PyramidStore::open(root)
}

fn check_level_geometry(levels: &[Volume]) -> Result<()> {
    let base = &levels[0];
    for (k, l) in levels.iter().enumerate().skip(1) {
        let f = 1usize << k;
        let bd = base.dims();
        let expect = Dims::new(bd.z / f, bd.y / f, bd.x / f);
        let bs = base.spacing();
        let expect_sp = [bs[0] * f as f64, bs[1] * f as f64, bs[2] * f as f64];
        if l.dims() != expect || l.spacing() != expect_sp {
            return Err(invalid!(
                "level {k} is {} at {:?}; expected {expect} at {expect_sp:?}",
                l.dims(),
                l.spacing()
            ));
        }
    }
    Ok(())
}

fn write_level(dir: &Path, group: Group, level: usize, vol: &Volume, opts: &StoreOptions) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let chunks = opts.chunk;
    let zarray = ZArray {
        shape: vol.dims().as_array(),
        chunks: chunks.as_array(),
        dtype: "<u2".into(),
        order: "C".into(),
        fill_value: 0,
        compressor: opts.compression.map(|level| ZlibCodec { id: "zlib".into(), level }),
        filters: None,
        zarr_format: 2,
    };
    let p = dir.join(".zarray");
    write_atomic(&p, serde_json::to_string(&zarray)?.as_bytes()).map_err(|e| Error::io(&p, e))?;

    let meta = LevelMeta {
        dims: vol.dims(),
        chunks,
        spacing: vol.spacing(),
        compressed: opts.compression.is_some(),
    };
    let grid = meta.chunk_grid();
    let d = vol.dims();
    let c = chunks.as_array();
    let src = vol.data();
    let mut buf = vec![0u16; chunks.len()];
    for cz in 0..grid[0] {
        for cy in 0..grid[1] {
            for cx in 0..grid[2] {
                let key = ChunkKey { group, level, coords: [cz, cy, cx] };
                buf.fill(0);
                let o = [cz * c[0], cy * c[1], cx * c[2]];
                let ext = [
                    c[0].min(d.z - o[0]),
                    c[1].min(d.y - o[1]),
                    c[2].min(d.x - o[2]),
                ];
                for z in 0..ext[0] {
                    for y in 0..ext[1] {
                        let s = d.index(o[0] + z, o[1] + y, o[2]);
                        let t = chunks.index(z, y, 0);
                        buf[t..t + ext[2]].copy_from_slice(&src[s..s + ext[2]]);
                    }
                }
                let mut bytes = u16s_to_le(&buf);
                if let Some(level) = opts.compression {
                    let mut enc = ZlibEncoder::new(Vec::new(), Compression::new(level.min(9)));
                    enc.write_all(&bytes).map_err(|e| Error::storage(key, e))?;
                    bytes = enc.finish().map_err(|e| Error::storage(key, e))?;
                }
                write_atomic(&dir.join(key.file_name()), &bytes).map_err(|e| Error::storage(key, e))?;
            }
        }
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("chunk");
    let tmp = path.with_file_name(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::storage(path.display(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::storage(path.display(), e))
}

/// In-memory stand-in for a store; used by experiments and tests.
#[derive(Clone, Debug, Default)]
pub struct MemoryStore {
    groups: BTreeMap<Group, Vec<Volume>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, group: Group, levels: Vec<Volume>) {
        self.groups.insert(group, levels);
    }

    pub fn with_group(mut self, group: Group, levels: Vec<Volume>) -> Self {
        self.insert(group, levels);
        self
    }

    pub fn volume(&self, group: Group, level: usize) -> Option<&Volume> {
        self.groups.get(&group).and_then(|l| l.get(level))
    }
}

impl RegionSource for MemoryStore {
    fn level_dims(&self, group: Group, level: usize) -> Option<Dims> {
        self.volume(group, level).map(|v| v.dims())
    }

    fn level_spacing(&self, group: Group, level: usize) -> Option<Spacing> {
        self.volume(group, level).map(|v| v.spacing())
    }

    fn read_region(&self, group: Group, level: usize, origin: [usize; 3], shape: Dims) -> Result<Volume> {
        let v = self
            .volume(group, level)
            .ok_or_else(|| Error::Range(format!("no level {group}/{level}")))?;
        Ok(v.crop(origin, shape)?.without_mask())
    }
}
