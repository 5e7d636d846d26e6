//! Concurrent sampling of co-located LR/HR patch pairs from pyramid stores.
//!
//! `workers × threads_per_worker` producer lanes each own a seeded generator
//! and a private bounded queue. A collator pulls from the lanes in strict
//! round-robin order, so the stream is a pure function of the seed for any
//! lane count. Producers share only the immutable sources.
//!
//! At most `queue_capacity + 2` pairs per lane are resident: the queued
//! ones, one blocked in `send` and one being assembled.

mod augment;
mod dump;

use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam_channel::{bounded, Receiver};
use log::debug;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use augment::{cube_rotations, AugmentConfig, AugmentRecord, SignedPermutation};
pub use dump::{dump_pairs, DumpEntry};

use crate::error::{Error, Result};
use crate::store::{Group, RegionSource};
use crate::volume::{split_depth, Dims, SplitOptions, Volume};

/// A level of one group in a pyramid source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelRef {
    pub group: Group,
    pub level: usize,
}

impl LevelRef {
    pub const fn new(group: Group, level: usize) -> Self {
        Self { group, level }
    }
}

/// Which side of the train/test split patches come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    #[default]
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub workers: usize,
    pub threads_per_worker: usize,
    pub queue_capacity: usize,
    pub seed: u64,
    pub scale: usize,
    /// LR patch side in voxels.
    pub lr_patch: usize,
    pub lr_source: LevelRef,
    pub hr_source: LevelRef,
    pub augment: AugmentConfig,
    /// Minimum fraction of HR patch voxels at or above `fg_threshold`.
    pub fg_floor: f64,
    pub fg_threshold: u16,
    /// Draws per pair before the foreground floor is declared unreachable.
    pub max_attempts: usize,
    pub split: SplitOptions,
    pub role: SplitRole,
    /// Stop after this many pairs.
    pub count: Option<u64>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            workers: 1,
            threads_per_worker: 1,
            queue_capacity: 4,
            seed: 0,
            scale: 4,
            lr_patch: 32,
            lr_source: LevelRef::new(Group::Reg, 0),
            hr_source: LevelRef::new(Group::Hr, 0),
            augment: AugmentConfig::default(),
            fg_floor: 0.05,
            fg_threshold: 1,
            max_attempts: 1000,
            split: SplitOptions::default(),
            role: SplitRole::Train,
            count: None,
        }
    }
}

impl SamplerConfig {
    pub fn lanes(&self) -> usize {
        self.workers * self.threads_per_worker
    }
}

/// A co-located LR/HR patch pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchPair {
    pub sample_id: u64,
    pub lr: Volume,
    pub hr: Volume,
    pub lr_level: LevelRef,
    pub hr_level: LevelRef,
    pub lr_origin: [usize; 3],
    /// Always `scale · lr_origin`.
    pub hr_origin: [usize; 3],
    pub augmentation: AugmentRecord,
}

/// The reproducible identity of a pair, without voxel data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDescriptor {
    pub sample_id: u64,
    pub lr_origin: [usize; 3],
    pub augmentation: AugmentRecord,
}

impl PatchPair {
    pub fn descriptor(&self) -> PairDescriptor {
        PairDescriptor {
            sample_id: self.sample_id,
            lr_origin: self.lr_origin,
            augmentation: self.augmentation,
        }
    }

    /// Bytes of voxel data held by the pair.
    pub fn payload_bytes(&self) -> usize {
        2 * (self.lr.dims().len() + self.hr.dims().len())
    }
}

/// Validated sampling geometry shared by all lanes.
#[derive(Clone, Debug)]
struct Plan {
    cfg: SamplerConfig,
    lr_dims: Dims,
    z_range: std::ops::Range<usize>,
}

impl Plan {
    fn new(lr: &dyn RegionSource, hr: &dyn RegionSource, cfg: &SamplerConfig) -> Result<Self> {
        if cfg.workers == 0 || cfg.threads_per_worker == 0 || cfg.queue_capacity == 0 {
            return Err(Error::Config("workers, threads and queue capacity must be at least 1".into()));
        }
        if ![2, 4, 8].contains(&cfg.scale) {
            return Err(Error::Config(format!("scale must be 2, 4 or 8, got {}", cfg.scale)));
        }
        if cfg.lr_patch == 0 || cfg.max_attempts == 0 {
            return Err(Error::Config("patch size and attempt budget must be positive".into()));
        }
        let missing = |r: LevelRef| Error::Config(format!("source has no level {}/{}", r.group, r.level));
        let (lr_src, hr_src) = (cfg.lr_source, cfg.hr_source);
        let lr_dims = lr.level_dims(lr_src.group, lr_src.level).ok_or_else(|| missing(lr_src))?;
        let hr_dims = hr.level_dims(hr_src.group, hr_src.level).ok_or_else(|| missing(hr_src))?;
        let lr_sp = lr.level_spacing(lr_src.group, lr_src.level).ok_or_else(|| missing(lr_src))?;
        let hr_sp = hr.level_spacing(hr_src.group, hr_src.level).ok_or_else(|| missing(hr_src))?;
        for a in 0..3 {
            let ratio = lr_sp[a] / hr_sp[a];
            if (ratio - cfg.scale as f64).abs() > 1e-6 * cfg.scale as f64 {
                return Err(Error::Config(format!(
                    "level pair {}/{} and {}/{} differ by {ratio} along axis {a}, not the scale {}",
                    lr_src.group, lr_src.level, hr_src.group, hr_src.level, cfg.scale
                )));
            }
        }
        let usable = Dims::new(
            lr_dims.z.min(hr_dims.z / cfg.scale),
            lr_dims.y.min(hr_dims.y / cfg.scale),
            lr_dims.x.min(hr_dims.x / cfg.scale),
        );
        let split = split_depth(usable.z, &cfg.split)?;
        let range = match cfg.role {
            SplitRole::Train => split.train,
            SplitRole::Test => split.test,
        };
        let p = cfg.lr_patch;
        if range.len() < p || usable.y < p || usable.x < p {
            return Err(Error::Config(format!(
                "LR patch {p} does not fit the {:?} slab {range:?} of usable dims {usable}",
                cfg.role
            )));
        }
        Ok(Self {
            cfg: cfg.clone(),
            lr_dims: usable,
            z_range: range,
        })
    }

    fn lane_rng(&self, lane: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(lane as u64);
        rng
    }

    /// Draws one accepted pair.
    fn draw(&self, rng: &mut ChaCha8Rng, lr: &dyn RegionSource, hr: &dyn RegionSource, sample_id: u64) -> Result<PatchPair> {
        let cfg = &self.cfg;
        let (p, s) = (cfg.lr_patch, cfg.scale);
        let lr_shape = Dims::cube(p);
        let hr_shape = lr_shape.scaled(s);
        for _ in 0..cfg.max_attempts {
            let origin = [
                rng.random_range(self.z_range.start..=self.z_range.end - p),
                rng.random_range(0..=self.lr_dims.y - p),
                rng.random_range(0..=self.lr_dims.x - p),
            ];
            let record = AugmentRecord::draw(rng, &cfg.augment);
            let hr_origin = origin.map(|o| o * s);
            let hr_patch = hr.read_region(cfg.hr_source.group, cfg.hr_source.level, hr_origin, hr_shape)?;
            let fg = hr_patch.data().iter().filter(|&&v| v >= cfg.fg_threshold).count();
            if (fg as f64) < cfg.fg_floor * hr_shape.len() as f64 {
                continue;
            }
            let lr_patch = lr.read_region(cfg.lr_source.group, cfg.lr_source.level, origin, lr_shape)?;
            let (lr_aug, hr_aug) = if record.is_identity() {
                (lr_patch, hr_patch)
            } else {
                record.apply(&lr_patch, &hr_patch)
            };
            return Ok(PatchPair {
                sample_id,
                lr: lr_aug,
                hr: hr_aug,
                lr_level: cfg.lr_source,
                hr_level: cfg.hr_source,
                lr_origin: origin,
                hr_origin,
                augmentation: record,
            });
        }
        Err(Error::Config(format!(
            "no patch reached the foreground floor {} in {} attempts",
            cfg.fg_floor, cfg.max_attempts
        )))
    }
}

/// Bounded, deterministic stream of patch pairs. Dropping it stops and joins
/// the producers.
pub struct PatchStream {
    receivers: Vec<Receiver<Result<PatchPair>>>,
    handles: Vec<JoinHandle<()>>,
    next: u64,
    limit: Option<u64>,
    failed: bool,
}

impl Iterator for PatchStream {
    type Item = Result<PatchPair>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.limit.is_some_and(|n| self.next >= n) {
            return None;
        }
        let lane = (self.next % self.receivers.len() as u64) as usize;
        self.next += 1;
        match self.receivers[lane].recv() {
            Ok(Ok(pair)) => Some(Ok(pair)),
            Ok(Err(e)) => {
                self.failed = true;
                Some(Err(e))
            }
            Err(_) => {
                self.failed = true;
                Some(Err(Error::Config(format!("sampler lane {lane} stopped unexpectedly"))))
            }
        }
    }
}

impl Drop for PatchStream {
    fn drop(&mut self) {
        self.receivers.clear();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

/// Starts the producer lanes. Lane `l` emits sample ids `l, l + L, l + 2L, …`
/// for `L` lanes and the collator reads them back in id order.
pub fn sample_stream(
    lr: Arc<dyn RegionSource>,
    hr: Arc<dyn RegionSource>,
    cfg: &SamplerConfig,
) -> Result<PatchStream> {
    let plan = Arc::new(Plan::new(lr.as_ref(), hr.as_ref(), cfg)?);
    let lanes = cfg.lanes() as u64;
    let mut receivers = Vec::with_capacity(cfg.lanes());
    let mut handles = Vec::with_capacity(cfg.lanes());
    for lane in 0..cfg.lanes() {
        let (tx, rx) = bounded(cfg.queue_capacity);
        let (plan, lr, hr) = (Arc::clone(&plan), Arc::clone(&lr), Arc::clone(&hr));
        let handle = std::thread::Builder::new()
            .name(format!("sampler-{}-{}", lane / cfg.threads_per_worker, lane % cfg.threads_per_worker))
            .spawn(move || {
                let mut rng = plan.lane_rng(lane);
                let mut id = lane as u64;
                while plan.cfg.count.is_none_or(|n| id < n) {
                    let item = plan.draw(&mut rng, lr.as_ref(), hr.as_ref(), id);
                    let stop = item.is_err();
                    if tx.send(item).is_err() || stop {
                        break;
                    }
                    id += lanes;
                }
                debug!("sampler lane {lane} finished at id {id}");
            })
            .map_err(|e| Error::Config(format!("cannot spawn sampler thread: {e}")))?;
        receivers.push(rx);
        handles.push(handle);
    }
    Ok(PatchStream {
        receivers,
        handles,
        next: 0,
        limit: cfg.count,
        failed: false,
    })
}

/// Convenience for a single source holding both groups.
pub fn sample_stream_single<S: RegionSource + 'static>(source: Arc<S>, cfg: &SamplerConfig) -> Result<PatchStream> {
    let src: Arc<dyn RegionSource> = source;
    sample_stream(Arc::clone(&src), src, cfg)
}
