//! Geometric and intensity augmentation shared by both members of a pair.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::to_u16;
use crate::volume::{Dims, Volume};

/// A signed axis permutation: output axis `a` reads input axis `perm[a]`,
/// reversed when `flip[a]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SignedPermutation {
    pub perm: [usize; 3],
    pub flip: [bool; 3],
}

impl SignedPermutation {
    pub const IDENTITY: Self = Self {
        perm: [0, 1, 2],
        flip: [false; 3],
    };

    fn parity(perm: [usize; 3]) -> bool {
        let inversions = (perm[0] > perm[1]) as u8 + (perm[0] > perm[2]) as u8 + (perm[1] > perm[2]) as u8;
        inversions % 2 == 1
    }

    /// Determinant of the underlying matrix is `+1`.
    pub fn is_rotation(&self) -> bool {
        let flips = self.flip.iter().filter(|&&f| f).count() % 2 == 1;
        Self::parity(self.perm) == flips
    }

    pub fn apply(&self, v: &Volume) -> Volume {
        let d = v.dims().as_array();
        let out = Dims::new(d[self.perm[0]], d[self.perm[1]], d[self.perm[2]]);
        let sp = v.spacing();
        let spacing = [sp[self.perm[0]], sp[self.perm[1]], sp[self.perm[2]]];
        let src = v.dims();
        let map = |o: [usize; 3]| {
            let mut i = [0; 3];
            for a in 0..3 {
                let n = d[self.perm[a]];
                i[self.perm[a]] = if self.flip[a] { n - 1 - o[a] } else { o[a] };
            }
            src.index(i[0], i[1], i[2])
        };
        let mut r = Volume::from_fn(out, spacing, |z, y, x| v.data()[map([z, y, x])]);
        if let Some(m) = v.mask() {
            let mask = (0..out.len())
                .map(|j| m[map([j / (out.y * out.x), (j / out.x) % out.y, j % out.x])])
                .collect();
            r = r.with_mask(mask).expect("same length");
        }
        r
    }
}

/// The 24 proper rotations of the cube, identity first.
pub fn cube_rotations() -> Vec<SignedPermutation> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::with_capacity(24);
    for perm in PERMS {
        for bits in 0..8u8 {
            let sp = SignedPermutation {
                perm,
                flip: [bits & 4 != 0, bits & 2 != 0, bits & 1 != 0],
            };
            if sp.is_rotation() {
                out.push(sp);
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flips: bool,
    pub rotations: bool,
    pub contrast: bool,
    pub scaling: bool,
    pub contrast_range: [f64; 2],
    pub scaling_range: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flips: true,
            rotations: true,
            contrast: true,
            scaling: true,
            contrast_range: [0.9, 1.1],
            scaling_range: [0.9, 1.1],
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            flips: false,
            rotations: false,
            contrast: false,
            scaling: false,
            ..Self::default()
        }
    }
}

/// What was applied to a pair: rotation first, then flips in `(z, y, x)`,
/// then contrast about the HR patch mean, then a gain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    /// Index into [`cube_rotations`].
    pub rotation: usize,
    pub flips: [bool; 3],
    pub contrast: f64,
    pub scale: f64,
}

impl AugmentRecord {
    pub const IDENTITY: Self = Self {
        rotation: 0,
        flips: [false; 3],
        contrast: 1.0,
        scale: 1.0,
    };

    /// Always consumes the same number of draws so toggles never shift the
    /// random sequence.
    pub fn draw<G: Rng + ?Sized>(rng: &mut G, cfg: &AugmentConfig) -> Self {
        let rotate = rng.random_bool(0.5);
        let rotation = rng.random_range(0..24);
        let flips = [rng.random_bool(0.5), rng.random_bool(0.5), rng.random_bool(0.5)];
        let use_contrast = rng.random_bool(0.5);
        let contrast = rng.random_range(cfg.contrast_range[0]..=cfg.contrast_range[1]);
        let use_scale = rng.random_bool(0.5);
        let scale = rng.random_range(cfg.scaling_range[0]..=cfg.scaling_range[1]);
        Self {
            rotation: if cfg.rotations && rotate { rotation } else { 0 },
            flips: if cfg.flips { flips } else { [false; 3] },
            contrast: if cfg.contrast && use_contrast { contrast } else { 1.0 },
            scale: if cfg.scaling && use_scale { scale } else { 1.0 },
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    fn geometric(&self, v: &Volume) -> Volume {
        let mut out = if self.rotation == 0 {
            v.clone()
        } else {
            cube_rotations()[self.rotation].apply(v)
        };
        if self.flips.iter().any(|&f| f) {
            out = SignedPermutation { perm: [0, 1, 2], flip: self.flips }.apply(&out);
        }
        out
    }

    /// Applies the record to both members; intensity changes use the HR mean
    /// as the contrast pivot and are clamped to `u16`.
    pub fn apply(&self, lr: &Volume, hr: &Volume) -> (Volume, Volume) {
        let (mut lr, mut hr) = (self.geometric(lr), self.geometric(hr));
        if self.contrast != 1.0 || self.scale != 1.0 {
            let pivot = hr.mean();
            let f = |v: u16| to_u16(self.scale * (pivot + self.contrast * (v as f64 - pivot)));
            for v in lr.data_mut().iter_mut().chain(hr.data_mut()) {
                *v = f(*v);
            }
        }
        (lr, hr)
    }
}
