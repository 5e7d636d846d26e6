//! Intensity-based alignment of an LR scan onto the downsampled-HR grid.
//!
//! Transforms map *fixed* physical coordinates (micrometers, z/y/x order)
//! to *moving* physical coordinates: `q = A p + t`. Similarity is the
//! Pearson correlation (NCC) of jointly masked intensities, which is
//! insensitive to the contrast differences between the two acquisitions.

mod affine;
mod translation;

use serde::{Deserialize, Serialize};

pub use affine::{register_affine, AffineOptions};
pub use translation::{register_translation, TranslationOptions};

use crate::error::{invalid, Error, Result};
use crate::scalar::{to_u16, Real};
use crate::volume::{Dims, Spacing, Volume};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform3D<R> {
    pub linear: [[R; 3]; 3],
    /// Micrometers.
    pub translation: [R; 3],
}

impl<R: Real> AffineTransform3D<R> {
    pub fn identity() -> Self {
        let (o, z) = (R::one(), R::zero());
        Self {
            linear: [[o, z, z], [z, o, z], [z, z, o]],
            translation: [z; 3],
        }
    }

    pub fn from_translation(t: [R; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn apply(&self, p: [R; 3]) -> [R; 3] {
        let a = &self.linear;
        [0, 1, 2].map(|i| a[i][0] * p[0] + a[i][1] * p[1] + a[i][2] * p[2] + self.translation[i])
    }

    pub fn det(&self) -> R {
        let a = &self.linear;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    /// `max_i sum_j |A_ij - I_ij|`.
    pub fn deviation_from_identity(&self) -> R {
        (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| {
                        let id = if i == j { R::one() } else { R::zero() };
                        (self.linear[i][j] - id).abs()
                    })
                    .fold(R::zero(), |acc, v| acc + v)
            })
            .fold(R::zero(), R::max)
    }

    pub fn inverse(&self) -> Option<Self> {
        let d = self.det();
        if d.abs() <= R::epsilon() {
            return None;
        }
        let a = &self.linear;
        let mut inv = [[R::zero(); 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                // Cofactor of a[j][i].
                let (r0, r1) = (if j == 0 { 1 } else { 0 }, if j == 2 { 1 } else { 2 });
                let (c0, c1) = (if i == 0 { 1 } else { 0 }, if i == 2 { 1 } else { 2 });
                let minor = a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0];
                let sign = if (i + j) % 2 == 0 { R::one() } else { -R::one() };
                inv[i][j] = sign * minor / d;
            }
        }
        let t = self.translation;
        let t_inv = [0, 1, 2].map(|i| -(inv[i][0] * t[0] + inv[i][1] * t[1] + inv[i][2] * t[2]));
        Some(Self {
            linear: inv,
            translation: t_inv,
        })
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let a = &self.linear;
        let b = &other.linear;
        let mut m = [[R::zero(); 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Self {
            linear: m,
            translation: self.apply(other.translation),
        }
    }

    pub fn cast<S: Real>(&self) -> AffineTransform3D<S> {
        AffineTransform3D {
            linear: self.linear.map(|r| r.map(|v| S::lit(v.to_f64_lossy()))),
            translation: self.translation.map(|v| S::lit(v.to_f64_lossy())),
        }
    }
}

/// Sampling grid of a resampled volume: voxel `i` sits at `origin + i * spacing`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dims: Dims,
    pub spacing: Spacing,
    pub origin: [f64; 3],
}

impl Grid {
    pub fn of(volume: &Volume) -> Self {
        Self {
            dims: volume.dims(),
            spacing: volume.spacing(),
            origin: [0.0; 3],
        }
    }

    #[inline]
    pub fn point(&self, z: usize, y: usize, x: usize) -> [f64; 3] {
        [
            self.origin[0] + z as f64 * self.spacing[0],
            self.origin[1] + y as f64 * self.spacing[1],
            self.origin[2] + x as f64 * self.spacing[2],
        ]
    }
}

/// Pearson correlation of intensities over a joint mask.
///
/// With `mask = None` the joint mask is the intersection of the volumes'
/// own masks. Returns 0 when either side is constant over the mask.
pub fn ncc<R: Real>(fixed: &Volume, moving: &Volume, mask: Option<&[bool]>) -> Result<R> {
    if fixed.dims() != moving.dims() {
        return Err(invalid!("ncc needs equal grids, got {} and {}", fixed.dims(), moving.dims()));
    }
    let n = fixed.dims().len();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(invalid!("mask length {} does not match {}", m.len(), fixed.dims()));
        }
    }
    let inside = |i: usize| match mask {
        Some(m) => m[i],
        None => fixed.is_foreground(i) && moving.is_foreground(i),
    };
    let (f, m) = (fixed.data(), moving.data());
    let mut count = 0usize;
    let (mut sf, mut sm) = (R::zero(), R::zero());
    for i in (0..n).filter(|&i| inside(i)) {
        count += 1;
        sf += R::lit(f[i] as f64);
        sm += R::lit(m[i] as f64);
    }
    if count < 2 {
        return Err(invalid!("ncc needs at least 2 masked voxels, got {count}"));
    }
    let cnt = R::from_usize_lossy(count);
    let (mf, mm) = (sf / cnt, sm / cnt);
    let (mut cov, mut vf, mut vm) = (R::zero(), R::zero(), R::zero());
    for i in (0..n).filter(|&i| inside(i)) {
        let a = R::lit(f[i] as f64) - mf;
        let b = R::lit(m[i] as f64) - mm;
        cov += a * b;
        vf += a * a;
        vm += b * b;
    }
    if vf <= R::zero() || vm <= R::zero() {
        return Ok(R::zero());
    }
    Ok((cov / (vf.sqrt() * vm.sqrt())).max(-R::one()).min(R::one()))
}

const SNAP: f64 = 1e-9;

/// Trilinear sample at continuous voxel index `c`.
///
/// Neighbours with zero weight are not required to exist, so integer
/// positions on the last plane are still valid. Returns `None` outside.
#[inline]
pub(crate) fn trilinear(vol: &Volume, c: [f64; 3]) -> Option<(f64, bool)> {
    let d = vol.dims().as_array();
    let mut base = [0usize; 3];
    let mut frac = [0f64; 3];
    for a in 0..3 {
        let fl = c[a].floor();
        let mut f = c[a] - fl;
        let mut i = fl;
        if f < SNAP {
            f = 0.0;
        } else if f > 1.0 - SNAP {
            f = 0.0;
            i += 1.0;
        }
        if i < 0.0 || i >= d[a] as f64 || (f > 0.0 && i + 1.0 >= d[a] as f64) {
            return None;
        }
        base[a] = i as usize;
        frac[a] = f;
    }
    let dims = vol.dims();
    let data = vol.data();
    let mut value = 0.0;
    let mut masked = true;
    for dz in 0..2 {
        let wz = if dz == 0 { 1.0 - frac[0] } else { frac[0] };
        if wz == 0.0 {
            continue;
        }
        for dy in 0..2 {
            let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
            if wy == 0.0 {
                continue;
            }
            for dx in 0..2 {
                let wx = if dx == 0 { 1.0 - frac[2] } else { frac[2] };
                if wx == 0.0 {
                    continue;
                }
                let i = dims.index(base[0] + dz, base[1] + dy, base[2] + dx);
                value += wz * wy * wx * data[i] as f64;
                masked &= vol.is_foreground(i);
            }
        }
    }
    Some((value, masked))
}

/// Resamples `moving` onto `grid` through `transform` with trilinear
/// interpolation. Samples outside the moving volume are 0 and unmasked.
pub fn resample_affine<R: Real>(moving: &Volume, transform: &AffineTransform3D<R>, grid: &Grid) -> Volume {
    let t = transform.cast::<f64>();
    let ms = moving.spacing();
    let d = grid.dims;
    let mut data = Vec::with_capacity(d.len());
    let mut mask = Vec::with_capacity(d.len());
    for z in 0..d.z {
        for y in 0..d.y {
            for x in 0..d.x {
                let q = t.apply(grid.point(z, y, x));
                let c = [q[0] / ms[0], q[1] / ms[1], q[2] / ms[2]];
                match trilinear(moving, c) {
                    Some((v, m)) => {
                        data.push(to_u16(v));
                        mask.push(m);
                    }
                    None => {
                        data.push(0);
                        mask.push(false);
                    }
                }
            }
        }
    }
    Volume::new(d, grid.spacing, data)
        .and_then(|v| v.with_mask(mask))
        .expect("grid-sized buffers")
}

/// Crops a registered volume to the field of view `[origin, origin + fov)`
/// and zeroes every voxel whose mask is false.
pub fn crop_and_mask(registered: &Volume, origin: [usize; 3], fov: Dims) -> Result<Volume> {
    if !fov.fits_within(origin, registered.dims()) {
        return Err(Error::Range(format!(
            "field of view {fov} at {origin:?} exceeds registered grid {}",
            registered.dims()
        )));
    }
    let mut out = registered.crop(origin, fov)?;
    let mask = out.mask().map(|m| m.to_vec()).unwrap_or_else(|| vec![true; fov.len()]);
    for (v, &m) in out.data_mut().iter_mut().zip(&mask) {
        if !m {
            *v = 0;
        }
    }
    out.with_mask(mask)
}

/// Outcome of an alignment run.
#[derive(Clone, Debug, PartialEq)]
pub struct Registration {
    pub transform: AffineTransform3D<f64>,
    pub ncc_initial: f64,
    pub ncc_final: f64,
    /// Set when the optimizer stalled with a weak correlation.
    pub low_confidence: bool,
}

/// Persisted transform record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    #[serde(rename = "A")]
    pub a: [f64; 9],
    pub t_um: [f64; 3],
    pub fixed_spacing_um: Spacing,
    pub moving_spacing_um: Spacing,
    pub ncc_final: f64,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub low_confidence: bool,
}

impl TransformRecord {
    pub fn new(reg: &Registration, fixed_spacing: Spacing, moving_spacing: Spacing) -> Self {
        let l = reg.transform.linear;
        Self {
            a: [l[0][0], l[0][1], l[0][2], l[1][0], l[1][1], l[1][2], l[2][0], l[2][1], l[2][2]],
            t_um: reg.transform.translation,
            fixed_spacing_um: fixed_spacing,
            moving_spacing_um: moving_spacing,
            ncc_final: reg.ncc_final,
            low_confidence: reg.low_confidence,
        }
    }

    pub fn transform(&self) -> AffineTransform3D<f64> {
        let a = self.a;
        AffineTransform3D {
            linear: [[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]],
            translation: self.t_um,
        }
    }
}

/// Running sums for a one-pass correlation estimate.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct CorrSums {
    n: f64,
    f: f64,
    m: f64,
    ff: f64,
    mm: f64,
    fm: f64,
}

impl CorrSums {
    #[inline]
    pub(crate) fn push(&mut self, f: f64, m: f64) {
        self.n += 1.0;
        self.f += f;
        self.m += m;
        self.ff += f * f;
        self.mm += m * m;
        self.fm += f * m;
    }

    pub(crate) fn merge(mut self, o: &CorrSums) -> Self {
        self.n += o.n;
        self.f += o.f;
        self.m += o.m;
        self.ff += o.ff;
        self.mm += o.mm;
        self.fm += o.fm;
        self
    }

    pub(crate) fn ncc(&self) -> f64 {
        if self.n < 2.0 {
            return f64::NEG_INFINITY;
        }
        let vf = self.n * self.ff - self.f * self.f;
        let vm = self.n * self.mm - self.m * self.m;
        if vf <= 0.0 || vm <= 0.0 {
            return 0.0;
        }
        ((self.n * self.fm - self.f * self.m) / (vf.sqrt() * vm.sqrt())).clamp(-1.0, 1.0)
    }
}

/// Pyramid depth so that the coarsest level keeps at least `min_dim` voxels per axis.
pub(crate) fn pyramid_depth(dims: Dims, min_dim: usize, max_levels: usize) -> usize {
    let mut k = 0;
    while k < max_levels && dims.min_axis() >> (k + 1) >= min_dim.max(2) {
        k += 1;
    }
    k
}
