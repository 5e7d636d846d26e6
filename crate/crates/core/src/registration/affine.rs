use log::{debug, warn};
use rayon::prelude::*;

use super::{pyramid_depth, AffineTransform3D, CorrSums, Registration};
use crate::error::Result;
use crate::phantom::{blur_field, gaussian_blur};
use crate::pyramid::downsample_mean2;
use crate::scalar::to_u16;
use crate::volume::{Dims, Spacing, Volume};

#[derive(Clone, Debug)]
pub struct AffineOptions {
    pub max_levels: usize,
    /// Coarsest level keeps at least this many voxels per axis.
    pub min_coarse_dim: usize,
    /// Sub-lattice stride for the similarity on the finest level.
    pub finest_stride: usize,
    pub max_cycles: usize,
    /// Minimum NCC gain over a full cycle to keep iterating.
    pub tolerance: f64,
    /// Line-search half-width for each linear entry.
    pub linear_step: f64,
    /// Line-search half-width for translations, in voxels of the current level.
    pub translation_step: f64,
    pub golden_iterations: usize,
    /// Bound on `‖A - I‖∞`.
    pub max_deviation: f64,
    pub low_confidence_ncc: f64,
    /// Gaussian σ in voxels applied to both volumes before optimizing.
    pub smoothing_sigma: f64,
}

impl Default for AffineOptions {
    fn default() -> Self {
        Self {
            max_levels: 2,
            min_coarse_dim: 16,
            finest_stride: 2,
            max_cycles: 100,
            tolerance: 1e-5,
            linear_step: 0.01,
            translation_step: 1.0,
            golden_iterations: 10,
            max_deviation: 0.2,
            low_confidence_ncc: 0.1,
            smoothing_sigma: 1.0,
        }
    }
}

struct LevelImage {
    dims: Dims,
    spacing: Spacing,
    vals: Vec<f32>,
    mask: Option<Vec<bool>>,
}

impl LevelImage {
    fn new(v: &Volume) -> Self {
        Self {
            dims: v.dims(),
            spacing: v.spacing(),
            vals: v.data().iter().map(|&x| x as f32 / 65535.0).collect(),
            mask: v.mask().map(|m| m.to_vec()),
        }
    }
}

/// Trilinear footprint of a sample inside the moving level.
struct Footprint {
    base: usize,
    w: [f64; 3],
}

impl Footprint {
    #[inline]
    fn lerp(&self, vals: &[f32], dims: Dims) -> f64 {
        let plane = dims.y * dims.x;
        let (wz, wy, wx) = (self.w[0], self.w[1], self.w[2]);
        let row = |i: usize| vals[i] as f64 * (1.0 - wx) + vals[i + 1] as f64 * wx;
        let b = self.base;
        let p0 = row(b) * (1.0 - wy) + row(b + dims.x) * wy;
        let p1 = row(b + plane) * (1.0 - wy) + row(b + plane + dims.x) * wy;
        p0 * (1.0 - wz) + p1 * wz
    }
}

/// Similarity of the fixed level against the warped moving level.
struct Objective<'a> {
    fixed: &'a LevelImage,
    moving: &'a LevelImage,
    stride: usize,
}

impl Objective<'_> {
    /// Folds `visit(acc, fixed_value, footprint)` over every
    /// fixed sample whose warped position has a fully masked footprint.
    fn fold<A, V>(&self, t: &AffineTransform3D<f64>, visit: V) -> Vec<A>
    where
        A: Default + Send,
        V: Fn(&mut A, f64, &Footprint) + Sync,
    {
        let f = self.fixed;
        let m = self.moving;
        let fs = f.spacing;
        let ms = m.spacing;
        let md = m.dims;
        let a = t.linear;
        let step = self.stride as f64 * fs[2];
        let dc = [0, 1, 2].map(|i| a[i][2] * step / ms[i]);
        let plane = md.y * md.x;
        let zs: Vec<usize> = (0..f.dims.z).step_by(self.stride).collect();
        zs.par_iter()
            .map(|&z| {
                let mut acc = A::default();
                for y in (0..f.dims.y).step_by(self.stride) {
                    let q = t.apply([z as f64 * fs[0], y as f64 * fs[1], 0.0]);
                    let mut c = [q[0] / ms[0], q[1] / ms[1], q[2] / ms[2]];
                    let row = f.dims.index(z, y, 0);
                    for x in (0..f.dims.x).step_by(self.stride) {
                        let cc = c;
                        c = [c[0] + dc[0], c[1] + dc[1], c[2] + dc[2]];
                        if f.mask.as_ref().is_some_and(|mk| !mk[row + x]) {
                            continue;
                        }
                        let (fz, fy, fx) = (cc[0].floor(), cc[1].floor(), cc[2].floor());
                        if fz < 0.0 || fy < 0.0 || fx < 0.0 {
                            continue;
                        }
                        let (iz, iy, ix) = (fz as usize, fy as usize, fx as usize);
                        if iz + 1 >= md.z || iy + 1 >= md.y || ix + 1 >= md.x {
                            continue;
                        }
                        let base = md.index(iz, iy, ix);
                        if let Some(mk) = &m.mask {
                            let idx = [base, base + 1, base + md.x, base + md.x + 1];
                            if idx.iter().any(|&i| !mk[i] || !mk[i + plane]) {
                                continue;
                            }
                        }
                        let fp = Footprint { base, w: [cc[0] - fz, cc[1] - fy, cc[2] - fx] };
                        visit(&mut acc, f.vals[row + x] as f64, &fp);
                    }
                }
                acc
            })
            .collect()
    }

    fn sums(&self, t: &AffineTransform3D<f64>) -> CorrSums {
        let md = self.moving.dims;
        let vals = &self.moving.vals;
        self.fold(t, |acc: &mut CorrSums, f, fp| acc.push(f, fp.lerp(vals, md)))
            .iter()
            .fold(CorrSums::default(), |acc, s| acc.merge(s))
    }

    fn ncc(&self, t: &AffineTransform3D<f64>) -> f64 {
        self.sums(t).ncc()
    }
}

/// Gaussian smoothing normalized by the smoothed mask, so unmasked voxels
/// do not darken their masked neighbours.
fn masked_blur(volume: &Volume, sigma: f64) -> Volume {
    let Some(mask) = volume.mask().filter(|_| sigma > 0.0) else {
        return gaussian_blur(volume, sigma);
    };
    let d = volume.dims();
    let weight = blur_field(mask.iter().map(|&b| b as u8 as f64).collect(), d, sigma);
    let values = blur_field(
        volume.data().iter().zip(mask).map(|(&v, &b)| if b { v as f64 } else { 0.0 }).collect(),
        d,
        sigma,
    );
    let mut out = volume.clone();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        *o = if mask[i] && weight[i] > 0.0 { to_u16(values[i] / weight[i]) } else { 0 };
    }
    out
}

/// 12 parameters: `A - I` row-major, then a translation about `center`.
#[derive(Clone, Copy, Debug)]
struct Params([f64; 12]);

impl Params {
    fn from_transform(t: &AffineTransform3D<f64>, center: [f64; 3]) -> Self {
        let mut p = [0.0; 12];
        for i in 0..3 {
            for j in 0..3 {
                p[3 * i + j] = t.linear[i][j] - if i == j { 1.0 } else { 0.0 };
            }
        }
        // q = A (x - c) + c + u  <=>  t = c + u - A c
        let ac = AffineTransform3D { translation: [0.0; 3], ..*t }.apply(center);
        for i in 0..3 {
            p[9 + i] = t.translation[i] + ac[i] - center[i];
        }
        Params(p)
    }

    fn to_transform(self, center: [f64; 3]) -> AffineTransform3D<f64> {
        let p = self.0;
        let mut linear = [[0.0; 3]; 3];
        for (i, row) in linear.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = p[3 * i + j] + if i == j { 1.0 } else { 0.0 };
            }
        }
        let lin = AffineTransform3D { linear, translation: [0.0; 3] };
        let ac = lin.apply(center);
        AffineTransform3D {
            linear,
            translation: [0, 1, 2].map(|i| center[i] + p[9 + i] - ac[i]),
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_8;

/// Golden-section search for a maximum on `[lo, hi]`; returns the best probe.
fn golden_max(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, iterations: usize) -> (f64, f64) {
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    let mut best = if f1 >= f2 { (x1, f1) } else { (x2, f2) };
    for _ in 0..iterations {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
            if f1 > best.1 {
                best = (x1, f1);
            }
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
            if f2 > best.1 {
                best = (x2, f2);
            }
        }
    }
    best
}

/// Refines `init` over all 12 affine parameters, coarse to fine, by cyclic
/// coordinate descent with a golden-section line search per parameter.
/// Both volumes are first smoothed within their masks, which keeps
/// trilinear interpolation from biasing the optimum.
///
/// Candidates with `det(A) <= 0` or `‖A - I‖∞` above the configured bound
/// are rejected. The result never scores below `init` on the smoothed finest
/// level; the reported NCC values are measured on the unsmoothed volumes.
pub fn register_affine(
    fixed: &Volume,
    moving: &Volume,
    init: &AffineTransform3D<f64>,
    opts: &AffineOptions,
) -> Result<Registration> {
    let smaller = Dims::new(
        fixed.dims().z.min(moving.dims().z),
        fixed.dims().y.min(moving.dims().y),
        fixed.dims().x.min(moving.dims().x),
    );
    let depth = pyramid_depth(smaller, opts.min_coarse_dim, opts.max_levels);
    let (mut f, mut m) = (
        masked_blur(fixed, opts.smoothing_sigma),
        masked_blur(moving, opts.smoothing_sigma),
    );
    let mut fixed_levels = vec![LevelImage::new(&f)];
    let mut moving_levels = vec![LevelImage::new(&m)];
    for _ in 0..depth {
        f = downsample_mean2(&f)?;
        m = downsample_mean2(&m)?;
        fixed_levels.push(LevelImage::new(&f));
        moving_levels.push(LevelImage::new(&m));
    }

    let fd = fixed.dims();
    let fs = fixed.spacing();
    let center = [
        (fd.z as f64 - 1.0) * 0.5 * fs[0],
        (fd.y as f64 - 1.0) * 0.5 * fs[1],
        (fd.x as f64 - 1.0) * 0.5 * fs[2],
    ];
    let feasible = |p: &Params| {
        let t = p.to_transform(center);
        t.det() > 0.0 && t.deviation_from_identity() <= opts.max_deviation
    };

    let mut params = Params::from_transform(init, center);
    for level in (0..=depth).rev() {
        // Level k voxel centers sit at 2^k * i * spacing_0 + (2^k - 1)/2 * spacing_0;
        // the half-voxel offsets cancel between the two volumes to first order.
        let objective = Objective {
            fixed: &fixed_levels[level],
            moving: &moving_levels[level],
            stride: if level == 0 { opts.finest_stride.max(1) } else { 1 },
        };
        let lsp = fixed_levels[level].spacing;
        let mut best = objective.ncc(&params.to_transform(center));
        for cycle in 0..opts.max_cycles {
            let start = best;
            for j in 0..12 {
                let h = if j < 9 { opts.linear_step } else { opts.translation_step * lsp[j - 9] };
                let x0 = params.0[j];
                let (x, v) = golden_max(
                    |x| {
                        let mut p = params;
                        p.0[j] = x;
                        if feasible(&p) {
                            objective.ncc(&p.to_transform(center))
                        } else {
                            f64::NEG_INFINITY
                        }
                    },
                    x0 - h,
                    x0 + h,
                    opts.golden_iterations,
                );
                if v > best {
                    params.0[j] = x;
                    best = v;
                }
            }
            debug!("affine level {level} cycle {cycle}: ncc {best:.6}");
            if best - start < opts.tolerance {
                break;
            }
        }
    }

    let finest = Objective {
        fixed: &fixed_levels[0],
        moving: &moving_levels[0],
        stride: 1,
    };
    let candidate = params.to_transform(center);
    let keep = finest.ncc(&candidate) >= finest.ncc(init);
    let transform = if keep { candidate } else { *init };
    let (raw_fixed, raw_moving) = (LevelImage::new(fixed), LevelImage::new(moving));
    let raw = Objective {
        fixed: &raw_fixed,
        moving: &raw_moving,
        stride: 1,
    };
    let ncc_initial = raw.ncc(init);
    let ncc_final = if keep { raw.ncc(&candidate) } else { ncc_initial };
    let low_confidence = ncc_final <= ncc_initial && ncc_final < opts.low_confidence_ncc;
    if low_confidence {
        warn!("affine registration stalled at ncc {ncc_final:.4}");
    }
    Ok(Registration {
        transform,
        ncc_initial: if ncc_initial.is_finite() { ncc_initial } else { 0.0 },
        ncc_final: if ncc_final.is_finite() { ncc_final } else { 0.0 },
        low_confidence,
    })
}
