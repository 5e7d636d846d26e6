use log::debug;

use super::{pyramid_depth, AffineTransform3D, CorrSums, Registration};
use crate::error::{Error, Result};
use crate::pyramid::downsample_mean2;
use crate::volume::{Dims, Volume};

#[derive(Clone, Debug)]
pub struct TranslationOptions {
    /// Largest shift searched, in full-resolution voxels.
    pub search_radius: usize,
    /// The coarsest level keeps at least this many voxels per axis.
    pub min_coarse_dim: usize,
    pub max_levels: usize,
}

impl Default for TranslationOptions {
    fn default() -> Self {
        Self {
            search_radius: 8,
            min_coarse_dim: 32,
            max_levels: 3,
        }
    }
}

struct Level {
    dims: Dims,
    vals: Vec<f32>,
    mask: Option<Vec<bool>>,
}

impl Level {
    fn new(v: &Volume) -> Self {
        Self {
            dims: v.dims(),
            vals: v.data().iter().map(|&x| x as f32 / 65535.0).collect(),
            mask: v.mask().map(|m| m.to_vec()),
        }
    }

    #[inline]
    fn fg(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }
}

/// Correlation of `fixed[i]` against `moving[i + shift]` over the overlap.
fn shifted_sums(fixed: &Level, moving: &Level, shift: [i64; 3]) -> CorrSums {
    let fd = fixed.dims.as_array();
    let md = moving.dims.as_array();
    let range = |a: usize| {
        let lo = (-shift[a]).max(0);
        let hi = (fd[a] as i64).min(md[a] as i64 - shift[a]);
        (lo, hi)
    };
    let (rz, ry, rx) = (range(0), range(1), range(2));
    let mut sums = CorrSums::default();
    if rz.0 >= rz.1 || ry.0 >= ry.1 || rx.0 >= rx.1 {
        return sums;
    }
    for z in rz.0..rz.1 {
        for y in ry.0..ry.1 {
            let fi = fixed.dims.index(z as usize, y as usize, rx.0 as usize);
            let mi = moving.dims.index((z + shift[0]) as usize, (y + shift[1]) as usize, (rx.0 + shift[2]) as usize);
            for k in 0..(rx.1 - rx.0) as usize {
                if fixed.fg(fi + k) && moving.fg(mi + k) {
                    sums.push(fixed.vals[fi + k] as f64, moving.vals[mi + k] as f64);
                }
            }
        }
    }
    sums
}

fn score(fixed: &Level, moving: &Level, shift: [i64; 3]) -> f64 {
    shifted_sums(fixed, moving, shift).ncc()
}

fn best_in_box(fixed: &Level, moving: &Level, center: [i64; 3], radius: i64) -> ([i64; 3], f64) {
    let mut best = (center, f64::NEG_INFINITY);
    for dz in -radius..=radius {
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                let s = [center[0] + dz, center[1] + dy, center[2] + dx];
                let v = score(fixed, moving, s);
                if v > best.1 {
                    best = (s, v);
                }
            }
        }
    }
    best
}

/// Vertex of the parabola through `(-1, lo)`, `(0, mid)`, `(1, hi)`, clamped to ±0.5.
fn parabolic_offset(lo: f64, mid: f64, hi: f64) -> f64 {
    let denom = lo - 2.0 * mid + hi;
    if !(lo.is_finite() && hi.is_finite()) || denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (lo - hi) / denom).clamp(-0.5, 0.5)
}

/// Translation-only alignment: exhaustive integer search on the coarsest
/// pyramid level, ±1 voxel refinement per finer level, then a per-axis
/// parabolic fit for the sub-voxel part.
///
/// Both volumes are assumed to share the voxel size; the returned
/// translation is expressed in the moving volume's micrometers.
pub fn register_translation(fixed: &Volume, moving: &Volume, opts: &TranslationOptions) -> Result<Registration> {
    let smaller = Dims::new(
        fixed.dims().z.min(moving.dims().z),
        fixed.dims().y.min(moving.dims().y),
        fixed.dims().x.min(moving.dims().x),
    );
    let depth = pyramid_depth(smaller, opts.min_coarse_dim, opts.max_levels);
    let mut fixed_levels = vec![Level::new(fixed)];
    let mut moving_levels = vec![Level::new(moving)];
    let (mut f, mut m) = (fixed.clone(), moving.clone());
    for _ in 0..depth {
        f = downsample_mean2(&f)?;
        m = downsample_mean2(&m)?;
        fixed_levels.push(Level::new(&f));
        moving_levels.push(Level::new(&m));
    }

    let coarse_radius = (opts.search_radius as i64 + (1 << depth) - 1) >> depth;
    let (mut shift, mut best) = best_in_box(&fixed_levels[depth], &moving_levels[depth], [0; 3], coarse_radius);
    debug!("translation level {depth}: shift {shift:?} ncc {best:.5}");
    for level in (0..depth).rev() {
        let center = shift.map(|s| 2 * s);
        (shift, best) = best_in_box(&fixed_levels[level], &moving_levels[level], center, 1);
        debug!("translation level {level}: shift {shift:?} ncc {best:.5}");
    }
    if !best.is_finite() {
        return Err(Error::Registration(
            "no overlapping masked voxels for any candidate shift".into(),
        ));
    }

    let (fl, ml) = (&fixed_levels[0], &moving_levels[0]);
    let mut sub = [0.0; 3];
    for (a, s) in sub.iter_mut().enumerate() {
        let mut lo = shift;
        lo[a] -= 1;
        let mut hi = shift;
        hi[a] += 1;
        *s = parabolic_offset(score(fl, ml, lo), best, score(fl, ml, hi));
    }
    let sp = moving.spacing();
    let t = [0, 1, 2].map(|a| (shift[a] as f64 + sub[a]) * sp[a]);
    let initial = score(fl, ml, [0; 3]);
    Ok(Registration {
        transform: AffineTransform3D::from_translation(t),
        ncc_initial: if initial.is_finite() { initial } else { 0.0 },
        ncc_final: best,
        low_confidence: best < 0.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::{resample_affine, Grid};

    fn smooth_blob(dims: Dims) -> Volume {
        Volume::from_fn(dims, [1.0; 3], |z, y, x| {
            let (z, y, x) = (z as f64, y as f64, x as f64);
            let v = (z * 0.31).sin() * (y * 0.23 + 0.4).cos() + (x * 0.27 + z * 0.05).sin() * 0.8 + (y * 0.11).sin() * 0.5;
            (32768.0 + 12000.0 * v) as u16
        })
    }

    fn shifted(v: &Volume, d: [f64; 3]) -> Volume {
        // moving(q) = fixed(q - d)
        resample_affine(v, &AffineTransform3D::from_translation(d.map(|x| -x)), &Grid::of(v))
    }

    #[test]
    fn zero_shift_for_identical_volumes() {
        let v = smooth_blob(Dims::new(40, 36, 32));
        let r = register_translation(&v, &v, &TranslationOptions::default()).unwrap();
        assert!(r.transform.translation.iter().all(|t| t.abs() < 1e-9));
        assert!((r.ncc_final - 1.0).abs() < 1e-9);
    }

    #[test]
    fn integer_shift_recovered_and_oracle_agrees() {
        let v = smooth_blob(Dims::new(48, 48, 48));
        let d = [3.0, -2.0, 5.0];
        let m = shifted(&v, d);
        let r = register_translation(&v, &m, &TranslationOptions::default()).unwrap();
        for a in 0..3 {
            assert!((r.transform.translation[a] - d[a]).abs() < 0.1, "{:?}", r.transform.translation);
        }
        // Exhaustive integer oracle at full resolution.
        let (fl, ml) = (Level::new(&v), Level::new(&m));
        let (best, _) = best_in_box(&fl, &ml, [0; 3], 6);
        assert_eq!(best, [3, -2, 5]);
    }

    #[test]
    fn sub_voxel_shift_recovered() {
        let v = smooth_blob(Dims::new(40, 40, 40));
        let d = [0.0, 0.0, 0.5];
        let m = shifted(&v, d);
        let r = register_translation(&v, &m, &TranslationOptions::default()).unwrap();
        // Dense grid oracle over the x offset.
        let fixed_level = Level::new(&v);
        let mut oracle = (0.0, f64::NEG_INFINITY);
        for k in -20..=40 {
            let x = k as f64 * 0.05;
            let warped = resample_affine(&m, &AffineTransform3D::from_translation([0.0, 0.0, x]), &Grid::of(&v));
            let s = shifted_sums(&fixed_level, &Level::new(&warped), [0; 3]).ncc();
            if s > oracle.1 {
                oracle = (x, s);
            }
        }
        assert!((oracle.0 - 0.5).abs() <= 0.1, "oracle optimum {}", oracle.0);
        assert!((r.transform.translation[2] - 0.5).abs() < 0.25, "{:?}", r.transform.translation);
        assert!(r.transform.translation[0].abs() < 0.25 && r.transform.translation[1].abs() < 0.25);
    }

    #[test]
    fn equivariant_under_integer_shifts() {
        let v = smooth_blob(Dims::new(40, 40, 40));
        let base = shifted(&v, [1.0, 0.0, -1.0]);
        let r0 = register_translation(&v, &base, &TranslationOptions::default()).unwrap();
        let more = shifted(&v, [3.0, -2.0, 1.0]);
        let r1 = register_translation(&v, &more, &TranslationOptions::default()).unwrap();
        let delta = [2.0, -2.0, 2.0];
        for a in 0..3 {
            let diff = r1.transform.translation[a] - r0.transform.translation[a];
            assert!((diff - delta[a]).abs() < 0.1);
        }
    }

    #[test]
    fn disjoint_masks_fail() {
        let v = smooth_blob(Dims::cube(8)).with_mask(vec![false; 512]).unwrap();
        let err = register_translation(&v, &v, &TranslationOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Registration(_)));
    }

    #[test]
    fn parabola_vertex() {
        assert_eq!(parabolic_offset(0.5, 1.0, 0.5), 0.0);
        assert!((parabolic_offset(0.9, 1.0, 0.9 - 0.0) - 0.0).abs() < 1e-12);
        // y = -(x - 0.25)^2
        let f = |x: f64| -(x - 0.25) * (x - 0.25);
        assert!((parabolic_offset(f(-1.0), f(0.0), f(1.0)) - 0.25).abs() < 1e-12);
    }
}
