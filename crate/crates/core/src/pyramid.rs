//! Local-mean 2x reduction and multi-level pyramids.

use crate::error::{invalid, Result};
use crate::scalar::div_pow2_half_even;
use crate::volume::{Dims, Volume};

/// Halves every axis by averaging 2x2x2 blocks.
///
/// Odd trailing planes are cropped, means are rounded half-to-even and the
/// mask (if any) is reduced by majority vote, ties counting as foreground.
pub fn downsample_mean2(volume: &Volume) -> Result<Volume> {
    let d = volume.dims();
    if d.min_axis() < 2 {
        return Err(invalid!("cannot halve a volume of dims {d}"));
    }
    let out = Dims::new(d.z / 2, d.y / 2, d.x / 2);
    let src = volume.data();
    let mut data = Vec::with_capacity(out.len());
    let mut mask = volume.mask().map(|_| Vec::with_capacity(out.len()));
    let plane = d.y * d.x;
    for z in 0..out.z {
        for y in 0..out.y {
            let base = d.index(2 * z, 2 * y, 0);
            let rows = [base, base + d.x, base + plane, base + plane + d.x];
            for x in 0..out.x {
                let mut sum = 0u64;
                for r in rows {
                    sum += src[r + 2 * x] as u64 + src[r + 2 * x + 1] as u64;
                }
                data.push(div_pow2_half_even(sum, 3) as u16);
                if let (Some(out_mask), Some(m)) = (mask.as_mut(), volume.mask()) {
                    let votes: usize = rows
                        .iter()
                        .map(|&r| m[r + 2 * x] as usize + m[r + 2 * x + 1] as usize)
                        .sum();
                    out_mask.push(votes >= 4);
                }
            }
        }
    }
    let s = volume.spacing();
    let mut down = Volume::new(out, [s[0] * 2.0, s[1] * 2.0, s[2] * 2.0], data)?;
    down.set_mask(mask)?;
    Ok(down)
}

/// Levels at 1x, 2x, 4x, ... up to `max_factor` (a power of two, at most 8).
pub fn build_pyramid(volume: &Volume, max_factor: usize) -> Result<Vec<Volume>> {
    if !max_factor.is_power_of_two() || max_factor > 8 {
        return Err(invalid!("max factor must be 1, 2, 4 or 8, got {max_factor}"));
    }
    if volume.dims().min_axis() < max_factor {
        return Err(invalid!(
            "dims {} too small for a {max_factor}x pyramid",
            volume.dims()
        ));
    }
    let mut levels = vec![volume.clone()];
    for _ in 0..max_factor.trailing_zeros() {
        let next = downsample_mean2(levels.last().expect("non-empty"))?;
        levels.push(next);
    }
    Ok(levels)
}

/// Applies `downsample_mean2` `log2(factor)` times.
pub fn downsample_by(volume: &Volume, factor: usize) -> Result<Volume> {
    if !factor.is_power_of_two() {
        return Err(invalid!("downsampling factor must be a power of two, got {factor}"));
    }
    let mut v = volume.clone();
    for _ in 0..factor.trailing_zeros() {
        v = downsample_mean2(&v)?;
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn naive(v: &Volume) -> Vec<u16> {
        let d = v.dims();
        let mut out = Vec::new();
        for z in 0..d.z / 2 {
            for y in 0..d.y / 2 {
                for x in 0..d.x / 2 {
                    let mut s = 0.0f64;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                s += v.get(2 * z + dz, 2 * y + dy, 2 * x + dx) as f64;
                            }
                        }
                    }
                    out.push((s / 8.0).round_ties_even() as u16);
                }
            }
        }
        out
    }

    #[test]
    fn single_block_mean() {
        let v = Volume::new(Dims::cube(2), [1.0; 3], vec![10, 20, 30, 40, 50, 60, 70, 80]).unwrap();
        let d = downsample_mean2(&v).unwrap();
        assert_eq!(d.data(), &[45]);
        assert_eq!(d.spacing(), [2.0; 3]);
    }

    #[test]
    fn constant_stays_constant() {
        let v = Volume::new(Dims::new(4, 6, 8), [1.5; 3], vec![1234; 192]).unwrap();
        let d = downsample_mean2(&v).unwrap();
        assert_eq!(d.dims(), Dims::new(2, 3, 4));
        assert!(d.data().iter().all(|&x| x == 1234));
    }

    #[test]
    fn odd_dims_are_cropped_and_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Volume::from_fn(Dims::new(3, 2, 2), [1.0; 3], |_, _, _| rng.random());
        let d = downsample_mean2(&v).unwrap();
        assert_eq!(d.dims(), Dims::cube(1));
        assert_eq!(d.data(), naive(&v).as_slice());
        for dims in [Dims::new(7, 5, 9), Dims::new(16, 16, 16), Dims::new(2, 31, 4)] {
            let v = Volume::from_fn(dims, [1.0; 3], |_, _, _| rng.random());
            assert_eq!(downsample_mean2(&v).unwrap().data(), naive(&v).as_slice());
        }
    }

    #[test]
    fn too_thin_volume_rejected() {
        let v = Volume::zeros(Dims::new(1, 4, 4), [1.0; 3]);
        assert!(downsample_mean2(&v).is_err());
    }

    #[test]
    fn mask_majority_vote() {
        let v = Volume::zeros(Dims::cube(2), [1.0; 3])
            .with_mask(vec![true, true, true, true, false, false, false, false])
            .unwrap();
        assert_eq!(downsample_mean2(&v).unwrap().mask().unwrap(), &[true]);
        let v = v.with_mask(vec![true, true, true, false, false, false, false, false]).unwrap();
        assert_eq!(downsample_mean2(&v).unwrap().mask().unwrap(), &[false]);
    }

    #[test]
    fn pyramid_shapes() {
        let v = Volume::zeros(Dims::cube(160), [1.671; 3]);
        let levels = build_pyramid(&v, 8).unwrap();
        let dims: Vec<_> = levels.iter().map(|l| l.dims().z).collect();
        assert_eq!(dims, vec![160, 80, 40, 20]);
        assert_eq!(levels[3].spacing(), [1.671 * 8.0; 3]);
        assert_eq!(build_pyramid(&v, 2).unwrap().len(), 2);
        assert!(build_pyramid(&v, 3).is_err());
        assert!(build_pyramid(&v, 16).is_err());
    }

    #[test]
    fn pyramid_means_drift_by_rounding_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let dims = Dims::new(8 * rng.random_range(1..5), 8 * rng.random_range(1..5), 8 * rng.random_range(1..5));
            let v = Volume::from_fn(dims, [1.0; 3], |_, _, _| rng.random());
            let m0 = v.mean();
            for level in build_pyramid(&v, 8).unwrap() {
                assert!((level.mean() - m0).abs() <= 0.5);
            }
        }
    }
}
