//! Dense 3D volumes, intensity conditioning, masking and slice splits.

use std::ops::Range;

use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::{to_u16, Real, U16_MAX_F64};

/// Voxel counts along (z, y, x). Serialized as `[D, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct Dims {
    pub z: usize,
    pub y: usize,
    pub x: usize,
}

impl Dims {
    pub const fn new(z: usize, y: usize, x: usize) -> Self {
        Self { z, y, x }
    }

    pub const fn cube(n: usize) -> Self {
        Self::new(n, n, n)
    }

    pub const fn len(&self) -> usize {
        self.z * self.y * self.x
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.z, self.y, self.x]
    }

    #[inline]
    pub const fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.y + y) * self.x + x
    }

    pub fn scaled(&self, s: usize) -> Self {
        Self::new(self.z * s, self.y * s, self.x * s)
    }

    pub fn min_axis(&self) -> usize {
        self.z.min(self.y).min(self.x)
    }

    pub fn fits_within(&self, origin: [usize; 3], outer: Dims) -> bool {
        let o = outer.as_array();
        let s = self.as_array();
        (0..3).all(|a| origin[a].checked_add(s[a]).is_some_and(|end| end <= o[a]))
    }
}

impl From<[usize; 3]> for Dims {
    fn from(a: [usize; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl From<Dims> for [usize; 3] {
    fn from(d: Dims) -> Self {
        d.as_array()
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.z, self.y, self.x)
    }
}

/// Physical voxel size along (z, y, x) in micrometers.
pub type Spacing = [f64; 3];

/// A `u16` intensity volume in z-major C order with an optional foreground mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    spacing: Spacing,
    data: Vec<u16>,
    mask: Option<Vec<bool>>,
}

impl Volume {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<u16>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(invalid!(
                "data length {} does not match dims {dims}",
                data.len()
            ));
        }
        check_spacing(spacing)?;
        Ok(Self {
            dims,
            spacing,
            data,
            mask: None,
        })
    }

    pub fn zeros(dims: Dims, spacing: Spacing) -> Self {
        Self::new(dims, spacing, vec![0; dims.len()]).expect("valid zero volume")
    }

    pub fn from_fn(dims: Dims, spacing: Spacing, mut f: impl FnMut(usize, usize, usize) -> u16) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for z in 0..dims.z {
            for y in 0..dims.y {
                for x in 0..dims.x {
                    data.push(f(z, y, x));
                }
            }
        }
        Self::new(dims, spacing, data).expect("valid generated volume")
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.dims.len() {
            return Err(invalid!(
                "mask length {} does not match dims {}",
                mask.len(),
                self.dims
            ));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn without_mask(mut self) -> Self {
        self.mask = None;
        self
    }

    pub fn set_mask(&mut self, mask: Option<Vec<bool>>) -> Result<()> {
        if let Some(m) = &mask {
            if m.len() != self.dims.len() {
                return Err(invalid!("mask length {} does not match dims {}", m.len(), self.dims));
            }
        }
        self.mask = mask;
        Ok(())
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn set_spacing(&mut self, spacing: Spacing) -> Result<()> {
        check_spacing(spacing)?;
        self.spacing = spacing;
        Ok(())
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u16] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u16> {
        self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn mask_mut(&mut self) -> Option<&mut [bool]> {
        self.mask.as_deref_mut()
    }

    /// Foreground flag at a flat index; volumes without a mask are all foreground.
    #[inline]
    pub fn is_foreground(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> u16 {
        self.data[self.dims.index(z, y, x)]
    }

    pub fn slice(&self, z: usize) -> &[u16] {
        let n = self.dims.y * self.dims.x;
        &self.data[z * n..(z + 1) * n]
    }

    pub fn slice_mask(&self, z: usize) -> Option<&[bool]> {
        let n = self.dims.y * self.dims.x;
        self.mask.as_ref().map(|m| &m[z * n..(z + 1) * n])
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as u64).sum::<u64>() as f64 / self.data.len() as f64
    }

    /// Copies the box `[origin, origin + shape)`; mask and spacing carry over.
    pub fn crop(&self, origin: [usize; 3], shape: Dims) -> Result<Volume> {
        if !shape.fits_within(origin, self.dims) {
            return Err(Error::Range(format!(
                "crop {shape} at {origin:?} exceeds volume {}",
                self.dims
            )));
        }
        let mut data = Vec::with_capacity(shape.len());
        let mut mask = self.mask.as_ref().map(|_| Vec::with_capacity(shape.len()));
        for z in 0..shape.z {
            for y in 0..shape.y {
                let start = self.dims.index(origin[0] + z, origin[1] + y, origin[2]);
                data.extend_from_slice(&self.data[start..start + shape.x]);
                if let (Some(out), Some(m)) = (mask.as_mut(), self.mask.as_ref()) {
                    out.extend_from_slice(&m[start..start + shape.x]);
                }
            }
        }
        Ok(Volume {
            dims: shape,
            spacing: self.spacing,
            data,
            mask,
        })
    }

    /// Intensities rescaled to `[0, 1]`.
    pub fn to_field<R: Real>(&self) -> Field3<R> {
        Field3 {
            dims: self.dims,
            data: self.data.iter().map(|&v| crate::scalar::unit(v)).collect(),
        }
    }
}

fn check_spacing(spacing: Spacing) -> Result<()> {
    if spacing.iter().all(|s| s.is_finite() && *s > 0.0) {
        Ok(())
    } else {
        Err(invalid!("spacing must be strictly positive, got {spacing:?}"))
    }
}

/// Real-valued scratch grid used by filters, samplers and the ridge model.
#[derive(Clone, Debug, PartialEq)]
pub struct Field3<R> {
    pub dims: Dims,
    pub data: Vec<R>,
}

impl<R: Real> Field3<R> {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![R::zero(); dims.len()],
        }
    }

    pub fn new(dims: Dims, data: Vec<R>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(invalid!("field length {} does not match dims {dims}", data.len()));
        }
        Ok(Self { dims, data })
    }

    #[inline]
    pub fn get(&self, z: usize, y: usize, x: usize) -> R {
        self.data[self.dims.index(z, y, x)]
    }

    /// Converts `[0, 1]` values back to stored intensities (clamped, half-even).
    pub fn to_volume(&self, spacing: Spacing) -> Result<Volume> {
        Volume::new(
            self.dims,
            spacing,
            self.data.iter().map(|&v| crate::scalar::from_unit(v)).collect(),
        )
    }
}

/// A volume of arbitrary scalar intensities prior to normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RawVolume<T> {
    pub dims: Dims,
    pub spacing: Spacing,
    pub data: Vec<T>,
}

impl<T> RawVolume<T> {
    pub fn new(dims: Dims, spacing: Spacing, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(invalid!("data length {} does not match dims {dims}", data.len()));
        }
        check_spacing(spacing)?;
        Ok(Self { dims, spacing, data })
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(values: &mut [f64], p: f64) -> f64 {
    assert!(!values.is_empty());
    let n = values.len();
    let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let k = pos.floor() as usize;
    let frac = pos - k as f64;
    let (_, lo, upper) = values.select_nth_unstable_by(k, f64::total_cmp);
    let lo = *lo;
    if frac == 0.0 || upper.is_empty() {
        return lo;
    }
    let hi = upper.iter().copied().fold(f64::INFINITY, f64::min);
    lo + frac * (hi - lo)
}

/// Percentile clipping followed by a linear map onto `[0, 65535]`.
///
/// A degenerate clip range (constant input) yields an all-zero volume.
pub fn clip_normalize<T: Copy + ToPrimitive>(raw: &RawVolume<T>, p_low: f64, p_high: f64) -> Result<Volume> {
    if raw.data.is_empty() {
        return Err(invalid!("cannot normalize an empty volume"));
    }
    if !(0.0 <= p_low && p_low < p_high && p_high <= 100.0) {
        return Err(invalid!("percentiles must satisfy 0 <= low < high <= 100, got ({p_low}, {p_high})"));
    }
    let values: Vec<f64> = raw
        .data
        .iter()
        .map(|v| v.to_f64().unwrap_or(f64::NAN))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(invalid!("raw volume contains non-finite values"));
    }
    let mut scratch = values.clone();
    let lo = quantile(&mut scratch, p_low);
    let hi = quantile(&mut scratch, p_high);
    let data = if hi > lo {
        let gain = U16_MAX_F64 / (hi - lo);
        values.iter().map(|&v| to_u16((v.clamp(lo, hi) - lo) * gain)).collect()
    } else {
        vec![0; values.len()]
    };
    Volume::new(raw.dims, raw.spacing, data)
}

/// Attaches `mask[v] = data[v] >= threshold`.
pub fn threshold_mask(volume: &Volume, threshold: u16) -> Volume {
    let mask = volume.data.iter().map(|&v| v >= threshold).collect();
    let mut out = volume.clone();
    out.mask = Some(mask);
    out
}

/// Train/test partition of the axial (z) slices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceSplit {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl SliceSplit {
    pub fn depth(&self) -> usize {
        self.train.len() + self.test.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitOptions {
    pub test_fraction: f64,
    /// Take the test slab from the largest z indices.
    pub test_at_end: bool,
    /// Round the test slab to a whole number of chunks of this depth.
    pub align_to: Option<usize>,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            test_fraction: 0.1,
            test_at_end: true,
            align_to: None,
        }
    }
}

pub fn split_slices(volume: &Volume, opts: &SplitOptions) -> Result<SliceSplit> {
    split_depth(volume.dims().z, opts)
}

pub fn split_depth(depth: usize, opts: &SplitOptions) -> Result<SliceSplit> {
    if depth < 2 {
        return Err(invalid!("cannot split a volume of depth {depth}"));
    }
    let f = opts.test_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(invalid!("test fraction must lie in (0, 1), got {f}"));
    }
    let raw = (depth as f64 * f).round() as usize;
    let mut test_len = raw.clamp(1, depth - 1);
    if let Some(chunk) = opts.align_to.filter(|&c| c > 0) {
        let aligned = (raw as f64 / chunk as f64).round() as usize * chunk;
        if aligned > 0 && aligned < depth {
            test_len = aligned;
        }
    }
    let split = if opts.test_at_end {
        SliceSplit {
            train: 0..depth - test_len,
            test: depth - test_len..depth,
        }
    } else {
        SliceSplit {
            train: test_len..depth,
            test: 0..test_len,
        }
    };
    Ok(split)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    const ISO: Spacing = [1.0, 1.0, 1.0];

    fn sorted_quantile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let pos = p / 100.0 * (v.len() - 1) as f64;
        let k = pos.floor() as usize;
        if k + 1 >= v.len() {
            return v[k];
        }
        v[k] + (pos - k as f64) * (v[k + 1] - v[k])
    }

    #[test]
    fn linear_spread_maps_to_full_range() {
        let raw = RawVolume::new(Dims::new(1, 1, 1001), ISO, (0..=1000).map(|v| v as f64).collect()).unwrap();
        let out = clip_normalize(&raw, 0.0, 100.0).unwrap();
        assert_eq!(out.data()[0], 0);
        assert_eq!(out.data()[1000], 65535);
        assert_eq!(out.data()[500], 32768);
    }

    #[test]
    fn constant_volume_normalizes_to_zero() {
        let raw = RawVolume::new(Dims::cube(3), ISO, vec![17u16; 27]).unwrap();
        let out = clip_normalize(&raw, 0.1, 99.9).unwrap();
        assert!(out.data().iter().all(|&v| v == 0));
    }

    #[test]
    fn empty_volume_rejected() {
        let raw = RawVolume::<f32>::new(Dims::new(0, 4, 4), ISO, vec![]).unwrap();
        assert!(matches!(clip_normalize(&raw, 0.0, 100.0), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn outlier_is_clamped_before_mapping() {
        let mut values: Vec<f64> = (0..1000).map(|i| (i as f64) * 100.0 / 999.0).collect();
        values.push(1e6);
        let raw = RawVolume::new(Dims::new(1, 1, values.len()), ISO, values.clone()).unwrap();
        let out = clip_normalize(&raw, 0.1, 99.9).unwrap();

        let lo = sorted_quantile(&values, 0.1);
        let hi = sorted_quantile(&values, 99.9);
        assert!(hi < 1e6);
        for (v, &got) in values.iter().zip(out.data()) {
            let expect = ((v.clamp(lo, hi) - lo) / (hi - lo) * 65535.0).round_ties_even() as u16;
            assert_eq!(got, expect);
        }
        assert_eq!(*out.data().last().unwrap(), 65535);
    }

    #[test]
    fn threshold_examples() {
        let v = Volume::new(Dims::cube(2), ISO, vec![0, 10, 20, 30, 40, 50, 60, 70]).unwrap();
        let m = threshold_mask(&v, 35);
        assert_eq!(m.mask().unwrap(), &[false, false, false, false, true, true, true, true]);
        assert_eq!(m.data(), v.data());
        assert!(threshold_mask(&v, 0).mask().unwrap().iter().all(|&b| b));
        let zeros = Volume::zeros(Dims::cube(2), ISO);
        assert!(threshold_mask(&zeros, 1).mask().unwrap().iter().all(|&b| !b));
    }

    #[test]
    fn split_examples() {
        let opts = SplitOptions::default();
        assert_eq!(split_depth(4960, &opts).unwrap(), SliceSplit { train: 0..4464, test: 4464..4960 });
        assert_eq!(split_depth(10, &opts).unwrap(), SliceSplit { train: 0..9, test: 9..10 });
        assert_eq!(split_depth(1000, &opts).unwrap(), SliceSplit { train: 0..900, test: 900..1000 });
        assert!(split_depth(1, &opts).is_err());
    }

    #[test]
    fn chunk_aligned_split_reproduces_dataset_table() {
        // HR 5440 slices chunked at 160 -> 4960 / 480; registered 1360 at 40 -> 1240 / 120.
        let hr = SplitOptions { align_to: Some(160), ..Default::default() };
        let s = split_depth(5440, &hr).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (4960, 480));
        let reg = SplitOptions { align_to: Some(40), ..Default::default() };
        let s = split_depth(1360, &reg).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (1240, 120));
    }

    #[test]
    fn split_from_start() {
        let opts = SplitOptions { test_at_end: false, ..Default::default() };
        assert_eq!(split_depth(10, &opts).unwrap(), SliceSplit { train: 1..10, test: 0..1 });
    }

    #[test]
    fn crop_copies_box() {
        let v = Volume::from_fn(Dims::new(3, 4, 5), ISO, |z, y, x| (z * 100 + y * 10 + x) as u16);
        let c = v.crop([1, 2, 3], Dims::new(2, 2, 2)).unwrap();
        assert_eq!(c.data(), &[123, 124, 133, 134, 223, 224, 233, 234]);
        assert!(v.crop([2, 0, 0], Dims::new(2, 1, 1)).is_err());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent_on_full_range(mut data in proptest::collection::vec(any::<u16>(), 2..200)) {
            data[0] = 0;
            data[1] = 65535;
            let raw = RawVolume::new(Dims::new(1, 1, data.len()), ISO, data.clone()).unwrap();
            let once = clip_normalize(&raw, 0.0, 100.0).unwrap();
            prop_assert_eq!(once.data(), &data[..]);
            let again = RawVolume::new(once.dims(), ISO, once.data().to_vec()).unwrap();
            prop_assert_eq!(clip_normalize(&again, 0.0, 100.0).unwrap(), once);
        }

        #[test]
        fn normalize_spans_full_range(data in proptest::collection::vec(-1e4f64..1e4, 2..300)) {
            let raw = RawVolume::new(Dims::new(1, 1, data.len()), ISO, data).unwrap();
            let out = clip_normalize(&raw, 1.0, 99.0).unwrap();
            let min = *out.data().iter().min().unwrap();
            let max = *out.data().iter().max().unwrap();
            prop_assert!((min, max) == (0, 65535) || (min, max) == (0, 0));
        }

        #[test]
        fn threshold_is_monotone(data in proptest::collection::vec(any::<u16>(), 8), t in any::<u16>(), dt in 0u16..1000) {
            let v = Volume::new(Dims::new(2, 2, 2), ISO, data).unwrap();
            let a = threshold_mask(&v, t);
            let b = threshold_mask(&v, t.saturating_add(dt));
            for (x, y) in a.mask().unwrap().iter().zip(b.mask().unwrap()) {
                prop_assert!(!*y || *x);
            }
        }

        #[test]
        fn split_partitions_depth(depth in 2usize..20_000, f in 0.001f64..0.999, end in any::<bool>(), align in proptest::option::of(1usize..300)) {
            let opts = SplitOptions { test_fraction: f, test_at_end: end, align_to: align };
            let s = split_depth(depth, &opts).unwrap();
            prop_assert!(!s.test.is_empty() && !s.train.is_empty());
            prop_assert_eq!(s.depth(), depth);
            let (first, second) = if end { (&s.train, &s.test) } else { (&s.test, &s.train) };
            prop_assert_eq!(first.start, 0);
            prop_assert_eq!(first.end, second.start);
            prop_assert_eq!(second.end, depth);
        }
    }
}
