//! Slice-wise histogram specification over masked voxels.
//!
//! Every slice of the registered LR volume is remapped so its empirical CDF
//! follows the matching slice of the downsampled HR volume. Histograms use
//! one bin per `u16` value and the inverse CDF is evaluated with exact
//! integer arithmetic, so the map is reproducible bit for bit.

use log::warn;
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::volume::Volume;

const BINS: usize = 1 << 16;

/// Exact histogram and cumulative counts of the masked voxels of a slice.
#[derive(Clone, Debug)]
pub struct SliceCdf {
    hist: Vec<u64>,
    cumulative: Vec<u64>,
    total: u64,
}

impl SliceCdf {
    pub fn from_masked(values: &[u16], mask: Option<&[bool]>) -> Result<Self> {
        let mut hist = vec![0u64; BINS];
        match mask {
            Some(m) => {
                if m.len() != values.len() {
                    return Err(invalid!("mask length {} does not match slice length {}", m.len(), values.len()));
                }
                for (&v, _) in values.iter().zip(m).filter(|(_, &k)| k) {
                    hist[v as usize] += 1;
                }
            }
            None => values.iter().for_each(|&v| hist[v as usize] += 1),
        }
        let mut cumulative = Vec::with_capacity(BINS);
        let mut acc = 0u64;
        for &h in &hist {
            acc += h;
            cumulative.push(acc);
        }
        if acc == 0 {
            return Err(invalid!("slice has no masked voxels"));
        }
        Ok(Self { hist, cumulative, total: acc })
    }

    pub fn histogram(&self) -> &[u64] {
        &self.hist
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Fraction of masked voxels with value `<= v`.
    pub fn cdf(&self, v: u16) -> f64 {
        self.cumulative[v as usize] as f64 / self.total as f64
    }

    /// `out[v] = min { w : CDF_ref(w) >= CDF_src(v) }` for every `u16` value.
    ///
    /// The comparison is done on cross-multiplied integer counts.
    pub fn value_map(&self, reference: &SliceCdf) -> Vec<u16> {
        let (ns, nr) = (self.total as u128, reference.total as u128);
        let mut lut = vec![0u16; BINS];
        let mut w = 0usize;
        for (v, out) in lut.iter_mut().enumerate() {
            let target = self.cumulative[v] as u128 * nr;
            while w + 1 < BINS && (reference.cumulative[w] as u128) * ns < target {
                w += 1;
            }
            *out = w as u16;
        }
        lut
    }
}

/// Matches the masked voxels of `src` to the distribution of `reference`.
/// Unmasked source voxels come out as 0.
pub fn cdf_match_slice(
    src: &[u16],
    src_mask: Option<&[bool]>,
    reference: &[u16],
    ref_mask: Option<&[bool]>,
) -> Result<Vec<u16>> {
    let s = SliceCdf::from_masked(src, src_mask)?;
    let r = SliceCdf::from_masked(reference, ref_mask)?;
    let lut = s.value_map(&r);
    Ok(src
        .iter()
        .enumerate()
        .map(|(i, &v)| if src_mask.is_none_or(|m| m[i]) { lut[v as usize] } else { 0 })
        .collect())
}

/// Applies [`cdf_match_slice`] to every z-slice over the intersection of
/// both volumes' masks. Slices whose intersection is empty pass through.
pub fn match_volume(reg_lr: &Volume, down_hr: &Volume) -> Result<Volume> {
    if reg_lr.dims() != down_hr.dims() {
        return Err(invalid!(
            "registered LR is {} but the HR reference is {}",
            reg_lr.dims(),
            down_hr.dims()
        ));
    }
    let d = reg_lr.dims();
    let plane = d.y * d.x;
    let mask: Vec<bool> = (0..d.len())
        .map(|i| reg_lr.is_foreground(i) && down_hr.is_foreground(i))
        .collect();
    let mut out = reg_lr.clone();
    out.data_mut()
        .par_chunks_mut(plane.max(1))
        .enumerate()
        .for_each(|(z, dst)| {
            let m = &mask[z * plane..(z + 1) * plane];
            if !m.iter().any(|&b| b) {
                warn!("slice {z} has an empty joint mask; passing it through");
                return;
            }
            let matched = cdf_match_slice(reg_lr.slice(z), Some(m), down_hr.slice(z), Some(m))
                .expect("non-empty joint mask");
            dst.copy_from_slice(&matched);
        });
    out.set_mask(Some(mask))?;
    Ok(out)
}
