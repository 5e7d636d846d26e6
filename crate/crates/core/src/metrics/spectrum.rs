use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use super::Plane;
use crate::error::{invalid, Result};
use crate::scalar::Real;

/// Power per integer-radius ring around the DC bin.
///
/// `relative[k]` is the power of ring `k` over the total power, so the
/// profile sums to at most one. `mean[k]` is the mean bin power of the ring
/// over the total power.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RadialProfile {
    pub relative: Vec<f64>,
    pub mean: Vec<f64>,
    pub counts: Vec<usize>,
    pub total_power: f64,
}

/// Signed frequency of DFT bin `k` on an `n`-point axis.
#[inline]
fn freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Ring index of bin `(ky, kx)`: Euclidean distance to DC, rounded.
#[inline]
pub(crate) fn ring_of(ky: usize, kx: usize, n: usize) -> usize {
    freq(ky, n).hypot(freq(kx, n)).round() as usize
}

/// Radially averaged power spectrum of a square slice.
///
/// The profile has `side / 2` rings; with `full_coverage` it extends to the
/// outermost corner ring so every bin is counted.
pub fn radial_power_profile<R: Real>(plane: &Plane<R>, full_coverage: bool) -> Result<RadialProfile> {
    let n = plane.h;
    if plane.w != n {
        return Err(invalid!("radial profile needs a square slice, got {}x{}", plane.h, plane.w));
    }
    if n < 8 {
        return Err(invalid!("radial profile needs a side of at least 8, got {n}"));
    }
    let mut buf: Vec<Complex<R>> = plane.data.iter().map(|&v| Complex::new(v, R::zero())).collect();
    let fft = FftPlanner::<R>::new().plan_fft_forward(n);
    for row in buf.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(R::zero(), R::zero()); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = buf[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            buf[y * n + x] = col[y];
        }
    }

    let rings = if full_coverage { ring_of(n / 2, n / 2, n) + 1 } else { n / 2 };
    let mut sums = vec![0.0f64; rings];
    let mut counts = vec![0usize; rings];
    let mut total = 0.0f64;
    for ky in 0..n {
        for kx in 0..n {
            let p = buf[ky * n + kx].norm_sqr().to_f64_lossy();
            total += p;
            let r = ring_of(ky, kx, n);
            if r < rings {
                sums[r] += p;
                counts[r] += 1;
            }
        }
    }
    let denom = if total > 0.0 { total } else { 1.0 };
    Ok(RadialProfile {
        relative: sums.iter().map(|s| s / denom).collect(),
        mean: sums.iter().zip(&counts).map(|(s, &c)| if c > 0 { s / c as f64 / denom } else { 0.0 }).collect(),
        counts,
        total_power: total,
    })
}
