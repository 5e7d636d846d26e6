//! Slice-wise image quality metrics on `[0, 1]`-scaled intensities.

mod report;
mod spectrum;

pub use report::{evaluate_volume, format_row, mean_tv, EvalMode, MetricsReport, SliceMetrics, Summary};
pub use spectrum::{radial_power_profile, RadialProfile};

use crate::error::{invalid, Result};
use crate::scalar::{unit, Real};

/// PSNR reported for identical slices.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// A 2D row-major image.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane<R> {
    pub h: usize,
    pub w: usize,
    pub data: Vec<R>,
}

impl<R: Real> Plane<R> {
    pub fn new(h: usize, w: usize, data: Vec<R>) -> Result<Self> {
        if data.len() != h * w {
            return Err(invalid!("plane of {h}x{w} needs {} values, got {}", h * w, data.len()));
        }
        Ok(Self { h, w, data })
    }

    /// Stored intensities divided by 65535.
    pub fn from_u16(h: usize, w: usize, values: &[u16]) -> Result<Self> {
        Self::new(h, w, values.iter().map(|&v| unit(v)).collect())
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> R {
        self.data[y * self.w + x]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }
}

fn same_shape<R>(a: &Plane<R>, b: &Plane<R>) -> Result<()> {
    if (a.h, a.w) != (b.h, b.w) {
        return Err(invalid!("slice shapes differ: {}x{} vs {}x{}", a.h, a.w, b.h, b.w));
    }
    Ok(())
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr<R: Real>(pred: &Plane<R>, reference: &Plane<R>) -> Result<R> {
    same_shape(pred, reference)?;
    let n = R::from_usize_lossy(pred.data.len().max(1));
    let mse = pred
        .data
        .iter()
        .zip(&reference.data)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<R>()
        / n;
    if mse.is_zero() {
        return Ok(R::lit(PSNR_CAP_DB));
    }
    Ok((R::lit(10.0) * (R::one() / mse).log10()).min(R::lit(PSNR_CAP_DB)))
}

/// `‖pred − ref‖₂ / ‖ref‖₂`.
pub fn nrmse<R: Real>(pred: &Plane<R>, reference: &Plane<R>) -> Result<R> {
    same_shape(pred, reference)?;
    let norm = reference.data.iter().map(|&b| b * b).sum::<R>();
    if norm.is_zero() {
        return Err(invalid!("reference slice is all zero"));
    }
    let err = pred
        .data
        .iter()
        .zip(&reference.data)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<R>();
    Ok((err / norm).sqrt())
}

/// Anisotropic total variation divided by the number of forward differences.
pub fn tv<R: Real>(plane: &Plane<R>) -> Result<R> {
    let (h, w) = (plane.h, plane.w);
    if h < 2 || w < 2 {
        return Err(invalid!("total variation needs at least 2x2, got {h}x{w}"));
    }
    let mut acc = R::zero();
    for y in 0..h {
        for x in 0..w {
            let v = plane.at(y, x);
            if x + 1 < w {
                acc += (plane.at(y, x + 1) - v).abs();
            }
            if y + 1 < h {
                acc += (plane.at(y + 1, x) - v).abs();
            }
        }
    }
    let terms = h * (w - 1) + (h - 1) * w;
    Ok(acc / R::from_usize_lossy(terms))
}

/// Normalized 1D Gaussian taps of the SSIM window.
pub fn gaussian_taps<R: Real>(len: usize, sigma: f64) -> Vec<R> {
    let c = (len as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..len).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| R::lit(v / s)).collect()
}

/// Index into `[0, n)` with half-sample symmetric reflection (`d c b a | a b c d`).
#[inline]
pub(crate) fn symmetric(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Separable filtering with symmetric boundary handling.
fn filter2<R: Real>(plane: &[R], h: usize, w: usize, taps: &[R]) -> Vec<R> {
    let r = (taps.len() / 2) as isize;
    let mut rows = vec![R::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = R::zero();
            for (k, &t) in taps.iter().enumerate() {
                acc += t * plane[y * w + symmetric(x as isize + k as isize - r, w)];
            }
            rows[y * w + x] = acc;
        }
    }
    let mut out = vec![R::zero(); h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = R::zero();
            for (k, &t) in taps.iter().enumerate() {
                acc += t * rows[symmetric(y as isize + k as isize - r, h) * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM over all pixels with an 11×11 Gaussian window (σ 1.5), `L = 1`.
/// Local moments are plain window-weighted moments.
pub fn ssim<R: Real>(pred: &Plane<R>, reference: &Plane<R>) -> Result<R> {
    same_shape(pred, reference)?;
    let (h, w) = (pred.h, pred.w);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"));
    }
    let taps = gaussian_taps::<R>(SSIM_WINDOW, SSIM_SIGMA);
    let (a, b) = (&pred.data, &reference.data);
    let prod = |f: &dyn Fn(R, R) -> R| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect::<Vec<R>>();
    let mu_a = filter2(a, h, w, &taps);
    let mu_b = filter2(b, h, w, &taps);
    let aa = filter2(&prod(&|x, _| x * x), h, w, &taps);
    let bb = filter2(&prod(&|_, y| y * y), h, w, &taps);
    let ab = filter2(&prod(&|x, y| x * y), h, w, &taps);
    let c1 = R::lit(SSIM_K1 * SSIM_K1);
    let c2 = R::lit(SSIM_K2 * SSIM_K2);
    let two = R::lit(2.0);
    let mut acc = R::zero();
    for i in 0..h * w {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        acc += ((two * ma * mb + c1) * (two * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(acc / R::from_usize_lossy(h * w))
}
