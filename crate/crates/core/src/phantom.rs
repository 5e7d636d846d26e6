//! Seeded synthetic samples and the two LR degradation models.
//!
//! Random structure comes from sums of seeded cosines so generation is
//! bit-reproducible on every platform.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrics::{gaussian_taps, symmetric};
use crate::pyramid::downsample_by;
use crate::scalar::{to_u16, U16_MAX_F64};
use crate::volume::{clip_normalize, Dims, RawVolume, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhantomKind {
    /// Wood-like: z-aligned canals through a bright cylinder.
    Tubes,
    /// Bone-like: a smoothed, thresholded random field filling the box.
    Trabecular,
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tubes" => Ok(Self::Tubes),
            "trabecular" => Ok(Self::Trabecular),
            other => Err(invalid!("unknown phantom kind {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TubesParams {
    /// Canals per 1000 voxels of sample cross-section.
    pub canal_density: f64,
    /// Canal radius range in voxels, inclusive.
    pub radius: [f64; 2],
    /// Peak xy excursion of a canal axis, in voxels.
    pub drift_amplitude: f64,
    /// Period of the axis drift along z, in voxels.
    pub drift_period: f64,
}

impl Default for TubesParams {
    fn default() -> Self {
        Self {
            canal_density: 2.0,
            radius: [1.0, 3.0],
            drift_amplitude: 3.0,
            drift_period: 64.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrabecularParams {
    /// Number of random plane waves in the field.
    pub cosines: usize,
    /// Foreground where the field exceeds this many standard deviations.
    pub threshold: f64,
    /// The box filter has the variance of a Gaussian of this σ (voxels).
    pub smoothing: f64,
    /// Wavelength range of the plane waves, in voxels.
    pub wavelength: [f64; 2],
}

impl Default for TrabecularParams {
    fn default() -> Self {
        Self {
            cosines: 48,
            threshold: 0.5,
            smoothing: 1.0,
            wavelength: [10.0, 24.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub dims: Dims,
    pub seed: u64,
    pub spacing_um: f64,
    /// Dark phase level (canal lumen, marrow) before normalization.
    pub background: f64,
    /// Bright phase level (matrix, trabeculae) before normalization.
    pub foreground: f64,
    /// Amplitude of the fine texture added inside the sample.
    pub texture: f64,
    /// Wavelength range of the texture, in voxels.
    pub texture_wavelength: [f64; 2],
    pub tubes: TubesParams,
    pub trabecular: TrabecularParams,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            kind: PhantomKind::Tubes,
            dims: Dims::cube(128),
            seed: 0,
            spacing_um: 1.0,
            background: 0.25,
            foreground: 0.75,
            texture: 0.05,
            texture_wavelength: [3.0, 8.0],
            tubes: TubesParams::default(),
            trabecular: TrabecularParams::default(),
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let d = self.dims.as_array();
        if d.iter().any(|&n| n == 0 || n % 8 != 0) {
            return Err(invalid!("phantom dims must be positive multiples of 8, got {}", self.dims));
        }
        let [r0, r1] = self.tubes.radius;
        if !(r0 >= 1.0 && r1 >= r0) {
            return Err(invalid!("canal radii must satisfy 1 <= min <= max, got {r0}..{r1}"));
        }
        if self.spacing_um <= 0.0 {
            return Err(invalid!("spacing must be positive"));
        }
        Ok(())
    }
}

/// A plane wave `amp * cos(k·p + phase)`.
#[derive(Clone, Copy, Debug)]
struct Wave {
    k: [f64; 3],
    phase: f64,
    amp: f64,
}

impl Wave {
    #[inline]
    fn eval(&self, p: [f64; 3]) -> f64 {
        self.amp * (self.k[0] * p[0] + self.k[1] * p[1] + self.k[2] * p[2] + self.phase).cos()
    }
}

fn random_waves(rng: &mut ChaCha8Rng, count: usize, wavelength: [f64; 2]) -> Vec<Wave> {
    let amp = (2.0 / count.max(1) as f64).sqrt();
    (0..count)
        .map(|_| {
            // Uniform direction on the sphere.
            let u: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..2.0 * PI);
            let s = (1.0 - u * u).sqrt();
            let dir = [u, s * phi.sin(), s * phi.cos()];
            let lambda = rng.random_range(wavelength[0]..=wavelength[1]);
            let k = dir.map(|c| 2.0 * PI * c / lambda);
            Wave { k, phase: rng.random_range(0.0..2.0 * PI), amp }
        })
        .collect()
}

/// Field with roughly unit variance, evaluated on the full grid.
fn wave_field(dims: Dims, waves: &[Wave]) -> Vec<f64> {
    let plane = dims.y * dims.x;
    let mut out = vec![0.0; dims.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(z, dst)| {
        for y in 0..dims.y {
            for x in 0..dims.x {
                let p = [z as f64, y as f64, x as f64];
                dst[y * dims.x + x] = waves.iter().map(|w| w.eval(p)).sum();
            }
        }
    });
    out
}

struct Canal {
    center: [f64; 2],
    radius: f64,
    phase: [f64; 2],
}

impl Canal {
    fn axis_at(&self, z: f64, p: &TubesParams) -> [f64; 2] {
        let t = 2.0 * PI * z / p.drift_period;
        [
            self.center[0] + p.drift_amplitude * (t + self.phase[0]).sin(),
            self.center[1] + p.drift_amplitude * (t + self.phase[1]).cos(),
        ]
    }
}

const SUBSAMPLES: [f64; 2] = [-0.25, 0.25];

/// Ground-truth geometry of a tubes phantom: the fraction of each voxel's
/// 2×2 xy supersamples that fall inside a canal.
pub fn tubes_lumen_fraction(spec: &PhantomSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(tubes_geometry(spec, &mut rng).1)
}

/// Sample cylinder mask and lumen fraction.
fn tubes_geometry(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> (Vec<bool>, Vec<f64>) {
    let d = spec.dims;
    let p = &spec.tubes;
    let (cy, cx) = ((d.y as f64 - 1.0) / 2.0, (d.x as f64 - 1.0) / 2.0);
    let sample_r = 0.45 * d.y.min(d.x) as f64;
    let inner = (sample_r - p.radius[1] - p.drift_amplitude).max(0.0);
    let count = (p.canal_density * PI * sample_r * sample_r / 1000.0).round() as usize;
    let canals: Vec<Canal> = (0..count)
        .map(|_| {
            let rr = inner * rng.random::<f64>().sqrt();
            let th = rng.random_range(0.0..2.0 * PI);
            Canal {
                center: [cy + rr * th.sin(), cx + rr * th.cos()],
                radius: rng.random_range(p.radius[0]..=p.radius[1]),
                phase: [rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI)],
            }
        })
        .collect();

    let plane = d.y * d.x;
    let cylinder: Vec<bool> = (0..plane)
        .map(|i| {
            let (y, x) = ((i / d.x) as f64, (i % d.x) as f64);
            (y - cy).hypot(x - cx) <= sample_r
        })
        .collect();
    let mut lumen = vec![0.0; d.len()];
    lumen.par_chunks_mut(plane).enumerate().for_each(|(z, dst)| {
        let mut hits = vec![0u8; plane];
        for c in &canals {
            let [ay, ax] = c.axis_at(z as f64, p);
            let y0 = (ay - c.radius - 1.0).floor().max(0.0) as usize;
            let y1 = ((ay + c.radius + 1.0).ceil() as usize).min(d.y - 1);
            let x0 = (ax - c.radius - 1.0).floor().max(0.0) as usize;
            let x1 = ((ax + c.radius + 1.0).ceil() as usize).min(d.x - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let mut mask = 0u8;
                    for (sy, oy) in SUBSAMPLES.iter().enumerate() {
                        for (sx, ox) in SUBSAMPLES.iter().enumerate() {
                            if (y as f64 + oy - ay).hypot(x as f64 + ox - ax) <= c.radius {
                                mask |= 1 << (2 * sy + sx);
                            }
                        }
                    }
                    hits[y * d.x + x] |= mask;
                }
            }
        }
        for (i, h) in hits.iter().enumerate() {
            if cylinder[i] {
                dst[i] = h.count_ones() as f64 / 4.0;
            }
        }
    });
    let mask = (0..d.len()).map(|i| cylinder[i % plane]).collect();
    (mask, lumen)
}

/// Binary trabecular field and its box-smoothed version.
fn trabecular_field(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> (Vec<bool>, Vec<f64>) {
    let p = &spec.trabecular;
    let waves = random_waves(rng, p.cosines, p.wavelength);
    let field = wave_field(spec.dims, &waves);
    let n = field.len() as f64;
    let mean = field.iter().sum::<f64>() / n;
    let std = (field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let cut = mean + p.threshold * std;
    let binary: Vec<bool> = field.iter().map(|&v| v > cut).collect();
    let mut smooth: Vec<f64> = binary.iter().map(|&b| b as u8 as f64).collect();
    // Odd box width whose variance (w² − 1) / 12 is closest to σ².
    let half = ((12.0 * p.smoothing * p.smoothing + 1.0).sqrt() / 2.0 - 0.5).round().max(0.0) as usize;
    if half > 0 {
        let taps = vec![1.0 / (2 * half + 1) as f64; 2 * half + 1];
        for axis in 0..3 {
            smooth = convolve_axis(&smooth, spec.dims, axis, &taps);
        }
    }
    (binary, smooth)
}

/// Thresholded trabecular field before smoothing (foreground = true).
pub fn trabecular_binary(spec: &PhantomSpec) -> Result<Vec<bool>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(trabecular_field(spec, &mut rng).0)
}

/// Generates an HR phantom normalized onto the full `u16` range. The mask
/// covers the sample region (the cylinder for tubes, the whole box otherwise).
pub fn generate(spec: &PhantomSpec) -> Result<Volume> {
    spec.validate()?;
    let d = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mask, phase) = match spec.kind {
        PhantomKind::Tubes => {
            let (mask, lumen) = tubes_geometry(spec, &mut rng);
            (mask, lumen.into_iter().map(|l| 1.0 - l).collect::<Vec<_>>())
        }
        PhantomKind::Trabecular => {
            let (_, smooth) = trabecular_field(spec, &mut rng);
            (vec![true; d.len()], smooth)
        }
    };
    let texture_waves = random_waves(&mut rng, 12, spec.texture_wavelength);
    let texture = wave_field(d, &texture_waves);
    let raw: Vec<f64> = (0..d.len())
        .map(|i| {
            if !mask[i] {
                return 0.0;
            }
            let level = spec.background + (spec.foreground - spec.background) * phase[i];
            (level + spec.texture * texture[i]).max(0.0)
        })
        .collect();
    let raw = RawVolume::new(d, [spec.spacing_um; 3], raw)?;
    clip_normalize(&raw, 0.0, 100.0)?.with_mask(mask)
}

/// Synthetic LR: repeated 2× local mean, exactly the pyramid kernel.
pub fn degrade_downsample(hr: &Volume, s: usize) -> Result<Volume> {
    check_scale(hr.dims(), s)?;
    downsample_by(hr, s)
}

fn check_scale(d: Dims, s: usize) -> Result<()> {
    if ![2, 4, 8].contains(&s) {
        return Err(invalid!("scale must be 2, 4 or 8, got {s}"));
    }
    if d.as_array().iter().any(|&n| n == 0 || n % s != 0) {
        return Err(invalid!("dims {d} are not divisible by {s}"));
    }
    Ok(())
}

/// Parameters of the acquisition surrogate. A step is skipped when its
/// parameter is neutral.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeSpec {
    pub scale: usize,
    /// Gaussian blur σ in HR voxels.
    pub blur_sigma: f64,
    pub gamma: f64,
    pub gain: f64,
    /// Additive Gaussian noise σ in stored intensity units.
    pub noise_sigma: f64,
    /// Sub-voxel misalignment (z, y, x) in LR voxels.
    pub shift: [f64; 3],
    /// Relative amplitude of the per-slice brightness oscillation.
    pub drift_amplitude: f64,
    pub seed: u64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        Self {
            scale: 4,
            blur_sigma: 1.0,
            gamma: 0.9,
            gain: 1.2,
            noise_sigma: 500.0,
            shift: [0.3, -0.2, 0.4],
            drift_amplitude: 0.02,
            seed: 0,
        }
    }
}

impl DegradeSpec {
    /// Every step neutral: equivalent to [`degrade_downsample`].
    pub fn null(scale: usize) -> Self {
        Self {
            scale,
            blur_sigma: 0.0,
            gamma: 1.0,
            gain: 1.0,
            noise_sigma: 0.0,
            shift: [0.0; 3],
            drift_amplitude: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blur_sigma < 0.0 || self.noise_sigma < 0.0 {
            return Err(invalid!("blur and noise σ must be non-negative"));
        }
        if self.gamma <= 0.0 || self.gain < 0.0 {
            return Err(invalid!("gamma must be positive and gain non-negative"));
        }
        Ok(())
    }
}

/// One-dimensional convolution along `axis` with symmetric boundaries.
fn convolve_axis(src: &[f64], dims: Dims, axis: usize, taps: &[f64]) -> Vec<f64> {
    let n = dims.as_array();
    let strides = [n[1] * n[2], n[2], 1];
    let r = (taps.len() / 2) as isize;
    let plane = n[1] * n[2];
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(plane).enumerate().for_each(|(z, dst)| {
        for y in 0..n[1] {
            for x in 0..n[2] {
                let p = [z, y, x];
                let base = z * strides[0] + y * strides[1] + x - p[axis] * strides[axis];
                let mut acc = 0.0;
                for (k, &t) in taps.iter().enumerate() {
                    let j = symmetric(p[axis] as isize + k as isize - r, n[axis]);
                    acc += t * src[base + j * strides[axis]];
                }
                dst[y * n[2] + x] = acc;
            }
        }
    });
    out
}

/// Separable Gaussian blur (radius `ceil(3σ)`, symmetric boundaries).
pub fn gaussian_blur(volume: &Volume, sigma: f64) -> Volume {
    if sigma <= 0.0 {
        return volume.clone();
    }
    let buf: Vec<f64> = volume.data().iter().map(|&v| v as f64).collect();
    let buf = blur_field(buf, volume.dims(), sigma);
    let mut out = volume.clone();
    for (o, v) in out.data_mut().iter_mut().zip(buf) {
        *o = to_u16(v);
    }
    out
}

pub(crate) fn blur_field(mut buf: Vec<f64>, dims: Dims, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as usize;
    let taps = gaussian_taps::<f64>(2 * r + 1, sigma);
    for axis in 0..3 {
        buf = convolve_axis(&buf, dims, axis, &taps);
    }
    buf
}

/// Samples `v(p + shift)` with trilinear interpolation, clamping coordinates
/// to the volume.
pub fn shift_trilinear(volume: &Volume, shift: [f64; 3]) -> Volume {
    let d = volume.dims();
    let mut buf: Vec<f64> = volume.data().iter().map(|&v| v as f64).collect();
    for (axis, &s) in shift.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        let n = d.as_array()[axis];
        let taps: Vec<(usize, usize, f64)> = (0..n)
            .map(|i| {
                let c = (i as f64 + s).clamp(0.0, (n - 1) as f64);
                let f = c.floor() as usize;
                let g = (f + 1).min(n - 1);
                (f, g, c - f as f64)
            })
            .collect();
        let strides = [d.y * d.x, d.x, 1];
        let src = buf.clone();
        for (idx, out) in buf.iter_mut().enumerate() {
            let i = (idx / strides[axis]) % n;
            let base = idx - i * strides[axis];
            let (f, g, t) = taps[i];
            *out = (1.0 - t) * src[base + f * strides[axis]] + t * src[base + g * strides[axis]];
        }
    }
    let mut out = volume.clone();
    for (o, v) in out.data_mut().iter_mut().zip(buf) {
        *o = to_u16(v);
    }
    out
}

/// Acquisition surrogate: blur, local-mean downsample, sub-voxel shift,
/// gamma and gain, per-slice brightness drift, additive noise.
pub fn degrade_realistic(hr: &Volume, spec: &DegradeSpec) -> Result<Volume> {
    spec.validate()?;
    check_scale(hr.dims(), spec.scale)?;
    let blurred = gaussian_blur(hr, spec.blur_sigma);
    let mut v = downsample_by(&blurred, spec.scale)?;
    if spec.shift.iter().any(|&s| s != 0.0) {
        v = shift_trilinear(&v, spec.shift);
    }
    if spec.gamma != 1.0 || spec.gain != 1.0 {
        for x in v.data_mut() {
            *x = to_u16(spec.gain * U16_MAX_F64 * (*x as f64 / U16_MAX_F64).powf(spec.gamma));
        }
    }
    let d = v.dims();
    let plane = d.y * d.x;
    if spec.drift_amplitude != 0.0 {
        for (z, slice) in v.data_mut().chunks_mut(plane).enumerate() {
            let f = 1.0 + spec.drift_amplitude * (2.0 * PI * z as f64 / d.z as f64).sin();
            for x in slice {
                *x = to_u16(*x as f64 * f);
            }
        }
    }
    if spec.noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let normal = Normal::new(0.0, spec.noise_sigma).map_err(|e| invalid!("noise: {e}"))?;
        for x in v.data_mut() {
            *x = to_u16(*x as f64 + normal.sample(&mut rng));
        }
    }
    Ok(v)
}
