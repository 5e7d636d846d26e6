//! Separable interpolation upsamplers with edge clamping.
//!
//! Output voxel `i` along an axis samples source coordinate
//! `(i + 0.5) / s - 0.5` (voxel centers aligned, corners not).

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::to_u16;
use crate::volume::{Dims, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Nearest,
    Trilinear,
    Tricubic,
}

impl FromStr for Interp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "trilinear" | "linear" => Ok(Self::Trilinear),
            "tricubic" | "cubic" => Ok(Self::Tricubic),
            other => Err(invalid!("unknown interpolation {other:?}")),
        }
    }
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        1.5 * t * t * t - 2.5 * t * t + 1.0
    } else if t < 2.0 {
        -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Source taps `(index, weight)` for each of the `n * s` output positions.
fn taps(n: usize, s: usize, kind: Interp) -> Vec<Vec<(usize, f64)>> {
    let clamp = |i: isize| i.clamp(0, n as isize - 1) as usize;
    (0..n * s)
        .map(|i| {
            if kind == Interp::Nearest {
                return vec![(i / s, 1.0)];
            }
            let c = (i as f64 + 0.5) / s as f64 - 0.5;
            let f = c.floor();
            let frac = c - f;
            let f = f as isize;
            match kind {
                Interp::Trilinear => vec![(clamp(f), 1.0 - frac), (clamp(f + 1), frac)],
                _ => (-1..=2).map(|k| (clamp(f + k), keys(frac - k as f64))).collect(),
            }
        })
        .collect()
}

fn resample_axis(src: &[f64], dims: [usize; 3], axis: usize, s: usize, kind: Interp) -> (Vec<f64>, [usize; 3]) {
    let mut out_dims = dims;
    out_dims[axis] *= s;
    let t = taps(dims[axis], s, kind);
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut out = Vec::with_capacity(out_dims.iter().product());
    for z in 0..out_dims[0] {
        for y in 0..out_dims[1] {
            for x in 0..out_dims[2] {
                let mut p = [z, y, x];
                let oi = p[axis];
                let mut acc = 0.0;
                for &(si, w) in &t[oi] {
                    p[axis] = si;
                    acc += w * src[p[0] * strides[0] + p[1] * strides[1] + p[2]];
                }
                out.push(acc);
            }
        }
    }
    (out, out_dims)
}

/// Upsamples every axis by `s`; values are rounded half-to-even and clamped.
pub fn upsample(volume: &Volume, s: usize, kind: Interp) -> Result<Volume> {
    if s == 0 {
        return Err(invalid!("scale must be positive"));
    }
    let d = volume.dims();
    let spacing = volume.spacing().map(|v| v / s as f64);
    if kind == Interp::Nearest {
        return Ok(Volume::from_fn(d.scaled(s), spacing, |z, y, x| volume.get(z / s, y / s, x / s)));
    }
    let mut buf: Vec<f64> = volume.data().iter().map(|&v| v as f64).collect();
    let mut dims = d.as_array();
    for axis in 0..3 {
        (buf, dims) = resample_axis(&buf, dims, axis, s, kind);
    }
    Volume::new(Dims::from(dims), spacing, buf.into_iter().map(to_u16).collect())
}
