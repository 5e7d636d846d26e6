use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{nrmse, psnr, ssim, tv, Plane};
use crate::error::{invalid, Error, Result};
use crate::volume::Volume;

/// Which z-slices enter the evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    EverySlice,
    /// Slices `0, s, 2s, ...` for scale `s`.
    EverySth,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "every-slice" | "every" => Ok(Self::EverySlice),
            "every-sth" | "every-s" => Ok(Self::EverySth),
            other => Err(invalid!("unknown evaluation mode {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub index: usize,
    pub psnr_db: f64,
    pub ssim: f64,
    pub nrmse: f64,
    pub tv: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub psnr_db: f64,
    pub ssim: f64,
    pub nrmse: f64,
    pub tv: f64,
}

impl Summary {
    /// `"PSNR / SSIM / NRMSE"` in table style.
    pub fn row(&self) -> String {
        format_row(self.psnr_db, self.ssim, self.nrmse)
    }
}

/// Per-slice metrics of a prediction. `tv` is measured on the prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scale: usize,
    pub mode: EvalMode,
    pub slices: Vec<SliceMetrics>,
    pub aggregate: Summary,
}

impl MetricsReport {
    pub fn included(&self) -> Vec<usize> {
        self.slices.iter().map(|s| s.index).collect()
    }

    pub fn row(&self) -> String {
        self.aggregate.row()
    }

    /// Columns `slice_index, psnr_db, ssim, nrmse, tv`; the aggregate row is last.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("slice_index,psnr_db,ssim,nrmse,tv\n");
        for s in &self.slices {
            let _ = writeln!(out, "{},{},{},{},{}", s.index, s.psnr_db, s.ssim, s.nrmse, s.tv);
        }
        let a = &self.aggregate;
        let _ = writeln!(out, "mean,{},{},{},{}", a.psnr_db, a.ssim, a.nrmse, a.tv);
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Four decimals with the leading zero dropped: `0.6779` → `.6779`.
fn fraction4(v: f64) -> String {
    let s = format!("{v:.4}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

/// `19.08 / .6779 / .2746`.
pub fn format_row(psnr_db: f64, ssim: f64, nrmse: f64) -> String {
    format!("{psnr_db:.2} / {} / {}", fraction4(ssim), fraction4(nrmse))
}

fn candidates(depth: usize, scale: usize, mode: EvalMode) -> Vec<usize> {
    match mode {
        EvalMode::EverySlice => (0..depth).collect(),
        EvalMode::EverySth => (0..depth).step_by(scale.max(1)).collect(),
    }
}

fn plane(v: &Volume, z: usize) -> Plane<f64> {
    let d = v.dims();
    Plane::from_u16(d.y, d.x, v.slice(z)).expect("slice matches dims")
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Slice-wise PSNR, SSIM, NRMSE and TV along z, skipping all-zero reference
/// slices, aggregated by arithmetic mean.
pub fn evaluate_volume(pred: &Volume, reference: &Volume, scale: usize, mode: EvalMode) -> Result<MetricsReport> {
    if pred.dims() != reference.dims() {
        return Err(invalid!("prediction is {} but reference is {}", pred.dims(), reference.dims()));
    }
    let keep: Vec<usize> = candidates(reference.dims().z, scale, mode)
        .into_iter()
        .filter(|&z| reference.slice(z).iter().any(|&v| v != 0))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyReport);
    }
    let slices = keep
        .par_iter()
        .map(|&z| {
            let (p, r) = (plane(pred, z), plane(reference, z));
            Ok(SliceMetrics {
                index: z,
                psnr_db: psnr(&p, &r)?,
                ssim: ssim(&p, &r)?,
                nrmse: nrmse(&p, &r)?,
                tv: tv(&p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let aggregate = Summary {
        psnr_db: mean(slices.iter().map(|s| s.psnr_db)),
        ssim: mean(slices.iter().map(|s| s.ssim)),
        nrmse: mean(slices.iter().map(|s| s.nrmse)),
        tv: mean(slices.iter().map(|s| s.tv)),
    };
    Ok(MetricsReport { scale, mode, slices, aggregate })
}

/// Mean slice TV over the non-zero slices selected by `mode`.
pub fn mean_tv(volume: &Volume, scale: usize, mode: EvalMode) -> Result<f64> {
    let keep: Vec<usize> = candidates(volume.dims().z, scale, mode)
        .into_iter()
        .filter(|&z| volume.slice(z).iter().any(|&v| v != 0))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyReport);
    }
    let values = keep.par_iter().map(|&z| tv(&plane(volume, z))).collect::<Result<Vec<_>>>()?;
    Ok(mean(values.into_iter()))
}
