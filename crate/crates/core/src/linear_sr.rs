//! Per-phase ridge regression from LR neighbourhoods to HR voxels.
//!
//! HR voxel `s·l + p` (LR voxel `l`, phase offset `p ∈ [0, s)³`) is predicted
//! as `w_φ · N_k(l) + b_φ`, where `N_k(l)` is the `k³` LR neighbourhood of `l`
//! with symmetric reflection at the borders and `φ` flattens `p`. Intensities
//! are in `[0, 1]` units.

use std::borrow::Borrow;

use nalgebra::{DMatrix, DVector, RealField};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::metrics::symmetric;
use crate::sampler::PatchPair;
use crate::scalar::{from_unit, unit, Real};
use crate::tiled::SrOperator;
use crate::volume::Volume;

/// Scalars usable by the ridge solver.
pub trait RidgeScalar: Real + RealField + Serialize + for<'de> Deserialize<'de> {}
impl RidgeScalar for f32 {}
impl RidgeScalar for f64 {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: RidgeScalar")]
pub struct Phase<R> {
    pub weights: Vec<R>,
    pub bias: R,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitStats {
    /// Training rows per phase.
    pub samples: u64,
    /// Root of the summed squared training residual, per phase.
    pub residual_norm: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "R: RidgeScalar")]
pub struct LinearSrModel<R> {
    #[serde(rename = "s")]
    pub scale: usize,
    pub k: usize,
    pub lambda: f64,
    pub phases: Vec<Phase<R>>,
    #[serde(default)]
    pub stats: FitStats,
}

fn check_shape(scale: usize, k: usize) -> Result<()> {
    if scale == 0 {
        return Err(invalid!("scale must be positive"));
    }
    if k == 0 || k % 2 == 0 {
        return Err(invalid!("neighbourhood side must be odd, got {k}"));
    }
    Ok(())
}

/// Flattened `k³` neighbourhood of every LR voxel, row-major in `(z, y, x)`.
fn neighbourhoods<R: Real>(lr: &Volume, k: usize) -> Vec<R> {
    let d = lr.dims();
    let h = (k / 2) as isize;
    let vals: Vec<R> = lr.data().iter().map(|&v| unit(v)).collect();
    let m = k * k * k;
    let mut out = vec![R::zero(); d.len() * m];
    out.par_chunks_mut(d.y * d.x * m).enumerate().for_each(|(z, dst)| {
        let zs: Vec<usize> = (-h..=h).map(|o| symmetric(z as isize + o, d.z)).collect();
        for y in 0..d.y {
            let ys: Vec<usize> = (-h..=h).map(|o| symmetric(y as isize + o, d.y)).collect();
            for x in 0..d.x {
                let xs: Vec<usize> = (-h..=h).map(|o| symmetric(x as isize + o, d.x)).collect();
                let row = &mut dst[(y * d.x + x) * m..][..m];
                let mut j = 0;
                for &sz in &zs {
                    for &sy in &ys {
                        for &sx in &xs {
                            row[j] = vals[d.index(sz, sy, sx)];
                            j += 1;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Streaming normal equations. Every LR voxel contributes one row to each
/// phase, so the Gram matrix is shared and only `Gᵀy` is per phase.
#[derive(Clone, Debug)]
pub struct RidgeAccumulator<R> {
    scale: usize,
    k: usize,
    gram: DMatrix<R>,
    rhs: Vec<DVector<R>>,
    yy: Vec<R>,
    rows: u64,
}

impl<R: RidgeScalar> RidgeAccumulator<R> {
    pub fn new(scale: usize, k: usize) -> Result<Self> {
        check_shape(scale, k)?;
        let m = k * k * k + 1;
        let phases = scale * scale * scale;
        Ok(Self {
            scale,
            k,
            gram: DMatrix::zeros(m, m),
            rhs: vec![DVector::zeros(m); phases],
            yy: vec![R::zero(); phases],
            rows: 0,
        })
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    /// Adds every voxel of an `hr` patch aligned with `lr`.
    pub fn add(&mut self, lr: &Volume, hr: &Volume) -> Result<()> {
        let s = self.scale;
        if hr.dims() != lr.dims().scaled(s) {
            return Err(invalid!("HR patch {} is not {s}x the LR patch {}", hr.dims(), lr.dims()));
        }
        let d = lr.dims();
        let m = self.k * self.k * self.k;
        let nb = neighbourhoods::<R>(lr, self.k);
        let hd = hr.dims();
        let mut g = DVector::<R>::zeros(m + 1);
        g[m] = R::one();
        for z in 0..d.z {
            for y in 0..d.y {
                for x in 0..d.x {
                    let li = d.index(z, y, x);
                    g.rows_mut(0, m).copy_from_slice(&nb[li * m..(li + 1) * m]);
                    self.gram.syger(R::one(), &g, &g, R::one());
                    for p in 0..s * s * s {
                        let (pz, py, px) = (p / (s * s), (p / s) % s, p % s);
                        let yv: R = unit(hr.data()[hd.index(s * z + pz, s * y + py, s * x + px)]);
                        self.rhs[p].axpy(yv, &g, R::one());
                        self.yy[p] += yv * yv;
                    }
                }
            }
        }
        self.rows += d.len() as u64;
        Ok(())
    }

    /// Solves `(GᵀG + λI′) w = Gᵀy` per phase by Cholesky; `I′` leaves the
    /// bias unpenalized.
    pub fn solve(&self, lambda: f64) -> Result<LinearSrModel<R>> {
        let m = self.k * self.k * self.k;
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(invalid!("ridge λ must be finite and non-negative, got {lambda}"));
        }
        if self.rows < (m + 1) as u64 {
            return Err(invalid!("{} rows per phase, need at least {}", self.rows, m + 1));
        }
        let mut gram = self.gram.clone_owned();
        // syger maintains the lower triangle only.
        gram.fill_upper_triangle_with_lower_triangle();
        let lam = R::lit(lambda);
        for i in 0..m {
            gram[(i, i)] += lam;
        }
        let max_diag = (0..=m).map(|i| gram[(i, i)]).fold(R::zero(), num_traits::Float::max);
        let chol = gram.clone().cholesky().filter(|c| {
            let l = c.l_dirty();
            (0..=m).all(|i| l[(i, i)] * l[(i, i)] > R::lit(1e-12) * max_diag)
        });
        let Some(chol) = chol else {
            return Err(Error::Singular(format!(
                "normal matrix is rank deficient at λ = {lambda}; use a positive ridge λ"
            )));
        };
        let mut phases = Vec::with_capacity(self.rhs.len());
        let mut residual = Vec::with_capacity(self.rhs.len());
        for (b, &yy) in self.rhs.iter().zip(&self.yy) {
            let w = chol.solve(b);
            // ‖Gw − y‖² = wᵀGᵀGw − 2wᵀGᵀy + yᵀy, with the unregularized Gram.
            let mut gw = &gram * &w;
            for i in 0..m {
                gw[i] -= lam * w[i];
            }
            let r2 = (w.dot(&gw) - R::lit(2.0) * w.dot(b) + yy).to_f64_lossy().max(0.0);
            residual.push(r2.sqrt());
            phases.push(Phase {
                weights: w.rows(0, m).iter().copied().collect(),
                bias: w[m],
            });
        }
        Ok(LinearSrModel {
            scale: self.scale,
            k: self.k,
            lambda,
            phases,
            stats: FitStats { samples: self.rows, residual_norm: residual },
        })
    }
}

/// Fits a model on aligned `(lr, hr)` patch pairs, in stream order.
pub fn fit_volumes<'a, R: RidgeScalar>(
    pairs: impl IntoIterator<Item = (&'a Volume, &'a Volume)>,
    scale: usize,
    k: usize,
    lambda: f64,
) -> Result<LinearSrModel<R>> {
    let mut acc = RidgeAccumulator::<R>::new(scale, k)?;
    for (lr, hr) in pairs {
        acc.add(lr, hr)?;
    }
    acc.solve(lambda)
}

/// Fits a model on sampled patch pairs. The scale is read off the pairs.
pub fn fit<R: RidgeScalar, P: Borrow<PatchPair>>(
    pairs: impl IntoIterator<Item = P>,
    k: usize,
    lambda: f64,
) -> Result<LinearSrModel<R>> {
    let mut acc: Option<RidgeAccumulator<R>> = None;
    for p in pairs {
        let p = p.borrow();
        let s = p.hr.dims().z / p.lr.dims().z.max(1);
        let acc = match &mut acc {
            Some(a) => a,
            None => acc.insert(RidgeAccumulator::new(s, k)?),
        };
        if s != acc.scale {
            return Err(invalid!("pair {} has scale {s}, expected {}", p.sample_id, acc.scale));
        }
        acc.add(&p.lr, &p.hr)?;
    }
    acc.ok_or_else(|| invalid!("no training pairs"))?.solve(lambda)
}

impl<R: RidgeScalar> LinearSrModel<R> {
    /// Phase-independent kernel: `weights` at the centre tap, zero bias.
    pub fn delta(scale: usize, k: usize) -> Result<Self> {
        check_shape(scale, k)?;
        let m = k * k * k;
        let mut weights = vec![R::zero(); m];
        weights[m / 2] = R::one();
        Ok(Self {
            scale,
            k,
            lambda: 0.0,
            phases: vec![Phase { weights, bias: R::zero() }; scale * scale * scale],
            stats: FitStats::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        check_shape(self.scale, self.k)?;
        let m = self.k * self.k * self.k;
        if self.phases.len() != self.scale.pow(3) || self.phases.iter().any(|p| p.weights.len() != m) {
            return Err(invalid!("model needs {} phases of {m} weights", self.scale.pow(3)));
        }
        Ok(())
    }

    /// Predicts an HR volume `scale` times the size of `lr`.
    pub fn apply(&self, lr: &Volume) -> Result<Volume> {
        self.validate()?;
        let s = self.scale;
        let d = lr.dims();
        let m = self.k * self.k * self.k;
        let nb = neighbourhoods::<R>(lr, self.k);
        let hd = d.scaled(s);
        let mut out = vec![0u16; hd.len()];
        let hr_plane = hd.y * hd.x;
        out.par_chunks_mut(s * hr_plane).enumerate().for_each(|(z, dst)| {
            for y in 0..d.y {
                for x in 0..d.x {
                    let li = d.index(z, y, x);
                    let g = &nb[li * m..(li + 1) * m];
                    for (p, phase) in self.phases.iter().enumerate() {
                        let (pz, py, px) = (p / (s * s), (p / s) % s, p % s);
                        let v = phase.weights.iter().zip(g).map(|(&w, &n)| w * n).sum::<R>() + phase.bias;
                        dst[pz * hr_plane + (s * y + py) * hd.x + s * x + px] = from_unit(v);
                    }
                }
            }
        });
        Volume::new(hd, lr.spacing().map(|v| v / s as f64), out)
    }
}

impl<R: RidgeScalar> SrOperator for LinearSrModel<R> {
    fn scale(&self) -> usize {
        self.scale
    }

    fn predict(&self, _: [usize; 3], tile: &Volume) -> Result<Volume> {
        self.apply(tile)
    }
}
