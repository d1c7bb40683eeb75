//! Depth-driven plane splitting.
//!
//! Plane depths are seeded from equal-population depth quantiles, pulled
//! toward the scene's depth clusters with 1-D Lloyd iterations, and turned
//! into soft per-pixel plane masks with a softmax over negative distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DepthMap;

pub const DEFAULT_PLANE_COUNT: usize = 10;
pub const DEFAULT_MAX_ITERS: usize = 20;

/// How initial plane depths are spread over the depth distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    /// Midpoints of equal-population quantile bins.
    #[default]
    Quantile,
    /// Midpoints of equal-width bins over `[min, max]`.
    Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneDepths {
    initial: Vec<f64>,
    refined: Vec<f64>,
}

impl PlaneDepths {
    /// Initial depths supplied directly; they must be strictly increasing.
    pub fn new(initial: Vec<f64>) -> Result<Self> {
        if initial.len() < 2 {
            return Err(Error::InvalidValue("at least two planes are required".into()));
        }
        if !is_strictly_increasing(&initial) {
            return Err(Error::InvalidValue(format!(
                "plane depths must be strictly increasing: {initial:?}"
            )));
        }
        Ok(PlaneDepths {
            refined: initial.clone(),
            initial,
        })
    }

    pub fn count(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    /// Equal to [`initial`](Self::initial) until refined.
    pub fn refined(&self) -> &[f64] {
        &self.refined
    }
}

fn is_strictly_increasing(v: &[f64]) -> bool {
    v.iter().all(|d| d.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

/// Pushes duplicates apart by `eps` while staying inside `[lo, hi]`.
fn make_strictly_increasing(v: &mut [f64], eps: f64, lo: f64, hi: f64) {
    for i in 1..v.len() {
        if v[i] <= v[i - 1] {
            v[i] = v[i - 1] + eps;
        }
    }
    if let Some(last) = v.last_mut() {
        *last = last.min(hi);
    }
    for i in (0..v.len().saturating_sub(1)).rev() {
        if v[i] >= v[i + 1] {
            v[i] = v[i + 1] - eps;
        }
    }
    for d in v.iter_mut() {
        *d = d.clamp(lo, hi);
    }
}

fn depth_range(depth: &DepthMap) -> Result<(f64, f64)> {
    let (lo, hi) = (depth.min() as f64, depth.max() as f64);
    if hi <= lo {
        return Err(Error::ConstantDepth);
    }
    Ok((lo, hi))
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn initial_plane_depths(depth: &DepthMap, n: usize) -> Result<PlaneDepths> {
    initial_plane_depths_with(depth, n, Spacing::Quantile)
}

pub fn initial_plane_depths_with(depth: &DepthMap, n: usize, spacing: Spacing) -> Result<PlaneDepths> {
    if n < 2 {
        return Err(Error::InvalidValue(format!("plane count must be at least 2, got {n}")));
    }
    let (lo, hi) = depth_range(depth)?;
    let mut depths: Vec<f64> = match spacing {
        Spacing::Quantile => {
            let mut sorted: Vec<f64> = depth.values().iter().map(|&d| d as f64).collect();
            sorted.sort_by(f64::total_cmp);
            (0..n).map(|k| quantile(&sorted, (k as f64 + 0.5) / n as f64)).collect()
        }
        Spacing::Linear => (0..n).map(|k| lo + (hi - lo) * (k as f64 + 0.5) / n as f64).collect(),
    };
    make_strictly_increasing(&mut depths, 1e-6 * (hi - lo), lo, hi);
    PlaneDepths::new(depths)
}

/// Index of the nearest plane depth for each value; ties go to the lower index.
pub fn nearest_plane(values: &[f32], centers: &[f64]) -> Vec<usize> {
    values.par_iter().map(|&v| nearest_index(v as f64, centers)).collect()
}

fn nearest_index(v: f64, centers: &[f64]) -> usize {
    let mut best = 0;
    let mut best_dist = f64::INFINITY;
    for (i, &c) in centers.iter().enumerate() {
        let d = (v - c).abs();
        if d < best_dist {
            best = i;
            best_dist = d;
        }
    }
    best
}

/// Sum over pixels of the squared distance to the nearest plane depth.
pub fn quantization_objective(values: &[f32], centers: &[f64]) -> f64 {
    values
        .iter()
        .map(|&v| {
            let d = v as f64 - centers[nearest_index(v as f64, centers)];
            d * d
        })
        .sum()
}

pub fn refine_plane_depths(depth: &DepthMap, depths: &PlaneDepths, max_iters: usize) -> Result<PlaneDepths> {
    refine_plane_depths_traced(depth, depths, max_iters).map(|(d, _)| d)
}

/// Like [`refine_plane_depths`], also returning the quantization objective
/// before the first iteration and after every center update.
pub fn refine_plane_depths_traced(
    depth: &DepthMap,
    depths: &PlaneDepths,
    max_iters: usize,
) -> Result<(PlaneDepths, Vec<f64>)> {
    let values = depth.values();
    let mut centers = depths.initial.clone();
    let mut trace = vec![quantization_objective(values, &centers)];
    if max_iters == 0 {
        return Ok((depths.clone(), trace));
    }
    let (lo, hi) = depth_range(depth)?;
    let stop = 1e-4 * (hi - lo);

    for _ in 0..max_iters {
        let assignment = nearest_plane(values, &centers);
        let mut sums = vec![0.0f64; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (&v, &k) in values.iter().zip(&assignment) {
            sums[k] += v as f64;
            counts[k] += 1;
        }
        let mut shift = 0.0f64;
        for k in 0..centers.len() {
            if counts[k] > 0 {
                let next = sums[k] / counts[k] as f64;
                shift = shift.max((next - centers[k]).abs());
                centers[k] = next;
            }
        }
        trace.push(quantization_objective(values, &centers));
        if shift < stop {
            break;
        }
    }

    centers.sort_by(f64::total_cmp);
    make_strictly_increasing(&mut centers, 1e-6 * (hi - lo), lo, hi);
    Ok((
        PlaneDepths {
            initial: depths.initial.clone(),
            refined: centers,
        },
        trace,
    ))
}

/// `(max - min) / (4 N)`.
pub fn default_tau(depth: &DepthMap, n: usize) -> f64 {
    (depth.max() as f64 - depth.min() as f64) / (4 * n) as f64
}

/// Soft plane assignment, one mask per plane; masks sum to one per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneMasks {
    width: usize,
    height: usize,
    masks: Vec<Vec<f64>>,
}

impl PlaneMasks {
    pub fn count(&self) -> usize {
        self.masks.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn mask(&self, plane: usize) -> &[f64] {
        &self.masks[plane]
    }

    pub fn at(&self, plane: usize, x: usize, y: usize) -> f64 {
        self.masks[plane][y * self.width + x]
    }

    /// Per-pixel index of the largest mask; ties go to the lower index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.width * self.height)
            .map(|i| {
                let mut best = 0;
                for k in 1..self.masks.len() {
                    if self.masks[k][i] > self.masks[best][i] {
                        best = k;
                    }
                }
                best
            })
            .collect()
    }
}

pub fn plane_masks(depth: &DepthMap, depths: &PlaneDepths, tau: f64) -> Result<PlaneMasks> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::InvalidValue(format!("tau must be positive, got {tau}")));
    }
    let centers = depths.refined();
    let n = centers.len();
    let per_pixel: Vec<Vec<f64>> = depth
        .values()
        .par_iter()
        .map(|&d| {
            let logits: Vec<f64> = centers.iter().map(|&c| -(d as f64 - c).abs() / tau).collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|&l| (l - top).exp()).collect();
            let total: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / total).collect()
        })
        .collect();
    let mut masks = vec![Vec::with_capacity(per_pixel.len()); n];
    for px in per_pixel {
        for (k, m) in px.into_iter().enumerate() {
            masks[k].push(m);
        }
    }
    Ok(PlaneMasks {
        width: depth.width(),
        height: depth.height(),
        masks,
    })
}
