//! Matting and editing evaluation.
//!
//! Predictions are matched to ground truth greedily by IoU. Unmatched
//! ground truth is scored against an all-zero prediction and unmatched
//! predictions against an all-zero ground truth, so every miss and every
//! false positive costs its full matte.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::edit::render;
use crate::error::{Error, Result};
use crate::model::{AlphaMatte, Image, SceneStack};

/// Multipliers applied to the raw error sums and means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricScales {
    pub sad: f64,
    pub mse: f64,
    pub mad: f64,
}

impl Default for MetricScales {
    fn default() -> Self {
        MetricScales {
            sad: 1e-3,
            mse: 1e2,
            mad: 1e3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// Alphas above this count as support when computing IoU.
    pub iou_threshold: f32,
    pub scales: MetricScales,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            scales: MetricScales::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    TruePair,
    /// Ground truth without a prediction; the prediction is all zeros.
    MissedGt,
    /// Prediction without ground truth; the ground truth is all zeros.
    FalsePositive,
}

#[derive(Clone, Debug)]
pub struct MattePair<'a> {
    pub prediction: Cow<'a, AlphaMatte>,
    pub ground_truth: Cow<'a, AlphaMatte>,
    pub kind: MatchKind,
    pub pred_index: Option<usize>,
    pub gt_index: Option<usize>,
    pub iou: f64,
}

impl MattePair<'_> {
    pub fn sad(&self, scales: &MetricScales) -> f64 {
        sum_abs(&self.prediction, &self.ground_truth) * scales.sad
    }

    pub fn mse(&self, scales: &MetricScales) -> f64 {
        sum_sq(&self.prediction, &self.ground_truth) / self.ground_truth.values().len() as f64 * scales.mse
    }

    pub fn mad(&self, scales: &MetricScales) -> f64 {
        sum_abs(&self.prediction, &self.ground_truth) / self.ground_truth.values().len() as f64 * scales.mad
    }
}

fn sum_abs(a: &AlphaMatte, b: &AlphaMatte) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum()
}

fn sum_sq(a: &AlphaMatte, b: &AlphaMatte) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum()
}

/// Sum of absolute differences, scaled by 1/1000.
pub fn sad(pred: &AlphaMatte, gt: &AlphaMatte) -> f64 {
    sum_abs(pred, gt) * MetricScales::default().sad
}

/// Mean squared error, scaled by 100.
pub fn mse(pred: &AlphaMatte, gt: &AlphaMatte) -> f64 {
    sum_sq(pred, gt) / gt.values().len() as f64 * MetricScales::default().mse
}

/// Mean absolute difference, scaled by 1000.
pub fn mad(pred: &AlphaMatte, gt: &AlphaMatte) -> f64 {
    sum_abs(pred, gt) / gt.values().len() as f64 * MetricScales::default().mad
}

pub fn iou(a: &AlphaMatte, b: &AlphaMatte, threshold: f32) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (x, y) = (x > threshold, y > threshold);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn common_dims(mattes: &[&[AlphaMatte]]) -> Result<Option<(usize, usize)>> {
    let mut dims = None;
    for m in mattes.iter().flat_map(|s| s.iter()) {
        match dims {
            None => dims = Some(m.dims()),
            Some(d) if d != m.dims() => {
                return Err(Error::ResolutionMismatch {
                    expected: d,
                    actual: m.dims(),
                })
            }
            _ => {}
        }
    }
    Ok(dims)
}

/// Greedy IoU matching. Candidate pairs are taken in descending IoU (ties
/// by lower GT index, then lower prediction index); zero-IoU pairs never
/// match. Output lists every GT in order (matched or missed), then the
/// unmatched predictions.
pub fn match_instances<'a>(
    preds: &'a [AlphaMatte],
    gts: &'a [AlphaMatte],
    iou_threshold: f32,
) -> Result<Vec<MattePair<'a>>> {
    let Some((w, h)) = common_dims(&[preds, gts])? else {
        return Ok(Vec::new());
    };
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (g, gt) in gts.iter().enumerate() {
        for (p, pred) in preds.iter().enumerate() {
            let v = iou(pred, gt, iou_threshold);
            if v > 0.0 {
                candidates.push((v, g, p));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut gt_match: Vec<Option<(usize, f64)>> = vec![None; gts.len()];
    let mut pred_used = vec![false; preds.len()];
    for (v, g, p) in candidates {
        if gt_match[g].is_none() && !pred_used[p] {
            gt_match[g] = Some((p, v));
            pred_used[p] = true;
        }
    }

    let mut pairs = Vec::with_capacity(gts.len() + preds.len());
    for (g, m) in gt_match.into_iter().enumerate() {
        pairs.push(match m {
            Some((p, v)) => MattePair {
                prediction: Cow::Borrowed(&preds[p]),
                ground_truth: Cow::Borrowed(&gts[g]),
                kind: MatchKind::TruePair,
                pred_index: Some(p),
                gt_index: Some(g),
                iou: v,
            },
            None => MattePair {
                prediction: Cow::Owned(AlphaMatte::zeros(w, h)),
                ground_truth: Cow::Borrowed(&gts[g]),
                kind: MatchKind::MissedGt,
                pred_index: None,
                gt_index: Some(g),
                iou: 0.0,
            },
        });
    }
    for (p, used) in pred_used.into_iter().enumerate() {
        if !used {
            pairs.push(MattePair {
                prediction: Cow::Borrowed(&preds[p]),
                ground_truth: Cow::Owned(AlphaMatte::zeros(w, h)),
                kind: MatchKind::FalsePositive,
                pred_index: Some(p),
                gt_index: None,
                iou: 0.0,
            });
        }
    }
    Ok(pairs)
}

/// Pixels where at least two ground-truth instances have positive alpha.
pub fn occluded_pixels(gts: &[AlphaMatte]) -> Vec<bool> {
    occluded_mask(gts, gts.first().map_or(0, |g| g.values().len()))
}

fn occluded_mask(gts: &[AlphaMatte], n: usize) -> Vec<bool> {
    (0..n)
        .map(|i| gts.iter().filter(|g| g.values()[i] > 0.0).count() >= 2)
        .collect()
}

/// SAD restricted to occluded and non-occluded pixels, summed over pairs.
pub fn occlusion_split(pairs: &[MattePair<'_>], gts: &[AlphaMatte], scales: &MetricScales) -> (f64, f64) {
    let n = pairs.first().map_or(0, |p| p.ground_truth.values().len());
    let occluded = occluded_mask(gts, n);
    let (mut o, mut no) = (0.0f64, 0.0f64);
    for pair in pairs {
        for ((&p, &g), &occ) in pair
            .prediction
            .values()
            .iter()
            .zip(pair.ground_truth.values())
            .zip(&occluded)
        {
            let d = (p as f64 - g as f64).abs();
            if occ {
                o += d;
            } else {
                no += d;
            }
        }
    }
    (o * scales.sad, no * scales.sad)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditingMetrics {
    /// Percent.
    pub mean_l1: f64,
    /// Percent.
    pub mean_l2: f64,
    /// Decibels, peak 1.0.
    pub psnr: f64,
}

pub const PSNR_CAP_DB: f64 = 100.0;

pub fn editing_metrics(pred: &Image, gt: &Image) -> Result<EditingMetrics> {
    if pred.dims() != gt.dims() {
        return Err(Error::ResolutionMismatch {
            expected: gt.dims(),
            actual: pred.dims(),
        });
    }
    let (mut l1, mut l2) = (0.0f64, 0.0f64);
    for (a, b) in pred.pixels().iter().zip(gt.pixels()) {
        for c in 0..3 {
            let d = a[c] as f64 - b[c] as f64;
            l1 += d.abs();
            l2 += d * d;
        }
    }
    let n = (pred.pixels().len() * 3) as f64;
    let (l1, l2) = (l1 / n, l2 / n);
    let psnr = if l2 == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / l2).log10()).min(PSNR_CAP_DB)
    };
    Ok(EditingMetrics {
        mean_l1: 100.0 * l1,
        mean_l2: 100.0 * l2,
        psnr,
    })
}

/// Mean absolute difference between `image` and the stack's render.
pub fn composition_residual(stack: &SceneStack, image: &Image) -> Result<f64> {
    if stack.dims() != image.dims() {
        return Err(Error::ResolutionMismatch {
            expected: stack.dims(),
            actual: image.dims(),
        });
    }
    let rendered = render(stack);
    let total: f64 = rendered
        .pixels()
        .iter()
        .zip(image.pixels())
        .flat_map(|(a, b)| (0..3).map(move |c| (a[c] as f64 - b[c] as f64).abs()))
        .sum();
    Ok(total / (image.pixels().len() * 3) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub kind: MatchKind,
    pub gt_index: Option<usize>,
    pub pred_index: Option<usize>,
    pub iou: f64,
    pub sad: f64,
    pub mse: f64,
    pub mad: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub name: String,
    pub pairs: Vec<PairReport>,
    /// Sum over pairs; equals `sad_o + sad_no`.
    pub sad: f64,
    /// Mean over pairs.
    pub mse: f64,
    /// Mean over pairs.
    pub mad: f64,
    pub sad_o: f64,
    pub sad_no: f64,
    pub missed: usize,
    pub false_positives: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub editing: Option<EditingMetrics>,
}

pub fn evaluate_image(
    name: impl Into<String>,
    preds: &[AlphaMatte],
    gts: &[AlphaMatte],
    config: &EvalConfig,
) -> Result<ImageReport> {
    let pairs = match_instances(preds, gts, config.iou_threshold)?;
    let scales = &config.scales;
    let reports: Vec<PairReport> = pairs
        .iter()
        .map(|p| PairReport {
            kind: p.kind,
            gt_index: p.gt_index,
            pred_index: p.pred_index,
            iou: p.iou,
            sad: p.sad(scales),
            mse: p.mse(scales),
            mad: p.mad(scales),
        })
        .collect();
    let (sad_o, sad_no) = occlusion_split(&pairs, gts, scales);
    let n = reports.len().max(1) as f64;
    Ok(ImageReport {
        name: name.into(),
        sad: sad_o + sad_no,
        mse: reports.iter().map(|r| r.mse).sum::<f64>() / n,
        mad: reports.iter().map(|r| r.mad).sum::<f64>() / n,
        sad_o,
        sad_no,
        missed: reports.iter().filter(|r| r.kind == MatchKind::MissedGt).count(),
        false_positives: reports.iter().filter(|r| r.kind == MatchKind::FalsePositive).count(),
        pairs: reports,
        editing: None,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub images: usize,
    pub sad: f64,
    pub mse: f64,
    pub mad: f64,
    pub sad_o: f64,
    pub sad_no: f64,
    pub missed: usize,
    pub false_positives: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub editing: Option<EditingMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub images: Vec<ImageReport>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    /// Means over images for the error figures, totals for the counts.
    pub fn new(config: EvalConfig, images: Vec<ImageReport>) -> Self {
        let n = images.len().max(1) as f64;
        let mean = |f: fn(&ImageReport) -> f64| images.iter().map(f).sum::<f64>() / n;
        let edited: Vec<&EditingMetrics> = images.iter().filter_map(|i| i.editing.as_ref()).collect();
        let editing = (!edited.is_empty()).then(|| {
            let m = edited.len() as f64;
            EditingMetrics {
                mean_l1: edited.iter().map(|e| e.mean_l1).sum::<f64>() / m,
                mean_l2: edited.iter().map(|e| e.mean_l2).sum::<f64>() / m,
                psnr: edited.iter().map(|e| e.psnr).sum::<f64>() / m,
            }
        });
        let aggregate = Aggregate {
            images: images.len(),
            sad: mean(|i| i.sad),
            mse: mean(|i| i.mse),
            mad: mean(|i| i.mad),
            sad_o: mean(|i| i.sad_o),
            sad_no: mean(|i| i.sad_no),
            missed: images.iter().map(|i| i.missed).sum(),
            false_positives: images.iter().map(|i| i.false_positives).sum(),
            editing,
        };
        EvalReport {
            config,
            images,
            aggregate,
        }
    }
}
