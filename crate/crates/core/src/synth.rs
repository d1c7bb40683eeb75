//! Synthetic layered scenes with known ground truth.
//!
//! Cutouts are scaled and dropped onto a background in a random overlay
//! order. Because every layer is kept at full extent (occluded parts
//! included), the composite, the per-layer visibilities, and the composite
//! with any two layers' overlay positions exchanged are all exact.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AlphaMatte, DepthMap, FootprintMask, Image, Plane, PlaneId, PlaneKind, Rgb, SceneStack};
use crate::resample::{warp_patch, Affine};

/// An RGBA instance before placement.
#[derive(Clone, Debug)]
pub struct Cutout {
    name: String,
    color: Image,
    full_alpha: AlphaMatte,
}

impl Cutout {
    pub fn new(name: impl Into<String>, color: Image, full_alpha: AlphaMatte) -> Result<Self> {
        if color.dims() != full_alpha.dims() {
            return Err(Error::ResolutionMismatch {
                expected: color.dims(),
                actual: full_alpha.dims(),
            });
        }
        if full_alpha.values().iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidValue("cutout alpha outside [0, 1]".into()));
        }
        if full_alpha.support_bbox().is_none() {
            return Err(Error::EmptyInstance);
        }
        Ok(Cutout {
            name: name.into(),
            color,
            full_alpha,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn color(&self) -> &Image {
        &self.color
    }

    pub fn full_alpha(&self) -> &AlphaMatte {
        &self.full_alpha
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMode {
    /// Alphas are used as given.
    Soft,
    /// Alphas become binary wherever two footprints overlap; with
    /// `keep_soft_edges = false` they become binary everywhere.
    HardCore { keep_soft_edges: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementConfig {
    /// Instance height as a fraction of frame height, sampled uniformly.
    pub height_frac: (f64, f64),
    /// Minimum share of the instance width that must land inside the frame.
    pub min_inside_frac: f64,
    /// Lower bound on the scale factor applied to a cutout.
    pub min_scale: f64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            height_frac: (0.3, 0.9),
            min_inside_frac: 0.7,
            min_scale: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub placement: PlacementConfig,
    /// Inclusive range for the number of instances per scene.
    pub instances: (usize, usize),
    pub alpha_mode: AlphaMode,
    pub reorder_pair: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            placement: PlacementConfig::default(),
            instances: (2, 6),
            alpha_mode: AlphaMode::Soft,
            reorder_pair: true,
        }
    }
}

/// A cutout placed at scene resolution, full extent.
#[derive(Clone, Debug)]
pub struct PlacedLayer {
    pub source: String,
    pub color: Image,
    pub full_alpha: AlphaMatte,
    pub footprint: FootprintMask,
}

#[derive(Clone, Debug)]
pub struct Placement {
    pub layers: Vec<PlacedLayer>,
    /// Layer indices from front to back.
    pub order: Vec<usize>,
}

pub fn place_instances(
    cutouts: &[Cutout],
    background: &Image,
    config: &PlacementConfig,
    seed: u64,
) -> Result<Placement> {
    if cutouts.is_empty() {
        return Err(Error::InvalidValue("at least one cutout is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fw, fh) = background.dims();
    let mut layers = Vec::with_capacity(cutouts.len());
    for cutout in cutouts {
        let (cw, ch) = cutout.color.dims();
        let (lo, hi) = config.height_frac;
        let target_h = rng.random_range(lo..=hi) * fh as f64;
        let scale = (target_h / ch as f64).max(config.min_scale);
        let (sw, sh) = (cw as f64 * scale, ch as f64 * scale);
        let inside = config.min_inside_frac;
        if sh > fh as f64 || sw * inside > fw as f64 {
            return Err(Error::PlacementFailure(format!(
                "cutout {} scaled to {sw:.0}x{sh:.0} does not fit a {fw}x{fh} frame",
                cutout.name
            )));
        }
        let top = rng.random_range(0.0..=(fh as f64 - sh)).floor();
        let left = rng
            .random_range((-(1.0 - inside) * sw)..=(fw as f64 - inside * sw))
            .floor();
        let mut forward = Affine::resize(scale);
        forward.tx += left;
        forward.ty += top;
        let warped = warp_patch(
            cutout.color.pixels(),
            cutout.full_alpha.values(),
            (cw, ch),
            (fw, fh),
            &forward,
            0.0,
        );
        let full_alpha = AlphaMatte::from_raw(fw, fh, warped.alpha);
        let footprint = FootprintMask::from_alpha(&full_alpha, 0.0);
        if footprint.bbox().is_none() {
            return Err(Error::PlacementFailure(format!(
                "cutout {} landed outside the frame",
                cutout.name
            )));
        }
        layers.push(PlacedLayer {
            source: cutout.name.clone(),
            color: Image::from_vec_unchecked(fw, fh, warped.color),
            full_alpha,
            footprint,
        });
    }
    let mut order: Vec<usize> = (0..layers.len()).collect();
    order.shuffle(&mut rng);
    Ok(Placement { layers, order })
}

/// Forces binary alphas on footprint overlaps (or everywhere). Footprints
/// are unchanged because only positive alphas are raised.
pub fn harden_alphas(layers: &mut [PlacedLayer], keep_soft_edges: bool) {
    let Some(first) = layers.first() else { return };
    let n = first.full_alpha.values().len();
    let mut coverage = vec![0u8; n];
    for layer in layers.iter() {
        for (c, &f) in coverage.iter_mut().zip(layer.footprint.bits()) {
            *c = c.saturating_add(f as u8);
        }
    }
    for layer in layers.iter_mut() {
        for (i, a) in layer.full_alpha.values_mut().iter_mut().enumerate() {
            if *a > 0.0 && (!keep_soft_edges || coverage[i] >= 2) {
                *a = 1.0;
            }
        }
    }
}

/// Front-to-back visibilities of full-extent alphas, plus the background's
/// remaining share. Together they sum to one at every pixel.
///
/// # Panics
/// If `full_alphas` is empty.
pub fn visible_alphas(full_alphas: &[&AlphaMatte]) -> (Vec<AlphaMatte>, AlphaMatte) {
    let (w, h) = full_alphas.first().expect("at least one matte").dims();
    let mut transmittance = vec![1.0f64; w * h];
    let mut out = Vec::with_capacity(full_alphas.len());
    for full in full_alphas {
        let vis: Vec<f32> = full
            .values()
            .iter()
            .zip(transmittance.iter_mut())
            .map(|(&a, t)| {
                let v = a as f64 * *t;
                *t *= 1.0 - a as f64;
                v as f32
            })
            .collect();
        out.push(AlphaMatte::from_raw(w, h, vis));
    }
    let rest = transmittance.into_iter().map(|t| t as f32).collect();
    (out, AlphaMatte::from_raw(w, h, rest))
}

fn check_order(order: &[usize], count: usize) -> Result<()> {
    let mut seen = vec![false; count];
    if order.len() != count
        || order
            .iter()
            .any(|&i| i >= count || std::mem::replace(&mut seen[i], true))
    {
        return Err(Error::InvalidValue(format!(
            "overlay order {order:?} is not a permutation of 0..{count}"
        )));
    }
    Ok(())
}

/// Classic back-to-front over-compositing.
pub fn over_composite(layers: &[PlacedLayer], background: &Image, order: &[usize]) -> Image {
    let mut acc: Vec<[f64; 3]> = background.pixels().iter().map(|p| p.map(|c| c as f64)).collect();
    for &li in order.iter().rev() {
        let layer = &layers[li];
        for ((dst, &a), c) in acc.iter_mut().zip(layer.full_alpha.values()).zip(layer.color.pixels()) {
            if a > 0.0 {
                let a = a as f64;
                for ch in 0..3 {
                    dst[ch] = a * c[ch] as f64 + (1.0 - a) * dst[ch];
                }
            }
        }
    }
    let (w, h) = background.dims();
    let pixels: Vec<Rgb> = acc.into_iter().map(|p| p.map(|c| (c as f32).clamp(0.0, 1.0))).collect();
    Image::from_vec_unchecked(w, h, pixels)
}

/// Depth assigned to the plane at overlay position `z` (front is 0).
pub fn depth_for_z(z: usize) -> f64 {
    1.0 + z as f64
}

/// Ground-truth stack and composite. Plane ids equal overlay positions;
/// the background takes id `layers.len()`.
pub fn compose_scene(layers: &[PlacedLayer], background: &Image, order: &[usize]) -> Result<(SceneStack, Image)> {
    check_order(order, layers.len())?;
    for layer in layers {
        if layer.color.dims() != background.dims() {
            return Err(Error::ResolutionMismatch {
                expected: background.dims(),
                actual: layer.color.dims(),
            });
        }
    }
    let (w, h) = background.dims();
    let composite = over_composite(layers, background, order);
    if layers.is_empty() {
        let bg = Plane::background(PlaneId(0), background.clone(), AlphaMatte::filled(w, h, 1.0))?;
        return Ok((SceneStack::new(vec![bg])?, composite));
    }
    let fulls: Vec<&AlphaMatte> = order.iter().map(|&i| &layers[i].full_alpha).collect();
    let (visible, rest) = visible_alphas(&fulls);
    let mut planes = Vec::with_capacity(layers.len() + 1);
    for (z, (&li, vis)) in order.iter().zip(visible).enumerate() {
        let layer = &layers[li];
        planes.push(Plane::from_shared(
            PlaneId(z as u32),
            PlaneKind::Instance,
            layer.color.clone().into(),
            vis.into(),
            layer.footprint.clone().into(),
            depth_for_z(z),
        ));
    }
    planes.push(Plane::background(
        PlaneId(layers.len() as u32),
        background.clone(),
        rest,
    )?);
    Ok((SceneStack::new(planes)?, composite))
}

#[derive(Clone, Debug)]
pub struct ReorderPair {
    pub p: usize,
    pub q: usize,
    pub swapped: Image,
}

/// Composite with the overlay positions `p` and `q` exchanged.
pub fn make_reorder_pair(
    layers: &[PlacedLayer],
    background: &Image,
    order: &[usize],
    p: usize,
    q: usize,
) -> Result<ReorderPair> {
    check_order(order, layers.len())?;
    for z in [p, q] {
        if z >= layers.len() {
            return Err(Error::InvalidTarget(PlaneId(z as u32)));
        }
    }
    if p == q {
        return Err(Error::InvalidValue("reorder targets must differ".into()));
    }
    let mut swapped_order = order.to_vec();
    swapped_order.swap(p, q);
    Ok(ReorderPair {
        p,
        q,
        swapped: over_composite(layers, background, &swapped_order),
    })
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub seed: u64,
    pub background: Image,
    pub layers: Vec<PlacedLayer>,
    pub order: Vec<usize>,
    pub stack: SceneStack,
    pub composite: Image,
    pub reorder: Option<ReorderPair>,
    pub depth_map: DepthMap,
}

/// Per-pixel depth of the most visible plane; the background sits one
/// step behind the last instance.
pub fn scene_depth_map(stack: &SceneStack) -> DepthMap {
    let (w, h) = stack.dims();
    let bg_depth = stack.instance_count() as f64 + 1.0;
    let planes = stack.planes();
    let values = (0..w * h)
        .map(|i| {
            let mut best = planes.len() - 1;
            for (k, p) in planes.iter().enumerate() {
                if p.alpha().values()[i] > planes[best].alpha().values()[i] {
                    best = k;
                }
            }
            let d = planes[best].mean_depth();
            (if d.is_finite() { d } else { bg_depth.max(1.0) }) as f32
        })
        .collect();
    DepthMap::new(w, h, values).expect("plane depths are positive")
}

/// One complete scene: instance count, cutouts, background, placement,
/// overlay order and (optionally) a reorder pair, all drawn from `seed`.
pub fn generate_scene(
    cutouts: &[Cutout],
    backgrounds: &[Image],
    config: &SynthConfig,
    seed: u64,
) -> Result<SyntheticScene> {
    if cutouts.is_empty() || backgrounds.is_empty() {
        return Err(Error::InvalidValue("cutouts and backgrounds must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = config.instances;
    let count = rng.random_range(lo.max(1)..=hi.max(lo.max(1)));
    let chosen: Vec<Cutout> = (0..count)
        .map(|_| cutouts[rng.random_range(0..cutouts.len())].clone())
        .collect();
    let background = backgrounds[rng.random_range(0..backgrounds.len())].clone();
    let placement_seed: u64 = rng.random();
    let Placement { mut layers, order } = place_instances(&chosen, &background, &config.placement, placement_seed)?;
    if let AlphaMode::HardCore { keep_soft_edges } = config.alpha_mode {
        harden_alphas(&mut layers, keep_soft_edges);
    }
    let (stack, composite) = compose_scene(&layers, &background, &order)?;
    let reorder = if config.reorder_pair && layers.len() >= 2 {
        let p = rng.random_range(0..layers.len());
        let mut q = rng.random_range(0..layers.len() - 1);
        if q >= p {
            q += 1;
        }
        Some(make_reorder_pair(&layers, &background, &order, p.min(q), p.max(q))?)
    } else {
        None
    };
    let depth_map = scene_depth_map(&stack);
    Ok(SyntheticScene {
        seed,
        background,
        layers,
        order,
        stack,
        composite,
        reorder,
        depth_map,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Scene counts per split at a 3:1:1 ratio; any remainder goes to train.
pub fn split_counts(count: usize) -> (usize, usize, usize) {
    let val = count / 5;
    let test = count / 5;
    (count - val - test, val, test)
}

/// Split of the `index`-th scene: train first, then val, then test.
pub fn split_of(index: usize, count: usize) -> Split {
    let (train, val, _) = split_counts(count);
    if index < train {
        Split::Train
    } else if index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Independent per-scene seeds drawn from one dataset seed.
pub fn scene_seeds(seed: u64, count: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.random()).collect()
}

/// Procedurally drawn cutouts and backgrounds for demos and tests.
pub mod procedural {
    use super::*;

    fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
        let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
        t * t * (3.0 - 2.0 * t)
    }

    /// Soft-edged ellipse with a two-tone vertical gradient.
    pub fn blob(rng: &mut impl Rng, width: usize, height: usize) -> Cutout {
        let top: Rgb = [rng.random(), rng.random(), rng.random()];
        let bottom: Rgb = [rng.random(), rng.random(), rng.random()];
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let (rx, ry) = (width as f64 / 2.0, height as f64 / 2.0);
        let mut color = Vec::with_capacity(width * height);
        let mut alpha = Vec::with_capacity(width * height);
        for y in 0..height {
            let t = y as f32 / (height.max(2) - 1) as f32;
            for x in 0..width {
                let r = (((x as f64 - cx) / rx).powi(2) + ((y as f64 - cy) / ry).powi(2)).sqrt();
                let edge = 1.5 / rx.min(ry);
                alpha.push((1.0 - smoothstep(1.0 - edge, 1.0, r)) as f32);
                color.push(std::array::from_fn(|c| top[c] * (1.0 - t) + bottom[c] * t));
            }
        }
        Cutout::new(
            format!("blob-{width}x{height}"),
            Image::new(width, height, color).expect("gradient stays in range"),
            AlphaMatte::from_raw(width, height, alpha),
        )
        .expect("ellipse has a centre pixel")
    }

    pub fn cutouts(seed: u64, count: usize, size: (usize, usize)) -> Vec<Cutout> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|i| {
                let w = rng.random_range(size.0 / 2..=size.0).max(3);
                let h = rng.random_range(size.1 / 2..=size.1).max(3);
                let mut c = blob(&mut rng, w, h);
                c.name = format!("blob-{i}");
                c
            })
            .collect()
    }

    pub fn background(rng: &mut impl Rng, width: usize, height: usize) -> Image {
        let corners: [Rgb; 4] = std::array::from_fn(|_| [rng.random(), rng.random(), rng.random()]);
        let mut px = Vec::with_capacity(width * height);
        for y in 0..height {
            let v = y as f32 / (height.max(2) - 1) as f32;
            for x in 0..width {
                let u = x as f32 / (width.max(2) - 1) as f32;
                px.push(std::array::from_fn(|c| {
                    let top = corners[0][c] * (1.0 - u) + corners[1][c] * u;
                    let bot = corners[2][c] * (1.0 - u) + corners[3][c] * u;
                    (top * (1.0 - v) + bot * v).clamp(0.0, 1.0)
                }));
            }
        }
        Image::from_vec_unchecked(width, height, px)
    }

    pub fn backgrounds(seed: u64, count: usize, width: usize, height: usize) -> Vec<Image> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| background(&mut rng, width, height)).collect()
    }

    /// Scene from a fresh procedural asset pool derived from `seed`.
    pub fn scene(seed: u64, width: usize, height: usize, config: &SynthConfig) -> Result<SyntheticScene> {
        let cut = cutouts(seed ^ 0x9e37_79b9, 8, (width / 2, height));
        let bgs = backgrounds(seed ^ 0x7f4a_7c15, 2, width, height);
        generate_scene(&cut, &bgs, config, seed)
    }
}
