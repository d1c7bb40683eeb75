//! Rendering and layer-stack edits: removal, occlusion reordering, and
//! dragging.
//!
//! Every edit is a pure stack-to-stack transform. Color planes are never
//! touched; edits only move alpha between planes, so the per-pixel alpha
//! sum of a stack is preserved.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AlphaMatte, FootprintMask, Image, Plane, PlaneId, PlaneKind, Rect, SceneStack};
use crate::resample::{warp_patch, Affine};

/// Resampled alpha at or below this is treated as empty.
pub const FOOTPRINT_THRESHOLD: f32 = 1e-4;
pub const MAX_SCALE: f64 = 8.0;

/// `I = sum(color * alpha)` over all planes, clamped to `[0, 1]`.
pub fn render(stack: &SceneStack) -> Image {
    let (w, h) = stack.dims();
    let planes = stack.planes();
    let mut out = vec![[0.0f32; 3]; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, px) in row.iter_mut().enumerate() {
            let i = y * w + x;
            let mut acc = [0.0f64; 3];
            for p in planes {
                let a = p.alpha().values()[i];
                if a != 0.0 {
                    let c = p.color().pixels()[i];
                    for ch in 0..3 {
                        acc[ch] += a as f64 * c[ch] as f64;
                    }
                }
            }
            *px = acc.map(|v| (v as f32).clamp(0.0, 1.0));
        }
    });
    Image::from_vec_unchecked(w, h, out)
}

fn instance_position(stack: &SceneStack, id: PlaneId) -> Result<usize> {
    let pos = stack.position_of(id).ok_or(Error::UnknownPlane(id))?;
    if stack.planes()[pos].is_background() {
        return Err(Error::InvalidTarget(id));
    }
    Ok(pos)
}

fn rect_pixels(rect: Rect, width: usize) -> impl Iterator<Item = usize> {
    (rect.top..=rect.bottom).flat_map(move |y| (rect.left..=rect.right).map(move |x| y * width + x))
}

/// Drops instance `j`, handing each of its visible alpha values to the
/// nearest plane behind it whose footprint covers the pixel (the
/// background covers everything).
pub fn remove_instance(stack: &SceneStack, j: PlaneId) -> Result<SceneStack> {
    remove_with_targets(stack, j).map(|(s, _)| s)
}

fn remove_with_targets(stack: &SceneStack, j: PlaneId) -> Result<(SceneStack, Vec<PlaneId>)> {
    let pos = instance_position(stack, j)?;
    let (w, h) = stack.dims();
    let mut planes = stack.planes().to_vec();
    let removed = planes.remove(pos);
    let mut affected = vec![j];
    let Some(bbox) = removed.footprint().bbox() else {
        return Ok((SceneStack::from_sorted_unchecked(w, h, planes), affected));
    };

    let behind = &planes[pos..];
    let candidates: Vec<usize> = behind
        .iter()
        .enumerate()
        .filter(|(_, p)| p.footprint().bbox().is_some_and(|b| b.intersect(&bbox).is_some()))
        .map(|(k, _)| k)
        .collect();
    let alpha_j = removed.alpha().values();
    let mut transfers: Vec<Vec<usize>> = vec![Vec::new(); behind.len()];
    for i in rect_pixels(bbox, w) {
        if alpha_j[i] > 0.0 {
            let target = candidates
                .iter()
                .copied()
                .find(|&k| behind[k].footprint().bits()[i])
                .unwrap_or(behind.len() - 1);
            transfers[target].push(i);
        }
    }
    for (k, pixels) in transfers.iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let plane = &mut planes[pos + k];
        affected.push(plane.id());
        let alpha = plane.alpha_mut().values_mut();
        for &i in pixels {
            alpha[i] = (alpha[i] + alpha_j[i]).min(1.0);
        }
    }
    Ok((SceneStack::from_sorted_unchecked(w, h, planes), affected))
}

/// Exchanges alphas on the footprint intersection, then the two planes'
/// stack positions. Depths stay with positions, so the stack stays sorted.
/// Returns whether any alpha moved.
fn swap_in_place(planes: &mut [Plane], width: usize, ia: usize, ib: usize) -> bool {
    let region = match (planes[ia].footprint().bbox(), planes[ib].footprint().bbox()) {
        (Some(a), Some(b)) => a.intersect(&b),
        _ => None,
    };
    let mut changed = false;
    if let Some(region) = region {
        let overlap: Vec<usize> = rect_pixels(region, width)
            .filter(|&i| planes[ia].footprint().bits()[i] && planes[ib].footprint().bits()[i])
            .collect();
        let differs = overlap
            .iter()
            .any(|&i| planes[ia].alpha().values()[i] != planes[ib].alpha().values()[i]);
        if differs {
            let (lo, hi) = (ia.min(ib), ia.max(ib));
            let (head, tail) = planes.split_at_mut(hi);
            let a = head[lo].alpha_mut().values_mut();
            let b = tail[0].alpha_mut().values_mut();
            for &i in &overlap {
                std::mem::swap(&mut a[i], &mut b[i]);
            }
            changed = true;
        }
    }
    let (da, db) = (planes[ia].mean_depth(), planes[ib].mean_depth());
    planes.swap(ia, ib);
    planes[ia].set_mean_depth(da);
    planes[ib].set_mean_depth(db);
    changed
}

pub fn swap_planes(stack: &SceneStack, a: PlaneId, b: PlaneId) -> Result<SceneStack> {
    let ia = instance_position(stack, a)?;
    let ib = instance_position(stack, b)?;
    if ia == ib {
        return Err(Error::InvalidValue("cannot swap a plane with itself".into()));
    }
    let mut planes = stack.planes().to_vec();
    swap_in_place(&mut planes, stack.width(), ia, ib);
    Ok(SceneStack::from_sorted_unchecked(stack.width(), stack.height(), planes))
}

/// Moves `q` in front of `p` by adjacent swaps: `p` steps back past every
/// plane up to and including `q`, then `q` steps forward past the planes
/// that were originally between them.
pub fn reorder(stack: &SceneStack, p: PlaneId, q: PlaneId) -> Result<SceneStack> {
    reorder_with_changes(stack, p, q).map(|(s, _)| s)
}

fn reorder_with_changes(stack: &SceneStack, p: PlaneId, q: PlaneId) -> Result<(SceneStack, Vec<PlaneId>)> {
    let pp = instance_position(stack, p)?;
    let pq = instance_position(stack, q)?;
    if pp == pq {
        return Err(Error::InvalidValue("reorder targets must differ".into()));
    }
    if pp > pq {
        return Err(Error::OrderViolation { p, q });
    }
    let width = stack.width();
    let mut planes = stack.planes().to_vec();
    let passed: Vec<PlaneId> = planes[pp + 1..=pq].iter().map(Plane::id).collect();
    let position = |planes: &[Plane], id: PlaneId| planes.iter().position(|pl| pl.id() == id).expect("id present");

    let mut affected = vec![p, q];
    for &other in &passed {
        let (ia, ib) = (position(&planes, p), position(&planes, other));
        if swap_in_place(&mut planes, width, ia, ib) && other != q {
            affected.push(other);
        }
    }
    for &other in passed[..passed.len() - 1].iter().rev() {
        let (ia, ib) = (position(&planes, q), position(&planes, other));
        if swap_in_place(&mut planes, width, ia, ib) && !affected.contains(&other) {
            affected.push(other);
        }
    }
    Ok((
        SceneStack::from_sorted_unchecked(width, stack.height(), planes),
        affected,
    ))
}

/// A plane cut down to the bounding box of its positive alpha.
#[derive(Clone, Debug, PartialEq)]
pub struct CroppedPlane {
    pub id: PlaneId,
    /// Location of the crop in the source frame.
    pub rect: Rect,
    pub color: Image,
    pub alpha: AlphaMatte,
}

impl CroppedPlane {
    pub fn position(&self) -> Position {
        Position {
            x: self.rect.left as f64,
            y: self.rect.top as f64,
        }
    }
}

pub fn crop_instance(plane: &Plane) -> Result<CroppedPlane> {
    let rect = plane.alpha().support_bbox().ok_or(Error::EmptyInstance)?;
    let w = plane.dims().0;
    let mut color = Vec::with_capacity(rect.width() * rect.height());
    let mut alpha = Vec::with_capacity(rect.width() * rect.height());
    for i in rect_pixels(rect, w) {
        color.push(plane.color().pixels()[i]);
        alpha.push(plane.alpha().values()[i]);
    }
    Ok(CroppedPlane {
        id: plane.id(),
        rect,
        color: Image::from_vec_unchecked(rect.width(), rect.height(), color),
        alpha: AlphaMatte::from_raw(rect.width(), rect.height(), alpha),
    })
}

/// Top-left corner of a pasted crop in target pixel coordinates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

/// Scale and rotation about the crop centre, then a translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Transform2D {
    pub translation: (f64, f64),
    pub scale: f64,
    pub rotation_deg: f64,
}

impl Default for Transform2D {
    fn default() -> Self {
        Transform2D::identity()
    }
}

impl Transform2D {
    pub fn identity() -> Self {
        Transform2D {
            translation: (0.0, 0.0),
            scale: 1.0,
            rotation_deg: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.translation.0.is_finite() && self.translation.1.is_finite() && self.rotation_deg.is_finite();
        if !finite || !(self.scale > 0.0 && self.scale <= MAX_SCALE) {
            return Err(Error::InvalidValue(format!(
                "transform needs finite values and scale in (0, {MAX_SCALE}], got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A crop warped into a full frame: zero everywhere except the pasted area.
#[derive(Clone, Debug)]
pub struct PlacedPlane {
    pub color: Image,
    pub alpha: AlphaMatte,
    pub footprint: FootprintMask,
}

pub fn place_crop(
    crop: &CroppedPlane,
    (width, height): (usize, usize),
    position: Position,
    transform: &Transform2D,
) -> Result<PlacedPlane> {
    transform.validate()?;
    if !(position.x.is_finite() && position.y.is_finite()) {
        return Err(Error::InvalidValue("position must be finite".into()));
    }
    let (cw, ch) = crop.color.dims();
    let center = ((cw as f64 - 1.0) / 2.0, (ch as f64 - 1.0) / 2.0);
    let offset = (
        position.x + transform.translation.0,
        position.y + transform.translation.1,
    );
    let forward = Affine::about_center(center, transform.scale, transform.rotation_deg, offset);
    let warped = warp_patch(
        crop.color.pixels(),
        crop.alpha.values(),
        (cw, ch),
        (width, height),
        &forward,
        FOOTPRINT_THRESHOLD,
    );
    let alpha = AlphaMatte::from_raw(width, height, warped.alpha);
    let footprint = FootprintMask::from_alpha(&alpha, 0.0);
    if footprint.bbox().is_none() {
        return Err(Error::PlacementFailure(format!(
            "plane {} lands entirely outside the {width}x{height} frame",
            crop.id
        )));
    }
    Ok(PlacedPlane {
        color: Image::from_vec_unchecked(width, height, warped.color),
        alpha,
        footprint,
    })
}

/// `I' = c' a' + (1 - a') I`. Pixels with `a' = 0` are copied untouched.
pub fn drag_across(crop: &CroppedPlane, target: &Image, position: Position, transform: &Transform2D) -> Result<Image> {
    let placed = place_crop(crop, target.dims(), position, transform)?;
    let mut out = target.clone();
    let bbox = placed.footprint.bbox().expect("placement is non-empty");
    let pixels = out.pixels_mut();
    for i in rect_pixels(bbox, target.width()) {
        let a = placed.alpha.values()[i];
        if a > 0.0 {
            let c = placed.color.pixels()[i];
            let a = a as f64;
            pixels[i] = std::array::from_fn(|ch| {
                ((c[ch] as f64 * a + (1.0 - a) * pixels[i][ch] as f64) as f32).clamp(0.0, 1.0)
            });
        }
    }
    Ok(out)
}

/// Removal followed by pasting the plane's own crop back onto the result.
pub fn drag_within(stack: &SceneStack, j: PlaneId, position: Position, transform: &Transform2D) -> Result<Image> {
    let pos = instance_position(stack, j)?;
    let crop = crop_instance(&stack.planes()[pos])?;
    let background = render(&remove_instance(stack, j)?);
    drag_across(&crop, &background, position, transform)
}

/// Stack form of pasting: the crop becomes the new front plane and every
/// other plane's alpha is scaled by `1 - a'`. Renders like [`drag_across`]
/// applied to `render(stack)`.
pub fn paste_plane(
    stack: &SceneStack,
    crop: &CroppedPlane,
    id: PlaneId,
    position: Position,
    transform: &Transform2D,
    depth_hint: Option<f64>,
) -> Result<SceneStack> {
    paste_with_changes(stack, crop, id, position, transform, depth_hint).map(|(s, _)| s)
}

fn paste_with_changes(
    stack: &SceneStack,
    crop: &CroppedPlane,
    id: PlaneId,
    position: Position,
    transform: &Transform2D,
    depth_hint: Option<f64>,
) -> Result<(SceneStack, Vec<PlaneId>)> {
    if stack.position_of(id).is_some() {
        return Err(Error::InvalidValue(format!("plane id {id} is already in use")));
    }
    let (w, h) = stack.dims();
    let placed = place_crop(crop, (w, h), position, transform)?;
    let bbox = placed.footprint.bbox().expect("placement is non-empty");
    let mut planes = stack.planes().to_vec();
    let mut affected = vec![id];
    let new_alpha = placed.alpha.values();
    for plane in planes.iter_mut() {
        let touches = plane
            .footprint()
            .bbox()
            .and_then(|b| b.intersect(&bbox))
            .is_some_and(|r| rect_pixels(r, w).any(|i| new_alpha[i] > 0.0 && plane.alpha().values()[i] > 0.0));
        if !touches {
            continue;
        }
        affected.push(plane.id());
        let alpha = plane.alpha_mut().values_mut();
        for i in rect_pixels(bbox, w) {
            let a = new_alpha[i];
            if a > 0.0 {
                alpha[i] = (alpha[i] as f64 * (1.0 - a as f64)) as f32;
            }
        }
    }
    let front = planes.first().filter(|p| !p.is_background()).map(Plane::mean_depth);
    let depth = match (front, depth_hint) {
        (Some(f), Some(d)) => f.min(d),
        (Some(f), None) => f,
        (None, Some(d)) => d,
        (None, None) => 1.0,
    };
    let color: Arc<Image> = Arc::new(placed.color);
    planes.insert(
        0,
        Plane::from_shared(
            id,
            PlaneKind::Instance,
            color,
            Arc::new(placed.alpha),
            Arc::new(placed.footprint),
            depth,
        ),
    );
    Ok((SceneStack::from_sorted_unchecked(w, h, planes), affected))
}

/// Stack form of [`drag_within`]: remove `j`, then paste its crop back as
/// the new front plane under the same id.
pub fn drag_within_stack(
    stack: &SceneStack,
    j: PlaneId,
    position: Position,
    transform: &Transform2D,
) -> Result<SceneStack> {
    drag_within_changes(stack, j, position, transform).map(|(s, _)| s)
}

fn drag_within_changes(
    stack: &SceneStack,
    j: PlaneId,
    position: Position,
    transform: &Transform2D,
) -> Result<(SceneStack, Vec<PlaneId>)> {
    let pos = instance_position(stack, j)?;
    let plane = &stack.planes()[pos];
    let crop = crop_instance(plane)?;
    let depth = plane.mean_depth();
    let (removed, mut affected) = remove_with_targets(stack, j)?;
    let (pasted, more) = paste_with_changes(&removed, &crop, j, position, transform, Some(depth))?;
    for id in more {
        if !affected.contains(&id) {
            affected.push(id);
        }
    }
    Ok((pasted, affected))
}

/// External background-inpainting provider. The engine never inpaints on
/// its own.
pub trait InpaintProvider: Send + Sync {
    fn inpaint(&self, region: &FootprintMask, image: &Image) -> std::result::Result<Image, String>;
}

/// Delegates to `provider`, or returns `image` unchanged when none is set.
pub fn inpaint_hook(provider: Option<&dyn InpaintProvider>, region: &FootprintMask, image: &Image) -> Result<Image> {
    match provider {
        None => Ok(image.clone()),
        Some(p) => {
            let out = p.inpaint(region, image).map_err(Error::InpaintUnavailable)?;
            if out.dims() != image.dims() {
                return Err(Error::InpaintUnavailable(format!(
                    "provider returned {:?}, expected {:?}",
                    out.dims(),
                    image.dims()
                )));
            }
            Ok(out)
        }
    }
}

/// Pixels of plane `j` with positive visible alpha, i.e. what removal uncovers.
pub fn removal_region(stack: &SceneStack, j: PlaneId) -> Result<FootprintMask> {
    let pos = instance_position(stack, j)?;
    Ok(FootprintMask::from_alpha(stack.planes()[pos].alpha(), 0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub enum EditOp {
    Remove {
        plane: PlaneId,
    },
    Reorder {
        p: PlaneId,
        q: PlaneId,
    },
    DragWithin {
        plane: PlaneId,
        position: Position,
        transform: Transform2D,
    },
    /// Pastes a crop taken from another stack as a new front plane.
    DragAcross {
        source: Arc<CroppedPlane>,
        position: Position,
        transform: Transform2D,
    },
}

impl EditOp {
    pub fn name(&self) -> &'static str {
        match self {
            EditOp::Remove { .. } => "remove",
            EditOp::Reorder { .. } => "reorder",
            EditOp::DragWithin { .. } => "drag_within",
            EditOp::DragAcross { .. } => "drag_across",
        }
    }
}

#[derive(Clone, Debug)]
pub struct EditOutcome {
    pub stack: SceneStack,
    /// Planes whose alpha changed, plus the planes named by the op.
    pub affected: Vec<PlaneId>,
}

pub fn apply_op(stack: &SceneStack, op: &EditOp) -> Result<EditOutcome> {
    let (stack, affected) = match op {
        EditOp::Remove { plane } => remove_with_targets(stack, *plane)?,
        EditOp::Reorder { p, q } => reorder_with_changes(stack, *p, *q)?,
        EditOp::DragWithin {
            plane,
            position,
            transform,
        } => drag_within_changes(stack, *plane, *position, transform)?,
        EditOp::DragAcross {
            source,
            position,
            transform,
        } => {
            let id = PlaneId(stack.planes().iter().map(|p| p.id().0).max().unwrap_or(0) + 1);
            paste_with_changes(stack, source, id, *position, transform, None)?
        }
    };
    Ok(EditOutcome { stack, affected })
}

/// Applies `ops` in order starting from `base`.
pub fn replay<'a>(base: &SceneStack, ops: impl IntoIterator<Item = &'a EditOp>) -> Result<SceneStack> {
    let mut stack = base.clone();
    for op in ops {
        stack = apply_op(&stack, op)?.stack;
    }
    Ok(stack)
}

/// Max per-channel absolute difference.
pub fn max_abs_diff(a: &Image, b: &Image) -> f32 {
    a.pixels()
        .iter()
        .zip(b.pixels())
        .flat_map(|(x, y)| (0..3).map(move |c| (x[c] - y[c]).abs()))
        .fold(0.0, f32::max)
}
