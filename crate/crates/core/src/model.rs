//! Image, matte, and plane types plus the depth-sorted layer stack.
//!
//! Planes use straight (non-premultiplied) alpha. A stack renders as the
//! plain sum of `color * alpha` over its planes, so the alphas of a
//! well-formed stack sum to one at every pixel.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [f32; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlaneId(pub u32);

impl fmt::Display for PlaneId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Inclusive pixel rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub left: usize,
    pub top: usize,
    pub right: usize,
    pub bottom: usize,
}

impl Rect {
    pub fn full(width: usize, height: usize) -> Self {
        Rect {
            left: 0,
            top: 0,
            right: width - 1,
            bottom: height - 1,
        }
    }

    pub fn width(&self) -> usize {
        self.right - self.left + 1
    }

    pub fn height(&self) -> usize {
        self.bottom - self.top + 1
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let left = self.left.max(other.left);
        let top = self.top.max(other.top);
        let right = self.right.min(other.right);
        let bottom = self.bottom.min(other.bottom);
        (left <= right && top <= bottom).then_some(Rect {
            left,
            top,
            right,
            bottom,
        })
    }

    pub fn union(&self, other: &Rect) -> Rect {
        Rect {
            left: self.left.min(other.left),
            top: self.top.min(other.top),
            right: self.right.max(other.right),
            bottom: self.bottom.max(other.bottom),
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.left && x <= self.right && y >= self.top && y <= self.bottom
    }
}

fn bbox_of(width: usize, mut inside: impl FnMut(usize) -> bool, len: usize) -> Option<Rect> {
    let mut rect: Option<Rect> = None;
    for i in 0..len {
        if inside(i) {
            let (x, y) = (i % width, i / width);
            rect = Some(match rect {
                None => Rect {
                    left: x,
                    top: y,
                    right: x,
                    bottom: y,
                },
                Some(r) => Rect {
                    left: r.left.min(x),
                    top: r.top.min(y),
                    right: r.right.max(x),
                    bottom: r.bottom.max(y),
                },
            });
        }
    }
    rect
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidValue(format!(
            "resolution must be at least 1x1, got {width}x{height}"
        )));
    }
    if width * height != len {
        return Err(Error::InvalidValue(format!(
            "{width}x{height} grid needs {} values, got {len}",
            width * height
        )));
    }
    Ok(())
}

fn in_unit(v: f32) -> bool {
    (0.0..=1.0).contains(&v)
}

/// Three-channel color image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        check_dims(width, height, pixels.len())?;
        if let Some(i) = pixels.iter().position(|p| !p.iter().all(|&c| in_unit(c))) {
            return Err(Error::InvalidValue(format!(
                "color {:?} at pixel {i} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Image { width, height, pixels })
    }

    /// # Panics
    /// If either dimension is zero or `rgb` is outside `[0, 1]`.
    pub fn filled(width: usize, height: usize, rgb: Rgb) -> Self {
        Image::new(width, height, vec![rgb; width * height]).expect("valid fill")
    }

    pub(crate) fn from_vec_unchecked(width: usize, height: usize, pixels: Vec<Rgb>) -> Self {
        debug_assert_eq!(width * height, pixels.len());
        Image { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [Rgb] {
        &mut self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }
}

/// Per-pixel opacity.
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMatte {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl AlphaMatte {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(i) = values.iter().position(|&v| !in_unit(v)) {
            return Err(Error::InvalidValue(format!(
                "alpha {} at pixel {i} outside [0, 1]",
                values[i]
            )));
        }
        Ok(AlphaMatte { width, height, values })
    }

    /// Builds a matte without range checks, for imported data that
    /// [`validate_stack`] is expected to inspect.
    ///
    /// # Panics
    /// If `values.len() != width * height`.
    pub fn from_raw(width: usize, height: usize, values: Vec<f32>) -> Self {
        assert_eq!(width * height, values.len(), "matte size mismatch");
        AlphaMatte { width, height, values }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        AlphaMatte::from_raw(width, height, vec![0.0; width * height])
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        assert!(in_unit(value), "alpha {value} outside [0, 1]");
        AlphaMatte::from_raw(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    /// Bounding box of `{alpha > 0}`.
    pub fn support_bbox(&self) -> Option<Rect> {
        bbox_of(self.width, |i| self.values[i] > 0.0, self.values.len())
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Binary mask of the pixels where a plane has known content.
#[derive(Clone, Debug, PartialEq)]
pub struct FootprintMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    bbox: Option<Rect>,
}

impl FootprintMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height, bits.len())?;
        let bbox = bbox_of(width, |i| bits[i], bits.len());
        Ok(FootprintMask {
            width,
            height,
            bits,
            bbox,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        FootprintMask {
            width,
            height,
            bits: vec![true; width * height],
            bbox: Some(Rect::full(width, height)),
        }
    }

    /// Footprint of `{alpha > threshold}`.
    pub fn from_alpha(alpha: &AlphaMatte, threshold: f32) -> Self {
        let bits = alpha.values().iter().map(|&a| a > threshold).collect();
        FootprintMask::new(alpha.width(), alpha.height(), bits).expect("dims come from a matte")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn bbox(&self) -> Option<Rect> {
        self.bbox
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Strictly positive scene depth (relative scale is fine).
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(i) = values.iter().position(|&v| !(v.is_finite() && v > 0.0)) {
            return Err(Error::InvalidValue(format!(
                "depth {} at pixel {i} is not positive and finite",
                values[i]
            )));
        }
        Ok(DepthMap { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlaneKind {
    Background,
    Instance,
}

/// One layer of the stack: full-extent color, visible alpha, footprint and
/// mean depth. Pixel buffers are shared between stacks until an edit
/// writes to them.
#[derive(Clone, Debug)]
pub struct Plane {
    id: PlaneId,
    kind: PlaneKind,
    color: Arc<Image>,
    alpha: Arc<AlphaMatte>,
    footprint: Arc<FootprintMask>,
    mean_depth: f64,
}

impl Plane {
    pub fn instance(
        id: PlaneId,
        color: Image,
        alpha: AlphaMatte,
        footprint: FootprintMask,
        mean_depth: f64,
    ) -> Result<Self> {
        if !mean_depth.is_finite() {
            return Err(Error::InvalidValue(format!(
                "instance plane {id} needs a finite depth, got {mean_depth}"
            )));
        }
        let plane = Plane {
            id,
            kind: PlaneKind::Instance,
            color: Arc::new(color),
            alpha: Arc::new(alpha),
            footprint: Arc::new(footprint),
            mean_depth,
        };
        plane.check_shape()?;
        if plane.footprint_violations() > 0 {
            return Err(Error::InvalidValue(format!(
                "plane {id} has positive alpha outside its footprint"
            )));
        }
        Ok(plane)
    }

    /// The background always covers the frame and sits at infinite depth.
    pub fn background(id: PlaneId, color: Image, alpha: AlphaMatte) -> Result<Self> {
        let (w, h) = color.dims();
        let plane = Plane {
            id,
            kind: PlaneKind::Background,
            color: Arc::new(color),
            alpha: Arc::new(alpha),
            footprint: Arc::new(FootprintMask::full(w, h)),
            mean_depth: f64::INFINITY,
        };
        plane.check_shape()?;
        Ok(plane)
    }

    pub(crate) fn from_shared(
        id: PlaneId,
        kind: PlaneKind,
        color: Arc<Image>,
        alpha: Arc<AlphaMatte>,
        footprint: Arc<FootprintMask>,
        mean_depth: f64,
    ) -> Self {
        Plane {
            id,
            kind,
            color,
            alpha,
            footprint,
            mean_depth,
        }
    }

    fn check_shape(&self) -> Result<()> {
        let dims = self.color.dims();
        for other in [self.alpha.dims(), self.footprint.dims()] {
            if other != dims {
                return Err(Error::ResolutionMismatch {
                    expected: dims,
                    actual: other,
                });
            }
        }
        Ok(())
    }

    pub fn id(&self) -> PlaneId {
        self.id
    }

    pub fn kind(&self) -> PlaneKind {
        self.kind
    }

    pub fn is_background(&self) -> bool {
        self.kind == PlaneKind::Background
    }

    pub fn color(&self) -> &Image {
        &self.color
    }

    pub fn alpha(&self) -> &AlphaMatte {
        &self.alpha
    }

    pub fn footprint(&self) -> &FootprintMask {
        &self.footprint
    }

    pub fn mean_depth(&self) -> f64 {
        self.mean_depth
    }

    pub fn dims(&self) -> (usize, usize) {
        self.color.dims()
    }

    pub(crate) fn alpha_mut(&mut self) -> &mut AlphaMatte {
        Arc::make_mut(&mut self.alpha)
    }

    pub(crate) fn set_mean_depth(&mut self, depth: f64) {
        self.mean_depth = depth;
    }

    pub(crate) fn footprint_violations(&self) -> usize {
        self.alpha
            .values()
            .iter()
            .zip(self.footprint.bits())
            .filter(|(&a, &f)| a > 0.0 && !f)
            .count()
    }
}

/// Planes ordered front to back by mean depth, background last.
#[derive(Clone, Debug)]
pub struct SceneStack {
    width: usize,
    height: usize,
    planes: Vec<Plane>,
}

impl SceneStack {
    /// Wraps planes that are already depth-sorted.
    pub fn new(planes: Vec<Plane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidStack("stack has no planes".into()))?;
        let (width, height) = first.dims();
        for p in &planes {
            if p.dims() != (width, height) {
                return Err(Error::ResolutionMismatch {
                    expected: (width, height),
                    actual: p.dims(),
                });
            }
        }
        let backgrounds = planes.iter().filter(|p| p.is_background()).count();
        if backgrounds != 1 || !planes.last().is_some_and(Plane::is_background) {
            return Err(Error::InvalidStack(
                "exactly one background plane is required, in last position".into(),
            ));
        }
        if planes.windows(2).any(|w| w[0].mean_depth > w[1].mean_depth) {
            return Err(Error::InvalidStack("plane depths are not sorted".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = planes.iter().find(|p| !seen.insert(p.id)) {
            return Err(Error::InvalidStack(format!("duplicate plane id {}", dup.id)));
        }
        Ok(SceneStack { width, height, planes })
    }

    /// Sorts by depth first, then validates.
    pub fn from_unsorted(planes: Vec<Plane>) -> Result<Self> {
        SceneStack::new(sort_by_depth(planes))
    }

    pub(crate) fn from_sorted_unchecked(width: usize, height: usize, planes: Vec<Plane>) -> Self {
        SceneStack { width, height, planes }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn instance_count(&self) -> usize {
        self.planes.len() - 1
    }

    pub fn background(&self) -> &Plane {
        self.planes.last().expect("stack always has a background")
    }

    pub fn position_of(&self, id: PlaneId) -> Option<usize> {
        self.planes.iter().position(|p| p.id == id)
    }

    pub fn plane(&self, id: PlaneId) -> Option<&Plane> {
        self.planes.iter().find(|p| p.id == id)
    }

    pub fn plane_ids(&self) -> Vec<PlaneId> {
        self.planes.iter().map(Plane::id).collect()
    }

    /// Bit-level equality of the pixel data, ids, kinds, and depths.
    pub fn same_content(&self, other: &SceneStack) -> bool {
        self.dims() == other.dims()
            && self.planes.len() == other.planes.len()
            && self.planes.iter().zip(&other.planes).all(|(a, b)| {
                a.id == b.id
                    && a.kind == b.kind
                    && a.mean_depth.to_bits() == b.mean_depth.to_bits()
                    && a.color == b.color
                    && a.footprint == b.footprint
                    && a.alpha
                        .values()
                        .iter()
                        .zip(b.alpha.values())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Mean depth over `{alpha > 0}`; `+inf` for the background.
pub fn plane_mean_depth(alpha: &AlphaMatte, depth: &DepthMap, is_background: bool) -> Result<f64> {
    if alpha.dims() != depth.dims() {
        return Err(Error::ResolutionMismatch {
            expected: alpha.dims(),
            actual: depth.dims(),
        });
    }
    if is_background {
        return Ok(f64::INFINITY);
    }
    let (sum, count) = alpha
        .values()
        .iter()
        .zip(depth.values())
        .filter(|(&a, _)| a > 0.0)
        .fold((0.0f64, 0usize), |(s, n), (_, &d)| (s + d as f64, n + 1));
    if count == 0 {
        return Err(Error::EmptyInstance);
    }
    Ok(sum / count as f64)
}

/// Stable ascending sort by mean depth; the background always goes last.
pub fn sort_by_depth(mut planes: Vec<Plane>) -> Vec<Plane> {
    planes.sort_by(|a, b| {
        a.is_background()
            .cmp(&b.is_background())
            .then(a.mean_depth.partial_cmp(&b.mean_depth).unwrap_or(Ordering::Equal))
    });
    planes
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub tolerance: f64,
    pub structure_ok: bool,
    pub depth_order_ok: bool,
    pub alpha_range_violations: usize,
    pub max_alpha_range_excess: f64,
    pub footprint_violations: usize,
    pub max_alpha_sum_deviation: f64,
}

impl ValidationReport {
    pub fn alpha_range_ok(&self) -> bool {
        self.alpha_range_violations == 0
    }

    pub fn footprint_ok(&self) -> bool {
        self.footprint_violations == 0
    }

    pub fn alpha_sum_ok(&self) -> bool {
        self.max_alpha_sum_deviation <= self.tolerance
    }

    pub fn passed(&self) -> bool {
        self.structure_ok && self.depth_order_ok && self.alpha_range_ok() && self.footprint_ok() && self.alpha_sum_ok()
    }
}

pub fn validate_stack(stack: &SceneStack, tolerance: f64) -> ValidationReport {
    let planes = stack.planes();
    let structure_ok = planes.iter().filter(|p| p.is_background()).count() == 1
        && planes.last().is_some_and(Plane::is_background)
        && planes.iter().all(|p| p.dims() == stack.dims());
    let depth_order_ok = planes.windows(2).all(|w| w[0].mean_depth <= w[1].mean_depth);

    let mut alpha_range_violations = 0;
    let mut max_alpha_range_excess = 0.0f64;
    for p in planes {
        for &a in p.alpha().values() {
            let excess = if a < -(tolerance as f32) {
                -(a as f64)
            } else if a as f64 > 1.0 + tolerance {
                a as f64 - 1.0
            } else {
                continue;
            };
            alpha_range_violations += 1;
            max_alpha_range_excess = max_alpha_range_excess.max(excess);
        }
    }
    let footprint_violations = planes.iter().map(Plane::footprint_violations).sum();

    let n = stack.width * stack.height;
    let mut max_alpha_sum_deviation = 0.0f64;
    for i in 0..n {
        let sum: f64 = planes.iter().map(|p| p.alpha().values()[i] as f64).sum();
        max_alpha_sum_deviation = max_alpha_sum_deviation.max((sum - 1.0).abs());
    }

    ValidationReport {
        tolerance,
        structure_ok,
        depth_order_ok,
        alpha_range_violations,
        max_alpha_range_excess,
        footprint_violations,
        max_alpha_sum_deviation,
    }
}
