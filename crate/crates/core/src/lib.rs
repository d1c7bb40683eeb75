//! Layered instance-aware scene stacks for image editing.
//!
//! A [`SceneStack`] holds one plane per object instance plus a background,
//! ordered front to back by depth. Rendering accumulates each plane's color
//! weighted by its visible alpha. Editing operations (removal, reordering,
//! dragging) rewrite alphas on the affected planes only.

pub mod edit;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
mod resample;
pub mod service;
pub mod sgmp;
pub mod synth;

pub use edit::{apply_op, render, EditOp, EditOutcome, Position, Transform2D};
pub use error::{Error, Result};
pub use model::{
    validate_stack, AlphaMatte, DepthMap, FootprintMask, Image, Plane, PlaneId, PlaneKind, Rect, Rgb, SceneStack,
    ValidationReport,
};
