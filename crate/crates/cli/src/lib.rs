//! Command-line and HTTP front ends for `mpstack`.

pub mod eval;
pub mod http;
pub mod opspec;

pub use http::{router, AppState};
pub use opspec::OpSpec;
