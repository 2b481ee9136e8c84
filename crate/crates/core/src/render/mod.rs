//! Software pinhole rasterizer for render-and-compare.

mod camera;
pub mod pgm;
mod raster;

pub use camera::{backproject, CameraView, Intrinsics};
pub use raster::{rasterize, render_target_views, DepthMap, PixelRect, RenderOutput, NEAR_PLANE};

/// Render size used by search and refinement unless configured otherwise.
pub const DEFAULT_WIDTH: usize = 192;
pub const DEFAULT_HEIGHT: usize = 144;
