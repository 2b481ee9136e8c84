//! Review service for pipeline annotations: overlays, manual fixes and a
//! replayable journal, served over HTTP/JSON.

pub mod api;
pub mod error;
pub mod overlay;
pub mod session;

pub use api::{router, ReviewService, ServiceConfig};
pub use error::{ErrorBody, ReviewError, ReviewResult};
pub use overlay::{render_overlay, CacheStats, Overlay, OverlayCache};
pub use session::{annotation_id, AnnotationSummary, AnnotationView, JournalEntry, Op, ReviewSession, SessionConfig};
