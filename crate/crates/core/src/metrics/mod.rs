//! Point-set distances: chamfer over a kd-tree index and Earth Mover's Distance.

mod chamfer;
mod emd;
mod kdtree;

pub use chamfer::{chamfer, chamfer_with, one_sided, symmetric_indexed, ChamferDirection, ChamferResult, DistanceKind};
pub use emd::{auction, emd, hungarian, EmdMode, EmdResult, EXACT_EMD_CAP};
pub use kdtree::{squared_distance, KdTree};
