//! Per-view target/candidate renders encoded as PNG, with a silhouette
//! difference mask, and a cache keyed by annotation revision.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use scanfit_core::cad::CadModel;
use scanfit_core::geometry::{apply_pose, Pose9D};
use scanfit_core::objective::{silhouette_iou, Observation};
use scanfit_core::render::{rasterize, DepthMap, RenderOutput};

use crate::error::{ReviewError, ReviewResult};

/// Base64 PNG images and silhouette agreement for one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub view: usize,
    pub revision: u64,
    pub width: usize,
    pub height: usize,
    /// Depth images hold 16-bit millimeters instead of per-view normalized 8-bit values.
    pub raw: bool,
    pub target_depth_png: String,
    pub target_silhouette_png: String,
    pub candidate_depth_png: String,
    pub candidate_silhouette_png: String,
    /// Pixels inside exactly one silhouette.
    pub difference_png: String,
    pub iou: f64,
    pub target_area: usize,
    pub candidate_area: usize,
    pub difference_area: usize,
    /// Difference area relative to the target silhouette area.
    pub difference_density: f64,
}

fn encode_png(width: usize, height: usize, depth: png::BitDepth, data: &[u8]) -> ReviewResult<String> {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, width as u32, height as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(depth);
        let internal = |e: png::EncodingError| ReviewError::Internal(format!("png encoding: {e}"));
        let mut writer = enc.write_header().map_err(internal)?;
        writer.write_image_data(data).map_err(internal)?;
        writer.finish().map_err(internal)?;
    }
    Ok(STANDARD.encode(bytes))
}

fn mask_png(width: usize, height: usize, mask: impl Iterator<Item = bool>) -> ReviewResult<String> {
    let data: Vec<u8> = mask.map(|m| if m { 255 } else { 0 }).collect();
    encode_png(width, height, png::BitDepth::Eight, &data)
}

fn raw_depth_png(depth: &DepthMap) -> ReviewResult<String> {
    let data: Vec<u8> = depth
        .data()
        .iter()
        .flat_map(|&d| ((d * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16).to_be_bytes())
        .collect();
    encode_png(depth.width(), depth.height(), png::BitDepth::Sixteen, &data)
}

/// Near is bright; invalid pixels are black. `range` is shared by both renders of a view.
fn display_depth_png(depth: &DepthMap, range: (f64, f64)) -> ReviewResult<String> {
    let (lo, hi) = range;
    let data: Vec<u8> = depth
        .data()
        .iter()
        .map(|&d| {
            if d <= 0.0 {
                0
            } else if hi > lo {
                (255.0 - 223.0 * ((d - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8
            } else {
                255
            }
        })
        .collect();
    encode_png(depth.width(), depth.height(), png::BitDepth::Eight, &data)
}

fn valid_range(maps: &[&DepthMap]) -> (f64, f64) {
    maps.iter()
        .flat_map(|m| m.data().iter().copied())
        .filter(|&d| d > 0.0)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)))
}

/// Renders the posed model into `view` next to the stored target.
pub fn render_overlay(
    target: &Observation,
    model: &CadModel,
    pose: &Pose9D,
    view: usize,
    revision: u64,
    raw: bool,
) -> ReviewResult<Overlay> {
    let camera = target
        .views()
        .get(view)
        .ok_or_else(|| ReviewError::NotFound(format!("view {view}")))?;
    let tgt: &RenderOutput = &target.targets()[view];
    let cand = rasterize(&apply_pose(model.mesh(), pose), camera);
    let (w, h) = (tgt.width(), tgt.height());
    let diff: Vec<bool> = tgt
        .silhouette()
        .iter()
        .zip(cand.silhouette())
        .map(|(a, b)| a != b)
        .collect();
    let difference_area = diff.iter().filter(|&&d| d).count();
    let target_area = tgt.silhouette_area();
    let (target_depth_png, candidate_depth_png) = if raw {
        (raw_depth_png(tgt.depth())?, raw_depth_png(cand.depth())?)
    } else {
        let range = valid_range(&[tgt.depth(), cand.depth()]);
        (
            display_depth_png(tgt.depth(), range)?,
            display_depth_png(cand.depth(), range)?,
        )
    };
    Ok(Overlay {
        view,
        revision,
        width: w,
        height: h,
        raw,
        target_depth_png,
        target_silhouette_png: mask_png(w, h, tgt.silhouette().iter().copied())?,
        candidate_depth_png,
        candidate_silhouette_png: mask_png(w, h, cand.silhouette().iter().copied())?,
        difference_png: mask_png(w, h, diff.iter().copied())?,
        iou: silhouette_iou(tgt, &cand)?,
        target_area,
        candidate_area: cand.silhouette_area(),
        difference_area,
        difference_density: difference_area as f64 / target_area.max(1) as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct OverlayKey {
    pub scene_id: String,
    pub instance_id: String,
    pub view: usize,
    pub revision: u64,
    pub raw: bool,
}

/// Overlay cache safe for concurrent lookups and inserts. Inserting a newer
/// revision drops the older ones of the same annotation.
#[derive(Default)]
pub struct OverlayCache {
    entries: RwLock<HashMap<OverlayKey, Arc<Overlay>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: usize,
}

impl OverlayCache {
    pub fn get(&self, key: &OverlayKey) -> Option<Arc<Overlay>> {
        let found = self.entries.read().unwrap_or_else(|p| p.into_inner()).get(key).cloned();
        let counter = if found.is_some() { &self.hits } else { &self.misses };
        counter.fetch_add(1, Ordering::Relaxed);
        found
    }

    pub fn insert(&self, key: OverlayKey, overlay: Arc<Overlay>) {
        let mut entries = self.entries.write().unwrap_or_else(|p| p.into_inner());
        entries.retain(|k, _| {
            !(k.scene_id == key.scene_id && k.instance_id == key.instance_id && k.revision < key.revision)
        });
        entries.insert(key, overlay);
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            entries: self.entries.read().unwrap_or_else(|p| p.into_inner()).len(),
        }
    }
}
