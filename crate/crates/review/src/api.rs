//! HTTP routes over a set of review sessions.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, Request, State};
use axum::http::header::{AUTHORIZATION, CONTENT_TYPE};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;

use scanfit_core::pipeline::Status;

use crate::error::{ReviewError, ReviewResult};
use crate::overlay::{render_overlay, CacheStats, Overlay, OverlayCache, OverlayKey};
use crate::session::{
    parse_annotation_id, AnnotationSummary, AnnotationView, JournalEntry, Op, ReviewSession, SceneSummary,
};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Static bearer token; requests need it when set.
    pub token: Option<String>,
    pub refine_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            token: None,
            refine_timeout: Duration::from_secs(60),
        }
    }
}

struct SceneSlot {
    /// Serializes mutations of the scene; held across the computation.
    writer: tokio::sync::Mutex<()>,
    session: RwLock<ReviewSession>,
}

pub struct ReviewService {
    scenes: BTreeMap<String, Arc<SceneSlot>>,
    cache: OverlayCache,
    cfg: ServiceConfig,
}

fn poisoned<T>(_: T) -> ReviewError {
    ReviewError::Internal("scene lock poisoned".into())
}

impl ReviewService {
    pub fn new(cfg: ServiceConfig) -> Self {
        ReviewService {
            scenes: BTreeMap::new(),
            cache: OverlayCache::default(),
            cfg,
        }
    }

    pub fn add_session(&mut self, session: ReviewSession) -> ReviewResult<()> {
        let id = session.scene_id().to_string();
        if self.scenes.contains_key(&id) {
            return Err(ReviewError::InvalidRequest(format!("scene {id} loaded twice")));
        }
        let slot = SceneSlot {
            writer: tokio::sync::Mutex::new(()),
            session: RwLock::new(session),
        };
        self.scenes.insert(id, Arc::new(slot));
        Ok(())
    }

    pub fn cache_stats(&self) -> CacheStats {
        self.cache.stats()
    }

    fn slot(&self, scene_id: &str) -> ReviewResult<&Arc<SceneSlot>> {
        self.scenes
            .get(scene_id)
            .ok_or_else(|| ReviewError::NotFound(format!("scene {scene_id}")))
    }

    /// Runs `f` on a consistent snapshot of the scene.
    pub fn read<T>(&self, scene_id: &str, f: impl FnOnce(&ReviewSession) -> ReviewResult<T>) -> ReviewResult<T> {
        let slot = self.slot(scene_id)?;
        let session = slot.session.read().map_err(poisoned)?;
        f(&session)
    }

    pub fn scenes(&self) -> ReviewResult<Vec<SceneSummary>> {
        self.scenes
            .values()
            .map(|slot| Ok(slot.session.read().map_err(poisoned)?.summary()))
            .collect()
    }

    pub fn overlay(&self, annotation_id: &str, view: usize, raw: bool) -> ReviewResult<Arc<Overlay>> {
        let (scene_id, instance_id) = parse_annotation_id(annotation_id)?;
        let (target, model, pose, revision) = self.read(scene_id, |s| s.overlay_inputs(instance_id, view))?;
        let key = OverlayKey {
            scene_id: scene_id.to_string(),
            instance_id: instance_id.to_string(),
            view,
            revision,
            raw,
        };
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        let overlay = Arc::new(render_overlay(&target, &model, &pose, view, revision, raw)?);
        self.cache.insert(key, overlay.clone());
        Ok(overlay)
    }

    /// Plans under the read lock, computes off the async runtime, commits under the write lock.
    pub async fn mutate(&self, annotation_id: &str, expected_revision: u64, op: Op) -> ReviewResult<AnnotationView> {
        let (scene_id, instance_id) = parse_annotation_id(annotation_id)?;
        let slot = self.slot(scene_id)?;
        let _writer = slot.writer.lock().await;
        let job = slot.session.read().map_err(poisoned)?.plan(JournalEntry {
            instance_id: instance_id.to_string(),
            expected_revision,
            op,
        })?;
        let deadline = Instant::now() + self.cfg.refine_timeout;
        let outcome = tokio::task::spawn_blocking(move || job.run(Some(deadline)))
            .await
            .map_err(|e| ReviewError::Internal(format!("worker failed: {e}")))??;
        if outcome.timed_out {
            tracing::warn!(
                annotation = annotation_id,
                "refinement hit the deadline; keeping best so far"
            );
        }
        let view = slot.session.write().map_err(poisoned)?.commit(outcome)?;
        Ok(view)
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> ReviewResult<T> {
    serde_json::from_slice(body).map_err(|e| ReviewError::InvalidRequest(format!("request body: {e}")))
}

fn parse_raw(query: Option<String>) -> ReviewResult<bool> {
    let mut raw = false;
    for pair in query.as_deref().unwrap_or("").split('&').filter(|p| !p.is_empty()) {
        let (k, v) = pair.split_once('=').unwrap_or((pair, "true"));
        if k != "raw" {
            return Err(ReviewError::InvalidRequest(format!("unknown query parameter {k}")));
        }
        raw = match v {
            "true" | "1" => true,
            "false" | "0" => false,
            other => {
                return Err(ReviewError::InvalidRequest(format!(
                    "raw must be a boolean, got {other}"
                )))
            }
        };
    }
    Ok(raw)
}

type Svc = State<Arc<ReviewService>>;

async fn list_scenes(State(svc): Svc) -> ReviewResult<Json<Vec<SceneSummary>>> {
    Ok(Json(svc.scenes()?))
}

async fn list_annotations(State(svc): Svc, Path(id): Path<String>) -> ReviewResult<Json<Vec<AnnotationSummary>>> {
    Ok(Json(svc.read(&id, |s| Ok(s.summaries()))?))
}

async fn export(State(svc): Svc, Path(id): Path<String>) -> ReviewResult<Response> {
    let text = svc.read(&id, |s| Ok(s.store().to_json()))?;
    Ok(([(CONTENT_TYPE, "application/json")], text).into_response())
}

async fn journal(State(svc): Svc, Path(id): Path<String>) -> ReviewResult<Json<Vec<JournalEntry>>> {
    Ok(Json(svc.read(&id, |s| Ok(s.journal().to_vec()))?))
}

async fn get_annotation(State(svc): Svc, Path(id): Path<String>) -> ReviewResult<Json<AnnotationView>> {
    let (scene_id, instance_id) = parse_annotation_id(&id)?;
    Ok(Json(svc.read(scene_id, |s| s.annotation(instance_id))?))
}

async fn overlay(
    State(svc): Svc,
    Path((id, view)): Path<(String, String)>,
    RawQuery(query): RawQuery,
) -> ReviewResult<Json<Overlay>> {
    let view: usize = view
        .parse()
        .map_err(|_| ReviewError::InvalidRequest(format!("view index {view:?} is not a number")))?;
    let raw = parse_raw(query)?;
    let svc2 = svc.clone();
    let overlay = tokio::task::spawn_blocking(move || svc2.overlay(&id, view, raw))
        .await
        .map_err(|e| ReviewError::Internal(format!("worker failed: {e}")))??;
    Ok(Json((*overlay).clone()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RotateRequest {
    degrees: u32,
    expected_revision: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SwapRequest {
    cad_id: String,
    #[serde(default)]
    override_class: bool,
    expected_revision: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RefineRequest {
    expected_revision: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StatusRequest {
    status: Status,
    expected_revision: u64,
}

async fn rotate(State(svc): Svc, Path(id): Path<String>, body: Bytes) -> ReviewResult<Json<AnnotationView>> {
    let req: RotateRequest = parse_body(&body)?;
    let op = Op::Rotate { degrees: req.degrees };
    Ok(Json(svc.mutate(&id, req.expected_revision, op).await?))
}

async fn swap(State(svc): Svc, Path(id): Path<String>, body: Bytes) -> ReviewResult<Json<AnnotationView>> {
    let req: SwapRequest = parse_body(&body)?;
    let op = Op::Swap {
        cad_id: req.cad_id,
        override_class: req.override_class,
    };
    Ok(Json(svc.mutate(&id, req.expected_revision, op).await?))
}

async fn refine(State(svc): Svc, Path(id): Path<String>, body: Bytes) -> ReviewResult<Json<AnnotationView>> {
    let req: RefineRequest = parse_body(&body)?;
    Ok(Json(
        svc.mutate(&id, req.expected_revision, Op::Refine { steps: None })
            .await?,
    ))
}

async fn set_status(State(svc): Svc, Path(id): Path<String>, body: Bytes) -> ReviewResult<Json<AnnotationView>> {
    let req: StatusRequest = parse_body(&body)?;
    let op = Op::Status { status: req.status };
    Ok(Json(svc.mutate(&id, req.expected_revision, op).await?))
}

async fn require_token(State(svc): Svc, request: Request, next: Next) -> Response {
    if let Some(token) = &svc.cfg.token {
        let presented = request
            .headers()
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ReviewError::Unauthorized.into_response();
        }
    }
    next.run(request).await
}

async fn not_found() -> ReviewError {
    ReviewError::NotFound("route".into())
}

pub fn router(service: Arc<ReviewService>) -> Router {
    Router::new()
        .route("/scenes", get(list_scenes))
        .route("/scenes/{id}/annotations", get(list_annotations))
        .route("/scenes/{id}/export", get(export))
        .route("/scenes/{id}/journal", get(journal))
        .route("/annotations/{id}", get(get_annotation))
        .route("/annotations/{id}/overlay/{view}", get(overlay))
        .route("/annotations/{id}/rotate", post(rotate))
        .route("/annotations/{id}/swap", post(swap))
        .route("/annotations/{id}/refine", post(refine))
        .route("/annotations/{id}/status", post(set_status))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(service.clone(), require_token))
        .with_state(service)
}
