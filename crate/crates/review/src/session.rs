//! One scene under review: the annotation store, its journal and the
//! observations needed to rescore edits.
//!
//! A mutation is planned against the store, run without holding any lock, and
//! committed. Replaying the journal from the initial file goes through the same
//! three steps, so a replayed store serializes to the same bytes.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use scanfit_core::cad::{CadDatabase, CadModel};
use scanfit_core::geometry::Pose9D;
use scanfit_core::objective::{rc_score, Observation, RcScore, RcWeights, DEFAULT_MAX_SCAN_POINTS};
use scanfit_core::pipeline::{observe_object, Annotation, AnnotationFile, Status};
use scanfit_core::refine::{refine_until, RefineConfig};
use scanfit_core::scene::Scene;

use crate::error::{ReviewError, ReviewResult};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub weights: RcWeights,
    /// Budget for reviewer-triggered refinement.
    pub refine: RefineConfig,
    pub max_scan_points: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            weights: RcWeights::default(),
            refine: RefineConfig::default(),
            max_scan_points: DEFAULT_MAX_SCAN_POINTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    Rotate {
        degrees: u32,
    },
    Swap {
        cad_id: String,
        #[serde(default)]
        override_class: bool,
    },
    /// `steps` is filled in when the entry is journaled: the budget, or the
    /// steps actually taken when the deadline cut the run short.
    Refine {
        #[serde(default)]
        steps: Option<usize>,
    },
    Status {
        status: Status,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub instance_id: String,
    pub expected_revision: u64,
    #[serde(flatten)]
    pub op: Op,
}

pub fn annotation_id(scene_id: &str, instance_id: &str) -> String {
    format!("{scene_id}:{instance_id}")
}

/// Splits `scene:instance`; scene ids never contain a colon.
pub fn parse_annotation_id(id: &str) -> ReviewResult<(&str, &str)> {
    id.split_once(':')
        .filter(|(s, i)| !s.is_empty() && !i.is_empty())
        .ok_or_else(|| ReviewError::InvalidRequest(format!("malformed annotation id {id:?}")))
}

/// Annotation as returned by mutations and lookups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationView {
    pub id: String,
    pub revision: u64,
    pub views: usize,
    pub rc_score: Option<f64>,
    pub journal_length: usize,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSummary {
    pub id: String,
    pub instance_id: String,
    pub class_label: String,
    pub cad_id: String,
    pub cad_class: String,
    pub score: Option<RcScore>,
    pub status: Status,
    pub revision: u64,
    pub observable: bool,
    /// Overlay paths, one per view.
    pub overlays: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub scene_id: String,
    pub annotations: usize,
    /// Annotations still in `auto`.
    pub pending: usize,
    pub failures: usize,
    pub journal_length: usize,
}

type Target = Result<Arc<Observation>, String>;

pub struct ReviewSession {
    db: Arc<CadDatabase>,
    cfg: SessionConfig,
    initial: AnnotationFile,
    store: AnnotationFile,
    revisions: Vec<u64>,
    targets: Vec<Target>,
    journal: Vec<JournalEntry>,
}

/// A planned mutation, detached from the store.
pub struct Job {
    index: usize,
    entry: JournalEntry,
    annotation: Annotation,
    target: Target,
    db: Arc<CadDatabase>,
    cfg: SessionConfig,
}

/// A computed mutation ready to commit.
#[derive(Debug, Clone)]
pub struct Outcome {
    index: usize,
    entry: JournalEntry,
    annotation: Annotation,
    changed: bool,
    pub timed_out: bool,
}

impl ReviewSession {
    /// Session over `file`; targets are prepared from the matching scene objects.
    pub fn new(scene: &Scene, file: AnnotationFile, db: Arc<CadDatabase>, cfg: SessionConfig) -> ReviewResult<Self> {
        if scene.scene_id != file.scene_id {
            return Err(ReviewError::InvalidRequest(format!(
                "annotation file is for scene {}, not {}",
                file.scene_id, scene.scene_id
            )));
        }
        if scene.scene_id.is_empty() || scene.scene_id.contains(':') {
            return Err(ReviewError::InvalidRequest(format!(
                "unusable scene id {:?}",
                scene.scene_id
            )));
        }
        cfg.weights.validate()?;
        cfg.refine.validate()?;
        let objects: HashMap<&str, _> = scene.objects.iter().map(|o| (o.instance_id.as_str(), o)).collect();
        let mut seen = HashMap::new();
        let mut targets = Vec::with_capacity(file.annotations.len());
        for ann in &file.annotations {
            if seen.insert(ann.instance_id.clone(), ()).is_some() {
                return Err(ReviewError::InvalidRequest(format!(
                    "duplicate instance {}",
                    ann.instance_id
                )));
            }
            let target = match objects.get(ann.instance_id.as_str()) {
                None => Err("no scene object for this instance".to_string()),
                Some(obj) => observe_object(obj, cfg.max_scan_points)
                    .map(Arc::new)
                    .map_err(|e| e.to_string()),
            };
            targets.push(target);
        }
        Ok(ReviewSession {
            db,
            cfg,
            revisions: vec![0; file.annotations.len()],
            initial: file.clone(),
            store: file,
            targets,
            journal: Vec::new(),
        })
    }

    /// Rebuilds a session by applying `journal` to the initial file.
    pub fn replay(
        scene: &Scene,
        initial: AnnotationFile,
        db: Arc<CadDatabase>,
        cfg: SessionConfig,
        journal: &[JournalEntry],
    ) -> ReviewResult<Self> {
        let mut session = ReviewSession::new(scene, initial, db, cfg)?;
        for entry in journal {
            if matches!(entry.op, Op::Refine { steps: None }) {
                return Err(ReviewError::InvalidRequest("journaled refine without steps".into()));
            }
            session.apply(entry.clone())?;
        }
        Ok(session)
    }

    pub fn scene_id(&self) -> &str {
        &self.store.scene_id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn database(&self) -> &Arc<CadDatabase> {
        &self.db
    }

    pub fn initial(&self) -> &AnnotationFile {
        &self.initial
    }

    pub fn store(&self) -> &AnnotationFile {
        &self.store
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn revisions(&self) -> &[u64] {
        &self.revisions
    }

    fn index_of(&self, instance_id: &str) -> ReviewResult<usize> {
        self.store
            .annotations
            .iter()
            .position(|a| a.instance_id == instance_id)
            .ok_or_else(|| ReviewError::NotFound(format!("annotation {}", annotation_id(self.scene_id(), instance_id))))
    }

    fn view_at(&self, index: usize) -> AnnotationView {
        let ann = &self.store.annotations[index];
        AnnotationView {
            id: annotation_id(self.scene_id(), &ann.instance_id),
            revision: self.revisions[index],
            views: self.targets[index].as_ref().map_or(0, |t| t.views().len()),
            rc_score: ann.score.map(|s| s.total),
            journal_length: self.journal.len(),
            annotation: ann.clone(),
        }
    }

    pub fn annotation(&self, instance_id: &str) -> ReviewResult<AnnotationView> {
        Ok(self.view_at(self.index_of(instance_id)?))
    }

    pub fn summaries(&self) -> Vec<AnnotationSummary> {
        self.store
            .annotations
            .iter()
            .enumerate()
            .map(|(i, a)| {
                let id = annotation_id(self.scene_id(), &a.instance_id);
                let views = self.targets[i].as_ref().map_or(0, |t| t.views().len());
                AnnotationSummary {
                    overlays: (0..views).map(|v| format!("/annotations/{id}/overlay/{v}")).collect(),
                    id,
                    instance_id: a.instance_id.clone(),
                    class_label: a.class_label.clone(),
                    cad_id: a.cad_id.clone(),
                    cad_class: a.cad_class.clone(),
                    score: a.score,
                    status: a.status,
                    revision: self.revisions[i],
                    observable: self.targets[i].is_ok(),
                }
            })
            .collect()
    }

    pub fn summary(&self) -> SceneSummary {
        SceneSummary {
            scene_id: self.scene_id().to_string(),
            annotations: self.store.annotations.len(),
            pending: self
                .store
                .annotations
                .iter()
                .filter(|a| a.status == Status::Auto)
                .count(),
            failures: self.store.failures.len(),
            journal_length: self.journal.len(),
        }
    }

    /// What an overlay of one view needs: target, model, pose and revision.
    pub fn overlay_inputs(
        &self,
        instance_id: &str,
        view: usize,
    ) -> ReviewResult<(Arc<Observation>, Arc<CadModel>, Pose9D, u64)> {
        let index = self.index_of(instance_id)?;
        let target = self.targets[index].clone().map_err(ReviewError::Unobservable)?;
        if view >= target.views().len() {
            return Err(ReviewError::NotFound(format!(
                "view {view} (object has {} views)",
                target.views().len()
            )));
        }
        let ann = &self.store.annotations[index];
        let model = self.db.get(&ann.cad_id)?.clone();
        Ok((target, model, ann.pose, self.revisions[index]))
    }

    /// Checks the entry against the store and detaches the work.
    pub fn plan(&self, entry: JournalEntry) -> ReviewResult<Job> {
        let index = self.index_of(&entry.instance_id)?;
        let current = self.revisions[index];
        if entry.expected_revision != current {
            return Err(ReviewError::Conflict {
                expected: entry.expected_revision,
                current,
            });
        }
        match &entry.op {
            Op::Rotate { degrees } if ![90, 180, 270].contains(degrees) => {
                return Err(ReviewError::InvalidRequest(format!(
                    "rotation must be 90, 180 or 270 degrees, got {degrees}"
                )));
            }
            Op::Status { status } if !matches!(status, Status::Verified | Status::Removed) => {
                return Err(ReviewError::InvalidRequest(format!(
                    "status must be verified or removed, got {}",
                    status.as_str()
                )));
            }
            Op::Refine { steps: Some(0) } => {
                return Err(ReviewError::InvalidRequest("refine needs at least one step".into()));
            }
            _ => {}
        }
        Ok(Job {
            index,
            entry,
            annotation: self.store.annotations[index].clone(),
            target: self.targets[index].clone(),
            db: self.db.clone(),
            cfg: self.cfg,
        })
    }

    /// Stores the outcome and journals its entry.
    pub fn commit(&mut self, outcome: Outcome) -> ReviewResult<AnnotationView> {
        let current = self.revisions[outcome.index];
        if outcome.entry.expected_revision != current {
            return Err(ReviewError::Conflict {
                expected: outcome.entry.expected_revision,
                current,
            });
        }
        if outcome.changed {
            self.store.annotations[outcome.index] = outcome.annotation;
            self.revisions[outcome.index] += 1;
        }
        self.journal.push(outcome.entry);
        Ok(self.view_at(outcome.index))
    }

    /// Plans, runs without a deadline, and commits.
    pub fn apply(&mut self, entry: JournalEntry) -> ReviewResult<AnnotationView> {
        let outcome = self.plan(entry)?.run(None)?;
        self.commit(outcome)
    }
}

fn ensure_editable(ann: &Annotation) -> ReviewResult<()> {
    if ann.status == Status::Removed {
        return Err(ReviewError::IllegalTransition {
            from: Status::Removed.as_str().into(),
            to: Status::Edited.as_str().into(),
        });
    }
    Ok(())
}

impl Job {
    fn target(&self) -> ReviewResult<&Observation> {
        self.target.as_deref().map_err(|e| ReviewError::Unobservable(e.clone()))
    }

    fn score(&self, model: &CadModel, pose: &Pose9D) -> ReviewResult<RcScore> {
        Ok(rc_score(self.target()?, model, pose, &self.cfg.weights)?)
    }

    /// Computes the new annotation. Only refinement looks at `deadline`.
    pub fn run(self, deadline: Option<Instant>) -> ReviewResult<Outcome> {
        let mut ann = self.annotation.clone();
        let mut entry = self.entry.clone();
        let mut changed = true;
        let mut timed_out = false;
        match &self.entry.op {
            Op::Rotate { degrees } => {
                ensure_editable(&ann)?;
                let pose = ann.pose.with_yaw_offset((*degrees as f64).to_radians());
                let score = self.score(self.db.get(&ann.cad_id)?, &pose)?;
                ann.apply_manual_rotate(*degrees, pose, score)?;
            }
            Op::Swap { cad_id, override_class } => {
                ensure_editable(&ann)?;
                let model = self.db.get(cad_id)?;
                if model.class_label() != ann.class_label && !override_class {
                    return Err(ReviewError::InvalidRequest(format!(
                        "{cad_id} is a {} but the object is a {}; set override_class to swap across classes",
                        model.class_label(),
                        ann.class_label
                    )));
                }
                if *cad_id == ann.cad_id {
                    changed = false;
                } else {
                    let score = self.score(model, &ann.pose)?;
                    ann.apply_manual_swap(cad_id, model.class_label(), score)?;
                }
            }
            Op::Refine { steps } => {
                ensure_editable(&ann)?;
                let model = self.db.get(&ann.cad_id)?;
                let cfg = RefineConfig {
                    steps: steps.unwrap_or(self.cfg.refine.steps),
                    ..self.cfg.refine
                };
                let res = refine_until(self.target()?, model, &ann.pose, &self.cfg.weights, &cfg, deadline)?;
                timed_out = res.timed_out;
                let taken = if res.timed_out { res.history.len() } else { cfg.steps };
                if taken == 0 {
                    return Err(ReviewError::Internal(
                        "refinement deadline passed before the first step".into(),
                    ));
                }
                entry.op = Op::Refine { steps: Some(taken) };
                ann.apply_refinement(res.pose, res.score, format!("review, {} steps", res.history.len()))?;
            }
            Op::Status { status } => {
                ann.set_status(*status)?;
            }
        }
        Ok(Outcome {
            index: self.index,
            entry,
            annotation: ann,
            changed,
            timed_out,
        })
    }
}
