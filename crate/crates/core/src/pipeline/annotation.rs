use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose9D;
use crate::objective::RcScore;

pub const ANNOTATION_SCHEMA_VERSION: u32 = 1;

/// Rotational symmetry about the up axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    #[default]
    None,
    TwoFold,
    FourFold,
    Infinite,
}

impl Symmetry {
    /// Yaw angles of the finite group; `None` for the continuous group.
    pub fn group_angles(&self) -> Option<Vec<f64>> {
        use std::f64::consts::{FRAC_PI_2, PI};
        match self {
            Symmetry::None => Some(vec![0.0]),
            Symmetry::TwoFold => Some(vec![0.0, PI]),
            Symmetry::FourFold => Some(vec![0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]),
            Symmetry::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Auto,
    Verified,
    Edited,
    Removed,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Auto => "auto",
            Status::Verified => "verified",
            Status::Edited => "edited",
            Status::Removed => "removed",
        }
    }

    /// Removal is final and nothing returns to `auto`.
    pub fn can_become(&self, to: Status) -> bool {
        !matches!(self, Status::Removed) && to != Status::Auto
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Search,
    Refine,
    Clone,
    Symmetry,
    ManualRotate,
    ManualSwap,
    Status,
}

impl EventKind {
    pub fn is_manual(&self) -> bool {
        matches!(self, EventKind::ManualRotate | EventKind::ManualSwap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEvent {
    pub kind: EventKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub instance_id: String,
    pub class_label: String,
    pub cad_id: String,
    /// Class of the retrieved model.
    pub cad_class: String,
    pub pose: Pose9D,
    #[serde(rename = "score_breakdown")]
    pub score: Option<RcScore>,
    pub symmetry: Symmetry,
    pub status: Status,
    pub provenance: Vec<ProvenanceEvent>,
}

impl Annotation {
    pub fn new(
        instance_id: impl Into<String>,
        class_label: impl Into<String>,
        cad_id: impl Into<String>,
        cad_class: impl Into<String>,
        pose: Pose9D,
        score: Option<RcScore>,
        event: ProvenanceEvent,
    ) -> Self {
        Annotation {
            instance_id: instance_id.into(),
            class_label: class_label.into(),
            cad_id: cad_id.into(),
            cad_class: cad_class.into(),
            pose,
            score,
            symmetry: Symmetry::None,
            status: Status::Auto,
            provenance: vec![event],
        }
    }

    fn record(&mut self, kind: EventKind, detail: String) {
        self.provenance.push(ProvenanceEvent { kind, detail });
    }

    pub fn has_manual_event(&self) -> bool {
        self.provenance.iter().any(|e| e.kind.is_manual())
    }

    fn ensure_not_removed(&self) -> Result<()> {
        if self.status == Status::Removed {
            return Err(Error::IllegalTransition {
                from: self.status.as_str().into(),
                to: "edited".into(),
            });
        }
        Ok(())
    }

    /// New pose and score from an automatic refinement.
    pub fn apply_refinement(&mut self, pose: Pose9D, score: RcScore, detail: String) -> Result<()> {
        self.ensure_not_removed()?;
        self.pose = pose;
        self.score = Some(score);
        self.record(EventKind::Refine, detail);
        Ok(())
    }

    /// Same geometry under an equivalent parameterization.
    pub fn apply_equivalent_pose(&mut self, pose: Pose9D, score: RcScore, detail: String) -> Result<()> {
        self.ensure_not_removed()?;
        self.pose = pose;
        self.score = Some(score);
        self.record(EventKind::Symmetry, detail);
        Ok(())
    }

    /// Model replaced by per-scene cloning.
    pub fn apply_clone(&mut self, cad_id: &str, score: RcScore) -> Result<()> {
        self.ensure_not_removed()?;
        let detail = format!("{} -> {cad_id}", self.cad_id);
        self.cad_id = cad_id.to_string();
        self.score = Some(score);
        self.record(EventKind::Clone, detail);
        Ok(())
    }

    pub fn set_symmetry(&mut self, symmetry: Symmetry) {
        if symmetry != self.symmetry {
            self.symmetry = symmetry;
            self.record(EventKind::Symmetry, format!("{symmetry:?}"));
        }
    }

    /// Manual quarter-turn fix; marks the annotation edited.
    pub fn apply_manual_rotate(&mut self, degrees: u32, pose: Pose9D, score: RcScore) -> Result<()> {
        self.ensure_not_removed()?;
        self.pose = pose;
        self.score = Some(score);
        self.record(EventKind::ManualRotate, format!("{degrees}"));
        self.status = Status::Edited;
        Ok(())
    }

    /// Manual model replacement; marks the annotation edited.
    pub fn apply_manual_swap(&mut self, cad_id: &str, cad_class: &str, score: RcScore) -> Result<()> {
        self.ensure_not_removed()?;
        let detail = format!("{} -> {cad_id}", self.cad_id);
        self.cad_id = cad_id.to_string();
        self.cad_class = cad_class.to_string();
        self.score = Some(score);
        self.record(EventKind::ManualSwap, detail);
        self.status = Status::Edited;
        Ok(())
    }

    pub fn set_status(&mut self, to: Status) -> Result<()> {
        let illegal = || Error::IllegalTransition {
            from: self.status.as_str().into(),
            to: to.as_str().into(),
        };
        if !self.status.can_become(to) || (to == Status::Edited && !self.has_manual_event()) {
            return Err(illegal());
        }
        self.status = to;
        self.record(EventKind::Status, to.as_str().into());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub instance_id: String,
    pub error: String,
}

/// The pipeline's output document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub schema_version: u32,
    pub scene_id: String,
    pub annotations: Vec<Annotation>,
    #[serde(default)]
    pub failures: Vec<Failure>,
}

impl AnnotationFile {
    pub fn new(scene_id: impl Into<String>, annotations: Vec<Annotation>, failures: Vec<Failure>) -> Self {
        AnnotationFile {
            schema_version: ANNOTATION_SCHEMA_VERSION,
            scene_id: scene_id.into(),
            annotations,
            failures,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotations serialize") + "\n"
    }

    pub fn from_json(text: &str, origin: &str) -> Result<Self> {
        let file: AnnotationFile = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        if file.schema_version != ANNOTATION_SCHEMA_VERSION {
            return Err(Error::parse(
                origin,
                format!("unsupported schema_version {}", file.schema_version),
            ));
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }
}
