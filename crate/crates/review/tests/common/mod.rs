#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use scanfit_core::cad::CadDatabase;
use scanfit_core::objective::{rc_score, RcWeights};
use scanfit_core::pipeline::{observe_object, AnnotationFile, Status};
use scanfit_core::refine::RefineConfig;
use scanfit_core::scene::Scene;
use scanfit_core::synth::{ground_truth_file, synthetic_database, synthetic_scene, GroundTruth, SynthConfig};
use scanfit_review::{ReviewSession, SessionConfig};

pub const SCENE: &str = "room1";
pub const CABINET: &str = "obj0";
pub const CHAIR: &str = "obj1";

pub struct Fixture {
    pub db: Arc<CadDatabase>,
    pub scene: Scene,
    pub truth: Vec<GroundTruth>,
    pub exact: AnnotationFile,
}

/// A cabinet and two chairs, annotated with their ground truth in `auto` state.
pub fn fixture() -> Fixture {
    let db = synthetic_database(&["chair", "cabinet"], 3, 5).unwrap();
    let cfg = SynthConfig {
        width: 96,
        height: 72,
        views_per_object: 2,
        ..SynthConfig::default()
    };
    let ids = ["cabinet_000", "chair_001", "chair_002"].map(String::from);
    let (scene, truth) = synthetic_scene(SCENE, &db, &ids, &cfg, 21).unwrap();
    let mut exact = ground_truth_file(SCENE, &db, &truth).unwrap();
    for (ann, obj) in exact.annotations.iter_mut().zip(&scene.objects) {
        let obs = observe_object(obj, 512).unwrap();
        ann.score = Some(rc_score(&obs, db.get(&ann.cad_id).unwrap(), &ann.pose, &RcWeights::default()).unwrap());
        ann.status = Status::Auto;
    }
    Fixture {
        db: Arc::new(db),
        scene,
        truth,
        exact,
    }
}

impl Fixture {
    /// The exact file with the cabinet turned half way round and the first chair given the other chair's model.
    pub fn planted(&self) -> AnnotationFile {
        let mut file = self.exact.clone();
        for ann in &mut file.annotations {
            match ann.instance_id.as_str() {
                CABINET => ann.pose = ann.pose.with_yaw_offset(PI),
                CHAIR => ann.cad_id = "chair_002".into(),
                _ => {}
            }
        }
        let weights = RcWeights::default();
        for (ann, obj) in file.annotations.iter_mut().zip(&self.scene.objects) {
            let obs = observe_object(obj, 512).unwrap();
            ann.score = Some(rc_score(&obs, self.db.get(&ann.cad_id).unwrap(), &ann.pose, &weights).unwrap());
        }
        file
    }

    pub fn session(&self, file: AnnotationFile, cfg: SessionConfig) -> ReviewSession {
        ReviewSession::new(&self.scene, file, self.db.clone(), cfg).unwrap()
    }
}

pub fn short_refine(steps: usize) -> SessionConfig {
    SessionConfig {
        refine: RefineConfig::with_steps(steps),
        ..SessionConfig::default()
    }
}
