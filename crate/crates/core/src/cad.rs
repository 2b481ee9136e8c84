//! CAD model database: canonicalized meshes with cached surface samples.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{io, sample_surface, PointCloud, TriMesh, Vec3};
use crate::metrics::KdTree;

/// Surface samples kept per model for chamfer computations.
pub const CANONICAL_SAMPLES: usize = 5000;

/// A database shape in its canonical frame: bounding box `[-0.5, 0.5]³`.
#[derive(Debug, Clone)]
pub struct CadModel {
    id: String,
    class_label: String,
    mesh: TriMesh,
    samples: PointCloud,
    index: KdTree,
}

impl CadModel {
    /// Normalizes `mesh` per axis into the canonical unit box and samples it.
    pub fn new(id: impl Into<String>, class_label: impl Into<String>, mesh: &TriMesh) -> Result<Self> {
        Self::with_samples(id, class_label, mesh, CANONICAL_SAMPLES)
    }

    pub fn with_samples(
        id: impl Into<String>,
        class_label: impl Into<String>,
        mesh: &TriMesh,
        n_samples: usize,
    ) -> Result<Self> {
        let id = id.into();
        let mesh = normalize_to_unit_box(mesh).map_err(|e| Error::InvalidMesh(format!("model {id}: {e}")))?;
        let samples = sample_surface(&mesh, n_samples, stable_seed(&id))?;
        let index = KdTree::new(samples.points());
        Ok(CadModel {
            id,
            class_label: class_label.into(),
            mesh,
            samples,
            index,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn class_label(&self) -> &str {
        &self.class_label
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn samples(&self) -> &PointCloud {
        &self.samples
    }

    pub fn index(&self) -> &KdTree {
        &self.index
    }
}

/// FNV-1a of the model id, so sampling is stable across runs and platforms.
pub fn stable_seed(key: &str) -> u64 {
    key.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Maps the mesh bounding box onto `[-0.5, 0.5]³` independently per axis.
pub fn normalize_to_unit_box(mesh: &TriMesh) -> Result<TriMesh> {
    let (lo, hi) = mesh
        .bounds()
        .ok_or_else(|| Error::InvalidMesh("mesh has no vertices".into()))?;
    let size = hi - lo;
    if size.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidMesh("mesh is flat along an axis".into()));
    }
    let center = (lo + hi) * 0.5;
    Ok(mesh.map_vertices(|v| (v - center).component_div(&size)))
}

/// Entry of the JSON database manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub class: String,
    pub mesh_path: String,
}

#[derive(Debug, Clone, Default)]
pub struct CadDatabase {
    models: Vec<Arc<CadModel>>,
    by_id: BTreeMap<String, usize>,
}

impl CadDatabase {
    pub fn new(models: Vec<CadModel>) -> Result<Self> {
        let mut db = CadDatabase::default();
        for m in models {
            db.insert(m)?;
        }
        Ok(db)
    }

    pub fn insert(&mut self, model: CadModel) -> Result<()> {
        if self.by_id.contains_key(model.id()) {
            return Err(Error::InvalidMesh(format!("duplicate model id {}", model.id())));
        }
        self.by_id.insert(model.id().to_string(), self.models.len());
        self.models.push(Arc::new(model));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Arc<CadModel>> {
        self.by_id
            .get(id)
            .map(|&i| &self.models[i])
            .ok_or_else(|| Error::UnknownModel(id.to_string()))
    }

    pub fn models(&self) -> &[Arc<CadModel>] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Models of one class, in database order.
    pub fn of_class(&self, class_label: &str) -> Vec<Arc<CadModel>> {
        self.models
            .iter()
            .filter(|m| m.class_label() == class_label)
            .cloned()
            .collect()
    }

    pub fn classes(&self) -> Vec<String> {
        let mut classes: Vec<String> = self.models.iter().map(|m| m.class_label().to_string()).collect();
        classes.sort();
        classes.dedup();
        classes
    }

    /// Loads a manifest; mesh paths resolve relative to the manifest's directory.
    pub fn load_manifest(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let entries: Vec<ManifestEntry> =
            serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let models = entries
            .iter()
            .map(|e| {
                let mesh = io::load_obj(base.join(&e.mesh_path))?;
                CadModel::new(&e.id, &e.class, &mesh)
            })
            .collect::<Result<Vec<_>>>()?;
        CadDatabase::new(models)
    }
}

/// Posed sample positions `A v + t` of a model for chamfer in world space.
pub fn posed_samples(model: &CadModel, linear: &nalgebra::Matrix3<f64>, t: &Vec3) -> Vec<Vec3> {
    model.samples().points().iter().map(|v| linear * v + t).collect()
}
