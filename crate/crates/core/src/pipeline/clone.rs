use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cad::{CadDatabase, CadModel};
use crate::error::Result;
use crate::objective::{rc_score, Observation, RcWeights};
use crate::refine::{refine, RefineConfig};

use super::annotation::{Annotation, Status};

pub const DEFAULT_CLONE_CLASSES: [&str; 6] = ["chair", "cabinet", "sofa", "bookshelf", "display", "table"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneConfig {
    pub classes: Vec<String>,
    /// Complete-linkage threshold on unsquared symmetric chamfer between canonical models.
    pub tau: f64,
    pub refine: RefineConfig,
}

impl Default for CloneConfig {
    fn default() -> Self {
        CloneConfig {
            classes: DEFAULT_CLONE_CLASSES.iter().map(|c| c.to_string()).collect(),
            tau: 0.02,
            refine: RefineConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloneCluster {
    pub class_label: String,
    /// Indices into the annotation slice.
    pub members: Vec<usize>,
    pub chosen: String,
    /// Summed score of the members for each candidate model, before re-refinement.
    pub candidate_sums: BTreeMap<String, f64>,
    pub sum_after: f64,
}

/// Symmetric unsquared chamfer between two canonical models, measured from
/// each model's samples to the other's surface so identical shapes score 0.
pub fn model_distance(db: &CadDatabase, a: &str, b: &str) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (ma, mb) = (db.get(a)?, db.get(b)?);
    let to_surface = |from: &CadModel, to: &CadModel| {
        let pts = from.samples().points();
        pts.par_iter().map(|p| to.mesh().distance_to(p)).sum::<f64>() / pts.len() as f64
    };
    Ok(to_surface(ma, mb) + to_surface(mb, ma))
}

/// Complete-linkage clusters whose every pairwise distance is at most `tau`.
pub fn complete_linkage(dist: &[Vec<f64>], tau: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..dist.len()).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let d = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| dist[i][j]))
                    .fold(0.0, f64::max);
                if d <= tau && best.is_none_or(|(bd, _, _)| d < bd) {
                    best = Some((d, a, b));
                }
            }
        }
        let Some((_, a, b)) = best else { break };
        let merged = clusters.remove(b);
        clusters[a].extend(merged);
        clusters[a].sort_unstable();
    }
    clusters
}

/// One pass of clustering and cloning; returns the clusters of two or more members.
fn clone_pass(
    annotations: &mut [Annotation],
    observations: &[Observation],
    db: &CadDatabase,
    weights: &RcWeights,
    cfg: &CloneConfig,
) -> Result<(Vec<CloneCluster>, bool)> {
    let mut out = Vec::new();
    let mut changed = false;
    for class in &cfg.classes {
        let idx: Vec<usize> = (0..annotations.len())
            .filter(|&i| annotations[i].class_label == *class && annotations[i].status != Status::Removed)
            .collect();
        if idx.len() < 2 {
            continue;
        }
        let mut dist = vec![vec![0.0; idx.len()]; idx.len()];
        for a in 0..idx.len() {
            for b in a + 1..idx.len() {
                let d = model_distance(db, &annotations[idx[a]].cad_id, &annotations[idx[b]].cad_id)?;
                dist[a][b] = d;
                dist[b][a] = d;
            }
        }
        for cluster in complete_linkage(&dist, cfg.tau) {
            if cluster.len() < 2 {
                continue;
            }
            let members: Vec<usize> = cluster.iter().map(|&c| idx[c]).collect();
            let mut candidates: Vec<String> = members.iter().map(|&m| annotations[m].cad_id.clone()).collect();
            candidates.sort();
            candidates.dedup();
            let mut sums = BTreeMap::new();
            let mut best: Option<(f64, String)> = None;
            for cand in &candidates {
                let model = db.get(cand)?;
                let mut sum = 0.0;
                for &m in &members {
                    sum += rc_score(&observations[m], model, &annotations[m].pose, weights)?.total;
                }
                sums.insert(cand.clone(), sum);
                if best.as_ref().is_none_or(|(b, _)| sum < *b) {
                    best = Some((sum, cand.clone()));
                }
            }
            let (_, chosen) = best.expect("cluster has candidates");
            let model = db.get(&chosen)?;
            let mut sum_after = 0.0;
            for &m in &members {
                let ann = &mut annotations[m];
                if ann.cad_id != chosen {
                    changed = true;
                    let score = rc_score(&observations[m], model, &ann.pose, weights)?;
                    ann.apply_clone(&chosen, score)?;
                    let res = refine(&observations[m], model, &ann.pose, weights, &cfg.refine)?;
                    if res.pose != ann.pose {
                        ann.apply_refinement(res.pose, res.score, format!("after clone, {} steps", res.history.len()))?;
                    }
                }
                sum_after += ann.score.map_or(0.0, |s| s.total);
            }
            out.push(CloneCluster {
                class_label: class.clone(),
                members,
                chosen,
                candidate_sums: sums,
                sum_after,
            });
        }
    }
    Ok((out, changed))
}

/// Replaces the models of similar same-class objects with the one model
/// minimizing their summed objective, then re-refines every changed object.
///
/// Passes repeat until no assignment changes, so a second call is a no-op.
pub fn cluster_and_clone(
    annotations: &mut [Annotation],
    observations: &[Observation],
    db: &CadDatabase,
    weights: &RcWeights,
    cfg: &CloneConfig,
) -> Result<Vec<CloneCluster>> {
    assert_eq!(annotations.len(), observations.len(), "one observation per annotation");
    let mut first = None;
    for _ in 0..8 {
        let (clusters, changed) = clone_pass(annotations, observations, db, weights, cfg)?;
        first.get_or_insert(clusters);
        if !changed {
            break;
        }
    }
    Ok(first.unwrap_or_default())
}
