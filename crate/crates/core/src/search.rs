//! Joint model/pose-bin search over a [`HocTree`]: Monte Carlo tree search
//! with in-loop pose refinement, plus the exhaustive enumeration it is
//! checked against.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cad::CadDatabase;
use crate::error::{Error, Result};
use crate::geometry::Pose9D;
use crate::hoctree::{HocTree, NodeKind};
use crate::objective::{rc_score, Observation, RcScore, RcWeights};
use crate::refine::{refine, RefineConfig};

pub const EXHAUSTIVE_LEAF_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub max_iterations: usize,
    pub exploration_c: f64,
    pub refine_trigger_ratio: f64,
    /// Refinement steps for candidates inside the loop; `0` disables them.
    pub refine_steps: usize,
    /// Refinement steps for the incumbent after the loop; `0` skips it.
    pub final_refine_steps: usize,
    pub seed: u64,
    pub refine: RefineConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            max_iterations: 1200,
            exploration_c: std::f64::consts::SQRT_2,
            refine_trigger_ratio: 1.1,
            refine_steps: 50,
            final_refine_steps: 300,
            seed: 0,
            refine: RefineConfig::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.refine_trigger_ratio >= 1.0) {
            return Err(Error::InvalidConfig("refine_trigger_ratio must be at least 1".into()));
        }
        if !(self.exploration_c >= 0.0 && self.exploration_c.is_finite()) {
            return Err(Error::InvalidConfig(
                "exploration_c must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    fn refine_config(&self, steps: usize) -> RefineConfig {
        RefineConfig { steps, ..self.refine }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub path: Vec<usize>,
    pub cad_id: String,
    pub pose_bin: usize,
    pub raw_score: f64,
    /// Incumbent total before this candidate was scored.
    pub incumbent_before: f64,
    pub refined: bool,
    pub refined_score: Option<f64>,
    pub incumbent_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub cad_id: String,
    pub pose_bin: usize,
    pub pose: Pose9D,
    pub score: RcScore,
    pub iterations_run: usize,
    pub refinements_run: usize,
    pub trace: Vec<TraceEntry>,
}

impl SearchResult {
    /// One JSON object per trace entry.
    pub fn write_trace_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for entry in &self.trace {
            serde_json::to_writer(&mut out, entry)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    pose: Pose9D,
    score: RcScore,
}

/// Shared scoring and incumbent bookkeeping for both search strategies.
struct Evaluator<'a> {
    tree: &'a HocTree,
    db: &'a CadDatabase,
    obs: &'a Observation,
    init: Pose9D,
    weights: &'a RcWeights,
    incumbent: Option<(String, usize, Candidate)>,
}

impl Evaluator<'_> {
    fn candidate_pose(&self, path: &[usize]) -> Result<(String, usize, Pose9D)> {
        let (cad_id, offset) = self.tree.path_to_candidate(path)?;
        let bin = match self.tree.node(path[1]).kind {
            NodeKind::PoseBin { bin, .. } => bin,
            _ => return Err(Error::InvalidPath("second node is not a pose bin".into())),
        };
        Ok((cad_id, bin, self.init.with_yaw_offset(offset)))
    }

    fn score(&self, cad_id: &str, pose: &Pose9D) -> Result<RcScore> {
        let model = self.db.get(cad_id)?;
        rc_score(self.obs, model, pose, self.weights).map_err(unobservable)
    }

    fn refine(&self, cad_id: &str, pose: &Pose9D, cfg: &RefineConfig) -> Result<Candidate> {
        let model = self.db.get(cad_id)?;
        let res = refine(self.obs, model, pose, self.weights, cfg).map_err(unobservable)?;
        Ok(Candidate {
            pose: res.pose,
            score: res.score,
        })
    }

    fn incumbent_total(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |i| i.2.score.total)
    }

    fn offer(&mut self, cad_id: &str, bin: usize, cand: Candidate) {
        if cand.score.total < self.incumbent_total() {
            self.incumbent = Some((cad_id.to_string(), bin, cand));
        }
    }

    fn finish(
        mut self,
        final_cfg: Option<RefineConfig>,
        iterations_run: usize,
        refinements_run: usize,
        trace: Vec<TraceEntry>,
    ) -> Result<SearchResult> {
        let Some((cad_id, bin, cand)) = self.incumbent.clone() else {
            return Err(Error::Unobservable("no candidate could be evaluated".into()));
        };
        if let Some(cfg) = final_cfg {
            let refined = self.refine(&cad_id, &cand.pose, &cfg)?;
            self.offer(&cad_id, bin, refined);
        }
        let (cad_id, pose_bin, best) = self.incumbent.expect("incumbent set");
        Ok(SearchResult {
            cad_id,
            pose_bin,
            pose: best.pose,
            score: best.score,
            iterations_run,
            refinements_run,
            trace,
        })
    }
}

fn unobservable(e: Error) -> Error {
    match e {
        Error::NoObservations => Error::Unobservable("no view observes the object".into()),
        other => other,
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct NodeStats {
    visits: u32,
    score_sum: f64,
    exhausted: bool,
}

/// Monte Carlo tree search over model leaves and pose bins.
///
/// Each iteration descends by UCB1 (rewards are scores mapped to `[0, 1]`
/// between the worst and best seen), expands one unvisited child, completes
/// the path with a uniform random rollout and scores the leaf at the initial
/// pose turned by the leaf's pose-bin offset. A candidate whose raw score is
/// below `refine_trigger_ratio` times the incumbent is refined; the better of
/// the two scores is backpropagated. Fully evaluated subtrees are skipped and
/// the loop stops early once every leaf has been scored.
pub fn search(
    tree: &HocTree,
    db: &CadDatabase,
    obs: &Observation,
    init: &Pose9D,
    weights: &RcWeights,
    cfg: &SearchConfig,
) -> Result<SearchResult> {
    cfg.validate()?;
    weights.validate()?;
    let mut eval = Evaluator {
        tree,
        db,
        obs,
        init: *init,
        weights,
        incumbent: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stats = vec![NodeStats::default(); tree.nodes().len()];
    let (mut best_seen, mut worst_seen) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut trace = Vec::new();
    let mut refinements = 0;
    let in_loop = (cfg.refine_steps > 0).then(|| cfg.refine_config(cfg.refine_steps));

    for iteration in 0..cfg.max_iterations {
        if stats[tree.root()].exhausted {
            break;
        }
        let mut path = vec![tree.root()];
        let mut node = tree.root();
        let mut rollout = false;
        while !tree.is_leaf(node) {
            let open: Vec<usize> = tree
                .node(node)
                .children
                .iter()
                .copied()
                .filter(|&c| !stats[c].exhausted)
                .collect();
            node = if rollout {
                open[rng.random_range(0..open.len())]
            } else {
                let unvisited: Vec<usize> = open.iter().copied().filter(|&c| stats[c].visits == 0).collect();
                if !unvisited.is_empty() {
                    rollout = true;
                    unvisited[rng.random_range(0..unvisited.len())]
                } else {
                    let parent_visits = f64::from(stats[node].visits.max(1));
                    let mut best = (f64::NEG_INFINITY, open[0]);
                    for &c in &open {
                        let s = &stats[c];
                        let mean = s.score_sum / f64::from(s.visits);
                        let value = if worst_seen > best_seen {
                            (worst_seen - mean) / (worst_seen - best_seen)
                        } else {
                            0.5
                        };
                        let ucb = value + cfg.exploration_c * (parent_visits.ln() / f64::from(s.visits)).sqrt();
                        if ucb > best.0 {
                            best = (ucb, c);
                        }
                    }
                    best.1
                }
            };
            path.push(node);
        }

        let (cad_id, bin, pose) = eval.candidate_pose(&path)?;
        let raw = eval.score(&cad_id, &pose)?;
        let incumbent_before = eval.incumbent_total();
        let mut value = raw.total;
        let mut refined_score = None;
        eval.offer(&cad_id, bin, Candidate { pose, score: raw });
        if let Some(rcfg) = &in_loop {
            if raw.total < cfg.refine_trigger_ratio * incumbent_before {
                let refined = eval.refine(&cad_id, &pose, rcfg)?;
                refinements += 1;
                refined_score = Some(refined.score.total);
                value = value.min(refined.score.total);
                eval.offer(&cad_id, bin, refined);
            }
        }
        best_seen = best_seen.min(value);
        worst_seen = worst_seen.max(value);

        for &n in &path {
            stats[n].visits += 1;
            stats[n].score_sum += value;
        }
        stats[node].exhausted = true;
        for &n in path.iter().rev().skip(1) {
            let done = tree.node(n).children.iter().all(|&c| stats[c].exhausted);
            if !done {
                break;
            }
            stats[n].exhausted = true;
        }
        trace.push(TraceEntry {
            iteration,
            path,
            cad_id,
            pose_bin: bin,
            raw_score: raw.total,
            incumbent_before,
            refined: refined_score.is_some(),
            refined_score,
            incumbent_after: eval.incumbent_total(),
        });
    }
    let iterations = trace.len();
    let final_cfg = (cfg.final_refine_steps > 0).then(|| cfg.refine_config(cfg.final_refine_steps));
    eval.finish(final_cfg, iterations, refinements, trace)
}

/// Scores every leaf in every pose bin, refines the `top_k` best raw
/// candidates and returns the overall best after the final refinement.
pub fn exhaustive_search(
    tree: &HocTree,
    db: &CadDatabase,
    obs: &Observation,
    init: &Pose9D,
    weights: &RcWeights,
    cfg: &SearchConfig,
    top_k: usize,
) -> Result<SearchResult> {
    cfg.validate()?;
    weights.validate()?;
    let leaves = tree.leaves_under(tree.root());
    if leaves.len() > EXHAUSTIVE_LEAF_LIMIT {
        return Err(Error::DatabaseTooLarge {
            leaves: leaves.len(),
            limit: EXHAUSTIVE_LEAF_LIMIT,
        });
    }
    let mut eval = Evaluator {
        tree,
        db,
        obs,
        init: *init,
        weights,
        incumbent: None,
    };
    let mut trace = Vec::with_capacity(leaves.len());
    let mut raws = Vec::with_capacity(leaves.len());
    for (iteration, &leaf) in leaves.iter().enumerate() {
        let path = tree.path_to(leaf);
        let (cad_id, bin, pose) = eval.candidate_pose(&path)?;
        let raw = eval.score(&cad_id, &pose)?;
        let incumbent_before = eval.incumbent_total();
        eval.offer(&cad_id, bin, Candidate { pose, score: raw });
        trace.push(TraceEntry {
            iteration,
            path,
            cad_id,
            pose_bin: bin,
            raw_score: raw.total,
            incumbent_before,
            refined: false,
            refined_score: None,
            incumbent_after: eval.incumbent_total(),
        });
        raws.push((raw.total, iteration, pose));
    }
    let mut refinements = 0;
    if cfg.refine_steps > 0 {
        let rcfg = cfg.refine_config(cfg.refine_steps);
        raws.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, i, pose) in raws.iter().take(top_k) {
            let (cad_id, bin) = (trace[i].cad_id.clone(), trace[i].pose_bin);
            let refined = eval.refine(&cad_id, &pose, &rcfg)?;
            refinements += 1;
            trace[i].refined = true;
            trace[i].refined_score = Some(refined.score.total);
            eval.offer(&cad_id, bin, refined);
        }
    }
    let final_cfg = (cfg.final_refine_steps > 0).then(|| cfg.refine_config(cfg.final_refine_steps));
    eval.finish(final_cfg, leaves.len(), refinements, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hoctree::TreeConfig;
    use crate::pipeline::{init_pose, observe_object};
    use crate::synth::{synthetic_database, synthetic_scene, SynthConfig};

    struct Fixture {
        db: CadDatabase,
        tree: HocTree,
        obs: Observation,
        init: Pose9D,
    }

    fn fixture(models: usize, bins: usize, seed: u64) -> Fixture {
        let db = synthetic_database(&["chair"], models, 3).unwrap();
        let cfg = TreeConfig {
            pose_bins: bins,
            branching: 2,
            cluster_samples: 200,
            ..TreeConfig::default()
        };
        let tree = HocTree::build(&db.of_class("chair"), "chair", &cfg).unwrap();
        let synth = SynthConfig {
            width: 64,
            height: 48,
            views_per_object: 2,
            ..SynthConfig::default()
        };
        let id = db.models()[seed as usize % models].id().to_string();
        let (scene, _) = synthetic_scene("t", &db, &[id], &synth, seed).unwrap();
        let obs = observe_object(&scene.objects[0], 256).unwrap();
        let init = init_pose(&scene.objects[0].points).unwrap();
        Fixture { db, tree, obs, init }
    }

    fn quick(seed: u64) -> SearchConfig {
        SearchConfig {
            max_iterations: 200,
            refine_steps: 5,
            final_refine_steps: 10,
            seed,
            ..SearchConfig::default()
        }
    }

    fn run(f: &Fixture, cfg: &SearchConfig) -> SearchResult {
        search(&f.tree, &f.db, &f.obs, &f.init, &RcWeights::default(), cfg).unwrap()
    }

    #[test]
    fn single_leaf_terminates_early() {
        let f = fixture(1, 1, 1);
        let res = run(&f, &quick(0));
        assert_eq!(res.cad_id, "chair_000");
        assert_eq!(res.iterations_run, 1);
    }

    #[test]
    fn exhaustive_enumerates_and_dominates() {
        let f = fixture(8, 4, 2);
        let cfg = quick(0);
        let ex = exhaustive_search(&f.tree, &f.db, &f.obs, &f.init, &RcWeights::default(), &cfg, 8).unwrap();
        assert_eq!(ex.trace.len(), 32);
        assert!(ex.trace.iter().all(|e| ex.score.total <= e.raw_score));
        assert_eq!(ex.refinements_run, 8);
        let mcts = run(
            &f,
            &SearchConfig {
                max_iterations: 6,
                ..cfg
            },
        );
        assert!(mcts.score.total >= ex.score.total - 1e-12);
    }

    #[test]
    fn trace_invariants() {
        let f = fixture(6, 4, 3);
        let cfg = SearchConfig {
            max_iterations: 15,
            ..quick(7)
        };
        let res = run(&f, &cfg);
        assert!(res.iterations_run <= cfg.max_iterations);
        assert!(res.refinements_run <= res.iterations_run);
        assert_eq!(res.refinements_run, res.trace.iter().filter(|e| e.refined).count());
        for pair in res.trace.windows(2) {
            assert!(pair[1].incumbent_after <= pair[0].incumbent_after);
            assert_eq!(pair[1].incumbent_before, pair[0].incumbent_after);
        }
        for e in &res.trace {
            if e.refined {
                assert!(e.raw_score < cfg.refine_trigger_ratio * e.incumbent_before);
            } else {
                assert!(e.raw_score >= cfg.refine_trigger_ratio * e.incumbent_before);
            }
            let best = e.refined_score.map_or(e.raw_score, |r| r.min(e.raw_score));
            assert!(e.incumbent_after <= best);
        }
        let min_seen = res
            .trace
            .iter()
            .flat_map(|e| std::iter::once(e.raw_score).chain(e.refined_score))
            .fold(f64::INFINITY, f64::min);
        assert!(res.score.total <= min_seen);
    }

    #[test]
    fn deterministic_per_seed() {
        let f = fixture(6, 2, 4);
        let cfg = SearchConfig {
            max_iterations: 8,
            ..quick(11)
        };
        let a = run(&f, &cfg);
        let b = run(&f, &cfg);
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_trace_jsonl(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), a.trace.len());
    }

    #[test]
    fn full_budget_matches_exhaustive_without_inner_refinement() {
        let f = fixture(8, 4, 5);
        let cfg = SearchConfig {
            max_iterations: 128,
            refine_steps: 0,
            final_refine_steps: 10,
            seed: 3,
            ..quick(0)
        };
        let m = run(&f, &cfg);
        let e = exhaustive_search(&f.tree, &f.db, &f.obs, &f.init, &RcWeights::default(), &cfg, 8).unwrap();
        assert_eq!(m.iterations_run, 32);
        assert_eq!((m.cad_id, m.score.total), (e.cad_id, e.score.total));
    }

    #[test]
    fn bad_config_rejected() {
        let f = fixture(2, 1, 6);
        for cfg in [
            SearchConfig {
                max_iterations: 0,
                ..quick(0)
            },
            SearchConfig {
                refine_trigger_ratio: 0.9,
                ..quick(0)
            },
        ] {
            assert!(matches!(
                search(&f.tree, &f.db, &f.obs, &f.init, &RcWeights::default(), &cfg),
                Err(Error::InvalidConfig(_))
            ));
        }
    }
}
