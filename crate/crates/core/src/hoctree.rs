//! Hierarchical search tree over one class of the CAD database.
//!
//! The first level below the root discretizes the azimuth of the initial
//! pose into evenly spaced bins. Below each bin sits the same shape
//! hierarchy: an average-linkage dendrogram over symmetric chamfer distances,
//! flattened to a fixed branching factor. Leaves are individual models.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cad::CadModel;
use crate::error::{Error, Result};
use crate::metrics::{symmetric_indexed, KdTree};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub pose_bins: usize,
    pub branching: usize,
    /// Maximum number of cluster levels below a pose bin.
    pub max_depth: usize,
    /// Canonical samples per model used for clustering; `0` uses all of them.
    pub cluster_samples: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            pose_bins: 4,
            branching: 4,
            max_depth: 6,
            cluster_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeKind {
    Root,
    PoseBin {
        bin: usize,
        rotation_offset: f64,
    },
    Cluster {
        representative: String,
        members: Vec<String>,
    },
    Leaf {
        cad_id: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    #[serde(flatten)]
    pub kind: NodeKind,
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HocTree {
    pub schema_version: u32,
    pub class_label: String,
    pub pose_bins: usize,
    pub branching: usize,
    nodes: Vec<TreeNode>,
    #[serde(skip)]
    parents: Vec<Option<usize>>,
}

/// Binary merge tree produced by agglomerative clustering.
#[derive(Debug, Clone)]
enum Dendro {
    Leaf(usize),
    Merge {
        left: usize,
        right: usize,
        height: f64,
        members: Vec<usize>,
    },
}

impl Dendro {
    fn members(&self) -> Vec<usize> {
        match self {
            Dendro::Leaf(i) => vec![*i],
            Dendro::Merge { members, .. } => members.clone(),
        }
    }
}

/// Symmetric squared chamfer between every pair of models' canonical samples.
pub fn pairwise_chamfer(models: &[Arc<CadModel>], max_samples: usize) -> Vec<Vec<f64>> {
    let sets: Vec<(Vec<crate::geometry::Vec3>, KdTree)> = models
        .iter()
        .map(|m| {
            let pts = if max_samples == 0 {
                m.samples().points().to_vec()
            } else {
                m.samples().subsample(max_samples).into_points()
            };
            let index = KdTree::new(&pts);
            (pts, index)
        })
        .collect();
    let n = models.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| symmetric_indexed(&sets[i].0, &sets[i].1, &sets[j].0, &sets[j].1))
        .collect();
    let mut dist = vec![vec![0.0; n]; n];
    for (&(i, j), d) in pairs.iter().zip(values) {
        dist[i][j] = d;
        dist[j][i] = d;
    }
    dist
}

/// Average-linkage agglomerative clustering; returns dendrogram nodes and the root index.
fn average_linkage(dist: &[Vec<f64>]) -> (Vec<Dendro>, usize) {
    let n = dist.len();
    let mut nodes: Vec<Dendro> = (0..n).map(Dendro::Leaf).collect();
    let mut active: Vec<usize> = (0..n).collect();
    while active.len() > 1 {
        let mut best = (f64::INFINITY, 0, 1);
        for a in 0..active.len() {
            for b in a + 1..active.len() {
                let (ma, mb) = (nodes[active[a]].members(), nodes[active[b]].members());
                let sum: f64 = ma.iter().flat_map(|&i| mb.iter().map(move |&j| dist[i][j])).sum();
                let avg = sum / (ma.len() * mb.len()) as f64;
                if avg < best.0 {
                    best = (avg, a, b);
                }
            }
        }
        let (height, a, b) = best;
        let (left, right) = (active[a], active[b]);
        let mut members = nodes[left].members();
        members.extend(nodes[right].members());
        nodes.push(Dendro::Merge {
            left,
            right,
            height,
            members,
        });
        active.remove(b);
        active[a] = nodes.len() - 1;
    }
    (nodes, active[0])
}

/// Member minimizing the summed distance to the other members; ties keep the first.
pub fn medoid(members: &[usize], dist: &[Vec<f64>]) -> usize {
    medoid_within(members, dist, None, members)
}

/// Medoid of `members` with ties resolved toward `prefer`, then toward the
/// smaller summed distance to `context`, then the first member.
///
/// Two-member clusters always tie; resolving toward the enclosing cluster's
/// representative keeps representatives nested down the tree.
pub fn medoid_within(members: &[usize], dist: &[Vec<f64>], prefer: Option<usize>, context: &[usize]) -> usize {
    let key = |m: usize| {
        let sum: f64 = members.iter().map(|&o| dist[m][o]).sum();
        let ctx: f64 = context.iter().map(|&o| dist[m][o]).sum();
        (sum, Some(m) != prefer, ctx)
    };
    let mut best = (key(members[0]), members[0]);
    for &m in &members[1..] {
        let k = key(m);
        let better = k.0 < best.0 .0 || (k.0 == best.0 .0 && (k.1, k.2) < (best.0 .1, best.0 .2));
        if better {
            best = (k, m);
        }
    }
    best.1
}

struct Builder<'a> {
    dendro: &'a [Dendro],
    dist: &'a [Vec<f64>],
    ids: Vec<String>,
    branching: usize,
    max_depth: usize,
    nodes: Vec<TreeNode>,
}

impl Builder<'_> {
    fn push(&mut self, kind: NodeKind) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode {
            id,
            kind,
            children: Vec::new(),
        });
        id
    }

    /// Splits a dendrogram node into at most `branching` parts, opening the
    /// highest merges first.
    fn split(&self, root: usize) -> Vec<usize> {
        let mut parts = vec![root];
        while parts.len() < self.branching {
            let candidate = parts
                .iter()
                .enumerate()
                .filter_map(|(pos, &p)| match &self.dendro[p] {
                    Dendro::Merge { height, .. } => Some((pos, *height)),
                    Dendro::Leaf(_) => None,
                })
                .fold(None, |acc: Option<(usize, f64)>, (pos, h)| match acc {
                    Some((_, bh)) if bh >= h => acc,
                    _ => Some((pos, h)),
                });
            let Some((pos, _)) = candidate else { break };
            let Dendro::Merge { left, right, .. } = self.dendro[parts[pos]] else {
                unreachable!()
            };
            parts.splice(pos..=pos, [left, right]);
        }
        parts
    }

    fn leaf(&mut self, model: usize) -> usize {
        let cad_id = self.ids[model].clone();
        self.push(NodeKind::Leaf { cad_id })
    }

    /// Attaches the flattened hierarchy of dendrogram node `d` under `parent`.
    fn attach(&mut self, parent: usize, d: usize, depth: usize, parent_rep: Option<usize>) {
        let context = self.dendro[d].members();
        let parts = if depth >= self.max_depth {
            self.dendro[d]
                .members()
                .into_iter()
                .map(|m| (m, true))
                .collect::<Vec<_>>()
        } else {
            self.split(d)
                .into_iter()
                .map(|p| match self.dendro[p] {
                    Dendro::Leaf(m) => (m, true),
                    Dendro::Merge { .. } => (p, false),
                })
                .collect()
        };
        for (part, is_leaf) in parts {
            let child = if is_leaf {
                self.leaf(part)
            } else {
                let members = self.dendro[part].members();
                let rep = medoid_within(&members, self.dist, parent_rep, &context);
                let representative = self.ids[rep].clone();
                let member_ids = members.iter().map(|&m| self.ids[m].clone()).collect();
                let id = self.push(NodeKind::Cluster {
                    representative,
                    members: member_ids,
                });
                self.attach(id, part, depth + 1, Some(rep));
                id
            };
            self.nodes[parent].children.push(child);
        }
    }
}

impl HocTree {
    /// Builds the tree for `class_label` from the matching entries of `models`.
    pub fn build(models: &[Arc<CadModel>], class_label: &str, config: &TreeConfig) -> Result<HocTree> {
        if config.pose_bins < 1 {
            return Err(Error::InvalidConfig("pose_bins must be at least 1".into()));
        }
        if config.branching < 2 {
            return Err(Error::InvalidConfig("branching must be at least 2".into()));
        }
        if config.max_depth < 1 {
            return Err(Error::InvalidConfig("max_depth must be at least 1".into()));
        }
        let class_models: Vec<Arc<CadModel>> = models
            .iter()
            .filter(|m| m.class_label() == class_label)
            .cloned()
            .collect();
        if class_models.is_empty() {
            return Err(Error::EmptyClass(class_label.to_string()));
        }
        let dist = pairwise_chamfer(&class_models, config.cluster_samples);
        let (dendro, top) = average_linkage(&dist);

        let mut builder = Builder {
            dendro: &dendro,
            dist: &dist,
            ids: class_models.iter().map(|m| m.id().to_string()).collect(),
            branching: config.branching,
            max_depth: config.max_depth,
            nodes: Vec::new(),
        };
        let root = builder.push(NodeKind::Root);
        for bin in 0..config.pose_bins {
            let rotation_offset = TAU * bin as f64 / config.pose_bins as f64;
            let bin_node = builder.push(NodeKind::PoseBin { bin, rotation_offset });
            builder.nodes[root].children.push(bin_node);
            builder.attach(bin_node, top, 0, None);
        }
        HocTree::from_nodes(
            class_label.to_string(),
            config.pose_bins,
            config.branching,
            builder.nodes,
        )
    }

    fn from_nodes(class_label: String, pose_bins: usize, branching: usize, nodes: Vec<TreeNode>) -> Result<HocTree> {
        let mut tree = HocTree {
            schema_version: SCHEMA_VERSION,
            class_label,
            pose_bins,
            branching,
            nodes,
            parents: Vec::new(),
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, id: usize) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parents[id]
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        matches!(self.nodes[id].kind, NodeKind::Leaf { .. })
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Leaf { .. }))
            .count()
    }

    /// Ids of all models in the tree, sorted.
    pub fn model_ids(&self) -> BTreeSet<String> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.kind {
                NodeKind::Leaf { cad_id } => Some(cad_id.clone()),
                _ => None,
            })
            .collect()
    }

    /// Leaf node ids below `node`, in depth-first order.
    pub fn leaves_under(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            if self.is_leaf(n) {
                out.push(n);
            }
            stack.extend(self.nodes[n].children.iter().rev());
        }
        out
    }

    /// Ancestors of `node` from its parent up to the root.
    pub fn ancestors(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.parents[node];
        while let Some(p) = cur {
            out.push(p);
            cur = self.parents[p];
        }
        out
    }

    /// Resolves a root-to-leaf path into the model id and the pose-bin offset.
    pub fn path_to_candidate(&self, path: &[usize]) -> Result<(String, f64)> {
        let (&first, &last) = match (path.first(), path.last()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::InvalidPath("empty path".into())),
        };
        if first != self.root() {
            return Err(Error::InvalidPath(format!("path starts at node {first}, not the root")));
        }
        for pair in path.windows(2) {
            if pair[1] >= self.nodes.len() || !self.nodes[pair[0]].children.contains(&pair[1]) {
                return Err(Error::InvalidPath(format!(
                    "node {} is not a child of node {}",
                    pair[1], pair[0]
                )));
            }
        }
        let NodeKind::Leaf { cad_id } = &self.nodes[last].kind else {
            return Err(Error::InvalidPath(format!("path ends at non-leaf node {last}")));
        };
        let offset = path
            .iter()
            .find_map(|&n| match self.nodes[n].kind {
                NodeKind::PoseBin { rotation_offset, .. } => Some(rotation_offset),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidPath("path skips the pose-bin level".into()))?;
        Ok((cad_id.clone(), offset))
    }

    /// Root-to-node path.
    pub fn path_to(&self, node: usize) -> Vec<usize> {
        let mut path = self.ancestors(node);
        path.reverse();
        path.push(node);
        path
    }

    /// Model ids sharing the lowest enclosing node with `cad_id` (including itself).
    pub fn leaf_cluster_of(&self, cad_id: &str) -> BTreeSet<String> {
        let Some(bin) = self.nodes[self.root()].children.first() else {
            return BTreeSet::new();
        };
        let leaf = self
            .leaves_under(*bin)
            .into_iter()
            .find(|&l| matches!(&self.nodes[l].kind, NodeKind::Leaf { cad_id: c } if c == cad_id));
        let Some(leaf) = leaf else {
            return BTreeSet::new();
        };
        let parent = self.parents[leaf].expect("leaf has a parent");
        self.nodes[parent]
            .children
            .iter()
            .filter_map(|&c| match &self.nodes[c].kind {
                NodeKind::Leaf { cad_id } => Some(cad_id.clone()),
                _ => None,
            })
            .collect()
    }

    /// Checks structure and membership invariants; fills the parent table.
    pub fn validate(&mut self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidTree(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let n = self.nodes.len();
        if n == 0 || self.nodes[0].kind != NodeKind::Root {
            return Err(Error::InvalidTree("node 0 must be the root".into()));
        }
        let mut parents = vec![None; n];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return Err(Error::InvalidTree(format!("node at position {i} has id {}", node.id)));
            }
            for &c in &node.children {
                if c >= n || c == 0 {
                    return Err(Error::InvalidTree(format!("node {i} has invalid child {c}")));
                }
                if parents[c].replace(i).is_some() {
                    return Err(Error::InvalidTree(format!("node {c} has more than one parent")));
                }
            }
        }
        self.parents = parents;
        let describe = |tree: &HocTree, node: usize| {
            tree.path_to(node)
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join("/")
        };
        if let Some(orphan) = (1..n).find(|&i| self.parents[i].is_none()) {
            return Err(Error::InvalidTree(format!(
                "node {orphan} is unreachable from the root"
            )));
        }
        // A cycle would leave some node unreachable from the root.
        let reachable = self.leaves_under_all(0);
        if reachable != n {
            return Err(Error::InvalidTree("tree contains a cycle".into()));
        }

        let bins = &self.nodes[0].children;
        if bins.is_empty() {
            return Err(Error::InvalidTree("root has no pose bins".into()));
        }
        let mut reference: Option<BTreeSet<String>> = None;
        for &bin in bins {
            if !matches!(self.nodes[bin].kind, NodeKind::PoseBin { .. }) {
                return Err(Error::InvalidTree(format!("root child {bin} is not a pose bin")));
            }
            let mut seen = BTreeSet::new();
            for leaf in self.leaves_under(bin) {
                let NodeKind::Leaf { cad_id } = &self.nodes[leaf].kind else {
                    unreachable!()
                };
                if !seen.insert(cad_id.clone()) {
                    return Err(Error::InvalidTree(format!(
                        "duplicate leaf id {cad_id} at node path {}",
                        describe(self, leaf)
                    )));
                }
            }
            match &reference {
                None => reference = Some(seen),
                Some(r) if *r != seen => {
                    return Err(Error::InvalidTree(format!(
                        "pose bin {bin} covers a different model set"
                    )));
                }
                _ => {}
            }
        }
        for node in &self.nodes {
            match &node.kind {
                NodeKind::Leaf { .. } if !node.children.is_empty() => {
                    return Err(Error::InvalidTree(format!(
                        "leaf node path {} has children",
                        describe(self, node.id)
                    )));
                }
                NodeKind::Cluster {
                    representative,
                    members,
                } => {
                    let below: BTreeSet<String> = self
                        .leaves_under(node.id)
                        .iter()
                        .map(|&l| match &self.nodes[l].kind {
                            NodeKind::Leaf { cad_id } => cad_id.clone(),
                            _ => unreachable!(),
                        })
                        .collect();
                    let listed: BTreeSet<String> = members.iter().cloned().collect();
                    if below != listed || listed.len() != members.len() {
                        return Err(Error::InvalidTree(format!(
                            "cluster members disagree with descendants at node path {}",
                            describe(self, node.id)
                        )));
                    }
                    if !listed.contains(representative) {
                        return Err(Error::InvalidTree(format!(
                            "representative {representative} is not a member at node path {}",
                            describe(self, node.id)
                        )));
                    }
                }
                NodeKind::Root if node.id != 0 => {
                    return Err(Error::InvalidTree(format!("second root at node {}", node.id)));
                }
                NodeKind::PoseBin { .. } if self.parents[node.id] != Some(0) => {
                    return Err(Error::InvalidTree(format!(
                        "pose bin {} below the first level",
                        node.id
                    )));
                }
                _ => {}
            }
            if !matches!(node.kind, NodeKind::Leaf { .. }) && node.children.is_empty() {
                return Err(Error::InvalidTree(format!(
                    "inner node path {} has no children",
                    describe(self, node.id)
                )));
            }
        }
        Ok(())
    }

    fn leaves_under_all(&self, node: usize) -> usize {
        let mut count = 0;
        let mut stack = vec![node];
        let mut visited = vec![false; self.nodes.len()];
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut visited[n], true) {
                continue;
            }
            count += 1;
            stack.extend(&self.nodes[n].children);
        }
        count
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("tree serializes")
    }

    pub fn from_json(text: &str, origin: &str) -> Result<HocTree> {
        let mut tree: HocTree = serde_json::from_str(text).map_err(|e| {
            Error::parse(
                origin,
                format!("{e} (byte offset {})", byte_offset(text, e.line(), e.column())),
            )
        })?;
        tree.validate()?;
        Ok(tree)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<HocTree> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        HocTree::from_json(&text, &path.display().to_string())
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum();
    before + column
}

/// Trees per class, loaded from `<dir>/<class>.json`.
pub fn load_tree_dir(dir: impl AsRef<Path>) -> Result<BTreeMap<String, HocTree>> {
    let dir = dir.as_ref();
    let mut trees = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<_> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for path in paths {
        if path.extension().and_then(|e| e.to_str()) == Some("json") {
            let tree = HocTree::load(&path)?;
            trees.insert(tree.class_label.clone(), tree);
        }
    }
    Ok(trees)
}
