//! Regeneration structure of a visited range.
//!
//! A vertex x of the range regenerates above level ell when its edge was
//! crossed exactly once (N_x = 1) and every strict ancestor y with
//! ell < |y| < |x| was crossed at least twice. The regeneration vertices
//! form an antichain; the subtrees they root, taken with the visit counts
//! as types and generations counted from the subtree root, make up the
//! reduced forest. Its per-level type sums and the classical depth-first
//! encodings (height sequence, Lukasiewicz path) are what the scaling
//! limits see.

use serde::Serialize;

use crate::env_model::{EnvTree, VertexId, ROOT};
use crate::range_sampler::{RangeError, RangeTree, RangeVertexId, RANGE_ROOT};
use crate::walker::WalkRecord;

/// Read access to a finite tree of typed vertices: either a materialized
/// [`RangeTree`] or a walk record viewed through its arena.
pub trait TypedTreeView {
    type Vertex: Copy + Eq + Ord + std::fmt::Debug;
    fn root(&self) -> Self::Vertex;
    /// Visit count N_x; at least 1 for every vertex the view exposes.
    fn ty(&self, v: Self::Vertex) -> u32;
    fn depth(&self, v: Self::Vertex) -> u32;
    fn for_children(&self, v: Self::Vertex, f: &mut dyn FnMut(Self::Vertex));
}

impl TypedTreeView for RangeTree {
    type Vertex = RangeVertexId;

    fn root(&self) -> RangeVertexId {
        RANGE_ROOT
    }

    fn ty(&self, v: RangeVertexId) -> u32 {
        RangeTree::ty(self, v)
    }

    fn depth(&self, v: RangeVertexId) -> u32 {
        RangeTree::depth(self, v)
    }

    fn for_children(&self, v: RangeVertexId, f: &mut dyn FnMut(RangeVertexId)) {
        for c in self.children(v) {
            f(c);
        }
    }
}

/// A finished walk seen as a typed tree: the vertices with positive edge
/// count, typed by that count.
#[derive(Clone, Copy)]
pub struct WalkRangeView<'a> {
    pub tree: &'a EnvTree,
    pub record: &'a WalkRecord,
}

impl<'a> WalkRangeView<'a> {
    pub fn new(tree: &'a EnvTree, record: &'a WalkRecord) -> Self {
        assert!(
            record.edge_counts.first().is_some_and(|&c| c > 0),
            "a completed record visits the root"
        );
        WalkRangeView { tree, record }
    }
}

impl TypedTreeView for WalkRangeView<'_> {
    type Vertex = VertexId;

    fn root(&self) -> VertexId {
        ROOT
    }

    fn ty(&self, v: VertexId) -> u32 {
        self.record.edge_counts[v.0 as usize]
    }

    fn depth(&self, v: VertexId) -> u32 {
        self.tree.depth(v)
    }

    fn for_children(&self, v: VertexId, f: &mut dyn FnMut(VertexId)) {
        for c in self.tree.children(v) {
            if self
                .record
                .edge_counts
                .get(c.0 as usize)
                .is_some_and(|&n| n > 0)
            {
                f(c);
            }
        }
    }
}

/// Regeneration vertices above level `ell`, in depth-first order.
#[derive(Clone, Debug)]
pub struct RegenerationSet<V> {
    pub members: Vec<V>,
    pub ell: u32,
}

impl<V> RegenerationSet<V> {
    pub fn count(&self) -> u64 {
        self.members.len() as u64
    }
}

/// Collects every vertex with |x| > ell, N_x = 1, and N_y >= 2 for all
/// ancestors y with ell < |y| < |x|. Members are discovered depth first;
/// subtrees that can contain no member are pruned.
pub fn extract_regeneration_set<T: TypedTreeView>(
    view: &T,
    ell: u32,
) -> RegenerationSet<T::Vertex> {
    let mut members = Vec::new();
    // (vertex, chain intact through the ancestors strictly above ell)
    let mut stack: Vec<(T::Vertex, bool)> = vec![(view.root(), true)];
    let mut reversed: Vec<T::Vertex> = Vec::new();
    while let Some((v, chain_ok)) = stack.pop() {
        let depth = view.depth(v);
        let ty = view.ty(v);
        if depth > ell {
            if !chain_ok {
                continue;
            }
            if ty == 1 {
                members.push(v);
                // Strict descendants have a type-1 ancestor above ell.
                continue;
            }
        }
        let child_chain = depth <= ell || (chain_ok && ty >= 2);
        reversed.clear();
        view.for_children(v, &mut |c| reversed.push(c));
        for &c in reversed.iter().rev() {
            stack.push((c, child_chain));
        }
    }
    RegenerationSet { members, ell }
}

/// Reorders walk-extracted members by the walk's own discovery order.
pub fn order_by_walk_discovery(
    mut set: RegenerationSet<VertexId>,
    record: &WalkRecord,
) -> RegenerationSet<VertexId> {
    set.members
        .sort_by_key(|v| record.first_visit[v.0 as usize]);
    set
}

/// One subtree of the reduced forest, in depth-first preorder: relative
/// generation, type, and child count per vertex.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ReducedTree {
    pub heights: Vec<u32>,
    pub types: Vec<u32>,
    pub child_counts: Vec<u32>,
}

impl ReducedTree {
    pub fn len(&self) -> usize {
        self.heights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heights.is_empty()
    }
}

/// The subtrees rooted at the regeneration vertices, in member order.
#[derive(Clone, Debug, Serialize)]
pub struct ReducedForest {
    pub trees: Vec<ReducedTree>,
    pub ell: u32,
}

impl ReducedForest {
    pub fn total_vertices(&self) -> u64 {
        self.trees.iter().map(|t| t.len() as u64).sum()
    }
}

/// Per relative level: type sums bold-Z_k and bold-L_k = Z_k + Z_{k+1}.
#[derive(Clone, Debug, Serialize)]
pub struct ReducedLevelStats {
    pub z: Vec<u64>,
    pub l: Vec<u64>,
}

fn subtree_in_preorder<T: TypedTreeView>(view: &T, root: T::Vertex) -> ReducedTree {
    let root_depth = view.depth(root);
    let mut tree = ReducedTree::default();
    let mut stack = vec![root];
    let mut reversed: Vec<T::Vertex> = Vec::new();
    while let Some(v) = stack.pop() {
        reversed.clear();
        view.for_children(v, &mut |c| reversed.push(c));
        tree.heights.push(view.depth(v) - root_depth);
        tree.types.push(view.ty(v));
        tree.child_counts.push(reversed.len() as u32);
        for &c in reversed.iter().rev() {
            stack.push(c);
        }
    }
    tree
}

/// Builds the reduced forest over `regen` (extracted from the same view)
/// together with its level statistics.
pub fn build_reduced_forest<T: TypedTreeView>(
    view: &T,
    regen: &RegenerationSet<T::Vertex>,
) -> (ReducedForest, ReducedLevelStats) {
    let trees: Vec<ReducedTree> = regen
        .members
        .iter()
        .map(|&root| subtree_in_preorder(view, root))
        .collect();
    let forest = ReducedForest {
        trees,
        ell: regen.ell,
    };
    let stats = level_stats_of_forest(&forest);
    (forest, stats)
}

fn level_stats_of_forest(forest: &ReducedForest) -> ReducedLevelStats {
    let max_h = forest
        .trees
        .iter()
        .flat_map(|t| t.heights.iter().copied())
        .max()
        .unwrap_or(0);
    let mut z = vec![0u64; max_h as usize + 1];
    for t in &forest.trees {
        for (&h, &ty) in t.heights.iter().zip(&t.types) {
            z[h as usize] += ty as u64;
        }
    }
    let l = (0..z.len())
        .map(|k| z[k] + z.get(k + 1).copied().unwrap_or(0))
        .collect();
    ReducedLevelStats { z, l }
}

/// Depth-first encodings of a forest: the concatenated height sequence,
/// the Lukasiewicz path as running values (starting at 0, one step of
/// child_count - 1 per vertex), and cumulative vertex counts per tree.
#[derive(Clone, Debug, Serialize)]
pub struct ForestEncoding {
    pub heights: Vec<u32>,
    pub lukasiewicz: Vec<i64>,
    pub vertex_counts: Vec<u64>,
}

pub fn encode_forest(forest: &ReducedForest) -> ForestEncoding {
    let total: usize = forest.trees.iter().map(|t| t.len()).sum();
    let mut heights = Vec::with_capacity(total);
    let mut lukasiewicz = Vec::with_capacity(total + 1);
    let mut vertex_counts = Vec::with_capacity(forest.trees.len());
    lukasiewicz.push(0i64);
    let mut value = 0i64;
    let mut cumulative = 0u64;
    for t in &forest.trees {
        heights.extend_from_slice(&t.heights);
        for &c in &t.child_counts {
            value += c as i64 - 1;
            lukasiewicz.push(value);
        }
        cumulative += t.len() as u64;
        vertex_counts.push(cumulative);
    }
    ForestEncoding {
        heights,
        lukasiewicz,
        vertex_counts,
    }
}

/// Appends `count` extra trees drawn as independent single-excursion
/// annealed ranges, for encoding experiments that want the forest padded
/// beyond its regeneration trees. Off the verification path.
pub fn append_annealed_padding(
    forest: &mut ReducedForest,
    spec: &crate::env_model::EnvironmentSpec,
    key: crate::seeding::StreamKey,
    count: u64,
    caps: &crate::range_sampler::RangeCaps,
) -> Result<(), RangeError> {
    for i in 0..count {
        let range = crate::range_sampler::sample_annealed_range(spec, 1, key.child(i), caps)?;
        forest.trees.push(subtree_in_preorder(&range, RANGE_ROOT));
    }
    Ok(())
}
