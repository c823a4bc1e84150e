//! Quenched nearest-neighbor walk on a marked tree.
//!
//! Given an environment, the walk at vertex x steps to the parent with
//! weight e^{-V(x)} and to child x_i with weight e^{-V(x_i)}. The virtual
//! parent e* of the root reflects: from e* the walk returns to the root
//! with probability one. In the regime psi(1) = 0, psi'(1) < 0 the walk
//! is null recurrent, so excursions from e* terminate almost surely but
//! their lengths are heavy tailed; all drivers take explicit caps.
//!
//! Weights are normalized by e^{-V(x)} before sampling, so only potential
//! differences enter and deep excursions cannot underflow.

use serde::Serialize;
use thiserror::Error;

use crate::env_model::{EnvTree, GrowthCaps, GrowthError, VertexId, ROOT};
use crate::range_sampler::{h_and_hit, ConductancePath};
use crate::seeding::StreamKey;

/// Caps for one walk run. Step counts have infinite mean here, so
/// `max_steps` is load bearing, not a formality.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct WalkCaps {
    pub max_steps: u64,
    pub growth: GrowthCaps,
}

impl WalkCaps {
    pub fn new(max_steps: u64, growth: GrowthCaps) -> Self {
        WalkCaps { max_steps, growth }
    }
}

#[derive(Error, Debug, Clone, Copy, PartialEq, Eq)]
pub enum WalkError {
    #[error("step cap {cap} hit after {completed} of {requested} excursions")]
    StepCap {
        cap: u64,
        completed: u32,
        requested: u32,
    },
    #[error(transparent)]
    Growth(#[from] GrowthError),
}

/// One-step transition law at a vertex whose children are grown. At e*
/// the walk moves to the root with probability one instead.
#[derive(Clone, Debug, Serialize)]
pub struct TransitionWeights {
    pub p_up: f64,
    pub p_children: Vec<f64>,
}

/// Transition probabilities at `v`: up with weight e^{-V(v)}, down to
/// child c with weight e^{-V(c)}, normalized.
pub fn transition_weights(tree: &EnvTree, v: VertexId) -> TransitionWeights {
    assert!(tree.is_grown(v), "children of v must be grown");
    let denom = 1.0 + tree.down_sum(v);
    TransitionWeights {
        p_up: 1.0 / denom,
        p_children: tree.children(v).map(|c| tree.e_mark(c) / denom).collect(),
    }
}

/// Everything observable about one finished run of p excursions.
///
/// `edge_counts[v]` is the number of traversals of the oriented edge
/// (parent of v, v) up to the end of the last excursion, indexed like the
/// arena; it covers exactly the vertices grown so far.
#[derive(Clone, Debug)]
pub struct WalkRecord {
    /// Completed excursions from e*.
    pub excursions: u32,
    /// Total steps tau, counting every move including reflections at e*.
    pub tau: u64,
    pub edge_counts: Vec<u32>,
    pub max_depth_reached: u32,
    /// Discovery rank per vertex: 0 for the root, u32::MAX if unvisited.
    pub first_visit: Vec<u32>,
}

impl WalkRecord {
    /// Number of distinct visited vertices, the range size |R|.
    pub fn range_size(&self) -> usize {
        self.edge_counts.iter().filter(|&&c| c > 0).count()
    }
}

/// Per-level crossing counts of a finished record: Z_k sums edge counts
/// over level k, and the local time L_k = Z_k + Z_{k+1} counts the time
/// the level process |X_j| spends at k.
#[derive(Clone, Debug, Serialize)]
pub struct LevelStats {
    pub z: Vec<u64>,
    pub l: Vec<u64>,
}

/// Z and L profiles of `record`; index k runs over 0..=max_depth_reached.
pub fn level_stats(record: &WalkRecord, tree: &EnvTree) -> LevelStats {
    let mut z = vec![0u64; record.max_depth_reached as usize + 1];
    for (idx, &c) in record.edge_counts.iter().enumerate() {
        if c > 0 {
            z[tree.depth(VertexId(idx as u32)) as usize] += c as u64;
        }
    }
    let l = (0..z.len())
        .map(|k| z[k] + z.get(k + 1).copied().unwrap_or(0))
        .collect();
    LevelStats { z, l }
}

fn walk_inner<const TRACE: bool>(
    tree: &mut EnvTree,
    p: u32,
    key: StreamKey,
    caps: &WalkCaps,
    tally: &mut Vec<u64>,
) -> Result<WalkRecord, WalkError> {
    use rand::Rng;
    let mut rng = key.rng();
    let mut edge_counts = vec![0u32; tree.len()];
    let mut first_visit = vec![u32::MAX; tree.len()];
    let mut next_rank = 0u32;
    let mut max_depth = 0u32;
    let mut tau: u64 = 0;
    let mut completed: u32 = 0;
    // None encodes e*.
    let mut pos: Option<VertexId> = None;

    let mut visit = |counts: &mut Vec<u32>, ranks: &mut Vec<u32>, v: VertexId| {
        let i = v.0 as usize;
        if counts[i] == 0 {
            ranks[i] = next_rank;
            next_rank += 1;
        }
        counts[i] += 1;
    };

    while completed < p {
        if tau >= caps.max_steps {
            return Err(WalkError::StepCap {
                cap: caps.max_steps,
                completed,
                requested: p,
            });
        }
        match pos {
            None => {
                // Reflection: e* -> e with probability one.
                visit(&mut edge_counts, &mut first_visit, ROOT);
                pos = Some(ROOT);
                if TRACE {
                    bump_level(tally, 0);
                }
            }
            Some(x) => {
                tree.grow_children(x, &caps.growth)?;
                if tree.len() > edge_counts.len() {
                    edge_counts.resize(tree.len(), 0);
                    first_visit.resize(tree.len(), u32::MAX);
                }
                let denom = 1.0 + tree.down_sum(x);
                let u: f64 = rng.gen::<f64>() * denom;
                if u < 1.0 {
                    match tree.parent(x) {
                        Some(parent) => {
                            pos = Some(parent);
                            if TRACE {
                                bump_level(tally, tree.depth(parent));
                            }
                        }
                        None => {
                            pos = None;
                            completed += 1;
                        }
                    }
                } else {
                    let mut acc = 1.0;
                    let mut chosen = None;
                    for c in tree.children(x) {
                        acc += tree.e_mark(c);
                        if u < acc {
                            chosen = Some(c);
                            break;
                        }
                    }
                    // Rounding in the cumulative sum can leave u just past
                    // the last boundary; the last child is then correct.
                    let c = chosen
                        .or_else(|| tree.children(x).last())
                        .expect("down move implies at least one child");
                    visit(&mut edge_counts, &mut first_visit, c);
                    let d = tree.depth(c);
                    max_depth = max_depth.max(d);
                    pos = Some(c);
                    if TRACE {
                        bump_level(tally, d);
                    }
                }
            }
        }
        tau += 1;
    }

    Ok(WalkRecord {
        excursions: p,
        tau,
        edge_counts,
        max_depth_reached: max_depth,
        first_visit,
    })
}

fn bump_level(tally: &mut Vec<u64>, level: u32) {
    let i = level as usize;
    if tally.len() <= i {
        tally.resize(i + 1, 0);
    }
    tally[i] += 1;
}

/// Runs `p` excursions of the walk from e* on `tree`, growing the
/// environment on demand. The walk randomness comes from `key` alone.
pub fn run_walk(
    tree: &mut EnvTree,
    p: u32,
    key: StreamKey,
    caps: &WalkCaps,
) -> Result<WalkRecord, WalkError> {
    let mut unused = Vec::new();
    walk_inner::<false>(tree, p, key, caps, &mut unused)
}

/// Like [`run_walk`], additionally tallying the arrivals of |X_j| at each
/// level (reflections at e* excluded). Draws the same random stream as
/// [`run_walk`] with the same key; meant for cross-checking [`level_stats`]
/// against the raw trajectory.
pub fn run_walk_traced(
    tree: &mut EnvTree,
    p: u32,
    key: StreamKey,
    caps: &WalkCaps,
) -> Result<(WalkRecord, Vec<u64>), WalkError> {
    let mut tally = Vec::new();
    let record = walk_inner::<true>(tree, p, key, caps, &mut tally)?;
    Ok((record, tally))
}

/// Exact single-excursion visit law of the oriented edge into `v` on the
/// frozen environment `tree`, via the conductance recursion.
pub fn edge_visit_law(tree: &EnvTree, v: VertexId) -> ConductancePath {
    h_and_hit(&tree.potential_path(v))
}
