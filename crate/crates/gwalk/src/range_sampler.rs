//! Direct sampler for the law of the walk's range.
//!
//! Conditionally on the environment, the set of vertices visited during p
//! excursions, with each vertex x labeled by its edge visit count N_x, is
//! a multi-type branching tree: the root carries type p, and a type-m
//! vertex with down-step weights w_1..w_d and up weight 1 produces child
//! types (k_1..k_d) by drawing T ~ NegBinomial(m, p_up) failures before
//! the m-th success, p_up = 1/(1 + sum w_i), and splitting T over the d
//! children multinomially with weights w_i. Children with k_i = 0 are
//! simply absent. Sampling the range this way skips the walk entirely;
//! one range vertex costs O(1) draws instead of N_x steps.
//!
//! Two RNG layouts are used. Quenched sampling reads marks from a shared
//! [`EnvTree`] and draws offspring from a per-vertex stream under
//! `range_key`, so several replicates can share one environment. Annealed
//! sampling fuses both into a single per-vertex stream (marks first, then
//! offspring); the streaming and materializing annealed drivers share
//! that layout draw for draw, which makes them pathwise comparable.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Poisson};
use serde::Serialize;
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::env_model::{
    BroodSampler, EnvTree, EnvironmentSpec, GrowthCaps, GrowthError, VertexId, ROOT,
};
use crate::seeding::StreamKey;
use crate::walker::TransitionWeights;

/// Conductance data of a root-to-x path: H_x = sum_{e <= w <= x}
/// e^{V(w) - V(x)} drives both the hitting probability and the visit law
/// of the edge into x. Kept in log form; H itself overflows f64 once the
/// running potential maximum exceeds V(x) by ~710.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct ConductancePath {
    pub ln_h: f64,
    pub potential: f64,
}

impl ConductancePath {
    /// H_x, possibly infinite after extreme potentials.
    pub fn h(&self) -> f64 {
        self.ln_h.exp()
    }

    /// ln P(N_x >= 1) = -V(x) - ln H_x for a single excursion.
    pub fn ln_hit(&self) -> f64 {
        -self.potential - self.ln_h
    }

    /// P(N_x >= 1) = e^{-V(x)} / H_x.
    pub fn hit_prob(&self) -> f64 {
        self.ln_hit().exp()
    }

    /// P(N_x = j) for j >= 1: a hit followed by a Geometric(1/H_x)
    /// number of further crossings. P(N_x = 0) is 1 - hit_prob().
    pub fn visit_pmf(&self, j: u32) -> f64 {
        assert!(j >= 1);
        // ln(1 - 1/H) via expm1 keeps precision for H near 1.
        let ln_miss = (-(-self.ln_h).exp_m1()).ln();
        (self.ln_hit() - self.ln_h + (j - 1) as f64 * ln_miss).exp()
    }
}

/// Conductance along a root-to-x potential path (starting with V(e) = 0),
/// via the recursion H_x = 1 + e^{V(x*) - V(x)} H_{x*}, H_e = 1.
pub fn h_and_hit(potentials: &[f64]) -> ConductancePath {
    assert!(!potentials.is_empty(), "path must start at the root");
    let mut ln_h = 0.0;
    for pair in potentials.windows(2) {
        let delta = pair[0] - pair[1];
        // ln(1 + e^{delta + ln_h}) without overflow.
        let s = delta + ln_h;
        ln_h = if s > 0.0 {
            s + (-s).exp().ln_1p()
        } else {
            s.exp().ln_1p()
        };
    }
    ConductancePath {
        ln_h,
        potential: *potentials.last().expect("nonempty"),
    }
}

/// Exact offspring pmf of a type-k range vertex: the probability that the
/// child visit counts equal `counts`, given the one-step law `weights`.
///
/// P = (k-1+T)! / ((k-1)! prod counts_i!) * p_up^k * prod p_i^{counts_i}
/// with T = sum counts_i, evaluated in log domain.
pub fn offspring_pmf(k: u32, counts: &[u64], weights: &TransitionWeights) -> f64 {
    assert!(k >= 1);
    assert_eq!(counts.len(), weights.p_children.len());
    let t: u64 = counts.iter().sum();
    let mut ln_p = ln_gamma(k as f64 + t as f64) - ln_gamma(k as f64)
        + k as f64 * weights.p_up.ln();
    for (&c, &p) in counts.iter().zip(&weights.p_children) {
        if c > 0 {
            if p <= 0.0 {
                return 0.0;
            }
            ln_p += c as f64 * p.ln() - ln_gamma(c as f64 + 1.0);
        }
    }
    ln_p.exp()
}

/// Draws child visit counts for a type-k vertex: T failures before the
/// k-th success at probability p_up, split multinomially over the
/// children. Returns one count per child slot, zeros included.
pub fn sample_offspring_counts<R: Rng>(
    rng: &mut R,
    k: u32,
    weights: &TransitionWeights,
) -> Vec<u64> {
    let mut counts = vec![0u64; weights.p_children.len()];
    if weights.p_children.is_empty() || weights.p_up >= 1.0 {
        return counts;
    }
    let t = sample_neg_binomial(rng, k, weights.p_up);
    let sum: f64 = weights.p_children.iter().sum();
    split_multinomial(rng, t, &weights.p_children, sum, |i, c| counts[i] = c);
    counts
}

/// Caps for range construction. `max_depth` is a truncation boundary:
/// vertices at that depth are kept but not expanded, and the tree is
/// flagged. `max_vertices` exceeded is an error.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RangeCaps {
    pub max_vertices: usize,
    pub max_depth: u32,
}

impl RangeCaps {
    pub fn new(max_vertices: usize, max_depth: u32) -> Self {
        RangeCaps {
            max_vertices,
            max_depth,
        }
    }
}

#[derive(Error, Debug, Clone, Copy, PartialEq, Eq)]
pub enum RangeError {
    #[error("range vertex cap {0} exceeded")]
    VertexCap(usize),
    #[error(transparent)]
    Growth(#[from] GrowthError),
}

const NO_NODE: u32 = u32::MAX;

#[derive(Clone, Debug)]
struct RangeNode {
    parent: u32,
    first_child: u32,
    n_children: u16,
    depth: u32,
    ty: u32,
    env_vertex: u32,
    potential: f64,
}

/// Handle to a vertex of a [`RangeTree`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct RangeVertexId(pub u32);

pub const RANGE_ROOT: RangeVertexId = RangeVertexId(0);

/// Materialized range: the visited tree with visit counts as types.
/// Vertices are stored in breadth-first order, children contiguously.
#[derive(Clone, Debug)]
pub struct RangeTree {
    nodes: Vec<RangeNode>,
    truncated_at_depth: bool,
}

impl RangeTree {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True when expansion stopped at the depth cap, so leaves at the cap
    /// may have unseen offspring.
    pub fn truncated_at_depth(&self) -> bool {
        self.truncated_at_depth
    }

    pub fn ty(&self, v: RangeVertexId) -> u32 {
        self.nodes[v.0 as usize].ty
    }

    pub fn depth(&self, v: RangeVertexId) -> u32 {
        self.nodes[v.0 as usize].depth
    }

    /// V(x) of the environment vertex this range vertex sits on.
    pub fn potential(&self, v: RangeVertexId) -> f64 {
        self.nodes[v.0 as usize].potential
    }

    pub fn parent(&self, v: RangeVertexId) -> Option<RangeVertexId> {
        let p = self.nodes[v.0 as usize].parent;
        (p != NO_NODE).then_some(RangeVertexId(p))
    }

    pub fn children(&self, v: RangeVertexId) -> impl Iterator<Item = RangeVertexId> + '_ {
        let n = &self.nodes[v.0 as usize];
        (n.first_child..n.first_child + n.n_children as u32).map(RangeVertexId)
    }

    pub fn n_children(&self, v: RangeVertexId) -> usize {
        self.nodes[v.0 as usize].n_children as usize
    }

    /// Arena vertex this range vertex sits on; None for annealed trees.
    pub fn env_vertex(&self, v: RangeVertexId) -> Option<VertexId> {
        let e = self.nodes[v.0 as usize].env_vertex;
        (e != NO_NODE).then_some(VertexId(e))
    }

    pub fn vertices(&self) -> impl Iterator<Item = RangeVertexId> {
        (0..self.nodes.len() as u32).map(RangeVertexId)
    }

    /// Z_k = sum of types over level k, for k = 0..=max_level.
    pub fn level_counts(&self, max_level: u32) -> Vec<u64> {
        let mut z = vec![0u64; max_level as usize + 1];
        for n in &self.nodes {
            if n.depth <= max_level {
                z[n.depth as usize] += n.ty as u64;
            }
        }
        z
    }

    /// Number of vertices per level, for k = 0..=max_level.
    pub fn level_sizes(&self, max_level: u32) -> Vec<u64> {
        let mut c = vec![0u64; max_level as usize + 1];
        for n in &self.nodes {
            if n.depth <= max_level {
                c[n.depth as usize] += 1;
            }
        }
        c
    }
}

/// Failures before the m-th success at success probability `p_up`.
///
/// Small m sums geometric draws; large m goes through the exact
/// Gamma-Poisson mixture.
fn sample_neg_binomial<R: Rng>(rng: &mut R, m: u32, p_up: f64) -> u64 {
    debug_assert!(m >= 1);
    if p_up >= 1.0 {
        return 0;
    }
    let ln_q = (-p_up).ln_1p();
    if m <= 16 {
        let mut total = 0u64;
        for _ in 0..m {
            let u: f64 = rng.gen();
            total += ((-u).ln_1p() / ln_q) as u64;
        }
        total
    } else {
        let scale = (1.0 - p_up) / p_up;
        let lambda = Gamma::new(m as f64, scale)
            .expect("m >= 1 and scale > 0")
            .sample(rng);
        if lambda <= 0.0 {
            return 0;
        }
        Poisson::new(lambda).expect("lambda > 0").sample(rng) as u64
    }
}

/// Splits `t` indistinguishable failures over cells with positive weights
/// `weights` (summing to `weight_sum`), multinomially. Calls `emit(i, k)`
/// for every cell with k >= 1 draws, in cell order.
fn split_multinomial<R: Rng>(
    rng: &mut R,
    t: u64,
    weights: &[f64],
    weight_sum: f64,
    mut emit: impl FnMut(usize, u64),
) {
    let mut rem = t;
    let mut rem_w = weight_sum;
    for (i, &w) in weights.iter().enumerate() {
        if rem == 0 {
            break;
        }
        let k = if i + 1 == weights.len() {
            rem
        } else {
            let p = (w / rem_w).clamp(0.0, 1.0);
            Binomial::new(rem, p).expect("p in [0,1]").sample(rng)
        };
        if k > 0 {
            emit(i, k);
        }
        rem -= k;
        rem_w -= w;
    }
}

/// Samples the range of p excursions on the shared environment `env`,
/// growing the arena as needed. Offspring randomness comes from the
/// per-vertex streams under `range_key`, so distinct range keys give
/// independent replicates on the same frozen tree.
pub fn sample_range(
    env: &mut EnvTree,
    env_caps: &GrowthCaps,
    p: u32,
    range_key: StreamKey,
    caps: &RangeCaps,
) -> Result<RangeTree, RangeError> {
    assert!(p >= 1);
    let mut nodes = vec![RangeNode {
        parent: NO_NODE,
        first_child: NO_NODE,
        n_children: 0,
        depth: 0,
        ty: p,
        env_vertex: ROOT.0,
        potential: 0.0,
    }];
    let mut keys = vec![range_key];
    let mut truncated = false;
    let mut head = 0usize;
    let mut e_marks: Vec<f64> = Vec::new();
    while head < nodes.len() {
        let depth = nodes[head].depth;
        if depth >= caps.max_depth {
            // Everything from here on is at or below the cap level.
            truncated = true;
            break;
        }
        let ev = VertexId(nodes[head].env_vertex);
        let children = env.grow_children(ev, env_caps)?;
        e_marks.clear();
        e_marks.extend(children.clone().map(|c| env.e_mark(VertexId(c))));
        let down_sum: f64 = env.down_sum(ev);
        let p_up = 1.0 / (1.0 + down_sum);
        let mut rng = keys[head].rng();
        let t = sample_neg_binomial(&mut rng, nodes[head].ty, p_up);
        let first = nodes.len() as u32;
        let mut n_children = 0u16;
        let parent_key = keys[head];
        if t > 0 {
            let env_ref = &*env;
            let mut cap_hit = false;
            split_multinomial(&mut rng, t, &e_marks, down_sum, |i, k| {
                if nodes.len() >= caps.max_vertices {
                    cap_hit = true;
                    return;
                }
                let ev_child = children.start + i as u32;
                nodes.push(RangeNode {
                    parent: head as u32,
                    first_child: NO_NODE,
                    n_children: 0,
                    depth: depth + 1,
                    ty: u32::try_from(k).expect("visit count fits in u32"),
                    env_vertex: ev_child,
                    potential: env_ref.potential(VertexId(ev_child)),
                });
                keys.push(parent_key.child(i as u64));
                n_children += 1;
            });
            if cap_hit {
                return Err(RangeError::VertexCap(caps.max_vertices));
            }
        }
        nodes[head].first_child = first;
        nodes[head].n_children = n_children;
        head += 1;
    }
    Ok(RangeTree {
        nodes,
        truncated_at_depth: truncated,
    })
}

/// Annealed range of p excursions: environment marks and offspring draws
/// both come from one per-vertex stream under `key` (marks first). The
/// realization is identical, draw for draw, to what the streaming drivers
/// below produce from the same key.
pub fn sample_annealed_range(
    spec: &EnvironmentSpec,
    p: u32,
    key: StreamKey,
    caps: &RangeCaps,
) -> Result<RangeTree, RangeError> {
    assert!(p >= 1);
    let sampler = BroodSampler::new(spec);
    let mut nodes = vec![RangeNode {
        parent: NO_NODE,
        first_child: NO_NODE,
        n_children: 0,
        depth: 0,
        ty: p,
        env_vertex: NO_NODE,
        potential: 0.0,
    }];
    let mut keys = vec![key];
    let mut truncated = false;
    let mut head = 0usize;
    let mut marks: Vec<f64> = Vec::new();
    let mut e_marks: Vec<f64> = Vec::new();
    while head < nodes.len() {
        let depth = nodes[head].depth;
        if depth >= caps.max_depth {
            truncated = true;
            break;
        }
        let vertex_key = keys[head];
        let parent_potential = nodes[head].potential;
        let mut rng = vertex_key.rng();
        sampler.sample_into(&mut rng, &mut marks);
        e_marks.clear();
        e_marks.extend(marks.iter().map(|m| (-m).exp()));
        let down_sum: f64 = e_marks.iter().sum();
        let p_up = 1.0 / (1.0 + down_sum);
        let t = sample_neg_binomial(&mut rng, nodes[head].ty, p_up);
        let first = nodes.len() as u32;
        let mut n_children = 0u16;
        if t > 0 {
            let mut cap_hit = false;
            let marks_ref = &marks;
            split_multinomial(&mut rng, t, &e_marks, down_sum, |i, k| {
                if nodes.len() >= caps.max_vertices {
                    cap_hit = true;
                    return;
                }
                nodes.push(RangeNode {
                    parent: head as u32,
                    first_child: NO_NODE,
                    n_children: 0,
                    depth: depth + 1,
                    ty: u32::try_from(k).expect("visit count fits in u32"),
                    env_vertex: NO_NODE,
                    potential: parent_potential + marks_ref[i],
                });
                keys.push(vertex_key.child(i as u64));
                n_children += 1;
            });
            if cap_hit {
                return Err(RangeError::VertexCap(caps.max_vertices));
            }
        }
        nodes[head].first_child = first;
        nodes[head].n_children = n_children;
        head += 1;
    }
    Ok(RangeTree {
        nodes,
        truncated_at_depth: truncated,
    })
}

/// Streaming annealed level counts: fills `z_out[k]` with Z_k for
/// k = 0..=max_level and returns early once the line dies. Memory stays
/// proportional to the widest level reached, not the whole tree.
pub fn stream_level_counts(
    spec: &EnvironmentSpec,
    p: u32,
    key: StreamKey,
    max_level: u32,
    max_vertices: usize,
    z_out: &mut Vec<u64>,
) -> Result<(), RangeError> {
    assert!(p >= 1);
    let sampler = BroodSampler::new(spec);
    z_out.clear();
    z_out.resize(max_level as usize + 1, 0);
    let mut frontier: Vec<(StreamKey, u32)> = vec![(key, p)];
    let mut next: Vec<(StreamKey, u32)> = Vec::new();
    let mut marks: Vec<f64> = Vec::new();
    let mut e_marks: Vec<f64> = Vec::new();
    let mut visited = 0usize;
    for depth in 0..=max_level {
        if frontier.is_empty() {
            break;
        }
        z_out[depth as usize] = frontier.iter().map(|&(_, ty)| ty as u64).sum();
        if depth == max_level {
            break;
        }
        next.clear();
        for &(vertex_key, ty) in &frontier {
            visited += 1;
            if visited > max_vertices {
                return Err(RangeError::VertexCap(max_vertices));
            }
            let mut rng = vertex_key.rng();
            sampler.sample_into(&mut rng, &mut marks);
            e_marks.clear();
            e_marks.extend(marks.iter().map(|m| (-m).exp()));
            let down_sum: f64 = e_marks.iter().sum();
            let p_up = 1.0 / (1.0 + down_sum);
            let t = sample_neg_binomial(&mut rng, ty, p_up);
            if t > 0 {
                split_multinomial(&mut rng, t, &e_marks, down_sum, |i, k| {
                    next.push((
                        vertex_key.child(i as u64),
                        u32::try_from(k).expect("visit count fits in u32"),
                    ));
                });
            }
        }
        std::mem::swap(&mut frontier, &mut next);
    }
    Ok(())
}

/// Summary of one pruned regeneration traversal.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RegenSample {
    /// Number of vertices x with |x| > ell, N_x = 1, and N_y >= 2 for all
    /// ancestors y with ell < |y| < |x|.
    pub count: u64,
    /// Vertices actually expanded; the traversal prunes every subtree
    /// rooted at a vertex that can contain no regeneration vertex.
    pub expanded: u64,
}

/// Counts regeneration vertices of an annealed range of p excursions
/// without building the tree. A vertex below level `ell` with type 1
/// closes its subtree (nothing inside can regenerate), so the traversal
/// only touches the chain-of-doubles backbone plus level `ell` and above;
/// its expected cost is finite even where the full range has infinite
/// mean size.
pub fn regen_count_annealed(
    spec: &EnvironmentSpec,
    p: u32,
    key: StreamKey,
    ell: u32,
    max_vertices: usize,
) -> Result<RegenSample, RangeError> {
    assert!(p >= 1);
    let sampler = BroodSampler::new(spec);
    let mut count = 0u64;
    let mut expanded = 0u64;
    // Entries are (key, type, depth); only vertices whose descendants can
    // still regenerate are ever pushed.
    let mut stack: Vec<(StreamKey, u32, u32)> = vec![(key, p, 0)];
    let mut marks: Vec<f64> = Vec::new();
    let mut e_marks: Vec<f64> = Vec::new();
    while let Some((vertex_key, ty, depth)) = stack.pop() {
        if depth > ell && ty == 1 {
            count += 1;
            continue;
        }
        if depth > ell && ty < 2 {
            continue;
        }
        expanded += 1;
        if expanded > max_vertices as u64 {
            return Err(RangeError::VertexCap(max_vertices));
        }
        let mut rng = vertex_key.rng();
        sampler.sample_into(&mut rng, &mut marks);
        e_marks.clear();
        e_marks.extend(marks.iter().map(|m| (-m).exp()));
        let down_sum: f64 = e_marks.iter().sum();
        let p_up = 1.0 / (1.0 + down_sum);
        let t = sample_neg_binomial(&mut rng, ty, p_up);
        if t > 0 {
            split_multinomial(&mut rng, t, &e_marks, down_sum, |i, k| {
                stack.push((
                    vertex_key.child(i as u64),
                    u32::try_from(k).expect("visit count fits in u32"),
                    depth + 1,
                ));
            });
        }
    }
    Ok(RegenSample { count, expanded })
}

/// Quenched counterpart of [`regen_count_annealed`]: counts regeneration
/// vertices of a range of p excursions on the frozen environment `env`,
/// expanding only vertices whose subtrees can still contain members.
/// Per-vertex offspring draws use the same key layout as [`sample_range`],
/// so with equal keys the counted set matches the materialized range
/// exactly.
pub fn regen_count_quenched(
    env: &mut EnvTree,
    env_caps: &GrowthCaps,
    p: u32,
    range_key: StreamKey,
    ell: u32,
    max_expanded: usize,
) -> Result<RegenSample, RangeError> {
    assert!(p >= 1);
    let mut count = 0u64;
    let mut expanded = 0u64;
    let mut stack: Vec<(u32, StreamKey, u32, u32)> = vec![(ROOT.0, range_key, p, 0)];
    let mut e_marks: Vec<f64> = Vec::new();
    while let Some((ev, node_key, ty, depth)) = stack.pop() {
        if depth > ell && ty == 1 {
            count += 1;
            continue;
        }
        if depth > ell && ty < 2 {
            continue;
        }
        expanded += 1;
        if expanded > max_expanded as u64 {
            return Err(RangeError::VertexCap(max_expanded));
        }
        let children = env.grow_children(VertexId(ev), env_caps)?;
        e_marks.clear();
        e_marks.extend(children.clone().map(|c| env.e_mark(VertexId(c))));
        let down_sum = env.down_sum(VertexId(ev));
        let p_up = 1.0 / (1.0 + down_sum);
        let mut rng = node_key.rng();
        let t = sample_neg_binomial(&mut rng, ty, p_up);
        if t > 0 {
            split_multinomial(&mut rng, t, &e_marks, down_sum, |i, k| {
                stack.push((
                    children.start + i as u32,
                    node_key.child(i as u64),
                    u32::try_from(k).expect("visit count fits in u32"),
                    depth + 1,
                ));
            });
        }
    }
    Ok(RegenSample { count, expanded })
}
