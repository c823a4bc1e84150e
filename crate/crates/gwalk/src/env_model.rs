//! Random environment: a Galton-Watson tree with real-valued marks on the
//! vertices and the branching potential V accumulated along ancestral lines.
//!
//! The environment law is described by an [`EnvironmentSpec`]. Its
//! log-Laplace transform `psi(t) = log E[sum_{|x|=1} e^{-t A_x}]` controls
//! the walk regime: we work where `psi(1) = 0` and `psi'(1) < 0`, and the
//! stability exponent `kappa` is the second zero of `psi` on `(1, inf)`.
//!
//! Trees are grown lazily into an arena. Marks are pure functions of the
//! tree seed and the vertex position, so regrowth, laziness and thread
//! scheduling can never change a realized environment.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::StreamKey;

const LN_2: f64 = std::f64::consts::LN_2;

/// One atom of a finite-support environment family: with probability
/// `prob` the vertex gets `marks.len()` children carrying exactly these
/// displacements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteAtom {
    pub prob: f64,
    pub marks: Vec<f64>,
}

/// Parametric description of the offspring-with-marks law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum EnvironmentSpec {
    /// Two children, independent Gaussian marks N(mu, sigma2).
    GaussianBinary { mu: f64, sigma2: f64 },
    /// Finite table of (offspring count, fixed mark vector) outcomes.
    FiniteSupport { atoms: Vec<FiniteAtom> },
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SpecError {
    #[error("sigma2 must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("atom probabilities sum to {0}, expected 1 within 1e-12")]
    BadProbabilityMass(f64),
    #[error("atom probability {0} is negative")]
    NegativeProbability(f64),
    #[error("mean offspring count {0} is not > 1")]
    Subcritical(f64),
    #[error("finite-support table is empty")]
    EmptyTable,
    #[error("psi({t}) is not finite for this family")]
    PsiDomain { t: f64 },
    #[error("psi has no zero on (1, {t_max}); kappa is infinite or out of range")]
    NoKappaRoot { t_max: f64 },
}

impl EnvironmentSpec {
    /// Structural validity: probability mass, positivity, supercriticality.
    pub fn check_well_formed(&self) -> Result<(), SpecError> {
        match self {
            EnvironmentSpec::GaussianBinary { sigma2, .. } => {
                if *sigma2 <= 0.0 {
                    return Err(SpecError::NonPositiveVariance(*sigma2));
                }
            }
            EnvironmentSpec::FiniteSupport { atoms } => {
                if atoms.is_empty() {
                    return Err(SpecError::EmptyTable);
                }
                let mut mass = 0.0;
                for a in atoms {
                    if a.prob < 0.0 {
                        return Err(SpecError::NegativeProbability(a.prob));
                    }
                    mass += a.prob;
                }
                if (mass - 1.0).abs() > 1e-12 {
                    return Err(SpecError::BadProbabilityMass(mass));
                }
            }
        }
        let m = self.mean_offspring();
        if m <= 1.0 {
            return Err(SpecError::Subcritical(m));
        }
        Ok(())
    }

    /// E[N], the mean offspring count.
    pub fn mean_offspring(&self) -> f64 {
        match self {
            EnvironmentSpec::GaussianBinary { .. } => 2.0,
            EnvironmentSpec::FiniteSupport { atoms } => {
                atoms.iter().map(|a| a.prob * a.marks.len() as f64).sum()
            }
        }
    }

    /// Largest possible brood size.
    pub fn max_offspring(&self) -> usize {
        match self {
            EnvironmentSpec::GaussianBinary { .. } => 2,
            EnvironmentSpec::FiniteSupport { atoms } => {
                atoms.iter().map(|a| a.marks.len()).max().unwrap_or(0)
            }
        }
    }

    /// psi(t) and psi'(t), exact for both built-in families.
    ///
    /// Gaussian-binary: psi(t) = ln 2 - t mu + t^2 sigma2 / 2.
    /// Finite-support: direct summation over the table.
    pub fn psi_and_derivative(&self, t: f64) -> Result<(f64, f64), SpecError> {
        match self {
            EnvironmentSpec::GaussianBinary { mu, sigma2 } => {
                let psi = LN_2 - t * mu + t * t * sigma2 / 2.0;
                let dpsi = -mu + t * sigma2;
                Ok((psi, dpsi))
            }
            EnvironmentSpec::FiniteSupport { atoms } => {
                let mut s = 0.0;
                let mut ds = 0.0;
                for a in atoms {
                    for &m in &a.marks {
                        let w = a.prob * (-t * m).exp();
                        s += w;
                        ds += -m * w;
                    }
                }
                if !(s > 0.0 && s.is_finite()) {
                    return Err(SpecError::PsiDomain { t });
                }
                Ok((s.ln(), ds / s))
            }
        }
    }

    /// psi(t) alone.
    pub fn psi(&self, t: f64) -> Result<f64, SpecError> {
        self.psi_and_derivative(t).map(|(p, _)| p)
    }

    /// The stability exponent kappa = inf{t > 1 : psi(t) = 0}.
    ///
    /// Uses the closed form for the Gaussian-binary family when psi(1) = 0
    /// holds, otherwise bisection after sign bracketing; psi is convex so
    /// the bracket is reliable.
    pub fn solve_kappa(&self) -> Result<f64, SpecError> {
        if let EnvironmentSpec::GaussianBinary { mu, sigma2 } = self {
            let psi1 = LN_2 - mu + sigma2 / 2.0;
            if psi1.abs() <= 1e-10 {
                let kappa = 2.0 * mu / sigma2 - 1.0;
                if kappa > 1.0 {
                    return Ok(kappa);
                }
                return Err(SpecError::NoKappaRoot { t_max: f64::INFINITY });
            }
        }
        self.solve_kappa_bisect(128.0)
    }

    fn solve_kappa_bisect(&self, t_max: f64) -> Result<f64, SpecError> {
        // Walk outward until psi changes sign, then bisect on psi itself.
        let mut lo = 1.0 + 1e-6;
        if self.psi(lo)? >= 0.0 {
            // psi'(1) >= 0 or numerically flat; no root in the regime we handle.
            return Err(SpecError::NoKappaRoot { t_max });
        }
        let mut hi = 1.5;
        loop {
            if self.psi(hi)? > 0.0 {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if hi > t_max {
                return Err(SpecError::NoKappaRoot { t_max });
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let v = self.psi(mid)?;
            if v.abs() < 1e-12 {
                return Ok(mid);
            }
            if v < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-14 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// E[sum_{x != y, |x| = |y| = 1} e^{-V(x) - V(y)}], in closed form.
    pub fn pair_energy(&self) -> f64 {
        match self {
            EnvironmentSpec::GaussianBinary { mu, sigma2 } => {
                // Marks of the two children are independent.
                let single = (-mu + sigma2 / 2.0).exp();
                2.0 * single * single
            }
            EnvironmentSpec::FiniteSupport { atoms } => {
                let mut total = 0.0;
                for a in atoms {
                    let sum: f64 = a.marks.iter().map(|m| (-m).exp()).sum();
                    let sq: f64 = a.marks.iter().map(|m| (-2.0 * m).exp()).sum();
                    total += a.prob * (sum * sum - sq);
                }
                total
            }
        }
    }

    /// E[sum_{|x|=1} max(-V(x), 0) e^{-kappa V(x)}], the extra mark moment
    /// required when kappa <= 2.
    pub fn negative_part_moment(&self, kappa: f64) -> f64 {
        match self {
            EnvironmentSpec::GaussianBinary { mu, sigma2 } => {
                // Tilting by e^{-kappa a} shifts the mark law to
                // N(mu - kappa sigma2, sigma2); then E[(-B)^+] is the usual
                // Gaussian rectifier mean.
                let sigma = sigma2.sqrt();
                let tilt = (kappa * kappa * sigma2 / 2.0 - kappa * mu).exp();
                let a = kappa * sigma2 - mu;
                let z = a / sigma;
                let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
                let cap_phi = 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
                2.0 * tilt * (a * cap_phi + sigma * phi)
            }
            EnvironmentSpec::FiniteSupport { atoms } => atoms
                .iter()
                .map(|a| {
                    a.prob
                        * a.marks
                            .iter()
                            .map(|m| (-m).max(0.0) * (-kappa * m).exp())
                            .sum::<f64>()
                })
                .sum(),
        }
    }

    /// Whether the mark law has a lattice support (all displacements in
    /// b + g Z for some span g > 0). Gaussian marks are never lattice.
    pub fn is_lattice(&self) -> bool {
        match self {
            EnvironmentSpec::GaussianBinary { .. } => false,
            EnvironmentSpec::FiniteSupport { atoms } => {
                let mut marks: Vec<f64> = Vec::new();
                for a in atoms {
                    if a.prob > 0.0 {
                        marks.extend_from_slice(&a.marks);
                    }
                }
                if marks.len() <= 1 {
                    return true;
                }
                let base = marks[0];
                let mut g = 0.0f64;
                for &m in &marks[1..] {
                    g = float_gcd(g, (m - base).abs());
                }
                // All marks equal, or a common positive span.
                g == 0.0 || g > 1e-9
            }
        }
    }
}

/// Euclid on reals with a fixed tolerance; 0 is the identity.
fn float_gcd(a: f64, b: f64) -> f64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b > 1e-9 {
        let r = a % b;
        a = b;
        b = if r > b - 1e-9 { 0.0 } else { r };
    }
    a
}

/// Canonical test family: two children with N(mu, sigma2) marks chosen so
/// that psi(1) = 0 and psi(kappa_target) = 0.
///
/// Solving the two equations gives sigma2 = 2 ln 2 / kappa_target and
/// mu = ln 2 + sigma2 / 2.
pub fn make_gaussian_binary_family(kappa_target: f64) -> EnvironmentSpec {
    assert!(kappa_target > 1.0, "kappa must exceed 1");
    let sigma2 = 2.0 * LN_2 / kappa_target;
    EnvironmentSpec::GaussianBinary {
        mu: LN_2 + sigma2 / 2.0,
        sigma2,
    }
}

/// Outcome of one assumption check.
#[derive(Clone, Debug, Serialize)]
pub struct AssumptionCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Structured result of [`validate_assumptions`]; never aborts.
#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<AssumptionCheck>,
    pub kappa: Option<f64>,
    pub all_passed: bool,
}

/// Checks the standing assumptions on the environment: the critical
/// boundary case psi(1) = 0 with psi'(1) < 0, existence of kappa,
/// finiteness of psi on a window around [1, kappa ∧ 2], the pair-energy
/// and mark-moment conditions, and the non-lattice requirement.
///
/// `delta` is the half-width of the finiteness window; the theory only
/// asks for some positive value.
pub fn validate_assumptions(spec: &EnvironmentSpec, delta: f64) -> ValidationReport {
    let mut checks = Vec::new();
    let push = |checks: &mut Vec<AssumptionCheck>, name: &str, passed: bool, detail: String| {
        checks.push(AssumptionCheck {
            name: name.to_string(),
            passed,
            detail,
        });
    };

    let well_formed = spec.check_well_formed();
    push(
        &mut checks,
        "well-formed",
        well_formed.is_ok(),
        match &well_formed {
            Ok(()) => format!("mean offspring {}", spec.mean_offspring()),
            Err(e) => e.to_string(),
        },
    );

    let psi1 = spec.psi_and_derivative(1.0);
    let (psi1_ok, dpsi1_ok, psi1_detail) = match &psi1 {
        Ok((p, d)) => (
            p.abs() <= 1e-10,
            *d < 0.0,
            format!("psi(1) = {p:.3e}, psi'(1) = {d:.6}"),
        ),
        Err(e) => (false, false, e.to_string()),
    };
    push(&mut checks, "psi(1)=0", psi1_ok, psi1_detail.clone());
    push(&mut checks, "psi'(1)<0", dpsi1_ok, psi1_detail);

    let kappa = spec.solve_kappa().ok();
    push(
        &mut checks,
        "kappa-exists",
        kappa.is_some(),
        match kappa {
            Some(k) => format!("kappa = {k:.12}"),
            None => "no zero of psi on (1, 128]".to_string(),
        },
    );

    if let Some(k) = kappa {
        let lo = 1.0 - delta;
        let hi = k.min(2.0) + delta;
        let finite = spec.psi(lo).is_ok() && spec.psi(hi).is_ok();
        push(
            &mut checks,
            "psi-finite-window",
            finite,
            format!("psi finite on [{lo:.3}, {hi:.3}]"),
        );

        if k <= 2.0 {
            let m = spec.negative_part_moment(k);
            push(
                &mut checks,
                "negative-part-moment",
                m.is_finite(),
                format!("E[sum (-V)^+ e^(-kappa V)] = {m:.6}"),
            );
        }
    }

    let pair = spec.pair_energy();
    push(
        &mut checks,
        "pair-energy-finite",
        pair.is_finite(),
        format!("E[sum_(x!=y) e^(-V(x)-V(y))] = {pair:.6}"),
    );

    let lattice = spec.is_lattice();
    push(
        &mut checks,
        "non-lattice",
        !lattice,
        if lattice {
            "mark support is contained in a lattice".to_string()
        } else {
            "mark support is not lattice".to_string()
        },
    );

    let all_passed = checks.iter().all(|c| c.passed);
    ValidationReport {
        checks,
        kappa,
        all_passed,
    }
}

/// Draws (offspring count, marks) for one vertex. Built once per campaign;
/// sampling is allocation-free apart from the caller's buffer.
#[derive(Clone, Debug)]
pub enum BroodSampler {
    Gaussian(Normal<f64>),
    Finite { cum: Vec<f64>, atoms: Vec<Vec<f64>> },
}

impl BroodSampler {
    pub fn new(spec: &EnvironmentSpec) -> Self {
        match spec {
            EnvironmentSpec::GaussianBinary { mu, sigma2 } => {
                BroodSampler::Gaussian(Normal::new(*mu, sigma2.sqrt()).expect("sigma2 > 0"))
            }
            EnvironmentSpec::FiniteSupport { atoms } => {
                let mut cum = Vec::with_capacity(atoms.len());
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.prob;
                    cum.push(acc);
                }
                BroodSampler::Finite {
                    cum,
                    atoms: atoms.iter().map(|a| a.marks.clone()).collect(),
                }
            }
        }
    }

    /// Fills `marks` with the brood of the vertex owning `key`. The draw
    /// depends on nothing but the key.
    #[inline]
    pub fn sample(&self, key: StreamKey, marks: &mut Vec<f64>) {
        self.sample_into(&mut key.rng(), marks);
    }

    /// Like [`sample`](Self::sample) but drawing from a caller-provided
    /// stream, for vertices whose stream serves several purposes.
    #[inline]
    pub fn sample_into<R: Rng>(&self, rng: &mut R, marks: &mut Vec<f64>) {
        marks.clear();
        match self {
            BroodSampler::Gaussian(normal) => {
                marks.push(normal.sample(rng));
                marks.push(normal.sample(rng));
            }
            BroodSampler::Finite { cum, atoms } => {
                let u: f64 = rng.gen();
                let mut idx = cum.len() - 1;
                for (i, c) in cum.iter().enumerate() {
                    if u < *c {
                        idx = i;
                        break;
                    }
                }
                marks.extend_from_slice(&atoms[idx]);
            }
        }
    }
}

/// Growth limits; trees are almost surely infinite on non-extinction, so
/// both caps are mandatory.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GrowthCaps {
    pub max_nodes: usize,
    pub max_depth: u32,
}

impl GrowthCaps {
    pub fn new(max_nodes: usize, max_depth: u32) -> Self {
        GrowthCaps {
            max_nodes,
            max_depth,
        }
    }
}

#[derive(Error, Debug, Clone, Copy, PartialEq, Eq)]
pub enum GrowthError {
    #[error("node cap {0} exceeded")]
    NodeCap(usize),
    #[error("depth cap {0} exceeded")]
    DepthCap(u32),
}

/// Handle to a vertex in an [`EnvTree`] arena.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, PartialOrd, Ord)]
pub struct VertexId(pub u32);

pub const ROOT: VertexId = VertexId(0);
const NO_VERTEX: u32 = u32::MAX;

#[derive(Clone, Debug)]
struct EnvNode {
    parent: u32,
    first_child: u32,
    n_children: u16,
    depth: u32,
    mark: f64,
    potential: f64,
    /// e^{-mark}; transition weights only need potential differences.
    e_mark: f64,
    /// Sum of e^{-mark(child)} over grown children.
    down_sum: f64,
    key: StreamKey,
}

/// Lazily grown marked tree. The root `e` sits at index 0 with V(e) = 0;
/// its virtual parent e* is not stored (the walk handles it as a
/// reflecting state).
#[derive(Clone, Debug)]
pub struct EnvTree {
    spec: EnvironmentSpec,
    sampler: BroodSampler,
    root_key: StreamKey,
    nodes: Vec<EnvNode>,
    mark_buf: Vec<f64>,
}

/// One observation of the additive martingale W_k = sum_{|x|=k} e^{-V(x)}.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AdditiveMartingaleSample {
    pub level: u32,
    pub w: f64,
}

impl EnvTree {
    pub fn new(spec: EnvironmentSpec, seed: u64) -> Self {
        Self::with_root_key(spec, StreamKey::root(seed))
    }

    /// Builds a tree whose environment stream starts at `root_key`;
    /// replicate machinery derives these from the master seed.
    pub fn with_root_key(spec: EnvironmentSpec, root_key: StreamKey) -> Self {
        let sampler = BroodSampler::new(&spec);
        let root = EnvNode {
            parent: NO_VERTEX,
            first_child: NO_VERTEX,
            n_children: 0,
            depth: 0,
            mark: 0.0,
            potential: 0.0,
            e_mark: 1.0,
            down_sum: 0.0,
            key: root_key,
        };
        EnvTree {
            spec,
            sampler,
            root_key,
            nodes: vec![root],
            mark_buf: Vec::new(),
        }
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn root_key(&self) -> StreamKey {
        self.root_key
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn parent(&self, v: VertexId) -> Option<VertexId> {
        let p = self.nodes[v.0 as usize].parent;
        (p != NO_VERTEX).then_some(VertexId(p))
    }

    pub fn depth(&self, v: VertexId) -> u32 {
        self.nodes[v.0 as usize].depth
    }

    pub fn mark(&self, v: VertexId) -> f64 {
        self.nodes[v.0 as usize].mark
    }

    pub fn potential(&self, v: VertexId) -> f64 {
        self.nodes[v.0 as usize].potential
    }

    pub fn is_grown(&self, v: VertexId) -> bool {
        self.nodes[v.0 as usize].first_child != NO_VERTEX
    }

    /// Grown children of a vertex; empty both for leaves and for
    /// not-yet-grown vertices.
    pub fn children(&self, v: VertexId) -> impl Iterator<Item = VertexId> + '_ {
        let n = &self.nodes[v.0 as usize];
        let (start, len) = if n.first_child == NO_VERTEX {
            (0u32, 0u16)
        } else {
            (n.first_child, n.n_children)
        };
        (start..start + len as u32).map(VertexId)
    }

    pub fn n_children(&self, v: VertexId) -> usize {
        let n = &self.nodes[v.0 as usize];
        if n.first_child == NO_VERTEX {
            0
        } else {
            n.n_children as usize
        }
    }

    /// Sum over grown children of e^{-mark}; used by transition weights.
    pub fn down_sum(&self, v: VertexId) -> f64 {
        self.nodes[v.0 as usize].down_sum
    }

    pub fn e_mark(&self, v: VertexId) -> f64 {
        self.nodes[v.0 as usize].e_mark
    }

    /// V along the root-to-vertex path, starting with V(e) = 0.
    pub fn potential_path(&self, v: VertexId) -> Vec<f64> {
        let mut path = Vec::new();
        let mut cur = Some(v);
        while let Some(c) = cur {
            path.push(self.potential(c));
            cur = self.parent(c);
        }
        path.reverse();
        path
    }

    /// Samples the brood on first call and memoizes; later calls return
    /// the same child range. Children of one vertex are contiguous.
    pub fn grow_children(
        &mut self,
        v: VertexId,
        caps: &GrowthCaps,
    ) -> Result<std::ops::Range<u32>, GrowthError> {
        let idx = v.0 as usize;
        if self.nodes[idx].first_child != NO_VERTEX {
            let n = &self.nodes[idx];
            return Ok(n.first_child..n.first_child + n.n_children as u32);
        }
        let depth = self.nodes[idx].depth;
        if depth + 1 > caps.max_depth {
            return Err(GrowthError::DepthCap(caps.max_depth));
        }
        let key = self.nodes[idx].key;
        let base_potential = self.nodes[idx].potential;
        let mut marks = std::mem::take(&mut self.mark_buf);
        self.sampler.sample(key, &mut marks);
        if self.nodes.len() + marks.len() > caps.max_nodes {
            self.mark_buf = marks;
            return Err(GrowthError::NodeCap(caps.max_nodes));
        }
        let start = self.nodes.len() as u32;
        let mut down_sum = 0.0;
        for (i, &mark) in marks.iter().enumerate() {
            let e_mark = (-mark).exp();
            down_sum += e_mark;
            self.nodes.push(EnvNode {
                parent: v.0,
                first_child: NO_VERTEX,
                n_children: 0,
                depth: depth + 1,
                mark,
                potential: base_potential + mark,
                e_mark,
                down_sum: 0.0,
                key: key.child(i as u64),
            });
        }
        let n = marks.len();
        self.mark_buf = marks;
        let node = &mut self.nodes[idx];
        node.first_child = start;
        node.n_children = n as u16;
        node.down_sum = down_sum;
        Ok(start..start + n as u32)
    }

    /// W_k, growing the tree up to level k as needed.
    pub fn additive_martingale(
        &mut self,
        k: u32,
        caps: &GrowthCaps,
    ) -> Result<AdditiveMartingaleSample, GrowthError> {
        let mut frontier = vec![ROOT];
        for _ in 0..k {
            let mut next = Vec::with_capacity(frontier.len() * 2);
            for v in frontier {
                let range = self.grow_children(v, caps)?;
                next.extend(range.map(VertexId));
            }
            frontier = next;
        }
        let w = frontier
            .iter()
            .map(|v| (-self.potential(*v)).exp())
            .sum::<f64>();
        Ok(AdditiveMartingaleSample { level: k, w })
    }
}

/// W_0..W_max_level in a single pass, without materializing the tree.
///
/// Equivalent to growing an [`EnvTree`] from the same key and summing
/// e^{-V} per level, but with O(depth) memory; full levels are
/// exponentially large in `max_level`. `node_budget` bounds the traversal.
pub fn level_weight_profile(
    spec: &EnvironmentSpec,
    root_key: StreamKey,
    max_level: u32,
    node_budget: usize,
) -> Result<Vec<f64>, GrowthError> {
    let sampler = BroodSampler::new(spec);
    let mut sums = vec![0.0f64; max_level as usize + 1];
    // Depth-first with an explicit stack keeps the summation order fixed.
    let mut stack: Vec<(StreamKey, f64, u32)> = vec![(root_key, 0.0, 0)];
    let mut marks = Vec::new();
    let mut visited = 0usize;
    while let Some((key, potential, depth)) = stack.pop() {
        visited += 1;
        if visited > node_budget {
            return Err(GrowthError::NodeCap(node_budget));
        }
        sums[depth as usize] += (-potential).exp();
        if depth < max_level {
            sampler.sample(key, &mut marks);
            for (i, &m) in marks.iter().enumerate().rev() {
                stack.push((key.child(i as u64), potential + m, depth + 1));
            }
        }
    }
    Ok(sums)
}
