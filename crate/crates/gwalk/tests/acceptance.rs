//! Acceptance gate: one test per verification criterion, numbered so the
//! harness reports them in order. Statistical checks run on fixed master
//! seeds and fixed replicate budgets; every tolerance is stated at the
//! assertion site or inside the library check it delegates to.

use std::sync::OnceLock;
use std::time::Instant;

use gwalk::env_model::ROOT;
use gwalk::limit_laws::{
    estimate_c_kappa, gamma_abs_one_minus, phi_kappa, CsbpSpec, LimitConstants,
};
use gwalk::montecarlo::{
    additive_martingale_means, joint_report, oracle_gate, plan_constants, reduced_count_panel,
    run_singles_campaign, survival_rate_report, verify_quenched_geometric, yaglom_report,
    ExperimentPlan, PlanCaps, SampleMode, SinglesCampaign, OracleReport,
};
use gwalk::walker::{level_stats, run_walk, WalkCaps, WalkError};
use gwalk::{make_gaussian_binary_family, EnvTree, StreamKey};
use rand::Rng;
use statrs::function::gamma::gamma;

/// Seed of the main experiment stream. Every criterion below is a valid
/// statistical test at its stated level; the seed pins one concrete run
/// so the suite is reproducible.
const MASTER_SEED: u64 = 20_260_816;

fn plan_kappa(kappa: f64, mode: SampleMode) -> ExperimentPlan {
    let plan = ExperimentPlan {
        spec: make_gaussian_binary_family(kappa),
        mode,
        n_grid: vec![100, 200, 400],
        a: 1.0,
        lambda_grid: vec![0.25, 0.5, 1.0, 2.0],
        replicates: 1_000_000,
        master_seed: MASTER_SEED,
        caps: PlanCaps::default(),
    };
    plan.validate().unwrap();
    plan
}

/// Expensive shared state: the equivalence gate, the million-replicate
/// single-excursion campaign and the limit constants, all at kappa = 3.
struct Shared {
    plan: ExperimentPlan,
    gate: OracleReport,
    campaign: SinglesCampaign,
    constants: LimitConstants,
}

static SHARED: OnceLock<Shared> = OnceLock::new();

fn shared() -> &'static Shared {
    SHARED.get_or_init(|| {
        let plan = plan_kappa(3.0, SampleMode::RangeSampler);
        let t0 = Instant::now();
        let gate = oracle_gate(&plan, 100_000, 0.01).expect("oracle gate");
        let campaign = run_singles_campaign(&plan).expect("singles campaign");
        let constants = plan_constants(&plan).expect("limit constants");
        println!("shared state built in {:.1?}", t0.elapsed());
        Shared { plan, gate, campaign, constants }
    })
}

/// Closed-form identities of the limit transform: the explicit Laplace
/// exponent for kappa >= 2, the flow property of the underlying CSBP,
/// and the Gamma reflection identity behind the kappa < 2 constants.
#[test]
fn criterion_01_analytic_identities() {
    let t0 = Instant::now();

    // phi for kappa >= 2 is exactly 1 / (1 + lambda).
    for &kappa in &[2.0, 2.5, 3.0, 7.0] {
        for j in 0..100 {
            let lambda = 10f64.powf(-2.0 + 4.0 * j as f64 / 99.0);
            let diff = (phi_kappa(kappa, lambda) - 1.0 / (1.0 + lambda)).abs();
            assert!(diff <= 1e-12, "phi({kappa}, {lambda}) off by {diff:e}");
        }
    }

    // Flow property v(a, b, v(b, c, lambda)) = v(a, c, lambda).
    let mut rng = StreamKey::root(MASTER_SEED).child(1).rng();
    for i in 0..1000u32 {
        let kappa = [1.5, 2.0, 3.0][(i % 3) as usize];
        let scale = [0.5, 1.0, 2.0][(i % 5) as usize % 3];
        let csbp = CsbpSpec { kappa, branching_scale: scale };
        let a = 5.0 * rng.gen::<f64>();
        let b = a + 2.0 * rng.gen::<f64>() + 1e-3;
        let c = b + 2.0 * rng.gen::<f64>() + 1e-3;
        let lambda = 4.0 * rng.gen::<f64>() + 1e-3;
        let composed = csbp.flow(a, b, csbp.flow(b, c, lambda));
        let direct = csbp.flow(a, c, lambda);
        assert!(
            (composed - direct).abs() <= 1e-12,
            "flow identity broken at kappa {kappa}, scale {scale}, ({a}, {b}, {c}, {lambda})"
        );
    }

    // |Gamma(1 - kappa)| Gamma(kappa) |sin(pi kappa)| / pi = 1 on (1, 2).
    let pi = std::f64::consts::PI;
    for j in 1..=40 {
        let kappa = 1.0 + j as f64 / 41.0;
        let lhs = gamma_abs_one_minus(kappa) * gamma(kappa) * (pi * kappa).sin().abs() / pi;
        assert!((lhs - 1.0).abs() <= 1e-10, "reflection off at kappa {kappa}");
    }

    let elapsed = t0.elapsed();
    println!("analytic identities in {elapsed:.1?}");
    assert!(elapsed.as_secs_f64() < 1.0, "analytic suite too slow: {elapsed:?}");
}

/// Exact integer conservation laws of completed walks: the root edge
/// count equals the excursion count, crossing counts start at p, level
/// local times decompose as L_k = Z_k + Z_{k+1} and sum to tau - p.
#[test]
fn criterion_02_walk_conservation() {
    let t0 = Instant::now();
    for &kappa in &[1.5, 3.0] {
        let spec = make_gaussian_binary_family(kappa);
        let caps = PlanCaps::default();
        let wcaps = WalkCaps::new(caps.max_walk_steps, caps.growth());
        let base = StreamKey::root(MASTER_SEED).child(2).child(if kappa < 2.0 { 0 } else { 1 });
        let mut completed = 0u32;
        let mut seed = 0u64;
        while completed < 50 {
            assert!(seed < 200, "too many step-cap retries at kappa {kappa}");
            let p = (seed % 5) as u32 + 1;
            let key = base.child(seed);
            seed += 1;
            let mut env = EnvTree::with_root_key(spec.clone(), key.child(0));
            let record = match run_walk(&mut env, p, key.child(1), &wcaps) {
                Ok(r) => r,
                Err(WalkError::StepCap { .. }) => continue,
                Err(e) => panic!("unexpected walk error: {e}"),
            };
            completed += 1;

            assert_eq!(record.excursions, p);
            assert_eq!(record.edge_counts[ROOT.0 as usize], p);
            let ls = level_stats(&record, &env);
            assert_eq!(ls.z[0], u64::from(p));
            for k in 0..ls.l.len() {
                let next = ls.z.get(k + 1).copied().unwrap_or(0);
                assert_eq!(ls.l[k], ls.z[k] + next, "L_{k} identity at kappa {kappa}");
            }
            let total_l: u64 = ls.l.iter().sum();
            assert_eq!(total_l, record.tau - u64::from(p));
        }
    }
    let elapsed = t0.elapsed();
    println!("conservation on 100 walks in {elapsed:.1?}");
    assert!(elapsed.as_secs() < 60);
}

/// The walk and the direct range sampler draw the same annealed law:
/// crossing counts at levels 1..3 and the four-generation range size
/// agree at 10^5 replicates per side, for kappa 3 and kappa 1.5.
#[test]
fn criterion_03_sampler_equivalence() {
    let t0 = Instant::now();
    let s = shared();
    for check in &s.gate.checks {
        println!("kappa 3.0 {}: p = {:.4}", check.name, check.outcome.p_value);
    }
    assert!(s.gate.pass, "kappa 3 gate: {:#?}", s.gate);

    let plan15 = plan_kappa(1.5, SampleMode::RangeSampler);
    let gate15 = oracle_gate(&plan15, 100_000, 0.01).expect("kappa 1.5 gate");
    for check in &gate15.checks {
        println!("kappa 1.5 {}: p = {:.4}", check.name, check.outcome.p_value);
    }
    assert!(gate15.pass, "kappa 1.5 gate: {:#?}", gate15);
    println!("equivalence gates in {:.1?}", t0.elapsed());
}

/// Quenched visit law: on 10 frozen environments, the edge visit count
/// of each depth-1 child over 10^5 single excursions follows the
/// hit-then-geometric-restart law parameterized by its conductance path.
#[test]
fn criterion_04_quenched_visit_law() {
    let t0 = Instant::now();
    let plan = plan_kappa(3.0, SampleMode::Walker);
    let report = verify_quenched_geometric(&plan, 10, 100_000, 0.01).expect("visit-law panel");
    for check in &report.checks {
        println!(
            "tree {} child {}: H = {:.3}, p = {:.4}",
            check.tree, check.child_index, check.h, check.outcome.p_value
        );
    }
    println!(
        "visit law on {} vertices in {:.1?}, skipped {} of {} walks",
        report.checks.len(),
        t0.elapsed(),
        report.skipped_walks,
        10 * 100_000
    );
    assert_eq!(report.checks.len(), 20, "expected 20 frozen depth-1 vertices");
    assert!(report.pass, "visit law rejected: {:#?}", report.warnings);
}

/// Unit-mean laws: E[Z_k] = 1 for k <= 10 on single excursions, E[W_k] = 1
/// for k <= 10 over fresh environments, and E[L_m / n] = 2 at every grid
/// slice, each within 3 standard errors.
#[test]
fn criterion_05_unit_mean_laws() {
    let s = shared();
    for k in 0..=10usize {
        let (mean, se) = s.campaign.z_mean(k);
        println!("E[Z_{k}] = {mean:.4} (se {se:.4})");
        assert!(
            (mean - 1.0).abs() <= 3.0 * se.max(f64::EPSILON),
            "crossing mean off at level {k}: {mean} (se {se})"
        );
    }

    let mart = additive_martingale_means(&s.plan, 10, 30_000).expect("martingale means");
    for point in &mart.points {
        println!("E[W_{}] = {:.4} (se {:.4})", point.level, point.mean, point.se);
    }
    assert!(mart.pass, "martingale means: {:#?}", mart.points);

    for (i, slice) in s.campaign.slices.iter().enumerate() {
        let (mean, se) = s.campaign.l_mean(i);
        println!("E[L_{} / n] at n = {}: {mean:.4} (se {se:.4})", slice.m, slice.n);
        assert!(
            (mean - 2.0).abs() <= 3.0 * se,
            "local-time mean off at slice {i}: {mean} (se {se})"
        );
    }
}

/// Survival-rate asymptotics: the scaled survival probability at the
/// critical generation approaches the closed-form rate, its distance to
/// the target does not grow along the grid, and the raw probabilities
/// are monotone in the level.
#[test]
fn criterion_06_survival_rate() {
    let s = shared();
    let report = survival_rate_report(&s.plan, &s.campaign, &s.constants, None);
    for p in &report.points {
        println!(
            "n = {}: scaled survival {:.4} (se {:.4}), target {:.4}",
            p.n, p.scaled, p.scaled_se, report.target
        );
    }
    for v in &report.verdicts {
        println!("{}: {} ({})", v.name, if v.pass { "pass" } else { "FAIL" }, v.detail);
    }
    assert_eq!(report.points.len(), 3);
    assert!(report.pass, "survival-rate report failed");
}

/// Conditional local-time law: among survivors at the critical
/// generation, the Laplace transform of L/n matches the conditional
/// limit curve pointwise at the largest n, and the sup distance does
/// not degrade along the grid.
#[test]
fn criterion_07_conditional_local_time() {
    let s = shared();
    let report = yaglom_report(&s.plan, &s.campaign, &s.constants);
    for slice in &report.slices {
        println!(
            "n = {}: survivors {}, sup distance {:.4}",
            slice.n, slice.survivors, slice.sup_distance
        );
    }
    for v in &report.verdicts {
        println!("{}: {} ({})", v.name, if v.pass { "pass" } else { "FAIL" }, v.detail);
    }
    assert!(report.pass, "conditional local-time law failed");
}

/// Joint two-level transform at m = 200: the estimated joint Laplace
/// functional matches exp(-(1 - phi(2 lambda1 + 2 lambda2))) on a 3 x 3
/// grid and is symmetric in its arguments within statistical error.
#[test]
fn criterion_08_joint_transform() {
    let s = shared();
    let report = joint_report(&s.plan, &s.campaign, 1, &[0.25, 0.5, 1.0]);
    assert_eq!(report.level, 200);
    for p in &report.points {
        println!(
            "lambda = ({:.2}, {:.2}): J = {:.4} (se {:.4}), target {:.4}",
            p.lambda1, p.lambda2, p.estimate, p.se, p.target
        );
    }
    for v in &report.verdicts {
        println!("{}: {} ({})", v.name, if v.pass { "pass" } else { "FAIL" }, v.detail);
    }
    assert_eq!(report.points.len(), 9);
    assert!(report.pass, "joint transform failed");
}

/// Heavy-tail regime kappa = 1.5: the per-excursion regeneration count
/// has tail index near kappa (Hill estimate, with the regression slope
/// agreeing), and the anchored tail constant is positive with a
/// controlled error. The count's survival function approaches its power
/// law from above and only straightens in the extreme tail, so the fit
/// window keeps the top 1e-4 of the sample.
#[test]
fn criterion_09_heavy_tail_constant() {
    let t0 = Instant::now();
    let spec = make_gaussian_binary_family(1.5);
    let key = StreamKey::root(MASTER_SEED).child(9);
    let est = estimate_c_kappa(&spec, 1.5, 1_000_000, 2_000_000, (0.9999, 0.99999), 0.3, key)
        .expect("tail estimate");
    println!(
        "tail index: hill {:.3}, regression {:.3}; c = {:.4} (se {:.4}); {:.1?}",
        est.tail.index_hill,
        est.tail.index_regression,
        est.c_kappa.value,
        est.c_kappa.se,
        t0.elapsed()
    );
    assert!(
        (1.2..=1.8).contains(&est.tail.index_hill),
        "hill index {} outside [1.2, 1.8]",
        est.tail.index_hill
    );
    assert!(
        (est.tail.index_regression - est.tail.index_hill).abs() <= 0.3,
        "index estimators disagree: regression {}, hill {}",
        est.tail.index_regression,
        est.tail.index_hill
    );
    assert!(!est.index_deviates);
    assert!(est.c_kappa.value > 0.0);
    assert!(
        est.c_kappa.se / est.c_kappa.value < 0.20,
        "tail constant too noisy: {} (se {})",
        est.c_kappa.value,
        est.c_kappa.se
    );
}

/// Quenched law of large numbers for the regeneration count: over 50
/// frozen surviving environments, the per-tree mean of B^{(200)}/200
/// regressed on the tree's additive martingale has slope within 20% of
/// one.
#[test]
fn criterion_10_quenched_regen_panel() {
    let t0 = Instant::now();
    let s = shared();
    let panel = reduced_count_panel(&s.plan, 200, 50, 60, 20).expect("quenched panel");
    println!(
        "slope = {:.4} (se {:.4}) over {} trees in {:.1?}",
        panel.slope,
        panel.slope_se,
        panel.points.len(),
        t0.elapsed()
    );
    assert_eq!(panel.points.len(), 50);
    assert!(panel.pass, "regression slope {} outside [0.8, 1.2]", panel.slope);
}

/// Reproducibility: rerunning the full report pipeline on an identical
/// configuration yields byte-identical JSON, whatever the worker count,
/// both in memory and through the file writer.
#[test]
fn criterion_11_deterministic_reports() {
    let plan = ExperimentPlan {
        spec: make_gaussian_binary_family(3.0),
        mode: SampleMode::RangeSampler,
        n_grid: vec![8, 16],
        a: 1.0,
        lambda_grid: vec![0.5, 1.0],
        replicates: 2_000,
        master_seed: 777,
        caps: PlanCaps::default(),
    };
    plan.validate().unwrap();

    let run = || {
        let campaign = run_singles_campaign(&plan).expect("campaign");
        let constants = plan_constants(&plan).expect("constants");
        let survival = survival_rate_report(&plan, &campaign, &constants, None);
        let yaglom = yaglom_report(&plan, &campaign, &constants);
        let joint = joint_report(&plan, &campaign, 1, &plan.lambda_grid);
        (
            serde_json::to_vec_pretty(&survival).unwrap(),
            serde_json::to_vec_pretty(&yaglom).unwrap(),
            serde_json::to_vec_pretty(&joint).unwrap(),
        )
    };

    let ambient = run();
    for workers in [1usize, 3] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        let with_pool = pool.install(run);
        assert!(with_pool == ambient, "reports differ under {workers} workers");
    }

    let dir = std::env::temp_dir().join("gwalk-criterion-11");
    std::fs::create_dir_all(&dir).unwrap();
    let first = dir.join("survival_first.json");
    let second = dir.join("survival_second.json");
    let report: serde_json::Value = serde_json::from_slice(&ambient.0).unwrap();
    gwalk::report::write_json(&first, &report).unwrap();
    gwalk::report::write_json(&second, &report).unwrap();
    let a = std::fs::read(&first).unwrap();
    let b = std::fs::read(&second).unwrap();
    assert!(!a.is_empty() && a == b, "file writer is not reproducible");
    let _ = std::fs::remove_dir_all(&dir);
    println!("reports byte-identical across reruns and worker counts");
}
