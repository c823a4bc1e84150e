//! Distributional checks of the regeneration reduction: the first reduced
//! subtree carries the single-excursion range law, the regeneration count
//! per excursion matches the additive martingale in the mean, and on a
//! frozen environment the count density concentrates as the excursion
//! budget grows.

use gwalk::env_model::level_weight_profile;
use gwalk::montecarlo::{regen_vs_martingale, ExperimentPlan, PlanCaps, SampleMode};
use gwalk::range_sampler::{regen_count_quenched, sample_annealed_range, RangeCaps};
use gwalk::reduction::{build_reduced_forest, extract_regeneration_set};
use gwalk::stats::{mean_and_se, two_sample_ks};
use gwalk::{make_gaussian_binary_family, EnvTree, StreamKey};

fn plan(mode: SampleMode, master_seed: u64) -> ExperimentPlan {
    let plan = ExperimentPlan {
        spec: make_gaussian_binary_family(3.0),
        mode,
        n_grid: vec![100, 200, 400],
        a: 1.0,
        lambda_grid: vec![0.25, 0.5, 1.0, 2.0],
        replicates: 1_000_000,
        master_seed,
        caps: PlanCaps::default(),
    };
    plan.validate().unwrap();
    plan
}

/// Level sums of visit counts over the first reduced subtree against the
/// same sums over a directly sampled single-excursion range: the reduced
/// subtrees are annealed copies of the range tree, so both pairs of
/// samples must pass a two-sample comparison.
#[test]
fn first_reduced_subtree_matches_single_excursion_range() {
    let spec = make_gaussian_binary_family(3.0);
    let base = StreamKey::root(411_007);
    const WANT: usize = 10_000;

    let caps = RangeCaps::new(1 << 20, 64);
    let mut z1_forest = Vec::with_capacity(WANT);
    let mut z2_forest = Vec::with_capacity(WANT);
    let mut seed = 0u64;
    while z1_forest.len() < WANT {
        assert!(
            seed < 200_000,
            "regeneration sets are too sparse: {} hits in {} attempts",
            z1_forest.len(),
            seed
        );
        let rt = sample_annealed_range(&spec, 3, base.child(0).child(seed), &caps).unwrap();
        seed += 1;
        let regen = extract_regeneration_set(&rt, 2);
        if regen.members.is_empty() {
            continue;
        }
        let (forest, _) = build_reduced_forest(&rt, &regen);
        let first = &forest.trees[0];
        let mut z = [0u64; 3];
        for (i, &h) in first.heights.iter().enumerate() {
            if h <= 2 {
                z[h as usize] += u64::from(first.types[i]);
            }
        }
        assert_eq!(z[0], 1, "a regeneration root is visited exactly once");
        z1_forest.push(z[1] as f64);
        z2_forest.push(z[2] as f64);
    }

    let shallow = RangeCaps::new(1 << 20, 2);
    let mut z1_range = Vec::with_capacity(WANT);
    let mut z2_range = Vec::with_capacity(WANT);
    for i in 0..WANT as u64 {
        let rt = sample_annealed_range(&spec, 1, base.child(1).child(i), &shallow).unwrap();
        let lc = rt.level_counts(2);
        z1_range.push(lc[1] as f64);
        z2_range.push(lc[2] as f64);
    }

    let k1 = two_sample_ks(&z1_forest, &z1_range);
    let k2 = two_sample_ks(&z2_forest, &z2_range);
    println!("level-1 KS p = {:.4}, level-2 KS p = {:.4}", k1.p_value, k2.p_value);
    assert!(k1.p_value > 0.01, "level-1 law mismatch: {k1:?}");
    assert!(k2.p_value > 0.01, "level-2 law mismatch: {k2:?}");
}

/// Annealed mean of B^{(n)}/n at n = 200 against the empirical mean of
/// the level-20 additive martingale, 200 seeds per side, 3 pooled
/// standard errors. Both limits are E[W] = 1.
#[test]
fn regen_count_mean_matches_martingale_mean() {
    let plan = plan(SampleMode::RangeSampler, 365_101);
    let report = regen_vs_martingale(&plan, 200, 200, 200, 20).unwrap();
    println!(
        "B/n mean {:.4} (se {:.4}) vs W_20 mean {:.4} (se {:.4})",
        report.b_mean, report.b_se, report.w_mean, report.w_se
    );
    assert_eq!(report.ell, 28);
    assert_eq!(report.cap_hits, 0);
    assert!(
        report.pass,
        "regeneration density disagrees with the martingale mean: {report:#?}"
    );
}

/// On a frozen surviving environment the density B^{(n)}/n concentrates:
/// its sample spread shrinks as n grows (the per-excursion fluctuations
/// average out at rate 1/sqrt(n)) while the mean stays near the tree's
/// own martingale limit estimate.
#[test]
fn regen_density_concentrates_on_frozen_trees() {
    let spec = make_gaussian_binary_family(3.0);
    let caps = PlanCaps::default();
    let growth = caps.growth();
    let base = StreamKey::root(700_511);
    const REPS: u64 = 80;
    const GRID: [u32; 3] = [100, 200, 400];

    // Keep environments whose level-20 martingale weight is well away
    // from extinction so the density has mass to concentrate around.
    let mut chosen: Vec<(u64, f64)> = Vec::new();
    let mut cand = 0u64;
    while chosen.len() < 3 {
        assert!(cand < 64, "a surviving environment should appear quickly");
        let w = level_weight_profile(&spec, base.child(cand).child(0), 20, 1 << 23).unwrap()[20];
        if w > 0.05 {
            chosen.push((cand, w));
        }
        cand += 1;
    }

    for &(cand, w) in &chosen {
        let tkey = base.child(cand);
        let mut env = EnvTree::with_root_key(spec.clone(), tkey.child(0));
        let mut sds = [0.0f64; GRID.len()];
        let mut means = [0.0f64; GRID.len()];
        let mut sems = [0.0f64; GRID.len()];
        for (ni, &n) in GRID.iter().enumerate() {
            let ell = (f64::from(n)).ln().powi(2).floor() as u32;
            let rep_base = tkey.child(1).child(ni as u64);
            let mut xs = Vec::with_capacity(REPS as usize);
            for r in 0..REPS {
                if env.len() > 1_500_000 {
                    env = EnvTree::with_root_key(spec.clone(), tkey.child(0));
                }
                let sample =
                    regen_count_quenched(&mut env, &growth, n, rep_base.child(r), ell, 2_000_000)
                        .unwrap();
                xs.push(sample.count as f64 / f64::from(n));
            }
            let (mean, se) = mean_and_se(&xs);
            means[ni] = mean;
            sems[ni] = se;
            sds[ni] = se * (REPS as f64).sqrt();
        }
        println!(
            "tree {cand}: w = {w:.3}, means = {means:?}, sds = {sds:?}"
        );
        // Quadrupling n halves the sampling spread in theory; 0.85 leaves
        // room for the noise of a standard deviation over 80 replicates.
        assert!(
            sds[2] <= 0.85 * sds[0],
            "spread did not shrink on tree {cand}: sds = {sds:?}"
        );
        for ni in 0..GRID.len() {
            let band = 3.0 * sems[ni] + 0.25 * w.max(0.4);
            assert!(
                (means[ni] - w).abs() <= band,
                "tree {cand} at n = {}: mean {:.3} vs w {:.3} exceeds band {:.3}",
                GRID[ni],
                means[ni],
                w,
                band
            );
        }
    }
}
