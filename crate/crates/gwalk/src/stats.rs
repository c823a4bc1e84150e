//! Statistical estimators and goodness-of-fit tests for simulation output.
//!
//! Everything here is generic over the data source: plain means with exact
//! standard errors, Wilson intervals for proportions, chi-square and
//! Kolmogorov-Smirnov tests for distributional comparisons, heavy-tail
//! index/constant fits, and empirical Laplace transforms with bootstrap
//! bands. All randomness is injected by the caller, so results are
//! reproducible under the crate-wide seeding contract.

use rand::Rng;
use serde::Serialize;
use statrs::function::gamma::gamma_ur;

/// Outcome of a single hypothesis test.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TestOutcome {
    pub statistic: f64,
    pub p_value: f64,
    /// Degrees of freedom for chi-square tests; `None` for KS.
    pub dof: Option<usize>,
}

/// Sample mean and its standard error (sd / sqrt(n), unbiased variance).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "need at least two samples for a standard error");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    let var = ss / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Wilson score interval for a binomial proportion at `z` standard normal
/// quantiles (z = 1.96 for 95%).
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    assert!(trials > 0, "Wilson interval needs at least one trial");
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = (z / denom) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Upper-tail p-value of a chi-square statistic with `dof` degrees of freedom.
pub fn chi_square_pvalue(statistic: f64, dof: usize) -> f64 {
    if dof == 0 {
        return 1.0;
    }
    gamma_ur(dof as f64 / 2.0, statistic / 2.0)
}

/// One-sample chi-square test of integer counts against an exact pmf.
///
/// `observed[k]` is the number of samples equal to `k`. Probability mass at
/// values past the end of `observed` is folded into a tail bin with zero
/// observed count. Bins are pooled from the right until every expected
/// count is at least 5.
pub fn chi_square_vs_pmf(observed: &[u64], pmf: &dyn Fn(u64) -> f64) -> TestOutcome {
    let n: u64 = observed.iter().sum();
    assert!(n > 0, "empty sample");
    let nf = n as f64;

    let mut expected: Vec<f64> = (0..observed.len()).map(|k| nf * pmf(k as u64)).collect();
    let mut obs: Vec<f64> = observed.iter().map(|&c| c as f64).collect();
    let covered: f64 = (0..observed.len()).map(|k| pmf(k as u64)).sum();
    let tail_mass = (1.0 - covered).max(0.0);
    expected.push(nf * tail_mass);
    obs.push(0.0);

    // Pool right-to-left so each kept bin has expected count >= 5.
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut acc_o = 0.0;
    let mut acc_e = 0.0;
    for i in (0..obs.len()).rev() {
        acc_o += obs[i];
        acc_e += expected[i];
        if acc_e >= 5.0 {
            bins.push((acc_o, acc_e));
            acc_o = 0.0;
            acc_e = 0.0;
        }
    }
    if acc_e > 0.0 || acc_o > 0.0 {
        if let Some(last) = bins.last_mut() {
            last.0 += acc_o;
            last.1 += acc_e;
        } else {
            bins.push((acc_o, acc_e));
        }
    }
    if bins.len() < 2 {
        return TestOutcome { statistic: 0.0, p_value: 1.0, dof: Some(0) };
    }
    let statistic: f64 = bins.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let dof = bins.len() - 1;
    TestOutcome { statistic, p_value: chi_square_pvalue(statistic, dof), dof: Some(dof) }
}

/// Two-sample chi-square test on pooled-quantile bins of integer samples.
///
/// Bin edges come from the pooled sample; adjacent bins are merged until the
/// expected count on both sides is at least 5 in every bin.
pub fn two_sample_chi_square(a: &[u64], b: &[u64]) -> TestOutcome {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let na = a.len() as f64;
    let nb = b.len() as f64;
    let total = na + nb;

    let mut pooled: Vec<u64> = a.iter().chain(b.iter()).copied().collect();
    pooled.sort_unstable();
    pooled.dedup();

    // Count occurrences of each pooled value on each side.
    let index_of = |v: u64| pooled.binary_search(&v).unwrap();
    let mut ca = vec![0u64; pooled.len()];
    let mut cb = vec![0u64; pooled.len()];
    for &v in a {
        ca[index_of(v)] += 1;
    }
    for &v in b {
        cb[index_of(v)] += 1;
    }

    // Merge adjacent value-bins until both expected counts clear 5.
    let threshold = 5.0;
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut acc_a = 0.0;
    let mut acc_b = 0.0;
    for i in 0..pooled.len() {
        acc_a += ca[i] as f64;
        acc_b += cb[i] as f64;
        let t = acc_a + acc_b;
        if t * na / total >= threshold && t * nb / total >= threshold {
            bins.push((acc_a, acc_b));
            acc_a = 0.0;
            acc_b = 0.0;
        }
    }
    if acc_a + acc_b > 0.0 {
        if let Some(last) = bins.last_mut() {
            last.0 += acc_a;
            last.1 += acc_b;
        } else {
            bins.push((acc_a, acc_b));
        }
    }
    if bins.len() < 2 {
        return TestOutcome { statistic: 0.0, p_value: 1.0, dof: Some(0) };
    }
    let mut statistic = 0.0;
    for &(oa, ob) in &bins {
        let t = oa + ob;
        let ea = t * na / total;
        let eb = t * nb / total;
        statistic += (oa - ea) * (oa - ea) / ea + (ob - eb) * (ob - eb) / eb;
    }
    let dof = bins.len() - 1;
    TestOutcome { statistic, p_value: chi_square_pvalue(statistic, dof), dof: Some(dof) }
}

/// Asymptotic Kolmogorov distribution tail Q(lambda) = 2 sum (-1)^{j-1} e^{-2 j^2 lambda^2}.
pub fn kolmogorov_p(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value.
///
/// Ties are handled by advancing both sides through equal values before the
/// gap is recorded, which makes the test conservative on discrete data.
pub fn two_sample_ks(a: &[f64], b: &[f64]) -> TestOutcome {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let mut sa: Vec<f64> = a.to_vec();
    let mut sb: Vec<f64> = b.to_vec();
    sa.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        let v = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= v {
            i += 1;
        }
        while j < sb.len() && sb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = na * nb / (na + nb);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    TestOutcome { statistic: d, p_value: kolmogorov_p(lambda), dof: None }
}

/// Hill estimator of the tail index from all samples above `threshold`.
///
/// Maximum-likelihood Pareto fit above a deterministic threshold:
/// alpha = n_t / sum ln(x_i / t) over x_i > t.
pub fn hill_estimator(sample: &[f64], threshold: f64) -> f64 {
    let mut count = 0usize;
    let mut log_sum = 0.0;
    for &x in sample {
        if x > threshold {
            count += 1;
            log_sum += (x / threshold).ln();
        }
    }
    if count == 0 || log_sum <= 0.0 {
        return f64::NAN;
    }
    count as f64 / log_sum
}

/// Joint tail fit: log-log regression of the empirical survival function
/// plus Hill estimators, with agreement diagnostics.
#[derive(Clone, Debug, Serialize)]
pub struct TailFit {
    /// Slope estimate from least squares on (ln r, ln S(r)).
    pub index_regression: f64,
    /// Pareto scale x_m implied by the regression: S(r) = (x_m / r)^alpha.
    pub scale_regression: f64,
    /// Hill estimator above the lower window quantile.
    pub index_hill: f64,
    /// Hill estimator above a threshold halfway into the tail (stability probe).
    pub index_hill_deep: f64,
    /// Thresholds actually used for the regression window.
    pub window_thresholds: (f64, f64),
    pub points_in_window: usize,
    /// |hill - regression| exceeded 0.3.
    pub estimators_disagree: bool,
    /// Hill drifted by more than 0.3 between the two thresholds.
    pub hill_unstable: bool,
}

impl TailFit {
    /// A sample consistent with a power tail: both diagnostics quiet.
    pub fn looks_heavy_tailed(&self) -> bool {
        !(self.estimators_disagree || self.hill_unstable)
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

/// Fraction of the sample strictly above `r` (survival function).
fn survival_at(sorted: &[f64], r: f64) -> f64 {
    let n = sorted.len();
    let above = n - sorted.partition_point(|&x| x <= r);
    above as f64 / n as f64
}

/// Fit a tail index over the empirical quantile window `window`
/// (e.g. (0.90, 0.999)).
pub fn tail_index_fit(sample: &[f64], window: (f64, f64)) -> TailFit {
    assert!(sample.len() >= 1000, "tail fits need a large sample");
    let mut sorted: Vec<f64> = sample.to_vec();
    sorted.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());

    let mut t_lo = quantile(&sorted, window.0).max(f64::MIN_POSITIVE);
    let t_hi = quantile(&sorted, window.1);
    // Integer-valued data can collapse the lower quantile to 0; back off to
    // the smallest positive value.
    if t_lo <= 0.0 || t_hi <= t_lo {
        t_lo = sorted.iter().copied().find(|&x| x > 0.0).unwrap_or(1.0);
    }
    if t_hi <= t_lo {
        return TailFit {
            index_regression: f64::NAN,
            scale_regression: f64::NAN,
            index_hill: f64::NAN,
            index_hill_deep: f64::NAN,
            window_thresholds: (t_lo, t_hi),
            points_in_window: 0,
            estimators_disagree: true,
            hill_unstable: true,
        };
    }

    // Log-spaced grid of thresholds; regression of ln S(r) on ln r.
    let grid_points = 40;
    let ln_lo = t_lo.ln();
    let ln_hi = t_hi.ln();
    let mut xs = Vec::with_capacity(grid_points);
    let mut ys = Vec::with_capacity(grid_points);
    for g in 0..grid_points {
        let ln_r = ln_lo + (ln_hi - ln_lo) * g as f64 / (grid_points - 1) as f64;
        let s = survival_at(&sorted, ln_r.exp());
        if s > 0.0 {
            xs.push(ln_r);
            ys.push(s.ln());
        }
    }
    let m = xs.len();
    let (index_regression, scale_regression) = if m >= 3 {
        let mx = xs.iter().sum::<f64>() / m as f64;
        let my = ys.iter().sum::<f64>() / m as f64;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        let intercept = my - slope * mx;
        let alpha = -slope;
        // S(r) = (x_m / r)^alpha  =>  intercept = alpha ln x_m.
        (alpha, (intercept / alpha).exp())
    } else {
        (f64::NAN, f64::NAN)
    };

    let deep = quantile(&sorted, (window.0 + 1.0) / 2.0).max(t_lo * 1.0001);
    let index_hill = hill_estimator(&sorted, t_lo);
    let index_hill_deep = hill_estimator(&sorted, deep);

    let estimators_disagree = !(index_regression - index_hill).abs().is_finite()
        || (index_regression - index_hill).abs() > 0.3;
    let hill_unstable = !(index_hill - index_hill_deep).abs().is_finite()
        || (index_hill - index_hill_deep).abs() > 0.3;

    TailFit {
        index_regression,
        scale_regression,
        index_hill,
        index_hill_deep,
        window_thresholds: (t_lo, t_hi),
        points_in_window: m,
        estimators_disagree,
        hill_unstable,
    }
}

/// Estimate the tail constant c = lim r^index P(X > r) at a known index.
///
/// Averages r^index S_hat(r) over a log-spaced grid in the quantile window.
/// The estimator is a plain mean of one bounded function per sample, so the
/// returned standard error is exact rather than resampled.
pub fn anchored_tail_constant(
    sample: &[f64],
    index: f64,
    window: (f64, f64),
    grid_points: usize,
) -> (f64, f64) {
    assert!(grid_points >= 2 && sample.len() >= 1000);
    let mut sorted: Vec<f64> = sample.to_vec();
    sorted.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    let mut t_lo = quantile(&sorted, window.0).max(f64::MIN_POSITIVE);
    let t_hi = quantile(&sorted, window.1);
    if t_lo <= 0.0 || t_hi <= t_lo {
        t_lo = sorted.iter().copied().find(|&x| x > 0.0).unwrap_or(1.0);
    }
    if t_hi <= t_lo {
        return (f64::NAN, f64::NAN);
    }

    let ln_lo = t_lo.ln();
    let ln_hi = t_hi.ln();
    let grid: Vec<f64> = (0..grid_points)
        .map(|g| (ln_lo + (ln_hi - ln_lo) * g as f64 / (grid_points - 1) as f64).exp())
        .collect();
    // Prefix sums of r^index over the grid: g(x) averages r^index over all
    // grid thresholds the sample exceeds.
    let mut prefix = Vec::with_capacity(grid_points + 1);
    prefix.push(0.0);
    for &r in &grid {
        prefix.push(prefix.last().unwrap() + r.powf(index));
    }

    let m = grid_points as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for &x in sample {
        let k = grid.partition_point(|&r| r < x);
        let g = prefix[k] / m;
        sum += g;
        sum_sq += g * g;
    }
    let n = sample.len() as f64;
    let mean = sum / n;
    let var = (sum_sq - n * mean * mean) / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Conditioning applied before an empirical Laplace transform.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Conditioning {
    None,
    OnPositivity,
}

/// One grid point of an empirical Laplace transform.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LaplacePoint {
    pub lambda: f64,
    pub estimate: f64,
    /// Bootstrap standard error of the estimate.
    pub band: f64,
    /// 2.5% and 97.5% bootstrap percentiles.
    pub band_lo: f64,
    pub band_hi: f64,
}

/// Empirical Laplace transform over a lambda grid with bootstrap bands.
#[derive(Clone, Debug, Serialize)]
pub struct EmpiricalLaplace {
    pub points: Vec<LaplacePoint>,
    pub effective_samples: usize,
    pub warnings: Vec<String>,
}

impl EmpiricalLaplace {
    pub fn sup_distance(&self, target: impl Fn(f64) -> f64) -> f64 {
        self.points
            .iter()
            .map(|p| (p.estimate - target(p.lambda)).abs())
            .fold(0.0, f64::max)
    }
}

const BOOTSTRAP_RESAMPLES: usize = 1000;
const BOOTSTRAP_MAX_BATCHES: usize = 1000;

/// Plug-in estimate of E[exp(-lambda X)] on a grid, with 1000-resample
/// bootstrap bands.
///
/// Large samples are bootstrapped through batch means (up to 1000 equal
/// batches in sample order); the same resample indices drive every lambda so
/// the band preserves cross-lambda correlation.
pub fn empirical_laplace<R: Rng>(
    samples: &[f64],
    lambda_grid: &[f64],
    conditioning: Conditioning,
    rng: &mut R,
) -> EmpiricalLaplace {
    let kept: Vec<f64> = match conditioning {
        Conditioning::None => samples.to_vec(),
        Conditioning::OnPositivity => samples.iter().copied().filter(|&x| x > 0.0).collect(),
    };
    let n = kept.len();
    let mut warnings = Vec::new();
    if n < 100 {
        warnings.push(format!("only {n} effective samples after conditioning"));
    }
    if n == 0 {
        let points = lambda_grid
            .iter()
            .map(|&lambda| LaplacePoint {
                lambda,
                estimate: f64::NAN,
                band: f64::NAN,
                band_lo: f64::NAN,
                band_hi: f64::NAN,
            })
            .collect();
        return EmpiricalLaplace { points, effective_samples: 0, warnings };
    }

    let n_batches = n.min(BOOTSTRAP_MAX_BATCHES);
    // Batch means per lambda, in sample order.
    let mut batch_means = vec![vec![0.0f64; n_batches]; lambda_grid.len()];
    let mut batch_len = vec![0usize; n_batches];
    for (i, &x) in kept.iter().enumerate() {
        let b = i * n_batches / n;
        batch_len[b] += 1;
        for (li, &lambda) in lambda_grid.iter().enumerate() {
            batch_means[li][b] += (-lambda * x).exp();
        }
    }
    for b in 0..n_batches {
        for li in 0..lambda_grid.len() {
            batch_means[li][b] /= batch_len[b] as f64;
        }
    }
    let batch_weight: Vec<f64> =
        batch_len.iter().map(|&l| l as f64 / n as f64).collect();

    // Point estimates are direct means so lambda = 0 comes out exactly 1.
    let estimates: Vec<f64> = lambda_grid
        .iter()
        .map(|&lambda| kept.iter().map(|&x| (-lambda * x).exp()).sum::<f64>() / n as f64)
        .collect();

    // Shared resample indices across lambdas.
    let mut resampled = vec![Vec::with_capacity(BOOTSTRAP_RESAMPLES); lambda_grid.len()];
    let mut picks = vec![0usize; n_batches];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for p in picks.iter_mut() {
            *p = rng.gen_range(0..n_batches);
        }
        for li in 0..lambda_grid.len() {
            let mut acc = 0.0;
            let mut w = 0.0;
            for &b in &picks {
                acc += batch_means[li][b] * batch_weight[b];
                w += batch_weight[b];
            }
            resampled[li].push(acc / w);
        }
    }

    let points = lambda_grid
        .iter()
        .enumerate()
        .map(|(li, &lambda)| {
            if lambda == 0.0 {
                // exp(0) = 1 for every sample and every resample.
                return LaplacePoint {
                    lambda,
                    estimate: 1.0,
                    band: 0.0,
                    band_lo: 1.0,
                    band_hi: 1.0,
                };
            }
            let reps = &mut resampled[li];
            // Bootstrap se of the estimate is the sd across resample means.
            let rm = reps.iter().sum::<f64>() / reps.len() as f64;
            let ss: f64 = reps.iter().map(|r| (r - rm) * (r - rm)).sum();
            let band = (ss / (reps.len() as f64 - 1.0)).sqrt();
            reps.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
            let lo_idx = (reps.len() as f64 * 0.025) as usize;
            let hi_idx = ((reps.len() as f64 * 0.975) as usize).min(reps.len() - 1);
            LaplacePoint {
                lambda,
                estimate: estimates[li],
                band,
                band_lo: reps[lo_idx],
                band_hi: reps[hi_idx],
            }
        })
        .collect();

    EmpiricalLaplace { points, effective_samples: n, warnings }
}

/// Least-squares slope of y on x through the origin.
pub fn slope_through_origin(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| x * y).sum();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geometric<R: Rng>(rng: &mut R, p: f64) -> u64 {
        // Failures before the first success.
        let u: f64 = rng.gen();
        (u.ln() / (1.0 - p).ln()).floor() as u64
    }

    #[test]
    fn mean_and_se_matches_hand_computation() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-12);
        // var = 5/3, se = sqrt(5/12).
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn wilson_interval_brackets_the_point_estimate() {
        let (lo, hi) = wilson_interval(50, 100, 1.96);
        assert!(lo < 0.5 && 0.5 < hi);
        assert!((lo - 0.404).abs() < 5e-3);
        assert!((hi - 0.596).abs() < 5e-3);
        let (lo0, _) = wilson_interval(0, 10, 1.96);
        assert_eq!(lo0, 0.0);
    }

    #[test]
    fn chi_square_accepts_geometric_against_its_own_pmf() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = vec![0u64; 40];
        for _ in 0..100_000 {
            let k = geometric(&mut rng, 0.5) as usize;
            if k < counts.len() {
                counts[k] += 1;
            } else {
                *counts.last_mut().unwrap() += 1;
            }
        }
        let out = chi_square_vs_pmf(&counts, &|k| 0.5f64.powi(k as i32 + 1));
        assert!(out.p_value > 0.01, "p = {}", out.p_value);
    }

    #[test]
    fn chi_square_rejects_wrong_geometric_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = vec![0u64; 40];
        for _ in 0..10_000 {
            let k = (geometric(&mut rng, 0.5) as usize).min(counts.len() - 1);
            counts[k] += 1;
        }
        let third: f64 = 1.0 / 3.0;
        let out = chi_square_vs_pmf(&counts, &|k| third * (1.0 - third).powi(k as i32));
        assert!(out.p_value < 1e-3, "p = {}", out.p_value);
    }

    #[test]
    fn two_sample_chi_square_separates_shifted_geometrics() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a: Vec<u64> = (0..10_000).map(|_| geometric(&mut rng, 0.5)).collect();
        let b: Vec<u64> = (0..10_000).map(|_| geometric(&mut rng, 1.0 / 3.0)).collect();
        let out = two_sample_chi_square(&a, &b);
        assert!(out.p_value < 1e-3, "p = {}", out.p_value);
    }

    #[test]
    fn two_sample_tests_calibrate_on_identical_generators() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut chi_ok = 0;
        let mut ks_ok = 0;
        let trials = 100;
        for _ in 0..trials {
            let a: Vec<u64> = (0..500).map(|_| geometric(&mut rng, 0.5)).collect();
            let b: Vec<u64> = (0..500).map(|_| geometric(&mut rng, 0.5)).collect();
            if two_sample_chi_square(&a, &b).p_value > 0.01 {
                chi_ok += 1;
            }
            let af: Vec<f64> = a.iter().map(|&x| x as f64).collect();
            let bf: Vec<f64> = b.iter().map(|&x| x as f64).collect();
            if two_sample_ks(&af, &bf).p_value > 0.01 {
                ks_ok += 1;
            }
        }
        // Nominal level 1%: 95 of 100 clearing the bar is a loose floor.
        assert!(chi_ok >= 95, "chi-square calibration: {chi_ok}/{trials}");
        assert!(ks_ok >= 95, "ks calibration: {ks_ok}/{trials}");
    }

    #[test]
    fn ks_rejects_a_location_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let a: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.gen::<f64>() + 0.2).collect();
        let out = two_sample_ks(&a, &b);
        assert!(out.p_value < 1e-3, "p = {}", out.p_value);
    }

    fn pareto<R: Rng>(rng: &mut R, scale: f64, alpha: f64) -> f64 {
        scale * rng.gen::<f64>().powf(-1.0 / alpha)
    }

    #[test]
    fn tail_fit_recovers_pareto_index_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let sample: Vec<f64> = (0..1_000_000).map(|_| pareto(&mut rng, 2.0, 1.5)).collect();
        let fit = tail_index_fit(&sample, (0.90, 0.999));
        assert!(
            fit.index_regression > 1.4 && fit.index_regression < 1.6,
            "regression index {}",
            fit.index_regression
        );
        assert!(
            fit.index_hill > 1.4 && fit.index_hill < 1.6,
            "hill index {}",
            fit.index_hill
        );
        assert!(
            (fit.scale_regression - 2.0).abs() < 0.3,
            "scale {}",
            fit.scale_regression
        );
        assert!(fit.looks_heavy_tailed());
    }

    #[test]
    fn tail_fit_flags_an_exponential_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let sample: Vec<f64> = (0..100_000).map(|_| -rng.gen::<f64>().ln()).collect();
        let fit = tail_index_fit(&sample, (0.90, 0.999));
        assert!(!fit.looks_heavy_tailed(), "{fit:?}");
    }

    #[test]
    fn anchored_constant_recovers_pareto_tail_constant() {
        // P(X > r) = (2/r)^1.5, so r^1.5 P(X > r) = 2^1.5 for r >= 2.
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let sample: Vec<f64> = (0..200_000).map(|_| pareto(&mut rng, 2.0, 1.5)).collect();
        let (c, se) = anchored_tail_constant(&sample, 1.5, (0.90, 0.999), 32);
        let truth = 2.0f64.powf(1.5);
        assert!((c - truth).abs() < 3.0 * se + 0.05 * truth, "c = {c}, se = {se}");
        assert!(se / c < 0.2);
    }

    #[test]
    fn laplace_point_mass_is_exact_with_zero_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let samples = vec![0.7; 5000];
        let lambdas = [0.0, 0.5, 1.0, 2.0];
        let el = empirical_laplace(&samples, &lambdas, Conditioning::None, &mut rng);
        for p in &el.points {
            assert!((p.estimate - (-0.7 * p.lambda).exp()).abs() < 1e-12);
            assert!(p.band < 1e-12);
        }
        assert_eq!(el.points[0].estimate, 1.0);
    }

    #[test]
    fn laplace_conditioning_drops_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut samples = vec![0.0; 500];
        samples.extend(vec![2.0; 500]);
        let el = empirical_laplace(&samples, &[1.0], Conditioning::OnPositivity, &mut rng);
        assert_eq!(el.effective_samples, 500);
        assert!((el.points[0].estimate - (-2.0f64).exp()).abs() < 1e-12);
        let un = empirical_laplace(&samples, &[1.0], Conditioning::None, &mut rng);
        assert!((un.points[0].estimate - 0.5 * (1.0 + (-2.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn laplace_is_monotone_and_bands_cover_the_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let samples: Vec<f64> = (0..50_000).map(|_| -rng.gen::<f64>().ln()).collect();
        let lambdas = [0.0, 0.25, 0.5, 1.0, 2.0];
        let el = empirical_laplace(&samples, &lambdas, Conditioning::None, &mut rng);
        for w in el.points.windows(2) {
            assert!(w[1].estimate <= w[0].estimate + 1e-12);
        }
        // Exponential(1): E[e^{-lambda X}] = 1/(1+lambda).
        for p in &el.points {
            let truth = 1.0 / (1.0 + p.lambda);
            assert!(
                (p.estimate - truth).abs() < 4.0 * p.band.max(1e-9),
                "lambda {} estimate {} truth {} band {}",
                p.lambda,
                p.estimate,
                truth,
                p.band
            );
        }
    }

    #[test]
    fn laplace_bands_are_deterministic_given_the_rng() {
        let samples: Vec<f64> = (0..5000).map(|i| (i % 7) as f64).collect();
        let lambdas = [0.3, 1.1];
        let mut r1 = ChaCha8Rng::seed_from_u64(22);
        let mut r2 = ChaCha8Rng::seed_from_u64(22);
        let a = empirical_laplace(&samples, &lambdas, Conditioning::None, &mut r1);
        let b = empirical_laplace(&samples, &lambdas, Conditioning::None, &mut r2);
        for (pa, pb) in a.points.iter().zip(&b.points) {
            assert_eq!(pa.estimate, pb.estimate);
            assert_eq!(pa.band, pb.band);
            assert_eq!(pa.band_lo, pb.band_lo);
        }
    }

    #[test]
    fn slope_through_origin_recovers_proportionality() {
        let xs = [1.0, 2.0, 3.0];
        let ys = [2.0, 4.0, 6.0];
        assert!((slope_through_origin(&xs, &ys) - 2.0).abs() < 1e-12);
    }
}
