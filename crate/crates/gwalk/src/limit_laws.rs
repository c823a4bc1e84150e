//! Analytic limiting objects and constants: the universal Laplace exponent
//! phi, the CSBP transform, the size-biased spine walk, Monte Carlo
//! estimators for the spine constants and the regeneration tail constant,
//! and the assembled survival / local-time / Yaglom targets.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use thiserror::Error;

use crate::env_model::{EnvironmentSpec, SpecError};
use crate::range_sampler::{regen_count_annealed, RangeError};
use crate::seeding::{self, StreamKey};
use crate::stats::{self, TailFit};

#[derive(Error, Debug)]
pub enum LimitError {
    #[error("operation needs {needed}, got kappa = {kappa}")]
    KappaBranch { kappa: f64, needed: &'static str },
    #[error("csbp times must satisfy 0 <= a <= b, got a = {a}, b = {b}")]
    TimeOrder { a: f64, b: f64 },
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Range(#[from] RangeError),
}

/// The universal Laplace exponent: phi(lambda) = 1 - lambda (1 + lambda^beta)^{-1/beta}
/// with beta = min(kappa, 2) - 1. For kappa >= 2 it collapses to 1/(1+lambda).
pub fn phi_kappa(kappa: f64, lambda: f64) -> f64 {
    assert!(kappa > 1.0 && lambda >= 0.0);
    let beta = kappa.min(2.0) - 1.0;
    if lambda == 0.0 {
        return 1.0;
    }
    1.0 - lambda * (1.0 + lambda.powf(beta)).powf(-1.0 / beta)
}

/// Continuous-state branching process with mechanism
/// lambda -> branching_scale * lambda^{min(kappa,2)}.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CsbpSpec {
    pub kappa: f64,
    /// The product C_infty * C_bold_kappa.
    pub branching_scale: f64,
}

impl CsbpSpec {
    /// Flow of the Laplace exponent from time a to b:
    /// v(a, b, lambda) = lambda (1 + (b-a) beta scale lambda^beta)^{-1/beta}.
    pub fn flow(&self, a: f64, b: f64, lambda: f64) -> f64 {
        assert!(self.branching_scale > 0.0);
        let beta = self.kappa.min(2.0) - 1.0;
        if lambda == 0.0 {
            return 0.0;
        }
        lambda
            * (1.0 + (b - a) * beta * self.branching_scale * lambda.powf(beta))
                .powf(-1.0 / beta)
    }

    /// Conditional Laplace transform E[exp(-lambda Y_b) | Y_a = y_a].
    pub fn laplace(&self, y_a: f64, a: f64, b: f64, lambda: f64) -> Result<f64, LimitError> {
        if !(0.0 <= a && a <= b) {
            return Err(LimitError::TimeOrder { a, b });
        }
        assert!(lambda >= 0.0 && y_a >= 0.0);
        Ok((-y_a * self.flow(a, b, lambda)).exp())
    }
}

/// |Gamma(1 - kappa)| for kappa in (1, 2), via Gamma(2 - kappa) / (kappa - 1).
pub fn gamma_abs_one_minus(kappa: f64) -> f64 {
    assert!(kappa > 1.0 && kappa < 2.0);
    gamma(2.0 - kappa) / (kappa - 1.0)
}

/// Closed-form c_0 = E[sum_{x != y, |x|=|y|=1} e^{-V(x)-V(y)}] / (1 - e^{psi(2)}),
/// defined for kappa > 2 (where psi(2) < 0).
pub fn c0_closed_form(spec: &EnvironmentSpec) -> Result<f64, LimitError> {
    let psi2 = spec.psi(2.0)?;
    if psi2 >= 0.0 {
        let kappa = spec.solve_kappa().unwrap_or(f64::NAN);
        return Err(LimitError::KappaBranch { kappa, needed: "kappa > 2 (psi(2) < 0)" });
    }
    Ok(spec.pair_energy() / (1.0 - psi2.exp()))
}

/// How a constant was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    ClosedForm,
    MonteCarlo,
}

/// A numeric constant with its uncertainty and provenance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ConstantValue {
    pub value: f64,
    pub se: f64,
    pub provenance: Provenance,
}

impl ConstantValue {
    pub fn closed(value: f64) -> Self {
        ConstantValue { value, se: 0.0, provenance: Provenance::ClosedForm }
    }

    pub fn monte_carlo(value: f64, se: f64) -> Self {
        ConstantValue { value, se, provenance: Provenance::MonteCarlo }
    }

    pub fn relative_se(&self) -> f64 {
        self.se / self.value.abs()
    }
}

/// Every constant entering the limit theorems, with the case split on kappa.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LimitConstants {
    pub kappa: f64,
    /// Regeneration tail constant, kappa in (1, 2].
    pub c_kappa: Option<ConstantValue>,
    /// Pair-energy constant, kappa > 2.
    pub c_0: Option<ConstantValue>,
    /// C_bold_kappa: c_kappa |Gamma(1-kappa)| for kappa in (1,2), c_2/2 at
    /// kappa = 2, c_0 / C_infty for kappa > 2.
    pub c_bold_kappa: ConstantValue,
    /// C_infty = E[(sum_{j>=0} e^{-S_j})^{-2}].
    pub c_infty: ConstantValue,
    /// c_infty_bold = E[(sum_{j>=1} e^{-S_j})^{-1}].
    pub c_infty_bold: ConstantValue,
    /// |Gamma(1-kappa)|, kappa in (1, 2) only.
    pub gamma_term: Option<f64>,
    /// Limit of m^{1/(min(kappa,2)-1)} P(Z_m > 0) (for kappa = 2, of
    /// (m / log m) P(Z_m > 0)).
    pub survival_rate: ConstantValue,
}

impl LimitConstants {
    /// Annealed survival limit for n * p_n.
    pub fn survival_target(&self) -> f64 {
        self.survival_rate.value
    }

    /// Scale of the Yaglom limit (1 / survival_rate; equals c_0 for kappa > 2).
    pub fn yaglom_scale(&self) -> f64 {
        1.0 / self.survival_rate.value
    }

    /// Yaglom Laplace curve: lambda -> phi(2 lambda / survival_rate).
    pub fn yaglom_target(&self, lambda: f64) -> f64 {
        phi_kappa(self.kappa, 2.0 * lambda * self.yaglom_scale())
    }

    /// C_bold_{kappa, a} = (a beta C_infty C_bold_kappa)^{-1/beta}; the
    /// level-a local-time normalization (1/(a c_0) for kappa > 2).
    pub fn c_bold_kappa_a(&self, a: f64) -> f64 {
        assert!(a > 0.0);
        let beta = self.kappa.min(2.0) - 1.0;
        (a * beta * self.c_infty.value * self.c_bold_kappa.value).powf(-1.0 / beta)
    }

    /// Annealed local-time Laplace target at level a: the mean over W-samples
    /// of exp(-C_{kappa,a} W (1 - phi(2 lambda))). `None` takes W identically
    /// 1, the annealed range-mode normalization.
    pub fn local_time_target(&self, a: f64, lambda: f64, w_samples: Option<&[f64]>) -> f64 {
        let x = self.c_bold_kappa_a(a) * (1.0 - phi_kappa(self.kappa, 2.0 * lambda));
        match w_samples {
            None => (-x).exp(),
            Some(ws) => {
                assert!(!ws.is_empty());
                ws.iter().map(|&w| (-x * w).exp()).sum::<f64>() / ws.len() as f64
            }
        }
    }
}

/// Joint two-level Laplace target exp(-(1 - phi(2 lambda1 + 2 lambda2))).
pub fn joint_target(kappa: f64, lambda1: f64, lambda2: f64) -> f64 {
    (-(1.0 - phi_kappa(kappa, 2.0 * (lambda1 + lambda2)))).exp()
}

/// One-step sampler for the size-biased spine walk S.
#[derive(Clone, Debug)]
pub struct SpineWalk {
    kind: SpineKind,
    /// -psi'(1) > 0 in the null-recurrent regime.
    pub drift: f64,
}

#[derive(Clone, Debug)]
enum SpineKind {
    Gaussian { mean: f64, normal: Normal<f64> },
    /// Displacement outcomes with cumulative e^{-V}-biased weights.
    Categorical { values: Vec<f64>, cum: Vec<f64> },
}

impl SpineWalk {
    /// Build the exponentially tilted step law E[f(S_1)] =
    /// E[sum_{|x|=1} e^{-V(x)} f(V(x))] / e^{psi(1)}.
    pub fn from_spec(spec: &EnvironmentSpec) -> Result<Self, SpecError> {
        let (_, dpsi1) = spec.psi_and_derivative(1.0)?;
        let drift = -dpsi1;
        let kind = match spec {
            EnvironmentSpec::GaussianBinary { mu, sigma2 } => SpineKind::Gaussian {
                mean: mu - sigma2,
                normal: Normal::new(0.0, sigma2.sqrt()).expect("validated sigma"),
            },
            EnvironmentSpec::FiniteSupport { atoms } => {
                let mut values = Vec::new();
                let mut cum = Vec::new();
                let mut total = 0.0;
                for a in atoms {
                    for &m in &a.marks {
                        total += a.prob * (-m).exp();
                        values.push(m);
                        cum.push(total);
                    }
                }
                for c in cum.iter_mut() {
                    *c /= total;
                }
                SpineKind::Categorical { values, cum }
            }
        };
        Ok(SpineWalk { kind, drift })
    }

    /// Draw one step S_1.
    pub fn step<R: Rng>(&self, rng: &mut R) -> f64 {
        match &self.kind {
            SpineKind::Gaussian { mean, normal } => mean + normal.sample(rng),
            SpineKind::Categorical { values, cum } => {
                let u: f64 = rng.gen();
                let idx = cum.partition_point(|&c| c < u).min(values.len() - 1);
                values[idx]
            }
        }
    }
}

/// Default series truncation: 50 / drift spine steps, so the truncated tail
/// weight e^{-S_T} is of order e^{-50} on average paths.
pub fn default_truncation_depth(spec: &EnvironmentSpec) -> Result<usize, SpecError> {
    let spine = SpineWalk::from_spec(spec)?;
    assert!(spine.drift > 0.0, "spine drift must be positive");
    Ok((50.0 / spine.drift).ceil() as usize)
}

/// Monte Carlo estimates of the spine-series constants.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CConstants {
    pub c_infty: ConstantValue,
    pub c_infty_bold: ConstantValue,
    pub truncation_depth: usize,
    pub replicates: usize,
    /// |estimate at T - estimate at T/2| per constant; the empirical
    /// truncation sensitivity.
    pub stability_gap: (f64, f64),
    /// E[sum_{j>T} e^{-S_j}] = r^{T+1}/(1-r) with r = e^{psi(2)}; only
    /// finite when psi(2) < 0 (kappa > 2).
    pub mean_tail_bound: Option<f64>,
    pub warnings: Vec<String>,
}

/// Estimate C_infty = E[(sum_{j>=0} e^{-S_j})^{-2}] and
/// c_infty_bold = E[(sum_{j>=1} e^{-S_j})^{-1}] over truncated spine paths.
pub fn estimate_c_constants(
    spec: &EnvironmentSpec,
    truncation_depth: usize,
    replicates: usize,
    key: StreamKey,
) -> Result<CConstants, SpecError> {
    assert!(replicates >= 100 && truncation_depth >= 2);
    let spine = SpineWalk::from_spec(spec)?;
    assert!(spine.drift > 0.0, "spine drift must be positive");
    let t_half = truncation_depth / 2;

    struct Acc {
        n: f64,
        sum: [f64; 4],
        sum_sq: [f64; 2],
    }

    let chunks = seeding::par_chunk_map(replicates as u64, key, |ck, range| {
        let mut rng = ck.rng();
        let mut acc = Acc { n: 0.0, sum: [0.0; 4], sum_sq: [0.0; 2] };
        for _ in range {
            let mut s = 0.0;
            let mut series = 1.0;
            let mut series_half = 1.0;
            for j in 1..=truncation_depth {
                s += spine.step(&mut rng);
                series += (-s).exp();
                if j == t_half {
                    series_half = series;
                }
            }
            let x = series.powi(-2);
            let y = 1.0 / (series - 1.0).max(1e-300);
            let x_half = series_half.powi(-2);
            let y_half = 1.0 / (series_half - 1.0).max(1e-300);
            acc.n += 1.0;
            acc.sum[0] += x;
            acc.sum[1] += y;
            acc.sum[2] += x_half;
            acc.sum[3] += y_half;
            acc.sum_sq[0] += x * x;
            acc.sum_sq[1] += y * y;
        }
        acc
    });

    let mut n = 0.0;
    let mut sum = [0.0; 4];
    let mut sum_sq = [0.0; 2];
    for c in &chunks {
        n += c.n;
        for i in 0..4 {
            sum[i] += c.sum[i];
        }
        for i in 0..2 {
            sum_sq[i] += c.sum_sq[i];
        }
    }

    let mean = |i: usize| sum[i] / n;
    let se = |i: usize| {
        let m = mean(i);
        ((sum_sq[i] - n * m * m) / (n - 1.0) / n).sqrt()
    };
    let c_infty = ConstantValue::monte_carlo(mean(0), se(0));
    let c_infty_bold = ConstantValue::monte_carlo(mean(1), se(1));
    let stability_gap = ((mean(0) - mean(2)).abs(), (mean(1) - mean(3)).abs());

    let psi2 = spec.psi(2.0)?;
    let mean_tail_bound = if psi2 < 0.0 {
        let r = psi2.exp();
        Some(r.powi(truncation_depth as i32 + 1) / (1.0 - r))
    } else {
        None
    };

    let mut warnings = Vec::new();
    if stability_gap.0 > 0.01 * c_infty.value {
        warnings.push(format!(
            "C_infty truncation sensitivity {:.3e} exceeds 1% of the value",
            stability_gap.0
        ));
    }
    if stability_gap.1 > 0.01 * c_infty_bold.value {
        warnings.push(format!(
            "c_infty_bold truncation sensitivity {:.3e} exceeds 1% of the value",
            stability_gap.1
        ));
    }

    Ok(CConstants {
        c_infty,
        c_infty_bold,
        truncation_depth,
        replicates,
        stability_gap,
        mean_tail_bound,
        warnings,
    })
}

/// Monte Carlo estimate of the regeneration tail constant c_kappa.
#[derive(Clone, Debug, Serialize)]
pub struct CKappaEstimate {
    /// Tail constant at the known index kappa, with exact i.i.d. standard
    /// error (the estimator is a plain mean of a bounded per-sample
    /// functional).
    pub c_kappa: ConstantValue,
    /// Free tail fit of the same sample (index cross-check).
    pub tail: TailFit,
    /// Hill index strayed from kappa by more than the band (default 0.3).
    /// Hill is the index estimate here; the regression slope exists to
    /// corroborate it and to anchor the constant.
    pub index_deviates: bool,
    pub zero_fraction: f64,
    pub replicates: usize,
    pub warnings: Vec<String>,
}

/// Estimate c_kappa = lim r^kappa P(B > r) where B is the regeneration
/// count of a single-excursion range at ell = 0, for kappa in (1, 2].
///
/// The survival function of B approaches its power law from above and is
/// still visibly bent at the 99.9th percentile, so `window` should sit in
/// the extreme top of the sample; shallower windows read the bend, not
/// the exponent, and bias both the index and the constant low.
pub fn estimate_c_kappa(
    spec: &EnvironmentSpec,
    kappa: f64,
    replicates: usize,
    max_vertices: usize,
    window: (f64, f64),
    index_band: f64,
    key: StreamKey,
) -> Result<CKappaEstimate, LimitError> {
    assert!(kappa > 1.0 && kappa <= 2.0, "c_kappa exists for kappa in (1, 2]");
    assert!(replicates >= 1000);

    let chunks = seeding::par_chunk_map(replicates as u64, key, |ck, range| {
        let mut out = Vec::with_capacity((range.end - range.start) as usize);
        for i in range {
            out.push(
                regen_count_annealed(spec, 1, ck.child(i), 0, max_vertices).map(|s| s.count as f64),
            );
        }
        out
    });
    let mut counts = Vec::with_capacity(replicates);
    for r in chunks.into_iter().flatten() {
        counts.push(r?);
    }

    let zero_fraction = counts.iter().filter(|&&c| c == 0.0).count() as f64 / counts.len() as f64;
    let tail = stats::tail_index_fit(&counts, window);
    let (c_hat, c_se) = stats::anchored_tail_constant(&counts, kappa, window, 32);
    let index_deviates = !(tail.index_hill - kappa).abs().is_finite()
        || (tail.index_hill - kappa).abs() > index_band;

    let mut warnings = Vec::new();
    if index_deviates {
        warnings.push(format!(
            "fitted tail index {:.3} deviates from kappa = {} by more than {}",
            tail.index_hill, kappa, index_band
        ));
    }
    if !(c_se / c_hat).is_finite() || c_se / c_hat > 0.2 {
        warnings.push(format!(
            "tail constant relative s.e. {:.1}% exceeds 20%",
            100.0 * c_se / c_hat
        ));
    }

    Ok(CKappaEstimate {
        c_kappa: ConstantValue::monte_carlo(c_hat, c_se),
        tail,
        index_deviates,
        zero_fraction,
        replicates,
        warnings,
    })
}

/// Assemble the full constant set for a family, combining closed forms with
/// the Monte Carlo inputs the branch requires: `c_kappa_mc` for kappa <= 2,
/// nothing extra for kappa > 2 (c_0 is closed form).
pub fn assemble_constants(
    spec: &EnvironmentSpec,
    kappa: f64,
    spine: &CConstants,
    c_kappa_mc: Option<&ConstantValue>,
) -> Result<LimitConstants, LimitError> {
    assert!(kappa > 1.0);
    let c_inf = spine.c_infty;

    if kappa > 2.0 {
        let c0 = c0_closed_form(spec)?;
        // C_bold_kappa = c_0 / C_infty, so the survival rate
        // (beta C_infty C_bold_kappa)^{-1/beta} collapses to the closed
        // form 1/c_0 (beta = 1).
        let cbk = ConstantValue::monte_carlo(c0 / c_inf.value, c0 * c_inf.se / (c_inf.value * c_inf.value));
        return Ok(LimitConstants {
            kappa,
            c_kappa: None,
            c_0: Some(ConstantValue::closed(c0)),
            c_bold_kappa: cbk,
            c_infty: c_inf,
            c_infty_bold: spine.c_infty_bold,
            gamma_term: None,
            survival_rate: ConstantValue::closed(1.0 / c0),
        });
    }

    let ck = *c_kappa_mc.ok_or(LimitError::KappaBranch {
        kappa,
        needed: "a Monte Carlo c_kappa estimate for kappa <= 2",
    })?;

    if (kappa - 2.0).abs() < 1e-12 {
        // kappa = 2: C_bold_2 = c_2 / 2; the survival limit is 1/(C_infty c_2).
        let cbk = ConstantValue::monte_carlo(ck.value / 2.0, ck.se / 2.0);
        let rate = 1.0 / (c_inf.value * ck.value);
        let rel = (c_inf.relative_se().powi(2) + ck.relative_se().powi(2)).sqrt();
        return Ok(LimitConstants {
            kappa,
            c_kappa: Some(ck),
            c_0: None,
            c_bold_kappa: cbk,
            c_infty: c_inf,
            c_infty_bold: spine.c_infty_bold,
            gamma_term: None,
            survival_rate: ConstantValue::monte_carlo(rate, rate * rel),
        });
    }

    let beta = kappa - 1.0;
    let gamma_term = gamma_abs_one_minus(kappa);
    let cbk_value = ck.value * gamma_term;
    let cbk = ConstantValue::monte_carlo(cbk_value, ck.se * gamma_term);
    let rate = (beta * c_inf.value * cbk_value).powf(-1.0 / beta);
    // Delta method through the -1/beta power of a product of independent
    // estimates.
    let rel = (c_inf.relative_se().powi(2) + ck.relative_se().powi(2)).sqrt() / beta;
    Ok(LimitConstants {
        kappa,
        c_kappa: Some(ck),
        c_0: None,
        c_bold_kappa: cbk,
        c_infty: c_inf,
        c_infty_bold: spine.c_infty_bold,
        gamma_term: Some(gamma_term),
        survival_rate: ConstantValue::monte_carlo(rate, rate * rel),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env_model::{make_gaussian_binary_family, FiniteAtom};
    use crate::seeding::{self, StreamKey};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key(seed: u64) -> StreamKey {
        StreamKey::root(seed).child(seeding::tags::SPINE)
    }

    #[test]
    fn phi_matches_closed_forms() {
        assert_eq!(phi_kappa(1.5, 0.0), 1.0);
        assert_eq!(phi_kappa(3.0, 0.0), 1.0);
        assert!((phi_kappa(2.0, 1.0) - 0.5).abs() < 1e-15);
        // kappa = 1.5: 1 - 1 * (1 + 1)^{-2} = 3/4.
        assert!((phi_kappa(1.5, 1.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn phi_above_two_is_exponential_laplace() {
        for kappa in [2.0, 2.5, 3.0, 7.0] {
            for i in 0..100 {
                let lambda = i as f64 * 0.12;
                assert!(
                    (phi_kappa(kappa, lambda) - 1.0 / (1.0 + lambda)).abs() < 1e-12,
                    "kappa {kappa} lambda {lambda}"
                );
            }
        }
    }

    #[test]
    fn phi_is_strictly_decreasing_to_zero() {
        for kappa in [1.2, 1.5, 2.0, 3.0] {
            let mut prev = 1.0;
            for i in 1..200 {
                let v = phi_kappa(kappa, i as f64 * 0.25);
                assert!(v < prev && v > 0.0);
                prev = v;
            }
            // Tail decay is lambda^{-beta} / beta.
            let beta = kappa.min(2.0) - 1.0;
            assert!(phi_kappa(kappa, 1e8) < 1.2 * 1e8f64.powf(-beta) / beta);
        }
    }

    #[test]
    fn csbp_laplace_matches_hand_example() {
        let spec = CsbpSpec { kappa: 2.0, branching_scale: 1.0 };
        assert_eq!(spec.laplace(1.0, 0.0, 1.0, 0.0).unwrap(), 1.0);
        assert!((spec.laplace(0.7, 2.0, 2.0, 1.3).unwrap() - (-0.91f64).exp()).abs() < 1e-12);
        // (1 + 1*1*1)^{-1} = 1/2, so exp(-1/2).
        assert!(
            (spec.laplace(1.0, 0.0, 1.0, 1.0).unwrap() - (-0.5f64).exp()).abs() < 1e-12
        );
        assert!(spec.laplace(1.0, 2.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn csbp_flow_satisfies_the_semigroup_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        use rand::Rng;
        for _ in 0..1000 {
            let kappa = 1.0 + 1.9 * rng.gen::<f64>();
            let spec = CsbpSpec { kappa, branching_scale: 0.1 + 3.0 * rng.gen::<f64>() };
            let a = 2.0 * rng.gen::<f64>();
            let b = a + 2.0 * rng.gen::<f64>();
            let c = b + 2.0 * rng.gen::<f64>();
            let lambda = 5.0 * rng.gen::<f64>();
            let composed = spec.flow(a, b, spec.flow(b, c, lambda));
            let direct = spec.flow(a, c, lambda);
            assert!(
                (composed - direct).abs() < 1e-12 * (1.0 + direct.abs()),
                "kappa {kappa} composed {composed} direct {direct}"
            );
        }
    }

    #[test]
    fn gamma_term_matches_known_value_and_reflection() {
        // |Gamma(-1/2)| = 2 sqrt(pi).
        let pi = std::f64::consts::PI;
        assert!((gamma_abs_one_minus(1.5) - 2.0 * pi.sqrt()).abs() < 1e-10);
        for i in 1..40 {
            let kappa = 1.0 + i as f64 / 41.0;
            let lhs = gamma_abs_one_minus(kappa) * gamma(kappa) * (pi * kappa).sin().abs() / pi;
            assert!((lhs - 1.0).abs() < 1e-10, "kappa {kappa}: {lhs}");
        }
    }

    #[test]
    fn c0_closed_form_matches_hand_computation() {
        let spec = make_gaussian_binary_family(3.0);
        let c0 = c0_closed_form(&spec).unwrap();
        let expected = 0.5 / (1.0 - 2.0f64.powf(-1.0 / 3.0));
        assert!((c0 - expected).abs() < 1e-12);
        assert!((c0 - 2.42366).abs() < 1e-4);

        let sub = make_gaussian_binary_family(1.5);
        assert!(c0_closed_form(&sub).is_err());
    }

    #[test]
    fn spine_step_has_the_tilted_gaussian_law() {
        let spec = make_gaussian_binary_family(3.0);
        let spine = SpineWalk::from_spec(&spec).unwrap();
        let mut rng = key(1).rng();
        let n = 200_000;
        let steps: Vec<f64> = (0..n).map(|_| spine.step(&mut rng)).collect();
        let (mean, se) = stats::mean_and_se(&steps);
        // Tilted mean mu - sigma^2 = (2/3) ln 2 = -psi'(1) = drift.
        let expect = 2.0 / 3.0 * std::f64::consts::LN_2;
        assert!((mean - expect).abs() < 3.0 * se, "mean {mean} vs {expect}");
        assert!((spine.drift - expect).abs() < 1e-12);

        // Tilt identity: E[e^{-theta S_1}] = e^{psi(1+theta)}.
        for theta in [0.5, 1.0] {
            let vals: Vec<f64> = steps.iter().map(|&s| (-theta * s).exp()).collect();
            let (m, s) = stats::mean_and_se(&vals);
            let target = spec.psi(1.0 + theta).unwrap().exp();
            assert!((m - target).abs() < 3.0 * s, "theta {theta}: {m} vs {target}");
        }
    }

    #[test]
    fn spine_point_mass_family_is_deterministic() {
        // Three children with mark ln 3 each: psi(1) = 0, drift = ln 3.
        let c = 3.0f64.ln();
        let spec = EnvironmentSpec::FiniteSupport {
            atoms: vec![FiniteAtom { prob: 1.0, marks: vec![c, c, c] }],
        };
        let spine = SpineWalk::from_spec(&spec).unwrap();
        let mut rng = key(2).rng();
        for _ in 0..50 {
            assert_eq!(spine.step(&mut rng), c);
        }
        assert!((spine.drift - c).abs() < 1e-12);
    }

    #[test]
    fn c_constants_are_bounded_stable_and_deterministic() {
        let spec = make_gaussian_binary_family(3.0);
        let est = estimate_c_constants(&spec, 200, 20_000, key(3)).unwrap();
        // S_0 = 0 contributes 1 to the series, so C_infty <= 1.
        assert!(est.c_infty.value <= 1.0 && est.c_infty.value > 0.0);
        assert!(est.c_infty_bold.value > 0.0 && est.c_infty_bold.value.is_finite());
        assert!(est.c_infty.se > 0.0);
        assert_eq!(est.c_infty.provenance, Provenance::MonteCarlo);
        assert!(est.mean_tail_bound.unwrap() < 1e-10);

        // Doubling the truncation depth moves the estimates by less than
        // two pooled standard errors.
        let deep = estimate_c_constants(&spec, 400, 20_000, key(3)).unwrap();
        let pooled = (est.c_infty.se.powi(2) + deep.c_infty.se.powi(2)).sqrt();
        assert!((est.c_infty.value - deep.c_infty.value).abs() < 2.0 * pooled);

        let again = estimate_c_constants(&spec, 200, 20_000, key(3)).unwrap();
        assert_eq!(est.c_infty.value, again.c_infty.value);
        assert_eq!(est.c_infty_bold.value, again.c_infty_bold.value);
    }

    #[test]
    fn c_kappa_estimate_is_positive_with_sane_tail() {
        let spec = make_gaussian_binary_family(1.5);
        let est =
            estimate_c_kappa(&spec, 1.5, 30_000, 1_000_000, (0.90, 0.999), 0.3, key(4))
                .unwrap();
        assert!(est.c_kappa.value > 0.0);
        assert!(est.c_kappa.se.is_finite() && est.c_kappa.se > 0.0);
        assert!(est.zero_fraction > 0.0 && est.zero_fraction < 1.0);
        assert!(est.replicates == 30_000);
    }

    #[test]
    fn assembled_constants_kappa_three_collapse_to_closed_forms() {
        let spec = make_gaussian_binary_family(3.0);
        let spine = estimate_c_constants(&spec, 110, 20_000, key(5)).unwrap();
        let consts = assemble_constants(&spec, 3.0, &spine, None).unwrap();
        let c0 = consts.c_0.unwrap().value;
        assert!((consts.survival_rate.value - 1.0 / c0).abs() < 1e-15);
        assert_eq!(consts.survival_rate.provenance, Provenance::ClosedForm);
        assert_eq!(consts.survival_rate.se, 0.0);
        assert!(consts.gamma_term.is_none() && consts.c_kappa.is_none());

        // Yaglom curve: phi(2 lambda c_0), so lambda = 0.5 gives 1/(1+c_0).
        let y = consts.yaglom_target(0.5);
        assert!((y - 1.0 / (1.0 + c0)).abs() < 1e-12);
        assert!((y - 0.292086).abs() < 1e-5);

        // Local-time normalization 1/(a c_0).
        assert!((consts.c_bold_kappa_a(2.0) - 1.0 / (2.0 * c0)).abs() < 1e-12);
        assert_eq!(consts.local_time_target(1.0, 0.0, None), 1.0);
        let t1 = consts.local_time_target(1.0, 0.5, None);
        let t2 = consts.local_time_target(1.0, 1.0, None);
        assert!(t2 < t1 && t1 < 1.0);
        // W identically 1 and a singleton W-sample of 1.0 agree.
        assert!((t1 - consts.local_time_target(1.0, 0.5, Some(&[1.0]))).abs() < 1e-15);
    }

    #[test]
    fn assembled_constants_low_kappa_use_monte_carlo_inputs() {
        let spec = make_gaussian_binary_family(1.5);
        let spine = estimate_c_constants(&spec, 100, 5_000, key(6)).unwrap();
        let ck = ConstantValue::monte_carlo(0.8, 0.02);
        let consts = assemble_constants(&spec, 1.5, &spine, Some(&ck)).unwrap();
        let gamma_term = consts.gamma_term.unwrap();
        let expect_cbk = 0.8 * gamma_term;
        assert!((consts.c_bold_kappa.value - expect_cbk).abs() < 1e-12);
        let beta = 0.5;
        let expect_rate = (beta * spine.c_infty.value * expect_cbk).powf(-1.0 / beta);
        assert!((consts.survival_rate.value - expect_rate).abs() < 1e-9);
        assert!(consts.survival_rate.se > 0.0);

        // Missing c_kappa input is an error on this branch.
        assert!(assemble_constants(&spec, 1.5, &spine, None).is_err());
    }

    #[test]
    fn assembled_constants_kappa_two_use_the_halved_constant() {
        // A kappa = 2 family: Gaussian-binary with sigma2 = ln 2.
        let spec = make_gaussian_binary_family(2.0);
        let spine = estimate_c_constants(&spec, 160, 5_000, key(7)).unwrap();
        let ck = ConstantValue::monte_carlo(1.3, 0.05);
        let consts = assemble_constants(&spec, 2.0, &spine, Some(&ck)).unwrap();
        assert!((consts.c_bold_kappa.value - 0.65).abs() < 1e-12);
        let expect = 1.0 / (spine.c_infty.value * 1.3);
        assert!((consts.survival_rate.value - expect).abs() < 1e-12);
    }

    #[test]
    fn joint_target_matches_hand_value() {
        // kappa = 3, lambda1 = lambda2 = 0.5: exp(-(1 - 1/3)) = exp(-2/3).
        let v = joint_target(3.0, 0.5, 0.5);
        assert!((v - (-2.0f64 / 3.0).exp()).abs() < 1e-12);
        assert!((v - 0.51342).abs() < 1e-5);
        assert_eq!(joint_target(1.7, 0.0, 0.0), 1.0);
        // Symmetric in the pair.
        assert_eq!(joint_target(1.5, 0.3, 0.9), joint_target(1.5, 0.9, 0.3));
    }
}
