//! Sub-Gaussian tail bounds for counterfactual functionals and their
//! empirical validation.
//!
//! A certified contraction constant kappa makes the solution map of an
//! intervened twin Lipschitz with constant `1/(1 − kappa)` in the noise.
//! With Gaussian noise of covariance `⪯ sigma² I`, any 1-Lipschitz
//! functional of the joint counterfactual then concentrates as
//! `P(h − E h >= t) <= exp(−t² / (2 s²))` with proxy
//! `s² = (1 − kappa)^{-2} sigma²`. For norms with p < 2 the proxy picks up
//! the `d^{1/p − 1/2}` embedding factor of the identity from `ℓ2` into
//! `ℓp`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::NormIndex;
use crate::model::ScmModel;
use crate::solver::SampleMatrix;
use crate::twin::{counterfactual_sample, TwinCopy, TwinModel};

/// Inputs of the analytic tail bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBoundSpec {
    /// Certified contraction constant of the (twin) system.
    pub kappa: f64,
    /// Noise variance proxy: a bound with `covariance ⪯ sigma2 · I`.
    pub sigma2: f64,
    pub p: NormIndex,
    /// Exogenous dimension, used by the p < 2 correction.
    pub d: usize,
}

impl TailBoundSpec {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.kappa) {
            return Err(Error::InvalidSpec(format!(
                "kappa = {} must lie in [0, 1)",
                self.kappa
            )));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "sigma2 = {} must be positive",
                self.sigma2
            )));
        }
        Ok(())
    }

    /// Operator norm of the identity from `ℓ2` into `ℓp` on `R^d`.
    fn correction(&self) -> f64 {
        match self.p {
            NormIndex::L2 | NormIndex::LInf => 1.0,
            NormIndex::L1 => (self.d as f64).sqrt(),
        }
    }

    /// The sub-Gaussian variance proxy `(1 − kappa)^{-2} sigma² correction²`.
    pub fn proxy(&self) -> f64 {
        let lipschitz = 1.0 / (1.0 - self.kappa);
        let corr = self.correction();
        lipschitz * lipschitz * self.sigma2 * corr * corr
    }
}

/// Analytic one-sided tail bound `exp(−t² / (2 · proxy))`.
pub fn tail_bound(spec: &TailBoundSpec, t: f64) -> Result<f64> {
    spec.validate()?;
    Ok((-t * t / (2.0 * spec.proxy())).exp())
}

/// Lipschitz constant `1/(1 − kappa)` of the solution map in the noise.
pub fn lipschitz_constant_solution_map(kappa: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::KappaNotContractive { kappa });
    }
    Ok(1.0 / (1.0 - kappa))
}

/// Built-in 1-Lipschitz functionals of the stacked state `(x, x')`.
///
/// Each has Euclidean gradient norm exactly one: a single coordinate, the
/// scaled difference `(x_k − x'_k)/√2`, or the scaled mean of all `2n`
/// coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LipschitzFunctional {
    /// `h(x, x') = stacked[coordinate]`, coordinate in `0..2n`.
    Projection { coordinate: usize },
    /// `h(x, x') = (x_k − x'_k) / sqrt(2)`, k in `0..n`.
    ScaledDifference { coordinate: usize },
    /// `h(x, x') = (Σ stacked) / sqrt(2n)`.
    ScaledMean,
}

impl LipschitzFunctional {
    /// Evaluates on one stacked sample row of length `2n`.
    pub fn eval(&self, stacked: &[f64]) -> f64 {
        match self {
            LipschitzFunctional::Projection { coordinate } => stacked[*coordinate],
            LipschitzFunctional::ScaledDifference { coordinate } => {
                let n = stacked.len() / 2;
                (stacked[*coordinate] - stacked[n + *coordinate]) / std::f64::consts::SQRT_2
            }
            LipschitzFunctional::ScaledMean => {
                stacked.iter().sum::<f64>() / (stacked.len() as f64).sqrt()
            }
        }
    }
}

/// One grid point of an empirical tail check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCheckRow {
    pub t: f64,
    /// Empirical exceedance frequency of `h − mean(h) >= t`.
    pub empirical: f64,
    /// Analytic bound at this `t`.
    pub bound: f64,
    /// Monte Carlo slack `3 sqrt(p̂ (1 − p̂) / n)`.
    pub slack: f64,
    pub pass: bool,
}

/// Result of validating the tail bound against counterfactual samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCheckReport {
    pub rows: Vec<TailCheckRow>,
    pub n: usize,
    pub seed: u64,
    pub two_sided: bool,
    pub passed: bool,
}

impl TailCheckReport {
    /// CSV text of `(t, empirical, bound)` rows for external plotting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,empirical,bound\n");
        for row in &self.rows {
            out.push_str(&format!("{},{},{}\n", row.t, row.empirical, row.bound));
        }
        out
    }
}

fn exceedance(values: &[f64], center: f64, t: f64, upper: bool) -> f64 {
    let hits = values
        .iter()
        .filter(|&&v| {
            if upper {
                v - center >= t
            } else {
                center - v >= t
            }
        })
        .count();
    hits as f64 / values.len().max(1) as f64
}

/// Draws counterfactual samples, centers the functional at its sample mean,
/// and compares empirical exceedance frequencies against the analytic bound
/// at every grid point.
///
/// The comparison allows a three-sigma binomial slack per point, so a valid
/// bound passes with overwhelming probability while an understated proxy
/// still fails loudly. The one-sided check mirrors the analytic statement;
/// `two_sided` additionally applies it to `−h`.
pub fn empirical_tail_check(
    twin: &TwinModel,
    functional: &LipschitzFunctional,
    spec: &TailBoundSpec,
    t_grid: &[f64],
    n: usize,
    seed: u64,
    two_sided: bool,
) -> Result<TailCheckReport> {
    spec.validate()?;
    if t_grid.is_empty() {
        return Err(Error::InvalidSpec("t grid must be nonempty".to_string()));
    }
    if let Some(t) = t_grid.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::InvalidSpec(format!(
            "t grid values must be positive, got {t}"
        )));
    }
    if n == 0 {
        return Err(Error::InvalidSpec(
            "sample count must be positive".to_string(),
        ));
    }
    let samples = counterfactual_sample(twin, n, seed)?;
    let values: Vec<f64> = samples
        .rows
        .iter()
        .map(|row| functional.eval(row))
        .collect();
    let center = values.iter().sum::<f64>() / values.len() as f64;

    let mut rows = Vec::new();
    for &t in t_grid {
        let bound = tail_bound(spec, t)?;
        let mut directions = vec![true];
        if two_sided {
            directions.push(false);
        }
        for upper in directions {
            let empirical = exceedance(&values, center, t, upper);
            let slack = 3.0 * (empirical * (1.0 - empirical) / n as f64).sqrt();
            rows.push(TailCheckRow {
                t,
                empirical,
                bound,
                slack,
                pass: empirical <= bound + slack,
            });
        }
    }
    let passed = rows.iter().all(|r| r.pass);
    Ok(TailCheckReport {
        rows,
        n,
        seed,
        two_sided,
        passed,
    })
}

/// Outcome of checking the unit noise-gain condition on a linear model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoiseLipschitzReport {
    pub passed: bool,
    pub max_gain: f64,
    /// First coordinate whose |gain| exceeds one, when the check fails.
    pub offending_coordinate: Option<usize>,
}

/// Verifies `‖f(x, e₁) − f(x, e₂)‖₂ <= ‖e₁ − e₂‖₂` for a linear model.
///
/// Noise enters coordinate-wise with the row gains, so the condition holds
/// exactly when every |noise_coefficient| is at most one.
pub fn verify_noise_lipschitz_linear(model: &ScmModel) -> Result<NoiseLipschitzReport> {
    let gains = model.noise_gains().ok_or(Error::NonLinearModel)?;
    let max_gain = gains.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let offending_coordinate = gains.iter().position(|g| g.abs() > 1.0);
    Ok(NoiseLipschitzReport {
        passed: offending_coordinate.is_none(),
        max_gain,
        offending_coordinate,
    })
}

/// Variance proxy of a linear model's effective noise, `max gain² · var`.
///
/// Absorbing the gains into the noise keeps the pushforward covariance
/// dominated by `sigma2 · I` while the gain-one system stays exactly
/// 1-Lipschitz in the rescaled noise.
pub fn effective_sigma2_linear(model: &ScmModel) -> Result<f64> {
    let gains = model.noise_gains().ok_or(Error::NonLinearModel)?;
    Ok(gains
        .iter()
        .zip(&model.noise().variances)
        .fold(0.0f64, |m, (g, v)| m.max(g * g * v)))
}

/// Variance proxy over both copies of a twin.
///
/// Falls back to the raw maximum variance when a copy holds expression
/// mechanisms, in which case the unit-gain condition is the caller's
/// assertion.
pub fn effective_sigma2_twin(twin: &TwinModel) -> f64 {
    let per_copy = |copy: TwinCopy| -> f64 {
        let model = twin.copy_model(copy);
        effective_sigma2_linear(&model).unwrap_or_else(|_| model.noise().sigma_proxy())
    };
    per_copy(TwinCopy::Factual).max(per_copy(TwinCopy::Primed))
}

/// Empirical check of the solution-map Lipschitz inequality
/// `‖Φ(e₁) − Φ(e₂)‖₂ <= ‖e₁ − e₂‖₂ / (1 − kappa)` on sampled noise pairs.
pub fn check_solution_map_lipschitz(
    model: &ScmModel,
    kappa: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    use crate::linalg::lp_dist;
    use crate::solver::{draw_noise, row_rng};

    let constant = lipschitz_constant_solution_map(kappa)?;
    let mut worst_ratio: f64 = 0.0;
    for pair in 0..n_pairs {
        let mut rng = row_rng(seed, pair as u64);
        let e1 = draw_noise(model.noise(), &mut rng);
        let e2 = draw_noise(model.noise(), &mut rng);
        let denom = lp_dist(&e1, &e2, NormIndex::L2);
        if denom == 0.0 {
            continue;
        }
        let x1 = solve_any(model, &e1)?;
        let x2 = solve_any(model, &e2)?;
        let ratio = lp_dist(&x1, &x2, NormIndex::L2) / denom;
        worst_ratio = worst_ratio.max(ratio / constant);
    }
    Ok(worst_ratio)
}

fn solve_any(model: &ScmModel, e: &[f64]) -> Result<Vec<f64>> {
    if model.is_linear() {
        crate::solver::linear_solve(model, e)
    } else {
        crate::solver::picard_solve(
            model,
            e,
            &vec![0.0; model.n()],
            NormIndex::L2,
            1e-12,
            crate::solver::DEFAULT_MAX_ITER,
            None,
        )
        .map(|r| r.x_star)
    }
}

/// Test-only helper: evaluates a functional over explicit sample rows.
pub fn functional_values(functional: &LipschitzFunctional, samples: &SampleMatrix) -> Vec<f64> {
    samples.rows.iter().map(|r| functional.eval(r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intervention::Intervention;
    use crate::linalg::lp_dist;
    use crate::model::{Mechanism, NoiseSpec};
    use crate::twin::{build_twin, intervene_twin};
    use rand::Rng;
    use rand::SeedableRng;

    fn toy_model() -> ScmModel {
        ScmModel::new(
            vec!["C".to_string(), "I".to_string()],
            vec![
                Mechanism::linear(vec![0.0, 0.5], 1.0, 1.0),
                Mechanism::linear(vec![0.4, 0.0], 0.5, 1.0),
            ],
            NoiseSpec {
                means: vec![0.0, 0.0],
                variances: vec![0.04, 0.04],
            },
        )
    }

    fn toy_spec() -> TailBoundSpec {
        TailBoundSpec {
            kappa: 0.6403,
            sigma2: 0.04,
            p: NormIndex::L2,
            d: 2,
        }
    }

    fn intervened_toy_twin() -> TwinModel {
        intervene_twin(
            &build_twin(&toy_model()),
            &Intervention::identity(),
            &Intervention::shift_scale(1, 0.8, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn tail_bound_matches_direct_formula() {
        let spec = toy_spec();
        // direct evaluation, independently of proxy()
        let lipschitz: f64 = 1.0 / (1.0 - 0.6403);
        let expected = (-0.36 / (2.0 * lipschitz * lipschitz * 0.04)).exp();
        let got = tail_bound(&spec, 0.6).unwrap();
        assert!((got - expected).abs() < 1e-15);
        assert!((got - 0.5586).abs() < 1e-4);
    }

    #[test]
    fn tail_bound_limits_and_monotonicity() {
        let spec = toy_spec();
        assert!(tail_bound(&spec, 1e-12).unwrap() > 1.0 - 1e-10);
        let mut last = 1.0;
        for t in [0.1, 0.2, 0.5, 1.0, 2.0] {
            let b = tail_bound(&spec, t).unwrap();
            assert!(b < last);
            last = b;
        }
        // increasing in kappa and sigma2
        let tighter = TailBoundSpec { kappa: 0.3, ..spec };
        assert!(tail_bound(&tighter, 0.5).unwrap() < tail_bound(&spec, 0.5).unwrap());
        let noisier = TailBoundSpec {
            sigma2: 0.08,
            ..spec
        };
        assert!(tail_bound(&noisier, 0.5).unwrap() > tail_bound(&spec, 0.5).unwrap());
    }

    #[test]
    fn l1_proxy_picks_up_the_dimension_factor() {
        let base = TailBoundSpec {
            kappa: 0.25,
            sigma2: 0.3,
            p: NormIndex::L2,
            d: 4,
        };
        let l1 = TailBoundSpec {
            p: NormIndex::L1,
            ..base
        };
        assert!((l1.proxy() - 4.0 * base.proxy()).abs() < 1e-12);
        // p >= 2 needs no correction
        let linf = TailBoundSpec {
            p: NormIndex::LInf,
            ..base
        };
        assert_eq!(linf.proxy(), base.proxy());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_kappa = TailBoundSpec {
            kappa: 1.0,
            ..toy_spec()
        };
        assert!(matches!(
            tail_bound(&bad_kappa, 0.5),
            Err(Error::InvalidSpec(_))
        ));
        let bad_sigma = TailBoundSpec {
            sigma2: 0.0,
            ..toy_spec()
        };
        assert!(tail_bound(&bad_sigma, 0.5).is_err());
    }

    #[test]
    fn solution_map_lipschitz_constants() {
        assert_eq!(lipschitz_constant_solution_map(0.0).unwrap(), 1.0);
        assert_eq!(lipschitz_constant_solution_map(0.5).unwrap(), 2.0);
        let l = lipschitz_constant_solution_map(0.6403).unwrap();
        assert!((l - 1.0 / 0.3597).abs() < 1e-12);
        assert!((l - 2.780094).abs() < 1e-6);
        assert!(lipschitz_constant_solution_map(1.0).is_err());
    }

    #[test]
    fn builtin_functionals_are_one_lipschitz() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let functionals = [
            LipschitzFunctional::Projection { coordinate: 2 },
            LipschitzFunctional::ScaledDifference { coordinate: 1 },
            LipschitzFunctional::ScaledMean,
        ];
        for _ in 0..1000 {
            let u: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let dist = lp_dist(&u, &v, NormIndex::L2);
            for h in &functionals {
                assert!(
                    (h.eval(&u) - h.eval(&v)).abs() <= dist + 1e-12,
                    "{h:?} violates the Lipschitz bound"
                );
            }
        }
    }

    #[test]
    fn scaled_difference_vanishes_without_intervention() {
        let twin = build_twin(&toy_model());
        let spec = toy_spec();
        let report = empirical_tail_check(
            &twin,
            &LipschitzFunctional::ScaledDifference { coordinate: 0 },
            &spec,
            &[0.1, 0.5],
            1_000,
            13,
            false,
        )
        .unwrap();
        assert!(report.passed);
        for row in &report.rows {
            assert_eq!(row.empirical, 0.0);
        }
    }

    #[test]
    fn tail_check_passes_on_the_intervened_toy_twin() {
        let report = empirical_tail_check(
            &intervened_toy_twin(),
            &LipschitzFunctional::Projection { coordinate: 2 },
            &toy_spec(),
            &[0.3, 0.6],
            20_000,
            1,
            false,
        )
        .unwrap();
        assert!(report.passed, "{:?}", report.rows);
    }

    #[test]
    fn tail_check_rejects_bad_grids() {
        let twin = intervened_toy_twin();
        let h = LipschitzFunctional::ScaledMean;
        assert!(empirical_tail_check(&twin, &h, &toy_spec(), &[], 100, 0, false).is_err());
        assert!(empirical_tail_check(&twin, &h, &toy_spec(), &[0.0], 100, 0, false).is_err());
        assert!(empirical_tail_check(&twin, &h, &toy_spec(), &[-0.5], 100, 0, false).is_err());
    }

    #[test]
    fn noise_lipschitz_check() {
        assert!(verify_noise_lipschitz_linear(&toy_model()).unwrap().passed);

        let intervened = crate::intervention::apply_shift_scale(
            &toy_model(),
            &Intervention::shift_scale(1, 0.8, 1.0),
        )
        .unwrap();
        let report = verify_noise_lipschitz_linear(&intervened).unwrap();
        assert!(report.passed);
        assert_eq!(report.max_gain, 1.0);

        let hot = ScmModel::new(
            vec!["a".to_string(), "b".to_string()],
            vec![
                Mechanism::linear(vec![0.0, 0.0], 0.0, 1.0),
                Mechanism::linear(vec![0.0, 0.0], 0.0, 1.5),
            ],
            NoiseSpec::standard(2),
        );
        let report = verify_noise_lipschitz_linear(&hot).unwrap();
        assert!(!report.passed);
        assert_eq!(report.offending_coordinate, Some(1));
        assert_eq!(report.max_gain, 1.5);
    }

    #[test]
    fn effective_sigma2_takes_gain_scaled_maximum() {
        let intervened = crate::intervention::apply_shift_scale(
            &toy_model(),
            &Intervention::shift_scale(1, 0.8, 1.0),
        )
        .unwrap();
        // max(1^2 * 0.04, 0.8^2 * 0.04) = 0.04
        assert!((effective_sigma2_linear(&intervened).unwrap() - 0.04).abs() < 1e-15);
        let twin = intervened_toy_twin();
        assert!((effective_sigma2_twin(&twin) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn solution_map_respects_the_lipschitz_constant() {
        let intervened = crate::intervention::apply_shift_scale(
            &toy_model(),
            &Intervention::shift_scale(1, 0.8, 1.0),
        )
        .unwrap();
        let worst = check_solution_map_lipschitz(&intervened, 0.6403, 1_000, 2).unwrap();
        assert!(worst <= 1.0 + 1e-9, "ratio {worst} exceeds the bound");
    }
}
