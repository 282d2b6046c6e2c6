//! Contraction certification: decides whether a model's structural map is a
//! global `ℓp`-contraction and with which constant.
//!
//! A certified constant `kappa < 1` is what licenses every other guarantee in
//! the crate: unique solvability of the model and of all its coordinate
//! subsets, well-posed twin counterfactuals, and the sub-Gaussian tail proxy.
//! Three tiers are offered, in decreasing strength:
//!
//! 1. exact operator norms for purely linear models,
//! 2. interval derivative bounds for expression mechanisms built from
//!    bounded-slope functions,
//! 3. a seeded sampled estimate, which is explicitly *not* a certificate and
//!    can only ever witness non-contraction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::Intervention;
use crate::linalg::{lp_dist, Matrix, NormIndex};
use crate::model::{Mechanism, ScmModel, StructuralMap};

/// Convergence tolerance of the power iteration behind spectral norms.
pub const POWER_ITERATION_TOL: f64 = 1e-10;
/// Iteration cap of the power iteration behind spectral norms.
pub const POWER_ITERATION_MAX_ITER: usize = 10_000;
/// Sampling radii used by the sampled estimate to probe non-local behavior.
pub const SAMPLE_RADII: [f64; 3] = [1.0, 10.0, 100.0];

/// How a contraction constant was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertificationMethod {
    /// Exact induced operator norm of the coefficient (or bound) matrix.
    LinearOperatorNorm,
    /// Frobenius norm fallback, an upper bound on the spectral norm.
    LinearFrobeniusBound,
    /// Empirical maximum over sampled pairs; a lower-bound witness only.
    SampledEstimate,
    /// Supplied by the caller without any verification.
    UserAsserted,
}

impl CertificationMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CertificationMethod::LinearOperatorNorm => "linear-operator-norm",
            CertificationMethod::LinearFrobeniusBound => "linear-frobenius-bound",
            CertificationMethod::SampledEstimate => "sampled-estimate",
            CertificationMethod::UserAsserted => "user-asserted",
        }
    }
}

/// A contraction constant for one norm index, together with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub p: NormIndex,
    pub kappa: f64,
    pub method: CertificationMethod,
    /// True only for the two linear methods; sampled estimates and user
    /// assertions never certify.
    pub is_certified: bool,
    /// Secondary Frobenius upper bound, reported for the spectral case.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frobenius_bound: Option<f64>,
}

impl ContractionCertificate {
    /// Caller-asserted constant; carries no certification.
    pub fn user_asserted(p: NormIndex, kappa: f64) -> ContractionCertificate {
        ContractionCertificate {
            p,
            kappa,
            method: CertificationMethod::UserAsserted,
            is_certified: false,
            frobenius_bound: None,
        }
    }

    /// True when this certificate alone proves unique solvability with
    /// respect to every coordinate subset.
    pub fn claims_simple(&self) -> bool {
        self.is_certified && self.kappa < 1.0
    }
}

/// Operator norm of a bound (or coefficient) matrix, with Frobenius fallback
/// when the spectral power iteration does not converge.
fn certify_matrix(matrix: &Matrix, p: NormIndex) -> ContractionCertificate {
    match p {
        NormIndex::L1 => ContractionCertificate {
            p,
            kappa: matrix.max_abs_col_sum(),
            method: CertificationMethod::LinearOperatorNorm,
            is_certified: true,
            frobenius_bound: None,
        },
        NormIndex::LInf => ContractionCertificate {
            p,
            kappa: matrix.max_abs_row_sum(),
            method: CertificationMethod::LinearOperatorNorm,
            is_certified: true,
            frobenius_bound: None,
        },
        NormIndex::L2 => {
            let frobenius = matrix.frobenius_norm();
            match matrix.spectral_norm(POWER_ITERATION_TOL, POWER_ITERATION_MAX_ITER) {
                Some(spectral) => ContractionCertificate {
                    p,
                    kappa: spectral,
                    method: CertificationMethod::LinearOperatorNorm,
                    is_certified: true,
                    frobenius_bound: Some(frobenius),
                },
                None => ContractionCertificate {
                    p,
                    kappa: frobenius,
                    method: CertificationMethod::LinearFrobeniusBound,
                    is_certified: true,
                    frobenius_bound: Some(frobenius),
                },
            }
        }
    }
}

/// Exact `ℓp` contraction constant of a purely linear model.
///
/// For p = 1 and p = ∞ these are column and row sums of |A|; for p = 2 the
/// spectral norm via power iteration on `AᵀA`, with the Frobenius norm
/// reported alongside as a secondary upper bound.
pub fn certify_linear(model: &ScmModel, p: NormIndex) -> Result<ContractionCertificate> {
    let matrix = model.coefficient_matrix().ok_or(Error::NonLinearModel)?;
    Ok(certify_matrix(&matrix, p))
}

/// Frobenius norm of a linear model's coefficient matrix.
pub fn frobenius_bound(model: &ScmModel) -> Result<f64> {
    let matrix = model.coefficient_matrix().ok_or(Error::NonLinearModel)?;
    Ok(matrix.frobenius_norm())
}

/// Matrix of global derivative bounds `B[i][k] >= sup |∂ f_i / ∂ x_k|`.
pub fn derivative_bound_matrix(model: &ScmModel) -> Result<Matrix> {
    let n = model.n();
    let mut bounds = Matrix::zeros(n, n);
    for (i, mech) in model.mechanisms().iter().enumerate() {
        match mech {
            Mechanism::Linear(row) => {
                for (k, c) in row.coefficients.iter().enumerate() {
                    bounds.set(i, k, c.abs());
                }
            }
            Mechanism::Expr(tree) => {
                let row = crate::expr::derivative_bounds(tree, n)?;
                for (k, b) in row.iter().enumerate() {
                    bounds.set(i, k, *b);
                }
            }
        }
    }
    Ok(bounds)
}

/// Conservative contraction certificate for expression mechanisms.
///
/// Builds per-mechanism global derivative bounds by interval rules (the
/// admitted functions all have |slope| <= 1, affine combinations add, and
/// products need one constant side) and certifies the operator norm of the
/// assembled bound matrix. Every rule over-approximates, so the result is a
/// sound upper bound on the true constant. Division or a product of two
/// non-constant subtrees make the bound unavailable and the caller must fall
/// back to [`estimate_kappa_sampled`] or a user assertion.
pub fn bound_expr_lipschitz(model: &ScmModel, p: NormIndex) -> Result<ContractionCertificate> {
    let bounds = derivative_bound_matrix(model)?;
    Ok(certify_matrix(&bounds, p))
}

/// Best available certified constant: exact for linear models, interval
/// bound otherwise.
pub fn certify(model: &ScmModel, p: NormIndex) -> Result<ContractionCertificate> {
    if model.is_linear() {
        certify_linear(model, p)
    } else {
        bound_expr_lipschitz(model, p)
    }
}

/// Empirical lower bound on the contraction constant from sampled pairs.
///
/// Draws `n_pairs` state pairs from standard normal vectors scaled over the
/// radii {1, 10, 100}, with noise drawn from the model's own distribution,
/// and returns the largest observed ratio
/// `‖f(x,e) − f(y,e)‖_p / ‖x − y‖_p`. Deterministic given the seed. The
/// result is labeled non-certified: it can refute contraction (ratio >= 1)
/// but never prove it.
pub fn estimate_kappa_sampled(
    model: &ScmModel,
    p: NormIndex,
    n_pairs: usize,
    seed: u64,
) -> Result<ContractionCertificate> {
    let n = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kappa_hat: f64 = 0.0;
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    for pair in 0..n_pairs {
        let radius = SAMPLE_RADII[pair % SAMPLE_RADII.len()];
        let x: Vec<f64> = (0..n)
            .map(|_| radius * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|_| radius * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let e: Vec<f64> = model
            .noise()
            .means
            .iter()
            .zip(&model.noise().variances)
            .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let denom = lp_dist(&x, &y, p);
        if denom == 0.0 {
            continue;
        }
        model.eval_into(&x, &e, &mut fx);
        model.eval_into(&y, &e, &mut fy);
        let num = lp_dist(&fx, &fy, p);
        if !num.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite mechanism value at sampled pair {pair}"
            )));
        }
        kappa_hat = kappa_hat.max(num / denom);
    }
    Ok(ContractionCertificate {
        p,
        kappa: kappa_hat,
        method: CertificationMethod::SampledEstimate,
        is_certified: false,
        frobenius_bound: None,
    })
}

/// Contraction status of an intervened model derived from the base
/// certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterventionContraction {
    pub certificate: ContractionCertificate,
    /// Largest |scale| among the intervention targets.
    pub a_max: f64,
    /// True when the constant had to be inflated by `a_max`.
    pub scaled: bool,
    /// True when the resulting certificate still proves simplicity.
    pub simple_guaranteed: bool,
}

/// Carries a certificate through a shift-scale intervention.
///
/// Scales with |a| <= 1 cannot increase the contraction constant, so the
/// certificate passes through unchanged. A larger scale inflates the
/// constant to `kappa_max = a_max * kappa`; if that still sits below one the
/// intervened model remains provably simple, otherwise the contraction
/// argument no longer applies.
pub fn kappa_after_intervention(
    cert: &ContractionCertificate,
    intervention: &Intervention,
) -> InterventionContraction {
    let a_max = intervention.a_max();
    if a_max <= 1.0 {
        return InterventionContraction {
            certificate: cert.clone(),
            a_max,
            scaled: false,
            simple_guaranteed: cert.claims_simple(),
        };
    }
    let certificate = ContractionCertificate {
        p: cert.p,
        kappa: a_max * cert.kappa,
        method: cert.method,
        is_certified: cert.is_certified,
        frobenius_bound: cert.frobenius_bound.map(|f| a_max * f),
    };
    let simple_guaranteed = certificate.claims_simple();
    InterventionContraction {
        certificate,
        a_max,
        scaled: true,
        simple_guaranteed,
    }
}
