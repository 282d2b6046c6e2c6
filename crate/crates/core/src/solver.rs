//! Solving structural fixed-point equations.
//!
//! Cyclic models are solved by Picard iteration `x_{k+1} = f(x_k, e)`. Under
//! a known contraction constant the stopping rule uses the a-posteriori
//! Banach bound, so the returned point is within the requested tolerance of
//! the true fixed point rather than merely having a small last step. Linear
//! models additionally get closed-form solutions, first and second moments,
//! and exact noise abduction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{lp_dist, Matrix, NormIndex};
use crate::model::{NoiseSpec, ScmModel, StructuralMap};

/// Default solver tolerance used by sampling paths.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Default iteration cap.
pub const DEFAULT_MAX_ITER: usize = 10_000;
/// A step this many times larger than the smallest seen counts as divergence.
const DIVERGENCE_GROWTH: f64 = 1e6;

/// Result of a fixed-point solve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    /// The computed fixed point.
    pub x_star: Vec<f64>,
    /// Picard iterations performed.
    pub iterations: usize,
    /// `‖x* − f(x*, e)‖_p` at exit.
    pub residual: f64,
    pub converged: bool,
    pub p: NormIndex,
}

/// First and second moments of a linear-Gaussian model's solution law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearMoments {
    pub mean: Vec<f64>,
    pub covariance: Matrix,
}

impl LinearMoments {
    /// Pearson correlation between two coordinates.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        let denom = (self.covariance.get(i, i) * self.covariance.get(j, j)).sqrt();
        self.covariance.get(i, j) / denom
    }
}

fn kappa_threshold(tol: f64, kappa: Option<f64>) -> f64 {
    match kappa {
        // stop when the a-posteriori bound kappa/(1-kappa) * step <= tol
        Some(k) if (0.0..1.0).contains(&k) => tol * (1.0 - k) / k.max(1e-12),
        _ => tol,
    }
}

/// Picard iteration with divergence detection and honest convergence
/// reporting.
///
/// With a contraction constant supplied, iteration stops once the successive
/// step guarantees `‖x − x*‖_p <= tol`; without one it stops on a plain
/// successive-difference test. The reported residual is recomputed at the
/// returned point.
pub fn picard_solve(
    map: &impl StructuralMap,
    e: &[f64],
    x0: &[f64],
    p: NormIndex,
    tol: f64,
    max_iter: usize,
    kappa: Option<f64>,
) -> Result<SolveReport> {
    let (report, _) = picard_solve_traced(map, e, x0, p, tol, max_iter, kappa)?;
    Ok(report)
}

/// Like [`picard_solve`] but also returns the successive-difference norms,
/// one per iteration, for rate diagnostics.
pub fn picard_solve_traced(
    map: &impl StructuralMap,
    e: &[f64],
    x0: &[f64],
    p: NormIndex,
    tol: f64,
    max_iter: usize,
    kappa: Option<f64>,
) -> Result<(SolveReport, Vec<f64>)> {
    let n = map.dim();
    if e.len() != map.noise_dim() {
        return Err(Error::DimensionMismatch {
            expected: map.noise_dim(),
            actual: e.len(),
        });
    }
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x0.len(),
        });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidSpec(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let threshold = kappa_threshold(tol, kappa);
    let mut x = x0.to_vec();
    let mut next = vec![0.0; n];
    let mut steps = Vec::new();
    let mut smallest_step = f64::INFINITY;
    for iteration in 1..=max_iter {
        map.eval_into(&x, e, &mut next);
        let step = lp_dist(&next, &x, p);
        if !step.is_finite() {
            return Err(Error::Diverged {
                iterations: iteration,
                last_step: step,
            });
        }
        steps.push(step);
        if step > 0.0 {
            smallest_step = smallest_step.min(step);
        }
        if step > DIVERGENCE_GROWTH * smallest_step && smallest_step.is_finite() {
            return Err(Error::Diverged {
                iterations: iteration,
                last_step: step,
            });
        }
        if step <= threshold {
            std::mem::swap(&mut x, &mut next);
            map.eval_into(&x, e, &mut next);
            let residual = lp_dist(&x, &next, p);
            // the flag reflects the recomputed residual, so it stays honest
            // even when the stopping rule ran without a contraction constant
            return Ok((
                SolveReport {
                    x_star: x,
                    iterations: iteration,
                    residual,
                    converged: residual <= tol,
                    p,
                },
                steps,
            ));
        }
        std::mem::swap(&mut x, &mut next);
    }
    Err(Error::MaxIterExceeded {
        max_iterations: max_iter,
        last_step: steps.last().copied().unwrap_or(f64::NAN),
    })
}

/// Smallest iteration count n with `kappa^n * initial_step / (1 - kappa) <= tol`,
/// the a-priori Banach estimate.
pub fn iteration_bound(kappa: f64, initial_step: f64, tol: f64) -> Result<usize> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::KappaNotContractive { kappa });
    }
    if initial_step == 0.0 {
        return Ok(0);
    }
    let value_at = |n: f64| kappa.powf(n) * initial_step / (1.0 - kappa);
    if value_at(0.0) <= tol {
        return Ok(0);
    }
    if kappa == 0.0 {
        return Ok(1);
    }
    let mut n = ((tol * (1.0 - kappa) / initial_step).ln() / kappa.ln()).ceil();
    if !n.is_finite() || n < 1.0 {
        n = 1.0;
    }
    // float slop can put the analytic ceiling off by one in either direction
    while value_at(n) > tol {
        n += 1.0;
    }
    while n > 0.0 && value_at(n - 1.0) <= tol {
        n -= 1.0;
    }
    Ok(n as usize)
}

/// Restricted structural map: iterates only the coordinates in `subset`,
/// holding the rest fixed.
struct SubsetMap<'a, M: StructuralMap> {
    inner: &'a M,
    subset: &'a [usize],
    frozen: &'a [f64],
}

impl<M: StructuralMap> StructuralMap for SubsetMap<'_, M> {
    fn dim(&self) -> usize {
        self.subset.len()
    }

    fn noise_dim(&self) -> usize {
        self.inner.noise_dim()
    }

    fn eval_into(&self, x: &[f64], e: &[f64], out: &mut [f64]) {
        let mut full = self.frozen.to_vec();
        for (slot, &coord) in self.subset.iter().enumerate() {
            full[coord] = x[slot];
        }
        let mut full_out = vec![0.0; self.inner.dim()];
        self.inner.eval_into(&full, e, &mut full_out);
        for (slot, &coord) in self.subset.iter().enumerate() {
            out[slot] = full_out[coord];
        }
    }
}

/// Solves the fixed-point equations restricted to the coordinates in
/// `subset`, holding every other coordinate fixed at its value in `frozen`.
///
/// Subset entries of `frozen` serve as the starting point. A global
/// contraction constant carries over: the restricted map contracts at least
/// as fast, so the same stopping rule applies. The returned `x_star` is the
/// full state with the subset coordinates solved; the residual is measured
/// over the subset only.
#[allow(clippy::too_many_arguments)]
pub fn solve_subset(
    map: &impl StructuralMap,
    subset: &[usize],
    frozen: &[f64],
    e: &[f64],
    p: NormIndex,
    tol: f64,
    max_iter: usize,
    kappa: Option<f64>,
) -> Result<SolveReport> {
    if subset.is_empty() {
        return Err(Error::InvalidSpec("subset must be nonempty".to_string()));
    }
    let n = map.dim();
    if frozen.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: frozen.len(),
        });
    }
    let mut seen = std::collections::BTreeSet::new();
    for &c in subset {
        if c >= n {
            return Err(Error::InvalidSpec(format!(
                "subset coordinate {c} out of range for dimension {n}"
            )));
        }
        if !seen.insert(c) {
            return Err(Error::InvalidSpec(format!(
                "subset coordinate {c} repeated"
            )));
        }
    }
    let restricted = SubsetMap {
        inner: map,
        subset,
        frozen,
    };
    let x0: Vec<f64> = subset.iter().map(|&c| frozen[c]).collect();
    let report = picard_solve(&restricted, e, &x0, p, tol, max_iter, kappa)?;
    let mut full = frozen.to_vec();
    for (slot, &coord) in subset.iter().enumerate() {
        full[coord] = report.x_star[slot];
    }
    Ok(SolveReport {
        x_star: full,
        iterations: report.iterations,
        residual: report.residual,
        converged: report.converged,
        p: report.p,
    })
}

/// Closed-form solution `(I − A)^{-1} (b + D e)` of a purely linear model.
pub fn linear_solve(model: &ScmModel, e: &[f64]) -> Result<Vec<f64>> {
    let system = linear_system(model)?;
    if e.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            actual: e.len(),
        });
    }
    let rhs: Vec<f64> = system
        .offsets
        .iter()
        .zip(&system.gains)
        .zip(e)
        .map(|((b, d), ev)| b + d * ev)
        .collect();
    system.i_minus_a.solve(&rhs)
}

struct LinearSystem {
    i_minus_a: Matrix,
    offsets: Vec<f64>,
    gains: Vec<f64>,
}

fn linear_system(model: &ScmModel) -> Result<LinearSystem> {
    let a = model.coefficient_matrix().ok_or(Error::NonLinearModel)?;
    let n = model.n();
    let mut i_minus_a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            i_minus_a.set(i, j, delta - a.get(i, j));
        }
    }
    Ok(LinearSystem {
        i_minus_a,
        offsets: model.offsets().unwrap(),
        gains: model.noise_gains().unwrap(),
    })
}

/// Exact mean and covariance of a linear model with Gaussian noise:
/// `mean = (I − A)^{-1} (b + D μ)` and `cov = M diag(σ²) Mᵀ` with
/// `M = (I − A)^{-1} D`.
pub fn linear_moments(model: &ScmModel) -> Result<LinearMoments> {
    let system = linear_system(model)?;
    let n = model.n();
    let inv = system.i_minus_a.inverse()?;
    let rhs: Vec<f64> = system
        .offsets
        .iter()
        .zip(&system.gains)
        .zip(&model.noise().means)
        .map(|((b, d), m)| b + d * m)
        .collect();
    let mean = inv.matvec(&rhs);
    let mut m = inv;
    for (j, gain) in system.gains.iter().enumerate() {
        m.scale_col(j, *gain);
    }
    let variances = &model.noise().variances;
    let mut covariance = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for (k, variance) in variances.iter().enumerate() {
                acc += m.get(i, k) * variance * m.get(j, k);
            }
            covariance.set(i, j, acc);
            covariance.set(j, i, acc);
        }
    }
    Ok(LinearMoments { mean, covariance })
}

/// Recovers the unique noise realisation consistent with an observation of a
/// linear model: `e = D^{-1} ((I − A) x − b)`.
///
/// Requires every noise coefficient to be nonzero, otherwise the abducted
/// noise is not unique.
pub fn abduct_noise_linear(model: &ScmModel, x_obs: &[f64]) -> Result<Vec<f64>> {
    let a = model.coefficient_matrix().ok_or(Error::NonLinearModel)?;
    let offsets = model.offsets().unwrap();
    let gains = model.noise_gains().unwrap();
    let n = model.n();
    if x_obs.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x_obs.len(),
        });
    }
    if let Some(coordinate) = gains.iter().position(|g| *g == 0.0) {
        return Err(Error::DegenerateNoise { coordinate });
    }
    Ok((0..n)
        .map(|i| {
            let structural: f64 = (0..n).map(|j| a.get(i, j) * x_obs[j]).sum();
            (x_obs[i] - structural - offsets[i]) / gains[i]
        })
        .collect())
}

// ── Sampling ──

/// Column-labelled matrix of sampled solutions, one row per draw.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleMatrix {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SampleMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Column means.
    pub fn mean(&self) -> Vec<f64> {
        let m = self.columns.len();
        let mut acc = vec![0.0; m];
        for row in &self.rows {
            for (a, v) in acc.iter_mut().zip(row) {
                *a += v;
            }
        }
        let n = self.rows.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    }

    /// Sample covariance with the n − 1 denominator.
    pub fn covariance(&self) -> Matrix {
        let m = self.columns.len();
        let mean = self.mean();
        let mut cov = Matrix::zeros(m, m);
        if self.rows.len() < 2 {
            return cov;
        }
        for row in &self.rows {
            for i in 0..m {
                let di = row[i] - mean[i];
                for j in i..m {
                    cov.set(i, j, cov.get(i, j) + di * (row[j] - mean[j]));
                }
            }
        }
        let denom = (self.rows.len() - 1) as f64;
        for i in 0..m {
            for j in i..m {
                let v = cov.get(i, j) / denom;
                cov.set(i, j, v);
                cov.set(j, i, v);
            }
        }
        cov
    }

    /// CSV text: header of column names, one row per sample, full-precision
    /// decimal values. Byte-identical across runs with the same inputs.
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                out.push_str(&format!("{v}"));
                first = false;
            }
            out.push('\n');
        }
        out
    }
}

/// RNG for one sample row: all rows are independent streams of one seed, so
/// any subset of rows can be regenerated without drawing the rest.
pub(crate) fn row_rng(seed: u64, row: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row);
    rng
}

/// One Gaussian noise draw per exogenous coordinate.
pub(crate) fn draw_noise(noise: &NoiseSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    noise
        .means
        .iter()
        .zip(&noise.variances)
        .map(|(m, v)| m + v.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Draws `n` noise realisations and solves the model for each: the
/// observational distribution by pushforward.
///
/// Linear models are solved in closed form; expression models run Picard at
/// the default tolerance. Deterministic given the seed; row `i` depends only
/// on `(seed, i)`.
pub fn sample_observational(model: &ScmModel, n: usize, seed: u64) -> Result<SampleMatrix> {
    let dim = model.n();
    let linear = model.is_linear();
    // factor the system once; per-row work is then a matvec
    let solve_matrix = if linear {
        let system = linear_system(model)?;
        Some((system.i_minus_a.inverse()?, system.offsets, system.gains))
    } else {
        None
    };
    let mut rows = Vec::with_capacity(n);
    for row in 0..n {
        let mut rng = row_rng(seed, row as u64);
        let e = draw_noise(model.noise(), &mut rng);
        let x = match &solve_matrix {
            Some((inv, offsets, gains)) => {
                let rhs: Vec<f64> = offsets
                    .iter()
                    .zip(gains)
                    .zip(&e)
                    .map(|((b, d), ev)| b + d * ev)
                    .collect();
                inv.matvec(&rhs)
            }
            None => {
                let x0 = vec![0.0; dim];
                picard_solve(
                    model,
                    &e,
                    &x0,
                    NormIndex::L2,
                    DEFAULT_TOL,
                    DEFAULT_MAX_ITER,
                    None,
                )
                .map_err(|err| err.at_row(row))?
                .x_star
            }
        };
        rows.push(x);
    }
    Ok(SampleMatrix {
        columns: model.variables().to_vec(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expr, SymbolTable};
    use crate::model::{Mechanism, NoiseSpec};

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

    // closed-form equilibrium of the two-variable cycle with zero noise
    fn toy_equilibrium() -> [f64; 2] {
        let det = 1.0 - 0.5 * 0.4;
        [(1.0 + 0.5 * 0.5) / det, (0.4 + 0.5) / det]
    }

    #[test]
    fn picard_reaches_toy_equilibrium() {
        let model = toy_model();
        let report = picard_solve(
            &model,
            &[0.0, 0.0],
            &[0.0, 0.0],
            NormIndex::L2,
            1e-10,
            1000,
            Some(0.5),
        )
        .unwrap();
        let expected = toy_equilibrium();
        assert!((expected[0] - 1.5625).abs() < 1e-15);
        assert!((expected[1] - 1.125).abs() < 1e-15);
        assert!((report.x_star[0] - expected[0]).abs() < 1e-9);
        assert!((report.x_star[1] - expected[1]).abs() < 1e-9);
        assert!(report.converged);
        assert!(report.residual <= 1e-9);
    }

    #[test]
    fn acyclic_substitution_converges_in_two_iterations() {
        let model = ScmModel::new(
            vec!["x1".to_string()],
            vec![Mechanism::linear(vec![0.0], 0.0, 1.0)],
            NoiseSpec::standard(1),
        );
        let report = picard_solve(&model, &[2.5], &[9.0], NormIndex::L2, 1e-12, 100, None).unwrap();
        assert!(report.iterations <= 2);
        assert_eq!(report.x_star, vec![2.5]);
    }

    #[test]
    fn expanding_map_diverges() {
        let model = ScmModel::new(
            vec!["x1".to_string()],
            vec![Mechanism::linear(vec![2.0], 1.0, 0.0)],
            NoiseSpec::standard(1),
        );
        match picard_solve(&model, &[0.0], &[0.0], NormIndex::L2, 1e-10, 10_000, None) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn max_iter_is_an_error() {
        let model = toy_model();
        match picard_solve(
            &model,
            &[0.0, 0.0],
            &[0.0, 0.0],
            NormIndex::L2,
            1e-10,
            2,
            None,
        ) {
            Err(Error::MaxIterExceeded { max_iterations, .. }) => assert_eq!(max_iterations, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn iteration_bound_examples() {
        // independent oracle: scan for the smallest n satisfying the bound
        let oracle = |kappa: f64, step: f64, tol: f64| {
            (0..)
                .find(|&n| kappa.powi(n) * step / (1.0 - kappa) <= tol)
                .unwrap() as usize
        };
        assert_eq!(oracle(0.5, 1.0, 1e-6), 21);
        assert_eq!(iteration_bound(0.5, 1.0, 1e-6).unwrap(), 21);
        assert_eq!(iteration_bound(0.3, 0.0, 1e-6).unwrap(), 0);
        assert_eq!(iteration_bound(0.0, 1.0, 1e-6).unwrap(), 1);
        assert_eq!(iteration_bound(0.0, 1e-7, 1e-6).unwrap(), 0);
        for (kappa, step, tol) in [(0.9, 5.0, 1e-8), (0.11, 2.0, 1e-3), (0.77, 0.3, 1e-12)] {
            assert_eq!(
                iteration_bound(kappa, step, tol).unwrap(),
                oracle(kappa, step, tol),
                "kappa={kappa} step={step} tol={tol}"
            );
        }
        assert!(matches!(
            iteration_bound(1.0, 1.0, 1e-6),
            Err(Error::KappaNotContractive { .. })
        ));
    }

    #[test]
    fn subset_solve_on_toy_consumption() {
        let model = toy_model();
        let report = solve_subset(
            &model,
            &[0],
            &[0.0, 1.125],
            &[0.0, 0.0],
            NormIndex::L2,
            1e-10,
            100,
            Some(0.5),
        )
        .unwrap();
        assert!((report.x_star[0] - 1.5625).abs() < 1e-9);
        assert_eq!(report.x_star[1], 1.125);
    }

    #[test]
    fn subset_of_all_coordinates_matches_full_solve() {
        let model = toy_model();
        let full = picard_solve(
            &model,
            &[0.1, -0.2],
            &[0.0, 0.0],
            NormIndex::LInf,
            1e-11,
            1000,
            Some(0.5),
        )
        .unwrap();
        let sub = solve_subset(
            &model,
            &[0, 1],
            &[0.0, 0.0],
            &[0.1, -0.2],
            NormIndex::LInf,
            1e-11,
            1000,
            Some(0.5),
        )
        .unwrap();
        assert!((full.x_star[0] - sub.x_star[0]).abs() < 1e-10);
        assert!((full.x_star[1] - sub.x_star[1]).abs() < 1e-10);
    }

    #[test]
    fn subset_matches_direct_elimination_on_linear_cycle() {
        // independent oracle for the linear case: eliminate the subset
        // coordinates directly from (I - A_OO) u = b_O + A_Orest x_rest + D e
        let names: Vec<String> = (0..3).map(|i| format!("x{i}")).collect();
        let rows = [
            vec![0.0, 0.3, -0.2],
            vec![0.25, 0.0, 0.1],
            vec![-0.15, 0.2, 0.0],
        ];
        let model = ScmModel::new(
            names,
            rows.iter()
                .enumerate()
                .map(|(i, r)| Mechanism::linear(r.clone(), 0.3 * i as f64 - 0.2, 1.0))
                .collect(),
            NoiseSpec::standard(3),
        );
        let e = [0.3, -0.6, 0.9];
        let frozen = [0.5, -1.0, 2.0];
        for subset in [vec![0], vec![2], vec![0, 1], vec![1, 2], vec![0, 1, 2]] {
            let report = solve_subset(
                &model,
                &subset,
                &frozen,
                &e,
                NormIndex::LInf,
                1e-12,
                10_000,
                None,
            )
            .unwrap();
            // oracle
            let k = subset.len();
            let mut system = Matrix::zeros(k, k);
            let mut rhs = vec![0.0; k];
            for (si, &i) in subset.iter().enumerate() {
                rhs[si] = 0.3 * i as f64 - 0.2 + e[i];
                for j in 0..3 {
                    if let Some(sj) = subset.iter().position(|&c| c == j) {
                        let delta = if i == j { 1.0 } else { 0.0 };
                        system.set(si, sj, delta - rows[i][j]);
                    } else {
                        rhs[si] += rows[i][j] * frozen[j];
                    }
                }
            }
            let oracle = system.solve(&rhs).unwrap();
            for (si, &i) in subset.iter().enumerate() {
                assert!(
                    (report.x_star[i] - oracle[si]).abs() < 1e-9,
                    "subset {subset:?} coord {i}"
                );
            }
        }
    }

    #[test]
    fn linear_solve_matches_picard_and_hand_values() {
        let model = toy_model();
        let x = linear_solve(&model, &[0.0, 0.0]).unwrap();
        assert!((x[0] - 1.5625).abs() < 1e-12);
        assert!((x[1] - 1.125).abs() < 1e-12);

        // no coupling: solution is b + e
        let flat = ScmModel::new(
            vec!["a".to_string(), "b".to_string()],
            vec![
                Mechanism::linear(vec![0.0, 0.0], 2.0, 1.0),
                Mechanism::linear(vec![0.0, 0.0], -1.0, 1.0),
            ],
            NoiseSpec::standard(2),
        );
        assert_eq!(linear_solve(&flat, &[0.5, 0.25]).unwrap(), vec![2.5, -0.75]);
    }

    #[test]
    fn linear_solve_agrees_with_picard_on_random_contractive_models() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..20 {
            let n = 5;
            let mut rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let scale = 0.8 / Matrix::from_rows(rows.clone()).max_abs_row_sum().max(1e-9);
            rows.iter_mut()
                .for_each(|r| r.iter_mut().for_each(|c| *c *= scale));
            let model = ScmModel::new(
                (0..n).map(|i| format!("x{i}")).collect(),
                rows.into_iter()
                    .map(|r| {
                        Mechanism::linear(r, rng.gen_range(-2.0..2.0), rng.gen_range(0.2..1.5))
                    })
                    .collect(),
                NoiseSpec::standard(n),
            );
            let e: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let direct = linear_solve(&model, &e).unwrap();
            let iterated = picard_solve(
                &model,
                &e,
                &vec![0.0; n],
                NormIndex::LInf,
                1e-12,
                100_000,
                Some(0.8),
            )
            .unwrap();
            for i in 0..n {
                assert!(
                    (direct[i] - iterated.x_star[i]).abs() < 1e-8,
                    "case {case} coord {i}"
                );
            }
        }
    }

    #[test]
    fn toy_moments_match_hand_inverse() {
        let moments = linear_moments(&toy_model()).unwrap();
        // (I - A)^{-1} = [[1, 0.5], [0.4, 1]] / 0.8
        let inv = [[1.25, 0.625], [0.5, 1.25]];
        let expected_mean = [
            inv[0][0] * 1.0 + inv[0][1] * 0.5,
            inv[1][0] * 1.0 + inv[1][1] * 0.5,
        ];
        for i in 0..2 {
            assert!((moments.mean[i] - expected_mean[i]).abs() < 1e-12);
            for j in 0..2 {
                let expected = 0.04 * (inv[i][0] * inv[j][0] + inv[i][1] * inv[j][1]);
                assert!((moments.covariance.get(i, j) - expected).abs() < 1e-12);
            }
        }
        assert!((moments.mean[0] - 1.5625).abs() < 1e-12);
        assert!((moments.mean[1] - 1.125).abs() < 1e-12);
        assert!((moments.correlation(0, 1) - 0.75).abs() < 1e-2);
    }

    #[test]
    fn uncoupled_moments_are_identity_covariance() {
        let flat = ScmModel::new(
            vec!["a".to_string(), "b".to_string()],
            vec![
                Mechanism::linear(vec![0.0, 0.0], 2.0, 1.0),
                Mechanism::linear(vec![0.0, 0.0], -1.0, 1.0),
            ],
            NoiseSpec::standard(2),
        );
        let moments = linear_moments(&flat).unwrap();
        assert_eq!(moments.mean, vec![2.0, -1.0]);
        assert_eq!(moments.covariance, Matrix::identity(2));
    }

    #[test]
    fn abduction_recovers_zero_noise_at_the_equilibrium() {
        let e = abduct_noise_linear(&toy_model(), &[1.5625, 1.125]).unwrap();
        assert!(e[0].abs() < 1e-12);
        assert!(e[1].abs() < 1e-12);
    }

    #[test]
    fn abduction_formula_matches_hand_derivation() {
        let (c, i) = (2.3, -0.7);
        let e = abduct_noise_linear(&toy_model(), &[c, i]).unwrap();
        assert!((e[0] - (c - 0.5 * i - 1.0)).abs() < 1e-14);
        assert!((e[1] - (i - 0.4 * c - 0.5)).abs() < 1e-14);
    }

    #[test]
    fn abduct_then_solve_is_identity() {
        use rand::Rng;
        let model = toy_model();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            let e = abduct_noise_linear(&model, &x).unwrap();
            let back = linear_solve(&model, &e).unwrap();
            assert!((back[0] - x[0]).abs() < 1e-10);
            assert!((back[1] - x[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_noise_gain_blocks_abduction() {
        let model = ScmModel::new(
            vec!["a".to_string()],
            vec![Mechanism::linear(vec![0.0], 1.0, 0.0)],
            NoiseSpec::standard(1),
        );
        match abduct_noise_linear(&model, &[1.0]) {
            Err(Error::DegenerateNoise { coordinate }) => assert_eq!(coordinate, 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sampling_is_deterministic_and_row_addressed() {
        let model = toy_model();
        let a = sample_observational(&model, 50, 123).unwrap();
        let b = sample_observational(&model, 50, 123).unwrap();
        assert_eq!(a, b);
        let c = sample_observational(&model, 50, 124).unwrap();
        assert_ne!(a, c);
        // row i depends on (seed, i) only: a shorter run is a prefix
        let prefix = sample_observational(&model, 10, 123).unwrap();
        assert_eq!(&a.rows[..10], &prefix.rows[..]);
    }

    #[test]
    fn empty_sample_run() {
        let samples = sample_observational(&toy_model(), 0, 0).unwrap();
        assert_eq!(samples.n_rows(), 0);
        assert_eq!(samples.to_csv(), "C,I\n");
    }

    #[test]
    fn sampling_propagates_row_failures() {
        let symbols = SymbolTable::new(&["x1".to_string()]);
        let model = ScmModel::new(
            vec!["x1".to_string()],
            vec![Mechanism::Expr(
                parse_expr("2*x1 + e_x1", &symbols).unwrap(),
            )],
            NoiseSpec::standard(1),
        );
        match sample_observational(&model, 3, 0) {
            Err(Error::Row { row, source }) => {
                assert_eq!(row, 0);
                assert!(matches!(*source, Error::Diverged { .. }));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sample_moments_approach_analytic_values() {
        let model = toy_model();
        let samples = sample_observational(&model, 20_000, 9).unwrap();
        let moments = linear_moments(&model).unwrap();
        let mean = samples.mean();
        for i in 0..2 {
            assert!((mean[i] - moments.mean[i]).abs() < 0.01);
        }
        let cov = samples.covariance();
        for i in 0..2 {
            for j in 0..2 {
                assert!((cov.get(i, j) - moments.covariance.get(i, j)).abs() < 0.01);
            }
        }
    }

    #[test]
    fn geometric_rate_of_successive_differences() {
        let model = toy_model();
        let (_, steps) = picard_solve_traced(
            &model,
            &[0.3, -0.1],
            &[5.0, -5.0],
            NormIndex::LInf,
            1e-12,
            10_000,
            Some(0.5),
        )
        .unwrap();
        for w in steps.windows(2) {
            if w[0] > 1e-12 {
                assert!(w[1] <= (0.5 + 1e-6) * w[0], "{} then {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn converged_reports_satisfy_the_residual_contract() {
        let model = toy_model();
        for tol in [1e-6, 1e-9, 1e-12] {
            let report = picard_solve(
                &model,
                &[0.1, 0.2],
                &[0.0, 0.0],
                NormIndex::L1,
                tol,
                100_000,
                Some(0.5),
            )
            .unwrap();
            assert!(report.residual <= 10.0 * tol);
        }
    }
}
