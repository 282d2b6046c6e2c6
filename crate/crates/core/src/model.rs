//! SCM data model, structural validity checks, and syntactic parent
//! extraction.
//!
//! A model couples an ordered list of endogenous variables with one mechanism
//! per coordinate and an independent Gaussian noise term per coordinate.
//! Cycles are allowed; nothing here assumes acyclicity. Models are immutable
//! after construction and all operations are pure, so they can be shared
//! freely across threads.

use std::collections::BTreeSet;

use crate::expr::{self, ExprNode};
use crate::linalg::Matrix;

/// Linear mechanism `x_i = coefficients · x + offset + noise_coefficient · e_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coefficients: Vec<f64>,
    pub offset: f64,
    pub noise_coefficient: f64,
}

/// One structural equation: either an explicit linear row or an expression
/// tree over declared symbols.
#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    Linear(LinearRow),
    Expr(ExprNode),
}

impl Mechanism {
    pub fn linear(coefficients: Vec<f64>, offset: f64, noise_coefficient: f64) -> Mechanism {
        Mechanism::Linear(LinearRow {
            coefficients,
            offset,
            noise_coefficient,
        })
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Mechanism::Linear(_))
    }

    /// Evaluates the mechanism for coordinate `own_index` at state `x` and
    /// noise `e`. Linear rows read their own noise term; expression trees
    /// reference noise indices explicitly.
    pub fn eval(&self, own_index: usize, x: &[f64], e: &[f64]) -> f64 {
        match self {
            Mechanism::Linear(row) => {
                let mut acc = row.offset + row.noise_coefficient * e[own_index];
                for (c, v) in row.coefficients.iter().zip(x) {
                    acc += c * v;
                }
                acc
            }
            Mechanism::Expr(tree) => expr::eval_expr(tree, x, e),
        }
    }
}

/// Independent per-coordinate Gaussian noise: diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl NoiseSpec {
    pub fn standard(n: usize) -> NoiseSpec {
        NoiseSpec {
            means: vec![0.0; n],
            variances: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }

    /// Tightest sigma^2 with `diag(variances) ⪯ sigma^2 · I`.
    pub fn sigma_proxy(&self) -> f64 {
        self.variances.iter().fold(0.0, |m, v| m.max(*v))
    }
}

/// A structural causal model over real-valued coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ScmModel {
    variables: Vec<String>,
    mechanisms: Vec<Mechanism>,
    noise: NoiseSpec,
}

impl ScmModel {
    /// Assembles a model without checking invariants; run [`validate_model`]
    /// to obtain the violation list.
    pub fn new(variables: Vec<String>, mechanisms: Vec<Mechanism>, noise: NoiseSpec) -> ScmModel {
        ScmModel {
            variables,
            mechanisms,
            noise,
        }
    }

    pub fn n(&self) -> usize {
        self.variables.len()
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn mechanisms(&self) -> &[Mechanism] {
        &self.mechanisms
    }

    pub fn mechanism(&self, i: usize) -> &Mechanism {
        &self.mechanisms[i]
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    /// Replaces the mechanism at `i`, returning a new model.
    pub fn with_mechanism(&self, i: usize, mechanism: Mechanism) -> ScmModel {
        let mut mechanisms = self.mechanisms.clone();
        mechanisms[i] = mechanism;
        ScmModel {
            variables: self.variables.clone(),
            mechanisms,
            noise: self.noise.clone(),
        }
    }

    pub fn is_linear(&self) -> bool {
        self.mechanisms.iter().all(Mechanism::is_linear)
    }

    /// Coefficient matrix A for a purely linear model.
    pub fn coefficient_matrix(&self) -> Option<Matrix> {
        let n = self.n();
        let mut m = Matrix::zeros(n, n);
        for (i, mech) in self.mechanisms.iter().enumerate() {
            match mech {
                Mechanism::Linear(row) => {
                    for (j, c) in row.coefficients.iter().enumerate() {
                        m.set(i, j, *c);
                    }
                }
                Mechanism::Expr(_) => return None,
            }
        }
        Some(m)
    }

    /// Offsets b for a purely linear model.
    pub fn offsets(&self) -> Option<Vec<f64>> {
        self.mechanisms
            .iter()
            .map(|m| match m {
                Mechanism::Linear(row) => Some(row.offset),
                Mechanism::Expr(_) => None,
            })
            .collect()
    }

    /// Per-coordinate noise gains for a purely linear model.
    pub fn noise_gains(&self) -> Option<Vec<f64>> {
        self.mechanisms
            .iter()
            .map(|m| match m {
                Mechanism::Linear(row) => Some(row.noise_coefficient),
                Mechanism::Expr(_) => None,
            })
            .collect()
    }
}

/// Anything that evaluates a structural map `x ↦ f(x, e)`.
///
/// Implemented by [`ScmModel`] and by twin models; the fixed-point solver is
/// generic over this trait.
pub trait StructuralMap {
    /// Number of endogenous coordinates.
    fn dim(&self) -> usize;

    /// Number of exogenous coordinates.
    fn noise_dim(&self) -> usize;

    /// Writes `f(x, e)` into `out`.
    fn eval_into(&self, x: &[f64], e: &[f64], out: &mut [f64]);
}

impl StructuralMap for ScmModel {
    fn dim(&self) -> usize {
        self.n()
    }

    fn noise_dim(&self) -> usize {
        self.noise.len()
    }

    fn eval_into(&self, x: &[f64], e: &[f64], out: &mut [f64]) {
        for (i, mech) in self.mechanisms.iter().enumerate() {
            out[i] = mech.eval(i, x, e);
        }
    }
}

// ── Validation ──

/// One violated model invariant.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    EmptyName,
    DuplicateName,
    MechanismCountMismatch,
    CoefficientLengthMismatch,
    UnresolvedSymbol,
    NoiseLengthMismatch,
    NegativeVariance,
}

/// Outcome of [`validate_model`]; empty means every invariant holds.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        let lines: Vec<&str> = self.violations.iter().map(|v| v.message.as_str()).collect();
        f.write_str(&lines.join("; "))
    }
}

fn violation(kind: ViolationKind, message: String) -> Violation {
    Violation { kind, message }
}

/// Checks every structural invariant and returns the violation list.
///
/// Total and deterministic: invalid input produces violations, never a panic.
pub fn validate_model(model: &ScmModel) -> ValidationReport {
    let mut violations = Vec::new();
    let n = model.n();

    for (i, name) in model.variables.iter().enumerate() {
        if name.is_empty() {
            violations.push(violation(
                ViolationKind::EmptyName,
                format!("variable {i} has an empty name"),
            ));
        }
    }
    let mut seen = BTreeSet::new();
    for name in &model.variables {
        if !seen.insert(name.as_str()) {
            violations.push(violation(
                ViolationKind::DuplicateName,
                format!("duplicate variable name `{name}`"),
            ));
        }
    }

    if model.mechanisms.len() != n {
        violations.push(violation(
            ViolationKind::MechanismCountMismatch,
            format!(
                "mechanism count mismatch: {} variables but {} mechanisms",
                n,
                model.mechanisms.len()
            ),
        ));
    }

    for (i, mech) in model.mechanisms.iter().enumerate() {
        match mech {
            Mechanism::Linear(row) => {
                if row.coefficients.len() != n {
                    violations.push(violation(
                        ViolationKind::CoefficientLengthMismatch,
                        format!(
                            "mechanism {i}: coefficient vector has length {} but the model has {n} variables",
                            row.coefficients.len()
                        ),
                    ));
                }
            }
            Mechanism::Expr(tree) => {
                let mut vars = BTreeSet::new();
                let mut noises = BTreeSet::new();
                tree.collect_refs(&mut vars, &mut noises);
                for v in vars {
                    if v >= n {
                        violations.push(violation(
                            ViolationKind::UnresolvedSymbol,
                            format!("mechanism {i}: unresolved symbol (variable index {v})"),
                        ));
                    }
                }
                for j in noises {
                    if j >= model.noise.len() {
                        violations.push(violation(
                            ViolationKind::UnresolvedSymbol,
                            format!("mechanism {i}: unresolved symbol (noise index {j})"),
                        ));
                    }
                }
            }
        }
    }

    if model.noise.means.len() != n || model.noise.variances.len() != n {
        violations.push(violation(
            ViolationKind::NoiseLengthMismatch,
            format!(
                "noise spec has {} means and {} variances for {n} variables",
                model.noise.means.len(),
                model.noise.variances.len()
            ),
        ));
    }
    for (j, v) in model.noise.variances.iter().enumerate() {
        if !(*v >= 0.0) {
            violations.push(violation(
                ViolationKind::NegativeVariance,
                format!("variance of noise term {j} is {v}, must be nonnegative"),
            ));
        }
    }

    ValidationReport { violations }
}

// ── Parents ──

/// Per-coordinate sets of endogenous and exogenous indices a mechanism
/// references syntactically.
///
/// Syntactic parents are a superset of the semantic ones: a reference whose
/// effect cancels algebraically still counts. That over-approximation is safe
/// for every downstream use here (subset solving, reporting).
#[derive(Debug, Clone, PartialEq)]
pub struct ParentSet {
    pub endogenous: Vec<BTreeSet<usize>>,
    pub exogenous: Vec<BTreeSet<usize>>,
}

/// Extracts syntactic parents: nonzero coefficients for linear rows, all
/// referenced symbols for expression trees.
pub fn syntactic_parents(model: &ScmModel) -> ParentSet {
    let mut endogenous = Vec::with_capacity(model.n());
    let mut exogenous = Vec::with_capacity(model.n());
    for (i, mech) in model.mechanisms.iter().enumerate() {
        let mut vars = BTreeSet::new();
        let mut noises = BTreeSet::new();
        match mech {
            Mechanism::Linear(row) => {
                for (j, c) in row.coefficients.iter().enumerate() {
                    if *c != 0.0 {
                        vars.insert(j);
                    }
                }
                if row.noise_coefficient != 0.0 {
                    noises.insert(i);
                }
            }
            Mechanism::Expr(tree) => tree.collect_refs(&mut vars, &mut noises),
        }
        endogenous.push(vars);
        exogenous.push(noises);
    }
    ParentSet {
        endogenous,
        exogenous,
    }
}
