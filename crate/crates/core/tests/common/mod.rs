//! Shared generators and independent oracles for the integration suites.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scm_core::contraction::{POWER_ITERATION_MAX_ITER, POWER_ITERATION_TOL};
use scm_core::{
    ExprNode, Intervention, Matrix, Mechanism, NoiseSpec, NormIndex, ScmModel, ShiftScale,
    StructuralMap,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

/// Random linear model whose certified constant in norm `p` equals `kappa`.
pub fn random_linear_model(rng: &mut ChaCha8Rng, n: usize, kappa: f64, p: NormIndex) -> ScmModel {
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let norm = Matrix::from_rows(rows.clone())
        .operator_norm(p, POWER_ITERATION_TOL, POWER_ITERATION_MAX_ITER)
        .expect("norm of a random dense matrix");
    if norm > 0.0 {
        let factor = kappa / norm;
        for row in &mut rows {
            for c in row.iter_mut() {
                *c *= factor;
            }
        }
    }
    let mechanisms = rows
        .into_iter()
        .map(|r| Mechanism::linear(r, rng.gen_range(-2.0..2.0), rng.gen_range(0.3..1.0)))
        .collect();
    ScmModel::new(
        names(n),
        mechanisms,
        NoiseSpec {
            means: (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            variances: (0..n).map(|_| rng.gen_range(0.01..0.25)).collect(),
        },
    )
}

/// Random tanh-based model `x_i = Σ_j c_ij tanh(x_j) + b_i + g_i e_i` as
/// expression trees; its interval-bound constant in the max norm is the
/// largest row sum of |c|, scaled here to `kappa`.
pub fn random_tanh_model(rng: &mut ChaCha8Rng, n: usize, kappa: f64) -> ScmModel {
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let max_row_sum = rows
        .iter()
        .map(|r| r.iter().map(|c| c.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    if max_row_sum > 0.0 {
        let factor = kappa / max_row_sum;
        for row in &mut rows {
            for c in row.iter_mut() {
                *c *= factor;
            }
        }
    }
    let mechanisms = rows
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut tree: Option<ExprNode> = None;
            for (j, c) in row.into_iter().enumerate() {
                let term = ExprNode::mul(
                    ExprNode::Constant(c),
                    ExprNode::Unary(scm_core::expr::UnaryOp::Tanh, Box::new(ExprNode::Var(j))),
                );
                tree = Some(match tree {
                    Some(acc) => ExprNode::add(acc, term),
                    None => term,
                });
            }
            let offset = ExprNode::Constant(rng.gen_range(-2.0..2.0));
            let noise = ExprNode::mul(
                ExprNode::Constant(rng.gen_range(0.3..1.0)),
                ExprNode::Noise(i),
            );
            let body = ExprNode::add(ExprNode::add(tree.unwrap(), offset), noise);
            Mechanism::Expr(body)
        })
        .collect();
    ScmModel::new(
        names(n),
        mechanisms,
        NoiseSpec {
            means: vec![0.0; n],
            variances: (0..n).map(|_| rng.gen_range(0.01..0.25)).collect(),
        },
    )
}

/// Random shift-scale stage over a model of dimension `n` with every
/// |scale| <= `max_scale`; roughly a fifth of the targets are hard dos.
pub fn random_intervention(rng: &mut ChaCha8Rng, n: usize, max_scale: f64) -> Intervention {
    let k = rng.gen_range(1..=n);
    let mut coords: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        coords.swap(i, j);
    }
    let targets = coords[..k]
        .iter()
        .map(|&index| {
            let scale = if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(-max_scale..max_scale)
            };
            ShiftScale {
                index,
                scale,
                shift: rng.gen_range(-2.0..2.0),
            }
        })
        .collect();
    Intervention::new(targets).expect("distinct targets by construction")
}

/// Residual of the restricted map at subset values `u`.
fn subset_residual(
    model: &ScmModel,
    subset: &[usize],
    frozen: &[f64],
    e: &[f64],
    u: &[f64],
    out: &mut [f64],
    x: &mut [f64],
) -> f64 {
    x.copy_from_slice(frozen);
    for (slot, &coord) in subset.iter().enumerate() {
        x[coord] = u[slot];
    }
    model.eval_into(x, e, out);
    subset.iter().enumerate().fold(0.0f64, |m, (slot, &coord)| {
        m.max((u[slot] - out[coord]).abs())
    })
}

/// Independent root finder for subset equations: multi-scale grid search
/// minimising the max-norm residual over `[-50, 50]^{|subset|}`.
///
/// Never iterates the map. Because the restricted map contracts with the
/// certified constant, any point with residual r lies within `r / (1 - kappa)`
/// of the unique root, which both directs the refinement and bounds the final
/// error by the terminal half-width.
pub fn grid_subset_oracle(
    model: &ScmModel,
    subset: &[usize],
    frozen: &[f64],
    e: &[f64],
    kappa: f64,
) -> Vec<f64> {
    let d = subset.len();
    let points: usize = match d {
        1 => 201,
        2 => 41,
        _ => 21,
    };
    let mut center = vec![0.0f64; d];
    let mut half_width = 50.0f64;
    let mut out = vec![0.0; model.n()];
    let mut x = vec![0.0; model.n()];
    let mut u = vec![0.0f64; d];
    let mut levels = 0;
    while half_width > 5e-7 {
        levels += 1;
        assert!(levels <= 100, "grid oracle failed to localise the root");
        let step = 2.0 * half_width / (points - 1) as f64;
        let mut best = (f64::INFINITY, vec![0.0; d]);
        let mut index = vec![0usize; d];
        loop {
            for (dim, &i) in index.iter().enumerate() {
                u[dim] = center[dim] - half_width + step * i as f64;
            }
            let r = subset_residual(model, subset, frozen, e, &u, &mut out, &mut x);
            if r < best.0 {
                best = (r, u.clone());
            }
            // odometer over the d-dimensional grid
            let mut dim = 0;
            loop {
                if dim == d {
                    break;
                }
                index[dim] += 1;
                if index[dim] < points {
                    break;
                }
                index[dim] = 0;
                dim += 1;
            }
            if dim == d {
                break;
            }
        }
        center = best.1;
        if best.0 == 0.0 {
            break;
        }
        // kappa <= 0.7 and >= 21 points per dimension guarantee this shrinks
        let root_radius = best.0 / (1.0 - kappa);
        half_width = (root_radius * 1.05).max(step * 0.51);
    }
    center
}

/// Every nonempty subset of `0..n`.
pub fn nonempty_subsets(n: usize) -> Vec<Vec<usize>> {
    (1..(1usize << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect()
}
