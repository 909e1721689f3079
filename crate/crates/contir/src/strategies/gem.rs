//! Gradient episodic memory: the inequality check against per-task memory
//! gradients, the dual quadratic program, and the projection.

/// Relative tolerance for the post-projection constraint check.
pub const CONSTRAINT_TOL: f64 = 1e-6;
/// KKT residual tolerance for the dual solver.
pub const QP_TOL: f64 = 1e-8;
/// Coordinate-descent sweep cap.
pub const QP_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub v: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Solve `minimize 0.5 v' (G G' + ridge I) v + (G g)' v` subject to
/// `v >= 0` by cyclic coordinate descent. Convergence means every KKT
/// residual is within `tol`: for each coordinate either `v_s = 0` and the
/// objective gradient is `>= -tol`, or `v_s > 0` and the gradient is
/// within `tol` of zero.
pub fn solve_dual_qp(
    memory_grads: &[Vec<f64>],
    gradient: &[f64],
    ridge: f64,
    tol: f64,
    max_iter: usize,
) -> QpSolution {
    let m = memory_grads.len();
    assert!(m >= 1, "dual QP needs at least one constraint row");
    assert!(ridge >= 0.0, "ridge must be non-negative");
    let (h, q) = dual_problem(memory_grads, gradient, ridge);
    coordinate_descent(&h, &q, vec![0.0; m], tol, max_iter)
}

/// H = G G' + ridge I, q = G g.
fn dual_problem(memory_grads: &[Vec<f64>], gradient: &[f64], ridge: f64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let m = memory_grads.len();
    let mut h = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a..m {
            let dot_value = dot(&memory_grads[a], &memory_grads[b]);
            h[a][b] = dot_value;
            h[b][a] = dot_value;
        }
        h[a][a] += ridge;
    }
    let q: Vec<f64> = memory_grads.iter().map(|row| dot(row, gradient)).collect();
    (h, q)
}

fn coordinate_descent(
    h: &[Vec<f64>],
    q: &[f64],
    mut v: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> QpSolution {
    let m = v.len();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        for s in 0..m {
            if h[s][s] == 0.0 {
                // Zero memory gradient with no ridge: the objective is
                // flat in this coordinate (q_s is 0 too); leave it at 0.
                continue;
            }
            let mut rest = q[s];
            for j in 0..m {
                if j != s {
                    rest += h[s][j] * v[j];
                }
            }
            v[s] = (-rest / h[s][s]).max(0.0);
        }
        if kkt_satisfied(h, q, &v, tol) {
            converged = true;
            break;
        }
    }
    QpSolution {
        v,
        converged,
        iterations,
    }
}

fn kkt_satisfied(h: &[Vec<f64>], q: &[f64], v: &[f64], tol: f64) -> bool {
    for s in 0..v.len() {
        let mut grad = q[s];
        for j in 0..v.len() {
            grad += h[s][j] * v[j];
        }
        if v[s] > 0.0 {
            if grad.abs() > tol {
                return false;
            }
        } else if grad < -tol {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone)]
pub struct GemOutcome {
    pub gradient: Vec<f64>,
    /// Whether any constraint was violated (projection ran).
    pub projected: bool,
    /// False when the QP hit the iteration cap; the original gradient is
    /// returned in that case and the caller should log it.
    pub qp_converged: bool,
}

/// Project a new-batch gradient so it no longer conflicts with any memory
/// gradient. When every dot product is already non-negative the gradient
/// passes through; otherwise the dual QP runs and the projected gradient
/// is `G' v* + g`.
///
/// The ridged dual alone would leave a residual violation of `ridge * v_s`
/// on each active constraint, so its solution is polished by an unridged
/// refinement before the projected gradient is formed; the ridge then acts
/// purely as conditioning for the first solve.
pub fn gem_project(gradient: &[f64], memory_grads: &[Vec<f64>], ridge: f64) -> GemOutcome {
    assert!(!memory_grads.is_empty(), "gem projection needs memory gradients");
    let violated = memory_grads.iter().any(|row| dot(row, gradient) < 0.0);
    if !violated {
        return GemOutcome {
            gradient: gradient.to_vec(),
            projected: false,
            qp_converged: true,
        };
    }
    let mut solution = solve_dual_qp(memory_grads, gradient, ridge, QP_TOL, QP_MAX_ITER);
    if !solution.converged {
        return GemOutcome {
            gradient: gradient.to_vec(),
            projected: false,
            qp_converged: false,
        };
    }
    // Refine against the unridged dual until the primal contract holds:
    // the KKT residual is an absolute dual-space quantity, so the loop
    // checks the actual constraint satisfaction of the projected gradient
    // instead. A projection that collapses to numerical zero (the fully
    // conflicted case) snaps to exactly zero, where the contract is
    // trivially met.
    let (h, q) = dual_problem(memory_grads, gradient, 0.0);
    solution = coordinate_descent(&h, &q, solution.v, QP_TOL, QP_MAX_ITER);
    let mut projected = apply(gradient, memory_grads, &solution.v);
    let scale = norm(gradient);
    for _ in 0..64 {
        if constraints_satisfied(&projected, memory_grads, CONSTRAINT_TOL) {
            return GemOutcome {
                gradient: projected,
                projected: true,
                qp_converged: true,
            };
        }
        if norm(&projected) <= 1e-9 * scale {
            return GemOutcome {
                gradient: vec![0.0; gradient.len()],
                projected: true,
                qp_converged: true,
            };
        }
        solution = coordinate_descent(&h, &q, solution.v, 1e-15, 1000);
        projected = apply(gradient, memory_grads, &solution.v);
    }
    GemOutcome {
        gradient: gradient.to_vec(),
        projected: false,
        qp_converged: false,
    }
}

fn apply(gradient: &[f64], memory_grads: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut projected = gradient.to_vec();
    for (row, &weight) in memory_grads.iter().zip(v) {
        for (p, &r) in projected.iter_mut().zip(row) {
            *p += weight * r;
        }
    }
    projected
}

/// Check `g . g_s >= -tol * |g| * |g_s|` for every memory gradient.
pub fn constraints_satisfied(gradient: &[f64], memory_grads: &[Vec<f64>], tol: f64) -> bool {
    let g_norm = norm(gradient);
    memory_grads.iter().all(|row| {
        dot(row, gradient) >= -tol * g_norm * norm(row)
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
