//! Maximizing an affine form over a box cut by linear constraints.

use microlp::{ComparisonOp, OptimizationDirection, Problem, SolveOutcome};

use super::bounds::LinearConstraint;

/// Slack granted to every constraint, so faces of the feasible set survive
/// round-off in the simplex.
const SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
pub(crate) enum LpResult {
    /// Optimal value and a maximizer (full input vector).
    Optimal {
        value: f64,
        point: Vec<f64>,
    },
    Infeasible,
    /// The solver gave up; callers fall back to box bounds.
    Failed,
}

/// Maximizes `form . x[free] + constant` for `x` in `[lo, hi]` subject to
/// `constraints`.
pub(crate) fn maximize(
    form: &[f64],
    free: &[usize],
    lo: &[f64],
    hi: &[f64],
    constraints: &[LinearConstraint],
) -> LpResult {
    let d = free.len();
    let mut point = lo.to_vec();
    for c in constraints {
        if c.coeffs.iter().all(|&v| v == 0.0) && c.constant < -SLACK {
            return LpResult::Infeasible;
        }
    }
    if d == 0 {
        return LpResult::Optimal { value: form[0], point };
    }

    let mut problem = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = free
        .iter()
        .enumerate()
        .map(|(f, &k)| problem.add_var(form[f], (lo[k], hi[k])))
        .collect();
    for c in constraints {
        let terms: Vec<_> = c
            .coeffs
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(f, &v)| (vars[f], v))
            .collect();
        if terms.is_empty() {
            continue;
        }
        problem.add_constraint(terms.as_slice(), ComparisonOp::Ge, -c.constant - SLACK);
    }
    match problem.solve() {
        Ok(SolveOutcome::Solution(sol)) => {
            for (f, &k) in free.iter().enumerate() {
                point[k] = sol.var_value(vars[f]).clamp(lo[k], hi[k]);
            }
            LpResult::Optimal {
                value: sol.objective() + form[d],
                point,
            }
        }
        Ok(SolveOutcome::Interrupted(_)) => LpResult::Failed,
        Err(microlp::Error::Infeasible) => LpResult::Infeasible,
        Err(_) => LpResult::Failed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maximizes_under_constraint() {
        // max x + y on [0,1]^2 with x + y <= 1.5
        let c = LinearConstraint {
            coeffs: vec![-1.0, -1.0],
            constant: 1.5,
        };
        match maximize(&[1.0, 1.0, 0.25], &[0, 1], &[0.0, 0.0], &[1.0, 1.0], &[c]) {
            LpResult::Optimal { value, point } => {
                assert!((value - 1.75).abs() < 1e-7);
                assert!((point[0] + point[1] - 1.5).abs() < 1e-7);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detects_infeasibility() {
        // x >= 2 on [0, 1]
        let c = LinearConstraint {
            coeffs: vec![1.0],
            constant: -2.0,
        };
        assert!(matches!(
            maximize(&[1.0, 0.0], &[0], &[0.0], &[1.0], &[c]),
            LpResult::Infeasible
        ));
    }
}
