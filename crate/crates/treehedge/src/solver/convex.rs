//! Cutting-plane solver: each smooth convex constraint is replaced by its
//! accumulated tangent cuts, the linear relaxation is re-solved, and every
//! violated constraint contributes a fresh tangent until the worst violation
//! drops below tolerance. The relaxation bound is monotone across rounds.

use super::lp::{solve_lp, LinearProgram, Relation, SolveError, SolveOutcome, SolveStatus};

/// A valid linear outer cut `a·x <= rhs` for a convex constraint set.
#[derive(Debug, Clone)]
pub struct Cut {
    pub coeffs: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl Cut {
    /// Tangent of a differentiable convex g at `x`: g(y) >= g(x) + grad·(y-x),
    /// so g(y) <= 0 implies grad·y <= grad·x - g(x).
    pub fn tangent(x: &[f64], value: f64, grad: &[(usize, f64)]) -> Cut {
        let mut rhs = -value;
        for &(j, g) in grad {
            rhs += g * x[j];
        }
        Cut {
            coeffs: grad.to_vec(),
            rhs,
        }
    }
}

/// One smooth convex constraint g(x) <= 0.
pub trait ConvexConstraint {
    /// True constraint value at x; may be +infinity.
    fn value(&self, x: &[f64]) -> f64;
    /// A globally valid cut, normally the tangent at x (or at a point
    /// clamped into the domain interior when the gradient degenerates on
    /// the boundary).
    fn cut_at(&self, x: &[f64]) -> Cut;
    fn name(&self) -> &str {
        "smooth"
    }
}

/// Linear core plus smooth convex rows.
pub struct ConvexProgram {
    pub core: LinearProgram,
    pub constraints: Vec<Box<dyn ConvexConstraint>>,
    /// Box applied while cuts accumulate, for programs whose linear core is
    /// unbounded before the smooth rows bite. A solution pinned to this
    /// synthetic box is reported as Unbounded.
    pub trust_box: Option<Vec<(f64, f64)>>,
}

const AUTO_BOX: f64 = 1e9;
// Cuts stabilize at moderate scales, so boxed coordinates start on a small
// stage box that grows geometrically only when the solution pins it.
const STAGE_START: f64 = 64.0;
const STAGE_GROWTH: f64 = 64.0;

/// Kelley loop. `tol` bounds the final constraint violation; the returned
/// value sits within the relaxation gap of the optimum. `iterations` counts
/// cutting-plane rounds.
pub fn solve_convex(
    cp: &ConvexProgram,
    tol: f64,
    max_iters: usize,
) -> Result<SolveOutcome, SolveError> {
    let tol = if tol > 0.0 {
        tol
    } else {
        super::DEFAULT_CONVEX_TOL
    };
    let lp_tol = (tol * 1e-2).clamp(1e-12, super::DEFAULT_LP_TOL);

    if cp.constraints.is_empty() && cp.trust_box.is_none() {
        return solve_lp(&cp.core, lp_tol);
    }

    let n = cp.core.num_vars();
    let mut working = cp.core.clone();
    let core_rows = working.rows.len();
    // The outer trust box: the user's, or auto once the relaxation proves
    // unbounded. Stage boxes shrink it further while cuts accumulate.
    let mut outer: Vec<(f64, f64)> = match &cp.trust_box {
        Some(bx) => bx.clone(),
        None => vec![(f64::NEG_INFINITY, f64::INFINITY); n],
    };
    let mut stage = STAGE_START;
    let apply_bounds = |working: &mut LinearProgram, outer: &[(f64, f64)], stage: f64| {
        for j in 0..working.num_vars() {
            let (core_lo, core_hi) = cp.core.bounds[j];
            let (outer_lo, outer_hi) = outer[j];
            // Stage the coordinate only when the outer box restricts it.
            let (lo, hi) = if outer_lo > core_lo || outer_hi < core_hi {
                (outer_lo.max(-stage), outer_hi.min(stage))
            } else {
                (outer_lo, outer_hi)
            };
            working.bounds[j] = (core_lo.max(lo), core_hi.min(hi));
        }
    };
    apply_bounds(&mut working, &outer, stage);

    let minimize = matches!(cp.core.sense, super::Sense::Minimize);
    let mut last_bound = if minimize {
        f64::NEG_INFINITY
    } else {
        f64::INFINITY
    };
    let mut auto_boxed = cp.trust_box.is_some();
    let mut bound_at_growth: Option<f64> = None;

    for round in 0..max_iters {
        let out = solve_lp(&working, lp_tol)?;
        match out.status {
            SolveStatus::Infeasible => {
                // Cuts only remove infeasible points, so the verdict stands.
                let mut res = out;
                res.iterations = round;
                return Ok(res);
            }
            SolveStatus::Unbounded => {
                if auto_boxed {
                    let mut res = out;
                    res.iterations = round;
                    return Ok(res);
                }
                auto_boxed = true;
                for j in 0..n {
                    outer[j].0 = outer[j].0.max(-AUTO_BOX);
                    outer[j].1 = outer[j].1.min(AUTO_BOX);
                }
                apply_bounds(&mut working, &outer, stage);
                continue;
            }
            SolveStatus::IterLimit => {
                if std::env::var_os("TREEHEDGE_KELLEY_TRACE").is_some() {
                    eprintln!("round {round}: inner simplex hit its pivot budget");
                    let _ = std::fs::write("/tmp/stalled_lp.txt", working.dump());
                }
                let mut res = out;
                res.iterations = round;
                res.bracket = Some((f64::NAN, last_bound));
                return Ok(res);
            }
            SolveStatus::Optimal => {}
        }
        let x = out.point.clone().expect("optimal point");
        let bound = out.value.expect("optimal value");
        last_bound = bound;

        let mut worst = f64::NEG_INFINITY;
        for c in &cp.constraints {
            worst = worst.max(c.value(&x));
        }
        if std::env::var_os("TREEHEDGE_KELLEY_TRACE").is_some() && round % 50 == 0 {
            let xmax = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            eprintln!("round {round}: bound {bound:.6e} worst {worst:.3e} stage {stage} |x| {xmax:.3e}");
        }
        if worst <= tol {
            // Feasible for the smooth rows. A solution pinned to a
            // synthetic bound wants out: grow the stage box, or declare the
            // direction genuinely unbounded once the outer box is reached.
            let scale = 1.0 + x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let pinned = (0..n).any(|j| {
                let (core_lo, core_hi) = cp.core.bounds[j];
                let (lo, hi) = working.bounds[j];
                (lo > core_lo && (x[j] - lo).abs() <= 1e-6 * scale)
                    || (hi < core_hi && (hi - x[j]).abs() <= 1e-6 * scale)
            });
            if pinned {
                // A flat direction rides the box without improving the
                // objective: growing it again changes nothing, so the
                // finite value stands.
                let flat = bound_at_growth
                    .map(|b| (bound - b).abs() <= tol * (1.0 + bound.abs()))
                    .unwrap_or(false);
                let at_outer = (0..n).all(|j| {
                    working.bounds[j].0 <= outer[j].0.max(cp.core.bounds[j].0) + 1e-12
                        && working.bounds[j].1 >= outer[j].1.min(cp.core.bounds[j].1) - 1e-12
                });
                if !at_outer && !flat {
                    bound_at_growth = Some(bound);
                    stage *= STAGE_GROWTH;
                    apply_bounds(&mut working, &outer, stage);
                    continue;
                }
                if flat {
                    let mut res = out;
                    res.row_duals = res.row_duals.map(|d| d[..core_rows].to_vec());
                    res.dual_value = None;
                    res.iterations = round;
                    return Ok(res);
                }
                let mut res = SolveOutcome::bare(SolveStatus::Unbounded);
                res.value = Some(if minimize {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                });
                res.point = Some(x);
                res.iterations = round;
                return Ok(res);
            }
            let mut res = out;
            res.row_duals = res.row_duals.map(|d| d[..core_rows].to_vec());
            res.dual_value = None;
            res.iterations = round;
            return Ok(res);
        }

        // Bundle compression: once the cut pile dwarfs the dimension, drop
        // cuts slack at the current optimum (they do not support it, so the
        // optimum and bound are unchanged this round) to keep re-solves flat.
        let cut_cap = 200.max(8 * n);
        if working.rows.len() - core_rows > cut_cap {
            let cuts = working.rows.split_off(core_rows);
            let kept: Vec<_> = cuts
                .into_iter()
                .filter(|row| {
                    let lhs: f64 = row.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
                    lhs >= row.rhs - 1e-7 * (1.0 + row.rhs.abs())
                })
                .collect();
            working.rows.extend(kept);
        }

        let mut made_progress = false;
        for c in &cp.constraints {
            let value = c.value(&x);
            if value > tol {
                let cut = c.cut_at(&x);
                let lhs: f64 = cut.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
                if lhs > cut.rhs + tol * 1e-3 {
                    made_progress = true;
                }
                working.add_row(cut.coeffs, Relation::Le, cut.rhs);
            }
        }
        if !made_progress {
            if std::env::var_os("TREEHEDGE_KELLEY_TRACE").is_some() {
                eprintln!("round {round}: cuts no longer separate (worst {worst:.3e})");
            }
            // Degenerate cut (boundary-clamped tangent failed to separate);
            // stop honestly rather than loop.
            let mut res = SolveOutcome::bare(SolveStatus::IterLimit);
            res.iterations = round;
            res.bracket = Some((f64::NAN, last_bound));
            return Ok(res);
        }
    }
    let mut res = SolveOutcome::bare(SolveStatus::IterLimit);
    res.iterations = max_iters;
    res.bracket = Some((f64::NAN, last_bound));
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::super::lp::Sense;
    use super::*;

    struct Closure<F, G>(F, G, &'static str);
    impl<F: Fn(&[f64]) -> f64, G: Fn(&[f64]) -> Cut> ConvexConstraint for Closure<F, G> {
        fn value(&self, x: &[f64]) -> f64 {
            (self.0)(x)
        }
        fn cut_at(&self, x: &[f64]) -> Cut {
            (self.1)(x)
        }
        fn name(&self) -> &str {
            self.2
        }
    }

    #[test]
    fn exponential_boundary() {
        // max x subject to exp(x) <= 1: the boundary of the log constraint.
        let mut core = LinearProgram::new(Sense::Maximize, 1);
        core.objective[0] = 1.0;
        let cp = ConvexProgram {
            core,
            constraints: vec![Box::new(Closure(
                |x: &[f64]| x[0].exp() - 1.0,
                |x: &[f64]| Cut::tangent(x, x[0].exp() - 1.0, &[(0, x[0].exp())]),
                "exp",
            ))],
            trust_box: Some(vec![(-64.0, 64.0)]),
        };
        let out = solve_convex(&cp, 1e-9, 200).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(out.value.unwrap().abs() < 1e-7, "{:?}", out.value);
    }

    #[test]
    fn entropic_superhedge_in_one_variable() {
        // min m subject to log(0.5 e^{1-m} + 0.5 e^{-m}) <= 0, which is the
        // affine row -m + log((e+1)/2) <= 0 in disguise.
        let target = ((1f64.exp() + 1.0) / 2.0).ln();
        let g = move |x: &[f64]| target - x[0];
        let mut core = LinearProgram::new(Sense::Minimize, 1);
        core.objective[0] = 1.0;
        let cp = ConvexProgram {
            core,
            constraints: vec![Box::new(Closure(
                g,
                move |x: &[f64]| Cut::tangent(x, g(x), &[(0, -1.0)]),
                "entropic",
            ))],
            trust_box: Some(vec![(-1e6, 1e6)]),
        };
        let out = solve_convex(&cp, 1e-9, 200).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(
            (out.value.unwrap() - target).abs() < 1e-8,
            "{} vs {target}",
            out.value.unwrap()
        );
    }

    #[test]
    fn disk_constrained_plane() {
        // min x + y subject to x^2 + y^2 <= 1: optimum at -(1,1)/sqrt(2).
        let mut core = LinearProgram::new(Sense::Minimize, 2);
        core.objective = vec![1.0, 1.0];
        let cp = ConvexProgram {
            core,
            constraints: vec![Box::new(Closure(
                |x: &[f64]| x[0] * x[0] + x[1] * x[1] - 1.0,
                |x: &[f64]| {
                    Cut::tangent(
                        x,
                        x[0] * x[0] + x[1] * x[1] - 1.0,
                        &[(0, 2.0 * x[0]), (1, 2.0 * x[1])],
                    )
                },
                "disk",
            ))],
            trust_box: Some(vec![(-4.0, 4.0), (-4.0, 4.0)]),
        };
        let out = solve_convex(&cp, 1e-8, 2000).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        let expect = -(2.0f64).sqrt();
        assert!(
            (out.value.unwrap() - expect).abs() < 1e-6,
            "{} vs {expect}",
            out.value.unwrap()
        );
        let p = out.point.unwrap();
        assert!(p[0] * p[0] + p[1] * p[1] <= 1.0 + 1e-7);
    }

    #[test]
    fn lp_only_program_matches_solve_lp() {
        let mut core = LinearProgram::new(Sense::Maximize, 1);
        core.objective[0] = 1.0;
        core.add_row(vec![(0, 1.0)], Relation::Le, 3.0);
        let via_lp = solve_lp(&core, 1e-9).unwrap();
        let cp = ConvexProgram {
            core,
            constraints: Vec::new(),
            trust_box: None,
        };
        let via_convex = solve_convex(&cp, 1e-7, 10).unwrap();
        assert_eq!(via_convex.status, SolveStatus::Optimal);
        assert_eq!(via_convex.value, via_lp.value);
    }

    #[test]
    fn unbounded_direction_is_reported() {
        // max x with a vacuous smooth row: pinned to the synthetic box.
        let mut core = LinearProgram::new(Sense::Maximize, 1);
        core.objective[0] = 1.0;
        let cp = ConvexProgram {
            core,
            constraints: vec![Box::new(Closure(
                |_: &[f64]| -1.0,
                |_: &[f64]| Cut {
                    coeffs: vec![(0, 0.0)],
                    rhs: 1.0,
                },
                "vacuous",
            ))],
            trust_box: Some(vec![(-1e6, 1e6)]),
        };
        let out = solve_convex(&cp, 1e-7, 50).unwrap();
        assert_eq!(out.status, SolveStatus::Unbounded);
        assert_eq!(out.value.unwrap(), f64::INFINITY);
    }

    #[test]
    fn relaxation_bound_is_monotone() {
        // Track bounds by re-running with growing iteration caps.
        let g = |x: &[f64]| x[0] * x[0] + x[1] * x[1] - 1.0;
        let make = || {
            let mut core = LinearProgram::new(Sense::Minimize, 2);
            core.objective = vec![1.0, 0.3];
            ConvexProgram {
                core,
                constraints: vec![Box::new(Closure(
                    g,
                    move |x: &[f64]| Cut::tangent(x, g(x), &[(0, 2.0 * x[0]), (1, 2.0 * x[1])]),
                    "disk",
                ))],
                trust_box: Some(vec![(-8.0, 8.0), (-8.0, 8.0)]),
            }
        };
        let mut prev = f64::NEG_INFINITY;
        for cap in [1usize, 2, 3, 5, 8, 13, 40] {
            let out = solve_convex(&make(), 1e-9, cap).unwrap();
            let bound = match out.status {
                SolveStatus::Optimal => out.value.unwrap(),
                SolveStatus::IterLimit => out.bracket.unwrap().1,
                other => panic!("unexpected {other:?}"),
            };
            assert!(
                bound >= prev - 1e-9,
                "bound regressed: {bound} after {prev} at cap {cap}"
            );
            prev = bound;
        }
    }
}
