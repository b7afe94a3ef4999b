//! Acceptance sets: the strict nonnegative cone, or a finite family of
//! optimized-certainty-equivalent risk constraints. Provides exact risk
//! evaluation, the dual lower bound through loss conjugates, and the
//! constraint blocks the hedging programs impose on a position vector.

use thiserror::Error;

use crate::tree::PathVector;

#[derive(Debug, Error, PartialEq)]
pub enum AcceptanceError {
    #[error("risk level must lie in (0, 1], got {0}")]
    BadAvarLevel(f64),
    #[error("entropic aversion must be positive, got {0}")]
    BadEntropicLambda(f64),
    #[error("piecewise loss must be increasing (nonnegative slopes)")]
    LossNotIncreasing,
    #[error("piecewise loss slopes must be nondecreasing (convexity)")]
    LossNotConvex,
    #[error("piecewise loss needs slopes below and above 1 so a minimizer exists")]
    LossSlopeRange,
    #[error("piecewise loss must satisfy sup_x (x - l(x)) = 0, got {0}")]
    LossNotNormalized(f64),
    #[error("piecewise loss needs {want} slopes for {got} breakpoints")]
    LossPieceCount { want: usize, got: usize },
    #[error("piecewise loss breakpoints must be strictly increasing")]
    LossBreakpointOrder,
    #[error("non-finite loss data")]
    LossNonFinite,
    #[error("measure has {got} entries, expected {want}")]
    MeasureLength { got: usize, want: usize },
    #[error("measure is not a probability vector (entry {idx} = {value}, total {total})")]
    NotProbability { idx: usize, value: f64, total: f64 },
    #[error("risk constraint list is empty")]
    EmptyFamily,
    #[error("candidate measure is not absolutely continuous: mass {mass} on a null path {idx}")]
    NotAbsolutelyContinuous { idx: usize, mass: f64 },
    #[error("vector has {got} entries, expected {want}")]
    VectorLength { got: usize, want: usize },
}

/// Increasing convex loss with a supporting line of slope one, so that the
/// certainty-equivalent minimization is well posed and vanishes at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLoss {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLoss {
    /// `slopes` has one more entry than `breakpoints`; `anchor` fixes the
    /// loss value at the first breakpoint.
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>, anchor: f64) -> Result<Self, AcceptanceError> {
        if slopes.len() != breakpoints.len() + 1 {
            return Err(AcceptanceError::LossPieceCount {
                want: breakpoints.len() + 1,
                got: slopes.len(),
            });
        }
        if breakpoints.is_empty() {
            return Err(AcceptanceError::LossSlopeRange);
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AcceptanceError::LossBreakpointOrder);
        }
        if breakpoints
            .iter()
            .chain(slopes.iter())
            .any(|v| !v.is_finite())
            || !anchor.is_finite()
        {
            return Err(AcceptanceError::LossNonFinite);
        }
        if slopes.iter().any(|&s| s < 0.0) {
            return Err(AcceptanceError::LossNotIncreasing);
        }
        if slopes.windows(2).any(|w| w[0] > w[1]) {
            return Err(AcceptanceError::LossNotConvex);
        }
        if !(slopes[0] < 1.0 && slopes[slopes.len() - 1] > 1.0) {
            return Err(AcceptanceError::LossSlopeRange);
        }
        let mut values = vec![anchor];
        for k in 1..breakpoints.len() {
            let prev = values[k - 1];
            values.push(prev + slopes[k] * (breakpoints[k] - breakpoints[k - 1]));
        }
        let loss = PiecewiseLoss {
            breakpoints,
            slopes,
            values,
        };
        // Normalization l*(1) = 0: the slope-one line supports the loss.
        let norm = loss.conjugate(1.0);
        if norm.abs() > 1e-9 {
            return Err(AcceptanceError::LossNotNormalized(norm));
        }
        Ok(loss)
    }

    pub fn value(&self, x: f64) -> f64 {
        let k = self.breakpoints.partition_point(|&b| b < x);
        if k == 0 {
            self.values[0] - self.slopes[0] * (self.breakpoints[0] - x)
        } else {
            self.values[k - 1] + self.slopes[k] * (x - self.breakpoints[k - 1])
        }
    }

    pub fn slope_range(&self) -> (f64, f64) {
        (self.slopes[0], self.slopes[self.slopes.len() - 1])
    }

    /// Conjugate sup_x (xy - l(x)); the sup sits at a kink.
    pub fn conjugate(&self, y: f64) -> f64 {
        let (lo, hi) = self.slope_range();
        if y < lo || y > hi {
            return f64::INFINITY;
        }
        self.breakpoints
            .iter()
            .zip(self.values.iter())
            .map(|(&b, &v)| b * y - v)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Supporting lines `l(x) >= slope * x + intercept`; l is their maximum.
    pub fn tangents(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.slopes.len());
        for (k, &s) in self.slopes.iter().enumerate() {
            let anchor = k.min(self.breakpoints.len() - 1);
            let (x0, v0) = (self.breakpoints[anchor], self.values[anchor]);
            out.push((s, v0 - s * x0));
        }
        out
    }
}

/// Loss functions for transformed-loss (optimized certainty equivalent)
/// risk measures.
#[derive(Debug, Clone, PartialEq)]
pub enum LossFunction {
    /// l(x) = x^+ / lambda, lambda in (0, 1]: average value at risk.
    Avar { lambda: f64 },
    /// l(x) = exp(lambda x - 1) / lambda, lambda > 0: entropic risk.
    Entropic { lambda: f64 },
    PiecewiseLinear(PiecewiseLoss),
}

impl LossFunction {
    pub fn validate(&self) -> Result<(), AcceptanceError> {
        match self {
            LossFunction::Avar { lambda } => {
                if *lambda > 0.0 && *lambda <= 1.0 {
                    Ok(())
                } else {
                    Err(AcceptanceError::BadAvarLevel(*lambda))
                }
            }
            LossFunction::Entropic { lambda } => {
                if *lambda > 0.0 && lambda.is_finite() {
                    Ok(())
                } else {
                    Err(AcceptanceError::BadEntropicLambda(*lambda))
                }
            }
            LossFunction::PiecewiseLinear(_) => Ok(()),
        }
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            LossFunction::Avar { lambda } => x.max(0.0) / lambda,
            LossFunction::Entropic { lambda } => (lambda * x - 1.0).exp() / lambda,
            LossFunction::PiecewiseLinear(l) => l.value(x),
        }
    }

    /// Conjugate l*(y) = sup_x (xy - l(x)); +infinity outside the effective
    /// domain. l*(1) = 0 for every admissible loss.
    pub fn conjugate(&self, y: f64) -> f64 {
        match self {
            LossFunction::Avar { lambda } => {
                if (0.0..=1.0 / lambda + 0.0).contains(&y) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
            LossFunction::Entropic { lambda } => {
                if y < 0.0 {
                    f64::INFINITY
                } else if y == 0.0 {
                    0.0
                } else {
                    y * y.ln() / lambda
                }
            }
            LossFunction::PiecewiseLinear(l) => l.conjugate(y),
        }
    }
}

/// One robust risk constraint: a reference measure and its loss.
#[derive(Debug, Clone, PartialEq)]
pub struct OceEntry {
    pub measure: PathVector,
    pub loss: LossFunction,
}

/// The acceptance set: either every path outcome nonnegative, or all listed
/// risk measures at level zero or better.
#[derive(Debug, Clone, PartialEq)]
pub enum AcceptanceSpec {
    Strict,
    RobustOce(Vec<OceEntry>),
}

impl AcceptanceSpec {
    pub fn validate(&self, num_paths: usize) -> Result<(), AcceptanceError> {
        match self {
            AcceptanceSpec::Strict => Ok(()),
            AcceptanceSpec::RobustOce(entries) => {
                if entries.is_empty() {
                    return Err(AcceptanceError::EmptyFamily);
                }
                for entry in entries {
                    entry.loss.validate()?;
                    check_probability(&entry.measure, num_paths)?;
                }
                Ok(())
            }
        }
    }

    pub fn is_strict(&self) -> bool {
        matches!(self, AcceptanceSpec::Strict)
    }

    pub fn entries(&self) -> &[OceEntry] {
        match self {
            AcceptanceSpec::Strict => &[],
            AcceptanceSpec::RobustOce(entries) => entries,
        }
    }

    /// Whether encoding the constraints requires smooth (entropic) rows.
    pub fn needs_convex_solver(&self) -> bool {
        self.entries()
            .iter()
            .any(|e| matches!(e.loss, LossFunction::Entropic { .. }))
    }

    /// Worst risk over the family for a given position; for the strict cone,
    /// the negative of the worst shortfall. Acceptable iff <= 0.
    pub fn worst_violation(&self, y: &PathVector) -> Result<f64, AcceptanceError> {
        match self {
            AcceptanceSpec::Strict => Ok(-y.min()),
            AcceptanceSpec::RobustOce(entries) => {
                let mut worst = f64::NEG_INFINITY;
                for entry in entries {
                    worst = worst.max(oce_risk(&entry.loss, &entry.measure, y)?);
                }
                Ok(worst)
            }
        }
    }
}

pub fn check_probability(q: &PathVector, num_paths: usize) -> Result<(), AcceptanceError> {
    if q.len() != num_paths {
        return Err(AcceptanceError::MeasureLength {
            got: q.len(),
            want: num_paths,
        });
    }
    let total = q.sum();
    for (idx, &value) in q.iter().enumerate() {
        if value < 0.0 || !value.is_finite() {
            return Err(AcceptanceError::NotProbability { idx, value, total });
        }
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(AcceptanceError::NotProbability {
            idx: 0,
            value: q[0],
            total,
        });
    }
    Ok(())
}

/// Transformed-loss risk: min_s (E_Q l(s - X) - s), computed exactly.
///
/// Average value at risk uses the quantile characterization (the minimizer
/// is a lambda-quantile of X), the entropic loss collapses in closed form to
/// a log-sum-exp, and piecewise losses are minimized over the finite kink
/// candidates of the objective.
pub fn oce_risk(loss: &LossFunction, q: &PathVector, x: &PathVector) -> Result<f64, AcceptanceError> {
    loss.validate()?;
    check_probability(q, q.len())?;
    if x.len() != q.len() {
        return Err(AcceptanceError::VectorLength {
            got: x.len(),
            want: q.len(),
        });
    }
    match loss {
        LossFunction::Avar { lambda } => {
            // Expected value over the worst lambda-tail of X, negated:
            // fill mass lambda from the lowest outcomes upward.
            let mut order: Vec<usize> = (0..x.len()).filter(|&i| q[i] > 0.0).collect();
            order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap().then(a.cmp(&b)));
            let mut need = *lambda;
            let mut acc = 0.0;
            for i in order {
                let take = q[i].min(need);
                acc += take * x[i];
                need -= take;
                if need <= 1e-15 {
                    break;
                }
            }
            Ok(-acc / lambda)
        }
        LossFunction::Entropic { lambda } => {
            // (1/lambda) log E_Q exp(-lambda X), stabilized.
            let mut max_arg = f64::NEG_INFINITY;
            for i in 0..x.len() {
                if q[i] > 0.0 {
                    max_arg = max_arg.max(-lambda * x[i]);
                }
            }
            let mut total = 0.0;
            for i in 0..x.len() {
                if q[i] > 0.0 {
                    total += q[i] * (-lambda * x[i] - max_arg).exp();
                }
            }
            Ok((max_arg + total.ln()) / lambda)
        }
        LossFunction::PiecewiseLinear(l) => {
            // The objective s -> E_Q l(s - X) - s is convex piecewise linear
            // with kinks exactly at s = x(i) + b; the minimum sits on one.
            let objective = |s: f64| -> f64 {
                let mut acc = 0.0;
                for i in 0..x.len() {
                    if q[i] > 0.0 {
                        acc += q[i] * l.value(s - x[i]);
                    }
                }
                acc - s
            };
            let mut best = f64::INFINITY;
            for i in 0..x.len() {
                if q[i] <= 0.0 {
                    continue;
                }
                for &b in l.breakpoints() {
                    best = best.min(objective(x[i] + b));
                }
            }
            Ok(best)
        }
    }
}

/// Dual lower bound E_P[-X] - E_Q[l*(dP/dQ)] for a candidate P absolutely
/// continuous with respect to Q. Never exceeds [`oce_risk`]; equality holds
/// at the dual optimizer.
pub fn oce_dual_check(
    loss: &LossFunction,
    q: &PathVector,
    x: &PathVector,
    p: &PathVector,
) -> Result<f64, AcceptanceError> {
    loss.validate()?;
    check_probability(q, q.len())?;
    check_probability(p, q.len())?;
    if x.len() != q.len() {
        return Err(AcceptanceError::VectorLength {
            got: x.len(),
            want: q.len(),
        });
    }
    let mut bound = 0.0;
    for i in 0..q.len() {
        if q[i] == 0.0 {
            if p[i] != 0.0 {
                return Err(AcceptanceError::NotAbsolutelyContinuous { idx: i, mass: p[i] });
            }
            continue;
        }
        bound += p[i] * (-x[i]) - q[i] * loss.conjugate(p[i] / q[i]);
    }
    Ok(bound)
}

/// Linear epigraph row over a position vector `y` (one value per path) and a
/// block of auxiliary variables.
#[derive(Debug, Clone)]
pub struct EpigraphRow {
    pub y_coeffs: Vec<(usize, f64)>,
    pub aux_coeffs: Vec<(usize, f64)>,
    /// Row sense: `sum >= rhs` when true, `sum <= rhs` otherwise.
    pub greater: bool,
    pub rhs: f64,
}

/// Smooth constraint `(1/lambda) log E_Q exp(-lambda y) <= 0` left after the
/// epigraph variable of an entropic entry is eliminated in closed form.
#[derive(Debug, Clone)]
pub struct SmoothAcceptanceRow {
    pub lambda: f64,
    pub measure: PathVector,
}

impl SmoothAcceptanceRow {
    /// Value and gradient with respect to the position vector.
    pub fn value_and_grad(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let q = &self.measure;
        let mut max_arg = f64::NEG_INFINITY;
        for i in 0..y.len() {
            if q[i] > 0.0 {
                max_arg = max_arg.max(q[i].ln() - self.lambda * y[i]);
            }
        }
        let mut total = 0.0;
        let mut weights = vec![0.0; y.len()];
        for i in 0..y.len() {
            if q[i] > 0.0 {
                let w = (q[i].ln() - self.lambda * y[i] - max_arg).exp();
                weights[i] = w;
                total += w;
            }
        }
        let value = (max_arg + total.ln()) / self.lambda;
        let grad = weights.iter().map(|w| -w / total).collect();
        (value, grad)
    }
}

/// Constraint blocks expressing membership of a position vector in the
/// acceptance set, in terms of auxiliary variables local to the block.
#[derive(Debug, Clone, Default)]
pub struct EpigraphBlocks {
    pub aux_count: usize,
    /// Bounds for the auxiliary variables (lower, upper).
    pub aux_bounds: Vec<(f64, f64)>,
    pub rows: Vec<EpigraphRow>,
    pub smooth: Vec<SmoothAcceptanceRow>,
}

/// Encode acceptance of a position vector with `num_paths` entries.
///
/// Strict: one nonnegativity row per path. Average value at risk: an
/// auxiliary shift `s` and per-path shortfall epigraph variables with the
/// budget row `E_Q u - s <= 0`. Piecewise losses: the same shape with one
/// row per supporting line. Entropic: a single smooth row (the shift is
/// eliminated analytically).
pub fn acceptance_epigraph(
    acc: &AcceptanceSpec,
    num_paths: usize,
) -> Result<EpigraphBlocks, AcceptanceError> {
    acc.validate(num_paths)?;
    let mut blocks = EpigraphBlocks::default();
    match acc {
        AcceptanceSpec::Strict => {
            for omega in 0..num_paths {
                blocks.rows.push(EpigraphRow {
                    y_coeffs: vec![(omega, 1.0)],
                    aux_coeffs: Vec::new(),
                    greater: true,
                    rhs: 0.0,
                });
            }
        }
        AcceptanceSpec::RobustOce(entries) => {
            for entry in entries {
                match &entry.loss {
                    LossFunction::Entropic { lambda } => {
                        blocks.smooth.push(SmoothAcceptanceRow {
                            lambda: *lambda,
                            measure: entry.measure.clone(),
                        });
                    }
                    LossFunction::Avar { lambda } => {
                        let s = alloc_aux(&mut blocks, (f64::NEG_INFINITY, f64::INFINITY));
                        let mut budget = EpigraphRow {
                            y_coeffs: Vec::new(),
                            aux_coeffs: vec![(s, -1.0)],
                            greater: false,
                            rhs: 0.0,
                        };
                        for omega in 0..num_paths {
                            let mass = entry.measure[omega];
                            if mass <= 0.0 {
                                continue;
                            }
                            let u = alloc_aux(&mut blocks, (0.0, f64::INFINITY));
                            // u >= (s - y) / lambda  <=>  lambda u - s + y >= 0
                            blocks.rows.push(EpigraphRow {
                                y_coeffs: vec![(omega, 1.0)],
                                aux_coeffs: vec![(u, *lambda), (s, -1.0)],
                                greater: true,
                                rhs: 0.0,
                            });
                            budget.aux_coeffs.push((u, mass));
                        }
                        blocks.rows.push(budget);
                    }
                    LossFunction::PiecewiseLinear(loss) => {
                        let s = alloc_aux(&mut blocks, (f64::NEG_INFINITY, f64::INFINITY));
                        let mut budget = EpigraphRow {
                            y_coeffs: Vec::new(),
                            aux_coeffs: vec![(s, -1.0)],
                            greater: false,
                            rhs: 0.0,
                        };
                        let tangents = loss.tangents();
                        for omega in 0..num_paths {
                            let mass = entry.measure[omega];
                            if mass <= 0.0 {
                                continue;
                            }
                            let u = alloc_aux(&mut blocks, (f64::NEG_INFINITY, f64::INFINITY));
                            // u >= a (s - y) + c  <=>  u - a s + a y >= c
                            for &(a, c) in &tangents {
                                blocks.rows.push(EpigraphRow {
                                    y_coeffs: vec![(omega, a)],
                                    aux_coeffs: vec![(u, 1.0), (s, -a)],
                                    greater: true,
                                    rhs: c,
                                });
                            }
                            budget.aux_coeffs.push((u, mass));
                        }
                        blocks.rows.push(budget);
                    }
                }
            }
        }
    }
    Ok(blocks)
}

fn alloc_aux(blocks: &mut EpigraphBlocks, bounds: (f64, f64)) -> usize {
    let idx = blocks.aux_count;
    blocks.aux_count += 1;
    blocks.aux_bounds.push(bounds);
    idx
}
