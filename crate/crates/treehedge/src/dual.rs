//! The measure side: maximize (or minimize) the expected payoff over
//! penalized generalized martingale measures. Frictionless trading pins the
//! conditional expectations of terminal prices, proportional costs relax
//! them to bands, piecewise and power costs charge exact conjugate
//! penalties, short-sale bans turn equalities into one-step supermartingale
//! inequalities, and risk-based acceptance adds density caps or relative
//! entropy. A zero-price node whose asset later revives carries no mass.
//!
//! Strong duality against the hedging programs in [`crate::primal`] is
//! asserted by the test suite, not assumed: both sides are built from
//! separate formulas.

use std::sync::Arc;

use crate::acceptance::{AcceptanceSpec, LossFunction};
use crate::error::EngineError;
use crate::market::{friction_conjugate, gains, MarketSpec, StaticInstrument, Strategy};
use crate::primal::{superhedge, HedgeStatus};
use crate::solver::{
    solve_convex, solve_lp, ConvexConstraint, ConvexProgram, Cut, LinearProgram, Relation, Sense,
    SolveStatus, DEFAULT_CONVEX_ITERS,
};
use crate::tree::{PathVector, ScenarioTree};

/// How the "some reference measure" clause of robust risk constraints is
/// read: over the convex hull of the listed generators (the convexity
/// hypothesis of the dual theorems, and the mode under which strong duality
/// holds) or over the generators alone (a smaller, possibly nonconvex set;
/// its value can fall below the hedging price).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QMode {
    #[default]
    Hull,
    Generators,
}

#[derive(Debug, Clone)]
pub struct ConditionResidual {
    pub label: String,
    /// Nonnegative (within tolerance) when the condition holds.
    pub slack: f64,
}

#[derive(Debug, Clone)]
pub struct MeasureResiduals {
    pub conditions: Vec<ConditionResidual>,
}

impl MeasureResiduals {
    pub fn worst(&self) -> f64 {
        self.conditions
            .iter()
            .map(|c| c.slack)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn violations(&self, tol: f64) -> Vec<&ConditionResidual> {
        self.conditions.iter().filter(|c| c.slack < -tol).collect()
    }
}

/// A candidate pricing measure with its penalty and per-condition slacks.
#[derive(Debug, Clone)]
pub struct GeneralizedMartingaleMeasure {
    pub probabilities: PathVector,
    /// Finite penalty part (conjugate cost terms, instrument penalties,
    /// relative entropy); indicator-type conditions appear as slacks.
    pub penalty: f64,
    pub residuals: MeasureResiduals,
}

#[derive(Debug, Clone)]
pub struct DualOutcome {
    /// Optimal dual value; -infinity (super) or +infinity (sub) when the
    /// dual feasible set is empty, which flags an arbitrage.
    pub value: f64,
    pub measure: Option<GeneralizedMartingaleMeasure>,
    pub empty_feasible_set: bool,
}

/// Arbitrage verdict with a re-checkable certificate on either side.
#[derive(Debug, Clone)]
pub enum FtapVerdict {
    NoArbitrage {
        measure: GeneralizedMartingaleMeasure,
    },
    Arbitrage {
        strategy: Strategy,
        /// Realized gains per path.
        outcome: PathVector,
        /// The attainable uniform excess: the outcome stays at least this
        /// far inside the acceptance set.
        margin: f64,
    },
}

impl FtapVerdict {
    pub fn is_arbitrage(&self) -> bool {
        matches!(self, FtapVerdict::Arbitrage { .. })
    }

    /// Which side of the equivalence the certificate witnesses. On a finite
    /// path space a strictly positive outcome is uniformly positive, so the
    /// two arbitrage notions coincide.
    pub fn certified_condition(&self) -> &'static str {
        match self {
            FtapVerdict::NoArbitrage { .. } => {
                "a measure with zero penalty prices every attainable-minus-acceptable \
                 position at or below zero"
            }
            FtapVerdict::Arbitrage { .. } => {
                "a trading outcome exceeding an acceptable position by a uniform margin"
            }
        }
    }
}

/// The gain-set conjugate at `p`: conjugate cost terms summed over nodes
/// where the measure has mass, plus the static book's conjugate, with
/// +infinity outside the admissible set (band violations, supermartingale
/// violations, mass on a zero-price node whose asset revives). `tol`
/// absorbs rounding in the indicator conditions; pass 0 for the exact
/// mathematical function on exactly-representable inputs.
pub fn penalty_strict(
    tree: &ScenarioTree,
    market: &MarketSpec,
    p: &PathVector,
    tol: f64,
) -> Result<f64, EngineError> {
    market.validate(tree)?;
    if p.len() != tree.num_paths() {
        return Err(EngineError::Internal(format!(
            "measure has {} entries for {} paths",
            p.len(),
            tree.num_paths()
        )));
    }
    let mut total = 0.0;
    for (j, policy) in market.assets.iter().enumerate() {
        if !policy.tradeable {
            continue;
        }
        let asset = j + 1;
        let terminal = tree.terminal_discounted(asset)?;
        for &node in tree.non_terminal_nodes() {
            let (mass, moment) = tree.node_mass_and_cond_expectation(p, &terminal, node)?;
            let s = tree.discounted_price(asset, node)?;
            let scale = 1.0 + moment.abs() + mass * s.abs();
            if policy.short_sale_banned {
                // One-step supermartingale condition.
                let mut step = 0.0;
                for &c in &tree.node(node).children {
                    let (cm, _) = tree.node_mass_and_cond_expectation(p, &terminal, c)?;
                    step += cm * tree.discounted_price(asset, c)?;
                }
                if step > s * mass + tol * scale {
                    return Ok(f64::INFINITY);
                }
                continue;
            }
            if s == 0.0 {
                // Revival exclusion: no mass may flow to later positive prices.
                if moment > tol * scale {
                    return Ok(f64::INFINITY);
                }
                continue;
            }
            if mass == 0.0 {
                continue;
            }
            let y = (moment / mass - s) / s;
            let friction = market.friction_at(tree, asset, node);
            // Shrink the argument by the indicator slack so boundary dust
            // does not flip a zero conjugate to infinity.
            let slack = tol * scale / (mass * s.abs()).max(1e-300);
            let y_eff = if y.abs() <= slack { 0.0 } else { y - slack * y.signum() };
            let g_star = friction_conjugate(&friction, y_eff);
            if g_star == f64::INFINITY {
                return Ok(f64::INFINITY);
            }
            total += mass * g_star / tree.node(node).numeraire();
        }
    }
    for inst in &market.instruments {
        total += instrument_conjugate(inst, p);
        if total == f64::INFINITY {
            return Ok(f64::INFINITY);
        }
    }
    Ok(total)
}

/// Static-book conjugate for one instrument at a fixed measure.
fn instrument_conjugate(inst: &StaticInstrument, p: &PathVector) -> f64 {
    let expectation = p.dot(&inst.payoff);
    if let Some(s) = &inst.superlinear {
        let qc = s.exponent / (s.exponent - 1.0);
        return s.delta.powf(1.0 - qc) / qc * (expectation - inst.bid).abs().powf(qc);
    }
    let mut total = 0.0;
    let excess = expectation - inst.ask;
    if excess > 0.0 {
        if inst.max_position == f64::INFINITY {
            return f64::INFINITY;
        }
        total += inst.max_position * excess;
    }
    let shortfall = inst.bid - expectation;
    if shortfall > 0.0 {
        if inst.min_position == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        total += (-inst.min_position) * shortfall;
    }
    total
}

// ---------------------------------------------------------------------------
// Dual program assembly.

struct PerspectivePenaltyRow {
    scale: f64,
    conj_exp: f64,
    price: f64,
    terminal: Vec<f64>,
    p0: usize,
    range: (usize, usize),
    pi_col: usize,
}

impl PerspectivePenaltyRow {
    fn mass_moment(&self, x: &[f64]) -> (f64, f64) {
        let (lo, hi) = self.range;
        let mut mass = 0.0;
        let mut moment = 0.0;
        for w in lo..hi {
            mass += x[self.p0 + w];
            moment += x[self.p0 + w] * self.terminal[w - lo];
        }
        (mass, moment)
    }
}

impl ConvexConstraint for PerspectivePenaltyRow {
    fn value(&self, x: &[f64]) -> f64 {
        let (mass, moment) = self.mass_moment(x);
        if mass <= 1e-300 {
            return -x[self.pi_col];
        }
        let r = moment - mass * self.price;
        self.scale * mass.powf(1.0 - self.conj_exp) * r.abs().powf(self.conj_exp) - x[self.pi_col]
    }
    fn cut_at(&self, x: &[f64]) -> Cut {
        let (mass, moment) = self.mass_moment(x);
        let m = mass.max(1e-12);
        let r = moment - m * self.price;
        let pc = self.conj_exp;
        let d_moment = self.scale * pc * m.powf(1.0 - pc) * r.abs().powf(pc - 1.0) * r.signum();
        let d_mass = self.scale
            * ((1.0 - pc) * m.powf(-pc) * r.abs().powf(pc)
                - pc * m.powf(1.0 - pc) * r.abs().powf(pc - 1.0) * r.signum() * self.price);
        let (lo, hi) = self.range;
        let mut grad: Vec<(usize, f64)> = Vec::with_capacity(hi - lo + 1);
        for w in lo..hi {
            grad.push((self.p0 + w, d_mass + d_moment * self.terminal[w - lo]));
        }
        grad.push((self.pi_col, -1.0));
        // Anchor at the clamped interior point.
        let mut anchor = x.to_vec();
        if mass < 1e-12 {
            // distribute the clamped mass evenly so the anchor stays valid
            let bump = (1e-12 - mass).max(0.0) / (hi - lo) as f64;
            for w in lo..hi {
                anchor[self.p0 + w] += bump;
            }
        }
        let value = {
            let (am, amo) = self.mass_moment(&anchor);
            let r = amo - am * self.price;
            self.scale * am.powf(1.0 - pc) * r.abs().powf(pc) - anchor[self.pi_col]
        };
        Cut::tangent(&anchor, value, &grad)
    }
    fn name(&self) -> &str {
        "perspective-penalty"
    }
}

struct InstrumentPowerPenaltyRow {
    scale: f64,
    conj_exp: f64,
    price: f64,
    payoff: PathVector,
    p0: usize,
    sigma_col: usize,
}

impl ConvexConstraint for InstrumentPowerPenaltyRow {
    fn value(&self, x: &[f64]) -> f64 {
        let e: f64 = (0..self.payoff.len())
            .map(|w| x[self.p0 + w] * self.payoff[w])
            .sum();
        self.scale * (e - self.price).abs().powf(self.conj_exp) - x[self.sigma_col]
    }
    fn cut_at(&self, x: &[f64]) -> Cut {
        let e: f64 = (0..self.payoff.len())
            .map(|w| x[self.p0 + w] * self.payoff[w])
            .sum();
        let r = e - self.price;
        let d = self.scale * self.conj_exp * r.abs().powf(self.conj_exp - 1.0) * r.signum();
        let mut grad: Vec<(usize, f64)> = (0..self.payoff.len())
            .map(|w| (self.p0 + w, d * self.payoff[w]))
            .collect();
        grad.push((self.sigma_col, -1.0));
        Cut::tangent(x, self.value(x), &grad)
    }
    fn name(&self) -> &str {
        "instrument-penalty"
    }
}

struct EntropyPenaltyRow {
    lambda: f64,
    generators: Arc<Vec<PathVector>>,
    /// Paths supported by at least one generator; others carry no mass.
    support: Vec<usize>,
    p0: usize,
    /// Hull mode: mixture weight columns; generators mode: a fixed index.
    w0: Option<usize>,
    fixed: Option<usize>,
    e_col: usize,
}

impl EntropyPenaltyRow {
    fn mixture(&self, x: &[f64], omega: usize) -> f64 {
        match (self.w0, self.fixed) {
            (Some(w0), _) => self
                .generators
                .iter()
                .enumerate()
                .map(|(k, q)| x[w0 + k] * q[omega])
                .sum(),
            (None, Some(k)) => self.generators[k][omega],
            _ => unreachable!(),
        }
    }
}

impl ConvexConstraint for EntropyPenaltyRow {
    fn value(&self, x: &[f64]) -> f64 {
        let mut rel_ent = 0.0;
        for &w in &self.support {
            let p = x[self.p0 + w];
            if p > 1e-300 {
                let q = self.mixture(x, w);
                if q <= 0.0 {
                    return f64::INFINITY;
                }
                rel_ent += p * (p / q).ln();
            }
        }
        rel_ent / self.lambda - x[self.e_col]
    }
    fn cut_at(&self, x: &[f64]) -> Cut {
        // Tangent at an interior anchor: clamp masses and weights away from
        // the boundary where the gradient of p log(p/q) degenerates.
        let mut anchor = x.to_vec();
        for &w in &self.support {
            anchor[self.p0 + w] = anchor[self.p0 + w].max(1e-12);
        }
        if let Some(w0) = self.w0 {
            for k in 0..self.generators.len() {
                anchor[w0 + k] = anchor[w0 + k].max(1e-12);
            }
        }
        let mut value = -anchor[self.e_col];
        let mut grad: Vec<(usize, f64)> = Vec::new();
        let mut wgrad = vec![0.0; self.generators.len()];
        for &w in &self.support {
            let p = anchor[self.p0 + w];
            let q = self.mixture(&anchor, w).max(1e-300);
            value += p * (p / q).ln() / self.lambda;
            grad.push((self.p0 + w, ((p / q).ln() + 1.0) / self.lambda));
            if self.w0.is_some() {
                for (k, qk) in self.generators.iter().enumerate() {
                    wgrad[k] -= p / q * qk[w] / self.lambda;
                }
            }
        }
        if let Some(w0) = self.w0 {
            for (k, g) in wgrad.into_iter().enumerate() {
                grad.push((w0 + k, g));
            }
        }
        grad.push((self.e_col, -1.0));
        Cut::tangent(&anchor, value, &grad)
    }
    fn name(&self) -> &str {
        "entropy-penalty"
    }
}

// Which acceptance family the dual can encode.
enum DualAcceptance {
    Strict,
    Avar(Vec<(PathVector, f64)>),
    Entropic { lambda: f64, generators: Vec<PathVector> },
}

fn classify_acceptance(acc: &AcceptanceSpec) -> Result<DualAcceptance, EngineError> {
    match acc {
        AcceptanceSpec::Strict => Ok(DualAcceptance::Strict),
        AcceptanceSpec::RobustOce(entries) => {
            let all_avar = entries
                .iter()
                .all(|e| matches!(e.loss, LossFunction::Avar { .. }));
            if all_avar {
                return Ok(DualAcceptance::Avar(
                    entries
                        .iter()
                        .map(|e| {
                            let lambda = match e.loss {
                                LossFunction::Avar { lambda } => lambda,
                                _ => unreachable!(),
                            };
                            (e.measure.clone(), lambda)
                        })
                        .collect(),
                ));
            }
            let all_entropic = entries
                .iter()
                .all(|e| matches!(e.loss, LossFunction::Entropic { .. }));
            if all_entropic {
                let lambdas: Vec<f64> = entries
                    .iter()
                    .map(|e| match e.loss {
                        LossFunction::Entropic { lambda } => lambda,
                        _ => unreachable!(),
                    })
                    .collect();
                if lambdas.windows(2).any(|w| (w[0] - w[1]).abs() > 1e-12) {
                    return Err(EngineError::Unsupported(
                        "entropic dual needs one common aversion level across the family".into(),
                    ));
                }
                return Ok(DualAcceptance::Entropic {
                    lambda: lambdas[0],
                    generators: entries.iter().map(|e| e.measure.clone()).collect(),
                });
            }
            Err(EngineError::Unsupported(
                "dual programs cover strict, average-value-at-risk and entropic acceptance; \
                 mixed or piecewise loss families solve on the hedging side only"
                    .into(),
            ))
        }
    }
}

struct DualAssembly {
    lp: LinearProgram,
    smooth: Vec<Box<dyn ConvexConstraint>>,
    p0: usize,
    penalty_cols: Vec<usize>,
}

/// Build the dual program. `fixed_generator` restricts generators-mode runs
/// to one reference measure.
fn assemble_dual(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &DualAcceptance,
    payoff: &PathVector,
    maximize: bool,
    fixed_generator: Option<usize>,
) -> Result<DualAssembly, EngineError> {
    let num_paths = tree.num_paths();
    let mut bounds: Vec<(f64, f64)> = Vec::new();
    let p0 = 0usize;
    for _ in 0..num_paths {
        bounds.push((0.0, f64::INFINITY));
    }
    let mut rows: Vec<(Vec<(usize, f64)>, Relation, f64)> = Vec::new();
    let mut smooth: Vec<Box<dyn ConvexConstraint>> = Vec::new();
    let mut penalty_cols: Vec<usize> = Vec::new();

    // Total mass one.
    rows.push((
        (0..num_paths).map(|w| (p0 + w, 1.0)).collect(),
        Relation::Eq,
        1.0,
    ));

    // Market conditions per tradeable asset and interior node.
    for (j, policy) in market.assets.iter().enumerate() {
        if !policy.tradeable {
            continue;
        }
        let asset = j + 1;
        let terminal = tree.terminal_discounted(asset)?;
        for &node in tree.non_terminal_nodes() {
            let (lo, hi) = tree.node(node).path_range();
            let s = tree.discounted_price(asset, node)?;
            let numeraire = tree.node(node).numeraire();
            let moment = |scale: f64| -> Vec<(usize, f64)> {
                (lo..hi)
                    .map(|w| (p0 + w, scale * terminal[w]))
                    .collect()
            };
            let with_mass = |mut c: Vec<(usize, f64)>, mass_scale: f64| -> Vec<(usize, f64)> {
                if mass_scale != 0.0 {
                    for w in lo..hi {
                        c.push((p0 + w, mass_scale));
                    }
                }
                merge(c)
            };
            if policy.short_sale_banned {
                // One-step supermartingale row.
                let mut coeffs: Vec<(usize, f64)> = Vec::new();
                for &child in &tree.node(node).children {
                    let (clo, chi) = tree.node(child).path_range();
                    let cs = tree.discounted_price(asset, child)?;
                    for w in clo..chi {
                        coeffs.push((p0 + w, cs));
                    }
                }
                for w in lo..hi {
                    coeffs.push((p0 + w, -s));
                }
                rows.push((merge(coeffs), Relation::Le, 0.0));
                continue;
            }
            if s == 0.0 {
                // Nonnegative moment forced to zero: no revival mass.
                rows.push((moment(1.0), Relation::Le, 0.0));
                continue;
            }
            match market.friction_at(tree, asset, node) {
                f if f.is_zero() => {
                    rows.push((with_mass(moment(1.0), -s), Relation::Eq, 0.0));
                }
                crate::market::Friction::Proportional { epsilon } => {
                    rows.push((
                        with_mass(moment(1.0), -(1.0 + epsilon) * s),
                        Relation::Le,
                        0.0,
                    ));
                    rows.push((
                        with_mass(moment(1.0), -(1.0 - epsilon) * s),
                        Relation::Ge,
                        0.0,
                    ));
                }
                crate::market::Friction::PiecewiseLinear(pw) => {
                    let (slope_lo, slope_hi) = pw.slope_range();
                    rows.push((
                        with_mass(moment(1.0), -(1.0 + slope_hi) * s),
                        Relation::Le,
                        0.0,
                    ));
                    rows.push((
                        with_mass(moment(1.0), -(1.0 + slope_lo) * s),
                        Relation::Ge,
                        0.0,
                    ));
                    if !pw.breakpoints().is_empty() {
                        let pi = bounds.len();
                        bounds.push((0.0, f64::INFINITY));
                        penalty_cols.push(pi);
                        for (&b, &g) in pw.breakpoints().iter().zip(pw.breakpoint_values()) {
                            // pi >= [b (moment - mass s)/s - mass g]/numeraire
                            let mut coeffs = moment(-b / (s * numeraire));
                            for w in lo..hi {
                                coeffs.push((p0 + w, (b + g) / numeraire));
                            }
                            coeffs.push((pi, 1.0));
                            rows.push((merge(coeffs), Relation::Ge, 0.0));
                        }
                    }
                }
                crate::market::Friction::Power { epsilon, exponent } => {
                    let pc = exponent / (exponent - 1.0);
                    let pi = bounds.len();
                    bounds.push((0.0, f64::INFINITY));
                    penalty_cols.push(pi);
                    smooth.push(Box::new(PerspectivePenaltyRow {
                        scale: epsilon.powf(1.0 - pc) / (pc * numeraire * s.powf(pc)),
                        conj_exp: pc,
                        price: s,
                        terminal: (lo..hi).map(|w| terminal[w]).collect(),
                        p0,
                        range: (lo, hi),
                        pi_col: pi,
                    }));
                }
                crate::market::Friction::Zero => unreachable!("matched by is_zero"),
            }
        }
    }

    // Static book.
    for inst in &market.instruments {
        let e_coeffs: Vec<(usize, f64)> = (0..num_paths)
            .map(|w| (p0 + w, inst.payoff[w]))
            .collect();
        if let Some(s) = &inst.superlinear {
            let qc = s.exponent / (s.exponent - 1.0);
            let sigma = bounds.len();
            bounds.push((0.0, f64::INFINITY));
            penalty_cols.push(sigma);
            smooth.push(Box::new(InstrumentPowerPenaltyRow {
                scale: s.delta.powf(1.0 - qc) / qc,
                conj_exp: qc,
                price: inst.bid,
                payoff: inst.payoff.clone(),
                p0,
                sigma_col: sigma,
            }));
            continue;
        }
        // Buy side.
        if inst.ask < f64::INFINITY {
            if inst.max_position == f64::INFINITY {
                rows.push((e_coeffs.clone(), Relation::Le, inst.ask));
            } else if inst.max_position > 0.0 {
                let sigma = bounds.len();
                bounds.push((0.0, f64::INFINITY));
                penalty_cols.push(sigma);
                // sigma >= max_position (E - ask)
                let mut coeffs: Vec<(usize, f64)> = e_coeffs
                    .iter()
                    .map(|&(c, v)| (c, -inst.max_position * v))
                    .collect();
                coeffs.push((sigma, 1.0));
                rows.push((merge(coeffs), Relation::Ge, -inst.max_position * inst.ask));
            }
        }
        // Sell side.
        if inst.bid > f64::NEG_INFINITY {
            if inst.min_position == f64::NEG_INFINITY {
                rows.push((e_coeffs.clone(), Relation::Ge, inst.bid));
            } else if inst.min_position < 0.0 {
                let cap = -inst.min_position;
                let sigma = bounds.len();
                bounds.push((0.0, f64::INFINITY));
                penalty_cols.push(sigma);
                // sigma >= cap (bid - E)
                let mut coeffs: Vec<(usize, f64)> =
                    e_coeffs.iter().map(|&(c, v)| (c, cap * v)).collect();
                coeffs.push((sigma, 1.0));
                rows.push((merge(coeffs), Relation::Ge, cap * inst.bid));
            }
        }
    }

    // Acceptance conditions.
    match acc {
        DualAcceptance::Strict => {}
        DualAcceptance::Avar(entries) => match fixed_generator {
            Some(k) => {
                let (q, lambda) = &entries[k];
                for w in 0..num_paths {
                    rows.push((vec![(p0 + w, 1.0)], Relation::Le, q[w] / lambda));
                }
            }
            None => {
                // Mass decomposition over the generator hull: the measure
                // splits into capped pieces, one per generator, each a
                // scaled probability measure (its total mass is its weight).
                let r0 = bounds.len();
                for _ in 0..entries.len() * num_paths {
                    bounds.push((0.0, f64::INFINITY));
                }
                let v0 = bounds.len();
                for _ in 0..entries.len() {
                    bounds.push((0.0, f64::INFINITY));
                }
                rows.push((
                    (0..entries.len()).map(|k| (v0 + k, 1.0)).collect(),
                    Relation::Eq,
                    1.0,
                ));
                for w in 0..num_paths {
                    let mut coeffs = vec![(p0 + w, 1.0)];
                    for k in 0..entries.len() {
                        coeffs.push((r0 + k * num_paths + w, -1.0));
                    }
                    rows.push((coeffs, Relation::Eq, 0.0));
                }
                for (k, (q, lambda)) in entries.iter().enumerate() {
                    let mut mass_row: Vec<(usize, f64)> = (0..num_paths)
                        .map(|w| (r0 + k * num_paths + w, 1.0))
                        .collect();
                    mass_row.push((v0 + k, -1.0));
                    rows.push((mass_row, Relation::Eq, 0.0));
                    for w in 0..num_paths {
                        rows.push((
                            vec![(r0 + k * num_paths + w, 1.0), (v0 + k, -q[w] / lambda)],
                            Relation::Le,
                            0.0,
                        ));
                    }
                }
            }
        },
        DualAcceptance::Entropic { lambda, generators } => {
            let gens = Arc::new(match fixed_generator {
                Some(k) => vec![generators[k].clone()],
                None => generators.clone(),
            });
            let support: Vec<usize> = (0..num_paths)
                .filter(|&w| gens.iter().any(|q| q[w] > 0.0))
                .collect();
            for w in 0..num_paths {
                if !support.contains(&w) {
                    bounds[p0 + w] = (0.0, 0.0);
                }
            }
            let w0 = if gens.len() > 1 {
                let w0 = bounds.len();
                for _ in 0..gens.len() {
                    bounds.push((0.0, f64::INFINITY));
                }
                rows.push((
                    (0..gens.len()).map(|k| (w0 + k, 1.0)).collect(),
                    Relation::Eq,
                    1.0,
                ));
                Some(w0)
            } else {
                None
            };
            let e_col = bounds.len();
            bounds.push((0.0, f64::INFINITY));
            penalty_cols.push(e_col);
            smooth.push(Box::new(EntropyPenaltyRow {
                lambda: *lambda,
                fixed: if w0.is_none() { Some(0) } else { None },
                generators: gens,
                support,
                p0,
                w0,
                e_col,
            }));
        }
    }

    let sense = if maximize { Sense::Maximize } else { Sense::Minimize };
    let mut lp = LinearProgram::new(sense, bounds.len());
    lp.bounds = bounds;
    for w in 0..num_paths {
        lp.objective[p0 + w] = payoff[w];
    }
    let penalty_sign = if maximize { -1.0 } else { 1.0 };
    for &c in &penalty_cols {
        lp.objective[c] = penalty_sign;
    }
    for (coeffs, relation, rhs) in rows {
        lp.add_row(coeffs, relation, rhs);
    }
    Ok(DualAssembly {
        lp,
        smooth,
        p0,
        penalty_cols,
    })
}

fn merge(mut coeffs: Vec<(usize, f64)>) -> Vec<(usize, f64)> {
    coeffs.sort_by_key(|&(j, _)| j);
    let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
    for (j, a) in coeffs {
        match merged.last_mut() {
            Some(last) if last.0 == j => last.1 += a,
            _ => merged.push((j, a)),
        }
    }
    merged.retain(|&(_, a)| a != 0.0);
    merged
}

fn solve_one_dual(
    assembly: DualAssembly,
    num_paths: usize,
    tol: f64,
) -> Result<Option<(f64, PathVector, f64)>, EngineError> {
    let DualAssembly {
        lp,
        smooth,
        p0,
        penalty_cols,
    } = assembly;
    let out = if smooth.is_empty() {
        solve_lp(&lp, tol)?
    } else {
        let cp = ConvexProgram {
            core: lp,
            constraints: smooth,
            trust_box: None,
        };
        let convex_tol = tol.max(crate::solver::DEFAULT_CONVEX_TOL);
        solve_convex(&cp, convex_tol, DEFAULT_CONVEX_ITERS)?
    };
    match out.status {
        SolveStatus::Optimal => {
            let x = out.point.expect("optimal point");
            let value = out.value.expect("optimal value");
            let penalty: f64 = penalty_cols.iter().map(|&c| x[c]).sum();
            let probs = PathVector::new(x[p0..p0 + num_paths].to_vec());
            Ok(Some((value, probs, penalty)))
        }
        SolveStatus::Infeasible => Ok(None),
        SolveStatus::Unbounded => Err(EngineError::Internal(
            "dual program cannot be unbounded over a probability simplex".into(),
        )),
        SolveStatus::IterLimit => Err(EngineError::Internal(
            "dual solve hit the iteration limit".into(),
        )),
    }
}

fn run_dual(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
    tol: f64,
    qmode: QMode,
    maximize: bool,
) -> Result<DualOutcome, EngineError> {
    market.validate(tree)?;
    acc.validate(tree.num_paths())?;
    let classified = classify_acceptance(acc)?;
    let num_paths = tree.num_paths();

    let runs: Vec<Option<usize>> = match (&classified, qmode) {
        (DualAcceptance::Strict, _) => vec![None],
        (_, QMode::Hull) => vec![None],
        (DualAcceptance::Avar(entries), QMode::Generators) => {
            (0..entries.len()).map(Some).collect()
        }
        (DualAcceptance::Entropic { generators, .. }, QMode::Generators) => {
            (0..generators.len()).map(Some).collect()
        }
    };

    let mut best: Option<(f64, PathVector, f64)> = None;
    for fixed in runs {
        let assembly = assemble_dual(tree, market, &classified, payoff, maximize, fixed)?;
        if let Some((value, probs, penalty)) = solve_one_dual(assembly, num_paths, tol)? {
            let better = match &best {
                None => true,
                Some((v, _, _)) => {
                    if maximize {
                        value > *v
                    } else {
                        value < *v
                    }
                }
            };
            if better {
                best = Some((value, probs, penalty));
            }
        }
    }

    match best {
        Some((value, probabilities, penalty)) => {
            let residuals = measure_residuals(tree, market, acc, &probabilities, qmode)?;
            Ok(DualOutcome {
                value,
                measure: Some(GeneralizedMartingaleMeasure {
                    probabilities,
                    penalty,
                    residuals,
                }),
                empty_feasible_set: false,
            })
        }
        None => {
            Ok(DualOutcome {
                value: if maximize {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                },
                measure: None,
                empty_feasible_set: true,
            })
        }
    }
}

/// Upper price as an expectation: maximize `E_P[payoff] - penalty(P)`.
pub fn dual_superhedge(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
    tol: f64,
    qmode: QMode,
) -> Result<DualOutcome, EngineError> {
    run_dual(tree, market, acc, payoff, tol, qmode, true)
}

/// Lower price as an expectation: minimize `E_P[payoff] + penalty(P)`.
pub fn dual_subhedge(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
    tol: f64,
    qmode: QMode,
) -> Result<DualOutcome, EngineError> {
    run_dual(tree, market, acc, payoff, tol, qmode, false)
}

// ---------------------------------------------------------------------------
// Residual verification.

/// Re-check every defining condition of the admissible measure set directly
/// from the definitions (masses, moments, expectations), independent of the
/// solved program.
pub fn measure_residuals(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    p: &PathVector,
    qmode: QMode,
) -> Result<MeasureResiduals, EngineError> {
    let mut conditions = Vec::new();
    conditions.push(ConditionResidual {
        label: "mass=1".into(),
        slack: -(p.sum() - 1.0).abs(),
    });
    conditions.push(ConditionResidual {
        label: "mass>=0".into(),
        slack: p.min(),
    });

    for (j, policy) in market.assets.iter().enumerate() {
        if !policy.tradeable {
            continue;
        }
        let asset = j + 1;
        let terminal = tree.terminal_discounted(asset)?;
        for &node in tree.non_terminal_nodes() {
            let (mass, moment) = tree.node_mass_and_cond_expectation(p, &terminal, node)?;
            let s = tree.discounted_price(asset, node)?;
            let id = tree.node(node).spec_id;
            if policy.short_sale_banned {
                let mut step = 0.0;
                for &c in &tree.node(node).children {
                    let (cm, _) = tree.node_mass_and_cond_expectation(p, &terminal, c)?;
                    step += cm * tree.discounted_price(asset, c)?;
                }
                conditions.push(ConditionResidual {
                    label: format!("supermartingale[a{asset},n{id}]"),
                    slack: s * mass - step,
                });
                continue;
            }
            if s == 0.0 {
                conditions.push(ConditionResidual {
                    label: format!("no_revival[a{asset},n{id}]"),
                    slack: -moment,
                });
                continue;
            }
            match market.friction_at(tree, asset, node) {
                f if f.is_zero() => {
                    conditions.push(ConditionResidual {
                        label: format!("martingale[a{asset},n{id}]"),
                        slack: -(moment - s * mass).abs(),
                    });
                }
                crate::market::Friction::Proportional { epsilon } => {
                    conditions.push(ConditionResidual {
                        label: format!("band_hi[a{asset},n{id}]"),
                        slack: (1.0 + epsilon) * s * mass - moment,
                    });
                    conditions.push(ConditionResidual {
                        label: format!("band_lo[a{asset},n{id}]"),
                        slack: moment - (1.0 - epsilon) * s * mass,
                    });
                }
                crate::market::Friction::PiecewiseLinear(pw) => {
                    let (slope_lo, slope_hi) = pw.slope_range();
                    conditions.push(ConditionResidual {
                        label: format!("band_hi[a{asset},n{id}]"),
                        slack: (1.0 + slope_hi) * s * mass - moment,
                    });
                    conditions.push(ConditionResidual {
                        label: format!("band_lo[a{asset},n{id}]"),
                        slack: moment - (1.0 + slope_lo) * s * mass,
                    });
                }
                crate::market::Friction::Power { .. } => {
                    // Penalized, not constrained: nothing to check here.
                }
                crate::market::Friction::Zero => unreachable!(),
            }
        }
    }

    for inst in &market.instruments {
        let expectation = p.dot(&inst.payoff);
        if inst.superlinear.is_some() {
            continue; // penalized
        }
        if inst.ask < f64::INFINITY && inst.max_position == f64::INFINITY {
            conditions.push(ConditionResidual {
                label: format!("ask[{}]", inst.name),
                slack: inst.ask - expectation,
            });
        }
        if inst.bid > f64::NEG_INFINITY && inst.min_position == f64::NEG_INFINITY {
            conditions.push(ConditionResidual {
                label: format!("bid[{}]", inst.name),
                slack: expectation - inst.bid,
            });
        }
    }

    match classify_acceptance(acc) {
        Ok(DualAcceptance::Strict) => {}
        Ok(DualAcceptance::Avar(entries)) => {
            conditions.push(ConditionResidual {
                label: "density_cap".into(),
                slack: -avar_cap_gap(&entries, p, qmode)?,
            });
        }
        Ok(DualAcceptance::Entropic { lambda, generators }) => {
            let penalty = entropy_penalty(&generators, lambda, p, qmode)?;
            conditions.push(ConditionResidual {
                label: "entropy_finite".into(),
                slack: if penalty.is_finite() { 0.0 } else { f64::NEG_INFINITY },
            });
        }
        Err(_) => {}
    }

    Ok(MeasureResiduals { conditions })
}

/// Worst violation of the density caps: max over paths of the excess of p
/// over the best admissible mixture cap (negative when inside).
pub fn avar_cap_gap(
    entries: &[(PathVector, f64)],
    p: &PathVector,
    qmode: QMode,
) -> Result<f64, EngineError> {
    let num_paths = p.len();
    match qmode {
        QMode::Generators => {
            let mut best = f64::INFINITY;
            for (q, lambda) in entries {
                let mut worst = f64::NEG_INFINITY;
                for w in 0..num_paths {
                    worst = worst.max(p[w] - q[w] / lambda);
                }
                best = best.min(worst);
            }
            Ok(best)
        }
        QMode::Hull => {
            // min t over mass splittings: p = sum of capped pieces, each a
            // scaled probability measure carrying exactly its weight.
            let k = entries.len();
            let mut lp = LinearProgram::new(Sense::Minimize, 1 + k * num_paths + k);
            lp.objective[0] = 1.0;
            for (kk, (q, lambda)) in entries.iter().enumerate() {
                for w in 0..num_paths {
                    let r = 1 + kk * num_paths + w;
                    lp.bounds[r] = (0.0, f64::INFINITY);
                    // r_k(w) <= v_k q_k(w)/lambda_k + t
                    lp.add_row(
                        vec![(r, 1.0), (1 + k * num_paths + kk, -q[w] / lambda), (0, -1.0)],
                        Relation::Le,
                        0.0,
                    );
                }
                lp.bounds[1 + k * num_paths + kk] = (0.0, f64::INFINITY);
                let mut mass_row: Vec<(usize, f64)> = (0..num_paths)
                    .map(|w| (1 + kk * num_paths + w, 1.0))
                    .collect();
                mass_row.push((1 + k * num_paths + kk, -1.0));
                lp.add_row(mass_row, Relation::Eq, 0.0);
            }
            lp.add_row(
                (0..k).map(|kk| (1 + k * num_paths + kk, 1.0)).collect(),
                Relation::Eq,
                1.0,
            );
            for w in 0..num_paths {
                lp.add_row(
                    (0..k)
                        .map(|kk| (1 + kk * num_paths + w, 1.0))
                        .collect(),
                    Relation::Eq,
                    p[w],
                );
            }
            let out = solve_lp(&lp, 1e-10)?;
            match out.status {
                SolveStatus::Optimal => Ok(out.value.unwrap()),
                _ => Ok(f64::INFINITY),
            }
        }
    }
}

/// Relative entropy of p with respect to the best mixture of generators,
/// divided by the aversion level; +infinity without absolute continuity.
pub fn entropy_penalty(
    generators: &[PathVector],
    lambda: f64,
    p: &PathVector,
    qmode: QMode,
) -> Result<f64, EngineError> {
    let single = |q: &PathVector| -> f64 {
        let mut rel_ent = 0.0;
        for w in 0..p.len() {
            if p[w] > 0.0 {
                if q[w] <= 0.0 {
                    return f64::INFINITY;
                }
                rel_ent += p[w] * (p[w] / q[w]).ln();
            }
        }
        rel_ent / lambda
    };
    match qmode {
        QMode::Generators => Ok(generators
            .iter()
            .map(single)
            .fold(f64::INFINITY, f64::min)),
        QMode::Hull => {
            if generators.len() == 1 {
                return Ok(single(&generators[0]));
            }
            // Minimize over mixture weights with the cutting-plane kernel.
            let k = generators.len();
            let mut core = LinearProgram::new(Sense::Minimize, k + 1);
            for kk in 0..k {
                core.bounds[kk] = (0.0, 1.0);
            }
            core.bounds[k] = (0.0, f64::INFINITY);
            core.objective[k] = 1.0;
            core.add_row((0..k).map(|kk| (kk, 1.0)).collect(), Relation::Eq, 1.0);
            let gens: Vec<PathVector> = generators.to_vec();
            let p_fixed = p.clone();
            struct WeightEntropy {
                gens: Vec<PathVector>,
                p: PathVector,
                lambda: f64,
            }
            impl ConvexConstraint for WeightEntropy {
                fn value(&self, x: &[f64]) -> f64 {
                    let k = self.gens.len();
                    let mut rel = 0.0;
                    for w in 0..self.p.len() {
                        if self.p[w] > 0.0 {
                            let q: f64 =
                                (0..k).map(|kk| x[kk] * self.gens[kk][w]).sum();
                            if q <= 0.0 {
                                return f64::INFINITY;
                            }
                            rel += self.p[w] * (self.p[w] / q).ln();
                        }
                    }
                    rel / self.lambda - x[k]
                }
                fn cut_at(&self, x: &[f64]) -> Cut {
                    let k = self.gens.len();
                    let mut anchor = x.to_vec();
                    for kk in 0..k {
                        anchor[kk] = anchor[kk].max(1e-12);
                    }
                    let mut value = -anchor[k];
                    let mut grad = vec![0.0; k];
                    for w in 0..self.p.len() {
                        if self.p[w] > 0.0 {
                            let q: f64 = (0..k)
                                .map(|kk| anchor[kk] * self.gens[kk][w])
                                .sum::<f64>()
                                .max(1e-300);
                            value += self.p[w] * (self.p[w] / q).ln() / self.lambda;
                            for kk in 0..k {
                                grad[kk] -= self.p[w] / q * self.gens[kk][w] / self.lambda;
                            }
                        }
                    }
                    let mut coeffs: Vec<(usize, f64)> =
                        grad.into_iter().enumerate().collect();
                    coeffs.push((k, -1.0));
                    Cut::tangent(&anchor, value, &coeffs)
                }
                fn name(&self) -> &str {
                    "weight-entropy"
                }
            }
            let cp = ConvexProgram {
                core,
                constraints: vec![Box::new(WeightEntropy {
                    gens,
                    p: p_fixed,
                    lambda,
                })],
                trust_box: None,
            };
            let out = solve_convex(&cp, 1e-9, DEFAULT_CONVEX_ITERS)?;
            match out.status {
                SolveStatus::Optimal => Ok(out.value.unwrap()),
                SolveStatus::Infeasible => Ok(f64::INFINITY),
                _ => Ok(f64::INFINITY),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Arbitrage verdict.

/// Decide arbitrage by maximizing the uniform excess a zero-capital
/// strategy can keep above the acceptance set, then certify the verdict:
/// an explicit strategy with positive margin, or a zero-penalty measure.
pub fn ftap_check(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    tol: f64,
) -> Result<FtapVerdict, EngineError> {
    let zero = PathVector::zeros(tree.num_paths());
    let hedge = superhedge(tree, market, acc, &zero, tol)?;
    let candidate = match hedge.status {
        HedgeStatus::Optimal => hedge.price < -tol,
        HedgeStatus::Unbounded => true,
        HedgeStatus::IterLimit => {
            return Err(EngineError::Internal(
                "arbitrage program hit the iteration limit".into(),
            ))
        }
    };
    if candidate {
        let strategy = hedge.strategy.ok_or_else(|| {
            EngineError::Internal("arbitrage verdict without a witness strategy".into())
        })?;
        let outcome = gains(tree, market, &strategy)?;
        let margin = -acc.worst_violation(&outcome)?;
        if margin > tol {
            return Ok(FtapVerdict::Arbitrage {
                strategy,
                outcome,
                margin,
            });
        }
        if hedge.status == HedgeStatus::Unbounded {
            return Err(EngineError::Internal(format!(
                "unbounded arbitrage program but the witness margin is only {margin}"
            )));
        }
        // A hair-thin optimum inside the tolerance band does not certify;
        // fall through and let the measure side decide.
    }
    let dual = dual_superhedge(tree, market, acc, &zero, tol, QMode::Hull)?;
    match dual.measure {
        Some(measure) => {
            if dual.value.abs() > 100.0 * tol.max(1e-12) {
                return Err(EngineError::Internal(format!(
                    "no-arbitrage dual value {} should vanish",
                    dual.value
                )));
            }
            Ok(FtapVerdict::NoArbitrage { measure })
        }
        None => Err(EngineError::Internal(
            "hedging reports no arbitrage but the dual set is empty".into(),
        )),
    }
}

// ---------------------------------------------------------------------------
// Call strips and marginal constraints.

/// One quoted call strike.
#[derive(Debug, Clone, Copy)]
pub struct CallQuote {
    pub strike: f64,
    pub bid: f64,
    pub ask: f64,
}

/// Instruments whose expectations band (or, with bid = ask at every traded
/// price level, pin) the marginal law of a discounted asset price at one
/// date. With a strike at every distinct tree value and matching quotes,
/// any admissible measure carries exactly one marginal there.
pub fn marginal_constraints_from_calls(
    tree: &ScenarioTree,
    asset: usize,
    time: usize,
    quotes: &[CallQuote],
) -> Result<Vec<StaticInstrument>, EngineError> {
    let underlying = tree.discounted_at_depth(asset, time)?;
    let mut out = Vec::with_capacity(quotes.len());
    for quote in quotes {
        if quote.bid > quote.ask {
            return Err(EngineError::Market(
                crate::market::MarketError::CrossedQuotes(format!(
                    "call[a{asset},t{time},k{}]",
                    quote.strike
                )),
            ));
        }
        let payoff: PathVector = underlying
            .iter()
            .map(|&s| (s - quote.strike).max(0.0))
            .collect();
        out.push(StaticInstrument::quoted(
            format!("call[a{asset},t{time},k{}]", quote.strike),
            payoff,
            quote.bid,
            quote.ask,
        ));
    }
    Ok(out)
}
