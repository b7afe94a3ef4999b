//! The hedging side: least capital `m` such that `m - X` plus an attainable
//! gain is acceptable (upper price), and its mirror image (lower price).
//! Linear markets and acceptance sets assemble to a single linear program;
//! power frictions, superlinear instrument costs and entropic constraints
//! contribute smooth rows solved by the cutting-plane kernel.

use std::sync::Arc;

use crate::acceptance::{acceptance_epigraph, AcceptanceSpec, SmoothAcceptanceRow};
use crate::error::EngineError;
use crate::market::{gains, Friction, MarketSpec, Strategy};
use crate::solver::{
    solve_convex, solve_lp, ConvexConstraint, ConvexProgram, Cut, LinearProgram, Relation, Sense,
    SolveStatus, DEFAULT_CONVEX_ITERS,
};
use crate::tree::{PathVector, ScenarioTree};

/// Box applied to strategy variables only to extract a witness when the
/// hedging program is unbounded (an arbitrage), never to clip prices.
const ARBITRAGE_WITNESS_BOX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HedgeStatus {
    Optimal,
    /// The program improves without bound: the market admits an arbitrage
    /// (or good deal) in the acceptance sense. `strategy` holds a boxed
    /// witness when one could be extracted.
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct HedgeResult {
    /// The optimal capital; signed infinity when unbounded.
    pub price: f64,
    pub status: HedgeStatus,
    pub strategy: Option<Strategy>,
    /// Realized position `price - payoff + gains`, re-evaluated through the
    /// market module rather than read off solver slacks.
    pub residual: Option<PathVector>,
    /// Acceptance violation of the residual (worst risk value or worst
    /// shortfall); near zero certifies feasibility independently.
    pub max_violation: Option<f64>,
    pub tol: f64,
}

// Column layout of the hedging program.
pub(crate) struct Layout {
    pub num_vars: usize,
    pub m: usize,
    /// theta_cols[asset-1][non-terminal rank] (empty for untradeable assets).
    pub theta_cols: Vec<Vec<usize>>,
    pub instruments: Vec<InstrCols>,
}

pub(crate) enum InstrCols {
    Quoted { plus: usize, minus: usize },
    Superlinear { net: usize, slack: usize },
}

/// Affine map from program variables to per-path positions.
pub(crate) struct PositionMap {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub consts: Vec<f64>,
}

impl PositionMap {
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .zip(self.consts.iter())
            .map(|(row, c)| c + row.iter().map(|&(j, a)| a * x[j]).sum::<f64>())
            .collect()
    }
}

pub(crate) struct Assembled {
    pub lp: LinearProgram,
    pub smooth: Vec<Box<dyn ConvexConstraint>>,
    pub layout: Layout,
}

struct PowerCostRow {
    scale: f64,      // epsilon / (p * numeraire)
    exponent: f64,
    trade_scale: f64, // nominal price at the trading node
    col_here: usize,
    col_parent: Option<usize>,
    slack: usize,
}

impl ConvexConstraint for PowerCostRow {
    fn value(&self, x: &[f64]) -> f64 {
        let delta = x[self.col_here] - self.col_parent.map(|c| x[c]).unwrap_or(0.0);
        let u = self.trade_scale * delta;
        self.scale * u.abs().powf(self.exponent) - x[self.slack]
    }
    fn cut_at(&self, x: &[f64]) -> Cut {
        let delta = x[self.col_here] - self.col_parent.map(|c| x[c]).unwrap_or(0.0);
        let u = self.trade_scale * delta;
        let d_here =
            self.scale * self.exponent * u.abs().powf(self.exponent - 1.0) * u.signum()
                * self.trade_scale;
        let mut grad = vec![(self.col_here, d_here), (self.slack, -1.0)];
        if let Some(c) = self.col_parent {
            grad.push((c, -d_here));
        }
        Cut::tangent(x, self.value(x), &grad)
    }
    fn name(&self) -> &str {
        "power-friction"
    }
}

struct SuperlinearCostRow {
    delta: f64,
    exponent: f64,
    net: usize,
    slack: usize,
}

impl ConvexConstraint for SuperlinearCostRow {
    fn value(&self, x: &[f64]) -> f64 {
        self.delta / self.exponent * x[self.net].abs().powf(self.exponent) - x[self.slack]
    }
    fn cut_at(&self, x: &[f64]) -> Cut {
        let u = x[self.net];
        let d = self.delta * u.abs().powf(self.exponent - 1.0) * u.signum();
        Cut::tangent(x, self.value(x), &[(self.net, d), (self.slack, -1.0)])
    }
    fn name(&self) -> &str {
        "superlinear-cost"
    }
}

struct EntropicPositionConstraint {
    row: SmoothAcceptanceRow,
    positions: Arc<PositionMap>,
}

impl EntropicPositionConstraint {
    fn chain(&self, x: &[f64]) -> (f64, Vec<(usize, f64)>) {
        let y = self.positions.eval(x);
        let (value, grad_y) = self.row.value_and_grad(&y);
        let mut grad: std::collections::BTreeMap<usize, f64> = Default::default();
        for (omega, row) in self.positions.rows.iter().enumerate() {
            let gy = grad_y[omega];
            if gy != 0.0 {
                for &(j, a) in row {
                    *grad.entry(j).or_insert(0.0) += gy * a;
                }
            }
        }
        (value, grad.into_iter().collect())
    }
}

impl ConvexConstraint for EntropicPositionConstraint {
    fn value(&self, x: &[f64]) -> f64 {
        let y = self.positions.eval(x);
        self.row.value_and_grad(&y).0
    }
    fn cut_at(&self, x: &[f64]) -> Cut {
        let (value, grad) = self.chain(x);
        Cut::tangent(x, value, &grad)
    }
    fn name(&self) -> &str {
        "entropic-acceptance"
    }
}

// The transformed-loss programs with exponential tails are unbounded below
// exactly when some admissible direction earns strictly positive recession
// gains on every path charged by some reference measure: scaling such a
// direction drives every risk constraint to minus infinity. The recession
// cost of a piecewise cost is its asymptotic slope pair, so the test is one
// small linear program.
fn entropic_ray(
    tree: &ScenarioTree,
    market: &MarketSpec,
    support: &[bool],
    tol: f64,
) -> Result<Option<Strategy>, EngineError> {
    let nt = tree.num_non_terminal();
    let mut bounds: Vec<(f64, f64)> = vec![(0.0, 1.0)]; // delta
    let delta = 0usize;
    let mut theta_cols: Vec<Vec<usize>> = Vec::new();
    for policy in &market.assets {
        if !policy.tradeable {
            theta_cols.push(Vec::new());
            continue;
        }
        let lo = if policy.short_sale_banned { 0.0 } else { f64::NEG_INFINITY };
        theta_cols.push(
            (0..nt)
                .map(|_| {
                    bounds.push((lo, f64::INFINITY));
                    bounds.len() - 1
                })
                .collect(),
        );
    }
    let mut instr_cols: Vec<(Option<usize>, Option<usize>)> = Vec::new();
    for inst in &market.instruments {
        // Only unbounded linear legs can carry a ray.
        let plus = (inst.superlinear.is_none()
            && inst.ask < f64::INFINITY
            && inst.max_position == f64::INFINITY)
            .then(|| {
                bounds.push((0.0, f64::INFINITY));
                bounds.len() - 1
            });
        let minus = (inst.superlinear.is_none()
            && inst.bid > f64::NEG_INFINITY
            && inst.min_position == f64::NEG_INFINITY)
            .then(|| {
                bounds.push((0.0, f64::INFINITY));
                bounds.len() - 1
            });
        instr_cols.push((plus, minus));
    }
    let mut fric_cols: Vec<Vec<Option<usize>>> = vec![vec![None; nt]; tree.num_assets()];
    for (j, policy) in market.assets.iter().enumerate() {
        if !policy.tradeable {
            continue;
        }
        for (rank, &node) in tree.non_terminal_nodes().iter().enumerate() {
            if !market.friction_at(tree, j + 1, node).is_zero() {
                bounds.push((0.0, f64::INFINITY));
                fric_cols[j][rank] = Some(bounds.len() - 1);
            }
        }
    }

    let mut lp = LinearProgram::new(Sense::Maximize, bounds.len());
    lp.bounds = bounds;
    lp.objective[delta] = 1.0;

    for (j, policy) in market.assets.iter().enumerate() {
        if !policy.tradeable {
            continue;
        }
        let asset = j + 1;
        for (rank, &node) in tree.non_terminal_nodes().iter().enumerate() {
            let slack = match fric_cols[j][rank] {
                Some(c) => c,
                None => continue,
            };
            let n = tree.node(node);
            let scale = n.prices[asset] / n.numeraire();
            let here = theta_cols[j][rank];
            let parent = n
                .parent
                .and_then(|p| tree.non_terminal_rank(p))
                .map(|r| theta_cols[j][r]);
            let (slope_lo, slope_hi) = match market.friction_at(tree, asset, node) {
                Friction::Proportional { epsilon } => (-epsilon, epsilon),
                Friction::PiecewiseLinear(pw) => pw.slope_range(),
                Friction::Power { .. } => {
                    // Superlinear recession cost: the ray cannot trade here.
                    let mut coeffs = vec![(here, 1.0)];
                    if let Some(p) = parent {
                        coeffs.push((p, -1.0));
                    }
                    lp.add_row(coeffs, Relation::Eq, 0.0);
                    continue;
                }
                Friction::Zero => unreachable!(),
            };
            for s in [slope_lo, slope_hi] {
                let k = s * scale;
                let mut coeffs = vec![(slack, 1.0), (here, -k)];
                if let Some(p) = parent {
                    coeffs.push((p, k));
                }
                lp.add_row(coeffs, Relation::Ge, 0.0);
            }
        }
    }

    for (path, &charged) in support.iter().enumerate() {
        if !charged {
            continue;
        }
        let chain = tree.path_nodes(path);
        let mut coeffs: Vec<(usize, f64)> = vec![(delta, -1.0)];
        for (j, policy) in market.assets.iter().enumerate() {
            if !policy.tradeable {
                continue;
            }
            let asset = j + 1;
            for t in 0..tree.horizon() {
                let here = chain[t];
                let rank = tree.non_terminal_rank(here).expect("interior");
                let s_here = tree.discounted_price(asset, here).expect("validated");
                let s_next = tree.discounted_price(asset, chain[t + 1]).expect("validated");
                coeffs.push((theta_cols[j][rank], s_next - s_here));
                if let Some(c) = fric_cols[j][rank] {
                    coeffs.push((c, -1.0));
                }
            }
        }
        for (i, inst) in market.instruments.iter().enumerate() {
            let h = inst.payoff[path];
            if let Some(plus) = instr_cols[i].0 {
                coeffs.push((plus, h - inst.ask));
            }
            if let Some(minus) = instr_cols[i].1 {
                coeffs.push((minus, -h + inst.bid));
            }
        }
        lp.add_row(coeffs, Relation::Ge, 0.0);
    }

    let out = solve_lp(&lp, tol)?;
    if out.status != SolveStatus::Optimal {
        return Err(EngineError::Internal(format!(
            "recession ray program ended {:?}",
            out.status
        )));
    }
    if out.value.unwrap_or(0.0) <= tol.max(1e-9) {
        return Ok(None);
    }
    let x = out.point.expect("optimal point");
    let scale = ARBITRAGE_WITNESS_BOX
        / x.iter()
            .fold(1.0f64, |a, v| a.max(v.abs()));
    let mut strategy = Strategy::zeros(tree, market);
    for (j, cols) in theta_cols.iter().enumerate() {
        for (rank, &col) in cols.iter().enumerate() {
            strategy.dynamic[j * nt + rank] = scale * x[col];
        }
    }
    for (i, (plus, minus)) in instr_cols.iter().enumerate() {
        if let Some(p) = plus {
            strategy.theta_plus[i] = scale * x[*p];
        }
        if let Some(m) = minus {
            strategy.theta_minus[i] = scale * x[*m];
        }
    }
    Ok(Some(strategy))
}

fn validated(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
) -> Result<(), EngineError> {
    market.validate(tree)?;
    acc.validate(tree.num_paths())?;
    if payoff.len() != tree.num_paths() {
        return Err(EngineError::Internal(format!(
            "payoff has {} entries, tree has {} paths",
            payoff.len(),
            tree.num_paths()
        )));
    }
    if market.needs_convex_solver() && acc.needs_convex_solver() {
        return Err(EngineError::Unsupported(
            "power frictions or superlinear instrument costs cannot be combined with \
             entropic acceptance; use proportional or piecewise-linear costs there"
                .into(),
        ));
    }
    Ok(())
}

/// Build the program: minimize m subject to acceptance of
/// `m - payoff + gains(strategy)`.
pub(crate) fn assemble(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
) -> Result<Assembled, EngineError> {
    let nt = tree.num_non_terminal();
    let num_paths = tree.num_paths();

    let mut bounds: Vec<(f64, f64)> = Vec::new();
    let push_var = |bounds: &mut Vec<(f64, f64)>, b: (f64, f64)| -> usize {
        bounds.push(b);
        bounds.len() - 1
    };

    let m_col = push_var(&mut bounds, (f64::NEG_INFINITY, f64::INFINITY));

    let mut theta_cols: Vec<Vec<usize>> = Vec::with_capacity(tree.num_assets());
    for policy in &market.assets {
        if !policy.tradeable {
            theta_cols.push(Vec::new());
            continue;
        }
        let lo = if policy.short_sale_banned { 0.0 } else { f64::NEG_INFINITY };
        theta_cols.push(
            (0..nt)
                .map(|_| push_var(&mut bounds, (lo, f64::INFINITY)))
                .collect(),
        );
    }

    let mut instruments = Vec::with_capacity(market.instruments.len());
    for inst in &market.instruments {
        if inst.superlinear.is_some() {
            let net = push_var(&mut bounds, (inst.min_position, inst.max_position));
            let slack = push_var(&mut bounds, (0.0, f64::INFINITY));
            instruments.push(InstrCols::Superlinear { net, slack });
        } else {
            let plus_cap = if inst.ask == f64::INFINITY { 0.0 } else { inst.max_position };
            let minus_cap = if inst.bid == f64::NEG_INFINITY { 0.0 } else { -inst.min_position };
            let plus = push_var(&mut bounds, (0.0, plus_cap));
            let minus = push_var(&mut bounds, (0.0, minus_cap));
            instruments.push(InstrCols::Quoted { plus, minus });
        }
    }

    let mut fric_cols: Vec<Vec<Option<usize>>> = vec![vec![None; nt]; tree.num_assets()];
    for (j, policy) in market.assets.iter().enumerate() {
        if !policy.tradeable {
            continue;
        }
        let asset = j + 1;
        for (rank, &node) in tree.non_terminal_nodes().iter().enumerate() {
            let friction = market.friction_at(tree, asset, node);
            if friction.is_zero() {
                continue;
            }
            // Piecewise rebates can push the cost negative; others cannot.
            let lo = match friction {
                Friction::PiecewiseLinear(_) => f64::NEG_INFINITY,
                _ => 0.0,
            };
            fric_cols[j][rank] = Some(push_var(&mut bounds, (lo, f64::INFINITY)));
        }
    }

    let blocks = acceptance_epigraph(acc, num_paths)?;
    let acc_aux0 = bounds.len();
    for &b in &blocks.aux_bounds {
        push_var(&mut bounds, b);
    }

    let num_vars = bounds.len();
    let mut lp = LinearProgram::new(Sense::Minimize, num_vars);
    lp.bounds = bounds;
    lp.objective[m_col] = 1.0;

    // Per-path position expressions Y(w) = m - X(w) + gains(w).
    let mut pos_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(num_paths);
    let mut pos_consts: Vec<f64> = Vec::with_capacity(num_paths);
    for path in 0..num_paths {
        let chain = tree.path_nodes(path);
        let mut row: Vec<(usize, f64)> = vec![(m_col, 1.0)];
        for (j, policy) in market.assets.iter().enumerate() {
            if !policy.tradeable {
                continue;
            }
            let asset = j + 1;
            for t in 0..tree.horizon() {
                let here = chain[t];
                let next = chain[t + 1];
                let rank = tree.non_terminal_rank(here).expect("interior node");
                let s_here = tree.discounted_price(asset, here).expect("validated");
                let s_next = tree.discounted_price(asset, next).expect("validated");
                row.push((theta_cols[j][rank], s_next - s_here));
                if let Some(c) = fric_cols[j][rank] {
                    row.push((c, -1.0));
                }
            }
        }
        for (i, inst) in market.instruments.iter().enumerate() {
            let h = inst.payoff[path];
            match instruments[i] {
                InstrCols::Quoted { plus, minus } => {
                    if inst.ask != f64::INFINITY {
                        row.push((plus, h - inst.ask));
                    }
                    if inst.bid != f64::NEG_INFINITY {
                        row.push((minus, -h + inst.bid));
                    }
                }
                InstrCols::Superlinear { net, slack } => {
                    row.push((net, h - inst.bid));
                    row.push((slack, -1.0));
                }
            }
        }
        // Merge duplicate columns (a friction column repeats across periods
        // only once per path, but theta columns never repeat; merging keeps
        // the rows canonical anyway).
        row.sort_by_key(|&(j, _)| j);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for (j, a) in row {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => merged.push((j, a)),
            }
        }
        pos_rows.push(merged);
        pos_consts.push(-payoff[path]);
    }
    let positions = Arc::new(PositionMap {
        rows: pos_rows,
        consts: pos_consts,
    });

    // Linear friction epigraph rows.
    let mut smooth: Vec<Box<dyn ConvexConstraint>> = Vec::new();
    for (j, policy) in market.assets.iter().enumerate() {
        if !policy.tradeable {
            continue;
        }
        let asset = j + 1;
        for (rank, &node) in tree.non_terminal_nodes().iter().enumerate() {
            let slack = match fric_cols[j][rank] {
                Some(c) => c,
                None => continue,
            };
            let friction = market.friction_at(tree, asset, node);
            let n = tree.node(node);
            let nominal = n.prices[asset];
            let numeraire = n.numeraire();
            let here = theta_cols[j][rank];
            let parent_col = n
                .parent
                .and_then(|p| tree.non_terminal_rank(p))
                .map(|r| theta_cols[j][r]);
            match friction {
                Friction::Zero => unreachable!("zero frictions have no slack"),
                Friction::Proportional { epsilon } => {
                    let kappa = epsilon * nominal / numeraire;
                    for sign in [1.0, -1.0] {
                        // slack >= sign * kappa * (theta_here - theta_parent)
                        let mut coeffs = vec![(slack, 1.0), (here, -sign * kappa)];
                        if let Some(p) = parent_col {
                            coeffs.push((p, sign * kappa));
                        }
                        lp.add_row(coeffs, Relation::Ge, 0.0);
                    }
                }
                Friction::PiecewiseLinear(pw) => {
                    for (s, d) in pw.tangents() {
                        // slack >= [s * nominal * delta + d] / numeraire
                        let k = s * nominal / numeraire;
                        let mut coeffs = vec![(slack, 1.0), (here, -k)];
                        if let Some(p) = parent_col {
                            coeffs.push((p, k));
                        }
                        lp.add_row(coeffs, Relation::Ge, d / numeraire);
                    }
                }
                Friction::Power { epsilon, exponent } => {
                    smooth.push(Box::new(PowerCostRow {
                        scale: epsilon / (exponent * numeraire),
                        exponent,
                        trade_scale: nominal,
                        col_here: here,
                        col_parent: parent_col,
                        slack,
                    }));
                }
            }
        }
    }

    // Superlinear instrument cost rows.
    for (i, inst) in market.instruments.iter().enumerate() {
        if let (Some(s), InstrCols::Superlinear { net, slack }) =
            (&inst.superlinear, &instruments[i])
        {
            smooth.push(Box::new(SuperlinearCostRow {
                delta: s.delta,
                exponent: s.exponent,
                net: *net,
                slack: *slack,
            }));
        }
    }

    // Acceptance rows over the positions.
    for row in &blocks.rows {
        let mut coeffs: Vec<(usize, f64)> = Vec::new();
        let mut rhs = row.rhs;
        for &(omega, a) in &row.y_coeffs {
            rhs -= a * positions.consts[omega];
            for &(j, c) in &positions.rows[omega] {
                coeffs.push((j, a * c));
            }
        }
        for &(aux, a) in &row.aux_coeffs {
            coeffs.push((acc_aux0 + aux, a));
        }
        coeffs.sort_by_key(|&(j, _)| j);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coeffs.len());
        for (j, a) in coeffs {
            match merged.last_mut() {
                Some(last) if last.0 == j => last.1 += a,
                _ => merged.push((j, a)),
            }
        }
        let relation = if row.greater { Relation::Ge } else { Relation::Le };
        lp.add_row(merged, relation, rhs);
    }
    for srow in &blocks.smooth {
        smooth.push(Box::new(EntropicPositionConstraint {
            row: srow.clone(),
            positions: Arc::clone(&positions),
        }));
    }

    Ok(Assembled {
        lp,
        smooth,
        layout: Layout {
            num_vars,
            m: m_col,
            theta_cols,
            instruments,
        },
    })
}

fn extract_strategy(
    tree: &ScenarioTree,
    market: &MarketSpec,
    layout: &Layout,
    x: &[f64],
) -> Strategy {
    let mut strategy = Strategy::zeros(tree, market);
    for (j, cols) in layout.theta_cols.iter().enumerate() {
        for (rank, &col) in cols.iter().enumerate() {
            strategy.dynamic[j * tree.num_non_terminal() + rank] = x[col];
        }
    }
    for (i, cols) in layout.instruments.iter().enumerate() {
        match cols {
            InstrCols::Quoted { plus, minus } => {
                strategy.theta_plus[i] = x[*plus];
                strategy.theta_minus[i] = x[*minus];
            }
            InstrCols::Superlinear { net, .. } => {
                if x[*net] >= 0.0 {
                    strategy.theta_plus[i] = x[*net];
                } else {
                    strategy.theta_minus[i] = -x[*net];
                }
            }
        }
    }
    strategy
}

fn strategy_box(layout: &Layout, lp: &LinearProgram) -> Vec<(f64, f64)> {
    let mut bx: Vec<(f64, f64)> = vec![(f64::NEG_INFINITY, f64::INFINITY); layout.num_vars];
    bx[layout.m] = (-ARBITRAGE_WITNESS_BOX, ARBITRAGE_WITNESS_BOX);
    for cols in &layout.theta_cols {
        for &c in cols {
            bx[c] = (-ARBITRAGE_WITNESS_BOX, ARBITRAGE_WITNESS_BOX);
        }
    }
    for cols in &layout.instruments {
        match cols {
            InstrCols::Quoted { plus, minus } => {
                bx[*plus] = (0.0, ARBITRAGE_WITNESS_BOX);
                bx[*minus] = (0.0, ARBITRAGE_WITNESS_BOX);
            }
            InstrCols::Superlinear { net, .. } => {
                bx[*net] = (-ARBITRAGE_WITNESS_BOX, ARBITRAGE_WITNESS_BOX);
            }
        }
    }
    // Keep original tighter bounds.
    for (j, b) in bx.iter_mut().enumerate() {
        b.0 = b.0.max(lp.bounds[j].0);
        b.1 = b.1.min(lp.bounds[j].1);
    }
    bx
}

fn finish(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
    layout: &Layout,
    status: HedgeStatus,
    price: f64,
    point: Option<&[f64]>,
    tol: f64,
) -> Result<HedgeResult, EngineError> {
    let strategy = point.map(|x| extract_strategy(tree, market, layout, x));
    let (residual, max_violation) = match (&strategy, status) {
        (Some(s), HedgeStatus::Optimal) => {
            let g = gains(tree, market, s)?;
            let residual: PathVector = (0..tree.num_paths())
                .map(|w| price - payoff[w] + g[w])
                .collect();
            let violation = acc.worst_violation(&residual)?;
            (Some(residual), Some(violation))
        }
        _ => (None, None),
    };
    Ok(HedgeResult {
        price,
        status,
        strategy,
        residual,
        max_violation,
        tol,
    })
}

/// Least initial capital whose residual position is acceptable: the upper
/// (selling) price of the claim. Unbounded-below status flags an arbitrage.
pub fn superhedge(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
    tol: f64,
) -> Result<HedgeResult, EngineError> {
    validated(tree, market, acc, payoff)?;
    let Assembled { lp, smooth, layout } = assemble(tree, market, acc, payoff)?;

    if smooth.is_empty() {
        let out = solve_lp(&lp, tol)?;
        match out.status {
            SolveStatus::Optimal => {
                let x = out.point.expect("optimal point");
                finish(
                    tree,
                    market,
                    acc,
                    payoff,
                    &layout,
                    HedgeStatus::Optimal,
                    out.value.expect("optimal value"),
                    Some(&x),
                    tol,
                )
            }
            SolveStatus::Unbounded => {
                // Re-solve inside a box to exhibit a concrete witness; the
                // price stays -infinity, nothing is silently clipped.
                let mut boxed = lp.clone();
                boxed.bounds = strategy_box(&layout, &lp);
                let witness = solve_lp(&boxed, tol)?;
                let strategy = witness
                    .point
                    .as_deref()
                    .map(|x| extract_strategy(tree, market, &layout, x));
                Ok(HedgeResult {
                    price: f64::NEG_INFINITY,
                    status: HedgeStatus::Unbounded,
                    strategy,
                    residual: None,
                    max_violation: None,
                    tol,
                })
            }
            SolveStatus::IterLimit => Ok(HedgeResult {
                price: f64::NAN,
                status: HedgeStatus::IterLimit,
                strategy: None,
                residual: None,
                max_violation: None,
                tol,
            }),
            SolveStatus::Infeasible => Err(EngineError::Internal(
                "hedging program reported infeasible, but a large enough capital is always \
                 feasible"
                    .into(),
            )),
        }
    } else {
        // Exponential-tail constraints hide unbounded directions from the
        // cutting loop, so test for a positive recession ray up front.
        if acc.needs_convex_solver() {
            let mut support = vec![false; tree.num_paths()];
            for entry in acc.entries() {
                for (w, flag) in support.iter_mut().enumerate() {
                    if entry.measure[w] > 0.0 {
                        *flag = true;
                    }
                }
            }
            if let Some(witness) = entropic_ray(tree, market, &support, tol)? {
                return Ok(HedgeResult {
                    price: f64::NEG_INFINITY,
                    status: HedgeStatus::Unbounded,
                    strategy: Some(witness),
                    residual: None,
                    max_violation: None,
                    tol,
                });
            }
        }
        let trust = strategy_box(&layout, &lp);
        let cp = ConvexProgram {
            core: lp,
            constraints: smooth,
            trust_box: Some(trust),
        };
        // Cutting planes resolve around 1e-7; below that cuts degenerate.
        let convex_tol = tol.max(crate::solver::DEFAULT_CONVEX_TOL);
        let out = solve_convex(&cp, convex_tol, DEFAULT_CONVEX_ITERS)?;
        match out.status {
            SolveStatus::Optimal => {
                let x = out.point.expect("optimal point");
                finish(
                    tree,
                    market,
                    acc,
                    payoff,
                    &layout,
                    HedgeStatus::Optimal,
                    out.value.expect("optimal value"),
                    Some(&x),
                    tol,
                )
            }
            SolveStatus::Unbounded => {
                let strategy = out
                    .point
                    .as_deref()
                    .map(|x| extract_strategy(tree, market, &layout, x));
                Ok(HedgeResult {
                    price: f64::NEG_INFINITY,
                    status: HedgeStatus::Unbounded,
                    strategy,
                    residual: None,
                    max_violation: None,
                    tol,
                })
            }
            SolveStatus::IterLimit => Ok(HedgeResult {
                price: f64::NAN,
                status: HedgeStatus::IterLimit,
                strategy: None,
                residual: None,
                max_violation: None,
                tol,
            }),
            SolveStatus::Infeasible => Err(EngineError::Internal(
                "hedging program reported infeasible, but a large enough capital is always \
                 feasible"
                    .into(),
            )),
        }
    }
}

/// Greatest capital `m` such that `X - m` plus an attainable gain is
/// acceptable: the lower (buying) price. Computed as the negated upper
/// price of `-X`; the witness strategy and residual transfer unchanged.
pub fn subhedge(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
    tol: f64,
) -> Result<HedgeResult, EngineError> {
    let mirrored = superhedge(tree, market, acc, &payoff.neg(), tol)?;
    Ok(HedgeResult {
        price: -mirrored.price,
        ..mirrored
    })
}

#[derive(Debug, Clone)]
pub struct PriceBounds {
    pub lower: HedgeResult,
    pub upper: HedgeResult,
}

/// Both price bounds; checks the ordering `lower <= upper` whenever both
/// sides solved.
pub fn price_bounds(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
    tol: f64,
) -> Result<PriceBounds, EngineError> {
    let upper = superhedge(tree, market, acc, payoff, tol)?;
    let lower = subhedge(tree, market, acc, payoff, tol)?;
    if lower.status == HedgeStatus::Optimal
        && upper.status == HedgeStatus::Optimal
        && lower.price > upper.price + 2.0 * tol
    {
        return Err(EngineError::Internal(format!(
            "lower bound {} exceeds upper bound {}",
            lower.price, upper.price
        )));
    }
    Ok(PriceBounds { lower, upper })
}
