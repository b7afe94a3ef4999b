//! Independent brute-force verifiers for tiny instances: exact-arithmetic
//! vertex optimization over the measure polytope, grid search over
//! strategies, closed-form fixtures, and a seeded random instance
//! generator. Nothing here calls the engine's program builders; rows are
//! re-derived from the definitions and solved in exact rational arithmetic,
//! so agreement with the engine is evidence, not tautology.

use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::acceptance::{AcceptanceSpec, LossFunction, OceEntry};
use crate::market::{
    conjugate_numeric_check, Friction, MarketSpec, PiecewiseCost, StaticInstrument,
};
use crate::tree::{build_tree, NodeSpec, PathVector, ScenarioTree, TreeSpec};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("instance too large for the oracle: {got} paths, cap {cap}")]
    TooLarge { got: usize, cap: usize },
    #[error("strategy grid too large: {got} dimensions, cap {cap}")]
    TooManyDims { got: usize, cap: usize },
    #[error("instance has nonlinear components the exact oracle cannot enumerate")]
    NonlinearInstance,
    #[error("loss family not covered by the vertex oracle")]
    UnsupportedAcceptance,
    #[error(transparent)]
    Engine(#[from] crate::error::EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    VertexEnum,
    StrategyGrid,
    MeasureSample,
    ClosedForm,
}

#[derive(Debug, Clone)]
pub struct OracleReport {
    /// The oracle's value; -infinity marks an empty feasible set on the
    /// maximizing side.
    pub value: f64,
    pub method: OracleMethod,
    /// Vertices visited, grid candidates evaluated, or samples drawn.
    pub count: usize,
    pub feasible: bool,
    /// Deviation from an engine value, when the caller recorded one.
    pub deviation: Option<f64>,
}

impl OracleReport {
    pub fn against(mut self, engine_value: f64) -> Self {
        self.deviation = Some((self.value - engine_value).abs());
        self
    }
}

// ---------------------------------------------------------------------------
// Exact rational linear programming (Bland's rule; terminates, no tolerance).

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ExactRel {
    Le,
    Eq,
    Ge,
}

#[derive(Clone)]
struct ExactLp {
    num_vars: usize,
    objective: Vec<BigRational>,
    rows: Vec<(Vec<(usize, BigRational)>, ExactRel, BigRational)>,
    maximize: bool,
}

enum ExactOutcome {
    Optimal {
        value: BigRational,
        point: Vec<BigRational>,
    },
    Infeasible,
    Unbounded,
}

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite coefficient")
}

// Dense exact simplex over nonnegative variables. Small and slow by design.
fn solve_exact(lp: &ExactLp) -> ExactOutcome {
    let m = lp.rows.len();
    let zero = BigRational::zero();
    let one = BigRational::one();

    // Columns: structural | slack/surplus | artificial, rhs made nonnegative.
    let mut n_cols = lp.num_vars;
    let mut rows = lp.rows.clone();
    for row in &mut rows {
        if row.2 < zero {
            for c in &mut row.0 {
                c.1 = -c.1.clone();
            }
            row.2 = -row.2.clone();
            row.1 = match row.1 {
                ExactRel::Le => ExactRel::Ge,
                ExactRel::Eq => ExactRel::Eq,
                ExactRel::Ge => ExactRel::Le,
            };
        }
    }
    let mut slack_col = vec![None; m];
    for (i, row) in rows.iter().enumerate() {
        if row.1 != ExactRel::Eq {
            slack_col[i] = Some(n_cols);
            n_cols += 1;
        }
    }
    let mut art_col = vec![None; m];
    for (i, row) in rows.iter().enumerate() {
        if row.1 != ExactRel::Le {
            art_col[i] = Some(n_cols);
            n_cols += 1;
        }
    }
    let total = n_cols;
    let mut tab: Vec<Vec<BigRational>> = vec![vec![zero.clone(); total + 1]; m];
    let mut basis = vec![0usize; m];
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in &row.0 {
            tab[i][*j] = tab[i][*j].clone() + v.clone();
        }
        tab[i][total] = row.2.clone();
        match row.1 {
            ExactRel::Le => {
                tab[i][slack_col[i].unwrap()] = one.clone();
                basis[i] = slack_col[i].unwrap();
            }
            ExactRel::Ge => {
                tab[i][slack_col[i].unwrap()] = -one.clone();
                tab[i][art_col[i].unwrap()] = one.clone();
                basis[i] = art_col[i].unwrap();
            }
            ExactRel::Eq => {
                tab[i][art_col[i].unwrap()] = one.clone();
                basis[i] = art_col[i].unwrap();
            }
        }
    }
    let is_art: Vec<bool> = (0..total)
        .map(|j| art_col.iter().any(|&a| a == Some(j)))
        .collect();

    fn pivot(
        tab: &mut [Vec<BigRational>],
        cost: &mut [BigRational],
        basis: &mut [usize],
        r: usize,
        e: usize,
    ) {
        let inv = tab[r][e].clone();
        for v in tab[r].iter_mut() {
            *v = v.clone() / inv.clone();
        }
        let pivot_row = tab[r].clone();
        for (i, row) in tab.iter_mut().enumerate() {
            if i != r && !row[e].is_zero() {
                let f = row[e].clone();
                for (v, pv) in row.iter_mut().zip(pivot_row.iter()) {
                    *v = v.clone() - f.clone() * pv.clone();
                }
            }
        }
        if !cost[e].is_zero() {
            let f = cost[e].clone();
            for (v, pv) in cost.iter_mut().zip(pivot_row.iter()) {
                *v = v.clone() - f.clone() * pv.clone();
            }
        }
        basis[r] = e;
    }

    // One Bland phase: entering = lowest-index negative reduced cost.
    fn run(
        tab: &mut [Vec<BigRational>],
        cost: &mut [BigRational],
        basis: &mut [usize],
        is_art: &[bool],
        total: usize,
        allow_art: bool,
    ) -> Option<usize> {
        loop {
            let mut enter = None;
            for j in 0..total {
                if (!allow_art && is_art[j]) || basis.contains(&j) {
                    continue;
                }
                if cost[j].is_negative() {
                    enter = Some(j);
                    break;
                }
            }
            let e = match enter {
                Some(e) => e,
                None => return None,
            };
            let mut leave: Option<usize> = None;
            let mut best: Option<BigRational> = None;
            for i in 0..tab.len() {
                if tab[i][e].is_positive() {
                    let ratio = tab[i][total].clone() / tab[i][e].clone();
                    let better = match &best {
                        None => true,
                        Some(b) => {
                            ratio < *b
                                || (ratio == *b
                                    && leave.map(|l| basis[i] < basis[l]).unwrap_or(true))
                        }
                    };
                    if better {
                        best = Some(ratio);
                        leave = Some(i);
                    }
                }
            }
            match leave {
                Some(r) => pivot(tab, cost, basis, r, e),
                None => return Some(e),
            }
        }
    }

    // Phase 1.
    if art_col.iter().any(|a| a.is_some()) {
        let mut cost1 = vec![zero.clone(); total + 1];
        for (i, a) in art_col.iter().enumerate() {
            if a.is_some() {
                for j in 0..=total {
                    cost1[j] = cost1[j].clone() - tab[i][j].clone();
                }
            }
        }
        for a in art_col.iter().flatten() {
            cost1[*a] = cost1[*a].clone() + one.clone();
        }
        let unbounded = run(&mut tab, &mut cost1, &mut basis, &is_art, total, true);
        debug_assert!(unbounded.is_none());
        if !cost1[total].is_zero() {
            return ExactOutcome::Infeasible;
        }
        for i in 0..m {
            if is_art[basis[i]] {
                let entering = (0..total).find(|&j| !is_art[j] && !tab[i][j].is_zero());
                match entering {
                    Some(e) => pivot(&mut tab, &mut cost1, &mut basis, i, e),
                    None => {
                        for j in 0..total {
                            if !is_art[j] {
                                tab[i][j] = zero.clone();
                            }
                        }
                        tab[i][total] = zero.clone();
                    }
                }
            }
        }
    }

    // Phase 2.
    let sign = if lp.maximize { -one.clone() } else { one };
    let mut cost2 = vec![zero.clone(); total + 1];
    for (j, c) in lp.objective.iter().enumerate() {
        cost2[j] = sign.clone() * c.clone();
    }
    for i in 0..m {
        let b = basis[i];
        let cb = if b < lp.num_vars {
            sign.clone() * lp.objective[b].clone()
        } else {
            zero.clone()
        };
        if !cb.is_zero() {
            for j in 0..=total {
                cost2[j] = cost2[j].clone() - cb.clone() * tab[i][j].clone();
            }
        }
    }
    if run(&mut tab, &mut cost2, &mut basis, &is_art, total, false).is_some() {
        return ExactOutcome::Unbounded;
    }
    let mut point = vec![zero.clone(); lp.num_vars];
    let mut value = zero;
    for i in 0..m {
        if basis[i] < lp.num_vars {
            point[basis[i]] = tab[i][total].clone();
            value = value + lp.objective[basis[i]].clone() * tab[i][total].clone();
        }
    }
    ExactOutcome::Optimal { value, point }
}

// ---------------------------------------------------------------------------
// Independent dual polytope rows.

// Variables: the measure first, then mass-splitting variables for risk
// caps, then penalty epigraph variables for piecewise costs.
struct OracleDual {
    lp: ExactLp,
}

fn linear_classes_only(market: &MarketSpec, acc: &AcceptanceSpec) -> Result<(), OracleError> {
    let nonlinear_market = market
        .assets
        .iter()
        .any(|p| p.tradeable && p.frictions.iter().any(|f| matches!(f, Friction::Power { .. })))
        || market.instruments.iter().any(|i| i.superlinear.is_some());
    if nonlinear_market {
        return Err(OracleError::NonlinearInstance);
    }
    match acc {
        AcceptanceSpec::Strict => Ok(()),
        AcceptanceSpec::RobustOce(entries) => {
            if entries
                .iter()
                .all(|e| matches!(e.loss, LossFunction::Avar { .. }))
            {
                Ok(())
            } else {
                Err(OracleError::UnsupportedAcceptance)
            }
        }
    }
}

fn assemble_oracle_dual(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
    maximize: bool,
) -> Result<OracleDual, OracleError> {
    linear_classes_only(market, acc)?;
    let n = tree.num_paths();
    // Per-path ancestor tables, rebuilt from parent links.
    let ancestors: Vec<Vec<usize>> = (0..n).map(|p| tree.path_nodes(p)).collect();
    let disc = |asset: usize, node: usize| -> f64 {
        let nd = tree.node(node);
        nd.prices[asset] / nd.prices[0]
    };

    let mut num_vars = n;
    let mut rows: Vec<(Vec<(usize, BigRational)>, ExactRel, BigRational)> = Vec::new();
    let mut objective: Vec<BigRational> = payoff.iter().map(|&v| rat(v)).collect();
    let penalty_sign = if maximize { -1.0 } else { 1.0 };

    rows.push((
        (0..n).map(|w| (w, BigRational::one())).collect(),
        ExactRel::Eq,
        BigRational::one(),
    ));

    for (j, policy) in market.assets.iter().enumerate() {
        if !policy.tradeable {
            continue;
        }
        let asset = j + 1;
        for &node in tree.non_terminal_nodes() {
            let t = tree.node(node).depth;
            let through: Vec<usize> = (0..n).filter(|&w| ancestors[w][t] == node).collect();
            let s = disc(asset, node);
            if policy.short_sale_banned {
                // Next-step conditional expectation dominated by the price.
                let coeffs = through
                    .iter()
                    .map(|&w| (w, rat(disc(asset, ancestors[w][t + 1])) - rat(s)))
                    .collect();
                rows.push((coeffs, ExactRel::Le, BigRational::zero()));
                continue;
            }
            if s == 0.0 {
                let coeffs = through
                    .iter()
                    .map(|&w| (w, rat(disc(asset, ancestors[w][tree.horizon()]))))
                    .collect();
                rows.push((coeffs, ExactRel::Le, BigRational::zero()));
                continue;
            }
            let terminal: Vec<f64> = through
                .iter()
                .map(|&w| disc(asset, ancestors[w][tree.horizon()]))
                .collect();
            match market.friction_at(tree, asset, node) {
                f if f.is_zero() => {
                    let coeffs = through
                        .iter()
                        .zip(&terminal)
                        .map(|(&w, &v)| (w, rat(v) - rat(s)))
                        .collect();
                    rows.push((coeffs, ExactRel::Eq, BigRational::zero()));
                }
                Friction::Proportional { epsilon } => {
                    for (eps_sign, rel) in [(1.0, ExactRel::Le), (-1.0, ExactRel::Ge)] {
                        let band = BigRational::one() + rat(eps_sign) * rat(epsilon);
                        let coeffs = through
                            .iter()
                            .zip(&terminal)
                            .map(|(&w, &v)| (w, rat(v) - band.clone() * rat(s)))
                            .collect();
                        rows.push((coeffs, rel, BigRational::zero()));
                    }
                }
                Friction::PiecewiseLinear(pw) => {
                    let (lo, hi) = pw.slope_range();
                    for (slope, rel) in [(hi, ExactRel::Le), (lo, ExactRel::Ge)] {
                        let band = BigRational::one() + rat(slope);
                        let coeffs = through
                            .iter()
                            .zip(&terminal)
                            .map(|(&w, &v)| (w, rat(v) - band.clone() * rat(s)))
                            .collect();
                        rows.push((coeffs, rel, BigRational::zero()));
                    }
                    if !pw.breakpoints().is_empty() {
                        let pi = num_vars;
                        num_vars += 1;
                        objective.push(rat(penalty_sign));
                        let numeraire = rat(tree.node(node).numeraire());
                        for (&b, &g) in pw.breakpoints().iter().zip(pw.breakpoint_values()) {
                            let mut coeffs: Vec<(usize, BigRational)> = through
                                .iter()
                                .zip(&terminal)
                                .map(|(&w, &v)| {
                                    let dev = (rat(v) - rat(s)) / rat(s);
                                    (w, (-rat(b) * dev + rat(g)) / numeraire.clone())
                                })
                                .collect();
                            coeffs.push((pi, BigRational::one()));
                            rows.push((coeffs, ExactRel::Ge, BigRational::zero()));
                        }
                    }
                }
                Friction::Power { .. } | Friction::Zero => unreachable!(),
            }
        }
    }

    for inst in &market.instruments {
        let coeffs: Vec<(usize, BigRational)> =
            (0..n).map(|w| (w, rat(inst.payoff[w]))).collect();
        if inst.ask < f64::INFINITY {
            if inst.max_position == f64::INFINITY {
                rows.push((coeffs.clone(), ExactRel::Le, rat(inst.ask)));
            } else if inst.max_position > 0.0 {
                let sigma = num_vars;
                num_vars += 1;
                objective.push(rat(penalty_sign));
                let mut c: Vec<(usize, BigRational)> = coeffs
                    .iter()
                    .map(|(w, v)| (*w, rat(-inst.max_position) * v.clone()))
                    .collect();
                c.push((sigma, BigRational::one()));
                rows.push((c, ExactRel::Ge, rat(-inst.max_position * inst.ask)));
            }
        }
        if inst.bid > f64::NEG_INFINITY {
            if inst.min_position == f64::NEG_INFINITY {
                rows.push((coeffs.clone(), ExactRel::Ge, rat(inst.bid)));
            } else if inst.min_position < 0.0 {
                let cap = -inst.min_position;
                let sigma = num_vars;
                num_vars += 1;
                objective.push(rat(penalty_sign));
                let mut c: Vec<(usize, BigRational)> = coeffs
                    .iter()
                    .map(|(w, v)| (*w, rat(cap) * v.clone()))
                    .collect();
                c.push((sigma, BigRational::one()));
                rows.push((c, ExactRel::Ge, rat(cap * inst.bid)));
            }
        }
    }

    if let AcceptanceSpec::RobustOce(entries) = acc {
        // The measure splits into one capped piece per reference measure;
        // each piece is a scaled probability measure whose total mass must
        // match its mixing weight, and the caps scale with those weights.
        let k = entries.len();
        let r0 = num_vars;
        num_vars += k * n;
        let v0 = num_vars;
        num_vars += k;
        objective.resize(num_vars, BigRational::zero());
        rows.push((
            (0..k).map(|kk| (v0 + kk, BigRational::one())).collect(),
            ExactRel::Eq,
            BigRational::one(),
        ));
        for w in 0..n {
            let mut coeffs = vec![(w, BigRational::one())];
            for kk in 0..k {
                coeffs.push((r0 + kk * n + w, -BigRational::one()));
            }
            rows.push((coeffs, ExactRel::Eq, BigRational::zero()));
        }
        for (kk, entry) in entries.iter().enumerate() {
            let lambda = match entry.loss {
                LossFunction::Avar { lambda } => lambda,
                _ => unreachable!("filtered above"),
            };
            let mut mass_row: Vec<(usize, BigRational)> =
                (0..n).map(|w| (r0 + kk * n + w, BigRational::one())).collect();
            mass_row.push((v0 + kk, -BigRational::one()));
            rows.push((mass_row, ExactRel::Eq, BigRational::zero()));
            for w in 0..n {
                rows.push((
                    vec![
                        (r0 + kk * n + w, BigRational::one()),
                        (v0 + kk, rat(-entry.measure[w] / lambda)),
                    ],
                    ExactRel::Le,
                    BigRational::zero(),
                ));
            }
        }
    }

    Ok(OracleDual {
        lp: ExactLp {
            num_vars,
            objective,
            rows,
            maximize,
        },
    })
}

const VERTEX_PATH_CAP: usize = 12;
// Enumeration budget in (basis count) * m^3 elimination steps; rational
// arithmetic makes each step expensive, so past this the exact simplex
// takes over (it still terminates on an optimal vertex).
const ENUM_WORK_CAP: u128 = 200_000;

fn basis_count(n: u128, m: u128) -> u128 {
    if m > n {
        return 0;
    }
    let k = m.min(n - m);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
        if acc > ENUM_WORK_CAP {
            return u128::MAX;
        }
    }
    acc
}

// Exhaustive basic-solution enumeration of the standard-form polyhedron.
// Returns None when the estimated work exceeds the enumeration budget.
// Dependent rows are eliminated exactly first, so degenerate instances
// (whose full-size bases are all singular) still enumerate correctly; an
// inconsistent system short-circuits to "infeasible".
fn enumerate_vertices(lp: &ExactLp) -> Option<(Option<BigRational>, usize)> {
    let m_raw = lp.rows.len();
    let n_slack = lp.rows.iter().filter(|r| r.1 != ExactRel::Eq).count();
    let total = lp.num_vars + n_slack;
    let zero = BigRational::zero();
    let mut dense: Vec<Vec<BigRational>> = vec![vec![zero.clone(); total]; m_raw];
    let mut rhs: Vec<BigRational> = Vec::with_capacity(m_raw);
    let mut slack = lp.num_vars;
    for (i, (coeffs, rel, b)) in lp.rows.iter().enumerate() {
        for (j, v) in coeffs {
            dense[i][*j] = dense[i][*j].clone() + v.clone();
        }
        match rel {
            ExactRel::Le => {
                dense[i][slack] = BigRational::one();
                slack += 1;
            }
            ExactRel::Ge => {
                dense[i][slack] = -BigRational::one();
                slack += 1;
            }
            ExactRel::Eq => {}
        }
        rhs.push(b.clone());
    }

    // Exact row reduction: keep an independent subset, or certify an
    // inconsistent (infeasible) system outright.
    {
        let mut work_rows: Vec<(Vec<BigRational>, BigRational)> = dense
            .iter()
            .cloned()
            .zip(rhs.iter().cloned())
            .collect();
        let mut kept: Vec<usize> = Vec::new();
        let mut pivot_cols: Vec<usize> = Vec::new();
        for i in 0..m_raw {
            // Eliminate the already-fixed pivots from row i.
            for (pos, &k) in kept.iter().enumerate() {
                let col = pivot_cols[pos];
                let f = work_rows[i].0[col].clone();
                if !f.is_zero() {
                    let (pivot_row, pivot_rhs) = work_rows[k].clone();
                    for c in 0..total {
                        let upd = f.clone() * pivot_row[c].clone();
                        work_rows[i].0[c] = work_rows[i].0[c].clone() - upd;
                    }
                    work_rows[i].1 = work_rows[i].1.clone() - f * pivot_rhs;
                }
            }
            match (0..total).find(|&c| !work_rows[i].0[c].is_zero()) {
                Some(col) => {
                    let inv = work_rows[i].0[col].clone();
                    for c in 0..total {
                        work_rows[i].0[c] = work_rows[i].0[c].clone() / inv.clone();
                    }
                    work_rows[i].1 = work_rows[i].1.clone() / inv;
                    kept.push(i);
                    pivot_cols.push(col);
                }
                None => {
                    if !work_rows[i].1.is_zero() {
                        // 0 = nonzero: exactly infeasible.
                        return Some((None, 0));
                    }
                }
            }
        }
        if kept.len() < m_raw {
            let keep: std::collections::BTreeSet<usize> = kept.into_iter().collect();
            dense = dense
                .into_iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(i))
                .map(|(_, r)| r)
                .collect();
            rhs = rhs
                .into_iter()
                .enumerate()
                .filter(|(i, _)| keep.contains(i))
                .map(|(_, r)| r)
                .collect();
        }
    }
    let m = dense.len();
    let work = basis_count(total as u128, m as u128)
        .saturating_mul((m as u128).saturating_pow(3));
    if m > total || work > ENUM_WORK_CAP {
        return None;
    }

    let mut best: Option<BigRational> = None;
    let mut vertices = 0usize;
    let mut combo: Vec<usize> = (0..m).collect();
    loop {
        // Solve the m x m basis system by exact elimination.
        let mut a: Vec<Vec<BigRational>> = (0..m)
            .map(|i| combo.iter().map(|&j| dense[i][j].clone()).collect())
            .collect();
        let mut b = rhs.clone();
        let mut singular = false;
        for col in 0..m {
            let pivot_row = (col..m).find(|&r| !a[r][col].is_zero());
            let pr = match pivot_row {
                Some(pr) => pr,
                None => {
                    singular = true;
                    break;
                }
            };
            a.swap(col, pr);
            b.swap(col, pr);
            let inv = a[col][col].clone();
            for v in a[col].iter_mut() {
                *v = v.clone() / inv.clone();
            }
            b[col] = b[col].clone() / inv;
            for r in 0..m {
                if r != col && !a[r][col].is_zero() {
                    let f = a[r][col].clone();
                    for c2 in 0..m {
                        let upd = a[col][c2].clone();
                        a[r][c2] = a[r][c2].clone() - f.clone() * upd;
                    }
                    b[r] = b[r].clone() - f * b[col].clone();
                }
            }
        }
        if !singular && b.iter().all(|v| !v.is_negative()) {
            vertices += 1;
            let mut value = BigRational::zero();
            for (pos, &j) in combo.iter().enumerate() {
                if j < lp.num_vars {
                    value = value + lp.objective[j].clone() * b[pos].clone();
                }
            }
            let better = match &best {
                None => true,
                Some(curr) => {
                    if lp.maximize {
                        value > *curr
                    } else {
                        value < *curr
                    }
                }
            };
            if better {
                best = Some(value);
            }
        }
        // Next lexicographic combination.
        let mut i = m;
        loop {
            if i == 0 {
                return Some((best, vertices));
            }
            i -= 1;
            if combo[i] != i + total - m {
                combo[i] += 1;
                for k in i + 1..m {
                    combo[k] = combo[k - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Exact optimum of the expected payoff over the admissible measure set, by
/// exhaustive vertex enumeration when the basis count is small and by
/// exact-arithmetic simplex (which terminates on an optimal vertex)
/// otherwise. Linear market and acceptance classes only; at most
/// [`VERTEX_PATH_CAP`] paths.
pub fn vertex_dual_value(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
) -> Result<OracleReport, OracleError> {
    vertex_dual_directed(tree, market, acc, payoff, true)
}

/// The minimizing mirror of [`vertex_dual_value`].
pub fn vertex_dual_min(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
) -> Result<OracleReport, OracleError> {
    vertex_dual_directed(tree, market, acc, payoff, false)
}

fn vertex_dual_directed(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
    maximize: bool,
) -> Result<OracleReport, OracleError> {
    if tree.num_paths() > VERTEX_PATH_CAP {
        return Err(OracleError::TooLarge {
            got: tree.num_paths(),
            cap: VERTEX_PATH_CAP,
        });
    }
    let dual = assemble_oracle_dual(tree, market, acc, payoff, maximize)?;
    if let Some((best, vertices)) = enumerate_vertices(&dual.lp) {
        return Ok(match best {
            Some(v) => OracleReport {
                value: v.to_f64().expect("rational fits"),
                method: OracleMethod::VertexEnum,
                count: vertices,
                feasible: true,
                deviation: None,
            },
            None => OracleReport {
                value: if maximize {
                    f64::NEG_INFINITY
                } else {
                    f64::INFINITY
                },
                method: OracleMethod::VertexEnum,
                count: vertices,
                feasible: false,
                deviation: None,
            },
        });
    }
    match solve_exact(&dual.lp) {
        ExactOutcome::Optimal { value, .. } => Ok(OracleReport {
            value: value.to_f64().expect("rational fits"),
            method: OracleMethod::VertexEnum,
            count: 0,
            feasible: true,
            deviation: None,
        }),
        ExactOutcome::Infeasible => Ok(OracleReport {
            value: if maximize {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            },
            method: OracleMethod::VertexEnum,
            count: 0,
            feasible: false,
            deviation: None,
        }),
        ExactOutcome::Unbounded => Err(OracleError::NonlinearInstance),
    }
}

// ---------------------------------------------------------------------------
// Strategy grid search (upper bound on the hedging price).

#[derive(Debug, Clone, Copy)]
pub struct GridSpec {
    pub bound: f64,
    pub steps: usize,
}

const GRID_DIM_CAP: usize = 6;

// Gains re-derived by an explicit path walk, separate from the market
// module's evaluator.
fn oracle_gains(
    tree: &ScenarioTree,
    market: &MarketSpec,
    dynamic: &[f64],
    theta: &[f64],
) -> PathVector {
    let disc = |asset: usize, node: usize| -> f64 {
        let nd = tree.node(node);
        nd.prices[asset] / nd.prices[0]
    };
    let mut static_cost = 0.0;
    for (i, inst) in market.instruments.iter().enumerate() {
        let th = theta[i];
        if let Some(s) = &inst.superlinear {
            static_cost += inst.bid * th + s.delta / s.exponent * th.abs().powf(s.exponent);
        } else if th >= 0.0 {
            static_cost += th * inst.ask;
        } else {
            static_cost += th * inst.bid;
        }
    }
    let nt = tree.num_non_terminal();
    let mut out = Vec::with_capacity(tree.num_paths());
    for path in 0..tree.num_paths() {
        let chain = tree.path_nodes(path);
        let mut total = -static_cost;
        for (i, inst) in market.instruments.iter().enumerate() {
            total += theta[i] * inst.payoff[path];
        }
        for (j, policy) in market.assets.iter().enumerate() {
            if !policy.tradeable {
                continue;
            }
            let asset = j + 1;
            let mut held = 0.0;
            for t in 0..tree.horizon() {
                let here = chain[t];
                let rank = tree.non_terminal_rank(here).unwrap();
                let holding = dynamic[j * nt + rank];
                let trade = (holding - held) * tree.node(here).prices[asset];
                let cost = match market.friction_at(tree, asset, here) {
                    Friction::Zero => 0.0,
                    Friction::Proportional { epsilon } => epsilon * trade.abs(),
                    Friction::Power { epsilon, exponent } => {
                        epsilon / exponent * trade.abs().powf(exponent)
                    }
                    Friction::PiecewiseLinear(pw) => pw.value(trade),
                };
                total -= cost / tree.node(here).numeraire();
                total += holding * (disc(asset, chain[t + 1]) - disc(asset, here));
                held = holding;
            }
        }
        out.push(total);
    }
    PathVector::new(out)
}

// Risk via direct search over the shift variable: a zoomed grid for the
// kinked losses, the exact log-mean-exp for the entropic one. Grid values
// over-estimate the exact minimum, which keeps the oracle an upper bound.
fn oce_risk_grid(entry: &OceEntry, y: &PathVector) -> f64 {
    match &entry.loss {
        LossFunction::Entropic { lambda } => {
            let mut acc = 0.0;
            for w in 0..y.len() {
                if entry.measure[w] > 0.0 {
                    acc += entry.measure[w] * (-lambda * y[w]).exp();
                }
            }
            acc.ln() / lambda
        }
        loss => {
            let lo = y.min() - 1.0;
            let hi = y.max() + 1.0;
            let objective = |s: f64| -> f64 {
                let mut acc = -s;
                for w in 0..y.len() {
                    if entry.measure[w] > 0.0 {
                        acc += entry.measure[w] * loss.value(s - y[w]);
                    }
                }
                acc
            };
            let mut best = f64::INFINITY;
            let mut center = 0.5 * (lo + hi);
            let mut radius = 0.5 * (hi - lo);
            for _ in 0..4 {
                let mut best_s = center;
                for k in 0..=200 {
                    let s = center - radius + 2.0 * radius * k as f64 / 200.0;
                    let v = objective(s);
                    if v < best {
                        best = v;
                        best_s = s;
                    }
                }
                center = best_s;
                radius /= 50.0;
            }
            best
        }
    }
}

/// Grid search over strategies: each candidate's least feasible capital is
/// explicit (worst shortfall, or worst risk by cash translation), so the
/// minimum over the grid upper-bounds the hedging price and converges to it
/// as the grid refines.
pub fn grid_primal_value(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    payoff: &PathVector,
    grid: GridSpec,
) -> Result<OracleReport, OracleError> {
    let nt = tree.num_non_terminal();
    let mut dims: Vec<(f64, f64)> = Vec::new();
    let tradeable: Vec<usize> = market
        .assets
        .iter()
        .enumerate()
        .filter(|(_, p)| p.tradeable)
        .map(|(j, _)| j)
        .collect();
    for &j in &tradeable {
        let lo = if market.assets[j].short_sale_banned {
            0.0
        } else {
            -grid.bound
        };
        for _ in 0..nt {
            dims.push((lo, grid.bound));
        }
    }
    let theta_base = dims.len();
    for inst in &market.instruments {
        let lo = if inst.bid == f64::NEG_INFINITY && inst.superlinear.is_none() {
            0.0
        } else {
            inst.min_position.max(-grid.bound)
        };
        let hi = if inst.ask == f64::INFINITY && inst.superlinear.is_none() {
            0.0
        } else {
            inst.max_position.min(grid.bound)
        };
        dims.push((lo, hi));
    }
    if dims.len() > GRID_DIM_CAP {
        return Err(OracleError::TooManyDims {
            got: dims.len(),
            cap: GRID_DIM_CAP,
        });
    }

    let mut best = f64::INFINITY;
    let mut count = 0usize;
    let mut index = vec![0usize; dims.len()];
    loop {
        let candidate: Vec<f64> = index
            .iter()
            .zip(&dims)
            .map(|(&i, &(lo, hi))| {
                if grid.steps <= 1 {
                    0.5 * (lo.max(-grid.bound) + hi.min(grid.bound)).clamp(lo, hi) * 0.0 + lo.max(0.0).min(hi)
                } else {
                    lo + (hi - lo) * i as f64 / (grid.steps - 1) as f64
                }
            })
            .collect();
        let mut dynamic = vec![0.0; market.assets.len() * nt];
        for (pos, &j) in tradeable.iter().enumerate() {
            for r in 0..nt {
                dynamic[j * nt + r] = candidate[pos * nt + r];
            }
        }
        let theta = candidate[theta_base..].to_vec();
        let g = oracle_gains(tree, market, &dynamic, &theta);
        let m = match acc {
            AcceptanceSpec::Strict => (0..tree.num_paths())
                .map(|w| payoff[w] - g[w])
                .fold(f64::NEG_INFINITY, f64::max),
            AcceptanceSpec::RobustOce(entries) => {
                let y: PathVector = (0..tree.num_paths()).map(|w| g[w] - payoff[w]).collect();
                entries
                    .iter()
                    .map(|e| oce_risk_grid(e, &y))
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        };
        best = best.min(m);
        count += 1;

        let mut d = 0;
        loop {
            if d == dims.len() {
                return Ok(OracleReport {
                    value: best,
                    method: OracleMethod::StrategyGrid,
                    count,
                    feasible: true,
                    deviation: None,
                });
            }
            index[d] += 1;
            if index[d] < grid.steps.max(1) {
                break;
            }
            index[d] = 0;
            d += 1;
        }
    }
}

// ---------------------------------------------------------------------------
// Measure sampling and a grid-conjugate penalty for weak-duality checks.

/// Penalty of a candidate measure evaluated with grid conjugates instead of
/// the closed forms; a lower bound on the true penalty up to grid slack.
pub fn numeric_penalty(
    tree: &ScenarioTree,
    market: &MarketSpec,
    p: &PathVector,
    radius: f64,
    steps: usize,
) -> Result<f64, OracleError> {
    let mut total = 0.0;
    for (j, policy) in market.assets.iter().enumerate() {
        if !policy.tradeable {
            continue;
        }
        let asset = j + 1;
        let terminal = tree
            .terminal_discounted(asset)
            .map_err(crate::error::EngineError::from)?;
        for &node in tree.non_terminal_nodes() {
            let (mass, moment) = tree
                .node_mass_and_cond_expectation(p, &terminal, node)
                .map_err(crate::error::EngineError::from)?;
            let s = tree
                .discounted_price(asset, node)
                .map_err(crate::error::EngineError::from)?;
            if policy.short_sale_banned || s == 0.0 || mass == 0.0 {
                continue;
            }
            let y = (moment / mass - s) / s;
            let friction = market.friction_at(tree, asset, node);
            let approx = conjugate_numeric_check(&friction, y, radius, steps);
            total += mass * approx.max(0.0) / tree.node(node).numeraire();
        }
    }
    Ok(total)
}

/// Random measures inside the admissible set (all-linear classes): convex
/// mixtures of optimal vertices found under random objectives.
pub fn sample_feasible_measures(
    tree: &ScenarioTree,
    market: &MarketSpec,
    acc: &AcceptanceSpec,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<PathVector>, OracleError> {
    let mut vertices: Vec<PathVector> = Vec::new();
    for _ in 0..8 {
        let objective: PathVector = (0..tree.num_paths())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let dual = assemble_oracle_dual(tree, market, acc, &objective, true)?;
        if let ExactOutcome::Optimal { point, .. } = solve_exact(&dual.lp) {
            let probs: Vec<f64> = point[..tree.num_paths()]
                .iter()
                .map(|v| v.to_f64().unwrap_or(0.0))
                .collect();
            vertices.push(PathVector::new(probs));
        }
    }
    if vertices.is_empty() {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut weights: Vec<f64> = (0..vertices.len())
            .map(|_| rng.gen_range(0.0..1.0))
            .collect();
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        let mut mix = vec![0.0; tree.num_paths()];
        for (v, w) in vertices.iter().zip(&weights) {
            for (slot, &value) in mix.iter_mut().zip(v.iter()) {
                *slot += w * value;
            }
        }
        out.push(PathVector::new(mix));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Closed-form fixtures.

pub struct Fixture {
    pub name: &'static str,
    pub tree: ScenarioTree,
    pub market: MarketSpec,
    pub acceptance: AcceptanceSpec,
    pub payoff: PathVector,
    pub expected_super: f64,
    pub expected_sub: Option<f64>,
    pub expected_measure: Option<PathVector>,
}

pub fn binomial_tree() -> ScenarioTree {
    build_tree(&TreeSpec {
        horizon: 1,
        assets: 1,
        nodes: vec![
            NodeSpec { id: 0, depth: 0, parent: None, prices: vec![1.0, 1.0] },
            NodeSpec { id: 1, depth: 1, parent: Some(0), prices: vec![1.0, 2.0] },
            NodeSpec { id: 2, depth: 1, parent: Some(0), prices: vec![1.0, 0.5] },
        ],
    })
    .expect("static fixture")
}

pub fn trinomial_tree() -> ScenarioTree {
    build_tree(&TreeSpec {
        horizon: 1,
        assets: 1,
        nodes: vec![
            NodeSpec { id: 0, depth: 0, parent: None, prices: vec![1.0, 1.0] },
            NodeSpec { id: 1, depth: 1, parent: Some(0), prices: vec![1.0, 2.0] },
            NodeSpec { id: 2, depth: 1, parent: Some(0), prices: vec![1.0, 1.0] },
            NodeSpec { id: 3, depth: 1, parent: Some(0), prices: vec![1.0, 0.5] },
        ],
    })
    .expect("static fixture")
}

fn uniform(n: usize) -> PathVector {
    PathVector::constant(1.0 / n as f64, n)
}

/// Canonical instances whose prices are known in closed form, used across
/// the acceptance suite: replication weights for the complete binomial
/// market, extreme-point expectations for the trinomial one, log-mean-exp
/// for the entropic bound, capped-density expectations for the
/// value-at-risk bounds, and band endpoints under proportional costs.
pub fn closed_form_fixtures() -> Vec<Fixture> {
    let call2 = PathVector::new(vec![1.0, 0.0]);
    let call3 = PathVector::new(vec![1.0, 0.0, 0.0]);
    let e = 1f64.exp();
    vec![
        Fixture {
            name: "binomial_call_complete",
            tree: binomial_tree(),
            market: MarketSpec::frictionless(1, 1),
            acceptance: AcceptanceSpec::Strict,
            payoff: call2.clone(),
            expected_super: 1.0 / 3.0,
            expected_sub: Some(1.0 / 3.0),
            expected_measure: Some(PathVector::new(vec![1.0 / 3.0, 2.0 / 3.0])),
        },
        Fixture {
            name: "trinomial_call_incomplete",
            tree: trinomial_tree(),
            market: MarketSpec::frictionless(1, 1),
            acceptance: AcceptanceSpec::Strict,
            payoff: call3,
            expected_super: 1.0 / 3.0,
            expected_sub: Some(0.0),
            expected_measure: Some(PathVector::new(vec![1.0 / 3.0, 0.0, 2.0 / 3.0])),
        },
        Fixture {
            name: "no_trading_sup_norm",
            tree: binomial_tree(),
            market: MarketSpec::no_trading(1, 1),
            acceptance: AcceptanceSpec::Strict,
            payoff: call2.clone(),
            expected_super: 1.0,
            expected_sub: Some(0.0),
            expected_measure: None,
        },
        Fixture {
            name: "entropic_log_mean_exp",
            tree: binomial_tree(),
            market: MarketSpec::no_trading(1, 1),
            acceptance: AcceptanceSpec::RobustOce(vec![OceEntry {
                measure: uniform(2),
                loss: LossFunction::Entropic { lambda: 1.0 },
            }]),
            payoff: call2.clone(),
            expected_super: ((e + 1.0) / 2.0).ln(),
            expected_sub: Some(-((1.0 / e + 1.0) / 2.0).ln()),
            expected_measure: Some(PathVector::new(vec![e / (e + 1.0), 1.0 / (e + 1.0)])),
        },
        Fixture {
            name: "avar_half_cap",
            tree: binomial_tree(),
            market: MarketSpec::no_trading(1, 1),
            acceptance: AcceptanceSpec::RobustOce(vec![OceEntry {
                measure: uniform(2),
                loss: LossFunction::Avar { lambda: 0.5 },
            }]),
            payoff: call2.clone(),
            expected_super: 1.0,
            expected_sub: Some(0.0),
            expected_measure: Some(PathVector::new(vec![1.0, 0.0])),
        },
        Fixture {
            name: "avar_fractional_cap",
            tree: binomial_tree(),
            market: MarketSpec::no_trading(1, 1),
            acceptance: AcceptanceSpec::RobustOce(vec![OceEntry {
                measure: uniform(2),
                loss: LossFunction::Avar { lambda: 0.8 },
            }]),
            payoff: call2.clone(),
            expected_super: 0.625,
            expected_sub: Some(0.375),
            expected_measure: Some(PathVector::new(vec![0.625, 0.375])),
        },
        Fixture {
            name: "proportional_band_binomial",
            tree: binomial_tree(),
            market: MarketSpec::proportional(1, 1, 0.1),
            acceptance: AcceptanceSpec::Strict,
            payoff: call2,
            expected_super: 0.4,
            expected_sub: Some(4.0 / 15.0),
            expected_measure: Some(PathVector::new(vec![0.4, 0.6])),
        },
    ]
}

// ---------------------------------------------------------------------------
// Seeded random instances.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarketClass {
    Frictionless,
    Proportional,
    PiecewiseLinear,
    ShortSaleBan,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcceptanceClass {
    Strict,
    Avar,
    Entropic,
}

pub struct RandomInstance {
    pub tree: ScenarioTree,
    pub market: MarketSpec,
    pub acceptance: AcceptanceSpec,
    pub payoff: PathVector,
    /// A measure certifying no-arbitrage by construction, when the
    /// instance was built around one.
    pub witness: Option<PathVector>,
}

pub struct InstanceGenerator {
    rng: ChaCha8Rng,
}

impl InstanceGenerator {
    pub fn new(seed: u64) -> Self {
        InstanceGenerator {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn log_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        (self.rng.gen_range(lo.ln()..hi.ln())).exp()
    }

    // Snapped to a 2^-12 grid: sums and small products of such values stay
    // exactly representable, so centered trees are consistent in exact
    // arithmetic too, which the rational oracle relies on.
    fn dyadic_price(&mut self, lo: f64, hi: f64) -> f64 {
        let v = self.log_uniform(lo, hi);
        (v * 4096.0).round().max(1.0) / 4096.0
    }

    // A random composition of 64 into `parts` pieces of at least 4: the
    // resulting weights k/64 are dyadic and sum to one exactly.
    fn dyadic_weights(&mut self, parts: usize) -> Vec<f64> {
        let mut remaining = 64usize;
        let mut out = Vec::with_capacity(parts);
        for i in 0..parts {
            let left = parts - 1 - i;
            if left == 0 {
                out.push(remaining as f64 / 64.0);
            } else {
                let hi = remaining - 4 * left;
                let k = self.rng.gen_range(4..=hi.min(remaining - 4 * left));
                let k = k.min(hi);
                out.push(k as f64 / 64.0);
                remaining -= k;
            }
        }
        out
    }

    /// A tree with depth 1..=3, branching 2..=3 per node, and one or two
    /// risky assets. When `centered`, interior discounted prices are convex
    /// combinations of their children (exactly, thanks to dyadic grids), so
    /// the path-weight product measure is a martingale measure and the
    /// instance is arbitrage-free; with `supermartingale_slack` interior
    /// prices sit weakly above that average instead.
    pub fn tree(
        &mut self,
        centered: bool,
        supermartingale_slack: bool,
    ) -> (ScenarioTree, PathVector) {
        let horizon = self.rng.gen_range(1..=3usize);
        let assets = self.rng.gen_range(1..=2usize);

        struct Draft {
            depth: usize,
            parent: Option<usize>,
            disc: Vec<f64>,
            numeraire: f64,
            weight: f64,
        }
        let mut drafts: Vec<Draft> = vec![Draft {
            depth: 0,
            parent: None,
            disc: Vec::new(),
            numeraire: 1.0,
            weight: 1.0,
        }];
        drafts[0].disc = (0..assets).map(|_| self.dyadic_price(0.2, 5.0)).collect();
        let mut frontier = vec![0usize];
        for depth in 1..=horizon {
            let mut next = Vec::new();
            for &parent in &frontier {
                let branching = self.rng.gen_range(2..=3usize);
                let weights = self.dyadic_weights(branching);
                for w in weights {
                    let idx = drafts.len();
                    let disc = (0..assets).map(|_| self.dyadic_price(0.2, 5.0)).collect();
                    // k/64 with k in 58..=73 keeps the numeraire near one
                    // and products exact.
                    let numeraire = self.rng.gen_range(58..=73u32) as f64 / 64.0;
                    drafts.push(Draft {
                        depth,
                        parent: Some(parent),
                        disc,
                        numeraire,
                        weight: w,
                    });
                    next.push(idx);
                }
            }
            frontier = next;
        }
        if centered {
            // Replace interior discounted prices depth by depth (from the
            // bottom) with the weighted child average, plus optional slack.
            for depth in (0..horizon).rev() {
                for idx in 0..drafts.len() {
                    if drafts[idx].depth != depth {
                        continue;
                    }
                    let children: Vec<usize> = (0..drafts.len())
                        .filter(|&c| drafts[c].parent == Some(idx))
                        .collect();
                    for a in 0..assets {
                        let avg: f64 = children
                            .iter()
                            .map(|&c| drafts[c].weight * drafts[c].disc[a])
                            .sum();
                        let slack = if supermartingale_slack {
                            // Additive dyadic slack keeps the bit budget flat.
                            self.rng.gen_range(0..=256u32) as f64 / 1024.0
                        } else {
                            0.0
                        };
                        drafts[idx].disc[a] = avg + slack;
                    }
                }
            }
        }
        let nodes: Vec<NodeSpec> = drafts
            .iter()
            .enumerate()
            .map(|(id, d)| {
                let mut prices = vec![d.numeraire];
                prices.extend(d.disc.iter().map(|s| s * d.numeraire));
                NodeSpec {
                    id,
                    depth: d.depth,
                    parent: d.parent,
                    prices,
                }
            })
            .collect();
        let tree = build_tree(&TreeSpec {
            horizon,
            assets,
            nodes,
        })
        .expect("generated tree is valid");
        // Path-weight product measure, in the tree's path order.
        let witness: PathVector = (0..tree.num_paths())
            .map(|p| {
                tree.path_nodes(p)
                    .iter()
                    .map(|&n| {
                        let d = &drafts[tree.node(n).spec_id];
                        if d.depth == 0 {
                            1.0
                        } else {
                            d.weight
                        }
                    })
                    .product()
            })
            .collect();
        (tree, witness)
    }

    fn frictions(&mut self, class: MarketClass, horizon: usize) -> Vec<Friction> {
        (0..horizon)
            .map(|_| match class {
                MarketClass::Frictionless | MarketClass::ShortSaleBan => Friction::Zero,
                MarketClass::Proportional => Friction::Proportional {
                    epsilon: self.rng.gen_range(0.0..0.3),
                },
                MarketClass::PiecewiseLinear => {
                    let b = self.rng.gen_range(0.3..1.5);
                    let s1 = self.rng.gen_range(0.01..0.25);
                    let s2 = s1 + self.rng.gen_range(0.0..0.3);
                    Friction::PiecewiseLinear(
                        PiecewiseCost::new(vec![-b, 0.0, b], vec![-s2, -s1, s1, s2])
                            .expect("valid cost"),
                    )
                }
                MarketClass::Power => Friction::Power {
                    epsilon: self.rng.gen_range(0.05..0.5),
                    exponent: [1.5, 2.0, 3.0][self.rng.gen_range(0..3)],
                },
            })
            .collect()
    }

    /// A full random instance. `arbitrage_free` centers the tree and prices
    /// instruments off the witness measure; otherwise everything is wild
    /// and arbitrage is likely.
    pub fn instance(
        &mut self,
        market_class: MarketClass,
        acceptance_class: AcceptanceClass,
        arbitrage_free: bool,
    ) -> RandomInstance {
        let banned = market_class == MarketClass::ShortSaleBan;
        let slack = banned && self.rng.gen_bool(0.7);
        let (tree, witness) = self.tree(arbitrage_free, slack);
        let horizon = tree.horizon();
        let assets = (0..tree.num_assets())
            .map(|_| crate::market::AssetPolicy {
                tradeable: true,
                short_sale_banned: banned,
                frictions: self.frictions(market_class, horizon),
                epsilon_overrides: Default::default(),
            })
            .collect();
        let mut market = MarketSpec {
            assets,
            instruments: Vec::new(),
        };
        if arbitrage_free && self.rng.gen_bool(0.4) {
            // A quoted call priced off the witness keeps the book fair; the
            // dyadic strike keeps the fair price exactly representable.
            let strikes = tree.terminal_discounted(1).expect("asset 1");
            let mean = strikes.values().iter().sum::<f64>() / strikes.len() as f64;
            let k = (self.rng.gen_range(0.5..2.0) * mean * 4096.0).round() / 4096.0;
            let payoff: PathVector = strikes.iter().map(|&s| (s - k).max(0.0)).collect();
            let fair = witness.dot(&payoff);
            let spread = self.rng.gen_range(0.001..0.1);
            market.instruments.push(StaticInstrument::quoted(
                "call_oracle",
                payoff,
                fair - spread,
                fair + spread,
            ));
        }

        let acceptance = match acceptance_class {
            AcceptanceClass::Strict => AcceptanceSpec::Strict,
            AcceptanceClass::Avar => {
                let n = tree.num_paths();
                let mut entries = Vec::new();
                for _ in 0..self.rng.gen_range(1..=2usize) {
                    let mut q: Vec<f64> =
                        (0..n).map(|_| self.rng.gen_range(0.05..1.0)).collect();
                    let total: f64 = q.iter().sum();
                    for v in &mut q {
                        *v /= total;
                    }
                    let q = PathVector::new(q);
                    let lambda = if arbitrage_free {
                        let max_ratio = (0..n)
                            .map(|w| witness[w] / q[w])
                            .fold(0.0f64, f64::max)
                            .max(1e-9);
                        (self.rng.gen_range(0.5..1.0) / max_ratio).min(1.0)
                    } else {
                        self.rng.gen_range(0.1..1.0)
                    };
                    entries.push(OceEntry {
                        measure: q,
                        loss: LossFunction::Avar { lambda },
                    });
                }
                AcceptanceSpec::RobustOce(entries)
            }
            AcceptanceClass::Entropic => {
                let n = tree.num_paths();
                let lambda = self.rng.gen_range(0.4..2.5);
                let mut entries = vec![];
                if arbitrage_free {
                    // Including the witness keeps the relaxed no-arbitrage
                    // condition valid by construction.
                    entries.push(OceEntry {
                        measure: witness.clone(),
                        loss: LossFunction::Entropic { lambda },
                    });
                }
                let extra = if entries.is_empty() {
                    self.rng.gen_range(1..=2usize)
                } else {
                    self.rng.gen_range(0..=1usize)
                };
                for _ in 0..extra {
                    let mut q: Vec<f64> =
                        (0..n).map(|_| self.rng.gen_range(0.05..1.0)).collect();
                    let total: f64 = q.iter().sum();
                    for v in &mut q {
                        *v /= total;
                    }
                    entries.push(OceEntry {
                        measure: PathVector::new(q),
                        loss: LossFunction::Entropic { lambda },
                    });
                }
                AcceptanceSpec::RobustOce(entries)
            }
        };

        let payoff: PathVector = match self.rng.gen_range(0..3) {
            0 => {
                let s = tree.terminal_discounted(1).expect("asset 1");
                let k = self.rng.gen_range(0.3..2.0);
                s.iter().map(|&v| (v - k).max(0.0)).collect()
            }
            1 => (0..tree.num_paths())
                .map(|_| self.rng.gen_range(-1.0..2.0))
                .collect(),
            _ => {
                let s = tree.terminal_discounted(1).expect("asset 1");
                let k = self.rng.gen_range(0.3..2.0);
                s.iter().map(|&v| (k - v).max(0.0)).collect()
            }
        };

        RandomInstance {
            tree,
            market,
            acceptance,
            payoff,
            witness: if arbitrage_free { Some(witness) } else { None },
        }
    }
}
