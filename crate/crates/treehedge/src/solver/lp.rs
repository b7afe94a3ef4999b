//! Dense two-phase simplex over general bounds, with row duals, Farkas-type
//! certificates, and a fixed tie-breaking rule so identical inputs replay
//! identical pivot sequences.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("objective has {got} entries for {want} variables")]
    ObjectiveLength { got: usize, want: usize },
    #[error("bounds list has {got} entries for {want} variables")]
    BoundsLength { got: usize, want: usize },
    #[error("row {row} references variable {var} out of range")]
    BadIndex { row: usize, var: usize },
    #[error("row {0} has a non-finite coefficient or right-hand side")]
    NonFiniteRow(usize),
    #[error("objective coefficient {0} is not finite")]
    NonFiniteObjective(usize),
    #[error("variable {0} has an invalid bound pair")]
    BadBounds(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub relation: Relation,
    pub rhs: f64,
}

/// Sparse-row linear program with per-variable bounds (infinities allowed).
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub bounds: Vec<(f64, f64)>,
}

impl LinearProgram {
    /// A program over `num_vars` free variables with zero objective.
    pub fn new(sense: Sense, num_vars: usize) -> Self {
        LinearProgram {
            sense,
            objective: vec![0.0; num_vars],
            rows: Vec::new(),
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, relation: Relation, rhs: f64) {
        self.rows.push(Row {
            coeffs,
            relation,
            rhs,
        });
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let n = self.num_vars();
        if self.bounds.len() != n {
            return Err(SolveError::BoundsLength {
                got: self.bounds.len(),
                want: n,
            });
        }
        for (j, c) in self.objective.iter().enumerate() {
            if !c.is_finite() {
                return Err(SolveError::NonFiniteObjective(j));
            }
        }
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo.is_nan() || hi.is_nan() || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
                return Err(SolveError::BadBounds(j));
            }
        }
        for (r, row) in self.rows.iter().enumerate() {
            if !row.rhs.is_finite() {
                return Err(SolveError::NonFiniteRow(r));
            }
            for &(var, coeff) in &row.coeffs {
                if var >= n {
                    return Err(SolveError::BadIndex { row: r, var });
                }
                if !coeff.is_finite() {
                    return Err(SolveError::NonFiniteRow(r));
                }
            }
        }
        Ok(())
    }

    /// Plain-text dump, one row per line: relation, right-hand side, then
    /// sparse `index:coefficient` pairs. Header lines carry the variable
    /// count, sense, objective and bounds.
    pub fn dump(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let sense = match self.sense {
            Sense::Minimize => "min",
            Sense::Maximize => "max",
        };
        let _ = writeln!(out, "# vars={} sense={}", self.num_vars(), sense);
        let mut obj = String::new();
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                let _ = write!(obj, " {j}:{c}");
            }
        }
        let _ = writeln!(out, "# objective:{obj}");
        let mut bounds = String::new();
        for (j, &(lo, hi)) in self.bounds.iter().enumerate() {
            if lo != f64::NEG_INFINITY || hi != f64::INFINITY {
                let _ = write!(bounds, " {j}:[{lo},{hi}]");
            }
        }
        let _ = writeln!(out, "# bounds:{bounds}");
        for row in &self.rows {
            let rel = match row.relation {
                Relation::Le => "<=",
                Relation::Eq => "==",
                Relation::Ge => ">=",
            };
            let _ = write!(out, "{rel} {}", row.rhs);
            for &(var, coeff) in &row.coeffs {
                let _ = write!(out, " {var}:{coeff}");
            }
            let _ = writeln!(out);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Present for Optimal (finite) and Unbounded (signed infinity).
    pub value: Option<f64>,
    pub point: Option<Vec<f64>>,
    /// One multiplier per input row (Optimal only). With reduced costs
    /// z_j = c_j - y·A_j, the identity
    /// `value = y·rhs + sum_j z_j·(binding bound of j)` holds.
    pub row_duals: Option<Vec<f64>>,
    /// The right side of the identity above, reconstructed from the
    /// multipliers; |value - dual_value| <= tol certifies optimality.
    pub dual_value: Option<f64>,
    /// Unbounded: an improving ray in the original variable space.
    /// Infeasible: Farkas-type row multipliers witnessing the empty set.
    pub ray: Option<Vec<f64>>,
    pub iterations: usize,
    /// For iteration-limited convex solves: (best feasible value, best bound).
    pub bracket: Option<(f64, f64)>,
}

impl SolveOutcome {
    pub(crate) fn bare(status: SolveStatus) -> Self {
        SolveOutcome {
            status,
            value: None,
            point: None,
            row_duals: None,
            dual_value: None,
            ray: None,
            iterations: 0,
            bracket: None,
        }
    }
}

// How an original variable maps into the standard-form columns.
#[derive(Debug, Clone, Copy)]
enum VarMap {
    Fixed(f64),
    Shift { col: usize, offset: f64 },
    NegShift { col: usize, offset: f64 },
    Split { pos: usize, neg: usize },
}

struct StandardRow {
    coeffs: Vec<(usize, f64)>,
    relation: Relation,
    rhs: f64,
    negated: bool,
    /// Index into the original row list, or None for internal bound rows.
    origin: Option<usize>,
}

// Entries below this never pivot: degenerate eliminations leave dust around
// 1e-12 on unit-scale data, and dividing a row by dust destroys the tableau.
const PIVOT_TOL: f64 = 1e-9;

struct Tableau {
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    n_cols: usize,
    is_artificial: Vec<bool>,
    iterations: usize,
    iter_limit: usize,
    tol: f64,
}

impl Tableau {
    fn pivot(&mut self, cost: &mut [f64], other: Option<&mut [f64]>, r: usize, e: usize) {
        let inv = 1.0 / self.rows[r][e];
        for v in self.rows[r].iter_mut() {
            *v *= inv;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i != r {
                let f = row[e];
                if f != 0.0 {
                    for (v, pv) in row.iter_mut().zip(pivot_row.iter()) {
                        *v -= f * pv;
                    }
                    row[e] = 0.0;
                }
            }
        }
        for target in std::iter::once(cost).chain(other) {
            let f = target[e];
            if f != 0.0 {
                for (v, pv) in target.iter_mut().zip(pivot_row.iter()) {
                    *v -= f * pv;
                }
                target[e] = 0.0;
            }
        }
        self.basis[r] = e;
        self.iterations += 1;
    }

    /// Run one simplex phase on the given reduced-cost row. Returns
    /// `Ok(None)` at optimality, `Ok(Some(col))` when unbounded in `col`,
    /// `Err(())` when the iteration budget runs out.
    fn run_phase(
        &mut self,
        cost: &mut [f64],
        mut shadow: Option<&mut [f64]>,
        allow_artificial: bool,
    ) -> Result<Option<usize>, ()> {
        let m = self.rows.len();
        let mut stall = 0usize;
        let stall_limit = 60 + (m + self.n_cols) / 4;
        // Degenerate pivoting leaves +-1e-16 dust on basic values; treating
        // it as a genuine ratio defeats the anti-cycling rule, so the ratio
        // test reads dust as an exact zero.
        let rhs_scale = 1e-11
            * (1.0
                + (0..m)
                    .map(|i| self.rows[i][self.n_cols].abs())
                    .fold(0.0, f64::max));
        loop {
            if self.iterations >= self.iter_limit {
                return Err(());
            }
            // Entering column: most negative reduced cost, lowest index on
            // ties; plain Bland after a degenerate stall.
            let mut enter: Option<usize> = None;
            if stall > stall_limit {
                for j in 0..self.n_cols {
                    if !allow_artificial && self.is_artificial[j] {
                        continue;
                    }
                    if cost[j] < -self.tol {
                        enter = Some(j);
                        break;
                    }
                }
            } else {
                let mut best = -self.tol;
                for j in 0..self.n_cols {
                    if !allow_artificial && self.is_artificial[j] {
                        continue;
                    }
                    if cost[j] < best {
                        best = cost[j];
                        enter = Some(j);
                    }
                }
            }
            let e = match enter {
                Some(e) => e,
                None => return Ok(None),
            };
            // Leaving row: minimum ratio. Among near-ties take the largest
            // pivot entry (stability), then the lowest basic index; under
            // Bland's rule the tie set is the exact minimum and the lowest
            // basic index leaves, which closes the cycling loophole.
            let ratio_of = |row: &[f64], a: f64| -> f64 {
                let b = row[self.n_cols];
                if b.abs() <= rhs_scale {
                    0.0
                } else {
                    b / a
                }
            };
            let mut best_ratio = f64::INFINITY;
            for i in 0..m {
                let a = self.rows[i][e];
                if a > PIVOT_TOL {
                    best_ratio = best_ratio.min(ratio_of(&self.rows[i], a));
                }
            }
            if best_ratio == f64::INFINITY {
                return Ok(Some(e));
            }
            let tie_tol = if stall > stall_limit {
                0.0
            } else {
                1e-9 * (1.0 + best_ratio.abs())
            };
            let mut leave: Option<usize> = None;
            for i in 0..m {
                let a = self.rows[i][e];
                if a > PIVOT_TOL && ratio_of(&self.rows[i], a) <= best_ratio + tie_tol {
                    let better = match leave {
                        None => true,
                        Some(l) => {
                            if stall > stall_limit {
                                self.basis[i] < self.basis[l]
                            } else {
                                a > self.rows[l][e] * (1.0 + 1e-12)
                                    || (a >= self.rows[l][e] * (1.0 - 1e-12)
                                        && self.basis[i] < self.basis[l])
                            }
                        }
                    };
                    if better {
                        leave = Some(i);
                    }
                }
            }
            let r = leave.expect("a finite ratio implies an eligible row");
            if best_ratio.abs() <= self.tol {
                stall += 1;
            } else {
                stall = 0;
            }
            let pivot_mag = self.rows[r][e];
            self.pivot(cost, shadow.as_deref_mut(), r, e);
            if std::env::var_os("TREEHEDGE_LP_STALL").is_some() && self.iterations % 2000 == 0 {
                eprintln!(
                    "iter {}: obj {:.9e} stall {} bland {} ratio {:.2e} pivot {:.2e}",
                    self.iterations, -cost[self.n_cols], stall, stall > stall_limit, best_ratio, pivot_mag
                );
            }
            if std::env::var_os("TREEHEDGE_LP_TRACE").is_some() {
                let min_rhs = (0..m)
                    .map(|i| self.rows[i][self.n_cols])
                    .fold(f64::INFINITY, f64::min);
                eprintln!(
                    "pivot #{}: enter {e} leave-row {r} ratio {best_ratio:.3e} pivot {pivot_mag:.3e} min-rhs {min_rhs:.3e}",
                    self.iterations
                );
            }
        }
    }
}

/// Solve with the given tolerance. Optimal outcomes carry the point, row
/// multipliers and a reconstructed dual value; infeasibility and
/// unboundedness carry certificates.
pub fn solve_lp(lp: &LinearProgram, tol: f64) -> Result<SolveOutcome, SolveError> {
    lp.validate()?;
    let tol = if tol > 0.0 { tol } else { super::DEFAULT_LP_TOL };
    let n = lp.num_vars();

    // Internal sense: minimize.
    let maximize = lp.sense == Sense::Maximize;
    let sign = if maximize { -1.0 } else { 1.0 };
    let c_orig_min: Vec<f64> = lp.objective.iter().map(|c| sign * c).collect();

    // Substitutions onto the nonnegative orthant.
    let mut maps = Vec::with_capacity(n);
    let mut c_std: Vec<f64> = Vec::new();
    let mut const_offset = 0.0;
    let mut extra_rows: Vec<StandardRow> = Vec::new();
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if lo > hi {
            return Ok(SolveOutcome::bare(SolveStatus::Infeasible));
        }
        let c = c_orig_min[j];
        if lo == hi {
            maps.push(VarMap::Fixed(lo));
            const_offset += c * lo;
        } else if lo.is_finite() {
            let col = c_std.len();
            c_std.push(c);
            maps.push(VarMap::Shift { col, offset: lo });
            const_offset += c * lo;
            if hi.is_finite() {
                extra_rows.push(StandardRow {
                    coeffs: vec![(col, 1.0)],
                    relation: Relation::Le,
                    rhs: hi - lo,
                    negated: false,
                    origin: None,
                });
            }
        } else if hi.is_finite() {
            let col = c_std.len();
            c_std.push(-c);
            maps.push(VarMap::NegShift { col, offset: hi });
            const_offset += c * hi;
        } else {
            let pos = c_std.len();
            c_std.push(c);
            let neg = c_std.len();
            c_std.push(-c);
            maps.push(VarMap::Split { pos, neg });
        }
    }

    // Rows in standard columns with nonnegative right-hand sides.
    let mut std_rows: Vec<StandardRow> = Vec::with_capacity(lp.rows.len() + extra_rows.len());
    for (r, row) in lp.rows.iter().enumerate() {
        let mut dense: Vec<f64> = vec![0.0; c_std.len()];
        let mut rhs = row.rhs;
        for &(var, coeff) in &row.coeffs {
            match maps[var] {
                VarMap::Fixed(v) => rhs -= coeff * v,
                VarMap::Shift { col, offset } => {
                    dense[col] += coeff;
                    rhs -= coeff * offset;
                }
                VarMap::NegShift { col, offset } => {
                    dense[col] -= coeff;
                    rhs -= coeff * offset;
                }
                VarMap::Split { pos, neg } => {
                    dense[pos] += coeff;
                    dense[neg] -= coeff;
                }
            }
        }
        let coeffs: Vec<(usize, f64)> = dense
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, &v)| (j, v))
            .collect();
        std_rows.push(StandardRow {
            coeffs,
            relation: row.relation,
            rhs,
            negated: false,
            origin: Some(r),
        });
    }
    std_rows.extend(extra_rows);
    for row in &mut std_rows {
        if row.rhs < 0.0 {
            row.rhs = -row.rhs;
            for c in &mut row.coeffs {
                c.1 = -c.1;
            }
            row.relation = match row.relation {
                Relation::Le => Relation::Ge,
                Relation::Eq => Relation::Eq,
                Relation::Ge => Relation::Le,
            };
            row.negated = true;
        }
    }

    // Column layout: structural | slack or surplus | artificial.
    let m = std_rows.len();
    let n_struct = c_std.len();
    let mut n_cols = n_struct;
    let mut slack_col: Vec<Option<usize>> = vec![None; m];
    for (i, row) in std_rows.iter().enumerate() {
        if matches!(row.relation, Relation::Le | Relation::Ge) {
            slack_col[i] = Some(n_cols);
            n_cols += 1;
        }
    }
    let mut art_col: Vec<Option<usize>> = vec![None; m];
    for (i, row) in std_rows.iter().enumerate() {
        if matches!(row.relation, Relation::Ge | Relation::Eq) {
            art_col[i] = Some(n_cols);
            n_cols += 1;
        }
    }
    let mut is_artificial = vec![false; n_cols];
    for a in art_col.iter().flatten() {
        is_artificial[*a] = true;
    }

    let mut tab = Tableau {
        rows: vec![vec![0.0; n_cols + 1]; m],
        basis: vec![0; m],
        n_cols,
        is_artificial,
        iterations: 0,
        iter_limit: 5000 + 60 * (m + n_cols),
        tol,
    };
    for (i, row) in std_rows.iter().enumerate() {
        for &(j, v) in &row.coeffs {
            tab.rows[i][j] = v;
        }
        tab.rows[i][n_cols] = row.rhs;
        match row.relation {
            Relation::Le => {
                let s = slack_col[i].unwrap();
                tab.rows[i][s] = 1.0;
                tab.basis[i] = s;
            }
            Relation::Ge => {
                tab.rows[i][slack_col[i].unwrap()] = -1.0;
                let a = art_col[i].unwrap();
                tab.rows[i][a] = 1.0;
                tab.basis[i] = a;
            }
            Relation::Eq => {
                let a = art_col[i].unwrap();
                tab.rows[i][a] = 1.0;
                tab.basis[i] = a;
            }
        }
    }

    let any_artificial = art_col.iter().any(|a| a.is_some());
    if any_artificial {
        // Phase 1: minimize the artificial total.
        let mut cost1 = vec![0.0; n_cols + 1];
        for (i, a) in art_col.iter().enumerate() {
            if a.is_some() {
                for j in 0..=n_cols {
                    cost1[j] -= tab.rows[i][j];
                }
            }
        }
        for a in art_col.iter().flatten() {
            cost1[*a] += 1.0;
        }
        match tab.run_phase(&mut cost1, None, true) {
            Err(()) => {
                let mut out = SolveOutcome::bare(SolveStatus::IterLimit);
                out.iterations = tab.iterations;
                return Ok(out);
            }
            Ok(Some(_)) => unreachable!("phase one is bounded below by zero"),
            Ok(None) => {}
        }
        let infeasibility = -cost1[n_cols];
        let scale = 1.0 + std_rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
        if infeasibility > tol * scale {
            let mut farkas = vec![0.0; lp.rows.len()];
            for i in 0..m {
                let y = if let Some(a) = art_col[i] {
                    1.0 - cost1[a]
                } else {
                    -cost1[slack_col[i].unwrap()]
                };
                let y = if std_rows[i].negated { -y } else { y };
                if let Some(orig) = std_rows[i].origin {
                    farkas[orig] = y;
                }
            }
            let mut out = SolveOutcome::bare(SolveStatus::Infeasible);
            out.ray = Some(farkas);
            out.iterations = tab.iterations;
            return Ok(out);
        }
        // Drive residual basic artificials out; silence redundant rows.
        for i in 0..m {
            if tab.is_artificial[tab.basis[i]] {
                let entering = (0..n_cols)
                    .find(|&j| !tab.is_artificial[j] && tab.rows[i][j].abs() > 1e-9);
                match entering {
                    Some(e) => tab.pivot(&mut cost1, None, i, e),
                    None => {
                        for j in 0..n_cols {
                            if !tab.is_artificial[j] {
                                tab.rows[i][j] = 0.0;
                            }
                        }
                        tab.rows[i][n_cols] = 0.0;
                    }
                }
            }
        }
    }

    // Phase 2: reduced costs of the real objective under the current basis.
    let mut cost2 = vec![0.0; n_cols + 1];
    for (j, &c) in c_std.iter().enumerate() {
        cost2[j] = c;
    }
    for i in 0..m {
        let b = tab.basis[i];
        let cb = if b < n_struct { c_std[b] } else { 0.0 };
        if cb != 0.0 {
            for j in 0..=n_cols {
                cost2[j] -= cb * tab.rows[i][j];
            }
        }
    }
    let unbounded = match tab.run_phase(&mut cost2, None, false) {
        Err(()) => {
            let mut out = SolveOutcome::bare(SolveStatus::IterLimit);
            out.iterations = tab.iterations;
            return Ok(out);
        }
        Ok(u) => u,
    };

    if let Some(e) = unbounded {
        let mut d_std = vec![0.0; n_struct];
        if e < n_struct {
            d_std[e] = 1.0;
        }
        for i in 0..m {
            if tab.basis[i] < n_struct && tab.rows[i][e] != 0.0 {
                d_std[tab.basis[i]] = -tab.rows[i][e];
            }
        }
        let mut ray = vec![0.0; n];
        for (j, map) in maps.iter().enumerate() {
            ray[j] = match *map {
                VarMap::Fixed(_) => 0.0,
                VarMap::Shift { col, .. } => d_std[col],
                VarMap::NegShift { col, .. } => -d_std[col],
                VarMap::Split { pos, neg } => d_std[pos] - d_std[neg],
            };
        }
        let mut out = SolveOutcome::bare(SolveStatus::Unbounded);
        out.value = Some(if maximize { f64::INFINITY } else { f64::NEG_INFINITY });
        out.ray = Some(ray);
        out.iterations = tab.iterations;
        return Ok(out);
    }

    // Optimal: point, duals, and the reconstructed dual objective.
    let mut x_std = vec![0.0; n_cols];
    for i in 0..m {
        x_std[tab.basis[i]] = tab.rows[i][n_cols];
    }
    let mut point = vec![0.0; n];
    for (j, map) in maps.iter().enumerate() {
        let raw = match *map {
            VarMap::Fixed(v) => v,
            VarMap::Shift { col, offset } => offset + x_std[col],
            VarMap::NegShift { col, offset } => offset - x_std[col],
            VarMap::Split { pos, neg } => x_std[pos] - x_std[neg],
        };
        // Snap elimination dust back into the declared bounds.
        point[j] = raw.clamp(lp.bounds[j].0, lp.bounds[j].1);
    }
    let mut value_min = const_offset;
    for i in 0..m {
        if tab.basis[i] < n_struct {
            value_min += c_std[tab.basis[i]] * tab.rows[i][n_cols];
        }
    }

    let mut duals_min = vec![0.0; lp.rows.len()];
    for i in 0..m {
        let y = if let Some(a) = art_col[i] {
            -cost2[a]
        } else {
            -cost2[slack_col[i].unwrap()]
        };
        let y = if std_rows[i].negated { -y } else { y };
        if let Some(orig) = std_rows[i].origin {
            duals_min[orig] = y;
        }
    }

    let mut dual_value_min = 0.0;
    for (r, row) in lp.rows.iter().enumerate() {
        dual_value_min += duals_min[r] * row.rhs;
    }
    let mut z = c_orig_min;
    for (r, row) in lp.rows.iter().enumerate() {
        let y = duals_min[r];
        if y != 0.0 {
            for &(var, coeff) in &row.coeffs {
                z[var] -= y * coeff;
            }
        }
    }
    for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
        if z[j] > tol {
            dual_value_min += z[j] * lo; // infinite bound propagates and flags
        } else if z[j] < -tol {
            dual_value_min += z[j] * hi;
        }
    }

    let flip = if maximize { -1.0 } else { 1.0 };
    Ok(SolveOutcome {
        status: SolveStatus::Optimal,
        value: Some(flip * value_min),
        point: Some(point),
        row_duals: Some(duals_min.iter().map(|y| flip * y).collect()),
        dual_value: Some(flip * dual_value_min),
        ray: None,
        iterations: tab.iterations,
        bracket: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn approx(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn maximize_simple_cap() {
        let mut lp = LinearProgram::new(Sense::Maximize, 1);
        lp.objective[0] = 1.0;
        lp.add_row(vec![(0, 1.0)], Relation::Le, 3.0);
        let out = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(approx(out.value.unwrap(), 3.0, 1e-9));
        assert!(approx(out.point.unwrap()[0], 3.0, 1e-9));
        assert!(approx(out.dual_value.unwrap(), 3.0, 1e-8));
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        let mut lp = LinearProgram::new(Sense::Maximize, 1);
        lp.objective[0] = 1.0;
        lp.add_row(vec![(0, 1.0)], Relation::Ge, 1.0);
        lp.add_row(vec![(0, 1.0)], Relation::Le, 0.0);
        let out = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
        assert_eq!(out.ray.unwrap().len(), 2);
    }

    #[test]
    fn free_variable_unbounded() {
        let mut lp = LinearProgram::new(Sense::Maximize, 1);
        lp.objective[0] = 1.0;
        let out = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(out.status, SolveStatus::Unbounded);
        assert_eq!(out.value.unwrap(), f64::INFINITY);
        assert!(out.ray.unwrap()[0] > 0.0);
    }

    #[test]
    fn equality_and_bounds() {
        // min x + 2y st x + y = 1, 0 <= x <= 0.25, y >= 0
        let mut lp = LinearProgram::new(Sense::Minimize, 2);
        lp.objective = vec![1.0, 2.0];
        lp.bounds = vec![(0.0, 0.25), (0.0, f64::INFINITY)];
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 1.0);
        let out = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        let p = out.point.unwrap();
        assert!(approx(p[0], 0.25, 1e-9));
        assert!(approx(p[1], 0.75, 1e-9));
        assert!(approx(out.value.unwrap(), 1.75, 1e-9));
        assert!(approx(out.dual_value.unwrap(), 1.75, 1e-8));
    }

    #[test]
    fn negative_bounds_and_negshift() {
        // max -x st x <= -1 (bound), x >= -2 (row): optimum x = -2.
        let mut lp = LinearProgram::new(Sense::Maximize, 1);
        lp.objective[0] = -1.0;
        lp.bounds[0] = (f64::NEG_INFINITY, -1.0);
        lp.add_row(vec![(0, 1.0)], Relation::Ge, -2.0);
        let out = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(approx(out.point.unwrap()[0], -2.0, 1e-9));
        assert!(approx(out.value.unwrap(), 2.0, 1e-9));
        assert!(approx(out.dual_value.unwrap(), 2.0, 1e-8));
    }

    #[test]
    fn fixed_variables_substitute() {
        // min y st x fixed at 3, x + y >= 5
        let mut lp = LinearProgram::new(Sense::Minimize, 2);
        lp.objective = vec![0.0, 1.0];
        lp.bounds = vec![(3.0, 3.0), (0.0, f64::INFINITY)];
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Ge, 5.0);
        let out = solve_lp(&lp, 1e-9).unwrap();
        let p = out.point.unwrap();
        assert!(approx(p[0], 3.0, 1e-12));
        assert!(approx(p[1], 2.0, 1e-9));
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let mut lp = LinearProgram::new(Sense::Minimize, 1);
        lp.bounds[0] = (1.0, 0.0);
        let out = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
    }

    #[test]
    fn degenerate_program_terminates() {
        let mut lp = LinearProgram::new(Sense::Maximize, 3);
        lp.objective = vec![0.75, -150.0, 0.02];
        lp.bounds = vec![(0.0, f64::INFINITY); 3];
        lp.add_row(vec![(0, 0.25), (1, -60.0), (2, -0.04)], Relation::Le, 0.0);
        lp.add_row(vec![(0, 0.5), (1, -90.0), (2, -0.02)], Relation::Le, 0.0);
        lp.add_row(vec![(2, 1.0)], Relation::Le, 1.0);
        let out = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(out.value.unwrap().is_finite());
    }

    #[test]
    fn redundant_rows_are_harmless() {
        // The same equality twice plus its sum: rank-deficient system.
        let mut lp = LinearProgram::new(Sense::Minimize, 2);
        lp.objective = vec![1.0, 1.0];
        lp.bounds = vec![(0.0, f64::INFINITY); 2];
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 2.0);
        lp.add_row(vec![(0, 1.0), (1, 1.0)], Relation::Eq, 2.0);
        lp.add_row(vec![(0, 2.0), (1, 2.0)], Relation::Eq, 4.0);
        let out = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!(approx(out.value.unwrap(), 2.0, 1e-9));
        assert!(approx(out.dual_value.unwrap(), 2.0, 1e-8));
    }

    #[test]
    fn duals_certify_random_programs() {
        // Deterministic pseudo-random programs; multipliers must reproduce
        // the optimal value through the bound-aware identity.
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut solved = 0;
        for _ in 0..300 {
            let n = 2 + (next() * 4.0) as usize;
            let m = 1 + (next() * 4.0) as usize;
            let mut lp = LinearProgram::new(Sense::Minimize, n);
            for j in 0..n {
                lp.objective[j] = (next() - 0.3) * 4.0;
                lp.bounds[j] = match (next() * 4.0) as usize {
                    0 => (0.0, f64::INFINITY),
                    1 => (-1.0, 2.0),
                    2 => (f64::NEG_INFINITY, 3.0),
                    _ => (0.0, 5.0),
                };
            }
            for _ in 0..m {
                let coeffs: Vec<(usize, f64)> =
                    (0..n).map(|j| (j, (next() - 0.5) * 3.0)).collect();
                let relation = match (next() * 3.0) as usize {
                    0 => Relation::Le,
                    1 => Relation::Ge,
                    _ => Relation::Eq,
                };
                lp.add_row(coeffs, relation, (next() - 0.4) * 2.0);
            }
            let out = solve_lp(&lp, 1e-9).unwrap();
            if out.status == SolveStatus::Optimal {
                solved += 1;
                let v = out.value.unwrap();
                let dv = out.dual_value.unwrap();
                assert!(
                    (v - dv).abs() <= 1e-6 * (1.0 + v.abs()),
                    "primal {v} vs dual {dv}\n{}",
                    lp.dump()
                );
                let p = out.point.unwrap();
                for row in &lp.rows {
                    let lhs: f64 = row.coeffs.iter().map(|&(j, c)| c * p[j]).sum();
                    match row.relation {
                        Relation::Le => assert!(lhs <= row.rhs + 1e-7),
                        Relation::Ge => assert!(lhs >= row.rhs - 1e-7),
                        Relation::Eq => assert!((lhs - row.rhs).abs() <= 1e-7),
                    }
                }
                for (j, &(lo, hi)) in lp.bounds.iter().enumerate() {
                    assert!(p[j] >= lo - 1e-7 && p[j] <= hi + 1e-7);
                }
            }
        }
        assert!(solved > 50, "expected a healthy share of solvable programs, got {solved}");
    }

    #[test]
    fn deterministic_replay() {
        let mut lp = LinearProgram::new(Sense::Maximize, 3);
        lp.objective = vec![1.0, 2.0, -1.0];
        lp.bounds = vec![(0.0, f64::INFINITY); 3];
        lp.add_row(vec![(0, 1.0), (1, 1.0), (2, 1.0)], Relation::Le, 4.0);
        lp.add_row(vec![(0, 1.0), (1, 3.0)], Relation::Le, 6.0);
        let a = solve_lp(&lp, 1e-9).unwrap();
        let b = solve_lp(&lp, 1e-9).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.point.unwrap(), b.point.unwrap());
    }

    #[test]
    fn dump_format() {
        let mut lp = LinearProgram::new(Sense::Minimize, 2);
        lp.objective = vec![1.0, 0.0];
        lp.bounds[0] = (0.0, f64::INFINITY);
        lp.add_row(vec![(0, 2.0), (1, -1.0)], Relation::Ge, 1.5);
        let dump = lp.dump();
        assert!(dump.contains("# vars=2 sense=min"));
        assert!(dump.contains(">= 1.5 0:2 1:-1"));
    }
}
