//! Market structure: dynamic trading with per-trade friction functions and
//! optional short-sale bans, plus a static book of instruments with bid/ask
//! or superlinear costs. Evaluates realized gains and the convex conjugates
//! that drive the dual penalty.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::tree::{PathVector, ScenarioTree};

#[derive(Debug, Error, PartialEq)]
pub enum MarketError {
    #[error("piecewise function needs {want} slopes for {got} breakpoints")]
    PieceCount { want: usize, got: usize },
    #[error("piecewise breakpoints must be strictly increasing")]
    BreakpointOrder,
    #[error("piecewise slopes must be nondecreasing (convexity)")]
    SlopesNotConvex,
    #[error("non-finite piecewise data")]
    NonFinitePiece,
    #[error("proportional cost rate must be nonnegative, got {0}")]
    NegativeEpsilon(f64),
    #[error("power friction needs epsilon > 0 and exponent > 1, got ({0}, {1})")]
    BadPower(f64, f64),
    #[error("market lists {got} assets, tree has {want}")]
    AssetCount { got: usize, want: usize },
    #[error("asset {asset}: friction table has {got} periods, horizon is {want}")]
    FrictionTableLength { asset: usize, got: usize, want: usize },
    #[error("asset {asset}: short-sale ban requires zero friction")]
    BannedWithFriction { asset: usize },
    #[error("instrument {0}: bid exceeds ask")]
    CrossedQuotes(String),
    #[error("instrument {name}: payoff has {got} entries, tree has {want} paths")]
    InstrumentPayoffLength { name: String, got: usize, want: usize },
    #[error("instrument {0}: superlinear cost needs delta > 0 and exponent > 1")]
    BadSuperlinear(String),
    #[error("instrument {0}: superlinear cost requires a single finite price (bid = ask) and unbounded positions")]
    SuperlinearShape(String),
    #[error("instrument {0}: position bounds must satisfy min <= 0 <= max")]
    BadPositionBounds(String),
    #[error("strategy shape mismatch: {0}")]
    StrategyShape(String),
    #[error("asset {asset}: negative holding {value} under a short-sale ban")]
    ShortSaleViolated { asset: usize, value: f64 },
    #[error("instrument {name}: position {value} outside [{lo}, {hi}]")]
    PositionOutOfBounds {
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("instrument {0}: nonzero position but the quote side is unavailable")]
    UnquotedSide(String),
}

/// Convex piecewise-linear function with finitely many kinks, pinned to
/// value 0 at the origin. `slopes` has one more entry than `breakpoints`;
/// slope `k` applies left of breakpoint `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseCost {
    breakpoints: Vec<f64>,
    slopes: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseCost {
    pub fn new(breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self, MarketError> {
        if slopes.len() != breakpoints.len() + 1 {
            return Err(MarketError::PieceCount {
                want: breakpoints.len() + 1,
                got: slopes.len(),
            });
        }
        if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MarketError::BreakpointOrder);
        }
        if slopes.windows(2).any(|w| w[0] > w[1]) {
            return Err(MarketError::SlopesNotConvex);
        }
        if breakpoints.iter().chain(slopes.iter()).any(|v| !v.is_finite()) {
            return Err(MarketError::NonFinitePiece);
        }
        let mut out = PiecewiseCost {
            breakpoints,
            slopes,
            values: Vec::new(),
        };
        out.values = out.breakpoints.iter().map(|&b| out.integrate(b)).collect();
        Ok(out)
    }

    // g(x) with g(0) = 0, integrating the step slopes from the origin.
    fn integrate(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        if x >= 0.0 {
            let mut lo = 0.0;
            for (k, &b) in self.breakpoints.iter().enumerate() {
                if b <= 0.0 {
                    continue;
                }
                let hi = b.min(x);
                if hi > lo {
                    acc += self.slopes[k] * (hi - lo);
                    lo = hi;
                }
                if b >= x {
                    return acc;
                }
            }
            acc += self.slopes[self.slopes.len() - 1] * (x - lo);
        } else {
            let mut hi = 0.0;
            for (k, &b) in self.breakpoints.iter().enumerate().rev() {
                if b >= 0.0 {
                    continue;
                }
                let lo = b.max(x);
                if lo < hi {
                    acc -= self.slopes[k + 1] * (hi - lo);
                    hi = lo;
                }
                if b <= x {
                    return acc;
                }
            }
            acc -= self.slopes[0] * (hi - x);
        }
        acc
    }

    pub fn value(&self, x: f64) -> f64 {
        self.integrate(x)
    }

    /// Slope on the far left and far right: the conjugate is finite exactly
    /// on this interval.
    pub fn slope_range(&self) -> (f64, f64) {
        (self.slopes[0], self.slopes[self.slopes.len() - 1])
    }

    /// Conjugate sup_x (xy - g(x)); the supremum sits at a kink.
    pub fn conjugate(&self, y: f64) -> f64 {
        let (lo, hi) = self.slope_range();
        if self.breakpoints.is_empty() {
            // Linear g: conjugate is the indicator of the single slope.
            return if y == lo { 0.0 } else { f64::INFINITY };
        }
        if y < lo || y > hi {
            return f64::INFINITY;
        }
        self.breakpoints
            .iter()
            .zip(self.values.iter())
            .map(|(&b, &g)| b * y - g)
            .fold(0.0_f64.min(f64::INFINITY), f64::max)
            .max(
                // The origin is a valid evaluation point too when it is not
                // itself a breakpoint: contributes 0 - g(0) = 0.
                0.0,
            )
    }

    /// Supporting lines `g(x) >= slope * x + intercept`, one per segment; g
    /// equals their maximum.
    pub fn tangents(&self) -> Vec<(f64, f64)> {
        if self.breakpoints.is_empty() {
            return vec![(self.slopes[0], 0.0)];
        }
        let mut out = Vec::with_capacity(self.slopes.len());
        for (k, &s) in self.slopes.iter().enumerate() {
            // Anchor segment k at one of its endpoints.
            let (x0, g0) = if k < self.breakpoints.len() {
                (self.breakpoints[k], self.values[k])
            } else {
                (
                    self.breakpoints[k - 1],
                    self.values[k - 1],
                )
            };
            out.push((s, g0 - s * x0));
        }
        out
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn breakpoint_values(&self) -> &[f64] {
        &self.values
    }
}

/// Per-trade cost function g for one asset and period, convex with g(0) = 0.
#[derive(Debug, Clone, PartialEq)]
pub enum Friction {
    Zero,
    /// g(x) = epsilon * |x|
    Proportional { epsilon: f64 },
    /// g(x) = (epsilon / p) * |x|^p with p > 1
    Power { epsilon: f64, exponent: f64 },
    PiecewiseLinear(PiecewiseCost),
}

impl Friction {
    pub fn validate(&self) -> Result<(), MarketError> {
        match self {
            Friction::Zero => Ok(()),
            Friction::Proportional { epsilon } => {
                if *epsilon < 0.0 || !epsilon.is_finite() {
                    Err(MarketError::NegativeEpsilon(*epsilon))
                } else {
                    Ok(())
                }
            }
            Friction::Power { epsilon, exponent } => {
                if *epsilon > 0.0 && *exponent > 1.0 && epsilon.is_finite() && exponent.is_finite()
                {
                    Ok(())
                } else {
                    Err(MarketError::BadPower(*epsilon, *exponent))
                }
            }
            Friction::PiecewiseLinear(_) => Ok(()), // validated at construction
        }
    }

    /// Trade cost g(x) for a signed trade volume x.
    pub fn cost(&self, x: f64) -> f64 {
        match self {
            Friction::Zero => 0.0,
            Friction::Proportional { epsilon } => epsilon * x.abs(),
            Friction::Power { epsilon, exponent } => epsilon / exponent * x.abs().powf(*exponent),
            Friction::PiecewiseLinear(p) => p.value(x),
        }
    }

    /// Same functional form with the scale parameter replaced (node-level
    /// overrides); piecewise costs have no scalar scale and are returned
    /// unchanged.
    pub fn with_epsilon(&self, eps: f64) -> Friction {
        match self {
            Friction::Zero => Friction::Zero,
            Friction::Proportional { .. } => Friction::Proportional { epsilon: eps },
            Friction::Power { exponent, .. } => Friction::Power {
                epsilon: eps,
                exponent: *exponent,
            },
            Friction::PiecewiseLinear(p) => Friction::PiecewiseLinear(p.clone()),
        }
    }

    /// True when the cost is exactly representable by finitely many linear
    /// epigraph rows.
    pub fn is_linear(&self) -> bool {
        !matches!(self, Friction::Power { .. })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Friction::Zero)
            || matches!(self, Friction::Proportional { epsilon } if *epsilon == 0.0)
    }
}

/// Convex conjugate g*(y) = sup_x (xy - g(x)); may be +infinity.
pub fn friction_conjugate(friction: &Friction, y: f64) -> f64 {
    match friction {
        Friction::Zero => {
            if y == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        Friction::Proportional { epsilon } => {
            if y.abs() <= *epsilon {
                0.0
            } else {
                f64::INFINITY
            }
        }
        Friction::Power { epsilon, exponent } => {
            let pc = exponent / (exponent - 1.0);
            epsilon.powf(1.0 - pc) / pc * y.abs().powf(pc)
        }
        Friction::PiecewiseLinear(p) => p.conjugate(y),
    }
}

/// Grid lower bound on the conjugate: max over a uniform grid on
/// `[-radius, radius]` of `xy - g(x)`. Converges to g*(y) from below as the
/// grid refines wherever the conjugate is finite; serves as the independent
/// check for [`friction_conjugate`].
pub fn conjugate_numeric_check(friction: &Friction, y: f64, radius: f64, steps: usize) -> f64 {
    assert!(steps >= 2, "need at least two grid points");
    let mut best = f64::NEG_INFINITY;
    for k in 0..steps {
        let x = -radius + 2.0 * radius * (k as f64) / ((steps - 1) as f64);
        best = best.max(x * y - friction.cost(x));
    }
    best
}

/// Superlinear static cost add-on: h(theta) = price * theta
/// + (delta / q) * |theta|^q.
#[derive(Debug, Clone, PartialEq)]
pub struct SuperlinearCost {
    pub delta: f64,
    pub exponent: f64,
}

/// A statically held claim. Discounted payoff per path, a bid/ask quote
/// (infinities mean the side is unavailable) and optional position bounds
/// for the admissible set; `min_position = 0` models a long-only book.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticInstrument {
    pub name: String,
    pub payoff: PathVector,
    pub bid: f64,
    pub ask: f64,
    pub superlinear: Option<SuperlinearCost>,
    pub min_position: f64,
    pub max_position: f64,
}

impl StaticInstrument {
    pub fn quoted(name: impl Into<String>, payoff: PathVector, bid: f64, ask: f64) -> Self {
        StaticInstrument {
            name: name.into(),
            payoff,
            bid,
            ask,
            superlinear: None,
            min_position: f64::NEG_INFINITY,
            max_position: f64::INFINITY,
        }
    }

    pub fn validate(&self, num_paths: usize) -> Result<(), MarketError> {
        if self.payoff.len() != num_paths {
            return Err(MarketError::InstrumentPayoffLength {
                name: self.name.clone(),
                got: self.payoff.len(),
                want: num_paths,
            });
        }
        if self.bid > self.ask {
            return Err(MarketError::CrossedQuotes(self.name.clone()));
        }
        if !(self.min_position <= 0.0 && self.max_position >= 0.0) {
            return Err(MarketError::BadPositionBounds(self.name.clone()));
        }
        if let Some(s) = &self.superlinear {
            if !(s.delta > 0.0 && s.exponent > 1.0) {
                return Err(MarketError::BadSuperlinear(self.name.clone()));
            }
            let unbounded =
                self.min_position == f64::NEG_INFINITY && self.max_position == f64::INFINITY;
            if self.bid != self.ask || !self.bid.is_finite() || !unbounded {
                return Err(MarketError::SuperlinearShape(self.name.clone()));
            }
        }
        Ok(())
    }

    /// Cost of holding `theta = theta_plus - theta_minus`.
    pub fn cost(&self, theta_plus: f64, theta_minus: f64) -> Result<f64, MarketError> {
        let theta = theta_plus - theta_minus;
        if theta < self.min_position - 1e-12 || theta > self.max_position + 1e-12 {
            return Err(MarketError::PositionOutOfBounds {
                name: self.name.clone(),
                value: theta,
                lo: self.min_position,
                hi: self.max_position,
            });
        }
        if let Some(s) = &self.superlinear {
            return Ok(self.bid * theta + s.delta / s.exponent * theta.abs().powf(s.exponent));
        }
        if theta_plus > 0.0 && self.ask == f64::INFINITY {
            return Err(MarketError::UnquotedSide(self.name.clone()));
        }
        if theta_minus > 0.0 && self.bid == f64::NEG_INFINITY {
            return Err(MarketError::UnquotedSide(self.name.clone()));
        }
        let buy = if theta_plus > 0.0 { theta_plus * self.ask } else { 0.0 };
        let sell = if theta_minus > 0.0 { theta_minus * self.bid } else { 0.0 };
        Ok(buy - sell)
    }
}

/// Dynamic trading policy for one risky asset.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetPolicy {
    /// When false the asset cannot be traded dynamically at all (its prices
    /// still matter for payoffs).
    pub tradeable: bool,
    /// Holdings must stay nonnegative.
    pub short_sale_banned: bool,
    /// One friction per period t = 0..T-1, applied to trades placed at
    /// depth-t nodes.
    pub frictions: Vec<Friction>,
    /// Node-level overrides of the friction scale parameter.
    pub epsilon_overrides: BTreeMap<usize, f64>,
}

impl AssetPolicy {
    pub fn frictionless(horizon: usize) -> Self {
        AssetPolicy {
            tradeable: true,
            short_sale_banned: false,
            frictions: vec![Friction::Zero; horizon],
            epsilon_overrides: BTreeMap::new(),
        }
    }

    pub fn untradeable(horizon: usize) -> Self {
        AssetPolicy {
            tradeable: false,
            ..AssetPolicy::frictionless(horizon)
        }
    }
}

/// The whole gain set: per-asset dynamic policies plus the static book.
/// The zero strategy is always admissible and earns zero.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSpec {
    pub assets: Vec<AssetPolicy>,
    pub instruments: Vec<StaticInstrument>,
}

impl MarketSpec {
    /// Frictionless dynamic trading in every asset, empty static book.
    pub fn frictionless(assets: usize, horizon: usize) -> Self {
        MarketSpec {
            assets: (0..assets).map(|_| AssetPolicy::frictionless(horizon)).collect(),
            instruments: Vec::new(),
        }
    }

    /// No trading at all: the gain set is {0}.
    pub fn no_trading(assets: usize, horizon: usize) -> Self {
        MarketSpec {
            assets: (0..assets).map(|_| AssetPolicy::untradeable(horizon)).collect(),
            instruments: Vec::new(),
        }
    }

    /// Uniform proportional costs at rate `epsilon` on every asset/period.
    pub fn proportional(assets: usize, horizon: usize, epsilon: f64) -> Self {
        MarketSpec {
            assets: (0..assets)
                .map(|_| AssetPolicy {
                    tradeable: true,
                    short_sale_banned: false,
                    frictions: vec![Friction::Proportional { epsilon }; horizon],
                    epsilon_overrides: BTreeMap::new(),
                })
                .collect(),
            instruments: Vec::new(),
        }
    }

    pub fn validate(&self, tree: &ScenarioTree) -> Result<(), MarketError> {
        if self.assets.len() != tree.num_assets() {
            return Err(MarketError::AssetCount {
                got: self.assets.len(),
                want: tree.num_assets(),
            });
        }
        for (j, policy) in self.assets.iter().enumerate() {
            let asset = j + 1;
            if policy.frictions.len() != tree.horizon() {
                return Err(MarketError::FrictionTableLength {
                    asset,
                    got: policy.frictions.len(),
                    want: tree.horizon(),
                });
            }
            for f in &policy.frictions {
                f.validate()?;
            }
            if policy.tradeable && policy.short_sale_banned {
                // A ban composes with costless trading only; the penalty
                // formula for a banned frictional book is not available.
                if !policy.frictions.iter().all(|f| f.is_zero()) {
                    return Err(MarketError::BannedWithFriction { asset });
                }
            }
        }
        for inst in &self.instruments {
            inst.validate(tree.num_paths())?;
        }
        Ok(())
    }

    /// Effective friction for trades in `asset` placed at `node`, with any
    /// node-level scale override applied.
    pub fn friction_at(&self, tree: &ScenarioTree, asset: usize, node: usize) -> Friction {
        let policy = &self.assets[asset - 1];
        let t = tree.node(node).depth;
        let base = &policy.frictions[t];
        match policy.epsilon_overrides.get(&node) {
            Some(&eps) => base.with_epsilon(eps),
            None => base.clone(),
        }
    }

    /// Any power friction or superlinear instrument forces the smooth
    /// (cutting-plane) solver path.
    pub fn needs_convex_solver(&self) -> bool {
        self.assets
            .iter()
            .any(|p| p.tradeable && p.frictions.iter().any(|f| !f.is_linear()))
            || self.instruments.iter().any(|i| i.superlinear.is_some())
    }
}

/// Semi-static strategy: one holding per (asset, non-terminal node) — the
/// value chosen at a node applies to the period that starts there, which is
/// exactly predictability on a tree — plus a static position per instrument
/// split into long and short legs.
#[derive(Debug, Clone, PartialEq)]
pub struct Strategy {
    /// Asset-major: `dynamic[(asset-1) * num_non_terminal + rank]`.
    pub dynamic: Vec<f64>,
    pub theta_plus: Vec<f64>,
    pub theta_minus: Vec<f64>,
}

impl Strategy {
    pub fn zeros(tree: &ScenarioTree, market: &MarketSpec) -> Self {
        Strategy {
            dynamic: vec![0.0; tree.num_assets() * tree.num_non_terminal()],
            theta_plus: vec![0.0; market.instruments.len()],
            theta_minus: vec![0.0; market.instruments.len()],
        }
    }

    pub fn holding(&self, tree: &ScenarioTree, asset: usize, node: usize) -> f64 {
        match tree.non_terminal_rank(node) {
            Some(rank) => self.dynamic[(asset - 1) * tree.num_non_terminal() + rank],
            None => 0.0,
        }
    }

    pub fn set_holding(&mut self, tree: &ScenarioTree, asset: usize, node: usize, value: f64) {
        let rank = tree.non_terminal_rank(node).expect("non-terminal node");
        self.dynamic[(asset - 1) * tree.num_non_terminal() + rank] = value;
    }

    pub fn theta(&self, instrument: usize) -> f64 {
        self.theta_plus[instrument] - self.theta_minus[instrument]
    }
}

/// Discounted terminal gain of a strategy on every path:
/// dynamic price moves minus discounted trade costs, plus the static book's
/// payoff minus its cost.
pub fn gains(
    tree: &ScenarioTree,
    market: &MarketSpec,
    strategy: &Strategy,
) -> Result<PathVector, MarketError> {
    let nt = tree.num_non_terminal();
    if strategy.dynamic.len() != tree.num_assets() * nt {
        return Err(MarketError::StrategyShape(format!(
            "dynamic has {} entries, expected {}",
            strategy.dynamic.len(),
            tree.num_assets() * nt
        )));
    }
    if strategy.theta_plus.len() != market.instruments.len()
        || strategy.theta_minus.len() != market.instruments.len()
    {
        return Err(MarketError::StrategyShape(format!(
            "static legs have {}/{} entries, expected {}",
            strategy.theta_plus.len(),
            strategy.theta_minus.len(),
            market.instruments.len()
        )));
    }
    for (j, policy) in market.assets.iter().enumerate() {
        let asset = j + 1;
        if policy.short_sale_banned || !policy.tradeable {
            for &node in tree.non_terminal_nodes() {
                let h = strategy.holding(tree, asset, node);
                if !policy.tradeable && h != 0.0 {
                    return Err(MarketError::StrategyShape(format!(
                        "asset {asset} is not tradeable but holds {h}"
                    )));
                }
                if policy.short_sale_banned && h < 0.0 {
                    return Err(MarketError::ShortSaleViolated { asset, value: h });
                }
            }
        }
    }

    // Static part: cost is path-independent, payoff is not.
    let mut static_cost = 0.0;
    for (i, inst) in market.instruments.iter().enumerate() {
        static_cost += inst.cost(strategy.theta_plus[i], strategy.theta_minus[i])?;
    }

    let mut out = Vec::with_capacity(tree.num_paths());
    for path in 0..tree.num_paths() {
        let chain = tree.path_nodes(path);
        let mut total = -static_cost;
        for (i, inst) in market.instruments.iter().enumerate() {
            total += strategy.theta(i) * inst.payoff[path];
        }
        for (j, policy) in market.assets.iter().enumerate() {
            if !policy.tradeable {
                continue;
            }
            let asset = j + 1;
            let mut prev_holding = 0.0;
            for t in 0..tree.horizon() {
                let here = chain[t];
                let next = chain[t + 1];
                let holding = strategy.holding(tree, asset, here);
                let node = tree.node(here);
                let trade = (holding - prev_holding) * node.prices[asset];
                let friction = market.friction_at(tree, asset, here);
                total -= friction.cost(trade) / node.numeraire();
                let s_here = node.prices[asset] / node.numeraire();
                let s_next = tree.node(next).prices[asset] / tree.node(next).numeraire();
                total += holding * (s_next - s_here);
                prev_holding = holding;
            }
        }
        out.push(total);
    }
    Ok(PathVector::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{build_tree, NodeSpec, TreeSpec};

    fn binomial() -> ScenarioTree {
        build_tree(&TreeSpec {
            horizon: 1,
            assets: 1,
            nodes: vec![
                NodeSpec { id: 0, depth: 0, parent: None, prices: vec![1.0, 1.0] },
                NodeSpec { id: 1, depth: 1, parent: Some(0), prices: vec![1.0, 2.0] },
                NodeSpec { id: 2, depth: 1, parent: Some(0), prices: vec![1.0, 0.5] },
            ],
        })
        .unwrap()
    }

    #[test]
    fn zero_strategy_earns_zero() {
        let tree = binomial();
        let market = MarketSpec::proportional(1, 1, 0.3);
        let strategy = Strategy::zeros(&tree, &market);
        let g = gains(&tree, &market, &strategy).unwrap();
        assert_eq!(g.values(), &[0.0, 0.0]);
    }

    #[test]
    fn frictionless_unit_holding() {
        let tree = binomial();
        let market = MarketSpec::frictionless(1, 1);
        let mut strategy = Strategy::zeros(&tree, &market);
        strategy.set_holding(&tree, 1, tree.root(), 1.0);
        let g = gains(&tree, &market, &strategy).unwrap();
        assert_eq!(g.values(), &[1.0, -0.5]);
    }

    #[test]
    fn proportional_cost_shaves_gains() {
        let tree = binomial();
        let market = MarketSpec::proportional(1, 1, 0.1);
        let mut strategy = Strategy::zeros(&tree, &market);
        strategy.set_holding(&tree, 1, tree.root(), 1.0);
        let g = gains(&tree, &market, &strategy).unwrap();
        assert!((g[0] - 0.9).abs() < 1e-15);
        assert!((g[1] + 0.6).abs() < 1e-15);
    }

    #[test]
    fn banned_asset_rejects_short_holding() {
        let tree = binomial();
        let mut market = MarketSpec::frictionless(1, 1);
        market.assets[0].short_sale_banned = true;
        let mut strategy = Strategy::zeros(&tree, &market);
        strategy.set_holding(&tree, 1, tree.root(), -1.0);
        assert!(matches!(
            gains(&tree, &market, &strategy).unwrap_err(),
            MarketError::ShortSaleViolated { asset: 1, .. }
        ));
    }

    #[test]
    fn proportional_conjugate_is_the_band_indicator() {
        let f = Friction::Proportional { epsilon: 0.2 };
        assert_eq!(friction_conjugate(&f, 0.1), 0.0);
        assert_eq!(friction_conjugate(&f, -0.2), 0.0);
        assert_eq!(friction_conjugate(&f, 0.21), f64::INFINITY);
    }

    #[test]
    fn power_conjugate_closed_form() {
        // p = 2 gives p' = 2 and g*(y) = y^2 / (2 eps).
        let f = Friction::Power { epsilon: 1.0, exponent: 2.0 };
        assert!((friction_conjugate(&f, 1.0) - 0.5).abs() < 1e-15);
        let f = Friction::Power { epsilon: 0.5, exponent: 3.0 };
        // p' = 1.5, g*(y) = eps^{-1/2} / 1.5 * |y|^{1.5}
        let expect = 0.5_f64.powf(-0.5) / 1.5 * 2.0_f64.powf(1.5);
        assert!((friction_conjugate(&f, 2.0) - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_conjugate() {
        assert_eq!(friction_conjugate(&Friction::Zero, 0.0), 0.0);
        assert_eq!(friction_conjugate(&Friction::Zero, 1e-9), f64::INFINITY);
    }

    #[test]
    fn numeric_conjugate_tracks_closed_forms() {
        let f = Friction::Proportional { epsilon: 0.1 };
        let approx = conjugate_numeric_check(&f, 0.05, 10.0, 1001);
        assert!(approx.abs() < 1e-9, "got {approx}");

        let f = Friction::Power { epsilon: 1.0, exponent: 2.0 };
        let approx = conjugate_numeric_check(&f, 1.0, 10.0, 100_001);
        assert!((approx - 0.5).abs() < 1e-6, "got {approx}");
        assert!(approx <= 0.5 + 1e-12, "grid value must stay below the sup");

        assert_eq!(conjugate_numeric_check(&Friction::Zero, 0.0, 5.0, 11), 0.0);
    }

    #[test]
    fn piecewise_cost_evaluates_and_conjugates() {
        // Proportional 0.1 written as a piecewise function.
        let p = PiecewiseCost::new(vec![0.0], vec![-0.1, 0.1]).unwrap();
        assert!((p.value(2.0) - 0.2).abs() < 1e-15);
        assert!((p.value(-3.0) - 0.3).abs() < 1e-15);
        assert_eq!(p.conjugate(0.05), 0.0);
        assert_eq!(p.conjugate(0.2), f64::INFINITY);

        // Kinks away from the origin.
        let p = PiecewiseCost::new(vec![-1.0, 1.0], vec![-0.3, 0.0, 0.5]).unwrap();
        assert_eq!(p.value(0.5), 0.0);
        assert!((p.value(2.0) - 0.5).abs() < 1e-15);
        assert!((p.value(-2.0) - 0.3).abs() < 1e-15);
        // conjugate at y in (0, 0.5]: attained at x = 1 where g = 0.
        assert!((p.conjugate(0.4) - 0.4).abs() < 1e-15);
        assert!((p.conjugate(-0.2) - 0.2).abs() < 1e-15);
        assert_eq!(p.conjugate(0.6), f64::INFINITY);

        // Grid check including both finiteness and value.
        for &y in &[-0.25, 0.0, 0.3, 0.5] {
            let grid = conjugate_numeric_check(&Friction::PiecewiseLinear(p.clone()), y, 4.0, 8001);
            let exact = p.conjugate(y);
            assert!(grid <= exact + 1e-9);
            assert!(exact - grid < 1e-3, "y={y}: {exact} vs {grid}");
        }
    }

    #[test]
    fn piecewise_validation() {
        assert_eq!(
            PiecewiseCost::new(vec![0.0], vec![0.1]).unwrap_err(),
            MarketError::PieceCount { want: 2, got: 1 }
        );
        assert_eq!(
            PiecewiseCost::new(vec![1.0, 1.0], vec![0.0, 0.1, 0.2]).unwrap_err(),
            MarketError::BreakpointOrder
        );
        assert_eq!(
            PiecewiseCost::new(vec![0.0], vec![0.2, 0.1]).unwrap_err(),
            MarketError::SlopesNotConvex
        );
    }

    #[test]
    fn instrument_validation() {
        let tree = binomial();
        let mut inst = StaticInstrument::quoted("c", PathVector::new(vec![1.0, 0.0]), 0.4, 0.3);
        assert_eq!(
            inst.validate(tree.num_paths()).unwrap_err(),
            MarketError::CrossedQuotes("c".into())
        );
        inst.ask = 0.5;
        assert!(inst.validate(tree.num_paths()).is_ok());

        let mut sup = StaticInstrument::quoted("s", PathVector::new(vec![1.0, 0.0]), 0.4, 0.5);
        sup.superlinear = Some(SuperlinearCost { delta: 0.1, exponent: 2.0 });
        assert_eq!(
            sup.validate(tree.num_paths()).unwrap_err(),
            MarketError::SuperlinearShape("s".into())
        );
        sup.bid = 0.4;
        sup.ask = 0.4;
        assert!(sup.validate(tree.num_paths()).is_ok());
    }

    #[test]
    fn instrument_cost_uses_the_right_side() {
        let inst = StaticInstrument::quoted("c", PathVector::new(vec![1.0, 0.0]), 0.3, 0.5);
        assert!((inst.cost(2.0, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((inst.cost(0.0, 2.0).unwrap() + 0.6).abs() < 1e-15);
        // Round trips pay the spread.
        assert!((inst.cost(1.0, 1.0).unwrap() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn banned_with_friction_is_rejected() {
        let tree = binomial();
        let mut market = MarketSpec::proportional(1, 1, 0.1);
        market.assets[0].short_sale_banned = true;
        assert_eq!(
            market.validate(&tree).unwrap_err(),
            MarketError::BannedWithFriction { asset: 1 }
        );
    }
}
