//! Structural invariants beyond the acceptance criteria: concavity of
//! gains, conjugate inequalities, risk-measure duality bounds, price-shape
//! monotonicity across acceptance sets and cost levels, and weak duality
//! for sampled admissible measures.

use proptest::prelude::*;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use treehedge::acceptance::{
    oce_dual_check, oce_risk, AcceptanceSpec, LossFunction, OceEntry,
};
use treehedge::dual::{dual_superhedge, measure_residuals, QMode};
use treehedge::market::{
    conjugate_numeric_check, friction_conjugate, gains, Friction, MarketSpec, PiecewiseCost,
    Strategy,
};
use treehedge::oracle::{
    binomial_tree, numeric_penalty, sample_feasible_measures, AcceptanceClass,
    InstanceGenerator, MarketClass,
};
use treehedge::primal::{superhedge, HedgeStatus};
use treehedge::tree::{build_tree, NodeSpec, PathVector, TreeSpec};

fn two_period_tree() -> treehedge::tree::ScenarioTree {
    build_tree(&TreeSpec {
        horizon: 2,
        assets: 1,
        nodes: vec![
            NodeSpec { id: 0, depth: 0, parent: None, prices: vec![1.0, 1.0] },
            NodeSpec { id: 1, depth: 1, parent: Some(0), prices: vec![1.0, 1.6] },
            NodeSpec { id: 2, depth: 1, parent: Some(0), prices: vec![1.0, 0.7] },
            NodeSpec { id: 3, depth: 2, parent: Some(1), prices: vec![1.0, 2.5] },
            NodeSpec { id: 4, depth: 2, parent: Some(1), prices: vec![1.0, 1.1] },
            NodeSpec { id: 5, depth: 2, parent: Some(2), prices: vec![1.0, 1.0] },
            NodeSpec { id: 6, depth: 2, parent: Some(2), prices: vec![1.0, 0.4] },
        ],
    })
    .unwrap()
}

#[test]
fn gains_are_concave_in_the_strategy() {
    // Midpoint test path by path under convex costs.
    let tree = two_period_tree();
    let mut market = MarketSpec::proportional(1, 2, 0.15);
    market.assets[0].frictions[1] = Friction::Power {
        epsilon: 0.3,
        exponent: 2.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..500 {
        let mut a = Strategy::zeros(&tree, &market);
        let mut b = Strategy::zeros(&tree, &market);
        for v in a.dynamic.iter_mut().chain(b.dynamic.iter_mut()) {
            *v = rng.gen_range(-2.0..2.0);
        }
        let mut mid = Strategy::zeros(&tree, &market);
        for (m, (x, y)) in mid
            .dynamic
            .iter_mut()
            .zip(a.dynamic.iter().zip(b.dynamic.iter()))
        {
            *m = 0.5 * (x + y);
        }
        let ga = gains(&tree, &market, &a).unwrap();
        let gb = gains(&tree, &market, &b).unwrap();
        let gm = gains(&tree, &market, &mid).unwrap();
        for w in 0..tree.num_paths() {
            assert!(
                gm[w] >= 0.5 * (ga[w] + gb[w]) - 1e-10,
                "path {w}: {} vs {}",
                gm[w],
                0.5 * (ga[w] + gb[w])
            );
        }
    }
}

#[test]
fn fenchel_young_with_equality_at_matched_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..1000 {
        let friction = match rng.gen_range(0..3) {
            0 => Friction::Proportional {
                epsilon: rng.gen_range(0.01..0.5),
            },
            1 => Friction::Power {
                epsilon: rng.gen_range(0.1..1.5),
                exponent: rng.gen_range(1.3..3.5),
            },
            _ => {
                let b = rng.gen_range(0.3..1.2);
                let s = rng.gen_range(0.05..0.4);
                Friction::PiecewiseLinear(
                    PiecewiseCost::new(vec![-b, 0.0, b], vec![-2.0 * s, -s, s, 2.0 * s]).unwrap(),
                )
            }
        };
        let x: f64 = rng.gen_range(-3.0..3.0);
        let y: f64 = rng.gen_range(-1.0..1.0);
        let lhs = x * y;
        let rhs = friction.cost(x) + friction_conjugate(&friction, y);
        assert!(lhs <= rhs + 1e-10, "{friction:?}: {lhs} vs {rhs}");
    }
    // Equality at matched (subdifferential) pairs.
    for _ in 0..200 {
        let epsilon = rng.gen_range(0.01..0.5);
        let friction = Friction::Proportional { epsilon };
        let x: f64 = rng.gen_range(0.01..3.0);
        let y = epsilon; // boundary of the band, matched with x > 0
        let gap = friction.cost(x) + friction_conjugate(&friction, y) - x * y;
        assert!(gap.abs() <= 1e-12, "proportional gap {gap}");

        let (epsilon, p): (f64, f64) = (rng.gen_range(0.1..1.5), rng.gen_range(1.3..3.5));
        let friction = Friction::Power {
            epsilon,
            exponent: p,
        };
        let x: f64 = rng.gen_range(0.01..2.0);
        let y = epsilon * x.powf(p - 1.0);
        let gap = friction.cost(x) + friction_conjugate(&friction, y) - x * y;
        assert!(gap.abs() <= 1e-10, "power gap {gap}");
    }
}

#[test]
fn numeric_conjugate_converges_from_below() {
    let friction = Friction::Power {
        epsilon: 0.8,
        exponent: 2.5,
    };
    let y = 0.7;
    let exact = friction_conjugate(&friction, y);
    let mut last = f64::NEG_INFINITY;
    for steps in [11usize, 101, 1001, 10_001] {
        let grid = conjugate_numeric_check(&friction, y, 6.0, steps);
        assert!(grid <= exact + 1e-12);
        assert!(grid >= last - 1e-12, "refinement cannot lose ground");
        last = grid;
    }
    assert!(exact - last <= 1e-5);
}

#[test]
fn oce_dual_bound_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..1000 {
        let n = rng.gen_range(2..7usize);
        let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = q.iter().sum();
        for v in &mut q {
            *v /= total;
        }
        let q = PathVector::new(q);
        let x: PathVector = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let loss = match rng.gen_range(0..2) {
            0 => LossFunction::Avar {
                lambda: rng.gen_range(0.1..1.0),
            },
            _ => LossFunction::Entropic {
                lambda: rng.gen_range(0.2..2.5),
            },
        };
        let rho = oce_risk(&loss, &q, &x).unwrap();
        // An arbitrary absolutely continuous candidate stays below.
        let mut p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let total: f64 = p.iter().sum();
        for v in &mut p {
            *v /= total;
        }
        let p = PathVector::new(p);
        let bound = oce_dual_check(&loss, &q, &x, &p).unwrap();
        assert!(bound <= rho + 1e-10, "{loss:?}: {bound} vs {rho}");

        // The analytic optimizer attains the risk (tested at 1e-8).
        let optimizer = match &loss {
            LossFunction::Avar { lambda } => {
                let mut order: Vec<usize> = (0..n).collect();
                order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap());
                let mut need = *lambda;
                let mut p = vec![0.0; n];
                for i in order {
                    let take = q[i].min(need);
                    p[i] = take / lambda;
                    need -= take;
                    if need <= 0.0 {
                        break;
                    }
                }
                PathVector::new(p)
            }
            LossFunction::Entropic { lambda } => {
                let weights: Vec<f64> =
                    (0..n).map(|w| q[w] * (-lambda * x[w]).exp()).collect();
                let total: f64 = weights.iter().sum();
                PathVector::new(weights.iter().map(|w| w / total).collect())
            }
            LossFunction::PiecewiseLinear(_) => unreachable!(),
        };
        let attained = oce_dual_check(&loss, &q, &x, &optimizer).unwrap();
        assert!(
            (attained - rho).abs() <= 1e-8,
            "{loss:?}: attained {attained} vs {rho}"
        );
    }
}

#[test]
fn widening_the_acceptance_set_never_raises_the_upper_price() {
    let mut gen = InstanceGenerator::new(24);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for k in 0..100 {
        let market_class = [MarketClass::Frictionless, MarketClass::Proportional][k % 2];
        let inst = gen.instance(market_class, AcceptanceClass::Strict, true);
        let n = inst.tree.num_paths();
        let strict =
            superhedge(&inst.tree, &inst.market, &AcceptanceSpec::Strict, &inst.payoff, 1e-9)
                .unwrap();
        let mut q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = q.iter().sum();
        for v in &mut q {
            *v /= total;
        }
        let relaxed = AcceptanceSpec::RobustOce(vec![OceEntry {
            measure: PathVector::new(q),
            loss: LossFunction::Avar {
                lambda: rng.gen_range(0.2..1.0),
            },
        }]);
        let soft = superhedge(&inst.tree, &inst.market, &relaxed, &inst.payoff, 1e-9).unwrap();
        assert!(
            soft.price <= strict.price + 1e-8,
            "relaxing acceptance must not raise the price: {} vs {}",
            soft.price,
            strict.price
        );
    }
}

#[test]
fn prices_rise_with_the_cost_level() {
    let mut gen = InstanceGenerator::new(26);
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    for _ in 0..60 {
        let inst = gen.instance(MarketClass::Frictionless, AcceptanceClass::Strict, true);
        let eps_lo: f64 = rng.gen_range(0.0..0.2);
        let eps_hi = eps_lo + rng.gen_range(0.0..0.3);
        let horizon = inst.tree.horizon();
        let with_eps = |eps: f64| {
            let mut market = inst.market.clone();
            for policy in &mut market.assets {
                policy.frictions = vec![Friction::Proportional { epsilon: eps }; horizon];
            }
            superhedge(&inst.tree, &market, &inst.acceptance, &inst.payoff, 1e-9)
                .unwrap()
                .price
        };
        let narrow = with_eps(eps_lo);
        let wide = with_eps(eps_hi);
        assert!(
            wide >= narrow - 1e-8,
            "cost level up, price down: {wide} vs {narrow}"
        );
    }
}

#[test]
fn banned_short_sales_weaken_the_measure_conditions() {
    // Every martingale measure is a supermartingale measure, so the upper
    // price under a ban dominates the unconstrained one.
    let mut gen = InstanceGenerator::new(28);
    for _ in 0..100 {
        let inst = gen.instance(MarketClass::Frictionless, AcceptanceClass::Strict, true);
        let free = superhedge(&inst.tree, &inst.market, &inst.acceptance, &inst.payoff, 1e-9)
            .unwrap();
        let mut banned_market = inst.market.clone();
        for policy in &mut banned_market.assets {
            policy.short_sale_banned = true;
        }
        let banned =
            superhedge(&inst.tree, &banned_market, &inst.acceptance, &inst.payoff, 1e-9).unwrap();
        assert!(
            banned.price >= free.price - 1e-8,
            "ban shrank the price: {} vs {}",
            banned.price,
            free.price
        );
        // The measure returned under the ban satisfies the one-step
        // domination conditions, re-checked from the definitions.
        let dual = dual_superhedge(
            &inst.tree,
            &banned_market,
            &inst.acceptance,
            &inst.payoff,
            1e-9,
            QMode::Hull,
        )
        .unwrap();
        let p = dual.measure.unwrap();
        let residuals =
            measure_residuals(&inst.tree, &banned_market, &inst.acceptance, &p.probabilities, QMode::Hull)
                .unwrap();
        assert!(residuals.worst() >= -1e-7, "{:?}", residuals.violations(1e-7));
        // Dominated at the terminal horizon too (tower over one-step rows).
        for asset in 1..=inst.tree.num_assets() {
            let terminal = inst.tree.terminal_discounted(asset).unwrap();
            for &node in inst.tree.non_terminal_nodes() {
                let (mass, moment) = inst
                    .tree
                    .node_mass_and_cond_expectation(&p.probabilities, &terminal, node)
                    .unwrap();
                let s = inst.tree.discounted_price(asset, node).unwrap();
                assert!(moment <= mass * s + 1e-7, "terminal domination fails");
            }
        }
    }
}

#[test]
fn weak_duality_for_sampled_measures() {
    let mut gen = InstanceGenerator::new(29);
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut checked = 0;
    for k in 0..30 {
        let market_class = [
            MarketClass::Frictionless,
            MarketClass::Proportional,
            MarketClass::PiecewiseLinear,
        ][k % 3];
        let inst = gen.instance(market_class, AcceptanceClass::Strict, true);
        let upper = superhedge(&inst.tree, &inst.market, &inst.acceptance, &inst.payoff, 1e-9)
            .unwrap();
        if upper.status != HedgeStatus::Optimal {
            continue;
        }
        let samples =
            sample_feasible_measures(&inst.tree, &inst.market, &inst.acceptance, 10, &mut rng)
                .unwrap();
        for p in samples {
            let penalty = numeric_penalty(&inst.tree, &inst.market, &p, 8.0, 801).unwrap();
            let lower_bound = p.dot(&inst.payoff) - penalty;
            assert!(
                lower_bound <= upper.price + 1e-6,
                "sampled measure beats the hedge: {lower_bound} vs {}",
                upper.price
            );
            checked += 1;
        }
    }
    assert!(checked > 100, "want many sampled checks, got {checked}");
}

#[test]
fn engine_runs_are_deterministic() {
    let make = || {
        let mut gen = InstanceGenerator::new(31);
        let inst = gen.instance(MarketClass::Proportional, AcceptanceClass::Avar, true);
        let upper = superhedge(&inst.tree, &inst.market, &inst.acceptance, &inst.payoff, 1e-9)
            .unwrap();
        let dual = dual_superhedge(
            &inst.tree,
            &inst.market,
            &inst.acceptance,
            &inst.payoff,
            1e-9,
            QMode::Hull,
        )
        .unwrap();
        (
            upper.price,
            upper.strategy.unwrap().dynamic,
            dual.value,
            dual.measure.unwrap().probabilities,
        )
    };
    let a = make();
    let b = make();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
    assert_eq!(a.2.to_bits(), b.2.to_bits());
    assert_eq!(a.3, b.3);
}

#[test]
fn generator_mode_is_a_restriction_of_the_hull() {
    let tree = binomial_tree();
    let market = MarketSpec::no_trading(1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..50 {
        let entries: Vec<OceEntry> = (0..2)
            .map(|_| {
                let a = rng.gen_range(0.1..0.9);
                OceEntry {
                    measure: PathVector::new(vec![a, 1.0 - a]),
                    loss: LossFunction::Avar {
                        lambda: rng.gen_range(0.2..1.0),
                    },
                }
            })
            .collect();
        let acc = AcceptanceSpec::RobustOce(entries);
        let x: PathVector = (0..2).map(|_| rng.gen_range(-1.0..2.0)).collect();
        let hull = dual_superhedge(&tree, &market, &acc, &x, 1e-9, QMode::Hull).unwrap();
        let generators =
            dual_superhedge(&tree, &market, &acc, &x, 1e-9, QMode::Generators).unwrap();
        assert!(
            generators.value <= hull.value + 1e-8,
            "generators {} vs hull {}",
            generators.value,
            hull.value
        );
        // The hull value is the one that matches the hedging price.
        let upper = superhedge(&tree, &market, &acc, &x, 1e-10).unwrap();
        assert!((hull.value - upper.price).abs() <= 1e-7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_conservation_for_arbitrary_weightings(
        raw in proptest::collection::vec(0.0f64..1.0, 4),
        values in proptest::collection::vec(-5.0f64..5.0, 4),
    ) {
        let total: f64 = raw.iter().sum();
        prop_assume!(total > 1e-6);
        let p = PathVector::new(raw.iter().map(|v| v / total).collect());
        let v = PathVector::new(values);
        let tree = build_tree(&TreeSpec {
            horizon: 2,
            assets: 1,
            nodes: vec![
                NodeSpec { id: 0, depth: 0, parent: None, prices: vec![1.0, 1.0] },
                NodeSpec { id: 1, depth: 1, parent: Some(0), prices: vec![1.0, 2.0] },
                NodeSpec { id: 2, depth: 1, parent: Some(0), prices: vec![1.0, 0.5] },
                NodeSpec { id: 3, depth: 2, parent: Some(1), prices: vec![1.0, 3.0] },
                NodeSpec { id: 4, depth: 2, parent: Some(1), prices: vec![1.0, 1.0] },
                NodeSpec { id: 5, depth: 2, parent: Some(2), prices: vec![1.0, 1.0] },
                NodeSpec { id: 6, depth: 2, parent: Some(2), prices: vec![1.0, 0.2] },
            ],
        }).unwrap();
        let (root_mass, root_moment) =
            tree.node_mass_and_cond_expectation(&p, &v, tree.root()).unwrap();
        prop_assert!((root_mass - 1.0).abs() < 1e-9);
        // Aggregating children reproduces the parent pair exactly.
        for &node in tree.non_terminal_nodes() {
            let (mass, moment) = tree.node_mass_and_cond_expectation(&p, &v, node).unwrap();
            let mut child_mass = 0.0;
            let mut child_moment = 0.0;
            for &c in &tree.node(node).children {
                let (cm, cmo) = tree.node_mass_and_cond_expectation(&p, &v, c).unwrap();
                child_mass += cm;
                child_moment += cmo;
            }
            prop_assert!((mass - child_mass).abs() < 1e-12);
            prop_assert!((moment - child_moment).abs() < 1e-12);
        }
        let _ = root_moment;
    }

    #[test]
    fn piecewise_costs_are_convex_and_conjugates_obey_fenchel_young(
        b in 0.2f64..2.0,
        s1 in 0.0f64..0.5,
        ds in 0.0f64..0.5,
        x in -4.0f64..4.0,
        y in -1.5f64..1.5,
        t in 0.0f64..1.0,
        x2 in -4.0f64..4.0,
    ) {
        let s2 = s1 + ds;
        let pw = PiecewiseCost::new(vec![-b, 0.0, b], vec![-s2, -s1, s1, s2]).unwrap();
        // Convexity along a random chord.
        let mid = t * x + (1.0 - t) * x2;
        prop_assert!(pw.value(mid) <= t * pw.value(x) + (1.0 - t) * pw.value(x2) + 1e-10);
        // Fenchel-Young.
        let conj = pw.conjugate(y);
        if conj.is_finite() {
            prop_assert!(x * y <= pw.value(x) + conj + 1e-10);
        }
    }

    #[test]
    fn strict_epigraph_feasibility_is_pathwise_nonneg(
        values in proptest::collection::vec(-1.0f64..1.0, 5),
    ) {
        let y = PathVector::new(values);
        let violation = AcceptanceSpec::Strict.worst_violation(&y).unwrap();
        prop_assert_eq!(violation <= 0.0, y.min() >= 0.0);
    }
}
