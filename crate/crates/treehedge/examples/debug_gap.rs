// temporary: full criterion-7-style sweep with timing summary
use treehedge::dual::{dual_superhedge, QMode};
use treehedge::oracle::*;
use treehedge::primal::{superhedge, HedgeStatus};
use treehedge::tree::PathVector;
use std::time::Instant;

fn main() {
    let mut gen = InstanceGenerator::new(777);
    let classes: Vec<(MarketClass, AcceptanceClass, usize)> = vec![
        (MarketClass::Frictionless, AcceptanceClass::Strict, 100),
        (MarketClass::Proportional, AcceptanceClass::Strict, 100),
        (MarketClass::PiecewiseLinear, AcceptanceClass::Strict, 100),
        (MarketClass::ShortSaleBan, AcceptanceClass::Strict, 100),
        (MarketClass::Proportional, AcceptanceClass::Avar, 100),
        (MarketClass::Frictionless, AcceptanceClass::Entropic, 100),
    ];
    let total_t = Instant::now();
    let mut slow = 0usize;
    for (mc, ac, instances) in classes {
        let t0 = Instant::now();
        for k in 0..instances {
            let inst = gen.instance(mc, ac, k % 2 == 0);
            let zero = PathVector::zeros(inst.tree.num_paths());
            let t1 = Instant::now();
            let hedge = superhedge(&inst.tree, &inst.market, &inst.acceptance, &zero, 1e-9).unwrap();
            let dual = dual_superhedge(&inst.tree, &inst.market, &inst.acceptance, &zero, 1e-9, QMode::Hull).unwrap();
            let dt = t1.elapsed();
            if dt.as_millis() > 800 { slow += 1; eprintln!("slow {mc:?}/{ac:?}#{k} wild={} {dt:?} hedge {:?} dual {:.2e}", k%2==1, hedge.status, dual.value); }
            if hedge.status == HedgeStatus::IterLimit { eprintln!("ITERLIMIT {mc:?}/{ac:?}#{k}"); return; }
        }
        eprintln!("{mc:?}/{ac:?}: {:?}", t0.elapsed());
    }
    eprintln!("sweep done in {:?}, slow instances {slow}", total_t.elapsed());
}
