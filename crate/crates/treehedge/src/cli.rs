//! Command-line surface: `price`, `bounds`, `ftap`, `dualize` and
//! `selftest` over scenario files, with text or machine reports.
//!
//! Exit codes: 0 success, 1 solver failure, 2 input error, 3 selftest
//! failure, 4 arbitrage found by `ftap` (distinct so scripts can branch).

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::dual::{dual_subhedge, dual_superhedge, ftap_check, FtapVerdict, QMode};
use crate::error::EngineError;
use crate::market::{MarketSpec, Strategy};
use crate::oracle::{
    grid_primal_value, vertex_dual_value, AcceptanceClass, GridSpec, InstanceGenerator,
    MarketClass, OracleError,
};
use crate::primal::{subhedge, superhedge, HedgeResult, HedgeStatus};
use crate::report::{scenario_digest, BoundReport, FtapReport, Report, SelftestReport, Side};
use crate::scenario::{emit_scenario, parse_scenario, ParsedScenario, ScenarioError};
use crate::tree::{PathVector, ScenarioTree};

pub const EXIT_OK: u8 = 0;
pub const EXIT_SOLVER: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_SELFTEST: u8 = 3;
pub const EXIT_ARBITRAGE: u8 = 4;

/// Paths in text reports beyond this count are summarized, not listed.
const TEXT_MEASURE_CAP: usize = 50;

#[derive(Parser, Debug)]
#[command(
    name = "treehedge",
    about = "Robust price bounds and arbitrage certificates on scenario trees",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SideArg {
    Super,
    Sub,
    Both,
}

impl From<SideArg> for Side {
    fn from(side: SideArg) -> Side {
        match side {
            SideArg::Super => Side::Super,
            SideArg::Sub => Side::Sub,
            SideArg::Both => Side::Both,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Machine,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum QModeArg {
    Hull,
    Generators,
}

impl From<QModeArg> for QMode {
    fn from(q: QModeArg) -> QMode {
        match q {
            QModeArg::Hull => QMode::Hull,
            QModeArg::Generators => QMode::Generators,
        }
    }
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Scenario file to load.
    #[arg(long)]
    scenario: PathBuf,
    /// Named payoff from the scenario (may be omitted when there is one).
    #[arg(long)]
    payoff: Option<String>,
    #[arg(long, value_enum, default_value_t = SideArg::Both)]
    side: SideArg,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    /// Reading of the "some reference measure" clause in risk constraints.
    #[arg(long = "dual-qmode", value_enum, default_value_t = QModeArg::Hull)]
    qmode: QModeArg,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Hedging prices only (no dual solve).
    Price(CommonArgs),
    /// Hedging and measure values for both sides, with the gap.
    Bounds(CommonArgs),
    /// Arbitrage verdict with a certificate.
    Ftap(CommonArgs),
    /// Measure side only, with the optimizing measure dumped.
    Dualize(CommonArgs),
    /// Seeded oracle cross-checks (hedge vs measure vs exact vertices).
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Instances per market/acceptance class.
        #[arg(long, default_value_t = 6)]
        instances: usize,
        #[arg(long, value_enum, default_value_t = FormatArg::Text)]
        format: FormatArg,
    },
}

pub fn run_from_env() -> u8 {
    let args: Vec<String> = std::env::args().collect();
    let mut stdout = std::io::stdout();
    run(args, &mut stdout)
}

/// Parse arguments, dispatch, print the report. Returns the exit code.
pub fn run<I, S>(args: I, out: &mut dyn std::io::Write) -> u8
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version through errors as well.
            let is_help = e.use_stderr();
            let _ = e.print();
            return if is_help { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            failure.code
        }
    }
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::input(e.to_string())
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        let code = match &e {
            EngineError::Solver(_) | EngineError::Internal(_) => EXIT_SOLVER,
            _ => EXIT_INPUT,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn dispatch(cli: Cli, out: &mut dyn std::io::Write) -> Result<u8, Failure> {
    match cli.command {
        Command::Price(args) => command_price(args, out, false),
        Command::Bounds(args) => command_price(args, out, true),
        Command::Ftap(args) => command_ftap(args, out),
        Command::Dualize(args) => command_dualize(args, out),
        Command::Selftest {
            seed,
            instances,
            format,
        } => command_selftest(seed, instances, format, out),
    }
}

fn load(args: &CommonArgs) -> Result<(ParsedScenario, String), Failure> {
    let parsed = parse_scenario(&args.scenario)?;
    let digest = scenario_digest(&emit_scenario(&parsed.doc));
    Ok((parsed, digest))
}

fn pick_payoff<'a>(
    parsed: &'a ParsedScenario,
    requested: &Option<String>,
) -> Result<(String, &'a PathVector), Failure> {
    match requested {
        Some(name) => parsed
            .payoffs
            .get(name)
            .map(|p| (name.clone(), p))
            .ok_or_else(|| {
                Failure::input(format!(
                    "payoff `{name}` not in scenario (available: {})",
                    parsed.payoffs.keys().cloned().collect::<Vec<_>>().join(", ")
                ))
            }),
        None => {
            if parsed.payoffs.len() == 1 {
                let (name, p) = parsed.payoffs.iter().next().expect("one entry");
                Ok((name.clone(), p))
            } else {
                Err(Failure::input(format!(
                    "scenario has {} payoffs; pick one with --payoff",
                    parsed.payoffs.len()
                )))
            }
        }
    }
}

fn hedge_status(r: &HedgeResult) -> String {
    match r.status {
        HedgeStatus::Optimal => "optimal".into(),
        HedgeStatus::Unbounded => "unbounded (arbitrage)".into(),
        HedgeStatus::IterLimit => "iteration limit".into(),
    }
}

fn strategy_labels(
    tree: &ScenarioTree,
    market: &MarketSpec,
    strategy: &Strategy,
) -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for (j, policy) in market.assets.iter().enumerate() {
        if !policy.tradeable {
            continue;
        }
        let asset = j + 1;
        for &node in tree.non_terminal_nodes() {
            let value = strategy.holding(tree, asset, node);
            out.push((
                format!("theta[a{asset},n{}]", tree.node(node).spec_id),
                value,
            ));
        }
    }
    for (i, inst) in market.instruments.iter().enumerate() {
        out.push((format!("pos[{}]", inst.name), strategy.theta(i)));
    }
    out
}

fn write_report(
    report: &Report,
    format: FormatArg,
    out: &mut dyn std::io::Write,
) -> Result<(), Failure> {
    let text = match format {
        FormatArg::Text => report.render_text(TEXT_MEASURE_CAP),
        FormatArg::Machine => report.render_machine(),
    };
    out.write_all(text.as_bytes()).map_err(|e| Failure {
        code: EXIT_SOLVER,
        message: format!("cannot write report: {e}"),
    })
}

fn fill_primal(
    bound: &mut BoundReport,
    result: &HedgeResult,
) {
    bound.primal = Some(result.price);
    bound.status = Some(hedge_status(result));
    bound.residual_min = result.residual.as_ref().map(|r| r.min());
    bound.acceptance_violation = result.max_violation;
}

fn command_price(
    args: CommonArgs,
    out: &mut dyn std::io::Write,
    with_dual: bool,
) -> Result<u8, Failure> {
    let start = Instant::now();
    let (parsed, digest) = load(&args)?;
    let (payoff_name, payoff) = pick_payoff(&parsed, &args.payoff)?;
    let side: Side = args.side.into();
    let qmode: QMode = args.qmode.into();

    let mut report = Report::new(if with_dual { "bounds" } else { "price" }, &digest);
    report.payoff = Some(payoff_name);
    report.side = side;
    report.tol = args.tol;
    report.qmode = format!("{qmode:?}").to_lowercase();

    let mut solver_trouble = false;
    if side.wants_super() {
        let upper = superhedge(&parsed.tree, &parsed.market, &parsed.acceptance, payoff, args.tol)?;
        solver_trouble |= upper.status == HedgeStatus::IterLimit;
        fill_primal(&mut report.upper, &upper);
        if let Some(strategy) = &upper.strategy {
            report.strategy = Some(strategy_labels(&parsed.tree, &parsed.market, strategy));
        }
        if with_dual {
            let dual = dual_superhedge(
                &parsed.tree,
                &parsed.market,
                &parsed.acceptance,
                payoff,
                args.tol,
                qmode,
            )?;
            report.upper.dual = Some(dual.value);
            if let Some(m) = dual.measure {
                report.upper.measure = Some(m.probabilities.values().to_vec());
                report.upper.penalty = Some(m.penalty);
                report.upper.measure_worst_slack = Some(m.residuals.worst());
            }
        }
    }
    if side.wants_sub() {
        let lower = subhedge(&parsed.tree, &parsed.market, &parsed.acceptance, payoff, args.tol)?;
        solver_trouble |= lower.status == HedgeStatus::IterLimit;
        fill_primal(&mut report.lower, &lower);
        if report.strategy.is_none() {
            if let Some(strategy) = &lower.strategy {
                report.strategy = Some(strategy_labels(&parsed.tree, &parsed.market, strategy));
            }
        }
        if with_dual {
            let dual = dual_subhedge(
                &parsed.tree,
                &parsed.market,
                &parsed.acceptance,
                payoff,
                args.tol,
                qmode,
            )?;
            report.lower.dual = Some(dual.value);
            if let Some(m) = dual.measure {
                report.lower.measure = Some(m.probabilities.values().to_vec());
                report.lower.penalty = Some(m.penalty);
                report.lower.measure_worst_slack = Some(m.residuals.worst());
            }
        }
    }
    report.timing_ms = start.elapsed().as_secs_f64() * 1e3;
    write_report(&report, args.format, out)?;
    Ok(if solver_trouble { EXIT_SOLVER } else { EXIT_OK })
}

fn command_dualize(args: CommonArgs, out: &mut dyn std::io::Write) -> Result<u8, Failure> {
    let start = Instant::now();
    let (parsed, digest) = load(&args)?;
    let (payoff_name, payoff) = pick_payoff(&parsed, &args.payoff)?;
    let side: Side = args.side.into();
    let qmode: QMode = args.qmode.into();

    let mut report = Report::new("dualize", &digest);
    report.payoff = Some(payoff_name);
    report.side = side;
    report.tol = args.tol;
    report.qmode = format!("{qmode:?}").to_lowercase();

    if side.wants_super() {
        let dual = dual_superhedge(
            &parsed.tree,
            &parsed.market,
            &parsed.acceptance,
            payoff,
            args.tol,
            qmode,
        )?;
        report.upper.dual = Some(dual.value);
        report.upper.status = Some(if dual.empty_feasible_set {
            "empty admissible set (arbitrage)".into()
        } else {
            "optimal".into()
        });
        if let Some(m) = dual.measure {
            report.upper.measure = Some(m.probabilities.values().to_vec());
            report.upper.penalty = Some(m.penalty);
            report.upper.measure_worst_slack = Some(m.residuals.worst());
        }
    }
    if side.wants_sub() {
        let dual = dual_subhedge(
            &parsed.tree,
            &parsed.market,
            &parsed.acceptance,
            payoff,
            args.tol,
            qmode,
        )?;
        report.lower.dual = Some(dual.value);
        report.lower.status = Some(if dual.empty_feasible_set {
            "empty admissible set (arbitrage)".into()
        } else {
            "optimal".into()
        });
        if let Some(m) = dual.measure {
            report.lower.measure = Some(m.probabilities.values().to_vec());
            report.lower.penalty = Some(m.penalty);
            report.lower.measure_worst_slack = Some(m.residuals.worst());
        }
    }
    report.timing_ms = start.elapsed().as_secs_f64() * 1e3;
    write_report(&report, args.format, out)?;
    Ok(EXIT_OK)
}

fn command_ftap(args: CommonArgs, out: &mut dyn std::io::Write) -> Result<u8, Failure> {
    let start = Instant::now();
    let (parsed, digest) = load(&args)?;
    let mut report = Report::new("ftap", &digest);
    report.tol = args.tol;
    report.qmode = "hull".into();

    let verdict = ftap_check(&parsed.tree, &parsed.market, &parsed.acceptance, args.tol)?;
    let arbitrage = verdict.is_arbitrage();
    match &verdict {
        FtapVerdict::Arbitrage {
            strategy,
            outcome,
            margin,
        } => {
            report.strategy = Some(strategy_labels(&parsed.tree, &parsed.market, strategy));
            report.ftap = Some(FtapReport {
                arbitrage: true,
                certified: verdict.certified_condition().into(),
                margin: Some(*margin),
                outcome: Some(outcome.values().to_vec()),
                measure: None,
                measure_worst_slack: None,
            });
        }
        FtapVerdict::NoArbitrage { measure } => {
            report.ftap = Some(FtapReport {
                arbitrage: false,
                certified: verdict.certified_condition().into(),
                margin: None,
                outcome: None,
                measure: Some(measure.probabilities.values().to_vec()),
                measure_worst_slack: Some(measure.residuals.worst()),
            });
        }
    }
    report.timing_ms = start.elapsed().as_secs_f64() * 1e3;
    write_report(&report, args.format, out)?;
    Ok(if arbitrage { EXIT_ARBITRAGE } else { EXIT_OK })
}

// ---------------------------------------------------------------------------
// Selftest: the oracle sandwich on seeded random instances.

struct ClassOutcome {
    label: String,
    passed: usize,
    failed: usize,
    notes: Vec<String>,
}

fn selftest_class(
    gen: &mut InstanceGenerator,
    market_class: MarketClass,
    acceptance_class: AcceptanceClass,
    instances: usize,
) -> Result<ClassOutcome, Failure> {
    let label = format!("{market_class:?}/{acceptance_class:?}").to_lowercase();
    let mut passed = 0;
    let mut failed = 0;
    let mut notes = Vec::new();
    for k in 0..instances {
        let inst = gen.instance(market_class, acceptance_class, true);
        let mut ok = true;
        let upper = superhedge(&inst.tree, &inst.market, &inst.acceptance, &inst.payoff, 1e-9)?;
        let lower = subhedge(&inst.tree, &inst.market, &inst.acceptance, &inst.payoff, 1e-9)?;
        if upper.status == HedgeStatus::Optimal && lower.status == HedgeStatus::Optimal {
            if lower.price > upper.price + 1e-7 {
                ok = false;
                notes.push(format!(
                    "{label}#{k}: ordering failed ({} > {})",
                    lower.price, upper.price
                ));
            }
        }
        if upper.status == HedgeStatus::Optimal {
            let dual = dual_superhedge(
                &inst.tree,
                &inst.market,
                &inst.acceptance,
                &inst.payoff,
                1e-9,
                QMode::Hull,
            )?;
            if (dual.value - upper.price).abs() > 1e-6 {
                ok = false;
                notes.push(format!(
                    "{label}#{k}: duality gap {} (hedge {}, measure {})",
                    (dual.value - upper.price).abs(),
                    upper.price,
                    dual.value
                ));
            }
            if inst.tree.num_paths() <= 8 {
                match vertex_dual_value(&inst.tree, &inst.market, &inst.acceptance, &inst.payoff) {
                    Ok(v) => {
                        if v.feasible && (v.value - dual.value).abs() > 1e-7 {
                            ok = false;
                            notes.push(format!(
                                "{label}#{k}: vertex oracle {} vs measure {}",
                                v.value, dual.value
                            ));
                        }
                    }
                    Err(OracleError::NonlinearInstance)
                    | Err(OracleError::UnsupportedAcceptance)
                    | Err(OracleError::TooLarge { .. }) => {}
                    Err(e) => return Err(Failure::input(e.to_string())),
                }
            }
            // The strategy grid can only over-estimate the hedge price.
            match grid_primal_value(
                &inst.tree,
                &inst.market,
                &inst.acceptance,
                &inst.payoff,
                GridSpec {
                    bound: 3.0,
                    steps: 7,
                },
            ) {
                Ok(g) => {
                    if g.value < upper.price - 1e-7 {
                        ok = false;
                        notes.push(format!(
                            "{label}#{k}: grid bound {} below hedge {}",
                            g.value, upper.price
                        ));
                    }
                }
                Err(OracleError::TooManyDims { .. }) => {}
                Err(e) => return Err(Failure::input(e.to_string())),
            }
        }
        if ok {
            passed += 1;
        } else {
            failed += 1;
        }
    }
    Ok(ClassOutcome {
        label,
        passed,
        failed,
        notes,
    })
}

fn command_selftest(
    seed: u64,
    instances: usize,
    format: FormatArg,
    out: &mut dyn std::io::Write,
) -> Result<u8, Failure> {
    let start = Instant::now();
    let mut gen = InstanceGenerator::new(seed);
    let classes = [
        (MarketClass::Frictionless, AcceptanceClass::Strict),
        (MarketClass::Proportional, AcceptanceClass::Strict),
        (MarketClass::PiecewiseLinear, AcceptanceClass::Strict),
        (MarketClass::ShortSaleBan, AcceptanceClass::Strict),
        (MarketClass::Frictionless, AcceptanceClass::Avar),
        (MarketClass::Proportional, AcceptanceClass::Avar),
        (MarketClass::PiecewiseLinear, AcceptanceClass::Avar),
        (MarketClass::ShortSaleBan, AcceptanceClass::Avar),
    ];
    let mut lines = Vec::new();
    let mut passed = 0;
    let mut failed = 0;
    for (market_class, acceptance_class) in classes {
        let outcome = selftest_class(&mut gen, market_class, acceptance_class, instances)?;
        lines.push(format!(
            "{}: {} passed, {} failed",
            outcome.label, outcome.passed, outcome.failed
        ));
        lines.extend(outcome.notes);
        passed += outcome.passed;
        failed += outcome.failed;
    }
    let mut report = Report::new("selftest", "-");
    report.payoff = None;
    report.selftest = Some(SelftestReport {
        passed,
        failed,
        lines,
    });
    report.timing_ms = start.elapsed().as_secs_f64() * 1e3;
    write_report(&report, format, out)?;
    Ok(if failed > 0 { EXIT_SELFTEST } else { EXIT_OK })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (u8, String) {
        let mut buffer = Vec::new();
        let argv: Vec<String> = std::iter::once("treehedge".to_string())
            .chain(args.iter().map(|s| s.to_string()))
            .collect();
        let code = run(argv, &mut buffer);
        (code, String::from_utf8(buffer).unwrap())
    }

    fn write_scenario(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(content.as_bytes()).unwrap();
        file
    }

    const BINOMIAL: &str = r#"
        [meta]
        periods = 1
        assets = 1

        [[node]]
        id = 0
        depth = 0
        prices = [1.0, 1.0]

        [[node]]
        id = 1
        depth = 1
        parent = 0
        prices = [1.0, 2.0]

        [[node]]
        id = 2
        depth = 1
        parent = 0
        prices = [1.0, 0.5]

        [payoff.call1]
        expr = "call(1, 1.0)"
    "#;

    #[test]
    fn bounds_on_the_binomial_call() {
        let file = write_scenario(BINOMIAL);
        let (code, output) = run_args(&[
            "bounds",
            "--scenario",
            file.path().to_str().unwrap(),
            "--format",
            "machine",
        ]);
        assert_eq!(code, EXIT_OK, "{output}");
        assert!(output.contains("super.primal=3.333333333"), "{output}");
        assert!(output.contains("sub.primal=3.333333333"), "{output}");
        assert!(output.contains("super.measure.0=3.333333333"), "{output}");
    }

    #[test]
    fn missing_file_is_input_error() {
        let (code, _) = run_args(&["price", "--scenario", "/nonexistent/file.toml"]);
        assert_eq!(code, EXIT_INPUT);
    }

    #[test]
    fn ftap_exit_code_on_arbitrage() {
        let text = BINOMIAL.replace("prices = [1.0, 0.5]", "prices = [1.0, 1.5]");
        let file = write_scenario(&text);
        let (code, output) =
            run_args(&["ftap", "--scenario", file.path().to_str().unwrap()]);
        assert_eq!(code, EXIT_ARBITRAGE, "{output}");
        assert!(output.contains("ARBITRAGE"), "{output}");
    }

    #[test]
    fn unknown_payoff_is_input_error() {
        let file = write_scenario(BINOMIAL);
        let (code, _) = run_args(&[
            "price",
            "--scenario",
            file.path().to_str().unwrap(),
            "--payoff",
            "nope",
        ]);
        assert_eq!(code, EXIT_INPUT);
    }

    #[test]
    fn selftest_passes_quickly() {
        let (code, output) = run_args(&["selftest", "--seed", "3", "--instances", "2"]);
        assert_eq!(code, EXIT_OK, "{output}");
        assert!(output.contains("selftest:"), "{output}");
        assert!(output.contains("0 failed"), "{output}");
    }
}
