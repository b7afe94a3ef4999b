//! Result reports in two renderings: human-readable text and a line-based
//! `key=value` machine format with a stable key set. The gap lines are
//! recomputed from the stored values at emit time.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

/// Which price bound(s) a command works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Super,
    Sub,
    Both,
}

impl Side {
    pub fn wants_super(self) -> bool {
        matches!(self, Side::Super | Side::Both)
    }
    pub fn wants_sub(self) -> bool {
        matches!(self, Side::Sub | Side::Both)
    }
    pub fn as_str(self) -> &'static str {
        match self {
            Side::Super => "super",
            Side::Sub => "sub",
            Side::Both => "both",
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BoundReport {
    pub primal: Option<f64>,
    pub dual: Option<f64>,
    pub status: Option<String>,
    pub measure: Option<Vec<f64>>,
    pub residual_min: Option<f64>,
    pub acceptance_violation: Option<f64>,
    pub measure_worst_slack: Option<f64>,
    pub penalty: Option<f64>,
}

impl BoundReport {
    pub fn gap(&self) -> Option<f64> {
        match (self.primal, self.dual) {
            (Some(p), Some(d)) => Some((p - d).abs()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FtapReport {
    pub arbitrage: bool,
    pub certified: String,
    pub margin: Option<f64>,
    pub outcome: Option<Vec<f64>>,
    pub measure: Option<Vec<f64>>,
    pub measure_worst_slack: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub passed: usize,
    pub failed: usize,
    pub lines: Vec<String>,
}

/// Everything a command run produces, ready to render.
#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub digest: String,
    pub payoff: Option<String>,
    pub side: Side,
    pub tol: f64,
    pub qmode: String,
    pub upper: BoundReport,
    pub lower: BoundReport,
    pub strategy: Option<Vec<(String, f64)>>,
    pub ftap: Option<FtapReport>,
    pub selftest: Option<SelftestReport>,
    pub timing_ms: f64,
}

impl Report {
    pub fn new(command: &str, digest: &str) -> Self {
        Report {
            command: command.into(),
            digest: digest.into(),
            payoff: None,
            side: Side::Both,
            tol: 1e-7,
            qmode: "hull".into(),
            upper: BoundReport::default(),
            lower: BoundReport::default(),
            strategy: None,
            ftap: None,
            selftest: None,
            timing_ms: 0.0,
        }
    }

    /// Human-oriented rendering; dual measures are listed only up to
    /// `max_measure_paths` entries.
    pub fn render_text(&self, max_measure_paths: usize) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command: {}   scenario digest: {}", self.command, self.digest);
        if let Some(payoff) = &self.payoff {
            let _ = writeln!(out, "payoff: {payoff}   side: {}   tol: {:e}", self.side.as_str(), self.tol);
        }
        let bound_block = |label: &str, b: &BoundReport, out: &mut String| {
            if b.primal.is_none() && b.dual.is_none() {
                return;
            }
            let _ = write!(out, "{label}: ");
            if let Some(p) = b.primal {
                let _ = write!(out, "hedge {p:.9}  ");
            }
            if let Some(d) = b.dual {
                let _ = write!(out, "measure {d:.9}  ");
            }
            if let Some(g) = b.gap() {
                let _ = write!(out, "gap {g:.2e}  ");
            }
            if let Some(s) = &b.status {
                let _ = write!(out, "[{s}]");
            }
            let _ = writeln!(out);
            if let Some(r) = b.residual_min {
                let _ = writeln!(out, "  worst residual: {r:.3e}");
            }
            if let Some(v) = b.acceptance_violation {
                let _ = writeln!(out, "  acceptance violation: {v:.3e}");
            }
            if let Some(pen) = b.penalty {
                let _ = writeln!(out, "  measure penalty: {pen:.9}");
            }
            if let Some(s) = b.measure_worst_slack {
                let _ = writeln!(out, "  measure worst slack: {s:.3e}");
            }
            if let Some(measure) = &b.measure {
                if measure.len() <= max_measure_paths {
                    let entries: Vec<String> =
                        measure.iter().map(|v| format!("{v:.6}")).collect();
                    let _ = writeln!(out, "  measure: [{}]", entries.join(", "));
                } else {
                    let _ = writeln!(
                        out,
                        "  measure: {} paths (too many to list; use --format machine)",
                        measure.len()
                    );
                }
            }
        };
        bound_block("upper", &self.upper, &mut out);
        bound_block("lower", &self.lower, &mut out);
        if let Some(strategy) = &self.strategy {
            let _ = writeln!(out, "strategy:");
            for (label, value) in strategy {
                if value.abs() > 1e-12 {
                    let _ = writeln!(out, "  {label} = {value:.9}");
                }
            }
        }
        if let Some(ftap) = &self.ftap {
            let verdict = if ftap.arbitrage { "ARBITRAGE" } else { "NO ARBITRAGE" };
            let _ = writeln!(out, "verdict: {verdict}");
            let _ = writeln!(out, "certified: {}", ftap.certified);
            if let Some(m) = ftap.margin {
                let _ = writeln!(out, "margin: {m:.9}");
            }
            if let Some(o) = &ftap.outcome {
                if o.len() <= max_measure_paths {
                    let entries: Vec<String> = o.iter().map(|v| format!("{v:.6}")).collect();
                    let _ = writeln!(out, "outcome: [{}]", entries.join(", "));
                }
            }
            if let Some(m) = &ftap.measure {
                if m.len() <= max_measure_paths {
                    let entries: Vec<String> = m.iter().map(|v| format!("{v:.6}")).collect();
                    let _ = writeln!(out, "measure: [{}]", entries.join(", "));
                }
            }
            if let Some(s) = ftap.measure_worst_slack {
                let _ = writeln!(out, "measure worst slack: {s:.3e}");
            }
        }
        if let Some(selftest) = &self.selftest {
            for line in &selftest.lines {
                let _ = writeln!(out, "{line}");
            }
            let _ = writeln!(
                out,
                "selftest: {} passed, {} failed",
                selftest.passed, selftest.failed
            );
        }
        let _ = writeln!(out, "elapsed: {:.1} ms", self.timing_ms);
        out
    }

    /// Stable line-oriented rendering: sorted `key=value` pairs, floats in
    /// scientific notation, the timing line last.
    pub fn render_machine(&self) -> String {
        let mut pairs: Vec<(String, String)> = vec![
            ("command".into(), self.command.clone()),
            ("digest".into(), self.digest.clone()),
            ("side".into(), self.side.as_str().into()),
            ("tol".into(), fmt(self.tol)),
            ("qmode".into(), self.qmode.clone()),
        ];
        if let Some(payoff) = &self.payoff {
            pairs.push(("payoff".into(), payoff.clone()));
        }
        let bound = |prefix: &str, b: &BoundReport, pairs: &mut Vec<(String, String)>| {
            if let Some(p) = b.primal {
                pairs.push((format!("{prefix}.primal"), fmt(p)));
            }
            if let Some(d) = b.dual {
                pairs.push((format!("{prefix}.dual"), fmt(d)));
            }
            if let Some(g) = b.gap() {
                pairs.push((format!("{prefix}.gap"), fmt(g)));
            }
            if let Some(s) = &b.status {
                pairs.push((format!("{prefix}.status"), s.clone()));
            }
            if let Some(r) = b.residual_min {
                pairs.push((format!("{prefix}.residual_min"), fmt(r)));
            }
            if let Some(v) = b.acceptance_violation {
                pairs.push((format!("{prefix}.acceptance_violation"), fmt(v)));
            }
            if let Some(pen) = b.penalty {
                pairs.push((format!("{prefix}.penalty"), fmt(pen)));
            }
            if let Some(s) = b.measure_worst_slack {
                pairs.push((format!("{prefix}.measure_slack"), fmt(s)));
            }
            if let Some(measure) = &b.measure {
                for (i, v) in measure.iter().enumerate() {
                    pairs.push((format!("{prefix}.measure.{i}"), fmt(*v)));
                }
            }
        };
        bound("super", &self.upper, &mut pairs);
        bound("sub", &self.lower, &mut pairs);
        if let Some(strategy) = &self.strategy {
            for (label, value) in strategy {
                pairs.push((format!("strategy.{label}"), fmt(*value)));
            }
        }
        if let Some(ftap) = &self.ftap {
            pairs.push(("ftap.arbitrage".into(), ftap.arbitrage.to_string()));
            if let Some(m) = ftap.margin {
                pairs.push(("ftap.margin".into(), fmt(m)));
            }
            if let Some(o) = &ftap.outcome {
                for (i, v) in o.iter().enumerate() {
                    pairs.push((format!("ftap.outcome.{i}"), fmt(*v)));
                }
            }
            if let Some(m) = &ftap.measure {
                for (i, v) in m.iter().enumerate() {
                    pairs.push((format!("ftap.measure.{i}"), fmt(*v)));
                }
            }
            if let Some(s) = ftap.measure_worst_slack {
                pairs.push(("ftap.measure_slack".into(), fmt(s)));
            }
        }
        if let Some(selftest) = &self.selftest {
            pairs.push(("selftest.passed".into(), selftest.passed.to_string()));
            pairs.push(("selftest.failed".into(), selftest.failed.to_string()));
            for (i, line) in selftest.lines.iter().enumerate() {
                pairs.push((format!("selftest.line.{i:03}"), line.clone()));
            }
        }
        pairs.sort();
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k}={v}");
        }
        let _ = writeln!(out, "timing_ms={:.3}", self.timing_ms);
        out
    }
}

fn fmt(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:.12e}")
    }
}

/// Short content digest of a scenario's canonical serialization, echoed in
/// reports so outputs are traceable to inputs.
pub fn scenario_digest(canonical_toml: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(canonical_toml.as_bytes());
    let digest = hasher.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_is_recomputed_at_emit() {
        let mut report = Report::new("bounds", "deadbeef");
        report.upper.primal = Some(1.0 / 3.0);
        report.upper.dual = Some(1.0 / 3.0 + 5e-9);
        let machine = report.render_machine();
        assert!(machine.contains("super.gap=5.0"), "{machine}");
        assert!(machine.contains("super.primal=3.333333333333e-1"));
    }

    #[test]
    fn machine_keys_are_sorted_and_timing_last() {
        let mut report = Report::new("bounds", "x");
        report.upper.primal = Some(1.0);
        report.lower.primal = Some(0.5);
        let machine = report.render_machine();
        let lines: Vec<&str> = machine.lines().collect();
        assert!(lines.last().unwrap().starts_with("timing_ms="));
        let mut sorted = lines[..lines.len() - 1].to_vec();
        sorted.sort();
        assert_eq!(sorted, lines[..lines.len() - 1].to_vec());
    }

    #[test]
    fn digest_is_stable() {
        assert_eq!(scenario_digest("abc"), scenario_digest("abc"));
        assert_ne!(scenario_digest("abc"), scenario_digest("abd"));
        assert_eq!(scenario_digest("abc").len(), 16);
    }

    #[test]
    fn infinities_render() {
        assert_eq!(fmt(f64::INFINITY), "inf");
        assert_eq!(fmt(f64::NEG_INFINITY), "-inf");
    }
}
