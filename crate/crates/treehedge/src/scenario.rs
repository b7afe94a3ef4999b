//! On-disk scenario format: a TOML document with the tree, named payoffs,
//! the market and the acceptance set. Unknown keys are rejected. Payoffs
//! and instrument legs accept either explicit per-path vectors or a small
//! expression grammar over terminal discounted prices (`call`, `put`,
//! `forward`, `price`, `basket`, `min`, `max`, and linear combinations).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acceptance::{AcceptanceSpec, LossFunction, OceEntry, PiecewiseLoss};
use crate::market::{
    AssetPolicy, Friction, MarketSpec, PiecewiseCost, StaticInstrument, SuperlinearCost,
};
use crate::tree::{build_tree, NodeSpec, PathVector, ScenarioTree, TreeSpec};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Toml(String),
    #[error("scenario schema: {0}")]
    Schema(String),
    #[error("payoff expression: {0}")]
    Expr(String),
    #[error(transparent)]
    Tree(#[from] crate::tree::TreeError),
    #[error(transparent)]
    Market(#[from] crate::market::MarketError),
    #[error(transparent)]
    Acceptance(#[from] crate::acceptance::AcceptanceError),
}

// ---------------------------------------------------------------------------
// Document structs (the literal file schema).

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub meta: MetaDoc,
    #[serde(rename = "node")]
    pub nodes: Vec<NodeDoc>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub payoff: BTreeMap<String, PayoffDoc>,
    #[serde(default, skip_serializing_if = "MarketDoc::is_empty")]
    pub market: MarketDoc,
    #[serde(default, skip_serializing_if = "AcceptanceDoc::is_default")]
    pub acceptance: AcceptanceDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaDoc {
    pub periods: usize,
    pub assets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDoc {
    pub id: usize,
    pub depth: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
    /// Numeraire first, then the risky assets.
    pub prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PayoffDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketDoc {
    /// Asset numbers (1-based) closed to dynamic trading.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub untradeable: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub short_sale_banned: Vec<usize>,
    #[serde(default, rename = "friction", skip_serializing_if = "Vec::is_empty")]
    pub frictions: Vec<FrictionDoc>,
    #[serde(
        default,
        rename = "friction_override",
        skip_serializing_if = "Vec::is_empty"
    )]
    pub friction_overrides: Vec<FrictionOverrideDoc>,
    #[serde(default, rename = "instrument", skip_serializing_if = "Vec::is_empty")]
    pub instruments: Vec<InstrumentDoc>,
}

impl MarketDoc {
    fn is_empty(&self) -> bool {
        self == &MarketDoc::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionDoc {
    pub asset: usize,
    /// Periods the friction applies to; all of them when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<usize>>,
    pub kind: FrictionKindDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FrictionKindDoc {
    Zero,
    Proportional { epsilon: f64 },
    Power { epsilon: f64, exponent: f64 },
    PiecewiseLinear { breakpoints: Vec<f64>, slopes: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionOverrideDoc {
    pub asset: usize,
    /// Node id from the `[[node]]` list.
    pub node: usize,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstrumentDoc {
    pub name: String,
    pub payoff: PayoffDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ask: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_position: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_position: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub superlinear: Option<SuperlinearDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuperlinearDoc {
    pub delta: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptanceDoc {
    pub kind: String,
    #[serde(default, rename = "entry", skip_serializing_if = "Vec::is_empty")]
    pub entries: Vec<OceEntryDoc>,
}

impl Default for AcceptanceDoc {
    fn default() -> Self {
        AcceptanceDoc {
            kind: "strict".into(),
            entries: Vec::new(),
        }
    }
}

impl AcceptanceDoc {
    fn is_default(&self) -> bool {
        self == &AcceptanceDoc::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OceEntryDoc {
    pub measure: Vec<f64>,
    pub loss: LossDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LossDoc {
    Avar {
        lambda: f64,
    },
    Entropic {
        lambda: f64,
    },
    Piecewise {
        breakpoints: Vec<f64>,
        slopes: Vec<f64>,
        anchor: f64,
    },
}

// ---------------------------------------------------------------------------
// Payoff expressions.

#[derive(Debug, Clone)]
enum Expr {
    Number(f64),
    Price(usize),
    Call { asset: usize, strike: f64 },
    Put { asset: usize, strike: f64 },
    Forward { asset: usize, strike: f64 },
    Basket { strike: f64, weights: Vec<f64> },
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Number(f64),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    End,
}

struct Lexer<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer { text, pos: 0 }
    }

    fn next_token(&mut self) -> Result<Token, ScenarioError> {
        let bytes = self.text.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos >= bytes.len() {
            return Ok(Token::End);
        }
        let c = bytes[self.pos];
        let start = self.pos;
        match c {
            b'(' => {
                self.pos += 1;
                Ok(Token::LParen)
            }
            b')' => {
                self.pos += 1;
                Ok(Token::RParen)
            }
            b',' => {
                self.pos += 1;
                Ok(Token::Comma)
            }
            b'+' => {
                self.pos += 1;
                Ok(Token::Plus)
            }
            b'-' => {
                self.pos += 1;
                Ok(Token::Minus)
            }
            b'*' => {
                self.pos += 1;
                Ok(Token::Star)
            }
            b'0'..=b'9' | b'.' => {
                while self.pos < bytes.len()
                    && (bytes[self.pos].is_ascii_digit()
                        || bytes[self.pos] == b'.'
                        || bytes[self.pos] == b'e'
                        || bytes[self.pos] == b'E'
                        || ((bytes[self.pos] == b'+' || bytes[self.pos] == b'-')
                            && (bytes[self.pos - 1] == b'e' || bytes[self.pos - 1] == b'E')))
                {
                    self.pos += 1;
                }
                let slice = &self.text[start..self.pos];
                slice
                    .parse::<f64>()
                    .map(Token::Number)
                    .map_err(|_| ScenarioError::Expr(format!("bad number `{slice}` at {start}")))
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                while self.pos < bytes.len()
                    && (bytes[self.pos].is_ascii_alphanumeric() || bytes[self.pos] == b'_')
                {
                    self.pos += 1;
                }
                Ok(Token::Ident(self.text[start..self.pos].to_string()))
            }
            other => Err(ScenarioError::Expr(format!(
                "unexpected character `{}` at {start}",
                other as char
            ))),
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    lookahead: Token,
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Result<Self, ScenarioError> {
        let mut lexer = Lexer::new(text);
        let lookahead = lexer.next_token()?;
        Ok(Parser { lexer, lookahead })
    }

    fn advance(&mut self) -> Result<Token, ScenarioError> {
        let next = self.lexer.next_token()?;
        Ok(std::mem::replace(&mut self.lookahead, next))
    }

    fn expect(&mut self, token: Token) -> Result<(), ScenarioError> {
        if self.lookahead == token {
            self.advance()?;
            Ok(())
        } else {
            Err(ScenarioError::Expr(format!(
                "expected {token:?}, found {:?}",
                self.lookahead
            )))
        }
    }

    fn expr(&mut self) -> Result<Expr, ScenarioError> {
        let mut acc = self.term()?;
        loop {
            match self.lookahead {
                Token::Plus => {
                    self.advance()?;
                    acc = Expr::Add(Box::new(acc), Box::new(self.term()?));
                }
                Token::Minus => {
                    self.advance()?;
                    acc = Expr::Sub(Box::new(acc), Box::new(self.term()?));
                }
                _ => return Ok(acc),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ScenarioError> {
        let mut acc = self.factor()?;
        while self.lookahead == Token::Star {
            self.advance()?;
            acc = Expr::Mul(Box::new(acc), Box::new(self.factor()?));
        }
        Ok(acc)
    }

    fn number(&mut self) -> Result<f64, ScenarioError> {
        let negative = if self.lookahead == Token::Minus {
            self.advance()?;
            true
        } else {
            false
        };
        match self.advance()? {
            Token::Number(v) => Ok(if negative { -v } else { v }),
            other => Err(ScenarioError::Expr(format!(
                "expected number, found {other:?}"
            ))),
        }
    }

    fn factor(&mut self) -> Result<Expr, ScenarioError> {
        match self.lookahead.clone() {
            Token::Minus => {
                self.advance()?;
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Token::Number(v) => {
                self.advance()?;
                Ok(Expr::Number(v))
            }
            Token::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                self.expect(Token::RParen)?;
                Ok(inner)
            }
            Token::Ident(name) => {
                self.advance()?;
                self.expect(Token::LParen)?;
                let out = match name.as_str() {
                    "call" | "put" | "forward" => {
                        let asset = self.number()? as usize;
                        self.expect(Token::Comma)?;
                        let strike = self.number()?;
                        match name.as_str() {
                            "call" => Expr::Call { asset, strike },
                            "put" => Expr::Put { asset, strike },
                            _ => Expr::Forward { asset, strike },
                        }
                    }
                    "price" => {
                        let asset = self.number()? as usize;
                        Expr::Price(asset)
                    }
                    "basket" => {
                        let strike = self.number()?;
                        let mut weights = Vec::new();
                        while self.lookahead == Token::Comma {
                            self.advance()?;
                            weights.push(self.number()?);
                        }
                        if weights.is_empty() {
                            return Err(ScenarioError::Expr(
                                "basket needs at least one weight".into(),
                            ));
                        }
                        Expr::Basket { strike, weights }
                    }
                    "min" | "max" => {
                        let a = self.expr()?;
                        self.expect(Token::Comma)?;
                        let b = self.expr()?;
                        if name == "min" {
                            Expr::Min(Box::new(a), Box::new(b))
                        } else {
                            Expr::Max(Box::new(a), Box::new(b))
                        }
                    }
                    other => {
                        return Err(ScenarioError::Expr(format!("unknown function `{other}`")))
                    }
                };
                self.expect(Token::RParen)?;
                Ok(out)
            }
            other => Err(ScenarioError::Expr(format!("unexpected token {other:?}"))),
        }
    }
}

fn eval_expr(expr: &Expr, tree: &ScenarioTree, path: usize) -> Result<f64, ScenarioError> {
    let terminal = |asset: usize| -> Result<f64, ScenarioError> {
        if asset == 0 || asset > tree.num_assets() {
            return Err(ScenarioError::Expr(format!(
                "asset {asset} out of range 1..={}",
                tree.num_assets()
            )));
        }
        let node = tree.terminal_nodes()[path];
        Ok(tree.discounted_price(asset, node).expect("validated"))
    };
    Ok(match expr {
        Expr::Number(v) => *v,
        Expr::Price(asset) => terminal(*asset)?,
        Expr::Call { asset, strike } => (terminal(*asset)? - strike).max(0.0),
        Expr::Put { asset, strike } => (strike - terminal(*asset)?).max(0.0),
        Expr::Forward { asset, strike } => terminal(*asset)? - strike,
        Expr::Basket { strike, weights } => {
            let mut acc = 0.0;
            for (i, w) in weights.iter().enumerate() {
                acc += w * terminal(i + 1)?;
            }
            (acc - strike).max(0.0)
        }
        Expr::Min(a, b) => eval_expr(a, tree, path)?.min(eval_expr(b, tree, path)?),
        Expr::Max(a, b) => eval_expr(a, tree, path)?.max(eval_expr(b, tree, path)?),
        Expr::Add(a, b) => eval_expr(a, tree, path)? + eval_expr(b, tree, path)?,
        Expr::Sub(a, b) => eval_expr(a, tree, path)? - eval_expr(b, tree, path)?,
        Expr::Mul(a, b) => eval_expr(a, tree, path)? * eval_expr(b, tree, path)?,
        Expr::Neg(a) => -eval_expr(a, tree, path)?,
    })
}

/// Evaluate a payoff expression against terminal discounted prices.
pub fn eval_payoff_expr(text: &str, tree: &ScenarioTree) -> Result<PathVector, ScenarioError> {
    let mut parser = Parser::new(text)?;
    let expr = parser.expr()?;
    if parser.lookahead != Token::End {
        return Err(ScenarioError::Expr(format!(
            "trailing input after expression: {:?}",
            parser.lookahead
        )));
    }
    (0..tree.num_paths())
        .map(|p| eval_expr(&expr, tree, p))
        .collect()
}

fn payoff_from_doc(
    doc: &PayoffDoc,
    tree: &ScenarioTree,
    what: &str,
) -> Result<PathVector, ScenarioError> {
    match (&doc.expr, &doc.values) {
        (Some(expr), None) => eval_payoff_expr(expr, tree),
        (None, Some(values)) => {
            if values.len() != tree.num_paths() {
                return Err(ScenarioError::Schema(format!(
                    "{what}: {} values for {} paths",
                    values.len(),
                    tree.num_paths()
                )));
            }
            Ok(PathVector::new(values.clone()))
        }
        _ => Err(ScenarioError::Schema(format!(
            "{what}: give exactly one of `expr` or `values`"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Document -> domain objects.

#[derive(Debug, Clone)]
pub struct ParsedScenario {
    pub doc: ScenarioDoc,
    pub tree: ScenarioTree,
    pub market: MarketSpec,
    pub acceptance: AcceptanceSpec,
    pub payoffs: BTreeMap<String, PathVector>,
}

pub fn parse_scenario(path: &Path) -> Result<ParsedScenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<ParsedScenario, ScenarioError> {
    let doc: ScenarioDoc = toml::from_str(text).map_err(|e| ScenarioError::Toml(e.to_string()))?;
    realize(doc)
}

fn friction_from_doc(kind: &FrictionKindDoc) -> Result<Friction, ScenarioError> {
    Ok(match kind {
        FrictionKindDoc::Zero => Friction::Zero,
        FrictionKindDoc::Proportional { epsilon } => Friction::Proportional { epsilon: *epsilon },
        FrictionKindDoc::Power { epsilon, exponent } => Friction::Power {
            epsilon: *epsilon,
            exponent: *exponent,
        },
        FrictionKindDoc::PiecewiseLinear {
            breakpoints,
            slopes,
        } => Friction::PiecewiseLinear(PiecewiseCost::new(breakpoints.clone(), slopes.clone())?),
    })
}

/// Turn a parsed document into validated domain objects.
pub fn realize(doc: ScenarioDoc) -> Result<ParsedScenario, ScenarioError> {
    let tree = build_tree(&TreeSpec {
        horizon: doc.meta.periods,
        assets: doc.meta.assets,
        nodes: doc
            .nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.id,
                depth: n.depth,
                parent: n.parent,
                prices: n.prices.clone(),
            })
            .collect(),
    })?;
    let index_of_spec: BTreeMap<usize, usize> = tree
        .nodes()
        .iter()
        .enumerate()
        .map(|(idx, n)| (n.spec_id, idx))
        .collect();

    let check_asset = |asset: usize| -> Result<(), ScenarioError> {
        if asset == 0 || asset > doc.meta.assets {
            Err(ScenarioError::Schema(format!(
                "asset {asset} out of range 1..={}",
                doc.meta.assets
            )))
        } else {
            Ok(())
        }
    };

    let mut assets: Vec<AssetPolicy> = (0..doc.meta.assets)
        .map(|_| AssetPolicy::frictionless(doc.meta.periods))
        .collect();
    for &a in &doc.market.untradeable {
        check_asset(a)?;
        assets[a - 1].tradeable = false;
    }
    for &a in &doc.market.short_sale_banned {
        check_asset(a)?;
        assets[a - 1].short_sale_banned = true;
    }
    for friction in &doc.market.frictions {
        check_asset(friction.asset)?;
        let f = friction_from_doc(&friction.kind)?;
        f.validate()?;
        let times: Vec<usize> = match &friction.times {
            Some(ts) => ts.clone(),
            None => (0..doc.meta.periods).collect(),
        };
        for &t in &times {
            if t >= doc.meta.periods {
                return Err(ScenarioError::Schema(format!(
                    "friction time {t} out of range 0..{}",
                    doc.meta.periods
                )));
            }
            assets[friction.asset - 1].frictions[t] = f.clone();
        }
    }
    for or in &doc.market.friction_overrides {
        check_asset(or.asset)?;
        let idx = index_of_spec.get(&or.node).ok_or_else(|| {
            ScenarioError::Schema(format!("friction override names unknown node {}", or.node))
        })?;
        assets[or.asset - 1]
            .epsilon_overrides
            .insert(*idx, or.epsilon);
    }

    let mut instruments = Vec::with_capacity(doc.market.instruments.len());
    for inst in &doc.market.instruments {
        let payoff = payoff_from_doc(&inst.payoff, &tree, &format!("instrument {}", inst.name))?;
        instruments.push(StaticInstrument {
            name: inst.name.clone(),
            payoff,
            bid: inst.bid.unwrap_or(f64::NEG_INFINITY),
            ask: inst.ask.unwrap_or(f64::INFINITY),
            superlinear: inst.superlinear.as_ref().map(|s| SuperlinearCost {
                delta: s.delta,
                exponent: s.exponent,
            }),
            min_position: inst.min_position.unwrap_or(f64::NEG_INFINITY),
            max_position: inst.max_position.unwrap_or(f64::INFINITY),
        });
    }
    let market = MarketSpec {
        assets,
        instruments,
    };
    market.validate(&tree)?;

    let acceptance = match doc.acceptance.kind.as_str() {
        "strict" => {
            if !doc.acceptance.entries.is_empty() {
                return Err(ScenarioError::Schema(
                    "strict acceptance takes no entries".into(),
                ));
            }
            AcceptanceSpec::Strict
        }
        "oce" => {
            let entries = doc
                .acceptance
                .entries
                .iter()
                .map(|e| -> Result<OceEntry, ScenarioError> {
                    let loss = match &e.loss {
                        LossDoc::Avar { lambda } => LossFunction::Avar { lambda: *lambda },
                        LossDoc::Entropic { lambda } => LossFunction::Entropic { lambda: *lambda },
                        LossDoc::Piecewise {
                            breakpoints,
                            slopes,
                            anchor,
                        } => LossFunction::PiecewiseLinear(PiecewiseLoss::new(
                            breakpoints.clone(),
                            slopes.clone(),
                            *anchor,
                        )?),
                    };
                    Ok(OceEntry {
                        measure: PathVector::new(e.measure.clone()),
                        loss,
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            AcceptanceSpec::RobustOce(entries)
        }
        other => {
            return Err(ScenarioError::Schema(format!(
                "acceptance kind must be `strict` or `oce`, got `{other}`"
            )))
        }
    };
    acceptance.validate(tree.num_paths())?;

    let mut payoffs = BTreeMap::new();
    for (name, pd) in &doc.payoff {
        payoffs.insert(name.clone(), payoff_from_doc(pd, &tree, name)?);
    }

    Ok(ParsedScenario {
        doc,
        tree,
        market,
        acceptance,
        payoffs,
    })
}

/// Serialize a document back to TOML. Parsing the result yields the same
/// domain objects.
pub fn emit_scenario(doc: &ScenarioDoc) -> String {
    toml::to_string_pretty(doc).expect("scenario docs serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
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
    "#;

    #[test]
    fn minimal_scenario_parses() {
        let parsed = parse_scenario_str(MINIMAL).unwrap();
        assert_eq!(parsed.tree.num_paths(), 2);
        assert!(parsed.market.instruments.is_empty());
        assert!(parsed.acceptance.is_strict());
        assert!(parsed.payoffs.is_empty());
    }

    #[test]
    fn call_expression_evaluates() {
        let text = format!("{MINIMAL}\n[payoff.call1]\nexpr = \"call(1, 1.0)\"\n");
        let parsed = parse_scenario_str(&text).unwrap();
        assert_eq!(parsed.payoffs["call1"].values(), &[1.0, 0.0]);
    }

    #[test]
    fn expression_grammar_combinations() {
        let parsed = parse_scenario_str(MINIMAL).unwrap();
        let tree = &parsed.tree;
        assert_eq!(
            eval_payoff_expr("2 * call(1, 1.0) - put(1, 1.0)", tree)
                .unwrap()
                .values(),
            &[2.0, -0.5]
        );
        assert_eq!(
            eval_payoff_expr("max(forward(1, 1.0), 0.25)", tree)
                .unwrap()
                .values(),
            &[1.0, 0.25]
        );
        assert_eq!(
            eval_payoff_expr("min(price(1), 1.5)", tree).unwrap().values(),
            &[1.5, 0.5]
        );
        assert_eq!(
            eval_payoff_expr("basket(0.5, 1.0)", tree).unwrap().values(),
            &[1.5, 0.0]
        );
        assert!(eval_payoff_expr("call(1, 1.0) +", tree).is_err());
        assert!(eval_payoff_expr("spread(1, 1.0)", tree).is_err());
        assert!(eval_payoff_expr("price(7)", tree).is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}\n[meta2]\nx = 1\n");
        assert!(matches!(
            parse_scenario_str(&text),
            Err(ScenarioError::Toml(_))
        ));
        let text = MINIMAL.replace("periods = 1", "periods = 1\nsurprise = 2");
        assert!(parse_scenario_str(&text).is_err());
    }

    #[test]
    fn crossed_quotes_fail_schema() {
        let text = format!(
            r#"{MINIMAL}
            [[market.instrument]]
            name = "c"
            payoff = {{ expr = "call(1, 1.0)" }}
            bid = 0.5
            ask = 0.4
            "#
        );
        assert!(matches!(
            parse_scenario_str(&text),
            Err(ScenarioError::Market(
                crate::market::MarketError::CrossedQuotes(_)
            ))
        ));
    }

    #[test]
    fn tree_invariants_delegate() {
        let text = MINIMAL.replace("prices = [1.0, 0.5]", "prices = [0.0, 0.5]");
        assert!(matches!(
            parse_scenario_str(&text),
            Err(ScenarioError::Tree(
                crate::tree::TreeError::NonpositiveNumeraire(2)
            ))
        ));
    }

    #[test]
    fn oce_acceptance_parses() {
        let text = format!(
            r#"{MINIMAL}
            [acceptance]
            kind = "oce"

            [[acceptance.entry]]
            measure = [0.5, 0.5]
            loss = {{ avar = {{ lambda = 0.5 }} }}

            [[acceptance.entry]]
            measure = [0.25, 0.75]
            loss = {{ entropic = {{ lambda = 1.5 }} }}
            "#
        );
        let parsed = parse_scenario_str(&text).unwrap();
        assert_eq!(parsed.acceptance.entries().len(), 2);
    }

    #[test]
    fn round_trip_preserves_domain_objects() {
        let text = format!(
            r#"{MINIMAL}
            [payoff.call1]
            expr = "call(1, 1.0)"

            [[market.friction]]
            asset = 1
            kind = {{ proportional = {{ epsilon = 0.1 }} }}

            [[market.friction_override]]
            asset = 1
            node = 0
            epsilon = 0.2

            [[market.instrument]]
            name = "c"
            payoff = {{ values = [1.0, 0.0] }}
            bid = 0.3
            ask = 0.35

            [acceptance]
            kind = "oce"

            [[acceptance.entry]]
            measure = [0.5, 0.5]
            loss = {{ avar = {{ lambda = 0.5 }} }}
            "#
        );
        let first = parse_scenario_str(&text).unwrap();
        let emitted = emit_scenario(&first.doc);
        let second = parse_scenario_str(&emitted).unwrap();
        assert_eq!(first.tree, second.tree);
        assert_eq!(first.market, second.market);
        assert_eq!(first.acceptance, second.acceptance);
        assert_eq!(first.payoffs, second.payoffs);
        assert_eq!(first.doc, second.doc);
    }
}
