//! Deterministic-equivalent LP of the multi-stage asset-allocation model.
//!
//! The universe has two assets: `risky`, whose per-node returns come from the
//! scenario tree, and `cash`, which earns a deterministic rate. With `A = 2`
//! assets, `N` tree nodes, `I` nodes at stages `2..T-1` and `L` leaves, the
//! emitted model has
//!
//! * `A*N + 2*A*I + 2*L` variables: holdings `b_<asset>_<node>` at every
//!   node, purchases `p_<asset>_<node>` and sales `s_<asset>_<node>` at
//!   interior nodes, terminal wealth `W_<leaf>` and shortfall `d_<leaf>`;
//! * `1 + (A+1)*I + A*L + 2*L` constraints: the root budget, one
//!   rebalancing row per asset plus one cash-flow row per interior node,
//!   one terminal growth row per asset and leaf, and the wealth and
//!   shortfall definitions per leaf.
//!
//! The objective is `max sum_l prob_l W_l - kappa * sum_l prob_l d_l`, where
//! `d_l >= E[W] - W_l` linearizes the lower semideviation of terminal wealth.
//!
//! # Text format
//!
//! ```text
//! \ comment
//! Maximize
//! obj: 0.5 W_3 + 0.5 W_4
//! Subject To
//! budget: 1 b_risky_0 + 1 b_cash_0 = 100
//! rebal_risky_1: 1 b_risky_1 - 1.02 b_risky_0 - 1 p_risky_1 + 1 s_risky_1 <= 0
//! Bounds
//! b_risky_0 >= 0
//! End
//! ```
//!
//! Every term is `sign coefficient name`. Long expressions continue on lines
//! that start with whitespace. Coefficients are printed in shortest
//! round-trip form, so emit, parse and emit again reproduces the file.

use std::fmt::{self, Write as _};

use crate::error::{Error, Result};
use crate::tree::ScenarioTree;

pub const ASSETS: [&str; 2] = ["risky", "cash"];

const TERMS_PER_LINE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Risk-aversion weight on the lower semideviation.
    pub kappa: f64,
    /// Additional budget per stage `1..=T-1`; `budget[0]` is the initial budget.
    pub budget: Vec<f64>,
    /// Per-period simple return of the cash asset.
    pub riskfree_rate: f64,
}

impl ModelConfig {
    fn validate(&self, stages: usize) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa >= 0.0) {
            return Err(Error::BadConfig(format!("kappa must be finite and >= 0, got {}", self.kappa)));
        }
        if self.budget.len() != stages - 1 {
            return Err(Error::BadConfig(format!(
                "need one budget per stage 1..{} ({} values), got {}",
                stages - 1,
                stages - 1,
                self.budget.len()
            )));
        }
        if self.budget.iter().any(|b| !b.is_finite() || *b < 0.0) || self.budget[0] <= 0.0 {
            return Err(Error::BadConfig("budgets must be finite and non-negative, the first positive".into()));
        }
        if !(self.riskfree_rate.is_finite() && self.riskfree_rate > -1.0) {
            return Err(Error::BadConfig(format!("riskfree rate must exceed -1, got {}", self.riskfree_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

impl Relation {
    fn symbol(self) -> &'static str {
        match self {
            Relation::Le => "<=",
            Relation::Ge => ">=",
            Relation::Eq => "=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub var: String,
}

impl Term {
    fn new(coef: f64, var: impl Into<String>) -> Self {
        Self { coef, var: var.into() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<Term>,
    pub relation: Relation,
    pub rhs: f64,
}

/// A linear program with non-negative variables.
#[derive(Debug, Clone, PartialEq)]
pub struct LpModel {
    pub comments: Vec<String>,
    pub sense: Sense,
    pub objective_name: String,
    pub objective: Vec<Term>,
    pub constraints: Vec<Constraint>,
    /// Every variable, each bounded below by zero.
    pub variables: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LpCounts {
    pub variables: usize,
    pub constraints: usize,
}

/// Closed-form sizes of the deterministic equivalent for a tree shape.
pub fn expected_counts(structure: &[usize], assets: usize) -> LpCounts {
    let nodes = 1 + structure.iter().sum::<usize>();
    let leaves = *structure.last().unwrap_or(&0);
    let interior: usize = structure[..structure.len().saturating_sub(1)].iter().sum();
    LpCounts {
        variables: assets * nodes + 2 * assets * interior + 2 * leaves,
        constraints: 1 + (assets + 1) * interior + assets * leaves + 2 * leaves,
    }
}

impl LpModel {
    pub fn counts(&self) -> LpCounts {
        LpCounts { variables: self.variables.len(), constraints: self.constraints.len() }
    }

    pub fn to_lp_string(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            let _ = writeln!(out, "\\ {c}");
        }
        out.push_str(match self.sense {
            Sense::Maximize => "Maximize\n",
            Sense::Minimize => "Minimize\n",
        });
        let _ = writeln!(out, "{}: {}", self.objective_name, format_terms(&self.objective));
        out.push_str("Subject To\n");
        for c in &self.constraints {
            let _ = writeln!(out, "{}: {} {} {}", c.name, format_terms(&c.terms), c.relation.symbol(), c.rhs);
        }
        out.push_str("Bounds\n");
        for v in &self.variables {
            let _ = writeln!(out, "{v} >= 0");
        }
        out.push_str("End\n");
        out
    }
}

impl fmt::Display for LpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_lp_string())
    }
}

fn format_terms(terms: &[Term]) -> String {
    let mut out = String::new();
    for (i, t) in terms.iter().enumerate() {
        if i > 0 {
            out.push_str(if i % TERMS_PER_LINE == 0 { "\n   " } else { " " });
        }
        let sign = if t.coef < 0.0 { '-' } else { '+' };
        if i == 0 && sign == '+' {
            let _ = write!(out, "{} {}", t.coef, t.var);
        } else {
            let _ = write!(out, "{} {} {}", sign, t.coef.abs(), t.var);
        }
    }
    out
}

fn b(asset: &str, node: usize) -> String {
    format!("b_{asset}_{node}")
}

/// Builds the deterministic equivalent over `tree`. `note` is kept as a comment.
pub fn emit_lp(tree: &ScenarioTree, cfg: &ModelConfig, note: &str) -> Result<LpModel> {
    if tree.stages < 2 {
        return Err(Error::DegenerateTree);
    }
    tree.validate()?;
    cfg.validate(tree.stages)?;
    let terminal = tree.stages;
    let growth = |asset: usize, node: usize| -> f64 {
        match asset {
            0 => 1.0 + tree.nodes[node].value,
            _ => 1.0 + cfg.riskfree_rate,
        }
    };

    let mut variables = Vec::new();
    for node in &tree.nodes {
        for asset in ASSETS {
            variables.push(b(asset, node.id));
        }
    }
    let interior: Vec<usize> =
        tree.nodes.iter().filter(|n| n.stage >= 2 && n.stage < terminal).map(|n| n.id).collect();
    for &id in &interior {
        for asset in ASSETS {
            variables.push(format!("p_{asset}_{id}"));
            variables.push(format!("s_{asset}_{id}"));
        }
    }
    let leaves = tree.leaves();
    variables.extend(leaves.iter().map(|l| format!("W_{}", l.id)));
    variables.extend(leaves.iter().map(|l| format!("d_{}", l.id)));

    let mut constraints = vec![Constraint {
        name: "budget".into(),
        terms: ASSETS.iter().map(|a| Term::new(1.0, b(a, 0))).collect(),
        relation: Relation::Eq,
        rhs: cfg.budget[0],
    }];
    for &id in &interior {
        let node = &tree.nodes[id];
        let parent = node.parent.expect("non-root nodes have parents");
        for (k, asset) in ASSETS.iter().enumerate() {
            constraints.push(Constraint {
                name: format!("rebal_{asset}_{id}"),
                terms: vec![
                    Term::new(1.0, b(asset, id)),
                    Term::new(-growth(k, id), b(asset, parent)),
                    Term::new(-1.0, format!("p_{asset}_{id}")),
                    Term::new(1.0, format!("s_{asset}_{id}")),
                ],
                relation: Relation::Le,
                rhs: 0.0,
            });
        }
        let mut terms: Vec<Term> = ASSETS.iter().map(|a| Term::new(1.0, format!("p_{a}_{id}"))).collect();
        terms.extend(ASSETS.iter().map(|a| Term::new(-1.0, format!("s_{a}_{id}"))));
        constraints.push(Constraint {
            name: format!("cash_{id}"),
            terms,
            relation: Relation::Le,
            rhs: cfg.budget[node.stage - 1],
        });
    }
    for leaf in leaves {
        let parent = leaf.parent.expect("leaves have parents");
        for (k, asset) in ASSETS.iter().enumerate() {
            constraints.push(Constraint {
                name: format!("term_{asset}_{}", leaf.id),
                terms: vec![Term::new(1.0, b(asset, leaf.id)), Term::new(-growth(k, leaf.id), b(asset, parent))],
                relation: Relation::Le,
                rhs: 0.0,
            });
        }
    }
    for leaf in leaves {
        let mut terms = vec![Term::new(1.0, format!("W_{}", leaf.id))];
        terms.extend(ASSETS.iter().map(|a| Term::new(-1.0, b(a, leaf.id))));
        constraints.push(Constraint { name: format!("wealth_{}", leaf.id), terms, relation: Relation::Eq, rhs: 0.0 });
    }
    // d_j + W_j - sum_l prob_l W_l >= 0, with the W_j terms merged
    for leaf in leaves {
        let mut terms = vec![Term::new(1.0, format!("d_{}", leaf.id))];
        for other in leaves {
            let coef = if other.id == leaf.id { 1.0 - other.prob } else { -other.prob };
            if coef != 0.0 {
                terms.push(Term::new(coef, format!("W_{}", other.id)));
            }
        }
        constraints.push(Constraint { name: format!("dev_{}", leaf.id), terms, relation: Relation::Ge, rhs: 0.0 });
    }

    let mut objective: Vec<Term> = leaves.iter().map(|l| Term::new(l.prob, format!("W_{}", l.id))).collect();
    if cfg.kappa > 0.0 {
        objective.extend(leaves.iter().map(|l| Term::new(-cfg.kappa * l.prob, format!("d_{}", l.id))));
    }

    let mut comments = vec![
        "deterministic equivalent: expected terminal wealth minus kappa * lower semideviation".to_string(),
        format!("stages {} structure {:?} kappa {} riskfree {}", tree.stages, tree.structure, cfg.kappa, cfg.riskfree_rate),
    ];
    comments.extend(note.lines().filter(|l| !l.trim().is_empty()).map(|l| l.trim().to_string()));

    Ok(LpModel { comments, sense: Sense::Maximize, objective_name: "obj".into(), objective, constraints, variables })
}

fn parse_err(line: usize, reason: impl Into<String>) -> Error {
    Error::LpParse { line, reason: reason.into() }
}

fn parse_terms(tokens: &[&str], line: usize) -> Result<Vec<Term>> {
    let mut terms = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let mut sign = 1.0;
        if tokens[i] == "+" || tokens[i] == "-" {
            if tokens[i] == "-" {
                sign = -1.0;
            }
            i += 1;
        }
        let (coef, var) = match (tokens.get(i), tokens.get(i + 1)) {
            (Some(c), Some(v)) => (c, v),
            _ => return Err(parse_err(line, "dangling term")),
        };
        let coef: f64 = coef.parse().map_err(|_| parse_err(line, format!("bad coefficient {coef:?}")))?;
        terms.push(Term::new(sign * coef, *var));
        i += 2;
    }
    Ok(terms)
}

fn split_name(stmt: &str, line: usize) -> Result<(&str, &str)> {
    let (name, rest) = stmt.split_once(':').ok_or_else(|| parse_err(line, "missing `name:`"))?;
    Ok((name.trim(), rest))
}

/// Parses the text format produced by [`LpModel::to_lp_string`].
pub fn parse_lp(text: &str) -> Result<LpModel> {
    #[derive(PartialEq)]
    enum Section {
        Head,
        Objective,
        Constraints,
        Bounds,
        Done,
    }
    // join continuation lines onto their statement
    let mut statements: Vec<(usize, String)> = Vec::new();
    let mut comments = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if let Some(c) = raw.strip_prefix('\\') {
            comments.push(c.trim().to_string());
            continue;
        }
        if raw.trim().is_empty() {
            continue;
        }
        if raw.starts_with(char::is_whitespace) {
            match statements.last_mut() {
                Some((_, s)) => {
                    s.push(' ');
                    s.push_str(raw.trim());
                }
                None => return Err(parse_err(i + 1, "continuation before any statement")),
            }
        } else {
            statements.push((i + 1, raw.trim().to_string()));
        }
    }

    let mut section = Section::Head;
    let mut sense = None;
    let mut objective_name = String::new();
    let mut objective = Vec::new();
    let mut constraints = Vec::new();
    let mut variables = Vec::new();
    for (line, stmt) in &statements {
        let line = *line;
        match stmt.to_ascii_lowercase().as_str() {
            "maximize" | "minimize" if section == Section::Head => {
                sense = Some(if stmt.eq_ignore_ascii_case("maximize") { Sense::Maximize } else { Sense::Minimize });
                section = Section::Objective;
                continue;
            }
            "subject to" if section == Section::Objective => {
                section = Section::Constraints;
                continue;
            }
            "bounds" if section == Section::Constraints => {
                section = Section::Bounds;
                continue;
            }
            "end" if section == Section::Bounds => {
                section = Section::Done;
                continue;
            }
            _ => {}
        }
        match section {
            Section::Objective => {
                let (name, rest) = split_name(stmt, line)?;
                objective_name = name.to_string();
                objective = parse_terms(&rest.split_whitespace().collect::<Vec<_>>(), line)?;
            }
            Section::Constraints => {
                let (name, rest) = split_name(stmt, line)?;
                let tokens: Vec<&str> = rest.split_whitespace().collect();
                let pos = tokens
                    .iter()
                    .position(|t| matches!(*t, "<=" | ">=" | "="))
                    .ok_or_else(|| parse_err(line, "missing relation"))?;
                let relation = match tokens[pos] {
                    "<=" => Relation::Le,
                    ">=" => Relation::Ge,
                    _ => Relation::Eq,
                };
                if tokens.len() != pos + 2 {
                    return Err(parse_err(line, "expected a single right-hand side"));
                }
                let rhs: f64 = tokens[pos + 1].parse().map_err(|_| parse_err(line, "bad right-hand side"))?;
                constraints.push(Constraint {
                    name: name.to_string(),
                    terms: parse_terms(&tokens[..pos], line)?,
                    relation,
                    rhs,
                });
            }
            Section::Bounds => {
                let tokens: Vec<&str> = stmt.split_whitespace().collect();
                match tokens.as_slice() {
                    [var, ">=", zero] if zero.parse::<f64>() == Ok(0.0) => variables.push(var.to_string()),
                    _ => return Err(parse_err(line, format!("unsupported bound {stmt:?}"))),
                }
            }
            Section::Head | Section::Done => return Err(parse_err(line, format!("unexpected {stmt:?}"))),
        }
    }
    if section != Section::Done {
        return Err(parse_err(statements.last().map_or(0, |s| s.0), "missing End"));
    }
    Ok(LpModel {
        comments,
        sense: sense.expect("sense is set before leaving Head"),
        objective_name,
        objective,
        constraints,
        variables,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::TreeNode;

    fn tree_2_4() -> ScenarioTree {
        let node = |id, stage, parent, value, prob| TreeNode { id, stage, parent, value, prob };
        ScenarioTree {
            stages: 3,
            structure: vec![2, 4],
            nodes: vec![
                node(0, 1, None, 0.0, 1.0),
                node(1, 2, Some(0), 0.01, 0.5),
                node(2, 2, Some(0), -0.02, 0.5),
                node(3, 3, Some(1), 0.03, 0.25),
                node(4, 3, Some(1), -0.01, 0.25),
                node(5, 3, Some(2), 0.02, 0.3),
                node(6, 3, Some(2), -0.04, 0.2),
            ],
        }
    }

    fn cfg(kappa: f64) -> ModelConfig {
        ModelConfig { kappa, budget: vec![100.0, 10.0], riskfree_rate: 0.001 }
    }

    #[test]
    fn counts_match_closed_form() {
        assert_eq!(expected_counts(&[2, 4], 2), LpCounts { variables: 30, constraints: 23 });
        let lp = emit_lp(&tree_2_4(), &cfg(0.5), "").unwrap();
        assert_eq!(lp.counts(), LpCounts { variables: 30, constraints: 23 });
        let text = lp.to_lp_string();
        let bounds = text.split("Bounds\n").nth(1).unwrap();
        assert_eq!(bounds.lines().filter(|l| l.ends_with(">= 0")).count(), 30);
    }

    #[test]
    fn zero_kappa_drops_deviation_terms() {
        let lp = emit_lp(&tree_2_4(), &cfg(0.0), "").unwrap();
        assert!(lp.objective.iter().all(|t| t.var.starts_with("W_")));
        let text = lp.to_lp_string();
        let obj = text.split("Subject To").next().unwrap();
        assert!(!obj.contains("d_"));
        let lp = emit_lp(&tree_2_4(), &cfg(0.5), "").unwrap();
        assert_eq!(lp.objective.iter().filter(|t| t.var.starts_with("d_")).count(), 4);
        assert_eq!(lp.sense, Sense::Maximize);
    }

    #[test]
    fn constraint_coefficients() {
        let lp = emit_lp(&tree_2_4(), &cfg(0.5), "").unwrap();
        let row = |name: &str| lp.constraints.iter().find(|c| c.name == name).unwrap().clone();
        let r = row("rebal_risky_1");
        assert_eq!(r.terms[1], Term::new(-1.01, "b_risky_0"));
        assert_eq!(r.relation, Relation::Le);
        assert_eq!(row("term_cash_6").terms[1], Term::new(-1.001, "b_cash_2"));
        assert_eq!(row("cash_2").rhs, 10.0);
        assert_eq!(row("budget").rhs, 100.0);
        let dev = row("dev_3");
        assert_eq!(dev.terms[1], Term::new(0.75, "W_3"));
        assert_eq!(dev.terms[2], Term::new(-0.25, "W_4"));
        assert_eq!(dev.relation, Relation::Ge);
    }

    #[test]
    fn round_trip_through_text() {
        let lp = emit_lp(&tree_2_4(), &cfg(0.5), "strategy: mean").unwrap();
        let text = lp.to_lp_string();
        let back = parse_lp(&text).unwrap();
        assert_eq!(back, lp);
        assert_eq!(back.to_lp_string(), text);
    }

    #[test]
    fn long_rows_wrap_and_parse() {
        let n = 20;
        let mut nodes = vec![TreeNode { id: 0, stage: 1, parent: None, value: 0.0, prob: 1.0 }];
        for i in 0..n {
            nodes.push(TreeNode { id: i + 1, stage: 2, parent: Some(0), value: i as f64 * 0.001, prob: 0.05 });
        }
        let tree = ScenarioTree { stages: 2, structure: vec![n], nodes };
        let lp = emit_lp(&tree, &ModelConfig { kappa: 1.0, budget: vec![1.0], riskfree_rate: 0.0 }, "").unwrap();
        assert_eq!(lp.counts(), expected_counts(&[n], 2));
        let text = lp.to_lp_string();
        assert!(text.lines().any(|l| l.starts_with("   + ") || l.starts_with("   - ")));
        assert_eq!(parse_lp(&text).unwrap(), lp);
    }

    #[test]
    fn budgets_scale_only_right_hand_sides() {
        let base = emit_lp(&tree_2_4(), &cfg(0.5), "").unwrap();
        let scaled = emit_lp(&tree_2_4(), &ModelConfig { budget: vec![300.0, 30.0], ..cfg(0.5) }, "").unwrap();
        assert_eq!(base.objective, scaled.objective);
        for (a, b) in base.constraints.iter().zip(&scaled.constraints) {
            assert_eq!(a.terms, b.terms);
            assert_eq!(b.rhs, 3.0 * a.rhs);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let tree = tree_2_4();
        assert!(matches!(emit_lp(&tree, &ModelConfig { kappa: -1.0, ..cfg(0.0) }, ""), Err(Error::BadConfig(_))));
        assert!(matches!(emit_lp(&tree, &ModelConfig { budget: vec![100.0], ..cfg(0.0) }, ""), Err(Error::BadConfig(_))));
        assert!(matches!(emit_lp(&tree, &ModelConfig { budget: vec![0.0, 1.0], ..cfg(0.0) }, ""), Err(Error::BadConfig(_))));
        let degenerate = ScenarioTree { stages: 1, structure: vec![], nodes: tree.nodes[..1].to_vec() };
        assert_eq!(emit_lp(&degenerate, &cfg(0.0), ""), Err(Error::DegenerateTree));
        assert!(parse_lp("Maximize\nobj: 1 x\nSubject To\n").is_err());
        assert!(parse_lp("Maximize\nobj: 1\nSubject To\nBounds\nEnd\n").is_err());
    }
}
