//! Core domain types: scenario paths, tree structures, chromosomes, node
//! partitions, scenario trees and convergence logs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used for probability bookkeeping on trees and scenario sets.
pub const PROB_TOL: f64 = 1e-12;

/// Sampled input scenario paths: `s` paths of simple returns over stages `2..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioPaths {
    values: Vec<f64>,
    periods: usize,
    probs: Vec<f64>,
}

impl ScenarioPaths {
    /// Builds paths with uniform probabilities `1/s`.
    pub fn uniform(rows: Vec<Vec<f64>>) -> Result<Self> {
        let s = rows.len();
        Self::build(rows, vec![1.0 / s.max(1) as f64; s], false)
    }

    pub fn new(rows: Vec<Vec<f64>>, probs: Vec<f64>) -> Result<Self> {
        Self::build(rows, probs, true)
    }

    // Uniform weights skip the sum check: rounding in 1/s accumulates past
    // PROB_TOL for very large s although the weights are exact by construction.
    fn build(rows: Vec<Vec<f64>>, probs: Vec<f64>, check_sum: bool) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::MalformedRow { row: 0, reason: "no scenario paths".into() });
        }
        let periods = rows[0].len();
        if periods == 0 {
            return Err(Error::MalformedRow { row: 0, reason: "no stage columns".into() });
        }
        let mut values = Vec::with_capacity(rows.len() * periods);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != periods {
                return Err(Error::MalformedRow {
                    row: i,
                    reason: format!("expected {} columns, found {}", periods, row.len()),
                });
            }
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFiniteValue { row: i, column: j });
                }
            }
            values.extend_from_slice(row);
        }
        if probs.len() != rows.len() {
            return Err(Error::BadProbabilities(format!(
                "{} probabilities for {} paths",
                probs.len(),
                rows.len()
            )));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::BadProbabilities("negative or non-finite entry".into()));
        }
        let total: f64 = probs.iter().sum();
        if check_sum && (total - 1.0).abs() > PROB_TOL {
            return Err(Error::BadProbabilities(format!("sum is {total}")));
        }
        Ok(Self { values, periods, probs })
    }

    /// Number of paths `s`.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Number of stochastic stages, `T - 1`.
    pub fn periods(&self) -> usize {
        self.periods
    }

    /// Number of stages including the root, `T`.
    pub fn stages(&self) -> usize {
        self.periods + 1
    }

    /// Return of path `path` in period column `col` (stage `col + 2`).
    pub fn value(&self, path: usize, col: usize) -> f64 {
        self.values[path * self.periods + col]
    }

    pub fn row(&self, path: usize) -> &[f64] {
        &self.values[path * self.periods..(path + 1) * self.periods]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.periods)
    }

    /// All returns of one period column.
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.value(i, col)).collect()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn is_uniform(&self) -> bool {
        let p0 = self.probs[0];
        self.probs.iter().all(|p| *p == p0)
    }
}

/// Required node count per stochastic stage; `n[t]` is the count at stage `t + 2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TreeStructure(Vec<usize>);

impl TreeStructure {
    /// Checks the shape on its own: non-empty, positive and non-decreasing.
    pub fn new(n: Vec<usize>) -> Result<Self> {
        if n.is_empty() {
            return Err(Error::EmptyStructure);
        }
        if n[0] == 0 || n.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::NonMonotoneStructure(n));
        }
        Ok(Self(n))
    }

    pub fn counts(&self) -> &[usize] {
        &self.0
    }

    /// Number of stochastic stages, `T - 1`.
    pub fn periods(&self) -> usize {
        self.0.len()
    }

    pub fn terminal(&self) -> usize {
        *self.0.last().expect("structure is never empty")
    }

    /// Total node count including the root.
    pub fn node_count(&self) -> usize {
        1 + self.0.iter().sum::<usize>()
    }

    pub fn check_scenarios(&self, s: usize) -> Result<()> {
        if self.terminal() > s {
            return Err(Error::TerminalExceedsScenarios { terminal: self.terminal(), scenarios: s });
        }
        Ok(())
    }
}

impl std::str::FromStr for TreeStructure {
    type Err = Error;

    /// Parses a comma-separated list such as `10,40`.
    fn from_str(s: &str) -> Result<Self> {
        let n = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<usize>().map_err(|e| Error::BadConfig(format!("structure entry {p:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(n)
    }
}

/// Accepts iff `n` is a feasible tree shape for `s` input scenarios.
pub fn validate_structure(n: &[usize], s: usize) -> Result<TreeStructure> {
    let structure = TreeStructure::new(n.to_vec())?;
    structure.check_scenarios(s)?;
    Ok(structure)
}

/// Genotype length: one gene per scenario plus one gene per node at stages `3..=T`.
pub fn chromosome_length(n: &TreeStructure, s: usize) -> usize {
    s + n.counts()[1..].iter().sum::<usize>()
}

/// Real-valued genotype with every gene in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Chromosome(Vec<f64>);

impl Chromosome {
    pub fn new(genes: Vec<f64>) -> Result<Self> {
        for (index, &value) in genes.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::GeneOutOfRange { index, value });
            }
        }
        Ok(Self(genes))
    }

    /// Like [`Chromosome::new`] but also rejects lengths that do not fit `(n, s)`.
    pub fn for_structure(genes: Vec<f64>, n: &TreeStructure, s: usize) -> Result<Self> {
        let expected = chromosome_length(n, s);
        if genes.len() != expected {
            return Err(Error::LengthMismatch { expected, actual: genes.len() });
        }
        Self::new(genes)
    }

    pub(crate) fn from_unchecked(genes: Vec<f64>) -> Self {
        debug_assert!(genes.iter().all(|g| (0.0..=1.0).contains(g)));
        Self(genes)
    }

    pub fn genes(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn genes_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_genes(self) -> Vec<f64> {
        self.0
    }
}

/// Nested assignment of scenarios to tree nodes, one level per stochastic stage.
///
/// Node indices are zero-based internally. `parents[col][k]` is the node at
/// column `col - 1` that owns node `k` of column `col` (empty for column 0,
/// whose parent is the root).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodePartition {
    structure: TreeStructure,
    assignments: Vec<Vec<usize>>,
    parents: Vec<Vec<usize>>,
}

impl NodePartition {
    /// Builds a partition from per-stage scenario assignments, checking nesting
    /// and that every required node has at least one member.
    pub fn from_assignments(structure: TreeStructure, assignments: Vec<Vec<usize>>) -> Result<Self> {
        if assignments.len() != structure.periods() {
            return Err(Error::InvalidPartition(format!(
                "{} stage assignments for {} stages",
                assignments.len(),
                structure.periods()
            )));
        }
        let s = assignments[0].len();
        if s == 0 {
            return Err(Error::InvalidPartition("no scenarios".into()));
        }
        for (col, assign) in assignments.iter().enumerate() {
            let k = structure.counts()[col];
            if assign.len() != s {
                return Err(Error::InvalidPartition(format!("stage {} covers {} scenarios", col + 2, assign.len())));
            }
            let mut seen = vec![false; k];
            for &node in assign {
                if node >= k {
                    return Err(Error::InvalidPartition(format!("node {} out of range at stage {}", node, col + 2)));
                }
                seen[node] = true;
            }
            if seen.iter().any(|x| !x) {
                return Err(Error::InvalidTree { stage: col + 2 });
            }
        }
        let mut parents = vec![Vec::new()];
        for col in 1..structure.periods() {
            let mut parent = vec![usize::MAX; structure.counts()[col]];
            for (&child, &up) in assignments[col].iter().zip(&assignments[col - 1]) {
                if parent[child] == usize::MAX {
                    parent[child] = up;
                } else if parent[child] != up {
                    return Err(Error::InvalidPartition(format!(
                        "node {} at stage {} spans two parents",
                        child,
                        col + 2
                    )));
                }
            }
            parents.push(parent);
        }
        Ok(Self { structure, assignments, parents })
    }

    pub(crate) fn from_parts(structure: TreeStructure, assignments: Vec<Vec<usize>>, parents: Vec<Vec<usize>>) -> Self {
        Self { structure, assignments, parents }
    }

    pub fn structure(&self) -> &TreeStructure {
        &self.structure
    }

    pub fn scenario_count(&self) -> usize {
        self.assignments[0].len()
    }

    /// Zero-based node of every scenario at period column `col`.
    pub fn assignment(&self, col: usize) -> &[usize] {
        &self.assignments[col]
    }

    /// One-based node labels at period column `col`, as usually printed.
    pub fn labels(&self, col: usize) -> Vec<usize> {
        self.assignments[col].iter().map(|k| k + 1).collect()
    }

    /// Parent node (at `col - 1`) of node `node` at column `col >= 1`.
    pub fn parent(&self, col: usize, node: usize) -> usize {
        self.parents[col][node]
    }
}

/// One node of a scenario tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub stage: usize,
    pub parent: Option<usize>,
    pub value: f64,
    pub prob: f64,
}

/// Staged scenario tree. Nodes are stored stage by stage, root first, so node
/// `k` of stage `t` has id `1 + n[0] + ... + n[t-3] + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTree {
    pub stages: usize,
    pub structure: Vec<usize>,
    pub nodes: Vec<TreeNode>,
}

impl ScenarioTree {
    /// Id of the first node at `stage` (1-based, root stage is 1).
    pub fn stage_offset(&self, stage: usize) -> usize {
        if stage <= 1 {
            0
        } else {
            1 + self.structure[..stage - 2].iter().sum::<usize>()
        }
    }

    pub fn stage_nodes(&self, stage: usize) -> &[TreeNode] {
        let start = self.stage_offset(stage);
        let len = if stage <= 1 { 1 } else { self.structure[stage - 2] };
        &self.nodes[start..start + len]
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    pub fn leaves(&self) -> &[TreeNode] {
        self.stage_nodes(self.stages)
    }

    pub fn children(&self, id: usize) -> impl Iterator<Item = &TreeNode> {
        let stage = self.nodes[id].stage;
        let next: &[TreeNode] = if stage < self.stages { self.stage_nodes(stage + 1) } else { &[] };
        next.iter().filter(move |n| n.parent == Some(id))
    }

    /// Checks every structural and probability invariant of the tree.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::BadTree(msg));
        if self.stages < 2 || self.structure.len() != self.stages - 1 {
            return bad(format!("{} stages with structure {:?}", self.stages, self.structure));
        }
        if self.nodes.len() != 1 + self.structure.iter().sum::<usize>() {
            return bad(format!("{} nodes for structure {:?}", self.nodes.len(), self.structure));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.id != i {
                return bad(format!("node at position {} has id {}", i, node.id));
            }
            if !node.value.is_finite() || !node.prob.is_finite() || node.prob < 0.0 {
                return bad(format!("node {} has non-finite value or bad probability", i));
            }
        }
        let root = self.root();
        if root.stage != 1 || root.parent.is_some() || (root.prob - 1.0).abs() > PROB_TOL {
            return bad("root must sit at stage 1 with probability 1 and no parent".into());
        }
        for stage in 2..=self.stages {
            let nodes = self.stage_nodes(stage);
            let mut total = 0.0;
            for node in nodes {
                if node.stage != stage {
                    return bad(format!("node {} stored at stage {} claims stage {}", node.id, stage, node.stage));
                }
                match node.parent {
                    Some(p) if p < self.nodes.len() && self.nodes[p].stage + 1 == stage => {}
                    _ => return bad(format!("node {} has no parent at stage {}", node.id, stage - 1)),
                }
                total += node.prob;
            }
            if (total - 1.0).abs() > PROB_TOL {
                return bad(format!("stage {} probabilities sum to {}", stage, total));
            }
        }
        for node in &self.nodes {
            if node.stage == self.stages {
                continue;
            }
            let mut count = 0;
            let sum: f64 = self.children(node.id).inspect(|_| count += 1).map(|c| c.prob).sum();
            if count == 0 {
                return bad(format!("node {} has no children", node.id));
            }
            if (sum - node.prob).abs() > PROB_TOL {
                return bad(format!("node {} probability {} differs from children sum {}", node.id, node.prob, sum));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and validates a tree document.
    pub fn from_json(text: &str) -> Result<Self> {
        let tree: Self = serde_json::from_str(text)?;
        tree.validate()?;
        Ok(tree)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json()?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One row of a convergence log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub best: f64,
    pub mean: f64,
    pub invalid_discarded: usize,
}

/// Per-generation best and mean objective. Generation 0 is the truncated
/// initial population.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceLog {
    pub records: Vec<IterationRecord>,
}

impl ConvergenceLog {
    pub const CSV_HEADER: &'static str = "iter,best,mean,invalid_discarded";

    pub fn push(&mut self, record: IterationRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", r.iter, r.best, r.mean, r.invalid_discarded);
        }
        out
    }
}
