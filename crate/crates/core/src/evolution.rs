//! The evolutionary engine.
//!
//! Each generation is a fixed plan of slots: elitist copies first, then
//! 1-point, 2-point and intermediate crossovers, flip and random mutations,
//! and fresh random chromosomes, in the proportions of the operator
//! structure. Every slot draws from its own stream keyed by
//! `(seed, generation, slot)`, so slots are produced in parallel without
//! changing the outcome.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genotype::{decode, repair, CenterStrategy, DistanceWeighting, Evaluator};
use crate::rng;
use crate::tree::{
    chromosome_length, Chromosome, ConvergenceLog, IterationRecord, ScenarioPaths, ScenarioTree, TreeStructure,
};

/// The nine operator percentages `o1..o9`.
///
/// `shares` holds `o1..o7`: elitist selection, 1-point crossover, 2-point
/// crossover, intermediate crossover, flip mutation, random mutation and
/// random addition. `crossover_pool` (`o8`) is the top percentile one
/// crossover parent is drawn from; `mutation_pool` (`o9`) the top percentile
/// mutation parents are drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[u32; 9]", into = "[u32; 9]")]
pub struct OperatorStructure {
    pub shares: [u32; 7],
    pub crossover_pool: u32,
    pub mutation_pool: u32,
}

impl OperatorStructure {
    /// All operators: `(20,10,10,20,10,10,20,10,30)`.
    pub const ALL_OPERATORS: Self = Self::from_array([20, 10, 10, 20, 10, 10, 20, 10, 30]);
    /// Elitism and random addition only: `(50,0,0,0,0,0,50,10,30)`.
    pub const NO_VARIATION: Self = Self::from_array([50, 0, 0, 0, 0, 0, 50, 10, 30]);
    /// Crossovers without mutation: `(20,20,20,30,0,0,10,10,30)`.
    pub const NO_MUTATION: Self = Self::from_array([20, 20, 20, 30, 0, 0, 10, 10, 30]);
    /// Mutations without crossover: `(30,0,0,0,30,30,10,10,30)`.
    pub const NO_CROSSOVER: Self = Self::from_array([30, 0, 0, 0, 30, 30, 10, 10, 30]);

    pub const fn from_array(o: [u32; 9]) -> Self {
        Self { shares: [o[0], o[1], o[2], o[3], o[4], o[5], o[6]], crossover_pool: o[7], mutation_pool: o[8] }
    }

    pub fn new(o: [u32; 9]) -> Result<Self> {
        let ops = Self::from_array(o);
        ops.validate()?;
        Ok(ops)
    }

    pub fn to_array(&self) -> [u32; 9] {
        let s = self.shares;
        [s[0], s[1], s[2], s[3], s[4], s[5], s[6], self.crossover_pool, self.mutation_pool]
    }

    pub fn validate(&self) -> Result<()> {
        let total: u32 = self.shares.iter().sum();
        if total != 100 {
            return Err(Error::BadOperators(format!("o1..o7 sum to {total}, expected 100")));
        }
        for (name, pct) in [("o8", self.crossover_pool), ("o9", self.mutation_pool)] {
            if pct == 0 || pct > 100 {
                return Err(Error::BadOperators(format!("{name} = {pct} must lie in 1..=100")));
            }
        }
        Ok(())
    }

    /// Slot count per operator for a population: `floor(o_j% * population)`,
    /// with the rounding residue given to elitist selection.
    pub fn allocate(&self, population: usize) -> [usize; 7] {
        let mut counts = self.shares.map(|pct| pct as usize * population / 100);
        let used: usize = counts.iter().sum();
        counts[0] += population - used;
        counts
    }
}

impl TryFrom<[u32; 9]> for OperatorStructure {
    type Error = Error;

    fn try_from(o: [u32; 9]) -> Result<Self> {
        Self::new(o)
    }
}

impl From<OperatorStructure> for [u32; 9] {
    fn from(o: OperatorStructure) -> Self {
        o.to_array()
    }
}

impl fmt::Display for OperatorStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.to_array().iter().map(u32::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for OperatorStructure {
    type Err = Error;

    /// Parses nine comma-separated integers.
    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(|p| p.trim().parse::<u32>().map_err(|e| Error::BadOperators(format!("{p:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let array: [u32; 9] = values
            .try_into()
            .map_err(|v: Vec<u32>| Error::BadOperators(format!("expected 9 values, got {}", v.len())))?;
        Self::new(array)
    }
}

/// What to do with children that decode to an invalid tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvalidHandling {
    /// Discard and retry; fail with `TooManyInvalid` once a generation has
    /// discarded `max_invalid_retries` chromosomes.
    Discard,
    /// Discard and retry, but repair the candidate once a slot has discarded
    /// `after` chromosomes in a row.
    Repair { after: usize },
}

impl Default for InvalidHandling {
    fn default() -> Self {
        Self::Repair { after: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub initial_population: usize,
    pub population: usize,
    pub iterations: usize,
    /// Genes touched by each mutation.
    pub m: usize,
    pub ops: OperatorStructure,
    pub strategy: CenterStrategy,
    pub weighting: DistanceWeighting,
    pub seed: u64,
    /// Discard budget per generation.
    pub max_invalid_retries: usize,
    pub invalid: InvalidHandling,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            initial_population: 1000,
            population: 300,
            iterations: 300,
            m: 2,
            ops: OperatorStructure::ALL_OPERATORS,
            strategy: CenterStrategy::Mean,
            weighting: DistanceWeighting::Unweighted,
            seed: 0,
            max_invalid_retries: 3000,
            invalid: InvalidHandling::default(),
        }
    }
}

impl EvolutionConfig {
    /// Sets both population sizes and scales the discard budget to `10 * population`.
    pub fn with_population(mut self, initial: usize, population: usize) -> Self {
        self.initial_population = initial;
        self.population = population;
        self.max_invalid_retries = 10 * population;
        self
    }

    pub fn validate(&self, chromosome_len: usize) -> Result<()> {
        self.ops.validate()?;
        if self.population == 0 || self.initial_population < self.population {
            return Err(Error::BadConfig(format!(
                "need initial_population ({}) >= population ({}) >= 1",
                self.initial_population, self.population
            )));
        }
        if self.iterations == 0 {
            return Err(Error::BadConfig("iterations must be at least 1".into()));
        }
        if self.m == 0 || self.m > chromosome_len {
            return Err(Error::BadM { m: self.m, length: chromosome_len });
        }
        if let InvalidHandling::Repair { after: 0 } = self.invalid {
            return Err(Error::BadConfig("repair threshold must be at least 1".into()));
        }
        Ok(())
    }
}

/// I.i.d. uniform genes on `[0, 1)`.
pub fn random_chromosome<R: Rng + ?Sized>(length: usize, rng: &mut R) -> Chromosome {
    Chromosome::from_unchecked((0..length).map(|_| rng.random::<f64>()).collect())
}

fn check_lengths(p1: &Chromosome, p2: &Chromosome) -> Result<()> {
    if p1.len() != p2.len() {
        return Err(Error::LengthMismatch { expected: p1.len(), actual: p2.len() });
    }
    Ok(())
}

/// Copies alternating segments of `p1` and `p2`, switching parent after each
/// cut. A cut `j` splits between gene `j - 1` and gene `j` (zero-based), so
/// cuts must be increasing and lie in `1..len`.
pub fn crossover_at(p1: &Chromosome, p2: &Chromosome, cuts: &[usize]) -> Result<Chromosome> {
    check_lengths(p1, p2)?;
    let len = p1.len();
    if cuts.windows(2).any(|w| w[0] >= w[1]) || cuts.iter().any(|&c| c == 0 || c >= len) {
        return Err(Error::BadConfig(format!("cuts {cuts:?} are not increasing interior positions of {len}")));
    }
    let mut child = Vec::with_capacity(len);
    let mut from_first = true;
    let mut start = 0;
    for &end in cuts.iter().chain(std::iter::once(&len)) {
        let src = if from_first { p1 } else { p2 };
        child.extend_from_slice(&src.genes()[start..end]);
        from_first = !from_first;
        start = end;
    }
    Ok(Chromosome::from_unchecked(child))
}

/// `points`-point crossover with cut positions drawn without replacement.
/// Lengths shorter than `points + 1` use every interior position available.
pub fn crossover_npoint<R: Rng + ?Sized>(
    p1: &Chromosome,
    p2: &Chromosome,
    points: usize,
    rng: &mut R,
) -> Result<Chromosome> {
    check_lengths(p1, p2)?;
    if p1.len() < 2 {
        return Err(Error::LengthMismatch { expected: 2, actual: p1.len() });
    }
    let interior = p1.len() - 1;
    let mut cuts: Vec<usize> = index::sample(rng, interior, points.min(interior)).into_iter().map(|i| i + 1).collect();
    cuts.sort_unstable();
    crossover_at(p1, p2, &cuts)
}

/// `p2 + lambda * (p1 - p2)` gene by gene, kept inside the parents' range.
pub fn blend(p1: &Chromosome, p2: &Chromosome, lambda: f64) -> Result<Chromosome> {
    check_lengths(p1, p2)?;
    let genes = p1
        .genes()
        .iter()
        .zip(p2.genes())
        .map(|(&a, &b)| (b + lambda * (a - b)).clamp(a.min(b), a.max(b)))
        .collect();
    Ok(Chromosome::from_unchecked(genes))
}

/// Intermediate crossover; one `lambda ~ U(0, 1)` per child.
pub fn crossover_intermediate<R: Rng + ?Sized>(p1: &Chromosome, p2: &Chromosome, rng: &mut R) -> Result<Chromosome> {
    check_lengths(p1, p2)?;
    blend(p1, p2, rng.random::<f64>())
}

fn check_m(c: &Chromosome, m: usize) -> Result<()> {
    if m == 0 || m > c.len() {
        return Err(Error::BadM { m, length: c.len() });
    }
    Ok(())
}

/// Replaces `m` distinct genes `g` by `1 - g`.
pub fn mutate_flip<R: Rng + ?Sized>(c: &Chromosome, m: usize, rng: &mut R) -> Result<Chromosome> {
    check_m(c, m)?;
    let mut child = c.clone();
    for i in index::sample(rng, c.len(), m) {
        let g = &mut child.genes_mut()[i];
        *g = 1.0 - *g;
    }
    Ok(child)
}

/// Resamples `m` distinct genes uniformly.
pub fn mutate_random<R: Rng + ?Sized>(c: &Chromosome, m: usize, rng: &mut R) -> Result<Chromosome> {
    check_m(c, m)?;
    let mut child = c.clone();
    for i in index::sample(rng, c.len(), m) {
        child.genes_mut()[i] = rng.random::<f64>();
    }
    Ok(child)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Operator {
    Elite,
    OnePoint,
    TwoPoint,
    Intermediate,
    Flip,
    RandomMutation,
    RandomAddition,
}

const OPERATORS: [Operator; 7] = [
    Operator::Elite,
    Operator::OnePoint,
    Operator::TwoPoint,
    Operator::Intermediate,
    Operator::Flip,
    Operator::RandomMutation,
    Operator::RandomAddition,
];

/// Operator of every slot in a generation, elites first.
pub(crate) fn generation_plan(ops: &OperatorStructure, population: usize) -> Vec<Operator> {
    ops.allocate(population).iter().zip(OPERATORS).flat_map(|(&count, op)| std::iter::repeat_n(op, count)).collect()
}

/// `max(1, ceil(pct% * population))`.
fn pool_size(pct: u32, population: usize) -> usize {
    (pct as usize * population).div_ceil(100).clamp(1, population.max(1))
}

#[derive(Debug, Clone)]
struct Individual {
    genes: Chromosome,
    fitness: f64,
}

struct SlotOutcome {
    individual: Option<Individual>,
    discarded: usize,
}

/// Outcome of a run.
#[derive(Debug, Clone)]
pub struct Evolved {
    pub tree: ScenarioTree,
    pub chromosome: Chromosome,
    pub objective: f64,
    pub log: ConvergenceLog,
}

struct Engine<'a> {
    evaluator: Evaluator<'a>,
    structure: &'a TreeStructure,
    cfg: &'a EvolutionConfig,
    length: usize,
}

impl Engine<'_> {
    fn produce<R: Rng>(&self, op: Operator, prev: &[Individual], rng: &mut R) -> Chromosome {
        let pop = prev.len();
        let top_crossover = pool_size(self.cfg.ops.crossover_pool, pop);
        let top_mutation = pool_size(self.cfg.ops.mutation_pool, pop);
        let parents = |rng: &mut R| {
            let a = &prev[rng.random_range(0..top_crossover)].genes;
            let b = &prev[rng.random_range(0..pop)].genes;
            (a, b)
        };
        let m = self.cfg.m;
        let child = match op {
            Operator::Elite => unreachable!("elites are copied, not produced"),
            Operator::OnePoint => {
                let (a, b) = parents(rng);
                crossover_npoint(a, b, 1, rng)
            }
            Operator::TwoPoint => {
                let (a, b) = parents(rng);
                crossover_npoint(a, b, 2, rng)
            }
            Operator::Intermediate => {
                let (a, b) = parents(rng);
                crossover_intermediate(a, b, rng)
            }
            Operator::Flip => mutate_flip(&prev[rng.random_range(0..top_mutation)].genes, m, rng),
            Operator::RandomMutation => mutate_random(&prev[rng.random_range(0..top_mutation)].genes, m, rng),
            Operator::RandomAddition => Ok(random_chromosome(self.length, rng)),
        };
        child.expect("lengths and m are validated up front")
    }

    /// Produces one valid child for a slot, discarding invalid candidates.
    fn fill_slot(&self, op: Operator, prev: &[Individual], generation: usize, slot: usize) -> SlotOutcome {
        let mut rng = rng::slot_stream(self.cfg.seed, generation, slot);
        let s = self.evaluator.paths().len();
        let mut discarded = 0;
        loop {
            let mut child = self.produce(op, prev, &mut rng);
            match decode(&child, self.structure, s) {
                Ok(p) => {
                    let fitness = self.evaluator.objective(&p);
                    return SlotOutcome { individual: Some(Individual { genes: child, fitness }), discarded };
                }
                Err(_) => discarded += 1,
            }
            match self.cfg.invalid {
                InvalidHandling::Discard if discarded > self.cfg.max_invalid_retries => {
                    return SlotOutcome { individual: None, discarded };
                }
                InvalidHandling::Repair { after } if discarded >= after => {
                    repair(&mut child, self.structure, s, &mut rng).expect("structure fits the scenarios");
                    let fitness = self.evaluator.fitness(&child, self.structure).expect("repaired chromosome decodes");
                    return SlotOutcome { individual: Some(Individual { genes: child, fitness }), discarded };
                }
                _ => {}
            }
        }
    }

    fn collect(&self, outcomes: Vec<SlotOutcome>, generation: usize) -> Result<(Vec<Individual>, usize)> {
        let discarded: usize = outcomes.iter().map(|o| o.discarded).sum();
        let failed = outcomes.iter().any(|o| o.individual.is_none());
        if failed || (self.cfg.invalid == InvalidHandling::Discard && discarded > self.cfg.max_invalid_retries) {
            return Err(Error::TooManyInvalid { iteration: generation, discarded });
        }
        let mut members: Vec<Individual> = outcomes.into_iter().filter_map(|o| o.individual).collect();
        members.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
        Ok((members, discarded))
    }

    fn initial(&self) -> Result<(Vec<Individual>, usize)> {
        let outcomes = (0..self.cfg.initial_population)
            .into_par_iter()
            .map(|slot| self.fill_slot(Operator::RandomAddition, &[], 0, slot))
            .collect();
        let (mut members, discarded) = self.collect(outcomes, 0)?;
        members.truncate(self.cfg.population);
        Ok((members, discarded))
    }

    fn next(&self, prev: &[Individual], plan: &[Operator], generation: usize) -> Result<(Vec<Individual>, usize)> {
        let outcomes = plan
            .par_iter()
            .enumerate()
            .map(|(slot, &op)| match op {
                Operator::Elite => SlotOutcome { individual: Some(prev[slot].clone()), discarded: 0 },
                _ => self.fill_slot(op, prev, generation, slot),
            })
            .collect();
        self.collect(outcomes, generation)
    }
}

fn record(iter: usize, members: &[Individual], invalid_discarded: usize) -> IterationRecord {
    let mean = members.iter().map(|m| m.fitness).sum::<f64>() / members.len() as f64;
    IterationRecord { iter, best: members[0].fitness, mean: mean.max(members[0].fitness), invalid_discarded }
}

/// Runs the evolutionary search and returns the best tree found.
pub fn evolve(sc: &ScenarioPaths, n: &TreeStructure, cfg: &EvolutionConfig) -> Result<Evolved> {
    n.check_scenarios(sc.len())?;
    if n.periods() != sc.periods() {
        return Err(Error::BadConfig(format!(
            "structure has {} stages but scenarios have {}",
            n.periods(),
            sc.periods()
        )));
    }
    let length = chromosome_length(n, sc.len());
    cfg.validate(length)?;
    let engine = Engine { evaluator: Evaluator::new(sc, cfg.strategy, cfg.weighting), structure: n, cfg, length };
    let plan = generation_plan(&cfg.ops, cfg.population);

    let (mut population, discarded) = engine.initial()?;
    let mut log = ConvergenceLog::default();
    log.push(record(0, &population, discarded));
    let mut best = population[0].clone();
    for generation in 1..=cfg.iterations {
        let (next, discarded) = engine.next(&population, &plan, generation)?;
        population = next;
        log.push(record(generation, &population, discarded));
        if population[0].fitness < best.fitness {
            best = population[0].clone();
        }
    }
    let partition = decode(&best.genes, n, sc.len())?;
    Ok(Evolved { tree: engine.evaluator.build_tree(&partition), chromosome: best.genes, objective: best.fitness, log })
}
