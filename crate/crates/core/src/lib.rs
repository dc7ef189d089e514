//! Evolutionary generation of multi-stage scenario trees.
//!
//! A scenario tree is encoded as a real-valued chromosome in `[0, 1]`. Genes
//! are binned into node-sets stage by stage, each node-set is collapsed to a
//! value by a [`CenterStrategy`], and the l1 distance between input scenarios
//! and their node values is minimized with elitism, crossover, mutation and
//! random addition.
//!
//! ```
//! use evotree::{decode, objective, Chromosome, CenterStrategy, DistanceWeighting, ScenarioPaths, TreeStructure};
//!
//! let returns = [0.017, -0.023, -0.008, -0.022, -0.019, 0.024, 0.016, -0.006, 0.032, -0.023];
//! let paths = ScenarioPaths::uniform(returns.iter().map(|r| vec![*r]).collect()).unwrap();
//! let n = TreeStructure::new(vec![2]).unwrap();
//! let c = Chromosome::new(vec![0.4387, 0.3816, 0.7655, 0.7952, 0.1869, 0.4898, 0.4456, 0.6463, 0.7094, 0.7547]).unwrap();
//! let partition = decode(&c, &n, paths.len()).unwrap();
//! assert_eq!(partition.labels(0), vec![1, 1, 2, 2, 1, 1, 1, 2, 2, 2]);
//! let d = objective(&partition, &paths, &CenterStrategy::Mean, DistanceWeighting::Unweighted);
//! assert!((d - 0.1708).abs() < 1e-9);
//! ```

pub mod error;
pub mod evolution;
pub mod experiment;
pub mod genotype;
pub mod lp;
pub mod rng;
pub mod scenarios;
pub mod tree;

pub use error::{Error, Result};
pub use evolution::{
    crossover_at, crossover_intermediate, crossover_npoint, evolve, mutate_flip, mutate_random, random_chromosome,
    EvolutionConfig, Evolved, InvalidHandling, OperatorStructure,
};
pub use experiment::{run_experiment, AggregateRow, ExperimentSpec, StructureResult};
pub use genotype::{
    bin_index, build_tree, decode, node_value, objective, repair, weighted_node_value, CenterStrategy,
    DistanceWeighting, Evaluator, NodeKey, StageSummary,
};
pub use lp::{emit_lp, expected_counts, parse_lp, LpCounts, LpModel, ModelConfig};
pub use scenarios::{load_scenarios, read_scenarios, save_scenarios, simulate_garch, write_scenarios, GarchParams};
pub use tree::{
    chromosome_length, validate_structure, Chromosome, ConvergenceLog, IterationRecord, NodePartition,
    ScenarioPaths, ScenarioTree, TreeNode, TreeStructure,
};
