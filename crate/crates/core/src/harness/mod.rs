//! Experiment runner: recipes, training pipeline, evaluation grid and
//! result tables.

mod config;
mod experiments;
mod pipeline;
mod stats;
mod table;

pub use config::{DataConfig, EvalConfig, LifespanConfig, Recipe, SweepConfig};
pub use experiments::{
    ablation_suite, check_invariants, episode_seed, eval_cell, eval_success_rate, hyperparam_sweep,
    lifespan_rho, lifespan_sweep, oracle_row, paused_vs_nonpaused, run_cell, spec_for, Cell,
};
pub use pipeline::{
    generate_data, policy_path, train_all, train_mode_policy, train_motion_net, Artifacts,
};
pub use stats::{spearman, wilson_interval};
pub use table::{ResultRow, ResultsTable};
