//! Non-myopic Bayesian optimization via rollout dynamic programming.
//!
//! The acquisition decision at each stage is scored as the immediate
//! knowledge-gradient reward plus the discounted reward of letting the greedy
//! knowledge-gradient heuristic play out over a rolling horizon of simulated
//! future stages. The horizon itself is chosen stagewise by comparing the
//! discounted profit of looking ahead against a Gaussian-process
//! interpolation error bound, falling back to the greedy step when the
//! feasible set is empty. A multi-information-source extension selects both
//! a query location and one of several biased, differently priced sources.
//!
//! Module map:
//! - [`kernel`], [`gp`]: multi-source Gaussian-process regression.
//! - [`quadrature`]: Gauss–Hermite rules and the expected-max-of-affine kernel.
//! - [`optim`]: bound-constrained derivative-free maximization.
//! - [`design`]: space-filling (approximate minimax) initial designs.
//! - [`acquisition`]: cost-normalized knowledge gradient and greedy selection.
//! - [`rollout`]: the lookahead acquisition and end-stage policy.
//! - [`horizon`]: error bound, profit function, and the rolling-horizon rule.
//! - [`sources`]: benchmark objectives and biased auxiliary sources.
//! - [`experiment`]: experiment loop, Gap metric, persistence, reporting.

pub mod acquisition;
pub mod design;
pub mod error;
pub mod experiment;
pub mod gp;
pub mod horizon;
pub mod kernel;
pub mod optim;
pub mod quadrature;
pub mod rollout;
pub mod seeding;
pub mod sources;

pub use acquisition::{Candidate, GridCache, SourceCost, StageReward};
pub use error::{Error, Result};
pub use experiment::{
    aggregate, gap, persist_run, render_report, run_experiment, run_replicates,
    ExperimentConfig, ExperimentResult, HorizonMode, ReportEntry, RunSummary, StageTrace,
};
pub use gp::{Dataset, GpModel, SourceModelSpec};
pub use horizon::{ErrorBoundParams, HorizonDecision, PhiMode};
pub use kernel::{KernelFamily, KernelSpec};
pub use optim::BoxBounds;
pub use quadrature::{gauss_hermite, QuadratureRule};
pub use rollout::{rollout_value, select_next, RolloutConfig, RolloutValue};
pub use sources::{BiasKind, BiasedSourceSpec, ObjectiveKind, ObjectiveSpec, SourcePool};
