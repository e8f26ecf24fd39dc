//! Multi-period portfolio optimization with a single parsimonious neural
//! network as the investment control.
//!
//! The network maps `(t, W)` to long-only weights and is trained by
//! mini-batch gradient descent on sample estimates of terminal-wealth
//! objectives (quadratic target, one-sided quadratic, mean-variance,
//! mean-CVaR, mean-semivariance) over simulated or bootstrapped return paths.

pub mod analytics;
pub mod error;
pub mod exec;
pub mod market;
pub mod objective;
pub mod policy;
pub mod rng;
pub mod train;
pub mod wealth;

pub use analytics::{
    dsq_closed_form_weight, embedding_gamma, simulate_closed_form_dsq, summarize, ClosedFormDsqParams,
    DistributionSummary,
};
pub use error::{Error, Result};
pub use exec::Exec;
pub use market::{
    kou_jump_moments, load_returns_csv, simulate_paths, stationary_block_bootstrap, HistoricalReturns,
    KouAssetParams, MarketModel, Provenance, ReturnPathSet,
};
pub use objective::{empirical_cvar, mean_cvar_value, smooth_max, ObjectiveKind, ObjectiveSpec, ObjectiveValue};
pub use policy::{FeatureTransform, Gradient, NetTopology, PolicyNetwork};
pub use train::{adam_step, train, AdamConfig, AdamState, TrainConfig, TrainedPolicy};
pub use wealth::{backprop_through_time, roll_forward, terminal_wealth, terminal_wealth_all, InvestmentHorizon, WealthTrajectoryBatch};
