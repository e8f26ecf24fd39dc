//! Return path generation: Kou jump-diffusion simulation, stationary block
//! bootstrap of historical monthly returns, CSV ingestion and a binary
//! path-set cache.

mod bootstrap;
mod history;
mod kou;
mod model;
mod paths;

pub use bootstrap::{bootstrap_row_indices, sample_block_length, stationary_block_bootstrap};
pub use history::{load_returns_csv, read_returns_csv, write_returns_csv, HistoricalReturns};
pub use kou::{kou_jump_moments, KouAssetParams};
pub use model::{simulate_paths, MarketModel};
pub(crate) use model::PeriodSampler;
pub use paths::{Provenance, ReturnPathSet};
