//! Building return path sets from a data block.

use nnport::{
    load_returns_csv, simulate_paths, stationary_block_bootstrap, Exec, HistoricalReturns, ReturnPathSet,
};

use crate::config::{DataConfig, HistoryConfig, HorizonConfig, Source, SyntheticHistory};
use crate::CliError;

pub fn build_paths(d: &DataConfig, horizon: &HorizonConfig, exec: Exec) -> Result<ReturnPathSet, CliError> {
    let dt = horizon.maturity / horizon.n_rebalance as f64;
    let set = match d.source {
        Source::Simulate => {
            let model = d.model.as_ref().expect("validated model").to_model();
            simulate_paths(&model, d.n_paths, horizon.n_rebalance, dt, d.seed, exec)?
        }
        Source::Bootstrap => {
            let h = d.history.as_ref().expect("validated history");
            let hist = load_history(h)?;
            let mpp = (12.0 * dt).round() as usize;
            stationary_block_bootstrap(&hist, h.expected_block_months, d.n_paths, horizon.n_rebalance, mpp, d.seed, exec)?
        }
        Source::Load => {
            let path = d.cache.as_ref().expect("validated cache");
            let set = ReturnPathSet::load(path)?;
            if set.n_periods() != horizon.n_rebalance {
                return Err(CliError::Validation(format!(
                    "{}: cache has {} periods, horizon.n_rebalance is {}",
                    path.display(),
                    set.n_periods(),
                    horizon.n_rebalance
                )));
            }
            set
        }
    };
    Ok(set)
}

pub fn load_history(h: &HistoryConfig) -> Result<HistoricalReturns, CliError> {
    let hist = match (&h.file, &h.synthetic) {
        (Some(f), _) => load_returns_csv(f)?,
        (None, Some(s)) => synthetic_history(s)?,
        (None, None) => return Err(CliError::Validation("history: set file or synthetic".into())),
    };
    match (&h.from, &h.to) {
        (None, None) => Ok(hist),
        (from, to) => {
            let from = from.clone().unwrap_or_else(|| hist.start_label().to_string());
            let to = to.clone().unwrap_or_else(|| hist.end_label().to_string());
            Ok(hist.slice_dates(&from, &to)?)
        }
    }
}

/// Monthly gross returns drawn from a parametric model, dated `YYYY-MM`
/// from January of `start_year`.
pub fn synthetic_history(s: &SyntheticHistory) -> Result<HistoricalReturns, CliError> {
    let model = s.model.to_model();
    let one = simulate_paths(&model, 1, s.months, 1.0 / 12.0, s.seed, Exec::Sequential)?;
    let dates = (0..s.months)
        .map(|k| format!("{}-{:02}", s.start_year as usize + k / 12, k % 12 + 1))
        .collect();
    Ok(HistoricalReturns::new(one.gross_returns().to_vec(), model.n_assets(), model.labels(), dates)?)
}
