use rand::Rng;
use rand_distr::{Distribution, Geometric};

use super::history::HistoricalReturns;
use super::paths::{Provenance, ReturnPathSet};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng;

/// Block length on `{1, 2, ...}` with success probability `1 / expected`.
pub fn sample_block_length<R: Rng + ?Sized>(geom: &Geometric, rng: &mut R) -> usize {
    let extra = geom.sample(rng);
    usize::try_from(extra).unwrap_or(usize::MAX - 1).saturating_add(1)
}

fn block_distribution(expected_block: f64) -> Result<Geometric> {
    if !(expected_block >= 1.0 && expected_block.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "expected block length must be finite and at least 1, got {expected_block}"
        )));
    }
    Geometric::new(1.0 / expected_block).map_err(|e| Error::InvalidParameter(e.to_string()))
}

/// Historical row indices for one resampled path of `len` months: blocks
/// start uniformly over the history and wrap around its end.
pub fn bootstrap_row_indices<R: Rng + ?Sized>(
    n_months: usize,
    expected_block: f64,
    len: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let geom = block_distribution(expected_block)?;
    Ok(row_indices(n_months, &geom, len, rng))
}

fn row_indices<R: Rng + ?Sized>(n_months: usize, geom: &Geometric, len: usize, rng: &mut R) -> Vec<usize> {
    let mut idx = Vec::with_capacity(len);
    while idx.len() < len {
        let start = rng.random_range(0..n_months);
        let block = sample_block_length(geom, rng).min(len - idx.len());
        idx.extend((0..block).map(|k| (start + k) % n_months));
    }
    idx
}

/// Stationary block bootstrap of joint monthly returns. Each period's gross
/// return is the product of its `months_per_period` monthly gross returns,
/// and every asset in a month uses the same historical row.
pub fn stationary_block_bootstrap(
    hist: &HistoricalReturns,
    expected_block_months: f64,
    n_paths: usize,
    n_periods: usize,
    months_per_period: usize,
    seed: u64,
    exec: Exec,
) -> Result<ReturnPathSet> {
    let months = n_periods * months_per_period;
    if months == 0 {
        return Err(Error::EmptyHorizon);
    }
    if n_paths == 0 {
        return Err(Error::InvalidParameter("n_paths must be at least 1".into()));
    }
    let geom = block_distribution(expected_block_months)?;
    let na = hist.n_assets();
    let stride = n_periods * na;
    let mut data = vec![1.0; n_paths * stride];
    exec.for_each_chunk_mut(&mut data, stride * 256, |offset, chunk| {
        let first = offset / stride;
        for (k, path) in chunk.chunks_mut(stride).enumerate() {
            let mut rng = rng::stream(seed, (first + k) as u64);
            let idx = row_indices(hist.n_months(), &geom, months, &mut rng);
            for (m, period) in path.chunks_mut(na).enumerate() {
                for &row in &idx[m * months_per_period..(m + 1) * months_per_period] {
                    for (y, g) in period.iter_mut().zip(hist.row(row)) {
                        *y *= g;
                    }
                }
            }
        }
    });
    ReturnPathSet::new(
        data,
        n_paths,
        n_periods,
        na,
        months_per_period as f64 / 12.0,
        hist.labels.clone(),
        Provenance::Bootstrapped,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(n: usize) -> HistoricalReturns {
        let rows = (0..n).flat_map(|k| [1.0 + k as f64 * 1e-3, 1.0 + k as f64 * 2e-3]).collect();
        let dates = (0..n).map(|k| format!("m{k:04}")).collect();
        HistoricalReturns::new(rows, 2, vec!["a".into(), "b".into()], dates).unwrap()
    }

    #[test]
    fn huge_blocks_give_contiguous_circular_slice() {
        let mut rng = rng::stream(5, 0);
        let idx = bootstrap_row_indices(37, 1e12, 37, &mut rng).unwrap();
        for w in idx.windows(2) {
            assert_eq!(w[1], (w[0] + 1) % 37);
        }
    }

    #[test]
    fn unit_blocks_have_mean_one() {
        let geom = block_distribution(1.0).unwrap();
        let mut rng = rng::stream(1, 0);
        assert!((0..1000).all(|_| sample_block_length(&geom, &mut rng) == 1));
    }

    #[test]
    fn empty_horizon() {
        let h = ramp(10);
        let e = stationary_block_bootstrap(&h, 6.0, 3, 0, 3, 1, Exec::Sequential).unwrap_err();
        assert_eq!(e.to_string(), "empty horizon");
        assert!(stationary_block_bootstrap(&h, 0.5, 3, 1, 3, 1, Exec::Sequential).is_err());
    }

    #[test]
    fn periods_compound_months_jointly() {
        let h = ramp(50);
        let set = stationary_block_bootstrap(&h, 6.0, 20, 4, 3, 9, Exec::Parallel).unwrap();
        assert_eq!(set.dt(), 0.25);
        for j in 0..20 {
            let mut rng = rng::stream(9, j as u64);
            let idx = bootstrap_row_indices(50, 6.0, 12, &mut rng).unwrap();
            for m in 0..4 {
                let mut expect = [1.0, 1.0];
                for &r in &idx[m * 3..m * 3 + 3] {
                    expect[0] *= h.row(r)[0];
                    expect[1] *= h.row(r)[1];
                }
                assert_eq!(set.period(j, m), &expect);
            }
        }
        let seq = stationary_block_bootstrap(&h, 6.0, 20, 4, 3, 9, Exec::Sequential).unwrap();
        assert_eq!(seq, set);
    }
}
