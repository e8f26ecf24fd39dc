//! Policy weights on a `(t, W)` grid.

use std::fmt::Write as _;
use std::path::Path;

use nnport::PolicyNetwork;

use crate::CliError;

/// Evenly spaced points on `[lo, hi]`; a single point sits at `lo`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `out[i][r][c]` is the weight of asset `i` at wealth `w[r]` and time `t[c]`.
pub fn policy_heatmap(net: &PolicyNetwork, t: &[f64], w: &[f64]) -> Result<Vec<Vec<Vec<f64>>>, CliError> {
    if t.is_empty() || w.is_empty() {
        return Err(CliError::Validation("heatmap grid must be nonempty".into()));
    }
    let na = net.n_assets();
    let mut out = vec![vec![vec![0.0; t.len()]; w.len()]; na];
    for (r, &wr) in w.iter().enumerate() {
        for (c, &tc) in t.iter().enumerate() {
            let p = net.weights(tc, wr)?;
            for i in 0..na {
                out[i][r][c] = p[i];
            }
        }
    }
    Ok(out)
}

/// Writes `heatmap.csv` (one row per grid node, one column per asset) and a
/// `heatmap_<label>.csv` matrix per asset with wealth rows and time columns.
pub fn write_heatmaps(
    dir: &Path,
    net: &PolicyNetwork,
    labels: &[String],
    t: &[f64],
    w: &[f64],
) -> Result<(), CliError> {
    let maps = policy_heatmap(net, t, w)?;
    let mut long = String::from("t,wealth");
    for l in labels {
        long.push(',');
        long.push_str(l);
    }
    long.push('\n');
    for (r, wr) in w.iter().enumerate() {
        for (c, tc) in t.iter().enumerate() {
            write!(long, "{tc},{wr}").unwrap();
            for m in &maps {
                write!(long, ",{}", m[r][c]).unwrap();
            }
            long.push('\n');
        }
    }
    std::fs::write(dir.join("heatmap.csv"), long)?;
    for (m, label) in maps.iter().zip(labels) {
        let mut s = String::from("wealth");
        for tc in t {
            write!(s, ",{tc}").unwrap();
        }
        s.push('\n');
        for (r, wr) in w.iter().enumerate() {
            write!(s, "{wr}").unwrap();
            for v in &m[r] {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        std::fs::write(dir.join(format!("heatmap_{label}.csv")), s)?;
    }
    Ok(())
}
