use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Simulated,
    Bootstrapped,
    Loaded,
}

impl Provenance {
    fn code(self) -> u8 {
        match self {
            Provenance::Simulated => 0,
            Provenance::Bootstrapped => 1,
            Provenance::Loaded => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Provenance::Simulated),
            1 => Some(Provenance::Bootstrapped),
            2 => Some(Provenance::Loaded),
            _ => None,
        }
    }
}

/// `n_paths x N_rb x N_a` gross returns, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnPathSet {
    data: Vec<f64>,
    n_paths: usize,
    n_periods: usize,
    n_assets: usize,
    dt: f64,
    labels: Vec<String>,
    provenance: Provenance,
}

const MAGIC: &[u8; 8] = b"NNPRPS01";

impl ReturnPathSet {
    pub fn new(
        data: Vec<f64>,
        n_paths: usize,
        n_periods: usize,
        n_assets: usize,
        dt: f64,
        labels: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        if n_paths == 0 || n_periods == 0 || n_assets == 0 {
            return Err(Error::InvalidParameter("path set dimensions must be positive".into()));
        }
        if data.len() != n_paths * n_periods * n_assets {
            return Err(Error::InvalidParameter(format!(
                "expected {} returns, got {}",
                n_paths * n_periods * n_assets,
                data.len()
            )));
        }
        if labels.len() != n_assets {
            return Err(Error::InvalidParameter("one label per asset required".into()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        if let Some(i) = data.iter().position(|y| !(y.is_finite() && *y > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "gross return {} at flat index {i} is not finite and positive",
                data[i]
            )));
        }
        Ok(Self { data, n_paths, n_periods, n_assets, dt, labels, provenance })
    }

    /// Every path sees the same returns each period.
    pub fn constant(n_paths: usize, per_period: &[Vec<f64>], dt: f64) -> Result<Self> {
        let n_assets = per_period.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_paths * per_period.len() * n_assets);
        for _ in 0..n_paths {
            for row in per_period {
                data.extend_from_slice(row);
            }
        }
        let labels = (1..=n_assets).map(|i| format!("asset{i}")).collect();
        Self::new(data, n_paths, per_period.len(), n_assets, dt, labels, Provenance::Loaded)
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }
    pub fn n_periods(&self) -> usize {
        self.n_periods
    }
    pub fn n_assets(&self) -> usize {
        self.n_assets
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
    pub fn gross_returns(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn path(&self, j: usize) -> &[f64] {
        let s = self.n_periods * self.n_assets;
        &self.data[j * s..(j + 1) * s]
    }

    #[inline]
    pub fn period(&self, j: usize, m: usize) -> &[f64] {
        let base = (j * self.n_periods + m) * self.n_assets;
        &self.data[base..base + self.n_assets]
    }

    /// Binary cache: magic, `n_paths, N_rb, N_a` as u64, `dt` as f64,
    /// provenance byte, labels (u32 length + UTF-8), then the returns as
    /// little-endian f64 in path-major order.
    pub fn write_cache<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [self.n_paths, self.n_periods, self.n_assets] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        w.write_all(&self.dt.to_le_bytes())?;
        w.write_all(&[self.provenance.code()])?;
        for l in &self.labels {
            w.write_all(&(l.len() as u32).to_le_bytes())?;
            w.write_all(l.as_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 8);
        for y in &self.data {
            buf.extend_from_slice(&y.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_cache<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::MalformedCache("bad magic".into()));
        }
        let mut u = [0u8; 8];
        let mut dims = [0usize; 3];
        for d in dims.iter_mut() {
            r.read_exact(&mut u)?;
            *d = u64::from_le_bytes(u) as usize;
        }
        r.read_exact(&mut u)?;
        let dt = f64::from_le_bytes(u);
        let mut p = [0u8; 1];
        r.read_exact(&mut p)?;
        let provenance = Provenance::from_code(p[0]).ok_or_else(|| Error::MalformedCache("bad provenance".into()))?;
        let mut labels = Vec::with_capacity(dims[2]);
        for _ in 0..dims[2] {
            let mut l = [0u8; 4];
            r.read_exact(&mut l)?;
            let mut s = vec![0u8; u32::from_le_bytes(l) as usize];
            r.read_exact(&mut s)?;
            labels.push(String::from_utf8(s).map_err(|e| Error::MalformedCache(e.to_string()))?);
        }
        let len = dims[0]
            .checked_mul(dims[1])
            .and_then(|x| x.checked_mul(dims[2]))
            .ok_or_else(|| Error::MalformedCache("dimensions overflow".into()))?;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != len * 8 {
            return Err(Error::MalformedCache(format!("expected {} data bytes, found {}", len * 8, raw.len())));
        }
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(data, dims[0], dims[1], dims[2], dt, labels, provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_cache(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_cache(std::io::BufReader::new(f))
    }
}
