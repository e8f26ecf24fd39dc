use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Monthly gross returns, one row per month, one column per asset.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoricalReturns {
    rows: Vec<f64>,
    n_assets: usize,
    pub labels: Vec<String>,
    pub dates: Vec<String>,
}

impl HistoricalReturns {
    pub fn new(rows: Vec<f64>, n_assets: usize, labels: Vec<String>, dates: Vec<String>) -> Result<Self> {
        if n_assets == 0 || rows.is_empty() {
            return Err(Error::NoDataRows);
        }
        if rows.len() % n_assets != 0 || labels.len() != n_assets || dates.len() != rows.len() / n_assets {
            return Err(Error::InvalidParameter("ragged historical returns".into()));
        }
        if rows.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(Error::InvalidParameter("historical gross returns must be finite and positive".into()));
        }
        Ok(Self { rows, n_assets, labels, dates })
    }

    pub fn n_months(&self) -> usize {
        self.rows.len() / self.n_assets
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    #[inline]
    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.n_assets..(k + 1) * self.n_assets]
    }

    pub fn start_label(&self) -> &str {
        &self.dates[0]
    }

    pub fn end_label(&self) -> &str {
        self.dates.last().map(String::as_str).unwrap_or("")
    }

    /// Rows whose date label lies in `[from, to]` (lexicographic on `YYYY-MM`).
    pub fn slice_dates(&self, from: &str, to: &str) -> Result<Self> {
        let mut rows = Vec::new();
        let mut dates = Vec::new();
        for (k, d) in self.dates.iter().enumerate() {
            if d.as_str() >= from && d.as_str() <= to {
                rows.extend_from_slice(self.row(k));
                dates.push(d.clone());
            }
        }
        if dates.is_empty() {
            return Err(Error::NoDataRows);
        }
        Self::new(rows, self.n_assets, self.labels.clone(), dates)
    }

    pub fn column_mean(&self, i: usize) -> f64 {
        (0..self.n_months()).map(|k| self.row(k)[i]).sum::<f64>() / self.n_months() as f64
    }
}

/// Parses `date,label1,...` followed by rows `YYYY-MM,r1,...` of simple
/// monthly returns. Line numbers in errors are 1-based file lines.
pub fn read_returns_csv<R: Read>(input: R) -> Result<HistoricalReturns> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr
        .headers()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?
        .clone();
    if header.len() < 2 {
        return Err(Error::InvalidParameter("header needs a date column and at least one asset".into()));
    }
    let n_assets = header.len() - 1;
    let labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    let mut dates = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != n_assets + 1 {
            return Err(Error::ColumnCountMismatch { line });
        }
        dates.push(rec[0].to_string());
        for field in rec.iter().skip(1) {
            let r: f64 = field.parse().map_err(|_| Error::InvalidReturn { line })?;
            let g = 1.0 + r;
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidReturn { line });
            }
            rows.push(g);
        }
    }
    if dates.is_empty() {
        return Err(Error::NoDataRows);
    }
    HistoricalReturns::new(rows, n_assets, labels, dates)
}

pub fn load_returns_csv(path: impl AsRef<Path>) -> Result<HistoricalReturns> {
    read_returns_csv(std::fs::File::open(path)?)
}

pub fn write_returns_csv<W: Write>(hist: &HistoricalReturns, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    let mut header = vec!["date".to_string()];
    header.extend(hist.labels.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for k in 0..hist.n_months() {
        let mut rec = vec![hist.dates[k].clone()];
        rec.extend(hist.row(k).iter().map(|g| format!("{}", g - 1.0)));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_row() {
        let h = read_returns_csv("date,T30,VWD\n1963-07,0.01,-0.02\n".as_bytes()).unwrap();
        assert_eq!(h.row(0), &[1.01, 0.98]);
        assert_eq!(h.labels, vec!["T30", "VWD"]);
        assert_eq!(h.start_label(), "1963-07");
    }

    #[test]
    fn empty_data() {
        let e = read_returns_csv("date,a,b\n".as_bytes()).unwrap_err();
        assert_eq!(e.to_string(), "no data rows");
    }

    #[test]
    fn ragged_row_reports_line() {
        let e = read_returns_csv("date,a,b\n1963-07,0.01,0.02\n1963-08,0.01\n".as_bytes()).unwrap_err();
        assert_eq!(e.to_string(), "column count mismatch at line 3");
    }

    #[test]
    fn bad_returns_report_line() {
        let e = read_returns_csv("date,a\n1963-07,0.01\n1963-08,-1.5\n".as_bytes()).unwrap_err();
        assert_eq!(e.to_string(), "invalid return at line 3");
        let e = read_returns_csv("date,a\n1963-07,abc\n".as_bytes()).unwrap_err();
        assert_eq!(e.to_string(), "invalid return at line 2");
    }

    #[test]
    fn round_trip_to_twelve_digits() {
        let rows = vec![1.0123456789012345, 0.9876543210987654, 1.0000001, 1.3333333333333333];
        let h = HistoricalReturns::new(rows, 2, vec!["a".into(), "b".into()], vec!["2000-01".into(), "2000-02".into()]).unwrap();
        let mut buf = Vec::new();
        write_returns_csv(&h, &mut buf).unwrap();
        let back = read_returns_csv(&buf[..]).unwrap();
        for (a, b) in h.rows.iter().zip(&back.rows) {
            assert!(((a - b) / a).abs() < 1e-12);
        }
        assert_eq!(back.dates, h.dates);
    }

    #[test]
    fn date_slicing() {
        let h = read_returns_csv("date,a\n2009-11,0.01\n2009-12,0.02\n2010-01,0.03\n".as_bytes()).unwrap();
        let s = h.slice_dates("2010-01", "2020-12").unwrap();
        assert_eq!(s.n_months(), 1);
        assert!(h.slice_dates("2030-01", "2030-12").is_err());
    }
}
