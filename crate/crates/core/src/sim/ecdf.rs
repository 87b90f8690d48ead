//! Empirical CDFs.

use crate::error::{Error, Result};

/// Right-continuous empirical CDF as `(value, F(value))` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    points: Vec<(f64, f64)>,
}

impl Ecdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("eCDF needs at least one sample"));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::Domain("eCDF samples must not be NaN".into()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self::from_sorted(&sorted))
    }

    /// Build from `(value, count)` pairs, e.g. a histogram.
    pub fn from_counts(counts: &[(f64, u64)]) -> Result<Self> {
        let total: u64 = counts.iter().map(|c| c.1).sum();
        if total == 0 {
            return Err(Error::EmptyInput("eCDF needs at least one sample"));
        }
        let mut sorted: Vec<_> = counts.iter().filter(|c| c.1 > 0).copied().collect();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(sorted.len());
        let mut cum = 0u64;
        for (x, n) in sorted {
            cum += n;
            let f = cum as f64 / total as f64;
            match points.last_mut() {
                Some(last) if last.0 == x => last.1 = f,
                _ => points.push((x, f)),
            }
        }
        Ok(Self { points })
    }

    fn from_sorted(sorted: &[f64]) -> Self {
        let n = sorted.len() as f64;
        let mut points: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in sorted.iter().enumerate() {
            let f = (i + 1) as f64 / n;
            match points.last_mut() {
                Some(last) if last.0 == x => last.1 = f,
                _ => points.push((x, f)),
            }
        }
        Self { points }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// `F(x)`: share of samples `<= x`.
    pub fn eval(&self, x: f64) -> f64 {
        let idx = self.points.partition_point(|p| p.0 <= x);
        if idx == 0 {
            0.0
        } else {
            self.points[idx - 1].1
        }
    }

    /// Smallest sample value `x` with `F(x) >= q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let idx = self.points.partition_point(|p| p.1 < q);
        self.points[idx.min(self.points.len() - 1)].0
    }
}

/// Convenience wrapper returning the step points.
pub fn ecdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    Ok(Ecdf::new(samples)?.points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample() {
        assert_eq!(ecdf(&[5.0]).unwrap(), vec![(5.0, 1.0)]);
    }

    #[test]
    fn median_read_off() {
        let e = Ecdf::new(&[4.0, 2.0, 3.0, 1.0]).unwrap();
        assert_eq!(e.quantile(0.5), 2.0);
        assert_eq!(e.eval(2.0), 0.5);
        assert_eq!(e.eval(1.999), 0.25);
        assert_eq!(e.eval(0.0), 0.0);
        assert_eq!(e.eval(10.0), 1.0);
    }

    #[test]
    fn ties_collapse() {
        let e = Ecdf::new(&[1.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(e.points(), &[(1.0, 0.5), (2.0, 1.0)]);
        let h = Ecdf::from_counts(&[(2.0, 2), (1.0, 2), (3.0, 0)]).unwrap();
        assert_eq!(h, e);
    }

    #[test]
    fn empty_and_nan_rejected() {
        assert!(matches!(Ecdf::new(&[]), Err(Error::EmptyInput(_))));
        assert!(Ecdf::new(&[f64::NAN]).is_err());
        assert!(Ecdf::from_counts(&[(1.0, 0)]).is_err());
    }
}
