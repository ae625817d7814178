use crate::error::{Error, Result};

/// Per-column z-scoring. Columns with (near) zero spread keep unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot standardize an empty set".into()))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                return Err(Error::InvalidArgument("rows have different lengths".into()));
            }
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; d];
        for r in rows {
            for j in 0..d {
                std[j] += (r[j] - mean[j]).powi(2);
            }
        }
        for (s, m) in std.iter_mut().zip(&mean) {
            *s = (*s / n).sqrt();
            if !(*s > 1e-12 * m.abs().max(1.0)) {
                *s = 1.0;
            }
        }
        if mean.iter().chain(std.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite values in data".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn fit_scalar(values: &[f64]) -> Result<Self> {
        let rows: Vec<Vec<f64>> = values.iter().map(|v| vec![*v]).collect();
        Self::fit(&rows)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_scalar(&self, v: f64) -> f64 {
        (v - self.mean[0]) / self.std[0]
    }

    pub fn invert_scalar(&self, v: f64) -> f64 {
        v * self.std[0] + self.mean[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_mean_unit_variance() {
        let rows = vec![vec![1.0, 10.0], vec![3.0, 10.0], vec![5.0, 10.0]];
        let s = Standardizer::fit(&rows).unwrap();
        assert_eq!(s.mean, vec![3.0, 10.0]);
        // Constant column keeps unit scale.
        assert_eq!(s.std[1], 1.0);
        let z: Vec<Vec<f64>> = rows.iter().map(|r| s.apply(r)).collect();
        let var: f64 = z.iter().map(|r| r[0] * r[0]).sum::<f64>() / 3.0;
        assert!((var - 1.0).abs() < 1e-12);
        assert_eq!(s.invert_scalar(s.apply_scalar(4.0)), 4.0);
    }

    #[test]
    fn empty_is_an_error() {
        assert!(Standardizer::fit(&[]).is_err());
    }
}
