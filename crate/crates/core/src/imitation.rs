//! Imitated anomalies: normal subsequences with a random subset of positions
//! overwritten by the out-of-distribution value `mu_r + 4 * sigma_r`.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::datasets::{ColumnStats, Matrix};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Number of standard deviations above the column mean a replaced value sits.
pub const OOD_FACTOR: f64 = 4.0;

/// How much of each row to corrupt, and the seed for choosing positions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    /// Corrupt level: fraction of positions replaced, in `[0, 1]`.
    pub c: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn new(c: f64, seed: u64) -> Result<Self> {
        let spec = CorruptionSpec { c, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.c) {
            return Err(Error::InvalidArgument(format!(
                "corrupt level must lie in [0, 1], got {}",
                self.c
            )));
        }
        Ok(())
    }

    /// Positions replaced per row: `c * m` rounded half-up, at least one when `c > 0`.
    pub fn replaced_count(&self, m: usize) -> usize {
        if self.c == 0.0 {
            0
        } else {
            ((self.c * m as f64 + 0.5).floor() as usize).clamp(1, m)
        }
    }
}

/// Corrupted rows together with the positions replaced in each.
#[derive(Clone, Debug, PartialEq)]
pub struct Imitation {
    pub x_imi: Matrix,
    /// Sorted replaced column indexes, one list per row.
    pub replaced: Vec<Vec<usize>>,
}

/// Builds `X_imi` from `X_nor`.
pub fn imitate(x_nor: &Matrix, stats: &ColumnStats, spec: &CorruptionSpec) -> Result<Matrix> {
    Ok(imitate_with_indices(x_nor, stats, spec)?.x_imi)
}

pub fn imitate_with_indices(
    x_nor: &Matrix,
    stats: &ColumnStats,
    spec: &CorruptionSpec,
) -> Result<Imitation> {
    imitate_scaled(x_nor, stats, spec, OOD_FACTOR)
}

/// [`imitate_with_indices`] with a different outlier factor; for experiments only.
#[doc(hidden)]
pub fn imitate_scaled(
    x_nor: &Matrix,
    stats: &ColumnStats,
    spec: &CorruptionSpec,
    factor: f64,
) -> Result<Imitation> {
    spec.validate()?;
    let m = x_nor.cols();
    if stats.mu.len() != m || stats.sigma.len() != m {
        return Err(Error::InvalidShape(format!(
            "column statistics cover {} / {} columns but rows have {m}",
            stats.mu.len(),
            stats.sigma.len()
        )));
    }
    let k = spec.replaced_count(m);
    let ood: Vec<f64> = stats
        .mu
        .iter()
        .zip(&stats.sigma)
        .map(|(mu, sigma)| mu + factor * sigma)
        .collect();

    let mut x_imi = x_nor.clone();
    let mut replaced = Vec::with_capacity(x_nor.rows());
    for i in 0..x_nor.rows() {
        let mut cols = if k == 0 {
            Vec::new()
        } else {
            let mut rng = rng::stream(spec.seed, Stream::Imitation, i as u64);
            index::sample(&mut rng, m, k).into_vec()
        };
        cols.sort_unstable();
        let row = x_imi.row_mut(i);
        for &r in &cols {
            row[r] = ood[r];
        }
        replaced.push(cols);
    }
    Ok(Imitation { x_imi, replaced })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_stats(m: usize) -> ColumnStats {
        ColumnStats {
            mu: vec![0.0; m],
            sigma: vec![1.0; m],
        }
    }

    #[test]
    fn one_position_per_row_gets_four() {
        let m = 10;
        let x = Matrix::new(3, m, vec![0.5; 3 * m]).unwrap();
        let spec = CorruptionSpec::new(1.0 / m as f64, 9).unwrap();
        let out = imitate(&x, &unit_stats(m), &spec).unwrap();
        for row in out.iter_rows() {
            let changed: Vec<f64> = row.iter().copied().filter(|v| *v != 0.5).collect();
            assert_eq!(changed, vec![4.0]);
        }
    }

    #[test]
    fn zero_level_is_identity() {
        let x = Matrix::new(2, 4, (0..8).map(f64::from).collect()).unwrap();
        let spec = CorruptionSpec::new(0.0, 1).unwrap();
        assert_eq!(imitate(&x, &unit_stats(4), &spec).unwrap(), x);
    }

    #[test]
    fn quarter_of_twenty_replaces_five() {
        let (n, m) = (5, 20);
        let x = Matrix::new(n, m, (0..n * m).map(|v| v as f64 * 0.01 - 3.0).collect()).unwrap();
        let stats = crate::datasets::column_stats(&x).unwrap();
        let spec = CorruptionSpec::new(0.25, 11).unwrap();
        let out = imitate_with_indices(&x, &stats, &spec).unwrap();
        for i in 0..n {
            let diff: Vec<usize> = (0..m)
                .filter(|&r| out.x_imi.row(i)[r] != x.row(i)[r])
                .collect();
            assert_eq!(diff.len(), 5);
            assert_eq!(diff, out.replaced[i]);
            for &r in &diff {
                let expected = stats.mu[r] + 4.0 * stats.sigma[r];
                assert!((out.x_imi.row(i)[r] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(CorruptionSpec::new(1.5, 0).is_err());
        assert!(CorruptionSpec::new(-0.1, 0).is_err());
        let x = Matrix::new(1, 4, vec![0.0; 4]).unwrap();
        let spec = CorruptionSpec::new(0.5, 0).unwrap();
        assert!(matches!(imitate(&x, &unit_stats(3), &spec), Err(Error::InvalidShape(_))));
    }

    #[test]
    fn replaced_count_rounds_half_up_with_floor_of_one() {
        let s = |c| CorruptionSpec { c, seed: 0 };
        assert_eq!(s(0.0).replaced_count(64), 0);
        assert_eq!(s(0.001).replaced_count(64), 1);
        assert_eq!(s(0.1).replaced_count(64), 6);
        assert_eq!(s(0.25).replaced_count(10), 3);
        assert_eq!(s(1.0).replaced_count(64), 64);
    }
}
