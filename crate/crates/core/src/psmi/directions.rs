use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream, Purpose};

/// Directions drawn uniformly on the unit sphere, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    directions: Matrix,
    seed: u64,
}

impl DirectionSet {
    /// Wraps explicit directions; rows are normalised.
    pub fn from_matrix(mut directions: Matrix, seed: u64) -> Result<Self> {
        if directions.rows() == 0 || directions.cols() == 0 {
            return Err(Error::InvalidArgument("empty direction set".into()));
        }
        for j in 0..directions.rows() {
            let row = directions.row_mut(j);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(Error::InvalidArgument(format!("direction {j} has zero norm")));
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self { directions, seed })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.directions
    }

    pub fn direction(&self, j: usize) -> &[f64] {
        self.directions.row(j)
    }

    pub fn count(&self) -> usize {
        self.directions.rows()
    }

    pub fn dim(&self) -> usize {
        self.directions.cols()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Direction `j` depends only on `(seed, j)`, never on the thread schedule.
pub fn sample_directions(d: usize, m: usize, seed: u64) -> Result<DirectionSet> {
    if d == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "need d >= 1 and m >= 1, got d = {d}, m = {m}"
        )));
    }
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream(seed, Purpose::Directions, j as u64);
            loop {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-300 {
                    return v.into_iter().map(|x| x / norm).collect();
                }
            }
        })
        .collect();
    Ok(DirectionSet {
        directions: Matrix::from_rows(&rows)?,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_directions_are_signs() {
        let dirs = sample_directions(1, 50, 9).unwrap();
        for j in 0..dirs.count() {
            let v = dirs.direction(j)[0];
            assert!(v == 1.0 || v == -1.0, "{v}");
        }
    }

    #[test]
    fn deterministic_and_unit_norm() {
        let a = sample_directions(16, 2000, 3).unwrap();
        let b = sample_directions(16, 2000, 3).unwrap();
        assert_eq!(a, b);
        for row in a.matrix().iter_rows() {
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn thread_count_does_not_matter() {
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sample_directions(8, 300, 11).unwrap());
        let many = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap()
            .install(|| sample_directions(8, 300, 11).unwrap());
        assert_eq!(single, many);
    }

    #[test]
    fn uniform_mean_concentrates() {
        let dirs = sample_directions(8, 10_000, 5).unwrap();
        let mut mean = [0.0; 8];
        for row in dirs.matrix().iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / 10_000.0;
            }
        }
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        // Each coordinate has variance 1/(8 * 10^4); the norm is ~0.01.
        assert!(norm < 0.05, "{norm}");
    }

    #[test]
    fn zero_arguments_rejected() {
        assert!(sample_directions(0, 3, 1).is_err());
        assert!(sample_directions(3, 0, 1).is_err());
    }
}
