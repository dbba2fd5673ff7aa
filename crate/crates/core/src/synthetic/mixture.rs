//! Binary classes with Gaussian non-outliers and label-randomised outliers.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::datastore::{LabelSet, RepresentationSet};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream, Purpose};

/// Law of `X` for outliers (`Delta = 1`). Labels of outliers are always
/// drawn uniformly and independently of `X`.
pub trait OutlierLaw: Send + Sync {
    fn name(&self) -> &'static str;
    fn sample(&self, model: &PreparedMixture, rng: &mut ChaCha8Rng) -> Vec<f64>;
}

/// `X` drawn as if it were a non-outlier of a uniformly chosen class.
#[derive(Debug, Default)]
pub struct ClassMixture;

impl OutlierLaw for ClassMixture {
    fn name(&self) -> &'static str {
        "class-mixture"
    }

    fn sample(&self, model: &PreparedMixture, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let class = rng.random_range(0..2usize);
        model.draw_class(class, rng)
    }
}

/// Isotropic Gaussian centred between the class means.
#[derive(Debug)]
pub struct WideGaussian {
    pub scale: f64,
}

impl Default for WideGaussian {
    fn default() -> Self {
        Self { scale: 3.0 }
    }
}

impl OutlierLaw for WideGaussian {
    fn name(&self) -> &'static str {
        "wide-gaussian"
    }

    fn sample(&self, model: &PreparedMixture, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let cfg = &model.config;
        cfg.mu0
            .iter()
            .zip(&cfg.mu1)
            .map(|(a, b)| {
                let z: f64 = StandardNormal.sample(rng);
                0.5 * (a + b) + self.scale * z
            })
            .collect()
    }
}

type LawFactory = fn() -> Arc<dyn OutlierLaw>;

/// Outlier laws selectable by name.
pub struct OutlierLawRegistry {
    factories: BTreeMap<&'static str, LawFactory>,
}

impl Default for OutlierLawRegistry {
    fn default() -> Self {
        let mut factories: BTreeMap<&'static str, LawFactory> = BTreeMap::new();
        factories.insert("class-mixture", || Arc::new(ClassMixture));
        factories.insert("wide-gaussian", || Arc::new(WideGaussian::default()));
        Self { factories }
    }
}

impl OutlierLawRegistry {
    pub fn register(&mut self, name: &'static str, factory: LawFactory) {
        self.factories.insert(name, factory);
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.factories.keys().copied().collect()
    }

    pub fn create(&self, name: &str) -> Result<Arc<dyn OutlierLaw>> {
        self.factories
            .get(name)
            .map(|f| f())
            .ok_or_else(|| Error::UnknownName {
                kind: "outlier law",
                name: name.to_string(),
            })
    }
}

#[derive(Clone)]
pub struct MixtureConfig {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub cov0: Matrix,
    pub cov1: Matrix,
    /// Outlier rate. The analysis assumes `(0, 1)`; the endpoints are accepted
    /// for limit checks.
    pub epsilon: f64,
    pub n: usize,
    pub seed: u64,
    pub outlier_law: Arc<dyn OutlierLaw>,
}

impl fmt::Debug for MixtureConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MixtureConfig")
            .field("d", &self.dim())
            .field("mu0", &self.mu0)
            .field("mu1", &self.mu1)
            .field("epsilon", &self.epsilon)
            .field("n", &self.n)
            .field("seed", &self.seed)
            .field("outlier_law", &self.outlier_law.name())
            .finish()
    }
}

fn identity(d: usize) -> Matrix {
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        m.set(i, i, 1.0);
    }
    m
}

impl MixtureConfig {
    /// Identity covariances and the class-mixture outlier law.
    pub fn isotropic(mu0: Vec<f64>, mu1: Vec<f64>, epsilon: f64, n: usize, seed: u64) -> Self {
        let d = mu0.len();
        Self {
            mu0,
            mu1,
            cov0: identity(d),
            cov1: identity(d),
            epsilon,
            n,
            seed,
            outlier_law: Arc::new(ClassMixture),
        }
    }

    /// `mu0 = -mu1 = separation * e1`, identity covariances.
    pub fn symmetric(d: usize, separation: f64, epsilon: f64, n: usize, seed: u64) -> Self {
        let mut mu0 = vec![0.0; d];
        mu0[0] = separation;
        let mu1 = mu0.iter().map(|v| -v).collect();
        Self::isotropic(mu0, mu1, epsilon, n, seed)
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if self.mu1.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: self.mu1.len(),
            });
        }
        for cov in [&self.cov0, &self.cov1] {
            if cov.rows() != d || cov.cols() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: cov.rows(),
                });
            }
        }
        if self.mu0 == self.mu1 {
            return Err(Error::InvalidArgument("mu0 must differ from mu1".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon = {} outside [0, 1]",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn prepare(&self) -> Result<PreparedMixture> {
        self.validate()?;
        Ok(PreparedMixture {
            chol: [cholesky(&self.cov0)?, cholesky(&self.cov1)?],
            config: self.clone(),
        })
    }
}

fn cholesky(cov: &Matrix) -> Result<Matrix> {
    let d = cov.rows();
    for i in 0..d {
        for j in 0..i {
            if (cov.get(i, j) - cov.get(j, i)).abs() > 1e-12 * (1.0 + cov.get(i, j).abs()) {
                return Err(Error::InvalidArgument("covariance is not symmetric".into()));
            }
        }
    }
    let m = DMatrix::from_row_slice(d, d, cov.as_slice());
    let chol = Cholesky::new(m)
        .ok_or_else(|| Error::Numerical("Cholesky failed: covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut out = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..=i {
            out.set(i, j, l[(i, j)]);
        }
    }
    Ok(out)
}

/// Config with Cholesky factors ready for sampling.
pub struct PreparedMixture {
    pub config: MixtureConfig,
    chol: [Matrix; 2],
}

impl PreparedMixture {
    pub fn draw_class(&self, class: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mu = if class == 0 { &self.config.mu0 } else { &self.config.mu1 };
        let l = &self.chol[class];
        let d = mu.len();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        (0..d)
            .map(|i| mu[i] + (0..=i).map(|j| l.get(i, j) * z[j]).sum::<f64>())
            .collect()
    }
}

/// Draws with outlier flags kept for oracle checks.
#[derive(Debug, Clone)]
pub struct MixtureSample {
    pub data: Matrix,
    pub labels: Vec<u32>,
    pub outlier: Vec<bool>,
}

impl MixtureSample {
    pub fn representation_set(&self) -> Result<RepresentationSet> {
        RepresentationSet::new(self.data.clone(), 0, "input", None)
    }

    pub fn label_set(&self) -> Result<LabelSet> {
        LabelSet::new(self.labels.clone(), Some(2), None)
    }
}

/// Each sample `i` uses its own RNG stream, so output does not depend on
/// the thread count.
pub fn sample_mixture(config: &MixtureConfig) -> Result<MixtureSample> {
    let prepared = config.prepare()?;
    if config.n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let rows: Vec<(Vec<f64>, u32, bool)> = (0..config.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(config.seed, Purpose::Data, i as u64);
            let outlier = rng.random_bool(config.epsilon);
            if outlier {
                let x = config.outlier_law.sample(&prepared, &mut rng);
                let y = rng.random_range(0..2u32);
                (x, y, true)
            } else {
                let y = rng.random_range(0..2u32);
                (prepared.draw_class(y as usize, &mut rng), y, false)
            }
        })
        .collect();
    let mut data = Matrix::zeros(config.n, config.dim());
    let mut labels = Vec::with_capacity(config.n);
    let mut outlier = Vec::with_capacity(config.n);
    for (i, (x, y, o)) in rows.into_iter().enumerate() {
        data.row_mut(i).copy_from_slice(&x);
        labels.push(y);
        outlier.push(o);
    }
    Ok(MixtureSample {
        data,
        labels,
        outlier,
    })
}

/// `count` draws from `N(mu, cov)`; `tag` separates independent batches
/// under one seed.
pub fn gaussian_draws(mu: &[f64], cov: &Matrix, count: usize, seed: u64, tag: u64) -> Result<Matrix> {
    if cov.rows() != mu.len() || cov.cols() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            found: cov.rows(),
        });
    }
    let l = cholesky(cov)?;
    let d = mu.len();
    let rows: Vec<Vec<f64>> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, Purpose::SeparationMc, (tag << 40) | i as u64);
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            (0..d)
                .map(|r| mu[r] + (0..=r).map(|c| l.get(r, c) * z[c]).sum::<f64>())
                .collect()
        })
        .collect();
    Matrix::from_rows(&rows)
}
