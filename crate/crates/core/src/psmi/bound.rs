//! Lower bound on sliced mutual information for two spherically separated
//! class clouds, built from a radius hyperparameter `R`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::synthetic::{gaussian_draws, MixtureConfig};

/// `B_gamma(a, b) = int_0^gamma t^(a-1) (1-t)^(b-1) dt`, by adaptive
/// Gauss-Kronrod quadrature to about 1e-12 absolute error.
///
/// For `a < 1` the integrable singularity at 0 is removed with `u = t^a`:
/// `B = (1/a) int_0^(gamma^a) (1 - u^(1/a))^(b-1) du`.
pub fn incomplete_beta(gamma: f64, a: f64, b: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidArgument(format!("gamma = {gamma} outside (0, 1)")));
    }
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidArgument(format!("need a, b > 0, got a = {a}, b = {b}")));
    }
    let value = if a < 1.0 {
        let upper = gamma.powf(a);
        let inv_a = 1.0 / a;
        integrate(|u| (1.0 - u.powf(inv_a)).powf(b - 1.0), 0.0, upper, 1e-13) / a
    } else {
        integrate(|t| t.powf(a - 1.0) * (1.0 - t).powf(b - 1.0), 0.0, gamma, 1e-13)
    };
    if !value.is_finite() {
        return Err(Error::Numerical(format!("B_{gamma}({a}, {b}) did not converge")));
    }
    Ok(value)
}

#[allow(clippy::excessive_precision)]
const KRONROD_NODES: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_3,
    0.949_107_912_342_758_524_526_189_684_047_9,
    0.864_864_423_359_769_072_789_712_788_640_9,
    0.741_531_185_599_394_439_863_864_773_280_8,
    0.586_087_235_467_691_130_294_144_845_693_0,
    0.405_845_151_377_397_166_906_606_412_076_96,
    0.207_784_955_007_898_467_600_689_403_773_2,
    0.0,
];
#[allow(clippy::excessive_precision)]
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_97,
    0.063_092_092_629_978_553_290_700_663_189_2,
    0.104_790_010_322_250_183_839_876_322_541_5,
    0.140_653_259_715_525_918_745_189_590_510_2,
    0.169_004_726_639_267_902_826_583_426_598_6,
    0.190_350_578_064_785_409_913_256_402_421_0,
    0.204_432_940_075_298_892_414_161_999_234_6,
    0.209_482_141_084_727_828_012_999_174_891_7,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
#[allow(clippy::excessive_precision)]
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_1,
    0.279_705_391_489_276_667_901_467_771_423_8,
    0.381_830_050_505_118_944_950_369_775_488_98,
    0.417_959_183_673_469_387_755_102_040_816_3,
];

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64) {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for k in 0..7 {
        let dx = half * KRONROD_NODES[k];
        let pair = f(center - dx) + f(center + dx);
        kronrod += KRONROD_WEIGHTS[k] * pair;
        if k % 2 == 1 {
            gauss += GAUSS_WEIGHTS[k / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> f64 {
    fn recurse<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, whole: (f64, f64), tol: f64, depth: u32) -> f64 {
        let (value, err) = whole;
        if err <= tol || depth == 0 || hi - lo < 1e-15 {
            return value;
        }
        let mid = 0.5 * (lo + hi);
        let left = gauss_kronrod(f, lo, mid);
        let right = gauss_kronrod(f, mid, hi);
        recurse(f, lo, mid, left, 0.5 * tol, depth - 1) + recurse(f, mid, hi, right, 0.5 * tol, depth - 1)
    }
    let whole = gauss_kronrod(&f, lo, hi);
    recurse(&f, lo, hi, whole, tol, 60)
}

/// Binary entropy in nats.
pub fn binary_entropy_nats(p: f64) -> f64 {
    let term = |x: f64| if x <= 0.0 { 0.0 } else { -x * x.ln() };
    term(p) + term(1.0 - p)
}

/// `gamma = (m_g / D) (2 - m_g / D)`.
pub fn separation_gamma(margin: f64, distance: f64) -> f64 {
    let r = margin / distance;
    r * (2.0 - r)
}

/// A valid `(R0, R1, m_g, nu)` separation tuple and the bound it yields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmSeparationCertificate {
    pub radius: f64,
    pub r0: f64,
    pub r1: f64,
    pub margin: f64,
    /// Exceedance probability shared by both spheres.
    pub nu: f64,
    /// Per-class exceedance at radius `R` before adjustment.
    pub class_exceedance: [f64; 2],
    /// Class whose radius stays at `R`.
    pub anchor_class: usize,
    pub shrink_factor: f64,
    pub distance: f64,
    pub gamma: f64,
    pub dimension: usize,
    pub entropy_nats: f64,
    pub entropy_bits: f64,
    pub entropy_factor_nats: f64,
    pub entropy_factor_bits: f64,
    /// Set when `1 - H` measured in bits is not positive.
    pub bits_factor_nonpositive: bool,
    pub incomplete_beta: f64,
    /// Lower bound on SMI in nats.
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundOptions {
    pub monte_carlo_draws: usize,
    pub seed: u64,
    pub bisection_tolerance: f64,
}

impl Default for BoundOptions {
    fn default() -> Self {
        Self {
            monte_carlo_draws: 100_000,
            seed: 0,
            bisection_tolerance: 1e-6,
        }
    }
}

/// Where the class clouds come from.
pub enum SeparationSource<'a> {
    /// The non-outlier Gaussians of a generative config, sampled by Monte Carlo.
    Gaussian(&'a MixtureConfig),
    /// Observed class samples with their centres.
    Empirical {
        class0: &'a Matrix,
        class1: &'a Matrix,
        mu0: &'a [f64],
        mu1: &'a [f64],
    },
}

/// Sorted distances from each row to `center`.
fn sorted_distances(samples: &Matrix, center: &[f64]) -> Vec<f64> {
    let mut d: Vec<f64> = samples
        .iter_rows()
        .map(|row| {
            row.iter()
                .zip(center)
                .map(|(x, c)| (x - c) * (x - c))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    d.sort_by(|a, b| a.total_cmp(b));
    d
}

/// Empirical `P(||X - mu|| > radius)` from sorted distances.
fn exceedance(sorted: &[f64], radius: f64) -> f64 {
    let inside = sorted.partition_point(|&d| d <= radius);
    (sorted.len() - inside) as f64 / sorted.len() as f64
}

/// Builds the separation tuple for radius `R in (0, D/2)` and evaluates
/// `(1 - H(nu, 1 - nu)) * B_gamma((d - 1)/2, 1/2)` with `H` in nats.
///
/// Both spheres start at radius `R`. The class with the larger exceedance
/// probability keeps `R` and fixes `nu`; the other radius shrinks to
/// `t * R` with `t in (0, 1]` found by bisection so that both exceedances
/// equal `nu`.
pub fn smi_lower_bound(
    source: SeparationSource<'_>,
    radius: f64,
    options: &BoundOptions,
) -> Result<SsmSeparationCertificate> {
    let (class0, class1, mu0, mu1);
    let owned;
    match source {
        SeparationSource::Gaussian(config) => {
            config.validate()?;
            owned = (
                gaussian_draws(&config.mu0, &config.cov0, options.monte_carlo_draws, options.seed, 0)?,
                gaussian_draws(&config.mu1, &config.cov1, options.monte_carlo_draws, options.seed, 1)?,
            );
            class0 = &owned.0;
            class1 = &owned.1;
            mu0 = config.mu0.as_slice();
            mu1 = config.mu1.as_slice();
        }
        SeparationSource::Empirical {
            class0: c0,
            class1: c1,
            mu0: m0,
            mu1: m1,
        } => {
            class0 = c0;
            class1 = c1;
            mu0 = m0;
            mu1 = m1;
        }
    }
    let dim = mu0.len();
    if mu1.len() != dim || class0.cols() != dim || class1.cols() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: class1.cols(),
        });
    }
    if dim < 2 {
        return Err(Error::InvalidArgument(
            "the bound needs d >= 2 (B_gamma((d-1)/2, 1/2) diverges at d = 1)".into(),
        ));
    }
    if class0.rows() == 0 || class1.rows() == 0 {
        return Err(Error::InvalidArgument("empty class sample".into()));
    }
    let distance = mu0
        .iter()
        .zip(mu1)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if distance == 0.0 {
        return Err(Error::InvalidArgument("class centres coincide".into()));
    }
    if !(radius > 0.0 && radius < distance / 2.0) {
        return Err(Error::InvalidArgument(format!(
            "R = {radius} outside (0, D/2) with D = {distance}"
        )));
    }

    let dists = [sorted_distances(class0, mu0), sorted_distances(class1, mu1)];
    let class_exceedance = [exceedance(&dists[0], radius), exceedance(&dists[1], radius)];
    let anchor = if class_exceedance[0] >= class_exceedance[1] { 0 } else { 1 };
    let other = 1 - anchor;
    let nu = class_exceedance[anchor];

    let g = |t: f64| exceedance(&dists[other], t * radius) - nu;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let (g_lo, g_hi) = (g(lo), g(hi));
    if !(g_lo > 0.0 && g_hi <= 0.0) {
        return Err(Error::NotBracketed { f_lo: g_lo, f_hi: g_hi });
    }
    while hi - lo > options.bisection_tolerance {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let shrink_factor = hi;
    let mut radii = [0.0; 2];
    radii[anchor] = radius;
    radii[other] = shrink_factor * radius;
    let margin = distance - radii[0] - radii[1];
    let gamma = separation_gamma(margin, distance);
    let beta = incomplete_beta(gamma, (dim as f64 - 1.0) / 2.0, 0.5)?;
    let entropy_nats = binary_entropy_nats(nu);
    let entropy_bits = entropy_nats / std::f64::consts::LN_2;
    let entropy_factor_nats = 1.0 - entropy_nats;
    let entropy_factor_bits = 1.0 - entropy_bits;
    Ok(SsmSeparationCertificate {
        radius,
        r0: radii[0],
        r1: radii[1],
        margin,
        nu,
        class_exceedance,
        anchor_class: anchor,
        shrink_factor,
        distance,
        gamma,
        dimension: dim,
        entropy_nats,
        entropy_bits,
        entropy_factor_nats,
        entropy_factor_bits,
        bits_factor_nonpositive: entropy_factor_bits <= 0.0,
        incomplete_beta: beta,
        bound: entropy_factor_nats * beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        for &g in &[0.1, 0.5, 0.9] {
            assert!((incomplete_beta(g, 1.0, 1.0).unwrap() - g).abs() < 1e-12);
            assert!((incomplete_beta(g, 2.0, 1.0).unwrap() - g * g / 2.0).abs() < 1e-12);
            // a = 1/2, b = 1: 2 sqrt(gamma)
            assert!((incomplete_beta(g, 0.5, 1.0).unwrap() - 2.0 * g.sqrt()).abs() < 1e-12);
            // a = 1, b = 1/2: 2 (1 - sqrt(1 - gamma))
            assert!((incomplete_beta(g, 1.0, 0.5).unwrap() - 2.0 * (1.0 - (1.0 - g).sqrt())).abs() < 1e-12);
        }
    }

    #[test]
    fn gamma_out_of_range() {
        assert!(incomplete_beta(0.0, 1.0, 1.0).is_err());
        assert!(incomplete_beta(1.0, 1.0, 1.0).is_err());
        assert!(incomplete_beta(0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn gamma_identity() {
        assert_eq!(separation_gamma(4.0, 4.0), 1.0);
        assert!((separation_gamma(1.0, 4.0) - 0.4375).abs() < 1e-15);
    }

    #[test]
    fn entropy_values() {
        assert!((binary_entropy_nats(0.5) - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(binary_entropy_nats(0.0), 0.0);
        // Nats factor at nu = 1/2 is 1 - ln 2; the bits factor vanishes.
        assert!((1.0 - binary_entropy_nats(0.5) - 0.306_852_819_440_054_7).abs() < 1e-12);
    }

    fn mixture(d: usize) -> MixtureConfig {
        let mut mu0 = vec![0.0; d];
        mu0[0] = 2.0;
        let mu1: Vec<f64> = mu0.iter().map(|v| -v).collect();
        MixtureConfig::isotropic(mu0, mu1, 0.5, 10, 0)
    }

    #[test]
    fn certificate_invariants() {
        let cfg = mixture(4);
        let cert = smi_lower_bound(
            SeparationSource::Gaussian(&cfg),
            1.5,
            &BoundOptions {
                monte_carlo_draws: 20_000,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((cert.r0 + cert.r1 + cert.margin - cert.distance).abs() < 1e-9);
        let ratio = cert.margin / cert.distance;
        assert!((cert.gamma - ratio * (2.0 - ratio)).abs() < 1e-15);
        assert!(cert.gamma > 0.0 && cert.gamma < 1.0);
        assert!(cert.bound > 0.0);
        assert!(cert.r0 <= 1.5 && cert.r1 <= 1.5);
        // chi^2_4 tail at 2.25 is 0.6899; the empirical nu sits close by.
        assert!((cert.nu - 0.6899).abs() < 0.02, "{}", cert.nu);
    }

    #[test]
    fn radius_must_be_inside_half_distance() {
        let cfg = mixture(4);
        for r in [0.0, 2.0, 3.0, -1.0] {
            assert!(smi_lower_bound(SeparationSource::Gaussian(&cfg), r, &BoundOptions::default()).is_err());
        }
    }

    #[test]
    fn empirical_source_uses_given_clouds() {
        // Class 0 all within 0.5 of its centre, class 1 spread out.
        let c0 = Matrix::from_rows(&[[2.1, 0.0], [1.9, 0.0], [2.0, 0.3], [2.0, -0.3]]).unwrap();
        let c1 = Matrix::from_rows(&[[-2.0, 0.2], [-2.0, 1.2], [-3.0, 0.0], [-1.5, 0.0]]).unwrap();
        let cert = smi_lower_bound(
            SeparationSource::Empirical {
                class0: &c0,
                class1: &c1,
                mu0: &[2.0, 0.0],
                mu1: &[-2.0, 0.0],
            },
            1.1,
            &BoundOptions::default(),
        )
        .unwrap();
        assert_eq!(cert.anchor_class, 1);
        assert_eq!(cert.nu, 0.25);
        assert!(cert.r0 < 1.1);
    }
}
