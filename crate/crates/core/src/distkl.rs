//! Scalar Gaussian and categorical distributions with exact KL divergences.
//!
//! All logarithms are natural, so divergences are in nats.

use crate::error::{Error, Result};

/// Lower bound applied to every variance, in squared task-output units.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Lower clamp applied to the second argument of [`categorical_kl`].
pub const CATEGORICAL_CLAMP: f64 = 1e-9;

const SUM_TOLERANCE: f64 = 1e-9;

/// A scalar Gaussian described by mean and variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianParams {
    mean: f64,
    variance: f64,
}

impl GaussianParams {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidInput(format!("gaussian mean {mean} is not finite")));
        }
        if !variance.is_finite() || variance < VARIANCE_FLOOR {
            return Err(Error::InvalidInput(format!(
                "gaussian variance {variance} must be finite and >= {VARIANCE_FLOOR}"
            )));
        }
        Ok(Self { mean, variance })
    }

    /// Gaussian whose variance is the floored squared residual of `mean`
    /// against the observed target.
    pub fn from_residual(target: f64, mean: f64) -> Result<Self> {
        let variance = residual_variance(target, mean)?;
        Self::new(mean, variance)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        let z = x - self.mean;
        -0.5 * (2.0 * std::f64::consts::PI * self.variance).ln() - z * z / (2.0 * self.variance)
    }
}

/// A probability vector over `C >= 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalDist {
    probs: Vec<f64>,
}

impl CategoricalDist {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "categorical distribution needs at least 2 classes, got {}",
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidInput(format!("probability {p} outside [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidInput(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the most probable class; the lower index wins ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Copy with every entry clamped to `[CATEGORICAL_CLAMP, 1]` and renormalized.
    pub fn clamped(&self) -> Self {
        let clamped: Vec<f64> = self.probs.iter().map(|p| p.clamp(CATEGORICAL_CLAMP, 1.0)).collect();
        let total: f64 = clamped.iter().sum();
        Self {
            probs: clamped.into_iter().map(|p| p / total).collect(),
        }
    }
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Squared residual used as the conditional-variance estimate, floored at
/// [`VARIANCE_FLOOR`].
pub fn residual_variance(y_true: f64, mu: f64) -> Result<f64> {
    if !y_true.is_finite() || !mu.is_finite() {
        return Err(Error::InvalidInput(format!(
            "residual variance needs finite inputs, got target {y_true} and mean {mu}"
        )));
    }
    let r = y_true - mu;
    Ok((r * r).max(VARIANCE_FLOOR))
}

/// Closed-form `KL(p || q)` between two scalar Gaussians.
///
/// The squared residual is treated as a variance; the standard deviations
/// entering the log term are its square roots.
pub fn gaussian_kl(p: &GaussianParams, q: &GaussianParams) -> f64 {
    if p == q {
        return 0.0;
    }
    let dm = p.mean - q.mean;
    // log(sigma_q / sigma_p) written on variances to avoid two square roots
    let kl = 0.5 * (q.variance / p.variance).ln() + (p.variance + dm * dm) / (2.0 * q.variance) - 0.5;
    kl.max(0.0)
}

/// `KL(p || q)` over a shared support. `q` is clamped away from zero and
/// renormalized first; terms with `p_c = 0` contribute nothing.
pub fn categorical_kl(p: &CategoricalDist, q: &CategoricalDist) -> Result<f64> {
    if p.n_classes() != q.n_classes() {
        return Err(Error::Shape(format!(
            "categorical KL over {} vs {} classes",
            p.n_classes(),
            q.n_classes()
        )));
    }
    if p == q {
        return Ok(0.0);
    }
    let q = q.clamped();
    let kl: f64 = p
        .probs
        .iter()
        .zip(&q.probs)
        .filter(|(pc, _)| **pc > 0.0)
        .map(|(pc, qc)| pc * (pc / qc).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Trapezoidal quadrature of `∫ p log(p/q)`, independent of [`gaussian_kl`].
///
/// The grid spans both means padded by twelve standard deviations of the wider
/// of the two Gaussians.
pub fn kl_quadrature_oracle(p: &GaussianParams, q: &GaussianParams, grid_points: usize) -> Result<f64> {
    if grid_points < 10_000 {
        return Err(Error::InvalidInput(format!(
            "quadrature needs at least 10^4 grid points, got {grid_points}"
        )));
    }
    let wide = p.std_dev().max(q.std_dev());
    let lo = p.mean.min(q.mean) - 12.0 * wide;
    let hi = p.mean.max(q.mean) + 12.0 * wide;
    let h = (hi - lo) / (grid_points - 1) as f64;
    let integrand = |x: f64| {
        let lp = p.log_density(x);
        let density = lp.exp();
        if density == 0.0 {
            0.0
        } else {
            density * (lp - q.log_density(x))
        }
    };
    let interior: f64 = (1..grid_points - 1).map(|i| integrand(lo + i as f64 * h)).sum();
    Ok(h * (interior + 0.5 * (integrand(lo) + integrand(hi))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mean: f64, var: f64) -> GaussianParams {
        GaussianParams::new(mean, var).unwrap()
    }

    fn c(p: &[f64]) -> CategoricalDist {
        CategoricalDist::new(p.to_vec()).unwrap()
    }

    #[test]
    fn residual_variance_examples() {
        assert_eq!(residual_variance(2.0, 0.5).unwrap(), 2.25);
        assert_eq!(residual_variance(1.0, 1.0).unwrap(), VARIANCE_FLOOR);
        assert_eq!(residual_variance(-3.0, 3.0).unwrap(), 36.0);
        assert!(residual_variance(f64::NAN, 0.0).is_err());
        assert!(residual_variance(0.0, f64::INFINITY).is_err());
    }

    #[test]
    fn gaussian_invariants_enforced() {
        assert!(GaussianParams::new(0.0, 0.0).is_err());
        assert!(GaussianParams::new(0.0, 1e-7).is_err());
        assert!(GaussianParams::new(f64::NAN, 1.0).is_err());
        assert!(GaussianParams::new(0.0, f64::INFINITY).is_err());
        assert!(GaussianParams::new(0.0, VARIANCE_FLOOR).is_ok());
    }

    #[test]
    fn gaussian_kl_examples() {
        assert_eq!(gaussian_kl(&g(0.0, 1.0), &g(0.0, 1.0)), 0.0);
        assert_eq!(gaussian_kl(&g(5.0, 2.0), &g(5.0, 2.0)), 0.0);
        // quadrature oracle value for this pair, frozen
        let kl = gaussian_kl(&g(0.0, 1.0), &g(1.0, 4.0));
        assert!((kl - 0.443_147_180_559_945).abs() < 1e-12, "{kl}");
    }

    #[test]
    fn quadrature_oracle_examples() {
        let same = kl_quadrature_oracle(&g(0.0, 1.0), &g(0.0, 1.0), 100_000).unwrap();
        assert!(same.abs() < 1e-8);
        for (p, q) in [(g(0.0, 1.0), g(1.0, 4.0)), (g(2.0, 0.5), g(-1.0, 3.0))] {
            let quad = kl_quadrature_oracle(&p, &q, 100_000).unwrap();
            assert!((quad - gaussian_kl(&p, &q)).abs() < 1e-6, "{quad}");
        }
        assert!(kl_quadrature_oracle(&g(0.0, 1.0), &g(0.0, 1.0), 9_999).is_err());
    }

    #[test]
    fn categorical_kl_examples() {
        assert_eq!(categorical_kl(&c(&[0.5, 0.5]), &c(&[0.5, 0.5])).unwrap(), 0.0);
        let kl = categorical_kl(&c(&[1.0, 0.0]), &c(&[0.5, 0.5])).unwrap();
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-12);
        let kl = categorical_kl(&c(&[0.25, 0.25, 0.5]), &c(&[0.5, 0.25, 0.25])).unwrap();
        assert!((kl - 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!(matches!(
            categorical_kl(&c(&[0.5, 0.5]), &c(&[0.2, 0.3, 0.5])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn categorical_zero_support_in_q_is_clamped() {
        let kl = categorical_kl(&c(&[0.5, 0.5]), &c(&[1.0, 0.0])).unwrap();
        assert!(kl.is_finite());
        assert!(kl > 9.0);
    }

    #[test]
    fn asymmetry_witness() {
        let p = c(&[1.0, 0.0]);
        let q = c(&[0.5, 0.5]);
        let forward = categorical_kl(&p, &q).unwrap();
        let reverse = categorical_kl(&q, &p).unwrap();
        assert!((forward - reverse).abs() > 0.1);
    }

    #[test]
    fn categorical_validation() {
        assert!(CategoricalDist::new(vec![1.0]).is_err());
        assert!(CategoricalDist::new(vec![0.6, 0.6]).is_err());
        assert!(CategoricalDist::new(vec![1.2, -0.2]).is_err());
        assert_eq!(c(&[0.3, 0.3, 0.4]).argmax(), 2);
        assert_eq!(c(&[0.5, 0.5]).argmax(), 0);
    }
}
