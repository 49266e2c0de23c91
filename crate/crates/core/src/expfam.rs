//! Gaussian-mean and Gamma-precision factors of a mixture component.
//!
//! A component posterior factorizes as `q(mu) q(tau)` with
//! `q(mu) = N(m, s^-1 I)` stored through its natural parameters
//! `(h = s m, s)` and `q(tau) = Gamma(a, b)` with shape `a` and rate `b`.
//! Both families are linear in `(h, s)` and `(a, b)` respectively, so
//! geometric mixing of densities is plain linear interpolation of these
//! numbers.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{digamma, ln_gamma};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Isotropic Gaussian over a component mean, `N(h / s, s^-1 I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMeanFactor {
    pub h: Vec<f64>,
    pub s: f64,
}

impl GaussianMeanFactor {
    pub fn new(h: Vec<f64>, s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!(
                "gaussian precision must be positive, got {s}"
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { h, s })
    }

    /// Build from a mean vector and precision.
    pub fn from_mean(mean: &[f64], s: f64) -> Result<Self> {
        Self::new(mean.iter().map(|m| m * s).collect(), s)
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.h.iter().map(|h| h / self.s).collect()
    }

    /// Squared distance between `x` and the factor mean.
    pub fn sq_dist_to_mean(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.h)
            .map(|(xi, hi)| {
                let diff = xi - hi / self.s;
                diff * diff
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (1.0 + LN_2PI - self.s.ln())
    }

    /// `E_self[log p(mu)]` where `p` is another factor of the same dimension.
    pub fn expected_log_density(&self, p: &GaussianMeanFactor) -> f64 {
        let d = self.dim() as f64;
        let sq: f64 = self
            .h
            .iter()
            .zip(&p.h)
            .map(|(h1, h2)| {
                let diff = h1 / self.s - h2 / p.s;
                diff * diff
            })
            .sum();
        0.5 * d * (p.s.ln() - LN_2PI) - 0.5 * p.s * (sq + d / self.s)
    }

    /// Log normalizer in the `(h, -s/2)` parameterization.
    pub fn log_partition(&self) -> f64 {
        let d = self.dim() as f64;
        let hh: f64 = self.h.iter().map(|v| v * v).sum();
        hh / (2.0 * self.s) - 0.5 * d * self.s.ln() + 0.5 * d * (2.0 * PI).ln()
    }
}

/// Gamma distribution over an isotropic precision, shape `a`, rate `b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaFactor {
    pub a: f64,
    pub b: f64,
}

impl GammaFactor {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Domain(format!(
                "gamma parameters must be positive, got a={a}, b={b}"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn mean(&self) -> f64 {
        self.a / self.b
    }

    pub fn entropy(&self) -> f64 {
        self.a - self.b.ln() + ln_gamma(self.a) + (1.0 - self.a) * digamma(self.a)
    }

    /// `E_self[log p(tau)]` for another Gamma density `p`.
    pub fn expected_log_density(&self, p: &GammaFactor) -> f64 {
        let (e_tau, e_log_tau) = gamma_moments(self);
        p.a * p.b.ln() - ln_gamma(p.a) + (p.a - 1.0) * e_log_tau - p.b * e_tau
    }

    /// Log normalizer in the `(a - 1, -b)` parameterization.
    pub fn log_partition(&self) -> f64 {
        ln_gamma(self.a) - self.a * self.b.ln()
    }
}

/// Variational posterior (or prior) of one mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ComponentJson", into = "ComponentJson")]
pub struct ComponentPosterior {
    pub mean_factor: GaussianMeanFactor,
    pub prec_factor: GammaFactor,
}

#[derive(Serialize, Deserialize)]
struct ComponentJson {
    h: Vec<f64>,
    s: f64,
    a: f64,
    b: f64,
}

impl TryFrom<ComponentJson> for ComponentPosterior {
    type Error = Error;

    fn try_from(j: ComponentJson) -> Result<Self> {
        Ok(ComponentPosterior {
            mean_factor: GaussianMeanFactor::new(j.h, j.s)?,
            prec_factor: GammaFactor::new(j.a, j.b)?,
        })
    }
}

impl From<ComponentPosterior> for ComponentJson {
    fn from(c: ComponentPosterior) -> Self {
        ComponentJson {
            h: c.mean_factor.h,
            s: c.mean_factor.s,
            a: c.prec_factor.a,
            b: c.prec_factor.b,
        }
    }
}

impl ComponentPosterior {
    pub fn new(mean_factor: GaussianMeanFactor, prec_factor: GammaFactor) -> Self {
        Self {
            mean_factor,
            prec_factor,
        }
    }

    /// `N(0, I)` over the mean and `Gamma(1, 1)` over the precision.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean_factor: GaussianMeanFactor {
                h: vec![0.0; dim],
                s: 1.0,
            },
            prec_factor: GammaFactor { a: 1.0, b: 1.0 },
        }
    }

    pub fn dim(&self) -> usize {
        self.mean_factor.dim()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.mean_factor.mean()
    }

    /// Plug-in standard deviation `sqrt(b / a)` of the generating Gaussian.
    pub fn plugin_std(&self) -> f64 {
        (self.prec_factor.b / self.prec_factor.a).sqrt()
    }

    pub fn entropy(&self) -> f64 {
        self.mean_factor.entropy() + self.prec_factor.entropy()
    }

    /// `E_self[log p(theta)]` under the factorized density `p`.
    pub fn expected_log_density(&self, p: &ComponentPosterior) -> f64 {
        self.mean_factor.expected_log_density(&p.mean_factor)
            + self.prec_factor.expected_log_density(&p.prec_factor)
    }

    pub fn log_partition(&self) -> f64 {
        self.mean_factor.log_partition() + self.prec_factor.log_partition()
    }

    pub fn is_finite(&self) -> bool {
        self.mean_factor.s.is_finite()
            && self.mean_factor.h.iter().all(|v| v.is_finite())
            && self.prec_factor.a.is_finite()
            && self.prec_factor.b.is_finite()
    }
}

/// Natural-parameter interpolation `rho * prev + (1 - rho) * prior`.
pub fn mix_natural(
    prev: &ComponentPosterior,
    prior: &ComponentPosterior,
    rho: f64,
) -> Result<ComponentPosterior> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!(
            "forgetting weight must lie in [0, 1], got {rho}"
        )));
    }
    if prev.dim() != prior.dim() {
        return Err(Error::DimensionMismatch {
            expected: prev.dim(),
            got: prior.dim(),
        });
    }
    let lerp = |x: f64, y: f64| rho * x + (1.0 - rho) * y;
    let h = prev
        .mean_factor
        .h
        .iter()
        .zip(&prior.mean_factor.h)
        .map(|(&x, &y)| lerp(x, y))
        .collect();
    Ok(ComponentPosterior {
        mean_factor: GaussianMeanFactor {
            h,
            s: lerp(prev.mean_factor.s, prior.mean_factor.s),
        },
        prec_factor: GammaFactor {
            a: lerp(prev.prec_factor.a, prior.prec_factor.a),
            b: lerp(prev.prec_factor.b, prior.prec_factor.b),
        },
    })
}

/// `KL(N(m1, s1^-1 I) || N(m2, s2^-1 I))`.
pub fn kl_gaussian_mean(q1: &GaussianMeanFactor, q2: &GaussianMeanFactor) -> Result<f64> {
    if q1.dim() != q2.dim() {
        return Err(Error::DimensionMismatch {
            expected: q1.dim(),
            got: q2.dim(),
        });
    }
    let d = q1.dim() as f64;
    let ratio = q2.s / q1.s;
    let sq: f64 =
        q1.h.iter()
            .zip(&q2.h)
            .map(|(h1, h2)| {
                let diff = h1 / q1.s - h2 / q2.s;
                diff * diff
            })
            .sum();
    let kl = 0.5 * d * (ratio - 1.0 - ratio.ln()) + 0.5 * q2.s * sq;
    Ok(kl.max(0.0))
}

/// `KL(Gamma(a1, b1) || Gamma(a2, b2))` with rate parameterization.
pub fn kl_gamma(q1: &GammaFactor, q2: &GammaFactor) -> f64 {
    let kl = (q1.a - q2.a) * digamma(q1.a) - ln_gamma(q1.a)
        + ln_gamma(q2.a)
        + q2.a * (q1.b / q2.b).ln()
        + q1.a * (q2.b - q1.b) / q1.b;
    kl.max(0.0)
}

/// KL between two factorized component densities.
pub fn kl_component(q1: &ComponentPosterior, q2: &ComponentPosterior) -> Result<f64> {
    Ok(kl_gaussian_mean(&q1.mean_factor, &q2.mean_factor)?
        + kl_gamma(&q1.prec_factor, &q2.prec_factor))
}

/// `(E[tau], E[ln tau])` under a Gamma factor.
pub fn gamma_moments(g: &GammaFactor) -> (f64, f64) {
    (g.a / g.b, digamma(g.a) - g.b.ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn comp(h: Vec<f64>, s: f64, a: f64, b: f64) -> ComponentPosterior {
        ComponentPosterior::new(
            GaussianMeanFactor::new(h, s).unwrap(),
            GammaFactor::new(a, b).unwrap(),
        )
    }

    #[test]
    fn mix_endpoints_and_midpoint() {
        let prev = comp(vec![1.5, -2.0], 3.0, 3.0, 4.0);
        let prior = ComponentPosterior::standard(2);
        assert_eq!(mix_natural(&prev, &prior, 1.0).unwrap(), prev);
        assert_eq!(mix_natural(&prev, &prior, 0.0).unwrap(), prior);
        let mid = mix_natural(&prev, &prior, 0.5).unwrap();
        assert_eq!(mid.prec_factor.a, 2.0);
        assert_eq!(mid.mean_factor.s, 2.0);
    }

    #[test]
    fn mix_rejects_out_of_range_rho() {
        let p = ComponentPosterior::standard(1);
        assert!(matches!(mix_natural(&p, &p, 1.5), Err(Error::Domain(_))));
        assert!(matches!(mix_natural(&p, &p, -0.1), Err(Error::Domain(_))));
        assert!(mix_natural(&p, &ComponentPosterior::standard(2), 0.5).is_err());
    }

    #[test]
    fn kl_identities() {
        let g = GaussianMeanFactor::from_mean(&[0.3, 1.0], 2.0).unwrap();
        assert_eq!(kl_gaussian_mean(&g, &g).unwrap(), 0.0);
        let a = GaussianMeanFactor::from_mean(&[0.0], 1.0).unwrap();
        let b = GaussianMeanFactor::from_mean(&[1.0], 1.0).unwrap();
        assert!((kl_gaussian_mean(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        assert!(kl_gaussian_mean(&a, &g).is_err());

        let q = GammaFactor::new(2.5, 0.7).unwrap();
        assert!(kl_gamma(&q, &q).abs() < 1e-14);
        let kl = kl_gamma(
            &GammaFactor::new(1.0, 1.0).unwrap(),
            &GammaFactor::new(1.0, 2.0).unwrap(),
        );
        assert!((kl - (1.0 - 2f64.ln())).abs() < 1e-14);
        assert!((kl - 0.306_85).abs() < 1e-5);
    }

    #[test]
    fn gamma_moment_values() {
        let (e, el) = gamma_moments(&GammaFactor::new(1.0, 1.0).unwrap());
        assert_eq!(e, 1.0);
        assert!((el + 0.577_215_664_901_532_9).abs() < 1e-13);
        assert_eq!(gamma_moments(&GammaFactor::new(2.0, 4.0).unwrap()).0, 0.5);
    }

    #[test]
    fn invariants_rejected() {
        assert!(GammaFactor::new(0.0, 1.0).is_err());
        assert!(GammaFactor::new(1.0, -1.0).is_err());
        assert!(GaussianMeanFactor::new(vec![0.0], 0.0).is_err());
        assert!(GaussianMeanFactor::new(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn kl_equals_cross_entropy_minus_entropy() {
        let q = comp(vec![0.4, -1.2], 2.5, 3.0, 1.5);
        let p = comp(vec![1.0, 0.0], 0.8, 1.2, 2.0);
        let kl = kl_component(&q, &p).unwrap();
        let alt = -q.entropy() - q.expected_log_density(&p);
        assert!((kl - alt).abs() < 1e-12);
    }

    #[test]
    fn json_layout() {
        let c = comp(vec![0.1, 0.2], 1.0 / 3.0, 2.0, 0.1 + 0.2);
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.starts_with("{\"h\":[0.1,0.2],\"s\":"));
        let back: ComponentPosterior = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert!(
            serde_json::from_str::<ComponentPosterior>(r#"{"h":[0],"s":1,"a":-1,"b":1}"#).is_err()
        );
    }
}
