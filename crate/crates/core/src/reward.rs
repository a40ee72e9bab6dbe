//! One-parameter exponential-family reward models.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RewardFamily {
    Bernoulli,
    Gaussian { sigma2: f64 },
}

impl RewardFamily {
    pub fn gaussian(sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::Domain(format!("gaussian variance must be positive, got {sigma2}")));
        }
        Ok(RewardFamily::Gaussian { sigma2 })
    }

    /// Whether `mean` lies in the open model-mean domain.
    pub fn is_interior(&self, mean: f64) -> bool {
        match self {
            RewardFamily::Bernoulli => mean > 0.0 && mean < 1.0,
            RewardFamily::Gaussian { .. } => mean.is_finite(),
        }
    }

    /// Sub-Gaussian variance proxy of the reward distribution.
    pub fn variance_proxy(&self) -> f64 {
        match self {
            RewardFamily::Bernoulli => 0.25,
            RewardFamily::Gaussian { sigma2 } => *sigma2,
        }
    }

    /// KL divergence between the members with means `x` and `y`.
    pub fn kl(&self, x: f64, y: f64) -> Result<f64> {
        match self {
            RewardFamily::Bernoulli => {
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::Domain(format!("bernoulli mean {x} outside [0, 1]")));
                }
                if !(y > 0.0 && y < 1.0) {
                    if x == y {
                        return Ok(0.0);
                    }
                    return Err(Error::Domain(format!(
                        "bernoulli kl({x}, {y}) is infinite: second argument must be interior"
                    )));
                }
                Ok(bernoulli_kl(x, y))
            }
            RewardFamily::Gaussian { sigma2 } => {
                if !(x.is_finite() && y.is_finite()) {
                    return Err(Error::Domain(format!("gaussian kl({x}, {y}) needs finite means")));
                }
                Ok(gaussian_kl(x, y, *sigma2))
            }
        }
    }

    /// Unchecked divergence to an interior second argument. Callers guarantee the
    /// domain (empirical means against a validated threshold).
    #[inline]
    pub(crate) fn divergence(&self, x: f64, y: f64) -> f64 {
        match self {
            RewardFamily::Bernoulli => bernoulli_kl(x, y),
            RewardFamily::Gaussian { sigma2 } => gaussian_kl(x, y, *sigma2),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> Result<f64> {
        match self {
            RewardFamily::Bernoulli => {
                if !(0.0..=1.0).contains(&mean) {
                    return Err(Error::Domain(format!("bernoulli mean {mean} outside [0, 1]")));
                }
            }
            RewardFamily::Gaussian { .. } => {
                if !mean.is_finite() {
                    return Err(Error::Domain(format!("gaussian mean {mean} is not finite")));
                }
            }
        }
        Ok(self.draw(mean, rng))
    }

    #[inline]
    pub(crate) fn draw<R: Rng + ?Sized>(&self, mean: f64, rng: &mut R) -> f64 {
        match self {
            RewardFamily::Bernoulli => {
                if rng.gen::<f64>() < mean {
                    1.0
                } else {
                    0.0
                }
            }
            RewardFamily::Gaussian { sigma2 } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sigma2.sqrt() * z
            }
        }
    }
}

#[inline]
fn xlogx_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

#[inline]
fn bernoulli_kl(x: f64, y: f64) -> f64 {
    let d = xlogx_ratio(x, y) + xlogx_ratio(1.0 - x, 1.0 - y);
    // Rounding can push the sum a hair below zero near x == y.
    d.max(0.0)
}

#[inline]
fn gaussian_kl(x: f64, y: f64, sigma2: f64) -> f64 {
    let g = x - y;
    g * g / (2.0 * sigma2)
}
