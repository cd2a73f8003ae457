//! Gaussian observations with a normal-inverse-gamma prior, and the same
//! model pushed through `exp` for positive data.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use super::{require_finite, require_positive, Family, FamilyError, UnconstrainedParams};

/// Log density of the location-scale Student-t distribution.
///
/// `scale2` is the squared scale, so the density at `loc` for `df = 2`,
/// `scale2 = 2` is exactly 1/4.
pub fn student_t_logpdf(x: f64, df: f64, loc: f64, scale2: f64) -> f64 {
    let z = (x - loc) * (x - loc) / (df * scale2);
    ln_gamma(0.5 * (df + 1.0))
        - ln_gamma(0.5 * df)
        - 0.5 * (df * std::f64::consts::PI).ln()
        - 0.5 * scale2.ln()
        - 0.5 * (df + 1.0) * z.ln_1p()
}

/// Normal-inverse-gamma prior for a scalar Gaussian with unknown mean and
/// variance: `sigma^2 ~ InvGamma(a, b)`, `mu ~ N(m, sigma^2 / lambda)`.
///
/// Sufficient statistics are `tau = [sum x, sum x^2]` with count `nu`; the
/// updated prior parameters are derived on demand by [`NigHyper::posterior`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NigHyper {
    pub m: f64,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
}

/// Prior parameters after absorbing data, in the same (m, lambda, a, b)
/// parameterization as the prior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NigPosterior {
    pub m: f64,
    pub lambda: f64,
    pub a: f64,
    pub b: f64,
}

impl NigPosterior {
    /// Posterior predictive: Student-t with `df = 2a`, location `m`, squared
    /// scale `b (lambda + 1) / (a lambda)`.
    pub fn predictive(&self) -> (f64, f64, f64) {
        (
            2.0 * self.a,
            self.m,
            self.b * (self.lambda + 1.0) / (self.a * self.lambda),
        )
    }
}

impl NigHyper {
    /// Updated prior parameters given accumulated statistics.
    pub fn posterior(&self, tau: &[f64], nu: f64) -> NigPosterior {
        let (sx, sxx) = (tau[0], tau[1]);
        let lambda = self.lambda + nu;
        let m = (self.lambda * self.m + sx) / lambda;
        let a = self.a + 0.5 * nu;
        let b = self.b + 0.5 * (sxx + self.lambda * self.m * self.m - lambda * m * m);
        NigPosterior { m, lambda, a, b }
    }
}

impl Family for NigHyper {
    fn dim(&self) -> usize {
        1
    }

    fn stat_len(&self) -> usize {
        2
    }

    fn accumulate(&self, tau: &mut [f64], x: &[f64]) -> Result<(), FamilyError> {
        super::check_lens(self, tau, x)?;
        if !x[0].is_finite() {
            return Err(FamilyError::OutsideSupport {
                value: x[0],
                support: "finite reals",
            });
        }
        tau[0] += x[0];
        tau[1] += x[0] * x[0];
        Ok(())
    }

    fn log_predictive(&self, tau: &[f64], nu: f64, x: &[f64]) -> Result<f64, FamilyError> {
        super::check_lens(self, tau, x)?;
        if !x[0].is_finite() {
            return Err(FamilyError::OutsideSupport {
                value: x[0],
                support: "finite reals",
            });
        }
        let post = self.posterior(tau, nu);
        if !(post.b > 0.0) || !(post.lambda > 0.0) {
            return Err(FamilyError::BadState {
                what: "derived posterior scale is not positive",
            });
        }
        let (df, loc, scale2) = post.predictive();
        Ok(student_t_logpdf(x[0], df, loc, scale2))
    }

    fn validate(&self) -> Result<(), FamilyError> {
        require_finite("m", self.m)?;
        require_positive("lambda", self.lambda)?;
        require_positive("a", self.a)?;
        require_positive("b", self.b)
    }
}

impl UnconstrainedParams for NigHyper {
    fn param_len(&self) -> usize {
        4
    }

    fn to_unconstrained(&self) -> Vec<f64> {
        vec![self.m, self.lambda.ln(), self.a.ln(), self.b.ln()]
    }

    fn from_unconstrained(&self, v: &[f64]) -> Result<Self, FamilyError> {
        if v.len() != 4 {
            return Err(FamilyError::StateLen {
                want: 4,
                got: v.len(),
            });
        }
        let out = NigHyper {
            m: v[0],
            lambda: v[1].exp(),
            a: v[2].exp(),
            b: v[3].exp(),
        };
        out.validate()?;
        Ok(out)
    }
}

/// The NIG Gaussian model applied to `ln x`: a log-normal likelihood over
/// strictly positive observations, with the change-of-variables term
/// `-ln x` folded into the predictive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogNormalNig {
    pub base: NigHyper,
}

impl LogNormalNig {
    pub fn new(base: NigHyper) -> Self {
        Self { base }
    }
}

impl Family for LogNormalNig {
    fn dim(&self) -> usize {
        1
    }

    fn stat_len(&self) -> usize {
        2
    }

    fn accumulate(&self, tau: &mut [f64], x: &[f64]) -> Result<(), FamilyError> {
        super::check_lens(self, tau, x)?;
        if !(x[0] > 0.0) || !x[0].is_finite() {
            return Err(FamilyError::OutsideSupport {
                value: x[0],
                support: "strictly positive reals",
            });
        }
        let w = x[0].ln();
        tau[0] += w;
        tau[1] += w * w;
        Ok(())
    }

    fn log_predictive(&self, tau: &[f64], nu: f64, x: &[f64]) -> Result<f64, FamilyError> {
        super::check_lens(self, tau, x)?;
        if !(x[0] > 0.0) || !x[0].is_finite() {
            return Err(FamilyError::OutsideSupport {
                value: x[0],
                support: "strictly positive reals",
            });
        }
        let w = x[0].ln();
        let lp = self.base.log_predictive(tau, nu, &[w])?;
        Ok(lp - w)
    }

    fn validate(&self) -> Result<(), FamilyError> {
        self.base.validate()
    }
}

impl UnconstrainedParams for LogNormalNig {
    fn param_len(&self) -> usize {
        self.base.param_len()
    }

    fn to_unconstrained(&self) -> Vec<f64> {
        self.base.to_unconstrained()
    }

    fn from_unconstrained(&self, v: &[f64]) -> Result<Self, FamilyError> {
        Ok(LogNormalNig {
            base: self.base.from_unconstrained(v)?,
        })
    }
}
