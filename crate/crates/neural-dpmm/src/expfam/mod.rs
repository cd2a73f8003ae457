//! Conjugate exponential-family observation models.
//!
//! A [`Family`] pairs a likelihood with its conjugate prior and exposes the
//! two operations sequential inference needs in closed form: absorbing an
//! observation into sufficient statistics and evaluating the posterior
//! predictive density of the next observation.
//!
//! Posterior state is the pair `(tau, nu)`: `tau` accumulates per-family
//! sufficient statistics `sum_i t(x_i)` and `nu` counts observations. Prior
//! hyperparameters live in the family value itself, so a fresh state is all
//! zeros and updates are pure additions. Families compose: [`Product`] and
//! [`IidProduct`] join independent per-dimension factors, and
//! [`hurdle_compose`] wraps any scalar family with a point mass at zero.

mod bernoulli;
mod hurdle;
mod nig;

pub use bernoulli::BetaBernoulli;
pub use hurdle::{hurdle_compose, Hurdle};
pub use nig::{student_t_logpdf, LogNormalNig, NigHyper, NigPosterior};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FamilyError {
    #[error("observation has dimension {got}, model expects {want}")]
    DimMismatch { want: usize, got: usize },
    #[error("observation {value} is outside the family support ({support})")]
    OutsideSupport { value: f64, support: &'static str },
    #[error("hyperparameter {name} = {value} is inadmissible")]
    InadmissibleHyper { name: &'static str, value: f64 },
    #[error("posterior state has {got} statistics, family expects {want}")]
    StateLen { want: usize, got: usize },
    #[error("posterior state is inadmissible: {what}")]
    BadState { what: &'static str },
}

/// Conjugate prior + likelihood pair with closed-form predictive.
///
/// Implementations are immutable model specifications; all mutable state
/// flows through the `tau` slices owned by the caller. `accumulate` adds
/// `t(x)` for exactly one observation and the caller accounts for the
/// matching `nu` increment (see [`posterior_update`]).
pub trait Family: Send + Sync {
    /// Observation dimension.
    fn dim(&self) -> usize;

    /// Length of the sufficient-statistic vector `tau`.
    fn stat_len(&self) -> usize;

    /// Adds the sufficient statistics of `x` into `tau`.
    ///
    /// # Errors
    ///
    /// Fails when `x` has the wrong dimension or lies outside the support;
    /// `tau` is unchanged on error.
    fn accumulate(&self, tau: &mut [f64], x: &[f64]) -> Result<(), FamilyError>;

    /// Log posterior-predictive density of `x` after `nu` observations with
    /// accumulated statistics `tau`.
    ///
    /// # Errors
    ///
    /// Fails on dimension mismatch, an observation outside the support, or
    /// an inadmissible `(tau, nu)` state.
    fn log_predictive(&self, tau: &[f64], nu: f64, x: &[f64]) -> Result<f64, FamilyError>;

    /// Validates the prior hyperparameters held by this family value.
    fn validate(&self) -> Result<(), FamilyError>;
}

/// Accumulated posterior state for some [`Family`].
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    /// Accumulated sufficient statistics, layout owned by the family.
    pub tau: Vec<f64>,
    /// Number of absorbed observations.
    pub nu: f64,
}

impl HyperParams {
    /// Fresh state equal to the prior: no statistics, zero count.
    pub fn prior_for<F: Family + ?Sized>(family: &F) -> Self {
        Self {
            tau: vec![0.0; family.stat_len()],
            nu: 0.0,
        }
    }

    pub fn check(&self, family: &(impl Family + ?Sized)) -> Result<(), FamilyError> {
        if self.tau.len() != family.stat_len() {
            return Err(FamilyError::StateLen {
                want: family.stat_len(),
                got: self.tau.len(),
            });
        }
        if !(self.nu >= 0.0) {
            return Err(FamilyError::BadState {
                what: "observation count is negative or NaN",
            });
        }
        Ok(())
    }
}

/// Returns the posterior state after absorbing `x`: `tau + t(x)`, `nu + 1`.
///
/// # Errors
///
/// Same conditions as [`Family::accumulate`], plus state-shape checks.
pub fn posterior_update<F: Family + ?Sized>(
    family: &F,
    hyper: &HyperParams,
    x: &[f64],
) -> Result<HyperParams, FamilyError> {
    hyper.check(family)?;
    let mut out = hyper.clone();
    family.accumulate(&mut out.tau, x)?;
    out.nu += 1.0;
    Ok(out)
}

/// Log posterior-predictive density of `x` under the accumulated state.
///
/// # Errors
///
/// Same conditions as [`Family::log_predictive`].
pub fn log_predictive<F: Family + ?Sized>(
    family: &F,
    hyper: &HyperParams,
    x: &[f64],
) -> Result<f64, FamilyError> {
    hyper.check(family)?;
    family.log_predictive(&hyper.tau, hyper.nu, x)
}

/// Independent product of heterogeneous factors over consecutive
/// observation slices.
pub struct Product {
    factors: Vec<Box<dyn Family>>,
    dim: usize,
    stat_len: usize,
}

/// Joins per-dimension families into one model over the concatenated
/// observation vector. Every factor shares the observation count `nu`.
///
/// # Errors
///
/// Each factor's hyperparameters must be admissible.
pub fn product_family(factors: Vec<Box<dyn Family>>) -> Result<Product, FamilyError> {
    for f in &factors {
        f.validate()?;
    }
    let dim = factors.iter().map(|f| f.dim()).sum();
    let stat_len = factors.iter().map(|f| f.stat_len()).sum();
    Ok(Product {
        factors,
        dim,
        stat_len,
    })
}

impl Family for Product {
    fn dim(&self) -> usize {
        self.dim
    }

    fn stat_len(&self) -> usize {
        self.stat_len
    }

    fn accumulate(&self, tau: &mut [f64], x: &[f64]) -> Result<(), FamilyError> {
        check_lens(self, tau, x)?;
        let (mut to, mut xo) = (0, 0);
        for f in &self.factors {
            f.accumulate(&mut tau[to..to + f.stat_len()], &x[xo..xo + f.dim()])?;
            to += f.stat_len();
            xo += f.dim();
        }
        Ok(())
    }

    fn log_predictive(&self, tau: &[f64], nu: f64, x: &[f64]) -> Result<f64, FamilyError> {
        check_lens(self, tau, x)?;
        let (mut to, mut xo) = (0, 0);
        let mut total = 0.0;
        for f in &self.factors {
            total += f.log_predictive(&tau[to..to + f.stat_len()], nu, &x[xo..xo + f.dim()])?;
            to += f.stat_len();
            xo += f.dim();
        }
        Ok(total)
    }

    fn validate(&self) -> Result<(), FamilyError> {
        self.factors.iter().try_for_each(|f| f.validate())
    }
}

/// `dims` independent copies of one factor sharing a single set of prior
/// hyperparameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct IidProduct<F> {
    pub factor: F,
    pub dims: usize,
}

impl<F: Family> IidProduct<F> {
    pub fn new(factor: F, dims: usize) -> Result<Self, FamilyError> {
        factor.validate()?;
        Ok(Self { factor, dims })
    }
}

impl<F: Family> Family for IidProduct<F> {
    fn dim(&self) -> usize {
        self.dims * self.factor.dim()
    }

    fn stat_len(&self) -> usize {
        self.dims * self.factor.stat_len()
    }

    fn accumulate(&self, tau: &mut [f64], x: &[f64]) -> Result<(), FamilyError> {
        check_lens(self, tau, x)?;
        let (sl, fd) = (self.factor.stat_len(), self.factor.dim());
        for d in 0..self.dims {
            self.factor
                .accumulate(&mut tau[d * sl..(d + 1) * sl], &x[d * fd..(d + 1) * fd])?;
        }
        Ok(())
    }

    fn log_predictive(&self, tau: &[f64], nu: f64, x: &[f64]) -> Result<f64, FamilyError> {
        check_lens(self, tau, x)?;
        let (sl, fd) = (self.factor.stat_len(), self.factor.dim());
        let mut total = 0.0;
        for d in 0..self.dims {
            total +=
                self.factor
                    .log_predictive(&tau[d * sl..(d + 1) * sl], nu, &x[d * fd..(d + 1) * fd])?;
        }
        Ok(total)
    }

    fn validate(&self) -> Result<(), FamilyError> {
        self.factor.validate()
    }
}

fn check_lens<F: Family + ?Sized>(f: &F, tau: &[f64], x: &[f64]) -> Result<(), FamilyError> {
    if x.len() != f.dim() {
        return Err(FamilyError::DimMismatch {
            want: f.dim(),
            got: x.len(),
        });
    }
    if tau.len() != f.stat_len() {
        return Err(FamilyError::StateLen {
            want: f.stat_len(),
            got: tau.len(),
        });
    }
    Ok(())
}

/// Smooth reparameterization of prior hyperparameters for gradient-based
/// fitting. Positive quantities map through `ln`; locations stay linear.
pub trait UnconstrainedParams: Sized {
    fn param_len(&self) -> usize;

    fn to_unconstrained(&self) -> Vec<f64>;

    /// Rebuilds a family with this value's structure and the given free
    /// parameters.
    ///
    /// # Errors
    ///
    /// Fails when `v` has the wrong length or produces non-finite
    /// hyperparameters (for example `exp` overflow).
    fn from_unconstrained(&self, v: &[f64]) -> Result<Self, FamilyError>;
}

impl<F: UnconstrainedParams + Family> UnconstrainedParams for IidProduct<F> {
    fn param_len(&self) -> usize {
        self.factor.param_len()
    }

    fn to_unconstrained(&self) -> Vec<f64> {
        self.factor.to_unconstrained()
    }

    fn from_unconstrained(&self, v: &[f64]) -> Result<Self, FamilyError> {
        Ok(IidProduct {
            factor: self.factor.from_unconstrained(v)?,
            dims: self.dims,
        })
    }
}

pub(crate) fn require_positive(name: &'static str, value: f64) -> Result<(), FamilyError> {
    if !value.is_finite() || value <= 0.0 {
        return Err(FamilyError::InadmissibleHyper { name, value });
    }
    Ok(())
}

pub(crate) fn require_finite(name: &'static str, value: f64) -> Result<(), FamilyError> {
    if !value.is_finite() {
        return Err(FamilyError::InadmissibleHyper { name, value });
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    /// Integrates `f` over the whole real line through the substitution
    /// `x = loc + scale * tan(theta)` with composite Simpson on theta.
    /// Handles heavy polynomial tails; `n` must be even.
    pub fn integrate_real_line(f: impl Fn(f64) -> f64, loc: f64, scale: f64, n: usize) -> f64 {
        let eps = 1e-8;
        let lo = -std::f64::consts::FRAC_PI_2 + eps;
        let hi = std::f64::consts::FRAC_PI_2 - eps;
        let h = (hi - lo) / n as f64;
        let g = |theta: f64| {
            let c = theta.cos();
            f(loc + scale * theta.tan()) * scale / (c * c)
        };
        let mut sum = g(lo) + g(hi);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            sum += w * g(lo + h * i as f64);
        }
        sum * h / 3.0
    }
}
