//! Hurdle wrapper: a point mass at exactly zero gated by a Beta-Bernoulli,
//! with any scalar family over the nonzero values.
//!
//! For sparse data the augmented statistics are
//! `tau = [count of nonzero, t_base(x) for nonzero x]`, and the nonzero
//! count doubles as the base family's observation count. Zeros touch only
//! the shared count `nu`, so a long run of zeros costs nothing beyond it.

use serde::{Deserialize, Serialize};

use super::{require_positive, Family, FamilyError, UnconstrainedParams};

/// `gate_a` is the prior pseudo-count for nonzero, `gate_b` for zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hurdle<B> {
    pub gate_a: f64,
    pub gate_b: f64,
    pub base: B,
}

/// Wraps `base` with a zero gate.
///
/// # Errors
///
/// `base` must be scalar with admissible hyperparameters, and the gate
/// pseudo-counts must be positive.
pub fn hurdle_compose<B: Family>(
    base: B,
    gate_a: f64,
    gate_b: f64,
) -> Result<Hurdle<B>, FamilyError> {
    require_positive("gate_a", gate_a)?;
    require_positive("gate_b", gate_b)?;
    base.validate()?;
    if base.dim() != 1 {
        return Err(FamilyError::DimMismatch {
            want: 1,
            got: base.dim(),
        });
    }
    Ok(Hurdle {
        gate_a,
        gate_b,
        base,
    })
}

impl<B: Family> Hurdle<B> {
    /// Posterior probability that the next observation is exactly zero.
    pub fn zero_probability(&self, tau: &[f64], nu: f64) -> f64 {
        let nonzero = tau[0];
        (self.gate_b + (nu - nonzero)) / (self.gate_a + self.gate_b + nu)
    }
}

impl<B: Family> Family for Hurdle<B> {
    fn dim(&self) -> usize {
        1
    }

    fn stat_len(&self) -> usize {
        1 + self.base.stat_len()
    }

    fn accumulate(&self, tau: &mut [f64], x: &[f64]) -> Result<(), FamilyError> {
        super::check_lens(self, tau, x)?;
        // The zero branch matches the exact literal 0.0; anything else goes
        // to the base family, which enforces its own support.
        if x[0] == 0.0 {
            return Ok(());
        }
        let (head, rest) = tau.split_at_mut(1);
        self.base.accumulate(rest, x)?;
        head[0] += 1.0;
        Ok(())
    }

    fn log_predictive(&self, tau: &[f64], nu: f64, x: &[f64]) -> Result<f64, FamilyError> {
        super::check_lens(self, tau, x)?;
        let nonzero = tau[0];
        if nonzero < 0.0 || nonzero > nu {
            return Err(FamilyError::BadState {
                what: "nonzero count outside [0, nu]",
            });
        }
        let p_zero = self.zero_probability(tau, nu);
        if x[0] == 0.0 {
            return Ok(p_zero.ln());
        }
        let lp = self.base.log_predictive(&tau[1..], nonzero, x)?;
        Ok((1.0 - p_zero).ln() + lp)
    }

    fn validate(&self) -> Result<(), FamilyError> {
        require_positive("gate_a", self.gate_a)?;
        require_positive("gate_b", self.gate_b)?;
        self.base.validate()
    }
}

impl<B: UnconstrainedParams + Family> UnconstrainedParams for Hurdle<B> {
    fn param_len(&self) -> usize {
        2 + self.base.param_len()
    }

    fn to_unconstrained(&self) -> Vec<f64> {
        let mut v = vec![self.gate_a.ln(), self.gate_b.ln()];
        v.extend(self.base.to_unconstrained());
        v
    }

    fn from_unconstrained(&self, v: &[f64]) -> Result<Self, FamilyError> {
        if v.len() != self.param_len() {
            return Err(FamilyError::StateLen {
                want: self.param_len(),
                got: v.len(),
            });
        }
        let out = Hurdle {
            gate_a: v[0].exp(),
            gate_b: v[1].exp(),
            base: self.base.from_unconstrained(&v[2..])?,
        };
        require_positive("gate_a", out.gate_a)?;
        require_positive("gate_b", out.gate_b)?;
        Ok(out)
    }
}
