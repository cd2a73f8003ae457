//! Bernoulli observations with a Beta prior.

use serde::{Deserialize, Serialize};

use super::{require_positive, Family, FamilyError, UnconstrainedParams};

/// Beta(a, b) prior over the success probability of a 0/1 observation.
/// `tau = [count of ones]`, `nu` counts all observations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaBernoulli {
    pub a: f64,
    pub b: f64,
}

impl Family for BetaBernoulli {
    fn dim(&self) -> usize {
        1
    }

    fn stat_len(&self) -> usize {
        1
    }

    fn accumulate(&self, tau: &mut [f64], x: &[f64]) -> Result<(), FamilyError> {
        super::check_lens(self, tau, x)?;
        if x[0] != 0.0 && x[0] != 1.0 {
            return Err(FamilyError::OutsideSupport {
                value: x[0],
                support: "{0, 1}",
            });
        }
        tau[0] += x[0];
        Ok(())
    }

    fn log_predictive(&self, tau: &[f64], nu: f64, x: &[f64]) -> Result<f64, FamilyError> {
        super::check_lens(self, tau, x)?;
        let ones = tau[0];
        if ones < 0.0 || ones > nu {
            return Err(FamilyError::BadState {
                what: "success count outside [0, nu]",
            });
        }
        let p_one = (self.a + ones) / (self.a + self.b + nu);
        match x[0] {
            v if v == 1.0 => Ok(p_one.ln()),
            v if v == 0.0 => Ok((1.0 - p_one).ln()),
            v => Err(FamilyError::OutsideSupport {
                value: v,
                support: "{0, 1}",
            }),
        }
    }

    fn validate(&self) -> Result<(), FamilyError> {
        require_positive("a", self.a)?;
        require_positive("b", self.b)
    }
}

impl UnconstrainedParams for BetaBernoulli {
    fn param_len(&self) -> usize {
        2
    }

    fn to_unconstrained(&self) -> Vec<f64> {
        vec![self.a.ln(), self.b.ln()]
    }

    fn from_unconstrained(&self, v: &[f64]) -> Result<Self, FamilyError> {
        if v.len() != 2 {
            return Err(FamilyError::StateLen {
                want: 2,
                got: v.len(),
            });
        }
        let out = BetaBernoulli {
            a: v[0].exp(),
            b: v[1].exp(),
        };
        out.validate()?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{log_predictive, posterior_update, HyperParams};
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn uniform_prior_predicts_half() {
        let f = BetaBernoulli { a: 1.0, b: 1.0 };
        let h = HyperParams::prior_for(&f);
        assert_relative_eq!(log_predictive(&f, &h, &[1.0]).unwrap(), 0.5f64.ln());
        assert_relative_eq!(log_predictive(&f, &h, &[0.0]).unwrap(), 0.5f64.ln());
    }

    #[test]
    fn counts_update_predictive() {
        let f = BetaBernoulli { a: 1.0, b: 1.0 };
        let mut h = HyperParams::prior_for(&f);
        for x in [1.0, 1.0, 0.0] {
            h = posterior_update(&f, &h, &[x]).unwrap();
        }
        // (a + ones) / (a + b + n) = 3/5
        assert_relative_eq!(
            log_predictive(&f, &h, &[1.0]).unwrap(),
            0.6f64.ln(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            log_predictive(&f, &h, &[0.0]).unwrap(),
            0.4f64.ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn predictive_mass_sums_to_one() {
        let f = BetaBernoulli { a: 0.7, b: 2.3 };
        let mut h = HyperParams::prior_for(&f);
        for x in [0.0, 0.0, 1.0, 0.0] {
            h = posterior_update(&f, &h, &[x]).unwrap();
            let total = log_predictive(&f, &h, &[0.0]).unwrap().exp()
                + log_predictive(&f, &h, &[1.0]).unwrap().exp();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_values_off_the_lattice() {
        let f = BetaBernoulli { a: 1.0, b: 1.0 };
        let mut h = HyperParams::prior_for(&f);
        assert!(matches!(
            posterior_update(&f, &h, &[0.5]),
            Err(FamilyError::OutsideSupport { .. })
        ));
        assert!(matches!(
            log_predictive(&f, &h, &[2.0]),
            Err(FamilyError::OutsideSupport { .. })
        ));
        // v == 0.0 matches -0.0 too; the support check is on value equality
        h = posterior_update(&f, &h, &[-0.0]).unwrap();
        assert_eq!(h.tau[0], 0.0);
        assert_eq!(h.nu, 1.0);
    }
}
