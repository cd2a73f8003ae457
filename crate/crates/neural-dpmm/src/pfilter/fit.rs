//! Prior hyperparameter fitting.
//!
//! Minimizes the mean exact sequential score over minibatches of labeled
//! episodes by Adam on the unconstrained parameterization, with central
//! finite-difference gradients. Every evaluation inside one step shares
//! the same minibatch, so the difference quotient sees a smooth
//! deterministic objective.

use crate::episode::Episode;
use crate::expfam::{Family, UnconstrainedParams};
use crate::pfilter::{exact_sequential_nll, PfError};
use crate::rng::RngStream;
use rand::seq::index;

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Relative finite-difference step on each unconstrained coordinate.
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch: 128,
            lr: 0.1,
            fd_step: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitReport<F> {
    /// Family rebuilt from the best parameters seen.
    pub family: F,
    /// Lowest minibatch objective encountered.
    pub objective: f64,
    /// Minibatch objective of the unfitted template at step 0.
    pub initial_objective: f64,
    /// Minibatch objective at every step, in order.
    pub trace: Vec<f64>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let t = self.t as i32;
        for i in 0..theta.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / (1.0 - Self::BETA1.powi(t));
            let v_hat = self.v[i] / (1.0 - Self::BETA2.powi(t));
            theta[i] -= self.lr * m_hat / (v_hat.sqrt() + Self::EPS);
        }
    }
}

/// Fits the template's prior hyperparameters to labeled episodes and
/// returns the best parameters seen. Zero steps returns the template
/// unchanged.
pub fn fit_hyperparameters<F>(
    template: &F,
    episodes: &[Episode],
    alpha: f64,
    cfg: &FitConfig,
) -> Result<FitReport<F>, PfError>
where
    F: Family + UnconstrainedParams + Clone,
{
    if episodes.is_empty() {
        return Err(PfError::NoEpisodes);
    }
    let mut theta = template.to_unconstrained();
    if cfg.steps == 0 {
        return Ok(FitReport {
            family: template.clone(),
            objective: f64::INFINITY,
            initial_objective: f64::INFINITY,
            trace: Vec::new(),
        });
    }

    let objective = |theta: &[f64], batch: &[usize]| -> Result<f64, PfError> {
        let family = template.from_unconstrained(theta)?;
        let mut total = 0.0;
        for &idx in batch {
            total += exact_sequential_nll(&family, &episodes[idx], alpha)?;
        }
        Ok(total / batch.len() as f64)
    };

    let mut rng = RngStream::from_seed(cfg.seed);
    let mut adam = Adam::new(theta.len(), cfg.lr);
    let mut best_theta = theta.clone();
    let mut best = f64::INFINITY;
    let mut initial = f64::NAN;
    let mut trace = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch: Vec<usize> = if cfg.batch >= episodes.len() {
            (0..episodes.len()).collect()
        } else {
            index::sample(&mut rng, episodes.len(), cfg.batch)
                .into_iter()
                .collect()
        };

        let center = objective(&theta, &batch)?;
        if !center.is_finite() {
            return Err(PfError::NonFiniteObjective {
                step,
                params: theta,
            });
        }
        if step == 0 {
            initial = center;
        }
        trace.push(center);
        if center < best {
            best = center;
            best_theta.copy_from_slice(&theta);
        }

        let mut grad = vec![0.0; theta.len()];
        for i in 0..theta.len() {
            let h = cfg.fd_step * theta[i].abs().max(1.0);
            let saved = theta[i];
            theta[i] = saved + h;
            let hi = objective(&theta, &batch)?;
            theta[i] = saved - h;
            let lo = objective(&theta, &batch)?;
            theta[i] = saved;
            if !hi.is_finite() || !lo.is_finite() {
                return Err(PfError::NonFiniteObjective {
                    step,
                    params: theta,
                });
            }
            grad[i] = (hi - lo) / (2.0 * h);
        }
        adam.step(&mut theta, &grad);
    }

    Ok(FitReport {
        family: template.from_unconstrained(&best_theta)?,
        objective: best,
        initial_objective: initial,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expfam::{FamilyError, NigHyper};
    use crate::simgen::{sample_synthetic_episode, SyntheticConfig};

    fn make_episodes(nig: &NigHyper, n: usize, len: usize, seed: u64) -> Vec<Episode> {
        let cfg = SyntheticConfig {
            dim: 1,
            nig: nig.clone(),
            alpha: 1.0,
            len,
        };
        let mut rng = RngStream::from_seed(seed);
        (0..n)
            .map(|_| sample_synthetic_episode(&cfg, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn zero_steps_returns_the_template() {
        let template = NigHyper {
            m: 0.3,
            lambda: 2.0,
            a: 1.5,
            b: 0.7,
        };
        let episodes = make_episodes(&template, 4, 10, 1);
        let report =
            fit_hyperparameters(&template, &episodes, 1.0, &FitConfig {
                steps: 0,
                ..FitConfig::default()
            })
            .unwrap();
        assert_eq!(report.family, template);
        assert!(report.trace.is_empty());
    }

    #[test]
    fn empty_episode_set_is_an_error() {
        let err = fit_hyperparameters(
            &NigHyper {
                m: 0.0,
                lambda: 1.0,
                a: 2.0,
                b: 2.0,
            },
            &[],
            1.0,
            &FitConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PfError::NoEpisodes));
    }

    #[test]
    fn best_seen_objective_is_the_trace_minimum() {
        let truth = NigHyper {
            m: 1.0,
            lambda: 0.5,
            a: 3.0,
            b: 1.0,
        };
        let episodes = make_episodes(&truth, 32, 20, 2);
        let template = NigHyper {
            m: 0.0,
            lambda: 1.0,
            a: 2.0,
            b: 2.0,
        };
        let cfg = FitConfig {
            steps: 25,
            batch: 8,
            seed: 3,
            ..FitConfig::default()
        };
        let report = fit_hyperparameters(&template, &episodes, 1.0, &cfg).unwrap();
        assert_eq!(report.trace.len(), 25);
        assert_eq!(report.initial_objective, report.trace[0]);
        let min = report.trace.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(report.objective, min);
        let mut running = f64::INFINITY;
        for &v in &report.trace {
            running = running.min(v);
            assert!(report.objective <= running || report.objective == running);
        }
    }

    #[test]
    fn fitting_recovers_the_generating_hyperparameters() {
        let truth = NigHyper {
            m: 1.0,
            lambda: 0.5,
            a: 3.0,
            b: 1.0,
        };
        let train = make_episodes(&truth, 96, 40, 5);
        let heldout = make_episodes(&truth, 96, 40, 6);
        let template = NigHyper {
            m: 0.0,
            lambda: 1.0,
            a: 2.0,
            b: 2.0,
        };
        let cfg = FitConfig {
            steps: 250,
            batch: 12,
            seed: 7,
            ..FitConfig::default()
        };
        let report = fit_hyperparameters(&template, &train, 1.0, &cfg).unwrap();

        let mean = |family: &NigHyper| -> f64 {
            heldout
                .iter()
                .map(|e| exact_sequential_nll(family, e, 1.0).unwrap())
                .sum::<f64>()
                / heldout.len() as f64
        };
        let fitted_nll = mean(&report.family);
        let true_nll = mean(&truth);
        let template_nll = mean(&template);
        assert!(
            fitted_nll <= true_nll + 0.01,
            "fitted {fitted_nll} vs true {true_nll}"
        );
        assert!(fitted_nll < template_nll, "fit failed to improve on the template");
    }

    /// Family whose predictive is NaN, to exercise the non-finite path.
    #[derive(Clone, Debug)]
    struct Poisoned;

    impl Family for Poisoned {
        fn dim(&self) -> usize {
            1
        }
        fn stat_len(&self) -> usize {
            1
        }
        fn accumulate(&self, _tau: &mut [f64], _x: &[f64]) -> Result<(), FamilyError> {
            Ok(())
        }
        fn log_predictive(
            &self,
            _tau: &[f64],
            _nu: f64,
            _x: &[f64],
        ) -> Result<f64, FamilyError> {
            Ok(f64::NAN)
        }
        fn validate(&self) -> Result<(), FamilyError> {
            Ok(())
        }
    }

    impl UnconstrainedParams for Poisoned {
        fn param_len(&self) -> usize {
            1
        }
        fn to_unconstrained(&self) -> Vec<f64> {
            vec![0.0]
        }
        fn from_unconstrained(&self, _v: &[f64]) -> Result<Self, FamilyError> {
            Ok(Poisoned)
        }
    }

    #[test]
    fn non_finite_objective_reports_step_and_parameters() {
        let episodes = vec![Episode {
            labels: vec![1, 1],
            obs: vec![vec![0.0], vec![0.1]],
        }];
        let err = fit_hyperparameters(&Poisoned, &episodes, 1.0, &FitConfig {
            steps: 3,
            batch: 1,
            ..FitConfig::default()
        })
        .unwrap_err();
        assert!(matches!(
            err,
            PfError::NonFiniteObjective { step: 0, ref params } if params == &vec![0.0]
        ));
    }
}
