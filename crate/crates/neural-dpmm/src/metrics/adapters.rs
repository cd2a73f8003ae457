//! Uniform evaluation interface over the four predictors: CRP prior,
//! exact collapsed filter, particle filter, and trained circuit.

use super::{ami, ari, median_of_means_ms, nll_and_perplexity, MetricsError, MetricsReport};
use crate::circuit::{circuit_map, sequential_log_probs, CircuitConfig, CircuitError, CircuitParams};
use crate::crp::{CrpError, CrpState};
use crate::episode::{Episode, SettingFlag};
use crate::expfam::Family;
use crate::pfilter::{
    exact_sequential_log_probs, label_posterior, pf_map_labels, ClusterState, PfError,
};
use crate::rng::RngStream;
use rayon::prelude::*;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("method {method} does not support the {setting:?} setting")]
    Unsupported {
        method: String,
        setting: SettingFlag,
    },
    #[error("no episodes to evaluate")]
    NoEpisodes,
    #[error(transparent)]
    Crp(#[from] CrpError),
    #[error(transparent)]
    Pf(#[from] PfError),
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A predictor under evaluation. `sequential_log_probs` scores the true
/// label at every step given all earlier observations and true labels;
/// `map_labels` produces a canonical label sequence from observations
/// alone.
pub trait Method: Sync {
    fn name(&self) -> &str;

    fn supports(&self, setting: SettingFlag) -> bool;

    fn sequential_log_probs(
        &self,
        episode: &Episode,
        rng: &mut RngStream,
    ) -> Result<Vec<f64>, EvalError> {
        let _ = (episode, rng);
        Err(EvalError::Unsupported {
            method: self.name().to_string(),
            setting: SettingFlag::SequentialObservation,
        })
    }

    fn map_labels(
        &self,
        obs: &[Vec<f64>],
        rng: &mut RngStream,
    ) -> Result<Vec<usize>, EvalError> {
        let _ = (obs, rng);
        Err(EvalError::Unsupported {
            method: self.name().to_string(),
            setting: SettingFlag::FullyUnobserved,
        })
    }
}

/// Label-process prior, ignoring observations entirely.
pub struct CrpPrior {
    pub alpha: f64,
}

impl Method for CrpPrior {
    fn name(&self) -> &str {
        "crp"
    }

    fn supports(&self, setting: SettingFlag) -> bool {
        setting == SettingFlag::SequentialObservation
    }

    fn sequential_log_probs(
        &self,
        episode: &Episode,
        _rng: &mut RngStream,
    ) -> Result<Vec<f64>, EvalError> {
        let mut state = CrpState::new(self.alpha)?;
        let mut logs = Vec::with_capacity(episode.len());
        for &label in &episode.labels {
            logs.push(state.log_prior(label)?);
            state.observe(label)?;
        }
        Ok(logs)
    }
}

/// Collapsed-filter posterior predictive, exact along the conditioning
/// path. MAP labeling is the greedy filtering argmax.
pub struct ExactBayes<F> {
    pub family: F,
    pub alpha: f64,
}

impl<F: Family + Sync> Method for ExactBayes<F> {
    fn name(&self) -> &str {
        "exact"
    }

    fn supports(&self, _setting: SettingFlag) -> bool {
        true
    }

    fn sequential_log_probs(
        &self,
        episode: &Episode,
        _rng: &mut RngStream,
    ) -> Result<Vec<f64>, EvalError> {
        Ok(exact_sequential_log_probs(&self.family, episode, self.alpha)?)
    }

    fn map_labels(
        &self,
        obs: &[Vec<f64>],
        _rng: &mut RngStream,
    ) -> Result<Vec<usize>, EvalError> {
        let mut state = ClusterState::new(self.alpha)?;
        let mut labels = Vec::with_capacity(obs.len());
        for x in obs {
            let posterior = label_posterior(&self.family, &state, x)?;
            let best = posterior
                .log_probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("log probs are finite"))
                .map(|(k, _)| k + 1)
                .expect("posterior has at least the new-class slot");
            state.observe(&self.family, best, x)?;
            labels.push(best);
        }
        Ok(labels)
    }
}

/// Rao-Blackwellized particle filter. When the true labels are observed
/// the trajectory distribution collapses to a point, every particle
/// becomes identical, and the predictive equals the exact collapsed
/// filter's, so the sequential setting evaluates that directly instead
/// of running redundant copies.
pub struct PfMethod<F> {
    pub family: F,
    pub alpha: f64,
    pub particles: usize,
    pub ess_threshold: f64,
}

impl<F: Family + Sync> Method for PfMethod<F> {
    fn name(&self) -> &str {
        "pf"
    }

    fn supports(&self, _setting: SettingFlag) -> bool {
        true
    }

    fn sequential_log_probs(
        &self,
        episode: &Episode,
        _rng: &mut RngStream,
    ) -> Result<Vec<f64>, EvalError> {
        Ok(exact_sequential_log_probs(&self.family, episode, self.alpha)?)
    }

    fn map_labels(
        &self,
        obs: &[Vec<f64>],
        rng: &mut RngStream,
    ) -> Result<Vec<usize>, EvalError> {
        Ok(pf_map_labels(
            &self.family,
            obs,
            self.alpha,
            self.particles,
            self.ess_threshold,
            rng,
        )?)
    }
}

/// Trained recurrent circuit.
pub struct CircuitMethod {
    pub params: CircuitParams,
    pub cfg: CircuitConfig,
}

impl Method for CircuitMethod {
    fn name(&self) -> &str {
        "circuit"
    }

    fn supports(&self, _setting: SettingFlag) -> bool {
        true
    }

    fn sequential_log_probs(
        &self,
        episode: &Episode,
        _rng: &mut RngStream,
    ) -> Result<Vec<f64>, EvalError> {
        Ok(sequential_log_probs(&self.params, &self.cfg, episode)?)
    }

    fn map_labels(
        &self,
        obs: &[Vec<f64>],
        _rng: &mut RngStream,
    ) -> Result<Vec<usize>, EvalError> {
        Ok(circuit_map(&self.params, &self.cfg, obs)?)
    }
}

/// Scores `method` on pre-generated episodes. Metric computation runs
/// in parallel with one child rng stream per episode; the timing pass
/// reruns a sample of episodes on the calling thread so per-sequence
/// wall clock is comparable across methods.
pub fn evaluate(
    method: &dyn Method,
    episodes: &[Episode],
    setting: SettingFlag,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    if episodes.is_empty() {
        return Err(EvalError::NoEpisodes);
    }
    if !method.supports(setting) {
        return Err(EvalError::Unsupported {
            method: method.name().to_string(),
            setting,
        });
    }
    let root = RngStream::from_seed(seed);
    let mut report = MetricsReport {
        method: method.name().to_string(),
        setting,
        episodes: episodes.len(),
        nll: None,
        perplexity: None,
        ari: None,
        ami: None,
        ms_per_sequence: 0.0,
        config_digest: None,
    };
    let timing_batches = (episodes.len() / 10).clamp(1, 20);
    match setting {
        SettingFlag::SequentialObservation => {
            let logs: Vec<Vec<f64>> = episodes
                .par_iter()
                .enumerate()
                .map(|(i, ep)| {
                    let mut rng = root.split(i as u64);
                    method.sequential_log_probs(ep, &mut rng)
                })
                .collect::<Result<_, _>>()?;
            let (nll, perplexity) = nll_and_perplexity(&logs)?;
            report.nll = Some(nll);
            report.perplexity = Some(perplexity);
            report.ms_per_sequence = median_of_means_ms(10, timing_batches, 10, |i| {
                let idx = i % episodes.len();
                let mut rng = root.split(idx as u64);
                let _ = method.sequential_log_probs(&episodes[idx], &mut rng);
            });
        }
        SettingFlag::FullyUnobserved => {
            let scores: Vec<(f64, f64)> = episodes
                .par_iter()
                .enumerate()
                .map(|(i, ep)| {
                    let mut rng = root.split(i as u64);
                    let labels = method.map_labels(&ep.obs, &mut rng)?;
                    Ok((ari(&ep.labels, &labels)?, ami(&ep.labels, &labels)?))
                })
                .collect::<Result<_, EvalError>>()?;
            let n = scores.len() as f64;
            report.ari = Some(scores.iter().map(|s| s.0).sum::<f64>() / n);
            report.ami = Some(scores.iter().map(|s| s.1).sum::<f64>() / n);
            report.ms_per_sequence = median_of_means_ms(10, timing_batches, 10, |i| {
                let idx = i % episodes.len();
                let mut rng = root.split(idx as u64);
                let _ = method.map_labels(&episodes[idx].obs, &mut rng);
            });
        }
    }
    Ok(report)
}
