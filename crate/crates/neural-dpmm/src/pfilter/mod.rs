//! Sequential mixture inference with conjugate components.
//!
//! Two inference routes share the per-class posterior bookkeeping in
//! [`ClusterState`]. With labels observed the filtering distribution is a
//! single deterministic path ([`exact_sequential_nll`]); with labels
//! latent a particle ensemble tracks the label trajectory posterior
//! ([`pf_run`]). [`enumerate_log_marginal`] sums over every canonical
//! labeling and serves as the exponential-cost reference for short
//! sequences.

pub mod fit;

use crate::crp::{CrpError, CrpState};
use crate::episode::{canonicalize_labels, validate_episode, Episode, EpisodeError};
use crate::expfam::{log_predictive, posterior_update, Family, FamilyError, HyperParams};
use crate::rng::RngStream;
use rand::RngExt;

#[derive(Debug, thiserror::Error)]
pub enum PfError {
    #[error("observation has dimension {got}, model expects {expected}")]
    DimMismatch { expected: usize, got: usize },
    #[error("particle count must be at least 1")]
    NoParticles,
    #[error("ess threshold {threshold} exceeds particle count {particles}")]
    ThresholdAboveParticleCount { threshold: f64, particles: usize },
    #[error(transparent)]
    Family(#[from] FamilyError),
    #[error(transparent)]
    Crp(#[from] CrpError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error("objective became non-finite at step {step} with hyperparameters {params:?}")]
    NonFiniteObjective { step: usize, params: Vec<f64> },
    #[error("cannot fit on an empty episode set")]
    NoEpisodes,
}

/// Running per-class posteriors plus label-process counts. Class ids are
/// 1-based; id `classes() + 1` denotes a new class everywhere.
#[derive(Clone, Debug)]
pub struct ClusterState {
    crp: CrpState,
    hypers: Vec<HyperParams>,
}

impl ClusterState {
    pub fn new(alpha: f64) -> Result<Self, PfError> {
        Ok(Self {
            crp: CrpState::new(alpha)?,
            hypers: Vec::new(),
        })
    }

    pub fn alpha(&self) -> f64 {
        self.crp.alpha()
    }

    pub fn classes(&self) -> usize {
        self.hypers.len()
    }

    pub fn counts(&self) -> &[u64] {
        self.crp.counts()
    }

    pub fn total(&self) -> u64 {
        self.crp.total()
    }

    /// Accumulated statistics of class `label` (1-based).
    pub fn hyper(&self, label: usize) -> Option<&HyperParams> {
        self.hypers.get(label - 1)
    }

    /// Assigns `x` to `label`, opening a new class when
    /// `label == classes() + 1`.
    pub fn observe(
        &mut self,
        family: &(impl Family + ?Sized),
        label: usize,
        x: &[f64],
    ) -> Result<(), PfError> {
        self.crp.observe(label)?;
        if label == self.hypers.len() + 1 {
            self.hypers.push(HyperParams::prior_for(family));
        }
        self.hypers[label - 1] = posterior_update(family, &self.hypers[label - 1], x)?;
        Ok(())
    }
}

/// One-step label distribution given the current observation: normalized
/// log probabilities over the `classes() + 1` choices and the log of the
/// normalizing constant, which is the observation's one-step predictive
/// density.
#[derive(Clone, Debug)]
pub struct LabelPosterior {
    pub log_probs: Vec<f64>,
    pub log_normalizer: f64,
}

impl LabelPosterior {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|&l| l.exp()).collect()
    }
}

pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let mx = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + xs.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln()
}

/// Combines the label-process prior with each class's posterior
/// predictive, plus the prior predictive for a new class.
pub fn label_posterior(
    family: &(impl Family + ?Sized),
    state: &ClusterState,
    x: &[f64],
) -> Result<LabelPosterior, PfError> {
    if x.len() != family.dim() {
        return Err(PfError::DimMismatch {
            expected: family.dim(),
            got: x.len(),
        });
    }
    let k = state.classes();
    let mut logs = Vec::with_capacity(k + 1);
    for label in 1..=k {
        let hyper = &state.hypers[label - 1];
        logs.push(state.crp.log_prior(label)? + log_predictive(family, hyper, x)?);
    }
    let prior = HyperParams::prior_for(family);
    logs.push(state.crp.log_prior(k + 1)? + log_predictive(family, &prior, x)?);
    let z = logsumexp(&logs);
    for l in &mut logs {
        *l -= z;
    }
    Ok(LabelPosterior {
        log_probs: logs,
        log_normalizer: z,
    })
}

/// Per-step log p(z_t | x_{1:t}, z_{1:t-1}) of the observed labels along
/// the unique filtering path.
pub fn exact_sequential_log_probs(
    family: &(impl Family + ?Sized),
    episode: &Episode,
    alpha: f64,
) -> Result<Vec<f64>, PfError> {
    validate_episode(episode)?;
    let mut state = ClusterState::new(alpha)?;
    let mut logs = Vec::with_capacity(episode.len());
    for (label, x) in episode.labels.iter().zip(&episode.obs) {
        let posterior = label_posterior(family, &state, x)?;
        logs.push(posterior.log_probs[label - 1]);
        state.observe(family, *label, x)?;
    }
    Ok(logs)
}

/// Mean negative log probability of the observed labels along the unique
/// filtering path: -(1/T) sum_t log p(z_t | x_{1:t}, z_{1:t-1}).
pub fn exact_sequential_nll(
    family: &(impl Family + ?Sized),
    episode: &Episode,
    alpha: f64,
) -> Result<f64, PfError> {
    let logs = exact_sequential_log_probs(family, episode, alpha)?;
    Ok(-logs.iter().sum::<f64>() / episode.len() as f64)
}

/// One weighted label-trajectory hypothesis.
#[derive(Clone, Debug)]
pub struct Particle {
    pub trajectory: Vec<usize>,
    pub clusters: ClusterState,
    pub log_weight: f64,
}

#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub particles: Vec<Particle>,
    pub normalized: bool,
}

impl ParticleEnsemble {
    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.log_weight.exp()).collect()
    }

    /// Confirms the normalization invariant: weights sum to 1 within 1e-9.
    pub fn check(&self) -> Result<(), PfError> {
        if self.normalized {
            let sum: f64 = self.weights().iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(PfError::NonFiniteObjective {
                    step: 0,
                    params: vec![sum],
                });
            }
        }
        Ok(())
    }

    /// Index of the maximal-weight particle; ties keep the lowest index.
    pub fn map_particle(&self) -> usize {
        let mut best = 0;
        for (idx, particle) in self.particles.iter().enumerate() {
            if particle.log_weight > self.particles[best].log_weight {
                best = idx;
            }
        }
        best
    }
}

/// Inverse participation ratio of normalized weights, between 1 and the
/// particle count.
pub(crate) fn effective_sample_size(log_weights: &[f64]) -> f64 {
    1.0 / log_weights.iter().map(|&l| (2.0 * l).exp()).sum::<f64>()
}

/// Draws `draws` indices independently from the given probability vector.
pub fn multinomial_resample(probs: &[f64], draws: usize, rng: &mut RngStream) -> Vec<usize> {
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = probs.len() - 1;
        for (idx, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                pick = idx;
                break;
            }
        }
        out.push(pick);
    }
    out
}

/// Full particle-filter pass over one observation sequence.
#[derive(Clone, Debug)]
pub struct PfRun {
    pub ensemble: ParticleEnsemble,
    /// Per-step log of the weighted mean incremental normalizer; the sum
    /// estimates the log marginal likelihood of the observations.
    pub log_increments: Vec<f64>,
    /// Steps (0-based) at which resampling fired.
    pub resamples: Vec<usize>,
}

impl PfRun {
    pub fn log_marginal(&self) -> f64 {
        self.log_increments.iter().sum()
    }
}

/// Runs the filter: each particle samples its next label from
/// [`label_posterior`] and multiplies its weight by that step's
/// normalizer, so between resampling events the weights carry exactly
/// the information the proposal cannot. Resampling is multinomial,
/// fires when the effective sample size drops below `ess_threshold`,
/// and resets the weights to uniform.
pub fn pf_run(
    family: &(impl Family + ?Sized),
    obs: &[Vec<f64>],
    alpha: f64,
    particles: usize,
    ess_threshold: f64,
    rng: &mut RngStream,
) -> Result<PfRun, PfError> {
    if particles == 0 {
        return Err(PfError::NoParticles);
    }
    if ess_threshold > particles as f64 {
        return Err(PfError::ThresholdAboveParticleCount {
            threshold: ess_threshold,
            particles,
        });
    }
    let log_uniform = -(particles as f64).ln();
    let mut ensemble: Vec<Particle> = (0..particles)
        .map(|_| {
            Ok(Particle {
                trajectory: Vec::with_capacity(obs.len()),
                clusters: ClusterState::new(alpha)?,
                log_weight: log_uniform,
            })
        })
        .collect::<Result<_, PfError>>()?;
    let mut log_increments = Vec::with_capacity(obs.len());
    let mut resamples = Vec::new();

    for (t, x) in obs.iter().enumerate() {
        for particle in &mut ensemble {
            let posterior = label_posterior(family, &particle.clusters, x)?;
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut choice = posterior.log_probs.len();
            for (idx, &lp) in posterior.log_probs.iter().enumerate() {
                acc += lp.exp();
                if u < acc {
                    choice = idx + 1;
                    break;
                }
            }
            particle.trajectory.push(choice);
            particle.clusters.observe(family, choice, x)?;
            particle.log_weight += posterior.log_normalizer;
        }
        let log_weights: Vec<f64> = ensemble.iter().map(|p| p.log_weight).collect();
        let increment = logsumexp(&log_weights);
        for particle in &mut ensemble {
            particle.log_weight -= increment;
        }
        log_increments.push(increment);

        let normalized: Vec<f64> = ensemble.iter().map(|p| p.log_weight).collect();
        if effective_sample_size(&normalized) < ess_threshold {
            let probs: Vec<f64> = normalized.iter().map(|&l| l.exp()).collect();
            let picks = multinomial_resample(&probs, particles, rng);
            ensemble = picks
                .into_iter()
                .map(|idx| {
                    let mut p = ensemble[idx].clone();
                    p.log_weight = log_uniform;
                    p
                })
                .collect();
            resamples.push(t);
        }
    }

    Ok(PfRun {
        ensemble: ParticleEnsemble {
            particles: ensemble,
            normalized: true,
        },
        log_increments,
        resamples,
    })
}

/// Trajectory of the maximal-weight particle after a full filter pass,
/// canonicalized. Ties keep the lowest particle index.
pub fn pf_map_labels(
    family: &(impl Family + ?Sized),
    obs: &[Vec<f64>],
    alpha: f64,
    particles: usize,
    ess_threshold: f64,
    rng: &mut RngStream,
) -> Result<Vec<usize>, PfError> {
    let run = pf_run(family, obs, alpha, particles, ess_threshold, rng)?;
    let best = run.ensemble.map_particle();
    Ok(canonicalize_labels(&run.ensemble.particles[best].trajectory))
}

/// Log marginal likelihood by exhaustive summation over every canonical
/// labeling. Cost grows with the Bell number of the length; intended for
/// sequences of length at most about 10.
pub fn enumerate_log_marginal(
    family: &(impl Family + ?Sized),
    obs: &[Vec<f64>],
    alpha: f64,
) -> Result<f64, PfError> {
    fn descend(
        family: &(impl Family + ?Sized),
        obs: &[Vec<f64>],
        t: usize,
        state: &ClusterState,
        acc: f64,
        terms: &mut Vec<f64>,
    ) -> Result<(), PfError> {
        if t == obs.len() {
            terms.push(acc);
            return Ok(());
        }
        let k = state.classes();
        for label in 1..=k + 1 {
            let prior = state.crp.log_prior(label)?;
            let hyper = match state.hyper(label) {
                Some(h) => h.clone(),
                None => HyperParams::prior_for(family),
            };
            let pred = log_predictive(family, &hyper, &obs[t])?;
            let mut next = state.clone();
            next.observe(family, label, &obs[t])?;
            descend(family, obs, t + 1, &next, acc + prior + pred, terms)?;
        }
        Ok(())
    }

    let mut terms = Vec::new();
    let state = ClusterState::new(alpha)?;
    descend(family, obs, 0, &state, 0.0, &mut terms)?;
    Ok(logsumexp(&terms))
}
