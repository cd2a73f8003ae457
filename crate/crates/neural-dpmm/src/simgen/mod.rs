//! Episode generators.
//!
//! Two sources produce [`Episode`]s: a synthetic sampler that draws class
//! parameters from a normal-inverse-gamma prior and items from the induced
//! Gaussians, and a bank-backed sampler that assigns labels to stored
//! feature classes and draws items without replacement.

pub mod bank;

use crate::crp::{crp_sample, CrpError};
use crate::episode::Episode;
use crate::expfam::{Family, FamilyError, NigHyper};
use crate::rng::RngStream;
use bank::FeatureBank;
use rand::seq::index;
use rand::RngExt;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum SimGenError {
    #[error("dimension must be at least 1")]
    ZeroDim,
    #[error("sequence length must be at least 1")]
    ZeroLen,
    #[error("class prior is inadmissible: {0}")]
    Hyper(#[from] FamilyError),
    #[error(transparent)]
    Crp(#[from] CrpError),
    #[error("label sequence needs {needed} distinct classes but the bank holds {available}")]
    NotEnoughClasses { needed: usize, available: usize },
    #[error("gate rate must lie strictly inside (0, 1), got {0}")]
    BadGateRate(f64),
}

/// Generator settings for synthetic mixture episodes: per-dimension
/// normal-inverse-gamma class prior, concentration for the label process,
/// and sequence length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub dim: usize,
    pub nig: NigHyper,
    pub alpha: f64,
    pub len: usize,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), SimGenError> {
        if self.dim == 0 {
            return Err(SimGenError::ZeroDim);
        }
        if self.len == 0 {
            return Err(SimGenError::ZeroLen);
        }
        self.nig.validate()?;
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(SimGenError::Crp(CrpError::InvalidConcentration(self.alpha)));
        }
        Ok(())
    }
}

/// Latent per-class parameters of the synthetic generator, one mean and
/// variance per dimension.
#[derive(Clone, Debug)]
pub struct ClassParams {
    pub mu: Vec<f64>,
    pub sigma2: Vec<f64>,
}

/// Draws class parameters from the prior: sigma2 is inverse-gamma with
/// shape `a` and scale `b`, mu is normal with mean `m` and variance
/// `sigma2 / lambda`, independently per dimension.
pub fn sample_class_params(nig: &NigHyper, dim: usize, rng: &mut RngStream) -> ClassParams {
    let precision = Gamma::new(nig.a, 1.0 / nig.b).expect("admissible shape and scale");
    let mut mu = Vec::with_capacity(dim);
    let mut sigma2 = Vec::with_capacity(dim);
    for _ in 0..dim {
        let s2 = 1.0 / precision.sample(rng);
        let z: f64 = StandardNormal.sample(rng);
        mu.push(nig.m + z * (s2 / nig.lambda).sqrt());
        sigma2.push(s2);
    }
    ClassParams { mu, sigma2 }
}

/// Draws one item from a class: independent Gaussians per dimension.
pub fn sample_item(params: &ClassParams, rng: &mut RngStream) -> Vec<f64> {
    params
        .mu
        .iter()
        .zip(&params.sigma2)
        .map(|(&m, &s2)| {
            let z: f64 = StandardNormal.sample(rng);
            m + z * s2.sqrt()
        })
        .collect()
}

/// Samples one synthetic episode. Labels come from the label process;
/// class parameters are drawn once at a label's first appearance and
/// reused for every later item of that class.
pub fn sample_synthetic_episode(
    cfg: &SyntheticConfig,
    rng: &mut RngStream,
) -> Result<Episode, SimGenError> {
    cfg.validate()?;
    let labels = crp_sample(cfg.alpha, cfg.len, rng)?;
    let mut params: Vec<ClassParams> = Vec::new();
    let mut obs = Vec::with_capacity(cfg.len);
    for &label in &labels {
        if label > params.len() {
            params.push(sample_class_params(&cfg.nig, cfg.dim, rng));
        }
        obs.push(sample_item(&params[label - 1], rng));
    }
    Ok(Episode { labels, obs })
}

/// A bank-backed episode together with how many items had to be re-used
/// because a class pool ran dry. Zero means every draw was without
/// replacement.
#[derive(Clone, Debug)]
pub struct EmpiricalEpisode {
    pub episode: Episode,
    pub replacement_fallbacks: u64,
}

/// Samples an episode whose observations come from a feature bank.
/// Labels come from the label process; each distinct label is assigned a
/// distinct bank class uniformly at random, and items are drawn uniformly
/// without replacement within the assigned class. A class pool smaller
/// than its label's count falls back to with-replacement draws for the
/// excess, counted in `replacement_fallbacks`.
pub fn sample_empirical_episode(
    bank: &FeatureBank,
    alpha: f64,
    len: usize,
    rng: &mut RngStream,
) -> Result<EmpiricalEpisode, SimGenError> {
    if len == 0 {
        return Err(SimGenError::ZeroLen);
    }
    let labels = crp_sample(alpha, len, rng)?;
    let distinct = labels.iter().copied().max().unwrap_or(0);
    let ids = bank.class_ids();
    if distinct > ids.len() {
        return Err(SimGenError::NotEnoughClasses {
            needed: distinct,
            available: ids.len(),
        });
    }

    let chosen = index::sample(rng, ids.len(), distinct);
    let mut counts = vec![0usize; distinct];
    for &label in &labels {
        counts[label - 1] += 1;
    }

    // One queue of item indices per label, prepared in label order so the
    // draw sequence is a pure function of the stream.
    let mut fallbacks = 0u64;
    let mut queues: Vec<Vec<usize>> = Vec::with_capacity(distinct);
    for (slot, &need) in counts.iter().enumerate() {
        let class_id = ids[chosen.index(slot)];
        let pool = bank.items(class_id).expect("chosen id is present").len();
        let mut queue: Vec<usize> = if need <= pool {
            index::sample(rng, pool, need).into_iter().collect()
        } else {
            let mut q: Vec<usize> = index::sample(rng, pool, pool).into_iter().collect();
            for _ in pool..need {
                q.push(rng.random_range(0..pool));
                fallbacks += 1;
            }
            q
        };
        queue.reverse();
        queues.push(queue);
    }

    let mut obs = Vec::with_capacity(len);
    for &label in &labels {
        let item = queues[label - 1].pop().expect("queue sized to label count");
        let class_id = ids[chosen.index(label - 1)];
        obs.push(bank.items(class_id).expect("chosen id is present")[item].clone());
    }
    Ok(EmpiricalEpisode {
        episode: Episode { labels, obs },
        replacement_fallbacks: fallbacks,
    })
}
