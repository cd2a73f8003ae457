//! Chinese restaurant process prior over partitions.
//!
//! Class `k` with `n_k` previous members is predicted with probability
//! `n_k / (n + alpha)`; a previously unseen class gets `alpha / (n + alpha)`
//! and is assigned the next free 1-based id. Sequential products of these
//! predictives equal the Ewens sampling formula, which the tests check.

use rand::RngExt;

use crate::rng::RngStream;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CrpError {
    #[error("concentration must be finite and positive, got {0}")]
    InvalidConcentration(f64),
    #[error("label {label} out of range: state has {classes} classes, so 1..={} are valid", classes + 1)]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("label {label} at position {index} breaks canonical first-use order")]
    NonCanonical { index: usize, label: usize },
    #[error("label sequence is empty")]
    EmptyLabels,
}

/// Running class counts under a CRP with fixed concentration.
#[derive(Clone, Debug, PartialEq)]
pub struct CrpState {
    alpha: f64,
    counts: Vec<u64>,
    total: u64,
}

impl CrpState {
    /// # Errors
    ///
    /// Rejects non-finite or non-positive concentrations.
    pub fn new(alpha: f64) -> Result<Self, CrpError> {
        if !alpha.is_finite() || alpha <= 0.0 {
            return Err(CrpError::InvalidConcentration(alpha));
        }
        Ok(Self {
            alpha,
            counts: Vec::new(),
            total: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of classes observed so far.
    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    /// Members per class, indexed by class id minus 1.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Predictive probabilities over labels `1..=classes() + 1`.
    ///
    /// The last entry is the probability of a new class. Entries are positive
    /// and sum to 1.
    pub fn predictive(&self) -> Vec<f64> {
        let denom = self.total as f64 + self.alpha;
        let mut p: Vec<f64> = self.counts.iter().map(|&n| n as f64 / denom).collect();
        p.push(self.alpha / denom);
        p
    }

    /// Log prior probability of `label` as the next assignment.
    pub fn log_prior(&self, label: usize) -> Result<f64, CrpError> {
        self.check_label(label)?;
        let denom = self.total as f64 + self.alpha;
        let num = if label == self.counts.len() + 1 {
            self.alpha
        } else {
            self.counts[label - 1] as f64
        };
        Ok((num / denom).ln())
    }

    /// Records `label` as the next assignment.
    ///
    /// # Errors
    ///
    /// `label` must be an existing class or the next free id.
    pub fn observe(&mut self, label: usize) -> Result<(), CrpError> {
        self.check_label(label)?;
        if label == self.counts.len() + 1 {
            self.counts.push(0);
        }
        self.counts[label - 1] += 1;
        self.total += 1;
        Ok(())
    }

    /// Draws the next label from the predictive distribution.
    pub fn sample_next(&self, rng: &mut RngStream) -> usize {
        let denom = self.total as f64 + self.alpha;
        let mut u: f64 = rng.random::<f64>() * denom;
        for (k, &n) in self.counts.iter().enumerate() {
            u -= n as f64;
            if u < 0.0 {
                return k + 1;
            }
        }
        self.counts.len() + 1
    }

    fn check_label(&self, label: usize) -> Result<(), CrpError> {
        if label == 0 || label > self.counts.len() + 1 {
            return Err(CrpError::LabelOutOfRange {
                label,
                classes: self.counts.len(),
            });
        }
        Ok(())
    }
}

/// Samples a canonical label sequence of length `t`.
pub fn crp_sample(alpha: f64, t: usize, rng: &mut RngStream) -> Result<Vec<usize>, CrpError> {
    let mut state = CrpState::new(alpha)?;
    let mut labels = Vec::with_capacity(t);
    for _ in 0..t {
        let z = state.sample_next(rng);
        state.observe(z).expect("sampled label is always valid");
        labels.push(z);
    }
    Ok(labels)
}

/// Log probability of a canonical label sequence, accumulated sequentially.
///
/// Equals the Ewens form
/// `log[alpha^K prod_k (n_k - 1)! / prod_{i=0}^{T-1} (alpha + i)]`.
///
/// # Errors
///
/// Labels must be in canonical first-use order.
pub fn crp_log_prob(labels: &[usize], alpha: f64) -> Result<f64, CrpError> {
    let mut state = CrpState::new(alpha)?;
    let mut log_prob = 0.0;
    for (index, &label) in labels.iter().enumerate() {
        if label > state.classes() + 1 {
            return Err(CrpError::NonCanonical { index, label });
        }
        log_prob += state.log_prior(label).map_err(|_| CrpError::NonCanonical { index, label })?;
        state.observe(label).expect("checked above");
    }
    Ok(log_prob)
}

/// Label-only baseline score: `-log p(labels) / T`.
///
/// This is the sequential NLL of a predictor that sees labels but ignores
/// observations entirely.
pub fn crp_baseline_nll(labels: &[usize], alpha: f64) -> Result<f64, CrpError> {
    if labels.is_empty() {
        return Err(CrpError::EmptyLabels);
    }
    Ok(-crp_log_prob(labels, alpha)? / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn state_with_counts(alpha: f64, counts: &[u64]) -> CrpState {
        let mut s = CrpState::new(alpha).unwrap();
        for (k, &n) in counts.iter().enumerate() {
            for _ in 0..n {
                s.observe(k + 1).unwrap();
            }
        }
        s
    }

    #[test]
    fn predictive_matches_hand_counts() {
        let s = state_with_counts(1.0, &[2, 1]);
        let p = s.predictive();
        assert_eq!(p, vec![0.5, 0.25, 0.25]);
    }

    #[test]
    fn predictive_sums_to_one() {
        for (alpha, counts) in [(0.3, vec![5, 1, 9]), (2.5, vec![1]), (1.0, vec![])] {
            let s = state_with_counts(alpha, &counts);
            let sum: f64 = s.predictive().iter().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_prob_frozen_values() {
        // p([1,1]) = 1 * 1/2, p([1,2]) = 1 * alpha/(1+alpha)
        assert_relative_eq!(crp_log_prob(&[1, 1], 1.0).unwrap(), 0.5f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(crp_log_prob(&[1, 2], 1.0).unwrap(), 0.5f64.ln(), epsilon = 1e-15);
        // p([1,2,1]) = 1 * 1/2 * 1/3
        assert_relative_eq!(
            crp_log_prob(&[1, 2, 1], 1.0).unwrap(),
            (1.0f64 / 6.0).ln(),
            epsilon = 1e-15
        );
        // p([1,1,1,1]) = 1 * 1/2 * 2/3 * 3/4 = 1/4
        assert_relative_eq!(
            crp_log_prob(&[1, 1, 1, 1], 1.0).unwrap(),
            0.25f64.ln(),
            epsilon = 1e-15
        );
        // alpha = 2: p([1,2]) = 2/3
        assert_relative_eq!(
            crp_log_prob(&[1, 2], 2.0).unwrap(),
            (2.0f64 / 3.0).ln(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn baseline_nll_divides_by_length() {
        let nll = crp_baseline_nll(&[1, 1, 1, 1], 1.0).unwrap();
        assert_relative_eq!(nll, -(0.25f64.ln()) / 4.0, epsilon = 1e-15);
        assert_eq!(crp_baseline_nll(&[], 1.0), Err(CrpError::EmptyLabels));
    }

    #[test]
    fn sequential_log_prob_equals_ewens_form() {
        let mut rng = RngStream::from_seed(11);
        for alpha in [0.5, 1.0, 3.0] {
            for _ in 0..50 {
                let labels = crp_sample(alpha, 40, &mut rng).unwrap();
                let k = *labels.iter().max().unwrap();
                let mut counts = vec![0u64; k];
                for &l in &labels {
                    counts[l - 1] += 1;
                }
                let mut ewens = (k as f64) * alpha.ln();
                for &n in &counts {
                    for j in 1..n {
                        ewens += (j as f64).ln();
                    }
                }
                for i in 0..labels.len() {
                    ewens -= (alpha + i as f64).ln();
                }
                assert_relative_eq!(
                    crp_log_prob(&labels, alpha).unwrap(),
                    ewens,
                    epsilon = 1e-10
                );
            }
        }
    }

    #[test]
    fn rejects_non_canonical_and_bad_labels() {
        assert!(matches!(
            crp_log_prob(&[1, 3], 1.0),
            Err(CrpError::NonCanonical { index: 1, label: 3 })
        ));
        let mut s = CrpState::new(1.0).unwrap();
        assert!(matches!(s.observe(2), Err(CrpError::LabelOutOfRange { .. })));
        assert!(matches!(s.observe(0), Err(CrpError::LabelOutOfRange { .. })));
        assert_eq!(CrpState::new(0.0), Err(CrpError::InvalidConcentration(0.0)));
        assert!(matches!(
            CrpState::new(f64::NAN).unwrap_err(),
            CrpError::InvalidConcentration(a) if a.is_nan()
        ));
    }

    /// Mean class count over T draws is sum_{i=1..T} alpha / (alpha + i - 1);
    /// at alpha = 1, T = 100 that is the 100th harmonic number 5.18738.
    #[test]
    fn sampler_mean_class_count_matches_harmonic_sum() {
        let mut rng = RngStream::from_seed(1234);
        let n = 20_000;
        let mut total_classes = 0usize;
        for _ in 0..n {
            let labels = crp_sample(1.0, 100, &mut rng).unwrap();
            total_classes += labels.iter().max().copied().unwrap();
        }
        let mean = total_classes as f64 / n as f64;
        let expected: f64 = (1..=100).map(|i| 1.0 / i as f64).sum();
        assert_relative_eq!(expected, 5.187_377_517_639_621, epsilon = 1e-12);
        // Std of the class count is about 1.88, so the mean over 20k samples
        // has standard error 0.0133; 0.06 is about 4.5 sigma.
        assert!(
            (mean - expected).abs() < 0.06,
            "mean classes {mean} vs expected {expected}"
        );
    }

    /// Goodness of fit of sampled next labels against the predictive
    /// distribution: chi-square on 100k draws must not reject at p = 0.001.
    #[test]
    fn sampled_next_labels_match_predictive_frequencies() {
        let s = state_with_counts(1.0, &[3, 2, 1]);
        let p = s.predictive();
        assert_eq!(p.len(), 4);
        let mut rng = RngStream::from_seed(777);
        let draws = 100_000usize;
        let mut freq = [0u64; 4];
        for _ in 0..draws {
            freq[s.sample_next(&mut rng) - 1] += 1;
        }
        let stat: f64 = freq
            .iter()
            .zip(&p)
            .map(|(&obs, &prob)| {
                let expect = prob * draws as f64;
                (obs as f64 - expect).powi(2) / expect
            })
            .sum();
        let p_value = 1.0 - ChiSquared::new(3.0).unwrap().cdf(stat);
        assert!(p_value > 0.001, "chi-square stat {stat}, p {p_value}");
    }
}
