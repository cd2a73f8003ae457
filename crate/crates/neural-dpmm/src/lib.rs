//! Sequential inference over an unbounded set of classes.
//!
//! An episode is a sequence of observations, each belonging to one of an
//! unbounded number of latent classes. Labels arrive with the data (the
//! sequential-observation setting) or not at all (the fully-unobserved
//! setting), and the task is to predict each label before seeing it. Two
//! inference routes are implemented against the same episode format:
//!
//! * an exact conjugate recursion and a Rao-Blackwellized particle filter
//!   over Dirichlet-process mixtures ([`pfilter`]), built on
//!   exponential-family components with closed-form posterior predictives
//!   ([`expfam`]) and the Chinese-restaurant prior over partitions
//!   ([`crp`]);
//! * a recurrent circuit metalearned on simulated episodes ([`circuit`],
//!   [`train`]), differentiated by a small reverse-mode tape
//!   ([`autodiff`]) whose every primitive is checked against finite
//!   differences.
//!
//! Episode generation from synthetic mixtures or an empirical item bank
//! lives in [`simgen`], evaluation (predictive negative log likelihood,
//! perplexity, adjusted Rand and mutual information) in [`metrics`], and
//! the experiment configuration plus the command-line entry points in
//! [`config`] and [`app`].
//!
//! # Examples
//!
//! Each major capability has a runnable example under `examples/`:
//!
//! * `crp_basics`: draw partitions from the Chinese-restaurant process
//!   and reproduce its label-only predictive baseline.
//! * `conjugate_families`: posterior predictives for the
//!   normal-inverse-gamma product, a beta-Bernoulli coin, and a hurdle
//!   composition for sparse nonnegative data.
//! * `synthetic_episodes`: generate labeled episodes and round-trip them
//!   through the JSONL format.
//! * `particle_filter`: run the filter on one episode, inspect resampling
//!   and the marginal-likelihood estimate, and compare with the exact
//!   recursion.
//! * `gradient_check`: finite-difference verification of tape primitives
//!   and of the full unrolled training loss.
//! * `train_circuit`: metalearn a small circuit on simulated episodes and
//!   evaluate it against the label-only baseline.
//! * `evaluate_methods`: score several methods on one episode batch and
//!   print the merged report table.
//! * `hurdle_bank`: build a sparse item bank, fit component
//!   hyperparameters to it, and measure the improvement.

pub mod app;
pub mod autodiff;
pub mod circuit;
pub mod config;
pub mod crp;
pub mod episode;
pub mod expfam;
pub mod metrics;
pub mod pfilter;
pub mod rng;
pub mod simgen;
pub mod train;
