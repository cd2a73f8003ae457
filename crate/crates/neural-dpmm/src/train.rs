//! Episodic training loop: every step draws a fresh minibatch from the
//! generator, backpropagates the mean teacher-forced NLL, and applies
//! one Adam update.
//!
//! Reproducibility contract: the episode for (root seed, step, slot) is
//! fixed, minibatches are evaluated in fixed-size shards whose gradients
//! are summed in shard order, and the optimizer runs on a single thread.
//! Parameter trajectories are therefore bit-identical for any worker
//! thread count, and a resumed run rejoins the uninterrupted one
//! exactly.

use crate::autodiff::opt::{AdamOutcome, AdamState};
use crate::autodiff::Tape;
use crate::circuit::{
    loss_graph, param_shapes, Checkpoint, CheckpointError, CircuitConfig, CircuitError,
    CircuitParams, RunSettings,
};
use crate::episode::Episode;
use crate::expfam::NigHyper;
use crate::rng::RngStream;
use crate::simgen::bank::FeatureBank;
use crate::simgen::{sample_empirical_episode, sample_synthetic_episode, SimGenError, SyntheticConfig};
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Slots evaluated per tape. Fixed so the gradient summation order does
/// not depend on thread count.
const SHARD: usize = 16;

/// Stream index reserved for parameter initialization; step streams use
/// the step number itself.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    /// Episode length T drawn from the generator each step.
    pub episode_len: usize,
    pub lr: f64,
    pub seed: u64,
    /// Emit a checkpoint every this many steps, besides the final one.
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn run_settings(&self) -> RunSettings {
        RunSettings {
            seed: self.seed,
            lr: self.lr,
            batch: self.batch,
            episode_len: self.episode_len,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("episode generation failed at step {step}, slot {slot}: {source}")]
    Gen {
        step: u64,
        slot: usize,
        #[source]
        source: SimGenError,
    },
    #[error("loss failed to evaluate finitely at step {step}; first offending episode is slot {slot} (root seed {seed})")]
    NonFiniteLoss { step: u64, slot: usize, seed: u64 },
    #[error("checkpoint was trained with {field}={checkpoint}, this run requests {requested}")]
    ConfigMismatch {
        field: &'static str,
        checkpoint: String,
        requested: String,
    },
    #[error("checkpoint carries no optimizer moments; bit-exact resume is impossible")]
    ResumeNeedsMoments,
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("observer failed: {0}")]
    Observer(#[from] std::io::Error),
}

/// One training step's log record.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub ms: f64,
}

/// Receives per-step rows and periodic checkpoints as training runs.
pub trait TrainObserver {
    fn on_step(&mut self, row: &LogRow) {
        let _ = row;
    }
    fn on_checkpoint(&mut self, ckpt: &Checkpoint) -> std::io::Result<()> {
        let _ = ckpt;
        Ok(())
    }
}

/// Observer that discards everything.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Final state, including optimizer moments for resumption.
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Updates dropped because a gradient came back non-finite.
    pub skipped_updates: u64,
    /// Total with-replacement draws forced by exhausted bank pools.
    pub replacement_fallbacks: u64,
}

/// Source of training episodes. `sample` returns the episode plus the
/// number of with-replacement fallbacks it needed (0 for synthetic
/// data).
pub trait EpisodeSource: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, len: usize, rng: &mut RngStream) -> Result<(Episode, u64), SimGenError>;
}

/// Draws from the infinite synthetic mixture.
#[derive(Clone, Debug)]
pub struct SyntheticSource {
    pub dim: usize,
    pub nig: NigHyper,
    pub alpha: f64,
}

impl EpisodeSource for SyntheticSource {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, len: usize, rng: &mut RngStream) -> Result<(Episode, u64), SimGenError> {
        let cfg = SyntheticConfig {
            dim: self.dim,
            nig: self.nig.clone(),
            alpha: self.alpha,
            len,
        };
        Ok((sample_synthetic_episode(&cfg, rng)?, 0))
    }
}

/// Draws label sequences from the label process and fills them with
/// feature-bank items.
pub struct BankSource<'a> {
    pub bank: &'a FeatureBank,
    pub alpha: f64,
}

impl EpisodeSource for BankSource<'_> {
    fn dim(&self) -> usize {
        self.bank.dim()
    }

    fn sample(&self, len: usize, rng: &mut RngStream) -> Result<(Episode, u64), SimGenError> {
        let drawn = sample_empirical_episode(self.bank, self.alpha, len, rng)?;
        Ok((drawn.episode, drawn.replacement_fallbacks))
    }
}

/// Rejects a resume whose settings would silently fork the episode or
/// update stream.
pub fn check_resume(
    ckpt: &Checkpoint,
    circuit_cfg: &CircuitConfig,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    let mismatch = |field: &'static str, have: String, want: String| {
        Err(TrainError::ConfigMismatch {
            field,
            checkpoint: have,
            requested: want,
        })
    };
    if ckpt.circuit != *circuit_cfg {
        return mismatch(
            "circuit",
            format!("{:?}", ckpt.circuit),
            format!("{circuit_cfg:?}"),
        );
    }
    let run = cfg.run_settings();
    if ckpt.run.seed != run.seed {
        return mismatch("seed", ckpt.run.seed.to_string(), run.seed.to_string());
    }
    if ckpt.run.lr != run.lr {
        return mismatch("lr", ckpt.run.lr.to_string(), run.lr.to_string());
    }
    if ckpt.run.batch != run.batch {
        return mismatch("batch", ckpt.run.batch.to_string(), run.batch.to_string());
    }
    if ckpt.run.episode_len != run.episode_len {
        return mismatch(
            "episode_len",
            ckpt.run.episode_len.to_string(),
            run.episode_len.to_string(),
        );
    }
    Ok(())
}

struct ShardOut {
    weight: f64,
    loss: f64,
    grads: Vec<Array2<f32>>,
    fallbacks: u64,
}

fn shard_loss_and_grads(
    mats: &[Array2<f32>],
    circuit_cfg: &CircuitConfig,
    batch: &[&Episode],
) -> Result<(f64, Vec<Array2<f32>>), CircuitError> {
    let mut tape: Tape<f32> = Tape::new();
    let leaves: Vec<_> = mats.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = loss_graph(&mut tape, circuit_cfg, &leaves, batch)?;
    let loss_val = tape.value(loss)[(0, 0)] as f64;
    tape.backward(loss)?;
    let grads = leaves
        .iter()
        .map(|&l| tape.grad(l).expect("leaves hold gradients").clone())
        .collect();
    Ok((loss_val, grads))
}

fn single_loss(
    mats: &[Array2<f32>],
    circuit_cfg: &CircuitConfig,
    episode: &Episode,
) -> Result<f64, CircuitError> {
    let mut tape: Tape<f32> = Tape::new();
    let leaves: Vec<_> = mats.iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = loss_graph(&mut tape, circuit_cfg, &leaves, &[episode])?;
    Ok(tape.value(loss)[(0, 0)] as f64)
}

pub fn train_circuit<G: EpisodeSource>(
    circuit_cfg: &CircuitConfig,
    cfg: &TrainConfig,
    gen: &G,
    resume: Option<&Checkpoint>,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome, TrainError> {
    circuit_cfg.validate()?;
    if cfg.batch == 0 {
        return Err(TrainError::BadConfig("batch must be at least 1".into()));
    }
    if !(cfg.lr > 0.0) {
        return Err(TrainError::BadConfig(format!(
            "lr must be positive, got {}",
            cfg.lr
        )));
    }
    if cfg.episode_len == 0 {
        return Err(TrainError::BadConfig("episode_len must be at least 1".into()));
    }
    if cfg.episode_len > circuit_cfg.max_classes {
        return Err(TrainError::BadConfig(format!(
            "episode_len {} exceeds max_classes {}",
            cfg.episode_len, circuit_cfg.max_classes
        )));
    }
    if gen.dim() != circuit_cfg.input_dim {
        return Err(TrainError::BadConfig(format!(
            "generator emits dimension {}, circuit expects {}",
            gen.dim(),
            circuit_cfg.input_dim
        )));
    }

    let root = RngStream::from_seed(cfg.seed);
    let shapes = param_shapes(circuit_cfg);
    let mut adam = AdamState::new(&shapes, cfg.lr as f32);
    let (mut mats, start) = match resume {
        None => {
            let mut init_rng = root.split(INIT_STREAM);
            let params = CircuitParams::init(circuit_cfg, &mut init_rng)?;
            (params.flatten(), 0u64)
        }
        Some(ckpt) => {
            check_resume(ckpt, circuit_cfg, cfg)?;
            let (m, v) = match (&ckpt.adam_m, &ckpt.adam_v) {
                (Some(m), Some(v)) => (m.clone(), v.clone()),
                _ => return Err(TrainError::ResumeNeedsMoments),
            };
            adam.restore(m, v, ckpt.adam_step);
            (ckpt.params.flatten(), ckpt.step)
        }
    };

    let mut log = Vec::new();
    let mut skipped_updates = 0u64;
    let mut replacement_fallbacks = 0u64;

    for step in start..cfg.steps as u64 {
        let started = Instant::now();
        let ranges: Vec<(usize, usize)> = (0..cfg.batch)
            .step_by(SHARD)
            .map(|lo| (lo, (lo + SHARD).min(cfg.batch)))
            .collect();
        let mats_ref = &mats;
        let outs: Vec<Result<ShardOut, TrainError>> = ranges
            .par_iter()
            .map(|&(lo, hi)| {
                let mut episodes = Vec::with_capacity(hi - lo);
                let mut fallbacks = 0u64;
                for slot in lo..hi {
                    let mut rng = root.split(step).split(slot as u64);
                    let (ep, falls) =
                        gen.sample(cfg.episode_len, &mut rng)
                            .map_err(|source| TrainError::Gen {
                                step,
                                slot,
                                source,
                            })?;
                    fallbacks += falls;
                    episodes.push(ep);
                }
                let refs: Vec<&Episode> = episodes.iter().collect();
                match shard_loss_and_grads(mats_ref, circuit_cfg, &refs) {
                    Ok((loss, grads)) if loss.is_finite() => Ok(ShardOut {
                        weight: (hi - lo) as f64 / cfg.batch as f64,
                        loss,
                        grads,
                        fallbacks,
                    }),
                    bad => {
                        for (offset, ep) in episodes.iter().enumerate() {
                            match single_loss(mats_ref, circuit_cfg, ep) {
                                Ok(v) if v.is_finite() => {}
                                _ => {
                                    return Err(TrainError::NonFiniteLoss {
                                        step,
                                        slot: lo + offset,
                                        seed: cfg.seed,
                                    })
                                }
                            }
                        }
                        match bad {
                            Err(e) => Err(TrainError::Circuit(e)),
                            Ok(_) => Err(TrainError::NonFiniteLoss {
                                step,
                                slot: lo,
                                seed: cfg.seed,
                            }),
                        }
                    }
                }
            })
            .collect();

        let mut total_loss = 0.0f64;
        let mut acc: Vec<Array2<f32>> = shapes.iter().map(|&s| Array2::zeros(s)).collect();
        for out in outs {
            let out = out?;
            total_loss += out.weight * out.loss;
            let w = out.weight as f32;
            for (a, g) in acc.iter_mut().zip(&out.grads) {
                a.zip_mut_with(g, |a, &g| *a += w * g);
            }
            replacement_fallbacks += out.fallbacks;
        }

        if adam.update(&mut mats, &acc) == AdamOutcome::SkippedNonFinite {
            skipped_updates += 1;
        }

        let row = LogRow {
            step,
            loss: total_loss,
            ms: started.elapsed().as_secs_f64() * 1e3,
        };
        observer.on_step(&row);
        log.push(row);

        let completed = step + 1;
        if let Some(every) = cfg.checkpoint_every {
            if every > 0 && completed % every as u64 == 0 && completed < cfg.steps as u64 {
                let ckpt = snapshot(circuit_cfg, cfg, completed, &mats, &adam)?;
                observer.on_checkpoint(&ckpt)?;
            }
        }
    }

    let ckpt = snapshot(circuit_cfg, cfg, cfg.steps as u64, &mats, &adam)?;
    observer.on_checkpoint(&ckpt)?;
    Ok(TrainOutcome {
        checkpoint: ckpt,
        log,
        skipped_updates,
        replacement_fallbacks,
    })
}

fn snapshot(
    circuit_cfg: &CircuitConfig,
    cfg: &TrainConfig,
    step: u64,
    mats: &[Array2<f32>],
    adam: &AdamState<f32>,
) -> Result<Checkpoint, TrainError> {
    let params = CircuitParams::from_flat(circuit_cfg, mats.to_vec())?;
    let (m, v) = adam.moments();
    Ok(Checkpoint {
        circuit: *circuit_cfg,
        run: cfg.run_settings(),
        step,
        adam_step: adam.step_count(),
        params,
        adam_m: Some(m.to_vec()),
        adam_v: Some(v.to_vec()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::bank::{make_sparse_bank, Split};

    fn tiny_circuit() -> CircuitConfig {
        CircuitConfig {
            input_dim: 2,
            hidden: 16,
            layers: 2,
            max_classes: 8,
        }
    }

    fn tiny_train(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch: 8,
            episode_len: 8,
            lr: 0.01,
            seed: 99,
            checkpoint_every: None,
        }
    }

    fn source() -> SyntheticSource {
        SyntheticSource {
            dim: 2,
            nig: NigHyper {
                m: 0.0,
                lambda: 0.01,
                a: 2.0,
                b: 2.0,
            },
            alpha: 1.0,
        }
    }

    struct Collect {
        rows: Vec<LogRow>,
        checkpoints: Vec<Checkpoint>,
    }

    impl Collect {
        fn new() -> Self {
            Collect {
                rows: Vec::new(),
                checkpoints: Vec::new(),
            }
        }
    }

    impl TrainObserver for Collect {
        fn on_step(&mut self, row: &LogRow) {
            self.rows.push(row.clone());
        }
        fn on_checkpoint(&mut self, ckpt: &Checkpoint) -> std::io::Result<()> {
            self.checkpoints.push(ckpt.clone());
            Ok(())
        }
    }

    #[test]
    fn zero_steps_returns_the_initialization() {
        let circuit = tiny_circuit();
        let cfg = tiny_train(0);
        let out = train_circuit(&circuit, &cfg, &source(), None, &mut Silent).unwrap();
        assert!(out.log.is_empty());
        let mut init_rng = RngStream::from_seed(cfg.seed).split(INIT_STREAM);
        let expected = CircuitParams::init(&circuit, &mut init_rng).unwrap();
        assert_eq!(out.checkpoint.params, expected);
        assert_eq!(out.checkpoint.step, 0);
    }

    #[test]
    fn loss_trend_decreases_on_a_learnable_task() {
        let circuit = tiny_circuit();
        let mut cfg = tiny_train(120);
        cfg.batch = 16;
        let out = train_circuit(&circuit, &cfg, &source(), None, &mut Silent).unwrap();
        assert_eq!(out.log.len(), 120);
        let head: f64 = out.log[..30].iter().map(|r| r.loss).sum::<f64>() / 30.0;
        let tail: f64 = out.log[90..].iter().map(|r| r.loss).sum::<f64>() / 30.0;
        assert!(
            tail < head,
            "smoothed loss should fall: first 30 mean {head}, last 30 mean {tail}"
        );
    }

    #[test]
    fn checkpoint_cadence_includes_periodic_and_final() {
        let circuit = tiny_circuit();
        let mut cfg = tiny_train(10);
        cfg.checkpoint_every = Some(4);
        let mut obs = Collect::new();
        train_circuit(&circuit, &cfg, &source(), None, &mut obs).unwrap();
        let steps: Vec<u64> = obs.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![4, 8, 10]);
    }

    #[test]
    fn resumed_run_rejoins_the_uninterrupted_trajectory_exactly() {
        let circuit = tiny_circuit();
        let cfg = tiny_train(10);
        let straight = train_circuit(&circuit, &cfg, &source(), None, &mut Silent).unwrap();

        let mut half_cfg = cfg.clone();
        half_cfg.steps = 5;
        let half = train_circuit(&circuit, &half_cfg, &source(), None, &mut Silent).unwrap();
        let resumed = train_circuit(
            &circuit,
            &cfg,
            &source(),
            Some(&half.checkpoint),
            &mut Silent,
        )
        .unwrap();

        assert_eq!(resumed.checkpoint.params, straight.checkpoint.params);
        assert_eq!(resumed.checkpoint.adam_m, straight.checkpoint.adam_m);
        assert_eq!(resumed.checkpoint.adam_v, straight.checkpoint.adam_v);
        assert_eq!(resumed.log.len(), 5);
        assert_eq!(resumed.log[0].step, 5);
        for (a, b) in resumed.log.iter().zip(&straight.log[5..]) {
            assert_eq!(a.loss, b.loss);
        }
    }

    #[test]
    fn trajectory_is_identical_for_any_thread_count() {
        let circuit = tiny_circuit();
        let mut cfg = tiny_train(4);
        cfg.batch = 40;
        let gen = source();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| train_circuit(&circuit, &cfg, &gen, None, &mut Silent).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.checkpoint.params, four.checkpoint.params);
        let losses = |out: &TrainOutcome| -> Vec<(u64, f64)> {
            out.log.iter().map(|r| (r.step, r.loss)).collect()
        };
        assert_eq!(losses(&one), losses(&four));
    }

    #[test]
    fn resume_rejects_changed_settings() {
        let circuit = tiny_circuit();
        let cfg = tiny_train(4);
        let out = train_circuit(&circuit, &cfg, &source(), None, &mut Silent).unwrap();
        let mut altered = cfg.clone();
        altered.lr = 0.02;
        let err = train_circuit(
            &circuit,
            &altered,
            &source(),
            Some(&out.checkpoint),
            &mut Silent,
        )
        .unwrap_err();
        match err {
            TrainError::ConfigMismatch { field, .. } => assert_eq!(field, "lr"),
            other => panic!("unexpected error {other:?}"),
        }
        let mut stripped = out.checkpoint.clone();
        stripped.adam_m = None;
        stripped.adam_v = None;
        assert!(matches!(
            train_circuit(&circuit, &cfg, &source(), Some(&stripped), &mut Silent),
            Err(TrainError::ResumeNeedsMoments)
        ));
    }

    struct Poisoned;

    impl EpisodeSource for Poisoned {
        fn dim(&self) -> usize {
            2
        }
        fn sample(&self, len: usize, rng: &mut RngStream) -> Result<(Episode, u64), SimGenError> {
            let (mut ep, _) = source().sample(len, rng)?;
            if rng.seed() % 8 == 3 {
                ep.obs[0][0] = f64::NAN;
            }
            Ok((ep, 0))
        }
    }

    #[test]
    fn non_finite_loss_names_the_offending_slot() {
        // The poisoned source corrupts slots whose stream seed lands in
        // a fixed residue class, so some step hits a NaN quickly.
        let circuit = tiny_circuit();
        let cfg = tiny_train(50);
        let err = train_circuit(&circuit, &cfg, &Poisoned, None, &mut Silent).unwrap_err();
        match err {
            TrainError::NonFiniteLoss { seed, .. } => assert_eq!(seed, cfg.seed),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn bank_sources_report_replacement_fallbacks() {
        let mut rng = RngStream::from_seed(5);
        let classes = make_sparse_bank(2, 3, 2, 0.4, &mut rng).unwrap();
        let bank = FeatureBank::new(2, Split::MetaTrain, classes.into_iter().collect()).unwrap();
        let circuit = CircuitConfig {
            input_dim: 2,
            hidden: 8,
            layers: 1,
            max_classes: 12,
        };
        let mut cfg = tiny_train(2);
        cfg.episode_len = 12;
        cfg.batch = 4;
        let gen = BankSource {
            bank: &bank,
            alpha: 1e-9,
        };
        let out = train_circuit(&circuit, &cfg, &gen, None, &mut Silent).unwrap();
        assert!(out.replacement_fallbacks > 0);
    }

    #[test]
    fn config_validation_catches_bad_values() {
        let circuit = tiny_circuit();
        let mut cfg = tiny_train(1);
        cfg.batch = 0;
        assert!(matches!(
            train_circuit(&circuit, &cfg, &source(), None, &mut Silent),
            Err(TrainError::BadConfig(_))
        ));
        let mut cfg = tiny_train(1);
        cfg.episode_len = 9;
        assert!(matches!(
            train_circuit(&circuit, &cfg, &source(), None, &mut Silent),
            Err(TrainError::BadConfig(_))
        ));
        let bad_dim = SyntheticSource {
            dim: 3,
            ..source()
        };
        assert!(matches!(
            train_circuit(&circuit, &tiny_train(1), &bad_dim, None, &mut Silent),
            Err(TrainError::BadConfig(_))
        ));
    }
}
