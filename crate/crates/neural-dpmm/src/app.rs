//! Subcommand implementations behind the binary. The binary itself only
//! parses arguments and forwards here, so everything below is callable
//! and testable as library code.

use crate::circuit::{
    circuit_map_batch, load_checkpoint, save_checkpoint, Checkpoint, CircuitConfig, MapFeedback,
};
use crate::config::{config_digest, ConfigError, DataKind, ExperimentConfig};
use crate::episode::{write_jsonl, Episode, SettingFlag};
use crate::expfam::{hurdle_compose, Hurdle, IidProduct, LogNormalNig, NigHyper};
use crate::metrics::{
    ari, evaluate, median_of_means_ms, reports_to_csv, CircuitMethod, CrpPrior, ExactBayes, Method,
    PfMethod,
};
use crate::pfilter::exact_sequential_nll;
use crate::pfilter::fit::{fit_hyperparameters, FitConfig};
use crate::rng::RngStream;
use crate::simgen::bank::{load_feature_bank, make_sparse_bank, write_bank_files, FeatureBank};
use crate::simgen::{sample_empirical_episode, sample_synthetic_episode, SyntheticConfig};
use crate::train::{
    train_circuit, BankSource, LogRow, SyntheticSource, TrainConfig, TrainObserver,
};
use serde::{Deserialize, Serialize};
use std::fmt::Display;
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const METHOD_NAMES: [&str; 4] = ["crp", "exact", "pf", "circuit"];

/// Stream indices under the run seed. Episode generation and method
/// evaluation draw from disjoint child streams so a stochastic method
/// never consumes the stream that produced its input data.
const GEN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;

#[derive(Debug)]
pub enum AppError {
    /// Wrong invocation; exit code 2.
    Usage(String),
    /// Bad or inconsistent configuration; exit code 2.
    Config(ConfigError),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) | AppError::Config(_) => 2,
            AppError::Runtime(_) => 1,
        }
    }
}

impl Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AppError::Usage(msg) => write!(f, "usage error: {msg}"),
            AppError::Config(err) => write!(f, "config error: {err}"),
            AppError::Runtime(msg) => write!(f, "{msg}"),
        }
    }
}

impl From<ConfigError> for AppError {
    fn from(err: ConfigError) -> Self {
        AppError::Config(err)
    }
}

fn rt(err: impl Display) -> AppError {
    AppError::Runtime(err.to_string())
}

/// Parses the `--setting` value accepted by eval.
pub fn parse_setting(text: &str) -> Result<SettingFlag, AppError> {
    match text {
        "sequential" | "sequential_observation" => Ok(SettingFlag::SequentialObservation),
        "unobserved" | "fully_unobserved" => Ok(SettingFlag::FullyUnobserved),
        other => Err(AppError::Usage(format!(
            "unknown setting {other:?}; expected sequential_observation or fully_unobserved"
        ))),
    }
}

fn invalid(err: impl Display) -> AppError {
    AppError::Config(ConfigError::Invalid(err.to_string()))
}

fn prior_nig_family(cfg: &ExperimentConfig) -> Result<IidProduct<NigHyper>, AppError> {
    IidProduct::new(cfg.data.nig, cfg.data.dim).map_err(invalid)
}

/// Untrained sparse-data prior: a symmetric zero gate over a log-normal
/// body that reuses the configured location-scale hyperparameters.
fn prior_hurdle_family(
    cfg: &ExperimentConfig,
) -> Result<IidProduct<Hurdle<LogNormalNig>>, AppError> {
    let gated = hurdle_compose(LogNormalNig::new(cfg.data.nig), 1.0, 1.0).map_err(invalid)?;
    IidProduct::new(gated, cfg.data.dim).map_err(invalid)
}

fn load_bank(cfg: &ExperimentConfig) -> Result<FeatureBank, AppError> {
    let base = cfg.data.bank.as_ref().ok_or_else(|| {
        AppError::Config(ConfigError::Invalid(
            "data.kind is \"bank\" but data.bank is not set".into(),
        ))
    })?;
    load_feature_bank(base, cfg.data.split, cfg.data.split_seed)
        .map_err(|e| AppError::Config(ConfigError::Invalid(format!("data.bank: {e}"))))
}

/// Generates `n` episodes of length `len` deterministically from the
/// run seed. Returns the with-replacement fallback count (bank data
/// only) so callers can surface it.
fn build_episodes(
    cfg: &ExperimentConfig,
    n: usize,
    len: usize,
    seed: u64,
) -> Result<(Vec<Episode>, u64), AppError> {
    let root = RngStream::from_seed(seed).split(GEN_STREAM);
    match cfg.data.kind {
        DataKind::Synthetic => {
            let syn = SyntheticConfig {
                dim: cfg.data.dim,
                nig: cfg.data.nig,
                alpha: cfg.crp.alpha,
                len,
            };
            let episodes = (0..n)
                .map(|i| sample_synthetic_episode(&syn, &mut root.split(i as u64)))
                .collect::<Result<Vec<_>, _>>()
                .map_err(rt)?;
            Ok((episodes, 0))
        }
        DataKind::Bank => {
            let bank = load_bank(cfg)?;
            let mut fallbacks = 0u64;
            let mut episodes = Vec::with_capacity(n);
            for i in 0..n {
                let drawn =
                    sample_empirical_episode(&bank, cfg.crp.alpha, len, &mut root.split(i as u64))
                        .map_err(rt)?;
                fallbacks += drawn.replacement_fallbacks;
                episodes.push(drawn.episode);
            }
            Ok((episodes, fallbacks))
        }
    }
}

fn warn_fallbacks(fallbacks: u64) {
    if fallbacks > 0 {
        eprintln!(
            "warning: {fallbacks} draws fell back to sampling with replacement because a bank class pool was exhausted"
        );
    }
}

/// Fitted prior hyperparameters as written by `fit-pf` and consumed by
/// `eval --hyper`.
#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FittedHyper {
    Synthetic {
        family: IidProduct<NigHyper>,
        config_digest: String,
    },
    Bank {
        family: IidProduct<Hurdle<LogNormalNig>>,
        config_digest: String,
    },
}

fn read_fitted_hyper(path: &Path) -> Result<FittedHyper, AppError> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        AppError::Usage(format!("cannot read --hyper file {}: {e}", path.display()))
    })?;
    serde_json::from_str(&text)
        .map_err(|e| AppError::Usage(format!("--hyper file {} is invalid: {e}", path.display())))
}

/// Builds the named method adapter. `checkpoint` is required for the
/// circuit; `hyper` swaps in fitted prior hyperparameters for the
/// Bayesian methods.
pub fn build_method(
    name: &str,
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
    hyper: Option<&Path>,
) -> Result<Box<dyn Method>, AppError> {
    if !METHOD_NAMES.contains(&name) {
        return Err(AppError::Usage(format!(
            "unknown method {name:?}; valid methods: {}",
            METHOD_NAMES.join(", ")
        )));
    }
    let alpha = cfg.crp.alpha;
    let fitted = hyper.map(read_fitted_hyper).transpose()?;
    if let Some(f) = &fitted {
        let matches = matches!(
            (f, cfg.data.kind),
            (FittedHyper::Synthetic { .. }, DataKind::Synthetic)
                | (FittedHyper::Bank { .. }, DataKind::Bank)
        );
        if !matches {
            return Err(AppError::Usage(
                "--hyper file was fitted for a different data.kind".into(),
            ));
        }
    }
    match name {
        "crp" => Ok(Box::new(CrpPrior { alpha })),
        "exact" => match (fitted, cfg.data.kind) {
            (Some(FittedHyper::Synthetic { family, .. }), _) => {
                Ok(Box::new(ExactBayes { family, alpha }))
            }
            (Some(FittedHyper::Bank { family, .. }), _) => {
                Ok(Box::new(ExactBayes { family, alpha }))
            }
            (None, DataKind::Synthetic) => Ok(Box::new(ExactBayes {
                family: prior_nig_family(cfg)?,
                alpha,
            })),
            (None, DataKind::Bank) => Ok(Box::new(ExactBayes {
                family: prior_hurdle_family(cfg)?,
                alpha,
            })),
        },
        "pf" => {
            let particles = cfg.pf.particles;
            let ess_threshold = cfg.pf.ess_threshold;
            match (fitted, cfg.data.kind) {
                (Some(FittedHyper::Synthetic { family, .. }), _) => Ok(Box::new(PfMethod {
                    family,
                    alpha,
                    particles,
                    ess_threshold,
                })),
                (Some(FittedHyper::Bank { family, .. }), _) => Ok(Box::new(PfMethod {
                    family,
                    alpha,
                    particles,
                    ess_threshold,
                })),
                (None, DataKind::Synthetic) => Ok(Box::new(PfMethod {
                    family: prior_nig_family(cfg)?,
                    alpha,
                    particles,
                    ess_threshold,
                })),
                (None, DataKind::Bank) => Ok(Box::new(PfMethod {
                    family: prior_hurdle_family(cfg)?,
                    alpha,
                    particles,
                    ess_threshold,
                })),
            }
        }
        "circuit" => {
            let ckpt = load_circuit_checkpoint(cfg, checkpoint)?;
            Ok(Box::new(CircuitMethod {
                params: ckpt.params,
                cfg: ckpt.circuit,
            }))
        }
        _ => unreachable!("name was checked against METHOD_NAMES"),
    }
}

fn load_circuit_checkpoint(
    cfg: &ExperimentConfig,
    checkpoint: Option<&Path>,
) -> Result<Checkpoint, AppError> {
    let path = checkpoint.ok_or_else(|| {
        AppError::Usage("method \"circuit\" requires --checkpoint <file>".into())
    })?;
    let ckpt = load_checkpoint(path).map_err(rt)?;
    if ckpt.circuit.input_dim != cfg.data.dim {
        return Err(AppError::Runtime(format!(
            "checkpoint was trained on dimension {}, config data.dim is {}",
            ckpt.circuit.input_dim, cfg.data.dim
        )));
    }
    Ok(ckpt)
}

fn ensure_dir(dir: &Path) -> Result<(), AppError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| AppError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn ensure_parent_dir(path: &Path) -> Result<(), AppError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => ensure_dir(dir),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), AppError> {
    std::fs::write(path, text)
        .map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    out: &Path,
    n: usize,
    seed: u64,
) -> Result<(), AppError> {
    if n == 0 {
        return Err(AppError::Usage("--n must be at least 1".into()));
    }
    let (episodes, fallbacks) = build_episodes(cfg, n, cfg.train.t, seed)?;
    warn_fallbacks(fallbacks);
    ensure_parent_dir(out)?;
    write_jsonl(out, &episodes).map_err(rt)?;
    let digest = config_digest(cfg, seed);
    write_text(&out.with_extension("digest"), &format!("{digest}\n"))?;
    println!(
        "wrote {n} episodes of length {} to {} (config digest {digest})",
        cfg.train.t,
        out.display()
    );
    Ok(())
}

/// Streams training progress to `log.csv` and saves checkpoints as they
/// arrive: `checkpoint.ckpt` for the final state, `checkpoint_<step>.ckpt`
/// for periodic snapshots.
struct RunDirObserver {
    dir: PathBuf,
    log: std::io::BufWriter<std::fs::File>,
    final_step: u64,
    echo_every: u64,
}

impl RunDirObserver {
    fn new(dir: &Path, final_step: u64) -> Result<Self, AppError> {
        let path = dir.join("log.csv");
        let file = std::fs::File::create(&path)
            .map_err(|e| AppError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        let mut log = std::io::BufWriter::new(file);
        writeln!(log, "step,loss,ms_per_step").map_err(rt)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
            final_step,
            echo_every: (final_step / 20).max(1),
        })
    }
}

impl TrainObserver for RunDirObserver {
    fn on_step(&mut self, row: &LogRow) {
        let _ = writeln!(self.log, "{},{:.6},{:.3}", row.step, row.loss, row.ms);
        if (row.step + 1) % self.echo_every == 0 || row.step + 1 == self.final_step {
            println!(
                "step {:>6}  loss {:.4}  {:.0} ms",
                row.step + 1,
                row.loss,
                row.ms
            );
        }
    }

    fn on_checkpoint(&mut self, ckpt: &Checkpoint) -> std::io::Result<()> {
        self.log.flush()?;
        let name = if ckpt.step == self.final_step {
            "checkpoint.ckpt".to_string()
        } else {
            format!("checkpoint_{}.ckpt", ckpt.step)
        };
        save_checkpoint(&self.dir.join(name), ckpt).map_err(std::io::Error::other)
    }
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<(), AppError> {
    ensure_dir(out_dir)?;
    let circuit_cfg = CircuitConfig {
        input_dim: cfg.data.dim,
        hidden: cfg.circuit.hidden,
        layers: cfg.circuit.layers,
        max_classes: cfg.circuit.max_classes,
    };
    let train_cfg = TrainConfig {
        steps: cfg.train.steps,
        batch: cfg.train.batch,
        episode_len: cfg.train.t,
        lr: cfg.train.lr,
        seed: cfg.train.seed,
        checkpoint_every: cfg.train.checkpoint_every,
    };
    let resumed = resume.map(load_checkpoint).transpose().map_err(rt)?;
    let digest = config_digest(cfg, cfg.train.seed);
    write_text(&out_dir.join("digest"), &format!("{digest}\n"))?;
    let mut observer = RunDirObserver::new(out_dir, cfg.train.steps as u64)?;

    let outcome = match cfg.data.kind {
        DataKind::Synthetic => {
            let source = SyntheticSource {
                dim: cfg.data.dim,
                nig: cfg.data.nig,
                alpha: cfg.crp.alpha,
            };
            train_circuit(
                &circuit_cfg,
                &train_cfg,
                &source,
                resumed.as_ref(),
                &mut observer,
            )
        }
        DataKind::Bank => {
            let bank = load_bank(cfg)?;
            let source = BankSource {
                bank: &bank,
                alpha: cfg.crp.alpha,
            };
            train_circuit(
                &circuit_cfg,
                &train_cfg,
                &source,
                resumed.as_ref(),
                &mut observer,
            )
        }
    }
    .map_err(rt)?;

    warn_fallbacks(outcome.replacement_fallbacks);
    if outcome.skipped_updates > 0 {
        eprintln!(
            "warning: {} updates skipped on non-finite gradients",
            outcome.skipped_updates
        );
    }
    let last_loss = outcome.log.last().map(|r| r.loss);
    println!(
        "trained to step {} ({} parameters); final loss {}; checkpoint {} (config digest {digest})",
        outcome.checkpoint.step,
        outcome.checkpoint.params.float_count(),
        last_loss.map_or("n/a".to_string(), |l| format!("{l:.4}")),
        out_dir.join("checkpoint.ckpt").display()
    );
    Ok(())
}

pub fn cmd_fit_pf(cfg: &ExperimentConfig, out: &Path, seed: u64) -> Result<(), AppError> {
    let (episodes, fallbacks) = build_episodes(cfg, cfg.fit.n_episodes, cfg.train.t, seed)?;
    warn_fallbacks(fallbacks);
    let fit_cfg = FitConfig {
        steps: cfg.fit.steps,
        batch: cfg.fit.batch.min(cfg.fit.n_episodes),
        lr: cfg.fit.lr,
        fd_step: cfg.fit.fd_step,
        seed: RngStream::from_seed(seed).split(EVAL_STREAM).seed(),
    };
    let digest = config_digest(cfg, seed);
    ensure_parent_dir(out)?;

    let alpha = cfg.crp.alpha;
    let (initial, best) = match cfg.data.kind {
        DataKind::Synthetic => {
            let template = prior_nig_family(cfg)?;
            let report = fit_hyperparameters(&template, &episodes, alpha, &fit_cfg).map_err(rt)?;
            let hyper = FittedHyper::Synthetic {
                family: report.family.clone(),
                config_digest: digest.clone(),
            };
            write_fit_outputs(out, &hyper, &report.family, &episodes, alpha)?;
            (report.initial_objective, report.objective)
        }
        DataKind::Bank => {
            let template = prior_hurdle_family(cfg)?;
            let report = fit_hyperparameters(&template, &episodes, alpha, &fit_cfg).map_err(rt)?;
            let hyper = FittedHyper::Bank {
                family: report.family.clone(),
                config_digest: digest.clone(),
            };
            write_fit_outputs(out, &hyper, &report.family, &episodes, alpha)?;
            (report.initial_objective, report.objective)
        }
    };
    println!(
        "fitted hyperparameters written to {} (objective {initial:.4} -> {best:.4}, config digest {digest})",
        out.display()
    );
    Ok(())
}

/// Writes the fitted-hyper JSON plus a per-episode CSV scoring the
/// fitted family: exact sequential NLL and the ARI of the greedy
/// filtering labels against truth.
fn write_fit_outputs<F>(
    out: &Path,
    hyper: &FittedHyper,
    family: &F,
    episodes: &[Episode],
    alpha: f64,
) -> Result<(), AppError>
where
    F: crate::expfam::Family + Clone + Sync,
{
    let json = serde_json::to_string_pretty(hyper).map_err(rt)?;
    write_text(out, &format!("{json}\n"))?;
    let adapter = ExactBayes {
        family: family.clone(),
        alpha,
    };
    let mut csv = String::from("episode,nll,ari\n");
    for (i, ep) in episodes.iter().enumerate() {
        let nll = exact_sequential_nll(family, ep, alpha).map_err(rt)?;
        let mut rng = RngStream::from_seed(i as u64);
        let labels = adapter.map_labels(&ep.obs, &mut rng).map_err(rt)?;
        let score = ari(&ep.labels, &labels).map_err(rt)?;
        csv.push_str(&format!("{i},{nll:.6},{score:.6}\n"));
    }
    write_text(&out.with_extension("episodes.csv"), &csv)
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    method_name: &str,
    checkpoint: Option<&Path>,
    hyper: Option<&Path>,
    out_dir: &Path,
    seed: u64,
    setting_override: Option<SettingFlag>,
) -> Result<(), AppError> {
    let setting = setting_override.unwrap_or(cfg.eval.setting);
    let method = build_method(method_name, cfg, checkpoint, hyper)?;
    let (episodes, fallbacks) = build_episodes(cfg, cfg.eval.n_episodes, cfg.train.t, seed)?;
    warn_fallbacks(fallbacks);
    let eval_seed = RngStream::from_seed(seed).split(EVAL_STREAM).seed();
    let mut report = evaluate(method.as_ref(), &episodes, setting, eval_seed).map_err(rt)?;
    report.config_digest = Some(config_digest(cfg, seed));
    ensure_dir(out_dir)?;
    let json = serde_json::to_string_pretty(&report).map_err(rt)?;
    write_text(&out_dir.join("report.json"), &format!("{json}\n"))?;
    write_text(
        &out_dir.join("report.csv"),
        &reports_to_csv(std::slice::from_ref(&report)),
    )?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
    println!(
        "method {}  setting {:?}  episodes {}  nll {}  perplexity {}  ari {}  ami {}  ms/seq {:.3}",
        report.method,
        report.setting,
        report.episodes,
        fmt(report.nll),
        fmt(report.perplexity),
        fmt(report.ari),
        fmt(report.ami),
        report.ms_per_sequence
    );
    println!(
        "report written to {}",
        out_dir.join("report.json").display()
    );
    Ok(())
}

/// Sequences scored per timed call in the fully-unobserved circuit path.
/// The circuit amortizes across sequences with batched matrix multiplies;
/// the filter is inherently per-sequence.
pub const BENCH_CIRCUIT_BATCH: usize = 64;

#[derive(Clone, Debug, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub ms_seq_obs: Option<f64>,
    pub ms_fully_unobs: Option<f64>,
    /// Sequences per batched call behind the unobserved column, when
    /// the method was timed in batches.
    pub unobs_batch: Option<usize>,
}

pub fn cmd_bench(
    cfg: &ExperimentConfig,
    methods: &[String],
    checkpoint: Option<&Path>,
    hyper: Option<&Path>,
    out_dir: &Path,
    seed: u64,
) -> Result<(), AppError> {
    if methods.is_empty() {
        return Err(AppError::Usage(format!(
            "no methods given; valid methods: {}",
            METHOD_NAMES.join(", ")
        )));
    }
    let n = cfg.eval.n_episodes.min(512);
    let (episodes, fallbacks) = build_episodes(cfg, n, cfg.train.t, seed)?;
    warn_fallbacks(fallbacks);
    let root = RngStream::from_seed(seed).split(EVAL_STREAM);
    let seq_batches = (n / 10).clamp(1, 10);

    let mut rows = Vec::new();
    for name in methods {
        let method = build_method(name, cfg, checkpoint, hyper)?;
        let seq = method.supports(SettingFlag::SequentialObservation).then(|| {
            median_of_means_ms(10, seq_batches, 10, |i| {
                let idx = i % episodes.len();
                let mut rng = root.split(idx as u64);
                let _ = method.sequential_log_probs(&episodes[idx], &mut rng);
            })
        });
        let (unobs, unobs_batch) = if !method.supports(SettingFlag::FullyUnobserved) {
            (None, None)
        } else if name == "circuit" {
            let ckpt = load_circuit_checkpoint(cfg, checkpoint)?;
            let group_len = BENCH_CIRCUIT_BATCH.min(episodes.len());
            let groups: Vec<Vec<&[Vec<f64>]>> = episodes
                .chunks(group_len)
                .filter(|chunk| chunk.len() == group_len)
                .map(|chunk| chunk.iter().map(|ep| ep.obs.as_slice()).collect())
                .collect();
            let ms_group = median_of_means_ms(1, groups.len().clamp(1, 5), 1, |i| {
                let group = &groups[i % groups.len()];
                let _ =
                    circuit_map_batch(&ckpt.params, &ckpt.circuit, group, MapFeedback::OwnArgmax);
            });
            (Some(ms_group / group_len as f64), Some(group_len))
        } else {
            let ms = median_of_means_ms(5, seq_batches.min(5), 5, |i| {
                let idx = i % episodes.len();
                let mut rng = root.split(idx as u64);
                let _ = method.map_labels(&episodes[idx].obs, &mut rng);
            });
            (Some(ms), None)
        };
        rows.push(BenchRow {
            method: name.clone(),
            ms_seq_obs: seq,
            ms_fully_unobs: unobs,
            unobs_batch,
        });
    }

    ensure_dir(out_dir)?;
    let json = serde_json::to_string_pretty(&rows).map_err(rt)?;
    write_text(&out_dir.join("bench.json"), &format!("{json}\n"))?;
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    let mut csv = String::from("method,ms_seq_obs,ms_fully_unobs,unobs_batch\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.method,
            fmt(row.ms_seq_obs),
            fmt(row.ms_fully_unobs),
            row.unobs_batch.map(|b| b.to_string()).unwrap_or_default()
        ));
    }
    write_text(&out_dir.join("bench.csv"), &csv)?;

    println!(
        "{:<10} {:>12} {:>16}",
        "method", "ms_seq_obs", "ms_fully_unobs"
    );
    for row in &rows {
        println!(
            "{:<10} {:>12} {:>16}{}",
            row.method,
            fmt(row.ms_seq_obs),
            fmt(row.ms_fully_unobs),
            row.unobs_batch
                .map(|b| format!("  (batched x{b})"))
                .unwrap_or_default()
        );
    }
    let unobs_of = |name: &str| {
        rows.iter()
            .find(|r| r.method == name)
            .and_then(|r| r.ms_fully_unobs)
    };
    if let (Some(pf), Some(circuit)) = (unobs_of("pf"), unobs_of("circuit")) {
        if circuit > 0.0 {
            println!(
                "circuit is {:.1}x faster than pf per fully-unobserved sequence",
                pf / circuit
            );
        }
    }
    Ok(())
}

pub fn cmd_make_sparse_bank(
    classes: u32,
    items: usize,
    dim: usize,
    gate_rate: f64,
    seed: u64,
    out: &Path,
) -> Result<(), AppError> {
    let mut rng = RngStream::from_seed(seed);
    let table = make_sparse_bank(classes, items, dim, gate_rate, &mut rng)
        .map_err(|e| AppError::Usage(e.to_string()))?;
    ensure_parent_dir(out)?;
    write_bank_files(out, dim, &table).map_err(rt)?;
    println!(
        "wrote bank {}: {classes} classes x {items} items, dimension {dim}, gate rate {gate_rate}",
        out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config;
    use crate::episode::read_jsonl;

    fn default_cfg(overrides: &[&str]) -> ExperimentConfig {
        let owned: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
        load_config(None, &owned).expect("defaults with overrides load")
    }

    #[test]
    fn unknown_method_names_are_rejected_with_the_valid_list() {
        let cfg = default_cfg(&[]);
        let Err(err) = build_method("gibbs", &cfg, None, None) else {
            panic!("an unknown method name must not build");
        };
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        for name in METHOD_NAMES {
            assert!(msg.contains(name), "{msg:?} should list {name}");
        }
    }

    #[test]
    fn circuit_method_requires_a_checkpoint_path() {
        let cfg = default_cfg(&[]);
        let Err(err) = build_method("circuit", &cfg, None, None) else {
            panic!("the circuit method must not build without a checkpoint");
        };
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("--checkpoint"));
    }

    #[test]
    fn setting_names_parse_and_bad_ones_error() {
        assert_eq!(
            parse_setting("sequential_observation").unwrap(),
            SettingFlag::SequentialObservation
        );
        assert_eq!(
            parse_setting("sequential").unwrap(),
            SettingFlag::SequentialObservation
        );
        assert_eq!(
            parse_setting("fully_unobserved").unwrap(),
            SettingFlag::FullyUnobserved
        );
        assert_eq!(
            parse_setting("unobserved").unwrap(),
            SettingFlag::FullyUnobserved
        );
        assert_eq!(parse_setting("both").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn simulate_writes_identical_files_for_the_same_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = default_cfg(&["train.t=12"]);
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        cmd_simulate(&cfg, &a, 20, 7).unwrap();
        cmd_simulate(&cfg, &b, 20, 7).unwrap();
        assert_eq!(
            std::fs::read(&a).unwrap(),
            std::fs::read(&b).unwrap(),
            "same seed must produce byte-identical episode files"
        );
        let episodes = read_jsonl(&a).unwrap();
        assert_eq!(episodes.len(), 20);
        assert!(episodes.iter().all(|ep| ep.len() == 12));
        let c = dir.path().join("c.jsonl");
        cmd_simulate(&cfg, &c, 20, 8).unwrap();
        assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
    }

    #[test]
    fn fitted_hyper_files_round_trip_and_kind_mismatches_are_caught() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = default_cfg(&["fit.steps=0", "fit.n_episodes=4", "train.t=6"]);
        let out = dir.path().join("hyper.json");
        cmd_fit_pf(&cfg, &out, 3).unwrap();
        let loaded = read_fitted_hyper(&out).unwrap();
        assert!(matches!(loaded, FittedHyper::Synthetic { .. }));
        let csv = std::fs::read_to_string(out.with_extension("episodes.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 4);

        let method = build_method("exact", &cfg, None, Some(out.as_path())).unwrap();
        assert_eq!(method.name(), "exact");

        let mut raw = cfg.clone();
        raw.data.kind = DataKind::Bank;
        let Err(bank_cfg_err) = build_method("exact", &raw, None, Some(out.as_path())) else {
            panic!("a hyper file for the other data kind must be rejected");
        };
        assert_eq!(bank_cfg_err.exit_code(), 2);
        assert!(bank_cfg_err.to_string().contains("data.kind"));
    }

    #[test]
    fn bank_round_trips_through_the_episode_generator() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("bank");
        cmd_make_sparse_bank(12, 40, 3, 0.5, 11, &base).unwrap();
        assert!(base.with_extension("json").is_file());
        assert!(base.with_extension("bin").is_file());
        let cfg = default_cfg(&[
            "data.kind=\"bank\"",
            &format!("data.bank={:?}", base.to_str().unwrap()),
            "data.dim=3",
            "train.t=10",
        ]);
        let (episodes, _) = build_episodes(&cfg, 5, cfg.train.t, 1).unwrap();
        assert_eq!(episodes.len(), 5);
        assert!(episodes.iter().all(|ep| ep.dim() == 3));
    }

    #[test]
    fn zero_dimension_bank_requests_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_make_sparse_bank(4, 10, 0, 0.5, 1, &dir.path().join("x")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
