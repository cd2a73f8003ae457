//! Scoring: predictive NLL and perplexity for the sequential-observation
//! setting, adjusted Rand index and adjusted mutual information for the
//! fully-unobserved setting, and wall-clock timing helpers.
//!
//! Both partition scores use the permutation-model adjustment, so
//! chance-level agreement scores near zero and bijective relabeling of
//! either argument changes nothing. All logarithms are natural.

pub mod adapters;

pub use adapters::{
    evaluate, CircuitMethod, CrpPrior, EvalError, ExactBayes, Method, PfMethod,
};

use crate::episode::SettingFlag;
use serde::Serialize;
use std::collections::BTreeMap;
use std::time::Instant;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("label sequences have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("need at least 2 points to score a partition, got {len}")]
    TooShort { len: usize },
    #[error("no log-probabilities to average")]
    Empty,
    #[error("log-probability at sequence {sequence}, step {step} is not finite")]
    NonFinite { sequence: usize, step: usize },
}

/// Mean negative log probability per timestep and its exponential.
pub fn nll_and_perplexity(per_step_log_probs: &[Vec<f64>]) -> Result<(f64, f64), MetricsError> {
    let mut total = 0.0;
    let mut steps = 0usize;
    for (sequence, row) in per_step_log_probs.iter().enumerate() {
        for (step, &lp) in row.iter().enumerate() {
            if !lp.is_finite() {
                return Err(MetricsError::NonFinite { sequence, step });
            }
            total += lp;
            steps += 1;
        }
    }
    if steps == 0 {
        return Err(MetricsError::Empty);
    }
    let nll = -total / steps as f64;
    Ok((nll, nll.exp()))
}

/// Contingency table between two equal-length label sequences, with row
/// and column marginals.
struct Contingency {
    cells: BTreeMap<(usize, usize), u64>,
    rows: BTreeMap<usize, u64>,
    cols: BTreeMap<usize, u64>,
    n: u64,
}

fn contingency(a: &[usize], b: &[usize]) -> Result<Contingency, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch {
            a: a.len(),
            b: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(MetricsError::TooShort { len: a.len() });
    }
    let mut cells = BTreeMap::new();
    let mut rows = BTreeMap::new();
    let mut cols = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *cells.entry((x, y)).or_insert(0u64) += 1;
        *rows.entry(x).or_insert(0u64) += 1;
        *cols.entry(y).or_insert(0u64) += 1;
    }
    Ok(Contingency {
        cells,
        rows,
        cols,
        n: a.len() as u64,
    })
}

/// Whether two sequences induce the same partition up to relabeling.
fn same_partition(a: &[usize], b: &[usize]) -> bool {
    crate::episode::canonicalize_labels(a) == crate::episode::canonicalize_labels(b)
}

fn choose2(k: u64) -> u64 {
    k * (k - 1) / 2
}

/// Adjusted Rand index (Hubert-Arabie). The ratio is formed from exact
/// integer pair counts, so simple fractions like -1/2 come out exact.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64, MetricsError> {
    let table = contingency(a, b)?;
    let index: u64 = table.cells.values().map(|&c| choose2(c)).sum();
    let sum_a: u64 = table.rows.values().map(|&c| choose2(c)).sum();
    let sum_b: u64 = table.cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(table.n);
    let num = 2 * (total as i128) * (index as i128) - 2 * (sum_a as i128) * (sum_b as i128);
    let den = (total as i128) * ((sum_a + sum_b) as i128) - 2 * (sum_a as i128) * (sum_b as i128);
    if den == 0 {
        return Ok(if same_partition(a, b) { 1.0 } else { 0.0 });
    }
    Ok(num as f64 / den as f64)
}

/// Adjusted mutual information with the hypergeometric expected-MI
/// correction and the arithmetic-mean entropy normalizer.
pub fn ami(a: &[usize], b: &[usize]) -> Result<f64, MetricsError> {
    let table = contingency(a, b)?;
    let n = table.n as f64;
    let entropy = |marginal: &BTreeMap<usize, u64>| -> f64 {
        marginal
            .values()
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let h_a = entropy(&table.rows);
    let h_b = entropy(&table.cols);

    let mut mi = 0.0;
    for (&(x, y), &c) in &table.cells {
        let nij = c as f64;
        let ai = table.rows[&x] as f64;
        let bj = table.cols[&y] as f64;
        mi += nij / n * (n * nij / (ai * bj)).ln();
    }

    // E[MI] under random permutations: cell counts follow a
    // hypergeometric law given the marginals (Vinh et al. 2010).
    let nn = table.n as usize;
    let mut lf = vec![0.0f64; nn + 1];
    for k in 1..=nn {
        lf[k] = lf[k - 1] + (k as f64).ln();
    }
    let mut emi = 0.0;
    for &ai in table.rows.values() {
        for &bj in table.cols.values() {
            let lo = 1.max((ai + bj).saturating_sub(table.n));
            let hi = ai.min(bj);
            for nij in lo..=hi {
                let term = nij as f64 / n * (n * nij as f64 / (ai as f64 * bj as f64)).ln();
                let ln_weight = lf[ai as usize] + lf[bj as usize]
                    + lf[(table.n - ai) as usize]
                    + lf[(table.n - bj) as usize]
                    - lf[nn]
                    - lf[nij as usize]
                    - lf[(ai - nij) as usize]
                    - lf[(bj - nij) as usize]
                    - lf[(table.n + nij - ai - bj) as usize];
                emi += term * ln_weight.exp();
            }
        }
    }

    let denom = 0.5 * (h_a + h_b) - emi;
    if denom.abs() < 1e-12 {
        return Ok(if same_partition(a, b) { 1.0 } else { 0.0 });
    }
    Ok((mi - emi) / denom)
}

/// Everything reported for one (method, setting) run. Fields outside
/// the chosen setting stay `None`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub method: String,
    pub setting: SettingFlag,
    pub episodes: usize,
    pub nll: Option<f64>,
    pub perplexity: Option<f64>,
    pub ari: Option<f64>,
    pub ami: Option<f64>,
    pub ms_per_sequence: f64,
    pub config_digest: Option<String>,
}

/// Wall-clock per call: `warmup` untimed calls, then `batches` timed
/// groups of `batch_size` calls each; the median of the per-call group
/// means is robust to scheduler noise. Indices passed to `run` count up
/// from 0 across warmup and timed calls.
pub fn median_of_means_ms(
    warmup: usize,
    batches: usize,
    batch_size: usize,
    mut run: impl FnMut(usize),
) -> f64 {
    let mut index = 0;
    for _ in 0..warmup {
        run(index);
        index += 1;
    }
    let mut means = Vec::with_capacity(batches);
    for _ in 0..batches.max(1) {
        let started = Instant::now();
        for _ in 0..batch_size.max(1) {
            run(index);
            index += 1;
        }
        means.push(started.elapsed().as_secs_f64() * 1e3 / batch_size.max(1) as f64);
    }
    means.sort_by(|x, y| x.partial_cmp(y).expect("timings are finite"));
    let mid = means.len() / 2;
    if means.len() % 2 == 1 {
        means[mid]
    } else {
        0.5 * (means[mid - 1] + means[mid])
    }
}

/// CSV rows in Table 1/2 column order. Reports for the same method are
/// merged into one row: sequential-observation runs fill the NLL and
/// perplexity columns, fully-unobserved runs fill ARI and AMI, and each
/// setting fills its own timing column.
pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    let mut order: Vec<&str> = Vec::new();
    let mut merged: BTreeMap<&str, [Option<f64>; 6]> = BTreeMap::new();
    let mut extra: BTreeMap<&str, (usize, Option<&str>)> = BTreeMap::new();
    for report in reports {
        let name = report.method.as_str();
        if !merged.contains_key(name) {
            order.push(name);
        }
        let row = merged.entry(name).or_insert([None; 6]);
        match report.setting {
            SettingFlag::SequentialObservation => {
                row[0] = report.nll;
                row[1] = report.perplexity;
                row[4] = Some(report.ms_per_sequence);
            }
            SettingFlag::FullyUnobserved => {
                row[2] = report.ari;
                row[3] = report.ami;
                row[5] = Some(report.ms_per_sequence);
            }
        }
        extra.insert(name, (report.episodes, report.config_digest.as_deref()));
    }
    let mut out = String::from("method,nll,perplexity,ari,ami,ms_seq_obs,ms_fully_unobs,episodes,config_digest\n");
    for name in order {
        let row = &merged[name];
        let (episodes, digest) = extra[name];
        out.push_str(&format!(
            "{name},{},{},{},{},{},{},{episodes},{}\n",
            fmt(row[0]),
            fmt(row[1]),
            fmt(row[2]),
            fmt(row[3]),
            fmt(row[4]),
            fmt(row[5]),
            digest.unwrap_or_default(),
        ));
    }
    out
}
