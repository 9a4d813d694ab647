//! Error of the sampling softmax as a function of its sample count N.
//!
//! A reference estimate at N = 100 000 stands in for the exact expectation.
//! For each N in a sweep, independent estimates are compared against it by
//! L2 distance and by whether their argmax disagrees with the reference's.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::disentangle::{sampling_softmax, SamplingSoftmaxConfig};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::stats::{argmax, l2_distance, mean, std_dev};

pub const REFERENCE_SAMPLES: usize = 100_000;
pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_N_GRID: [usize; 12] = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000, 2000, 5000];
pub const SWEEP_CSV_HEADER: &str = "num_samples;mean_error;std_error;mean_miss";

/// Independent Gaussian logits with the given means and standard deviations.
#[derive(Clone, Debug, PartialEq)]
pub struct LogitDistSpec {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl LogitDistSpec {
    pub fn new(means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if means.len() != stds.len() || means.is_empty() {
            return Err(Error::Dimension(format!(
                "{} means vs {} stds",
                means.len(),
                stds.len()
            )));
        }
        if stds.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Domain("negative logit std".into()));
        }
        Ok(Self { means, stds })
    }

    pub fn variances(&self) -> Vec<f64> {
        self.stds.iter().map(|s| s * s).collect()
    }

    /// `means10.-0.-stds10.-10.` style tag used in output file names.
    pub fn tag(&self) -> String {
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}").trim_end_matches('0').to_string())
                .collect::<Vec<_>>()
                .join("-")
        };
        format!("means{}-stds{}", fmt(&self.means), fmt(&self.stds))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub num_samples: usize,
    pub mean_error: f64,
    pub std_error: f64,
    pub mean_miss: f64,
}

pub fn estimate(spec: &LogitDistSpec, n: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
    sampling_softmax(&spec.means, &spec.variances(), SamplingSoftmaxConfig::new(n)?, rng)
}

/// Sampling softmax at N = 100 000.
pub fn reference_probs(spec: &LogitDistSpec, rng: &mut RngStream) -> Result<Vec<f64>> {
    estimate(spec, REFERENCE_SAMPLES, rng)
}

/// One row per distinct N, ascending. The reference draws from
/// `rng.derive(0)`; trial `t` at grid position `k` from
/// `rng.derive(1).derive(N_k).derive(t)`.
pub fn sweep(spec: &LogitDistSpec, n_values: &[usize], trials: usize, rng: &RngStream) -> Result<Vec<SweepRow>> {
    if trials == 0 {
        return Err(Error::Parameter("sweep needs at least one trial".into()));
    }
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::Parameter("sample counts must be positive".into()));
    }
    let mut ns = n_values.to_vec();
    ns.sort_unstable();
    ns.dedup();

    let reference = reference_probs(spec, &mut rng.derive(0))?;
    let ref_class = argmax(&reference);
    let trial_root = rng.derive(1);

    ns.iter()
        .map(|&n| {
            let per_n = trial_root.derive(n as u64);
            let outcomes = (0..trials)
                .into_par_iter()
                .map(|t| {
                    let p = estimate(spec, n, &mut per_n.derive(t as u64))?;
                    Ok((l2_distance(&p, &reference), argmax(&p) != ref_class))
                })
                .collect::<Result<Vec<_>>>()?;
            let errors: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
            let misses = outcomes.iter().filter(|o| o.1).count();
            Ok(SweepRow {
                num_samples: n,
                mean_error: mean(&errors),
                std_error: std_dev(&errors),
                mean_miss: misses as f64 / trials as f64,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Contract("no sweep rows to write".into()));
    }
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{};{:.12e};{:.12e};{:.12e}",
            r.num_samples, r.mean_error, r.std_error, r.mean_miss
        )?;
    }
    Ok(())
}

pub fn emit_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_sweep_csv(rows, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn read_sweep_csv<R: BufRead>(input: R) -> Result<Vec<SweepRow>> {
    let mut lines = input.lines();
    if lines.next().transpose()?.as_deref() != Some(SWEEP_CSV_HEADER) {
        return Err(Error::Format("missing sweep header".into()));
    }
    let bad = |l: &str| Error::Format(format!("bad sweep row '{l}'"));
    let mut rows = Vec::new();
    for line in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(';').collect();
        if f.len() != 4 {
            return Err(bad(&line));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(&line));
        rows.push(SweepRow {
            num_samples: f[0].parse().map_err(|_| bad(&line))?,
            mean_error: num(f[1])?,
            std_error: num(f[2])?,
            mean_miss: num(f[3])?,
        });
    }
    Ok(rows)
}
