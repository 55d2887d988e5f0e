//! Monte-Carlo harness: rejection-rate estimation across statistics, sample
//! sizes, and completion lengths, plus pairwise distance matrices between
//! pools.
//!
//! Trials run on indexed child streams and are reduced in trial order, so a
//! sweep is a pure function of its seed. Sweeps over sample size or length
//! reuse the same per-trial seeds (common random numbers), which makes
//! monotonicity comparisons low-variance.

use serde::Serialize;

use crate::corpus::{draw_sample, Pool, PromptDistribution};
use crate::error::{Error, Result};
use crate::exec;
use crate::kernels::Kernel;
use crate::mmd::{bootstrap_mmd, BootstrapDistance};
use crate::rng::RandomStream;
use crate::testing::{
    evaluate_two_sample, permutation_test, simulate_null, PValueConvention, StatisticSpec,
};

pub mod synth;

/// Whether simulated-null trials share one cached null or simulate a fresh
/// null per trial. Sharing mirrors how large power studies amortize the
/// simulation cost; fresh nulls remove the across-trial dependence at a much
/// higher price.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NullReuse {
    Shared,
    Fresh,
}

#[derive(Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMethod {
    Simulated { b: usize, reuse: NullReuse },
    Permuted { b: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct PowerConfigEcho {
    pub statistic: String,
    pub n: usize,
    pub length: usize,
    pub alpha: f64,
    pub b: usize,
    pub method: &'static str,
    pub seed: u64,
}

/// Fraction of trials that rejected, with the binomial standard error
/// `sqrt(r(1-r)/trials)`. With `pool_p == pool_q` this estimates the
/// false-positive rate.
#[derive(Clone, Debug, Serialize)]
pub struct PowerEstimate {
    pub rejection_rate: f64,
    pub trials: usize,
    pub std_error: f64,
    pub config: PowerConfigEcho,
}

/// Estimate rejection probability over `trials` Monte-Carlo trials, each on
/// a fresh sample pair. Consumes one draw from `rng`.
pub fn estimate_power(
    pool_p: &Pool,
    pool_q: &Pool,
    pi: &PromptDistribution,
    n: usize,
    spec: &StatisticSpec,
    alpha: f64,
    trials: usize,
    method: PowerMethod,
    convention: PValueConvention,
    rng: &mut RandomStream,
) -> Result<PowerEstimate> {
    if trials == 0 {
        return Err(Error::InvalidConfig("need at least one trial".into()));
    }
    let root = rng.derive_child();
    // Trial streams split by trial index; the shared null uses indexes far
    // outside the trial range so seeds never collide.
    let shared_null = match method {
        PowerMethod::Simulated {
            b,
            reuse: NullReuse::Shared,
        } => {
            let mut s = root.split(u64::MAX);
            Some(simulate_null(pool_p, pi, n, n, spec, b, &mut s)?)
        }
        _ => None,
    };

    let rejections = exec::try_map_indexed(trials, |t| -> Result<bool> {
        let mut s = root.split(t as u64);
        let d_p = draw_sample(pool_p, pi, n, &mut s)?;
        let d_q = draw_sample(pool_q, pi, n, &mut s)?;
        match method {
            PowerMethod::Permuted { b } => {
                let result = permutation_test(&d_p, &d_q, spec, b, alpha, convention, &mut s)?;
                Ok(result.rejected)
            }
            PowerMethod::Simulated { b, reuse } => {
                let observed = evaluate_two_sample(spec, &d_p, &d_q)?;
                let p = match (&shared_null, reuse) {
                    (Some(null), NullReuse::Shared) => null.p_value(observed, convention),
                    (_, NullReuse::Fresh) => {
                        let mut ns = s.derive_child();
                        let null = simulate_null(pool_p, pi, n, n, spec, b, &mut ns)?;
                        null.p_value(observed, convention)
                    }
                    (None, NullReuse::Shared) => unreachable!(),
                };
                Ok(p < alpha)
            }
        }
    })?;

    let hits = rejections.iter().filter(|r| **r).count();
    let rate = hits as f64 / trials as f64;
    Ok(PowerEstimate {
        rejection_rate: rate,
        trials,
        std_error: (rate * (1.0 - rate) / trials as f64).sqrt(),
        config: PowerConfigEcho {
            statistic: spec.canonical_name(),
            n,
            length: pool_p.space().max_length(),
            alpha,
            b: match method {
                PowerMethod::Simulated { b, .. } | PowerMethod::Permuted { b } => b,
            },
            method: match method {
                PowerMethod::Simulated { .. } => "simulated",
                PowerMethod::Permuted { .. } => "permuted",
            },
            seed: root.key(),
        },
    })
}

/// Re-run the power estimate with every pool completion truncated to each
/// length (the kernel's space shrinks to match). Lengths must lie within
/// `1..=max_length`. Each length reuses the same per-trial seeds.
pub fn length_sweep(
    pool_p: &Pool,
    pool_q: &Pool,
    pi: &PromptDistribution,
    n: usize,
    spec: &StatisticSpec,
    lengths: &[usize],
    alpha: f64,
    trials: usize,
    method: PowerMethod,
    convention: PValueConvention,
    rng: &mut RandomStream,
) -> Result<Vec<PowerEstimate>> {
    let root = rng.derive_child();
    let mut out = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let tp = pool_p.truncated(len)?;
        let tq = pool_q.truncated(len)?;
        let spec_len = spec.with_space(*tp.space());
        // Same child for every length: common random numbers across the sweep.
        let mut s = root.split(0);
        out.push(estimate_power(
            &tp, &tq, pi, n, &spec_len, alpha, trials, method, convention, &mut s,
        )?);
    }
    Ok(out)
}

/// Pairwise distance estimates between pools. Off-diagonal entries bootstrap
/// the two pools against each other; diagonal entries split the pool into
/// disjoint halves first, so shared atoms cannot bias the estimate downward.
#[derive(Clone, Debug, Serialize)]
pub struct DistanceMatrix {
    pub labels: Vec<String>,
    pub entries: Vec<Vec<BootstrapDistance>>,
}

impl DistanceMatrix {
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<18}", ""));
        for label in &self.labels {
            out.push_str(&format!("{label:>18}"));
        }
        out.push('\n');
        for (i, label) in self.labels.iter().enumerate() {
            out.push_str(&format!("{label:<18}"));
            for j in 0..self.labels.len() {
                let e = &self.entries[i][j];
                out.push_str(&format!("{:>11.5}±{:<6.5}", e.mean, e.std_error));
            }
            out.push('\n');
        }
        out
    }
}

pub fn distance_matrix(
    pools: &[Pool],
    pi: &PromptDistribution,
    n: usize,
    n_boot: usize,
    kernel: &Kernel,
    rng: &mut RandomStream,
) -> Result<DistanceMatrix> {
    if pools.len() < 2 {
        return Err(Error::InvalidConfig("need at least two pools".into()));
    }
    let root = rng.derive_child();
    let k = pools.len();
    let mut entries =
        vec![
            vec![BootstrapDistance {
                mean: 0.0,
                std_error: 0.0,
                n_bootstraps: 0
            }; k];
            k
        ];
    // Every unordered pair is computed once and mirrored.
    for i in 0..k {
        for j in i..k {
            let mut s = root.split((i * k + j) as u64);
            let d = if i == j {
                let (a, b) = pools[i].split_halves()?;
                bootstrap_mmd(&a, &b, pi, n, n_boot, kernel, &mut s)?
            } else {
                bootstrap_mmd(&pools[i], &pools[j], pi, n, n_boot, kernel, &mut s)?
            };
            entries[i][j] = d;
            entries[j][i] = d;
        }
    }
    Ok(DistanceMatrix {
        labels: pools.iter().map(|p| p.source_label().to_string()).collect(),
        entries,
    })
}

/// CSV rows for sweep results, one line per estimate.
pub fn sweep_to_csv(estimates: &[PowerEstimate]) -> String {
    let mut out = String::from("statistic,kernel,n,length,alpha,trials,rate,std_error,seed\n");
    for e in estimates {
        let (stat, kernel) = match e.config.statistic.split_once('(') {
            Some((s, k)) => (s.to_string(), k.trim_end_matches(')').to_string()),
            None => (e.config.statistic.clone(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            stat,
            kernel,
            e.config.n,
            e.config.length,
            e.config.alpha,
            e.trials,
            e.rejection_rate,
            e.std_error,
            e.config.seed,
        ));
    }
    out
}
