//! Calibrated tests from any statistic: null simulation, permutation
//! relabeling, p-value computation, and the two-sample test entry point.
//!
//! Nulls are either simulated (draw both samples from the reference pool,
//! recompute the statistic) or permuted (pool the two observed samples and
//! recompute over random relabelings). P-values are the proportion of null
//! values at or above the observed statistic; the smoothed convention
//! `(1 + c) / (1 + B)` is the default and guarantees finite-sample validity,
//! while `raw` (`c / B`) is kept for parity with the simulation literature.

use std::str::FromStr;

use itertools::Itertools;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classical::{
    chi2_from_paired_counts, gof_statistic, l1_from_paired_counts, GofKind, TabularOracle,
};
use crate::corpus::{draw_sample, Pool, PromptCompletion, PromptDistribution, Sample, SymbolSpace};
use crate::error::{Error, Result};
use crate::exec;
use crate::kernels::{Kernel, KernelKind};
use crate::mmd::{mmd_from_assignment, mmd_u, Gram};
use crate::rng::RandomStream;

mod cache;
pub use cache::{load_null, pi_fingerprint, pool_fingerprint, save_null, NullCache};

/// Relabeling spaces at or below this size are enumerated exhaustively
/// instead of sampled.
pub const EXHAUSTIVE_SPLIT_CAP: u128 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticFamily {
    TwoSample,
    GoodnessOfFit,
}

/// A test statistic selection. The kernel is present exactly when the
/// statistic is the kernel distance estimator.
#[derive(Clone, Debug)]
pub enum StatisticSpec {
    Mmd(Kernel),
    L1,
    Chi2,
    Gof(GofKind),
}

impl StatisticSpec {
    /// Parse a CLI/config statistic name. `mmd` requires a kernel kind.
    pub fn parse(name: &str, kernel: Option<KernelKind>, space: &SymbolSpace) -> Result<Self> {
        match name {
            "mmd" => {
                let kind = kernel.ok_or_else(|| {
                    Error::InvalidConfig("statistic 'mmd' requires a kernel".into())
                })?;
                Ok(StatisticSpec::Mmd(Kernel::new(kind, *space)))
            }
            "l1" => Ok(StatisticSpec::L1),
            "chi2" => Ok(StatisticSpec::Chi2),
            other => match GofKind::from_str(other) {
                Ok(kind) => Ok(StatisticSpec::Gof(kind)),
                Err(_) => Err(Error::InvalidConfig(format!(
                    "unknown statistic '{other}'; valid: mmd | l1 | chi2 | l1_gof | l2_gof | pearson | truncated_chi2 | lrt"
                ))),
            },
        }
    }

    pub fn family(&self) -> StatisticFamily {
        match self {
            StatisticSpec::Mmd(_) | StatisticSpec::L1 | StatisticSpec::Chi2 => {
                StatisticFamily::TwoSample
            }
            StatisticSpec::Gof(_) => StatisticFamily::GoodnessOfFit,
        }
    }

    pub fn kernel(&self) -> Option<&Kernel> {
        match self {
            StatisticSpec::Mmd(k) => Some(k),
            _ => None,
        }
    }

    /// Rebind any kernel to a different space (used by length sweeps).
    pub fn with_space(&self, space: SymbolSpace) -> StatisticSpec {
        match self {
            StatisticSpec::Mmd(k) => StatisticSpec::Mmd(k.with_space(space)),
            other => other.clone(),
        }
    }

    pub fn canonical_name(&self) -> String {
        match self {
            StatisticSpec::Mmd(k) => format!("mmd({})", k.kind().name()),
            StatisticSpec::L1 => "l1".into(),
            StatisticSpec::Chi2 => "chi2".into(),
            StatisticSpec::Gof(kind) => kind.name().into(),
        }
    }
}

impl std::fmt::Display for StatisticSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.canonical_name())
    }
}

/// Evaluate a two-sample statistic on a pair of samples.
pub fn evaluate_two_sample(spec: &StatisticSpec, d_p: &Sample, d_q: &Sample) -> Result<f64> {
    match spec {
        StatisticSpec::Mmd(kernel) => Ok(mmd_u(d_p, d_q, kernel)?.value),
        StatisticSpec::L1 => crate::classical::l1_two_sample(d_p, d_q),
        StatisticSpec::Chi2 => crate::classical::chi2_two_sample(d_p, d_q),
        StatisticSpec::Gof(_) => Err(Error::InvalidConfig(
            "goodness-of-fit statistics are one-sample; use gof_test".into(),
        )),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueConvention {
    /// `(1 + #{v ≥ observed}) / (1 + B)`; never returns zero.
    #[default]
    Smoothed,
    /// `#{v ≥ observed} / B`.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullMethod {
    Simulated,
    Permuted,
}

/// Cache key for a simulated null: everything that determines the values
/// except the alternative being tested. Pools and prompt distributions are
/// identified by content fingerprints, not paths, so a stale file can never
/// be silently reused.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NullKey {
    pub pool_fingerprint: String,
    pub pi_fingerprint: String,
    pub n_p: usize,
    pub n_q: usize,
    pub statistic: String,
    pub seed: u64,
}

/// A sorted set of statistic values simulated or permuted under the null.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NullDistribution {
    key: NullKey,
    method: NullMethod,
    values: Vec<f64>,
}

impl NullDistribution {
    pub(crate) fn new(key: NullKey, method: NullMethod, mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        Self { key, method, values }
    }

    pub fn key(&self) -> &NullKey {
        &self.key
    }

    pub fn method(&self) -> NullMethod {
        self.method
    }

    /// Sorted ascending.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn b(&self) -> usize {
        self.values.len()
    }

    /// Proportion of null values at or above `observed`, under the chosen
    /// convention.
    pub fn p_value(&self, observed: f64, convention: PValueConvention) -> f64 {
        p_value(&self.values, observed, convention)
    }
}

/// `values` must be sorted ascending.
pub fn p_value(values: &[f64], observed: f64, convention: PValueConvention) -> f64 {
    let b = values.len();
    debug_assert!(b > 0);
    let c = b - values.partition_point(|v| *v < observed);
    match convention {
        PValueConvention::Smoothed => (1 + c) as f64 / (1 + b) as f64,
        PValueConvention::Raw => c as f64 / b as f64,
    }
}

/// Simulate the statistic's null distribution: `b` independent draws of
/// `(d_p, d_q)`, both from `pool_p`, with the statistic recomputed on each.
/// For goodness-of-fit statistics the reference oracle is the pool's
/// empirical distribution and only the size-`n_q` sample is drawn.
///
/// Consumes one draw from `rng`; replicates run on indexed child streams, so
/// the result is identical for any worker count.
pub fn simulate_null(
    pool_p: &Pool,
    pi: &PromptDistribution,
    n_p: usize,
    n_q: usize,
    spec: &StatisticSpec,
    b: usize,
    rng: &mut RandomStream,
) -> Result<NullDistribution> {
    if b == 0 {
        return Err(Error::InvalidConfig("need at least one null replicate".into()));
    }
    let root = rng.derive_child();
    let key = NullKey {
        pool_fingerprint: pool_fingerprint(pool_p),
        pi_fingerprint: pi_fingerprint(pi),
        n_p,
        n_q,
        statistic: spec.canonical_name(),
        seed: root.key(),
    };
    let values = match spec.family() {
        StatisticFamily::TwoSample => exec::try_map_indexed(b, |i| -> Result<f64> {
            let mut s = root.split(i as u64);
            let d_p = draw_sample(pool_p, pi, n_p, &mut s)?;
            let d_q = draw_sample(pool_p, pi, n_q, &mut s)?;
            evaluate_two_sample(spec, &d_p, &d_q)
        })?,
        StatisticFamily::GoodnessOfFit => {
            let kind = match spec {
                StatisticSpec::Gof(kind) => *kind,
                _ => unreachable!(),
            };
            let oracle = TabularOracle::from_pool(pool_p, pi);
            let space = *pool_p.space();
            exec::try_map_indexed(b, |i| -> Result<f64> {
                let mut s = root.split(i as u64);
                let d = draw_sample(pool_p, pi, n_q, &mut s)?;
                Ok(gof_statistic(kind, &oracle, &d, &space)?.value)
            })?
        }
    };
    Ok(NullDistribution::new(key, NullMethod::Simulated, values))
}

#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub statistic: String,
    pub n_p: usize,
    pub n_q: usize,
    /// Key of the random stream that generated the null values.
    pub null_seed: u64,
}

/// Outcome of one calibrated test.
#[derive(Clone, Debug, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub rejected: bool,
    pub alpha: f64,
    pub b: usize,
    pub method: NullMethod,
    pub convention: PValueConvention,
    pub provenance: Provenance,
}

enum PermutationEngine {
    Gram { gram: Gram },
    Counts { ids: Vec<usize>, distinct: usize },
}

impl PermutationEngine {
    fn build(pooled: &[PromptCompletion], spec: &StatisticSpec) -> Result<Self> {
        match spec {
            StatisticSpec::Mmd(kernel) => {
                for z in pooled {
                    kernel.space().check_completion(&z.completion)?;
                }
                Ok(PermutationEngine::Gram {
                    gram: Gram::build(pooled, kernel),
                })
            }
            StatisticSpec::L1 | StatisticSpec::Chi2 => {
                let mut dense: std::collections::HashMap<&PromptCompletion, usize> =
                    std::collections::HashMap::new();
                let mut ids = Vec::with_capacity(pooled.len());
                for z in pooled {
                    let next = dense.len();
                    ids.push(*dense.entry(z).or_insert(next));
                }
                Ok(PermutationEngine::Counts {
                    distinct: dense.len(),
                    ids,
                })
            }
            StatisticSpec::Gof(_) => Err(Error::InvalidConfig(
                "permutation testing requires a two-sample statistic".into(),
            )),
        }
    }

    /// Statistic for the relabeling `assignment[..n_p]` | `assignment[n_p..]`.
    fn evaluate(&self, spec: &StatisticSpec, assignment: &[usize], n_p: usize) -> f64 {
        match self {
            PermutationEngine::Gram { gram } => mmd_from_assignment(gram, assignment, n_p),
            PermutationEngine::Counts { ids, distinct } => {
                let mut cp = vec![0.0f64; *distinct];
                let mut cq = vec![0.0f64; *distinct];
                for &i in &assignment[..n_p] {
                    cp[ids[i]] += 1.0;
                }
                for &i in &assignment[n_p..] {
                    cq[ids[i]] += 1.0;
                }
                let pairs = cp.iter().copied().zip(cq.iter().copied());
                match spec {
                    StatisticSpec::L1 => l1_from_paired_counts(pairs, n_p as f64),
                    StatisticSpec::Chi2 => chi2_from_paired_counts(pairs, n_p as f64),
                    _ => unreachable!(),
                }
            }
        }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i + 1) as u128;
        if acc > EXHAUSTIVE_SPLIT_CAP {
            return u128::MAX;
        }
    }
    acc
}

/// Relabel the pooled samples `b` times and compare the observed statistic
/// against the relabeled values. When the relabeling space has at most
/// [`EXHAUSTIVE_SPLIT_CAP`] splits it is enumerated exhaustively instead
/// (and `b` in the result is the number of splits). The pooled kernel matrix
/// is computed once; relabelings only reindex it.
pub fn permutation_test(
    d_p: &Sample,
    d_q: &Sample,
    spec: &StatisticSpec,
    b: usize,
    alpha: f64,
    convention: PValueConvention,
    rng: &mut RandomStream,
) -> Result<TestResult> {
    if b == 0 {
        return Err(Error::InvalidConfig("need at least one permutation".into()));
    }
    let n_p = d_p.len();
    let n_q = d_q.len();
    if n_p + n_q < 4 {
        return Err(Error::SampleTooSmall { n: n_p + n_q, min: 4 });
    }
    let observed = evaluate_two_sample(spec, d_p, d_q)?;

    let mut pooled = Vec::with_capacity(n_p + n_q);
    pooled.extend_from_slice(d_p.items());
    pooled.extend_from_slice(d_q.items());
    let engine = PermutationEngine::build(&pooled, spec)?;
    let n = pooled.len();

    let root = rng.derive_child();
    let values: Vec<f64> = if binomial(n, n_p) <= EXHAUSTIVE_SPLIT_CAP {
        let splits: Vec<Vec<usize>> = (0..n).combinations(n_p).collect();
        exec::map_indexed(splits.len(), |i| {
            let chosen = &splits[i];
            let mut assignment = chosen.clone();
            let mut in_p = vec![false; n];
            for &j in chosen {
                in_p[j] = true;
            }
            assignment.extend((0..n).filter(|j| !in_p[*j]));
            engine.evaluate(spec, &assignment, n_p)
        })
    } else {
        exec::map_indexed(b, |i| {
            let mut s = root.split(i as u64);
            let mut assignment: Vec<usize> = (0..n).collect();
            assignment.shuffle(&mut s);
            engine.evaluate(spec, &assignment, n_p)
        })
    };

    let mut sorted = values;
    sorted.sort_by(f64::total_cmp);
    let p = p_value(&sorted, observed, convention);
    Ok(TestResult {
        statistic: observed,
        p_value: p,
        rejected: p < alpha,
        alpha,
        b: sorted.len(),
        method: NullMethod::Permuted,
        convention,
        provenance: Provenance {
            statistic: spec.canonical_name(),
            n_p,
            n_q,
            null_seed: root.key(),
        },
    })
}

/// How a test derives its p-value.
pub enum TestMethod<'a> {
    /// Compare against a pre-simulated null whose key must match the sample
    /// sizes and statistic.
    Simulated(&'a NullDistribution),
    /// Relabel the pooled samples this many times.
    Permuted(usize),
}

/// One calibrated two-sample test: compute the observed statistic, derive a
/// p-value by the chosen method, reject when `p < alpha` (strict).
pub fn two_sample_test(
    d_p: &Sample,
    d_q: &Sample,
    spec: &StatisticSpec,
    alpha: f64,
    method: TestMethod<'_>,
    convention: PValueConvention,
    rng: &mut RandomStream,
) -> Result<TestResult> {
    match method {
        TestMethod::Permuted(b) => permutation_test(d_p, d_q, spec, b, alpha, convention, rng),
        TestMethod::Simulated(null) => {
            check_null_key(null, spec, d_p.len(), d_q.len())?;
            let observed = evaluate_two_sample(spec, d_p, d_q)?;
            let p = null.p_value(observed, convention);
            Ok(TestResult {
                statistic: observed,
                p_value: p,
                rejected: p < alpha,
                alpha,
                b: null.b(),
                method: NullMethod::Simulated,
                convention,
                provenance: Provenance {
                    statistic: spec.canonical_name(),
                    n_p: d_p.len(),
                    n_q: d_q.len(),
                    null_seed: null.key().seed,
                },
            })
        }
    }
}

/// Calibrated goodness-of-fit test against a simulated null.
pub fn gof_test(
    oracle: &TabularOracle,
    d_api: &Sample,
    kind: GofKind,
    space: &SymbolSpace,
    alpha: f64,
    null: &NullDistribution,
    convention: PValueConvention,
) -> Result<TestResult> {
    let spec = StatisticSpec::Gof(kind);
    check_null_key(null, &spec, null.key().n_p, d_api.len())?;
    let observed = gof_statistic(kind, oracle, d_api, space)?.value;
    let p = null.p_value(observed, convention);
    Ok(TestResult {
        statistic: observed,
        p_value: p,
        rejected: p < alpha,
        alpha,
        b: null.b(),
        method: NullMethod::Simulated,
        convention,
        provenance: Provenance {
            statistic: spec.canonical_name(),
            n_p: null.key().n_p,
            n_q: d_api.len(),
            null_seed: null.key().seed,
        },
    })
}

fn check_null_key(
    null: &NullDistribution,
    spec: &StatisticSpec,
    n_p: usize,
    n_q: usize,
) -> Result<()> {
    let key = null.key();
    if key.statistic != spec.canonical_name() {
        return Err(Error::NullKeyMismatch(format!(
            "null was simulated for statistic '{}' but the test uses '{}'",
            key.statistic,
            spec.canonical_name()
        )));
    }
    if key.n_p != n_p || key.n_q != n_q {
        return Err(Error::NullKeyMismatch(format!(
            "null was simulated for sizes ({}, {}) but the samples have sizes ({}, {})",
            key.n_p, key.n_q, n_p, n_q
        )));
    }
    Ok(())
}
