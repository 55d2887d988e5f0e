//! Squared mean-embedding distance between two completion distributions:
//! the unbiased two-sample estimator, the exact population value for small
//! explicit distributions (used as a test oracle), and bootstrap effect-size
//! estimates.

use crate::corpus::{draw_sample, Pool, PromptCompletion, PromptDistribution, Sample};
use crate::error::{Error, Result};
use crate::exec;
use crate::kernels::{Kernel, KernelKind};
use crate::rng::RandomStream;

/// Unbiased estimate of the squared distance. May be negative: within-sample
/// sums exclude the diagonal, and the estimate is never clamped so null
/// distributions keep their full shape.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct MmdEstimate {
    pub value: f64,
    pub n_p: usize,
    pub n_q: usize,
    pub kernel_kind: KernelKind,
}

fn check_sample(sample: &Sample, kernel: &Kernel) -> Result<()> {
    if sample.len() < 2 {
        return Err(Error::SampleTooSmall {
            n: sample.len(),
            min: 2,
        });
    }
    for item in sample.items() {
        kernel.space().check_completion(&item.completion)?;
    }
    Ok(())
}

/// Two-sample estimator with the within-sample diagonals excluded and all
/// cross pairs included; supports `n_p != n_q`.
pub fn mmd_u(d_p: &Sample, d_q: &Sample, kernel: &Kernel) -> Result<MmdEstimate> {
    check_sample(d_p, kernel)?;
    check_sample(d_q, kernel)?;
    let p = d_p.items();
    let q = d_q.items();
    let n_p = p.len();
    let n_q = q.len();

    // Row sums are reduced in index order, so the result does not depend on
    // the worker count.
    let within = |items: &[PromptCompletion]| -> f64 {
        let rows = exec::map_indexed(items.len(), |i| {
            let mut acc = 0.0;
            for j in (i + 1)..items.len() {
                acc += kernel.gated(&items[i], &items[j]);
            }
            acc
        });
        2.0 * rows.iter().sum::<f64>()
    };
    let sum_pp = within(p);
    let sum_qq = within(q);
    let cross_rows = exec::map_indexed(n_p, |i| {
        let mut acc = 0.0;
        for zq in q {
            acc += kernel.gated(&p[i], zq);
        }
        acc
    });
    let sum_pq: f64 = cross_rows.iter().sum();

    let value = sum_pp / (n_p * (n_p - 1)) as f64 + sum_qq / (n_q * (n_q - 1)) as f64
        - 2.0 * sum_pq / (n_p * n_q) as f64;
    Ok(MmdEstimate {
        value,
        n_p,
        n_q,
        kernel_kind: kernel.kind(),
    })
}

/// An explicit finite joint distribution over prompt-completion pairs; the
/// exact-computation oracle side of the estimator checks.
#[derive(Clone, Debug)]
pub struct ExplicitJoint {
    support: Vec<PromptCompletion>,
    probabilities: Vec<f64>,
}

impl ExplicitJoint {
    pub fn new(support: Vec<PromptCompletion>, probabilities: Vec<f64>) -> Result<Self> {
        if support.len() != probabilities.len() {
            return Err(Error::InvalidConfig(format!(
                "{} support points but {} probabilities",
                support.len(),
                probabilities.len()
            )));
        }
        if support.is_empty() {
            return Err(Error::InvalidConfig("empty support".into()));
        }
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidConfig(
                "probabilities must be non-negative and finite".into(),
            ));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self {
            support,
            probabilities,
        })
    }

    /// The exact distribution realized by with-replacement draws from `pool`
    /// under `pi`: each completion in a prompt's list is equally likely,
    /// weighted by the prompt weight. Duplicate list entries merge.
    pub fn from_pool(pool: &Pool, pi: &PromptDistribution) -> Result<Self> {
        use std::collections::BTreeMap;
        let mut acc: BTreeMap<(usize, &crate::corpus::Completion), f64> = BTreeMap::new();
        for (i, &w) in pi.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let list = pool.completions_for(i);
            if list.is_empty() {
                return Err(Error::MissingPrompt {
                    prompt_index: i,
                    weight: w,
                    pool: pool.source_label().to_string(),
                });
            }
            let per = w / list.len() as f64;
            for c in list {
                *acc.entry((i, c)).or_insert(0.0) += per;
            }
        }
        let mut support = Vec::with_capacity(acc.len());
        let mut probabilities = Vec::with_capacity(acc.len());
        let total: f64 = acc.values().sum();
        for ((prompt_index, completion), p) in acc {
            support.push(PromptCompletion {
                prompt_index,
                completion: completion.clone(),
            });
            // Renormalize away accumulated rounding so the invariant holds.
            probabilities.push(p / total);
        }
        Self::new(support, probabilities)
    }

    pub fn support(&self) -> &[PromptCompletion] {
        &self.support
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }
}

/// Default cap on exact population computation: kernel evaluations per term.
pub const DEFAULT_EXACT_PAIR_CAP: usize = 10_000;

/// Exact population value by full double summation over the supports.
pub fn population_mmd(p: &ExplicitJoint, q: &ExplicitJoint, kernel: &Kernel) -> Result<f64> {
    population_mmd_capped(p, q, kernel, DEFAULT_EXACT_PAIR_CAP)
}

pub fn population_mmd_capped(
    p: &ExplicitJoint,
    q: &ExplicitJoint,
    kernel: &Kernel,
    pair_cap: usize,
) -> Result<f64> {
    let worst = (p.len() * p.len()).max(q.len() * q.len()).max(p.len() * q.len());
    if worst > pair_cap {
        return Err(Error::SupportTooLarge {
            pairs: worst,
            cap: pair_cap,
        });
    }
    let expectation = |a: &ExplicitJoint, b: &ExplicitJoint| -> f64 {
        let mut acc = 0.0;
        for (za, &pa) in a.support().iter().zip(a.probabilities()) {
            for (zb, &pb) in b.support().iter().zip(b.probabilities()) {
                acc += pa * pb * kernel.gated(za, zb);
            }
        }
        acc
    };
    Ok(expectation(p, p) + expectation(q, q) - 2.0 * expectation(p, q))
}

/// Mean and standard error of the estimator over independent replicate
/// sample pairs.
#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct BootstrapDistance {
    pub mean: f64,
    pub std_error: f64,
    pub n_bootstraps: usize,
}

/// Draw `n_boot` independent `(d_p, d_q)` pairs, estimate the distance on
/// each, and summarize. The standard error is the sample standard deviation
/// over replicates divided by `sqrt(n_boot)`; zero by convention for a single
/// replicate. Consumes one draw from `rng`.
pub fn bootstrap_mmd(
    pool_p: &Pool,
    pool_q: &Pool,
    pi: &PromptDistribution,
    n: usize,
    n_boot: usize,
    kernel: &Kernel,
    rng: &mut RandomStream,
) -> Result<BootstrapDistance> {
    if n_boot == 0 {
        return Err(Error::InvalidConfig("need at least one bootstrap".into()));
    }
    if n < 2 {
        return Err(Error::SampleTooSmall { n, min: 2 });
    }
    let root = rng.derive_child();
    let values = exec::try_map_indexed(n_boot, |i| -> Result<f64> {
        let mut s = root.split(i as u64);
        let d_p = draw_sample(pool_p, pi, n, &mut s)?;
        let d_q = draw_sample(pool_q, pi, n, &mut s)?;
        Ok(mmd_u(&d_p, &d_q, kernel)?.value)
    })?;
    let mean = values.iter().sum::<f64>() / n_boot as f64;
    let std_error = if n_boot == 1 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_boot - 1) as f64;
        (var / n_boot as f64).sqrt()
    };
    Ok(BootstrapDistance {
        mean,
        std_error,
        n_bootstraps: n_boot,
    })
}

/// Dense symmetric kernel matrix over a pooled item list.
#[derive(Clone, Debug)]
pub(crate) struct Gram {
    n: usize,
    data: Vec<f64>,
}

impl Gram {
    /// Evaluates the upper triangle in parallel and mirrors it.
    pub(crate) fn build(items: &[PromptCompletion], kernel: &Kernel) -> Gram {
        let n = items.len();
        let rows = exec::map_indexed(n, |i| {
            let mut row = vec![0.0; n - i];
            for j in i..n {
                row[j - i] = if i == j {
                    kernel.gated(&items[i], &items[i])
                } else {
                    kernel.gated(&items[i], &items[j])
                };
            }
            row
        });
        let mut data = vec![0.0; n * n];
        for (i, row) in rows.iter().enumerate() {
            for (off, &v) in row.iter().enumerate() {
                let j = i + off;
                data[i * n + j] = v;
                data[j * n + i] = v;
            }
        }
        Gram { n, data }
    }

    #[inline]
    pub(crate) fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// Estimator value for a relabeling of the pooled items: `assignment[..n_p]`
/// are the indices of the first group, the rest the second.
pub(crate) fn mmd_from_assignment(gram: &Gram, assignment: &[usize], n_p: usize) -> f64 {
    let (p_idx, q_idx) = assignment.split_at(n_p);
    let n_q = q_idx.len();
    let mut sum_pp = 0.0;
    for (a, &i) in p_idx.iter().enumerate() {
        for &j in &p_idx[a + 1..] {
            sum_pp += gram.get(i, j);
        }
    }
    let mut sum_qq = 0.0;
    for (a, &i) in q_idx.iter().enumerate() {
        for &j in &q_idx[a + 1..] {
            sum_qq += gram.get(i, j);
        }
    }
    let mut sum_pq = 0.0;
    for &i in p_idx {
        for &j in q_idx {
            sum_pq += gram.get(i, j);
        }
    }
    2.0 * sum_pp / (n_p * (n_p - 1)) as f64 + 2.0 * sum_qq / (n_q * (n_q - 1)) as f64
        - 2.0 * sum_pq / (n_p * n_q) as f64
}
