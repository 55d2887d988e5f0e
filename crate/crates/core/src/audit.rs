//! The endpoint audit protocol: a composite two-null test, repetition with
//! a fail threshold, family-wise combination across tasks, and the report.
//!
//! The composite null says the candidate matches *either* reference (e.g.
//! full-precision or half-precision weights). Both component tests share the
//! candidate sample and the composite rejects only when both p-values fall
//! below alpha (strictly), which keeps the false-positive rate at alpha no
//! matter which reference is the true match.

use serde::Serialize;

use crate::corpus::{draw_sample, Pool, PromptDistribution, Sample};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelKind};
use crate::mmd::{bootstrap_mmd, BootstrapDistance};
use crate::rng::RandomStream;
use crate::testing::{
    simulate_null, two_sample_test, NullDistribution, PValueConvention, StatisticSpec, TestMethod,
};

/// Outcome of one composite two-null test.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CompositeVerdict {
    pub p1: f64,
    pub p2: f64,
    pub alpha: f64,
    /// True iff `p1 < alpha` and `p2 < alpha`.
    pub rejected: bool,
}

/// P-value machinery for the two component tests.
pub enum CompositeMethod<'a> {
    Permuted(usize),
    Simulated {
        null1: &'a NullDistribution,
        null2: &'a NullDistribution,
    },
}

/// Run the two component tests `(d_null1 vs d_api)` and `(d_null2 vs d_api)`
/// and apply the conjunction rule. The candidate sample is shared between
/// the components.
pub fn composite_test(
    d_null1: &Sample,
    d_null2: &Sample,
    d_api: &Sample,
    spec: &StatisticSpec,
    alpha: f64,
    method: CompositeMethod<'_>,
    convention: PValueConvention,
    rng: &mut RandomStream,
) -> Result<CompositeVerdict> {
    let (m1, m2) = match method {
        CompositeMethod::Permuted(b) => (TestMethod::Permuted(b), TestMethod::Permuted(b)),
        CompositeMethod::Simulated { null1, null2 } => {
            (TestMethod::Simulated(null1), TestMethod::Simulated(null2))
        }
    };
    let t1 = two_sample_test(d_null1, d_api, spec, alpha, m1, convention, rng)?;
    let t2 = two_sample_test(d_null2, d_api, spec, alpha, m2, convention, rng)?;
    Ok(CompositeVerdict {
        p1: t1.p_value,
        p2: t2.p_value,
        alpha,
        rejected: t1.p_value < alpha && t2.p_value < alpha,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditOutcome {
    Pass,
    Fail,
}

/// Mean rejection rate and the threshold rule: fail iff the mean rejection
/// rate is at or above `fail_threshold`.
pub fn aggregate_verdicts(rejections: &[bool], fail_threshold: f64) -> (f64, AuditOutcome) {
    let mean = if rejections.is_empty() {
        0.0
    } else {
        rejections.iter().filter(|r| **r).count() as f64 / rejections.len() as f64
    };
    let outcome = if mean >= fail_threshold {
        AuditOutcome::Fail
    } else {
        AuditOutcome::Pass
    };
    (mean, outcome)
}

/// How repeated composite tests derive p-values. With `Simulated`, the two
/// nulls are simulated once from the reference pools and reused across
/// repetitions.
#[derive(Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMethod {
    Simulated { b: usize },
    Permuted { b: usize },
}

#[derive(Clone, Debug, Serialize)]
pub struct RepeatedAuditConfig {
    pub n: usize,
    pub alpha: f64,
    pub reps: usize,
    pub fail_threshold: f64,
    pub method: AuditMethod,
    pub convention: PValueConvention,
}

impl RepeatedAuditConfig {
    pub fn new(n: usize, alpha: f64, method: AuditMethod) -> Self {
        Self {
            n,
            alpha,
            reps: 10,
            fail_threshold: 0.5,
            method,
            convention: PValueConvention::Smoothed,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RepeatedAudit {
    pub verdicts: Vec<CompositeVerdict>,
    pub mean_rejection_rate: f64,
    pub outcome: AuditOutcome,
}

/// Run `reps` composite tests, each on freshly drawn samples from all three
/// pools (independent sub-seeds per repetition), and apply the threshold
/// rule. Consumes one draw from `rng`.
pub fn repeated_audit(
    pool_null1: &Pool,
    pool_null2: &Pool,
    pool_api: &Pool,
    pi: &PromptDistribution,
    spec: &StatisticSpec,
    cfg: &RepeatedAuditConfig,
    rng: &mut RandomStream,
) -> Result<RepeatedAudit> {
    if cfg.reps == 0 {
        return Err(Error::InvalidConfig("need at least one repetition".into()));
    }
    let root = rng.derive_child();
    let nulls = match cfg.method {
        AuditMethod::Simulated { b } => {
            let mut s1 = root.split(u64::MAX);
            let mut s2 = root.split(u64::MAX - 1);
            Some((
                simulate_null(pool_null1, pi, cfg.n, cfg.n, spec, b, &mut s1)?,
                simulate_null(pool_null2, pi, cfg.n, cfg.n, spec, b, &mut s2)?,
            ))
        }
        AuditMethod::Permuted { .. } => None,
    };
    let verdicts = crate::exec::try_map_indexed(cfg.reps, |rep| -> Result<CompositeVerdict> {
        let mut s = root.split(rep as u64);
        let d1 = draw_sample(pool_null1, pi, cfg.n, &mut s)?;
        let d2 = draw_sample(pool_null2, pi, cfg.n, &mut s)?;
        let d_api = draw_sample(pool_api, pi, cfg.n, &mut s)?;
        let method = match (&cfg.method, &nulls) {
            (AuditMethod::Permuted { b }, _) => CompositeMethod::Permuted(*b),
            (AuditMethod::Simulated { .. }, Some((null1, null2))) => {
                CompositeMethod::Simulated { null1, null2 }
            }
            (AuditMethod::Simulated { .. }, None) => unreachable!(),
        };
        composite_test(&d1, &d2, &d_api, spec, cfg.alpha, method, cfg.convention, &mut s)
    })?;
    let flags: Vec<bool> = verdicts.iter().map(|v| v.rejected).collect();
    let (mean, outcome) = aggregate_verdicts(&flags, cfg.fail_threshold);
    Ok(RepeatedAudit {
        verdicts,
        mean_rejection_rate: mean,
        outcome,
    })
}

/// Per-test level for a family of `k` tests.
pub fn bonferroni_level(alpha: f64, k: usize) -> f64 {
    alpha / k.max(1) as f64
}

#[derive(Clone, Debug, Serialize)]
pub struct BonferroniOutcome {
    pub alpha: f64,
    pub k: usize,
    pub level: f64,
    pub failing_tasks: Vec<String>,
    pub outcome: AuditOutcome,
}

/// Combine per-task p-values: each task is held to level `alpha / k` and the
/// family fails iff any task falls strictly below it. A p-value exactly at
/// the level passes.
pub fn bonferroni_combine(task_p_values: &[(String, f64)], alpha: f64) -> BonferroniOutcome {
    let k = task_p_values.len();
    let level = bonferroni_level(alpha, k);
    let failing_tasks: Vec<String> = task_p_values
        .iter()
        .filter(|(_, p)| *p < level)
        .map(|(name, _)| name.clone())
        .collect();
    let outcome = if failing_tasks.is_empty() {
        AuditOutcome::Pass
    } else {
        AuditOutcome::Fail
    };
    BonferroniOutcome {
        alpha,
        k,
        level,
        failing_tasks,
        outcome,
    }
}

/// One audited task inside a report.
#[derive(Clone, Debug, Serialize)]
pub struct TaskAudit {
    pub task: String,
    pub audit: RepeatedAudit,
    /// Estimated distance between the candidate and each reference.
    pub effect_vs_null1: BootstrapDistance,
    pub effect_vs_null2: BootstrapDistance,
}

/// The full audit outcome across tasks. Each task runs at `alpha / k`; the
/// combined verdict fails when any task fails.
#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub endpoint_label: String,
    pub alpha: f64,
    pub per_task: Vec<TaskAudit>,
    pub combined: AuditOutcome,
    pub config_echo: serde_json::Value,
}

impl AuditReport {
    pub fn from_tasks(
        endpoint_label: impl Into<String>,
        alpha: f64,
        per_task: Vec<TaskAudit>,
        config_echo: serde_json::Value,
    ) -> Self {
        let combined = if per_task.iter().any(|t| t.audit.outcome == AuditOutcome::Fail) {
            AuditOutcome::Fail
        } else {
            AuditOutcome::Pass
        };
        Self {
            endpoint_label: endpoint_label.into(),
            alpha,
            per_task,
            combined,
            config_echo,
        }
    }

    pub fn failed(&self) -> bool {
        self.combined == AuditOutcome::Fail
    }

    /// Human-readable table, one row per task.
    pub fn text_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "endpoint: {}    alpha: {}\n",
            self.endpoint_label, self.alpha
        ));
        out.push_str(&format!(
            "{:<20} {:>10} {:>8} {:>16} {:>16}\n",
            "task", "mean rate", "verdict", "dist vs null1", "dist vs null2"
        ));
        for t in &self.per_task {
            out.push_str(&format!(
                "{:<20} {:>10.3} {:>8} {:>9.5}±{:.5} {:>9.5}±{:.5}\n",
                t.task,
                t.audit.mean_rejection_rate,
                match t.audit.outcome {
                    AuditOutcome::Pass => "pass",
                    AuditOutcome::Fail => "FAIL",
                },
                t.effect_vs_null1.mean,
                t.effect_vs_null1.std_error,
                t.effect_vs_null2.mean,
                t.effect_vs_null2.std_error,
            ));
        }
        out.push_str(&format!(
            "combined: {}\n",
            match self.combined {
                AuditOutcome::Pass => "pass",
                AuditOutcome::Fail => "FAIL",
            }
        ));
        out
    }
}

/// Distance estimates between a candidate pool and each reference pool,
/// using the audit's kernel when the statistic is the kernel distance and
/// the position kernel otherwise.
pub fn effect_sizes(
    pool_null1: &Pool,
    pool_null2: &Pool,
    pool_api: &Pool,
    pi: &PromptDistribution,
    spec: &StatisticSpec,
    n: usize,
    n_boot: usize,
    rng: &mut RandomStream,
) -> Result<(BootstrapDistance, BootstrapDistance)> {
    let kernel = match spec.kernel() {
        Some(k) => k.clone(),
        None => Kernel::new(KernelKind::Hamming, *pool_api.space()),
    };
    let e1 = bootstrap_mmd(pool_api, pool_null1, pi, n, n_boot, &kernel, rng)?;
    let e2 = bootstrap_mmd(pool_api, pool_null2, pi, n, n_boot, &kernel, rng)?;
    Ok((e1, e2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Completion, Prompt, SymbolSpace};

    #[test]
    fn conjunction_rule() {
        // Only the double rejection rejects.
        let cases = [
            (0.001, 0.2, 0.01, false),
            (0.005, 0.005, 0.01, true),
            (0.2, 0.001, 0.01, false),
        ];
        for (p1, p2, alpha, expected) in cases {
            let rejected = p1 < alpha && p2 < alpha;
            assert_eq!(rejected, expected, "p1={p1} p2={p2}");
        }
    }

    #[test]
    fn threshold_rule_boundary() {
        let half: Vec<bool> = [true; 5].iter().chain([false; 5].iter()).copied().collect();
        let (mean, outcome) = aggregate_verdicts(&half, 0.5);
        assert_eq!(mean, 0.5);
        assert_eq!(outcome, AuditOutcome::Fail);

        let four: Vec<bool> = [true; 4].iter().chain([false; 6].iter()).copied().collect();
        let (mean, outcome) = aggregate_verdicts(&four, 0.5);
        assert_eq!(mean, 0.4);
        assert_eq!(outcome, AuditOutcome::Pass);

        let (mean, outcome) = aggregate_verdicts(&[false; 10], 0.5);
        assert_eq!(mean, 0.0);
        assert_eq!(outcome, AuditOutcome::Pass);
    }

    #[test]
    fn bonferroni_footnote_rule() {
        let tasks = vec![
            ("wiki".to_string(), 0.002),
            ("code".to_string(), 0.5),
            ("chat".to_string(), 0.7),
        ];
        let out = bonferroni_combine(&tasks, 0.01);
        assert!((out.level - 0.01 / 3.0).abs() < 1e-15);
        assert_eq!(out.outcome, AuditOutcome::Fail);
        assert_eq!(out.failing_tasks, vec!["wiki".to_string()]);

        let tasks = vec![("a".to_string(), 0.2), ("b".to_string(), 0.9)];
        assert_eq!(bonferroni_combine(&tasks, 0.01).outcome, AuditOutcome::Pass);
    }

    #[test]
    fn bonferroni_boundary_passes() {
        let level = 0.01 / 3.0;
        let tasks = vec![
            ("exact".to_string(), level),
            ("above".to_string(), 0.5),
            ("above2".to_string(), 0.6),
        ];
        assert_eq!(bonferroni_combine(&tasks, 0.01).outcome, AuditOutcome::Pass);
    }

    #[test]
    fn repeated_audit_runs_end_to_end() {
        let space = SymbolSpace::character(3).unwrap();
        let make_pool = |label: &str, items: &[&str]| {
            Pool::new(
                space,
                vec![Prompt::new("p0", "t")],
                vec![items.iter().map(|s| Completion::from_text(s)).collect()],
                label,
            )
            .unwrap()
        };
        let ref1 = make_pool("ref1", &["a", "b", "c", "d"]);
        let ref2 = make_pool("ref2", &["a", "b", "c", "e"]);
        let api = make_pool("api", &["a", "b", "c", "d"]);
        let pi = ref1.uniform_distribution().unwrap();
        let spec = StatisticSpec::Mmd(Kernel::new(KernelKind::OneHot, space));
        let cfg = RepeatedAuditConfig {
            reps: 5,
            ..RepeatedAuditConfig::new(16, 0.05, AuditMethod::Permuted { b: 60 })
        };
        let out = repeated_audit(
            &ref1,
            &ref2,
            &api,
            &pi,
            &spec,
            &cfg,
            &mut RandomStream::from_seed(21),
        )
        .unwrap();
        assert_eq!(out.verdicts.len(), 5);
        // Candidate matches ref1, so the audit should pass.
        assert_eq!(out.outcome, AuditOutcome::Pass);
    }

    #[test]
    fn repeated_audit_is_deterministic() {
        let space = SymbolSpace::character(3).unwrap();
        let pool = Pool::new(
            space,
            vec![Prompt::new("p0", "t")],
            vec![vec![
                Completion::from_text("a"),
                Completion::from_text("b"),
                Completion::from_text("c"),
            ]],
            "p",
        )
        .unwrap();
        let pi = pool.uniform_distribution().unwrap();
        let spec = StatisticSpec::Mmd(Kernel::new(KernelKind::Hamming, space));
        let cfg = RepeatedAuditConfig {
            reps: 4,
            ..RepeatedAuditConfig::new(10, 0.05, AuditMethod::Simulated { b: 50 })
        };
        let run = |seed| {
            let out = repeated_audit(
                &pool,
                &pool,
                &pool,
                &pi,
                &spec,
                &cfg,
                &mut RandomStream::from_seed(seed),
            )
            .unwrap();
            out.verdicts.iter().map(|v| (v.p1, v.p2)).collect::<Vec<_>>()
        };
        assert_eq!(run(8), run(8));
    }
}
