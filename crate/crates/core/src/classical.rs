//! Classical multinomial statistics: two-sample L1 and chi-squared over
//! observed counts, and a goodness-of-fit family evaluated against a
//! reference probability oracle on the observed support. None of these carry
//! asymptotic reference distributions here; p-values always come from the
//! simulation machinery in [`crate::testing`].

use std::collections::HashMap;
use std::str::FromStr;

use crate::corpus::{counts, Completion, PromptCompletion, PromptDistribution, Sample, SymbolSpace};
use crate::error::{Error, Result};

/// `Σ_z |obs(z, d_p) − obs(z, d_q)| / N` over the union of observed items.
/// Requires equal sample sizes. Ranges over `[0, 2]`: 0 iff the count tables
/// agree, 2 when the samples are disjoint.
pub fn l1_two_sample(d_p: &Sample, d_q: &Sample) -> Result<f64> {
    let n = check_equal_sizes(d_p, d_q)?;
    Ok(l1_from_paired_counts(union_counts(d_p, d_q), n as f64))
}

/// `N² · Σ_z [(obs_p − obs_q)² − obs_p − obs_q] / (obs_p + obs_q)` over the
/// union of observed items; denominators are positive by construction.
/// Negative under exact count equality.
pub fn chi2_two_sample(d_p: &Sample, d_q: &Sample) -> Result<f64> {
    let n = check_equal_sizes(d_p, d_q)?;
    Ok(chi2_from_paired_counts(union_counts(d_p, d_q), n as f64))
}

fn union_counts(d_p: &Sample, d_q: &Sample) -> impl Iterator<Item = (f64, f64)> {
    let cp = counts(d_p);
    let cq = counts(d_q);
    let mut pairs = Vec::with_capacity(cp.distinct() + cq.distinct());
    for (z, c) in cp.iter() {
        pairs.push((c as f64, cq.get(z) as f64));
    }
    for (z, c) in cq.iter() {
        if cp.get(z) == 0 {
            pairs.push((0.0, c as f64));
        }
    }
    pairs.into_iter()
}

/// Shared with the permutation engine so relabeled statistics use the exact
/// same arithmetic as the direct path. Zero-count pairs contribute nothing.
pub(crate) fn l1_from_paired_counts(pairs: impl Iterator<Item = (f64, f64)>, n: f64) -> f64 {
    pairs.map(|(p, q)| (p - q).abs()).sum::<f64>() / n
}

pub(crate) fn chi2_from_paired_counts(pairs: impl Iterator<Item = (f64, f64)>, n: f64) -> f64 {
    let acc: f64 = pairs
        .filter(|(p, q)| p + q > 0.0)
        .map(|(p, q)| ((p - q).powi(2) - p - q) / (p + q))
        .sum();
    n * n * acc
}

fn check_equal_sizes(d_p: &Sample, d_q: &Sample) -> Result<usize> {
    if d_p.len() != d_q.len() {
        return Err(Error::InvalidConfig(format!(
            "two-sample multinomial statistics require equal sizes, got {} and {}",
            d_p.len(),
            d_q.len()
        )));
    }
    Ok(d_p.len())
}

/// Access to reference conditional probabilities `P(y | x)` for observed
/// items, plus the prompt distribution supplying `π(x)`.
pub trait ProbabilityOracle: Sync {
    fn conditional_prob(&self, prompt_index: usize, completion: &Completion) -> Result<f64>;

    fn prompt_distribution(&self) -> &PromptDistribution;

    /// `P(y | x) · π(x)`, validated to lie in `[0, 1]`.
    fn joint_prob(&self, z: &PromptCompletion) -> Result<f64> {
        let cond = self.conditional_prob(z.prompt_index, &z.completion)?;
        if !(0.0..=1.0).contains(&cond) || cond.is_nan() {
            return Err(Error::InvalidProbability {
                prompt_index: z.prompt_index,
                value: cond,
            });
        }
        Ok(cond * self.prompt_distribution().weight(z.prompt_index))
    }
}

/// Oracle backed by an explicit table of conditional probabilities. Items
/// missing from the table have probability zero.
#[derive(Clone, Debug)]
pub struct TabularOracle {
    pi: PromptDistribution,
    table: HashMap<(usize, Completion), f64>,
}

impl TabularOracle {
    pub fn new(
        pi: PromptDistribution,
        entries: impl IntoIterator<Item = ((usize, Completion), f64)>,
    ) -> Self {
        Self {
            pi,
            table: entries.into_iter().collect(),
        }
    }

    /// The empirical conditional distribution of a pool: each entry of a
    /// prompt's list is equally likely. This is exactly the distribution that
    /// with-replacement sampling from the pool realizes.
    pub fn from_pool(pool: &crate::corpus::Pool, pi: &PromptDistribution) -> Self {
        let mut table: HashMap<(usize, Completion), f64> = HashMap::new();
        for i in 0..pi.len() {
            let list = pool.completions_for(i);
            if list.is_empty() {
                continue;
            }
            let per = 1.0 / list.len() as f64;
            for c in list {
                *table.entry((i, c.clone())).or_insert(0.0) += per;
            }
        }
        Self {
            pi: pi.clone(),
            table,
        }
    }
}

impl ProbabilityOracle for TabularOracle {
    fn conditional_prob(&self, prompt_index: usize, completion: &Completion) -> Result<f64> {
        Ok(self
            .table
            .get(&(prompt_index, completion.clone()))
            .copied()
            .unwrap_or(0.0))
    }

    fn prompt_distribution(&self) -> &PromptDistribution {
        &self.pi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GofKind {
    L1Gof,
    L2Gof,
    Pearson,
    TruncatedChi2,
    Lrt,
}

impl GofKind {
    pub const ALL: [GofKind; 5] = [
        GofKind::L1Gof,
        GofKind::L2Gof,
        GofKind::Pearson,
        GofKind::TruncatedChi2,
        GofKind::Lrt,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            GofKind::L1Gof => "l1_gof",
            GofKind::L2Gof => "l2_gof",
            GofKind::Pearson => "pearson",
            GofKind::TruncatedChi2 => "truncated_chi2",
            GofKind::Lrt => "lrt",
        }
    }
}

impl FromStr for GofKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1_gof" => Ok(GofKind::L1Gof),
            "l2_gof" => Ok(GofKind::L2Gof),
            "pearson" => Ok(GofKind::Pearson),
            "truncated_chi2" => Ok(GofKind::TruncatedChi2),
            "lrt" => Ok(GofKind::Lrt),
            other => Err(Error::InvalidConfig(format!(
                "unknown goodness-of-fit statistic '{other}'; valid: l1_gof | l2_gof | pearson | truncated_chi2 | lrt"
            ))),
        }
    }
}

impl std::fmt::Display for GofKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct GofStatistic {
    pub kind: GofKind,
    pub value: f64,
}

/// Default minimum denominator for the truncated chi-squared statistic. The
/// nominal floor `1 / |V^{≤L}|` underflows to zero for realistic spaces; this
/// keeps the guard meaningful without overflow.
pub const DEFAULT_FLOOR_EPSILON: f64 = 1e-300;

/// Observed-support goodness-of-fit statistic: sums run over the distinct
/// observed items, each weighted through its multiplicity `obs(z, D)`.
pub fn gof_statistic(
    kind: GofKind,
    oracle: &dyn ProbabilityOracle,
    d_api: &Sample,
    space: &SymbolSpace,
) -> Result<GofStatistic> {
    gof_statistic_with_floor(kind, oracle, d_api, space, DEFAULT_FLOOR_EPSILON)
}

pub fn gof_statistic_with_floor(
    kind: GofKind,
    oracle: &dyn ProbabilityOracle,
    d_api: &Sample,
    space: &SymbolSpace,
    floor_epsilon: f64,
) -> Result<GofStatistic> {
    if d_api.is_empty() {
        return Err(Error::SampleTooSmall { n: 0, min: 1 });
    }
    let n = d_api.len() as f64;
    let table = counts(d_api);
    let floor = truncation_floor(space, floor_epsilon);
    let mut acc = 0.0;
    for (z, c) in table.iter() {
        let obs = c as f64;
        let joint = oracle.joint_prob(z)?;
        let expected = n * joint;
        acc += match kind {
            GofKind::L1Gof => (obs - expected).abs(),
            GofKind::L2Gof => (obs - expected).powi(2),
            GofKind::Pearson => {
                if expected <= 0.0 {
                    return Err(Error::ZeroProbabilityObservation {
                        statistic: kind.name().into(),
                    });
                }
                (obs - expected).powi(2) / expected
            }
            GofKind::TruncatedChi2 => ((obs - expected).powi(2) - obs) / joint.max(floor),
            GofKind::Lrt => {
                if joint <= 0.0 {
                    return Err(Error::ZeroProbabilityObservation {
                        statistic: kind.name().into(),
                    });
                }
                -2.0 * obs * (obs / expected).ln()
            }
        };
    }
    Ok(GofStatistic { kind, value: acc })
}

/// `max(1 / |V^{≤L}|, floor_epsilon)` where `|V^{≤L}| = Σ_{l=0..L} |V|^l`,
/// evaluated in floating point (saturating to infinity for large spaces, in
/// which case the epsilon takes over).
fn truncation_floor(space: &SymbolSpace, floor_epsilon: f64) -> f64 {
    let v = space.vocab_size() as f64;
    let mut total = 1.0; // the empty string
    let mut power = 1.0;
    for _ in 0..space.max_length() {
        power *= v;
        total += power;
        if !total.is_finite() {
            break;
        }
    }
    let inv = if total.is_finite() { 1.0 / total } else { 0.0 };
    inv.max(floor_epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Prompt;

    fn sample(items: &[(usize, &str)]) -> Sample {
        Sample::new(
            items
                .iter()
                .map(|(i, s)| PromptCompletion::new(*i, *s))
                .collect(),
        )
    }

    fn delta_pi() -> PromptDistribution {
        PromptDistribution::uniform(vec![Prompt::new("p0", "x")]).unwrap()
    }

    fn oracle(entries: &[(&str, f64)]) -> TabularOracle {
        TabularOracle::new(
            delta_pi(),
            entries
                .iter()
                .map(|(s, p)| ((0, Completion::from_text(s)), *p)),
        )
    }

    #[test]
    fn l1_identical_is_zero() {
        let d = sample(&[(0, "a"), (0, "b")]);
        assert_eq!(l1_two_sample(&d, &d).unwrap(), 0.0);
    }

    #[test]
    fn l1_disjoint_is_two() {
        let d_p = sample(&[(0, "a"), (0, "b"), (0, "c")]);
        let d_q = sample(&[(0, "x"), (0, "y"), (0, "z")]);
        assert_eq!(l1_two_sample(&d_p, &d_q).unwrap(), 2.0);
    }

    #[test]
    fn l1_hand_case() {
        let d_p = sample(&[(0, "a"), (0, "a"), (0, "b")]);
        let d_q = sample(&[(0, "a"), (0, "b"), (0, "b")]);
        let v = l1_two_sample(&d_p, &d_q).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn l1_size_mismatch_is_error() {
        let d_p = sample(&[(0, "a")]);
        let d_q = sample(&[(0, "a"), (0, "b")]);
        assert!(l1_two_sample(&d_p, &d_q).is_err());
    }

    #[test]
    fn chi2_identical_pair() {
        let d = sample(&[(0, "a"), (0, "b")]);
        assert_eq!(chi2_two_sample(&d, &d).unwrap(), -8.0);
    }

    #[test]
    fn chi2_disjoint_pair() {
        let d_p = sample(&[(0, "a"), (0, "a")]);
        let d_q = sample(&[(0, "b"), (0, "b")]);
        assert_eq!(chi2_two_sample(&d_p, &d_q).unwrap(), 8.0);
    }

    #[test]
    fn chi2_identical_is_minus_n2_d() {
        // With obs_p = obs_q every union term is -1, so the total is -N²·D.
        let d = sample(&[(0, "a"), (0, "b"), (0, "b"), (1, "c")]);
        let distinct = 3.0;
        let n = 4.0;
        assert_eq!(chi2_two_sample(&d, &d).unwrap(), -(n * n) * distinct);
    }

    #[test]
    fn order_invariance() {
        let d_p = sample(&[(0, "a"), (0, "b"), (1, "c")]);
        let mut items = d_p.items().to_vec();
        items.reverse();
        let d_p_rev = Sample::new(items);
        let d_q = sample(&[(0, "b"), (0, "b"), (1, "c")]);
        assert_eq!(
            l1_two_sample(&d_p, &d_q).unwrap(),
            l1_two_sample(&d_p_rev, &d_q).unwrap()
        );
        assert_eq!(
            chi2_two_sample(&d_p, &d_q).unwrap(),
            chi2_two_sample(&d_p_rev, &d_q).unwrap()
        );
    }

    fn char_space() -> SymbolSpace {
        SymbolSpace::character(4).unwrap()
    }

    #[test]
    fn lrt_perfect_fit_is_zero() {
        let o = oracle(&[("a", 1.0)]);
        let d = sample(&[(0, "a"), (0, "a"), (0, "a")]);
        let v = gof_statistic(GofKind::Lrt, &o, &d, &char_space()).unwrap();
        assert_eq!(v.value, 0.0);
    }

    #[test]
    fn pearson_hand_case() {
        let o = oracle(&[("a", 0.5)]);
        let d = sample(&[(0, "a"), (0, "a")]);
        let v = gof_statistic(GofKind::Pearson, &o, &d, &char_space()).unwrap();
        assert!((v.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn l1_gof_hand_case() {
        let o = oracle(&[("a", 0.5)]);
        let d = sample(&[(0, "a"), (0, "a")]);
        let v = gof_statistic(GofKind::L1Gof, &o, &d, &char_space()).unwrap();
        assert!((v.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn l2_gof_hand_case() {
        // obs = 2, expected = 2·0.5 = 1 → (2-1)² = 1
        let o = oracle(&[("a", 0.5)]);
        let d = sample(&[(0, "a"), (0, "a")]);
        let v = gof_statistic(GofKind::L2Gof, &o, &d, &char_space()).unwrap();
        assert!((v.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn truncated_chi2_hand_case() {
        // Space: vocab 2, L 1 → |V^{≤L}| = 3, floor = 1/3.
        // obs = 2, joint = 0.5, expected = 1 → ((2-1)² - 2)/0.5 = -2.
        let space = SymbolSpace::token(2, 1).unwrap();
        let o = TabularOracle::new(delta_pi(), [((0usize, Completion::new(vec![0])), 0.5)]);
        let d = Sample::new(vec![
            PromptCompletion::new(0, Completion::new(vec![0])),
            PromptCompletion::new(0, Completion::new(vec![0])),
        ]);
        let v = gof_statistic(GofKind::TruncatedChi2, &o, &d, &space).unwrap();
        assert!((v.value - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn truncated_chi2_floor_engages_for_tiny_probability() {
        // joint below 1/|V^{≤L}| = 1/3 is clamped up to the floor.
        let space = SymbolSpace::token(2, 1).unwrap();
        let o = TabularOracle::new(delta_pi(), [((0usize, Completion::new(vec![0])), 0.01)]);
        let d = Sample::new(vec![PromptCompletion::new(0, Completion::new(vec![0]))]);
        let v = gof_statistic(GofKind::TruncatedChi2, &o, &d, &space)
            .unwrap()
            .value;
        let expected = ((1.0 - 0.01f64).powi(2) - 1.0) / (1.0 / 3.0);
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_probability_rejected_for_lrt_and_pearson() {
        let o = oracle(&[("a", 1.0)]);
        let d = sample(&[(0, "b")]);
        for kind in [GofKind::Lrt, GofKind::Pearson] {
            assert!(matches!(
                gof_statistic(kind, &o, &d, &char_space()),
                Err(Error::ZeroProbabilityObservation { .. })
            ));
        }
    }

    #[test]
    fn hatted_equals_full_support_when_support_is_covered() {
        // Explicit 4-outcome distribution; the sample covers the whole
        // support, so summing observed items equals summing the support.
        let probs = [0.4, 0.3, 0.2, 0.1];
        let names = ["a", "b", "c", "d"];
        let o = oracle(&names.iter().zip(probs).map(|(s, p)| (*s, p)).collect::<Vec<_>>());
        let d = sample(&[
            (0, "a"),
            (0, "a"),
            (0, "a"),
            (0, "b"),
            (0, "b"),
            (0, "c"),
            (0, "c"),
            (0, "d"),
        ]);
        let n = d.len() as f64;
        let table = counts(&d);
        for kind in GofKind::ALL {
            let hatted = gof_statistic(kind, &o, &d, &char_space()).unwrap().value;
            // Full-support sum computed directly from the explicit table.
            let mut full = 0.0;
            let floor = {
                // mirror of the internal floor for this small space
                let v = char_space().vocab_size() as f64;
                let mut total = 1.0;
                let mut power = 1.0;
                for _ in 0..char_space().max_length() {
                    power *= v;
                    total += power;
                }
                (1.0 / total).max(DEFAULT_FLOOR_EPSILON)
            };
            for (name, p) in names.iter().zip(probs) {
                let z = PromptCompletion::new(0, *name);
                let obs = table.get(&z) as f64;
                let expected = n * p;
                full += match kind {
                    GofKind::L1Gof => (obs - expected).abs(),
                    GofKind::L2Gof => (obs - expected).powi(2),
                    GofKind::Pearson => (obs - expected).powi(2) / expected,
                    GofKind::TruncatedChi2 => ((obs - expected).powi(2) - obs) / p.max(floor),
                    GofKind::Lrt => {
                        if obs == 0.0 {
                            0.0
                        } else {
                            -2.0 * obs * (obs / expected).ln()
                        }
                    }
                };
            }
            assert!(
                (hatted - full).abs() < 1e-12,
                "{kind}: hatted {hatted} vs full {full}"
            );
        }
    }
}
