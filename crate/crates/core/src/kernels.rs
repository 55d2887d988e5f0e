//! Similarity kernels on completions, normalized to unit self-similarity,
//! plus the prompt gate that lifts them to prompt-completion pairs.
//!
//! All kernels are symmetric with `k(y, y) = 1`. The position kernel divides
//! the raw position-match count by the space's maximum length so the unit-norm
//! premise holds; rescaling by a positive constant rescales every simulated
//! or permuted null draw by the same constant, so p-values are unchanged.

use std::str::FromStr;

use crate::corpus::{Completion, PromptCompletion, SymbolSpace};
use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Hamming,
    OneHot,
    AllSubstrings,
    Levenshtein,
}

impl KernelKind {
    pub const ALL: [KernelKind; 4] = [
        KernelKind::Hamming,
        KernelKind::OneHot,
        KernelKind::AllSubstrings,
        KernelKind::Levenshtein,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Hamming => "hamming",
            KernelKind::OneHot => "one_hot",
            KernelKind::AllSubstrings => "all_substrings",
            KernelKind::Levenshtein => "levenshtein",
        }
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "hamming" => Ok(KernelKind::Hamming),
            "one_hot" => Ok(KernelKind::OneHot),
            "all_substrings" => Ok(KernelKind::AllSubstrings),
            "levenshtein" => Ok(KernelKind::Levenshtein),
            other => Err(Error::InvalidConfig(format!(
                "unknown kernel '{other}'; valid kernels: hamming | one_hot | all_substrings | levenshtein"
            ))),
        }
    }
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A named completion kernel bound to a symbol space.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    kind: KernelKind,
    space: SymbolSpace,
}

impl Kernel {
    pub fn new(kind: KernelKind, space: SymbolSpace) -> Self {
        Self { kind, space }
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn space(&self) -> &SymbolSpace {
        &self.space
    }

    /// Same kernel bound to a different space.
    pub fn with_space(&self, space: SymbolSpace) -> Kernel {
        Kernel::new(self.kind, space)
    }

    /// Completion similarity in `[0, 1]` (Levenshtein: `(0, 1]`).
    pub fn evaluate(&self, y: &Completion, y2: &Completion) -> f64 {
        match self.kind {
            KernelKind::Hamming => hamming(y, y2, &self.space),
            KernelKind::OneHot => one_hot(y, y2),
            KernelKind::AllSubstrings => all_substrings(y, y2),
            KernelKind::Levenshtein => levenshtein(y, y2),
        }
    }

    /// Pair similarity: zero across different prompts, `evaluate` otherwise.
    pub fn gated(&self, z: &PromptCompletion, z2: &PromptCompletion) -> f64 {
        if z.prompt_index != z2.prompt_index {
            0.0
        } else {
            self.evaluate(&z.completion, &z2.completion)
        }
    }
}

/// Fraction of agreeing positions after right-padding both completions to the
/// space's maximum length with the reserved pad symbol. Pad positions agree
/// with pad positions, so `hamming(y, y) = 1` for any length.
pub fn hamming(y: &Completion, y2: &Completion, space: &SymbolSpace) -> f64 {
    let a = y.symbols();
    let b = y2.symbols();
    let max_len = space.max_length();
    debug_assert!(a.len() <= max_len && b.len() <= max_len);
    let overlap = a.len().min(b.len());
    let mut matches = 0usize;
    for i in 0..overlap {
        if a[i] == b[i] {
            matches += 1;
        }
    }
    // Positions past both lengths hold the pad symbol on each side; positions
    // between the two lengths pair a real symbol with pad and never match.
    matches += max_len - a.len().max(b.len());
    matches as f64 / max_len as f64
}

/// Exact-match indicator.
pub fn one_hot(y: &Completion, y2: &Completion) -> f64 {
    if y == y2 {
        1.0
    } else {
        0.0
    }
}

/// Shared-occurrence count over all non-empty substrings:
/// `raw(y, y') = Σ_s count(s, y) · count(s, y')`.
///
/// Each pair of start positions `(i, j)` contributes one shared occurrence
/// for every length up to the longest common extension of `y[i..]` and
/// `y'[j..]`, so the sum is computed in `O(|y|·|y'|)` by the common-extension
/// recurrence `ce(i, j) = [y_i = y'_j] · (ce(i+1, j+1) + 1)`.
pub fn all_substrings_raw(y: &Completion, y2: &Completion) -> u64 {
    let a = y.symbols();
    let b = y2.symbols();
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut total = 0u64;
    let mut next = vec![0u64; b.len() + 1];
    let mut cur = vec![0u64; b.len() + 1];
    for i in (0..a.len()).rev() {
        for j in (0..b.len()).rev() {
            cur[j] = if a[i] == b[j] { next[j + 1] + 1 } else { 0 };
            total += cur[j];
        }
        std::mem::swap(&mut next, &mut cur);
    }
    total
}

/// Cosine-normalized all-substrings similarity. Both empty → 1, exactly one
/// empty → 0.
pub fn all_substrings(y: &Completion, y2: &Completion) -> f64 {
    match (y.is_empty(), y2.is_empty()) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        (false, false) => {
            let cross = all_substrings_raw(y, y2) as f64;
            let self_a = all_substrings_raw(y, y) as f64;
            let self_b = all_substrings_raw(y2, y2) as f64;
            cross / (self_a * self_b).sqrt()
        }
    }
}

/// Unit-cost edit distance (insert / delete / substitute) on the unpadded
/// sequences.
pub fn edit_distance(y: &Completion, y2: &Completion) -> usize {
    let a = y.symbols();
    let b = y2.symbols();
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, &ca) in a.iter().enumerate() {
        let mut prev = row[0];
        row[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let tmp = row[j + 1];
            let sub = prev + usize::from(ca != cb);
            row[j + 1] = sub.min(tmp + 1).min(row[j] + 1);
            prev = tmp;
        }
    }
    row[b.len()]
}

/// `exp(-d)` with `d` the edit distance. Not guaranteed positive
/// semidefinite; the resulting distance estimates may be negative, which the
/// permutation machinery tolerates.
pub fn levenshtein(y: &Completion, y2: &Completion) -> f64 {
    (-(edit_distance(y, y2) as f64)).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SymbolSpace;

    fn space(l: usize) -> SymbolSpace {
        SymbolSpace::character(l).unwrap()
    }

    #[test]
    fn hamming_identity_is_one() {
        let y = Completion::from_text("abc");
        assert_eq!(hamming(&y, &y, &space(3)), 1.0);
    }

    #[test]
    fn hamming_disjoint_is_zero() {
        let y = Completion::from_text("abc");
        let y2 = Completion::from_text("xyz");
        assert_eq!(hamming(&y, &y2, &space(3)), 0.0);
    }

    #[test]
    fn hamming_counts_pad_agreement() {
        // match at position 1 plus two shared pad positions
        let y = Completion::from_text("ab");
        let y2 = Completion::from_text("ac");
        assert_eq!(hamming(&y, &y2, &space(4)), 0.75);
    }

    #[test]
    fn hamming_matches_naive_padded_loop() {
        let sp = space(6);
        let mut rng = crate::rng::RandomStream::from_seed(11);
        use rand::Rng;
        for _ in 0..500 {
            let len_a = rng.random_range(0..=6);
            let len_b = rng.random_range(0..=6);
            let a = Completion::new((0..len_a).map(|_| rng.random_range(0..4u32)).collect());
            let b = Completion::new((0..len_b).map(|_| rng.random_range(0..4u32)).collect());
            let pad = |c: &Completion| -> Vec<u32> {
                let mut v = c.symbols().to_vec();
                v.resize(sp.max_length(), sp.pad_id());
                v
            };
            let (pa, pb) = (pad(&a), pad(&b));
            let naive = pa.iter().zip(&pb).filter(|(x, y)| x == y).count() as f64
                / sp.max_length() as f64;
            assert_eq!(hamming(&a, &b, &sp), naive);
        }
    }

    #[test]
    fn one_hot_cases() {
        let abc = Completion::from_text("abc");
        let ab = Completion::from_text("ab");
        let empty = Completion::from_text("");
        assert_eq!(one_hot(&abc, &abc), 1.0);
        assert_eq!(one_hot(&abc, &ab), 0.0);
        assert_eq!(one_hot(&empty, &empty), 1.0);
    }

    #[test]
    fn all_substrings_identity_and_disjoint() {
        let aa = Completion::from_text("aa");
        assert_eq!(all_substrings_raw(&aa, &aa), 5);
        assert_eq!(all_substrings(&aa, &aa), 1.0);
        let ab = Completion::from_text("ab");
        let cd = Completion::from_text("cd");
        assert_eq!(all_substrings(&ab, &cd), 0.0);
    }

    #[test]
    fn all_substrings_ab_ba() {
        // raw("ab","ba") = 2 shared occurrences ("a", "b"); each self-raw = 3.
        let ab = Completion::from_text("ab");
        let ba = Completion::from_text("ba");
        assert_eq!(all_substrings_raw(&ab, &ba), 2);
        assert_eq!(all_substrings_raw(&ab, &ab), 3);
        let expected = 2.0 / 3.0;
        assert!((all_substrings(&ab, &ba) - expected).abs() < 1e-15);
    }

    #[test]
    fn all_substrings_empty_rules() {
        let empty = Completion::from_text("");
        let a = Completion::from_text("a");
        assert_eq!(all_substrings(&empty, &empty), 1.0);
        assert_eq!(all_substrings(&empty, &a), 0.0);
    }

    #[test]
    fn levenshtein_cases() {
        let abc = Completion::from_text("abc");
        assert_eq!(levenshtein(&abc, &abc), 1.0);
        let empty = Completion::from_text("");
        assert_eq!(levenshtein(&empty, &abc), (-3.0_f64).exp());
        let kitten = Completion::from_text("kitten");
        let sitting = Completion::from_text("sitting");
        assert_eq!(edit_distance(&kitten, &sitting), 3);
        assert_eq!(levenshtein(&kitten, &sitting), (-3.0_f64).exp());
    }

    #[test]
    fn gate_zeroes_across_prompts() {
        let k = Kernel::new(KernelKind::Hamming, space(3));
        let same = PromptCompletion::new(0, "abc");
        let same2 = PromptCompletion::new(0, "abc");
        let other = PromptCompletion::new(1, "abc");
        assert_eq!(k.gated(&same, &same2), 1.0);
        assert_eq!(k.gated(&same, &other), 0.0);
        let partial = PromptCompletion::new(0, "abd");
        let v = k.gated(&same, &partial);
        assert_eq!(v, hamming(&same.completion, &partial.completion, &space(3)));
    }

    #[test]
    fn kernel_names_parse() {
        for kind in KernelKind::ALL {
            assert_eq!(kind.name().parse::<KernelKind>().unwrap(), kind);
        }
        assert!("rbf".parse::<KernelKind>().is_err());
    }
}
