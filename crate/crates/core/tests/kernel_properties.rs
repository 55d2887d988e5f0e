//! Property checks for the completion kernels: unit diagonal, symmetry,
//! positive semidefiniteness, and agreement with brute-force oracles.

use eqtest_core::corpus::{Completion, SymbolSpace};
use eqtest_core::kernels::{
    all_substrings, all_substrings_raw, edit_distance, hamming, Kernel, KernelKind,
};
use eqtest_core::rng::RandomStream;
use rand::Rng;

fn random_completion(rng: &mut RandomStream, max_len: usize, vocab: u32) -> Completion {
    let len = rng.random_range(0..=max_len);
    Completion::new((0..len).map(|_| rng.random_range(0..vocab)).collect())
}

#[test]
fn unit_diagonal_for_all_kernels() {
    let space = SymbolSpace::token(6, 10).unwrap();
    let mut rng = RandomStream::from_seed(101);
    for kind in KernelKind::ALL {
        let kernel = Kernel::new(kind, space);
        for _ in 0..1000 {
            let y = random_completion(&mut rng, 10, 6);
            let v = kernel.evaluate(&y, &y);
            match kind {
                KernelKind::OneHot | KernelKind::Levenshtein => assert_eq!(v, 1.0, "{kind}"),
                _ => assert!((v - 1.0).abs() < 1e-12, "{kind}: {v}"),
            }
        }
    }
}

#[test]
fn symmetry_is_exact() {
    let space = SymbolSpace::token(5, 8).unwrap();
    let mut rng = RandomStream::from_seed(202);
    for kind in KernelKind::ALL {
        let kernel = Kernel::new(kind, space);
        for _ in 0..500 {
            let a = random_completion(&mut rng, 8, 5);
            let b = random_completion(&mut rng, 8, 5);
            assert_eq!(kernel.evaluate(&a, &b), kernel.evaluate(&b, &a), "{kind}");
        }
    }
}

#[test]
fn gram_matrices_are_positive_semidefinite() {
    // Levenshtein is excluded: exp(-edit distance) carries no such guarantee.
    let space = SymbolSpace::token(4, 6).unwrap();
    let mut rng = RandomStream::from_seed(303);
    for kind in [KernelKind::Hamming, KernelKind::OneHot, KernelKind::AllSubstrings] {
        let kernel = Kernel::new(kind, space);
        for _ in 0..50 {
            let n = rng.random_range(2..=12);
            let items: Vec<Completion> = (0..n).map(|_| random_completion(&mut rng, 6, 4)).collect();
            let mut gram = nalgebra::DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    gram[(i, j)] = kernel.evaluate(&items[i], &items[j]);
                }
            }
            let eigen = gram.symmetric_eigen();
            let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(min >= -1e-9, "{kind}: min eigenvalue {min}");
        }
    }
}

/// Brute-force all-substrings oracle: enumerate every non-empty substring of
/// both sequences and take the dot product of occurrence counts.
fn substring_counts(y: &Completion) -> std::collections::HashMap<Vec<u32>, u64> {
    let s = y.symbols();
    let mut counts = std::collections::HashMap::new();
    for i in 0..s.len() {
        for j in (i + 1)..=s.len() {
            *counts.entry(s[i..j].to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

fn brute_force_raw(a: &Completion, b: &Completion) -> u64 {
    let ca = substring_counts(a);
    let cb = substring_counts(b);
    ca.iter()
        .map(|(s, na)| na * cb.get(s).copied().unwrap_or(0))
        .sum()
}

#[test]
fn all_substrings_dp_matches_enumeration() {
    let mut rng = RandomStream::from_seed(404);
    for _ in 0..200 {
        let a = random_completion(&mut rng, 8, 3);
        let b = random_completion(&mut rng, 8, 3);
        assert_eq!(all_substrings_raw(&a, &b), brute_force_raw(&a, &b));
        // the normalized value follows from the same raw integers
        let expected = match (a.is_empty(), b.is_empty()) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => {
                brute_force_raw(&a, &b) as f64
                    / ((brute_force_raw(&a, &a) as f64) * (brute_force_raw(&b, &b) as f64)).sqrt()
            }
        };
        assert_eq!(all_substrings(&a, &b), expected);
    }
}

/// Full-matrix textbook edit-distance oracle.
fn edit_distance_oracle(a: &[u32], b: &[u32]) -> usize {
    let (n, m) = (a.len(), b.len());
    let mut dp = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in dp.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        dp[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let cost = usize::from(a[i - 1] != b[j - 1]);
            dp[i][j] = (dp[i - 1][j] + 1)
                .min(dp[i][j - 1] + 1)
                .min(dp[i - 1][j - 1] + cost);
        }
    }
    dp[n][m]
}

#[test]
fn edit_distance_matches_full_matrix_oracle() {
    let mut rng = RandomStream::from_seed(505);
    for _ in 0..200 {
        let a = random_completion(&mut rng, 10, 4);
        let b = random_completion(&mut rng, 10, 4);
        assert_eq!(
            edit_distance(&a, &b),
            edit_distance_oracle(a.symbols(), b.symbols())
        );
    }
}

#[test]
fn hamming_times_length_counts_agreeing_positions() {
    let space = SymbolSpace::token(4, 7).unwrap();
    let mut rng = RandomStream::from_seed(606);
    for _ in 0..500 {
        let a = random_completion(&mut rng, 7, 4);
        let b = random_completion(&mut rng, 7, 4);
        let pad = |c: &Completion| {
            let mut v = c.symbols().to_vec();
            v.resize(space.max_length(), space.pad_id());
            v
        };
        let agree = pad(&a)
            .iter()
            .zip(pad(&b))
            .filter(|(x, y)| **x == *y)
            .count();
        let v = hamming(&a, &b, &space) * space.max_length() as f64;
        assert!((v - agree as f64).abs() < 1e-12);
    }
}

mod proptest_invariants {
    use super::*;
    use proptest::prelude::*;

    fn completion_strategy() -> impl Strategy<Value = Completion> {
        proptest::collection::vec(0u32..5, 0..8).prop_map(Completion::new)
    }

    proptest! {
        #[test]
        fn kernels_are_symmetric_and_bounded(a in completion_strategy(), b in completion_strategy()) {
            let space = SymbolSpace::token(5, 8).unwrap();
            for kind in KernelKind::ALL {
                let k = Kernel::new(kind, space);
                let ab = k.evaluate(&a, &b);
                let ba = k.evaluate(&b, &a);
                prop_assert_eq!(ab, ba);
                prop_assert!((0.0..=1.0).contains(&ab));
            }
        }

        #[test]
        fn levenshtein_triangle_on_distances(
            a in completion_strategy(),
            b in completion_strategy(),
            c in completion_strategy(),
        ) {
            let dab = edit_distance(&a, &b);
            let dbc = edit_distance(&b, &c);
            let dac = edit_distance(&a, &c);
            prop_assert!(dac <= dab + dbc);
        }
    }
}
