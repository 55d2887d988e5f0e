//! Named, seeded constructors for synthetic pools, so calibration and power
//! experiments are self-contained: position-process pools with optional
//! per-position perturbation, uniform random pools, and tiny explicit pools.

use rand::Rng;

use crate::corpus::{Completion, Pool, Prompt, PromptDistribution, SymbolSpace};
use crate::error::Result;
use crate::rng::RandomStream;

/// Prompts `p0..p{m-1}` with placeholder texts.
pub fn uniform_prompts(m: usize) -> Vec<Prompt> {
    (0..m)
        .map(|i| Prompt::new(format!("p{i}"), format!("prompt {i}")))
        .collect()
}

/// Single-prompt character-space pool over the given completion texts; the
/// space's maximum length fits the longest entry.
pub fn single_prompt_pool(completions: &[&str]) -> Pool {
    let max_len = completions
        .iter()
        .map(|s| s.chars().count())
        .max()
        .unwrap_or(0)
        .max(1);
    let space = SymbolSpace::character(max_len).expect("positive length");
    Pool::new(
        space,
        vec![Prompt::new("p0", "prompt 0")],
        vec![completions.iter().map(|s| Completion::from_text(s)).collect()],
        "synthetic",
    )
    .expect("completions fit the derived space")
}

/// Pool of uniformly random completions: `per_prompt` entries per prompt,
/// lengths uniform over `len_range`, symbols uniform over the vocabulary.
pub fn random_pool(
    space: SymbolSpace,
    m: usize,
    per_prompt: usize,
    len_range: std::ops::RangeInclusive<usize>,
    label: &str,
    rng: &mut RandomStream,
) -> Result<(Pool, PromptDistribution)> {
    let prompts = uniform_prompts(m);
    let mut completions = Vec::with_capacity(m);
    for _ in 0..m {
        let mut list = Vec::with_capacity(per_prompt);
        for _ in 0..per_prompt {
            let len = rng.random_range(len_range.clone());
            let symbols = (0..len)
                .map(|_| rng.random_range(0..space.vocab_size()))
                .collect();
            list.push(Completion::new(symbols));
        }
        completions.push(list);
    }
    let pool = Pool::new(space, prompts.clone(), completions, label)?;
    let pi = PromptDistribution::uniform(prompts)?;
    Ok((pool, pi))
}

/// Parameters of the position-process generator. Each position of each
/// completion is drawn independently: the background symbol for (prompt,
/// position) gets `background_weight`, the rest of the vocabulary shares the
/// remainder uniformly. Positions at or past `perturb_from` are then
/// resampled uniformly over the whole vocabulary with probability `noise`,
/// which tilts every affected position's marginal by the same small amount.
#[derive(Clone, Copy, Debug)]
pub struct PositionProcess {
    pub background_weight: f64,
    pub noise: f64,
    pub perturb_from: usize,
}

impl PositionProcess {
    /// Undistorted base process.
    pub fn base(background_weight: f64) -> Self {
        Self {
            background_weight,
            noise: 0.0,
            perturb_from: 0,
        }
    }

    /// Distortion spread over every position.
    pub fn many_position_perturbation(background_weight: f64, noise: f64) -> Self {
        Self {
            background_weight,
            noise,
            perturb_from: 0,
        }
    }

    /// Distortion confined to the suffix starting at `from`.
    pub fn suffix_perturbation(background_weight: f64, noise: f64, from: usize) -> Self {
        Self {
            background_weight,
            noise,
            perturb_from: from,
        }
    }
}

/// Pool of full-length completions drawn from a [`PositionProcess`]. Two
/// calls with the same `m` produce pools over identical prompt tables, so a
/// base pool and a perturbed pool can share one prompt distribution.
pub fn product_pool(
    space: SymbolSpace,
    m: usize,
    per_prompt: usize,
    process: PositionProcess,
    label: &str,
    rng: &mut RandomStream,
) -> Result<Pool> {
    let v = space.vocab_size();
    let l = space.max_length();
    let prompts = uniform_prompts(m);
    let mut completions = Vec::with_capacity(m);
    for x in 0..m {
        let mut list = Vec::with_capacity(per_prompt);
        for _ in 0..per_prompt {
            let mut symbols = Vec::with_capacity(l);
            for i in 0..l {
                let background = ((x + i) as u32) % v;
                let mut symbol = if rng.random::<f64>() < process.background_weight {
                    background
                } else {
                    // uniform over the other v-1 symbols
                    let draw = rng.random_range(0..v - 1);
                    if draw >= background {
                        draw + 1
                    } else {
                        draw
                    }
                };
                if i >= process.perturb_from && process.noise > 0.0 && rng.random::<f64>() < process.noise {
                    symbol = rng.random_range(0..v);
                }
                symbols.push(symbol);
            }
            list.push(Completion::new(symbols));
        }
        completions.push(list);
    }
    Pool::new(space, prompts, completions, label)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_pools_share_prompt_tables() {
        let space = SymbolSpace::token(8, 6).unwrap();
        let base = product_pool(
            space,
            3,
            5,
            PositionProcess::base(0.7),
            "base",
            &mut RandomStream::from_seed(1),
        )
        .unwrap();
        let alt = product_pool(
            space,
            3,
            5,
            PositionProcess::many_position_perturbation(0.7, 0.2),
            "alt",
            &mut RandomStream::from_seed(2),
        )
        .unwrap();
        assert_eq!(base.prompts(), alt.prompts());
        assert!(base.completions_for(0).iter().all(|c| c.len() == 6));
    }

    #[test]
    fn suffix_process_leaves_prefix_at_base_rates() {
        // With noise confined to the suffix, prefix positions still follow
        // the base marginal; check the background frequency roughly.
        let space = SymbolSpace::token(4, 8).unwrap();
        let pool = product_pool(
            space,
            1,
            2000,
            PositionProcess::suffix_perturbation(0.8, 0.5, 4),
            "suffix",
            &mut RandomStream::from_seed(3),
        )
        .unwrap();
        let freq_background = |pos: usize| {
            let hits = pool
                .completions_for(0)
                .iter()
                .filter(|c| c.symbols()[pos] == (pos as u32 % 4))
                .count();
            hits as f64 / 2000.0
        };
        assert!((freq_background(0) - 0.8).abs() < 0.05);
        // Perturbed suffix position: 0.5·0.8 + 0.5·0.25 = 0.525
        assert!((freq_background(6) - 0.525).abs() < 0.05);
    }

    #[test]
    fn random_pool_respects_bounds() {
        let space = SymbolSpace::token(8, 5).unwrap();
        let (pool, pi) = random_pool(space, 5, 40, 1..=5, "rand", &mut RandomStream::from_seed(4)).unwrap();
        assert_eq!(pi.len(), 5);
        assert_eq!(pool.total_completions(), 200);
    }
}
