//! Communication-loss masks over (agent, timestep) slots.
//!
//! A masked slot means the agent's perception did not reach the ego at that
//! step. The ego row is never masked. Masked agents are removed from the
//! step's node set rather than zero-filled.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MAX_BLOCK: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlackoutMode {
    #[serde(rename = "random")]
    RandomStepwise,
    Sequential,
}

impl BlackoutMode {
    pub const ALL: [BlackoutMode; 2] = [BlackoutMode::RandomStepwise, BlackoutMode::Sequential];

    pub fn as_str(self) -> &'static str {
        match self {
            BlackoutMode::RandomStepwise => "random",
            BlackoutMode::Sequential => "sequential",
        }
    }
}

impl fmt::Display for BlackoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BlackoutMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" | "random-stepwise" | "stepwise" => Ok(BlackoutMode::RandomStepwise),
            "sequential" => Ok(BlackoutMode::Sequential),
            other => Err(Error::invalid(format!("unknown blackout mode {other:?} (random|sequential)"))),
        }
    }
}

/// How a blackout is drawn for each evaluated sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlackoutSpec {
    pub mode: BlackoutMode,
    /// Fraction in `[0, 1]`.
    pub pct: f64,
    pub max_block: usize,
    pub seed: u64,
}

impl BlackoutSpec {
    pub fn mask(&self, n_agents: usize, horizon: usize, ego: usize, sample_seed: u64) -> Result<BlackoutMask> {
        match self.mode {
            BlackoutMode::RandomStepwise => random_stepwise_mask(n_agents, horizon, ego, self.pct, sample_seed),
            BlackoutMode::Sequential => {
                sequential_block_mask(n_agents, horizon, ego, self.pct, self.max_block, sample_seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlackoutMask {
    /// `grid[agent][t]`, true when the slot is blacked out.
    pub grid: Vec<Vec<bool>>,
    pub mode: BlackoutMode,
    pub pct: f64,
    pub seed: u64,
    pub ego: usize,
}

impl BlackoutMask {
    /// Mask with nothing blacked out.
    pub fn none(n_agents: usize, horizon: usize, ego: usize) -> Self {
        BlackoutMask {
            grid: vec![vec![false; horizon]; n_agents],
            mode: BlackoutMode::RandomStepwise,
            pct: 0.0,
            seed: 0,
            ego,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.grid.len()
    }

    pub fn horizon(&self) -> usize {
        self.grid.first().map_or(0, Vec::len)
    }

    pub fn masked_count(&self) -> usize {
        self.grid.iter().flatten().filter(|&&m| m).count()
    }

    pub fn is_masked(&self, agent: usize, t: usize) -> bool {
        self.grid[agent][t]
    }

    /// Longest run of consecutive masked steps of any agent.
    pub fn longest_run(&self) -> usize {
        self.grid
            .iter()
            .map(|row| {
                row.iter()
                    .fold((0, 0), |(best, cur), &m| {
                        let cur = if m { cur + 1 } else { 0 };
                        (best.max(cur), cur)
                    })
                    .0
            })
            .max()
            .unwrap_or(0)
    }
}

fn check_args(n_agents: usize, horizon: usize, ego: usize, pct: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&pct) {
        return Err(Error::invalid(format!("blackout percentage must lie in [0, 1], got {pct}")));
    }
    if ego >= n_agents || horizon == 0 {
        return Err(Error::invalid(format!(
            "ego {ego} out of range for {n_agents} agents and horizon {horizon}"
        )));
    }
    Ok(())
}

/// Number of slots masked at fraction `pct` of the non-ego slots.
pub fn budget(n_agents: usize, horizon: usize, pct: f64) -> usize {
    (pct * (n_agents.saturating_sub(1) * horizon) as f64).round() as usize
}

/// Exactly `budget` non-ego slots chosen uniformly without replacement.
pub fn random_stepwise_mask(n_agents: usize, horizon: usize, ego: usize, pct: f64, seed: u64) -> Result<BlackoutMask> {
    check_args(n_agents, horizon, ego, pct)?;
    let mut mask = BlackoutMask {
        mode: BlackoutMode::RandomStepwise,
        pct,
        seed,
        ..BlackoutMask::none(n_agents, horizon, ego)
    };
    let slots: Vec<(usize, usize)> = (0..n_agents)
        .filter(|&a| a != ego)
        .flat_map(|a| (0..horizon).map(move |t| (a, t)))
        .collect();
    let k = budget(n_agents, horizon, pct);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in sample(&mut rng, slots.len(), k) {
        let (a, t) = slots[i];
        mask.grid[a][t] = true;
    }
    Ok(mask)
}

/// Length of the masked run that would contain `t` if it were masked.
fn merged_run(row: &[bool], t: usize) -> usize {
    let left = row[..t].iter().rev().take_while(|&&m| m).count();
    let right = row[t + 1..].iter().take_while(|&&m| m).count();
    left + 1 + right
}

/// Contiguous blocks of at most `max_block` steps until exactly the budget
/// of non-ego slots is masked.
///
/// Blocks are drawn as (agent, length in `[1, max_block]`, start). Slots
/// already masked are skipped, and a block stops early rather than merge
/// into a run longer than `max_block`.
pub fn sequential_block_mask(
    n_agents: usize,
    horizon: usize,
    ego: usize,
    pct: f64,
    max_block: usize,
    seed: u64,
) -> Result<BlackoutMask> {
    check_args(n_agents, horizon, ego, pct)?;
    if max_block == 0 {
        return Err(Error::invalid("max_block must be >= 1"));
    }
    let target = budget(n_agents, horizon, pct);
    let per_agent = horizon - horizon / (max_block + 1);
    if target > per_agent * (n_agents - 1) {
        return Err(Error::invalid(format!(
            "cannot mask {target} slots with runs of at most {max_block} steps"
        )));
    }
    let mut mask = BlackoutMask {
        mode: BlackoutMode::Sequential,
        pct,
        seed,
        ..BlackoutMask::none(n_agents, horizon, ego)
    };
    let others: Vec<usize> = (0..n_agents).filter(|&a| a != ego).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = 0;
    let mut idle = 0usize;
    while count < target && idle < 10_000 {
        let agent = others[rng.random_range(0..others.len())];
        let len = rng.random_range(1..=max_block);
        let start = rng.random_range(0..horizon);
        let before = count;
        let row = &mut mask.grid[agent];
        for t in start..(start + len).min(horizon) {
            if count == target {
                break;
            }
            if row[t] {
                continue;
            }
            if merged_run(row, t) > max_block {
                break;
            }
            row[t] = true;
            count += 1;
        }
        idle = if count == before { idle + 1 } else { 0 };
    }
    // Near capacity random draws rarely fit; finish with an ordered sweep.
    for &agent in &others {
        for t in 0..horizon {
            if count == target {
                break;
            }
            let row = &mut mask.grid[agent];
            if !row[t] && merged_run(row, t) <= max_block {
                row[t] = true;
                count += 1;
            }
        }
    }
    if count < target {
        return Err(Error::invalid(format!(
            "placed {count} of {target} slots before runs of {max_block} filled every gap"
        )));
    }
    Ok(mask)
}

/// Node lists per timestep for classifying `ego`: the ego first, then every
/// unmasked agent in index order.
pub fn apply_mask(n_agents: usize, horizon: usize, ego: usize, mask: Option<&BlackoutMask>) -> Result<Vec<Vec<usize>>> {
    if ego >= n_agents {
        return Err(Error::invalid(format!("ego {ego} out of range for {n_agents} agents")));
    }
    if let Some(m) = mask {
        if m.n_agents() != n_agents || m.horizon() != horizon {
            return Err(Error::Shape {
                op: "apply_mask",
                left: vec![m.n_agents(), m.horizon()],
                right: vec![n_agents, horizon],
            });
        }
        if m.grid[ego].iter().any(|&b| b) {
            return Err(Error::invalid("blackout mask covers the ego agent"));
        }
    }
    Ok((0..horizon)
        .map(|t| {
            std::iter::once(ego)
                .chain((0..n_agents).filter(|&a| a != ego && !mask.is_some_and(|m| m.grid[a][t])))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_pct_is_empty() {
        assert_eq!(random_stepwise_mask(6, 100, 0, 0.0, 1).unwrap().masked_count(), 0);
        assert_eq!(sequential_block_mask(6, 100, 0, 0.0, 10, 1).unwrap().masked_count(), 0);
    }

    #[test]
    fn quarter_of_five_agents() {
        let m = random_stepwise_mask(6, 100, 2, 0.25, 9).unwrap();
        assert_eq!(m.masked_count(), 125);
        assert!(m.grid[2].iter().all(|&b| !b));
    }

    #[test]
    fn rejects_bad_pct() {
        assert!(random_stepwise_mask(6, 100, 0, 1.5, 0).is_err());
        assert!(sequential_block_mask(6, 100, 0, -0.1, 10, 0).is_err());
    }

    #[test]
    fn near_capacity_still_exact() {
        let m = sequential_block_mask(3, 22, 0, 0.9, 10, 4).unwrap();
        assert_eq!(m.masked_count(), budget(3, 22, 0.9));
        assert!(m.longest_run() <= 10);
    }

    #[test]
    fn apply_mask_orders_ego_first() {
        let mut m = BlackoutMask::none(4, 2, 2);
        m.grid[0][1] = true;
        let nodes = apply_mask(4, 2, 2, Some(&m)).unwrap();
        assert_eq!(nodes, vec![vec![2, 0, 1, 3], vec![2, 1, 3]]);
        m.grid[2][0] = true;
        assert!(apply_mask(4, 2, 2, Some(&m)).is_err());
    }
}
