//! Compare/Swap sorting environment.
//!
//! The agent never sees array values. `Compare i j` reveals the three-way
//! order of two positions; `Swap` exchanges the most recently compared pair
//! and reports whether the array became sorted. Rewards come on two channels
//! that are discounted separately: a short channel (step penalty, swap
//! bonus or disorder penalty, invalid-action penalty, guidance) and a long
//! channel carrying only the sorting-success reward.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{Operation, Outcome, Trajectory, MAX_N, MIN_MARKED_N};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub step_penalty: f64,
    pub good_swap_reward: f64,
    /// Added when a swap puts a previously ordered pair out of order.
    pub bad_swap_penalty: f64,
    pub success_reward: f64,
    pub invalid_action_penalty: f64,
    pub gamma_short: f64,
    pub gamma_long: f64,
    pub guidance_coefficient: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            step_penalty: -0.3,
            good_swap_reward: 1.0,
            bad_swap_penalty: -1.0,
            success_reward: 0.5,
            invalid_action_penalty: -1.0,
            gamma_short: 0.7,
            gamma_long: 0.99,
            guidance_coefficient: 0.02,
        }
    }
}

impl RewardSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        let gammas_ok = 0.0 < self.gamma_short && self.gamma_short <= self.gamma_long && self.gamma_long < 1.0;
        if !gammas_ok {
            return Err(EnvError::InvalidConfig(format!(
                "discounts must satisfy 0 < gamma_short <= gamma_long < 1, got {} and {}",
                self.gamma_short, self.gamma_long
            )));
        }
        if !(self.guidance_coefficient >= 0.0) {
            return Err(EnvError::InvalidConfig("guidance_coefficient must be >= 0".into()));
        }
        let finite = [
            self.step_penalty,
            self.good_swap_reward,
            self.bad_swap_penalty,
            self.success_reward,
            self.invalid_action_penalty,
        ];
        if finite.iter().any(|r| !r.is_finite()) {
            return Err(EnvError::InvalidConfig("rewards must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrayDistribution {
    /// A shuffled permutation of `1..=n`.
    Permutation,
    /// `n` values drawn independently from `1..=n`.
    WithDuplicates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub sizes: Vec<usize>,
    pub step_cap_multiplier: usize,
    pub rewards: RewardSpec,
    pub array_distribution: ArrayDistribution,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            sizes: vec![6, 8, 10, 12, 14],
            step_cap_multiplier: 3,
            rewards: RewardSpec::default(),
            array_distribution: ArrayDistribution::Permutation,
        }
    }
}

impl EnvConfig {
    pub fn with_sizes(sizes: &[usize]) -> Self {
        EnvConfig {
            sizes: sizes.to_vec(),
            ..EnvConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.sizes.is_empty() {
            return Err(EnvError::InvalidConfig("at least one array size is required".into()));
        }
        if let Some(&n) = self.sizes.iter().find(|&&n| !(MIN_MARKED_N..=MAX_N).contains(&n)) {
            return Err(EnvError::UnsupportedSize(n));
        }
        if self.step_cap_multiplier < 1 {
            return Err(EnvError::InvalidConfig("step_cap_multiplier must be >= 1".into()));
        }
        self.rewards.validate()
    }

    pub fn step_cap(&self, n: usize) -> usize {
        self.step_cap_multiplier * n * n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardPair {
    pub short: f64,
    pub long: f64,
}

impl RewardPair {
    pub const ZERO: RewardPair = RewardPair { short: 0.0, long: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    InProgress,
    Sorted,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("array size {0} is not supported by this environment")]
    UnsupportedSize(usize),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("index {index} out of range for array length {n}")]
    IndexOutOfRange { index: usize, n: usize, reward: RewardPair },
    #[error("swap requested before any compare")]
    NoPriorCompare { reward: RewardPair },
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

impl EnvError {
    /// Penalty charged for an invalid action, if this error consumed a step.
    pub fn reward(&self) -> Option<RewardPair> {
        match self {
            EnvError::IndexOutOfRange { reward, .. } | EnvError::NoPriorCompare { reward } => Some(*reward),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SortEnv {
    config: EnvConfig,
}

impl SortEnv {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(SortEnv { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reset(&self, n: usize, seed: u64) -> Result<EnvState, EnvError> {
        if !self.config.sizes.contains(&n) {
            return Err(EnvError::UnsupportedSize(n));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // a sorted start could only end by the step cap, so it is redrawn
        let array = loop {
            let a = match self.config.array_distribution {
                ArrayDistribution::Permutation => {
                    let mut a: Vec<i64> = (1..=n as i64).collect();
                    a.shuffle(&mut rng);
                    a
                }
                ArrayDistribution::WithDuplicates => (0..n).map(|_| rng.gen_range(1..=n as i64)).collect(),
            };
            if !is_sorted(&a) {
                break a;
            }
        };
        Ok(EnvState::from_array(array, self.config.rewards, self.config.step_cap(n)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    array: Vec<i64>,
    pub n: usize,
    pub last_compared: Option<(usize, usize)>,
    pub steps_used: usize,
    pub step_cap: usize,
    pub done: bool,
    pub status: EpisodeStatus,
    pub trajectory: Trajectory,
    rewards: RewardSpec,
}

impl EnvState {
    /// Episode over an explicit array; `step_cap` is the absolute step budget.
    pub fn from_array(array: Vec<i64>, rewards: RewardSpec, step_cap: usize) -> Self {
        let n = array.len();
        EnvState {
            array,
            n,
            last_compared: None,
            steps_used: 0,
            step_cap,
            done: false,
            status: EpisodeStatus::InProgress,
            trajectory: Trajectory::new(n),
            rewards,
        }
    }

    /// The hidden array. Agents must not read this; it exists for drivers,
    /// oracles and tests.
    pub fn array(&self) -> &[i64] {
        &self.array
    }

    pub fn rewards(&self) -> &RewardSpec {
        &self.rewards
    }

    pub fn is_sorted(&self) -> bool {
        is_sorted(&self.array)
    }

    fn consume_step(&mut self) {
        self.steps_used += 1;
        if !self.done && self.steps_used >= self.step_cap {
            self.done = true;
            self.status = EpisodeStatus::StepLimit;
        }
    }

    fn penalty(&self) -> RewardPair {
        RewardPair {
            short: self.rewards.step_penalty + self.rewards.invalid_action_penalty,
            long: 0.0,
        }
    }

    pub fn step_compare(&mut self, i: usize, j: usize) -> Result<(Outcome, RewardPair), EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        if let Some(index) = [i, j].into_iter().find(|&k| k >= self.n) {
            let reward = self.penalty();
            self.consume_step();
            return Err(EnvError::IndexOutOfRange { index, n: self.n, reward });
        }
        let outcome = Outcome::of(&self.array[i], &self.array[j]);
        self.trajectory.ops.push(Operation::Compare {
            i: i as u8,
            j: j as u8,
            outcome,
        });
        self.last_compared = Some((i, j));
        self.consume_step();
        Ok((
            outcome,
            RewardPair {
                short: self.rewards.step_penalty,
                long: 0.0,
            },
        ))
    }

    pub fn step_swap(&mut self) -> Result<(bool, RewardPair), EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let Some((i, j)) = self.last_compared else {
            let reward = self.penalty();
            self.consume_step();
            return Err(EnvError::NoPriorCompare { reward });
        };
        let (lo, hi) = (i.min(j), i.max(j));
        let mut short = self.rewards.step_penalty;
        if self.array[lo] > self.array[hi] {
            short += self.rewards.good_swap_reward;
        } else if self.array[lo] < self.array[hi] {
            short += self.rewards.bad_swap_penalty;
        }
        self.array.swap(i, j);
        self.trajectory.ops.push(Operation::Swap);
        let sorted = self.is_sorted();
        let mut long = 0.0;
        if sorted {
            long = self.rewards.success_reward;
            self.done = true;
            self.status = EpisodeStatus::Sorted;
        }
        self.consume_step();
        Ok((sorted, RewardPair { short, long }))
    }
}

pub fn is_sorted<T: PartialOrd>(values: &[T]) -> bool {
    values.windows(2).all(|w| w[0] <= w[1])
}
