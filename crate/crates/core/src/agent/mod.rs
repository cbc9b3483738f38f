//! Epsilon-greedy action-value learner over the trajectory grammar.
//!
//! After every episode the value of each agent-chosen token is regressed
//! toward the two-channel discounted return of the operation it belongs to
//! (Monte Carlo targets, one Adam step per episode). With a trajectory
//! language model attached, each completed operation's short-channel reward
//! also gets `-c * sum(-ln p)` over its agent tokens.

pub mod net;
pub mod policy;

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{EnvConfig, EnvError, EnvState, RewardPair, SortEnv};
use crate::tlm::{with_bos, TlmError, TlmModel};
use crate::vocab::{GrammarState, Operation, Phase, Token, VOCAB_SIZE};

pub use net::{Adam, NetShape};
pub use policy::{
    epsilon_greedy, greedy_choice, load_policy, save_policy, select_action, ActionPolicy, BubbleSortPolicy,
    ModelPolicy, PolicyModel, RandomPolicy, POLICY_MAGIC,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent config: {0}")]
    InvalidConfig(String),
    #[error("contract violation: {0}")]
    ContractViolation(String),
    #[error("reward sequences differ in length ({short} short, {long} long)")]
    LengthMismatch { short: usize, long: usize },
    #[error("guidance is enabled but no trajectory model was given")]
    MissingTlm,
    #[error("metrics sink failed: {0}")]
    SinkFailure(io::Error),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
    #[error("unsupported policy file: {0}")]
    VersionMismatch(String),
    #[error("corrupt policy file: {0}")]
    CorruptFile(String),
    #[error("i/o: {0}")]
    Io(io::Error),
}

impl From<TlmError> for AgentError {
    fn from(e: TlmError) -> Self {
        match e {
            TlmError::CorruptFile(m) => AgentError::CorruptFile(m),
            TlmError::VersionMismatch => AgentError::VersionMismatch("trajectory model file".into()),
            other => AgentError::CorruptFile(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonSchedule {
    pub initial: f64,
    pub floor: f64,
    pub decay_unit: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            initial: 0.5,
            floor: 0.05,
            decay_unit: 1000.0,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<(), AgentError> {
        if !(0.0 <= self.floor && self.floor <= self.initial && self.initial <= 1.0) {
            return Err(AgentError::InvalidConfig(format!(
                "epsilon needs 0 <= floor ({}) <= initial ({}) <= 1",
                self.floor, self.initial
            )));
        }
        if !(self.decay_unit > 0.0) {
            return Err(AgentError::InvalidConfig("epsilon decay unit must be positive".into()));
        }
        Ok(())
    }
}

pub fn epsilon_at(s: &EpsilonSchedule, episode: u64) -> f64 {
    s.floor.max(s.initial * (-(episode as f64) / s.decay_unit).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub context_window: usize,
    pub net_layers: usize,
    pub net_heads: usize,
    pub net_dim: usize,
    pub ffn_dim: usize,
    pub learning_rate: f64,
    /// Global gradient-norm clip per update; `None` disables it.
    pub clip_norm: Option<f64>,
    pub episodes: u64,
    pub epsilon: EpsilonSchedule,
    pub guidance_enabled: bool,
    pub guidance_coefficient: f64,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            context_window: 256,
            net_layers: 4,
            net_heads: 8,
            net_dim: 192,
            ffn_dim: 384,
            learning_rate: 1e-4,
            clip_norm: Some(1.0),
            episodes: 50_000,
            epsilon: EpsilonSchedule::default(),
            guidance_enabled: false,
            guidance_coefficient: 0.02,
            seed: 0,
        }
    }
}

impl AgentConfig {
    /// Reduced network that trains on one core in minutes.
    pub fn desk() -> Self {
        AgentConfig {
            context_window: 64,
            net_layers: 2,
            net_heads: 4,
            net_dim: 32,
            ffn_dim: 64,
            learning_rate: 1e-3,
            episodes: 20_000,
            ..AgentConfig::default()
        }
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            layers: self.net_layers,
            heads: self.net_heads,
            dim: self.net_dim,
            ffn_dim: self.ffn_dim,
            window: self.context_window,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.context_window < 4 {
            return Err(AgentError::InvalidConfig("context_window must be at least 4".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(AgentError::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.guidance_coefficient >= 0.0) {
            return Err(AgentError::InvalidConfig("guidance_coefficient must be >= 0".into()));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(AgentError::InvalidConfig("clip_norm must be positive".into()));
        }
        self.epsilon.validate()?;
        self.shape().validate().map_err(AgentError::InvalidConfig)
    }
}

/// `R_t = sum_{k>=t} gs^(k-t) short_k + gl^(k-t) long_k`.
pub fn compute_two_channel_returns(
    short: &[f64],
    long: &[f64],
    gamma_short: f64,
    gamma_long: f64,
) -> Result<Vec<f64>, AgentError> {
    if short.len() != long.len() {
        return Err(AgentError::LengthMismatch {
            short: short.len(),
            long: long.len(),
        });
    }
    let mut out = vec![0.0; short.len()];
    let (mut rs, mut rl) = (0.0, 0.0);
    for k in (0..short.len()).rev() {
        rs = short[k] + gamma_short * rs;
        rl = long[k] + gamma_long * rl;
        out[k] = rs + rl;
    }
    Ok(out)
}

/// `-coefficient * sum(-ln p)` over `chosen`, each token scored after
/// `prefix` and the chosen tokens before it.
pub fn guidance_reward(m: &TlmModel, prefix: &[Token], chosen: &[Token], coefficient: f64) -> f64 {
    if coefficient == 0.0 {
        return 0.0;
    }
    let mut ids = with_bos(prefix);
    let mut nll = 0.0;
    for t in chosen {
        nll -= m.probability_ids(&ids, t.id()).ln();
        ids.push(t.id());
    }
    -coefficient * nll
}

/// One line of the training metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub n: usize,
    pub success: bool,
    pub ops: usize,
    pub compares: usize,
    pub swaps: usize,
    pub return_short: f64,
    pub return_long: f64,
    /// Mean `-ln p` of the agent tokens under the trajectory model; `None`
    /// without a model.
    pub mean_guidance_loss: Option<f64>,
    pub epsilon: f64,
}

/// Per-operation outcome of one rollout.
#[derive(Debug, Clone)]
pub struct Rollout {
    pub state: EnvState,
    pub rewards: Vec<RewardPair>,
}

/// Plays one episode to completion. Agent tokens are always legal, so the
/// environment never sees an invalid action.
pub fn run_episode(
    policy: &mut dyn ActionPolicy,
    mut state: EnvState,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout, AgentError> {
    let n = state.n;
    let mut g = GrammarState::new(n);
    let mut rewards = Vec::new();
    policy.begin(n);
    policy.observe(state.trajectory.length_marker());
    let pick = |policy: &mut dyn ActionPolicy, g: &mut GrammarState, rng: &mut ChaCha8Rng| {
        let t = policy.choose(g, rng);
        g.advance(t)
            .map_err(|e| AgentError::ContractViolation(format!("policy chose {t}: {e}")))?;
        policy.observe(t);
        Ok::<_, AgentError>(t)
    };
    while !state.done {
        debug_assert_eq!(g.phase, Phase::AtOperationStart);
        match pick(policy, &mut g, rng)? {
            Token::Swap => {
                let (_, r) = state.step_swap()?;
                rewards.push(r);
            }
            _ => {
                let i = index_of(pick(policy, &mut g, rng)?);
                let j = index_of(pick(policy, &mut g, rng)?);
                let (outcome, r) = state.step_compare(i, j)?;
                let t = Token::Outcome(outcome);
                g.advance(t).expect("outcome follows two indices");
                policy.observe(t);
                rewards.push(r);
            }
        }
    }
    Ok(Rollout { state, rewards })
}

fn index_of(t: Token) -> usize {
    match t {
        Token::Index(k) => k as usize,
        _ => unreachable!("grammar admits only indices here"),
    }
}

/// Per-operation `-ln p` sums and agent-token counts under `m`.
fn operation_nll(m: &TlmModel, rollout: &Rollout) -> Vec<(f64, usize)> {
    let t = &rollout.state.trajectory;
    let mut ids = with_bos(&[t.length_marker()]);
    let mut out = Vec::with_capacity(t.ops.len());
    let mut toks = Vec::with_capacity(4);
    for op in &t.ops {
        toks.clear();
        op.push_tokens(&mut toks);
        let (mut nll, mut count) = (0.0, 0);
        for tok in &toks {
            if tok.is_agent_choice() {
                nll -= m.probability_ids(&ids, tok.id()).ln();
                count += 1;
            }
            ids.push(tok.id());
        }
        out.push((nll, count));
    }
    out
}

fn agent_tokens(op: &Operation) -> usize {
    match op {
        Operation::Compare { .. } => 3,
        Operation::Swap => 1,
    }
}

/// Trains a fresh policy, writing one NDJSON [`EpisodeRecord`] per episode.
pub fn train(
    env_config: &EnvConfig,
    agent: &AgentConfig,
    tlm: Option<&TlmModel>,
    metrics_sink: &mut dyn Write,
) -> Result<PolicyModel, AgentError> {
    train_with(env_config, agent, tlm, |rec| {
        serde_json::to_writer(&mut *metrics_sink, rec).map_err(io::Error::from)?;
        metrics_sink.write_all(b"\n")
    })
}

/// [`train`] with a callback per episode instead of a byte sink.
pub fn train_with<F>(
    env_config: &EnvConfig,
    agent: &AgentConfig,
    tlm: Option<&TlmModel>,
    mut on_episode: F,
) -> Result<PolicyModel, AgentError>
where
    F: FnMut(&EpisodeRecord) -> io::Result<()>,
{
    agent.validate()?;
    if agent.guidance_enabled && tlm.is_none() {
        return Err(AgentError::MissingTlm);
    }
    let env = SortEnv::new(env_config.clone())?;
    let rewards = env_config.rewards;
    let mut model = PolicyModel::new(agent.shape(), agent.seed)?;
    let mut adam = Adam::new(model.num_parameters(), agent.learning_rate, agent.clip_norm);
    let mut arrays = ChaCha8Rng::seed_from_u64(agent.seed);
    let mut explore = ChaCha8Rng::seed_from_u64(agent.seed.wrapping_add(1));
    let mut grad = vec![0.0; model.num_parameters()];

    for episode in 0..agent.episodes {
        let n = env_config.sizes[arrays.gen_range(0..env_config.sizes.len())];
        let state = env.reset(n, arrays.gen())?;
        let epsilon = epsilon_at(&agent.epsilon, episode);

        let mut roller = ModelPolicy::recording(&model, epsilon);
        let rollout = run_episode(&mut roller, state, &mut explore)?;

        let nll = tlm.map(|m| operation_nll(m, &rollout));
        let mean_guidance_loss = nll.as_ref().map(|per_op| {
            let (sum, count) = per_op.iter().fold((0.0, 0), |(s, c), &(x, k)| (s + x, c + k));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        });
        let mut short: Vec<f64> = rollout.rewards.iter().map(|r| r.short).collect();
        let long: Vec<f64> = rollout.rewards.iter().map(|r| r.long).collect();
        if agent.guidance_enabled {
            for (s, &(x, _)) in short.iter_mut().zip(nll.as_ref().unwrap()) {
                *s -= agent.guidance_coefficient * x;
            }
        }
        let returns = compute_two_channel_returns(&short, &long, rewards.gamma_short, rewards.gamma_long)?;

        // mean squared error over decisions
        let ops = &rollout.state.trajectory.ops;
        let decisions = roller.decisions.len();
        let mut outputs = Vec::with_capacity(decisions);
        let mut d = roller.decisions.iter();
        for (op, &target) in ops.iter().zip(&returns) {
            for _ in 0..agent_tokens(op) {
                let (pos, id, values) = d.next().expect("one decision per agent token");
                let mut g = [0.0; VOCAB_SIZE];
                g[*id as usize] = (values[*id as usize] - target) / decisions as f64;
                outputs.push((*pos, g));
            }
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        model.net().backward(roller.trace(), &outputs, &mut grad);
        drop(roller);
        let (_, params) = model.parts_mut();
        adam.step(params, &mut grad);

        let discounted = |xs: &[f64], gamma: f64| xs.iter().rev().fold(0.0, |acc, &x| x + gamma * acc);
        let record = EpisodeRecord {
            episode,
            n,
            success: rollout.state.is_sorted(),
            ops: ops.len(),
            compares: rollout.state.trajectory.compares(),
            swaps: rollout.state.trajectory.swaps(),
            return_short: discounted(&short, rewards.gamma_short),
            return_long: discounted(&long, rewards.gamma_long),
            mean_guidance_loss,
            epsilon,
        };
        on_episode(&record).map_err(AgentError::SinkFailure)?;
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub n: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_ops: f64,
    pub mean_compares: f64,
    pub mean_swaps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub success_rate: f64,
    pub sizes: Vec<SizeSummary>,
}

/// Rolls out `policy` on `episodes_per_size` arrays of every size in
/// `sizes`, using the rewards and step cap of `env_config`.
pub fn evaluate(
    policy: &mut dyn ActionPolicy,
    env_config: &EnvConfig,
    sizes: &[usize],
    episodes_per_size: usize,
    seed: u64,
) -> Result<EvalSummary, AgentError> {
    let env = SortEnv::new(EnvConfig {
        sizes: sizes.to_vec(),
        ..env_config.clone()
    })?;
    let mut summaries = Vec::with_capacity(sizes.len());
    let mut total_success = 0usize;
    for (si, &n) in sizes.iter().enumerate() {
        let mut arrays = ChaCha8Rng::seed_from_u64(seed.wrapping_add(si as u64));
        let mut explore = ChaCha8Rng::seed_from_u64(seed.wrapping_add(si as u64).wrapping_add(1 << 32));
        let (mut ok, mut ops, mut cmp, mut swp) = (0usize, 0usize, 0usize, 0usize);
        for _ in 0..episodes_per_size {
            let rollout = run_episode(policy, env.reset(n, arrays.gen())?, &mut explore)?;
            let t = &rollout.state.trajectory;
            ok += rollout.state.is_sorted() as usize;
            ops += t.ops.len();
            cmp += t.compares();
            swp += t.swaps();
        }
        total_success += ok;
        let denom = episodes_per_size.max(1) as f64;
        summaries.push(SizeSummary {
            n,
            episodes: episodes_per_size,
            success_rate: ok as f64 / denom,
            mean_ops: ops as f64 / denom,
            mean_compares: cmp as f64 / denom,
            mean_swaps: swp as f64 / denom,
        });
    }
    let all = (sizes.len() * episodes_per_size).max(1) as f64;
    Ok(EvalSummary {
        success_rate: total_success as f64 / all,
        sizes: summaries,
    })
}

/// [`evaluate`] for a trained model at a fixed exploration rate.
pub fn evaluate_model(
    model: &PolicyModel,
    env_config: &EnvConfig,
    sizes: &[usize],
    episodes_per_size: usize,
    seed: u64,
    epsilon: f64,
) -> Result<EvalSummary, AgentError> {
    evaluate(&mut ModelPolicy::new(model, epsilon), env_config, sizes, episodes_per_size, seed)
}
