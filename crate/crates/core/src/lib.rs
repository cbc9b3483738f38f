//! Compare/Swap sorting laboratory: a reinforcement-learning sorting
//! environment, a random double-loop program generator, a trajectory
//! language model used to shape rewards, and the analysis tools that measure
//! how algorithm-like learned trajectories are.

pub mod agent;
pub mod analysis;
pub mod client;
pub mod config;
pub mod env;
pub mod program_gen;
pub mod tlm;
pub mod vocab;

pub use agent::{AgentConfig, AgentError, EpisodeRecord, EpsilonSchedule, PolicyModel};
pub use analysis::{DiscrepancyReport, ExpectedOps};
pub use config::RunConfig;
pub use env::{EnvConfig, EnvError, EnvState, RewardPair, RewardSpec, SortEnv};
pub use program_gen::{generate_corpus, CorpusStats, FunctionTemplate};
pub use tlm::{Interpolation, TlmConfig, TlmError, TlmModel};
pub use vocab::{GrammarState, Operation, Outcome, Phase, Token, Trajectory, VocabError, Vocabulary};
