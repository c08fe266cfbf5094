//! Trajectory engine for reasoning–search interleaved retrieval-augmented
//! generation.
//!
//! The engine drives a policy model through an interleaved loop of
//! reasoning and `<search>` calls, injects retrieved documents as
//! `<observation>` blocks, and turns each finished rollout into an
//! [`Episode`](rollout::Episode): the parsed trajectory, rule-based rewards,
//! a byte-level loss mask for trainers, and run statistics.
//!
//! | module | what it does |
//! |---|---|
//! | [`protocol`] | tag grammar, rollout parser, format indicators |
//! | [`rewards`] | answer / evidence / format rewards, EM and F1, group advantages |
//! | [`retrieval`] | BM25 index, remote retrieval client, observation rendering |
//! | [`backends`] | scripted replay and chat-completions generation backends |
//! | [`rollout`] | the episode loop, groups, the episode file format |
//! | [`masking`] | optimize / exclude byte spans |
//! | [`eval`] | dataset loading and EM/F1 reports |
//! | [`rstool`] | evidence export and downstream answering |
//! | [`cli`] | config file and operator commands |
//!
//! Runnable walkthroughs for each capability live in `examples/`:
//!
//! ```bash
//! cargo run -p rsearch --example scripted_rollout
//! ```

pub mod backends;
pub mod cli;
pub mod eval;
pub mod masking;
pub mod protocol;
pub mod retrieval;
pub mod rewards;
pub mod rollout;
pub mod rstool;

pub use backends::{GenerationBackend, ScriptedBackend};
pub use masking::{compute_loss_mask, LossMask};
pub use protocol::{parse_rollout, Trajectory};
pub use retrieval::{Bm25Index, Retriever};
pub use rewards::{RewardBreakdown, RewardConfig};
pub use rollout::{Episode, RolloutConfig, RolloutEngine};
