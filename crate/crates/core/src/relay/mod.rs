//! Delay-constrained relaying.

pub mod avg_delay;
pub mod matching;
pub mod priority;
pub mod random_walk;

pub use avg_delay::{avg_delay_relay, AvgDelayOutcome};
pub use matching::{bgm, bgm_epochs, bgm_indices, IndexMatch, MatchResult};
pub use priority::{equal_priority_relay, priority_relay, MultiMatch, PriorityOrder};
pub use random_walk::{random_walk_oracle, WalkStats};
