//! Ego control: the Travel Assist lane-change controller with ACC, and the
//! rule-based expert that produces demonstrations through it.

pub mod drive;
pub mod expert;
pub mod travel_assist;

pub use drive::{run_expert_episode, Drive, ExpertEpisode};
pub use expert::{decide, evaluate, extract_neighborhood, Expert, ExpertConfig, Neighborhood, RuleVerdict};
pub use travel_assist::{acc_step, next_state, ttc, LaneRequest, TaInput, TransitionInput, TransitionRecord, TravelAssist};
