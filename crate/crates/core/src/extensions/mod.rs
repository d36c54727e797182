//! Extensions of the core planner: round-synchronous multi-agent
//! coordination with message passing, constructive rule learning by safe
//! probing, and conformant planning over sets of possible worlds.

pub mod learning;
pub mod multi_agent;
pub mod uncertainty;

pub use learning::{learn_rules, HiddenEnv, LearnOutcome, ProbeRecord};
pub use multi_agent::{
    multi_agent_plan, replay_joint_plan, AgentKb, Delivery, JointPlan, MultiAgentError,
    ReplayError,
};
pub use uncertainty::{plan_under_uncertainty, replay_in_world, ConformantError, WorldSet};
