//! Goal-conditioned DQN with discrete vs continuous goal conditioning, the
//! factor-match intrinsic reward, and a minimal two-level agent for
//! KeyChest.

mod dqn;
mod hier;
mod replay;
mod reward;

pub use dqn::{
    evaluate, greedy_action, select_action, td_update, td_update_finetune, train_goal_dqn,
    EpisodeMetrics, EvalPoint, EvalReport, FineTuner, GoalDqn, GoalEval, TrainConfig,
    TrainOutcome, Transition,
};
pub use hier::{
    subgoal_success_threshold, train_flat_keychest, train_hier, Dqn, HierAgent, HierConfig,
    HierOutcome,
};
pub use replay::ReplayBuffer;
pub use reward::{
    encode_entry, goal_reward, goal_reward_cached, rescaled_cosine, ReprCache, ReprEntry,
    ReprMode,
};
