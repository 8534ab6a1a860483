//! Explicit control law, constraint penalties, economic objective and the
//! closed-loop trainer.

pub mod closed_loop;
pub mod features;
pub mod law;
pub mod objective;
pub mod penalty;

pub use closed_loop::{
    closed_loop_loss, closed_loop_rollout, fit_standardizer, normalize_control_bounds,
    pick_anchors, scenario_sets, train_policy, ClosedLoopModel, ClosedLoopVars, PolicyConfig,
    PolicyEpoch, PolicyHistory, PolicyTrainConfig,
};
pub use features::{
    assemble_features, FeatureInputs, FeatureLayout, Segment, SegmentKind, Standardizer,
};
pub use law::{
    policy_apply_receding, BoundPolicy, PolicyArchitecture, PolicyNet, PolicyOutput, ScenarioInputs,
};
pub use objective::{economic_loss, BoundVars, BoundsTrajectory, EconomicTerms, LossWeights};
pub use penalty::{penalty_lower, penalty_upper, PenaltyActivation};
