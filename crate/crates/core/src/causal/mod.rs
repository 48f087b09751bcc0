//! Treatment-effect estimators built on the regression layer.

mod did;
mod iv;
mod matching;
mod propensity;
mod rdd;

pub use did::{
    did_event_study, did_static, lag_name, lead_name, DidSpec, EventStudyResult, EventStudySpec,
    LagIndexing,
};
pub use iv::{first_stage_f, iv_2sls, IvSpec, WEAK_INSTRUMENT_F};
pub use matching::{match_on_scores, ps_matching, Estimand, MatchPair, MatchResult, MatchingOptions};
pub use propensity::{
    estimate_propensity_scores, ps_regression_adjustment, quantile, trim_by_score,
    PropensityScores, PsRegressionSpec, TrimMode, TrimRule, SCORE_COLUMN,
};
pub use rdd::{
    rdd_fuzzy, rdd_sharp, rule_of_thumb_bandwidth, Kernel, RddDesign, RddResult, RddSpec,
    ZERO_FIRST_STAGE,
};
