//! Task families: sinusoid regression, per-weight ridge regularization on
//! tabular data, and the wheel bandit with online greedy evaluation.

mod bandit;
mod regression;
mod ridge;
mod sinusoid;
mod wheel;

pub use bandit::{
    bandit_meta_dataset, bandit_online_eval, BanditAgent, BanditData, BanditDataset, BanditRecord, OnlineSchedule,
    RandomAgent, RegretLedger, ReplayBuffer, SynapticAgent, SynapticAgentCfg,
};
pub use regression::MlpRegression;
pub use ridge::{parse_csv, ridge_build, write_csv, RidgeSource, RidgeTask, SyntheticSpec};
pub use sinusoid::{sinusoid_sample, SinusoidTask, AMPLITUDE_RANGE, PHASE_RANGE, X_RANGE};
pub use wheel::{random_regret_expectation, wheel_step, WheelTask, N_ACTIONS};
