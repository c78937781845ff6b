//! The three networks, their training loops and the smoothing pipeline.

mod layers;
mod pipeline;
mod spn;
mod store;
mod tpn;
mod train;
mod tsafn;

pub use pipeline::{enhance, enhance_raw, guidance_maps, smooth, Ablation, Models, Smoothed, NEUTRAL_GUIDANCE};
pub use spn::{SpnCache, SpnConfig, SpnModel, SpnOutput, SPN_STAGES};
pub use store::{load_models, load_role, save_role, ModelIndex, ModelRole, RoleEntry, StoredModel, MODEL_INDEX_FILE};
pub use tpn::{TpnCache, TpnConfig, TpnModel, TPN_FUSED_CHANNELS};
pub use train::{
    evaluate_tsafn, finetune_joint, fit_spn, fit_tpn, fit_tsafn, init_seed, joint_step, spn_loss, train_spn, train_tpn,
    train_tsafn, train_tsafn_ablation, window_means, GuidanceCache, JointLoss, JointStep, TrainOutcome, TrainSet,
};
pub use tsafn::{tsafn_input, TsafnCache, TsafnConfig, TsafnModel, TSAFN_IN_CHANNELS};
