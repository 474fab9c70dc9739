//! The Direction-Fused FCN: network, fused forward pass, sampling, training.

mod config;
mod fused;
mod network;
mod sampling;
mod train;

pub use config::{DecoderStage, NetConfig, Profile, INPUT_CHANNELS, MAX_GAP};
pub use fused::{
    axis_features, default_axis, df_loss_and_grads, forward_df, forward_single_axis, fused_features,
    single_axis_loss_and_grads, LossGrads,
};
pub use network::{Forward2d, Network, Param};
pub use sampling::{augment, sample_training_patches, AugmentDraw, Provenance, TrainSample, DEFAULT_POSITIVE_CAP};
pub use train::{train, Mode, TrainConfig, TrainReport};
