//! Per-pixel temporal-attention classifier with positional-encoding variants.

mod checkpoint;
mod config;
mod data;
mod network;
mod params;
mod pe;
mod train;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry, CHECKPOINT_FILE, PARAMS_FILE,
};
pub use config::{ModelConfig, PeVariant, PE_PERIOD, THERMAL_PE_DIVISOR};
pub use data::{raw_positions, subsample_pixels, PixelRef, SequenceSet, SiteYear};
pub(crate) use network::mix_seed;
pub use network::{
    backward, cross_entropy, forward, loss_and_grad, mc_dropout_predict, predict_proba,
    softmax_rows, uncertainty, Batch, Cache, Dropout, ForwardOutput,
};
pub use params::{ChannelStats, ClassifierParams, ParamBuffer, ParamId, ParamLayout};
pub use pe::{positional_encoding, scaled_position};
pub use train::{
    history_csv, predict_set, train, Adam, EpochRecord, Inference, OneCycle, TrainConfig, Trained,
};
