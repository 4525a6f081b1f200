//! Learned depth prediction: a residual encoder-decoder with attention over
//! the warped, aggregated and edge inputs, followed by a refinement
//! encoder-decoder guided by the target frame.

mod cbam;
mod config;
mod input;
mod layers;
mod loss;
mod model;
mod predict;
mod refine;
mod train;

pub use config::{
    parse_bool, parse_kv, InputGroup, InputLayout, LossConfig, ModelConfig, PredictionNetConfig, RefineNetConfig,
    TrainConfig,
};
pub use input::{flip_rows, NetworkInput, Stages};
pub use layers::{apply_bn_updates, BnUpdate, Ctx};
pub use loss::{masked_l2, masked_l2_var, total_loss, total_loss_var, MaskedLoss, TotalLoss};
pub use model::{Model, Outputs, Prediction};
pub use predict::{depth_reference, CoarseOutput};
pub use train::{epoch_means, write_log_csv, LogRow, StepLosses, TrainSample, Trainer};
