//! A per-point MLP encoder with a cosine prototype head, its EMA teacher,
//! AdamW and the checkpoint container.
//!
//! Parameters are stored at float32 precision (every update rounds them) and
//! all arithmetic runs in float64, so checkpoints are lossless.

mod checkpoint;
mod ema;
mod encoder;
mod head;
mod optim;
mod params;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use ema::{ema_update, TeacherState};
pub use encoder::{encode, encode_with_mask, point_features, silu, Dense, EncoderCache, EncoderParams, INPUT_DIM};
pub use head::{prototype_logits, PrototypeHead};
pub use optim::AdamW;
pub use params::{ModelConfig, ModelParams};
