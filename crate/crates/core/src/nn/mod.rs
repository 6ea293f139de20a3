//! Feed-forward encoder with hand-written backprop, AdamW with decoupled
//! weight decay, a cosine learning-rate schedule, and softmax
//! cross-entropy.

mod encoder;
mod loss;
mod optim;

pub use encoder::{backward, forward, init_encoder, EncoderConfig, EncoderParams, ForwardTrace, Layer};
pub use loss::softmax_xent;
pub use optim::{cosine_lr, AdamW, AdamWConfig};
