//! Dense tensors, a reverse-mode tape, an LSTM cell and an Adam optimizer.

pub mod gradcheck;
pub mod init;
mod lstm;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use gradcheck::{check_gradients, relative_error, GradCheckConfig, GradCheckReport};
pub use lstm::{lstm_step, LstmWeights};
pub use optim::{clip_global_norm, Adam};
pub use tape::{softmax_rows, Gradients, Tape, Var};
pub use tensor::{Real, Tensor};
