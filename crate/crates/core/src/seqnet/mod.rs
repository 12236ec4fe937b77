//! Numeric layer: tensors, the differentiation tape, recurrent cells and the optimizer.

pub mod cells;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod tape;
pub mod tensor;

pub use cells::{
    argmax, bilstm, bilstm_ends_many, bilstm_many, cos, dropout, gru_cell, lstm_cell, lstm_last,
    lstm_last_many, lstm_sequence, softmax,
    BiLstmParams, BiSeq, GruParams, LinearParams, LstmParams,
};
pub use optim::Adam;
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;
