//! Dense feedforward networks trained by backpropagation.

mod io;
mod layer;
mod loss;
mod network;
mod optim;
mod train;

pub use io::{
    load_model, save_model, BranchTopology, LayerDocument, MergeTopology, ModelDocument,
    FORMAT_VERSION, MODEL_FORMAT,
};
pub(crate) use io::{check_header, read_json, write_json};
pub use layer::{sigmoid, Activation, DenseLayer};
pub use loss::{LossKind, PROB_FLOOR};
pub use network::{Branch, ForwardTrace, Gradients, Head, InputSpec, LayerGrad, NetworkModel};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    accuracy, argmax, check_set, split_indices, train, Dataset, EpochRecord, MetricKind,
    Monitor, TrainingConfig, TrainingHistory,
};
