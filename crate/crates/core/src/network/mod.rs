//! Declarative networks, their instantiated parameter graphs and weight files.

mod model;
mod spec;
mod weights;

pub use model::{GroupSelector, ModelGraph, ParamGroup, ParamRole, ParamSnapshot, TaskLoss, Trace};
pub use spec::{scale_width, LayerSpec, NetworkSpec};
pub use weights::{apply_weights, decode_weights, encode_weights, load_weights, save_weights};
