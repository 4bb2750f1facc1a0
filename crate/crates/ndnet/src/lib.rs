//! Small dense neural-network toolkit: a reverse-mode tape, MLPs, MADE
//! masks, Adam and an early-stopping fit loop.

pub mod adam;
pub mod fit;
pub mod graph;
pub mod made;
pub mod mlp;
pub mod params;

pub use adam::{AdamConfig, AdamState};
pub use fit::{fit_loop, fit_with_validation, FitConfig, LossProfile, Objective};
pub use graph::{matmul, Gradients, Graph, Var};
pub use made::{made_masks, Made};
pub use mlp::{Activation, MlpSpec};
pub use params::{truncated_normal, value, value_and_grad, NetParams, ParamVars};
