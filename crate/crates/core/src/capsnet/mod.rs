//! A small capsule network: convolution, primary capsules, optional
//! convolutional capsule layers and fully connected class capsules with
//! dynamic routing. Every MAC output, activation, softmax and logits update
//! is an instrumented site where noise can be injected.

mod backward;
mod forward;
mod loss;
mod model;
mod routing;
mod spec;
mod train;

pub use backward::sample_gradients;
pub use forward::{argmax, class_scores, conv_operand_pairs, forward, forward_sample, ForwardTrace, NoHook, SiteHook, SiteRecord};
pub use loss::{margin_loss, margin_loss_grad};
pub use model::{build_network, Model};
pub use routing::{dynamic_routing, routing_sites, RoutingState};
pub use spec::{Activation, LayerKind, LayerSpec, NetworkSpec, DEFAULT_ROUTING_ITERATIONS};
pub use train::{evaluate, predict, train, Optimizer, TrainConfig, TrainOutcome};

pub(crate) use spec::LayerOp;
