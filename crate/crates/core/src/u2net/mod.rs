//! The nested-U saliency network.

mod check;
mod model;
mod params;
mod spec;

pub use check::{network_grad_check, synthetic_pair, CheckMode};
pub use model::{infer, rsu_forward, u2net_forward, Bound, NetMode, NetOutput, SaliencyMaps};
pub use params::{describe, init_params, layers, param_count, Layer, LayerKind, ParamStore};
pub use spec::{RsuSpec, StageSpec, U2NetSpec, DECODER_STAGES, ENCODER_STAGES, SIDE_OUTPUTS};
