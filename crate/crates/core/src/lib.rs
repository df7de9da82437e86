pub mod error;
pub mod lti;
pub mod matrix_equations;
pub mod moments;
pub mod optimizer;
pub mod scalar;
pub mod sdp;

pub use error::{Error, Result};
pub use scalar::Real;

pub type LtiSystemF64 = lti::LtiSystem<f64>;
pub type LtiSystemF32 = lti::LtiSystem<f32>;
pub type ReducedModelF64 = moments::ReducedModel<f64>;
pub type ReducedModelF32 = moments::ReducedModel<f32>;
pub type InterpolationDataF64 = moments::InterpolationData<f64>;
pub type InterpolationDataF32 = moments::InterpolationData<f32>;
pub type DecisionVarsF64 = optimizer::DecisionVars<f64>;
pub type DecisionVarsF32 = optimizer::DecisionVars<f32>;
