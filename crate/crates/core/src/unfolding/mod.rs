//! Half-quadratic-splitting stage loop, parameter learner, objective and
//! training.

mod learner;
mod model;
mod projection;
pub mod train;

pub use learner::{Learner, PARAM_FLOOR};
pub use model::{StageState, Unfolding};
pub use projection::{
    charbonnier_loss, data_projection, data_projection_f64, measurement_tensor, OperatorTensors, CHARBONNIER_EPS,
};
