//! Weighted sum-rate maximization for MISO downlink beamforming.
//!
//! Two solvers share one problem model:
//!
//! * [`wmmse`]: the classical weighted-MMSE block-coordinate descent with
//!   closed-form updates and a bisection search for the power multiplier.
//! * [`meta`]: a meta-learning beamformer in which three coordinatewise LSTM
//!   networks generate the block updates and are trained on the fly, per
//!   problem instance, by backpropagating a windowed global loss through the
//!   unrolled iterations ([`autodiff`]).

pub mod autodiff;
pub mod channel;
pub mod cmat;
pub mod error;
pub mod gradcheck;
pub mod meta;
pub mod rng;
pub mod wmmse;

pub use channel::{
    generate_channels, global_loss, grad_subproblem, mse, project_power, scale_to_power, sinr,
    weighted_sum_rate,
    Block, ChannelSet, SolverState, SystemConfig,
};
pub use cmat::CMat;
pub use error::{Error, Result};
pub use meta::{solve_mlbf, MlbfConfig, ProjectionMode};
pub use wmmse::{solve_wmmse, Trajectory, WmmseConfig};
