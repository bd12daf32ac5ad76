//! Null controllability of stochastic semi-discrete parabolic equations.
//!
//! The crate covers the whole constructive pipeline on the unit interval:
//!
//! * [`mesh`] and [`calc`]: the uniform mesh, its dual meshes, the difference
//!   and average operators and their product and summation-by-parts rules;
//! * [`weights`]: the Carleman weight family and its parameter regime;
//! * [`tree`]: a binary scenario tree standing in for the Brownian filtration,
//!   with exact conditional expectations;
//! * [`forward`] and [`backward`]: the controlled forward system and its exact
//!   discrete adjoint;
//! * [`hum`]: penalized HUM control synthesis through a matrix-free Gramian;
//! * [`inequalities`]: numeric Carleman and observability estimates;
//! * [`harness`]: configuration, experiment runs and CSV output behind the
//!   `nullctl` binary.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the `*64`
//! aliases below fix the scalar to `f64`.

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backward;
pub mod calc;
pub mod error;
pub mod forward;
pub mod harness;
pub mod hum;
pub mod inequalities;
pub mod mesh;
pub mod scalar;
pub mod tree;
pub mod weights;

pub use error::{Error, Result};
pub use mesh::{Mesh, MeshPart, Region};
pub use scalar::Real;

pub type GridFunction64 = calc::GridFunction<f64>;
pub type DualGridFunction64 = calc::DualGridFunction<f64>;
pub type ScenarioTree64 = tree::ScenarioTree<f64>;
pub type AdaptedField64 = tree::AdaptedField<f64>;
pub type LeafField64 = tree::LeafField<f64>;
pub type Coefficients64 = forward::Coefficients<f64>;
pub type ControlPair64 = forward::ControlPair<f64>;
pub type WeightParams64 = weights::WeightParams<f64>;
pub type CarlemanWeights64 = weights::CarlemanWeights<f64>;
pub type HumProblem64 = hum::HumProblem<f64>;
pub type HumSolution64 = hum::HumSolution<f64>;

pub type GridFunction32 = calc::GridFunction<f32>;
pub type ScenarioTree32 = tree::ScenarioTree<f32>;
pub type CarlemanWeights32 = weights::CarlemanWeights<f32>;
