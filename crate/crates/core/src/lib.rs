//! Headless laboratory for depth-latent aerial navigation.
//!
//! The pipeline: procedurally generated cluttered rooms ([`world`]) are
//! rendered by a ray-casting depth camera ([`camera`]), remapped into
//! robot-size-aware collision images ([`collision`]), compressed by a
//! beta-VAE collision encoder ([`dce`]), and consumed by a recurrent PPO
//! navigation policy ([`trainer`]) flying a velocity-controlled multirotor
//! ([`vehicle`]) inside a curriculum-managed POMDP ([`env`]). [`eval`]
//! reproduces the success/timeout/crash evaluation protocol.
//!
//! The numerical core is generic over the scalar type via [`num::Real`];
//! the production pipeline runs in `f32` through the aliases below, while
//! gradient checks instantiate the same code at `f64`.

pub mod camera;
pub mod collision;
pub mod config;
pub mod dce;
pub mod env;
pub mod error;
pub mod eval;
pub mod math;
pub mod neural;
pub mod num;
pub mod rng;
pub mod trainer;
pub mod vehicle;
pub mod world;

pub use error::{Error, Result};

/// Scalar type of the production pipeline.
pub type Scalar = f32;

pub type Vec3 = math::Vector3<Scalar>;
pub type Quat = math::Quaternion<Scalar>;
pub type Pose = math::Pose<Scalar>;
pub type WorldSpec = world::WorldSpec<Scalar>;
pub type Obstacle = world::Obstacle<Scalar>;
pub type RobotBox = world::RobotBox<Scalar>;
pub type DepthImage = camera::DepthImage<Scalar>;
pub type CollisionImage = collision::CollisionImage<Scalar>;
pub type Tensor = neural::Tensor<Scalar>;
pub type RobotState = vehicle::RobotState<Scalar>;
pub type VelocityCommand = vehicle::VelocityCommand<Scalar>;
