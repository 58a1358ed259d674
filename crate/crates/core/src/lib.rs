//! Discrete-time simulator of residential energy communities.
//!
//! Houses own any mix of rooftop PV and a battery, an air conditioner and
//! eight prioritized load groups. The engine ([`env::CommunityEnv`]) advances
//! the community in fixed steps under on-grid or off-grid physics, driven by
//! a pluggable controller, and records a [`env::Trace`] from which
//! [`metrics`] computes resiliency figures.
//!
//! Models are generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the common `f64` instantiation.
//!
//! ```
//! use commsim::{ControllerKind, DerClass, GridMode, Scenario, StartupMode};
//!
//! let mut s = Scenario::synthetic("demo", &DerClass::ALL, GridMode::OffGrid, ControllerKind::RuleBased, StartupMode::Wacsc);
//! s.horizon_steps = 144;
//! let trace = commsim::env::run_episode(&s, &ControllerKind::RuleBased, 7).unwrap();
//! let m = commsim::metrics::compute(&trace).unwrap();
//! assert_eq!(m.lgr, Some(1.0));
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod controllers;
pub mod data;
pub mod devices;
pub mod env;
pub mod experiment;
pub mod export;
pub mod grid;
pub mod metrics;
pub mod protocol;
pub mod scalar;

pub use config::{ControllerKind, DerClass, GridMode, StartupMode};
pub use scalar::Scalar;

pub type Scenario = config::ScenarioConfig<f64>;
pub type HouseConfig = config::HouseConfig<f64>;
pub type Action = devices::ActionVector<f64>;
pub type HouseState = devices::HouseState<f64>;
pub type Env = env::CommunityEnv<f64>;
pub type Trace = env::Trace<f64>;
pub type StepRecord = env::StepRecord<f64>;
pub type Observation = env::Observation<f64>;
pub type Disturbances = data::Disturbances<f64>;
pub type Matrix = experiment::CaseMatrix<f64>;
