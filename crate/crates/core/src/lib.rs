//! Event-triggered quantized state feedback for linear plants over
//! rate-limited channels: controller design constants, a synchronized
//! dynamic quantizer, trigger functions, a hybrid simulator and data-rate
//! accounting.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix it to `f64`.

// `!(x > 0)` style guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod design;
pub mod linalg;
pub mod presets;
pub mod rates;
pub mod scalar;
pub mod simulator;
pub mod trigger;

/// Library version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use scalar::Scalar;
pub use trigger::{Cause, Scenario};

pub type Matrix = linalg::Matrix<f64>;
pub type PlantSpec = design::PlantSpec<f64>;
pub type PerformanceSpec = design::PerformanceSpec<f64>;
pub type DesignOptions = design::DesignOptions<f64>;
pub type DesignConstants = design::DesignConstants<f64>;
pub type TriggerSnapshot = trigger::TriggerSnapshot<f64>;
pub type CodecState = codec::CodecState<f64>;
pub type Packet = codec::Packet<f64>;
pub type ScenarioConfig = simulator::ScenarioConfig<f64>;
pub type SimTrace = simulator::SimTrace<f64>;
pub type SimFailure = simulator::SimFailure<f64>;
pub type DelayModel = simulator::DelayModel<f64>;
pub type Disturbance = simulator::Disturbance<f64>;
pub type RateReport = rates::RateReport<f64>;

pub type Matrix32 = linalg::Matrix<f32>;
pub type DesignConstants32 = design::DesignConstants<f32>;
