//! Link-level and system-level models of CBG-based HARQ with enhanced
//! outer-loop link adaptation for XR downlink traffic.
//!
//! * [`analytics`]: closed-form CBG/TB error relations and resource gains.
//! * [`traffic`]: truncated-Gaussian XR frame generator.
//! * [`link`]: MCS table, SINR-to-error curves, CQI and fading.
//! * [`harq`]: segmentation, CBG masks and the HARQ process state machine.
//! * [`olla`]: MCS selection and the three offset-update policies.
//! * [`sim`]: slot-level engine, KPIs and capacity sweeps.
//! * [`config`], [`output`], [`rng`]: scenarios, CSV emission, seeded streams.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytics;
pub mod config;
pub mod error;
pub mod harq;
pub mod link;
pub mod olla;
pub mod output;
pub mod rng;
pub mod sim;
pub mod traffic;

pub use config::{load_scenario, load_scenario_with, Scenario};
pub use error::{Error, Result};
