//! Streaming detection of subgroups that are overrepresented in incident
//! reports relative to a reference population, with anytime-valid error
//! control and conversions from flags to bounds on harm.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod betting;
pub mod error;
pub mod group;
pub mod harm;
pub mod ingest;
pub mod monitor;
pub mod sim;
pub mod ztest;

pub use error::{Error, Result};
pub use group::{Assignment, CovariateSchema, GroupSet, GroupSpec, ReferenceTable};
pub use monitor::{Algorithm, FlagEvent, Monitor, MonitorConfig};
