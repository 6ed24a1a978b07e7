//! Sliding door networks: training, input-space rule extraction, and
//! region-based global robustness verification.
//!
//! A sliding door network (SDN) is a feedforward classifier whose hidden
//! layers use the sliding door activation: neurons are divided into equal
//! groups, the first all-positive group (the active door) is amplified by
//! alpha, the first all-negative group (the inactive door) is zeroed, and
//! everything else passes through unchanged. Because at most two groups are
//! transformed, the realized activation pattern space per layer is
//! quadratic in the group count rather than exponential in the neuron
//! count, which makes exact input-space classification rules tractable:
//! every output-space rule maps backwards through the layers into a
//! conjunction of linear inequalities over the input.
//!
//! On top of the mapped rules sits region-based verification: populated
//! regions become vertices of a classification graph, geometric adjacency
//! is established by probing rule boundaries, and per-class connected
//! components are screened for small isolated components and protruding
//! regions, both sources of adversarial examples.

pub mod data;
pub mod error;
pub mod exec;
pub mod mapping;
pub mod net;
pub mod pattern;
pub mod plot;
pub mod rules;
pub mod unionfind;
pub mod verify;

pub use error::{Error, Result};
