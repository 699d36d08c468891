//! Quantized Siamese tracking: integer-only branch inference, a SiamFC-style
//! tracking loop, overlap-based evaluation, and an analytical cost model of
//! a layer-pipelined dataflow accelerator.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod qtensor;
pub mod siamnet;
pub mod profile;
pub mod tracker;
pub mod synthetic;
pub mod metrics;
pub mod perfmodel;
