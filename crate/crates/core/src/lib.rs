//! Calderón–Zygmund tooling for finite metric measure spaces whose measure is
//! only upper-doubling.

// `!(x > 0.0)` is used deliberately throughout so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balls;
pub mod covering;
pub mod czdecomp;
pub mod czop;
pub mod fspaces;
pub mod harness;
pub mod maximal;
pub mod mspace;
pub mod pairs;
pub mod report;
