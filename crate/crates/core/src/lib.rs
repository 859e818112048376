//! Asynchronous corner detection and tracking for DAVIS event cameras.
//!
//! Frame-corners are detected with Harris on intensity keyframes, promoted to
//! event-corners by a binary-SAE matching unit, and then tracked between
//! keyframes from local plane fits of the surface of active events.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod event;
pub mod harris;
pub mod matching;
pub mod plane;
pub mod tracker;
pub mod dataset;
pub mod config;
pub mod pipeline;
pub mod bench;
