//! Deterministic cycle-driven model of a multicore memory hierarchy built to
//! demonstrate timing isolation between mutually distrusting domains.
//!
//! The model covers trace-driven cores with private L1s and permission
//! TLBs, a shared directory-tracked last-level cache, a fixed-latency memory
//! device, and a small software monitor that owns domain lifecycle. Every
//! hardware structure that could couple two domains' timing exists twice: an
//! insecure baseline shape and an isolated shape, selected per-structure by
//! variant flags, so the differential harness can show exactly which
//! structure leaks when a protection is removed.
//!
//! Everything is deterministic: same config, traces, and seed give the same
//! cycle-for-cycle behavior, byte-for-byte logs, on any host.

pub mod config;
pub mod core;
pub mod dram;
pub mod engine;
pub mod harness;
pub mod llc;
pub mod monitor;
pub mod proto;
pub mod sim;
pub mod stats;
pub mod trace;
