//! Command-line and HTTP front ends for `batchbandit` experiments.
//!
//! Both front ends go through [`service`] views so that the same experiment
//! reads the same way from either one.

pub mod cli;
pub mod http;
pub mod service;
