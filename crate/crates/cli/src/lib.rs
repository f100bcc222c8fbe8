//! Command line and HTTP service for the eaef engine.

pub mod config;
pub mod service;
