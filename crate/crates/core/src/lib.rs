//! Multi-agent coordination engine for goal-oriented dialogue.

pub mod agents;
pub mod config;
pub mod coordination;
pub mod corpus;
pub mod dialogue;
pub mod error;
pub mod eval;
pub mod gateway;
pub mod generation;
pub mod pipeline;
pub mod profile;
pub mod progression;
pub mod service;

pub use error::{Error, Result};
