//! Cohort discovery over a firewalled patient store, driven by a
//! tool-using language-model agent.

pub mod agent;
pub mod assets;
pub mod catalog;
pub mod ehr;
pub mod eval;
pub mod kb;
pub mod logic;
pub mod runtime;
pub mod tools;
