//! Anytime-valid sequential testing of complete spatial randomness.

pub mod eprocess;
pub mod format;
pub mod geometry;
pub mod kernel;
pub mod pr;
pub mod quadrature;
pub mod simulate;
pub mod experiments;
pub mod io;
pub mod cli;
