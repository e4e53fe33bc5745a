//! Object-oriented hardware description: typed signals, entities, protocol
//! handler classes, a delta-cycle simulator with VCD output, and a VHDL
//! backend.

pub mod classes;
pub mod cli;
pub mod corpus;
pub mod cosim;
pub mod design;
pub mod error;
pub mod exec;
pub mod export;
pub mod signals;
pub mod sim;
pub mod stmt;
pub mod typeck;
pub mod vcd;
pub mod vhdl;

pub use error::{Error, Result};
