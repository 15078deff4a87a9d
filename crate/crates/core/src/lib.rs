pub mod cli;
pub mod config;
pub mod error;
pub mod expansion;
pub mod expr;
pub mod geometry;
pub mod disk;
pub mod edge;
pub mod grid;
pub mod harness;
pub mod jet;
pub mod node;
pub mod krylov;
pub mod layer;
pub mod order;
pub mod reference;
pub mod velocity;

pub use error::{Error, Result};
