#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod design;
pub mod diff;
pub mod error;
pub mod eval;
pub mod game;
pub mod interaction;
pub mod optim;
pub mod planner;
pub mod posterior;
pub mod players;
pub mod rng;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
