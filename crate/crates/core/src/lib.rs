//! Controllability experiments for the Fokker-Planck equation with localized drift control.

pub mod carleman;
pub mod cli;
pub mod config;
pub mod counterexample;
pub mod domain;
pub mod error;
pub mod hum;
pub mod particles;
pub mod pde;
pub mod plot;
pub mod reduced;
pub mod sparse;

pub use error::{Error, Result};
