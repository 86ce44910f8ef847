#![no_std]
extern crate alloc;

pub mod autodiff;
pub mod error;
pub mod evidence;
pub mod goodwin;
pub mod neural;
pub mod samplers;
pub mod seed;
pub mod stein;
pub mod targets;

pub use error::{Error, Result};
