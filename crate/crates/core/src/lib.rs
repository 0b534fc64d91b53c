pub mod classifier;
pub mod datagen;
pub mod error;
pub mod federation;
pub mod graphcons;
pub mod harness;
pub mod inpaint;
pub mod masking;
pub mod numerics;
mod wire;

pub use error::{FedniError, Result};
