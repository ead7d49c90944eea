pub mod backbone;
pub mod config;
pub mod container;
pub mod dataset;
pub mod degrade;
pub mod error;
pub mod eval;
pub mod flow;
pub mod head;
pub mod imagebuf;
pub mod loss;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod prototype;
pub mod seed;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use imagebuf::ImageBuffer;
