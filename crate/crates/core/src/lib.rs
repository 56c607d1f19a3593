pub mod autodiff;
pub mod error;
pub mod experiments;
pub mod fields;
pub mod flow;
pub mod objectives;
pub mod seeds;
pub mod space;
pub mod training;
pub mod universality;

pub use error::{Error, Result};
