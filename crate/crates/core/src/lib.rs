//! Multiple-instance learning of daily stock direction from news headlines.
//!
//! Each trading day is a bag whose instances are the headlines assigned to it;
//! only the day label (close up or not) is observed. The crate covers
//! ingestion, text preparation, the network with hand-written gradients,
//! training and evaluation.

pub mod corpus;
pub mod error;
pub mod model;
pub mod tensor;
pub mod textprep;
pub mod train;

pub use error::{Error, Result};
