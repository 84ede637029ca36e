pub mod backbone;
pub mod bundles;
pub mod dataset;
pub mod error;
pub mod foliation;
pub mod fourier;
pub mod linalg;
pub mod manifold;
pub mod normalform;
pub mod pipeline;
pub mod poly;
pub mod linearid;
pub mod systems;
pub mod textio;

pub use error::{Error, Result};
