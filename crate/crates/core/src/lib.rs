pub mod app;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod heatmap;
pub mod model;
pub mod ops;
pub mod optim;
pub mod plot;
pub mod predict;
pub mod sampling;
pub mod scene;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorKind, Result};
pub use geometry::Point;
pub use tensor::{Parameter, Scalar, Tensor};
