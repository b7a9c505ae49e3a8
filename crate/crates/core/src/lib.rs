pub mod augment;
pub mod bench;
pub mod blendshape;
pub mod error;
pub mod mesh;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod seed;
pub mod synth;
pub mod training;

pub use blendshape::{BlendShapeId, BlendShapeVector, HalfFacePrediction, Side};
pub use error::{Error, Result};
pub use mesh::{FaceMesh, MmScale};
