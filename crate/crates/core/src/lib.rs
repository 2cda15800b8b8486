pub mod augment;
pub mod cae;
pub mod checkpoint;
pub mod detect;
pub mod error;
pub mod homography;
pub mod image;
pub mod msssim;
pub mod pipeline;
pub mod pnm;
pub mod rng;
pub mod tensor;
pub mod thermo;
pub mod trainer;

pub use error::{Error, Result};
pub use image::GrayImage;
pub use rng::Rng;
pub use tensor::Tensor;
