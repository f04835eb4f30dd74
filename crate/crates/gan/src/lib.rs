//! From-scratch DCGAN on dense CPU tensors, and image embeddings taken from
//! its discriminator.
//!
//! The generator maps `z ~ N(0, I)` through transposed-convolution blocks
//! (batch norm + ReLU) to a tanh image; the discriminator maps an image
//! through strided-convolution blocks (batch norm from the second block,
//! LeakyReLU 0.2) to a sigmoid probability. The activation feeding the
//! discriminator's output convolution is flattened, L2-normalized and used as
//! the image embedding (`512 × 4 × 4 = 8192` values at the default size).
//!
//! All numeric code is generic over [`Real`] so gradient checks can run the
//! exact training path in `f64`.

pub mod corpus;
pub mod detect;
pub mod embed;
pub mod io;
pub mod layers;
pub mod loss;
pub mod model;
pub mod preprocess;
pub mod tensor;
pub mod train;

pub use detect::{BBox, DetectorOptions, DetectorRegistry, Region, RegionDetector, ReplayDetector, WholeImageDetector};
pub use embed::{
    extract_embedding, DcganEmbedder, Embedder, EmbedderOptions, EmbedderRegistry, Embedding,
    PixelEmbedder, RegionEmbedding,
};
pub use io::{load_params, save_params};
pub use loss::{gan_value, GanLossReport};
pub use model::{Dcgan, DcganConfig, DcganParams, LatentVector};
pub use preprocess::preprocess;
pub use tensor::{Real, Tensor};
pub use train::{TrainConfig, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum GanError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("bad parameter file: {0}")]
    Format(String),
    #[error("parameter file truncated")]
    Truncated,
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("detection failed: {0}")]
    Detection(String),
}
