//! Generation backends: encode images to (class-style, individual-style)
//! codes, decode codes to images, and classify images.

pub mod curved;
pub mod subprocess;
pub mod synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CsCode, Image, IsCode, CS_DIM};

pub use curved::{ArcCodec, ArcScenario};
pub use subprocess::SubprocessCodec;
pub use synthetic::{make_dataset, SyntheticCodec, SyntheticData, SyntheticRegistry};

/// Dimensions every codec operation honors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecContract {
    pub cs_dim: usize,
    pub is_dim: usize,
    pub height: usize,
    pub width: usize,
}

impl CodecContract {
    pub fn new(is_dim: usize, height: usize, width: usize) -> Self {
        Self {
            cs_dim: CS_DIM,
            is_dim,
            height,
            width,
        }
    }

    pub fn check_codes(&self, cs: &CsCode, is: &IsCode) -> Result<()> {
        if is.len() != self.is_dim {
            return Err(Error::contract(format!(
                "individual-style code has {} components, codec expects {}",
                is.len(),
                self.is_dim
            )));
        }
        if !cs.is_finite() || !is.is_finite() {
            return Err(Error::contract("codes must be finite"));
        }
        Ok(())
    }

    pub fn check_image(&self, image: &Image) -> Result<()> {
        if image.shape() != (self.height, self.width) {
            return Err(Error::contract(format!(
                "image shape {:?} does not match codec shape {:?}",
                image.shape(),
                (self.height, self.width)
            )));
        }
        Ok(())
    }
}

pub trait Codec: Send + Sync {
    fn contract(&self) -> CodecContract;

    fn decode(&self, cs: &CsCode, is: &IsCode) -> Result<Image>;

    fn encode(&self, image: &Image) -> Result<(CsCode, IsCode)>;

    /// Probability that the image is abnormal, in `(0, 1)`.
    fn classify(&self, image: &Image) -> Result<f64>;

    fn decode_batch(&self, rows: &[(CsCode, IsCode)]) -> Result<Vec<Image>> {
        rows.iter().map(|(cs, is)| self.decode(cs, is)).collect()
    }

    fn classify_batch(&self, images: &[Image]) -> Result<Vec<f64>> {
        images.iter().map(|img| self.classify(img)).collect()
    }
}
