//! Image containers, 1/255-grid quantization, the procedural shape
//! dataset, and a lossless PNG codec.

mod png;
mod shapes;

pub use png::{png_decode, png_encode, PNG_SIGNATURE};
pub use shapes::{generate_dataset, ConceptId, DatasetManifest, ShapeDataset, Split, NUM_CONCEPTS};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floating-point image with shape height x width x channels and values
/// in `[0,1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch {
                op: "Image::new",
                expected: format!("{} samples", height * width * channels),
                got: format!("{}", data.len()),
            });
        }
        if !data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "image values must lie in [0,1]".to_string(),
            ));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width, self.channels],
            self.data.clone(),
        )
        .expect("image data is always a valid tensor")
    }

    /// `true` when every sample sits exactly on the `k/255` grid.
    pub fn is_on_grid(&self) -> bool {
        self.data.iter().all(|&v| {
            let k = (v * 255.0).round();
            v == k / 255.0
        })
    }

    /// Maps every sample to the nearest `k/255` grid point, ties on `k`
    /// rounding to even. Idempotent.
    pub fn quantized(&self) -> Image {
        let data = self.data.iter().map(|&v| quantize_unit(v)).collect();
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }

    /// Converts to 8-bit samples; errors when any sample is off-grid.
    pub fn to_quantized(&self) -> Result<QuantizedImage> {
        let mut samples = Vec::with_capacity(self.data.len());
        for &v in &self.data {
            let k = (v * 255.0).round();
            if v != k / 255.0 {
                return Err(Error::InvalidArgument(format!(
                    "sample {v} is not on the 1/255 grid"
                )));
            }
            samples.push(k as u8);
        }
        QuantizedImage::new(self.width, self.height, self.channels, samples)
    }
}

/// Nearest 1/255 grid point for a value in `[0,1]`, with round-half-to-
/// even tie breaking on the integer level `k`.
pub fn quantize_unit(v: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&v));
    (v * 255.0).round_ties_even() / 255.0
}

/// 8-bit image as stored on disk; the exact domain of the PNG channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedImage {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<u8>,
}

impl QuantizedImage {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<u8>) -> Result<Self> {
        if samples.len() != width * height * channels {
            return Err(Error::ShapeMismatch {
                op: "QuantizedImage::new",
                expected: format!("{} samples", width * height * channels),
                got: format!("{}", samples.len()),
            });
        }
        Ok(QuantizedImage {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    /// Exact float view: sample `k` becomes `k/255`. Round-tripping
    /// through [`Image::to_quantized`] is the identity.
    pub fn to_image(&self) -> Image {
        let data = self.samples.iter().map(|&k| k as f64 / 255.0).collect();
        Image {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn quantize_idempotent_and_bounded() {
        for i in 0..=1000 {
            let v = i as f64 / 1000.0;
            let q = quantize_unit(v);
            assert_eq!(quantize_unit(q), q);
            assert!((q - v).abs() <= 1.0 / 510.0 + 1e-15);
        }
    }

    #[test]
    fn quantize_half_ties_to_even_level() {
        // 0.5 * 255 = 127.5, even neighbor is 128.
        assert_eq!(quantize_unit(0.5), 128.0 / 255.0);
    }

    #[test]
    fn eight_bit_roundtrip_is_identity() {
        let samples: Vec<u8> = (0..=255).collect();
        let q = QuantizedImage::new(16, 16, 1, samples.clone()).unwrap();
        assert_eq!(q.to_image().to_quantized().unwrap().samples(), &samples[..]);
    }

    #[test]
    fn off_grid_image_rejected_by_to_quantized() {
        let img = Image::new(1, 1, 1, vec![0.5]).unwrap();
        assert!(img.to_quantized().is_err());
        assert!(img.quantized().to_quantized().is_ok());
    }

    proptest! {
        #[test]
        fn quantize_never_moves_more_than_half_step(v in 0.0f64..=1.0) {
            let q = quantize_unit(v);
            prop_assert!((q - v).abs() <= 1.0 / 510.0 + 1e-15);
            prop_assert_eq!(quantize_unit(q), q);
        }
    }
}
