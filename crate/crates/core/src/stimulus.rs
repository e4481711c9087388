//! Binary white-noise checkerboard frames.
//!
//! Every frame is drawn from its own ChaCha stream keyed by `(seed, index)`,
//! so sample `i` can be produced without touching samples `0..i` and a
//! dataset comes out bit-identical no matter how generation is split up.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// One spatial stimulus image with ±1 contrast pixels, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<i8>,
}

impl Frame {
    /// Builds a frame from raw ±1 pixels.
    pub fn new(width: usize, height: usize, pixels: Vec<i8>) -> Result<Self> {
        check_dims(width, height)?;
        if pixels.len() != width * height {
            return Err(Error::InvalidDimension(format!(
                "{} pixels for a {}x{} frame",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(pos) = pixels.iter().position(|&p| p != 1 && p != -1) {
            return Err(Error::Domain(format!(
                "pixel {pos} has value {}, expected -1 or +1",
                pixels[pos]
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds a frame from real contrast values, which must be exactly ±1.0.
    pub fn from_values(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let pixels = values
            .iter()
            .map(|&v| {
                if v == 1.0 {
                    Ok(1)
                } else if v == -1.0 {
                    Ok(-1)
                } else {
                    Err(Error::Domain(format!("contrast {v} is not -1 or +1")))
                }
            })
            .collect::<Result<Vec<i8>>>()?;
        Self::new(width, height, pixels)
    }

    /// A frame where every pixel has the same sign.
    pub fn filled(width: usize, height: usize, positive: bool) -> Result<Self> {
        check_dims(width, height)?;
        let v = if positive { 1 } else { -1 };
        Ok(Self {
            width,
            height,
            pixels: vec![v; width * height],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// Raw ±1 pixels.
    pub fn pixels(&self) -> &[i8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        f64::from(self.pixels[row * self.width + col])
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.pixels.iter().map(|&p| f64::from(p))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.values().collect()
    }

    /// The same frame with every pixel's sign flipped.
    pub fn negated(&self) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&p| -p).collect(),
        }
    }
}

/// Parameters of a white-noise dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StimulusConfig {
    pub width: usize,
    pub height: usize,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for StimulusConfig {
    fn default() -> Self {
        Self {
            width: 26,
            height: 26,
            n_samples: 600_000,
            seed: 1,
        }
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimension(format!(
            "frame must be at least 1x1, got {width}x{height}"
        )));
    }
    Ok(())
}

/// Generator for the `index`-th draw of a seeded family of streams.
pub fn indexed_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draws one frame, each pixel -1 or +1 with probability one half.
pub fn generate_frame<R: RngCore + ?Sized>(
    width: usize,
    height: usize,
    rng: &mut R,
) -> Result<Frame> {
    check_dims(width, height)?;
    let n = width * height;
    let mut pixels = Vec::with_capacity(n);
    while pixels.len() < n {
        let bits = rng.next_u64();
        let take = (n - pixels.len()).min(64);
        pixels.extend((0..take).map(|b| if (bits >> b) & 1 == 1 { 1 } else { -1 }));
    }
    Ok(Frame {
        width,
        height,
        pixels,
    })
}

/// Frame `index` of the dataset keyed by `seed`.
pub fn sample_frame(seed: u64, index: u64, width: usize, height: usize) -> Result<Frame> {
    generate_frame(width, height, &mut indexed_rng(seed, index))
}

/// Frames `range` of the dataset keyed by `seed`; chunks concatenate to the full set.
pub fn generate_range(
    seed: u64,
    range: std::ops::Range<u64>,
    width: usize,
    height: usize,
) -> Result<Vec<Frame>> {
    check_dims(width, height)?;
    range
        .into_par_iter()
        .map(|i| sample_frame(seed, i, width, height))
        .collect()
}

/// All `n_samples` frames described by `config`.
pub fn generate_dataset(config: &StimulusConfig) -> Result<Vec<Frame>> {
    if config.n_samples == 0 {
        return Err(Error::EmptyDataset);
    }
    generate_range(
        config.seed,
        0..config.n_samples as u64,
        config.width,
        config.height,
    )
}
