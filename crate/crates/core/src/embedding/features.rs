use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ImageBuffer;

/// Row-major flattening of samples scaled to `[0, 1]`.
pub fn image_to_feature(img: &ImageBuffer) -> Vec<f64> {
    img.data().iter().map(|&v| v as f64 / 255.0).collect()
}

/// Block-averages `pool x pool` cells (trailing partial cells are dropped)
/// and flattens row-major, channels interleaved, scaled to `[0, 1]`.
pub fn pooled_feature(img: &ImageBuffer, pool: usize) -> Vec<f64> {
    if pool <= 1 {
        return image_to_feature(img);
    }
    let (w, h, ch) = (img.width() / pool, img.height() / pool, img.channels());
    let scale = 1.0 / (255.0 * (pool * pool) as f64);
    let mut out = vec![0.0; w * h * ch];
    for by in 0..h {
        for bx in 0..w {
            let o = (by * w + bx) * ch;
            for y in by * pool..(by + 1) * pool {
                for x in bx * pool..(bx + 1) * pool {
                    let p = img.pixel(x, y);
                    for c in 0..ch {
                        out[o + c] += p[c] as f64;
                    }
                }
            }
            for v in &mut out[o..o + ch] {
                *v *= scale;
            }
        }
    }
    out
}

/// Fixed input geometry for one run; every image must match it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pool: usize,
}

impl FeatureExtractor {
    pub fn for_image(img: &ImageBuffer, pool: usize) -> Self {
        Self { width: img.width(), height: img.height(), channels: img.channels(), pool: pool.max(1) }
    }

    pub fn dim(&self) -> usize {
        (self.width / self.pool) * (self.height / self.pool) * self.channels
    }

    pub fn extract(&self, img: &ImageBuffer) -> Result<Vec<f64>> {
        if (img.width(), img.height(), img.channels()) != (self.width, self.height, self.channels) {
            return Err(Error::invalid(format!(
                "image is {}x{}x{}, run expects {}x{}x{}",
                img.width(),
                img.height(),
                img.channels(),
                self.width,
                self.height,
                self.channels
            )));
        }
        Ok(pooled_feature(img, self.pool))
    }
}
