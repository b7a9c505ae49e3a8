//! Image normalization and white-balance augmentation.

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RGB image with values in [0, 1], stored interleaved row-major
/// (`[(y * w + x) * 3 + c]`), the layout the regressor consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument("image dimensions must be positive".into()));
        }
        if values.len() != height * width * 3 {
            return Err(Error::ShapeMismatch {
                expected: vec![height, width, 3],
                found: vec![values.len()],
            });
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("image values must lie in [0, 1]".into()));
        }
        Ok(ImageTensor { height, width, values })
    }

    pub fn from_rgb(img: &RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        if w == 0 || h == 0 {
            return Err(Error::InvalidArgument("zero-sized image".into()));
        }
        Ok(ImageTensor {
            height: h as usize,
            width: w as usize,
            values: img.as_raw().iter().map(|&v| v as f32 / 255.0).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.values[(y * self.width + x) * 3 + c]
    }

    pub fn flip_horizontal(&self) -> ImageTensor {
        let mut out = self.values.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = (y * self.width + (self.width - 1 - x)) * 3;
                let dst = (y * self.width + x) * 3;
                out[dst..dst + 3].copy_from_slice(&self.values[src..src + 3]);
            }
        }
        ImageTensor {
            height: self.height,
            width: self.width,
            values: out,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub gain_range: [f64; 2],
    pub input_h: usize,
    pub input_w: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            gain_range: [0.7, 1.3],
            input_h: 64,
            input_w: 64,
        }
    }
}

/// Per-channel gains drawn uniformly from `gain_range`.
pub fn white_balance_gains(seed: u64, gain_range: [f64; 2]) -> Result<[f32; 3]> {
    let [lo, hi] = gain_range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gain range must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = [1.0f32; 3];
    for v in &mut g {
        *v = if lo == hi { lo as f32 } else { rng.gen_range(lo..=hi) as f32 };
    }
    Ok(g)
}

/// Multiplies each channel by a seeded random gain and clamps to [0, 1].
pub fn white_balance_jitter(image: &ImageTensor, seed: u64, gain_range: [f64; 2]) -> Result<ImageTensor> {
    let g = white_balance_gains(seed, gain_range)?;
    let values = image
        .values
        .chunks_exact(3)
        .flat_map(|px| [0, 1, 2].map(|c| (px[c] * g[c]).clamp(0.0, 1.0)))
        .collect();
    Ok(ImageTensor {
        height: image.height,
        width: image.width,
        values,
    })
}

/// Bilinear resize (pixel-center aligned) of an 8-bit raster, scaled to [0, 1].
pub fn resize_normalize(image: &RgbImage, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    let src = ImageTensor::from_rgb(image)?;
    resize_tensor(&src, out_h, out_w)
}

pub fn resize_tensor(src: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("target dimensions must be positive".into()));
    }
    if (out_h, out_w) == (src.height, src.width) {
        return Ok(src.clone());
    }
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, src.height);
    let xs = axis(out_w, src.width);
    let mut values = Vec::with_capacity(out_h * out_w * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let top = src.get(y0, x0, c) * (1.0 - fx) + src.get(y0, x1, c) * fx;
                let bot = src.get(y1, x0, c) * (1.0 - fx) + src.get(y1, x1, c) * fx;
                values.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
    }
    Ok(ImageTensor {
        height: out_h,
        width: out_w,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Rgb;
    use proptest::prelude::*;

    fn reference_image() -> ImageTensor {
        let (h, w) = (6, 5);
        let values = (0..h * w * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        ImageTensor::new(h, w, values).unwrap()
    }

    #[test]
    fn identity_gain_is_noop() {
        let img = reference_image();
        assert_eq!(white_balance_jitter(&img, 9, [1.0, 1.0]).unwrap(), img);
    }

    #[test]
    fn black_stays_black() {
        let img = ImageTensor::new(4, 4, vec![0.0; 48]).unwrap();
        let out = white_balance_jitter(&img, 3, [0.5, 2.0]).unwrap();
        assert!(out.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_gain_range() {
        let img = reference_image();
        for r in [[0.0, 1.0], [1.2, 1.1], [-1.0, 1.0]] {
            assert!(matches!(white_balance_jitter(&img, 1, r), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn seed_42_fixture() {
        // gains for seed 42 in [0.7, 1.3], frozen from the first run
        let g = white_balance_gains(42, [0.7, 1.3]).unwrap();
        let again = white_balance_gains(42, [0.7, 1.3]).unwrap();
        assert_eq!(g.map(f32::to_bits), again.map(f32::to_bits));
        let img = reference_image();
        let a = white_balance_jitter(&img, 42, [0.7, 1.3]).unwrap();
        let b = white_balance_jitter(&img, 42, [0.7, 1.3]).unwrap();
        let bits = |t: &ImageTensor| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(g, FROZEN_SEED_42_GAINS);
    }

    const FROZEN_SEED_42_GAINS: [f32; 3] = [1.1091378, 1.2701652, 0.9565098];

    #[test]
    fn checkerboard_averages() {
        let mut img = RgbImage::new(2, 2);
        for (x, y, p) in img.enumerate_pixels_mut() {
            let v = if (x + y) % 2 == 0 { 255 } else { 0 };
            *p = Rgb([v, v, v]);
        }
        let out = resize_normalize(&img, 1, 1).unwrap();
        assert_eq!(out.values(), &[0.5, 0.5, 0.5]);
    }

    #[test]
    fn same_size_only_normalizes() {
        let img = RgbImage::from_fn(3, 2, |x, y| Rgb([(x * 50) as u8, (y * 90) as u8, 255]));
        let out = resize_normalize(&img, 2, 3).unwrap();
        assert_eq!(out.get(1, 2, 0), 100.0 / 255.0);
        assert_eq!(out.get(1, 2, 1), 90.0 / 255.0);
        assert_eq!(out.get(0, 0, 2), 1.0);
    }

    #[test]
    fn zero_sized_input_rejected() {
        assert!(resize_normalize(&RgbImage::new(0, 4), 2, 2).is_err());
        assert!(resize_normalize(&RgbImage::new(2, 2), 0, 2).is_err());
    }

    #[test]
    fn smooth_gradient_survives_down_up() {
        let img = RgbImage::from_fn(64, 64, |x, y| {
            Rgb([(x * 4) as u8, (y * 4) as u8, ((x + y) * 2) as u8])
        });
        let src = ImageTensor::from_rgb(&img).unwrap();
        let down = resize_tensor(&src, 32, 32).unwrap();
        let up = resize_tensor(&down, 64, 64).unwrap();
        let dev = src
            .values()
            .iter()
            .zip(up.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(dev < 0.02, "max deviation {dev}");
    }

    fn tensor_strategy() -> impl Strategy<Value = ImageTensor> {
        (1usize..6, 1usize..6).prop_flat_map(|(h, w)| {
            proptest::collection::vec(0.0f32..=1.0, h * w * 3)
                .prop_map(move |v| ImageTensor::new(h, w, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn jitter_stays_in_range_and_commutes_with_flip(img in tensor_strategy(), seed in 0u64..1000) {
            let a = white_balance_jitter(&img, seed, [0.5, 1.8]).unwrap();
            prop_assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let b = white_balance_jitter(&img.flip_horizontal(), seed, [0.5, 1.8]).unwrap();
            prop_assert_eq!(a.flip_horizontal(), b);
        }

        #[test]
        fn resize_stays_in_range(img in tensor_strategy(), h in 1usize..9, w in 1usize..9) {
            let out = resize_tensor(&img, h, w).unwrap();
            prop_assert!(out.values().iter().all(|v| (0.0..=1.0).contains(v)));
            prop_assert_eq!(out.values().len(), h * w * 3);
        }
    }
}
