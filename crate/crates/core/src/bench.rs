//! Forward-pass latency benchmark, one (left, right) pair per batch.

use std::time::Instant;

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Regressor;
use crate::seed;
use crate::training::predict_full_face;

pub const DEFAULT_PAIRS: usize = 400;
pub const WARMUP_PAIRS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub platform: String,
    pub mean_ms_per_pair: f64,
    pub expected_fps: f64,
    pub pairs_measured: usize,
}

impl BenchReport {
    pub fn from_mean(platform: String, mean_ms_per_pair: f64, pairs_measured: usize) -> Self {
        BenchReport {
            platform,
            mean_ms_per_pair,
            expected_fps: 1000.0 / mean_ms_per_pair,
            pairs_measured,
        }
    }
}

pub fn platform_description() -> String {
    let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    format!(
        "{}-{} cpu, single-threaded forward ({threads} hw threads available)",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

fn noise_image(w: u32, h: u32, rng: &mut impl Rng) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]))
}

/// Times `n_pairs` full-face predictions on seeded noise images at the
/// model's input size. Warm-up pairs are not counted.
pub fn bench_forward(model: &Regressor<f32>, n_pairs: usize) -> Result<BenchReport> {
    let a = model.architecture();
    let mut rng = seed::rng(0, "bench", 0);
    let pairs: Vec<(RgbImage, RgbImage)> = (0..4)
        .map(|_| {
            (
                noise_image(a.input_w as u32, a.input_h as u32, &mut rng),
                noise_image(a.input_w as u32, a.input_h as u32, &mut rng),
            )
        })
        .collect();
    bench_forward_on(model, &pairs, n_pairs)
}

/// As [`bench_forward`], cycling through the given image pairs.
pub fn bench_forward_on(model: &Regressor<f32>, pairs: &[(RgbImage, RgbImage)], n_pairs: usize) -> Result<BenchReport> {
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("n_pairs must be at least 1".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Empty("no image pairs to benchmark".into()));
    }
    for i in 0..WARMUP_PAIRS {
        let (l, r) = &pairs[i % pairs.len()];
        std::hint::black_box(predict_full_face(model, l, r)?);
    }
    let mut total_ms = 0.0;
    for i in 0..n_pairs {
        let (l, r) = &pairs[i % pairs.len()];
        let t = Instant::now();
        std::hint::black_box(predict_full_face(model, l, r)?);
        total_ms += t.elapsed().as_secs_f64() * 1e3;
    }
    Ok(BenchReport::from_mean(platform_description(), total_ms / n_pairs as f64, n_pairs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;

    #[test]
    fn report_identity() {
        let m = Regressor::init(Architecture::standard(16, 16), 1).unwrap();
        let r = bench_forward(&m, 5).unwrap();
        assert_eq!(r.pairs_measured, 5);
        assert!(r.mean_ms_per_pair > 0.0);
        assert!((r.expected_fps * r.mean_ms_per_pair - 1000.0).abs() < 1e-9);
        assert!(bench_forward(&m, 0).is_err());
    }
}
