//! Cross-stream synchronization: blink proxy, clock-offset search,
//! nearest-timestamp alignment and cleaning.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{FrameRecord, GroundTruthRecord, Provenance, SyncedSample};
use crate::blendshape::{extract_half_target, Side};
use crate::error::{Error, Result};

/// Frames at the start of every recording that are discarded (exposure settling).
pub const WARMUP_FRAMES: usize = 3;
pub const DEFAULT_TOLERANCE_MS: i64 = 17;
pub const DEFAULT_SEARCH_RANGE_MS: i64 = 5000;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeries {
    pub t_ms: Vec<i64>,
    pub values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(t_ms: Vec<i64>, values: Vec<f64>) -> Result<Self> {
        if t_ms.len() != values.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![t_ms.len()],
                found: vec![values.len()],
            });
        }
        if t_ms.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("timestamps must be strictly increasing".into()));
        }
        Ok(TimeSeries { t_ms, values })
    }

    pub fn len(&self) -> usize {
        self.t_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_ms.is_empty()
    }

    /// Piecewise-linear samples on a 1 ms grid from the first to the last timestamp.
    pub fn resample_ms(&self) -> Vec<f64> {
        let (Some(&t0), Some(&t1)) = (self.t_ms.first(), self.t_ms.last()) else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity((t1 - t0 + 1) as usize);
        let mut j = 0;
        for t in t0..=t1 {
            while j + 1 < self.t_ms.len() && self.t_ms[j + 1] <= t {
                j += 1;
            }
            if j + 1 == self.t_ms.len() {
                out.push(self.values[j]);
            } else {
                let (ta, tb) = (self.t_ms[j], self.t_ms[j + 1]);
                let f = (t - ta) as f64 / (tb - ta) as f64;
                out.push(self.values[j] * (1.0 - f) + self.values[j + 1] * f);
            }
        }
        out
    }
}

/// Pixel rectangle `[x, x + width) × [y, y + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// Mean darkness (1 − luminance) of `region` in each frame.
pub fn blink_proxy(frames: &[FrameRecord], region: Rect) -> Result<TimeSeries> {
    if frames.is_empty() {
        return Err(Error::Empty("no frames for blink proxy".into()));
    }
    if region.width == 0 || region.height == 0 {
        return Err(Error::InvalidArgument("empty eye region".into()));
    }
    let mut t = Vec::with_capacity(frames.len());
    let mut v = Vec::with_capacity(frames.len());
    for f in frames {
        t.push(f.timestamp_ms);
        v.push(region_darkness(&f.image, region)?);
    }
    TimeSeries::new(t, v)
}

pub fn region_darkness(img: &RgbImage, r: Rect) -> Result<f64> {
    if r.width == 0 || r.height == 0 {
        return Err(Error::InvalidArgument("empty eye region".into()));
    }
    if r.x + r.width > img.width() || r.y + r.height > img.height() {
        return Err(Error::InvalidArgument(format!(
            "eye region {r:?} exceeds {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let mut sum = 0.0;
    for y in r.y..r.y + r.height {
        for x in r.x..r.x + r.width {
            let p = img.get_pixel(x, y).0;
            let lum = (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0;
            sum += 1.0 - lum;
        }
    }
    Ok(sum / (r.width * r.height) as f64)
}

/// Ground-truth blink channel: mean of both eyeBlink weights over valid records.
pub fn gt_blink_series(gt: &[GroundTruthRecord]) -> Result<TimeSeries> {
    let left = crate::BlendShapeId::from_name("eyeBlinkLeft").unwrap();
    let right = crate::BlendShapeId::from_name("eyeBlinkRight").unwrap();
    let (t, v) = gt
        .iter()
        .filter(|r| r.valid)
        .map(|r| (r.timestamp_ms, 0.5 * (r.weights.get(left) + r.weights.get(right))))
        .unzip();
    TimeSeries::new(t, v)
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// Clock offset `δ` (ms) such that an event at frame time `t` appears at
/// ground-truth time `t + δ`.
///
/// The ground-truth blink channel is linearly resampled onto a 1 ms grid and
/// read at every shifted proxy timestamp; the offset maximizing the normalized
/// cross-correlation over `[-search_range_ms, search_range_ms]` wins, ties going
/// to the smaller `|δ|`. Offsets whose overlap covers fewer than half of the
/// proxy samples are not considered.
pub fn estimate_offset(proxy: &TimeSeries, gt_blink: &TimeSeries, search_range_ms: i64) -> Result<i64> {
    if proxy.len() < 2 || gt_blink.len() < 2 {
        return Err(Error::InvalidArgument("offset search needs at least two samples per series".into()));
    }
    if search_range_ms < 0 {
        return Err(Error::InvalidArgument("negative search range".into()));
    }
    if variance(&proxy.values) == 0.0 {
        return Err(Error::NoSignal("blink proxy is constant".into()));
    }
    if variance(&gt_blink.values) == 0.0 {
        return Err(Error::NoSignal("ground-truth blink channel is constant".into()));
    }
    let grid = gt_blink.resample_ms();
    let g0 = gt_blink.t_ms[0];
    let min_overlap = (proxy.len() / 2).max(2);

    let score = |delta: i64| -> Option<f64> {
        let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0usize, 0.0, 0.0, 0.0, 0.0, 0.0);
        for (&t, &x) in proxy.t_ms.iter().zip(&proxy.values) {
            let k = t + delta - g0;
            if k < 0 || k as usize >= grid.len() {
                continue;
            }
            let y = grid[k as usize];
            n += 1;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        if n < min_overlap {
            return None;
        }
        let nf = n as f64;
        let cov = sxy - sx * sy / nf;
        let vx = sxx - sx * sx / nf;
        let vy = syy - sy * sy / nf;
        if vx <= 1e-12 || vy <= 1e-12 {
            return None;
        }
        Some(cov / (vx.sqrt() * vy.sqrt()))
    };

    let mut best: Option<(i64, f64)> = None;
    let candidates = std::iter::once(0).chain((1..=search_range_ms).flat_map(|d| [d, -d]));
    for d in candidates {
        if let Some(s) = score(d) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((d, s));
            }
        }
    }
    best.map(|(d, _)| d)
        .ok_or_else(|| Error::NoSignal("no offset in range gives a usable overlap".into()))
}

#[derive(Debug, Clone, Copy)]
pub struct AlignedPair<'a> {
    pub frame: &'a FrameRecord,
    pub gt: &'a GroundTruthRecord,
}

#[derive(Debug, Clone)]
pub struct Alignment<'a> {
    pub pairs: Vec<AlignedPair<'a>>,
    pub unmatched: usize,
}

/// Matches each frame to the ground-truth record nearest `frame + offset`
/// (earlier record on an exact tie) when within `tolerance_ms`.
pub fn align<'a>(
    frames: &'a [FrameRecord],
    gt: &'a [GroundTruthRecord],
    offset_ms: i64,
    tolerance_ms: i64,
) -> Alignment<'a> {
    let mut pairs = Vec::with_capacity(frames.len());
    let mut unmatched = 0;
    for f in frames {
        let target = f.timestamp_ms + offset_ms;
        let i = gt.partition_point(|r| r.timestamp_ms < target);
        let before = i.checked_sub(1).map(|j| (j, target - gt[j].timestamp_ms));
        let after = gt.get(i).map(|r| (i, r.timestamp_ms - target));
        let nearest = match (before, after) {
            (Some(b), Some(a)) => Some(if a.1 < b.1 { a } else { b }),
            (b, a) => b.or(a),
        };
        match nearest {
            Some((j, d)) if d <= tolerance_ms => pairs.push(AlignedPair { frame: f, gt: &gt[j] }),
            _ => unmatched += 1,
        }
    }
    Alignment { pairs, unmatched }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanStats {
    pub dropped_warmup: usize,
    pub dropped_invalid: usize,
}

/// Drops warm-up frames and pairs whose ground truth is flagged invalid.
pub fn clean<'a>(pairs: &[AlignedPair<'a>]) -> Vec<AlignedPair<'a>> {
    clean_with_stats(pairs).0
}

pub fn clean_with_stats<'a>(pairs: &[AlignedPair<'a>]) -> (Vec<AlignedPair<'a>>, CleanStats) {
    let mut stats = CleanStats::default();
    let kept = pairs
        .iter()
        .filter(|p| {
            if p.frame.seq_index < WARMUP_FRAMES {
                stats.dropped_warmup += 1;
                false
            } else if !p.gt.valid {
                stats.dropped_invalid += 1;
                false
            } else {
                true
            }
        })
        .copied()
        .collect();
    (kept, stats)
}

/// Training samples from cleaned pairs of one side. Left images are mirrored
/// into the canonical (right-camera) orientation.
pub fn build_samples(pairs: &[AlignedPair<'_>], side: Side, provenance: &Provenance) -> Vec<SyncedSample> {
    pairs
        .iter()
        .map(|p| {
            let image = match side {
                Side::Left => image::imageops::flip_horizontal(&p.frame.image),
                Side::Right => p.frame.image.clone(),
            };
            SyncedSample {
                image,
                side,
                target: extract_half_target(&p.gt.weights, side),
                provenance: Provenance {
                    timestamp_ms: p.frame.timestamp_ms,
                    ..provenance.clone()
                },
            }
        })
        .collect()
}
