//! Recording ingestion, stream synchronization and sample assembly.

mod io;
mod sync;

use image::RgbImage;
use serde::{Deserialize, Serialize};

pub use io::{
    load_dataset, read_frames_dir, read_gt_csv, write_frames_dir, write_gt_csv, ClipEntry, Manifest,
    SubjectEntry, MANIFEST_FILE, SCHEMA,
};
pub use sync::{
    align, blink_proxy, build_samples, clean, clean_with_stats, estimate_offset, gt_blink_series,
    region_darkness, AlignedPair, Alignment, CleanStats, Rect, TimeSeries, DEFAULT_SEARCH_RANGE_MS,
    DEFAULT_TOLERANCE_MS, WARMUP_FRAMES,
};

use crate::blendshape::{extract_half_target, BlendShapeVector, Side, NUM_HALF};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Indoor,
    Outdoor,
}

impl Location {
    pub const ALL: [Location; 2] = [Location::Indoor, Location::Outdoor];

    pub fn as_str(self) -> &'static str {
        match self {
            Location::Indoor => "indoor",
            Location::Outdoor => "outdoor",
        }
    }

    pub fn other(self) -> Location {
        match self {
            Location::Indoor => Location::Outdoor,
            Location::Outdoor => Location::Indoor,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub timestamp_ms: i64,
    pub image: RgbImage,
    pub side: Side,
    pub seq_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRecord {
    pub timestamp_ms: i64,
    pub weights: BlendShapeVector,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub subject: String,
    pub location: Location,
    pub clip_id: u32,
    pub timestamp_ms: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncedSample {
    pub image: RgbImage,
    pub side: Side,
    pub target: [f64; NUM_HALF],
    pub provenance: Provenance,
}

/// Identifies one recording session of one subject.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClipKey {
    pub subject: String,
    pub location: Location,
    pub clip_id: u32,
}

impl ClipKey {
    pub fn provenance(&self, timestamp_ms: i64) -> Provenance {
        Provenance {
            subject: self.subject.clone(),
            location: self.location,
            clip_id: self.clip_id,
            timestamp_ms,
        }
    }
}

/// Raw streams of one clip as recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub key: ClipKey,
    pub left: Vec<FrameRecord>,
    pub right: Vec<FrameRecord>,
    pub gt: Vec<GroundTruthRecord>,
}

impl Recording {
    pub fn validate(&self) -> Result<()> {
        for (name, stream, side) in [("left", &self.left, Side::Left), ("right", &self.right, Side::Right)] {
            if stream.iter().any(|f| f.side != side) {
                return Err(Error::SideMismatch(format!("{name} stream holds frames of the other side")));
            }
            if stream.windows(2).any(|w| w[1].timestamp_ms <= w[0].timestamp_ms) {
                return Err(Error::InvalidArgument(format!("{name} frame timestamps not strictly increasing")));
            }
            if stream.iter().enumerate().any(|(i, f)| f.seq_index != i) {
                return Err(Error::InvalidArgument(format!("{name} seq_index not contiguous from 0")));
            }
        }
        if self.gt.windows(2).any(|w| w[1].timestamp_ms <= w[0].timestamp_ms) {
            return Err(Error::InvalidArgument("ground-truth timestamps not strictly increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncConfig {
    pub tolerance_ms: i64,
    pub search_range_ms: i64,
    /// Eye crop in right-camera pixel coordinates; the left stream uses its mirror.
    pub eye_region: Rect,
    /// Skips the offset search when set.
    pub offset_ms: Option<i64>,
}

impl SyncConfig {
    pub fn with_eye_region(eye_region: Rect) -> Self {
        SyncConfig {
            tolerance_ms: DEFAULT_TOLERANCE_MS,
            search_range_ms: DEFAULT_SEARCH_RANGE_MS,
            eye_region,
            offset_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamReport {
    pub frames: usize,
    pub matched: usize,
    pub dropped_unmatched: usize,
    pub dropped_warmup: usize,
    pub dropped_invalid: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncReport {
    pub clip: ClipKey,
    pub offset_ms: i64,
    pub left: StreamReport,
    pub right: StreamReport,
    /// Frames kept on both sides (same seq_index).
    pub pairs: usize,
}

/// A left/right frame pair with its label, both images as captured.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePair {
    pub seq_index: usize,
    pub timestamp_ms: i64,
    pub left: RgbImage,
    pub right: RgbImage,
    pub gt: BlendShapeVector,
}

impl FramePair {
    /// The two half-face training samples (left mirrored into the canonical view).
    pub fn samples(&self, key: &ClipKey) -> [SyncedSample; 2] {
        let provenance = key.provenance(self.timestamp_ms);
        [Side::Left, Side::Right].map(|side| SyncedSample {
            image: match side {
                Side::Left => image::imageops::flip_horizontal(&self.left),
                Side::Right => self.right.clone(),
            },
            side,
            target: extract_half_target(&self.gt, side),
            provenance: provenance.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub key: ClipKey,
    pub pairs: Vec<FramePair>,
    /// Span of the kept pairs' timestamps.
    pub duration_ms: i64,
}

fn mirror_rect(r: Rect, image_width: u32) -> Rect {
    Rect {
        x: image_width.saturating_sub(r.x + r.width),
        ..r
    }
}

fn stream_report(frames: usize, a: &Alignment<'_>, stats: CleanStats, kept: usize) -> StreamReport {
    StreamReport {
        frames,
        matched: a.pairs.len(),
        dropped_unmatched: a.unmatched,
        dropped_warmup: stats.dropped_warmup,
        dropped_invalid: stats.dropped_invalid,
        kept,
    }
}

/// Estimates the clock offset from the blink proxy of both streams, aligns,
/// cleans, and keeps frames present on both sides.
pub fn prepare_clip(rec: &Recording, cfg: &SyncConfig) -> Result<(Clip, SyncReport)> {
    rec.validate()?;
    if rec.right.is_empty() || rec.left.is_empty() {
        return Err(Error::Empty(format!("clip {:?} has an empty frame stream", rec.key)));
    }
    let offset_ms = match cfg.offset_ms {
        Some(o) => o,
        None => {
            let right = blink_proxy(&rec.right, cfg.eye_region)?;
            let width = rec.left[0].image.width();
            let left = blink_proxy(&rec.left, mirror_rect(cfg.eye_region, width))?;
            let proxy = if left.t_ms == right.t_ms {
                let v = left.values.iter().zip(&right.values).map(|(a, b)| 0.5 * (a + b)).collect();
                TimeSeries::new(right.t_ms.clone(), v)?
            } else {
                right
            };
            estimate_offset(&proxy, &gt_blink_series(&rec.gt)?, cfg.search_range_ms)?
        }
    };

    let la = align(&rec.left, &rec.gt, offset_ms, cfg.tolerance_ms);
    let ra = align(&rec.right, &rec.gt, offset_ms, cfg.tolerance_ms);
    let (lk, ls) = clean_with_stats(&la.pairs);
    let (rk, rs) = clean_with_stats(&ra.pairs);

    let mut pairs = Vec::new();
    let mut li = lk.iter().peekable();
    for r in &rk {
        while li.next_if(|l| l.frame.seq_index < r.frame.seq_index).is_some() {}
        if let Some(l) = li.next_if(|l| l.frame.seq_index == r.frame.seq_index) {
            pairs.push(FramePair {
                seq_index: r.frame.seq_index,
                timestamp_ms: r.frame.timestamp_ms,
                left: l.frame.image.clone(),
                right: r.frame.image.clone(),
                gt: r.gt.weights,
            });
        }
    }
    let duration_ms = match (pairs.first(), pairs.last()) {
        (Some(a), Some(b)) => b.timestamp_ms - a.timestamp_ms,
        _ => 0,
    };
    let report = SyncReport {
        clip: rec.key.clone(),
        offset_ms,
        left: stream_report(rec.left.len(), &la, ls, lk.len()),
        right: stream_report(rec.right.len(), &ra, rs, rk.len()),
        pairs: pairs.len(),
    };
    Ok((
        Clip {
            key: rec.key.clone(),
            pairs,
            duration_ms,
        },
        report,
    ))
}

/// Synchronized clips of a whole study.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub clips: Vec<Clip>,
}

impl Dataset {
    pub fn subjects(&self) -> Vec<String> {
        let mut s: Vec<String> = self.clips.iter().map(|c| c.key.subject.clone()).collect();
        s.sort();
        s.dedup();
        s
    }

    pub fn clip(&self, key: &ClipKey) -> Option<&Clip> {
        self.clips.iter().find(|c| &c.key == key)
    }

    pub fn clips_of<'a>(&'a self, subject: &'a str) -> impl Iterator<Item = &'a Clip> + 'a {
        self.clips.iter().filter(move |c| c.key.subject == subject)
    }

    pub fn pair_count(&self) -> usize {
        self.clips.iter().map(|c| c.pairs.len()).sum()
    }

    /// Protocol deviations worth reporting (fewer than `expected` clips per location).
    pub fn protocol_warnings(&self, expected_per_location: usize) -> Vec<String> {
        let mut out = Vec::new();
        for s in self.subjects() {
            for loc in Location::ALL {
                let n = self.clips_of(&s).filter(|c| c.key.location == loc).count();
                if n < expected_per_location {
                    out.push(format!(
                        "subject {s}: {n} {} clip(s), protocol expects {expected_per_location}",
                        loc.as_str()
                    ));
                }
            }
        }
        out
    }
}
