//! On-disk study layout: manifest JSON, frame directories and ground-truth CSV.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    prepare_clip, ClipKey, Dataset, FrameRecord, GroundTruthRecord, Location, Recording, Rect, SyncConfig,
    SyncReport,
};
use crate::blendshape::{BlendShapeVector, Side, NAMES};
use crate::error::{Error, Result};

pub const SCHEMA: &str = "btrk/1";
pub const MANIFEST_FILE: &str = "manifest.json";
const TIMESTAMPS_FILE: &str = "timestamps.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: u32,
    pub location: Location,
    pub left_frames_dir: PathBuf,
    pub right_frames_dir: PathBuf,
    pub gt_csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub clips: Vec<ClipEntry>,
}

/// Study index. Relative paths resolve against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    /// Eye crop for the blink proxy, in right-camera pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eye_region: Option<Rect>,
    pub subjects: Vec<SubjectEntry>,
}

impl Manifest {
    /// Accepts the manifest file itself or the directory holding it.
    pub fn resolve_path(path: &Path) -> PathBuf {
        if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = Self::resolve_path(path.as_ref());
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        if m.schema != SCHEMA {
            return Err(Error::parse(
                path.display().to_string(),
                0,
                format!("unsupported schema `{}`, expected `{SCHEMA}`", m.schema),
            ));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn clip_count(&self) -> usize {
        self.subjects.iter().map(|s| s.clips.len()).sum()
    }
}

fn frame_file(seq: usize) -> String {
    format!("{seq:06}.png")
}

fn csv_err(ctx: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    Error::parse(ctx.display().to_string(), line, e.to_string())
}

pub fn write_frames_dir(dir: impl AsRef<Path>, frames: &[FrameRecord]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ts = dir.join(TIMESTAMPS_FILE);
    let mut w = csv::Writer::from_path(&ts).map_err(|e| csv_err(&ts, e))?;
    w.write_record(["seq_index", "timestamp_ms"]).map_err(|e| csv_err(&ts, e))?;
    for f in frames {
        w.write_record([f.seq_index.to_string(), f.timestamp_ms.to_string()])
            .map_err(|e| csv_err(&ts, e))?;
        let p = dir.join(frame_file(f.seq_index));
        f.image.save(&p).map_err(|e| Error::Image {
            path: p.clone(),
            message: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(&ts, e))
}

pub fn read_frames_dir(dir: impl AsRef<Path>, side: Side) -> Result<Vec<FrameRecord>> {
    let dir = dir.as_ref();
    let ts = dir.join(TIMESTAMPS_FILE);
    let ctx = ts.display().to_string();
    let mut r = csv::Reader::from_path(&ts).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(&ts, std::io::Error::other(e.to_string())),
        _ => csv_err(&ts, e),
    })?;
    let header = r.headers().map_err(|e| csv_err(&ts, e))?;
    if header != vec!["seq_index", "timestamp_ms"] {
        return Err(Error::parse(&ctx, 1, "expected header `seq_index,timestamp_ms`"));
    }
    let mut out: Vec<FrameRecord> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(&ts, e))?;
        let field = |k: usize| rec.get(k).unwrap_or("").trim();
        let seq: usize = field(0)
            .parse()
            .map_err(|_| Error::parse(&ctx, line, format!("bad seq_index `{}`", field(0))))?;
        let t: i64 = field(1)
            .parse()
            .map_err(|_| Error::parse(&ctx, line, format!("bad timestamp `{}`", field(1))))?;
        if seq != out.len() {
            return Err(Error::parse(&ctx, line, format!("seq_index {seq} out of order")));
        }
        if out.last().is_some_and(|p| p.timestamp_ms >= t) {
            return Err(Error::parse(&ctx, line, "timestamps not strictly increasing"));
        }
        let p = dir.join(frame_file(seq));
        let image = image::open(&p)
            .map_err(|e| Error::Image {
                path: p.clone(),
                message: e.to_string(),
            })?
            .into_rgb8();
        out.push(FrameRecord {
            timestamp_ms: t,
            image,
            side,
            seq_index: seq,
        });
    }
    Ok(out)
}

pub fn write_gt_csv(path: impl AsRef<Path>, gt: &[GroundTruthRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = ["timestamp_ms", "valid"].into_iter().chain(NAMES);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for g in gt {
        let row = [g.timestamp_ms.to_string(), (g.valid as u8).to_string()]
            .into_iter()
            .chain(g.weights.weights().iter().map(|v| format!("{v}")));
        w.write_record(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_gt_csv(path: impl AsRef<Path>) -> Result<Vec<GroundTruthRecord>> {
    let path = path.as_ref();
    let ctx = path.display().to_string();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected: Vec<&str> = ["timestamp_ms", "valid"].into_iter().chain(NAMES).collect();
    if header.len() != expected.len() {
        return Err(Error::parse(
            &ctx,
            1,
            format!("expected {} columns, found {}", expected.len(), header.len()),
        ));
    }
    for (col, (h, e)) in header.iter().zip(&expected).enumerate() {
        if h != *e {
            return Err(if col >= 2 {
                Error::UnknownBlendShape(h.to_string())
            } else {
                Error::parse(&ctx, 1, format!("column {col}: expected `{e}`, found `{h}`"))
            });
        }
    }
    let mut out: Vec<GroundTruthRecord> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let t: i64 = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(&ctx, line, format!("bad timestamp `{}`", &rec[0])))?;
        let valid = match rec[1].trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            v => return Err(Error::parse(&ctx, line, format!("bad valid flag `{v}`"))),
        };
        let w = (2..rec.len())
            .map(|k| {
                rec[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(&ctx, line, format!("bad weight `{}` for {}", &rec[k], NAMES[k - 2])))
            })
            .collect::<Result<Vec<f64>>>()?;
        let weights =
            BlendShapeVector::from_slice(&w).map_err(|e| Error::parse(&ctx, line, e.to_string()))?;
        if out.last().is_some_and(|p| p.timestamp_ms >= t) {
            return Err(Error::parse(&ctx, line, "timestamps not strictly increasing"));
        }
        out.push(GroundTruthRecord {
            timestamp_ms: t,
            weights,
            valid,
        });
    }
    Ok(out)
}

pub(crate) fn read_recording(base: &Path, subject: &str, c: &ClipEntry) -> Result<Recording> {
    Ok(Recording {
        key: ClipKey {
            subject: subject.to_string(),
            location: c.location,
            clip_id: c.clip_id,
        },
        left: read_frames_dir(base.join(&c.left_frames_dir), Side::Left)?,
        right: read_frames_dir(base.join(&c.right_frames_dir), Side::Right)?,
        gt: read_gt_csv(base.join(&c.gt_csv))?,
    })
}

/// Reads and synchronizes every clip listed in the manifest. Without an explicit
/// `sync` config the manifest's eye region and the default tolerances are used.
pub fn load_dataset(path: impl AsRef<Path>, sync: Option<SyncConfig>) -> Result<(Dataset, Vec<SyncReport>)> {
    let path = Manifest::resolve_path(path.as_ref());
    let manifest = Manifest::load(&path)?;
    let cfg = match (sync, manifest.eye_region) {
        (Some(c), _) => c,
        (None, Some(r)) => SyncConfig::with_eye_region(r),
        (None, None) => {
            return Err(Error::InvalidArgument(
                "manifest has no eye_region and no sync config was given".into(),
            ))
        }
    };
    let base = path.parent().unwrap_or(Path::new("."));
    let mut ds = Dataset::default();
    let mut reports = Vec::new();
    for s in &manifest.subjects {
        for c in &s.clips {
            let rec = read_recording(base, &s.subject_id, c)?;
            let (clip, report) = prepare_clip(&rec, &cfg)?;
            ds.clips.push(clip);
            reports.push(report);
        }
    }
    Ok((ds, reports))
}
