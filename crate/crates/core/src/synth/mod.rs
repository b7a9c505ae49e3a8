//! Deterministic synthetic study generator: subjects, scenes, expression
//! trajectories, rendered camera streams and ground-truth labels.

mod render;

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use render::{eye_region, render_right, render_side_view};

use crate::blendshape::{BlendShapeId, BlendShapeVector, Block, Side, NUM_BLENDSHAPES, NUM_SIDE};
use crate::error::{Error, Result};
use crate::mesh::FaceMesh;
use crate::pipeline::{
    prepare_clip, write_frames_dir, write_gt_csv, ClipEntry, ClipKey, Dataset, FrameRecord, GroundTruthRecord,
    Location, Manifest, Recording, SubjectEntry, SyncConfig, SyncReport, MANIFEST_FILE, SCHEMA,
};
use crate::seed;

pub const FRAME_PERIOD_MS: i64 = 125;
pub const GT_FPS: f64 = 30.0;
/// Upper bound on |dw/dt| of every generated channel, per millisecond.
pub const MAX_SLOPE_PER_MS: f64 = 0.02;
/// Frame-clock time of the first camera frame.
const FRAME_START_MS: i64 = 5000;
/// Over-exposure of the first frames while the camera settles.
const SETTLING_EXPOSURE: [f64; 3] = [1.45, 1.25, 1.1];
/// Length of one recording round, as in the two-minute clips of the study protocol.
pub const DEFAULT_CLIP_SECONDS: f64 = 120.0;
pub const MESH_FILE: &str = "face.btmesh";
pub const TRUTH_FILE: &str = "truth.json";

type Color = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceGeometry {
    pub face_center: [f64; 2],
    pub face_radii: [f64; 2],
    pub eye_offset: [f64; 2],
    pub eye_scale: f64,
    pub brow_offset: f64,
    pub mouth_offset: [f64; 2],
    pub mouth_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectAppearance {
    pub seed: u64,
    pub skin: Color,
    pub hair: Color,
    pub iris: Color,
    pub lip: Color,
    pub geometry: FaceGeometry,
    /// How strongly each label shows in the image; equal for left/right twins.
    pub gains: Vec<f64>,
}

impl SubjectAppearance {
    pub fn sample(seed: u64) -> Self {
        let mut r = seed::rng(seed, "appearance", 0);
        let mut u = |lo: f64, hi: f64| r.gen_range(lo..=hi);
        let t = u(0.0, 1.0);
        let skin = [0, 1, 2].map(|c| {
            let light = [0.96, 0.80, 0.69][c];
            let dark = [0.45, 0.30, 0.22][c];
            light * (1.0 - t) + dark * t
        });
        let skin = skin.map(|v| (v * u(0.95, 1.05)).min(1.0));
        let hair_l = u(0.05, 0.45);
        let hair = [hair_l, hair_l * u(0.6, 0.9), hair_l * u(0.4, 0.7)];
        let iris = [u(0.1, 0.35), u(0.1, 0.3), u(0.05, 0.3)];
        let lip = [u(0.6, 0.8), u(0.25, 0.4), u(0.3, 0.42)];
        let geometry = FaceGeometry {
            face_center: [0.1 + u(-0.03, 0.03), 0.5 + u(-0.03, 0.03)],
            face_radii: [0.78 + u(-0.05, 0.05), 0.46 + u(-0.03, 0.03)],
            eye_offset: [u(-0.03, 0.03), u(-0.025, 0.025)],
            eye_scale: u(0.85, 1.15),
            brow_offset: u(-0.02, 0.02),
            mouth_offset: [u(-0.02, 0.02), u(-0.03, 0.03)],
            mouth_width: u(0.16, 0.22),
        };
        let stem_gain: Vec<f64> = (0..NUM_SIDE).map(|_| u(0.6, 1.4)).collect();
        let gains = BlendShapeId::all()
            .map(|id| match id.block() {
                Block::Left => stem_gain[id.index()],
                Block::Right => stem_gain[id.index() - NUM_SIDE],
                Block::Center => u(0.6, 1.4),
            })
            .collect();
        SubjectAppearance {
            seed,
            skin,
            hair,
            iris,
            lip,
            geometry,
            gains,
        }
    }

    pub fn gain(&self, name: &str) -> f64 {
        BlendShapeId::from_name(name).map_or(1.0, |id| self.gains[id.index()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneStyle {
    pub location: Location,
    pub background_top: Color,
    pub background_bottom: Color,
    pub texture: f64,
    pub texture_phase: f64,
    pub illumination: f64,
    /// Per-frame relative illumination jitter amplitude.
    pub flicker: f64,
    /// Per-channel colour cast of the light source.
    pub cast: Color,
    pub noise: f64,
}

impl SceneStyle {
    pub fn sample(location: Location, seed: u64) -> Self {
        let mut r = seed::rng(seed, "style", 0);
        let mut u = |lo: f64, hi: f64| r.gen_range(lo..=hi);
        match location {
            Location::Indoor => {
                let wall = u(0.45, 0.75);
                SceneStyle {
                    location,
                    background_top: [wall, wall * u(0.9, 1.0), wall * u(0.8, 0.95)],
                    background_bottom: [wall * 0.7, wall * 0.65, wall * 0.6],
                    texture: 0.0,
                    texture_phase: 0.0,
                    illumination: u(0.85, 1.0),
                    flicker: u(0.0, 0.02),
                    cast: [u(1.0, 1.08), 1.0, u(0.88, 0.98)],
                    noise: 0.015,
                }
            }
            Location::Outdoor => SceneStyle {
                location,
                background_top: [u(0.5, 0.7), u(0.7, 0.85), u(0.85, 1.0)],
                background_bottom: [u(0.2, 0.4), u(0.35, 0.55), u(0.15, 0.3)],
                texture: u(0.05, 0.15),
                texture_phase: u(0.0, std::f64::consts::TAU),
                illumination: u(0.95, 1.2),
                flicker: u(0.02, 0.06),
                cast: [u(0.9, 1.05), 1.0, u(0.98, 1.12)],
                noise: 0.02,
            },
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

#[derive(Debug, Clone, PartialEq)]
struct Key {
    t: f64,
    ramp: f64,
    w: [f64; NUM_BLENDSHAPES],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Blink {
    t: f64,
    sigma: f64,
    amp: f64,
}

/// Continuous-time expression trajectory (time in frame-clock milliseconds).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    keys: Vec<Key>,
    blinks: Vec<Blink>,
}

const BLINK_L: usize = 0;
const BLINK_R: usize = NUM_SIDE;

impl Trajectory {
    /// Expressions held between keyframes ~1–2 s apart, smoothstep ramps of
    /// 350–600 ms, and Gaussian blinks (FWHM 100–150 ms) every 1.5–4.5 s.
    pub fn sample(t_start: f64, t_end: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut keys = Vec::new();
        let mut t = t_start;
        let mut w = [0.0; NUM_BLENDSHAPES];
        while t <= t_end {
            keys.push(Key {
                t,
                ramp: rng.gen_range(350.0..600.0),
                w,
            });
            w = Self::expression(rng);
            t += rng.gen_range(1000.0..2000.0);
        }
        keys.push(Key { t, ramp: 400.0, w });

        let mut blinks = Vec::new();
        let mut b = t_start + rng.gen_range(300.0..2000.0);
        while b < t_end {
            let fwhm = rng.gen_range(100.0..150.0);
            blinks.push(Blink {
                t: b,
                sigma: fwhm / (2.0 * (2.0f64.ln() * 2.0).sqrt()),
                amp: rng.gen_range(0.85..1.0),
            });
            b += rng.gen_range(1500.0..4500.0);
        }
        Trajectory { keys, blinks }
    }

    fn expression(rng: &mut ChaCha8Rng) -> [f64; NUM_BLENDSHAPES] {
        let mut w = [0.0; NUM_BLENDSHAPES];
        if rng.gen_bool(0.15) {
            return w;
        }
        let jaw = BlendShapeId::from_name("jawOpen").unwrap().index();
        if rng.gen_bool(0.5) {
            w[jaw] = rng.gen_range(0.1..0.9);
        }
        for _ in 0..rng.gen_range(1..=4) {
            let i = rng.gen_range(0..NUM_BLENDSHAPES);
            if i == BLINK_L || i == BLINK_R {
                continue;
            }
            let a = rng.gen_range(0.25..1.0);
            match BlendShapeId::new(i).unwrap().block() {
                Block::Center => w[i] = a,
                _ => {
                    let j = BlendShapeId::new(i).unwrap().mirrored().index();
                    w[i] = a;
                    if rng.gen_bool(0.75) {
                        w[j] = a * rng.gen_range(0.85..1.0);
                    }
                }
            }
        }
        w
    }

    pub fn eval(&self, t: f64) -> BlendShapeVector {
        let k = self.keys.partition_point(|k| k.t <= t).clamp(1, self.keys.len() - 1);
        let (a, b) = (&self.keys[k - 1], &self.keys[k]);
        let s = smoothstep((t - a.t) / a.ramp);
        let mut w = [0.0; NUM_BLENDSHAPES];
        for i in 0..NUM_BLENDSHAPES {
            w[i] = a.w[i] + (b.w[i] - a.w[i]) * s;
        }
        if t < a.t {
            w = a.w;
        }
        let pulse: f64 = self
            .blinks
            .iter()
            .filter(|b| (t - b.t).abs() < 6.0 * b.sigma)
            .map(|b| b.amp * (-(t - b.t).powi(2) / (2.0 * b.sigma * b.sigma)).exp())
            .sum::<f64>()
            .min(1.0);
        for i in [BLINK_L, BLINK_R] {
            w[i] = w[i].max(pulse);
        }
        BlendShapeVector::clamped(w)
    }

    pub fn blink_times(&self) -> Vec<f64> {
        self.blinks.iter().map(|b| b.t).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub duration_s: f64,
    /// Ground-truth clock minus frame clock.
    pub clock_offset_ms: i64,
    pub invalid_fraction: f64,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub left: Vec<FrameRecord>,
    pub right: Vec<FrameRecord>,
    pub gt: Vec<GroundTruthRecord>,
    pub trajectory: Trajectory,
}

/// Frames at 8 fps per side and labels at 30 fps on a clock shifted by
/// `clock_offset_ms`, with bursts of invalid labels.
pub fn generate_clip(app: &SubjectAppearance, style: &SceneStyle, spec: &ClipSpec, seed: u64) -> Result<SynthClip> {
    if !(spec.duration_s > 0.0) {
        return Err(Error::InvalidArgument("clip duration must be positive".into()));
    }
    if !(0.0..1.0).contains(&spec.invalid_fraction) {
        return Err(Error::InvalidArgument("invalid_fraction must lie in [0, 1)".into()));
    }
    if spec.clock_offset_ms.abs() > FRAME_START_MS - 1000 {
        return Err(Error::InvalidArgument(format!(
            "clock offset beyond ±{} ms",
            FRAME_START_MS - 1000
        )));
    }
    let n_frames = (spec.duration_s * 1000.0 / FRAME_PERIOD_MS as f64).round().max(1.0) as usize;
    let t0 = FRAME_START_MS;
    let t_last = t0 + (n_frames as i64 - 1) * FRAME_PERIOD_MS;
    let traj = Trajectory::sample((t0 - 600) as f64, (t_last + 600) as f64, &mut seed::rng(seed, "trajectory", 0));

    let mut left = Vec::with_capacity(n_frames);
    let mut right = Vec::with_capacity(n_frames);
    for i in 0..n_frames {
        let t = t0 + i as i64 * FRAME_PERIOD_MS;
        let w = traj.eval(t as f64);
        let exposure = SETTLING_EXPOSURE.get(i).copied().unwrap_or(1.0);
        for (side, out) in [(Side::Left, &mut left), (Side::Right, &mut right)] {
            let mut r = seed::rng(seed, side.as_str(), i as u64);
            out.push(FrameRecord {
                timestamp_ms: t,
                image: render_side_view(app, style, &w, side, spec.width, spec.height, exposure, &mut r),
                side,
                seq_index: i,
            });
        }
    }

    let g_start = t0 + spec.clock_offset_ms - 500;
    let g_end = t_last + spec.clock_offset_ms + 500;
    let mut gt = Vec::new();
    for j in 0.. {
        let g = g_start + (j as f64 * 1000.0 / GT_FPS).round() as i64;
        if g > g_end {
            break;
        }
        gt.push(GroundTruthRecord {
            timestamp_ms: g,
            weights: traj.eval((g - spec.clock_offset_ms) as f64),
            valid: true,
        });
    }
    let mut r = seed::rng(seed, "invalid", 0);
    let target = (spec.invalid_fraction * gt.len() as f64).round() as usize;
    let mut invalid = 0;
    while invalid < target {
        let start = r.gen_range(0..gt.len());
        for g in gt.iter_mut().skip(start).take(r.gen_range(3..=12)) {
            if g.valid && invalid < target {
                g.valid = false;
                invalid += 1;
            }
        }
    }
    Ok(SynthClip {
        left,
        right,
        gt,
        trajectory: traj,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub n_subjects: usize,
    pub clips_per_location: usize,
    pub seed: u64,
    pub duration_s: f64,
    pub width: u32,
    pub height: u32,
    pub invalid_fraction: f64,
    /// Offsets are drawn uniformly from ±this unless `clock_offset_ms` is set.
    pub max_clock_offset_ms: i64,
    pub clock_offset_ms: Option<i64>,
}

impl StudyConfig {
    pub fn new(n_subjects: usize, clips_per_location: usize, seed: u64) -> Self {
        StudyConfig {
            n_subjects,
            clips_per_location,
            seed,
            duration_s: DEFAULT_CLIP_SECONDS,
            width: 64,
            height: 64,
            invalid_fraction: 0.03,
            max_clock_offset_ms: 1500,
            clock_offset_ms: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyClip {
    pub key: ClipKey,
    pub style: SceneStyle,
    pub clock_offset_ms: i64,
    pub seed: u64,
}

/// A generated study's metadata. Clips are rendered on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub config: StudyConfig,
    pub subjects: Vec<(String, SubjectAppearance)>,
    pub clips: Vec<StudyClip>,
}

pub fn generate_study(n_subjects: usize, clips_per_location: usize, seed: u64) -> Result<Study> {
    generate_study_with(&StudyConfig::new(n_subjects, clips_per_location, seed))
}

pub fn generate_study_with(cfg: &StudyConfig) -> Result<Study> {
    if cfg.n_subjects < 2 {
        return Err(Error::InvalidArgument("a study needs at least two subjects".into()));
    }
    if cfg.clips_per_location < 1 {
        return Err(Error::InvalidArgument("clips_per_location must be at least 1".into()));
    }
    if cfg.width < 16 || cfg.height < 16 {
        return Err(Error::InvalidArgument("synthetic images must be at least 16x16".into()));
    }
    let mut subjects = Vec::new();
    let mut clips = Vec::new();
    for s in 0..cfg.n_subjects {
        let id = format!("s{s}");
        subjects.push((id.clone(), SubjectAppearance::sample(seed::derive(cfg.seed, "subject", s as u64))));
        for (li, loc) in Location::ALL.into_iter().enumerate() {
            for c in 0..cfg.clips_per_location {
                let clip_id = (li * cfg.clips_per_location + c) as u32;
                let clip_seed = seed::derive(cfg.seed, &format!("clip/{id}"), clip_id as u64);
                let offset = cfg.clock_offset_ms.unwrap_or_else(|| {
                    let m = cfg.max_clock_offset_ms.abs();
                    seed::rng(clip_seed, "offset", 0).gen_range(-m..=m)
                });
                clips.push(StudyClip {
                    key: ClipKey {
                        subject: id.clone(),
                        location: loc,
                        clip_id,
                    },
                    style: SceneStyle::sample(loc, seed::derive(clip_seed, "style", 0)),
                    clock_offset_ms: offset,
                    seed: clip_seed,
                });
            }
        }
    }
    Ok(Study {
        config: cfg.clone(),
        subjects,
        clips,
    })
}

impl Study {
    pub fn appearance(&self, subject: &str) -> Option<&SubjectAppearance> {
        self.subjects.iter().find(|(s, _)| s == subject).map(|(_, a)| a)
    }

    pub fn eye_region(&self) -> crate::pipeline::Rect {
        eye_region(self.config.width, self.config.height)
    }

    pub fn sync_config(&self) -> SyncConfig {
        SyncConfig::with_eye_region(self.eye_region())
    }

    pub fn render_clip(&self, index: usize) -> Result<SynthClip> {
        let c = &self.clips[index];
        let app = self.appearance(&c.key.subject).expect("clip subject exists");
        let spec = ClipSpec {
            duration_s: self.config.duration_s,
            clock_offset_ms: c.clock_offset_ms,
            invalid_fraction: self.config.invalid_fraction,
            width: self.config.width,
            height: self.config.height,
        };
        generate_clip(app, &c.style, &spec, c.seed)
    }

    pub fn recording(&self, index: usize) -> Result<Recording> {
        let s = self.render_clip(index)?;
        Ok(Recording {
            key: self.clips[index].key.clone(),
            left: s.left,
            right: s.right,
            gt: s.gt,
        })
    }

    /// Renders and synchronizes every clip in memory.
    pub fn dataset(&self, sync: &SyncConfig) -> Result<(Dataset, Vec<SyncReport>)> {
        let mut ds = Dataset::default();
        let mut reports = Vec::new();
        for i in 0..self.clips.len() {
            let (clip, report) = prepare_clip(&self.recording(i)?, sync)?;
            ds.clips.push(clip);
            reports.push(report);
        }
        Ok((ds, reports))
    }

    pub fn clip_dir(key: &ClipKey) -> PathBuf {
        PathBuf::from(&key.subject).join(format!("{}_{}", key.location.as_str(), key.clip_id))
    }

    pub fn manifest(&self) -> Manifest {
        let subjects = self
            .subjects
            .iter()
            .map(|(id, _)| SubjectEntry {
                subject_id: id.clone(),
                clips: self
                    .clips
                    .iter()
                    .filter(|c| &c.key.subject == id)
                    .map(|c| {
                        let dir = Self::clip_dir(&c.key);
                        ClipEntry {
                            clip_id: c.key.clip_id,
                            location: c.key.location,
                            left_frames_dir: dir.join("left"),
                            right_frames_dir: dir.join("right"),
                            gt_csv: dir.join("gt.csv"),
                        }
                    })
                    .collect(),
            })
            .collect();
        Manifest {
            schema: SCHEMA.into(),
            eye_region: Some(self.eye_region()),
            subjects,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEntry {
    pub clip: ClipKey,
    pub clock_offset_ms: i64,
}

/// Writes the study in the on-disk ingestion format, plus the face mesh and
/// the true clock offsets. Returns the manifest.
pub fn write_study(study: &Study, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = study.manifest();
    for i in 0..study.clips.len() {
        let clip = study.render_clip(i)?;
        let base = dir.join(Study::clip_dir(&study.clips[i].key));
        write_frames_dir(base.join("left"), &clip.left)?;
        write_frames_dir(base.join("right"), &clip.right)?;
        write_gt_csv(base.join("gt.csv"), &clip.gt)?;
    }
    manifest.save(dir.join(MANIFEST_FILE))?;
    FaceMesh::procedural().save(dir.join(MESH_FILE))?;
    let truth: Vec<TruthEntry> = study
        .clips
        .iter()
        .map(|c| TruthEntry {
            clip: c.key.clone(),
            clock_offset_ms: c.clock_offset_ms,
        })
        .collect();
    let p = dir.join(TRUTH_FILE);
    let text = serde_json::to_string_pretty(&truth).map_err(|source| Error::Json { path: p.clone(), source })?;
    fs::write(&p, text + "\n").map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}
