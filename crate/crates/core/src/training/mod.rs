//! Experiment protocols: leave-one-subject-out training, user calibration,
//! calibration curves, and their provenance records.

mod audit;
mod eval;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use image::RgbImage;
use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use audit::{audit_leakage, LeakageAudit, ProvenanceLog, RunManifest};
pub use eval::{evaluate, input_tensor, predict_full_face, predict_pairs, EvalReport};

use crate::augment::{white_balance_jitter, AugmentConfig};
use crate::blendshape::{extract_half_target, Side, NUM_HALF};
use crate::error::{Error, Result};
use crate::nn::{train_step, Adam, AdamConfig, Architecture, Regressor, Tensor, DEFAULT_LOSS_BASE};
use crate::pipeline::{ClipKey, Dataset, Location};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_independent: usize,
    pub epochs_calibration: usize,
    pub calibration_fraction: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub augmentation: AugmentConfig,
    pub loss_base: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_independent: 5,
            epochs_calibration: 10,
            calibration_fraction: 0.10,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            augmentation: AugmentConfig::default(),
            loss_base: DEFAULT_LOSS_BASE,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.epochs_independent < 1 || self.epochs_calibration < 1 {
            return bad("epochs must be at least 1");
        }
        if !(self.calibration_fraction > 0.0 && self.calibration_fraction <= 1.0) {
            return bad("calibration_fraction must lie in (0, 1]");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.loss_base.is_finite() && self.loss_base > 0.0) {
            return bad("loss_base must be positive");
        }
        if self.augmentation.input_h < 8 || self.augmentation.input_w < 8 {
            return bad("input size must be at least 8x8");
        }
        Ok(())
    }

    pub fn architecture(&self) -> Architecture {
        Architecture::standard(self.augmentation.input_h, self.augmentation.input_w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub test_subject: String,
    pub training_subjects: Vec<String>,
    pub calibration_clip: ClipKey,
    /// Test-subject clips at the calibration location, calibration clip excluded.
    pub same_location: Vec<ClipKey>,
    /// Test-subject clips at the other location.
    pub another_location: Vec<ClipKey>,
}

impl SplitPlan {
    /// Holds out `test_subject` and picks its calibration clip with `seed`.
    pub fn new(data: &Dataset, test_subject: &str, seed: u64) -> Result<Self> {
        let subjects = data.subjects();
        if !subjects.iter().any(|s| s == test_subject) {
            return Err(Error::InvalidArgument(format!("test subject `{test_subject}` not in dataset")));
        }
        let training_subjects: Vec<String> = subjects.into_iter().filter(|s| s != test_subject).collect();
        if training_subjects.is_empty() {
            return Err(Error::Empty("no training subjects besides the test subject".into()));
        }
        let mut own: Vec<ClipKey> = data.clips_of(test_subject).map(|c| c.key.clone()).collect();
        own.sort();
        let pick = seed::derive(seed, &format!("calibration-clip/{test_subject}"), 0) as usize % own.len();
        let calibration_clip = own[pick].clone();
        let loc = calibration_clip.location;
        let same_location = own
            .iter()
            .filter(|k| k.location == loc && **k != calibration_clip)
            .cloned()
            .collect();
        let another_location = own.iter().filter(|k| k.location == loc.other()).cloned().collect();
        Ok(SplitPlan {
            test_subject: test_subject.to_string(),
            training_subjects,
            calibration_clip,
            same_location,
            another_location,
        })
    }

    pub fn calibration_location(&self) -> Location {
        self.calibration_clip.location
    }

    pub fn evaluation_clips(&self) -> Vec<ClipKey> {
        self.same_location.iter().chain(&self.another_location).cloned().collect()
    }
}

/// One half-face training example borrowed from the dataset.
#[derive(Debug, Clone, Copy)]
pub struct SampleRef<'a> {
    pub clip: &'a ClipKey,
    pub pair: usize,
    pub side: Side,
    pub image: &'a RgbImage,
    pub timestamp_ms: i64,
    target: [f32; NUM_HALF],
}

fn pair_samples<'a>(key: &'a ClipKey, pair: usize, p: &'a crate::pipeline::FramePair) -> [SampleRef<'a>; 2] {
    [(Side::Left, &p.left), (Side::Right, &p.right)].map(|(side, image)| SampleRef {
        clip: key,
        pair,
        side,
        image,
        timestamp_ms: p.timestamp_ms,
        target: extract_half_target(&p.gt, side).map(|v| v as f32),
    })
}

/// Both half-face samples of every pair of every clip of `subjects`.
pub fn subject_samples<'a>(data: &'a Dataset, subjects: &[String]) -> Vec<SampleRef<'a>> {
    data.clips
        .iter()
        .filter(|c| subjects.contains(&c.key.subject))
        .flat_map(|c| c.pairs.iter().enumerate().flat_map(move |(i, p)| pair_samples(&c.key, i, p)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Regressor<f32>,
    /// Mean pre-update batch loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub provenance: ProvenanceLog,
    /// Seconds of calibration-clip data used (calibration runs only).
    pub calibration_seconds: Option<f64>,
}

fn batch(model: &Regressor<f32>, samples: &[SampleRef<'_>], aug: &AugmentConfig, aug_seed: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let a = model.architecture();
    let mut x = Vec::with_capacity(samples.len() * a.input_len());
    let mut y = Vec::with_capacity(samples.len() * NUM_HALF);
    for (k, s) in samples.iter().enumerate() {
        let t = crate::augment::resize_normalize(s.image, a.input_h, a.input_w)?;
        let t = if s.side == Side::Left { t.flip_horizontal() } else { t };
        let t = if aug.enabled {
            white_balance_jitter(&t, seed::derive(aug_seed, "wb", k as u64), aug.gain_range)?
        } else {
            t
        };
        x.extend(t.into_values());
        y.extend(s.target);
    }
    Ok((
        Tensor::new(vec![samples.len(), a.input_h, a.input_w, a.input_c], x)?,
        Tensor::new(vec![samples.len(), NUM_HALF], y)?,
    ))
}

fn fit(model: &mut Regressor<f32>, samples: &[SampleRef<'_>], epochs: usize, cfg: &TrainConfig, run_seed: u64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::Empty("no training samples".into()));
    }
    let mut opt = Adam::new(
        model,
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    let mut losses = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..epochs {
        order.shuffle(&mut seed::rng(run_seed, "shuffle", epoch as u64));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let picked: Vec<SampleRef<'_>> = chunk.iter().map(|&i| samples[i]).collect();
            let aug_seed = seed::derive(run_seed, "augment", ((epoch as u64) << 32) | b as u64);
            let (x, y) = batch(model, &picked, &cfg.augmentation, aug_seed)?;
            let loss = train_step(model, &mut opt, &x, &y, cfg.loss_base)?;
            total += loss as f64 * picked.len() as f64;
        }
        losses.push(total / samples.len() as f64);
    }
    Ok(losses)
}

/// The untrained network every scheme starts from.
pub fn initial_model(cfg: &TrainConfig) -> Result<Regressor<f32>> {
    Regressor::init(cfg.architecture(), seed::derive(cfg.seed, "init", 0))
}

/// Leave-one-subject-out training on every training subject's samples.
pub fn train_user_independent(data: &Dataset, cfg: &TrainConfig, split: &SplitPlan) -> Result<TrainOutcome> {
    cfg.validate()?;
    let samples = subject_samples(data, &split.training_subjects);
    if samples.is_empty() {
        return Err(Error::Empty("training subjects have no samples".into()));
    }
    let mut model = initial_model(cfg)?;
    let run_seed = seed::derive(cfg.seed, "independent", 0);
    let epoch_losses = fit(&mut model, &samples, cfg.epochs_independent, cfg, run_seed)?;
    Ok(TrainOutcome {
        model,
        epoch_losses,
        provenance: ProvenanceLog::from_samples("independent", &samples),
        calibration_seconds: None,
    })
}

/// Fine-tunes a copy of `base` on `k` randomly chosen frame pairs of the
/// calibration clip (`k = round(fraction · pairs)`, both sides) mixed with as
/// many samples drawn uniformly from the training pool.
pub fn calibrate(base: &Regressor<f32>, data: &Dataset, cfg: &TrainConfig, split: &SplitPlan) -> Result<TrainOutcome> {
    cfg.validate()?;
    let clip = data
        .clip(&split.calibration_clip)
        .ok_or_else(|| Error::InvalidArgument(format!("calibration clip {:?} not in dataset", split.calibration_clip)))?;
    if clip.pairs.is_empty() {
        return Err(Error::Empty("calibration clip has no usable frames".into()));
    }
    let fraction = cfg.calibration_fraction;
    let run_seed = seed::derive(cfg.seed, "calibration", fraction.to_bits());
    let n = clip.pairs.len();
    let k = ((fraction * n as f64).round() as usize).clamp(1, n);
    let mut picked = index::sample(&mut seed::rng(run_seed, "calibration-pairs", 0), n, k).into_vec();
    picked.sort_unstable();
    let mut samples: Vec<SampleRef<'_>> = picked
        .iter()
        .flat_map(|&i| pair_samples(&clip.key, i, &clip.pairs[i]))
        .collect();

    let pool = subject_samples(data, &split.training_subjects);
    if pool.is_empty() {
        return Err(Error::Empty("training pool is empty".into()));
    }
    let want = samples.len().min(pool.len());
    let mut drawn = index::sample(&mut seed::rng(run_seed, "calibration-pool", 0), pool.len(), want).into_vec();
    drawn.sort_unstable();
    samples.extend(drawn.iter().map(|&i| pool[i]));

    let mut model = base.clone();
    let epoch_losses = fit(&mut model, &samples, cfg.epochs_calibration, cfg, run_seed)?;
    let seconds = fraction * clip.duration_ms as f64 / 1000.0;
    Ok(TrainOutcome {
        model,
        epoch_losses,
        provenance: ProvenanceLog::from_samples("calibration", &samples),
        calibration_seconds: Some(seconds),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub seconds: f64,
    pub overall_mm_error: f64,
    pub same_location_mm: Option<f64>,
    pub another_location_mm: Option<f64>,
}

/// One calibration run per fraction, each evaluated on the same held-out clips.
pub fn calibration_curve(
    base: &Regressor<f32>,
    data: &Dataset,
    cfg: &TrainConfig,
    split: &SplitPlan,
    fractions: &[f64],
    mesh: &crate::mesh::FaceMesh,
    scale: crate::mesh::MmScale,
) -> Result<Vec<CurvePoint>> {
    if fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("fractions must be strictly ascending".into()));
    }
    let eval_clips = split.evaluation_clips();
    let part = |m: &Regressor<f32>, clips: &[ClipKey]| -> Result<Option<f64>> {
        if clips.is_empty() {
            return Ok(None);
        }
        Ok(Some(evaluate(m, data, clips, mesh, scale)?.overall_mean_mm()))
    };
    fractions
        .iter()
        .map(|&fraction| {
            let c = TrainConfig {
                calibration_fraction: fraction,
                ..cfg.clone()
            };
            let out = calibrate(base, data, &c, split)?;
            Ok(CurvePoint {
                fraction,
                seconds: out.calibration_seconds.unwrap_or(0.0),
                overall_mm_error: evaluate(&out.model, data, &eval_clips, mesh, scale)?.overall_mean_mm(),
                same_location_mm: part(&out.model, &split.same_location)?,
                another_location_mm: part(&out.model, &split.another_location)?,
            })
        })
        .collect()
}

/// Sample counts per clip, keyed for reports.
pub fn clip_counts(log: &ProvenanceLog) -> BTreeMap<String, usize> {
    log.clips
        .iter()
        .map(|c| (format!("{}/{}/{}", c.clip.subject, c.clip.location.as_str(), c.clip.clip_id), c.samples))
        .collect()
}
