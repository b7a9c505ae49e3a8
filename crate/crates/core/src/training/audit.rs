//! Provenance records, run manifests and the leakage audit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SampleRef, SplitPlan, TrainConfig};
use crate::error::{Error, Result};
use crate::pipeline::{ClipKey, SCHEMA};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipCount {
    pub clip: ClipKey,
    pub samples: usize,
}

/// Which clips fed a training phase, and how many samples each contributed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProvenanceLog {
    pub phase: String,
    pub clips: Vec<ClipCount>,
}

impl ProvenanceLog {
    pub(crate) fn from_samples(phase: &str, samples: &[SampleRef<'_>]) -> Self {
        let mut counts: BTreeMap<&ClipKey, usize> = BTreeMap::new();
        for s in samples {
            *counts.entry(s.clip).or_default() += 1;
        }
        ProvenanceLog {
            phase: phase.to_string(),
            clips: counts
                .into_iter()
                .map(|(k, n)| ClipCount {
                    clip: k.clone(),
                    samples: n,
                })
                .collect(),
        }
    }

    pub fn total(&self) -> usize {
        self.clips.iter().map(|c| c.samples).sum()
    }
}

/// Everything needed to audit or reproduce one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub kind: String,
    pub config: TrainConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub split: SplitPlan,
    pub provenance: Vec<ProvenanceLog>,
    pub epoch_losses: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    pub metrics: BTreeMap<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_file: Option<String>,
}

impl RunManifest {
    pub fn new(kind: &str, config: &TrainConfig, split: &SplitPlan) -> Self {
        RunManifest {
            schema: SCHEMA.into(),
            kind: kind.into(),
            config: config.clone(),
            config_sha256: config.hash(),
            seed: config.seed,
            split: split.clone(),
            provenance: Vec::new(),
            epoch_losses: BTreeMap::new(),
            metrics: BTreeMap::new(),
            weights_file: None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub passed: bool,
    pub violations: Vec<String>,
    pub checked_samples: usize,
}

/// Verifies that independent training never saw the test subject, and that
/// calibration only used the test subject's calibration clip (never an
/// evaluation clip).
pub fn audit_leakage(split: &SplitPlan, logs: &[ProvenanceLog]) -> LeakageAudit {
    let mut violations = Vec::new();
    let eval = split.evaluation_clips();
    if eval.contains(&split.calibration_clip) {
        violations.push("calibration clip is listed as an evaluation clip".to_string());
    }
    if split.training_subjects.contains(&split.test_subject) {
        violations.push("test subject listed among training subjects".to_string());
    }
    let mut checked = 0;
    for log in logs {
        for c in &log.clips {
            checked += c.samples;
            let own = c.clip.subject == split.test_subject;
            match log.phase.as_str() {
                "independent" if own => violations.push(format!(
                    "independent training used {} samples of test subject clip {:?}",
                    c.samples, c.clip
                )),
                "calibration" if eval.contains(&c.clip) => violations.push(format!(
                    "calibration used {} samples of evaluation clip {:?}",
                    c.samples, c.clip
                )),
                "calibration" if own && c.clip != split.calibration_clip => violations.push(format!(
                    "calibration used test-subject clip {:?} other than the calibration clip",
                    c.clip
                )),
                _ => {}
            }
            if !own && !split.training_subjects.contains(&c.clip.subject) {
                violations.push(format!("{} used clip of unknown subject {:?}", log.phase, c.clip));
            }
        }
    }
    LeakageAudit {
        passed: violations.is_empty(),
        violations,
        checked_samples: checked,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Location;

    fn key(s: &str, loc: Location, id: u32) -> ClipKey {
        ClipKey {
            subject: s.into(),
            location: loc,
            clip_id: id,
        }
    }

    fn split() -> SplitPlan {
        SplitPlan {
            test_subject: "s0".into(),
            training_subjects: vec!["s1".into()],
            calibration_clip: key("s0", Location::Indoor, 0),
            same_location: vec![key("s0", Location::Indoor, 1)],
            another_location: vec![key("s0", Location::Outdoor, 2)],
        }
    }

    fn log(phase: &str, clips: &[ClipKey]) -> ProvenanceLog {
        ProvenanceLog {
            phase: phase.into(),
            clips: clips.iter().map(|c| ClipCount { clip: c.clone(), samples: 4 }).collect(),
        }
    }

    #[test]
    fn clean_run_passes() {
        let s = split();
        let logs = [
            log("independent", &[key("s1", Location::Indoor, 0)]),
            log("calibration", &[key("s0", Location::Indoor, 0), key("s1", Location::Outdoor, 2)]),
        ];
        let a = audit_leakage(&s, &logs);
        assert!(a.passed, "{:?}", a.violations);
        assert_eq!(a.checked_samples, 12);
    }

    #[test]
    fn leaks_are_reported() {
        let s = split();
        let a = audit_leakage(&s, &[log("independent", &[key("s0", Location::Outdoor, 2)])]);
        assert!(!a.passed);
        let a = audit_leakage(&s, &[log("calibration", &[key("s0", Location::Indoor, 1)])]);
        assert_eq!(a.violations.len(), 1);
        let a = audit_leakage(&s, &[log("independent", &[key("s7", Location::Indoor, 0)])]);
        assert!(!a.passed);
    }
}
