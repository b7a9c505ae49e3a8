//! Millimeter vertex error on the deformed face mesh and per-blend-shape
//! Pearson correlation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::blendshape::{BlendShapeId, BlendShapeVector, Region, NUM_BLENDSHAPES};
use crate::error::{Error, Result};
use crate::mesh::{deform_vertices, distance, FaceMesh, MmScale, VertexRegion, NUM_EVAL_VERTICES};

pub type VertexErrors = [f64; NUM_EVAL_VERTICES];

/// Per-eval-vertex distance (mm) between the face animated with `gt` and with `pred`.
pub fn vertex_error(
    mesh: &FaceMesh,
    scale: MmScale,
    gt: &BlendShapeVector,
    pred: &BlendShapeVector,
) -> VertexErrors {
    let idx: Vec<usize> = mesh.eval_vertices().iter().map(|e| e.index).collect();
    let a = deform_vertices(mesh, gt, &idx);
    let b = deform_vertices(mesh, pred, &idx);
    let mut out = [0.0; NUM_EVAL_VERTICES];
    for (o, (p, q)) in out.iter_mut().zip(a.iter().zip(&b)) {
        *o = distance(p, q) * scale.mm_per_unit();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexErrorReport {
    pub per_vertex_mm: Vec<f64>,
    pub eye_mean_mm: f64,
    pub mouth_mean_mm: f64,
    pub overall_mean_mm: f64,
    pub sample_count: usize,
    /// Standard error of the mean across groups (subjects), when grouped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eye_sem_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mouth_sem_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overall_sem_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_count: Option<usize>,
}

fn region_means(per_vertex: &[f64], regions: &[VertexRegion]) -> (f64, f64, f64) {
    let mean_of = |want: Option<VertexRegion>| {
        let vals: Vec<f64> = per_vertex
            .iter()
            .zip(regions)
            .filter(|(_, r)| want.is_none_or(|w| **r == w))
            .map(|(v, _)| *v)
            .collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    };
    (
        mean_of(Some(VertexRegion::Eye)),
        mean_of(Some(VertexRegion::Mouth)),
        mean_of(None),
    )
}

/// Means over samples, then over eye/mouth/all vertices.
pub fn aggregate_errors(samples: &[VertexErrors], regions: &[VertexRegion]) -> Result<VertexErrorReport> {
    if samples.is_empty() {
        return Err(Error::Empty("no vertex-error samples to aggregate".into()));
    }
    if regions.len() != NUM_EVAL_VERTICES {
        return Err(Error::ShapeMismatch {
            expected: vec![NUM_EVAL_VERTICES],
            found: vec![regions.len()],
        });
    }
    let n = samples.len() as f64;
    let mut per_vertex = vec![0.0; NUM_EVAL_VERTICES];
    for s in samples {
        for (acc, v) in per_vertex.iter_mut().zip(s) {
            *acc += v;
        }
    }
    per_vertex.iter_mut().for_each(|v| *v /= n);
    let (eye, mouth, overall) = region_means(&per_vertex, regions);
    Ok(VertexErrorReport {
        per_vertex_mm: per_vertex,
        eye_mean_mm: eye,
        mouth_mean_mm: mouth,
        overall_mean_mm: overall,
        sample_count: samples.len(),
        eye_sem_mm: None,
        mouth_sem_mm: None,
        overall_sem_mm: None,
        group_count: None,
    })
}

/// Like [`aggregate_errors`], but the reported means are means of per-group
/// means and the SEM fields are filled from the spread across groups.
pub fn aggregate_errors_grouped<K: Ord + Clone>(
    samples: &[(K, VertexErrors)],
    regions: &[VertexRegion],
) -> Result<VertexErrorReport> {
    if samples.is_empty() {
        return Err(Error::Empty("no vertex-error samples to aggregate".into()));
    }
    let mut groups: BTreeMap<K, Vec<VertexErrors>> = BTreeMap::new();
    for (k, e) in samples {
        groups.entry(k.clone()).or_default().push(*e);
    }
    let reports = groups
        .values()
        .map(|g| aggregate_errors(g, regions))
        .collect::<Result<Vec<_>>>()?;
    let g = reports.len() as f64;
    let mut per_vertex = vec![0.0; NUM_EVAL_VERTICES];
    for r in &reports {
        for (acc, v) in per_vertex.iter_mut().zip(&r.per_vertex_mm) {
            *acc += v / g;
        }
    }
    let (eye, mouth, overall) = region_means(&per_vertex, regions);
    let sem = |f: fn(&VertexErrorReport) -> f64| {
        let vals: Vec<f64> = reports.iter().map(f).collect();
        standard_error(&vals)
    };
    Ok(VertexErrorReport {
        per_vertex_mm: per_vertex,
        eye_mean_mm: eye,
        mouth_mean_mm: mouth,
        overall_mean_mm: overall,
        sample_count: samples.len(),
        eye_sem_mm: sem(|r| r.eye_mean_mm),
        mouth_sem_mm: sem(|r| r.mouth_mean_mm),
        overall_sem_mm: sem(|r| r.overall_mean_mm),
        group_count: Some(reports.len()),
    })
}

/// Sample standard deviation over sqrt(n); `None` for fewer than two values.
pub fn standard_error(values: &[f64]) -> Option<f64> {
    let n = values.len();
    if n < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    Some((var / n as f64).sqrt())
}

/// Relative improvement of a calibrated error over a baseline error,
/// expressed against the calibrated error: `(baseline - calibrated) / calibrated`.
pub fn improvement_ratio(baseline: f64, calibrated: f64) -> f64 {
    (baseline - calibrated) / calibrated
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Canonical blend-shape order; `None` where either series is constant.
    pub per_blendshape_r: Vec<Option<f64>>,
    pub region_means: BTreeMap<String, f64>,
    pub overall_mean: Option<f64>,
}

impl CorrelationReport {
    pub fn r(&self, id: BlendShapeId) -> Option<f64> {
        self.per_blendshape_r[id.index()]
    }
}

/// Single-pass co-moment accumulator for one channel pair.
#[derive(Debug, Clone, Copy, Default)]
struct CoMoments {
    n: f64,
    mean_x: f64,
    mean_y: f64,
    m2_x: f64,
    m2_y: f64,
    c_xy: f64,
}

impl CoMoments {
    fn push(&mut self, x: f64, y: f64) {
        self.n += 1.0;
        let dx = x - self.mean_x;
        self.mean_x += dx / self.n;
        let dy = y - self.mean_y;
        self.mean_y += dy / self.n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.c_xy += dx * (y - self.mean_y);
    }

    fn r(&self) -> Option<f64> {
        if self.m2_x <= 0.0 || self.m2_y <= 0.0 {
            return None;
        }
        Some((self.c_xy / (self.m2_x.sqrt() * self.m2_y.sqrt())).clamp(-1.0, 1.0))
    }
}

/// Pearson R for one pair of series; `None` if either has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![x.len()],
            found: vec![y.len()],
        });
    }
    let mut m = CoMoments::default();
    for (&a, &b) in x.iter().zip(y) {
        m.push(a, b);
    }
    Ok(m.r())
}

pub fn pearson_per_blendshape(
    preds: &[BlendShapeVector],
    labels: &[BlendShapeVector],
) -> Result<CorrelationReport> {
    if preds.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![labels.len(), NUM_BLENDSHAPES],
            found: vec![preds.len(), NUM_BLENDSHAPES],
        });
    }
    if preds.is_empty() {
        return Err(Error::Empty("no samples to correlate".into()));
    }
    let mut acc = [CoMoments::default(); NUM_BLENDSHAPES];
    for (p, l) in preds.iter().zip(labels) {
        for (k, m) in acc.iter_mut().enumerate() {
            m.push(p.weights()[k], l.weights()[k]);
        }
    }
    let per: Vec<Option<f64>> = acc.iter().map(CoMoments::r).collect();

    let mut region_means = BTreeMap::new();
    for region in Region::ALL {
        let vals: Vec<f64> = BlendShapeId::all()
            .filter(|id| id.region() == region)
            .filter_map(|id| per[id.index()])
            .collect();
        if !vals.is_empty() {
            region_means.insert(
                region.as_str().to_string(),
                vals.iter().sum::<f64>() / vals.len() as f64,
            );
        }
    }
    let defined: Vec<f64> = per.iter().flatten().copied().collect();
    let overall_mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(CorrelationReport {
        per_blendshape_r: per,
        region_means,
        overall_mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::DEFAULT_ICD_MM;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn regions(mesh: &FaceMesh) -> Vec<VertexRegion> {
        mesh.eval_vertices().iter().map(|e| e.region).collect()
    }

    fn random_vector(rng: &mut ChaCha8Rng) -> BlendShapeVector {
        let mut w = [0.0; NUM_BLENDSHAPES];
        for x in &mut w {
            *x = rng.gen::<f64>();
        }
        BlendShapeVector::new(w).unwrap()
    }

    #[test]
    fn identical_weights_give_zero_error() {
        let mesh = FaceMesh::procedural();
        let scale = crate::mesh::canthal_scale(&mesh, DEFAULT_ICD_MM).unwrap();
        let w = BlendShapeVector::zeros().with("jawOpen", 0.3);
        assert_eq!(vertex_error(&mesh, scale, &w, &w), [0.0; 13]);
    }

    #[test]
    fn single_shape_difference_is_linear() {
        let mesh = FaceMesh::procedural();
        let scale = MmScale::new(100.0).unwrap();
        let id = BlendShapeId::from_name("jawOpen").unwrap();
        let gt = BlendShapeVector::zeros().with("jawOpen", 0.9);
        let pred = BlendShapeVector::zeros().with("jawOpen", 0.4);
        let err = vertex_error(&mesh, scale, &gt, &pred);
        for (e, ev) in err.iter().zip(mesh.eval_vertices()) {
            let d = mesh.delta(id)[ev.index];
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            assert!((e - 0.5 * len * 100.0).abs() < 1e-9);
        }
    }

    #[test]
    fn vertex_error_is_symmetric() {
        let mesh = FaceMesh::procedural();
        let scale = MmScale::new(32.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let (a, b) = (random_vector(&mut rng), random_vector(&mut rng));
            assert_eq!(vertex_error(&mesh, scale, &a, &b), vertex_error(&mesh, scale, &b, &a));
        }
    }

    #[test]
    fn rescaled_mesh_gives_same_millimeters() {
        let mesh = FaceMesh::procedural();
        let big = mesh.scaled(7.5);
        let s1 = crate::mesh::canthal_scale(&mesh, 32.0).unwrap();
        let s2 = crate::mesh::canthal_scale(&big, 32.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let (a, b) = (random_vector(&mut rng), random_vector(&mut rng));
            let e1 = vertex_error(&mesh, s1, &a, &b);
            let e2 = vertex_error(&big, s2, &a, &b);
            for (x, y) in e1.iter().zip(&e2) {
                assert!((x - y).abs() < 1e-9 * x.max(1.0));
            }
        }
    }

    #[test]
    fn aggregate_examples() {
        let mesh = FaceMesh::procedural();
        let r = regions(&mesh);
        let rep = aggregate_errors(&[[0.0; 13]], &r).unwrap();
        assert_eq!(rep.overall_mean_mm, 0.0);
        let rep = aggregate_errors(&[[1.0; 13], [3.0; 13]], &r).unwrap();
        assert_eq!(rep.per_vertex_mm, vec![2.0; 13]);
        assert_eq!((rep.eye_mean_mm, rep.mouth_mean_mm, rep.overall_mean_mm), (2.0, 2.0, 2.0));
        assert!(matches!(aggregate_errors(&[], &r), Err(Error::Empty(_))));
    }

    #[test]
    fn region_means_weight_vertices_equally() {
        let mesh = FaceMesh::procedural();
        let r = regions(&mesh);
        let mut s = [0.0; 13];
        for (v, reg) in s.iter_mut().zip(&r) {
            *v = if *reg == VertexRegion::Eye { 1.0 } else { 2.0 };
        }
        let rep = aggregate_errors(&[s], &r).unwrap();
        assert_eq!(rep.eye_mean_mm, 1.0);
        assert_eq!(rep.mouth_mean_mm, 2.0);
        assert!((rep.overall_mean_mm - 20.0 / 13.0).abs() < 1e-15);
    }

    #[test]
    fn grouped_sem() {
        let mesh = FaceMesh::procedural();
        let r = regions(&mesh);
        let samples = vec![("a", [1.0; 13]), ("a", [3.0; 13]), ("b", [4.0; 13])];
        let rep = aggregate_errors_grouped(&samples, &r).unwrap();
        // group means 2 and 4
        assert_eq!(rep.overall_mean_mm, 3.0);
        assert_eq!(rep.group_count, Some(2));
        assert!((rep.overall_sem_mm.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn improvement_ratio_published_numbers() {
        assert!((improvement_ratio(1.95, 1.37) - 0.423).abs() < 5e-4);
        assert!((improvement_ratio(1.95, 1.52) - 0.283).abs() < 5e-4);
    }

    #[test]
    fn pearson_self_and_anti() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<_> = (0..50).map(|_| random_vector(&mut rng)).collect();
        let rep = pearson_per_blendshape(&labels, &labels).unwrap();
        assert!(rep.per_blendshape_r.iter().all(|r| (r.unwrap() - 1.0).abs() < 1e-12));
        let inv: Vec<_> = labels
            .iter()
            .map(|l| BlendShapeVector::new(l.weights().map(|w| 1.0 - w)).unwrap())
            .collect();
        let rep = pearson_per_blendshape(&inv, &labels).unwrap();
        assert!(rep.per_blendshape_r.iter().all(|r| (r.unwrap() + 1.0).abs() < 1e-12));
        assert!((rep.overall_mean.unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(rep.region_means.len(), 7);
    }

    #[test]
    fn constant_channels_are_undefined() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let labels: Vec<_> = (0..30)
            .map(|_| random_vector(&mut rng).with("tongueOut", 0.0))
            .collect();
        let rep = pearson_per_blendshape(&labels, &labels).unwrap();
        let tongue = BlendShapeId::from_name("tongueOut").unwrap();
        assert_eq!(rep.r(tongue), None);
        assert!(!rep.region_means.contains_key("Tongue"));
        assert_eq!(rep.per_blendshape_r.iter().flatten().count(), 51);
    }

    #[test]
    fn pearson_length_mismatch() {
        let a = vec![BlendShapeVector::zeros(); 3];
        let b = vec![BlendShapeVector::zeros(); 2];
        assert!(matches!(pearson_per_blendshape(&a, &b), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn pearson_affine_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..100).map(|_| rng.gen()).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.7 + rng.gen::<f64>() * 0.3).collect();
        let r = pearson(&x, &y).unwrap().unwrap();
        let x2: Vec<f64> = x.iter().map(|v| 3.0 * v + 5.0).collect();
        let y2: Vec<f64> = y.iter().map(|v| 0.2 * v - 1.0).collect();
        assert!((pearson(&x2, &y2).unwrap().unwrap() - r).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn weights() -> impl Strategy<Value = BlendShapeVector> {
            proptest::collection::vec(0.0..=1.0f64, NUM_BLENDSHAPES)
                .prop_map(|w| BlendShapeVector::from_slice(&w).unwrap())
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn vertex_error_symmetric(a in weights(), b in weights()) {
                let mesh = FaceMesh::procedural();
                let scale = MmScale::new(32.0).unwrap();
                prop_assert_eq!(vertex_error(&mesh, scale, &a, &b), vertex_error(&mesh, scale, &b, &a));
            }

            #[test]
            fn vertex_error_zero_for_equal_weights(a in weights()) {
                let mesh = FaceMesh::procedural();
                prop_assert_eq!(vertex_error(&mesh, MmScale::new(32.0).unwrap(), &a, &a), [0.0; 13]);
            }

            #[test]
            fn millimeters_survive_mesh_rescaling(a in weights(), b in weights(), k in 0.1..50.0f64) {
                let mesh = FaceMesh::procedural();
                let big = mesh.scaled(k);
                let e1 = vertex_error(&mesh, crate::mesh::canthal_scale(&mesh, 32.0).unwrap(), &a, &b);
                let e2 = vertex_error(&big, crate::mesh::canthal_scale(&big, 32.0).unwrap(), &a, &b);
                for (x, y) in e1.iter().zip(&e2) {
                    prop_assert!((x - y).abs() < 1e-9 * x.max(1.0));
                }
            }

            #[test]
            fn pearson_positive_affine_invariant(
                xy in proptest::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 3..60),
                a in 0.01..100.0f64, b in -50.0..50.0f64,
                c in 0.01..100.0f64, d in -50.0..50.0f64,
            ) {
                let (x, y): (Vec<f64>, Vec<f64>) = xy.into_iter().unzip();
                if let Some(r) = pearson(&x, &y).unwrap() {
                    let x2: Vec<f64> = x.iter().map(|v| a * v + b).collect();
                    let y2: Vec<f64> = y.iter().map(|v| c * v + d).collect();
                    let r2 = pearson(&x2, &y2).unwrap().unwrap();
                    prop_assert!((r - r2).abs() < 1e-9, "{} vs {}", r, r2);
                }
            }
        }
    }
}
