//! Full-face inference and held-out evaluation.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::augment::resize_normalize;
use crate::blendshape::{merge_half_predictions, mirror_center, BlendShapeVector, HalfFacePrediction, Side, NUM_SIDE};
use crate::error::{Error, Result};
use crate::mesh::{FaceMesh, MmScale};
use crate::metrics::{aggregate_errors_grouped, pearson_per_blendshape, vertex_error, CorrelationReport, VertexErrorReport};
use crate::nn::{Regressor, Tensor};
use crate::pipeline::{ClipKey, Dataset};

const EVAL_BATCH: usize = 64;

/// Network input for one camera image; left images are mirrored into the
/// canonical orientation.
pub fn input_tensor(model: &Regressor<f32>, image: &RgbImage, side: Side) -> Result<Vec<f32>> {
    let a = model.architecture();
    let t = resize_normalize(image, a.input_h, a.input_w)?;
    Ok(match side {
        Side::Left => t.flip_horizontal().into_values(),
        Side::Right => t.into_values(),
    })
}

fn merge(left: &[f32], right: &[f32]) -> Result<BlendShapeVector> {
    let to64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
    let (l, r) = (to64(left), to64(right));
    // left outputs are in the flipped frame: un-mirror the center block
    let mut l_center = [0.0; 16];
    l_center.copy_from_slice(&l[NUM_SIDE..]);
    let mut l = l;
    l[NUM_SIDE..].copy_from_slice(&mirror_center(&l_center));
    merge_half_predictions(
        &HalfFacePrediction::from_half(Side::Left, &l)?,
        &HalfFacePrediction::from_half(Side::Right, &r)?,
    )
}

/// Predicts all 52 weights from one synchronized (left, right) image pair.
pub fn predict_full_face(model: &Regressor<f32>, left: &RgbImage, right: &RgbImage) -> Result<BlendShapeVector> {
    if left.dimensions() != right.dimensions() {
        return Err(Error::ShapeMismatch {
            expected: vec![right.height() as usize, right.width() as usize],
            found: vec![left.height() as usize, left.width() as usize],
        });
    }
    let mut data = input_tensor(model, left, Side::Left)?;
    data.extend(input_tensor(model, right, Side::Right)?);
    let a = model.architecture();
    let out = model.forward(&Tensor::new(vec![2, a.input_h, a.input_w, a.input_c], data)?)?;
    merge(out.row(0), out.row(1))
}

/// Full-face predictions for many pairs, batched.
pub fn predict_pairs(model: &Regressor<f32>, pairs: &[(&RgbImage, &RgbImage)]) -> Result<Vec<BlendShapeVector>> {
    let a = model.architecture().clone();
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(EVAL_BATCH / 2) {
        let mut data = Vec::with_capacity(chunk.len() * 2 * a.input_len());
        for (l, r) in chunk {
            data.extend(input_tensor(model, l, Side::Left)?);
            data.extend(input_tensor(model, r, Side::Right)?);
        }
        let y = model.forward(&Tensor::new(vec![chunk.len() * 2, a.input_h, a.input_w, a.input_c], data)?)?;
        for k in 0..chunk.len() {
            out.push(merge(y.row(2 * k), y.row(2 * k + 1))?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub clips: Vec<ClipKey>,
    pub pairs: usize,
    pub vertex: VertexErrorReport,
    pub correlation: CorrelationReport,
}

impl EvalReport {
    pub fn overall_mean_mm(&self) -> f64 {
        self.vertex.overall_mean_mm
    }
}

/// Millimetre vertex errors (grouped by subject) and Pearson R over every
/// pair of the listed clips.
pub fn evaluate(model: &Regressor<f32>, data: &Dataset, clips: &[ClipKey], mesh: &FaceMesh, scale: MmScale) -> Result<EvalReport> {
    let mut errors = Vec::new();
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for key in clips {
        let clip = data
            .clip(key)
            .ok_or_else(|| Error::InvalidArgument(format!("clip {key:?} not in dataset")))?;
        let pairs: Vec<_> = clip.pairs.iter().map(|p| (&p.left, &p.right)).collect();
        let p = predict_pairs(model, &pairs)?;
        for (pred, pair) in p.into_iter().zip(&clip.pairs) {
            errors.push((key.subject.clone(), vertex_error(mesh, scale, &pair.gt, &pred)));
            preds.push(pred);
            labels.push(pair.gt);
        }
    }
    if errors.is_empty() {
        return Err(Error::Empty("no evaluation pairs".into()));
    }
    let regions: Vec<_> = mesh.eval_vertices().iter().map(|e| e.region).collect();
    Ok(EvalReport {
        clips: clips.to_vec(),
        pairs: errors.len(),
        vertex: aggregate_errors_grouped(&errors, &regions)?,
        correlation: pearson_per_blendshape(&preds, &labels)?,
    })
}
