//! Linear blend-shape face mesh, its text file format, and the
//! inner-canthal millimeter scale used by the vertex-error metric.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blendshape::{BlendShapeId, BlendShapeVector, NUM_BLENDSHAPES};
use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

pub const NUM_EVAL_VERTICES: usize = 13;
pub const NUM_EYE_VERTICES: usize = 6;
pub const NUM_MOUTH_VERTICES: usize = 7;

/// Default inner canthal distance in millimeters.
pub const DEFAULT_ICD_MM: f64 = 32.0;

const MAGIC_LINE: &str = "BTMESH 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexRegion {
    Eye,
    Mouth,
}

impl VertexRegion {
    fn as_str(self) -> &'static str {
        match self {
            VertexRegion::Eye => "eye",
            VertexRegion::Mouth => "mouth",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "eye" => Some(VertexRegion::Eye),
            "mouth" => Some(VertexRegion::Mouth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalVertex {
    pub index: usize,
    pub region: VertexRegion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceMesh {
    base: Vec<Point3>,
    /// One displacement array per blend shape, canonical index order.
    deltas: Vec<Vec<Point3>>,
    canthi: (usize, usize),
    eval: Vec<EvalVertex>,
}

impl FaceMesh {
    pub fn new(
        base: Vec<Point3>,
        deltas: Vec<Vec<Point3>>,
        canthi: (usize, usize),
        eval: Vec<EvalVertex>,
    ) -> Result<Self> {
        let n = base.len();
        if n == 0 {
            return Err(Error::DegenerateMesh("mesh has no vertices".into()));
        }
        if deltas.len() != NUM_BLENDSHAPES {
            return Err(Error::InvalidArgument(format!(
                "expected {NUM_BLENDSHAPES} delta arrays, got {}",
                deltas.len()
            )));
        }
        for (k, d) in deltas.iter().enumerate() {
            if d.len() != n {
                return Err(Error::VertexCountMismatch {
                    what: format!("delta {}", crate::blendshape::NAMES[k]),
                    expected: n,
                    found: d.len(),
                });
            }
        }
        let in_range = |i: usize, what: &str| {
            if i < n {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!(
                    "{what} index {i} out of range for {n} vertices"
                )))
            }
        };
        in_range(canthi.0, "canthus")?;
        in_range(canthi.1, "canthus")?;
        if canthi.0 == canthi.1 {
            return Err(Error::DegenerateMesh("inner canthus indices coincide".into()));
        }
        if distance(&base[canthi.0], &base[canthi.1]) <= 0.0 {
            return Err(Error::DegenerateMesh("zero inner canthal distance".into()));
        }
        for e in &eval {
            in_range(e.index, "eval vertex")?;
        }
        let eyes = eval.iter().filter(|e| e.region == VertexRegion::Eye).count();
        if eval.len() != NUM_EVAL_VERTICES || eyes != NUM_EYE_VERTICES {
            return Err(Error::InvalidArgument(format!(
                "expected 6 eye + 7 mouth eval vertices, got {eyes} eye + {} mouth",
                eval.len() - eyes
            )));
        }
        Ok(FaceMesh {
            base,
            deltas,
            canthi,
            eval,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.base.len()
    }

    pub fn base_vertices(&self) -> &[Point3] {
        &self.base
    }

    pub fn delta(&self, id: BlendShapeId) -> &[Point3] {
        &self.deltas[id.index()]
    }

    pub fn canthi(&self) -> (usize, usize) {
        self.canthi
    }

    pub fn eval_vertices(&self) -> &[EvalVertex] {
        &self.eval
    }

    pub fn canthal_distance(&self) -> f64 {
        distance(&self.base[self.canthi.0], &self.base[self.canthi.1])
    }

    /// Same mesh with every coordinate multiplied by `s`.
    pub fn scaled(&self, s: f64) -> FaceMesh {
        let sc = |p: &Point3| [p[0] * s, p[1] * s, p[2] * s];
        FaceMesh {
            base: self.base.iter().map(sc).collect(),
            deltas: self
                .deltas
                .iter()
                .map(|d| d.iter().map(sc).collect())
                .collect(),
            canthi: self.canthi,
            eval: self.eval.clone(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let point = |s: &mut String, p: &Point3| {
            let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
        };
        let _ = writeln!(s, "{MAGIC_LINE}");
        let _ = writeln!(s, "vertices {}", self.base.len());
        for p in &self.base {
            point(&mut s, p);
        }
        let _ = writeln!(s, "canthi {} {}", self.canthi.0, self.canthi.1);
        for e in &self.eval {
            let _ = writeln!(s, "eval {} {}", e.index, e.region.as_str());
        }
        for id in BlendShapeId::all() {
            let _ = writeln!(s, "delta {}", id.name());
            for p in &self.deltas[id.index()] {
                point(&mut s, p);
            }
        }
        s
    }

    /// Parses the `BTMESH 1` text format. Blend shapes without a `delta`
    /// block get zero displacement.
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let perr = |line: usize, msg: String| Error::parse(context, line, msg);

        match lines.next() {
            Some((_, l)) if l == MAGIC_LINE => {}
            Some((n, l)) => return Err(perr(n, format!("expected header `{MAGIC_LINE}`, found `{l}`"))),
            None => return Err(perr(0, "empty mesh file".into())),
        }

        let mut base: Option<Vec<Point3>> = None;
        let mut deltas: Vec<Option<Vec<Point3>>> = vec![None; NUM_BLENDSHAPES];
        let mut canthi = None;
        let mut eval = Vec::new();

        let read_points = |lines: &mut dyn Iterator<Item = (usize, &str)>,
                           count: usize,
                           header_line: usize,
                           what: &str|
         -> Result<Vec<Point3>> {
            let mut pts = Vec::with_capacity(count);
            for _ in 0..count {
                let Some((n, l)) = lines.next() else {
                    return Err(Error::VertexCountMismatch {
                        what: format!("{what} (line {header_line})"),
                        expected: count,
                        found: pts.len(),
                    });
                };
                let vals: Vec<&str> = l.split_whitespace().collect();
                let parsed: Option<Vec<f64>> = if vals.len() == 3 {
                    vals.iter().map(|v| v.parse::<f64>().ok()).collect()
                } else {
                    None
                };
                match parsed {
                    Some(v) if v.iter().all(|x| x.is_finite()) => pts.push([v[0], v[1], v[2]]),
                    _ => {
                        // a directive where a point should be means the block is short
                        if vals.first().is_some_and(|w| w.chars().all(char::is_alphabetic)) {
                            return Err(Error::VertexCountMismatch {
                                what: format!("{what} (line {header_line})"),
                                expected: count,
                                found: pts.len(),
                            });
                        }
                        return Err(Error::parse(context, n, format!("expected `x y z`, found `{l}`")));
                    }
                }
            }
            Ok(pts)
        };

        while let Some((n, line)) = lines.next() {
            let mut words = line.split_whitespace();
            let directive = words.next().unwrap_or_default();
            let args: Vec<&str> = words.collect();
            let int_arg = |i: usize| -> Result<usize> {
                args.get(i)
                    .and_then(|a| a.parse().ok())
                    .ok_or_else(|| perr(n, format!("`{directive}` expects integer argument {}", i + 1)))
            };
            match directive {
                "vertices" => {
                    if base.is_some() {
                        return Err(perr(n, "duplicate `vertices` block".into()));
                    }
                    let count = int_arg(0)?;
                    base = Some(read_points(&mut lines, count, n, "vertices")?);
                }
                "canthi" => {
                    if args.len() != 2 {
                        return Err(perr(n, "`canthi` expects two indices".into()));
                    }
                    canthi = Some((int_arg(0)?, int_arg(1)?));
                }
                "eval" => {
                    if args.len() != 2 {
                        return Err(perr(n, "`eval` expects an index and a region".into()));
                    }
                    let region = VertexRegion::parse(args[1])
                        .ok_or_else(|| perr(n, format!("unknown eval region `{}`", args[1])))?;
                    eval.push(EvalVertex {
                        index: int_arg(0)?,
                        region,
                    });
                }
                "delta" => {
                    let Some(vcount) = base.as_ref().map(Vec::len) else {
                        return Err(perr(n, "`delta` before `vertices`".into()));
                    };
                    let name = args.first().copied().unwrap_or_default();
                    let id = BlendShapeId::from_name(name)
                        .ok_or_else(|| Error::UnknownBlendShape(format!("{name} ({context}:{n})")))?;
                    if deltas[id.index()].is_some() {
                        return Err(perr(n, format!("duplicate delta for `{name}`")));
                    }
                    deltas[id.index()] = Some(read_points(&mut lines, vcount, n, &format!("delta {name}"))?);
                }
                other => return Err(perr(n, format!("unknown directive `{other}`"))),
            }
        }

        let base = base.ok_or_else(|| perr(0, "missing `vertices` block".into()))?;
        let canthi = canthi.ok_or_else(|| perr(0, "missing `canthi` line".into()))?;
        let n = base.len();
        let deltas = deltas
            .into_iter()
            .map(|d| d.unwrap_or_else(|| vec![[0.0; 3]; n]))
            .collect();
        FaceMesh::new(base, deltas, canthi, eval)
    }
}


pub fn distance(a: &Point3, b: &Point3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Vertex positions for the given activations: base plus the weighted sum of deltas.
pub fn deform(mesh: &FaceMesh, weights: &BlendShapeVector) -> Vec<Point3> {
    let mut out = mesh.base.clone();
    for (k, &w) in weights.weights().iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (v, d) in out.iter_mut().zip(&mesh.deltas[k]) {
            v[0] += w * d[0];
            v[1] += w * d[1];
            v[2] += w * d[2];
        }
    }
    out
}

/// Deformed positions of only the listed vertices.
pub fn deform_vertices(mesh: &FaceMesh, weights: &BlendShapeVector, indices: &[usize]) -> Vec<Point3> {
    indices
        .iter()
        .map(|&i| {
            let mut p = mesh.base[i];
            for (k, &w) in weights.weights().iter().enumerate() {
                let d = mesh.deltas[k][i];
                p[0] += w * d[0];
                p[1] += w * d[1];
                p[2] += w * d[2];
            }
            p
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmScale {
    millimeters_per_model_unit: f64,
}

impl MmScale {
    pub fn new(millimeters_per_model_unit: f64) -> Result<Self> {
        if millimeters_per_model_unit.is_finite() && millimeters_per_model_unit > 0.0 {
            Ok(MmScale {
                millimeters_per_model_unit,
            })
        } else {
            Err(Error::InvalidArgument(format!(
                "millimeter scale must be positive and finite, got {millimeters_per_model_unit}"
            )))
        }
    }

    pub fn mm_per_unit(&self) -> f64 {
        self.millimeters_per_model_unit
    }
}

pub fn canthal_scale(mesh: &FaceMesh, icd_mm: f64) -> Result<MmScale> {
    if !(icd_mm.is_finite() && icd_mm > 0.0) {
        return Err(Error::InvalidArgument(format!("icd_mm must be positive, got {icd_mm}")));
    }
    let d = mesh.canthal_distance();
    if d <= 0.0 {
        return Err(Error::DegenerateMesh("zero inner canthal distance".into()));
    }
    MmScale::new(icd_mm / d)
}

// --- procedural face -------------------------------------------------------

struct Bump {
    center: [f64; 2],
    radius: f64,
    disp: Point3,
}

const fn bump(cx: f64, cy: f64, radius: f64, dx: f64, dy: f64, dz: f64) -> Bump {
    Bump {
        center: [cx, cy],
        radius,
        disp: [dx, dy, dz],
    }
}

// Face frame: +x toward the subject's left, +y up, +z out of the face.
const EYE: [f64; 2] = [0.35, 0.25];
const INNER_CANTHUS: [f64; 2] = [0.16, 0.25];
const BROW: [f64; 2] = [0.32, 0.5];
const UPPER_LID: [f64; 2] = [0.35, 0.30];
const LOWER_LID: [f64; 2] = [0.35, 0.19];
const MOUTH_CORNER: [f64; 2] = [0.3, -0.55];
const UPPER_LIP: [f64; 2] = [0.0, -0.48];
const LOWER_LIP: [f64; 2] = [0.0, -0.62];
const LOWER_LIP_MID: [f64; 2] = [0.15, -0.61];
const CHIN: [f64; 2] = [0.0, -0.98];
const TONGUE_TIP: Point3 = [0.0, -0.56, 0.3];

/// Left-side shapes in side-block order; right side is the x-mirror.
fn side_bumps(slot: usize) -> Vec<Bump> {
    let [ex, ey] = EYE;
    let [cx, cy] = MOUTH_CORNER;
    match slot {
        0 => vec![bump(UPPER_LID[0], UPPER_LID[1], 0.08, 0.0, -0.09, 0.01)],
        1 => vec![bump(ex, ey, 0.05, 0.0, -0.03, 0.0)],
        2 => vec![bump(ex, ey, 0.05, -0.03, 0.0, 0.0)],
        3 => vec![bump(ex, ey, 0.05, 0.03, 0.0, 0.0)],
        4 => vec![bump(ex, ey, 0.05, 0.0, 0.03, 0.0)],
        5 => vec![
            bump(LOWER_LID[0], LOWER_LID[1], 0.08, 0.0, 0.04, 0.01),
            bump(UPPER_LID[0], UPPER_LID[1], 0.07, 0.0, -0.02, 0.0),
        ],
        6 => vec![bump(UPPER_LID[0], UPPER_LID[1], 0.08, 0.0, 0.04, 0.0)],
        7 => vec![bump(cx, cy, 0.12, 0.05, 0.07, -0.01)],
        8 => vec![bump(cx, cy, 0.12, 0.0, -0.06, 0.0)],
        9 => vec![bump(cx, cy, 0.1, 0.04, 0.0, -0.02)],
        10 => vec![bump(cx, cy, 0.12, 0.06, -0.03, 0.0)],
        11 => vec![bump(0.15, -0.55, 0.1, 0.0, 0.015, -0.02)],
        12 => vec![bump(LOWER_LIP_MID[0], LOWER_LIP_MID[1], 0.1, 0.0, -0.06, 0.0)],
        13 => vec![bump(0.15, -0.48, 0.1, 0.0, 0.05, 0.0)],
        14 => vec![bump(BROW[0], BROW[1], 0.15, 0.0, -0.06, 0.01)],
        15 => vec![bump(0.45, 0.5, 0.12, 0.0, 0.07, 0.0)],
        16 => vec![bump(0.45, 0.0, 0.15, 0.0, 0.04, 0.02)],
        17 => vec![bump(0.1, 0.0, 0.08, 0.0, 0.03, 0.01)],
        _ => unreachable!(),
    }
}

fn center_bumps(slot: usize) -> Vec<Bump> {
    let [ux, uy] = UPPER_LIP;
    let [lx, ly] = LOWER_LIP;
    let [cx, cy] = MOUTH_CORNER;
    match slot {
        0 => vec![bump(0.0, -0.9, 0.35, 0.0, 0.0, 0.08)],
        1 => vec![bump(0.0, -0.85, 0.35, 0.08, 0.0, 0.0)],
        2 => vec![bump(0.0, -0.85, 0.35, -0.08, 0.0, 0.0)],
        3 => vec![
            bump(0.0, -0.9, 0.4, 0.0, -0.2, 0.0),
            bump(lx, ly, 0.12, 0.0, -0.08, 0.0),
        ],
        4 => vec![bump(lx, ly, 0.12, 0.0, 0.06, 0.0)],
        5 => vec![
            bump(0.0, -0.55, 0.15, 0.0, 0.0, 0.05),
            bump(cx, cy, 0.08, -0.03, 0.0, 0.0),
            bump(-cx, cy, 0.08, 0.03, 0.0, 0.0),
        ],
        6 => vec![
            bump(0.0, -0.55, 0.15, 0.0, 0.0, 0.07),
            bump(cx, cy, 0.08, -0.06, 0.0, 0.0),
            bump(-cx, cy, 0.08, 0.06, 0.0, 0.0),
        ],
        7 => vec![bump(0.0, -0.55, 0.25, 0.08, 0.0, 0.0)],
        8 => vec![bump(0.0, -0.55, 0.25, -0.08, 0.0, 0.0)],
        9 => vec![bump(lx, ly, 0.12, 0.0, 0.02, -0.04)],
        10 => vec![bump(ux, uy, 0.12, 0.0, -0.02, -0.04)],
        11 => vec![bump(lx, ly, 0.12, 0.0, 0.04, 0.02)],
        12 => vec![bump(ux, uy, 0.12, 0.0, 0.03, 0.02)],
        13 => vec![
            bump(0.15, 0.5, 0.1, 0.0, 0.07, 0.0),
            bump(-0.15, 0.5, 0.1, 0.0, 0.07, 0.0),
        ],
        14 => vec![
            bump(0.45, -0.25, 0.2, 0.05, 0.0, 0.06),
            bump(-0.45, -0.25, 0.2, -0.05, 0.0, 0.06),
        ],
        // tongueOut only moves the tongue vertex
        15 => vec![],
        _ => unreachable!(),
    }
}

fn surface_z(x: f64, y: f64) -> f64 {
    let r = (x / 0.95).powi(2) + ((y + 0.15) / 1.1).powi(2);
    0.5 * (1.0 - r).max(0.0).sqrt()
}

fn apply_bumps(base: &[Point3], bumps: &[Bump], mirror_x: bool) -> Vec<Point3> {
    base.iter()
        .map(|p| {
            let mut d = [0.0; 3];
            for b in bumps {
                let (bx, dx) = if mirror_x {
                    (-b.center[0], -b.disp[0])
                } else {
                    (b.center[0], b.disp[0])
                };
                let r2 = (p[0] - bx).powi(2) + (p[1] - b.center[1]).powi(2);
                let g = (-r2 / (2.0 * b.radius * b.radius)).exp();
                if g < 1e-6 {
                    continue;
                }
                d[0] += g * dx;
                d[1] += g * b.disp[1];
                d[2] += g * b.disp[2];
            }
            d
        })
        .collect()
}

impl FaceMesh {
    /// The bundled low-poly face: a 17×17 grid over a half-ellipsoid plus
    /// explicit landmark vertices, with localized Gaussian deltas for every
    /// blend shape. Model units: inner canthal distance is 0.32.
    pub fn procedural() -> FaceMesh {
        let mut base = Vec::new();
        let n = 17;
        for iy in 0..n {
            for ix in 0..n {
                let x = -0.9 + 1.8 * ix as f64 / (n - 1) as f64;
                let y = -1.1 + 1.9 * iy as f64 / (n - 1) as f64;
                base.push([x, y, surface_z(x, y)]);
            }
        }
        let mut add = |p: [f64; 2]| {
            base.push([p[0], p[1], surface_z(p[0], p[1])]);
            base.len() - 1
        };
        let mirror = |p: [f64; 2]| [-p[0], p[1]];

        let canthus_l = add(INNER_CANTHUS);
        let canthus_r = add(mirror(INNER_CANTHUS));
        let mut eval = Vec::new();
        for p in [BROW, UPPER_LID, LOWER_LID] {
            eval.push(EvalVertex { index: add(p), region: VertexRegion::Eye });
            eval.push(EvalVertex { index: add(mirror(p)), region: VertexRegion::Eye });
        }
        for p in [MOUTH_CORNER, mirror(MOUTH_CORNER), UPPER_LIP, LOWER_LIP, LOWER_LIP_MID, CHIN] {
            eval.push(EvalVertex { index: add(p), region: VertexRegion::Mouth });
        }
        base.push(TONGUE_TIP);
        let tongue = base.len() - 1;
        eval.push(EvalVertex { index: tongue, region: VertexRegion::Mouth });

        let mut deltas = Vec::with_capacity(NUM_BLENDSHAPES);
        for id in BlendShapeId::all() {
            let i = id.index();
            let mut d = match id.block() {
                crate::blendshape::Block::Left => apply_bumps(&base, &side_bumps(i), false),
                crate::blendshape::Block::Right => apply_bumps(&base, &side_bumps(i - 18), true),
                crate::blendshape::Block::Center => apply_bumps(&base, &center_bumps(i - 36), false),
            };
            // the tongue sits behind the lips; only jaw and tongue shapes move it
            d[tongue] = match id.name() {
                "jawOpen" => [0.0, -0.12, 0.0],
                "jawForward" => [0.0, 0.0, 0.04],
                "tongueOut" => [0.0, -0.06, 0.3],
                _ => [0.0; 3],
            };
            deltas.push(d);
        }
        FaceMesh::new(base, deltas, (canthus_l, canthus_r), eval).expect("procedural mesh is valid")
    }
}
