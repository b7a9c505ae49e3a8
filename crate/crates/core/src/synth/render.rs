//! Parametric side-view face renderer.
//!
//! The canvas shows the subject's right half as seen by the right camera:
//! the facial midline sits near the left image edge and `+u` points toward the
//! subject's right ear. Coordinates are normalized, `u = (x + 0.5) / w`,
//! `v = (y + 0.5) / h`, with `v` growing downward. Left views are produced by
//! rendering the mirrored weights and flipping the raster.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{SceneStyle, SubjectAppearance};
use crate::blendshape::{BlendShapeVector, Side};
use crate::pipeline::Rect;

type Color = [f64; 3];

const SCLERA: Color = [0.95, 0.95, 0.93];
const IRIS: Color = [0.12, 0.09, 0.07];
const MOUTH_INSIDE: Color = [0.14, 0.04, 0.05];
const TONGUE: Color = [0.85, 0.42, 0.45];
const TEETH: Color = [0.92, 0.9, 0.85];

// Nominal feature anchors before per-subject offsets.
pub(crate) const EYE_CENTER: [f64; 2] = [0.42, 0.36];
const EYE_RADII: [f64; 2] = [0.13, 0.07];
const BROW_Y: f64 = 0.22;
const NOSE: [f64; 2] = [0.15, 0.52];
const MOUTH: [f64; 2] = [0.08, 0.71];

/// Eye crop (right-camera pixels) that covers the eye of every generated subject.
pub fn eye_region(width: u32, height: u32) -> Rect {
    let (w, h) = (width as f64, height as f64);
    let x0 = ((EYE_CENTER[0] - 0.15) * w).floor().max(0.0) as u32;
    let x1 = ((EYE_CENTER[0] + 0.15) * w).ceil().min(w) as u32;
    let y0 = ((EYE_CENTER[1] - 0.08) * h).floor().max(0.0) as u32;
    let y1 = ((EYE_CENTER[1] + 0.08) * h).ceil().min(h) as u32;
    Rect {
        x: x0,
        y: y0,
        width: x1 - x0,
        height: y1 - y0,
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<Color>,
}

impl Canvas {
    fn uv(&self, x: usize, y: usize) -> (f64, f64) {
        ((x as f64 + 0.5) / self.w as f64, (y as f64 + 0.5) / self.h as f64)
    }

    /// Composites `color` with anti-aliased coverage from a signed distance
    /// (negative inside, in normalized units).
    fn fill(&mut self, color: Color, sdf: impl Fn(f64, f64) -> f64) {
        let aa = 1.0 / self.w.min(self.h) as f64;
        for y in 0..self.h {
            for x in 0..self.w {
                let (u, v) = self.uv(x, y);
                let a = (0.5 - sdf(u, v) / aa).clamp(0.0, 1.0);
                if a > 0.0 {
                    let p = &mut self.px[y * self.w + x];
                    for c in 0..3 {
                        p[c] += (color[c] - p[c]) * a;
                    }
                }
            }
        }
    }
}

fn ellipse(c: [f64; 2], r: [f64; 2]) -> impl Fn(f64, f64) -> f64 {
    move |u, v| {
        let q = (((u - c[0]) / r[0]).powi(2) + ((v - c[1]) / r[1]).powi(2)).sqrt();
        (q - 1.0) * r[0].min(r[1])
    }
}

fn capsule(a: [f64; 2], b: [f64; 2], radius: f64) -> impl Fn(f64, f64) -> f64 {
    move |u, v| {
        let (px, py) = (u - a[0], v - a[1]);
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let t = ((px * dx + py * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
        ((px - t * dx).powi(2) + (py - t * dy).powi(2)).sqrt() - radius
    }
}

fn scale(c: Color, k: f64) -> Color {
    c.map(|v| v * k)
}

fn mix(a: Color, b: Color, t: f64) -> Color {
    [0, 1, 2].map(|i| a[i] * (1.0 - t) + b[i] * t)
}

/// Expression intensities seen by the right camera, after subject gains.
struct Drive<'a> {
    w: &'a BlendShapeVector,
    app: &'a SubjectAppearance,
}

impl Drive<'_> {
    fn side(&self, stem: &str) -> f64 {
        let name = format!("{stem}Right");
        let v = self.w.by_name(&name).expect("known side stem");
        (v * self.app.gain(&name)).clamp(0.0, 1.0)
    }

    fn center(&self, name: &str) -> f64 {
        let v = self.w.by_name(name).expect("known center shape");
        (v * self.app.gain(name)).clamp(0.0, 1.0)
    }
}

/// Right-camera raster for `weights`; pure given the arguments and `rng` state.
pub fn render_right(
    app: &SubjectAppearance,
    style: &SceneStyle,
    weights: &BlendShapeVector,
    width: u32,
    height: u32,
    exposure: f64,
    rng: &mut ChaCha8Rng,
) -> RgbImage {
    let d = Drive { w: weights, app };
    let (w, h) = (width as usize, height as usize);
    let mut cv = Canvas {
        w,
        h,
        px: vec![[0.0; 3]; w * h],
    };

    // background: vertical gradient plus a soft stripe pattern outdoors
    for y in 0..h {
        for x in 0..w {
            let (u, v) = cv.uv(x, y);
            let t = v;
            let mut c = mix(style.background_top, style.background_bottom, t);
            if style.texture > 0.0 {
                let s = 0.5 + 0.5 * (u * 17.0 + v * 5.0 + style.texture_phase).sin();
                c = scale(c, 1.0 - style.texture * s);
            }
            cv.px[y * w + x] = c;
        }
    }

    let g = &app.geometry;
    let skin = app.skin;
    let jaw_open = d.center("jawOpen") * (1.0 - 0.6 * d.center("mouthClose"));
    let jaw_shift = 0.05 * (d.center("jawRight") - d.center("jawLeft")) + 0.03 * d.center("jawForward");
    let puff = d.center("cheekPuff");

    // head and neck
    let face_c = [g.face_center[0], g.face_center[1]];
    let face_r = [g.face_radii[0] + 0.05 * puff, g.face_radii[1]];
    cv.fill(scale(skin, 0.8), capsule([0.1, 0.9], [0.35, 1.2], 0.18));
    cv.fill(skin, ellipse(face_c, face_r));
    // lower jaw drops with jawOpen
    let chin_c = [face_c[0] + jaw_shift, face_c[1] + 0.22 + 0.1 * jaw_open];
    cv.fill(skin, ellipse(chin_c, [face_r[0] * 0.85, face_r[1] * 0.55]));
    // hair cap
    cv.fill(app.hair, ellipse([face_c[0], face_c[1] - face_r[1] * 1.05], [face_r[0] * 1.02, face_r[1] * 0.3]));
    // ear
    cv.fill(scale(skin, 0.85), ellipse([face_c[0] + face_r[0] * 0.88, 0.45 + g.eye_offset[1]], [0.06, 0.11]));

    // cheek bulge and squint highlight
    let cheek_sq = d.side("cheekSquint");
    let cheek_c = [0.45 + g.eye_offset[0], 0.55 - 0.03 * cheek_sq];
    cv.fill(
        mix(skin, [1.0, 0.75, 0.7], 0.25 + 0.3 * puff + 0.3 * cheek_sq),
        ellipse(cheek_c, [0.12 + 0.06 * puff, 0.08 + 0.04 * puff]),
    );

    // eye
    let ec = [EYE_CENTER[0] + g.eye_offset[0], EYE_CENTER[1] + g.eye_offset[1]];
    let er = [EYE_RADII[0] * g.eye_scale, EYE_RADII[1] * g.eye_scale];
    let blink = d.side("eyeBlink");
    let squint = d.side("eyeSquint");
    let wide = d.side("eyeWide");
    let aperture = (1.0 - blink - 0.35 * squint + 0.3 * wide).clamp(0.0, 1.3);
    cv.fill(scale(skin, 0.55), ellipse(ec, [er[0] * 1.1, er[1] * 1.35]));
    // the lid hangs from the top, so the opening centre drops as it closes
    let open_r = [er[0], er[1] * aperture];
    let oc = [ec[0], ec[1] + er[1] * (1.0 - aperture.min(1.0)) * 0.6];
    if aperture > 0.0 {
        cv.fill(SCLERA, ellipse(oc, open_r));
        let look = [
            0.06 * (d.side("eyeLookOut") - d.side("eyeLookIn")),
            0.035 * (d.side("eyeLookDown") - d.side("eyeLookUp")),
        ];
        let ir = er[1] * 0.75;
        let open = ellipse(oc, open_r);
        let iris = ellipse([oc[0] + look[0], oc[1] + look[1]], [ir, ir]);
        cv.fill(app.iris, move |u, v| open(u, v).max(iris(u, v)));
    }
    let lash_y = oc[1] - open_r[1];
    cv.fill(IRIS, capsule([ec[0] - er[0], lash_y], [ec[0] + er[0], lash_y], 0.008));

    // brow: outer end follows browOuterUp, inner end browInnerUp, both down with browDown
    let down = d.side("browDown");
    let outer = d.side("browOuterUp");
    let inner = d.center("browInnerUp");
    let by = BROW_Y + g.eye_offset[1] + g.brow_offset;
    let a = [ec[0] - 0.16, by - 0.08 * inner + 0.06 * down];
    let b = [ec[0] + 0.15, by - 0.09 * outer + 0.05 * down];
    cv.fill(app.hair, capsule(a, b, 0.022));

    // nose and nostril
    let sneer = d.side("noseSneer");
    let nc = [NOSE[0] + g.mouth_offset[0] * 0.5, NOSE[1] + g.eye_offset[1] * 0.5];
    cv.fill(scale(skin, 0.88), ellipse([nc[0] - 0.05, nc[1] - 0.02 * sneer], [0.11, 0.09]));
    cv.fill(
        scale(skin, 0.35),
        ellipse([nc[0], nc[1] + 0.035 - 0.03 * sneer], [0.035 + 0.02 * sneer, 0.018 + 0.008 * sneer]),
    );

    // mouth
    let smile = d.side("mouthSmile");
    let frown = d.side("mouthFrown");
    let stretch = d.side("mouthStretch");
    let dimple = d.side("mouthDimple");
    let press = d.side("mouthPress");
    let lower_down = d.side("mouthLowerDown");
    let upper_up = d.side("mouthUpperUp");
    let pucker = d.center("mouthPucker");
    let funnel = d.center("mouthFunnel");
    let shift = 0.06 * (d.center("mouthRight") - d.center("mouthLeft")) + jaw_shift * 0.6;
    let mc = [MOUTH[0] + g.mouth_offset[0] + shift, MOUTH[1] + g.mouth_offset[1]];
    let half_w = (g.mouth_width * (1.0 + 0.45 * smile + 0.5 * stretch + 0.2 * dimple - 0.45 * pucker - 0.3 * funnel))
        .max(0.05);
    let corner = [mc[0] + half_w, mc[1] - 0.06 * smile + 0.06 * frown];
    let gap = (0.26 * jaw_open + 0.05 * funnel + 0.05 * lower_down + 0.04 * upper_up) * (1.0 - 0.7 * press);
    let lip_t = (0.028 * (1.0 + 0.9 * pucker + 0.4 * funnel - 0.4 * press)
        * (1.0 - 0.5 * d.center("mouthRollUpper").max(d.center("mouthRollLower"))))
    .max(0.006);
    let upper_y = mc[1] - 0.35 * gap - 0.03 * upper_up - 0.025 * d.center("mouthShrugUpper");
    let lower_y = mc[1] + 0.65 * gap - 0.025 * d.center("mouthShrugLower");
    let mid_x = mc[0] - 0.02 - 0.03 * pucker;
    if gap > 0.002 {
        let opening = ellipse([mc[0] + half_w * 0.4, 0.5 * (upper_y + lower_y)], [half_w * 0.6, 0.5 * (lower_y - upper_y)]);
        cv.fill(MOUTH_INSIDE, &opening);
        if gap > 0.06 {
            let teeth_y = upper_y + 0.012;
            let teeth = capsule([mid_x, teeth_y], [corner[0] - 0.03, teeth_y], 0.012);
            cv.fill(TEETH, |u, v| opening(u, v).max(teeth(u, v)));
        }
        let tongue = d.center("tongueOut");
        if tongue > 0.0 {
            cv.fill(
                TONGUE,
                ellipse([mid_x + 0.03 - 0.03 * tongue, lower_y - 0.01], [0.05 + 0.06 * tongue, 0.02 + 0.03 * tongue]),
            );
        }
    }
    let lip = mix(skin, app.lip, 0.8 - 0.3 * press);
    cv.fill(lip, capsule([mid_x, upper_y - lip_t], corner, lip_t));
    cv.fill(lip, capsule([mid_x, lower_y + lip_t], corner, lip_t * 1.15));
    if dimple > 0.0 {
        cv.fill(scale(skin, 0.5), ellipse([corner[0] + 0.035, corner[1]], [0.012 * dimple + 1e-3, 0.02 * dimple + 1e-3]));
    }

    // lighting, sensor noise, quantization
    let gain = style.illumination * exposure * (1.0 + style.flicker * (rng.gen::<f64>() * 2.0 - 1.0));
    let mut img = RgbImage::new(width, height);
    for (i, p) in img.pixels_mut().enumerate() {
        let c = cv.px[i];
        let mut out = [0u8; 3];
        for k in 0..3 {
            let noise = (rng.gen::<f64>() - 0.5) * 2.0 * style.noise;
            let v = (c[k] * gain * style.cast[k] + noise).clamp(0.0, 1.0);
            out[k] = (v * 255.0).round() as u8;
        }
        *p = Rgb(out);
    }
    img
}

/// Camera view of one side. The left camera sees the mirror image of a right
/// view of the mirrored expression.
pub fn render_side_view(
    app: &SubjectAppearance,
    style: &SceneStyle,
    weights: &BlendShapeVector,
    side: Side,
    width: u32,
    height: u32,
    exposure: f64,
    rng: &mut ChaCha8Rng,
) -> RgbImage {
    match side {
        Side::Right => render_right(app, style, weights, width, height, exposure, rng),
        Side::Left => image::imageops::flip_horizontal(&render_right(
            app,
            style,
            &weights.mirrored(),
            width,
            height,
            exposure,
            rng,
        )),
    }
}
