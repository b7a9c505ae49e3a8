//! Canonical 52-entry blend-shape table, its left/right/center partition,
//! and the half-face extract/merge operations built on top of it.
//!
//! Index order is: 18 left-side shapes, the 18 matching right-side shapes
//! in the same order, then 16 center shapes. Every tensor layout and file
//! header in the crate uses this order.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_BLENDSHAPES: usize = 52;
pub const NUM_SIDE: usize = 18;
pub const NUM_CENTER: usize = 16;
/// Values produced by the network for a single side image.
pub const NUM_HALF: usize = NUM_SIDE + NUM_CENTER;

const LEFT_START: usize = 0;
const RIGHT_START: usize = NUM_SIDE;
const CENTER_START: usize = 2 * NUM_SIDE;

/// Side-block stems; the full name is stem + "Left"/"Right".
const SIDE_STEMS: [&str; NUM_SIDE] = [
    "eyeBlink",
    "eyeLookDown",
    "eyeLookIn",
    "eyeLookOut",
    "eyeLookUp",
    "eyeSquint",
    "eyeWide",
    "mouthSmile",
    "mouthFrown",
    "mouthDimple",
    "mouthStretch",
    "mouthPress",
    "mouthLowerDown",
    "mouthUpperUp",
    "browDown",
    "browOuterUp",
    "cheekSquint",
    "noseSneer",
];

const CENTER_NAMES: [&str; NUM_CENTER] = [
    "jawForward",
    "jawLeft",
    "jawRight",
    "jawOpen",
    "mouthClose",
    "mouthFunnel",
    "mouthPucker",
    "mouthLeft",
    "mouthRight",
    "mouthRollLower",
    "mouthRollUpper",
    "mouthShrugLower",
    "mouthShrugUpper",
    "browInnerUp",
    "cheekPuff",
    "tongueOut",
];

/// Canonical names in index order.
pub const NAMES: [&str; NUM_BLENDSHAPES] = [
    "eyeBlinkLeft",
    "eyeLookDownLeft",
    "eyeLookInLeft",
    "eyeLookOutLeft",
    "eyeLookUpLeft",
    "eyeSquintLeft",
    "eyeWideLeft",
    "mouthSmileLeft",
    "mouthFrownLeft",
    "mouthDimpleLeft",
    "mouthStretchLeft",
    "mouthPressLeft",
    "mouthLowerDownLeft",
    "mouthUpperUpLeft",
    "browDownLeft",
    "browOuterUpLeft",
    "cheekSquintLeft",
    "noseSneerLeft",
    "eyeBlinkRight",
    "eyeLookDownRight",
    "eyeLookInRight",
    "eyeLookOutRight",
    "eyeLookUpRight",
    "eyeSquintRight",
    "eyeWideRight",
    "mouthSmileRight",
    "mouthFrownRight",
    "mouthDimpleRight",
    "mouthStretchRight",
    "mouthPressRight",
    "mouthLowerDownRight",
    "mouthUpperUpRight",
    "browDownRight",
    "browOuterUpRight",
    "cheekSquintRight",
    "noseSneerRight",
    CENTER_NAMES[0],
    CENTER_NAMES[1],
    CENTER_NAMES[2],
    CENTER_NAMES[3],
    CENTER_NAMES[4],
    CENTER_NAMES[5],
    CENTER_NAMES[6],
    CENTER_NAMES[7],
    CENTER_NAMES[8],
    CENTER_NAMES[9],
    CENTER_NAMES[10],
    CENTER_NAMES[11],
    CENTER_NAMES[12],
    CENTER_NAMES[13],
    CENTER_NAMES[14],
    CENTER_NAMES[15],
];

/// Versioned name list, one name per line in index order.
pub const NAMES_RESOURCE: &str = include_str!("../resources/blendshapes_v1.txt");

/// Direction-sensitive center pairs, as offsets into the center block.
const MIRRORED_CENTER_PAIRS: [(usize, usize); 2] = [(1, 2), (7, 8)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }

    fn block_start(self) -> usize {
        match self {
            Side::Left => LEFT_START,
            Side::Right => RIGHT_START,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Left,
    Right,
    Center,
}

/// Facial part grouping used for per-region correlation summaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Brow,
    Eyes,
    Nose,
    Mouth,
    Cheeks,
    Jaw,
    Tongue,
}

impl Region {
    pub const ALL: [Region; 7] = [
        Region::Brow,
        Region::Eyes,
        Region::Nose,
        Region::Mouth,
        Region::Cheeks,
        Region::Jaw,
        Region::Tongue,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Brow => "Brow",
            Region::Eyes => "Eyes",
            Region::Nose => "Nose",
            Region::Mouth => "Mouth",
            Region::Cheeks => "Cheeks",
            Region::Jaw => "Jaw",
            Region::Tongue => "Tongue",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlendShapeId(u8);

impl BlendShapeId {
    pub fn new(index: usize) -> Option<Self> {
        (index < NUM_BLENDSHAPES).then_some(BlendShapeId(index as u8))
    }

    pub fn from_name(name: &str) -> Option<Self> {
        NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| BlendShapeId(i as u8))
    }

    pub fn all() -> impl Iterator<Item = BlendShapeId> {
        (0..NUM_BLENDSHAPES).map(|i| BlendShapeId(i as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        NAMES[self.index()]
    }

    pub fn block(self) -> Block {
        partition(self)
    }

    pub fn region(self) -> Region {
        let name = self.name();
        if name.starts_with("brow") {
            Region::Brow
        } else if name.starts_with("eye") {
            Region::Eyes
        } else if name.starts_with("nose") {
            Region::Nose
        } else if name.starts_with("mouth") {
            Region::Mouth
        } else if name.starts_with("cheek") {
            Region::Cheeks
        } else if name.starts_with("jaw") {
            Region::Jaw
        } else {
            Region::Tongue
        }
    }

    /// The id this shape maps to under a horizontal flip of the face.
    pub fn mirrored(self) -> BlendShapeId {
        let i = self.index();
        let j = match partition(self) {
            Block::Left => i + NUM_SIDE,
            Block::Right => i - NUM_SIDE,
            Block::Center => {
                let c = i - CENTER_START;
                let m = MIRRORED_CENTER_PAIRS
                    .iter()
                    .find_map(|&(a, b)| {
                        if c == a {
                            Some(b)
                        } else if c == b {
                            Some(a)
                        } else {
                            None
                        }
                    })
                    .unwrap_or(c);
                CENTER_START + m
            }
        };
        BlendShapeId(j as u8)
    }
}

impl fmt::Display for BlendShapeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn partition(id: BlendShapeId) -> Block {
    match id.index() {
        i if i < RIGHT_START => Block::Left,
        i if i < CENTER_START => Block::Right,
        _ => Block::Center,
    }
}

/// Name of a side-block entry for the given side.
pub fn side_name(side: Side, slot: usize) -> String {
    let suffix = match side {
        Side::Left => "Left",
        Side::Right => "Right",
    };
    format!("{}{}", SIDE_STEMS[slot], suffix)
}

pub fn center_name(slot: usize) -> &'static str {
    CENTER_NAMES[slot]
}

fn check_unit(values: &[f64], what: &str) -> Result<()> {
    for (i, &w) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidArgument(format!(
                "{what}[{i}] = {w} is outside [0, 1]"
            )));
        }
    }
    Ok(())
}

/// 52 activations in [0, 1], canonical index order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendShapeVector([f64; NUM_BLENDSHAPES]);

impl BlendShapeVector {
    pub fn new(weights: [f64; NUM_BLENDSHAPES]) -> Result<Self> {
        check_unit(&weights, "weights")?;
        Ok(BlendShapeVector(weights))
    }

    pub fn from_slice(weights: &[f64]) -> Result<Self> {
        let arr: [f64; NUM_BLENDSHAPES] = weights.try_into().map_err(|_| Error::ShapeMismatch {
            expected: vec![NUM_BLENDSHAPES],
            found: vec![weights.len()],
        })?;
        Self::new(arr)
    }

    /// Clamps into [0, 1]; NaN becomes 0.
    pub fn clamped(mut weights: [f64; NUM_BLENDSHAPES]) -> Self {
        for w in &mut weights {
            *w = if w.is_nan() { 0.0 } else { w.clamp(0.0, 1.0) };
        }
        BlendShapeVector(weights)
    }

    pub fn zeros() -> Self {
        BlendShapeVector([0.0; NUM_BLENDSHAPES])
    }

    pub fn weights(&self) -> &[f64; NUM_BLENDSHAPES] {
        &self.0
    }

    pub fn get(&self, id: BlendShapeId) -> f64 {
        self.0[id.index()]
    }

    pub fn by_name(&self, name: &str) -> Option<f64> {
        BlendShapeId::from_name(name).map(|id| self.get(id))
    }

    /// Sets one weight, clamping into [0, 1].
    pub fn set(&mut self, id: BlendShapeId, value: f64) {
        self.0[id.index()] = value.clamp(0.0, 1.0);
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        let id = BlendShapeId::from_name(name).expect("canonical blend-shape name");
        self.set(id, value);
        self
    }

    pub fn side_block(&self, side: Side) -> [f64; NUM_SIDE] {
        let s = side.block_start();
        self.0[s..s + NUM_SIDE].try_into().unwrap()
    }

    pub fn center_block(&self) -> [f64; NUM_CENTER] {
        self.0[CENTER_START..].try_into().unwrap()
    }

    /// The expression as seen in a horizontally flipped image: side blocks
    /// swap and direction-sensitive center pairs swap.
    pub fn mirrored(&self) -> Self {
        let mut out = [0.0; NUM_BLENDSHAPES];
        for id in BlendShapeId::all() {
            out[id.mirrored().index()] = self.0[id.index()];
        }
        BlendShapeVector(out)
    }
}

impl Default for BlendShapeVector {
    fn default() -> Self {
        Self::zeros()
    }
}

/// 34 outputs for one side image: that side's 18 shapes and the 16 center
/// shapes, both in canonical order and in the real (un-flipped) face frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfFacePrediction {
    pub side: Side,
    pub side_weights: [f64; NUM_SIDE],
    pub center_weights: [f64; NUM_CENTER],
}

impl HalfFacePrediction {
    pub fn new(
        side: Side,
        side_weights: [f64; NUM_SIDE],
        center_weights: [f64; NUM_CENTER],
    ) -> Result<Self> {
        check_unit(&side_weights, "side_weights")?;
        check_unit(&center_weights, "center_weights")?;
        Ok(HalfFacePrediction {
            side,
            side_weights,
            center_weights,
        })
    }

    /// Splits a 34-value network output (side block then center block).
    /// The center block is taken as-is; callers un-mirror left outputs first.
    pub fn from_half(side: Side, half: &[f64]) -> Result<Self> {
        if half.len() != NUM_HALF {
            return Err(Error::ShapeMismatch {
                expected: vec![NUM_HALF],
                found: vec![half.len()],
            });
        }
        Self::new(
            side,
            half[..NUM_SIDE].try_into().unwrap(),
            half[NUM_SIDE..].try_into().unwrap(),
        )
    }
}

/// Swaps jawLeft/jawRight and mouthLeft/mouthRight; everything else passes through.
pub fn mirror_center(center: &[f64; NUM_CENTER]) -> [f64; NUM_CENTER] {
    let mut out = *center;
    for &(a, b) in &MIRRORED_CENTER_PAIRS {
        out.swap(a, b);
    }
    out
}

/// Combines two half-face predictions: side blocks are copied, the center
/// block is the element-wise mean.
pub fn merge_half_predictions(
    left: &HalfFacePrediction,
    right: &HalfFacePrediction,
) -> Result<BlendShapeVector> {
    if left.side != Side::Left || right.side != Side::Right {
        return Err(Error::SideMismatch(format!(
            "expected (Left, Right), got ({:?}, {:?})",
            left.side, right.side
        )));
    }
    let mut out = [0.0; NUM_BLENDSHAPES];
    out[LEFT_START..LEFT_START + NUM_SIDE].copy_from_slice(&left.side_weights);
    out[RIGHT_START..RIGHT_START + NUM_SIDE].copy_from_slice(&right.side_weights);
    for (k, slot) in out[CENTER_START..].iter_mut().enumerate() {
        *slot = 0.5 * (left.center_weights[k] + right.center_weights[k]);
    }
    Ok(BlendShapeVector::clamped(out))
}

/// Training target for one side image. For the left side the center block
/// is mirrored, since left images are flipped into the canonical orientation.
pub fn extract_half_target(full: &BlendShapeVector, side: Side) -> [f64; NUM_HALF] {
    let mut out = [0.0; NUM_HALF];
    out[..NUM_SIDE].copy_from_slice(&full.side_block(side));
    let center = full.center_block();
    let center = match side {
        Side::Left => mirror_center(&center),
        Side::Right => center,
    };
    out[NUM_SIDE..].copy_from_slice(&center);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(name: &str) -> BlendShapeId {
        BlendShapeId::from_name(name).unwrap()
    }

    #[test]
    fn table_is_a_bijection() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..NUM_BLENDSHAPES {
            let b = BlendShapeId::new(i).unwrap();
            assert!(seen.insert(b.name()));
            assert_eq!(BlendShapeId::from_name(b.name()), Some(b));
        }
        assert!(BlendShapeId::new(52).is_none());
        assert!(BlendShapeId::from_name("eyeBlinkL").is_none());
    }

    #[test]
    fn partition_counts() {
        let count = |blk| BlendShapeId::all().filter(|b| b.block() == blk).count();
        assert_eq!(count(Block::Left), 18);
        assert_eq!(count(Block::Right), 18);
        assert_eq!(count(Block::Center), 16);
        assert_eq!(partition(id("eyeBlinkLeft")), Block::Left);
        assert_eq!(partition(id("jawOpen")), Block::Center);
        assert_eq!(partition(id("noseSneerRight")), Block::Right);
    }

    #[test]
    fn side_names_follow_stems() {
        for slot in 0..NUM_SIDE {
            assert_eq!(side_name(Side::Left, slot), NAMES[slot]);
            assert_eq!(side_name(Side::Right, slot), NAMES[NUM_SIDE + slot]);
        }
        for slot in 0..NUM_CENTER {
            assert_eq!(center_name(slot), NAMES[CENTER_START + slot]);
        }
    }

    #[test]
    fn region_counts_match_part_table() {
        let count = |r| BlendShapeId::all().filter(|b| b.region() == r).count();
        assert_eq!(count(Region::Eyes), 14);
        assert_eq!(count(Region::Jaw), 4);
        assert_eq!(count(Region::Mouth), 23);
        assert_eq!(count(Region::Brow), 5);
        assert_eq!(count(Region::Cheeks), 3);
        assert_eq!(count(Region::Nose), 2);
        assert_eq!(count(Region::Tongue), 1);
    }

    #[test]
    fn resource_matches_table() {
        let names: Vec<&str> = NAMES_RESOURCE
            .lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .collect();
        assert_eq!(names, NAMES.to_vec());
    }

    #[test]
    fn mirror_center_swaps_pairs() {
        let mut c = [0.0; NUM_CENTER];
        c[1] = 0.8;
        c[2] = 0.1;
        let m = mirror_center(&c);
        assert_eq!(m[1], 0.1);
        assert_eq!(m[2], 0.8);
        assert!(m.iter().enumerate().all(|(i, &v)| i == 1 || i == 2 || v == 0.0));
        assert_eq!(mirror_center(&[0.0; NUM_CENTER]), [0.0; NUM_CENTER]);
    }

    #[test]
    fn merge_examples() {
        let mut lc = [0.0; NUM_CENTER];
        let mut rc = [0.0; NUM_CENTER];
        lc[3] = 0.4;
        rc[3] = 0.6;
        let l = HalfFacePrediction::new(Side::Left, [1.0; NUM_SIDE], lc).unwrap();
        let r = HalfFacePrediction::new(Side::Right, [0.0; NUM_SIDE], rc).unwrap();
        let full = merge_half_predictions(&l, &r).unwrap();
        assert_eq!(full.by_name("jawOpen"), Some(0.5));
        assert!(full.side_block(Side::Left).iter().all(|&v| v == 1.0));
        assert!(full.side_block(Side::Right).iter().all(|&v| v == 0.0));

        let err = merge_half_predictions(&r, &l).unwrap_err();
        assert!(matches!(err, Error::SideMismatch(_)));
    }

    #[test]
    fn extract_examples() {
        assert_eq!(extract_half_target(&BlendShapeVector::zeros(), Side::Right), [0.0; NUM_HALF]);
        let v = BlendShapeVector::zeros().with("eyeBlinkLeft", 1.0);
        assert_eq!(extract_half_target(&v, Side::Left)[0], 1.0);
        let v = BlendShapeVector::zeros().with("jawLeft", 0.7);
        let t = extract_half_target(&v, Side::Left);
        assert_eq!(t[NUM_SIDE + 2], 0.7); // jawRight slot
        assert_eq!(t[NUM_SIDE + 1], 0.0);
    }

    #[test]
    fn vector_rejects_out_of_range() {
        let mut w = [0.0; NUM_BLENDSHAPES];
        w[5] = 1.5;
        assert!(BlendShapeVector::new(w).is_err());
        w[5] = f64::NAN;
        assert!(BlendShapeVector::new(w).is_err());
    }

    fn unit_array<const N: usize>() -> impl Strategy<Value = [f64; N]> {
        proptest::collection::vec(0.0f64..=1.0, N).prop_map(|v| v.try_into().unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn mirror_center_is_involution(c in unit_array::<NUM_CENTER>()) {
            prop_assert_eq!(mirror_center(&mirror_center(&c)), c);
        }

        #[test]
        fn extract_merge_round_trip(w in unit_array::<NUM_BLENDSHAPES>()) {
            let full = BlendShapeVector::new(w).unwrap();
            let lt = extract_half_target(&full, Side::Left);
            let rt = extract_half_target(&full, Side::Right);
            let mut l = HalfFacePrediction::from_half(Side::Left, &lt).unwrap();
            l.center_weights = mirror_center(&l.center_weights);
            let r = HalfFacePrediction::from_half(Side::Right, &rt).unwrap();
            prop_assert_eq!(merge_half_predictions(&l, &r).unwrap(), full);
        }

        #[test]
        fn merge_stays_in_unit_range(
            ls in unit_array::<NUM_SIDE>(), lc in unit_array::<NUM_CENTER>(),
            rs in unit_array::<NUM_SIDE>(), rc in unit_array::<NUM_CENTER>(),
        ) {
            let l = HalfFacePrediction::new(Side::Left, ls, lc).unwrap();
            let r = HalfFacePrediction::new(Side::Right, rs, rc).unwrap();
            let m = merge_half_predictions(&l, &r).unwrap();
            prop_assert!(m.weights().iter().all(|w| (0.0..=1.0).contains(w)));
        }

        #[test]
        fn full_mirror_is_involution(w in unit_array::<NUM_BLENDSHAPES>()) {
            let v = BlendShapeVector::new(w).unwrap();
            prop_assert_eq!(v.mirrored().mirrored(), v);
        }
    }
}
