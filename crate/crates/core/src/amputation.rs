//! Amputation labels and the masking rules built on them.
//!
//! Each of the four limbs carries a level in `0..=3`: 0 is intact, 1..3 are
//! increasingly proximal amputations (hand/forearm/full arm, ankle/knee/full
//! leg). A level selects the amputated parent joint; the mask covers that
//! joint and everything below it in the kinematic tree.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::body_model::{smpl_subtree, PoseParams};
use crate::rotations::RotationMatrix;
use crate::{Error, Result, NUM_JOINTS};

/// Number of amputated (limb, level) states addressable by an index.
pub const NUM_AMPUTATION_INDICES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Limb {
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

impl Limb {
    pub const ALL: [Limb; 4] = [Limb::LeftArm, Limb::RightArm, Limb::LeftLeg, Limb::RightLeg];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    /// Key used in the label text form.
    pub fn key(self) -> &'static str {
        match self {
            Limb::LeftArm => "Larm",
            Limb::RightArm => "Rarm",
            Limb::LeftLeg => "Lleg",
            Limb::RightLeg => "Rleg",
        }
    }

    /// Amputated parent joint for levels 1, 2 and 3.
    fn level_joints(self) -> [usize; 3] {
        match self {
            // wrist, elbow, shoulder
            Limb::LeftArm => [20, 18, 16],
            Limb::RightArm => [21, 19, 17],
            // ankle, knee, hip
            Limb::LeftLeg => [7, 4, 1],
            Limb::RightLeg => [8, 5, 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LimbClass {
    limb: Limb,
    level: u8,
}

impl LimbClass {
    pub fn new(limb: Limb, level: u8) -> Result<Self> {
        if level > 3 {
            return Err(Error::invalid(format!("amputation level {level} outside 0..=3")));
        }
        Ok(LimbClass { limb, level })
    }

    pub fn limb(&self) -> Limb {
        self.limb
    }

    pub fn level(&self) -> u8 {
        self.level
    }
}

/// Amputated parent joint and all its descendants; empty for level 0.
pub fn limb_class_to_joints(c: LimbClass) -> BTreeSet<usize> {
    match c.level {
        0 => BTreeSet::new(),
        l => smpl_subtree(c.limb.level_joints()[l as usize - 1])
            .into_iter()
            .collect(),
    }
}

/// Index in `0..12`, laid out as `3 * limb + (level - 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AmputationIndex(u8);

impl AmputationIndex {
    pub fn new(idx: usize) -> Result<Self> {
        if idx >= NUM_AMPUTATION_INDICES {
            return Err(Error::invalid(format!("amputation index {idx} outside 0..=11")));
        }
        Ok(AmputationIndex(idx as u8))
    }

    pub fn get(self) -> usize {
        self.0 as usize
    }
}

pub fn index_to_label(i: AmputationIndex) -> LimbClass {
    let idx = i.get();
    LimbClass {
        limb: Limb::ALL[idx / 3],
        level: (idx % 3 + 1) as u8,
    }
}

/// Inverse of [`index_to_label`]; `None` for intact limbs.
pub fn label_to_index(c: LimbClass) -> Option<AmputationIndex> {
    match c.level {
        0 => None,
        l => Some(AmputationIndex((3 * c.limb.ordinal() + l as usize - 1) as u8)),
    }
}

/// Per-limb levels in the order left arm, right arm, left leg, right leg.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AmputationLabel {
    levels: [u8; 4],
}

impl AmputationLabel {
    pub fn new(levels: [u8; 4]) -> Result<Self> {
        if let Some(l) = levels.iter().find(|&&l| l > 3) {
            return Err(Error::invalid(format!("amputation level {l} outside 0..=3")));
        }
        Ok(AmputationLabel { levels })
    }

    pub fn intact() -> Self {
        Self::default()
    }

    pub fn from_classes(classes: &[LimbClass]) -> Self {
        let mut levels = [0u8; 4];
        for c in classes {
            levels[c.limb.ordinal()] = c.level;
        }
        AmputationLabel { levels }
    }

    pub fn levels(&self) -> [u8; 4] {
        self.levels
    }

    pub fn level(&self, limb: Limb) -> u8 {
        self.levels[limb.ordinal()]
    }

    pub fn classes(&self) -> [LimbClass; 4] {
        Limb::ALL.map(|limb| LimbClass {
            limb,
            level: self.levels[limb.ordinal()],
        })
    }

    /// Per-limb amputated indicator.
    pub fn binary(&self) -> [u8; 4] {
        self.levels.map(|l| u8::from(l > 0))
    }

    pub fn is_amputee(&self) -> bool {
        self.levels.iter().any(|&l| l > 0)
    }

    /// Union of the masked subtrees of all limbs.
    pub fn masked_joints(&self) -> BTreeSet<usize> {
        self.classes()
            .into_iter()
            .flat_map(limb_class_to_joints)
            .collect()
    }

    pub fn joint_mask(&self) -> [bool; NUM_JOINTS] {
        let mut mask = [false; NUM_JOINTS];
        for j in self.masked_joints() {
            mask[j] = true;
        }
        mask
    }
}

impl fmt::Display for AmputationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = Limb::ALL
            .iter()
            .map(|l| format!("{}:{}", l.key(), self.levels[l.ordinal()]))
            .collect();
        f.write_str(&parts.join(","))
    }
}

/// Parses `Larm:i,Rarm:i,Lleg:i,Rleg:i`. Limbs may be omitted (level 0) but
/// not repeated.
impl FromStr for AmputationLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut levels = [0u8; 4];
        let mut seen = [false; 4];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = part
                .split_once(':')
                .ok_or_else(|| Error::invalid(format!("label entry {part:?} is not key:level")))?;
            let limb = Limb::ALL
                .into_iter()
                .find(|l| l.key() == key.trim())
                .ok_or_else(|| Error::invalid(format!("unknown limb {key:?}")))?;
            if seen[limb.ordinal()] {
                return Err(Error::invalid(format!("limb {key:?} given twice")));
            }
            seen[limb.ordinal()] = true;
            levels[limb.ordinal()] = value
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("bad level {value:?} for {key}")))?;
        }
        AmputationLabel::new(levels)
    }
}

/// 0 when the largest logit is class 0 (intact), else 1. Ties go to the
/// lowest index.
pub fn binary_decision(h: &[f64; 4]) -> u8 {
    let mut best = 0;
    for (i, v) in h.iter().enumerate().skip(1) {
        if *v > h[best] {
            best = i;
        }
    }
    u8::from(best != 0)
}

/// Zeroes the rotation of every joint covered by `label`.
pub fn apply_mask(pose: &PoseParams, label: &AmputationLabel) -> PoseParams {
    let mut out = *pose;
    for j in label.masked_joints() {
        out.rotations[j] = RotationMatrix::zero();
    }
    out
}

/// Sets amputated-subtree and occluded keypoints to `(0, 0)` with zero
/// confidence. 3D joints and pose parameters are left to the caller.
pub fn mask_keypoints_2d(
    kps: &[[f64; 3]],
    label: &AmputationLabel,
    occluded: &BTreeSet<usize>,
) -> Vec<[f64; 3]> {
    let masked = label.masked_joints();
    kps.iter()
        .enumerate()
        .map(|(j, kp)| {
            if masked.contains(&j) || occluded.contains(&j) {
                [0.0; 3]
            } else {
                *kp
            }
        })
        .collect()
}
