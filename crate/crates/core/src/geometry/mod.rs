//! Control signals, landmark sets and the landmark predictor.

mod predictor;

pub use predictor::{
    BranchFeatures, LandmarkDiscriminator, PredictorArch, PredictorInput, PredictorModel,
    PredictorTape,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed head-pose ranges (radians) of the reference announcer footage.
pub const YAW_RANGE: (f64, f64) = (-0.354, 0.196);
pub const PITCH_RANGE: (f64, f64) = (-0.367, 0.379);
pub const ROLL_RANGE: (f64, f64) = (-0.502, 0.509);

/// Head orientation in radians.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseTriple {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

impl PoseTriple {
    pub fn new(yaw: f64, pitch: f64, roll: f64) -> Self {
        PoseTriple { yaw, pitch, roll }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.yaw, self.pitch, self.roll]
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("pose".into()))
        }
    }

    /// Names of the components outside the observed training ranges.
    pub fn out_of_range(&self) -> Vec<&'static str> {
        let mut flagged = Vec::new();
        for (name, v, (lo, hi)) in [
            ("yaw", self.yaw, YAW_RANGE),
            ("pitch", self.pitch, PITCH_RANGE),
            ("roll", self.roll, ROLL_RANGE),
        ] {
            if v < lo || v > hi {
                flagged.push(name);
            }
        }
        flagged
    }
}

/// Per-eye height/width ratios.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BlinkPair {
    pub left: f64,
    pub right: f64,
}

impl BlinkPair {
    pub fn new(left: f64, right: f64) -> Self {
        BlinkPair { left, right }
    }

    pub fn both(v: f64) -> Self {
        BlinkPair { left: v, right: v }
    }

    pub fn to_array(self) -> [f64; 2] {
        [self.left, self.right]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.left.is_finite() && self.right.is_finite()) {
            return Err(Error::NonFinite("blink".into()));
        }
        if self.left < 0.0 || self.right < 0.0 {
            return Err(Error::InvalidArgument("blink ratios must be non-negative".into()));
        }
        Ok(())
    }
}

/// Named landmark index groups. Eyes and mouth are closed outlines, the contour is open.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexGroups {
    pub left_eye: Vec<usize>,
    pub right_eye: Vec<usize>,
    pub mouth: Vec<usize>,
    pub contour: Vec<usize>,
}

impl IndexGroups {
    /// 20-point schematic layout: 6 contour, 4 + 4 eye, 6 mouth points.
    pub fn toy20() -> Self {
        IndexGroups {
            contour: (0..6).collect(),
            left_eye: (6..10).collect(),
            right_eye: (10..14).collect(),
            mouth: (14..20).collect(),
        }
    }

    /// The common 68-point annotation layout (outer lip only for the mouth group).
    pub fn ibug68() -> Self {
        IndexGroups {
            contour: (0..17).collect(),
            left_eye: (36..42).collect(),
            right_eye: (42..48).collect(),
            mouth: (48..60).collect(),
        }
    }

    pub fn for_count(n: usize) -> Option<Self> {
        match n {
            20 => Some(Self::toy20()),
            68 => Some(Self::ibug68()),
            _ => None,
        }
    }

    /// `(name, indices, closed)` for every group.
    pub fn iter(&self) -> [(&'static str, &[usize], bool); 4] {
        [
            ("contour", &self.contour, false),
            ("left_eye", &self.left_eye, true),
            ("right_eye", &self.right_eye, true),
            ("mouth", &self.mouth, true),
        ]
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for (name, idx, _) in self.iter() {
            for &i in idx {
                if i >= n {
                    return Err(Error::config("landmarks", format!("{name} index {i} ≥ {n}")));
                }
                if seen[i] {
                    return Err(Error::config("landmarks", format!("index {i} appears in two groups")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

/// Facial keypoints normalized to `[0, 1]` over the face crop, `(x, y)` with y down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub points: Vec<[f64; 2]>,
    pub groups: IndexGroups,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>, groups: IndexGroups) -> Result<Self> {
        let l = LandmarkSet { points, groups };
        l.validate()?;
        Ok(l)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("landmarks".into()));
        }
        self.groups.validate(self.points.len())
    }

    /// Coordinates flattened as `x0, y0, x1, y1, …`.
    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p[0], p[1]]).collect()
    }

    pub fn from_flat(flat: &[f64], groups: IndexGroups) -> Self {
        LandmarkSet {
            points: flat.chunks(2).map(|c| [c[0], c[1]]).collect(),
            groups,
        }
    }

    pub fn group_points(&self, idx: &[usize]) -> Vec<[f64; 2]> {
        idx.iter().map(|&i| self.points[i]).collect()
    }

    /// `max y − min y` over a group, in normalized units.
    pub fn vertical_extent(&self, idx: &[usize]) -> f64 {
        let ys = idx.iter().map(|&i| self.points[i][1]);
        let (lo, hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), y| {
            (lo.min(y), hi.max(y))
        });
        if lo.is_finite() {
            hi - lo
        } else {
            0.0
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        LandmarkSet {
            points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
            groups: self.groups.clone(),
        }
    }
}
