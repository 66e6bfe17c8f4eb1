//! Landmark-sequence data model, the `poseseq` document format and the
//! preprocessing pipeline that turns raw sequences into fixed-size model input.
//!
//! A frame carries 75 landmarks in a fixed order: 33 body-pose points
//! followed by 21 left-hand points and 21 right-hand points (the MediaPipe
//! Holistic layout without face landmarks). Groups that were not detected in
//! a frame are stored as zeros with their presence flag cleared.

mod format;
mod preprocess;

pub use format::{parse_poseseq, parse_poseseq_value, poseseq_value, write_poseseq, LANDMARK_SPEC};
pub use preprocess::{normalize, resample_uniform, to_model_input, ModelInput, DEFAULT_SEQUENCE_LEN};

use thiserror::Error;

pub const POSE_LANDMARKS: usize = 33;
pub const HAND_LANDMARKS: usize = 21;
pub const NUM_LANDMARKS: usize = POSE_LANDMARKS + 2 * HAND_LANDMARKS;
/// Flattened channel count of one frame (landmark-major x, y, z).
pub const FRAME_CHANNELS: usize = NUM_LANDMARKS * 3;

pub const LEFT_SHOULDER: usize = 11;
pub const RIGHT_SHOULDER: usize = 12;

/// One of the three independently detected landmark groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Group {
    Pose,
    LeftHand,
    RightHand,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Pose, Group::LeftHand, Group::RightHand];

    /// Landmark index range covered by this group.
    pub fn range(self) -> std::ops::Range<usize> {
        match self {
            Group::Pose => 0..POSE_LANDMARKS,
            Group::LeftHand => POSE_LANDMARKS..POSE_LANDMARKS + HAND_LANDMARKS,
            Group::RightHand => POSE_LANDMARKS + HAND_LANDMARKS..NUM_LANDMARKS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Presence {
    pub pose: bool,
    pub lhand: bool,
    pub rhand: bool,
}

impl Presence {
    pub const ALL: Presence = Presence { pose: true, lhand: true, rhand: true };

    pub fn get(&self, group: Group) -> bool {
        match group {
            Group::Pose => self.pose,
            Group::LeftHand => self.lhand,
            Group::RightHand => self.rhand,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFrame {
    pub coords: [[f64; 3]; NUM_LANDMARKS],
    pub presence: Presence,
}

impl KeypointFrame {
    /// A frame with every group absent.
    pub fn empty() -> Self {
        KeypointFrame { coords: [[0.0; 3]; NUM_LANDMARKS], presence: Presence::default() }
    }

    /// Builds a frame, zeroing the coordinates of absent groups.
    pub fn new(coords: [[f64; 3]; NUM_LANDMARKS], presence: Presence) -> Self {
        let mut frame = KeypointFrame { coords, presence };
        frame.clear_absent();
        frame
    }

    pub(crate) fn clear_absent(&mut self) {
        for group in Group::ALL {
            if !self.presence.get(group) {
                for p in &mut self.coords[group.range()] {
                    *p = [0.0; 3];
                }
            }
        }
    }

    /// Applies `f` to every landmark of every present group.
    pub fn map_present(&mut self, mut f: impl FnMut([f64; 3]) -> [f64; 3]) {
        for group in Group::ALL {
            if self.presence.get(group) {
                for p in &mut self.coords[group.range()] {
                    *p = f(*p);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSequence {
    pub frames: Vec<KeypointFrame>,
    pub fps: f64,
    pub source_id: String,
}

impl KeypointSequence {
    pub fn new(frames: Vec<KeypointFrame>, fps: f64) -> Result<Self, KeypointError> {
        if frames.is_empty() {
            return Err(KeypointError::EmptySequence);
        }
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(KeypointError::InvalidFps(fps));
        }
        Ok(KeypointSequence { frames, fps, source_id: String::new() })
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum KeypointError {
    #[error("malformed poseseq document: {0}")]
    Malformed(String),
    #[error("unsupported poseseq version {0}")]
    UnsupportedVersion(i64),
    #[error("unsupported landmark_spec {0:?}")]
    UnsupportedLandmarkSpec(String),
    #[error("unsupported dims {0}, expected 3")]
    UnsupportedDims(i64),
    #[error("frame {frame}: expected {expected} landmarks, found {found}")]
    LandmarkCount { frame: usize, expected: usize, found: usize },
    #[error("frame {frame}, landmark {landmark}: expected 3 coordinates, found {found}")]
    PointArity { frame: usize, landmark: usize, found: usize },
    #[error("frame {frame}, landmark {landmark}: non-finite coordinate")]
    NonFinite { frame: usize, landmark: usize },
    #[error("fps must be positive and finite, got {0}")]
    InvalidFps(f64),
    #[error("sequence has no frames")]
    EmptySequence,
    #[error("cannot normalize: no frame has pose landmarks")]
    NoPoseFrames,
    #[error("cannot normalize: shoulder distance is degenerate in every pose frame")]
    DegenerateScale,
}
