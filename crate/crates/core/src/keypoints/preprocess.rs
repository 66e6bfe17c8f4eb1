use ndarray::Array2;

use super::{KeypointError, KeypointSequence, FRAME_CHANNELS, LEFT_SHOULDER, RIGHT_SHOULDER};

pub const DEFAULT_SEQUENCE_LEN: usize = 64;

const MIN_SHOULDER_DISTANCE: f64 = 1e-6;

/// Fixed-length model input: `T x 225` values plus a mask of real (unpadded) frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub values: Array2<f64>,
    pub valid_mask: Vec<bool>,
}

impl ModelInput {
    pub fn seq_len(&self) -> usize {
        self.valid_mask.len()
    }

    pub fn valid_len(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }
}

/// Centers the sequence on the mean shoulder midpoint and scales it so the mean
/// shoulder distance is 1. Only pose-present frames contribute to the anchor;
/// all present groups are transformed by the same translation and scale.
pub fn normalize(seq: &KeypointSequence) -> Result<KeypointSequence, KeypointError> {
    let mut center = [0.0; 3];
    let mut pose_frames = 0usize;
    let mut dist_sum = 0.0;
    let mut dist_frames = 0usize;
    for frame in seq.frames.iter().filter(|f| f.presence.pose) {
        let l = frame.coords[LEFT_SHOULDER];
        let r = frame.coords[RIGHT_SHOULDER];
        for c in 0..3 {
            center[c] += 0.5 * (l[c] + r[c]);
        }
        pose_frames += 1;
        let d = ((l[0] - r[0]).powi(2) + (l[1] - r[1]).powi(2) + (l[2] - r[2]).powi(2)).sqrt();
        if d >= MIN_SHOULDER_DISTANCE {
            dist_sum += d;
            dist_frames += 1;
        }
    }
    if pose_frames == 0 {
        return Err(KeypointError::NoPoseFrames);
    }
    if dist_frames == 0 {
        return Err(KeypointError::DegenerateScale);
    }
    for c in &mut center {
        *c /= pose_frames as f64;
    }
    let scale = dist_sum / dist_frames as f64;

    let mut out = seq.clone();
    for frame in &mut out.frames {
        frame.map_present(|p| {
            [(p[0] - center[0]) / scale, (p[1] - center[1]) / scale, (p[2] - center[2]) / scale]
        });
    }
    Ok(out)
}

/// Picks `target_len` frames at uniformly spaced fractional positions
/// `i * (len - 1) / (target_len - 1)`, rounding each to the nearest frame.
///
/// # Panics
/// If `target_len` is zero.
pub fn resample_uniform(seq: &KeypointSequence, target_len: usize) -> KeypointSequence {
    assert!(target_len >= 1, "target_len must be positive");
    let n = seq.frames.len();
    let frames = (0..target_len)
        .map(|i| seq.frames[resample_index(i, n, target_len)].clone())
        .collect();
    KeypointSequence { frames, fps: seq.fps, source_id: seq.source_id.clone() }
}

pub(crate) fn resample_index(i: usize, len: usize, target_len: usize) -> usize {
    if target_len == 1 || len == 1 {
        return 0;
    }
    let pos = i as f64 * (len - 1) as f64 / (target_len - 1) as f64;
    (pos.round() as usize).min(len - 1)
}

/// Lays out a (normalized) sequence as a `T x 225` matrix. Short sequences
/// are zero-padded at the end; long ones are resampled to `T` frames.
pub fn to_model_input(seq: &KeypointSequence, seq_len: usize) -> ModelInput {
    assert!(seq_len >= 1, "sequence length must be positive");
    let resampled;
    let frames = if seq.frames.len() > seq_len {
        resampled = resample_uniform(seq, seq_len);
        &resampled.frames
    } else {
        &seq.frames
    };
    let mut values = Array2::zeros((seq_len, FRAME_CHANNELS));
    let mut valid_mask = vec![false; seq_len];
    for (t, frame) in frames.iter().enumerate() {
        valid_mask[t] = true;
        let mut row = values.row_mut(t);
        for (l, p) in frame.coords.iter().enumerate() {
            row[3 * l] = p[0];
            row[3 * l + 1] = p[1];
            row[3 * l + 2] = p[2];
        }
    }
    ModelInput { values, valid_mask }
}
