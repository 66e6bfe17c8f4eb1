//! The `poseseq` JSON document.
//!
//! ```json
//! {"version": 1, "fps": 25.0, "landmark_spec": "pose33+lhand21+rhand21", "dims": 3,
//!  "frames": [{"points": [[x, y, z], ...75 entries], "presence": {"pose": true, "lhand": false, "rhand": true}}]}
//! ```
//!
//! An optional top-level `source_id` string is carried through when present.

use serde_json::{json, Map, Value};

use super::{KeypointError, KeypointFrame, KeypointSequence, Presence, NUM_LANDMARKS};

pub const LANDMARK_SPEC: &str = "pose33+lhand21+rhand21";
const VERSION: i64 = 1;
const DIMS: i64 = 3;

pub fn parse_poseseq(bytes: &[u8]) -> Result<KeypointSequence, KeypointError> {
    let value: Value =
        serde_json::from_slice(bytes).map_err(|e| KeypointError::Malformed(e.to_string()))?;
    parse_poseseq_value(&value)
}

/// Parses an already-decoded JSON value, e.g. a `poseseq` embedded in a request body.
pub fn parse_poseseq_value(value: &Value) -> Result<KeypointSequence, KeypointError> {
    let doc = value.as_object().ok_or_else(|| malformed("document is not an object"))?;

    let version = field(doc, "version")?
        .as_i64()
        .ok_or_else(|| malformed("`version` must be an integer"))?;
    if version != VERSION {
        return Err(KeypointError::UnsupportedVersion(version));
    }
    let spec = field(doc, "landmark_spec")?
        .as_str()
        .ok_or_else(|| malformed("`landmark_spec` must be a string"))?;
    if spec != LANDMARK_SPEC {
        return Err(KeypointError::UnsupportedLandmarkSpec(spec.to_string()));
    }
    let dims = field(doc, "dims")?.as_i64().ok_or_else(|| malformed("`dims` must be an integer"))?;
    if dims != DIMS {
        return Err(KeypointError::UnsupportedDims(dims));
    }
    let fps = field(doc, "fps")?.as_f64().ok_or_else(|| malformed("`fps` must be a number"))?;
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(KeypointError::InvalidFps(fps));
    }
    let source_id = match doc.get("source_id") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(malformed("`source_id` must be a string")),
    };

    let frames = field(doc, "frames")?
        .as_array()
        .ok_or_else(|| malformed("`frames` must be an array"))?;
    if frames.is_empty() {
        return Err(KeypointError::EmptySequence);
    }
    let frames = frames
        .iter()
        .enumerate()
        .map(|(i, f)| parse_frame(i, f))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(KeypointSequence { frames, fps, source_id })
}

fn parse_frame(index: usize, value: &Value) -> Result<KeypointFrame, KeypointError> {
    let obj = value
        .as_object()
        .ok_or_else(|| malformed(format!("frame {index} is not an object")))?;
    let points = obj
        .get("points")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed(format!("frame {index}: `points` must be an array")))?;
    if points.len() != NUM_LANDMARKS {
        return Err(KeypointError::LandmarkCount {
            frame: index,
            expected: NUM_LANDMARKS,
            found: points.len(),
        });
    }
    let mut coords = [[0.0; 3]; NUM_LANDMARKS];
    for (l, point) in points.iter().enumerate() {
        let xyz = point
            .as_array()
            .ok_or_else(|| malformed(format!("frame {index}, landmark {l}: point must be an array")))?;
        if xyz.len() != 3 {
            return Err(KeypointError::PointArity { frame: index, landmark: l, found: xyz.len() });
        }
        for (c, v) in xyz.iter().enumerate() {
            let v = v.as_f64().ok_or_else(|| {
                malformed(format!("frame {index}, landmark {l}: coordinate must be a number"))
            })?;
            if !v.is_finite() {
                return Err(KeypointError::NonFinite { frame: index, landmark: l });
            }
            coords[l][c] = v;
        }
    }
    let presence = obj
        .get("presence")
        .and_then(Value::as_object)
        .ok_or_else(|| malformed(format!("frame {index}: `presence` must be an object")))?;
    let flag = |key: &str| {
        presence
            .get(key)
            .and_then(Value::as_bool)
            .ok_or_else(|| malformed(format!("frame {index}: presence.{key} must be a boolean")))
    };
    let presence = Presence { pose: flag("pose")?, lhand: flag("lhand")?, rhand: flag("rhand")? };
    Ok(KeypointFrame::new(coords, presence))
}

/// Serializes a sequence. Output is deterministic and reparses to an equal sequence.
pub fn write_poseseq(seq: &KeypointSequence) -> Vec<u8> {
    serde_json::to_vec(&poseseq_value(seq)).expect("poseseq values are always serializable")
}

pub fn poseseq_value(seq: &KeypointSequence) -> Value {
    let frames: Vec<Value> = seq
        .frames
        .iter()
        .map(|f| {
            json!({
                "points": f.coords.iter().map(|p| json!([p[0], p[1], p[2]])).collect::<Vec<_>>(),
                "presence": {"pose": f.presence.pose, "lhand": f.presence.lhand, "rhand": f.presence.rhand},
            })
        })
        .collect();
    let mut doc = Map::new();
    doc.insert("version".into(), json!(VERSION));
    doc.insert("fps".into(), json!(seq.fps));
    doc.insert("landmark_spec".into(), json!(LANDMARK_SPEC));
    doc.insert("dims".into(), json!(DIMS));
    if !seq.source_id.is_empty() {
        doc.insert("source_id".into(), json!(seq.source_id));
    }
    doc.insert("frames".into(), Value::Array(frames));
    Value::Object(doc)
}

fn field<'a>(doc: &'a Map<String, Value>, key: &str) -> Result<&'a Value, KeypointError> {
    doc.get(key).ok_or_else(|| malformed(format!("missing field `{key}`")))
}

fn malformed(msg: impl Into<String>) -> KeypointError {
    KeypointError::Malformed(msg.into())
}
