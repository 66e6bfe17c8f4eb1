//! Synthetic signs in the 75-landmark layout.
//!
//! A class is a prototype: wrist trajectories through class-specific control
//! points (Catmull-Rom splines), a handshape that morphs between two shared
//! handshape prototypes, and a static class-specific offset pattern on the
//! hand landmarks. A sample replays the prototype under a monotone time warp
//! `t' = t + a sin(pi t) u` (`u` uniform in [-1, 1]) and adds independent
//! Gaussian noise to every coordinate. Coordinates follow image conventions
//! (x right, y down) with shoulders 0.24 apart.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::dataset::{Dataset, LabeledSequence};
use crate::keypoints::{
    KeypointFrame, KeypointSequence, Presence, HAND_LANDMARKS, LEFT_SHOULDER, NUM_LANDMARKS, POSE_LANDMARKS,
    RIGHT_SHOULDER,
};
use crate::poseformer::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub samples_per_class: usize,
    /// Inclusive range of per-class sequence lengths.
    pub min_len: usize,
    pub max_len: usize,
    /// Shared handshape prototypes the classes draw from.
    pub handshapes: usize,
    /// Wrist control points per hand per class.
    pub control_points: usize,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
    /// Time-warp amplitude `a`; at most `1/pi` keeps the warp monotone.
    pub warp: f64,
    pub fps: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 100,
            samples_per_class: 30,
            min_len: 24,
            max_len: 48,
            handshapes: 8,
            control_points: 4,
            noise: 0.03,
            warp: 0.2,
            fps: 25.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let fail = |m: &str| Err(ExperimentError::InvalidConfig(m.to_string()));
        if self.num_classes == 0 || self.samples_per_class == 0 || self.handshapes == 0 {
            return fail("class, sample and handshape counts must be positive");
        }
        if self.control_points < 2 {
            return fail("need at least two control points");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return fail("need 1 <= min_len <= max_len");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return fail("noise must be finite and non-negative");
        }
        if !(0.0..=1.0 / PI).contains(&self.warp) {
            return fail("warp must lie in [0, 1/pi]");
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return fail("fps must be positive");
        }
        Ok(())
    }
}

pub fn class_label(class: usize) -> String {
    format!("sign-{class:04}")
}

type Point = [f64; 3];

/// Finger flexion (thumb..pinky) and finger spread.
#[derive(Debug, Clone)]
struct Handshape {
    flex: [f64; 5],
    spread: f64,
}

#[derive(Debug, Clone)]
struct HandMotion {
    wrist: Vec<Point>,
    shapes: (usize, usize),
    roll: (f64, f64),
    offsets: Vec<Point>,
}

#[derive(Debug, Clone)]
struct Prototype {
    len: usize,
    right: HandMotion,
    /// `None` for one-handed signs: the left hand rests below the shoulder.
    left: Option<HandMotion>,
    rest_shape: usize,
    rest_offsets: Vec<Point>,
}

const HAND_SIZE: f64 = 0.09;
const L_SHOULDER: Point = [0.62, 0.55, 0.0];
const R_SHOULDER: Point = [0.38, 0.55, 0.0];
const LEFT_REST: Point = [0.66, 0.92, -0.02];

/// Generates `num_classes x samples_per_class` sequences, grouped by class.
/// Output is a pure function of the configuration.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset, ExperimentError> {
    cfg.validate()?;
    let shapes = handshape_prototypes(cfg);
    let mut items = Vec::with_capacity(cfg.num_classes * cfg.samples_per_class);
    for class in 0..cfg.num_classes {
        let proto = class_prototype(cfg, class);
        let label = class_label(class);
        for sample in 0..cfg.samples_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 2, class as u64, sample as u64]));
            let sequence = render(cfg, &proto, &shapes, &mut rng).with_source_id(format!("{label}/{sample:04}"));
            items.push(LabeledSequence { label: label.clone(), sequence });
        }
    }
    Ok(Dataset::new(items))
}

/// The noise-free, unwarped rendering of every class (for distance checks).
pub fn synth_prototypes(cfg: &SynthConfig) -> Result<Vec<KeypointSequence>, ExperimentError> {
    let clean = SynthConfig { noise: 0.0, warp: 0.0, samples_per_class: 1, ..cfg.clone() };
    Ok(synth_generate(&clean)?.items.into_iter().map(|it| it.sequence).collect())
}

fn handshape_prototypes(cfg: &SynthConfig) -> Vec<Handshape> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 0]));
    (0..cfg.handshapes)
        .map(|_| {
            let mut flex = [0.0; 5];
            for f in flex.iter_mut() {
                // fingers tend to be either extended or curled
                *f = if rng.random_bool(0.5) { rng.random_range(0.0..0.25) } else { rng.random_range(0.6..1.0) };
            }
            Handshape { flex, spread: rng.random_range(0.6..1.4) }
        })
        .collect()
}

fn hand_motion(rng: &mut ChaCha8Rng, cfg: &SynthConfig, x_range: (f64, f64)) -> HandMotion {
    let wrist = (0..cfg.control_points)
        .map(|_| [rng.random_range(x_range.0..x_range.1), rng.random_range(0.3..0.8), rng.random_range(-0.15..0.05)])
        .collect();
    HandMotion {
        wrist,
        shapes: (rng.random_range(0..cfg.handshapes), rng.random_range(0..cfg.handshapes)),
        roll: (rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)),
        offsets: offsets(rng),
    }
}

fn offsets(rng: &mut ChaCha8Rng) -> Vec<Point> {
    let a = 0.12 * HAND_SIZE;
    (0..HAND_LANDMARKS)
        .map(|_| [rng.random_range(-a..a), rng.random_range(-a..a), rng.random_range(-a..a)])
        .collect()
}

fn class_prototype(cfg: &SynthConfig, class: usize) -> Prototype {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[cfg.seed, 1, class as u64]));
    let len = rng.random_range(cfg.min_len..=cfg.max_len);
    let two_handed = rng.random_bool(0.5);
    let right = hand_motion(&mut rng, cfg, (0.22, 0.6));
    let left = two_handed.then(|| hand_motion(&mut rng, cfg, (0.4, 0.78)));
    Prototype { len, right, left, rest_shape: rng.random_range(0..cfg.handshapes), rest_offsets: offsets(&mut rng) }
}

/// Catmull-Rom spline through `points` at `t` in [0, 1] (clamped end tangents).
fn spline(points: &[Point], t: f64) -> Point {
    let segments = points.len() - 1;
    let x = t.clamp(0.0, 1.0) * segments as f64;
    let i = (x.floor() as usize).min(segments - 1);
    let u = x - i as f64;
    let p = |j: isize| points[j.clamp(0, segments as isize) as usize];
    let (p0, p1, p2, p3) = (p(i as isize - 1), p(i as isize), p(i as isize + 1), p(i as isize + 2));
    let (u2, u3) = (u * u, u * u * u);
    let mut out = [0.0; 3];
    for d in 0..3 {
        out[d] = 0.5
            * (2.0 * p1[d]
                + (p2[d] - p0[d]) * u
                + (2.0 * p0[d] - 5.0 * p1[d] + 4.0 * p2[d] - p3[d]) * u2
                + (3.0 * p1[d] - p0[d] - 3.0 * p2[d] + p3[d]) * u3);
    }
    out
}

/// Hand landmarks for a handshape blend at `wrist`, rolled by `roll` radians in
/// the image plane. `mirror` flips the finger fan for the left hand.
fn hand_points(wrist: Point, shape: &Handshape, roll: f64, mirror: bool, offsets: &[Point]) -> [Point; HAND_LANDMARKS] {
    const BASE_ANGLES: [f64; 5] = [-1.05, -0.3, 0.0, 0.28, 0.55];
    const SEGMENTS: [[f64; 3]; 5] =
        [[0.28, 0.22, 0.18], [0.38, 0.24, 0.2], [0.4, 0.26, 0.21], [0.37, 0.24, 0.2], [0.3, 0.19, 0.16]];
    let side = if mirror { -1.0 } else { 1.0 };
    let mut pts = [[0.0; 3]; HAND_LANDMARKS];
    pts[0] = wrist;
    for finger in 0..5 {
        let angle = roll + side * BASE_ANGLES[finger] * shape.spread;
        // "up" in image coordinates is -y
        let (dx, dy) = (angle.sin(), -angle.cos());
        let base_len = if finger == 0 { 0.2 } else { 0.42 };
        // knuckle, then the three joints out to the tip
        let mut p = [wrist[0] + dx * base_len * HAND_SIZE, wrist[1] + dy * base_len * HAND_SIZE, wrist[2]];
        pts[1 + finger * 4] = p;
        for (joint, seg) in SEGMENTS[finger].iter().enumerate() {
            let bend = shape.flex[finger] * 1.1 * (joint + 1) as f64;
            let len = seg * HAND_SIZE;
            p = [p[0] + dx * len * bend.cos(), p[1] + dy * len * bend.cos(), p[2] - len * bend.sin()];
            pts[2 + finger * 4 + joint] = p;
        }
    }
    for (p, o) in pts.iter_mut().zip(offsets) {
        for d in 0..3 {
            p[d] += o[d];
        }
    }
    pts
}

fn blend(a: &Handshape, b: &Handshape, s: f64) -> Handshape {
    let mut flex = [0.0; 5];
    for i in 0..5 {
        flex[i] = a.flex[i] * (1.0 - s) + b.flex[i] * s;
    }
    Handshape { flex, spread: a.spread * (1.0 - s) + b.spread * s }
}

fn lerp(a: Point, b: Point, s: f64) -> Point {
    [a[0] + (b[0] - a[0]) * s, a[1] + (b[1] - a[1]) * s, a[2] + (b[2] - a[2]) * s]
}

/// Static body landmarks; arms are filled in per frame.
fn body() -> [Point; POSE_LANDMARKS] {
    let mut p = [[0.0; 3]; POSE_LANDMARKS];
    let face = [
        [0.5, 0.33, -0.08],
        [0.52, 0.31, -0.07],
        [0.53, 0.31, -0.07],
        [0.54, 0.31, -0.07],
        [0.48, 0.31, -0.07],
        [0.47, 0.31, -0.07],
        [0.46, 0.31, -0.07],
        [0.56, 0.32, -0.02],
        [0.44, 0.32, -0.02],
        [0.52, 0.37, -0.07],
        [0.48, 0.37, -0.07],
    ];
    p[..11].copy_from_slice(&face);
    p[LEFT_SHOULDER] = L_SHOULDER;
    p[RIGHT_SHOULDER] = R_SHOULDER;
    p[23] = [0.58, 0.95, 0.0];
    p[24] = [0.42, 0.95, 0.0];
    p[25] = [0.58, 1.25, 0.0];
    p[26] = [0.42, 1.25, 0.0];
    p[27] = [0.58, 1.55, 0.02];
    p[28] = [0.42, 1.55, 0.02];
    p[29] = [0.59, 1.57, 0.04];
    p[30] = [0.41, 1.57, 0.04];
    p[31] = [0.57, 1.6, -0.04];
    p[32] = [0.43, 1.6, -0.04];
    p
}

/// Writes an arm (elbow, wrist and the three pose hand points) into the pose group.
fn place_arm(pose: &mut [Point; POSE_LANDMARKS], shoulder: Point, hand: &[Point; HAND_LANDMARKS], left: bool) {
    let wrist = hand[0];
    let mut elbow = lerp(shoulder, wrist, 0.5);
    elbow[1] += 0.12;
    elbow[0] += if left { 0.05 } else { -0.05 };
    let (e, w, pinky, index, thumb) = if left { (13, 15, 17, 19, 21) } else { (14, 16, 18, 20, 22) };
    pose[e] = elbow;
    pose[w] = wrist;
    pose[pinky] = hand[17];
    pose[index] = hand[5];
    pose[thumb] = hand[2];
}

fn hand_at(m: &HandMotion, shapes: &[Handshape], t: f64, mirror: bool) -> [Point; HAND_LANDMARKS] {
    let shape = blend(&shapes[m.shapes.0], &shapes[m.shapes.1], t);
    let roll = m.roll.0 + (m.roll.1 - m.roll.0) * t;
    hand_points(spline(&m.wrist, t), &shape, roll, mirror, &m.offsets)
}

fn render(cfg: &SynthConfig, proto: &Prototype, shapes: &[Handshape], rng: &mut ChaCha8Rng) -> KeypointSequence {
    let u: f64 = rng.random_range(-1.0..=1.0);
    let noise = Normal::new(0.0, cfg.noise).expect("validated noise");
    let base = body();
    let rest = hand_points(LEFT_REST, &shapes[proto.rest_shape], 0.0, true, &proto.rest_offsets);
    let frames = (0..proto.len)
        .map(|i| {
            let t = if proto.len == 1 { 0.0 } else { i as f64 / (proto.len - 1) as f64 };
            let tw = t + cfg.warp * (PI * t).sin() * u;
            let right = hand_at(&proto.right, shapes, tw, false);
            let left = match &proto.left {
                Some(m) => hand_at(m, shapes, tw, true),
                None => rest,
            };
            let mut pose = base;
            place_arm(&mut pose, R_SHOULDER, &right, false);
            place_arm(&mut pose, L_SHOULDER, &left, true);
            let mut coords = [[0.0; 3]; NUM_LANDMARKS];
            coords[..POSE_LANDMARKS].copy_from_slice(&pose);
            coords[POSE_LANDMARKS..POSE_LANDMARKS + HAND_LANDMARKS].copy_from_slice(&left);
            coords[POSE_LANDMARKS + HAND_LANDMARKS..].copy_from_slice(&right);
            if cfg.noise > 0.0 {
                for c in coords.iter_mut().flatten() {
                    *c += noise.sample(rng);
                }
            }
            KeypointFrame::new(coords, Presence::ALL)
        })
        .collect();
    KeypointSequence::new(frames, cfg.fps).expect("non-empty frames and validated fps")
}
