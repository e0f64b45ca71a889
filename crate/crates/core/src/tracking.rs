//! Head and torso commands that keep the primary face centred.
//!
//! Conventions: a face in the left half of the image produces a positive yaw
//! increment (turn left), a face in the upper half a positive pitch increment
//! (look up). Offsets are normalized so the image edges sit at ±1.

use serde::{Deserialize, Serialize};

use crate::detect::DetectionBox;

pub const HEAD_TOPIC: &str = "head_controller/increment/goal";
pub const TORSO_TOPIC: &str = "/torso_controller/safe_command";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetPolicy {
    #[default]
    LargestBox,
    NearestCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackState {
    pub frame_width: usize,
    pub frame_height: usize,
    /// Radians per unit of normalized offset.
    pub gain_yaw: f64,
    pub gain_pitch: f64,
    /// Offsets with magnitude at most this produce no command.
    pub deadzone: f64,
    /// Radians.
    pub max_increment: f64,
    pub target: TargetPolicy,
    /// Vertical offset beyond which the torso moves.
    pub torso_threshold: f64,
    /// Metres per unit of vertical offset beyond the threshold.
    pub torso_gain: f64,
    /// Metres.
    pub torso_max_increment: f64,
}

impl Default for TrackState {
    fn default() -> Self {
        TrackState {
            frame_width: 640,
            frame_height: 480,
            gain_yaw: 0.3,
            gain_pitch: 0.3,
            deadzone: 0.05,
            max_increment: 0.1,
            target: TargetPolicy::LargestBox,
            torso_threshold: 0.5,
            torso_gain: 0.1,
            torso_max_increment: 0.02,
        }
    }
}

impl TrackState {
    pub fn with_frame(self, width: usize, height: usize) -> Self {
        TrackState {
            frame_width: width,
            frame_height: height,
            ..self
        }
    }

    pub fn is_valid(&self) -> bool {
        self.frame_width > 0
            && self.frame_height > 0
            && self.gain_yaw > 0.0
            && self.gain_pitch > 0.0
            && (0.0..1.0).contains(&self.deadzone)
            && self.max_increment > 0.0
            && self.torso_gain > 0.0
            && self.torso_max_increment > 0.0
    }

    /// Normalized offsets `(u, v)` of a point from the frame centre.
    pub fn offsets(&self, cx: f64, cy: f64) -> (f64, f64) {
        let (hw, hh) = (self.frame_width as f64 / 2.0, self.frame_height as f64 / 2.0);
        ((cx - hw) / hw, (cy - hh) / hh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadCommand {
    pub topic: String,
    /// Radians, positive turns left.
    pub yaw_increment: f64,
    /// Radians, positive looks up.
    pub pitch_increment: f64,
}

impl HeadCommand {
    pub fn is_zero(&self) -> bool {
        self.yaw_increment == 0.0 && self.pitch_increment == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorsoCommand {
    pub topic: String,
    /// Metres, positive lifts.
    pub lift_increment: f64,
}

fn distance_to_center(b: &DetectionBox, state: &TrackState) -> f64 {
    let (cx, cy) = b.rect.center();
    let (u, v) = state.offsets(cx, cy);
    u.hypot(v)
}

/// Picks the face to track according to `state.target`. Ties fall back to
/// the other criterion, then to `(x, y)` order.
pub fn select_target(detections: &[DetectionBox], state: &TrackState) -> Option<DetectionBox> {
    detections.iter().copied().min_by(|a, b| {
        let by_area = b.rect.area().cmp(&a.rect.area());
        let by_center = distance_to_center(a, state).total_cmp(&distance_to_center(b, state));
        let primary = match state.target {
            TargetPolicy::LargestBox => by_area.then(by_center),
            TargetPolicy::NearestCenter => by_center.then(by_area),
        };
        primary.then_with(|| (a.rect.x, a.rect.y).cmp(&(b.rect.x, b.rect.y)))
    })
}

/// Proportional response with a deadzone and saturation:
/// `clamp(−gain·(offset − sign(offset)·deadzone), ±max)`, zero inside the deadzone.
pub fn axis_increment(offset: f64, gain: f64, deadzone: f64, max: f64) -> f64 {
    if offset.abs() <= deadzone {
        return 0.0;
    }
    (-gain * (offset - offset.signum() * deadzone)).clamp(-max, max)
}

pub fn compute_command(target: &DetectionBox, state: &TrackState) -> HeadCommand {
    let (cx, cy) = target.rect.center();
    let (u, v) = state.offsets(cx, cy);
    HeadCommand {
        topic: HEAD_TOPIC.to_string(),
        yaw_increment: axis_increment(u, state.gain_yaw, state.deadzone, state.max_increment),
        pitch_increment: axis_increment(v, state.gain_pitch, state.deadzone, state.max_increment),
    }
}

/// Lifts or lowers the torso when the face sits far above or below centre.
pub fn torso_command(target: &DetectionBox, state: &TrackState) -> Option<TorsoCommand> {
    let (cx, cy) = target.rect.center();
    let (_, v) = state.offsets(cx, cy);
    let lift = axis_increment(v, state.torso_gain, state.torso_threshold, state.torso_max_increment);
    (lift != 0.0).then(|| TorsoCommand {
        topic: TORSO_TOPIC.to_string(),
        lift_increment: lift,
    })
}

/// Horizontal field of view of the simulated head camera, radians.
pub const SIM_HFOV: f64 = 1.01;

/// A pan-tilt head whose camera sees a target fixed in the world. Angles
/// are radians; the image offset of the target is proportional to the
/// angle between the gaze and the target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulatedHead {
    pub yaw: f64,
    pub pitch: f64,
    pub hfov: f64,
    pub vfov: f64,
}

impl SimulatedHead {
    pub fn new(state: &TrackState) -> Self {
        let aspect = state.frame_height as f64 / state.frame_width as f64;
        SimulatedHead {
            yaw: 0.0,
            pitch: 0.0,
            hfov: SIM_HFOV,
            vfov: SIM_HFOV * aspect,
        }
    }

    /// Normalized image offsets of a target at world bearing `(yaw, pitch)`.
    pub fn observe(&self, target_yaw: f64, target_pitch: f64) -> (f64, f64) {
        (-(target_yaw - self.yaw) / (self.hfov / 2.0), -(target_pitch - self.pitch) / (self.vfov / 2.0))
    }

    /// The detection box a `side`-pixel face at that bearing would produce.
    pub fn project(&self, state: &TrackState, target_yaw: f64, target_pitch: f64, side: usize) -> DetectionBox {
        let (u, v) = self.observe(target_yaw, target_pitch);
        let (hw, hh) = (state.frame_width as f64 / 2.0, state.frame_height as f64 / 2.0);
        let half = side as f64 / 2.0;
        let x = (hw * (1.0 + u) - half).round().clamp(0.0, (state.frame_width - side) as f64) as usize;
        let y = (hh * (1.0 + v) - half).round().clamp(0.0, (state.frame_height - side) as f64) as usize;
        DetectionBox {
            rect: crate::image::Rect::new(x, y, side, side),
            neighbors: 1,
            stage_score: 0.0,
        }
    }

    pub fn apply(&mut self, cmd: &HeadCommand) {
        self.yaw += cmd.yaw_increment;
        self.pitch += cmd.pitch_increment;
    }
}

/// Drives a [`SimulatedHead`] toward a static target for `ticks` steps and
/// returns the normalized offsets observed before each command.
pub fn simulate_static_target(state: &TrackState, target_yaw: f64, target_pitch: f64, ticks: usize) -> Vec<(f64, f64)> {
    let mut head = SimulatedHead::new(state);
    let side = state.frame_height / 8;
    (0..ticks)
        .map(|_| {
            let face = head.project(state, target_yaw, target_pitch, side);
            let (cx, cy) = face.rect.center();
            let cmd = compute_command(&face, state);
            head.apply(&cmd);
            state.offsets(cx, cy)
        })
        .collect()
}
