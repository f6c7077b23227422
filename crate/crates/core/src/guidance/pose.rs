use std::f64::consts::{FRAC_PI_2, PI, TAU};

use serde::{Deserialize, Serialize};

use super::keys::CameraCommand;
use super::GuidanceError;

/// Largest pitch magnitude kept strictly inside the open interval.
const PITCH_LIMIT: f64 = FRAC_PI_2 - 1e-6;

/// Camera pose in a z-up world. Yaw 0 looks along +x; positive yaw turns left.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
}

impl Pose {
    pub fn heading(&self) -> [f64; 2] {
        [self.yaw.cos(), self.yaw.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeedConfig {
    pub move_speed: f64,
    pub turn_rate: f64,
    pub tilt_rate: f64,
    pub standby_drift_speed: f64,
}

impl Default for SpeedConfig {
    fn default() -> Self {
        Self {
            move_speed: 1.0,
            turn_rate: PI / 4.0,
            tilt_rate: PI / 8.0,
            standby_drift_speed: 0.05,
        }
    }
}

impl SpeedConfig {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        let fields = [
            ("move_speed", self.move_speed),
            ("turn_rate", self.turn_rate),
            ("tilt_rate", self.tilt_rate),
            ("standby_drift_speed", self.standby_drift_speed),
        ];
        for (field, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GuidanceError::InvalidSpeed {
                    field,
                    requirement: ">= 0",
                });
            }
        }
        if self.standby_drift_speed > self.move_speed {
            return Err(GuidanceError::InvalidSpeed {
                field: "standby_drift_speed",
                requirement: "<= move_speed",
            });
        }
        Ok(())
    }
}

pub(super) fn wrap_yaw(yaw: f64) -> f64 {
    (yaw + PI).rem_euclid(TAU) - PI
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 - x * x / 6.0
    } else {
        x.sin() / x
    }
}

/// Advances `pose` by `dt` seconds under a constant command.
///
/// Yaw and pitch change at constant rates. The camera moves at constant
/// speed in its horizontal body frame while turning, so the path is a
/// circular arc and two consecutive steps compose into one step of the
/// summed duration. With no turn this is a straight move along the heading.
pub fn integrate_pose(pose: &Pose, cmd: &CameraCommand, dt: f64, speeds: &SpeedConfig) -> Result<Pose, GuidanceError> {
    if !(dt >= 0.0) {
        return Err(GuidanceError::InvalidTimestep(dt));
    }
    let (tilt, turn) = cmd.view.axes();
    let omega = f64::from(turn) * speeds.turn_rate;
    let pitch = (pose.pitch + f64::from(tilt) * speeds.tilt_rate * dt).clamp(-PITCH_LIMIT, PITCH_LIMIT);

    let (fwd, left) = cmd.move_cmd.axes();
    let (vf, vl) = if cmd.standby {
        (speeds.standby_drift_speed, 0.0)
    } else if fwd == 0 && left == 0 {
        (0.0, 0.0)
    } else {
        let norm = f64::from(fwd).hypot(f64::from(left));
        (
            speeds.move_speed * f64::from(fwd) / norm,
            speeds.move_speed * f64::from(left) / norm,
        )
    };

    // Integral of the heading rotation over the step, in the stable
    // midpoint form.
    let half = omega * dt / 2.0;
    let mid = pose.yaw + half;
    let scale = dt * sinc(half);
    let (a, b) = (scale * mid.cos(), scale * mid.sin());
    let [x, y, z] = pose.position;
    Ok(Pose {
        position: [x + a * vf - b * vl, y + b * vf + a * vl, z],
        yaw: wrap_yaw(pose.yaw + omega * dt),
        pitch,
    })
}
