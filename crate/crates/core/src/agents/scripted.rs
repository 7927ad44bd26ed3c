//! Phase controller that reads the relative poses straight from the observation.

use crate::env::{Action, Observation};
use crate::spatial::{log_so3, rot6d_decode, Rotation6D, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedController {
    /// Height of the hover point above the entrance along the hole axis, meters.
    pub hover: f64,
    /// Proportional gain on position error, 1/s.
    pub position_gain: f64,
    /// Proportional gain on rotation error, 1/s.
    pub rotation_gain: f64,
    /// Lateral error below which descent starts, meters.
    pub lateral_tolerance: f64,
    /// Rotation error below which descent starts, radians.
    pub angle_tolerance: f64,
    /// Speed limit within `entry_zone` of the entrance plane, m/s.
    pub entry_speed: f64,
    pub entry_zone: f64,
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
}

impl Default for ScriptedController {
    fn default() -> Self {
        Self {
            hover: 0.02,
            position_gain: 6.0,
            rotation_gain: 6.0,
            lateral_tolerance: 0.0015,
            angle_tolerance: 3f64.to_radians(),
            entry_speed: 0.05,
            entry_zone: 0.01,
            max_linear_speed: 0.25,
            max_angular_speed: std::f64::consts::FRAC_PI_2,
        }
    }
}

fn clip(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

impl ScriptedController {
    pub fn act(&self, obs: &Observation) -> Action {
        let t_e = obs.t_entrance();
        let t_b = obs.t_bottom();
        let r_b = match rot6d_decode(&Rotation6D(obs.rot6d_bottom())) {
            Ok(r) => r,
            Err(_) => return [0.0; 6],
        };
        // Hole axis in the peg frame.
        let axis = r_b.column(2).into_owned();
        // Vector from the peg origin to the nearest point of the hole axis line,
        // taken through the closer frame to limit the effect of axis noise.
        let anchor = if t_e.norm() < t_b.norm() { t_e } else { t_b };
        let to_line = anchor - axis * axis.dot(&anchor);
        let lateral = to_line.norm();
        // Height of the peg origin above the entrance along the axis.
        let height = -axis.dot(&t_e);
        let rotation = log_so3(&r_b);

        let misaligned = rotation.norm();
        let inside = height < 0.0;
        let jammed = inside && misaligned > 2.0 * self.angle_tolerance;
        let descend = !jammed
            && ((lateral < self.lateral_tolerance && misaligned < self.angle_tolerance)
                || (inside && lateral < 3.0 * self.lateral_tolerance));
        let axial = if jammed {
            // Back out along the axis to free the peg.
            self.hover - height
        } else if descend {
            // Remaining travel to the floor.
            axis.dot(&t_b)
        } else if inside {
            0.0
        } else {
            self.hover - height
        };
        let speed = if height.abs() < self.entry_zone {
            self.entry_speed
        } else {
            self.max_linear_speed
        };
        let v: Vec3 = (to_line * self.position_gain).cap_magnitude(self.max_linear_speed)
            + axis * (axial * self.position_gain).clamp(-speed, speed);
        let w = rotation * self.rotation_gain;
        [
            clip(v.x / self.max_linear_speed),
            clip(v.y / self.max_linear_speed),
            clip(v.z / self.max_linear_speed),
            clip(w.x / self.max_angular_speed),
            clip(w.y / self.max_angular_speed),
            clip(w.z / self.max_angular_speed),
        ]
    }
}
