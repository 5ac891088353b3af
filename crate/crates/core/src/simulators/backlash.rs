use serde::{Deserialize, Serialize};

/// First-order motor driving a shaft through a gear with play.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacklashMotorParams {
    /// Velocity time constant in seconds.
    pub time_constant: f64,
    /// Steady-state motor speed per unit command (rad/s).
    pub gain: f64,
    /// Half-width of the dead zone between motor and shaft (rad).
    pub deadzone_halfwidth: f64,
    pub dt: f64,
}

impl Default for BacklashMotorParams {
    fn default() -> Self {
        BacklashMotorParams {
            time_constant: 0.05,
            gain: 4.0,
            deadzone_halfwidth: 0.1,
            dt: 0.01,
        }
    }
}

/// `(θ_motor, θ_shaft, ω_motor)`
pub type BacklashState = [f64; 3];

/// One step: first-order motor velocity, Euler position update, then the
/// dead-zone coupling that drags the shaft only once the gap is taken up.
pub fn step_backlash_motor(s: &BacklashState, u: f64, p: &BacklashMotorParams) -> BacklashState {
    let [theta_m, theta_s, omega] = *s;
    let omega = omega + p.dt * (p.gain * u - omega) / p.time_constant;
    let theta_m = theta_m + p.dt * omega;
    let gap = theta_m - theta_s;
    let beta = p.deadzone_halfwidth;
    let theta_s = if gap.abs() > beta {
        let mut dragged = theta_m - beta * gap.signum();
        // Rounding can leave the gap an ulp wider than beta.
        while (theta_m - dragged).abs() > beta {
            dragged = if theta_m > dragged {
                dragged.next_up()
            } else {
                dragged.next_down()
            };
        }
        dragged
    } else {
        theta_s
    };
    [theta_m, theta_s, omega]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_play_means_rigid_coupling() {
        let p = BacklashMotorParams {
            deadzone_halfwidth: 0.0,
            ..Default::default()
        };
        let mut s = [0.0; 3];
        for i in 0..200 {
            s = step_backlash_motor(&s, ((i as f64) * 0.1).sin(), &p);
            assert_eq!(s[0], s[1]);
        }
    }

    #[test]
    fn small_pulse_stays_in_dead_zone() {
        let p = BacklashMotorParams::default();
        let mut s = [0.0; 3];
        for i in 0..100 {
            let u = if i < 2 { 0.5 } else { 0.0 };
            s = step_backlash_motor(&s, u, &p);
            assert!(s[0].abs() < p.deadzone_halfwidth);
            assert_eq!(s[1], 0.0);
        }
    }

    #[test]
    fn engaged_gap_equals_halfwidth() {
        let p = BacklashMotorParams::default();
        let mut s = [0.0; 3];
        for _ in 0..50 {
            s = step_backlash_motor(&s, 1.0, &p);
        }
        assert!(((s[0] - s[1]) - p.deadzone_halfwidth).abs() < 1e-12);
    }
}
