use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

/// Actuated pendulum, `θ = 0` upright.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub g: f64,
    pub length: f64,
    pub mass: f64,
    pub dt: f64,
    pub omega_clip: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            g: 10.0,
            length: 1.0,
            mass: 1.0,
            dt: 0.05,
            omega_clip: 8.0,
        }
    }
}

/// `sin θ` with the argument first reduced to `[−π/2, π/2]`, so that the
/// hanging position `θ = ±π` yields exactly zero.
pub(crate) fn reduced_sin(theta: f64) -> f64 {
    if theta > FRAC_PI_2 {
        (PI - theta).sin()
    } else if theta < -FRAC_PI_2 {
        -(PI + theta).sin()
    } else {
        theta.sin()
    }
}

/// Wraps into `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if wrapped <= -PI {
        wrapped + 2.0 * PI
    } else {
        wrapped
    }
}

/// One semi-implicit Euler step:
/// `ω′ = clip(ω + dt·(3g/2l)·sin θ + dt·3u/(m l²), ±ω_max)`, `θ′ = wrap(θ + dt·ω′)`.
pub fn step_pendulum(theta: f64, omega: f64, u: f64, p: &PendulumParams) -> (f64, f64) {
    let accel = 3.0 * p.g / (2.0 * p.length) * reduced_sin(theta)
        + 3.0 / (p.mass * p.length * p.length) * u;
    let omega = (omega + p.dt * accel).clamp(-p.omega_clip, p.omega_clip);
    (wrap_angle(theta + p.dt * omega), omega)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points_are_exact() {
        let p = PendulumParams::default();
        assert_eq!(step_pendulum(0.0, 0.0, 0.0, &p), (0.0, 0.0));
        assert_eq!(step_pendulum(PI, 0.0, 0.0, &p), (PI, 0.0));
        let mut s = (PI, 0.0);
        for _ in 0..1000 {
            s = step_pendulum(s.0, s.1, 0.0, &p);
        }
        assert_eq!(s, (PI, 0.0));
    }

    #[test]
    fn quarter_turn_by_hand() {
        let p = PendulumParams::default();
        let (theta, omega) = step_pendulum(FRAC_PI_2, 0.0, 0.0, &p);
        assert!((omega - 0.75).abs() < 1e-15);
        assert!((theta - (FRAC_PI_2 + 0.0375)).abs() < 1e-15);
    }

    #[test]
    fn clip_and_wrap_hold() {
        let p = PendulumParams::default();
        let (mut th, mut om) = (0.1, 0.0);
        for i in 0..5000 {
            let u = if (i / 37) % 2 == 0 { 5.0 } else { -5.0 };
            (th, om) = step_pendulum(th, om, u, &p);
            assert!(om.abs() <= p.omega_clip);
            assert!(th > -PI && th <= PI);
        }
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(7.0 * PI) - PI).abs() < 1e-12);
    }
}
