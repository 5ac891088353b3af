use serde::{Deserialize, Serialize};

/// Planar double pendulum, angles from the downward vertical. The second
/// link is light and short by default so it perturbs the first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublePendulumParams {
    pub m1: f64,
    pub m2: f64,
    pub l1: f64,
    pub l2: f64,
    pub g: f64,
    pub dt: f64,
}

impl Default for DoublePendulumParams {
    fn default() -> Self {
        DoublePendulumParams {
            m1: 1.0,
            m2: 0.1,
            l1: 1.0,
            l2: 0.2,
            g: 9.81,
            dt: 0.01,
        }
    }
}

/// `(θ1, ω1, θ2, ω2)`
pub type DoublePendulumState = [f64; 4];

impl DoublePendulumParams {
    /// Angular accelerations `(α1, α2)` from the Lagrangian equations of motion.
    pub fn accelerations(&self, s: &DoublePendulumState) -> (f64, f64) {
        let [t1, w1, t2, w2] = *s;
        let (m1, m2, l1, l2, g) = (self.m1, self.m2, self.l1, self.l2, self.g);
        let delta = t1 - t2;
        let den = 2.0 * m1 + m2 - m2 * (2.0 * delta).cos();
        let a1 = (-g * (2.0 * m1 + m2) * t1.sin()
            - m2 * g * (t1 - 2.0 * t2).sin()
            - 2.0 * delta.sin() * m2 * (w2 * w2 * l2 + w1 * w1 * l1 * delta.cos()))
            / (l1 * den);
        let a2 = 2.0
            * delta.sin()
            * (w1 * w1 * l1 * (m1 + m2) + g * (m1 + m2) * t1.cos() + w2 * w2 * l2 * m2 * delta.cos())
            / (l2 * den);
        (a1, a2)
    }

    fn derivative(&self, s: &DoublePendulumState) -> DoublePendulumState {
        let (a1, a2) = self.accelerations(s);
        [s[1], a1, s[3], a2]
    }

    /// Kinetic plus potential energy, potential measured from the lowest
    /// configuration so the resting state has zero energy.
    pub fn energy(&self, s: &DoublePendulumState) -> f64 {
        let [t1, w1, t2, w2] = *s;
        let (m1, m2, l1, l2, g) = (self.m1, self.m2, self.l1, self.l2, self.g);
        let kinetic = 0.5 * (m1 + m2) * l1 * l1 * w1 * w1
            + 0.5 * m2 * l2 * l2 * w2 * w2
            + m2 * l1 * l2 * w1 * w2 * (t1 - t2).cos();
        let potential = (m1 + m2) * g * l1 * (1.0 - t1.cos()) + m2 * g * l2 * (1.0 - t2.cos());
        kinetic + potential
    }
}

/// One classical fourth-order Runge-Kutta step.
pub fn step_double_pendulum(s: &DoublePendulumState, p: &DoublePendulumParams) -> DoublePendulumState {
    let h = p.dt;
    let add = |a: &DoublePendulumState, k: &DoublePendulumState, f: f64| {
        [a[0] + f * k[0], a[1] + f * k[1], a[2] + f * k[2], a[3] + f * k[3]]
    };
    let k1 = p.derivative(s);
    let k2 = p.derivative(&add(s, &k1, h / 2.0));
    let k3 = p.derivative(&add(s, &k2, h / 2.0));
    let k4 = p.derivative(&add(s, &k3, h));
    let mut out = *s;
    for i in 0..4 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn resting_state_is_fixed() {
        let p = DoublePendulumParams::default();
        assert_eq!(step_double_pendulum(&[0.0; 4], &p), [0.0; 4]);
    }

    #[test]
    fn energy_drift_is_small() {
        let p = DoublePendulumParams::default();
        let mut s = [FRAC_PI_2, 0.0, FRAC_PI_2, 0.0];
        let e0 = p.energy(&s);
        for _ in 0..10_000 {
            s = step_double_pendulum(&s, &p);
        }
        let drift = ((p.energy(&s) - e0) / e0).abs();
        assert!(drift < 1e-3, "relative drift {drift}");
    }

    #[test]
    fn massless_second_link_reduces_to_simple_pendulum() {
        let p = DoublePendulumParams {
            m2: 1e-12,
            ..Default::default()
        };
        // Independent RK4 on θ'' = −(g/l) sin θ.
        let f = |th: f64, w: f64| (w, -p.g / p.l1 * th.sin());
        let (mut th, mut w) = (1.0, 0.0);
        let mut s = [1.0, 0.0, -0.4, 0.3];
        for _ in 0..100 {
            let h = p.dt;
            let (a1, b1) = f(th, w);
            let (a2, b2) = f(th + h / 2.0 * a1, w + h / 2.0 * b1);
            let (a3, b3) = f(th + h / 2.0 * a2, w + h / 2.0 * b2);
            let (a4, b4) = f(th + h * a3, w + h * b3);
            th += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
            w += h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
            s = step_double_pendulum(&s, &p);
            assert!((s[0] - th).abs() < 1e-6);
        }
    }
}
