//! Physics generators for system-identification data.
//!
//! Three systems are available:
//!
//! * `pendulum`: torque-actuated pendulum (gym convention, `θ = 0` upright),
//!   recorded as `(cos θ, sin θ, ω)` with action `u`; starts hanging at `θ = π`.
//! * `double-pendulum`: unactuated double pendulum integrated with RK4,
//!   recorded as `(θ1, ω1, α1)` of the large link only; the small link is
//!   hidden. Starts at `(π/2, 0, π/2, 0)`.
//! * `backlash-motor`: first-order motor coupled to a shaft through a dead
//!   zone, recorded as shaft `(θ, ω)` with command `u`; starts at rest.
//!
//! Observation noise is added to recorded states only; the dynamics evolve
//! on the noiseless state.

mod backlash;
mod double_pendulum;
mod pendulum;
mod trajectory;

pub use backlash::{step_backlash_motor, BacklashMotorParams, BacklashState};
pub use double_pendulum::{step_double_pendulum, DoublePendulumParams, DoublePendulumState};
pub use pendulum::{step_pendulum, wrap_angle, PendulumParams};
pub use trajectory::{csv_export, csv_ingest, ChannelSchema, Trajectory};

use std::f64::consts::{FRAC_PI_2, PI};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, RngState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum System {
    Pendulum,
    DoublePendulum,
    BacklashMotor,
}

impl System {
    pub const ALL: [System; 3] = [System::Pendulum, System::DoublePendulum, System::BacklashMotor];

    pub fn name(self) -> &'static str {
        match self {
            System::Pendulum => "pendulum",
            System::DoublePendulum => "double-pendulum",
            System::BacklashMotor => "backlash-motor",
        }
    }

    pub fn state_names(self) -> &'static [&'static str] {
        match self {
            System::Pendulum => &["cos_theta", "sin_theta", "omega"],
            System::DoublePendulum => &["theta1", "omega1", "alpha1"],
            System::BacklashMotor => &["theta_shaft", "omega_shaft"],
        }
    }

    pub fn action_names(self) -> &'static [&'static str] {
        match self {
            System::Pendulum | System::BacklashMotor => &["u"],
            System::DoublePendulum => &[],
        }
    }

    pub fn schema(self) -> ChannelSchema {
        ChannelSchema {
            states: self.state_names().iter().map(|s| s.to_string()).collect(),
            actions: self.action_names().iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn default_params(self) -> SystemParams {
        match self {
            System::Pendulum => SystemParams::Pendulum(PendulumParams::default()),
            System::DoublePendulum => SystemParams::DoublePendulum(DoublePendulumParams::default()),
            System::BacklashMotor => SystemParams::BacklashMotor(BacklashMotorParams::default()),
        }
    }

    /// The documented starting state of [`simulate`].
    pub fn default_initial_state(self) -> Vec<f64> {
        match self {
            System::Pendulum => vec![PI, 0.0],
            System::DoublePendulum => vec![FRAC_PI_2, 0.0, FRAC_PI_2, 0.0],
            System::BacklashMotor => vec![0.0, 0.0, 0.0],
        }
    }
}

impl std::fmt::Display for System {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for System {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        System::ALL
            .into_iter()
            .find(|sys| sys.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown system '{s}' (expected pendulum, double-pendulum or backlash-motor)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "kebab-case")]
pub enum SystemParams {
    Pendulum(PendulumParams),
    DoublePendulum(DoublePendulumParams),
    BacklashMotor(BacklashMotorParams),
}

impl SystemParams {
    pub fn system(&self) -> System {
        match self {
            SystemParams::Pendulum(_) => System::Pendulum,
            SystemParams::DoublePendulum(_) => System::DoublePendulum,
            SystemParams::BacklashMotor(_) => System::BacklashMotor,
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            SystemParams::Pendulum(p) => p.dt,
            SystemParams::DoublePendulum(p) => p.dt,
            SystemParams::BacklashMotor(p) => p.dt,
        }
    }
}

/// Piecewise-constant excitation: uniform draws in `[−amplitude, amplitude]`,
/// each held for `hold` steps.
pub fn generate_actuation(rng: &mut RngState, steps: usize, amplitude: f64, hold: usize) -> Result<Matrix> {
    if hold == 0 {
        return Err(Error::domain("actuation hold must be at least one step"));
    }
    if !(amplitude >= 0.0) {
        return Err(Error::domain(format!("amplitude must be >= 0, got {amplitude}")));
    }
    let mut values = Vec::with_capacity(steps);
    let mut current = 0.0;
    for t in 0..steps {
        if t % hold == 0 {
            current = rng.uniform_range(-amplitude, amplitude);
        }
        values.push(current);
    }
    Matrix::from_vec(steps, 1, values)
}

/// Rolls the system from its documented initial state under `actions`.
pub fn simulate(
    params: &SystemParams,
    actions: &Matrix,
    noise_sigma: f64,
    rng: &mut RngState,
) -> Result<Trajectory> {
    let initial = params.system().default_initial_state();
    simulate_from(params, &initial, actions, noise_sigma, rng)
}

/// [`simulate`] by system name; unknown names are configuration errors.
pub fn simulate_named(
    name: &str,
    actions: &Matrix,
    noise_sigma: f64,
    rng: &mut RngState,
) -> Result<Trajectory> {
    let system: System = name.parse()?;
    simulate(&system.default_params(), actions, noise_sigma, rng)
}

/// Rolls the system from `initial` (the stepper's full, partly hidden state).
/// Row `t` records the state before `actions[t]` is applied.
pub fn simulate_from(
    params: &SystemParams,
    initial: &[f64],
    actions: &Matrix,
    noise_sigma: f64,
    rng: &mut RngState,
) -> Result<Trajectory> {
    let system = params.system();
    let steps = actions.rows();
    if actions.cols() != system.action_names().len() {
        return Err(Error::shape(format!(
            "{system} takes {} action channels, got {}",
            system.action_names().len(),
            actions.cols()
        )));
    }
    let expected_state = system.default_initial_state().len();
    if initial.len() != expected_state {
        return Err(Error::shape(format!(
            "{system} state has {expected_state} entries, got {}",
            initial.len()
        )));
    }
    let d = system.state_names().len();
    let mut states = Matrix::zeros(steps, d);
    match params {
        SystemParams::Pendulum(p) => {
            let (mut theta, mut omega) = (initial[0], initial[1]);
            for t in 0..steps {
                states.row_mut(t).copy_from_slice(&[theta.cos(), theta.sin(), omega]);
                (theta, omega) = step_pendulum(theta, omega, actions.get(t, 0), p);
            }
        }
        SystemParams::DoublePendulum(p) => {
            let mut s: DoublePendulumState = [initial[0], initial[1], initial[2], initial[3]];
            for t in 0..steps {
                let (alpha1, _) = p.accelerations(&s);
                states.row_mut(t).copy_from_slice(&[s[0], s[1], alpha1]);
                s = step_double_pendulum(&s, p);
            }
        }
        SystemParams::BacklashMotor(p) => {
            let mut s: BacklashState = [initial[0], initial[1], initial[2]];
            let mut shaft_velocity = 0.0;
            for t in 0..steps {
                states.row_mut(t).copy_from_slice(&[s[1], shaft_velocity]);
                let next = step_backlash_motor(&s, actions.get(t, 0), p);
                shaft_velocity = (next[1] - s[1]) / p.dt;
                s = next;
            }
        }
    }
    if noise_sigma > 0.0 {
        for v in states.data_mut() {
            *v += noise_sigma * rng.normal();
        }
    } else if noise_sigma < 0.0 {
        return Err(Error::domain(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    Trajectory::new(states, actions.clone(), params.dt(), system.schema())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actuation_ranges() {
        let mut rng = RngState::new(1);
        assert_eq!(generate_actuation(&mut rng, 50, 0.0, 3).unwrap().max_abs(), 0.0);
        for amp in [0.5, 2.0] {
            let a = generate_actuation(&mut rng, 5000, amp, 4).unwrap();
            assert!(a.max_abs() <= amp);
            assert!(a.max_abs() > 0.9 * amp);
        }
        assert!(generate_actuation(&mut rng, 10, 1.0, 0).is_err());
    }

    #[test]
    fn actuation_is_held() {
        let a = generate_actuation(&mut RngState::new(2), 30, 1.0, 10).unwrap();
        for block in a.data().chunks(10) {
            assert!(block.iter().all(|&v| v == block[0]));
        }
        assert_ne!(a.get(0, 0), a.get(10, 0));
    }

    #[test]
    fn channel_layouts() {
        let mut rng = RngState::new(3);
        let u = generate_actuation(&mut rng, 40, 0.5, 5).unwrap();
        let tr = simulate(&System::Pendulum.default_params(), &u, 0.0, &mut rng).unwrap();
        assert_eq!(tr.state_names, ["cos_theta", "sin_theta", "omega"]);
        assert_eq!(tr.states.cols(), 3);
        for r in tr.states.iter_rows() {
            assert!((r[0] * r[0] + r[1] * r[1] - 1.0).abs() < 1e-12);
        }

        let none = Matrix::zeros(40, 0);
        let dp = simulate(&System::DoublePendulum.default_params(), &none, 0.0, &mut rng).unwrap();
        assert_eq!(dp.states.cols(), 3);
        assert_eq!(dp.state_names, ["theta1", "omega1", "alpha1"]);
    }

    #[test]
    fn noiseless_runs_are_bit_identical() {
        let u = generate_actuation(&mut RngState::new(4), 100, 1.0, 7).unwrap();
        let params = System::BacklashMotor.default_params();
        let a = simulate(&params, &u, 0.0, &mut RngState::new(10)).unwrap();
        let b = simulate(&params, &u, 0.0, &mut RngState::new(99)).unwrap();
        assert_eq!(a, b);
        let c = simulate(&params, &u, 0.01, &mut RngState::new(10)).unwrap();
        let d = simulate(&params, &u, 0.01, &mut RngState::new(10)).unwrap();
        assert_eq!(c, d);
        assert_ne!(a, c);
    }

    #[test]
    fn unknown_system_is_config_error() {
        let u = Matrix::zeros(5, 1);
        let err = simulate_named("cartpole", &u, 0.0, &mut RngState::new(0)).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn backlash_gap_never_exceeds_halfwidth() {
        let p = BacklashMotorParams::default();
        let mut rng = RngState::new(5);
        let mut s = [0.0; 3];
        for _ in 0..100_000 {
            s = step_backlash_motor(&s, rng.uniform_range(-2.0, 2.0), &p);
            assert!((s[0] - s[1]).abs() <= p.deadzone_halfwidth + 1e-12);
        }
    }
}
