//! Discrete-time double-integrator kinematics.
//!
//! Each vehicle is two decoupled double integrators, one longitudinal
//! `(x1, x3, u1)` and one lateral `(x2, x4, u2)`. The update below is the
//! exact zero-order-hold discretisation of the continuous model, so a plan
//! rolled out here is also the true continuous trajectory at the sample
//! instants.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal position (m).
    pub x1: f64,
    /// Lateral position (m).
    pub x2: f64,
    /// Longitudinal speed (m/s).
    pub x3: f64,
    /// Lateral speed (m/s).
    pub x4: f64,
}

impl VehicleState {
    pub const fn new(x1: f64, x2: f64, x3: f64, x4: f64) -> Self {
        Self { x1, x2, x3, x4 }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.x2, self.x3, self.x4]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Longitudinal acceleration (m/s²).
    pub u1: f64,
    /// Lateral acceleration (m/s²).
    pub u2: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { u1: 0.0, u2: 0.0 };

    pub const fn new(u1: f64, u2: f64) -> Self {
        Self { u1, u2 }
    }

    pub fn is_finite(&self) -> bool {
        self.u1.is_finite() && self.u2.is_finite()
    }
}

/// A finite-horizon control sequence together with the states it produces.
///
/// `states[k + 1] == step(states[k], controls[k], dt)` holds bit for bit;
/// plans are only ever built through [`rollout`] or [`Plan::from_parts`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    /// Start time of `states[0]` (s).
    pub t0: f64,
    pub dt: f64,
    pub controls: Vec<ControlInput>,
    pub states: Vec<VehicleState>,
}

impl Plan {
    /// Horizon length `K`.
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    pub fn initial(&self) -> VehicleState {
        self.states[0]
    }

    pub fn last(&self) -> VehicleState {
        self.states[self.states.len() - 1]
    }

    pub(crate) fn from_parts(
        t0: f64,
        dt: f64,
        controls: Vec<ControlInput>,
        states: Vec<VehicleState>,
    ) -> Self {
        debug_assert_eq!(states.len(), controls.len() + 1);
        Self {
            t0,
            dt,
            controls,
            states,
        }
    }

    /// Re-checks the state-equation invariant exactly.
    pub fn is_consistent(&self) -> bool {
        self.states.len() == self.controls.len() + 1
            && self
                .controls
                .iter()
                .enumerate()
                .all(|(k, u)| advance(&self.states[k], u, self.dt) == self.states[k + 1])
    }
}

/// Unchecked state update used in the solver's inner loops.
#[inline(always)]
pub fn advance(s: &VehicleState, u: &ControlInput, dt: f64) -> VehicleState {
    let half_dt2 = 0.5 * dt * dt;
    VehicleState {
        x1: s.x1 + dt * s.x3 + half_dt2 * u.u1,
        x2: s.x2 + dt * s.x4 + half_dt2 * u.u2,
        x3: s.x3 + dt * u.u1,
        x4: s.x4 + dt * u.u2,
    }
}

pub fn step(s: VehicleState, u: ControlInput, dt: f64) -> Result<VehicleState> {
    if !s.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    if !u.is_finite() {
        return Err(Error::NonFinite("control"));
    }
    ensure_finite(dt, "dt")?;
    if dt <= 0.0 {
        return Err(Error::OutOfRange {
            name: "dt",
            value: dt,
            range: "(0, inf)".into(),
        });
    }
    Ok(advance(&s, &u, dt))
}

pub fn rollout(s0: VehicleState, controls: &[ControlInput], dt: f64) -> Result<Plan> {
    rollout_at(0.0, s0, controls, dt)
}

/// [`rollout`] with an explicit plan start time.
pub fn rollout_at(t0: f64, s0: VehicleState, controls: &[ControlInput], dt: f64) -> Result<Plan> {
    if controls.is_empty() {
        return Err(Error::Empty("control sequence"));
    }
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(s0);
    let mut s = s0;
    for u in controls {
        s = step(s, *u, dt)?;
        states.push(s);
    }
    Ok(Plan::from_parts(t0, dt, controls.to_vec(), states))
}

/// Compares [`step`] with the continuous-time solution under a held control.
///
/// The continuous route integrates the speed profile `v(t) = v0 + u t` with
/// Simpson's rule, which is exact for the linear integrand, so the two only
/// agree if the discrete update is the exact discretisation.
pub fn exactness_check(s0: VehicleState, u: ControlInput, dt: f64) -> bool {
    let Ok(discrete) = step(s0, u, dt) else {
        return false;
    };
    let continuous = |p0: f64, v0: f64, a: f64| {
        let v = |t: f64| v0 + a * t;
        let dp = dt / 6.0 * (v(0.0) + 4.0 * v(0.5 * dt) + v(dt));
        (p0 + dp, v(dt))
    };
    let (x1, x3) = continuous(s0.x1, s0.x3, u.u1);
    let (x2, x4) = continuous(s0.x2, s0.x4, u.u2);
    let close = |a: f64, b: f64, scale: f64| (a - b).abs() <= 1e-12 * scale.max(1.0);
    let long_scale = s0.x1.abs() + (dt * s0.x3).abs() + (dt * dt * u.u1).abs();
    let lat_scale = s0.x2.abs() + (dt * s0.x4).abs() + (dt * dt * u.u2).abs();
    close(discrete.x1, x1, long_scale)
        && close(discrete.x2, x2, lat_scale)
        && close(discrete.x3, x3, s0.x3.abs() + (dt * u.u1).abs())
        && close(discrete.x4, x4, s0.x4.abs() + (dt * u.u2).abs())
}
