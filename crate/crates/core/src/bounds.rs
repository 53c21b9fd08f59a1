//! Fixed and state-dependent acceleration bounds.
//!
//! Every bound here is a feedback law evaluated on the current state: the
//! speed lower bound keeps `x3 >= 0` one step ahead, the emergency upper
//! bound tracks a moving boundary behind an obstacle, and the two lateral
//! bounds steer towards the corridor edges. With gains from
//! [`design_gains`] the tracking error dynamics have a non-negative real
//! double pole, so an active bound approaches its boundary without
//! overshoot. At the maximal gains `1/T²`, `3/(2T)` the response is
//! dead-beat.

use serde::{Deserialize, Serialize};

use crate::dynamics::{advance, ControlInput, VehicleState};
use crate::error::{Error, Result};

/// Box of admissible accelerations at one time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelLimits {
    pub u_min1: f64,
    pub u_max1: f64,
    pub u_min2: f64,
    pub u_max2: f64,
}

impl AccelLimits {
    /// `h1 <= 0 && h2 <= 0` for the given control.
    pub fn contains(&self, u: &ControlInput) -> bool {
        let h1 = (u.u1 - self.u_max1) * (u.u1 - self.u_min1);
        let h2 = (u.u2 - self.u_max2) * (u.u2 - self.u_min2);
        h1 <= 0.0 && h2 <= 0.0
    }

    pub fn is_well_ordered(&self) -> bool {
        self.u_min1 <= self.u_max1 && self.u_min2 <= self.u_max2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub k_long1: f64,
    pub k_long2: f64,
    pub k_lat1: f64,
    pub k_lat2: f64,
}

impl GainSet {
    /// Longitudinal and lateral gains both from [`design_gains`].
    pub fn designed(k_long1: f64, k_lat1: f64, dt: f64) -> Result<Self> {
        let (k_long1, k_long2) = design_gains(k_long1, dt)?;
        let (k_lat1, k_lat2) = design_gains(k_lat1, dt)?;
        Ok(Self {
            k_long1,
            k_long2,
            k_lat1,
            k_lat2,
        })
    }

    /// The dead-beat gains `1/T²` and `3/(2T)` in both directions.
    pub fn dead_beat(dt: f64) -> Self {
        let k1 = 1.0 / (dt * dt);
        let k2 = 1.5 / dt;
        Self {
            k_long1: k1,
            k_long2: k2,
            k_lat1: k1,
            k_lat2: k2,
        }
    }
}

/// Virtual longitudinal position limit that moves with an obstacle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MovingBoundary {
    pub x1_hat: f64,
    pub x3_hat: f64,
    pub u1_hat: f64,
}

/// Straight lateral limits for the vehicle centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LateralCorridor {
    pub x2_right: f64,
    pub x2_left: f64,
}

impl LateralCorridor {
    pub fn road(road_width: f64, vehicle_width: f64) -> Self {
        Self {
            x2_right: 0.5 * vehicle_width,
            x2_left: road_width - 0.5 * vehicle_width,
        }
    }

    /// `centre ± half_width`, intersected with `within`.
    pub fn around(centre: f64, half_width: f64, within: &LateralCorridor) -> Self {
        Self {
            x2_right: (centre - half_width).max(within.x2_right),
            x2_left: (centre + half_width).min(within.x2_left),
        }
    }

    pub fn contains(&self, x2: f64, slack: f64) -> bool {
        x2 >= self.x2_right - slack && x2 <= self.x2_left + slack
    }
}

/// Returns `(k1, k2)` with `k2 = 2√k1 − k1·T/2`, placing a double pole at
/// `z = 1 − T√k1`.
pub fn design_gains(k1: f64, dt: f64) -> Result<(f64, f64)> {
    let k1_max = 1.0 / (dt * dt);
    if !(k1 > 0.0 && k1 <= k1_max * (1.0 + 1e-12)) || !dt.is_finite() || dt <= 0.0 {
        return Err(Error::OutOfRange {
            name: "k1",
            value: k1,
            range: format!("(0, {k1_max}]"),
        });
    }
    Ok((k1, 2.0 * k1.sqrt() - 0.5 * k1 * dt))
}

/// Coefficients `(b, c)` of the error-dynamics characteristic polynomial
/// `z² + b z + c`.
pub fn characteristic_polynomial(k1: f64, k2: f64, dt: f64) -> (f64, f64) {
    let a = 0.5 * k1 * dt * dt;
    (a + dt * k2 - 2.0, a - dt * k2 + 1.0)
}

pub fn long_lower_bound(x3: f64, dt: f64, u_min_const: f64) -> f64 {
    (-x3 / dt).max(u_min_const)
}

pub fn long_upper_bound_emergency(s: &VehicleState, mb: &MovingBoundary, g: &GainSet) -> f64 {
    -g.k_long1 * (s.x1 - mb.x1_hat) - g.k_long2 * (s.x3 - mb.x3_hat) + mb.u1_hat
}

/// `(U_min2, U_max2)` without the corridor membership check.
#[inline]
pub fn lateral_bounds_unchecked(s: &VehicleState, c: &LateralCorridor, g: &GainSet) -> (f64, f64) {
    let damping = g.k_lat2 * s.x4;
    (
        -g.k_lat1 * (s.x2 - c.x2_right) - damping,
        -g.k_lat1 * (s.x2 - c.x2_left) - damping,
    )
}

/// Lateral bounds as applied by the solver: the feedback laws intersected
/// with the accelerations that keep the next `x2` inside the corridor.
///
/// That one-step interval is never empty and the result stays inside it, so
/// the corridor is forward invariant even from states where a moderate gain
/// would overshoot an edge (lateral speed towards a nearby edge, as left
/// behind by a dead-beat emergency manoeuvre).
#[inline]
pub fn lateral_limits(s: &VehicleState, c: &LateralCorridor, g: &GainSet, dt: f64) -> (f64, f64) {
    let (law_lo, law_hi) = lateral_bounds_unchecked(s, c, g);
    let coast = s.x2 + dt * s.x4;
    let inv = 2.0 / (dt * dt);
    let safe_lo = (c.x2_right - coast) * inv;
    let safe_hi = (c.x2_left - coast) * inv;
    (law_lo.max(safe_lo).min(safe_hi), law_hi.min(safe_hi).max(safe_lo))
}

pub fn lateral_bounds(s: &VehicleState, c: &LateralCorridor, g: &GainSet) -> Result<(f64, f64)> {
    if !c.contains(s.x2, 1e-9) {
        return Err(Error::OutsideCorridor {
            x2: s.x2,
            right: c.x2_right,
            left: c.x2_left,
        });
    }
    Ok(lateral_bounds_unchecked(s, c, g))
}

/// What a tracking bound is steering towards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackingTarget {
    /// Follow a moving boundary with constant acceleration `u1_hat`.
    Moving(MovingBoundary),
    /// Approach the left (upper) corridor edge.
    Left(f64),
    /// Approach the right (lower) corridor edge.
    Right(f64),
}

/// Simulates the closed loop with the bound permanently active and returns
/// the number of steps until position and speed errors are both within
/// `tol`, or `None` if that does not happen within `max_steps`.
pub fn dead_beat_check(
    s0: VehicleState,
    target: TrackingTarget,
    k1: f64,
    k2: f64,
    dt: f64,
    max_steps: usize,
    tol: f64,
) -> Option<usize> {
    let mut s = s0;
    let mut boundary = match target {
        TrackingTarget::Moving(mb) => mb,
        TrackingTarget::Left(x) | TrackingTarget::Right(x) => MovingBoundary {
            x1_hat: x,
            x3_hat: 0.0,
            u1_hat: 0.0,
        },
    };
    let lateral = !matches!(target, TrackingTarget::Moving(_));
    for k in 0..=max_steps {
        let (pos, speed) = if lateral { (s.x2, s.x4) } else { (s.x1, s.x3) };
        let e1 = pos - boundary.x1_hat;
        let e2 = speed - boundary.x3_hat;
        if e1.abs() <= tol && e2.abs() <= tol {
            return Some(k);
        }
        let u = -k1 * e1 - k2 * e2 + boundary.u1_hat;
        let control = if lateral {
            ControlInput::new(0.0, u)
        } else {
            ControlInput::new(u, 0.0)
        };
        s = advance(&s, &control, dt);
        let hat = advance(
            &VehicleState::new(boundary.x1_hat, 0.0, boundary.x3_hat, 0.0),
            &ControlInput::new(boundary.u1_hat, 0.0),
            dt,
        );
        boundary.x1_hat = hat.x1;
        boundary.x3_hat = hat.x3;
    }
    None
}

/// Which parts of a clamp had to resolve an empty box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClampFlags {
    pub empty_long: bool,
    pub empty_lat: bool,
}

impl ClampFlags {
    pub fn any(&self) -> bool {
        self.empty_long || self.empty_lat
    }
}

/// Componentwise projection onto the box.
///
/// An empty longitudinal interval resolves to its lower end (never reverse),
/// an empty lateral interval to its midpoint; both cases are flagged.
#[inline]
pub fn clamp(u: ControlInput, lim: &AccelLimits) -> (ControlInput, ClampFlags) {
    let mut flags = ClampFlags::default();
    let u1 = if lim.u_min1 <= lim.u_max1 {
        u.u1.clamp(lim.u_min1, lim.u_max1)
    } else {
        flags.empty_long = true;
        lim.u_min1
    };
    let u2 = if lim.u_min2 <= lim.u_max2 {
        u.u2.clamp(lim.u_min2, lim.u_max2)
    } else {
        flags.empty_lat = true;
        0.5 * (lim.u_min2 + lim.u_max2)
    };
    (ControlInput::new(u1, u2), flags)
}

/// How the bounds of one OCP are produced from the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    /// Constant upper longitudinal limit `U_max1`.
    pub u_max1: f64,
    /// Constant lower longitudinal limit `U_min1`.
    pub u_min1: f64,
    pub gains: GainSet,
    pub corridor: LateralCorridor,
    /// Per-step moving boundary; when present it replaces `u_max1` with the
    /// tracking bound (capped at `u_max1`).
    pub moving_boundary: Option<Vec<MovingBoundary>>,
}

impl BoundConfig {
    #[inline]
    pub fn limits(&self, k: usize, s: &VehicleState, dt: f64) -> AccelLimits {
        let u_min1 = long_lower_bound(s.x3, dt, self.u_min1);
        let u_max1 = match &self.moving_boundary {
            Some(mb) => {
                let mb = &mb[k.min(mb.len() - 1)];
                long_upper_bound_emergency(s, mb, &self.gains).min(self.u_max1)
            }
            None => self.u_max1,
        };
        let (u_min2, u_max2) = lateral_limits(s, &self.corridor, &self.gains, dt);
        AccelLimits {
            u_min1,
            u_max1,
            u_min2,
            u_max2,
        }
    }
}
