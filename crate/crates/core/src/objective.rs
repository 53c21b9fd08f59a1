//! Sub-objectives of the trajectory cost and their analytic derivatives.
//!
//! The stage cost at step `k` is
//!
//! ```text
//! w1 u1² + w2 u2² + w3 (x3 − vd1)² + w4 (x4 − vd2)² + w5 Σ c_i + w6 f_c
//! ```
//!
//! plus `w7 (u1(0) − u1_prev)²` at `k = 0`. `c_i` is the two-ellipsoid
//! obstacle potential whose centre and axes depend on the ego speeds, so its
//! state derivatives carry the chain rule through `δ`, `d1` and `d2`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlInput, Plan, VehicleState};
use crate::error::{Error, Result};

/// Argument magnitude beyond which `tanh` is treated as saturated.
const TANH_CLAMP: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Weights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub w4: f64,
    pub w5: f64,
    pub w6: f64,
    pub w7: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Self {
            w1: 0.005,
            w2: 0.005,
            w3: 0.015,
            w4: 0.005,
            w5: 7.0,
            w6: 0.1,
            w7: 0.005,
        }
    }
}

impl Weights {
    pub const ZERO: Weights = Weights {
        w1: 0.0,
        w2: 0.0,
        w3: 0.0,
        w4: 0.0,
        w5: 0.0,
        w6: 0.0,
        w7: 0.0,
    };

    pub fn as_array(&self) -> [f64; 7] {
        [self.w1, self.w2, self.w3, self.w4, self.w5, self.w6, self.w7]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EllipsoidParams {
    /// Longitudinal time gap (s).
    pub omega1: f64,
    /// Lateral time gap (s).
    pub omega2: f64,
    pub mu_x: f64,
    pub mu_y: f64,
    pub eps_w: f64,
    pub p1: i32,
    pub p2: i32,
    pub p3: i32,
    pub p4: i32,
    pub p5: i32,
}

impl Default for EllipsoidParams {
    fn default() -> Self {
        Self {
            omega1: 0.53,
            omega2: 0.5,
            mu_x: 1.3,
            mu_y: 1.2,
            eps_w: 0.1,
            p1: 6,
            p2: 2,
            p3: 2,
            p4: 2,
            p5: 2,
        }
    }
}

impl EllipsoidParams {
    pub fn validate(&self) -> Result<()> {
        let even = |p: i32| p > 0 && p % 2 == 0;
        let bad = |name: &'static str, value: f64, range: &str| {
            Err(Error::OutOfRange {
                name,
                value,
                range: range.into(),
            })
        };
        if !(self.omega1 > 0.0) {
            return bad("omega1", self.omega1, "(0, inf)");
        }
        if !(self.omega2 > 0.0) {
            return bad("omega2", self.omega2, "(0, inf)");
        }
        if !(self.mu_x >= 1.0) {
            return bad("mu_x", self.mu_x, "[1, inf)");
        }
        if !(self.mu_y >= 1.0) {
            return bad("mu_y", self.mu_y, "[1, inf)");
        }
        if !(self.eps_w > 0.0) {
            return bad("eps_w", self.eps_w, "(0, inf)");
        }
        for (name, p) in [("p1", self.p1), ("p2", self.p2), ("p3", self.p3), ("p4", self.p4)] {
            if !even(p) {
                return bad(name, p as f64, "positive even integers");
            }
        }
        if self.p5 < 1 {
            return bad("p5", self.p5 as f64, "positive integers");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleDims {
    pub length: f64,
    pub width: f64,
}

impl VehicleDims {
    pub const fn new(length: f64, width: f64) -> Self {
        Self { length, width }
    }
}

/// Another vehicle as seen by the ego planner: its size and a predicted
/// trajectory sampled on the ego's time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstaclePrediction {
    pub id: usize,
    pub dims: VehicleDims,
    pub traj: Vec<VehicleState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedTargets {
    pub vd1: f64,
    pub vd2: f64,
}

pub fn ellipsoid_center(o1: f64, x3: f64, o3: f64, omega1: f64) -> f64 {
    o1 - 0.5 * omega1 * (x3 - o3)
}

/// Ellipsoid axes `(d1, d2)` for one ego/obstacle pair.
pub fn axis_lengths(
    ego: VehicleDims,
    obs: VehicleDims,
    x: &VehicleState,
    o: &VehicleState,
    p: &EllipsoidParams,
) -> (f64, f64) {
    let li = p.mu_x * (ego.length + obs.length);
    let wi = p.mu_y * (ego.width + obs.width);
    let q = (o.x2 - x.x2).tanh() * (x.x4 - o.x4);
    let d1 = li + p.omega1 * x.x3 + p.omega1 * o.x3;
    let d2 = wi + p.omega2 * (q + (q * q + p.eps_w).sqrt());
    (d1, d2)
}

pub fn obstacle_cost(
    x: &VehicleState,
    o: &VehicleState,
    ego: VehicleDims,
    obs: VehicleDims,
    p: &EllipsoidParams,
) -> f64 {
    let li = p.mu_x * (ego.length + obs.length);
    let wi = p.mu_y * (ego.width + obs.width);
    potential(x, o, li, wi, p, false).0
}

/// Obstacle potential with its gradient with respect to the ego state.
pub fn obstacle_cost_grad(
    x: &VehicleState,
    o: &VehicleState,
    ego: VehicleDims,
    obs: VehicleDims,
    p: &EllipsoidParams,
) -> (f64, [f64; 4]) {
    let li = p.mu_x * (ego.length + obs.length);
    let wi = p.mu_y * (ego.width + obs.width);
    potential(x, o, li, wi, p, true)
}

/// Integer power with the small exponents of the default shape unrolled.
#[inline(always)]
fn ipow(x: f64, n: i32) -> f64 {
    match n {
        0 => 1.0,
        1 => x,
        2 => x * x,
        3 => x * x * x,
        5 => {
            let y = x * x;
            y * y * x
        }
        _ => x.powi(n),
    }
}

/// `tanh` from a single `exp`; absolute error of a few ulp.
#[inline(always)]
fn fast_tanh(z: f64) -> f64 {
    let e = (-2.0 * z.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(z)
}

#[inline(always)]
fn potential(
    x: &VehicleState,
    o: &VehicleState,
    li: f64,
    wi: f64,
    p: &EllipsoidParams,
    want_grad: bool,
) -> (f64, [f64; 4]) {
    let delta = o.x1 - 0.5 * p.omega1 * (x.x3 - o.x3);
    let d1 = li + p.omega1 * (x.x3 + o.x3);
    let th = fast_tanh(o.x2 - x.x2);
    let rel_v = x.x4 - o.x4;
    let q = th * rel_v;
    let r = (q * q + p.eps_w).sqrt();
    let d2 = wi + p.omega2 * (q + r);

    let a = 2.0 * (x.x1 - delta) / d1;
    let b = 2.0 * (x.x2 - o.x2) / d2;
    let big_a = 2.0 * a;
    let big_b = 2.0 * b;

    let a_pm1 = ipow(a, p.p1 - 1);
    let b_pm1 = ipow(b, p.p2 - 1);
    let s1 = a_pm1 * a + b_pm1 * b;
    let saturated = s1 >= TANH_CLAMP;
    let t = if saturated { 1.0 } else { fast_tanh(s1) };
    let term1 = 1.0 - t;

    let ca_pm1 = ipow(big_a, p.p3 - 1);
    let cb_pm1 = ipow(big_b, p.p4 - 1);
    let s2 = ca_pm1 * big_a + cb_pm1 * big_b;
    let s2_pm1 = ipow(s2, p.p5 - 1);
    let term2 = 1.0 / (s2_pm1 * s2 + 1.0);
    let cost = term1 + term2;
    if !want_grad {
        return (cost, [0.0; 4]);
    }

    let dt1_ds1 = if saturated { 0.0 } else { -(1.0 - t * t) };
    let dt2_ds2 = -(p.p5 as f64) * s2_pm1 * term2 * term2;
    let dc_da = dt1_ds1 * p.p1 as f64 * a_pm1 + dt2_ds2 * p.p3 as f64 * ca_pm1 * 2.0;
    let dc_db = dt1_ds1 * p.p2 as f64 * b_pm1 + dt2_ds2 * p.p4 as f64 * cb_pm1 * 2.0;

    let da_dx1 = 2.0 / d1;
    let da_dx3 = p.omega1 / d1 * (1.0 - a);
    let dd2_dq = p.omega2 * (1.0 + q / r);
    let dq_dx2 = -(1.0 - th * th) * rel_v;
    let dq_dx4 = th;
    let db_dx2 = 2.0 / d2 - b / d2 * dd2_dq * dq_dx2;
    let db_dx4 = -b / d2 * dd2_dq * dq_dx4;

    (
        cost,
        [
            dc_da * da_dx1,
            dc_db * db_dx2,
            dc_da * da_dx3,
            dc_db * db_dx4,
        ],
    )
}

/// `exp(x)` for `x <= 0`, branch free so it vectorizes; relative error below 1e-15.
#[inline(always)]
fn exp_nonpos(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    const SHIFTER: f64 = 6_755_399_441_055_744.0; // 1.5 * 2^52
    let x = x.max(-708.0);
    let shifted = x * std::f64::consts::LOG2_E + SHIFTER;
    let kf = shifted - SHIFTER;
    let r = (x - kf * LN2_HI) - kf * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // the rounded exponent sits in the low mantissa bits of `shifted`
    let n = shifted.to_bits().wrapping_sub(SHIFTER.to_bits());
    let scale = f64::from_bits(n.wrapping_add(1023) << 52);
    p * scale
}

#[inline(always)]
fn tanh_lanes(z: f64) -> f64 {
    let e = exp_nonpos(-2.0 * z.abs());
    ((1.0 - e) / (1.0 + e)).copysign(z)
}

#[derive(Clone, Copy)]
struct Block {
    cost: [f64; LANES],
    grad: [[f64; LANES]; 4],
}

/// Default-shape potential on one block of obstacle lanes.
#[inline(always)]
fn potential_block<const GRAD: bool>(
    x: &VehicleState,
    p: &EllipsoidParams,
    o1: &[f64],
    o2: &[f64],
    o3: &[f64],
    o4: &[f64],
    li: &[f64],
    wi: &[f64],
    out: &mut Block,
) {
    let (o1, o2, o3, o4) = (&o1[..LANES], &o2[..LANES], &o3[..LANES], &o4[..LANES]);
    let (li, wi) = (&li[..LANES], &wi[..LANES]);
    let half_w1 = 0.5 * p.omega1;
    for j in 0..LANES {
        let delta = o1[j] - half_w1 * (x.x3 - o3[j]);
        let d1 = li[j] + p.omega1 * (x.x3 + o3[j]);
        let th = tanh_lanes(o2[j] - x.x2);
        let rel_v = x.x4 - o4[j];
        let q = th * rel_v;
        let r = (q * q + p.eps_w).sqrt();
        let d2 = wi[j] + p.omega2 * (q + r);
        let inv_d1 = 1.0 / d1;
        let inv_d2 = 1.0 / d2;

        let a = 2.0 * (x.x1 - delta) * inv_d1;
        let b = 2.0 * (x.x2 - o2[j]) * inv_d2;
        let a2 = a * a;
        let a5 = a2 * a2 * a;
        let s1 = a5 * a + b * b;
        let saturated = s1 >= TANH_CLAMP;
        let e = exp_nonpos(-2.0 * s1.min(TANH_CLAMP));
        let t = if saturated { 1.0 } else { (1.0 - e) / (1.0 + e) };
        let big_a = 2.0 * a;
        let big_b = 2.0 * b;
        let s2 = big_a * big_a + big_b * big_b;
        let term2 = 1.0 / (s2 * s2 + 1.0);
        out.cost[j] = (1.0 - t) + term2;
        if GRAD {
            let dt1 = if saturated { 0.0 } else { -(1.0 - t * t) };
            let dt2 = -2.0 * s2 * term2 * term2;
            let dc_da = dt1 * 6.0 * a5 + dt2 * 2.0 * big_a * 2.0;
            let dc_db = dt1 * 2.0 * b + dt2 * 2.0 * big_b * 2.0;
            let dd2_dq = p.omega2 * (1.0 + q / r);
            let dq_dx2 = -(1.0 - th * th) * rel_v;
            let b_over = b * inv_d2 * dd2_dq;
            out.grad[0][j] = dc_da * (2.0 * inv_d1);
            out.grad[1][j] = dc_db * (2.0 * inv_d2 - b_over * dq_dx2);
            out.grad[2][j] = dc_da * (p.omega1 * inv_d1 * (1.0 - a));
            out.grad[3][j] = dc_db * (-b_over * th);
        }
    }
}

#[inline(always)]
fn sum_blocks<const GRAD: bool>(
    t: &ObstacleTable,
    p: &EllipsoidParams,
    k: usize,
    x: &VehicleState,
) -> (f64, [f64; 4]) {
    let n = t.padded;
    let f = &t.fields[k * 4 * n..(k + 1) * 4 * n];
    let mut out = Block {
        cost: [0.0; LANES],
        grad: [[0.0; LANES]; 4],
    };
    let mut sum = 0.0;
    let mut g = [0.0; 4];
    for base in (0..n).step_by(LANES) {
        let end = base + LANES;
        potential_block::<GRAD>(
            x,
            p,
            &f[base..end],
            &f[n + base..n + end],
            &f[2 * n + base..2 * n + end],
            &f[3 * n + base..3 * n + end],
            &t.li[base..end],
            &t.wi[base..end],
            &mut out,
        );
        let live = (t.count - base).min(LANES);
        for j in 0..live {
            sum += out.cost[j];
            if GRAD {
                for i in 0..4 {
                    g[i] += out.grad[i][j];
                }
            }
        }
    }
    (sum, g)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn sum_avx2<const GRAD: bool>(
    t: &ObstacleTable,
    p: &EllipsoidParams,
    k: usize,
    x: &VehicleState,
) -> (f64, [f64; 4]) {
    sum_blocks::<GRAD>(t, p, k, x)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn sum_avx512<const GRAD: bool>(
    t: &ObstacleTable,
    p: &EllipsoidParams,
    k: usize,
    x: &VehicleState,
) -> (f64, [f64; 4]) {
    sum_blocks::<GRAD>(t, p, k, x)
}

pub fn coupling_cost(x3: f64, x4: f64, beta: f64) -> f64 {
    let gap = beta * x3 - x4.abs();
    if gap < 0.0 {
        gap * gap
    } else {
        0.0
    }
}

/// `(∂f_c/∂x3, ∂f_c/∂x4)`; the subgradient 0 is used for `sign(0)`.
pub fn coupling_grad(x3: f64, x4: f64, beta: f64) -> (f64, f64) {
    let gap = beta * x3 - x4.abs();
    if gap < 0.0 {
        let sign = if x4 > 0.0 {
            1.0
        } else if x4 < 0.0 {
            -1.0
        } else {
            0.0
        };
        (2.0 * gap * beta, -2.0 * gap * sign)
    } else {
        (0.0, 0.0)
    }
}

pub fn deviation_cost(u1_first: f64, u1_prev: f64) -> f64 {
    let d = u1_first - u1_prev;
    d * d
}

/// Obstacle lanes per block; a multiple of every SIMD width in use.
const LANES: usize = 8;

/// Obstacle predictions laid out per step as padded field arrays.
#[derive(Debug, Clone, PartialEq, Default)]
struct ObstacleTable {
    count: usize,
    padded: usize,
    steps: usize,
    li: Vec<f64>,
    wi: Vec<f64>,
    /// `[k][field][obstacle]` with fields `o1, o2, o3, o4`.
    fields: Vec<f64>,
}

impl ObstacleTable {
    fn new(ego: VehicleDims, obstacles: &[ObstaclePrediction], p: &EllipsoidParams) -> Self {
        let count = obstacles.len();
        let padded = count.div_ceil(LANES) * LANES;
        let steps = obstacles.iter().map(|o| o.traj.len()).min().unwrap_or(0);
        // padding lanes reuse a far, harmless obstacle and are never summed
        let li_of = |o: &ObstaclePrediction| p.mu_x * (ego.length + o.dims.length);
        let wi_of = |o: &ObstaclePrediction| p.mu_y * (ego.width + o.dims.width);
        let mut li = vec![1.0; padded];
        let mut wi = vec![1.0; padded];
        for (i, o) in obstacles.iter().enumerate() {
            li[i] = li_of(o);
            wi[i] = wi_of(o);
        }
        let mut fields = vec![0.0; steps * 4 * padded];
        for k in 0..steps {
            let block = &mut fields[k * 4 * padded..(k + 1) * 4 * padded];
            for i in count..padded {
                block[i] = 1e9;
            }
            for (i, o) in obstacles.iter().enumerate() {
                let s = &o.traj[k];
                block[i] = s.x1;
                block[padded + i] = s.x2;
                block[2 * padded + i] = s.x3;
                block[3 * padded + i] = s.x4;
            }
        }
        Self {
            count,
            padded,
            steps,
            li,
            wi,
            fields,
        }
    }
}

/// Everything needed to evaluate the trajectory cost of one ego vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub weights: Weights,
    pub beta: f64,
    pub targets: SpeedTargets,
    pub u1_prev: f64,
    ellipsoid: EllipsoidParams,
    ego: VehicleDims,
    obstacles: Vec<ObstaclePrediction>,
    table: ObstacleTable,
    default_shape: bool,
}

impl CostModel {
    pub fn new(
        weights: Weights,
        ellipsoid: EllipsoidParams,
        beta: f64,
        targets: SpeedTargets,
        u1_prev: f64,
        ego: VehicleDims,
        obstacles: Vec<ObstaclePrediction>,
    ) -> Self {
        let table = ObstacleTable::new(ego, &obstacles, &ellipsoid);
        let default_shape = (ellipsoid.p1, ellipsoid.p2, ellipsoid.p3, ellipsoid.p4, ellipsoid.p5) == (6, 2, 2, 2, 2);
        Self {
            weights,
            beta,
            targets,
            u1_prev,
            ellipsoid,
            ego,
            obstacles,
            table,
            default_shape,
        }
    }

    pub fn ellipsoid(&self) -> &EllipsoidParams {
        &self.ellipsoid
    }

    pub fn ego(&self) -> VehicleDims {
        self.ego
    }

    pub fn obstacles(&self) -> &[ObstaclePrediction] {
        &self.obstacles
    }

    /// Fails unless every obstacle trajectory covers `horizon` steps.
    pub fn check_horizon(&self, horizon: usize) -> Result<()> {
        for o in &self.obstacles {
            if o.traj.len() < horizon {
                return Err(Error::HorizonMismatch {
                    what: format!("obstacle {}", o.id),
                    expected: horizon,
                    found: o.traj.len(),
                });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn stage_cost(&self, k: usize, x: &VehicleState, u: &ControlInput) -> f64 {
        self.stage(k, x, u, false).0
    }

    /// Stage cost with `∂Φ/∂x(k)` and `∂Φ/∂u(k)`.
    #[inline]
    pub fn stage_cost_grad(
        &self,
        k: usize,
        x: &VehicleState,
        u: &ControlInput,
    ) -> (f64, [f64; 4], [f64; 2]) {
        self.stage(k, x, u, true)
    }

    #[inline(always)]
    fn stage(
        &self,
        k: usize,
        x: &VehicleState,
        u: &ControlInput,
        want_grad: bool,
    ) -> (f64, [f64; 4], [f64; 2]) {
        let w = &self.weights;
        let ev = x.x3 - self.targets.vd1;
        let elat = x.x4 - self.targets.vd2;
        let mut cost = w.w1 * u.u1 * u.u1 + w.w2 * u.u2 * u.u2 + w.w3 * ev * ev + w.w4 * elat * elat;
        let mut gx = [0.0, 0.0, 2.0 * w.w3 * ev, 2.0 * w.w4 * elat];
        let mut gu = [2.0 * w.w1 * u.u1, 2.0 * w.w2 * u.u2];

        if w.w5 != 0.0 {
            let (sum, g) = self.obstacle_sum(k, x, want_grad);
            cost += w.w5 * sum;
            if want_grad {
                for i in 0..4 {
                    gx[i] += w.w5 * g[i];
                }
            }
        }

        if w.w6 != 0.0 {
            cost += w.w6 * coupling_cost(x.x3, x.x4, self.beta);
            if want_grad {
                let (g3, g4) = coupling_grad(x.x3, x.x4, self.beta);
                gx[2] += w.w6 * g3;
                gx[3] += w.w6 * g4;
            }
        }

        if k == 0 && w.w7 != 0.0 {
            cost += w.w7 * deviation_cost(u.u1, self.u1_prev);
            gu[0] += 2.0 * w.w7 * (u.u1 - self.u1_prev);
        }
        (cost, gx, gu)
    }

    /// Summed potential over all obstacles at step `k`, accumulated in obstacle order.
    fn obstacle_sum(&self, k: usize, x: &VehicleState, want_grad: bool) -> (f64, [f64; 4]) {
        if self.table.count == 0 {
            return (0.0, [0.0; 4]);
        }
        if !self.default_shape {
            let mut sum = 0.0;
            let mut g = [0.0; 4];
            for (i, obs) in self.obstacles.iter().enumerate() {
                let (c, gc) = potential(x, &obs.traj[k], self.table.li[i], self.table.wi[i], &self.ellipsoid, want_grad);
                sum += c;
                for j in 0..4 {
                    g[j] += gc[j];
                }
            }
            return (sum, g);
        }
        assert!(k < self.table.steps, "stage {k} beyond the obstacle predictions");
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at run time
            return unsafe {
                if want_grad {
                    sum_avx512::<true>(&self.table, &self.ellipsoid, k, x)
                } else {
                    sum_avx512::<false>(&self.table, &self.ellipsoid, k, x)
                }
            };
        }
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at run time
            return unsafe {
                if want_grad {
                    sum_avx2::<true>(&self.table, &self.ellipsoid, k, x)
                } else {
                    sum_avx2::<false>(&self.table, &self.ellipsoid, k, x)
                }
            };
        }
        if want_grad {
            sum_blocks::<true>(&self.table, &self.ellipsoid, k, x)
        } else {
            sum_blocks::<false>(&self.table, &self.ellipsoid, k, x)
        }
    }

    pub fn total_cost(&self, plan: &Plan) -> Result<f64> {
        let k_len = plan.horizon();
        if plan.states.len() != k_len + 1 {
            return Err(Error::HorizonMismatch {
                what: "plan states".into(),
                expected: k_len + 1,
                found: plan.states.len(),
            });
        }
        self.check_horizon(k_len)?;
        Ok((0..k_len)
            .map(|k| self.stage_cost(k, &plan.states[k], &plan.controls[k]))
            .sum())
    }

    /// `(∂Φ/∂x(k), ∂Φ/∂u(k))` of the stage cost at step `k` of `plan`.
    pub fn stage_gradients(&self, k: usize, plan: &Plan) -> Result<([f64; 4], [f64; 2])> {
        self.check_horizon(plan.horizon())?;
        if k >= plan.horizon() {
            return Err(Error::HorizonMismatch {
                what: "stage index".into(),
                expected: k + 1,
                found: plan.horizon(),
            });
        }
        let (_, gx, gu) = self.stage_cost_grad(k, &plan.states[k], &plan.controls[k]);
        Ok((gx, gu))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::rollout;
    use approx::assert_abs_diff_eq;

    fn illustration_params() -> EllipsoidParams {
        EllipsoidParams {
            omega1: 0.35,
            ..EllipsoidParams::default()
        }
    }

    const CAR: VehicleDims = VehicleDims::new(4.25, 1.8);

    #[test]
    fn centre_examples() {
        assert_eq!(ellipsoid_center(30.0, 25.0, 25.0, 0.53), 30.0);
        assert_abs_diff_eq!(ellipsoid_center(30.0, 30.0, 25.0, 0.35), 29.125, epsilon = 1e-12);
        assert_abs_diff_eq!(ellipsoid_center(40.0, 30.0, 35.0, 0.35), 40.875, epsilon = 1e-12);
    }

    #[test]
    fn axis_examples() {
        let p = illustration_params();
        let x = VehicleState::new(10.0, 5.5, 30.0, 0.0);
        let o = VehicleState::new(30.0, 2.5, 25.0, 0.0);
        let (d1, d2) = axis_lengths(CAR, CAR, &x, &o, &p);
        assert_abs_diff_eq!(d1, 30.3, epsilon = 1e-12);
        assert_abs_diff_eq!(d2, 4.32 + 0.5 * 0.1f64.sqrt(), epsilon = 1e-12);

        // receding laterally: the smoothing offset shrinks towards W_i
        let x = VehicleState::new(10.0, 5.5, 30.0, 3.0);
        let o = VehicleState::new(30.0, 2.5, 25.0, -3.0);
        let (_, d2) = axis_lengths(CAR, CAR, &x, &o, &p);
        assert!(d2 > 4.32 && d2 < 4.33);
    }

    #[test]
    fn approaching_obstacle_widens_lateral_axis() {
        let p = illustration_params();
        let x = VehicleState::new(10.0, 5.5, 30.0, 0.75);
        let o1 = VehicleState::new(30.0, 2.5, 25.0, 0.0);
        let o2 = VehicleState::new(40.0, 7.5, 35.0, 0.0);
        let (_, w1) = axis_lengths(CAR, CAR, &x, &o1, &p);
        let (_, w2) = axis_lengths(CAR, CAR, &x, &o2, &p);
        assert!(w2 > w1);
    }

    #[test]
    fn cost_at_centre_is_two() {
        let p = EllipsoidParams::default();
        let o = VehicleState::new(50.0, 4.0, 20.0, 0.0);
        let x = VehicleState::new(50.0, 4.0, 20.0, 0.0);
        assert_eq!(obstacle_cost(&x, &o, CAR, CAR, &p), 2.0);
    }

    #[test]
    fn cost_vanishes_far_away() {
        let p = EllipsoidParams::default();
        let o = VehicleState::new(5000.0, 4.0, 20.0, 0.0);
        let x = VehicleState::new(0.0, 4.0, 20.0, 0.0);
        let c = obstacle_cost(&x, &o, CAR, CAR, &p);
        assert!(c > 0.0 && c < 1e-8);
    }

    #[test]
    fn cost_on_half_axis_matches_hand_evaluation() {
        let p = EllipsoidParams::default();
        let o = VehicleState::new(50.0, 4.0, 20.0, 0.0);
        let probe = VehicleState::new(0.0, 4.0, 20.0, 0.0);
        let (d1, _) = axis_lengths(CAR, CAR, &probe, &o, &p);
        let x = VehicleState::new(50.0 + 0.5 * d1, 4.0, 20.0, 0.0);
        // first ellipsoid: 1 − tanh(1⁶); second: 1/((2²)² + 1)
        let expected = (1.0 - 1f64.tanh()) + 1.0 / 17.0;
        assert_abs_diff_eq!(obstacle_cost(&x, &o, CAR, CAR, &p), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(1.0 - 1f64.tanh(), 0.23840584, epsilon = 1e-8);
    }

    #[test]
    fn coupling_examples() {
        assert_eq!(coupling_cost(30.0, 0.5, 0.03), 0.0);
        assert_abs_diff_eq!(coupling_cost(30.0, 1.5, 0.03), 0.36, epsilon = 1e-12);
        assert_eq!(coupling_cost(0.0, 0.0, 0.03), 0.0);
        let (_, g4) = coupling_grad(30.0, 1.5, 0.03);
        assert_abs_diff_eq!(g4, 1.2, epsilon = 1e-12);
        let (_, g4) = coupling_grad(30.0, -1.5, 0.03);
        assert_abs_diff_eq!(g4, -1.2, epsilon = 1e-12);
    }

    #[test]
    fn deviation_examples() {
        assert_abs_diff_eq!(deviation_cost(0.3, 0.1), 0.04, epsilon = 1e-15);
        assert_eq!(deviation_cost(0.2, 0.2), 0.0);
        assert_eq!(deviation_cost(-2.0, 0.5), 6.25);
    }

    fn model(weights: Weights, vd1: f64, obstacles: Vec<ObstaclePrediction>) -> CostModel {
        CostModel::new(
            weights,
            EllipsoidParams::default(),
            0.03,
            SpeedTargets { vd1, vd2: 0.0 },
            0.0,
            CAR,
            obstacles,
        )
    }

    #[test]
    fn cruising_costs_nothing() {
        let plan = rollout(
            VehicleState::new(0.0, 5.0, 30.0, 0.0),
            &[ControlInput::ZERO; 32],
            0.25,
        )
        .unwrap();
        let m = model(Weights::default(), 30.0, vec![]);
        assert_eq!(m.total_cost(&plan).unwrap(), 0.0);
        for k in 0..32 {
            let (gx, gu) = m.stage_gradients(k, &plan).unwrap();
            assert_eq!(gx, [0.0; 4]);
            assert_eq!(gu, [0.0; 2]);
        }
    }

    #[test]
    fn constant_acceleration_matches_resummation() {
        let dt = 0.25;
        let plan = rollout(
            VehicleState::new(0.0, 5.0, 30.0, 0.0),
            &[ControlInput::new(0.5, 0.0); 32],
            dt,
        )
        .unwrap();
        let w = Weights::default();
        let m = model(w, 30.0, vec![]);
        let mut expected = 32.0 * w.w1 * 0.25 + w.w7 * 0.25;
        for k in 0..32 {
            let drift = 0.5 * dt * k as f64;
            expected += w.w3 * drift * drift;
        }
        assert_abs_diff_eq!(m.total_cost(&plan).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn zero_weights_give_zero() {
        let plan = rollout(
            VehicleState::new(0.0, 5.0, 3.0, 1.0),
            &[ControlInput::new(0.4, -0.3); 8],
            0.25,
        )
        .unwrap();
        let obs = ObstaclePrediction {
            id: 1,
            dims: CAR,
            traj: vec![VehicleState::new(5.0, 5.0, 3.0, 0.0); 8],
        };
        assert_eq!(model(Weights::ZERO, 30.0, vec![obs]).total_cost(&plan).unwrap(), 0.0);
    }

    #[test]
    fn short_obstacle_trajectory_is_rejected() {
        let plan = rollout(VehicleState::default(), &[ControlInput::ZERO; 8], 0.25).unwrap();
        let obs = ObstaclePrediction {
            id: 7,
            dims: CAR,
            traj: vec![VehicleState::default(); 5],
        };
        let err = model(Weights::default(), 0.0, vec![obs]).total_cost(&plan);
        assert!(matches!(err, Err(Error::HorizonMismatch { found: 5, .. })));
    }

    #[test]
    fn block_kernel_matches_scalar_potential() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let p = EllipsoidParams::default();
        let n = 13;
        let obstacles: Vec<_> = (0..n)
            .map(|id| ObstaclePrediction {
                id,
                dims: VehicleDims::new(rng.random_range(3.0..6.0), rng.random_range(1.5..2.2)),
                traj: (0..4)
                    .map(|_| {
                        VehicleState::new(
                            rng.random_range(-60.0..60.0),
                            rng.random_range(1.0..9.0),
                            rng.random_range(0.0..35.0),
                            rng.random_range(-1.0..1.0),
                        )
                    })
                    .collect(),
            })
            .collect();
        let m = CostModel::new(
            Weights::default(),
            p,
            0.03,
            SpeedTargets { vd1: 30.0, vd2: 0.0 },
            0.0,
            CAR,
            obstacles.clone(),
        );
        for k in 0..4 {
            for _ in 0..50 {
                let x = VehicleState::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(1.0..9.0),
                    rng.random_range(0.0..35.0),
                    rng.random_range(-1.0..1.0),
                );
                let (c, g) = m.obstacle_sum(k, &x, true);
                let mut c_ref = 0.0;
                let mut g_ref = [0.0; 4];
                for o in &obstacles {
                    let (ci, gi) = obstacle_cost_grad(&x, &o.traj[k], CAR, o.dims, &p);
                    c_ref += ci;
                    for j in 0..4 {
                        g_ref[j] += gi[j];
                    }
                }
                assert_abs_diff_eq!(c, c_ref, epsilon = 1e-12 * (1.0 + c_ref.abs()));
                assert_eq!(m.obstacle_sum(k, &x, false).0, c);
                for j in 0..4 {
                    assert_abs_diff_eq!(g[j], g_ref[j], epsilon = 1e-11 * (1.0 + g_ref[j].abs()));
                }
            }
        }
    }

    #[test]
    fn validate_rejects_odd_exponent() {
        let p = EllipsoidParams {
            p2: 3,
            ..EllipsoidParams::default()
        };
        assert!(p.validate().is_err());
        assert!(EllipsoidParams::default().validate().is_ok());
    }
}
