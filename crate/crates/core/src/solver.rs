//! Feasible direction algorithm for the trajectory OCP.
//!
//! The states are eliminated through the dynamics, so the optimisation runs
//! over the `2K` control values only. Each iteration:
//!
//! 1. sweeps the co-states backwards from `λ(K) = 0`, which yields the
//!    reduced gradient `g(k) = f_uᵀ λ(k+1) + ∂Φ/∂u(k)`;
//! 2. forms a Polak-Ribière direction from the projected gradient;
//! 3. backtracks along it, projecting every candidate step by step into the
//!    box induced by the candidate's own state at that step.
//!
//! Because of the step-by-step projection every accepted iterate satisfies
//! the state equations and all (state-dependent) bounds, and the search can
//! stop at any time with a usable plan.

use serde::{Deserialize, Serialize};

use crate::bounds::{clamp, AccelLimits, BoundConfig};
use crate::clock::Stopwatch;
use crate::dynamics::{advance, ControlInput, Plan, VehicleState};
use crate::error::{Error, Result};
use crate::objective::CostModel;

/// Complete definition of one trajectory optimisation problem.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpSpec {
    pub horizon: usize,
    pub dt: f64,
    pub t0: f64,
    pub initial: VehicleState,
    pub cost: CostModel,
    pub bounds: BoundConfig,
}

impl OcpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::Empty("horizon"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::OutOfRange {
                name: "dt",
                value: self.dt,
                range: "(0, inf)".into(),
            });
        }
        if !self.initial.is_finite() {
            return Err(Error::NonFinite("initial state"));
        }
        if self.initial.x3 < 0.0 {
            return Err(Error::OutOfRange {
                name: "initial x3",
                value: self.initial.x3,
                range: "[0, inf)".into(),
            });
        }
        let c = &self.bounds.corridor;
        if !c.contains(self.initial.x2, 1e-9) {
            return Err(Error::OutsideCorridor {
                x2: self.initial.x2,
                right: c.x2_right,
                left: c.x2_left,
            });
        }
        if let Some(mb) = &self.bounds.moving_boundary {
            if mb.is_empty() {
                return Err(Error::Empty("moving boundary"));
            }
        }
        self.cost.check_horizon(self.horizon)
    }

    #[inline]
    pub fn limits(&self, k: usize, s: &VehicleState) -> AccelLimits {
        self.bounds.limits(k, s, self.dt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    /// Sup-norm tolerance on the projected reduced gradient.
    pub tol: f64,
    pub max_iterations: usize,
    /// Wall-clock budget in seconds. `None` keeps solves reproducible; a
    /// deserialized value is `None` unless the key is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_budget: Option<f64>,
    pub armijo_c: f64,
    pub alpha_min: f64,
    /// Largest control change (m/s²) of the very first trial step.
    pub first_step: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            max_iterations: 500,
            time_budget: Some(0.25),
            armijo_c: 1e-4,
            alpha_min: 1e-10,
            first_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    GradientTolerance,
    /// No step length down to `alpha_min` decreased the cost.
    Stationary,
    IterationCap,
    TimeBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_cost: f64,
    pub gradient_norm: f64,
    pub wall_time: f64,
    pub stop_reason: StopReason,
    pub cost_evaluations: usize,
    /// Steps at which an empty box had to be resolved in the returned plan.
    pub empty_box_steps: usize,
    pub history: Vec<f64>,
}

/// Buffers for one solve. States always match controls.
#[derive(Debug, Clone, Default)]
pub struct SolverWorkspace {
    pub controls: Vec<ControlInput>,
    pub states: Vec<VehicleState>,
    pub limits: Vec<AccelLimits>,
    pub costates: Vec<[f64; 4]>,
    /// Reduced gradient, flattened as `[g1(0), g2(0), g1(1), ...]`.
    pub grad: Vec<f64>,
    pub prev_grad: Vec<f64>,
    pub direction: Vec<f64>,
    pub cost: f64,
    pub iteration: usize,
    pub history: Vec<f64>,
    stage_gu: Vec<[f64; 2]>,
    cand_controls: Vec<ControlInput>,
    cand_states: Vec<VehicleState>,
    cand_limits: Vec<AccelLimits>,
    stash_controls: Vec<ControlInput>,
    stash_states: Vec<VehicleState>,
    stash_limits: Vec<AccelLimits>,
    evaluations: usize,
}

impl SolverWorkspace {
    pub fn new(horizon: usize) -> Self {
        let mut ws = Self::default();
        ws.resize(horizon);
        ws
    }

    fn resize(&mut self, k: usize) {
        self.controls.resize(k, ControlInput::ZERO);
        self.states.resize(k + 1, VehicleState::default());
        self.limits.resize(k, zero_limits());
        self.costates.resize(k + 1, [0.0; 4]);
        self.grad.resize(2 * k, 0.0);
        self.prev_grad.resize(2 * k, 0.0);
        self.direction.resize(2 * k, 0.0);
        self.stage_gu.resize(k, [0.0; 2]);
        self.cand_controls.resize(k, ControlInput::ZERO);
        self.cand_states.resize(k + 1, VehicleState::default());
        self.cand_limits.resize(k, zero_limits());
    }

    /// Projects `guess` into the feasible set and makes it the current iterate.
    pub fn load(&mut self, spec: &OcpSpec, guess: &[ControlInput]) -> Result<()> {
        let k = spec.horizon;
        self.resize(k);
        self.iteration = 0;
        self.history.clear();
        self.evaluations = 0;
        for (i, slot) in self.controls.iter_mut().enumerate() {
            *slot = guess.get(i).copied().unwrap_or(ControlInput::ZERO);
            if !slot.is_finite() {
                return Err(Error::NonFinite("initial guess"));
            }
        }
        self.direction.iter_mut().for_each(|d| *d = 0.0);
        let (cost, _) = self.project_candidate(spec, 0.0);
        self.accept_candidate(cost);
        if !cost.is_finite() {
            return Err(Error::NonFinite("cost at initial guess"));
        }
        Ok(())
    }

    /// Evaluates `controls + alpha * direction` with step-by-step projection
    /// into the candidate buffers. Returns the cost and the number of steps
    /// with an empty box.
    fn project_candidate(&mut self, spec: &OcpSpec, alpha: f64) -> (f64, usize) {
        self.evaluations += 1;
        let dt = spec.dt;
        let mut x = spec.initial;
        self.cand_states[0] = x;
        let mut cost = 0.0;
        let mut empty = 0;
        for k in 0..spec.horizon {
            let lim = spec.limits(k, &x);
            let base = self.controls[k];
            let trial = ControlInput::new(
                base.u1 + alpha * self.direction[2 * k],
                base.u2 + alpha * self.direction[2 * k + 1],
            );
            let (u, flags) = clamp(trial, &lim);
            if flags.any() {
                empty += 1;
            }
            cost += spec.cost.stage_cost(k, &x, &u);
            self.cand_controls[k] = u;
            self.cand_limits[k] = lim;
            x = advance(&x, &u, dt);
            self.cand_states[k + 1] = x;
        }
        (cost, empty)
    }

    /// First-order change of the cost along the candidate displacement.
    fn candidate_slope(&self) -> f64 {
        let mut slope = 0.0;
        for k in 0..self.controls.len() {
            slope += self.grad[2 * k] * (self.cand_controls[k].u1 - self.controls[k].u1)
                + self.grad[2 * k + 1] * (self.cand_controls[k].u2 - self.controls[k].u2);
        }
        slope
    }

    fn stash_candidate(&mut self) {
        self.stash_controls.clone_from(&self.cand_controls);
        self.stash_states.clone_from(&self.cand_states);
        self.stash_limits.clone_from(&self.cand_limits);
    }

    fn restore_candidate(&mut self) {
        std::mem::swap(&mut self.stash_controls, &mut self.cand_controls);
        std::mem::swap(&mut self.stash_states, &mut self.cand_states);
        std::mem::swap(&mut self.stash_limits, &mut self.cand_limits);
    }

    fn accept_candidate(&mut self, cost: f64) {
        std::mem::swap(&mut self.controls, &mut self.cand_controls);
        std::mem::swap(&mut self.states, &mut self.cand_states);
        std::mem::swap(&mut self.limits, &mut self.cand_limits);
        self.cost = cost;
        self.history.push(cost);
    }

    pub fn plan(&self, t0: f64, dt: f64) -> Plan {
        Plan::from_parts(t0, dt, self.controls.clone(), self.states.clone())
    }
}

fn zero_limits() -> AccelLimits {
    AccelLimits {
        u_min1: 0.0,
        u_max1: 0.0,
        u_min2: 0.0,
        u_max2: 0.0,
    }
}

/// Backward co-state sweep with `λ(K) = 0`.
///
/// Also caches `∂Φ/∂u(k)` so that [`reduced_gradient`] is a cheap pass.
pub fn costate_sweep(ws: &mut SolverWorkspace, spec: &OcpSpec) -> Vec<[f64; 4]> {
    sweep(ws, spec);
    ws.costates.clone()
}

/// `g(k) = f_uᵀ λ(k+1) + ∂Φ/∂u(k)`; requires a preceding [`costate_sweep`].
pub fn reduced_gradient(ws: &mut SolverWorkspace, spec: &OcpSpec) -> Vec<f64> {
    let dt = spec.dt;
    let h = 0.5 * dt * dt;
    for k in 0..spec.horizon {
        let l = &ws.costates[k + 1];
        ws.grad[2 * k] = h * l[0] + dt * l[2] + ws.stage_gu[k][0];
        ws.grad[2 * k + 1] = h * l[1] + dt * l[3] + ws.stage_gu[k][1];
    }
    ws.grad.clone()
}

#[inline]
fn sweep(ws: &mut SolverWorkspace, spec: &OcpSpec) {
    let dt = spec.dt;
    let h = 0.5 * dt * dt;
    let k_len = spec.horizon;
    ws.costates[k_len] = [0.0; 4];
    for k in (0..k_len).rev() {
        let (_, gx, gu) = spec.cost.stage_cost_grad(k, &ws.states[k], &ws.controls[k]);
        let next = ws.costates[k + 1];
        ws.grad[2 * k] = h * next[0] + dt * next[2] + gu[0];
        ws.grad[2 * k + 1] = h * next[1] + dt * next[3] + gu[1];
        ws.stage_gu[k] = gu;
        ws.costates[k] = [
            gx[0] + next[0],
            gx[1] + next[1],
            gx[2] + dt * next[0] + next[2],
            gx[3] + dt * next[1] + next[3],
        ];
    }
}

/// Polak-Ribière direction `d = −g + β d_prev`, `β = max(0, ⟨g, g − g_prev⟩ / ⟨g_prev, g_prev⟩)`.
///
/// Falls back to steepest descent on restart, on a zero previous gradient,
/// or when the conjugated direction is not a descent direction.
pub fn search_direction(g: &[f64], g_prev: &[f64], d_prev: &[f64], restart: bool) -> Vec<f64> {
    let mut d = vec![0.0; g.len()];
    direction_into(&mut d, g, g_prev, d_prev, restart);
    d
}

/// In-place form of [`search_direction`]; returns `true` if conjugation was used.
fn direction_into(d: &mut [f64], g: &[f64], g_prev: &[f64], d_prev: &[f64], restart: bool) -> bool {
    let mut beta = 0.0;
    if !restart {
        let denom: f64 = g_prev.iter().map(|v| v * v).sum();
        if denom > 0.0 {
            let num: f64 = g.iter().zip(g_prev).map(|(a, b)| a * (a - b)).sum();
            beta = (num / denom).max(0.0);
        }
    }
    let mut slope = 0.0;
    for i in 0..g.len() {
        d[i] = -g[i] + beta * d_prev[i];
        slope += d[i] * g[i];
    }
    if beta > 0.0 && slope >= 0.0 {
        for i in 0..g.len() {
            d[i] = -g[i];
        }
        return false;
    }
    beta > 0.0
}

/// Outcome of one projected backtracking search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    pub alpha: f64,
    pub cost: f64,
    pub accepted: bool,
}

/// Armijo backtracking along `ws.direction` with step-by-step projection.
///
/// On success the workspace holds the new iterate.
pub fn projected_line_search(
    ws: &mut SolverWorkspace,
    spec: &OcpSpec,
    alpha0: f64,
    settings: &SolverSettings,
) -> LineSearchResult {
    let base_cost = ws.cost;
    let armijo = |cost: f64, slope: f64| slope < 0.0 && cost < base_cost && cost <= base_cost + settings.armijo_c * slope;
    let mut alpha = alpha0;
    let mut first = true;
    while alpha >= settings.alpha_min {
        let (cost, _) = ws.project_candidate(spec, alpha);
        let slope = ws.candidate_slope();
        if armijo(cost, slope) {
            // one interpolation step towards the minimiser of the quadratic
            // through the base point, its slope and the accepted trial
            let curv = cost - base_cost - slope;
            if first && curv > 0.0 {
                let t = (-slope / (2.0 * curv)).clamp(0.1, 10.0);
                if !(0.8..=1.25).contains(&t) {
                    ws.stash_candidate();
                    let (cost_q, _) = ws.project_candidate(spec, alpha * t);
                    let slope_q = ws.candidate_slope();
                    if armijo(cost_q, slope_q) && cost_q < cost {
                        ws.accept_candidate(cost_q);
                        return LineSearchResult {
                            alpha: alpha * t,
                            cost: cost_q,
                            accepted: true,
                        };
                    }
                    ws.restore_candidate();
                }
            }
            ws.accept_candidate(cost);
            return LineSearchResult {
                alpha,
                cost,
                accepted: true,
            };
        }
        // first backtrack from the quadratic model, halving afterwards
        let curv = cost - base_cost - slope;
        alpha *= if first && slope < 0.0 && curv > 0.0 && cost.is_finite() {
            (-slope / (2.0 * curv)).clamp(0.1, 0.5)
        } else {
            0.5
        };
        first = false;
    }
    LineSearchResult {
        alpha: 0.0,
        cost: base_cost,
        accepted: false,
    }
}

/// Controls pinned at a bound with the gradient pointing outwards.
#[inline]
fn pinned(u: f64, lo: f64, hi: f64, g: f64) -> bool {
    let tol = 1e-10 * (1.0 + u.abs());
    (g > 0.0 && u <= lo + tol) || (g < 0.0 && u >= hi - tol)
}

/// Zeroes pinned components of `ws.grad` into `out`, returns the sup norm
/// and the active-set signature.
fn project_gradient(ws: &SolverWorkspace, out: &mut [f64], active: &mut [bool]) -> f64 {
    let mut norm: f64 = 0.0;
    for k in 0..ws.controls.len() {
        let lim = &ws.limits[k];
        let u = ws.controls[k];
        let g1 = ws.grad[2 * k];
        let g2 = ws.grad[2 * k + 1];
        let p1 = pinned(u.u1, lim.u_min1, lim.u_max1, g1);
        let p2 = pinned(u.u2, lim.u_min2, lim.u_max2, g2);
        active[2 * k] = p1;
        active[2 * k + 1] = p2;
        out[2 * k] = if p1 { 0.0 } else { g1 };
        out[2 * k + 1] = if p2 { 0.0 } else { g2 };
        norm = norm.max(out[2 * k].abs()).max(out[2 * k + 1].abs());
    }
    norm
}

/// View of an accepted iterate, handed to solve observers.
pub struct Iterate<'a> {
    pub iteration: usize,
    pub cost: f64,
    pub controls: &'a [ControlInput],
    pub states: &'a [VehicleState],
    pub limits: &'a [AccelLimits],
}

pub fn solve(
    spec: &OcpSpec,
    guess: &[ControlInput],
    settings: &SolverSettings,
) -> Result<(Plan, SolverReport)> {
    solve_observed(spec, guess, settings, |_| {})
}

/// [`solve`] calling `observer` on the projected initial guess and after
/// every accepted iteration.
pub fn solve_observed<F>(
    spec: &OcpSpec,
    guess: &[ControlInput],
    settings: &SolverSettings,
    mut observer: F,
) -> Result<(Plan, SolverReport)>
where
    F: FnMut(&Iterate<'_>),
{
    spec.validate()?;
    let clock = Stopwatch::start();
    let mut ws = SolverWorkspace::new(spec.horizon);
    ws.load(spec, guess)?;
    observer(&Iterate {
        iteration: 0,
        cost: ws.cost,
        controls: &ws.controls,
        states: &ws.states,
        limits: &ws.limits,
    });

    let n = 2 * spec.horizon;
    let mut pg = vec![0.0; n];
    let mut pg_prev = vec![0.0; n];
    let mut active = vec![false; n];
    let mut active_prev = vec![false; n];
    let mut d = vec![0.0; n];
    let mut alpha_prev: Option<f64> = None;
    let mut slope_prev = 0.0;
    let mut grad_norm;
    let stop_reason;

    loop {
        sweep(&mut ws, spec);
        grad_norm = project_gradient(&ws, &mut pg, &mut active);
        if grad_norm < settings.tol {
            stop_reason = StopReason::GradientTolerance;
            break;
        }
        if ws.iteration >= settings.max_iterations {
            stop_reason = StopReason::IterationCap;
            break;
        }
        if let Some(budget) = settings.time_budget {
            if clock.elapsed() >= budget {
                stop_reason = StopReason::TimeBudget;
                break;
            }
        }

        let restart = ws.iteration == 0 || active != active_prev || ws.iteration % n == 0;
        let prev_dir = std::mem::take(&mut ws.direction);
        direction_into(&mut d, &pg, &pg_prev, &prev_dir, restart);
        for (i, v) in d.iter_mut().enumerate() {
            if active[i] {
                *v = 0.0;
            }
        }
        ws.direction = prev_dir;
        ws.direction.copy_from_slice(&d);

        let slope: f64 = d.iter().zip(&ws.grad).map(|(a, b)| a * b).sum();
        let d_max = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let alpha0 = match alpha_prev {
            Some(a) if slope < 0.0 => (a * slope_prev / slope).clamp(0.1 * a, 10.0 * a) * 2.0,
            _ => settings.first_step / d_max.max(f64::MIN_POSITIVE),
        };

        let ls = projected_line_search(&mut ws, spec, alpha0, settings);
        if !ls.accepted {
            stop_reason = StopReason::Stationary;
            break;
        }
        ws.iteration += 1;
        alpha_prev = Some(ls.alpha);
        slope_prev = slope;
        pg_prev.copy_from_slice(&pg);
        active_prev.copy_from_slice(&active);
        observer(&Iterate {
            iteration: ws.iteration,
            cost: ws.cost,
            controls: &ws.controls,
            states: &ws.states,
            limits: &ws.limits,
        });
    }

    let empty_box_steps = ws
        .controls
        .iter()
        .zip(&ws.limits)
        .filter(|(_, l)| !l.is_well_ordered())
        .count();
    let report = SolverReport {
        converged: matches!(
            stop_reason,
            StopReason::GradientTolerance | StopReason::Stationary
        ),
        iterations: ws.iteration,
        final_cost: ws.cost,
        gradient_norm: grad_norm,
        wall_time: clock.elapsed(),
        stop_reason,
        cost_evaluations: ws.evaluations,
        empty_box_steps,
        history: ws.history.clone(),
    };
    Ok((ws.plan(spec.t0, spec.dt), report))
}
