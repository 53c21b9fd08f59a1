//! Event-triggered receding-horizon planning for one vehicle.
//!
//! A vehicle replans when half of its current plan has been applied, when
//! an obstacle drifts away from the trajectory that was assumed for it, or
//! when a new obstacle enters its interaction zone. Obstacle trajectories
//! come from the broadcast board and are completed with zero accelerations.
//! Every optimised plan is screened by two collision detectors; a detection
//! triggers a second solve with emergency bounds.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::bounds::{BoundConfig, GainSet, LateralCorridor, MovingBoundary};
use crate::dynamics::{ControlInput, Plan, VehicleState};
use crate::error::{Error, Result};
use crate::objective::{CostModel, EllipsoidParams, ObstaclePrediction, SpeedTargets, VehicleDims, Weights};
use crate::solver::{solve, OcpSpec, SolverReport, SolverSettings};

/// How the detectors combine the longitudinal and lateral windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapRule {
    /// Each window is entered at some step, not necessarily the same one.
    AnyStep,
    /// Both windows are entered at one common step.
    #[default]
    SameStep,
}

/// Planner parameters shared by every vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    pub dt: f64,
    pub weights: Weights,
    pub ellipsoid: EllipsoidParams,
    pub beta: f64,
    pub u_max1: f64,
    pub u_min1: f64,
    pub u_min1_emergency: f64,
    pub k_long1: f64,
    pub k_lat1: f64,
    /// Lateral gain for the virtual emergency corridor.
    pub emergency_lateral_k1: f64,
    pub deviation_long: f64,
    pub deviation_lat: f64,
    pub zone_min_length: f64,
    pub v_incr1: f64,
    pub v_incr2: f64,
    pub d_bar: f64,
    /// Alignment margin ε of the collision detectors (m).
    pub collision_eps: f64,
    pub overlap_rule: OverlapRule,
    /// Half width of the virtual lateral emergency corridor (m).
    pub emergency_corridor: f64,
    /// Extra distance kept behind the detector margin when following (m).
    pub emergency_follow_gap: f64,
    /// Taken from the scenario when planning inside a simulation.
    #[serde(skip)]
    pub road_width: f64,
    /// Abort when an emergency plan still fails the detectors; otherwise the
    /// plan is used and the failure counted.
    pub emergency_failure_fatal: bool,
    pub solver: SolverSettings,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 32,
            dt: 0.25,
            weights: Weights::default(),
            ellipsoid: EllipsoidParams::default(),
            beta: 0.03,
            u_max1: 0.5,
            u_min1: -2.0,
            u_min1_emergency: -4.0,
            k_long1: 1.0,
            k_lat1: 1.0,
            emergency_lateral_k1: 16.0,
            deviation_long: 0.2,
            deviation_lat: 0.1,
            zone_min_length: 100.0,
            v_incr1: 5.0,
            v_incr2: 2.0,
            d_bar: 150.0,
            collision_eps: 0.2,
            overlap_rule: OverlapRule::SameStep,
            emergency_corridor: 0.15,
            emergency_follow_gap: 1.0,
            road_width: 10.2,
            emergency_failure_fatal: false,
            solver: SolverSettings {
                time_budget: None,
                ..SolverSettings::default()
            },
        }
    }
}

impl MpcConfig {
    /// Steps applied before a scheduled replan.
    pub fn application_steps(&self) -> usize {
        (self.horizon / 2).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveSpeedConfig {
    pub v_des1: f64,
    pub v_incr1: f64,
    pub v_incr2: f64,
    pub d_bar: f64,
}

pub fn adaptive_desired_speed(x3_0: f64, d_d: f64, d_v: f64, cfg: &AdaptiveSpeedConfig) -> f64 {
    let base = (x3_0 + cfg.v_incr1).min(cfg.v_des1);
    if d_d <= cfg.d_bar {
        base
    } else {
        base.min(d_v + cfg.v_incr2)
    }
}

/// Appends zero-acceleration samples until `len` samples exist.
pub fn extrapolate_obstacle(partial: &[VehicleState], len: usize, dt: f64) -> Result<Vec<VehicleState>> {
    let Some(&last) = partial.last() else {
        return Err(Error::Empty("obstacle trajectory"));
    };
    let mut traj = partial.to_vec();
    let mut s = last;
    while traj.len() < len {
        s.x1 += dt * s.x3;
        s.x2 += dt * s.x4;
        traj.push(s);
    }
    Ok(traj)
}

/// Latest plan a vehicle has published.
#[derive(Debug, Clone, PartialEq)]
pub struct Broadcast {
    pub start_step: u64,
    pub states: Vec<VehicleState>,
}

#[derive(Debug, Clone)]
pub struct VehicleView {
    pub id: usize,
    pub dims: VehicleDims,
    pub state: VehicleState,
    pub broadcast: Option<Arc<Broadcast>>,
}

/// Immutable view of all vehicles at one step boundary. `vehicles[i].id == i`.
#[derive(Debug, Clone)]
pub struct WorldSnapshot {
    pub step: u64,
    pub road_length: f64,
    pub vehicles: Vec<VehicleView>,
}

impl WorldSnapshot {
    /// Signed longitudinal offset of `to` relative to `from` on the ring,
    /// in `[-L/2, L/2)`.
    pub fn ring_offset(&self, from: f64, to: f64) -> f64 {
        ring_offset(from, to, self.road_length)
    }
}

pub fn ring_offset(from: f64, to: f64, road_length: f64) -> f64 {
    let d = to - from;
    if !road_length.is_finite() {
        return d;
    }
    let w = (d + 0.5 * road_length).rem_euclid(road_length) - 0.5 * road_length;
    w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionZone {
    pub upstream: f64,
    pub downstream: f64,
    /// Sorted obstacle ids.
    pub members: Vec<usize>,
}

impl InteractionZone {
    pub fn contains(&self, offset: f64) -> bool {
        offset >= -self.upstream && offset <= self.downstream
    }

    pub fn is_member(&self, id: usize) -> bool {
        self.members.binary_search(&id).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CollisionKind {
    Longitudinal,
    Lateral,
}

impl CollisionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CollisionKind::Longitudinal => "longitudinal",
            CollisionKind::Lateral => "lateral",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub kind: CollisionKind,
    pub obstacle: usize,
    pub first_step: usize,
    /// Smallest `|Δx1| − threshold` over the horizon; negative means overlap.
    pub long_margin: f64,
    /// Smallest `|Δx2| − threshold` over the horizon; negative means overlap.
    pub lat_margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Longitudinal,
    Lateral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TriggerKind {
    ApplicationPeriodElapsed,
    ObstacleDeviation,
    NewObstacleInZone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    pub kind: TriggerKind,
    pub obstacle: Option<usize>,
    pub step: u64,
    pub deviation: Option<(Axis, f64)>,
}

/// A plan in execution.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanRecord {
    pub plan: Plan,
    pub plan_id: u64,
    pub start_step: u64,
    pub application_horizon: usize,
    pub applied_through: usize,
    pub snapshot_id: u64,
    /// Obstacle trajectories assumed by this plan, in the obstacles' own
    /// coordinates, one sample per step from `start_step`.
    pub predictions: Vec<(usize, Vec<VehicleState>)>,
    pub zone: InteractionZone,
    pub emergency: Option<CollisionKind>,
    /// Detection on the first solve that led to the emergency plan.
    pub detection: Option<CollisionReport>,
    pub vd1: f64,
}

impl PlanRecord {
    pub fn next_control(&self) -> ControlInput {
        self.plan.controls[self.applied_through]
    }

    /// Warm start: the unused tail followed by zero accelerations.
    pub fn warm_start(&self, horizon: usize) -> Vec<ControlInput> {
        let mut guess: Vec<ControlInput> = self.plan.controls[self.applied_through..]
            .iter()
            .copied()
            .take(horizon)
            .collect();
        guess.resize(horizon, ControlInput::ZERO);
        guess
    }
}

/// Ego-side inputs of one planning decision.
#[derive(Debug, Clone, Copy)]
pub struct EgoView<'a> {
    pub id: usize,
    pub dims: VehicleDims,
    pub state: VehicleState,
    pub v_des1: f64,
    pub step: u64,
    pub u1_prev: f64,
    pub previous: Option<&'a PlanRecord>,
}

/// Result of a planning decision.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub record: PlanRecord,
    /// Detection on the first solve, if any.
    pub detection: Option<CollisionReport>,
    /// Failed recheck of the emergency plan when failures are not fatal.
    pub emergency_failure: Option<Error>,
    pub reports: Vec<SolverReport>,
}

fn longitudinal_threshold(ego: VehicleDims, obs: VehicleDims, extra: f64) -> f64 {
    0.5 * (ego.length + obs.length) + extra
}

fn lateral_threshold(ego: VehicleDims, obs: VehicleDims, extra: f64) -> f64 {
    0.5 * (ego.width + obs.width) + extra
}

/// Longitudinal check: ego starts behind, and somewhere on the horizon the
/// length-plus-emergency-gap window and the width window are entered.
pub fn detect_longitudinal_collision(
    ego: &Plan,
    ego_dims: VehicleDims,
    obs: &ObstaclePrediction,
    omega1: f64,
    eps: f64,
    rule: OverlapRule,
) -> Option<CollisionReport> {
    let k_len = ego.horizon().min(obs.traj.len());
    if k_len == 0 || ego.states[0].x1 >= obs.traj[0].x1 {
        return None;
    }
    let long_thr = longitudinal_threshold(ego_dims, obs.dims, 0.5 * omega1 * ego.states[0].x3);
    let lat_thr = lateral_threshold(ego_dims, obs.dims, eps);
    overlap_report(ego, obs, k_len, long_thr, lat_thr, CollisionKind::Longitudinal, rule)
}

/// Lateral check: vehicles longitudinally aligned at the start, and both
/// windows are entered somewhere on the horizon.
pub fn detect_lateral_collision(
    ego: &Plan,
    ego_dims: VehicleDims,
    obs: &ObstaclePrediction,
    eps: f64,
    rule: OverlapRule,
) -> Option<CollisionReport> {
    let k_len = ego.horizon().min(obs.traj.len());
    if k_len == 0 {
        return None;
    }
    let long_thr = longitudinal_threshold(ego_dims, obs.dims, eps);
    let lat_thr = lateral_threshold(ego_dims, obs.dims, eps);
    if (ego.states[0].x1 - obs.traj[0].x1).abs() >= long_thr {
        return None;
    }
    overlap_report(ego, obs, k_len, long_thr, lat_thr, CollisionKind::Lateral, rule)
}

fn overlap_report(
    ego: &Plan,
    obs: &ObstaclePrediction,
    k_len: usize,
    long_thr: f64,
    lat_thr: f64,
    kind: CollisionKind,
    rule: OverlapRule,
) -> Option<CollisionReport> {
    let mut long_margin = f64::INFINITY;
    let mut lat_margin = f64::INFINITY;
    let mut first_long = None;
    let mut first_lat = None;
    let mut first_both = None;
    for k in 0..k_len {
        let x = &ego.states[k];
        let o = &obs.traj[k];
        let ml = (x.x1 - o.x1).abs() - long_thr;
        let mw = (x.x2 - o.x2).abs() - lat_thr;
        long_margin = long_margin.min(ml);
        lat_margin = lat_margin.min(mw);
        if ml < 0.0 && first_long.is_none() {
            first_long = Some(k);
        }
        if mw < 0.0 && first_lat.is_none() {
            first_lat = Some(k);
        }
        if ml < 0.0 && mw < 0.0 && first_both.is_none() {
            first_both = Some(k);
        }
    }
    let (Some(kl), Some(kw)) = (first_long, first_lat) else {
        return None;
    };
    if rule == OverlapRule::SameStep && first_both.is_none() {
        return None;
    }
    Some(CollisionReport {
        kind,
        obstacle: obs.id,
        first_step: first_both.unwrap_or(kl.max(kw)),
        long_margin,
        lat_margin,
    })
}

/// Both detectors; a lateral detection takes precedence.
pub fn detect_collision(
    ego: &Plan,
    ego_dims: VehicleDims,
    obs: &ObstaclePrediction,
    omega1: f64,
    eps: f64,
    rule: OverlapRule,
) -> Option<CollisionReport> {
    detect_lateral_collision(ego, ego_dims, obs, eps, rule)
        .or_else(|| detect_longitudinal_collision(ego, ego_dims, obs, omega1, eps, rule))
}

/// Planner for all vehicles of one scenario.
#[derive(Debug, Clone)]
pub struct Planner {
    pub cfg: MpcConfig,
    gains: GainSet,
    emergency_lateral: GainSet,
}

impl Planner {
    pub fn new(cfg: MpcConfig) -> Result<Self> {
        let gains = GainSet::designed(cfg.k_long1, cfg.k_lat1, cfg.dt)?;
        let emergency_lateral = GainSet::designed(cfg.k_long1, cfg.emergency_lateral_k1, cfg.dt)?;
        cfg.ellipsoid.validate()?;
        Ok(Self {
            cfg,
            gains,
            emergency_lateral,
        })
    }

    pub fn gains(&self) -> GainSet {
        self.gains
    }

    pub fn road_corridor(&self, dims: VehicleDims) -> LateralCorridor {
        LateralCorridor::road(self.cfg.road_width, dims.width)
    }

    fn zone_length(&self, x3_0: f64, v_des1: f64) -> f64 {
        let vd = (x3_0 + self.cfg.v_incr1).min(v_des1);
        (vd * self.cfg.horizon as f64 * self.cfg.dt).max(self.cfg.zone_min_length)
    }

    /// Interaction zone around the ego, with sorted member ids.
    pub fn interaction_zone(&self, ego: &EgoView<'_>, world: &WorldSnapshot) -> InteractionZone {
        let len = self.zone_length(ego.state.x3, ego.v_des1);
        let mut zone = InteractionZone {
            upstream: len,
            downstream: len,
            members: Vec::new(),
        };
        zone.members = members_of(&zone, ego, world);
        zone
    }

    pub fn detect_triggers(&self, ego: &EgoView<'_>, world: &WorldSnapshot) -> Vec<TriggerEvent> {
        let mut events = Vec::new();
        let Some(record) = ego.previous else {
            return events;
        };
        let step = world.step;
        if record.applied_through >= record.application_horizon {
            events.push(TriggerEvent {
                kind: TriggerKind::ApplicationPeriodElapsed,
                obstacle: None,
                step,
                deviation: None,
            });
        }
        let j = (step - record.start_step) as usize;
        for (id, traj) in &record.predictions {
            let Some(predicted) = traj.get(j) else {
                continue;
            };
            let actual = &world.vehicles[*id].state;
            let dx = (actual.x1 - predicted.x1).abs();
            let dy = (actual.x2 - predicted.x2).abs();
            let deviation = if dx > self.cfg.deviation_long {
                Some((Axis::Longitudinal, dx))
            } else if dy > self.cfg.deviation_lat {
                Some((Axis::Lateral, dy))
            } else {
                None
            };
            if deviation.is_some() {
                events.push(TriggerEvent {
                    kind: TriggerKind::ObstacleDeviation,
                    obstacle: Some(*id),
                    step,
                    deviation,
                });
            }
        }
        for v in &world.vehicles {
            if v.id == ego.id || record.zone.is_member(v.id) {
                continue;
            }
            if record.zone.contains(world.ring_offset(ego.state.x1, v.state.x1)) {
                events.push(TriggerEvent {
                    kind: TriggerKind::NewObstacleInZone,
                    obstacle: Some(v.id),
                    step,
                    deviation: None,
                });
            }
        }
        events
    }

    /// Predicted trajectory of `v` from `step`, `len` samples, own coordinates.
    pub fn predict(&self, v: &VehicleView, step: u64, len: usize) -> Vec<VehicleState> {
        let mut traj = Vec::with_capacity(len);
        traj.push(v.state);
        if let Some(b) = &v.broadcast {
            let j = step.saturating_sub(b.start_step) as usize;
            if j < b.states.len() {
                traj.extend(b.states[j + 1..].iter().take(len - 1));
            }
        }
        extrapolate_obstacle(&traj, len, self.cfg.dt).expect("non-empty trajectory")
    }

    /// Builds the OCP for one decision; also returns the zone and the raw
    /// predictions in obstacle coordinates.
    pub fn build_spec(
        &self,
        ego: &EgoView<'_>,
        world: &WorldSnapshot,
    ) -> Result<(OcpSpec, InteractionZone, Vec<(usize, Vec<VehicleState>)>)> {
        if world.step != ego.step {
            return Err(Error::StaleSnapshot {
                snapshot: world.step,
                now: ego.step,
            });
        }
        let k_len = self.cfg.horizon;
        let zone = self.interaction_zone(ego, world);
        let mut raw = Vec::with_capacity(zone.members.len());
        let mut obstacles = Vec::with_capacity(zone.members.len());
        let mut downstream_count = 0usize;
        let mut downstream_speed = 0.0;
        for &id in &zone.members {
            let v = &world.vehicles[id];
            let offset = world.ring_offset(ego.state.x1, v.state.x1);
            if offset >= 0.0 && offset <= zone.downstream {
                downstream_count += 1;
                downstream_speed += v.state.x3;
            }
            let traj = self.predict(v, world.step, k_len + 1);
            let shift = ego.state.x1 + offset - v.state.x1;
            let shifted = traj
                .iter()
                .map(|s| VehicleState {
                    x1: s.x1 + shift,
                    ..*s
                })
                .collect();
            obstacles.push(ObstaclePrediction {
                id,
                dims: v.dims,
                traj: shifted,
            });
            raw.push((id, traj));
        }
        let d_d = downstream_count as f64 / (zone.downstream / 1000.0);
        let d_v = if downstream_count > 0 {
            downstream_speed / downstream_count as f64
        } else {
            0.0
        };
        let adaptive = AdaptiveSpeedConfig {
            v_des1: ego.v_des1,
            v_incr1: self.cfg.v_incr1,
            v_incr2: self.cfg.v_incr2,
            d_bar: self.cfg.d_bar,
        };
        let vd1 = if downstream_count == 0 {
            adaptive_desired_speed(ego.state.x3, 0.0, 0.0, &adaptive)
        } else {
            adaptive_desired_speed(ego.state.x3, d_d, d_v, &adaptive)
        };

        let cost = CostModel::new(
            self.cfg.weights,
            self.cfg.ellipsoid,
            self.cfg.beta,
            SpeedTargets { vd1, vd2: 0.0 },
            ego.u1_prev,
            ego.dims,
            obstacles,
        );
        let spec = OcpSpec {
            horizon: k_len,
            dt: self.cfg.dt,
            t0: world.step as f64 * self.cfg.dt,
            initial: ego.state,
            cost,
            bounds: BoundConfig {
                u_max1: self.cfg.u_max1,
                u_min1: self.cfg.u_min1,
                gains: self.gains,
                corridor: self.road_corridor(ego.dims),
                moving_boundary: None,
            },
        };
        Ok((spec, zone, raw))
    }

    /// First detection against any obstacle of `spec`, preferring the
    /// earliest offending step and lateral over longitudinal on ties.
    pub fn screen(&self, plan: &Plan, spec: &OcpSpec) -> Option<CollisionReport> {
        let mut worst: Option<CollisionReport> = None;
        for obs in spec.cost.obstacles() {
            if let Some(r) = detect_collision(
                plan,
                spec.cost.ego(),
                obs,
                self.cfg.ellipsoid.omega1,
                self.cfg.collision_eps,
                self.cfg.overlap_rule,
            ) {
                let better = match &worst {
                    None => true,
                    Some(w) => {
                        r.first_step < w.first_step
                            || (r.first_step == w.first_step
                                && r.kind == CollisionKind::Lateral
                                && w.kind == CollisionKind::Longitudinal)
                    }
                };
                if better {
                    worst = Some(r);
                }
            }
        }
        worst
    }

    pub fn plan(&self, ego: &EgoView<'_>, world: &WorldSnapshot) -> Result<PlanOutcome> {
        let (spec, zone, raw) = self.build_spec(ego, world)?;
        let guess = match ego.previous {
            Some(rec) => rec.warm_start(self.cfg.horizon),
            None => vec![ControlInput::ZERO; self.cfg.horizon],
        };
        let (plan, report) = solve(&spec, &guess, &self.cfg.solver)?;
        let mut reports = vec![report];
        let detection = self.screen(&plan, &spec);
        let mut emergency_failure = None;
        let (plan, emergency) = match &detection {
            None => (plan, None),
            Some(first) => {
                let (plan, report, failure) = self.emergency_solve(ego, &spec, &plan, first)?;
                reports.push(report);
                if let Some(err) = failure {
                    if self.cfg.emergency_failure_fatal {
                        return Err(err);
                    }
                    emergency_failure = Some(err);
                }
                (plan, Some(first.kind))
            }
        };
        let record = PlanRecord {
            plan,
            plan_id: ego.previous.map_or(0, |r| r.plan_id + 1),
            start_step: world.step,
            application_horizon: self.cfg.application_steps(),
            applied_through: 0,
            snapshot_id: world.step,
            predictions: raw,
            zone,
            emergency,
            detection: detection.clone(),
            vd1: spec.cost.targets.vd1,
        };
        Ok(PlanOutcome {
            record,
            detection,
            emergency_failure,
            reports,
        })
    }

    /// Moving boundary trailing obstacle `obs` just outside the longitudinal
    /// detector window.
    pub fn moving_boundary_for(
        &self,
        ego_dims: VehicleDims,
        x3_0: f64,
        obs: &ObstaclePrediction,
    ) -> Vec<MovingBoundary> {
        let offset = longitudinal_threshold(ego_dims, obs.dims, 0.5 * self.cfg.ellipsoid.omega1 * x3_0)
            + self.cfg.emergency_follow_gap;
        let dt = self.cfg.dt;
        (0..self.cfg.horizon)
            .map(|k| {
                let o = &obs.traj[k];
                let u1_hat = obs
                    .traj
                    .get(k + 1)
                    .map_or(0.0, |next| (next.x3 - o.x3) / dt);
                MovingBoundary {
                    x1_hat: o.x1 - offset,
                    x3_hat: o.x3,
                    u1_hat,
                }
            })
            .collect()
    }

    /// `x2(0) ± half width`, narrowed on each side so that obstacles that are
    /// longitudinally aligned at the start keep their lateral clearance.
    pub fn emergency_corridor(&self, ego: &EgoView<'_>, spec: &OcpSpec) -> LateralCorridor {
        let road = self.road_corridor(ego.dims);
        let mut c = LateralCorridor::around(ego.state.x2, self.cfg.emergency_corridor, &road);
        let x = ego.state;
        let eps = self.cfg.collision_eps;
        for obs in spec.cost.obstacles() {
            let o0 = obs.traj[0];
            if (x.x1 - o0.x1).abs() >= longitudinal_threshold(ego.dims, obs.dims, eps) {
                continue;
            }
            let thr = lateral_threshold(ego.dims, obs.dims, eps);
            let reach = obs.traj.iter().take(spec.horizon);
            if o0.x2 >= x.x2 {
                let lowest = reach.map(|o| o.x2).fold(f64::INFINITY, f64::min);
                c.x2_left = c.x2_left.min((lowest - thr).max(x.x2));
            } else {
                let highest = reach.map(|o| o.x2).fold(f64::NEG_INFINITY, f64::max);
                c.x2_right = c.x2_right.max((highest + thr).min(x.x2));
            }
        }
        c
    }

    /// Second solve with emergency bounds; the result must pass both
    /// detectors against every obstacle.
    pub fn replan_emergency(
        &self,
        ego: &EgoView<'_>,
        spec: &OcpSpec,
        first: &Plan,
        report: &CollisionReport,
    ) -> Result<(Plan, SolverReport)> {
        let (plan, solver_report, again) = self.emergency_solve(ego, spec, first, report)?;
        match again {
            Some(e) => Err(e),
            None => Ok((plan, solver_report)),
        }
    }

    /// Emergency solve; a failed recheck is returned alongside the plan.
    fn emergency_solve(
        &self,
        ego: &EgoView<'_>,
        spec: &OcpSpec,
        first: &Plan,
        report: &CollisionReport,
    ) -> Result<(Plan, SolverReport, Option<Error>)> {
        let mut spec2 = spec.clone();
        spec2.bounds.u_min1 = self.cfg.u_min1_emergency;
        match report.kind {
            CollisionKind::Longitudinal => {
                let obs = spec
                    .cost
                    .obstacles()
                    .iter()
                    .find(|o| o.id == report.obstacle)
                    .expect("reported obstacle is part of the problem");
                spec2.bounds.moving_boundary = Some(self.moving_boundary_for(ego.dims, ego.state.x3, obs));
            }
            CollisionKind::Lateral => {
                spec2.bounds.corridor = self.emergency_corridor(ego, spec);
                spec2.bounds.gains.k_lat1 = self.emergency_lateral.k_lat1;
                spec2.bounds.gains.k_lat2 = self.emergency_lateral.k_lat2;
            }
        }
        let (plan, solver_report) = solve(&spec2, &first.controls, &self.cfg.solver)?;
        let Some(again) = self.screen(&plan, &spec2) else {
            return Ok((plan, solver_report, None));
        };
        let offending = spec2.cost.obstacles().iter().find(|o| o.id == again.obstacle);
        let limits: Vec<_> = (0..spec2.horizon)
            .map(|k| spec2.limits(k, &plan.states[k]))
            .collect();
        let dump = format!(
            "ego {} at step {}: state {:?}, dims {:?}\nfirst detection {:?}\nsecond detection {:?}\n\
             bounds {:?}\nfirst plan states {:?}\nemergency plan states {:?}\ncontrols {:?}\nlimits {:?}\n\
             obstacle {:?}",
            ego.id,
            ego.step,
            ego.state,
            ego.dims,
            report,
            again,
            spec2.bounds,
            first.states,
            plan.states,
            plan.controls,
            limits,
            offending,
        );
        let err = Error::EmergencyFailed {
            vehicle: ego.id,
            obstacle: again.obstacle,
            kind: again.kind.as_str(),
            dump,
        };
        Ok((plan, solver_report, Some(err)))
    }
}

fn members_of(zone: &InteractionZone, ego: &EgoView<'_>, world: &WorldSnapshot) -> Vec<usize> {
    world
        .vehicles
        .iter()
        .filter(|v| v.id != ego.id && zone.contains(world.ring_offset(ego.state.x1, v.state.x1)))
        .map(|v| v.id)
        .collect()
}
