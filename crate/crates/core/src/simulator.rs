//! Ring-road world with emulated real-time planning.
//!
//! Time advances in lockstep steps of `dt`. At each step boundary a frozen
//! snapshot of all vehicles is taken, triggers are evaluated in id order,
//! the triggered vehicles replan in parallel against the snapshot, and the
//! new plans are installed in id order before anyone moves. Results do not
//! depend on the number of workers.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{ControlInput, VehicleState};
use crate::error::{Error, Result};
use crate::mpc::{
    ring_offset, Broadcast, EgoView, MpcConfig, PlanOutcome, PlanRecord, Planner, TriggerKind, VehicleView,
    WorldSnapshot,
};
use crate::objective::VehicleDims;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleClass {
    pub name: String,
    pub length: f64,
    pub width: f64,
}

pub fn default_classes() -> Vec<VehicleClass> {
    const TABLE: [(&str, f64, f64); 8] = [
        ("I", 3.2, 1.6),
        ("II", 3.4, 1.7),
        ("III", 3.9, 1.7),
        ("IV", 4.25, 1.8),
        ("V", 4.55, 1.82),
        ("VI", 4.6, 1.77),
        ("VII", 5.15, 1.84),
        ("VIII", 5.2, 1.88),
    ];
    TABLE
        .iter()
        .map(|&(name, length, width)| VehicleClass {
            name: name.to_string(),
            length,
            width,
        })
        .collect()
}

/// A vehicle placed by hand instead of by the random grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptedVehicle {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub x4: f64,
    pub length: f64,
    pub width: f64,
    pub v_des1: f64,
}

impl Default for ScriptedVehicle {
    fn default() -> Self {
        Self {
            x1: 0.0,
            x2: 5.1,
            x3: 0.0,
            x4: 0.0,
            length: 4.25,
            width: 1.8,
            v_des1: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub road_length: f64,
    pub road_width: f64,
    /// Vehicles per km; `density * road_length / 1000` must be an integer.
    pub density: f64,
    pub duration: f64,
    /// Detector counts before this time are discarded.
    pub warmup: f64,
    pub seed: u64,
    pub virtual_lanes: usize,
    /// Jitter as a fraction of the cell dimensions.
    pub jitter: f64,
    pub desired_speed: [f64; 2],
    pub detectors: Vec<f64>,
    pub classes: Vec<VehicleClass>,
    /// Replaces the random placement when present.
    pub vehicles: Option<Vec<ScriptedVehicle>>,
    pub mpc: MpcConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            road_length: 1000.0,
            road_width: 10.2,
            density: 100.0,
            duration: 300.0,
            warmup: 60.0,
            seed: 0,
            virtual_lanes: 4,
            jitter: 0.1,
            desired_speed: [25.0, 35.0],
            detectors: vec![0.0, 200.0, 400.0, 600.0, 800.0],
            classes: default_classes(),
            vehicles: None,
            mpc: MpcConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn vehicle_count(&self) -> Result<usize> {
        if let Some(v) = &self.vehicles {
            return Ok(v.len());
        }
        let n = self.density * self.road_length / 1000.0;
        let rounded = n.round();
        if (n - rounded).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "density {} on a {} m road gives a fractional vehicle count {n}",
                self.density, self.road_length
            )));
        }
        Ok(rounded as usize)
    }

    /// Planner parameters with the scenario's road width.
    pub fn planner_config(&self) -> MpcConfig {
        MpcConfig {
            road_width: self.road_width,
            ..self.mpc.clone()
        }
    }

    pub fn steps(&self) -> u64 {
        (self.duration / self.mpc.dt).round() as u64
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let mut positive = |name: &str, v: f64| {
            if !(v.is_finite() && v > 0.0) {
                problems.push(format!("{name} must be positive, got {v}"));
            }
        };
        positive("road_length", self.road_length);
        positive("road_width", self.road_width);
        positive("duration", self.duration);
        positive("mpc.dt", self.mpc.dt);
        if !(self.density.is_finite() && self.density >= 0.0) {
            problems.push(format!("density must be non-negative, got {}", self.density));
        }
        if !(self.warmup >= 0.0 && self.warmup < self.duration) {
            problems.push(format!("warmup must lie in [0, duration), got {}", self.warmup));
        }
        if self.virtual_lanes == 0 {
            problems.push("virtual_lanes must be at least 1".into());
        }
        if !(0.0..0.5).contains(&self.jitter) {
            problems.push(format!("jitter must lie in [0, 0.5), got {}", self.jitter));
        }
        if !(self.desired_speed[0] > 0.0 && self.desired_speed[0] <= self.desired_speed[1]) {
            problems.push(format!("desired_speed must be an increasing positive pair, got {:?}", self.desired_speed));
        }
        if self.classes.is_empty() {
            problems.push("classes must not be empty".into());
        }
        for c in &self.classes {
            if !(c.length > 0.0 && c.width > 0.0 && c.width < self.road_width) {
                problems.push(format!("class {} has invalid dimensions", c.name));
            }
        }
        for &d in &self.detectors {
            if !(0.0..self.road_length).contains(&d) {
                problems.push(format!("detector position {d} is outside the road"));
            }
        }
        if self.mpc.horizon < 2 {
            problems.push("mpc.horizon must be at least 2".into());
        }
        let detail = |e: Error| match e {
            Error::Config(m) => m,
            e => e.to_string(),
        };
        if let Err(e) = self.vehicle_count() {
            problems.push(detail(e));
        }
        if let Err(e) = Planner::new(self.planner_config()) {
            problems.push(detail(e));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub class: String,
    pub dims: VehicleDims,
    pub v_des1: f64,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: usize,
    pub spec: VehicleSpec,
    /// Longitudinal position is an odometer; wrap with the road length.
    pub state: VehicleState,
    pub last_control: ControlInput,
    pub record: Option<PlanRecord>,
    pub broadcast: Option<Arc<Broadcast>>,
}

/// Grid placement with jitter; speeds start at zero.
pub fn initialize(cfg: &ScenarioConfig) -> Result<Vec<Vehicle>> {
    cfg.validate()?;
    if let Some(scripted) = &cfg.vehicles {
        let vehicles: Vec<Vehicle> = scripted
            .iter()
            .enumerate()
            .map(|(id, s)| Vehicle {
                id,
                spec: VehicleSpec {
                    class: "scripted".into(),
                    dims: VehicleDims::new(s.length, s.width),
                    v_des1: s.v_des1,
                },
                state: VehicleState::new(s.x1, s.x2, s.x3, s.x4),
                last_control: ControlInput::ZERO,
                record: None,
                broadcast: None,
            })
            .collect();
        if let Some((a, b)) = first_overlap(&vehicles, cfg.road_length) {
            return Err(Error::Config(format!("scripted vehicles {a} and {b} overlap")));
        }
        for v in &vehicles {
            let half = 0.5 * v.spec.dims.width;
            if v.state.x2 < half || v.state.x2 > cfg.road_width - half || v.state.x3 < 0.0 {
                return Err(Error::Config(format!("scripted vehicle {} starts outside the road", v.id)));
            }
        }
        return Ok(vehicles);
    }

    let n = cfg.vehicle_count()?;
    let lanes = cfg.virtual_lanes;
    let sections = n.div_ceil(lanes).max(1);
    let cell_long = cfg.road_length / sections as f64;
    let cell_lat = cfg.road_width / lanes as f64;
    let zone_width = (cfg.desired_speed[1] - cfg.desired_speed[0]) / lanes as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vehicles: Vec<Vehicle> = Vec::with_capacity(n);
    for id in 0..n {
        let section = id / lanes;
        let lane = id % lanes;
        let class = &cfg.classes[rng.random_range(0..cfg.classes.len())];
        let dims = VehicleDims::new(class.length, class.width);
        let lo = cfg.desired_speed[0] + zone_width * lane as f64;
        let v_des1 = if zone_width > 0.0 {
            rng.random_range(lo..lo + zone_width)
        } else {
            lo
        };
        let cx = (section as f64 + 0.5) * cell_long;
        let cy = (lane as f64 + 0.5) * cell_lat;
        let half = 0.5 * dims.width;
        let mut placed = None;
        for _ in 0..100 {
            let (dx, dy) = if cfg.jitter > 0.0 {
                (
                    rng.random_range(-cfg.jitter..cfg.jitter) * cell_long,
                    rng.random_range(-cfg.jitter..cfg.jitter) * cell_lat,
                )
            } else {
                (0.0, 0.0)
            };
            let x2 = (cy + dy).clamp(half, cfg.road_width - half);
            let state = VehicleState::new(cx + dx, x2, 0.0, 0.0);
            // keep the detector margin clear, not only the bodies
            let eps = cfg.mpc.collision_eps;
            let padded = VehicleDims::new(dims.length + 2.0 * eps, dims.width + 2.0 * eps);
            let clear = vehicles
                .iter()
                .all(|o| !rectangles_overlap(&o.state, o.spec.dims, &state, padded, cfg.road_length));
            if clear {
                placed = Some(state);
                break;
            }
        }
        let Some(state) = placed else {
            return Err(Error::Config(format!(
                "could not place vehicle {id} without overlap; density {} is too high",
                cfg.density
            )));
        };
        vehicles.push(Vehicle {
            id,
            spec: VehicleSpec {
                class: class.name.clone(),
                dims,
                v_des1,
            },
            state,
            last_control: ControlInput::ZERO,
            record: None,
            broadcast: None,
        });
    }
    Ok(vehicles)
}

/// Positive-area overlap of two axis-aligned rectangles on the ring.
pub fn rectangles_overlap(a: &VehicleState, da: VehicleDims, b: &VehicleState, db: VehicleDims, road_length: f64) -> bool {
    let dx = ring_offset(a.x1, b.x1, road_length).abs();
    let dy = (a.x2 - b.x2).abs();
    dx < 0.5 * (da.length + db.length) && dy < 0.5 * (da.width + db.width)
}

fn first_overlap(vehicles: &[Vehicle], road_length: f64) -> Option<(usize, usize)> {
    for (i, a) in vehicles.iter().enumerate() {
        for b in &vehicles[i + 1..] {
            if rectangles_overlap(&a.state, a.spec.dims, &b.state, b.spec.dims, road_length) {
                return Some((a.id, b.id));
            }
        }
    }
    None
}

/// Number of overlapping pairs.
pub fn collision_audit(vehicles: &[Vehicle], road_length: f64) -> usize {
    let mut count = 0;
    for (i, a) in vehicles.iter().enumerate() {
        for b in &vehicles[i + 1..] {
            if rectangles_overlap(&a.state, a.spec.dims, &b.state, b.spec.dims, road_length) {
                count += 1;
            }
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRecord {
    pub position: f64,
    pub count: u64,
    /// Measurement window (s).
    pub window: f64,
    pub flow: f64,
}

/// Counts front-bumper crossings whose interpolated time lies in
/// `[start, end]`.
#[derive(Debug, Clone)]
pub struct Detector {
    pub position: f64,
    pub start: f64,
    pub end: f64,
    pub count: u64,
}

impl Detector {
    pub fn new(position: f64, start: f64, end: f64) -> Self {
        Self {
            position,
            start,
            end,
            count: 0,
        }
    }

    /// Registers the motion of a front bumper from `front0` at `t0` to
    /// `front1` at `t0 + dt` (odometer coordinates).
    pub fn observe(&mut self, front0: f64, front1: f64, t0: f64, dt: f64, road_length: f64) {
        if front1 <= front0 {
            return;
        }
        // smallest crossing point strictly after front0
        let mut p = self.position + road_length * ((front0 - self.position) / road_length).floor();
        if p <= front0 {
            p += road_length;
        }
        while p <= front1 {
            let t = t0 + dt * (p - front0) / (front1 - front0);
            if t >= self.start && t <= self.end {
                self.count += 1;
            }
            p += road_length;
        }
    }

    pub fn record(&self) -> DetectorRecord {
        let window = self.end - self.start;
        DetectorRecord {
            position: self.position,
            count: self.count,
            window,
            flow: if window > 0.0 {
                self.count as f64 * 3600.0 / window
            } else {
                0.0
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub below: u64,
    pub above: u64,
    pub min: f64,
    pub max: f64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo,
            bin_width: (hi - lo) / bins as f64,
            counts: vec![0; bins],
            below: 0,
            above: 0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    pub fn add(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        let idx = ((v - self.lo) / self.bin_width).floor();
        if idx < 0.0 {
            self.below += 1;
        } else if idx as usize >= self.counts.len() {
            self.above += 1;
        } else {
            self.counts[idx as usize] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.below + self.above
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let a = self.lo + i as f64 * self.bin_width;
        (a, a + self.bin_width)
    }

    /// Share of samples in the bin containing zero.
    pub fn mass_at_zero(&self) -> f64 {
        let idx = ((0.0 - self.lo) / self.bin_width).floor();
        if idx < 0.0 || idx as usize >= self.counts.len() || self.total() == 0 {
            return 0.0;
        }
        self.counts[idx as usize] as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComfortHistograms {
    pub u1: Histogram,
    pub u2: Histogram,
    pub jerk1: Histogram,
    pub jerk2: Histogram,
}

impl Default for ComfortHistograms {
    fn default() -> Self {
        Self {
            u1: Histogram::new(-5.0, 1.0, 60),
            u2: Histogram::new(-3.0, 3.0, 60),
            jerk1: Histogram::new(-20.0, 20.0, 80),
            jerk2: Histogram::new(-20.0, 20.0, 80),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerCounts {
    pub initial: u64,
    pub application_period: u64,
    pub obstacle_deviation: u64,
    pub new_obstacle: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStatistics {
    pub density: f64,
    pub seed: u64,
    pub vehicles: usize,
    pub steps: u64,
    pub detectors: Vec<DetectorRecord>,
    pub mean_flow: f64,
    pub plans: u64,
    pub emergency_plans: u64,
    pub emergency_fraction: f64,
    /// Emergency plans that still failed the detectors.
    pub emergency_failures: u64,
    pub first_emergency_failure: Option<String>,
    pub collisions: u64,
    pub corridor_violations: u64,
    pub speed_violations: u64,
    pub histograms: ComfortHistograms,
    /// Longitudinal jerk at the first step of every plan.
    pub boundary_jerk1: Vec<f64>,
    /// u1 extremes over steps driven by regular and emergency plans.
    pub u1_regular: [f64; 2],
    pub u1_emergency: [f64; 2],
    pub triggers: TriggerCounts,
    pub solve_times: Vec<f64>,
    pub solver_iterations: u64,
    pub cost_evaluations: u64,
    pub unconverged_solves: u64,
    /// SHA-256 over every state and control of the run.
    pub digest: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub vehicle: usize,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub x4: f64,
    pub u1: f64,
    pub u2: f64,
    pub plan_id: u64,
    pub emergency: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Worker threads for the per-step solves; 0 uses the global pool, 1
    /// solves on the calling thread.
    pub workers: usize,
    pub record_trajectories: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            record_trajectories: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub stats: RunStatistics,
    pub trajectories: Vec<TrajectoryRow>,
    pub vehicles: Vec<Vehicle>,
}

/// A running simulation.
pub struct Simulation {
    pub cfg: ScenarioConfig,
    pub planner: Planner,
    pub vehicles: Vec<Vehicle>,
    pub step: u64,
    detectors: Vec<Detector>,
    stats: RunStatistics,
    hasher: Sha256,
    trajectories: Option<Vec<TrajectoryRow>>,
    pool: Option<rayon::ThreadPool>,
    workers: usize,
}

impl Simulation {
    pub fn new(mut cfg: ScenarioConfig, opts: RunOptions) -> Result<Self> {
        cfg.mpc.road_width = cfg.road_width;
        let vehicles = initialize(&cfg)?;
        let planner = Planner::new(cfg.mpc.clone())?;
        let detectors = cfg
            .detectors
            .iter()
            .map(|&p| Detector::new(p, cfg.warmup, cfg.duration))
            .collect();
        let pool = match opts.workers {
            0 | 1 => None,
            w => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(w)
                    .build()
                    .map_err(|e| Error::Config(format!("cannot start {w} workers: {e}")))?,
            ),
        };
        let stats = RunStatistics {
            density: cfg.density,
            seed: cfg.seed,
            vehicles: vehicles.len(),
            steps: 0,
            detectors: Vec::new(),
            mean_flow: 0.0,
            plans: 0,
            emergency_plans: 0,
            emergency_fraction: 0.0,
            emergency_failures: 0,
            first_emergency_failure: None,
            collisions: 0,
            corridor_violations: 0,
            speed_violations: 0,
            histograms: ComfortHistograms::default(),
            boundary_jerk1: Vec::new(),
            u1_regular: [f64::INFINITY, f64::NEG_INFINITY],
            u1_emergency: [f64::INFINITY, f64::NEG_INFINITY],
            triggers: TriggerCounts::default(),
            solve_times: Vec::new(),
            solver_iterations: 0,
            cost_evaluations: 0,
            unconverged_solves: 0,
            digest: String::new(),
        };
        Ok(Self {
            cfg,
            planner,
            vehicles,
            step: 0,
            detectors,
            stats,
            hasher: Sha256::new(),
            trajectories: opts.record_trajectories.then(Vec::new),
            pool,
            workers: opts.workers,
        })
    }

    pub fn snapshot(&self) -> WorldSnapshot {
        WorldSnapshot {
            step: self.step,
            road_length: self.cfg.road_length,
            vehicles: self
                .vehicles
                .iter()
                .map(|v| VehicleView {
                    id: v.id,
                    dims: v.spec.dims,
                    state: v.state,
                    broadcast: v.broadcast.clone(),
                })
                .collect(),
        }
    }

    fn ego_view<'a>(&self, v: &'a Vehicle) -> EgoView<'a> {
        EgoView {
            id: v.id,
            dims: v.spec.dims,
            state: v.state,
            v_des1: v.spec.v_des1,
            step: self.step,
            u1_prev: v.last_control.u1,
            previous: v.record.as_ref(),
        }
    }

    /// Evaluates triggers and installs new plans for the current step.
    fn replan(&mut self, world: &WorldSnapshot) -> Result<()> {
        let mut due = Vec::new();
        for v in &self.vehicles {
            if v.record.is_none() {
                self.stats.triggers.initial += 1;
                due.push(v.id);
                continue;
            }
            let events = self.planner.detect_triggers(&self.ego_view(v), world);
            if events.is_empty() {
                continue;
            }
            for e in &events {
                match e.kind {
                    TriggerKind::ApplicationPeriodElapsed => self.stats.triggers.application_period += 1,
                    TriggerKind::ObstacleDeviation => self.stats.triggers.obstacle_deviation += 1,
                    TriggerKind::NewObstacleInZone => self.stats.triggers.new_obstacle += 1,
                }
            }
            due.push(v.id);
        }
        let views: Vec<EgoView<'_>> = due.iter().map(|&id| self.ego_view(&self.vehicles[id])).collect();
        let planner = &self.planner;
        let solve_all = || -> Vec<Result<PlanOutcome>> {
            views.par_iter().map(|ego| planner.plan(ego, world)).collect()
        };
        let outcomes = match (&self.pool, self.workers) {
            (Some(pool), _) => pool.install(solve_all),
            (None, 1) => views.iter().map(|ego| planner.plan(ego, world)).collect(),
            (None, _) => solve_all(),
        };
        for (id, outcome) in due.into_iter().zip(outcomes) {
            let outcome = outcome?;
            self.stats.plans += 1;
            if outcome.record.emergency.is_some() {
                self.stats.emergency_plans += 1;
            }
            if let Some(err) = &outcome.emergency_failure {
                self.stats.emergency_failures += 1;
                if self.stats.first_emergency_failure.is_none() {
                    self.stats.first_emergency_failure = Some(format!("step {}: {err}", self.step));
                }
            }
            for r in &outcome.reports {
                self.stats.solver_iterations += r.iterations as u64;
                self.stats.cost_evaluations += r.cost_evaluations as u64;
                if !r.converged {
                    self.stats.unconverged_solves += 1;
                }
            }
            self.stats
                .solve_times
                .push(outcome.reports.iter().map(|r| r.wall_time).sum());
            let v = &mut self.vehicles[id];
            v.broadcast = Some(Arc::new(Broadcast {
                start_step: self.step,
                states: outcome.record.plan.states.clone(),
            }));
            v.record = Some(outcome.record);
        }
        Ok(())
    }

    /// Advances the world by one step.
    pub fn advance(&mut self) -> Result<()> {
        let world = self.snapshot();
        self.replan(&world)?;
        let dt = self.cfg.mpc.dt;
        let t0 = self.step as f64 * dt;
        let road_length = self.cfg.road_length;
        for v in &mut self.vehicles {
            let record = v.record.as_mut().expect("every vehicle has a plan after replanning");
            let j = record.applied_through;
            let u = record.plan.controls[j];
            let next = record.plan.states[j + 1];
            let emergency = record.emergency.is_some();
            if j == 0 {
                self.stats.boundary_jerk1.push((u.u1 - v.last_control.u1) / dt);
            }
            let h = &mut self.stats.histograms;
            h.u1.add(u.u1);
            h.u2.add(u.u2);
            h.jerk1.add((u.u1 - v.last_control.u1) / dt);
            h.jerk2.add((u.u2 - v.last_control.u2) / dt);
            let range = if emergency {
                &mut self.stats.u1_emergency
            } else {
                &mut self.stats.u1_regular
            };
            range[0] = range[0].min(u.u1);
            range[1] = range[1].max(u.u1);
            if let Some(rows) = &mut self.trajectories {
                rows.push(TrajectoryRow {
                    time: t0,
                    vehicle: v.id,
                    x1: v.state.x1.rem_euclid(road_length),
                    x2: v.state.x2,
                    x3: v.state.x3,
                    x4: v.state.x4,
                    u1: u.u1,
                    u2: u.u2,
                    plan_id: record.plan_id,
                    emergency,
                });
            }
            for b in v.state.as_array().iter().chain(&[u.u1, u.u2]) {
                self.hasher.update(b.to_bits().to_le_bytes());
            }
            let half = 0.5 * v.spec.dims.length;
            for d in &mut self.detectors {
                d.observe(v.state.x1 + half, next.x1 + half, t0, dt, road_length);
            }
            v.state = next;
            v.last_control = u;
            record.applied_through += 1;
        }
        self.step += 1;
        self.audit()
    }

    fn audit(&mut self) -> Result<()> {
        let w = self.cfg.road_width;
        for v in &self.vehicles {
            let half = 0.5 * v.spec.dims.width;
            if v.state.x2 < half - 1e-9 || v.state.x2 > w - half + 1e-9 {
                self.stats.corridor_violations += 1;
            }
            if v.state.x3 < -1e-9 {
                self.stats.speed_violations += 1;
            }
        }
        let collisions = collision_audit(&self.vehicles, self.cfg.road_length);
        self.stats.collisions += collisions as u64;
        if collisions > 0 || self.stats.corridor_violations > 0 || self.stats.speed_violations > 0 {
            return Err(Error::Audit {
                step: self.step,
                what: format!(
                    "{collisions} overlapping pairs, {} corridor and {} speed violations",
                    self.stats.corridor_violations, self.stats.speed_violations
                ),
                dump: self.forensic_dump(),
            });
        }
        Ok(())
    }

    pub fn forensic_dump(&self) -> String {
        let mut out = format!("step {} seed {} density {}\n", self.step, self.cfg.seed, self.cfg.density);
        for (i, a) in self.vehicles.iter().enumerate() {
            for b in &self.vehicles[i + 1..] {
                if rectangles_overlap(&a.state, a.spec.dims, &b.state, b.spec.dims, self.cfg.road_length) {
                    out.push_str(&format!(
                        "overlap {} {:?} {:?} plan {:?} / {} {:?} {:?} plan {:?}\n",
                        a.id,
                        a.spec.dims,
                        a.state,
                        a.record.as_ref().map(|r| (r.plan_id, r.start_step, r.emergency)),
                        b.id,
                        b.spec.dims,
                        b.state,
                        b.record.as_ref().map(|r| (r.plan_id, r.start_step, r.emergency)),
                    ));
                }
            }
        }
        for v in &self.vehicles {
            out.push_str(&format!("{} {:?} {:?}\n", v.id, v.spec.dims, v.state));
        }
        out
    }

    pub fn finish(mut self) -> RunOutput {
        self.stats.steps = self.step;
        self.stats.detectors = self.detectors.iter().map(Detector::record).collect();
        self.stats.mean_flow = if self.stats.detectors.is_empty() {
            0.0
        } else {
            self.stats.detectors.iter().map(|d| d.flow).sum::<f64>() / self.stats.detectors.len() as f64
        };
        self.stats.emergency_fraction = if self.stats.plans > 0 {
            self.stats.emergency_plans as f64 / self.stats.plans as f64
        } else {
            0.0
        };
        self.stats.digest = hex(&self.hasher.finalize());
        RunOutput {
            stats: self.stats,
            trajectories: self.trajectories.unwrap_or_default(),
            vehicles: self.vehicles,
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Runs a scenario to completion.
pub fn run(cfg: &ScenarioConfig, opts: RunOptions) -> Result<RunOutput> {
    let mut sim = Simulation::new(cfg.clone(), opts)?;
    let steps = cfg.steps();
    while sim.step < steps {
        sim.advance()?;
    }
    Ok(sim.finish())
}

/// Nearest-rank percentile of `values` (`q` in `[0, 1]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

/// Least-squares slope of `y` against `x`.
pub fn linear_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagramRow {
    pub density: f64,
    pub mean_flow: f64,
    pub min_flow: f64,
    pub max_flow: f64,
    pub emergency_percent: f64,
    pub replications: usize,
    pub failures: usize,
}

/// One row per density from per-replication statistics.
pub fn diagram_rows(densities: &[f64], runs: &[(f64, std::result::Result<RunStatistics, String>)]) -> Vec<DiagramRow> {
    densities
        .iter()
        .map(|&d| {
            let ok: Vec<&RunStatistics> = runs
                .iter()
                .filter(|(rd, _)| *rd == d)
                .filter_map(|(_, r)| r.as_ref().ok())
                .collect();
            let failures = runs.iter().filter(|(rd, r)| *rd == d && r.is_err()).count();
            let flows: Vec<f64> = ok.iter().map(|s| s.mean_flow).collect();
            let plans: u64 = ok.iter().map(|s| s.plans).sum();
            let emergencies: u64 = ok.iter().map(|s| s.emergency_plans).sum();
            DiagramRow {
                density: d,
                mean_flow: if flows.is_empty() {
                    f64::NAN
                } else {
                    flows.iter().sum::<f64>() / flows.len() as f64
                },
                min_flow: flows.iter().copied().fold(f64::INFINITY, f64::min),
                max_flow: flows.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                emergency_percent: if plans > 0 {
                    100.0 * emergencies as f64 / plans as f64
                } else {
                    0.0
                },
                replications: ok.len(),
                failures,
            }
        })
        .collect()
}
