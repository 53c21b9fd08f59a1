//! Single optimal-control instances for `solve-once`.

use lanefree::bounds::{BoundConfig, GainSet, LateralCorridor};
use lanefree::dynamics::{ControlInput, Plan, VehicleState};
use lanefree::mpc::{detect_collision, extrapolate_obstacle, CollisionReport, OverlapRule};
use lanefree::objective::{CostModel, EllipsoidParams, ObstaclePrediction, SpeedTargets, VehicleDims, Weights};
use lanefree::simulator::rectangles_overlap;
use lanefree::solver::{solve, OcpSpec, SolverReport, SolverSettings};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceVehicle {
    pub length: f64,
    pub width: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub x4: f64,
}

impl Default for InstanceVehicle {
    fn default() -> Self {
        Self {
            length: 4.25,
            width: 1.8,
            x1: 0.0,
            x2: 5.1,
            x3: 30.0,
            x4: 0.0,
        }
    }
}

impl InstanceVehicle {
    fn state(&self) -> VehicleState {
        VehicleState::new(self.x1, self.x2, self.x3, self.x4)
    }

    fn dims(&self) -> VehicleDims {
        VehicleDims::new(self.length, self.width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceObstacle {
    pub id: usize,
    pub length: f64,
    pub width: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub x4: f64,
    /// Explicit prediction `[x1, x2, x3, x4]` per step; completed with zero
    /// accelerations when shorter than the horizon.
    pub states: Vec<[f64; 4]>,
}

impl Default for InstanceObstacle {
    fn default() -> Self {
        let v = InstanceVehicle::default();
        Self {
            id: 1,
            length: v.length,
            width: v.width,
            x1: v.x1,
            x2: v.x2,
            x3: v.x3,
            x4: v.x4,
            states: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InstanceBounds {
    pub u_max1: f64,
    pub u_min1: f64,
    pub k_long1: f64,
    pub k_lat1: f64,
}

impl Default for InstanceBounds {
    fn default() -> Self {
        Self {
            u_max1: 0.5,
            u_min1: -2.0,
            k_long1: 1.0,
            k_lat1: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Instance {
    pub horizon: usize,
    pub dt: f64,
    pub road_width: f64,
    pub beta: f64,
    pub u1_prev: f64,
    pub vd1: f64,
    pub vd2: f64,
    pub ego: InstanceVehicle,
    pub weights: Weights,
    pub ellipsoid: EllipsoidParams,
    pub bounds: InstanceBounds,
    pub solver: SolverSettings,
    pub obstacles: Vec<InstanceObstacle>,
}

impl Default for Instance {
    fn default() -> Self {
        Self {
            horizon: 32,
            dt: 0.25,
            road_width: 10.2,
            beta: 0.03,
            u1_prev: 0.0,
            vd1: 30.0,
            vd2: 0.0,
            ego: InstanceVehicle::default(),
            weights: Weights::default(),
            ellipsoid: EllipsoidParams::default(),
            bounds: InstanceBounds::default(),
            solver: SolverSettings {
                time_budget: None,
                ..SolverSettings::default()
            },
            obstacles: Vec::new(),
        }
    }
}

impl Instance {
    pub fn spec(&self) -> lanefree::Result<OcpSpec> {
        let obstacles = self
            .obstacles
            .iter()
            .map(|o| {
                let partial: Vec<VehicleState> = if o.states.is_empty() {
                    vec![VehicleState::new(o.x1, o.x2, o.x3, o.x4)]
                } else {
                    o.states.iter().map(|s| VehicleState::from_array(*s)).collect()
                };
                Ok(ObstaclePrediction {
                    id: o.id,
                    dims: VehicleDims::new(o.length, o.width),
                    traj: extrapolate_obstacle(&partial, self.horizon + 1, self.dt)?,
                })
            })
            .collect::<lanefree::Result<Vec<_>>>()?;
        let spec = OcpSpec {
            horizon: self.horizon,
            dt: self.dt,
            t0: 0.0,
            initial: self.ego.state(),
            cost: CostModel::new(
                self.weights,
                self.ellipsoid,
                self.beta,
                SpeedTargets {
                    vd1: self.vd1,
                    vd2: self.vd2,
                },
                self.u1_prev,
                self.ego.dims(),
                obstacles,
            ),
            bounds: BoundConfig {
                u_max1: self.bounds.u_max1,
                u_min1: self.bounds.u_min1,
                gains: GainSet::designed(self.bounds.k_long1, self.bounds.k_lat1, self.dt)?,
                corridor: LateralCorridor::road(self.road_width, self.ego.width),
                moving_boundary: None,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub report: SolverReport,
    pub zero_control_cost: f64,
    pub detection: Option<CollisionReport>,
    /// Steps at which the ego rectangle overlaps an obstacle rectangle.
    pub physical_overlaps: Vec<(usize, usize)>,
}

pub fn solve_instance(inst: &Instance) -> lanefree::Result<(OcpSpec, Plan, SolveSummary)> {
    let spec = inst.spec()?;
    let guess = vec![ControlInput::ZERO; spec.horizon];
    let (plan, report) = solve(&spec, &guess, &inst.solver)?;
    let zero = lanefree::dynamics::rollout(spec.initial, &guess, spec.dt)?;
    let zero_control_cost = spec.cost.total_cost(&zero)?;
    let ego = spec.cost.ego();
    let mut detection: Option<CollisionReport> = None;
    let mut physical_overlaps = Vec::new();
    for obs in spec.cost.obstacles() {
        if let Some(r) = detect_collision(&plan, ego, obs, inst.ellipsoid.omega1, 0.2, OverlapRule::default()) {
            if detection.as_ref().is_none_or(|d| r.first_step < d.first_step) {
                detection = Some(r);
            }
        }
        for (k, (x, o)) in plan.states.iter().zip(&obs.traj).enumerate() {
            if rectangles_overlap(x, ego, o, obs.dims, f64::INFINITY) {
                physical_overlaps.push((k, obs.id));
            }
        }
    }
    Ok((
        spec,
        plan,
        SolveSummary {
            report,
            zero_control_cost,
            detection,
            physical_overlaps,
        },
    ))
}
