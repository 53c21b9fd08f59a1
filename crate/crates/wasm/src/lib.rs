//! Browser bindings: the obstacle potential field, a single planning
//! decision, and a live ring-road simulation.

use lanefree::dynamics::VehicleState;
use lanefree::mpc::{EgoView, MpcConfig, Planner, VehicleView, WorldSnapshot};
use lanefree::objective::{obstacle_cost, EllipsoidParams, VehicleDims};
use lanefree::simulator::{RunOptions, ScenarioConfig, Simulation};
use wasm_bindgen::prelude::*;

const CAR: VehicleDims = VehicleDims::new(4.25, 1.8);

fn obstacle_states(flat: &[f64]) -> Vec<VehicleState> {
    flat.chunks_exact(4)
        .map(|c| VehicleState::new(c[0], c[1], c[2], c[3]))
        .collect()
}

/// Summed potential on an `nx × ny` grid over `[0, x1_max] × [0, x2_max]`,
/// row-major in x2. `obstacles` holds `x1, x2, x3, x4` per obstacle.
#[wasm_bindgen]
pub fn potential_field(
    nx: usize,
    ny: usize,
    x1_max: f64,
    x2_max: f64,
    ego_x3: f64,
    ego_x4: f64,
    omega1: f64,
    obstacles: &[f64],
) -> Vec<f64> {
    let p = EllipsoidParams {
        omega1,
        ..EllipsoidParams::default()
    };
    let obs = obstacle_states(obstacles);
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        let x2 = x2_max * j as f64 / (ny - 1).max(1) as f64;
        for i in 0..nx {
            let x1 = x1_max * i as f64 / (nx - 1).max(1) as f64;
            let ego = VehicleState::new(x1, x2, ego_x3, ego_x4);
            out.push(obs.iter().map(|o| obstacle_cost(&ego, o, CAR, CAR, &p)).sum());
        }
    }
    out
}

/// One planning decision for an ego at `ego` (`x1, x2, x3, x4`) among
/// constant-velocity obstacles. Returns `x1, x2` of every planned state
/// followed by a flag: 0 regular, 1 longitudinal emergency, 2 lateral.
#[wasm_bindgen]
pub fn plan_trajectory(ego: &[f64], v_des1: f64, omega1: f64, obstacles: &[f64]) -> Result<Vec<f64>, JsError> {
    let mut cfg = MpcConfig::default();
    cfg.ellipsoid.omega1 = omega1;
    let planner = Planner::new(cfg).map_err(|e| JsError::new(&e.to_string()))?;
    let [x1, x2, x3, x4] = <[f64; 4]>::try_from(ego).map_err(|_| JsError::new("ego needs four values"))?;
    let state = VehicleState::new(x1, x2, x3, x4);
    let mut vehicles = vec![VehicleView {
        id: 0,
        dims: CAR,
        state,
        broadcast: None,
    }];
    for (i, o) in obstacle_states(obstacles).into_iter().enumerate() {
        vehicles.push(VehicleView {
            id: i + 1,
            dims: CAR,
            state: o,
            broadcast: None,
        });
    }
    let world = WorldSnapshot {
        step: 0,
        road_length: 1000.0,
        vehicles,
    };
    let view = EgoView {
        id: 0,
        dims: CAR,
        state,
        v_des1,
        step: 0,
        u1_prev: 0.0,
        previous: None,
    };
    let out = planner.plan(&view, &world).map_err(|e| JsError::new(&e.to_string()))?;
    let mut flat: Vec<f64> = out.record.plan.states.iter().flat_map(|s| [s.x1, s.x2]).collect();
    flat.push(match out.record.emergency {
        None => 0.0,
        Some(lanefree::mpc::CollisionKind::Longitudinal) => 1.0,
        Some(lanefree::mpc::CollisionKind::Lateral) => 2.0,
    });
    Ok(flat)
}

#[wasm_bindgen]
pub struct Ring {
    sim: Simulation,
}

#[wasm_bindgen]
impl Ring {
    /// Ring road of 1 km at `density` veh/km.
    #[wasm_bindgen(constructor)]
    pub fn new(density: f64, seed: u64) -> Result<Ring, JsError> {
        let cfg = ScenarioConfig {
            density,
            seed,
            duration: 1e6,
            warmup: 0.0,
            ..ScenarioConfig::default()
        };
        let sim = Simulation::new(cfg, RunOptions::default()).map_err(|e| JsError::new(&e.to_string()))?;
        Ok(Ring { sim })
    }

    /// Advances `steps` steps of 0.25 s.
    pub fn advance(&mut self, steps: u32) -> Result<(), JsError> {
        for _ in 0..steps {
            self.sim.advance().map_err(|e| JsError::new(&e.to_string()))?;
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.sim.step as f64 * self.sim.cfg.mpc.dt
    }

    pub fn road_length(&self) -> f64 {
        self.sim.cfg.road_length
    }

    /// `x1 (wrapped), x2, x3, length, width, emergency` per vehicle.
    pub fn vehicles(&self) -> Vec<f64> {
        let l = self.sim.cfg.road_length;
        self.sim
            .vehicles
            .iter()
            .flat_map(|v| {
                let emergency = v.record.as_ref().is_some_and(|r| r.emergency.is_some());
                [
                    v.state.x1.rem_euclid(l),
                    v.state.x2,
                    v.state.x3,
                    v.spec.dims.length,
                    v.spec.dims.width,
                    emergency as u8 as f64,
                ]
            })
            .collect()
    }
}
