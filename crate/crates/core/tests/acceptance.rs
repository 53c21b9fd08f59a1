//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! `LANEFREE_ACCEPTANCE=full` runs the long simulation protocol (300 s runs,
//! five seeds, the whole density sweep). The default desk protocol shortens
//! the simulations and skips the sweep. With `LANEFREE_ACCEPTANCE_STRICT=1`
//! any FAIL makes the process exit non-zero. `LANEFREE_ACCEPTANCE_ONLY=3,9`
//! restricts the run to the listed criteria.

use std::sync::Arc;
use std::time::Instant;

use lanefree::bounds::{
    characteristic_polynomial, clamp, dead_beat_check, design_gains, BoundConfig, GainSet, LateralCorridor,
    MovingBoundary, TrackingTarget,
};
use lanefree::dynamics::{rollout, step, ControlInput, Plan, VehicleState};
use lanefree::mpc::{
    extrapolate_obstacle, Broadcast, CollisionKind, EgoView, MpcConfig, Planner, VehicleView, WorldSnapshot,
};
use lanefree::objective::{
    CostModel, EllipsoidParams, ObstaclePrediction, SpeedTargets, VehicleDims, Weights,
};
use lanefree::simulator::{linear_slope, percentile, run, RunOptions, RunStatistics, ScenarioConfig};
use lanefree::solver::{costate_sweep, reduced_gradient, solve_observed, OcpSpec, SolverSettings, SolverWorkspace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const T: f64 = 0.25;
const K: usize = 32;
const CAR: VehicleDims = VehicleDims::new(4.25, 1.8);

#[derive(Clone, Copy, PartialEq)]
enum Protocol {
    Desk,
    Full,
}

struct Simulations {
    protocol: Protocol,
    duration: f64,
    seeds: Vec<u64>,
}

impl Simulations {
    fn label(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "{} protocol: {} s simulated, seeds {}",
            if self.protocol == Protocol::Full { "full" } else { "desk" },
            self.duration,
            seeds.join(",")
        )
    }

    fn scenario(&self, density: f64, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            density,
            seed,
            duration: self.duration,
            warmup: (self.duration / 5.0).min(60.0),
            ..ScenarioConfig::default()
        }
    }
}

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn gains() -> GainSet {
    GainSet::designed(1.0, 1.0, T).unwrap()
}

fn bounds(corridor: LateralCorridor) -> BoundConfig {
    BoundConfig {
        u_max1: 0.5,
        u_min1: -2.0,
        gains: gains(),
        corridor,
        moving_boundary: None,
    }
}

fn random_state(rng: &mut ChaCha8Rng) -> VehicleState {
    VehicleState::new(
        rng.random_range(-1e3..1e3),
        rng.random_range(0.0..10.2),
        rng.random_range(0.0..40.0),
        rng.random_range(-2.0..2.0),
    )
}

// ---------------------------------------------------------------- 1

fn dynamics_exactness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let clock = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let s = random_state(&mut rng);
        let u = ControlInput::new(rng.random_range(-4.0..0.5), rng.random_range(-3.0..3.0));
        let dt = rng.random_range(1e-3..1.0);
        let got = step(s, u, dt).unwrap();
        // position under constant acceleration, velocity linear in time
        let exact = [
            s.x1 + s.x3 * dt + u.u1 * dt * dt / 2.0,
            s.x2 + s.x4 * dt + u.u2 * dt * dt / 2.0,
            s.x3 + u.u1 * dt,
            s.x4 + u.u2 * dt,
        ];
        for (a, b) in got.as_array().iter().zip(exact) {
            worst = worst.max((a - b).abs() / b.abs().max(1.0));
        }
    }
    let elapsed = clock.elapsed().as_secs_f64();
    verdict(
        worst <= 1e-12 && elapsed < 1.0,
        format!("max relative error {worst:.1e} over 10^4 samples in {elapsed:.3} s"),
    )
}

// ---------------------------------------------------------------- 2

fn gain_design() -> Verdict {
    let k1_max = 1.0 / (T * T);
    let mut worst_disc = 0.0f64;
    let mut roots_ok = true;
    for i in 1..=100 {
        let k1 = k1_max * i as f64 / 100.0;
        let (k1, k2) = design_gains(k1, T).unwrap();
        let (b, c) = characteristic_polynomial(k1, k2, T);
        let disc = b * b - 4.0 * c;
        worst_disc = worst_disc.max(disc.abs());
        let z = -b / 2.0;
        roots_ok &= (0.0..1.0).contains(&z);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_steps = 0;
    for i in 0..100 {
        let s0 = VehicleState::new(
            rng.random_range(-20.0..0.0),
            rng.random_range(3.0..7.0),
            rng.random_range(10.0..35.0),
            rng.random_range(-1.5..1.5),
        );
        let target = match i % 3 {
            0 => TrackingTarget::Moving(MovingBoundary {
                x1_hat: rng.random_range(0.0..20.0),
                x3_hat: rng.random_range(10.0..35.0),
                u1_hat: rng.random_range(-1.0..0.5),
            }),
            1 => TrackingTarget::Left(9.3),
            _ => TrackingTarget::Right(0.9),
        };
        let (k1, k2) = design_gains(k1_max, T).unwrap();
        match dead_beat_check(s0, target, k1, k2, T, 10, 1e-9) {
            Some(n) => worst_steps = worst_steps.max(n),
            None => worst_steps = usize::MAX,
        }
    }
    verdict(
        worst_disc < 1e-12 && roots_ok && worst_steps <= 2,
        format!(
            "max |discriminant| {worst_disc:.1e}, roots in [0,1): {roots_ok}, dead-beat within {} steps",
            if worst_steps == usize::MAX { "never".to_string() } else { worst_steps.to_string() }
        ),
    )
}

// ---------------------------------------------------------------- 3

/// Random instance with obstacles near the ego so the potential is active.
fn obstacle_instance(rng: &mut ChaCha8Rng) -> (OcpSpec, Vec<ControlInput>) {
    let ego = VehicleState::new(0.0, rng.random_range(2.0..8.0), rng.random_range(12.0..32.0), rng.random_range(-0.8..0.8));
    let n = rng.random_range(1..=5);
    let obstacles = (0..n)
        .map(|id| {
            let o = VehicleState::new(
                rng.random_range(-25.0..45.0),
                rng.random_range(1.0..9.2),
                rng.random_range(12.0..32.0),
                rng.random_range(-0.5..0.5),
            );
            ObstaclePrediction {
                id: id + 1,
                dims: VehicleDims::new(rng.random_range(3.2..5.2), rng.random_range(1.6..1.9)),
                traj: extrapolate_obstacle(&[o], K + 1, T).unwrap(),
            }
        })
        .collect();
    let cost = CostModel::new(
        Weights::default(),
        EllipsoidParams::default(),
        0.03,
        SpeedTargets {
            vd1: rng.random_range(20.0..35.0),
            vd2: 0.0,
        },
        rng.random_range(-1.0..0.5),
        CAR,
        obstacles,
    );
    let spec = OcpSpec {
        horizon: K,
        dt: T,
        t0: 0.0,
        initial: ego,
        cost,
        bounds: bounds(LateralCorridor::road(10.2, CAR.width)),
    };
    let guess = (0..K)
        .map(|_| ControlInput::new(rng.random_range(-1.0..0.4), rng.random_range(-0.6..0.6)))
        .collect();
    (spec, guess)
}

fn cost_of(spec: &OcpSpec, controls: &[ControlInput]) -> f64 {
    spec.cost.total_cost(&rollout(spec.initial, controls, spec.dt).unwrap()).unwrap()
}

fn near_kink(spec: &OcpSpec, plan: &Plan, margin: f64) -> bool {
    plan.states[..K].iter().any(|x| {
        let gap = spec.cost.beta * x.x3 - x.x4.abs();
        gap.abs() < margin || (x.x4.abs() < margin && gap < 0.0)
    })
}

fn obstacle_share(spec: &OcpSpec, controls: &[ControlInput]) -> f64 {
    let mut no_obstacles = spec.clone();
    no_obstacles.cost = CostModel::new(
        spec.cost.weights,
        *spec.cost.ellipsoid(),
        spec.cost.beta,
        spec.cost.targets,
        spec.cost.u1_prev,
        spec.cost.ego(),
        Vec::new(),
    );
    cost_of(spec, controls) - cost_of(&no_obstacles, controls)
}

fn gradient_check() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clock = Instant::now();
    let h = 1e-6;
    let (mut checked, mut skipped) = (0, 0);
    let mut worst = 0.0f64;
    while checked < 100 {
        let (spec, guess) = obstacle_instance(&mut rng);
        let mut ws = SolverWorkspace::new(K);
        ws.load(&spec, &guess).unwrap();
        let plan = ws.plan(0.0, T);
        if near_kink(&spec, &plan, 1e-3) || obstacle_share(&spec, &plan.controls) < 1e-3 {
            skipped += 1;
            continue;
        }
        costate_sweep(&mut ws, &spec);
        let g = reduced_gradient(&mut ws, &spec);
        let mut fd = vec![0.0; 2 * K];
        for (i, slot) in fd.iter_mut().enumerate() {
            let bump = |sign: f64| {
                let mut u = plan.controls.clone();
                let c = &mut u[i / 2];
                if i % 2 == 0 {
                    c.u1 += sign * h;
                } else {
                    c.u2 += sign * h;
                }
                cost_of(&spec, &u)
            };
            *slot = (bump(1.0) - bump(-1.0)) / (2.0 * h);
        }
        let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = fd.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(err / norm.max(1e-12));
        checked += 1;
    }
    let elapsed = clock.elapsed().as_secs_f64();
    verdict(
        worst < 1e-5 && elapsed < 30.0,
        format!(
            "worst relative error {worst:.1e} on 100 instances with active obstacles \
             ({skipped} near-kink or obstacle-free draws skipped), {elapsed:.2} s"
        ),
    )
}

// ---------------------------------------------------------------- 4

/// Obstacle-free, coupling-free instance: the cost is a convex quadratic in
/// the controls.
fn convex_instance(rng: &mut ChaCha8Rng) -> OcpSpec {
    let x3 = rng.random_range(15.0..30.0);
    let weights = Weights {
        w5: 0.0,
        w6: 0.0,
        ..Weights::default()
    };
    OcpSpec {
        horizon: K,
        dt: T,
        t0: 0.0,
        initial: VehicleState::new(0.0, rng.random_range(3.0..7.0), x3, rng.random_range(-0.5..0.5)),
        cost: CostModel::new(
            weights,
            EllipsoidParams::default(),
            0.03,
            SpeedTargets {
                vd1: x3 + rng.random_range(-5.0..5.0),
                vd2: 0.0,
            },
            rng.random_range(-1.0..0.5),
            CAR,
            Vec::new(),
        ),
        bounds: bounds(LateralCorridor::road(10.2, CAR.width)),
    }
}

/// Feasible point closest to `u` in the step-by-step sense used by the bounds.
fn project(spec: &OcpSpec, u: &[f64]) -> Vec<f64> {
    let mut x = spec.initial;
    let mut out = vec![0.0; u.len()];
    for k in 0..spec.horizon {
        let (c, _) = clamp(ControlInput::new(u[2 * k], u[2 * k + 1]), &spec.limits(k, &x));
        out[2 * k] = c.u1;
        out[2 * k + 1] = c.u2;
        x = step(x, c, spec.dt).unwrap();
    }
    out
}

fn as_controls(u: &[f64]) -> Vec<ControlInput> {
    u.chunks(2).map(|c| ControlInput::new(c[0], c[1])).collect()
}

/// Long-run fixed-step projected gradient on the exact quadratic model of
/// the cost, recovered from cost values alone.
fn projected_gradient_oracle(spec: &OcpSpec) -> f64 {
    let n = 2 * spec.horizon;
    let j = |u: &[f64]| cost_of(spec, &as_controls(u));
    let zero = vec![0.0; n];
    let j0 = j(&zero);
    let unit = |i: usize, s: f64| {
        let mut u = zero.clone();
        u[i] = s;
        u
    };
    let jp: Vec<f64> = (0..n).map(|i| j(&unit(i, 1.0))).collect();
    let jm: Vec<f64> = (0..n).map(|i| j(&unit(i, -1.0))).collect();
    let b: Vec<f64> = (0..n).map(|i| 0.5 * (jp[i] - jm[i])).collect();
    let mut hess = vec![vec![0.0; n]; n];
    for i in 0..n {
        hess[i][i] = jp[i] + jm[i] - 2.0 * j0;
        for k in 0..i {
            let mut u = zero.clone();
            u[i] = 1.0;
            u[k] = 1.0;
            let v = j(&u) - jp[i] - jp[k] + j0;
            hess[i][k] = v;
            hess[k][i] = v;
        }
    }
    let lipschitz = hess
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut u = project(spec, &zero);
    for _ in 0..200_000 {
        let trial: Vec<f64> = (0..n)
            .map(|i| {
                let g = b[i] + hess[i].iter().zip(&u).map(|(h, x)| h * x).sum::<f64>();
                u[i] - g / lipschitz
            })
            .collect();
        u = project(spec, &trial);
    }
    j(&u)
}

fn solver_contract() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let settings = SolverSettings {
        time_budget: None,
        ..SolverSettings::default()
    };
    let mut infeasible = 0;
    let mut non_decreasing = 0;
    let mut instances = 0;
    let mut check = |spec: &OcpSpec, guess: &[ControlInput]| {
        let mut costs = Vec::new();
        let mut bad = false;
        let result = solve_observed(spec, guess, &settings, |it| {
            costs.push(it.cost);
            let mut x = spec.initial;
            for (k, u) in it.controls.iter().enumerate() {
                bad |= it.states[k] != x || !spec.limits(k, &x).contains(u);
                x = step(x, *u, spec.dt).unwrap();
            }
            bad |= it.states[spec.horizon] != x;
        });
        let (plan, report) = result.unwrap();
        bad |= !plan.is_consistent();
        instances += 1;
        infeasible += bad as usize;
        non_decreasing += costs.windows(2).any(|w| !(w[1] < w[0])) as usize;
        report.final_cost
    };
    for _ in 0..40 {
        let (spec, guess) = obstacle_instance(&mut rng);
        check(&spec, &guess);
    }
    let mut worst_gap = 0.0f64;
    for _ in 0..6 {
        let spec = convex_instance(&mut rng);
        let j = check(&spec, &vec![ControlInput::ZERO; K]);
        worst_gap = worst_gap.max((j - projected_gradient_oracle(&spec)).abs());
    }
    verdict(
        infeasible == 0 && non_decreasing == 0 && worst_gap <= 1e-4,
        format!(
            "{instances} instances: {infeasible} with an infeasible iterate, {non_decreasing} with a \
             non-decreasing accepted cost; convex instances within {worst_gap:.1e} of the oracle"
        ),
    )
}

// ---------------------------------------------------------------- 5

fn solve_speed(times: &[f64], label: &str) -> Verdict {
    if times.is_empty() {
        return verdict(false, "no density-200 solves recorded");
    }
    let median = 1e3 * percentile(times, 0.5);
    let p99 = 1e3 * percentile(times, 0.99);
    verdict(
        median <= 50.0 && p99 <= 500.0,
        format!(
            "{} solves from density 200 ({label}): median {median:.2} ms, 99th percentile {p99:.2} ms",
            times.len()
        ),
    )
}

// ---------------------------------------------------------------- 6, 10b, 11, 12

struct Safety {
    runs: Vec<(ScenarioConfig, Result<RunStatistics, String>)>,
}

impl Safety {
    fn ok(&self) -> impl Iterator<Item = &RunStatistics> {
        self.runs.iter().filter_map(|(_, r)| r.as_ref().ok())
    }
}

const SAFETY_DENSITIES: [f64; 6] = [50.0, 100.0, 150.0, 200.0, 250.0, 300.0];

fn simulate_safety(sims: &Simulations) -> Safety {
    let mut runs = Vec::new();
    for &d in &SAFETY_DENSITIES {
        for &seed in &sims.seeds {
            let cfg = sims.scenario(d, seed);
            let clock = Instant::now();
            let r = run(&cfg, RunOptions::default()).map(|o| o.stats).map_err(|e| e.to_string());
            eprintln!(
                "  density {d} seed {seed}: {} in {:.0} s",
                match &r {
                    Ok(s) => format!("flow {:.0} veh/h, {} plans, {} emergency", s.mean_flow, s.plans, s.emergency_plans),
                    Err(e) => format!("error {}", e.lines().next().unwrap_or("")),
                },
                clock.elapsed().as_secs_f64()
            );
            runs.push((cfg, r));
        }
    }
    Safety { runs }
}

fn safety(s: &Safety, label: &str) -> Verdict {
    let mut problems = Vec::new();
    for (cfg, r) in &s.runs {
        match r {
            Err(e) => problems.push(format!("d{} s{}: {}", cfg.density, cfg.seed, e.lines().next().unwrap_or(""))),
            Ok(st) if st.collisions + st.corridor_violations + st.speed_violations > 0 => problems.push(format!(
                "d{} s{}: {} collisions, {} corridor, {} speed",
                cfg.density, cfg.seed, st.collisions, st.corridor_violations, st.speed_violations
            )),
            Ok(_) => {}
        }
    }
    let steps: u64 = s.ok().map(|st| st.steps * st.vehicles as u64).sum();
    verdict(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} runs ({label}), {steps} vehicle-steps: no overlap, corridor or speed violation", s.runs.len())
        } else {
            format!("{label}: {}", problems.join("; "))
        },
    )
}

fn emergency_fraction(s: &Safety) -> (u64, u64, u64) {
    s.ok().fold((0, 0, 0), |(p, e, f), st| {
        (p + st.plans, e + st.emergency_plans, f + st.emergency_failures)
    })
}

fn jerk_p99(stats: &RunStatistics) -> f64 {
    let abs: Vec<f64> = stats.boundary_jerk1.iter().map(|j| j.abs()).collect();
    percentile(&abs, 0.99)
}

fn comfort(s: &Safety, sims: &Simulations) -> Verdict {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut regular_lo = f64::INFINITY;
    for st in s.ok() {
        lo = lo.min(st.u1_regular[0]).min(st.u1_emergency[0]);
        hi = hi.max(st.u1_regular[1]).max(st.u1_emergency[1]);
        regular_lo = regular_lo.min(st.u1_regular[0]);
    }
    let tol = 1e-9;
    let support_ok = lo >= -4.0 - tol && hi <= 0.5 + tol && regular_lo >= -2.0 - tol;

    let Some((base_cfg, Ok(base))) = s.runs.iter().find(|(c, _)| c.density == 100.0) else {
        return verdict(false, "no density-100 baseline run");
    };
    let mut ablated = base_cfg.clone();
    ablated.mpc.weights.w7 = 0.0;
    let (base_p99, ablation_p99) = match run(&ablated, RunOptions::default()) {
        Ok(out) => (jerk_p99(base), jerk_p99(&out.stats)),
        Err(e) => return verdict(false, format!("ablation run failed: {e}")),
    };
    verdict(
        support_ok && ablation_p99 > base_p99,
        format!(
            "u1 in [{lo:.3}, {hi:.3}], regular steps down to {regular_lo:.3}; plan-boundary jerk p99 \
             {base_p99:.3} -> {ablation_p99:.3} m/s³ with w7 = 0 (density 100, {})",
            sims.label()
        ),
    )
}

fn comparable(st: &RunStatistics) -> String {
    let mut st = st.clone();
    st.solve_times.clear();
    format!("{st:?}")
}

fn determinism(s: &Safety, sims: &Simulations) -> Verdict {
    let reruns: Vec<&(ScenarioConfig, Result<RunStatistics, String>)> = match sims.protocol {
        Protocol::Full => s.runs.iter().collect(),
        Protocol::Desk => s.runs.iter().filter(|(c, _)| c.density <= 150.0).collect(),
    };
    let mut mismatches = Vec::new();
    for (cfg, first) in &reruns {
        let Ok(first) = first else {
            mismatches.push(format!("d{} s{}: first run failed", cfg.density, cfg.seed));
            continue;
        };
        let opts = RunOptions {
            workers: 3,
            record_trajectories: false,
        };
        match run(cfg, opts) {
            Ok(out) if out.stats.digest == first.digest && comparable(&out.stats) == comparable(first) => {}
            Ok(_) => mismatches.push(format!("d{} s{}: outputs differ", cfg.density, cfg.seed)),
            Err(e) => mismatches.push(format!("d{} s{}: {e}", cfg.density, cfg.seed)),
        }
    }
    verdict(
        mismatches.is_empty(),
        if mismatches.is_empty() {
            format!("{} reruns with 3 workers match the 1-worker runs bit for bit", reruns.len())
        } else {
            mismatches.join("; ")
        },
    )
}

// ---------------------------------------------------------------- 7, 8

struct Sweep {
    rows: Vec<(f64, Option<f64>)>,
}

const SWEEP_DENSITIES: [f64; 10] = [50.0, 100.0, 150.0, 200.0, 250.0, 300.0, 350.0, 400.0, 450.0, 500.0];

fn simulate_sweep(sims: &Simulations, safety: &Safety) -> Sweep {
    let mut rows = Vec::new();
    for &d in &SWEEP_DENSITIES {
        let mut flows = Vec::new();
        let mut failed = false;
        for &seed in &sims.seeds {
            let reused = safety
                .runs
                .iter()
                .find(|(c, _)| c.density == d && c.seed == seed)
                .map(|(_, r)| r.clone());
            let r = reused.unwrap_or_else(|| {
                run(&sims.scenario(d, seed), RunOptions::default())
                    .map(|o| o.stats)
                    .map_err(|e| e.to_string())
            });
            match r {
                Ok(st) => flows.push(st.mean_flow),
                Err(_) => failed = true,
            }
        }
        let mean = (!failed).then(|| flows.iter().sum::<f64>() / flows.len() as f64);
        eprintln!("  density {d}: mean flow {mean:?}");
        rows.push((d, mean));
    }
    Sweep { rows }
}

fn flows(sweep: &Sweep) -> Option<Vec<(f64, f64)>> {
    sweep.rows.iter().map(|&(d, f)| f.map(|f| (d, f))).collect()
}

fn diagram_shape(sweep: &Sweep) -> Verdict {
    let Some(rows) = flows(sweep) else {
        return verdict(false, "a replication failed, no diagram");
    };
    let &(arg, peak) = rows.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let f = |d: f64| rows.iter().find(|r| r.0 == d).unwrap().1;
    let at200 = f(200.0);
    let pass = arg == 200.0
        && peak > 14000.0
        && f(50.0) < 0.5 * peak
        && f(500.0) < 0.5 * peak
        && (at200 - 18332.0).abs() <= 0.25 * 18332.0;
    let listing: Vec<String> = rows.iter().map(|(d, q)| format!("{d}:{q:.0}")).collect();
    verdict(pass, format!("peak {peak:.0} veh/h at {arg} veh/km; flows {}", listing.join(" ")))
}

fn slopes(sweep: &Sweep) -> Verdict {
    let Some(rows) = flows(sweep) else {
        return verdict(false, "a replication failed, no diagram");
    };
    // veh/h per veh/km is km/h; divide by 3.6 for m/s
    let fit = |lo: f64, hi: f64| {
        let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.0 >= lo && r.0 <= hi).copied().unzip();
        linear_slope(&x, &y) / 3.6
    };
    let under = fit(50.0, 150.0);
    let over = fit(250.0, 500.0);
    verdict(
        (24.0..=31.0).contains(&under) && (-18.0..=-10.0).contains(&over),
        format!("under-critical slope {under:.1} m/s, over-critical slope {over:.1} m/s"),
    )
}

// ---------------------------------------------------------------- 9

fn nudging() -> Verdict {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/nudging.toml");
    let cfg: ScenarioConfig = match std::fs::read_to_string(path).map(|t| toml::from_str(&t)) {
        Ok(Ok(cfg)) => cfg,
        Ok(Err(e)) => return verdict(false, format!("{path}: {e}")),
        Err(e) => return verdict(false, format!("{path}: {e}")),
    };
    let opts = RunOptions {
        workers: 1,
        record_trajectories: true,
    };
    let out = match run(&cfg, opts) {
        Ok(out) => out,
        Err(e) => return verdict(false, format!("run failed: {e}")),
    };
    let length = cfg.road_length;
    let mut odometer = [0.0f64; 3];
    let mut last = [f64::NAN; 3];
    let mut passed_at = None;
    let mut max_shift = 0.0f64;
    let mut rows = out.trajectories.iter().peekable();
    while let Some(first) = rows.peek() {
        let t = first.time;
        while let Some(r) = rows.next_if(|r| r.time == t) {
            let i = r.vehicle;
            if last[i].is_nan() {
                odometer[i] = r.x1;
            } else {
                let mut d = r.x1 - last[i];
                if d < -0.5 * length {
                    d += length;
                }
                odometer[i] += d;
            }
            last[i] = r.x1;
            if i > 0 {
                let start = cfg.vehicles.as_ref().unwrap()[i].x2;
                max_shift = max_shift.max((r.x2 - start).abs());
            }
        }
        if passed_at.is_none() && odometer[0] > odometer[1] && odometer[0] > odometer[2] {
            passed_at = Some(t);
        }
    }
    let st = &out.stats;
    let clean = st.collisions + st.corridor_violations + st.speed_violations == 0;
    verdict(
        passed_at.is_some_and(|t| t <= 30.0) && clean,
        format!(
            "EV ahead of both slower vehicles at t = {}, slower vehicles moved aside up to {max_shift:.2} m, \
             {} collisions",
            passed_at.map_or("never".to_string(), |t| format!("{t:.2} s")),
            st.collisions
        ),
    )
}

// ---------------------------------------------------------------- 10

fn scripted_lateral_emergency() -> Result<String, String> {
    let planner = Planner::new(MpcConfig::default()).map_err(|e| e.to_string())?;
    // the left neighbour announces a drift to 2.05 m from the ego while the
    // right neighbour, 2.15 m away, blocks the escape
    let ego_state = VehicleState::new(0.0, 5.1, 25.0, 0.0);
    let right = VehicleState::new(0.5, 5.1 - 2.15, 25.0, 0.0);
    let left = VehicleState::new(-0.5, 5.1 + 3.5, 25.0, 0.0);
    let mut states = vec![left];
    let mut s = left;
    for k in 0..K {
        s.x1 += T * s.x3;
        if k < 8 {
            s.x2 -= (3.5 - 2.05) / 8.0;
        }
        states.push(s);
    }
    let world = WorldSnapshot {
        step: 0,
        road_length: 1000.0,
        vehicles: vec![
            VehicleView {
                id: 0,
                dims: CAR,
                state: ego_state,
                broadcast: None,
            },
            VehicleView {
                id: 1,
                dims: CAR,
                state: right,
                broadcast: None,
            },
            VehicleView {
                id: 2,
                dims: CAR,
                state: left,
                broadcast: Some(Arc::new(Broadcast { start_step: 0, states })),
            },
        ],
    };
    let ego = EgoView {
        id: 0,
        dims: CAR,
        state: ego_state,
        v_des1: 25.0,
        step: 0,
        u1_prev: 0.0,
        previous: None,
    };
    let out = planner.plan(&ego, &world).map_err(|e| e.to_string())?;
    let detection = out.detection.ok_or("no detection on the first solve")?;
    if detection.kind != CollisionKind::Lateral {
        return Err(format!("detected {:?}, expected lateral", detection.kind));
    }
    if let Some(e) = out.emergency_failure {
        return Err(format!("emergency plan failed the detectors: {e}"));
    }
    let (spec, _, _) = planner.build_spec(&ego, &world).map_err(|e| e.to_string())?;
    if let Some(again) = planner.screen(&out.record.plan, &spec) {
        return Err(format!("emergency plan detected again: {again:?}"));
    }
    let drift = out
        .record
        .plan
        .states
        .iter()
        .map(|x| (x.x2 - ego_state.x2).abs())
        .fold(0.0, f64::max);
    if drift > 0.15 + 1e-9 {
        return Err(format!("emergency plan leaves x2(0) ± 0.15 m by {drift:.3} m"));
    }
    Ok(format!(
        "scripted side-by-side drift: lateral detection at step {}, emergency plan clean, |x2 - x2(0)| <= {drift:.3} m",
        detection.first_step
    ))
}

fn emergency_path(s: &Safety, label: &str) -> Verdict {
    let scripted = scripted_lateral_emergency();
    let (plans, emergencies, failures) = emergency_fraction(s);
    let fraction = if plans == 0 { f64::NAN } else { emergencies as f64 / plans as f64 };
    let pass = scripted.is_ok() && fraction <= 0.0005;
    let scripted = scripted.unwrap_or_else(|e| format!("scripted case failed: {e}"));
    verdict(
        pass,
        format!(
            "{scripted}; emergency plans {emergencies} of {plans} = {:.3}% ({failures} still detected) \
             over the safety runs ({label}), limit 0.05%",
            100.0 * fraction
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let full = std::env::var("LANEFREE_ACCEPTANCE").is_ok_and(|v| v == "full");
    let strict = std::env::var("LANEFREE_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let sims = if full {
        Simulations {
            protocol: Protocol::Full,
            duration: 300.0,
            seeds: vec![0, 1, 2, 3, 4],
        }
    } else {
        Simulations {
            protocol: Protocol::Desk,
            duration: 60.0,
            seeds: vec![0],
        }
    };
    let only: Option<Vec<usize>> = std::env::var("LANEFREE_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let wanted = |n: usize| only.as_ref().is_none_or(|o| o.contains(&n));
    let label = sims.label();
    let mut verdicts: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut record = |n: usize, name: &'static str, v: &dyn Fn() -> Verdict| {
        if !wanted(n) {
            return;
        }
        let v = v();
        println!("criterion {n:>2} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        verdicts.push((n, name, v));
    };

    record(1, "dynamics exactness", &dynamics_exactness);
    record(2, "gain design", &gain_design);
    record(3, "gradient correctness", &gradient_check);
    record(4, "solver contract", &solver_contract);

    let needs_runs = [5, 6, 7, 8, 10, 11, 12].into_iter().any(wanted);
    let safety_runs = if needs_runs {
        eprintln!("safety runs ({label})");
        simulate_safety(&sims)
    } else {
        Safety { runs: Vec::new() }
    };
    let d200: Vec<f64> = safety_runs
        .runs
        .iter()
        .filter(|(c, _)| c.density == 200.0)
        .filter_map(|(_, r)| r.as_ref().ok())
        .flat_map(|st| st.solve_times.iter().copied())
        .collect();
    record(5, "solve speed", &|| solve_speed(&d200, &label));
    record(6, "safety", &|| safety(&safety_runs, &label));

    if sims.protocol == Protocol::Full {
        if wanted(7) || wanted(8) {
            eprintln!("density sweep ({label})");
            let sweep = simulate_sweep(&sims, &safety_runs);
            record(7, "fundamental diagram shape", &|| diagram_shape(&sweep));
            record(8, "slopes", &|| slopes(&sweep));
        }
    } else {
        let skipped = "not executed under the desk protocol (the ten-density, five-seed, 300 s sweep needs \
                       LANEFREE_ACCEPTANCE=full)";
        record(7, "fundamental diagram shape", &|| verdict(false, skipped));
        record(8, "slopes", &|| verdict(false, skipped));
    }

    record(9, "nudging episode", &nudging);
    record(10, "emergency path", &|| emergency_path(&safety_runs, &label));
    record(11, "comfort", &|| comfort(&safety_runs, &sims));
    record(12, "determinism", &|| determinism(&safety_runs, &sims));

    let failed: Vec<String> = verdicts.iter().filter(|v| !v.2.pass).map(|v| v.0.to_string()).collect();
    println!(
        "{} of {} criteria pass ({label}){}",
        verdicts.len() - failed.len(),
        verdicts.len(),
        if failed.is_empty() { String::new() } else { format!("; failing: {}", failed.join(", ")) }
    );
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
