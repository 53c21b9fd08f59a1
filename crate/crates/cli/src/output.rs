//! Delimited tables and the run manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use lanefree::dynamics::Plan;
use lanefree::simulator::{percentile, DiagramRow, Histogram, RunStatistics, TrajectoryRow};
use lanefree::solver::OcpSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const DETECTORS: &str = "detectors.csv";
pub const HISTOGRAMS: &str = "histograms.csv";
pub const MANIFEST: &str = "manifest.json";
pub const DIAGRAM: &str = "fundamental_diagram.csv";
pub const REPLICATIONS: &str = "replications.csv";
pub const PLAN: &str = "plan.csv";
pub const SOLVE_REPORT: &str = "solve_report.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    lanefree::simulator::hex(&Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub lanefree: String,
    pub output_format: u32,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            lanefree: env!("CARGO_PKG_VERSION").into(),
            output_format: 1,
        }
    }
}

/// Solve wall times in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTimes {
    pub count: usize,
    pub min_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
    pub max_ms: f64,
}

impl SolveTimes {
    pub fn from_seconds(times: &[f64]) -> Self {
        let ms = |q: f64| {
            if times.is_empty() {
                0.0
            } else {
                1e3 * percentile(times, q)
            }
        };
        Self {
            count: times.len(),
            min_ms: ms(0.0),
            median_ms: ms(0.5),
            p99_ms: ms(0.99),
            max_ms: ms(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub density: f64,
    pub seed: u64,
    pub vehicles: usize,
    pub steps: u64,
    pub mean_flow: f64,
    pub plans: u64,
    pub emergency_plans: u64,
    pub emergency_failures: u64,
    pub collisions: u64,
    pub corridor_violations: u64,
    pub speed_violations: u64,
    pub digest: String,
}

impl From<&RunStatistics> for RunSummary {
    fn from(s: &RunStatistics) -> Self {
        Self {
            density: s.density,
            seed: s.seed,
            vehicles: s.vehicles,
            steps: s.steps,
            mean_flow: s.mean_flow,
            plans: s.plans,
            emergency_plans: s.emergency_plans,
            emergency_failures: s.emergency_failures,
            collisions: s.collisions,
            corridor_violations: s.corridor_violations,
            speed_violations: s.speed_violations,
            digest: s.digest.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub seed: Option<u64>,
    pub versions: Versions,
    /// File names relative to the manifest.
    pub outputs: Vec<String>,
    pub solve_times: SolveTimes,
    pub runs: Vec<RunSummary>,
    pub failures: Vec<String>,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

fn csv_error(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

pub fn write_trajectories(path: &Path, rows: &[TrajectoryRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()
}

#[derive(Serialize, Deserialize)]
pub struct DetectorRow {
    pub position: f64,
    pub count: u64,
    pub window: f64,
    pub flow: f64,
    pub mean_flow: f64,
}

pub fn write_detectors(path: &Path, stats: &RunStatistics) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for d in &stats.detectors {
        w.serialize(DetectorRow {
            position: d.position,
            count: d.count,
            window: d.window,
            flow: d.flow,
            mean_flow: stats.mean_flow,
        })
        .map_err(csv_error)?;
    }
    w.flush()
}

#[derive(Serialize, Deserialize)]
pub struct HistogramRow {
    pub quantity: String,
    pub lo: f64,
    pub hi: f64,
    pub count: u64,
}

pub fn write_histograms(path: &Path, stats: &RunStatistics) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    let h = &stats.histograms;
    let all: [(&str, &Histogram); 4] = [("u1", &h.u1), ("u2", &h.u2), ("jerk1", &h.jerk1), ("jerk2", &h.jerk2)];
    for (name, hist) in all {
        let span_hi = hist.lo + hist.bin_width * hist.counts.len() as f64;
        let mut row = |lo: f64, hi: f64, count: u64| {
            w.serialize(HistogramRow {
                quantity: name.into(),
                lo,
                hi,
                count,
            })
        };
        row(f64::NEG_INFINITY, hist.lo, hist.below).map_err(csv_error)?;
        for (i, &c) in hist.counts.iter().enumerate() {
            let (lo, hi) = hist.bin_edges(i);
            row(lo, hi, c).map_err(csv_error)?;
        }
        row(span_hi, f64::INFINITY, hist.above).map_err(csv_error)?;
    }
    w.flush()
}

pub fn write_diagram(path: &Path, rows: &[DiagramRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()
}

#[derive(Serialize, Deserialize)]
pub struct ReplicationRow {
    pub density: f64,
    pub seed: u64,
    pub status: String,
    pub mean_flow: f64,
    pub plans: u64,
    pub emergency_plans: u64,
    pub digest: String,
}

pub fn write_replications(path: &Path, rows: &[ReplicationRow]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()
}

/// One row per step: state, then the control and bounds applied from it.
pub fn write_plan(path: &Path, spec: &OcpSpec, plan: &Plan) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record([
        "k", "t", "x1", "x2", "x3", "x4", "u1", "u2", "u_min1", "u_max1", "u_min2", "u_max2",
    ])
    .map_err(csv_error)?;
    for (k, s) in plan.states.iter().enumerate() {
        let mut rec = vec![
            k.to_string(),
            (spec.t0 + k as f64 * spec.dt).to_string(),
            s.x1.to_string(),
            s.x2.to_string(),
            s.x3.to_string(),
            s.x4.to_string(),
        ];
        match plan.controls.get(k) {
            Some(u) => {
                let lim = spec.limits(k, s);
                for v in [u.u1, u.u2, lim.u_min1, lim.u_max1, lim.u_min2, lim.u_max2] {
                    rec.push(v.to_string());
                }
            }
            None => rec.extend(std::iter::repeat_n(String::new(), 6)),
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()
}
