//! Prints the obstacle potential around two obstacles as `x1,x2,cost` rows.
//!
//! The ego drives at (30, 0.75) m/s; the obstacles sit at (30, 2.5) m with
//! 25 m/s and at (40, 7.5) m with 35 m/s, using 0.35 s and 0.5 s time gaps.
//!
//! ```text
//! cargo run -p lanefree --example ellipsoid_field > field.csv
//! ```

use lanefree::dynamics::VehicleState;
use lanefree::objective::{ellipsoid_center, obstacle_cost, EllipsoidParams, VehicleDims};

fn main() {
    let p = EllipsoidParams {
        omega1: 0.35,
        ..EllipsoidParams::default()
    };
    let car = VehicleDims::new(4.25, 1.8);
    let obstacles = [VehicleState::new(30.0, 2.5, 25.0, 0.0), VehicleState::new(40.0, 7.5, 35.0, 0.0)];
    for o in &obstacles {
        eprintln!(
            "obstacle at ({}, {}): ellipsoid centre x1 = {:.3}",
            o.x1,
            o.x2,
            ellipsoid_center(o.x1, 30.0, o.x3, p.omega1)
        );
    }
    println!("x1,x2,cost");
    for i in 0..=140 {
        let x1 = i as f64 * 0.5;
        for j in 0..=51 {
            let x2 = j as f64 * 0.2;
            let ego = VehicleState::new(x1, x2, 30.0, 0.75);
            let c: f64 = obstacles.iter().map(|o| obstacle_cost(&ego, o, car, car, &p)).sum();
            println!("{x1},{x2:.1},{c:.6}");
        }
    }
}
