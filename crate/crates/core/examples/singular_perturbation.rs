//! Gap between the full and reduced closed loops as the fast time scale
//! shrinks.

use gridgame::engine::{run_scenario, Variant};
use gridgame::scenario::Scenario;

fn main() -> gridgame::Result<()> {
    for eps in [1e-2, 1e-3, 1e-4] {
        let model = Scenario::ring4().with_overrides(None, Some(1.0), Some(eps)).build()?;
        let full = run_scenario(&model, Variant::Full)?;
        let reduced = run_scenario(&model, Variant::Reduced)?;
        let u = full.column("ctrl.u.1").unwrap();
        let gap = full
            .rows
            .iter()
            .zip(&reduced.rows)
            .map(|(a, b)| (a[u..u + 4].iter().zip(&b[u..u + 4])).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        println!("eps {eps:.0e}: sup |u_full - u_reduced| over [0, 1] s = {gap:.4e}");
    }
    Ok(())
}
