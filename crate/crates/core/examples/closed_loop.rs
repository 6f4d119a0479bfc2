//! Full closed-loop run of the four-DGU scenario with the load step,
//! printing the checks and writing the outputs to a temporary directory.

use gridgame::engine::{run_scenario, Variant};
use gridgame::scenario::Scenario;

fn main() -> gridgame::Result<()> {
    let t_end = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10.0);
    let model = Scenario::ring4().with_overrides(None, Some(t_end), None).build()?;
    let out = run_scenario(&model, Variant::Full)?;
    let dir = std::env::temp_dir().join("gridgame-closed-loop");
    out.write(&dir)?;
    println!("{} samples written to {}", out.rows.len(), dir.display());
    for c in &out.report.checks {
        println!("{:5} {:20} {:.3e} (threshold {:.1e})", if c.pass { "ok" } else { "FAIL" }, c.name, c.value, c.threshold);
    }
    for w in &out.report.flags.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
