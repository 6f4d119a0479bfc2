//! Penalty weights against the multipliers the boxes need at the
//! equilibrium, before and after the load step.

use gridgame::engine::segment_oracle;
use gridgame::scenario::Scenario;

fn main() -> gridgame::Result<()> {
    let model = Scenario::ring4().build()?;
    for (k, game) in model.segment_games()?.iter().enumerate() {
        let o = segment_oracle(game)?;
        println!("segment {}", k + 1);
        for i in 0..game.n() {
            println!(
                "  agent {}: rho_V {:8.1}  needed {:9.3}  sufficient-bound slack {:9.3}",
                i + 1,
                game.penalties.rho_v[i],
                o.penalty.voltage_required[i],
                o.penalty.voltage_slack[i]
            );
        }
        println!("  constrained V*: {:.4?}", &o.constrained.x_star[4..8]);
        println!("  penalized   V : {:.4?}", &o.penalized.x_star[4..8]);
    }
    Ok(())
}
