//! Normalized equilibrium by extragradient, compared with the penalized
//! rest point of the controller.

use gridgame::oracle::{solve_penalized, solve_vi, ViOptions};
use gridgame::scenario::Scenario;

fn main() -> gridgame::Result<()> {
    let game = Scenario::ring4().build()?.game;
    let sol = solve_vi(&game, ViOptions::default())?;
    println!("extragradient: {} iterations, residual {:.2e}", sol.iterations, sol.residual);
    println!("u*      {:.4?}", sol.u_star);
    println!("x*      {:.4?}", sol.x_star);
    println!("lambda* {:.4?}", sol.lambda_star);
    println!("gamma*  {:.4?}", sol.gamma_star);
    println!("active boxes (index, multiplier): {:.3?}", sol.box_multipliers);
    let pen = solve_penalized(&game, Some(&sol))?;
    println!("penalized rest point x: {:.4?}", pen.x_star);
    Ok(())
}
