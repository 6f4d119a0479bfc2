//! Structural margins of the game and the sampled monotonicity check.

use gridgame::game::{price_positivity_margin, monotonicity_margins};
use gridgame::scenario::Scenario;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gridgame::Result<()> {
    let game = Scenario::ring4().build()?.game;
    println!("price positivity margin: {:.5}", price_positivity_margin(game.params(), &game.price));
    let v_ref: Vec<f64> = game.params().dgus.iter().map(|d| d.v_ref).collect();
    println!("monotonicity margins: {:.4?}", monotonicity_margins(&game.agents, &game.price, &v_ref));
    let jac = game.pseudo_gradient_jacobian();
    let sym = (&jac + jac.transpose()) * 0.5;
    println!("min eigenvalue of the symmetrized Jacobian: {:.6}", sym.symmetric_eigenvalues().min());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("sampled by finite differences: {:.6?}", game.sampled_min_eigenvalues(&mut rng, 5)?);
    Ok(())
}
