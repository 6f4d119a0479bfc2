//! Open-loop plant response to a load step, integrated with RK4.

use gridgame::integrate::{Integrator, Method, OdeSystem};
use gridgame::plant::Microgrid;
use gridgame::scenario::Scenario;
use nalgebra::DVector;

struct OpenLoop {
    grid: Microgrid,
    u: DVector<f64>,
}

impl OdeSystem for OpenLoop {
    fn dim(&self) -> usize {
        self.grid.state_dim()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        self.grid.rhs_into(y, self.u.as_slice(), dy);
    }
}

fn main() -> gridgame::Result<()> {
    let model = Scenario::ring4().build()?;
    let grid = model.game.grid.clone();
    let u = DVector::from_iterator(grid.n(), grid.params.dgus.iter().map(|d| d.v_ref));
    let mut y = grid.equilibrium(&u)?.to_vector().as_slice().to_vec();
    let stepped = OpenLoop { grid: grid.with_load_step(3.0, 3.0)?, u: u.clone() };
    let target = stepped.grid.equilibrium(&u)?;
    println!("t [s]    V_1 [V]     V_2 [V]     V_3 [V]     V_4 [V]");
    Integrator::new(Method::Rk4 { dt: 1e-5 }, 0.02).run(&stepped, 0.0, 0.2, &mut y, true, |t, s| {
        println!("{t:.2}  {:10.4}  {:10.4}  {:10.4}  {:10.4}", s[4], s[5], s[6], s[7]);
    })?;
    println!("steady state after the step: {:.4}", target.voltage.transpose());
    Ok(())
}
