//! Incidence matrix, Laplacian and line managers of the four-DGU ring.

use gridgame::topology::{Graph, MicrogridTopology};

fn main() -> gridgame::Result<()> {
    let ring = Graph::ring(4)?;
    let topo = MicrogridTopology::with_head_managers(ring)?;
    println!("incidence B:{}", topo.incidence_matrix());
    println!("laplacian B B^T:{}", topo.laplacian());
    for i in 0..topo.n() {
        println!("agent {} manages lines {:?}, local coordinates {:?}", i + 1, topo.managed_lines(i), topo.local_to_global(i));
    }
    Ok(())
}
