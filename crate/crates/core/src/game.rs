//! The aggregative energy-trading game played by the DGUs.
//!
//! Agent `i` decides `(u_i, x_i)` with `x_i = (I_i, V_i, I_l[E_i])` and pays
//!
//! ```text
//! f_i = a_u/2 (u_i - u_i^r)^2 + 1/2 |x_i - x_i^r|^2_{A_xi} - (l - p_r sum_j I_j) V_i^r I_i
//! ```
//!
//! subject to the network equalities `A x = s_A`, the local equality
//! `D_i^T x_i = u_i` and box constraints on `V_i` and the managed line
//! currents. Boxes are relaxed by the exact penalty
//! `rho (max(lo - v, 0) + max(v - hi, 0))`.
//!
//! Global vectors use the ordering `(u, I, V, I_l)`; `x` alone is `(I, V, I_l)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::plant::{Microgrid, PlantParams};
use crate::topology::Graph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceParams {
    /// Base price `l`.
    pub base: f64,
    /// Price sensitivity `p_r` to the aggregate generated current.
    pub sensitivity: f64,
}

impl PriceParams {
    pub fn price(&self, aggregate_current: f64) -> f64 {
        self.base - self.sensitivity * aggregate_current
    }
}

/// Per-agent objective weights. `alpha_line` applies to every line the
/// agent manages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentWeights {
    pub r: f64,
    pub alpha_u: f64,
    pub alpha_i: f64,
    pub alpha_v: f64,
    pub alpha_line: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub rho_v: Vec<f64>,
    pub rho_line: Vec<f64>,
}

/// Closed real interval; degenerate for single-valued subgradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Element closest to zero.
    pub fn min_norm(&self) -> f64 {
        0.0_f64.clamp(self.lo, self.hi)
    }

    /// Distance from `-offset` to the interval, i.e. `dist(0, offset + self)`.
    pub fn shifted_distance(&self, offset: f64) -> f64 {
        let (lo, hi) = (offset + self.lo, offset + self.hi);
        if lo > 0.0 {
            lo
        } else if hi < 0.0 {
            -hi
        } else {
            0.0
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        debug_assert!(s >= 0.0);
        Self {
            lo: self.lo * s,
            hi: self.hi * s,
        }
    }
}

/// `rho (max(lo - v, 0) + max(v - hi, 0))`.
pub fn penalty_value(value: f64, lo: f64, hi: f64, rho: f64) -> f64 {
    rho * ((lo - value).max(0.0) + (value - hi).max(0.0))
}

/// Subdifferential of [`penalty_value`] in `value`.
pub fn penalty_subgradient(value: f64, lo: f64, hi: f64, rho: f64) -> Interval {
    if value < lo {
        Interval::point(-rho)
    } else if value == lo {
        Interval { lo: -rho, hi: 0.0 }
    } else if value < hi {
        Interval::point(0.0)
    } else if value == hi {
        Interval { lo: 0.0, hi: rho }
    } else {
        Interval::point(rho)
    }
}

/// Proximal map of `t * rho * dist(., [lo, hi])`: moves `value` toward the
/// box by at most `t * rho`.
pub fn penalty_prox(value: f64, lo: f64, hi: f64, t_rho: f64) -> f64 {
    if value < lo {
        (value + t_rho).min(lo)
    } else if value > hi {
        (value - t_rho).max(hi)
    } else {
        value
    }
}

/// Coupling and local equality data.
#[derive(Debug, Clone)]
pub struct ConstraintData {
    /// `A_i`, `(n+m) x (2+|E_i|)`: columns of `A` for agent `i`'s local state.
    pub a_blocks: Vec<DMatrix<f64>>,
    /// `s_{A_i}`: agent `i`'s share of `s_A` (its own load current).
    pub s_blocks: Vec<DVector<f64>>,
    /// `D_i` with `D_i^T x_i = R_i I_i + V_i`.
    pub d_vectors: Vec<DVector<f64>>,
    /// `A`, `(n+m) x (2n+m)` on the global `(I, V, I_l)` ordering.
    pub a_full: DMatrix<f64>,
    pub s_full: DVector<f64>,
}

/// Rows `0..n`: `I + B I_l - Z_L^{-1} V = I_L`; rows `n..n+m`:
/// `Rl I_l + B^T V = 0`.
pub fn build_constraints(grid: &Microgrid) -> ConstraintData {
    let (n, m) = (grid.n(), grid.m());
    let p = n + m;
    let params = &grid.params;
    let mut a = DMatrix::zeros(p, 2 * n + m);
    let mut s = DVector::zeros(p);
    for (i, d) in params.dgus.iter().enumerate() {
        a[(i, i)] = 1.0;
        a[(i, n + i)] = -1.0 / d.load_impedance;
        s[i] = d.load_current;
    }
    for (k, (e, l)) in grid.topology.graph().edges().iter().zip(&params.lines).enumerate() {
        a[(e.head, 2 * n + k)] = 1.0;
        a[(e.tail, 2 * n + k)] = -1.0;
        a[(n + k, 2 * n + k)] = l.resistance;
        a[(n + k, n + e.head)] = 1.0;
        a[(n + k, n + e.tail)] = -1.0;
    }
    let mut a_blocks = Vec::with_capacity(n);
    let mut s_blocks = Vec::with_capacity(n);
    let mut d_vectors = Vec::with_capacity(n);
    for i in 0..n {
        let cols = grid.topology.local_to_global(i);
        a_blocks.push(a.select_columns(cols.iter()));
        let mut si = DVector::zeros(p);
        si[i] = s[i];
        s_blocks.push(si);
        let mut di = DVector::zeros(cols.len());
        di[0] = params.dgus[i].resistance;
        di[1] = 1.0;
        d_vectors.push(di);
    }
    ConstraintData {
        a_blocks,
        s_blocks,
        d_vectors,
        a_full: a,
        s_full: s,
    }
}

/// Everything that defines the game on a given microgrid.
#[derive(Debug, Clone)]
pub struct GameDefinition {
    pub grid: Microgrid,
    /// Communication graph of the distributed controller.
    pub comm: Graph,
    pub price: PriceParams,
    pub agents: Vec<AgentWeights>,
    pub penalties: PenaltyParams,
    constraints: ConstraintData,
    line_weights: Vec<f64>,
}

impl GameDefinition {
    pub fn new(
        grid: Microgrid,
        comm: Option<Graph>,
        price: PriceParams,
        agents: Vec<AgentWeights>,
        penalties: PenaltyParams,
    ) -> Result<Self> {
        let comm = comm.unwrap_or_else(|| grid.topology.graph().clone());
        check_len("agent weight records", grid.n(), agents.len())?;
        check_len("communication graph nodes", grid.n(), comm.node_count())?;
        check_len("voltage penalties", grid.n(), penalties.rho_v.len())?;
        check_len("line penalties", grid.m(), penalties.rho_line.len())?;
        let constraints = build_constraints(&grid);
        let line_weights = (0..grid.m())
            .map(|k| agents[grid.topology.manager(k)].alpha_line)
            .collect();
        let game = Self {
            grid,
            comm,
            price,
            agents,
            penalties,
            constraints,
            line_weights,
        };
        let problems = game.violations();
        if problems.is_empty() {
            Ok(game)
        } else {
            Err(Error::Params(problems.join("; ")))
        }
    }

    /// Every structural problem: positivity, price and monotonicity margins.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.price.base > 0.0) {
            out.push(format!("base price must be positive (got {})", self.price.base));
        }
        if !(self.price.sensitivity >= 0.0) {
            out.push(format!("price sensitivity must be non-negative (got {})", self.price.sensitivity));
        }
        for (i, w) in self.agents.iter().enumerate() {
            for (name, v) in [
                ("r", w.r),
                ("alpha_u", w.alpha_u),
                ("alpha_i", w.alpha_i),
                ("alpha_v", w.alpha_v),
                ("alpha_line", w.alpha_line),
            ] {
                if !(v > 0.0) {
                    out.push(format!("agent {}: {name} must be positive (got {v})", i + 1));
                }
            }
        }
        for (i, &rho) in self.penalties.rho_v.iter().enumerate() {
            if !(rho > 0.0) {
                out.push(format!("agent {}: rho_v must be positive (got {rho})", i + 1));
            }
        }
        for (k, &rho) in self.penalties.rho_line.iter().enumerate() {
            if !(rho > 0.0) {
                out.push(format!("line {}: rho_line must be positive (got {rho})", k + 1));
            }
        }
        let a1 = price_positivity_margin(&self.grid.params, &self.price);
        if !(a1 > 0.0) {
            out.push(format!("price positivity margin is {a1} (must be > 0)"));
        }
        for (i, m) in self.monotonicity_margins().iter().enumerate() {
            if !(*m > 0.0) {
                out.push(format!("agent {}: monotonicity margin is {m} (must be > 0)", i + 1));
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn m(&self) -> usize {
        self.grid.m()
    }

    /// Coupling-constraint count `n + m`.
    pub fn p(&self) -> usize {
        self.grid.n() + self.grid.m()
    }

    /// Length of the decision vector `(u, x)`.
    pub fn decision_dim(&self) -> usize {
        3 * self.n() + self.m()
    }

    pub fn constraints(&self) -> &ConstraintData {
        &self.constraints
    }

    pub fn params(&self) -> &PlantParams {
        &self.grid.params
    }

    /// `alpha_Il` for line `k` (the managing agent's weight).
    pub fn line_weight(&self, k: usize) -> f64 {
        self.line_weights[k]
    }

    /// Same game on a microgrid with new load parameters.
    pub fn with_grid(&self, grid: Microgrid) -> Result<Self> {
        Self::new(
            grid,
            Some(self.comm.clone()),
            self.price,
            self.agents.clone(),
            self.penalties.clone(),
        )
    }

    /// Same game with every `r_i` multiplied by `factor`.
    pub fn with_scaled_r(&self, factor: f64) -> Result<Self> {
        let mut agents = self.agents.clone();
        for a in &mut agents {
            a.r *= factor;
        }
        Self::new(
            self.grid.clone(),
            Some(self.comm.clone()),
            self.price,
            agents,
            self.penalties.clone(),
        )
    }

    /// Cost of agent `i` at local decision `(u_i, x_i)` given the aggregate
    /// generated current.
    pub fn cost(&self, i: usize, u_i: f64, x_i: &[f64], aggregate_current: f64) -> f64 {
        let d = &self.grid.params.dgus[i];
        let w = &self.agents[i];
        let lines = self.grid.topology.managed_lines(i);
        let mut quad = w.alpha_u * (u_i - d.u_ref).powi(2)
            + w.alpha_i * (x_i[0] - d.i_ref).powi(2)
            + w.alpha_v * (x_i[1] - d.v_ref).powi(2);
        for (j, &k) in lines.iter().enumerate() {
            quad += self.line_weights[k] * (x_i[2 + j] - self.grid.params.lines[k].i_ref).powi(2);
        }
        0.5 * quad - self.price.price(aggregate_current) * d.v_ref * x_i[0]
    }

    /// Penalty `g_i(x_i)` of agent `i`.
    pub fn penalty(&self, i: usize, x_i: &[f64]) -> f64 {
        let d = &self.grid.params.dgus[i];
        let mut g = penalty_value(x_i[1], d.v_min, d.v_max, self.penalties.rho_v[i]);
        for (j, &k) in self.grid.topology.managed_lines(i).iter().enumerate() {
            let l = &self.grid.params.lines[k];
            g += penalty_value(x_i[2 + j], l.i_min, l.i_max, self.penalties.rho_line[k]);
        }
        g
    }

    /// Unweighted smooth gradient of `f_i` in `x_i`, with the aggregate
    /// current supplied by the caller (the true sum, or a local estimate).
    pub fn local_smooth_gradient(&self, i: usize, x_i: &[f64], aggregate: f64, out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.local_smooth_gradient_coord(i, c, x_i[c], x_i[0], aggregate);
        }
    }

    /// Coordinate `c` of [`Self::local_smooth_gradient`]; `value` is `x_i[c]`
    /// and `current` is `x_i[0]`.
    #[inline]
    pub fn local_smooth_gradient_coord(&self, i: usize, c: usize, value: f64, current: f64, aggregate: f64) -> f64 {
        let d = &self.grid.params.dgus[i];
        match c {
            0 => {
                let w = &self.agents[i];
                w.alpha_i * (current - d.i_ref) - d.v_ref * self.price.price(aggregate)
                    + self.price.sensitivity * d.v_ref * current
            }
            1 => self.agents[i].alpha_v * (value - d.v_ref),
            _ => {
                let k = self.grid.topology.managed_lines(i)[c - 2];
                self.line_weights[k] * (value - self.grid.params.lines[k].i_ref)
            }
        }
    }

    /// Subdifferential of `g_i` at `x_i`, one interval per local coordinate
    /// (the current coordinate is unpenalized).
    pub fn local_penalty_subgradient(&self, i: usize, x_i: &[f64], out: &mut [Interval]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.local_penalty_coord(i, c, x_i[c]);
        }
    }

    #[inline]
    pub fn local_penalty_coord(&self, i: usize, c: usize, value: f64) -> Interval {
        match self.local_box(i, c) {
            Some((lo, hi, rho)) => penalty_subgradient(value, lo, hi, rho),
            None => Interval::point(0.0),
        }
    }

    /// `(lo, hi, rho)` for local coordinate `c` of agent `i`, if boxed.
    #[inline]
    pub fn local_box(&self, i: usize, c: usize) -> Option<(f64, f64, f64)> {
        match c {
            0 => None,
            1 => {
                let d = &self.grid.params.dgus[i];
                Some((d.v_min, d.v_max, self.penalties.rho_v[i]))
            }
            _ => {
                let k = self.grid.topology.managed_lines(i)[c - 2];
                let l = &self.grid.params.lines[k];
                Some((l.i_min, l.i_max, self.penalties.rho_line[k]))
            }
        }
    }

    /// Pseudo-gradient `F_r(u, x) = col(r_i grad_(u_i, x_i) f_i)` (smooth part
    /// only) on the global `(u, I, V, I_l)` ordering.
    pub fn pseudo_gradient(&self, u: &[f64], x: &[f64]) -> Result<DVector<f64>> {
        let (n, m) = (self.n(), self.m());
        check_len("control input", n, u.len())?;
        check_len("state", 2 * n + m, x.len())?;
        let mut f = DVector::zeros(3 * n + m);
        self.pseudo_gradient_into(u, x, f.as_mut_slice());
        Ok(f)
    }

    pub(crate) fn pseudo_gradient_into(&self, u: &[f64], x: &[f64], f: &mut [f64]) {
        let (n, m) = (self.n(), self.m());
        let aggregate: f64 = x[..n].iter().sum();
        let params = &self.grid.params;
        for i in 0..n {
            let d = &params.dgus[i];
            let w = &self.agents[i];
            f[i] = w.r * w.alpha_u * (u[i] - d.u_ref);
            let pv = self.price.sensitivity * d.v_ref;
            f[n + i] = w.r
                * (w.alpha_i * (x[i] - d.i_ref) - d.v_ref * self.price.price(aggregate) + pv * x[i]);
            f[2 * n + i] = w.r * w.alpha_v * (x[n + i] - d.v_ref);
        }
        for k in 0..m {
            let r = self.agents[self.grid.topology.manager(k)].r;
            f[3 * n + k] = r * self.line_weights[k] * (x[2 * n + k] - params.lines[k].i_ref);
        }
    }

    /// Constant Jacobian of the (affine) pseudo-gradient.
    pub fn pseudo_gradient_jacobian(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut j = DMatrix::zeros(3 * n + m, 3 * n + m);
        for i in 0..n {
            let d = &self.grid.params.dgus[i];
            let w = &self.agents[i];
            let pv = self.price.sensitivity * d.v_ref;
            j[(i, i)] = w.r * w.alpha_u;
            for col in 0..n {
                j[(n + i, n + col)] = w.r * pv;
            }
            j[(n + i, n + i)] += w.r * (w.alpha_i + pv);
            j[(2 * n + i, 2 * n + i)] = w.r * w.alpha_v;
        }
        for k in 0..m {
            let r = self.agents[self.grid.topology.manager(k)].r;
            j[(3 * n + k, 3 * n + k)] = r * self.line_weights[k];
        }
        j
    }

    /// Smallest eigenvalue of the symmetrized pseudo-gradient Jacobian,
    /// estimated by central differences at `count` random points of the
    /// affine set (plant steady states for inputs near `V^r`).
    pub fn sampled_min_eigenvalues<R: rand::Rng>(&self, rng: &mut R, count: usize) -> Result<Vec<f64>> {
        let (n, m) = (self.n(), self.m());
        let dim = 3 * n + m;
        let h = 1e-3;
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let u = DVector::from_iterator(
                n,
                self.grid.params.dgus.iter().map(|d| d.v_ref + rng.random_range(-3.0..3.0)),
            );
            let x = self.grid.equilibrium(&u)?.to_vector();
            let z: Vec<f64> = u.iter().chain(x.iter()).copied().collect();
            let mut jac = DMatrix::zeros(dim, dim);
            let (mut fp, mut fm) = (vec![0.0; dim], vec![0.0; dim]);
            for c in 0..dim {
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[c] += h;
                zm[c] -= h;
                self.pseudo_gradient_into(&zp[..n], &zp[n..], &mut fp);
                self.pseudo_gradient_into(&zm[..n], &zm[n..], &mut fm);
                for r in 0..dim {
                    jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
                }
            }
            let sym = (&jac + jac.transpose()) * 0.5;
            out.push(sym.symmetric_eigenvalues().min());
        }
        Ok(out)
    }

    pub fn monotonicity_margins(&self) -> Vec<f64> {
        let v_ref: Vec<f64> = self.grid.params.dgus.iter().map(|d| d.v_ref).collect();
        monotonicity_margins(&self.agents, &self.price, &v_ref)
    }

    /// Penalty adequacy at a candidate equilibrium `x` with normalized
    /// coupling multiplier `lambda_bar` (`= r_i lambda_i`) and local
    /// multipliers `gamma`.
    pub fn check_penalty_bounds(
        &self,
        x: &[f64],
        u: &[f64],
        lambda_bar: &[f64],
        gamma: &[f64],
    ) -> Result<PenaltyReport> {
        let (n, m) = (self.n(), self.m());
        check_len("state", 2 * n + m, x.len())?;
        check_len("control input", n, u.len())?;
        check_len("coupling multiplier", n + m, lambda_bar.len())?;
        check_len("local multiplier", n, gamma.len())?;
        let atl = self.constraints.a_full.transpose() * DVector::from_column_slice(lambda_bar);
        let mut f = vec![0.0; 3 * n + m];
        self.pseudo_gradient_into(u, x, &mut f);
        let params = &self.grid.params;
        let mut report = PenaltyReport::default();
        for i in 0..n {
            let d = &params.dgus[i];
            let w = &self.agents[i];
            let bound = w.alpha_v * (d.v_max - d.v_ref) + (atl[n + i] / w.r).abs() + (gamma[i] / w.r).abs();
            report.voltage_slack.push(self.penalties.rho_v[i] - bound);
            // Normal-cone force the box must supply at x, in per-r units.
            let required = (f[2 * n + i] + atl[n + i] + gamma[i]).abs() / w.r;
            report.voltage_required.push(required);
        }
        for k in 0..m {
            let l = &params.lines[k];
            let r = self.agents[self.grid.topology.manager(k)].r;
            let bound = self.line_weights[k] * (l.i_max - l.i_ref) + (atl[2 * n + k] / r).abs();
            report.line_slack.push(self.penalties.rho_line[k] - bound);
            report.line_required.push((f[3 * n + k] + atl[2 * n + k]).abs() / r);
        }
        Ok(report)
    }
}

/// Outcome of [`GameDefinition::check_penalty_bounds`].
///
/// `*_slack` is `rho` minus the sufficient bound `alpha (max - ref) +
/// |grad <lambda_i, Ax - s_A>| + |gamma_i|`; `*_required` is the exact
/// multiplier magnitude the box needs at the supplied point, so the
/// penalty is exact there iff `rho >= required`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PenaltyReport {
    pub voltage_slack: Vec<f64>,
    pub line_slack: Vec<f64>,
    pub voltage_required: Vec<f64>,
    pub line_required: Vec<f64>,
}

impl PenaltyReport {
    pub fn bound_satisfied(&self) -> bool {
        self.voltage_slack.iter().chain(&self.line_slack).all(|s| *s >= 0.0)
    }
}

/// Price positivity margin `l - p_r sum_i (V_i^max / Z_Li + I_Li)`.
pub fn price_positivity_margin(params: &PlantParams, price: &PriceParams) -> f64 {
    let total: f64 = params
        .dgus
        .iter()
        .map(|d| d.v_max / d.load_impedance + d.load_current)
        .sum();
    price.base - price.sensitivity * total
}

/// Monotonicity margins `2 r_i a_Ii + (6 - n) r_i p_r V_i^r - sum_j r_j p_r V_j^r`.
pub fn monotonicity_margins(agents: &[AgentWeights], price: &PriceParams, v_ref: &[f64]) -> Vec<f64> {
    let n = agents.len();
    let total: f64 = agents
        .iter()
        .zip(v_ref)
        .map(|(a, v)| a.r * price.sensitivity * v)
        .sum();
    agents
        .iter()
        .zip(v_ref)
        .map(|(a, v)| {
            2.0 * a.r * a.alpha_i + (6.0 - n as f64) * a.r * price.sensitivity * v - total
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{DguParams, LineParams};
    use crate::topology::{Graph, MicrogridTopology};

    pub(crate) fn ring_game() -> GameDefinition {
        crate::scenario::Scenario::ring4().build().unwrap().game
    }

    fn single_node(z: f64, il: f64) -> Microgrid {
        let topo = MicrogridTopology::new(Graph::new(1, vec![]).unwrap(), vec![]).unwrap();
        Microgrid::new(
            topo,
            PlantParams {
                dgus: vec![DguParams {
                    resistance: 0.1,
                    inductance: 1e-3,
                    capacitance: 1e-3,
                    load_impedance: z,
                    load_current: il,
                    v_min: 0.0,
                    v_max: 10.0,
                    v_ref: 5.0,
                    i_ref: 0.0,
                    u_ref: 0.0,
                }],
                lines: Vec::<LineParams>::new(),
            },
        )
        .unwrap()
    }

    #[test]
    fn single_node_kcl() {
        let c = build_constraints(&single_node(1.0, 2.0));
        assert_eq!(c.a_full, DMatrix::from_row_slice(1, 2, &[1.0, -1.0]));
        assert_eq!(c.s_full.as_slice(), &[2.0]);
    }

    #[test]
    fn blocks_reassemble() {
        let g = ring_game();
        let c = g.constraints();
        let x: Vec<f64> = (0..12).map(|k| (k as f64 * 1.3).sin() * 50.0).collect();
        let xv = DVector::from_column_slice(&x);
        let mut sum = DVector::zeros(8);
        let mut s_sum = DVector::zeros(8);
        for i in 0..4 {
            let xi = DVector::from_iterator(
                g.grid.topology.local_dim(i),
                g.grid.topology.local_to_global(i).into_iter().map(|k| x[k]),
            );
            sum += &c.a_blocks[i] * xi - &c.s_blocks[i];
            s_sum += &c.s_blocks[i];
        }
        assert!((sum - (&c.a_full * xv - &c.s_full)).amax() < 1e-12);
        assert_eq!(s_sum, c.s_full);
    }

    #[test]
    fn local_equality_vector() {
        let g = ring_game();
        let c = g.constraints();
        let x_i = DVector::from_vec(vec![12.0, 379.0, 3.0, -4.0]);
        assert!((c.d_vectors[0].dot(&x_i) - (379.0 + 0.020 * 12.0)).abs() < 1e-12);
    }

    #[test]
    fn cost_at_references_is_zero() {
        let g = ring_game();
        assert_eq!(g.cost(1, 0.0, &[0.0, 380.0, 0.0], 0.0), 0.0);
    }

    #[test]
    fn cost_quadratic_input_term() {
        let g = single_game(1.0, 0.0);
        assert!((g.cost(0, 1.0, &[0.0, 5.0], 0.0) - 0.5).abs() < 1e-15);
    }

    fn single_game(alpha_u: f64, sensitivity: f64) -> GameDefinition {
        GameDefinition::new(
            single_node(1.0, 0.0),
            None,
            PriceParams { base: 1.0, sensitivity },
            vec![AgentWeights {
                r: 1.0,
                alpha_u,
                alpha_i: 1.0,
                alpha_v: 1.0,
                alpha_line: 1.0,
            }],
            PenaltyParams {
                rho_v: vec![10.0],
                rho_line: vec![],
            },
        )
        .unwrap()
    }

    #[test]
    fn ring_agent1_cost() {
        let g = ring_game();
        // x_1 = (I, V, I_l1, I_l4)
        let x1 = [10.0, 380.0, 0.0, 0.0];
        let profit: f64 = -(5.0 - 0.01 * 40.0) * 380.0 * 10.0;
        assert!((profit + 17_480.0).abs() < 1e-9);
        let quad = 0.5 * 10.6569 * 100.0;
        assert!((g.cost(0, 0.0, &x1, 40.0) - (quad + profit)).abs() < 1e-9);
    }

    #[test]
    fn subgradient_cases() {
        assert_eq!(penalty_subgradient(380.0, 377.0, 383.0, 1200.0), Interval::point(0.0));
        assert_eq!(penalty_subgradient(376.0, 377.0, 383.0, 1200.0), Interval::point(-1200.0));
        let at_max = penalty_subgradient(383.0, 377.0, 383.0, 1200.0);
        assert_eq!(at_max, Interval { lo: 0.0, hi: 1200.0 });
        assert_eq!(at_max.min_norm(), 0.0);
        assert_eq!(penalty_subgradient(377.0, 377.0, 383.0, 1200.0), Interval { lo: -1200.0, hi: 0.0 });
        assert_eq!(penalty_subgradient(390.0, 377.0, 383.0, 1200.0), Interval::point(1200.0));
    }

    #[test]
    fn prox_moves_toward_box() {
        assert_eq!(penalty_prox(376.0, 377.0, 383.0, 0.5), 376.5);
        assert_eq!(penalty_prox(376.9, 377.0, 383.0, 0.5), 377.0);
        assert_eq!(penalty_prox(384.0, 377.0, 383.0, 5.0), 383.0);
        assert_eq!(penalty_prox(380.0, 377.0, 383.0, 5.0), 380.0);
    }

    #[test]
    fn shifted_distance() {
        let iv = Interval { lo: -3.0, hi: 0.0 };
        assert_eq!(iv.shifted_distance(2.0), 0.0);
        assert_eq!(iv.shifted_distance(5.0), 2.0);
        assert_eq!(iv.shifted_distance(-1.0), 1.0);
    }

    #[test]
    fn price_margin_of_ring() {
        let g = ring_game();
        let margin = price_positivity_margin(g.params(), &g.price);
        let total = 53.9375 + 22.66 + 53.9375 + 45.15;
        assert!((margin - (5.0 - 0.01 * total)).abs() < 1e-12);
        assert!((margin - 3.24315).abs() < 1e-9);
        let free = PriceParams { base: 5.0, sensitivity: 0.0 };
        assert_eq!(price_positivity_margin(g.params(), &free), 5.0);
        let stepped = g.params().apply_load_step(3.0, 3.0).unwrap();
        assert!(price_positivity_margin(&stepped, &g.price) > 0.0);
    }

    #[test]
    fn monotonicity_margins_of_ring() {
        let g = ring_game();
        let m = g.monotonicity_margins();
        let sum_r = 1.0060 + 1.0399 + 1.0527 + 1.0417;
        let want = 2.0 * 1.0060 * 10.6569 + 2.0 * 1.0060 * 0.01 * 380.0 - 0.01 * 380.0 * sum_r;
        assert!((m[0] - want).abs() < 1e-12);
        assert!((m[0] - 13.35).abs() < 1e-2);
        assert!(m.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn monotonicity_special_cases() {
        let w = AgentWeights {
            r: 1.5,
            alpha_u: 1.0,
            alpha_i: 2.0,
            alpha_v: 1.0,
            alpha_line: 1.0,
        };
        let free = PriceParams { base: 1.0, sensitivity: 0.0 };
        assert_eq!(monotonicity_margins(&[w; 3], &free, &[380.0; 3]), vec![6.0; 3]);
        // n = 6: the (6 - n) term vanishes.
        let priced = PriceParams { base: 1.0, sensitivity: 0.01 };
        let m = monotonicity_margins(&[w; 6], &priced, &[100.0; 6]);
        assert!((m[0] - (2.0 * 1.5 * 2.0 - 6.0 * 1.5 * 0.01 * 100.0)).abs() < 1e-12);
    }

    #[test]
    fn penalty_bound_boundary_and_zero() {
        let g = ring_game();
        let x: Vec<f64> = [vec![40.0; 4], vec![380.0; 4], vec![0.0; 4]].concat();
        let u = vec![0.0; 4];
        let mut tight = g.clone();
        for i in 0..4 {
            tight.penalties.rho_v[i] = g.agents[i].alpha_v * 3.0;
        }
        let rep = tight.check_penalty_bounds(&x, &u, &[0.0; 8], &[0.0; 4]).unwrap();
        assert!(rep.voltage_slack.iter().all(|s| s.abs() < 1e-12));
        let mut weak = g.clone();
        weak.penalties.rho_v = vec![0.0; 4];
        let rep = weak.check_penalty_bounds(&x, &u, &[0.0; 8], &[1.0; 4]).unwrap();
        assert!(rep.voltage_slack.iter().all(|s| *s < 0.0));
        assert!(!rep.bound_satisfied());
    }

    #[test]
    fn identical_agents_identical_gradient_blocks() {
        let g = crate::scenario::Scenario::symmetric_ring(4).build().unwrap().game;
        let u = vec![378.0; 4];
        let x: Vec<f64> = [vec![40.0; 4], vec![378.0; 4], vec![0.0; 4]].concat();
        let f = g.pseudo_gradient(&u, &x).unwrap();
        for block in 0..3 {
            for i in 1..4 {
                assert_eq!(f[block * 4 + i], f[block * 4]);
            }
        }
    }

    #[test]
    fn jacobian_matches_linear_map() {
        let g = ring_game();
        let j = g.pseudo_gradient_jacobian();
        let z0 = vec![0.0; 16];
        let f0 = g.pseudo_gradient(&z0[..4], &z0[4..]).unwrap();
        let z: Vec<f64> = (0..16).map(|k| (k as f64).sin() * 30.0).collect();
        let f = g.pseudo_gradient(&z[..4], &z[4..]).unwrap();
        let lin = &f0 + &j * DVector::from_column_slice(&z);
        assert!((f - lin).amax() < 1e-9);
    }
}
