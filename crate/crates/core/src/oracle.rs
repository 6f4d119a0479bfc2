//! Centralized reference solutions.
//!
//! The normalized equilibrium solves the variational inequality
//! `<F_r(z*), z - z*> >= 0` for all feasible `z = (u, x)`, where the
//! feasible set is the affine set `{A x = s_A, D_i^T x_i = u_i}` intersected
//! with the voltage and line-current boxes. [`solve_vi`] runs extragradient
//! with Dykstra projections. [`solve_penalized`] computes the rest point of
//! the penalized flow (boxes replaced by exact penalties) by an active-set
//! iteration on the piecewise-linear optimality system.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::controller::{fast_equilibrium, Controller, PenaltyMode};
use crate::error::{check_len, Error, Result};
use crate::game::GameDefinition;
use crate::plant::Microgrid;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumSolution {
    pub u_star: Vec<f64>,
    /// `(I, V, I_l)`.
    pub x_star: Vec<f64>,
    /// Shared normalized coupling multiplier `r_i lambda_i`.
    pub lambda_star: Vec<f64>,
    pub gamma_star: Vec<f64>,
    /// `(global index, multiplier)` for every active box, r-scaled. For the
    /// penalized solution these are the penalty subgradients in use.
    pub box_multipliers: Vec<(usize, f64)>,
    pub iterations: usize,
    /// Natural residual `|z - P(z - tau F(z))|_inf` (VI) or stationarity
    /// residual (penalized).
    pub residual: f64,
    pub converged: bool,
    /// Least-squares residual of the multiplier fit.
    pub multiplier_residual: f64,
    pub multiplier_rank: usize,
}

impl EquilibriumSolution {
    /// Decision vector `(u, x)`.
    pub fn z(&self) -> Vec<f64> {
        [self.u_star.as_slice(), self.x_star.as_slice()].concat()
    }

    pub fn lambda_agent(&self, r: f64) -> Vec<f64> {
        self.lambda_star.iter().map(|l| l / r).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub projection_tol: f64,
    pub projection_max_iter: usize,
}

impl Default for ViOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200_000,
            projection_tol: 1e-13,
            projection_max_iter: 200_000,
        }
    }
}

/// Equality constraints on `z = (u, x)`: rows `0..p` are `A x = s_A`, rows
/// `p..p+n` are `D_i^T x_i - u_i = 0`.
fn equality_system(game: &GameDefinition) -> (DMatrix<f64>, DVector<f64>) {
    let (n, m, p) = (game.n(), game.m(), game.p());
    let cons = game.constraints();
    let dim = 3 * n + m;
    let mut mat = DMatrix::zeros(p + n, dim);
    mat.view_mut((0, n), (p, 2 * n + m)).copy_from(&cons.a_full);
    let mut rhs = DVector::zeros(p + n);
    rhs.rows_mut(0, p).copy_from(&cons.s_full);
    let topo = &game.grid.topology;
    for i in 0..n {
        mat[(p + i, i)] = -1.0;
        for (c, k) in topo.local_to_global(i).into_iter().enumerate() {
            mat[(p + i, n + k)] = cons.d_vectors[i][c];
        }
    }
    (mat, rhs)
}

/// Boxed coordinates of `z`: `(index, lo, hi, r * rho)`.
fn boxes(game: &GameDefinition) -> Vec<(usize, f64, f64, f64)> {
    let (n, m) = (game.n(), game.m());
    let params = game.params();
    let mut out = Vec::with_capacity(n + m);
    for (i, d) in params.dgus.iter().enumerate() {
        out.push((2 * n + i, d.v_min, d.v_max, game.agents[i].r * game.penalties.rho_v[i]));
    }
    for (k, l) in params.lines.iter().enumerate() {
        let r = game.agents[game.grid.topology.manager(k)].r;
        out.push((3 * n + k, l.i_min, l.i_max, r * game.penalties.rho_line[k]));
    }
    out
}

/// Projector onto `{z : M z = b} ∩ box`.
#[derive(Debug, Clone)]
pub struct FeasibleSetProjector {
    mat: DMatrix<f64>,
    rhs: DVector<f64>,
    /// `M^T (M M^T)^+`.
    gain: DMatrix<f64>,
    boxes: Vec<(usize, f64, f64)>,
    tol: f64,
    max_iter: usize,
}

impl FeasibleSetProjector {
    pub fn new(game: &GameDefinition, tol: f64, max_iter: usize) -> Result<Self> {
        let (mat, rhs) = equality_system(game);
        let gram = &mat * mat.transpose();
        let pinv = gram
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Singular(format!("constraint Gram matrix: {e}")))?;
        let gain = mat.transpose() * pinv;
        let boxes = boxes(game).into_iter().map(|(c, lo, hi, _)| (c, lo, hi)).collect();
        Ok(Self {
            mat,
            rhs,
            gain,
            boxes,
            tol,
            max_iter,
        })
    }

    pub fn project_affine(&self, z: &DVector<f64>) -> DVector<f64> {
        z - &self.gain * (&self.mat * z - &self.rhs)
    }

    pub fn project_box(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = z.clone();
        for &(c, lo, hi) in &self.boxes {
            out[c] = out[c].clamp(lo, hi);
        }
        out
    }

    /// Dykstra's alternating projection.
    pub fn project(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let mut x = z.clone();
        let mut p = DVector::zeros(z.len());
        let mut q = DVector::zeros(z.len());
        let mut gap = f64::INFINITY;
        for _ in 0..self.max_iter {
            let y = self.project_affine(&(&x + &p));
            p = &x + &p - &y;
            let next = self.project_box(&(&y + &q));
            q = &y + &q - &next;
            let change = (&next - &x).amax();
            gap = (&y - &next).amax();
            x = next;
            let tol = self.tol * (1.0 + x.amax());
            if change <= tol && gap <= tol {
                return Ok(x);
            }
        }
        let scale = 1.0 + z.amax();
        if gap <= 1e-9 * scale {
            Ok(x)
        } else {
            Err(Error::Infeasible {
                iterations: self.max_iter,
                gap,
            })
        }
    }

    /// Largest violation of the equality and box constraints.
    pub fn violation(&self, z: &DVector<f64>) -> f64 {
        let eq = (&self.mat * z - &self.rhs).amax();
        self.boxes
            .iter()
            .map(|&(c, lo, hi)| (lo - z[c]).max(z[c] - hi).max(0.0))
            .fold(eq, f64::max)
    }
}

fn pseudo_gradient_vec(game: &GameDefinition, z: &DVector<f64>) -> DVector<f64> {
    let n = game.n();
    let mut f = DVector::zeros(z.len());
    game.pseudo_gradient_into(&z.as_slice()[..n], &z.as_slice()[n..], f.as_mut_slice());
    f
}

/// Spectral norm of the pseudo-gradient Jacobian by power iteration on
/// `J^T J`.
pub fn lipschitz_estimate(game: &GameDefinition) -> f64 {
    let j = game.pseudo_gradient_jacobian();
    let jtj = j.transpose() * &j;
    let mut v = DVector::from_element(j.ncols(), 1.0 / (j.ncols() as f64).sqrt());
    let mut est = 0.0;
    for _ in 0..500 {
        let w = &jtj * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (norm - est).abs() <= 1e-12 * norm {
            est = norm;
            break;
        }
        est = norm;
    }
    est.sqrt()
}

/// Extragradient on `F_r` over the feasible set.
pub fn solve_vi(game: &GameDefinition, opts: ViOptions) -> Result<EquilibriumSolution> {
    let proj = FeasibleSetProjector::new(game, opts.projection_tol, opts.projection_max_iter)?;
    let tau = 0.5 / lipschitz_estimate(game);
    let start = affine_kkt_solve(game)?.z();
    let mut z = proj.project(&DVector::from_vec(start))?;
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let f = pseudo_gradient_vec(game, &z);
        let half = proj.project(&(&z - tau * &f))?;
        residual = (&z - &half).amax();
        if residual <= opts.tol {
            break;
        }
        let fh = pseudo_gradient_vec(game, &half);
        z = proj.project(&(&z - tau * fh))?;
    }
    let converged = residual <= opts.tol;
    let n = game.n();
    let mut sol = EquilibriumSolution {
        u_star: z.as_slice()[..n].to_vec(),
        x_star: z.as_slice()[n..].to_vec(),
        lambda_star: vec![],
        gamma_star: vec![],
        box_multipliers: vec![],
        iterations,
        residual,
        converged,
        multiplier_residual: f64::NAN,
        multiplier_rank: 0,
    };
    recover_multipliers(&mut sol, game, 1e-7)?;
    Ok(sol)
}

/// Fits `(lambda_bar, gamma)` and the active-box multipliers to
/// `F_r(z) + M^T mu + sum nu_c e_c = 0` in least squares. A coordinate is
/// active when within `active_tol` of a bound.
pub fn recover_multipliers(sol: &mut EquilibriumSolution, game: &GameDefinition, active_tol: f64) -> Result<()> {
    let (n, m, p) = (game.n(), game.m(), game.p());
    check_len("control input", n, sol.u_star.len())?;
    check_len("state", 2 * n + m, sol.x_star.len())?;
    let z = DVector::from_vec(sol.z());
    let f = pseudo_gradient_vec(game, &z);
    let (mat, _) = equality_system(game);
    let active: Vec<usize> = boxes(game)
        .into_iter()
        .filter(|&(c, lo, hi, _)| (z[c] - lo).abs() <= active_tol || (z[c] - hi).abs() <= active_tol)
        .map(|(c, ..)| c)
        .collect();
    let cols = p + n + active.len();
    let mut g = DMatrix::zeros(z.len(), cols);
    g.view_mut((0, 0), (z.len(), p + n)).copy_from(&mat.transpose());
    for (j, &c) in active.iter().enumerate() {
        g[(c, p + n + j)] = 1.0;
    }
    let svd = g.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|s| **s > 1e-10 * smax).count();
    let mu = svd
        .solve(&(-&f), 1e-10 * smax)
        .map_err(|e| Error::Singular(format!("multiplier fit: {e}")))?;
    sol.multiplier_residual = (&f + &g * &mu).amax();
    sol.multiplier_rank = rank;
    sol.lambda_star = mu.as_slice()[..p].to_vec();
    sol.gamma_star = mu.as_slice()[p..p + n].to_vec();
    sol.box_multipliers = active.iter().enumerate().map(|(j, &c)| (c, mu[p + n + j])).collect();
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoxState {
    Free,
    Below,
    AtLo,
    AtHi,
    Above,
}

/// Solves the optimality system with every boxed coordinate in a fixed
/// regime. Returns `(z, mu, nu)` with `nu` the multipliers of pinned
/// coordinates (or the constant subgradient for Below/Above).
fn solve_regime(
    game: &GameDefinition,
    boxes: &[(usize, f64, f64, f64)],
    states: &[BoxState],
) -> Result<(DVector<f64>, DVector<f64>, Vec<f64>)> {
    let (mat, rhs) = equality_system(game);
    let dim = mat.ncols();
    let neq = mat.nrows();
    let j = game.pseudo_gradient_jacobian();
    let f0 = pseudo_gradient_vec(game, &DVector::zeros(dim));
    let pinned: Vec<usize> = (0..boxes.len())
        .filter(|&b| matches!(states[b], BoxState::AtLo | BoxState::AtHi))
        .collect();
    let size = dim + neq + pinned.len();
    let mut k = DMatrix::zeros(size, size);
    let mut b = DVector::zeros(size);
    k.view_mut((0, 0), (dim, dim)).copy_from(&j);
    k.view_mut((0, dim), (dim, neq)).copy_from(&mat.transpose());
    k.view_mut((dim, 0), (neq, dim)).copy_from(&mat);
    b.rows_mut(0, dim).copy_from(&(-&f0));
    b.rows_mut(dim, neq).copy_from(&rhs);
    for (bi, &(c, lo, hi, w)) in boxes.iter().enumerate() {
        match states[bi] {
            BoxState::Below => b[c] += w,
            BoxState::Above => b[c] -= w,
            _ => {}
        }
        let _ = (lo, hi);
    }
    for (row, &bi) in pinned.iter().enumerate() {
        let (c, lo, hi, _) = boxes[bi];
        let at = dim + neq + row;
        k[(c, at)] = 1.0;
        k[(at, c)] = 1.0;
        b[at] = if states[bi] == BoxState::AtLo { lo } else { hi };
    }
    let sol = k
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("equilibrium optimality system".into()))?;
    let z = sol.rows(0, dim).into_owned();
    let mu = sol.rows(dim, neq).into_owned();
    let mut nu = vec![0.0; boxes.len()];
    for (row, &bi) in pinned.iter().enumerate() {
        nu[bi] = sol[dim + neq + row];
    }
    for (bi, &(_, _, _, w)) in boxes.iter().enumerate() {
        match states[bi] {
            BoxState::Below => nu[bi] = -w,
            BoxState::Above => nu[bi] = w,
            _ => {}
        }
    }
    Ok((z, mu, nu))
}

fn regime_solution(
    game: &GameDefinition,
    boxes: &[(usize, f64, f64, f64)],
    states: &[BoxState],
    iterations: usize,
    converged: bool,
) -> Result<EquilibriumSolution> {
    let (n, p) = (game.n(), game.p());
    let (mut z, mu, nu) = solve_regime(game, boxes, states)?;
    for (&(c, lo, hi, _), s) in boxes.iter().zip(states) {
        match s {
            BoxState::AtLo => z[c] = lo,
            BoxState::AtHi => z[c] = hi,
            _ => {}
        }
    }
    let f = pseudo_gradient_vec(game, &z);
    let (mat, _) = equality_system(game);
    let mut stat = &f + mat.transpose() * &mu;
    for (bi, &(c, ..)) in boxes.iter().enumerate() {
        stat[c] += nu[bi];
    }
    Ok(EquilibriumSolution {
        u_star: z.as_slice()[..n].to_vec(),
        x_star: z.as_slice()[n..].to_vec(),
        lambda_star: mu.as_slice()[..p].to_vec(),
        gamma_star: mu.as_slice()[p..].to_vec(),
        box_multipliers: boxes
            .iter()
            .zip(states)
            .zip(&nu)
            .filter(|((_, s), _)| **s != BoxState::Free)
            .map(|(((c, ..), _), v)| (*c, *v))
            .collect(),
        iterations,
        residual: stat.amax(),
        converged,
        multiplier_residual: stat.amax(),
        multiplier_rank: mat.nrows(),
    })
}

/// Equilibrium with every box ignored: one linear solve.
pub fn affine_kkt_solve(game: &GameDefinition) -> Result<EquilibriumSolution> {
    let b = boxes(game);
    let states = vec![BoxState::Free; b.len()];
    regime_solution(game, &b, &states, 1, true)
}

/// Rest point of the penalized flow: `0 ∈ F_r(z) + M^T mu + r rho ∂dist(z, box)`.
///
/// `start` seeds the active set (typically the box-constrained solution).
pub fn solve_penalized(game: &GameDefinition, start: Option<&EquilibriumSolution>) -> Result<EquilibriumSolution> {
    let b = boxes(game);
    let tol = 1e-9;
    let mut states: Vec<BoxState> = match start {
        Some(s) => {
            let z = s.z();
            b.iter()
                .map(|&(c, lo, hi, _)| {
                    if (z[c] - lo).abs() <= 1e-7 {
                        BoxState::AtLo
                    } else if (z[c] - hi).abs() <= 1e-7 {
                        BoxState::AtHi
                    } else {
                        BoxState::Free
                    }
                })
                .collect()
        }
        None => vec![BoxState::Free; b.len()],
    };
    for iter in 1..=100 {
        let (z, _, nu) = solve_regime(game, &b, &states)?;
        let mut changed = false;
        for (bi, &(c, lo, hi, w)) in b.iter().enumerate() {
            let v = z[c];
            let next = match states[bi] {
                BoxState::Free if v < lo - tol => BoxState::AtLo,
                BoxState::Free if v > hi + tol => BoxState::AtHi,
                BoxState::Below if v > lo + tol => BoxState::AtLo,
                BoxState::Above if v < hi - tol => BoxState::AtHi,
                BoxState::AtLo if nu[bi] < -w => BoxState::Below,
                BoxState::AtLo if nu[bi] > 0.0 => BoxState::Free,
                BoxState::AtHi if nu[bi] > w => BoxState::Above,
                BoxState::AtHi if nu[bi] < 0.0 => BoxState::Free,
                s => s,
            };
            if next != states[bi] {
                states[bi] = next;
                changed = true;
            }
        }
        if !changed {
            return regime_solution(game, &b, &states, iter, true);
        }
    }
    regime_solution(game, &b, &states, 100, false)
}

/// Slow controller dynamics with the consensus states at their
/// quasi-steady state `ups = (sum_j Ihat_j) 1`.
pub fn reduced_model_rhs(controller: &Controller, y: &[f64], plant_current: &[f64]) -> Result<Vec<f64>> {
    check_len("controller state", controller.dim(), y.len())?;
    check_len("plant currents", controller.layout.n, plant_current.len())?;
    let mut dy = vec![0.0; y.len()];
    controller.reduced_rhs_into(y, plant_current, PenaltyMode::LeastNorm, &mut dy);
    Ok(dy)
}

/// Boundary-layer and reduced-system Lyapunov values `(E_b, E_r)` at one
/// sample. `plant_y` is the stacked plant state `(I, V, I_l)`, `plant_u` the
/// applied input.
pub fn lyapunov_diagnostics(
    grid: &Microgrid,
    controller: &Controller,
    plant_y: &[f64],
    plant_u: &[f64],
    ctrl_y: &[f64],
) -> Result<(f64, f64)> {
    let l = &controller.layout;
    let n = l.n;
    check_len("plant state", grid.state_dim(), plant_y.len())?;
    check_len("control input", n, plant_u.len())?;
    check_len("controller state", controller.dim(), ctrl_y.len())?;
    let comm = &controller.game.comm;
    let ihat: Vec<f64> = (0..n).map(|i| ctrl_y[l.xhat(i)]).collect();
    let (ups_star, nu_star) = fast_equilibrium(&ihat, comm)?;
    let ups_b = DVector::from_column_slice(&ctrl_y[..n]) - ups_star;
    let nu_b = DVector::from_column_slice(&ctrl_y[n..2 * n]) - nu_star;
    let lap = comm.laplacian();
    let sigma = lap.singular_values().max();
    let lu = &lap * &ups_b;
    let e_b = sigma * (ups_b.norm_squared() + nu_b.norm_squared())
        + 0.5 * ups_b.norm_squared()
        + 0.5 * ups_b.dot(&lu)
        + nu_b.dot(&lu);

    let mut dplant = vec![0.0; plant_y.len()];
    grid.rhs_into(plant_y, plant_u, &mut dplant);
    let weights = grid.energy_weights();
    let kinetic: f64 = dplant.iter().zip(&weights).map(|(d, w)| w * d * d).sum();
    let mut slow = vec![0.0; ctrl_y.len()];
    controller.reduced_rhs_into(ctrl_y, &plant_y[..n], PenaltyMode::LeastNorm, &mut slow);
    let g2: f64 = slow[2 * n..].iter().map(|v| v * v).sum();
    let e_r = 0.5 * kinetic + g2 / (2.0 * controller.params.eps_u);
    Ok((e_b, e_r))
}
