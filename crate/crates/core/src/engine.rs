//! Closed-loop simulation, diagnostics and run reports.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::controller::{Controller, KktResidual, PenaltyMode};
use crate::error::{Error, Result};
use crate::game::{price_positivity_margin, GameDefinition, PenaltyReport};
use crate::integrate::{integrate_segments, Integrator, Method, OdeSystem};
use crate::oracle::{lyapunov_diagnostics, solve_penalized, solve_vi, EquilibriumSolution, ViOptions};
use crate::plant::Microgrid;
use crate::scenario::{ControllerInit, Model, PlantInit};

/// Plant and controller stacked as `(I, V, I_l, controller)`.
///
/// The exact penalty enters the decision dynamics through the prox-gradient
/// map with parameter `prox_t`.
pub struct ClosedLoop {
    pub grid: Microgrid,
    pub controller: Controller,
    /// Replace the consensus states by their quasi-steady state.
    pub reduced: bool,
    pub prox_t: f64,
}

impl ClosedLoop {
    pub fn new(controller: Controller, reduced: bool, prox_t: f64) -> Self {
        Self {
            grid: controller.game.grid.clone(),
            controller,
            reduced,
            prox_t,
        }
    }

    /// Prox parameter matched to an integration method: the fixed step for
    /// RK4, the step ceiling for RK45.
    pub fn prox_parameter(method: &Method) -> f64 {
        match *method {
            Method::Rk4 { dt } => dt,
            Method::Rk45 { h_max, .. } => h_max.unwrap_or(1e-4).min(1e-4),
        }
    }

    pub fn plant_dim(&self) -> usize {
        self.grid.state_dim()
    }

    fn input<'a>(&self, y: &'a [f64]) -> &'a [f64] {
        let start = self.plant_dim() + self.controller.layout.u();
        &y[start..start + self.grid.n()]
    }
}

impl OdeSystem for ClosedLoop {
    fn dim(&self) -> usize {
        self.plant_dim() + self.controller.dim()
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        let np = self.plant_dim();
        let (yp, yc) = y.split_at(np);
        let (dp, dc) = dy.split_at_mut(np);
        self.grid.rhs_into(yp, self.input(y), dp);
        let current = &yp[..self.grid.n()];
        let mode = PenaltyMode::ProxGradient(self.prox_t);
        if self.reduced {
            self.controller.reduced_rhs_into(yc, current, mode, dc);
        } else {
            self.controller.rhs_into(yc, current, mode, dc);
        }
    }
}

/// Per-sample diagnostics, in CSV column order.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct Diagnostics {
    pub kkt: f64,
    pub upsilon_spread: f64,
    pub upsilon_sum_error: f64,
    pub lambda_spread: f64,
    pub e_b: f64,
    pub e_r: f64,
    pub nu_sum: f64,
    pub theta_sum_drift: f64,
    pub voltage_violation: f64,
    pub line_violation: f64,
}

impl Diagnostics {
    pub const NAMES: [&'static str; 10] = [
        "diag.kkt",
        "diag.upsilon_spread",
        "diag.upsilon_sum_error",
        "diag.lambda_spread",
        "diag.E_b",
        "diag.E_r",
        "diag.nu_sum",
        "diag.theta_sum_drift",
        "diag.voltage_violation",
        "diag.line_violation",
    ];

    fn values(&self) -> [f64; 10] {
        [
            self.kkt,
            self.upsilon_spread,
            self.upsilon_sum_error,
            self.lambda_spread,
            self.e_b,
            self.e_r,
            self.nu_sum,
            self.theta_sum_drift,
            self.voltage_violation,
            self.line_violation,
        ]
    }
}

fn theta_sums(c: &Controller, yc: &[f64]) -> Vec<f64> {
    let l = &c.layout;
    (0..l.p)
        .map(|row| (0..l.n).map(|i| yc[l.theta() + i * l.p + row]).sum())
        .collect()
}

fn box_violation(grid: &Microgrid, yp: &[f64]) -> (f64, f64) {
    let n = grid.n();
    let v = grid
        .params
        .dgus
        .iter()
        .enumerate()
        .map(|(i, d)| (d.v_min - yp[n + i]).max(yp[n + i] - d.v_max).max(0.0))
        .fold(0.0, f64::max);
    let l = grid
        .params
        .lines
        .iter()
        .enumerate()
        .map(|(k, p)| (p.i_min - yp[2 * n + k]).max(yp[2 * n + k] - p.i_max).max(0.0))
        .fold(0.0, f64::max);
    (v, l)
}

fn diagnose(sys: &ClosedLoop, y: &[f64], theta0: &[f64]) -> Result<Diagnostics> {
    let np = sys.plant_dim();
    let (yp, yc) = y.split_at(np);
    let c = &sys.controller;
    let n = sys.grid.n();
    let kkt = c.kkt_residual(yc);
    let (upsilon_spread, lambda_spread) = c.consensus_errors(yc);
    let total: f64 = (0..n).map(|i| yc[c.layout.xhat(i)]).sum();
    let upsilon_sum_error = yc[..n].iter().map(|u| (u - total).abs()).fold(0.0, f64::max);
    let (e_b, e_r) = lyapunov_diagnostics(&sys.grid, c, yp, sys.input(y), yc)?;
    let theta_sum_drift = theta_sums(c, yc)
        .iter()
        .zip(theta0)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (voltage_violation, line_violation) = box_violation(&sys.grid, yp);
    Ok(Diagnostics {
        kkt: kkt.max(),
        upsilon_spread,
        upsilon_sum_error,
        lambda_spread,
        e_b,
        e_r,
        nu_sum: yc[n..2 * n].iter().sum(),
        theta_sum_drift,
        voltage_violation,
        line_violation,
    })
}

/// Reference solutions for one constant-parameter segment.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentOracle {
    /// Box-constrained normalized equilibrium.
    pub constrained: EquilibriumSolution,
    /// Rest point of the penalized dynamics.
    pub penalized: EquilibriumSolution,
    pub penalty: PenaltyReport,
}

pub fn segment_oracle(game: &GameDefinition) -> Result<SegmentOracle> {
    let constrained = solve_vi(game, ViOptions::default())?;
    let penalized = solve_penalized(game, Some(&constrained))?;
    let penalty = game.check_penalty_bounds(
        &constrained.x_star,
        &constrained.u_star,
        &constrained.lambda_star,
        &constrained.gamma_star,
    )?;
    Ok(SegmentOracle {
        constrained,
        penalized,
        penalty,
    })
}

/// Stacked closed-loop state at an equilibrium solution: plant in steady
/// state for `u*`, controller at the matching rest point.
pub fn equilibrium_state(controller: &Controller, sol: &EquilibriumSolution) -> Result<(Vec<f64>, Vec<f64>)> {
    let plant = controller
        .game
        .grid
        .equilibrium(&DVector::from_column_slice(&sol.u_star))?
        .to_vector()
        .as_slice()
        .to_vec();
    let ctrl = controller.state_at_equilibrium(&sol.u_star, &sol.x_star, &sol.lambda_star, &sol.gamma_star)?;
    Ok((plant, ctrl))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    Reduced,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl Check {
    fn below(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold,
            pass: value < threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Residuals {
    pub final_kkt: KktResidual,
    pub final_max: f64,
    /// Max KKT residual at the last sample of each segment.
    pub segment_end: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Margins {
    pub price_positivity: Vec<f64>,
    pub monotonicity: Vec<Vec<f64>>,
    pub penalty: Vec<PenaltyReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Consensus {
    pub upsilon_spread: f64,
    pub upsilon_sum_error: f64,
    pub lambda_spread: f64,
    pub nu_sum_drift: f64,
    pub theta_sum_drift: f64,
    /// Largest conservation drift divided by `max(t, 1 s)`.
    pub drift_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violations {
    /// Largest plant box violation over all samples.
    pub voltage: f64,
    pub line: f64,
    /// Plant box violation at the last sample of each segment.
    pub segment_end_voltage: Vec<f64>,
    pub segment_end_line: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Lyapunov {
    pub e_b_min: f64,
    pub e_b_max: f64,
    pub e_r_first: f64,
    pub e_r_last: f64,
    pub e_r_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleMatch {
    /// Max over `(u, xhat)` of `|c - o| / max(|o|, block scale)`.
    pub decision_rel: f64,
    /// Max over agents of `|r_i lambda_i - lambda_bar| / max|lambda_bar|`.
    pub multiplier_rel: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Flags {
    pub price_reading: String,
    pub load_step: String,
    pub input_law: String,
    pub variant: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub completed: bool,
    pub error: Option<String>,
    pub samples: usize,
    pub t_final: f64,
    pub residuals: Residuals,
    pub margins: Margins,
    pub consensus: Consensus,
    /// Per segment: first sample time after which the residual stays below
    /// the threshold until the segment ends.
    pub convergence_times: Vec<Option<f64>>,
    pub violations: Violations,
    pub lyapunov: Lyapunov,
    pub oracle: Vec<SegmentOracle>,
    pub oracle_match: OracleMatch,
    pub checks: Vec<Check>,
    pub flags: Flags,
    pub config: serde_json::Value,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.completed && self.checks.iter().all(|c| c.pass)
    }
}

pub struct RunOutput {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Segment index of every row.
    pub segments: Vec<usize>,
    pub report: RunReport,
}

impl RunOutput {
    pub fn csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v:.16e}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.report).expect("report serializes")
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("timeseries.csv"), self.csv())?;
        std::fs::write(dir.join("summary.json"), self.summary_json())?;
        Ok(())
    }

    /// Column index by name.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

fn relative_match(controller: &Controller, yc: &[f64], sol: &EquilibriumSolution) -> OracleMatch {
    let l = &controller.layout;
    let (n, m) = (l.n, l.m);
    let topo = &controller.game.grid.topology;
    let oracle = sol.z();
    let scale = |lo: usize, hi: usize| oracle[lo..hi].iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let block_scale = [scale(0, n), scale(n, 2 * n), scale(2 * n, 3 * n), scale(3 * n, 3 * n + m)];
    let block_of = |g: usize| (g / n).min(3);
    let mut decision_rel = 0.0f64;
    for i in 0..n {
        let u = yc[l.u() + i];
        decision_rel = decision_rel.max((u - oracle[i]).abs() / oracle[i].abs().max(block_scale[0]));
        for (c, k) in topo.local_to_global(i).into_iter().enumerate() {
            let g = n + k;
            let denom = oracle[g].abs().max(block_scale[block_of(g)]);
            decision_rel = decision_rel.max((yc[l.xhat(i) + c] - oracle[g]).abs() / denom);
        }
    }
    let lam_scale = sol.lambda_star.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut multiplier_rel = 0.0f64;
    for i in 0..n {
        let r = controller.r()[i];
        for (row, lb) in sol.lambda_star.iter().enumerate() {
            let v = r * yc[l.lambda() + i * l.p + row];
            multiplier_rel = multiplier_rel.max((v - lb).abs() / lam_scale);
        }
    }
    OracleMatch {
        decision_rel,
        multiplier_rel,
    }
}

/// Runs a validated model. Runtime failures after the start are recorded in
/// the report (with every sample up to the failure) rather than returned.
pub fn run_scenario(model: &Model, variant: Variant) -> Result<RunOutput> {
    let games: Vec<GameDefinition> = model.segment_games()?;
    let times = model.segment_times();
    let nseg = times.len() - 1;
    let games = &games[..nseg];
    let controllers: Vec<Controller> = games
        .iter()
        .map(|g| Controller::new(g.clone(), model.controller))
        .collect::<Result<_>>()?;
    let systems: Vec<ClosedLoop> = controllers
        .iter()
        .map(|c| ClosedLoop::new(c.clone(), variant == Variant::Reduced, ClosedLoop::prox_parameter(&model.method)))
        .collect();
    let oracle: Vec<SegmentOracle> = games.iter().map(segment_oracle).collect::<Result<_>>()?;

    let first = &systems[0];
    let (eq_plant, eq_ctrl) = equilibrium_state(&first.controller, &oracle[0].penalized)?;
    let plant0 = match model.initial.plant {
        PlantInit::Equilibrium => eq_plant,
        PlantInit::Zeros => vec![0.0; first.plant_dim()],
    };
    let mut ctrl0 = match model.initial.controller {
        ControllerInit::Equilibrium => eq_ctrl,
        ControllerInit::Zeros => vec![0.0; first.controller.dim()],
    };
    if variant == Variant::Reduced {
        let n = first.grid.n();
        let l = &first.controller.layout;
        let ihat: Vec<f64> = (0..n).map(|i| ctrl0[l.xhat(i)]).collect();
        let total: f64 = ihat.iter().sum();
        ctrl0[..n].fill(total);
    }
    let mut y = [plant0, ctrl0].concat();

    let np = first.plant_dim();
    let mut header = vec!["time".to_string()];
    let names = ["I", "V"];
    for name in names {
        header.extend((1..=first.grid.n()).map(|i| format!("plant.{name}.{i}")));
    }
    header.extend((1..=first.grid.m()).map(|k| format!("plant.Il.{k}")));
    header.extend(first.controller.layout.names("ctrl"));
    header.extend(Diagnostics::NAMES.iter().map(|s| s.to_string()));

    let theta0 = theta_sums(&first.controller, &y[np..]);
    let nu0: f64 = y[np + first.grid.n()..np + 2 * first.grid.n()].iter().sum();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut segs: Vec<usize> = Vec::new();
    let mut diags: Vec<Diagnostics> = Vec::new();
    let mut diag_error: Option<Error> = None;

    let mut integrator = Integrator::new(model.method, model.sample_period);
    let sys_refs: Vec<&dyn OdeSystem> = systems.iter().map(|s| s as &dyn OdeSystem).collect();
    let result = if model.t_end > 0.0 {
        integrate_segments(&mut integrator, &sys_refs, &times, &mut y, |k, t, state| {
            match diagnose(&systems[k], state, &theta0) {
                Ok(d) => {
                    let mut row = Vec::with_capacity(header.len());
                    row.push(t);
                    row.extend_from_slice(state);
                    row.extend_from_slice(&d.values());
                    rows.push(row);
                    segs.push(k);
                    diags.push(d);
                }
                Err(e) => {
                    diag_error.get_or_insert(e);
                }
            }
        })
    } else {
        Ok(())
    };
    if let Some(e) = diag_error {
        return Err(e);
    }
    let error = result.err().map(|e| e.to_string());

    let last_ctrl = systems
        .get(segs.last().copied().unwrap_or(0))
        .map(|s| &s.controller)
        .unwrap_or(&first.controller);
    let final_state = rows.last().map(|r| r[1..1 + y.len()].to_vec()).unwrap_or_else(|| y.clone());
    let final_kkt = last_ctrl.kkt_residual(&final_state[np..]);
    let segment_end: Vec<usize> = (0..nseg)
        .filter_map(|k| segs.iter().rposition(|s| *s == k))
        .collect();

    let t_final = rows.last().map(|r| r[0]).unwrap_or(0.0);
    let mut convergence_times = vec![None; nseg];
    for (k, slot) in convergence_times.iter_mut().enumerate() {
        let idx: Vec<usize> = (0..rows.len()).filter(|&j| segs[j] == k).collect();
        let mut since: Option<f64> = None;
        for &j in &idx {
            if diags[j].kkt < model.check.kkt {
                since.get_or_insert(rows[j][0]);
            } else {
                since = None;
            }
        }
        *slot = since;
    }

    let mut nu_drift = 0.0f64;
    let mut theta_drift = 0.0f64;
    let mut rate = 0.0f64;
    for (row, d) in rows.iter().zip(&diags) {
        let nd = (d.nu_sum - nu0).abs();
        nu_drift = nu_drift.max(nd);
        theta_drift = theta_drift.max(d.theta_sum_drift);
        rate = rate.max(nd.max(d.theta_sum_drift) / row[0].max(1.0));
    }
    let last = diags.last().copied().unwrap_or_default();
    let consensus = Consensus {
        upsilon_spread: last.upsilon_spread,
        upsilon_sum_error: last.upsilon_sum_error,
        lambda_spread: last.lambda_spread,
        nu_sum_drift: nu_drift,
        theta_sum_drift: theta_drift,
        drift_rate: rate,
    };
    let violations = Violations {
        voltage: diags.iter().map(|d| d.voltage_violation).fold(0.0, f64::max),
        line: diags.iter().map(|d| d.line_violation).fold(0.0, f64::max),
        segment_end_voltage: segment_end.iter().map(|&j| diags[j].voltage_violation).collect(),
        segment_end_line: segment_end.iter().map(|&j| diags[j].line_violation).collect(),
    };
    let lyapunov = Lyapunov {
        e_b_min: diags.iter().map(|d| d.e_b).fold(f64::INFINITY, f64::min),
        e_b_max: diags.iter().map(|d| d.e_b).fold(0.0, f64::max),
        e_r_first: diags.first().map(|d| d.e_r).unwrap_or(0.0),
        e_r_last: last.e_r,
        e_r_max: diags.iter().map(|d| d.e_r).fold(0.0, f64::max),
    };
    let final_oracle = &oracle[segs.last().copied().unwrap_or(0)];
    let oracle_match = relative_match(last_ctrl, &final_state[np..], &final_oracle.constrained);
    let residuals = Residuals {
        final_kkt,
        final_max: final_kkt.max(),
        segment_end: segment_end.iter().map(|&j| diags[j].kkt).collect(),
    };

    let mut checks = Vec::new();
    for (k, &j) in segment_end.iter().enumerate() {
        checks.push(Check::below(&format!("segment{}.kkt", k + 1), diags[j].kkt, model.check.kkt));
        checks.push(Check {
            name: format!("segment{}.boxes", k + 1),
            value: diags[j].voltage_violation.max(diags[j].line_violation),
            threshold: 0.0,
            pass: diags[j].voltage_violation <= 0.0 && diags[j].line_violation <= 0.0,
        });
    }
    if !rows.is_empty() {
        checks.push(Check::below("upsilon_spread", last.upsilon_spread, model.check.upsilon_spread));
        checks.push(Check::below("upsilon_sum", last.upsilon_sum_error, model.check.upsilon_sum));
        checks.push(Check::below("lambda_spread", last.lambda_spread, model.check.lambda_spread));
        checks.push(Check::below("conservation_rate", rate, model.check.conservation_rate));
        checks.push(Check::below("oracle_decision", oracle_match.decision_rel, model.check.oracle_rel));
        checks.push(Check::below("oracle_multiplier", oracle_match.multiplier_rel, model.check.oracle_rel));
    }

    let mut warnings = Vec::new();
    if games[0].params().dgus.iter().any(|d| d.u_ref != 0.0) {
        warnings.push("nonzero u_ref configured".into());
    }
    for (k, o) in oracle.iter().enumerate() {
        if !o.penalty.bound_satisfied() {
            warnings.push(format!("segment {}: penalty weights below the sufficient bound", k + 1));
        }
        let insufficient = o
            .penalty
            .voltage_required
            .iter()
            .zip(&games[k].penalties.rho_v)
            .chain(o.penalty.line_required.iter().zip(&games[k].penalties.rho_line))
            .any(|(req, rho)| req > rho);
        if insufficient {
            warnings.push(format!(
                "segment {}: penalty is not exact at the constrained equilibrium; controller rest point differs",
                k + 1
            ));
        }
        if !o.constrained.converged {
            warnings.push(format!("segment {}: constrained oracle did not converge", k + 1));
        }
    }
    let flags = Flags {
        price_reading: format!(
            "base price l = {}, sensitivity p_r = {}",
            games[0].price.base, games[0].price.sensitivity
        ),
        load_step: "I_L and Z_L each decreased by the step".into(),
        input_law: format!("{:?}", model.controller.input_law),
        variant: format!("{variant:?}"),
        warnings,
    };
    let margins = Margins {
        price_positivity: games.iter().map(|g| price_positivity_margin(g.params(), &g.price)).collect(),
        monotonicity: games.iter().map(|g| g.monotonicity_margins()).collect(),
        penalty: oracle.iter().map(|o| o.penalty.clone()).collect(),
    };
    let config = serde_json::json!({
        "name": model.name,
        "method": match model.method {
            Method::Rk4 { dt } => serde_json::json!({"method": "rk4", "dt": dt}),
            Method::Rk45 { rtol, atol, h_max } => serde_json::json!({"method": "rk45", "rtol": rtol, "atol": atol, "h_max": h_max}),
        },
        "t_end": model.t_end,
        "sample_period": model.sample_period,
        "controller": model.controller,
        "events": model.events,
        "initial": model.initial,
        "check": model.check,
    });
    let report = RunReport {
        scenario: model.name.clone(),
        completed: error.is_none(),
        error,
        samples: rows.len(),
        t_final,
        residuals,
        margins,
        consensus,
        convergence_times,
        violations,
        lyapunov,
        oracle,
        oracle_match,
        checks,
        flags,
        config,
    };
    Ok(RunOutput {
        header,
        rows,
        segments: segs,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    #[test]
    fn plant_converges_under_constant_input() {
        let model = Scenario::ring4().build().unwrap();
        let grid = model.game.grid.clone();
        let u = DVector::from_vec(vec![378.0, 378.2, 377.8, 377.7]);
        let target = grid.equilibrium(&u).unwrap().to_vector();
        struct Open<'a>(&'a Microgrid, &'a [f64]);
        impl OdeSystem for Open<'_> {
            fn dim(&self) -> usize {
                self.0.state_dim()
            }
            fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
                self.0.rhs_into(y, self.1, dy);
            }
        }
        let shifted = DVector::from_iterator(4, u.iter().map(|v| v - 0.5));
        let mut y = grid.equilibrium(&shifted).unwrap().to_vector().as_slice().to_vec();
        Integrator::new(Method::Rk4 { dt: 1e-5 }, 0.0)
            .run(&Open(&grid, u.as_slice()), 0.0, 1.0, &mut y, false, |_, _| {})
            .unwrap();
        let gap = (DVector::from_vec(y) - target).amax();
        assert!(gap < 1e-6, "{gap}");
    }

    #[test]
    fn zero_horizon_run() {
        let mut s = Scenario::ring4();
        s.integrator.t_end = 0.0.into();
        let out = run_scenario(&s.build().unwrap(), Variant::Full).unwrap();
        assert!(out.rows.is_empty());
        assert!(out.report.completed);
        assert!(out.report.checks.is_empty());
    }

    #[test]
    fn csv_shape() {
        let mut s = Scenario::ring4();
        s.integrator.t_end = "20 ms".into();
        s.events.clear();
        let out = run_scenario(&s.build().unwrap(), Variant::Full).unwrap();
        assert_eq!(out.header.len(), 1 + 12 + 92 + Diagnostics::NAMES.len());
        assert_eq!(out.rows.len(), 3);
        assert!(out.column("plant.V.2").is_some());
        assert!(out.column("ctrl.lambda.3.7").is_some());
        let csv = out.csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("0.0000000000000000e0,"));
    }

    #[test]
    fn warm_start_is_rest_point() {
        let model = Scenario::ring4().build().unwrap();
        let c = Controller::new(model.game.clone(), model.controller).unwrap();
        let o = segment_oracle(&model.game).unwrap();
        let (plant, ctrl) = equilibrium_state(&c, &o.penalized).unwrap();
        assert!(c.kkt_residual(&ctrl).max() < 1e-6);
        let sys = ClosedLoop::new(c, false, 1e-5);
        let y = [plant, ctrl].concat();
        let mut dy = vec![0.0; y.len()];
        sys.rhs(0.0, &y, &mut dy);
        let np = sys.plant_dim();
        let mut dc = vec![0.0; sys.controller.dim()];
        sys.controller.rhs_into(&y[np..], &y[..4], PenaltyMode::LeastNorm, &mut dc);
        assert!(dy[..np].iter().all(|v| v.abs() < 1e-6), "{:?}", &dy[..np]);
        assert!(dc.iter().all(|v| v.abs() < 1e-6), "{dc:?}");
    }
}
