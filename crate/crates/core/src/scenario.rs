//! Scenario files: the whole experiment in one JSON document.
//!
//! Node and line indices are one-based in the file. Physical values accept
//! unit suffixes (see [`crate::units`]).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::ControllerParams;
use crate::error::{Error, Result};
use crate::game::{AgentWeights, GameDefinition, PenaltyParams, PriceParams};
use crate::integrate::Method;
use crate::plant::{DguParams, LineParams, Microgrid, PlantParams};
use crate::topology::{Edge, Graph, MicrogridTopology};
use crate::units::{Dimension, Quantity};

const RING4: &str = include_str!("../scenarios/ring4.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DguSpec {
    #[serde(rename = "R")]
    pub resistance: Quantity,
    #[serde(rename = "L")]
    pub inductance: Quantity,
    #[serde(rename = "C")]
    pub capacitance: Quantity,
    #[serde(rename = "Z_L")]
    pub load_impedance: Quantity,
    #[serde(rename = "I_L")]
    pub load_current: Quantity,
    #[serde(rename = "V_min")]
    pub v_min: Quantity,
    #[serde(rename = "V_max")]
    pub v_max: Quantity,
    #[serde(rename = "V_ref")]
    pub v_ref: Quantity,
    #[serde(rename = "I_ref", default = "zero")]
    pub i_ref: Quantity,
    #[serde(rename = "u_ref", default = "zero")]
    pub u_ref: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub head: usize,
    pub tail: usize,
    pub manager: usize,
    #[serde(rename = "R")]
    pub resistance: Quantity,
    #[serde(rename = "L")]
    pub inductance: Quantity,
    #[serde(rename = "I_min")]
    pub i_min: Quantity,
    #[serde(rename = "I_max")]
    pub i_max: Quantity,
    #[serde(rename = "I_ref", default = "zero")]
    pub i_ref: Quantity,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub r: f64,
    pub alpha_i: f64,
    pub alpha_v: f64,
    pub alpha_u: f64,
    pub alpha_line: f64,
    pub rho_v: f64,
    /// Applied to every line the agent manages.
    pub rho_line: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    #[serde(default = "default_method")]
    pub method: MethodName,
    #[serde(default)]
    pub dt: Option<Quantity>,
    #[serde(default)]
    pub rtol: Option<f64>,
    #[serde(default)]
    pub atol: Option<f64>,
    #[serde(default)]
    pub h_max: Option<Quantity>,
    pub t_end: Quantity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Rk4,
    Rk45,
}

fn default_method() -> MethodName {
    MethodName::Rk4
}

fn zero() -> Quantity {
    Quantity::Number(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    pub time: Quantity,
    /// Subtracted from every `I_L`.
    #[serde(default = "zero")]
    pub load_current_step: Quantity,
    /// Subtracted from every `Z_L`.
    #[serde(default = "zero")]
    pub load_impedance_step: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_sample")]
    pub sample_period: Quantity,
}

fn default_sample() -> Quantity {
    Quantity::Text("10 ms".into())
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            sample_period: default_sample(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantInit {
    /// Steady state for the equilibrium input of the initial game.
    Equilibrium,
    Zeros,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerInit {
    Zeros,
    /// Rest point of the penalized controller for the initial game.
    Equilibrium,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default = "plant_eq")]
    pub plant: PlantInit,
    #[serde(default = "ctrl_zeros")]
    pub controller: ControllerInit,
}

fn plant_eq() -> PlantInit {
    PlantInit::Equilibrium
}

fn ctrl_zeros() -> ControllerInit {
    ControllerInit::Zeros
}

impl Default for InitialSpec {
    fn default() -> Self {
        Self {
            plant: PlantInit::Equilibrium,
            controller: ControllerInit::Zeros,
        }
    }
}

/// Thresholds used by `simulate --check`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSpec {
    pub kkt: f64,
    pub upsilon_spread: f64,
    pub upsilon_sum: f64,
    pub lambda_spread: f64,
    pub conservation_rate: f64,
    pub oracle_rel: f64,
}

impl Default for CheckSpec {
    fn default() -> Self {
        Self {
            kkt: 1e-3,
            upsilon_spread: 1e-4,
            upsilon_sum: 1e-3,
            lambda_spread: 1e-4,
            conservation_rate: 1e-9,
            oracle_rel: 1e-2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub dgus: Vec<DguSpec>,
    pub lines: Vec<LineSpec>,
    /// Communication edges (one-based); defaults to the electrical graph.
    #[serde(default)]
    pub communication: Option<Vec<(usize, usize)>>,
    pub price: PriceParams,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub controller: ControllerParams,
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub check: CheckSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoadEvent {
    pub time: f64,
    pub load_current_step: f64,
    pub load_impedance_step: f64,
}

/// A validated scenario in SI units.
#[derive(Debug, Clone)]
pub struct Model {
    pub name: String,
    pub game: GameDefinition,
    pub controller: ControllerParams,
    pub method: Method,
    pub t_end: f64,
    pub events: Vec<LoadEvent>,
    pub sample_period: f64,
    pub initial: InitialSpec,
    pub check: CheckSpec,
}

impl Model {
    /// Games in force on each segment between events.
    pub fn segment_games(&self) -> Result<Vec<GameDefinition>> {
        let mut out = vec![self.game.clone()];
        for e in &self.events {
            let grid = out.last().unwrap().grid.with_load_step(e.load_current_step, e.load_impedance_step)?;
            out.push(self.game.with_grid(grid)?);
        }
        Ok(out)
    }

    /// Segment boundaries `[0, t_1, ..., t_end]`, dropping events at or
    /// after `t_end`.
    pub fn segment_times(&self) -> Vec<f64> {
        let mut times = vec![0.0];
        times.extend(self.events.iter().map(|e| e.time).filter(|t| *t < self.t_end));
        times.push(self.t_end);
        times
    }
}

struct Collector(Vec<String>);

impl Collector {
    fn get(&mut self, what: String, q: &Quantity, dim: Dimension) -> f64 {
        match q.si(dim) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                self.0.push(format!("{what}: value {v} is not finite"));
                f64::NAN
            }
            Err(e) => {
                self.0.push(format!("{what}: {e}"));
                f64::NAN
            }
        }
    }
}

impl Scenario {
    pub fn ring4() -> Self {
        serde_json::from_str(RING4).expect("bundled ring scenario parses")
    }

    /// `n` identical DGUs on a ring (a single line for `n = 2`), each
    /// managing the line it heads.
    pub fn symmetric_ring(n: usize) -> Self {
        let mut s = Self::ring4();
        s.name = format!("symmetric-ring-{n}");
        let dgu = s.dgus[0].clone();
        let line = s.lines[0].clone();
        let agent = AgentSpec {
            alpha_i: 20.0,
            ..s.agents[0]
        };
        s.dgus = vec![dgu; n];
        s.agents = vec![agent; n];
        let edges = if n == 2 { 1 } else { n };
        s.lines = (0..edges)
            .map(|k| LineSpec {
                head: k + 1,
                tail: (k + 1) % n + 1,
                manager: k + 1,
                ..line.clone()
            })
            .collect();
        s.communication = None;
        s
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Every problem with the scenario; empty when it builds.
    pub fn validate(&self) -> Vec<String> {
        match self.build_inner() {
            Ok(_) => vec![],
            Err(list) => list,
        }
    }

    pub fn build(&self) -> Result<Model> {
        self.build_inner().map_err(Error::Validation)
    }

    fn build_inner(&self) -> std::result::Result<Model, Vec<String>> {
        let mut c = Collector(Vec::new());
        let n = self.dgus.len();
        let m = self.lines.len();
        if n == 0 {
            c.0.push("scenario has no DGUs".into());
        }
        let dgus: Vec<DguParams> = self
            .dgus
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let w = |f: &str| format!("dgu {} {f}", i + 1);
                DguParams {
                    resistance: c.get(w("R"), &d.resistance, Dimension::Resistance),
                    inductance: c.get(w("L"), &d.inductance, Dimension::Inductance),
                    capacitance: c.get(w("C"), &d.capacitance, Dimension::Capacitance),
                    load_impedance: c.get(w("Z_L"), &d.load_impedance, Dimension::Resistance),
                    load_current: c.get(w("I_L"), &d.load_current, Dimension::Current),
                    v_min: c.get(w("V_min"), &d.v_min, Dimension::Voltage),
                    v_max: c.get(w("V_max"), &d.v_max, Dimension::Voltage),
                    v_ref: c.get(w("V_ref"), &d.v_ref, Dimension::Voltage),
                    i_ref: c.get(w("I_ref"), &d.i_ref, Dimension::Current),
                    u_ref: c.get(w("u_ref"), &d.u_ref, Dimension::Voltage),
                }
            })
            .collect();
        let mut edges = Vec::with_capacity(m);
        let mut managers = Vec::with_capacity(m);
        let lines: Vec<LineParams> = self
            .lines
            .iter()
            .enumerate()
            .map(|(k, l)| {
                let w = |f: &str| format!("line {} {f}", k + 1);
                for (f, v) in [("head", l.head), ("tail", l.tail), ("manager", l.manager)] {
                    if v == 0 || v > n {
                        c.0.push(format!("line {}: {f} {v} is not a node in 1..={n}", k + 1));
                    }
                }
                edges.push(Edge {
                    head: l.head.wrapping_sub(1),
                    tail: l.tail.wrapping_sub(1),
                });
                managers.push(l.manager.wrapping_sub(1));
                LineParams {
                    resistance: c.get(w("R"), &l.resistance, Dimension::Resistance),
                    inductance: c.get(w("L"), &l.inductance, Dimension::Inductance),
                    i_min: c.get(w("I_min"), &l.i_min, Dimension::Current),
                    i_max: c.get(w("I_max"), &l.i_max, Dimension::Current),
                    i_ref: c.get(w("I_ref"), &l.i_ref, Dimension::Current),
                }
            })
            .collect();
        if self.agents.len() != n {
            c.0.push(format!("{} agent records for {n} DGUs", self.agents.len()));
        }
        let params = PlantParams { dgus, lines };
        c.0.extend(params.violations());

        let t_end = c.get("integrator t_end".into(), &self.integrator.t_end, Dimension::Time);
        if !(t_end >= 0.0) {
            c.0.push(format!("integrator t_end must be non-negative (got {t_end})"));
        }
        let method = match self.integrator.method {
            MethodName::Rk4 => match &self.integrator.dt {
                Some(q) => {
                    let dt = c.get("integrator dt".into(), q, Dimension::Time);
                    if !(dt > 0.0) {
                        c.0.push(format!("integrator dt must be positive (got {dt})"));
                    }
                    Some(Method::Rk4 { dt })
                }
                None => {
                    c.0.push("integrator method rk4 needs dt".into());
                    None
                }
            },
            MethodName::Rk45 => {
                let rtol = self.integrator.rtol.unwrap_or(1e-8);
                let atol = self.integrator.atol.unwrap_or(1e-10);
                if !(rtol > 0.0 && atol > 0.0) {
                    c.0.push(format!("rk45 tolerances must be positive (rtol {rtol}, atol {atol})"));
                }
                let h_max = self.integrator.h_max.as_ref().map(|q| c.get("integrator h_max".into(), q, Dimension::Time));
                Some(Method::Rk45 { rtol, atol, h_max })
            }
        };
        let sample_period = c.get("output sample_period".into(), &self.output.sample_period, Dimension::Time);
        if !(sample_period >= 0.0) {
            c.0.push(format!("output sample_period must be non-negative (got {sample_period})"));
        }
        let mut events = Vec::with_capacity(self.events.len());
        for (j, e) in self.events.iter().enumerate() {
            let w = |f: &str| format!("event {} {f}", j + 1);
            let ev = LoadEvent {
                time: c.get(w("time"), &e.time, Dimension::Time),
                load_current_step: c.get(w("load_current_step"), &e.load_current_step, Dimension::Current),
                load_impedance_step: c.get(w("load_impedance_step"), &e.load_impedance_step, Dimension::Resistance),
            };
            if !(ev.time > 0.0) {
                c.0.push(format!("event {}: time must be positive (got {})", j + 1, ev.time));
            }
            if let Some(prev) = events.last().map(|p: &LoadEvent| p.time) {
                if !(ev.time > prev) {
                    c.0.push(format!("event {}: times must be strictly increasing ({} after {prev})", j + 1, ev.time));
                }
            }
            events.push(ev);
        }
        c.0.extend(self.controller.violations());
        if !c.0.is_empty() {
            return Err(c.0);
        }

        let mut problems = Vec::new();
        let topology = Graph::new(n, edges).and_then(|g| MicrogridTopology::new(g, managers));
        let comm = match &self.communication {
            None => None,
            Some(list) => {
                if list.iter().any(|&(a, b)| a == 0 || b == 0 || a > n || b > n) {
                    problems.push(format!("communication edge outside 1..={n}"));
                    None
                } else {
                    let edges = list.iter().map(|&(a, b)| Edge { head: a - 1, tail: b - 1 }).collect();
                    match Graph::new(n, edges) {
                        Ok(g) => Some(g),
                        Err(e) => {
                            problems.push(format!("communication graph: {e}"));
                            None
                        }
                    }
                }
            }
        };
        let topology = match topology {
            Ok(t) => t,
            Err(e) => {
                problems.push(e.to_string());
                return Err(problems);
            }
        };
        let rho_line = (0..m).map(|k| self.agents[topology.manager(k)].rho_line).collect();
        let penalties = PenaltyParams {
            rho_v: self.agents.iter().map(|a| a.rho_v).collect(),
            rho_line,
        };
        let agents: Vec<AgentWeights> = self
            .agents
            .iter()
            .map(|a| AgentWeights {
                r: a.r,
                alpha_u: a.alpha_u,
                alpha_i: a.alpha_i,
                alpha_v: a.alpha_v,
                alpha_line: a.alpha_line,
            })
            .collect();
        let grid = match Microgrid::new(topology, params) {
            Ok(g) => g,
            Err(e) => {
                problems.push(e.to_string());
                return Err(problems);
            }
        };
        if let Some(Method::Rk4 { dt }) = method {
            let bound = grid.stability_bound();
            if dt >= bound {
                problems.push(format!("integrator dt {dt} is not below the line stability bound {bound}"));
            }
        }
        let game = match GameDefinition::new(grid, comm, self.price, agents, penalties) {
            Ok(g) => g,
            Err(e) => {
                problems.push(e.to_string());
                return Err(problems);
            }
        };
        let model = Model {
            name: self.name.clone(),
            game,
            controller: self.controller,
            method: method.expect("checked above"),
            t_end,
            events,
            sample_period,
            initial: self.initial,
            check: self.check,
        };
        if let Err(err) = model.segment_games() {
            problems.push(format!("after load events: {err}"));
        }
        if problems.is_empty() {
            Ok(model)
        } else {
            Err(problems)
        }
    }

    pub fn with_overrides(mut self, dt: Option<f64>, t_end: Option<f64>, eps: Option<f64>) -> Self {
        if let Some(dt) = dt {
            self.integrator.dt = Some(Quantity::Number(dt));
        }
        if let Some(t) = t_end {
            self.integrator.t_end = Quantity::Number(t);
        }
        if let Some(e) = eps {
            self.controller.eps_fast = e;
        }
        self
    }
}
