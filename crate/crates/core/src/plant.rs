//! Electrical dynamics of the DC microgrid.
//!
//! ```text
//! L  dI/dt   = -V - R I + u
//! C  dV/dt   =  I + B I_l - Z_L^{-1} V - I_L
//! Ll dI_l/dt = -Rl I_l - B^T V
//! ```
//!
//! All parameter matrices are diagonal. Quantities are SI.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::topology::MicrogridTopology;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DguParams {
    pub resistance: f64,
    pub inductance: f64,
    pub capacitance: f64,
    pub load_impedance: f64,
    pub load_current: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub v_ref: f64,
    pub i_ref: f64,
    pub u_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub resistance: f64,
    pub inductance: f64,
    pub i_min: f64,
    pub i_max: f64,
    pub i_ref: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub dgus: Vec<DguParams>,
    pub lines: Vec<LineParams>,
}

impl PlantParams {
    /// Every parameter violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (i, d) in self.dgus.iter().enumerate() {
            let id = i + 1;
            for (name, v) in [
                ("resistance", d.resistance),
                ("inductance", d.inductance),
                ("capacitance", d.capacitance),
                ("load impedance", d.load_impedance),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    out.push(format!("DGU {id}: {name} must be positive (got {v})"));
                }
            }
            if !(d.v_min < d.v_max) {
                out.push(format!("DGU {id}: v_min {} must be below v_max {}", d.v_min, d.v_max));
            }
        }
        for (k, l) in self.lines.iter().enumerate() {
            let id = k + 1;
            for (name, v) in [("resistance", l.resistance), ("inductance", l.inductance)] {
                if !(v > 0.0 && v.is_finite()) {
                    out.push(format!("line {id}: {name} must be positive (got {v})"));
                }
            }
            if !(l.i_min < l.i_max) {
                out.push(format!("line {id}: i_min {} must be below i_max {}", l.i_min, l.i_max));
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Params(v.join("; ")))
        }
    }

    /// Decreases every load current by `d_current` and every load impedance
    /// by `d_impedance`. Nothing else changes.
    pub fn apply_load_step(&self, d_current: f64, d_impedance: f64) -> Result<Self> {
        let mut next = self.clone();
        for (i, d) in next.dgus.iter_mut().enumerate() {
            d.load_current -= d_current;
            d.load_impedance -= d_impedance;
            if !(d.load_impedance > 0.0) {
                return Err(Error::Params(format!(
                    "load step leaves DGU {} with non-positive impedance {}",
                    i + 1,
                    d.load_impedance
                )));
            }
        }
        Ok(next)
    }
}

/// Electrical state: generated currents, load voltages, line currents.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub current: DVector<f64>,
    pub voltage: DVector<f64>,
    pub line_current: DVector<f64>,
}

impl PlantState {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            current: DVector::zeros(n),
            voltage: DVector::zeros(n),
            line_current: DVector::zeros(m),
        }
    }

    /// Global ordering `(I, V, I_l)`.
    pub fn to_vector(&self) -> DVector<f64> {
        let (n, m) = (self.current.len(), self.line_current.len());
        let mut v = DVector::zeros(2 * n + m);
        v.rows_mut(0, n).copy_from(&self.current);
        v.rows_mut(n, n).copy_from(&self.voltage);
        v.rows_mut(2 * n, m).copy_from(&self.line_current);
        v
    }

    pub fn from_slice(n: usize, m: usize, y: &[f64]) -> Result<Self> {
        check_len("plant state", 2 * n + m, y.len())?;
        Ok(Self {
            current: DVector::from_column_slice(&y[..n]),
            voltage: DVector::from_column_slice(&y[n..2 * n]),
            line_current: DVector::from_column_slice(&y[2 * n..]),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.current.iter().chain(self.voltage.iter()).chain(self.line_current.iter()).all(|v| v.is_finite())
    }
}

/// Topology and parameters bundled; the unit the dynamics are defined on.
#[derive(Debug, Clone)]
pub struct Microgrid {
    pub topology: MicrogridTopology,
    pub params: PlantParams,
}

impl Microgrid {
    pub fn new(topology: MicrogridTopology, params: PlantParams) -> Result<Self> {
        check_len("DGU parameter records", topology.n(), params.dgus.len())?;
        check_len("line parameter records", topology.m(), params.lines.len())?;
        params.validate()?;
        Ok(Self { topology, params })
    }

    pub fn n(&self) -> usize {
        self.topology.n()
    }

    pub fn m(&self) -> usize {
        self.topology.m()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.n() + self.m()
    }

    pub fn with_load_step(&self, d_current: f64, d_impedance: f64) -> Result<Self> {
        Ok(Self {
            topology: self.topology.clone(),
            params: self.params.apply_load_step(d_current, d_impedance)?,
        })
    }

    /// Flat right-hand side on the `(I, V, I_l)` ordering.
    pub fn rhs_into(&self, y: &[f64], u: &[f64], dy: &mut [f64]) {
        let (n, m) = (self.n(), self.m());
        let (current, rest) = y.split_at(n);
        let (voltage, line) = rest.split_at(n);
        for (i, d) in self.params.dgus.iter().enumerate() {
            dy[i] = (-voltage[i] - d.resistance * current[i] + u[i]) / d.inductance;
            dy[n + i] = (current[i] - voltage[i] / d.load_impedance - d.load_current) / d.capacitance;
        }
        for (k, (e, l)) in self.topology.graph().edges().iter().zip(&self.params.lines).enumerate() {
            // B I_l adds +I_lk at the head and -I_lk at the tail.
            dy[n + e.head] += line[k] / self.params.dgus[e.head].capacitance;
            dy[n + e.tail] -= line[k] / self.params.dgus[e.tail].capacitance;
            dy[2 * n + k] = (-l.resistance * line[k] - (voltage[e.head] - voltage[e.tail])) / l.inductance;
        }
        debug_assert_eq!(dy.len(), 2 * n + m);
    }

    pub fn rhs(&self, state: &PlantState, u: &DVector<f64>) -> Result<PlantState> {
        let (n, m) = (self.n(), self.m());
        check_len("plant currents", n, state.current.len())?;
        check_len("plant voltages", n, state.voltage.len())?;
        check_len("line currents", m, state.line_current.len())?;
        check_len("control input", n, u.len())?;
        let y = state.to_vector();
        let mut dy = vec![0.0; 2 * n + m];
        self.rhs_into(y.as_slice(), u.as_slice(), &mut dy);
        PlantState::from_slice(n, m, &dy)
    }

    /// Matrix `M` and offset `c` with `d/dt (I, V, I_l) = M y + E u + c`;
    /// the steady state solves `M y = -(E u + c)`.
    fn steady_state_system(&self, u: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let (n, m) = (self.n(), self.m());
        let dim = 2 * n + m;
        let mut a = DMatrix::zeros(dim, dim);
        let mut b = DVector::zeros(dim);
        for (i, d) in self.params.dgus.iter().enumerate() {
            // V + R I = u
            a[(i, i)] = d.resistance;
            a[(i, n + i)] = 1.0;
            b[i] = u[i];
            // I + B I_l - V / Z = I_L
            a[(n + i, i)] = 1.0;
            a[(n + i, n + i)] = -1.0 / d.load_impedance;
            b[n + i] = d.load_current;
        }
        for (k, (e, l)) in self.topology.graph().edges().iter().zip(&self.params.lines).enumerate() {
            a[(n + e.head, 2 * n + k)] += 1.0;
            a[(n + e.tail, 2 * n + k)] -= 1.0;
            // Rl I_l + B^T V = 0
            a[(2 * n + k, 2 * n + k)] = l.resistance;
            a[(2 * n + k, n + e.head)] = 1.0;
            a[(2 * n + k, n + e.tail)] = -1.0;
        }
        (a, b)
    }

    /// The unique state with zero derivative under constant input `u`.
    pub fn equilibrium(&self, u: &DVector<f64>) -> Result<PlantState> {
        check_len("control input", self.n(), u.len())?;
        let (a, b) = self.steady_state_system(u.as_slice());
        let svd = a.clone().svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if !(smin > 1e-13 * smax) {
            return Err(Error::Singular(format!(
                "steady-state system is ill-conditioned (singular values {smin:e} .. {smax:e})"
            )));
        }
        let y = a
            .clone()
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Singular("steady-state LU failed".into()))?;
        let resid = (&a * &y - &b).amax();
        if resid > 1e-10 * b.amax().max(1.0) {
            return Err(Error::Singular(format!("steady-state residual {resid:e} too large")));
        }
        PlantState::from_slice(self.n(), self.m(), y.as_slice())
    }

    /// Largest step accepted by the fixed-step integrator: twice the fastest
    /// line time constant.
    pub fn stability_bound(&self) -> f64 {
        self.params
            .lines
            .iter()
            .map(|l| 2.0 * l.inductance / l.resistance)
            .fold(f64::INFINITY, f64::min)
    }

    /// Stored energy weights: `(L, C, Ll)` diagonals in global ordering.
    pub fn energy_weights(&self) -> Vec<f64> {
        let mut w: Vec<f64> = self.params.dgus.iter().map(|d| d.inductance).collect();
        w.extend(self.params.dgus.iter().map(|d| d.capacitance));
        w.extend(self.params.lines.iter().map(|l| l.inductance));
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::Graph;

    fn dgu(r: f64, l: f64, c: f64, z: f64, il: f64) -> DguParams {
        DguParams {
            resistance: r,
            inductance: l,
            capacitance: c,
            load_impedance: z,
            load_current: il,
            v_min: 377.0,
            v_max: 383.0,
            v_ref: 380.0,
            i_ref: 0.0,
            u_ref: 0.0,
        }
    }

    fn single(r: f64, z: f64, il: f64) -> Microgrid {
        let topo = MicrogridTopology::new(Graph::new(1, vec![]).unwrap(), vec![]).unwrap();
        Microgrid::new(
            topo,
            PlantParams {
                dgus: vec![dgu(r, 1.0, 1.0, z, il)],
                lines: vec![],
            },
        )
        .unwrap()
    }

    fn ring() -> Microgrid {
        let topo = MicrogridTopology::new(Graph::ring(4).unwrap(), vec![0, 1, 2, 0]).unwrap();
        let line = |r: f64, l: f64| LineParams {
            resistance: r,
            inductance: l,
            i_min: -20.0,
            i_max: 20.0,
            i_ref: 0.0,
        };
        Microgrid::new(
            topo,
            PlantParams {
                dgus: vec![
                    dgu(0.020, 1.8e-3, 2.2e-3, 16.0, 30.0),
                    dgu(0.018, 2.0e-3, 1.9e-3, 50.0, 15.0),
                    dgu(0.016, 3.0e-3, 2.5e-3, 16.0, 30.0),
                    dgu(0.015, 2.2e-3, 1.7e-3, 20.0, 26.0),
                ],
                lines: vec![
                    line(0.070, 2.1e-6),
                    line(0.050, 2.0e-6),
                    line(0.080, 3.0e-6),
                    line(0.060, 2.2e-6),
                ],
            },
        )
        .unwrap()
    }

    #[test]
    fn origin_is_stationary_without_load() {
        let mut g = ring();
        for d in &mut g.params.dgus {
            d.load_current = 0.0;
        }
        let ds = g.rhs(&PlantState::zeros(4, 4), &DVector::zeros(4)).unwrap();
        assert_eq!(ds.to_vector().amax(), 0.0);
    }

    #[test]
    fn single_loop_current_decay() {
        let g = single(2.0, 1.0, 0.0);
        let s = PlantState {
            current: DVector::from_element(1, 1.0),
            voltage: DVector::zeros(1),
            line_current: DVector::zeros(0),
        };
        let ds = g.rhs(&s, &DVector::zeros(1)).unwrap();
        assert_eq!(ds.current[0], -2.0);
    }

    #[test]
    fn voltage_divider_equilibrium() {
        let g = single(1.0, 1.0, 0.0);
        let eq = g.equilibrium(&DVector::from_element(1, 10.0)).unwrap();
        assert!((eq.current[0] - 5.0).abs() < 1e-12);
        assert!((eq.voltage[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_equilibrium_without_input_or_load() {
        let mut g = ring();
        for d in &mut g.params.dgus {
            d.load_current = 0.0;
        }
        let eq = g.equilibrium(&DVector::zeros(4)).unwrap();
        assert!(eq.to_vector().amax() < 1e-12);
    }

    #[test]
    fn equilibrium_zeroes_rhs() {
        let g = ring();
        let u = DVector::from_vec(vec![377.9, 378.3, 377.75, 377.7]);
        let eq = g.equilibrium(&u).unwrap();
        let ds = g.rhs(&eq, &u).unwrap();
        // Scale: derivative of a state perturbed by 1 V / 1 A.
        let scale = 1.0 / 2.0e-6;
        assert!(ds.to_vector().amax() / scale < 1e-8, "{}", ds.to_vector().amax());
    }

    #[test]
    fn linear_in_state_and_input_without_load() {
        let mut g = ring();
        for d in &mut g.params.dgus {
            d.load_current = 0.0;
        }
        let s1 = PlantState::from_slice(4, 4, &(0..12).map(|k| k as f64).collect::<Vec<_>>()).unwrap();
        let s2 = PlantState::from_slice(4, 4, &(0..12).map(|k| (k as f64).cos()).collect::<Vec<_>>()).unwrap();
        let u1 = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let u2 = DVector::from_vec(vec![-1.0, 0.5, 0.0, 2.0]);
        let (a, b) = (0.3, -1.7);
        let comb = PlantState::from_slice(4, 4, (s1.to_vector() * a + s2.to_vector() * b).as_slice()).unwrap();
        let lhs = g.rhs(&comb, &(&u1 * a + &u2 * b)).unwrap().to_vector();
        let rhs = g.rhs(&s1, &u1).unwrap().to_vector() * a + g.rhs(&s2, &u2).unwrap().to_vector() * b;
        assert!((lhs - &rhs).amax() <= 1e-9 * rhs.amax());
    }

    #[test]
    fn ring_load_step() {
        let g = ring();
        let stepped = g.params.apply_load_step(3.0, 3.0).unwrap();
        assert_eq!(stepped.dgus[0].load_current, 27.0);
        assert_eq!(stepped.dgus[0].load_impedance, 13.0);
        assert_eq!(stepped.dgus[1].load_impedance, 47.0);
        assert_eq!(stepped.dgus[0].inductance, g.params.dgus[0].inductance);
        assert_eq!(g.params.apply_load_step(0.0, 0.0).unwrap(), g.params);
    }

    #[test]
    fn load_step_rejects_nonpositive_impedance() {
        let g = single(1.0, 2.0, 0.0);
        assert!(g.params.apply_load_step(0.0, 3.0).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let g = ring();
        assert!(matches!(
            g.rhs(&PlantState::zeros(3, 4), &DVector::zeros(4)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn invalid_params_listed() {
        let mut p = ring().params;
        p.dgus[0].inductance = 0.0;
        p.lines[2].i_min = 30.0;
        assert_eq!(p.violations().len(), 2);
    }
}
