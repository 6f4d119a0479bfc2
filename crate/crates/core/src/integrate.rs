//! Explicit Runge-Kutta integration over segments.
//!
//! Samples are emitted only at step boundaries, so sampling never alters
//! the trajectory. A run is a sequence of segments, each with its own
//! right-hand side; segment boundaries are step boundaries, which is how
//! parameter events are applied with a continuous state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Applied after every accepted step of length `h`.
    fn post_step(&self, _h: f64, _y: &mut [f64]) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Rk4 {
        dt: f64,
    },
    Rk45 {
        rtol: f64,
        atol: f64,
        #[serde(default)]
        h_max: Option<f64>,
    },
}

/// One Dormand-Prince step size controller state.
#[derive(Debug, Clone, Copy)]
struct Adaptive {
    h: f64,
}

pub struct Integrator {
    pub method: Method,
    /// Spacing of emitted samples; zero emits every step.
    pub sample_period: f64,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    err: Vec<f64>,
    adaptive: Option<Adaptive>,
    pub steps: usize,
    pub rejected: usize,
}

impl Integrator {
    pub fn new(method: Method, sample_period: f64) -> Self {
        Self {
            method,
            sample_period,
            k: Default::default(),
            tmp: Vec::new(),
            err: Vec::new(),
            adaptive: None,
            steps: 0,
            rejected: 0,
        }
    }

    fn ensure(&mut self, dim: usize) {
        if self.tmp.len() != dim {
            for k in &mut self.k {
                *k = vec![0.0; dim];
            }
            self.tmp = vec![0.0; dim];
            self.err = vec![0.0; dim];
        }
    }

    /// Integrates `sys` from `t0` to `t1` in place. `observe(t, y)` is called
    /// at every sample time in `(t0, t1]` and at `t1`; when `emit_start` it is
    /// also called at `t0`. A non-finite state aborts with the time of the
    /// last good state, which is left in `y`.
    pub fn run<S, F>(&mut self, sys: &S, t0: f64, t1: f64, y: &mut [f64], emit_start: bool, mut observe: F) -> Result<()>
    where
        S: OdeSystem + ?Sized,
        F: FnMut(f64, &[f64]),
    {
        self.ensure(sys.dim());
        if emit_start {
            observe(t0, y);
        }
        if !(t1 > t0) {
            return Ok(());
        }
        match self.method {
            Method::Rk4 { dt } => self.run_rk4(sys, t0, t1, dt, y, &mut observe),
            Method::Rk45 { rtol, atol, h_max } => self.run_rk45(sys, t0, t1, rtol, atol, h_max, y, &mut observe),
        }
    }

    fn run_rk4<S, F>(&mut self, sys: &S, t0: f64, t1: f64, dt: f64, y: &mut [f64], observe: &mut F) -> Result<()>
    where
        S: OdeSystem + ?Sized,
        F: FnMut(f64, &[f64]),
    {
        let steps = ((t1 - t0) / dt).round().max(1.0) as usize;
        let h = (t1 - t0) / steps as f64;
        let stride = if self.sample_period > 0.0 {
            ((self.sample_period / h).round() as usize).max(1)
        } else {
            1
        };
        let mut last_good = y.to_vec();
        for s in 1..=steps {
            let t = t0 + (s - 1) as f64 * h;
            last_good.copy_from_slice(y);
            self.rk4_step(sys, t, h, y);
            sys.post_step(h, y);
            self.steps += 1;
            if !y.iter().all(|v| v.is_finite()) {
                y.copy_from_slice(&last_good);
                return Err(Error::Integration {
                    time: t,
                    reason: "non-finite state".into(),
                });
            }
            if s % stride == 0 || s == steps {
                let ts = if s == steps { t1 } else { t0 + s as f64 * h };
                observe(ts, y);
            }
        }
        Ok(())
    }

    fn rk4_step<S: OdeSystem + ?Sized>(&mut self, sys: &S, t: f64, h: f64, y: &mut [f64]) {
        let [k1, k2, k3, k4, ..] = &mut self.k;
        let tmp = &mut self.tmp;
        sys.rhs(t, y, k1);
        for j in 0..y.len() {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        sys.rhs(t + 0.5 * h, tmp, k2);
        for j in 0..y.len() {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        sys.rhs(t + 0.5 * h, tmp, k3);
        for j in 0..y.len() {
            tmp[j] = y[j] + h * k3[j];
        }
        sys.rhs(t + h, tmp, k4);
        for j in 0..y.len() {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn run_rk45<S, F>(
        &mut self,
        sys: &S,
        t0: f64,
        t1: f64,
        rtol: f64,
        atol: f64,
        h_max: Option<f64>,
        y: &mut [f64],
        observe: &mut F,
    ) -> Result<()>
    where
        S: OdeSystem + ?Sized,
        F: FnMut(f64, &[f64]),
    {
        const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
        const A: [[f64; 6]; 7] = [
            [0.0; 6],
            [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const E: [f64; 7] = [
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        let span = t1 - t0;
        let h_max = h_max.unwrap_or(span).min(span);
        let mut h = self.adaptive.map(|a| a.h).unwrap_or(span * 1e-6).min(h_max);
        let mut t = t0;
        let mut next_sample = if self.sample_period > 0.0 {
            t0 + self.sample_period
        } else {
            f64::INFINITY
        };
        let mut sample_index = 1usize;
        let dim = y.len();
        while t < t1 {
            let target = next_sample.min(t1);
            let mut step = h.min(target - t);
            let lands = step >= target - t;
            if lands {
                step = target - t;
            }
            sys.rhs(t, y, &mut self.k[0]);
            for s in 1..7 {
                for j in 0..dim {
                    let mut acc = 0.0;
                    for (q, a) in A[s][..s].iter().enumerate() {
                        acc += a * self.k[q][j];
                    }
                    self.tmp[j] = y[j] + step * acc;
                }
                let (head, tail) = self.k.split_at_mut(s);
                let _ = head;
                sys.rhs(t + C[s] * step, &self.tmp, &mut tail[0]);
            }
            let mut err = 0.0f64;
            for j in 0..dim {
                let mut e = 0.0;
                for (q, w) in E.iter().enumerate() {
                    e += w * self.k[q][j];
                }
                self.err[j] = step * e;
                let scale = atol + rtol * y[j].abs().max(self.tmp[j].abs());
                err = err.max((self.err[j] / scale).abs());
            }
            if !err.is_finite() {
                return Err(Error::Integration {
                    time: t,
                    reason: "non-finite error estimate".into(),
                });
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            if err <= 1.0 {
                // The seventh stage was evaluated at the accepted solution.
                y.copy_from_slice(&self.tmp);
                sys.post_step(step, y);
                self.steps += 1;
                t = if lands { target } else { t + step };
                if lands && target == next_sample {
                    observe(t, y);
                    sample_index += 1;
                    next_sample = t0 + sample_index as f64 * self.sample_period;
                    if next_sample > t1 - 1e-12 * span {
                        next_sample = t1;
                    }
                } else if t >= t1 {
                    observe(t1, y);
                }
                if !lands || step >= h {
                    h = (step * factor).min(h_max);
                }
            } else {
                self.rejected += 1;
                h = step * factor;
                if h < 1e-14 * span.max(1.0) {
                    return Err(Error::Integration {
                        time: t,
                        reason: format!("step size underflow (h = {h:e})"),
                    });
                }
            }
        }
        self.adaptive = Some(Adaptive { h });
        Ok(())
    }
}

/// Integrates over consecutive segments `[times[k], times[k+1]]` with system
/// `systems[k]`. The start state is observed once; the end of each segment
/// is observed with the system that produced it.
pub fn integrate_segments<F>(
    integrator: &mut Integrator,
    systems: &[&dyn OdeSystem],
    times: &[f64],
    y: &mut [f64],
    mut observe: F,
) -> Result<()>
where
    F: FnMut(usize, f64, &[f64]),
{
    assert_eq!(times.len(), systems.len() + 1);
    for (k, sys) in systems.iter().enumerate() {
        integrator.run(*sys, times[k], times[k + 1], y, k == 0, |t, s| observe(k, t, s))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Decay;
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -y[0];
        }
    }

    struct Oscillator;
    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    fn decay_error(dt: f64) -> f64 {
        let mut y = [1.0];
        Integrator::new(Method::Rk4 { dt }, 0.0).run(&Decay, 0.0, 1.0, &mut y, false, |_, _| {}).unwrap();
        (y[0] - (-1.0f64).exp()).abs()
    }

    #[test]
    fn rk4_decay() {
        assert!(decay_error(0.01) < 1e-9);
    }

    #[test]
    fn rk4_fourth_order() {
        let (e1, e2) = (decay_error(0.02), decay_error(0.01));
        let ratio = e1 / e2;
        assert!((ratio - 16.0).abs() < 1.0, "{ratio}");
    }

    #[test]
    fn rk45_oscillator() {
        let mut y = [1.0, 0.0];
        let mut it = Integrator::new(
            Method::Rk45 {
                rtol: 1e-10,
                atol: 1e-12,
                h_max: None,
            },
            0.5,
        );
        let mut times = vec![];
        it.run(&Oscillator, 0.0, 10.0, &mut y, false, |t, _| times.push(t)).unwrap();
        assert!((y[0] - 10f64.cos()).abs() < 1e-8);
        assert!((y[1] + 10f64.sin()).abs() < 1e-8);
        assert_eq!(times.len(), 20);
        assert!((times[0] - 0.5).abs() < 1e-15);
        assert_eq!(*times.last().unwrap(), 10.0);
    }

    #[test]
    fn samples_on_step_boundaries() {
        let mut y = [1.0];
        let mut times = vec![];
        Integrator::new(Method::Rk4 { dt: 1e-3 }, 0.1)
            .run(&Decay, 0.0, 1.0, &mut y, true, |t, _| times.push(t))
            .unwrap();
        assert_eq!(times.len(), 11);
        assert_eq!(times[0], 0.0);
        assert_eq!(times[10], 1.0);
        assert!((times[3] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn sampling_does_not_perturb() {
        let run = |period| {
            let mut y = [1.0];
            Integrator::new(Method::Rk4 { dt: 1e-3 }, period)
                .run(&Decay, 0.0, 1.0, &mut y, false, |_, _| {})
                .unwrap();
            y[0]
        };
        assert_eq!(run(0.0), run(0.25));
    }

    struct Blowup;
    impl OdeSystem for Blowup {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[0] * y[0];
        }
    }

    #[test]
    fn non_finite_aborts() {
        let mut y = [1.0];
        let mut last = 0.0;
        let err = Integrator::new(Method::Rk4 { dt: 0.1 }, 0.1)
            .run(&Blowup, 0.0, 5.0, &mut y, false, |t, _| last = t)
            .unwrap_err();
        assert!(matches!(err, Error::Integration { time, .. } if time < 5.0));
        assert!(y[0].is_finite());
        assert!(last < 5.0);
    }

    struct Ramp(f64);
    impl OdeSystem for Ramp {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, _y: &[f64], dy: &mut [f64]) {
            dy[0] = self.0;
        }
    }

    #[test]
    fn event_swaps_between_steps() {
        let (a, b) = (Ramp(1.0), Ramp(-2.0));
        let mut y = [0.0];
        let mut seen = vec![];
        integrate_segments(
            &mut Integrator::new(Method::Rk4 { dt: 0.01 }, 0.5),
            &[&a, &b],
            &[0.0, 1.0, 2.0],
            &mut y,
            |k, t, s| seen.push((k, t, s[0])),
        )
        .unwrap();
        let at_event: Vec<_> = seen.iter().filter(|(_, t, _)| (*t - 1.0).abs() < 1e-12).collect();
        assert_eq!(at_event.len(), 1);
        assert_eq!(at_event[0].0, 0);
        assert!((at_event[0].2 - 1.0).abs() < 1e-12);
        assert!((y[0] + 1.0).abs() < 1e-12);
    }
}
