use std::process::ExitCode;
use std::time::Instant;

use gridgame::engine::{run_scenario, RunOutput, Variant};
use gridgame::game::{price_positivity_margin, monotonicity_margins, GameDefinition};
use gridgame::integrate::{Integrator, Method, OdeSystem};
use gridgame::scenario::Scenario;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn margins() -> Outcome {
    let start = Instant::now();
    let game = Scenario::ring4().build().unwrap().game;
    let a1 = price_positivity_margin(game.params(), &game.price);
    let v_ref: Vec<f64> = game.params().dgus.iter().map(|d| d.v_ref).collect();
    let a3 = monotonicity_margins(&game.agents, &game.price, &v_ref);
    let secs = start.elapsed().as_secs_f64();
    let pass = (a1 - 3.244).abs() < 1e-3 && a3.iter().all(|m| *m > 0.0) && (a3[0] - 13.35).abs() < 1e-2 && secs < 1.0;
    outcome(pass, format!("price margin {a1:.5}, monotonicity margins {a3:.4?}, {secs:.3} s"))
}

fn ring_run() -> (RunOutput, f64) {
    let model = Scenario::ring4().build().unwrap();
    let start = Instant::now();
    let out = run_scenario(&model, Variant::Full).unwrap();
    (out, start.elapsed().as_secs_f64())
}

fn convergence(out: &RunOutput, secs: f64) -> Outcome {
    let r = &out.report;
    let kkt = &r.residuals.segment_end;
    let v = &r.violations.segment_end_voltage;
    let l = &r.violations.segment_end_line;
    let pass = r.completed
        && kkt.len() == 2
        && kkt.iter().all(|k| *k < 1e-3)
        && v.iter().chain(l).all(|e| *e <= 0.0)
        && secs < 60.0;
    outcome(
        pass,
        format!("segment-end KKT {}, voltage excess {}, line excess {}, {secs:.1} s", sci(kkt), sci(v), sci(l)),
    )
}

fn oracle_equivalence(out: &RunOutput) -> Outcome {
    let m = &out.report.oracle_match;
    let last = out.report.oracle.last().unwrap();
    let pass = m.decision_rel < 1e-2 && m.multiplier_rel < 1e-2 && last.constrained.converged;
    outcome(
        pass,
        format!("decision rel {:.3e}, multiplier rel {:.3e}", m.decision_rel, m.multiplier_rel),
    )
}

fn consensus(out: &RunOutput) -> Outcome {
    let c = &out.report.consensus;
    let pass = c.upsilon_spread < 1e-4 && c.upsilon_sum_error < 1e-3 && c.lambda_spread < 1e-4;
    outcome(
        pass,
        format!(
            "upsilon spread {:.3e}, upsilon vs sum {:.3e}, r*lambda spread {:.3e}",
            c.upsilon_spread, c.upsilon_sum_error, c.lambda_spread
        ),
    )
}

fn conservation(out: &RunOutput) -> Outcome {
    let c = &out.report.consensus;
    outcome(
        c.drift_rate < 1e-9,
        format!(
            "max drift per second {:.3e} (nu {:.3e}, theta {:.3e})",
            c.drift_rate, c.nu_sum_drift, c.theta_sum_drift
        ),
    )
}

fn slow_gap(eps: f64) -> f64 {
    let model = Scenario::ring4().with_overrides(None, Some(1.0), Some(eps)).build().unwrap();
    let full = run_scenario(&model, Variant::Full).unwrap();
    let reduced = run_scenario(&model, Variant::Reduced).unwrap();
    let slow: Vec<usize> = full
        .header
        .iter()
        .enumerate()
        .filter(|(_, h)| {
            h.starts_with("plant.")
                || ["ctrl.u.", "ctrl.xhat.", "ctrl.lambda.", "ctrl.theta.", "ctrl.gamma."]
                    .iter()
                    .any(|p| h.starts_with(p))
        })
        .map(|(k, _)| k)
        .collect();
    full.rows
        .iter()
        .zip(&reduced.rows)
        .flat_map(|(a, b)| slow.iter().map(move |&k| (a[k] - b[k]).abs()))
        .fold(0.0, f64::max)
}

fn singular_perturbation() -> Outcome {
    let coarse = slow_gap(1e-3);
    let fine = slow_gap(1e-4);
    let ratio = coarse / fine;
    outcome(
        ratio >= 5.0,
        format!("gap {coarse:.3e} at eps 1e-3, {fine:.3e} at eps 1e-4, ratio {ratio:.2}"),
    )
}

fn random_point(game: &GameDefinition, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let n = game.n();
    let m = game.m();
    let u: Vec<f64> = (0..n).map(|_| rng.random_range(370.0..390.0)).collect();
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..60.0)).collect();
    x.extend((0..n).map(|_| rng.random_range(370.0..390.0)));
    x.extend((0..m).map(|_| rng.random_range(-30.0..30.0)));
    (u, x)
}

fn calculus() -> Outcome {
    let game = Scenario::ring4().build().unwrap().game;
    let n = game.n();
    let topo = &game.grid.topology;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-3;
    let mut worst_grad = 0.0f64;
    let mut worst_sub = 0.0f64;
    let mut kink_skips = 0;
    for _ in 0..100 {
        let (u, x) = random_point(&game, &mut rng);
        let f = game.pseudo_gradient(&u, &x).unwrap();
        let aggregate: f64 = x[..n].iter().sum();
        for i in 0..n {
            let idx = topo.local_to_global(i);
            let xi: Vec<f64> = idx.iter().map(|&k| x[k]).collect();
            let r = game.agents[i].r;
            let du = (game.cost(i, u[i] + h, &xi, aggregate) - game.cost(i, u[i] - h, &xi, aggregate)) / (2.0 * h);
            worst_grad = worst_grad.max((r * du - f[i]).abs() / f[i].abs().max(1.0));
            for c in 0..xi.len() {
                let (mut xp, mut xm) = (xi.clone(), xi.clone());
                xp[c] += h;
                xm[c] -= h;
                let shift = if c == 0 { h } else { 0.0 };
                let fd = (game.cost(i, u[i], &xp, aggregate + shift) - game.cost(i, u[i], &xm, aggregate - shift))
                    / (2.0 * h);
                let g = f[n + idx[c]];
                worst_grad = worst_grad.max((r * fd - g).abs() / g.abs().max(1.0));
                if let Some((lo, hi, _)) = game.local_box(i, c) {
                    if (xi[c] - lo).abs() < 10.0 * h || (xi[c] - hi).abs() < 10.0 * h {
                        kink_skips += 1;
                        continue;
                    }
                    let fd = (game.penalty(i, &xp) - game.penalty(i, &xm)) / (2.0 * h);
                    let sub = game.local_penalty_coord(i, c, xi[c]);
                    worst_sub = worst_sub.max((fd - sub.lo).abs().max((fd - sub.hi).abs()) / fd.abs().max(1.0));
                }
            }
        }
    }
    let mut eig_rng = ChaCha8Rng::seed_from_u64(11);
    let eigs = game.sampled_min_eigenvalues(&mut eig_rng, 10).unwrap();
    let min_eig = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = worst_grad < 1e-6 && worst_sub < 1e-6 && min_eig > 0.0;
    outcome(
        pass,
        format!(
            "pseudo-gradient err {worst_grad:.2e}, subgradient err {worst_sub:.2e} ({kink_skips} near-kink coordinates skipped), min eig {min_eig:.4}"
        ),
    )
}

struct Decay;

impl OdeSystem for Decay {
    fn dim(&self) -> usize {
        1
    }

    fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
        dy[0] = -y[0];
    }
}

fn rk4_order() -> Outcome {
    let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&dt| {
            let mut y = [1.0];
            Integrator::new(Method::Rk4 { dt }, 0.0)
                .run(&Decay, 0.0, 1.0, &mut y, false, |_, _| {})
                .unwrap();
            (y[0] - (-1.0f64).exp()).abs()
        })
        .collect();
    let ratios = [errs[0] / errs[1], errs[1] / errs[2]];
    let pass = ratios.iter().all(|r| (8.0..=32.0).contains(r));
    outcome(pass, format!("errors {}, ratios {ratios:.2?}", sci(&errs)))
}

fn determinism(first: &RunOutput) -> Outcome {
    let (second, _) = ring_run();
    let (a, b) = (first.csv(), second.csv());
    outcome(a == b, format!("{} bytes, identical: {}", a.len(), a == b))
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    results.push(("1 structural margins", margins()));
    let (run, secs) = ring_run();
    results.push(("2 closed-loop convergence", convergence(&run, secs)));
    results.push(("3 oracle equivalence", oracle_equivalence(&run)));
    results.push(("4 consensus at final time", consensus(&run)));
    results.push(("5 conservation", conservation(&run)));
    results.push(("6 singular perturbation", singular_perturbation()));
    results.push(("7 numerical calculus", calculus()));
    results.push(("8 rk4 order", rk4_order()));
    results.push(("9 determinism", determinism(&run)));

    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
