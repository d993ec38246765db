//! Bundled worked-example data and the one-command reproduction report.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hybridsim::{adt_stats, chatter_bound, simulate, step_stiffness, weighted_l2_ratio, SimOptions, DEFAULT_STEP};
use crate::linalg::{from_rows, Matrix, Vector};
use crate::lmi::{ConstraintId, LmiConstraint, LmiProgram, Sense};
use crate::model::{Disturbance, GammaMode, PlantMode, SwitchedPlant, SwitchingSignal, SynthesisSpec};
use crate::pipeline::{synthesize, SweepGrid, Synthesis};
use crate::sdp::{minimize_gamma, solve_feasibility, SolveStatus, SolverOptions};
use crate::synth::{dwell_time_bound, ControllerMode, FactorizationMethod, HybridController};

const EXAMPLE_PLANT: &str = include_str!("../fixtures/example_plant.json");
const EXAMPLE_SIGNAL: &str = include_str!("../fixtures/example_signal.json");
const REFERENCE_CONTROLLER: &str = include_str!("../fixtures/reference_controller.json");
const SWEEP_GRID: &str = include_str!("../fixtures/sweep_grid.json");
const REFERENCE_TABLE: &str = include_str!("../fixtures/reference_table.json");

/// Disturbance level of the worked example.
pub const EXAMPLE_S: f64 = 0.42;
/// Relative tolerance on tabulated γ values.
pub const GAMMA_REL_TOL: f64 = 0.10;
/// γ relaxation used for the controller that is simulated against its bound.
pub const SIMULATION_GAMMA_FACTOR: f64 = 1.2;

pub fn example_plant() -> SwitchedPlant {
    serde_json::from_str(EXAMPLE_PLANT).expect("bundled plant parses")
}

pub fn example_signal() -> SwitchingSignal {
    serde_json::from_str(EXAMPLE_SIGNAL).expect("bundled signal parses")
}

/// Tabulated controller and resets of the worked example (no certificate data).
pub fn reference_controller() -> HybridController {
    serde_json::from_str(REFERENCE_CONTROLLER).expect("bundled controller parses")
}

pub fn sweep_grid() -> SweepGrid {
    serde_json::from_str(SWEEP_GRID).expect("bundled grid parses")
}

/// Pulse of magnitude 0.6 on `[0, 0.4)`.
pub fn example_disturbance() -> Disturbance {
    Disturbance::pulse(1, 0.6, 0.0, 0.4).expect("valid pulse")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub lambda0: f64,
    pub mu: f64,
    pub tau_a_star: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTable {
    pub rows: Vec<ReferenceRow>,
    pub headline: ReferenceRow,
}

pub fn reference_table() -> ReferenceTable {
    serde_json::from_str(REFERENCE_TABLE).expect("bundled table parses")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReproductionReport {
    pub criteria: Vec<CriterionResult>,
    pub fast: bool,
}

impl ReproductionReport {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn render(&self) -> String {
        let width = self.criteria.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.criteria {
            out.push_str(&format!(
                "{}  {:width$}  {}\n",
                if c.pass { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        let passed = self.criteria.iter().filter(|c| c.pass).count();
        out.push_str(&format!("{passed}/{} criteria passed\n", self.criteria.len()));
        out
    }
}

fn criterion(name: &'static str, pass: bool, detail: String) -> CriterionResult {
    CriterionResult { name, pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn synth_at(plant: &SwitchedPlant, lambda0: f64, mu: f64) -> Result<Synthesis, String> {
    let spec = SynthesisSpec::minimize(plant, lambda0, mu, EXAMPLE_S).map_err(|e| e.to_string())?;
    synthesize(plant, &spec, FactorizationMethod::BalancedSvd).map_err(|e| e.to_string())
}

/// Runs every acceptance criterion on the bundled data. `fast` skips the
/// table sweep and synthesizes at the headline point only.
pub fn run(fast: bool) -> ReproductionReport {
    let plant = example_plant();
    let table = reference_table();
    let mut criteria = Vec::new();
    let mut syntheses: Vec<(f64, f64, Result<Synthesis, String>)> = Vec::new();

    if !fast {
        let start = Instant::now();
        let rows: Vec<_> = table
            .rows
            .par_iter()
            .map(|r| (r.lambda0, r.mu, synth_at(&plant, r.lambda0, r.mu)))
            .collect();
        let elapsed = start.elapsed().as_secs_f64();
        let mut worst: f64 = 0.0;
        let mut ok = elapsed < 60.0;
        for (r, (_, _, s)) in table.rows.iter().zip(&rows) {
            match s {
                Ok(s) => worst = worst.max(rel(s.gamma(), r.gamma)),
                Err(_) => ok = false,
            }
        }
        ok &= worst <= GAMMA_REL_TOL;
        criteria.push(criterion(
            "table-reproduction",
            ok,
            format!("{} rows, worst relative gamma error {worst:.4}, {elapsed:.2} s", rows.len()),
        ));

        let mut mono = true;
        let mut seq = Vec::new();
        for l0 in [0.05, 0.1] {
            let gs: Vec<Option<f64>> = rows
                .iter()
                .filter(|(l, _, _)| *l == l0)
                .map(|(_, _, s)| s.as_ref().ok().map(Synthesis::gamma))
                .collect();
            mono &= gs.iter().all(Option::is_some)
                && gs.windows(2).all(|w| w[1].unwrap() <= w[0].unwrap());
            seq.push(format!(
                "{l0}: {}",
                gs.iter()
                    .map(|g| g.map_or("-".into(), |g| format!("{g:.4}")))
                    .collect::<Vec<_>>()
                    .join(" >= ")
            ));
        }
        criteria.push(criterion("monotone-in-mu", mono, seq.join("; ")));
        syntheses.extend(rows);
    }

    let h = table.headline;
    let head = synth_at(&plant, h.lambda0, h.mu);
    let tau = dwell_time_bound(h.lambda0, h.mu).unwrap_or(f64::NAN);
    match &head {
        Ok(s) => {
            let e = rel(s.gamma(), h.gamma);
            let tau_ok = (tau - 13.8629).abs() < 5e-5;
            criteria.push(criterion(
                "headline-point",
                e <= GAMMA_REL_TOL && tau_ok,
                format!("gamma {:.5} (reference {}, rel. error {e:.4}), tau_a* {tau:.4}", s.gamma(), h.gamma),
            ));
        }
        Err(e) => criteria.push(criterion("headline-point", false, e.clone())),
    }
    syntheses.push((h.lambda0, h.mu, head));

    let mut cert_ok = true;
    let mut worst_cong: f64 = 0.0;
    let mut worst_rt: f64 = 0.0;
    let mut failures = Vec::new();
    for (l, m, s) in &syntheses {
        match s {
            Ok(s) => {
                let c = s.congruence.iter().copied().fold(0.0, f64::max);
                worst_cong = worst_cong.max(c);
                worst_rt = worst_rt.max(s.round_trip);
                if !s.report.pass || c > 1e-7 {
                    failures.push(format!("({l}, {m})"));
                    cert_ok = false;
                }
            }
            Err(_) => {
                failures.push(format!("({l}, {m}) no synthesis"));
                cert_ok = false;
            }
        }
    }
    criteria.push(criterion(
        "certificate-oracle",
        cert_ok,
        format!(
            "{} syntheses, worst congruence {worst_cong:.1e}{}",
            syntheses.len(),
            if failures.is_empty() {
                String::new()
            } else {
                format!(", failing {}", failures.join(" "))
            }
        ),
    ));
    criteria.push(criterion(
        "round-trip",
        worst_rt <= 1e-8 && syntheses.iter().all(|s| s.2.is_ok()),
        format!("worst relative mismatch {worst_rt:.1e}"),
    ));

    criteria.push(reference_controller_regression(&plant));
    criteria.push(empirical_gain(&plant, syntheses.last().and_then(|s| s.2.as_ref().ok())));
    criteria.push(integrator_oracle());
    criteria.push(adt_diagnostics());
    criteria.push(sdp_oracles());

    ReproductionReport { criteria, fast }
}

fn reference_controller_regression(plant: &SwitchedPlant) -> CriterionResult {
    let start = Instant::now();
    let c = reference_controller();
    let stiff = step_stiffness(plant, &c, DEFAULT_STEP).unwrap_or(f64::NAN);
    let r = simulate(
        plant,
        &c,
        &example_signal(),
        &example_disturbance(),
        &Vector::zeros(2 * plant.dims().n),
        &SimOptions::new(DEFAULT_STEP, 70.0),
    );
    let elapsed = start.elapsed().as_secs_f64();
    match r {
        Ok(tr) => {
            let n50 = tr.x_cl(tr.index_at(50.0)).norm();
            let n70 = tr.x_cl(tr.len() - 1).norm();
            criteria_line_reference(n70 < n50 && elapsed < 5.0, format!("|x(50)| {n50:.3e}, |x(70)| {n70:.3e}, {elapsed:.2} s"))
        }
        Err(e) => criteria_line_reference(false, format!("{e} (h*max|eig| = {stiff:.1})")),
    }
}

fn criteria_line_reference(pass: bool, detail: String) -> CriterionResult {
    criterion("reference-controller", pass, detail)
}

fn empirical_gain(plant: &SwitchedPlant, headline: Option<&Synthesis>) -> CriterionResult {
    let name = "empirical-gain";
    let Some(head) = headline else {
        return criterion(name, false, "no headline synthesis".into());
    };
    let spec = SynthesisSpec {
        gamma: GammaMode::Fixed(SIMULATION_GAMMA_FACTOR * head.gamma()),
        ..head.spec.clone()
    };
    let s = match synthesize(plant, &spec, FactorizationMethod::BalancedSvd) {
        Ok(s) if s.report.pass => s,
        Ok(_) => return criterion(name, false, "relaxed controller failed its certificate".into()),
        Err(e) => return criterion(name, false, e.to_string()),
    };
    let c = &s.reconstruction.controller;
    let w = example_disturbance();
    let tr = simulate(
        plant,
        c,
        &example_signal(),
        &w,
        &Vector::zeros(2 * plant.dims().n),
        &SimOptions::new(DEFAULT_STEP, 70.0),
    );
    match tr.map_err(|e| e.to_string()).and_then(|tr| {
        weighted_l2_ratio(&tr, c.lambda0)
            .map(|r| (r, tr.linear_region_departures()))
            .map_err(|e| e.to_string())
    }) {
        Ok((ratio, dep)) => criterion(
            name,
            ratio <= c.gamma && w.within_energy_level(c.s),
            format!(
                "ratio {ratio:.4} <= certified gamma {:.4}; energy {:.3}; {dep} steps outside the linear region",
                c.gamma,
                w.energy()
            ),
        ),
        Err(e) => criterion(name, false, e),
    }
}

/// Stable two-state plant with a decoupled controller; the closed loop is
/// linear with eigenvalues −1 ± 2i and −0.5.
pub fn lti_test_system() -> (SwitchedPlant, HybridController) {
    let mode = PlantMode {
        a: from_rows(&[&[-1.0, 2.0], &[-2.0, -1.0]]),
        b1: from_rows(&[&[1.0], &[0.0]]),
        b2: from_rows(&[&[0.0], &[1.0]]),
        c1: from_rows(&[&[1.0, 0.0]]),
        d11: Matrix::zeros(1, 1),
        d12: Matrix::zeros(1, 1),
        c2: from_rows(&[&[1.0, 0.0]]),
        d21: Matrix::zeros(1, 1),
        d22: Matrix::zeros(1, 1),
    };
    let plant = SwitchedPlant::new(vec![mode], vec![1e6]).expect("valid plant");
    let k = ControllerMode {
        a_k: Matrix::identity(2, 2) * -0.5,
        b_k1: Matrix::zeros(2, 1),
        b_k2: Matrix::zeros(2, 1),
        c_k1: Matrix::zeros(1, 2),
        d_k11: Matrix::zeros(1, 1),
        d_k12: Matrix::zeros(1, 1),
        h1: None,
        h2: None,
        p: None,
        u: None,
    };
    let c = HybridController {
        modes: vec![k],
        resets: Default::default(),
        gamma: 1.0,
        lambda0: 0.1,
        mu: 2.0,
        s: 1.0,
        tau_a_star: 2f64.ln() / 0.1,
    };
    (plant, c)
}

fn integrator_oracle() -> CriterionResult {
    let name = "integrator-oracle";
    let (plant, c) = lti_test_system();
    let x0 = Vector::from_column_slice(&[1.0, -0.5, 0.3, 0.7]);
    let a = crate::synth::assemble_closed_loop(plant.mode(0), &c.modes[0]).expect("shapes").a;
    let exact = a.exp() * &x0;
    let sig = SwitchingSignal::constant(0, 1.0).expect("valid");
    let err = |h: f64| -> Result<f64, String> {
        let tr = simulate(&plant, &c, &sig, &Disturbance::zero(1), &x0, &SimOptions::new(h, 1.0))
            .map_err(|e| e.to_string())?;
        Ok((tr.x_cl(tr.len() - 1) - &exact).norm() / exact.norm())
    };
    match (err(1e-3), err(0.1), err(0.05)) {
        (Ok(e), Ok(e1), Ok(e2)) => {
            let ratio = e1 / e2;
            criterion(
                name,
                e <= 1e-6 && (12.0..=20.0).contains(&ratio),
                format!("relative error {e:.1e} at h = 1e-3; halving 0.1 -> 0.05 reduces error {ratio:.2}x"),
            )
        }
        (a, b, c) => criterion(name, false, format!("{:?}", a.and(b).and(c))),
    }
}

/// Window-pair scan over a fine grid plus the switch instants.
fn brute_force_chatter(signal: &SwitchingSignal, tau_a: f64) -> f64 {
    let times: Vec<f64> = signal.switches().iter().map(|s| s.0).collect();
    let mut pts: Vec<f64> = (0..=(signal.horizon() * 4.0) as usize).map(|k| k as f64 * 0.25).collect();
    pts.extend(&times);
    pts.sort_by(f64::total_cmp);
    let mut best = f64::NEG_INFINITY;
    for &t in &pts {
        for &big_t in pts.iter().filter(|p| **p >= t) {
            let mut count = 0usize;
            for s in &times {
                if *s >= t && *s <= big_t {
                    count += 1;
                }
            }
            best = best.max(count as f64 - (big_t - t) / tau_a);
        }
    }
    best
}

fn adt_diagnostics() -> CriterionResult {
    let sig = example_signal();
    let tau = 13.86;
    let r = adt_stats(&sig, Some(tau));
    let n0 = r.chatter_bound.unwrap_or(f64::NAN);
    let oracle = brute_force_chatter(&sig, tau);
    criterion(
        "adt-diagnostics",
        r.switch_count == 5 && r.average_dwell == 14.0 && n0.is_finite() && n0 == oracle && chatter_bound(&sig, tau) == n0,
        format!(
            "{} switches, average {:.1}, N0* {n0:.6} (scan oracle {oracle:.6})",
            r.switch_count, r.average_dwell
        ),
    )
}

fn sdp_oracles() -> CriterionResult {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
        let c = LmiConstraint {
            id: ConstraintId::Custom(0),
            sense: Sense::Psd,
            constant: Matrix::from_diagonal(&Vector::from_iterator(n, a.iter().map(|v| -v))),
            terms: vec![(0, Matrix::identity(n, n))],
        };
        let p = LmiProgram::from_constraints(0, true, vec![c]).expect("valid program");
        let opts = SolverOptions {
            psd_slack: 0.0,
            ..SolverOptions::default()
        };
        let t = match minimize_gamma(&p, &opts) {
            Ok(o) => o.assignment[0],
            Err(_) => f64::NAN,
        };
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((t - max).abs() / (1.0 + max.abs()));
    }
    let scalar = |k: usize, c0: f64, coef: f64| LmiConstraint {
        id: ConstraintId::Custom(k),
        sense: Sense::Psd,
        constant: Matrix::from_element(1, 1, c0),
        terms: vec![(0, Matrix::from_element(1, 1, coef))],
    };
    let contradictory = LmiProgram::from_constraints(1, false, vec![scalar(0, -1.0, 1.0), scalar(1, 0.0, -1.0)])
        .expect("valid program");
    let status = solve_feasibility(&contradictory, &SolverOptions::default()).map(|o| o.status);
    criterion(
        "sdp-oracles",
        worst <= 1e-8 && status == Ok(SolveStatus::Infeasible),
        format!("100 diagonal instances, worst error {worst:.1e}; contradictory pair -> {status:?}"),
    )
}
