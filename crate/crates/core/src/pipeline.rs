//! End-to-end synthesis and the concurrent parameter sweep.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, SdpError};
use crate::lmi::{build_program, LmiProgram};
use crate::model::{GammaMode, SwitchedPlant, SynthesisSpec};
use crate::sdp::{bisect_gamma, minimize_gamma, solve_feasibility, SolveOutcome, SolveStatus, SolverOptions};
use crate::synth::{
    congruence_residual, dwell_time_bound, reconstruct, round_trip_error, verify_certificate, CertificateReport,
    FactorizationMethod, Reconstruction,
};

/// Everything produced by one synthesis run.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub spec: SynthesisSpec,
    pub program: LmiProgram,
    pub outcome: SolveOutcome,
    pub reconstruction: Reconstruction,
    pub report: CertificateReport,
    /// Per-mode relative congruence mismatch.
    pub congruence: Vec<f64>,
    pub round_trip: f64,
}

impl Synthesis {
    pub fn gamma(&self) -> f64 {
        self.reconstruction.controller.gamma
    }
}

/// Builds the program, solves it (minimizing γ or at the fixed γ),
/// reconstructs the controller and checks its certificates.
pub fn synthesize(
    plant: &SwitchedPlant,
    spec: &SynthesisSpec,
    method: FactorizationMethod,
) -> Result<Synthesis, Error> {
    let program = build_program(plant, spec)?;
    let options = SolverOptions::from_spec(spec);
    let outcome = match spec.gamma {
        GammaMode::Minimize => minimize_gamma(&program, &options)?,
        GammaMode::Fixed(_) => {
            let out = solve_feasibility(&program, &options)?;
            if out.status == SolveStatus::Infeasible {
                return Err(SdpError::Infeasible {
                    max_margin: out.max_margin.unwrap_or(f64::NEG_INFINITY),
                    marginal: out.marginal,
                }
                .into());
            }
            out
        }
    };
    finish(plant, spec, program, outcome, method)
}

fn finish(
    plant: &SwitchedPlant,
    spec: &SynthesisSpec,
    program: LmiProgram,
    outcome: SolveOutcome,
    method: FactorizationMethod,
) -> Result<Synthesis, Error> {
    let x = &outcome.assignment;
    let reconstruction = reconstruct(&program, x, plant, spec, method)?;
    let report = verify_certificate(&reconstruction.controller, plant, spec)?;
    let congruence = (0..plant.n_modes())
        .map(|i| congruence_residual(&program, x, plant, spec, &reconstruction, i))
        .collect::<Result<Vec<_>, _>>()?;
    let round_trip = round_trip_error(&program, x, plant, &reconstruction)?;
    Ok(Synthesis {
        spec: spec.clone(),
        program,
        outcome,
        reconstruction,
        report,
        congruence,
        round_trip,
    })
}

/// `(λ₀, μ)` pairs sharing one disturbance level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub pairs: Vec<(f64, f64)>,
    pub s: f64,
    /// Upper end of the bisection bracket used when direct minimization fails.
    #[serde(default)]
    pub gamma_cap: Option<f64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.s > 0.0 && self.s.is_finite()) {
            return Err(format!("s must be positive, got {}", self.s));
        }
        if let Some(&(l, m)) = self.pairs.iter().find(|(l, m)| !(*l > 0.0 && *m > 1.0)) {
            return Err(format!("pair ({l}, {m}) needs lambda0 > 0 and mu > 1"));
        }
        if let Some(c) = self.gamma_cap {
            if !(c > 1e-3 && c.is_finite()) {
                return Err(format!("gamma_cap must exceed 1e-3, got {c}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Ok,
    Infeasible,
    Failed,
}

impl std::fmt::Display for RowStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RowStatus::Ok => "ok",
            RowStatus::Infeasible => "infeasible",
            RowStatus::Failed => "failed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub lambda0: f64,
    pub mu: f64,
    pub tau_a_star: Option<f64>,
    pub gamma: Option<f64>,
    pub status: RowStatus,
    pub detail: String,
}

fn sweep_row(plant: &SwitchedPlant, lambda0: f64, mu: f64, s: f64, cap: Option<f64>) -> SweepRow {
    let tau = dwell_time_bound(lambda0, mu).ok();
    let row = |gamma: Option<f64>, status, detail: String| SweepRow {
        lambda0,
        mu,
        tau_a_star: tau,
        gamma,
        status,
        detail,
    };
    let spec = match SynthesisSpec::minimize(plant, lambda0, mu, s) {
        Ok(spec) => spec,
        Err(e) => return row(None, RowStatus::Failed, e.to_string()),
    };
    let program = match build_program(plant, &spec) {
        Ok(p) => p,
        Err(e) => return row(None, RowStatus::Failed, e.to_string()),
    };
    let options = SolverOptions::from_spec(&spec);
    let direct = minimize_gamma(&program, &options);
    let outcome = match (direct, cap) {
        (Err(SdpError::NumericalFailure(msg)), Some(cap)) => {
            let opts = SolverOptions {
                gamma_bracket: (1e-3, cap),
                ..options
            };
            bisect_gamma(
                |g| {
                    let fixed = SynthesisSpec {
                        gamma: GammaMode::Fixed(g),
                        ..spec.clone()
                    };
                    build_program(plant, &fixed)
                },
                &opts,
            )
            .map(|mut o| {
                o.warnings.insert(0, format!("minimization failed ({msg}); bisected"));
                o
            })
        }
        (other, _) => other,
    };
    match outcome {
        Ok(o) => row(o.gamma, RowStatus::Ok, o.warnings.join("; ")),
        Err(e @ SdpError::Infeasible { .. }) => row(None, RowStatus::Infeasible, e.to_string()),
        Err(e) => row(None, RowStatus::Failed, e.to_string()),
    }
}

/// One γ-minimization per pair, run concurrently; rows keep the grid order.
pub fn sweep(plant: &SwitchedPlant, grid: &SweepGrid) -> Vec<SweepRow> {
    grid.pairs
        .par_iter()
        .map(|&(l, m)| sweep_row(plant, l, m, grid.s, grid.gamma_cap))
        .collect()
}

/// `lambda0,mu,tau_a_star,gamma,status`; failed rows have an empty γ.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut out: W) -> io::Result<()> {
    writeln!(out, "lambda0,mu,tau_a_star,gamma,status")?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.lambda0, r.mu, opt(r.tau_a_star), opt(r.gamma), r.status)?;
    }
    Ok(())
}
