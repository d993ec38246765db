//! Dense primal-dual interior-point solver for the block LMI programs.
//!
//! Programs are posed in dual standard form
//!
//! ```text
//! max bᵀy  s.t.  Z_b = C_b − Σₖ yₖ A_{k,b} ⪰ 0  for every block b
//! ```
//!
//! and solved with an infeasible-start path-following method using the
//! HKM search direction and Mehrotra predictor-corrector steps.

use nalgebra::{Cholesky, Dyn};
use serde::Serialize;

use crate::error::{LmiError, SdpError};
use crate::linalg::{self, Matrix, Vector};
use crate::lmi::{ConstraintId, LmiConstraint, LmiProgram, Sense};
use crate::model::SynthesisSpec;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub duality_gap_tol: f64,
    /// ε: strict inequalities are enforced with this margin.
    pub strict_margin: f64,
    /// δ: accepted negative eigenvalue slack on non-strict constraints.
    pub psd_slack: f64,
    /// `[γ_lo, γ_hi]` for bisection.
    pub gamma_bracket: (f64, f64),
    /// Relative width at which bisection stops.
    pub bisection_tol: f64,
    /// Optional cap `t ≤ γ_cap²` in minimize mode.
    pub gamma_cap: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 200,
            duality_gap_tol: 1e-8,
            strict_margin: 1e-6,
            psd_slack: 1e-8,
            gamma_bracket: (1e-3, 1e3),
            bisection_tol: 1e-4,
            gamma_cap: None,
        }
    }
}

impl SolverOptions {
    pub fn from_spec(spec: &SynthesisSpec) -> Self {
        SolverOptions {
            strict_margin: spec.epsilon,
            psd_slack: spec.delta,
            ..SolverOptions::default()
        }
    }

    fn validate(&self) -> Result<(), SdpError> {
        let bad = |m: &str| Err(SdpError::NumericalFailure(format!("invalid solver options: {m}")));
        if !(self.strict_margin > 0.0 && self.strict_margin.is_finite()) {
            return bad("strict margin must be positive");
        }
        if !(self.psd_slack >= 0.0 && self.psd_slack.is_finite()) {
            return bad("psd slack must be nonnegative");
        }
        if self.max_iterations == 0 || !(self.duality_gap_tol > 0.0) {
            return bad("iteration limit and gap tolerance must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Feasible,
    Infeasible,
    NumericalFailure,
}

/// Extreme eigenvalues of one evaluated constraint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstraintMargin {
    pub id: ConstraintId,
    pub sense: Sense,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Whether the margin contract holds for this constraint.
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub assignment: Vec<f64>,
    pub gamma: Option<f64>,
    pub margins: Vec<ConstraintMargin>,
    /// Largest uniform margin found by the feasibility phase.
    pub max_margin: Option<f64>,
    /// True when infeasibility vanishes if the strict margin is dropped.
    pub marginal: bool,
    pub iterations: usize,
    pub warnings: Vec<String>,
}

impl SolveOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::Feasible)
    }
}

/// Independent eigenvalue check of every constraint at `x`:
/// strict-negative needs `λ_max ≤ −ε/2`, strict-positive `λ_min ≥ ε/2`,
/// non-strict `λ_min ≥ −δ`.
pub fn check_margins(program: &LmiProgram, x: &[f64], eps: f64, delta: f64) -> Result<Vec<ConstraintMargin>, SdpError> {
    program.registry.check_len(x)?;
    program
        .constraints
        .iter()
        .map(|c| {
            let g = c.evaluate(x);
            let (lo, hi) = linalg::sym_eig_bounds(&g)
                .map_err(|e| SdpError::NumericalFailure(format!("{}: {e}", c.id)))?;
            let ok = match c.sense {
                Sense::StrictNeg => hi <= -eps / 2.0,
                Sense::StrictPos => lo >= eps / 2.0,
                Sense::Psd => lo >= -delta,
            };
            Ok(ConstraintMargin {
                id: c.id,
                sense: c.sense,
                lambda_min: lo,
                lambda_max: hi,
                ok,
            })
        })
        .collect()
}

struct Block {
    c: Matrix,
    a: Vec<(usize, Matrix)>,
}

struct Sdp {
    m: usize,
    b: Vec<f64>,
    blocks: Vec<Block>,
}

struct IpmResult {
    y: Vec<f64>,
    pobj: f64,
    dobj: f64,
    iterations: usize,
    /// Residual measure at this iterate.
    accuracy: f64,
    converged: bool,
}

impl Sdp {
    /// Adds a program constraint as a block `oriented(x) ⪰ 0`, optionally
    /// with an extra `−τI` term on coordinate `tau`. Non-strict blocks are
    /// shifted by `psd_guard`.
    fn push_constraint(&mut self, c: &LmiConstraint, eps: f64, psd_guard: f64, tau: Option<usize>) {
        let (mut f0, terms) = c.oriented(eps);
        let n = f0.nrows();
        if c.sense == Sense::Psd {
            f0 -= Matrix::identity(n, n) * psd_guard;
        }
        let mut a: Vec<(usize, Matrix)> = terms.into_iter().map(|(k, f)| (k, -f)).collect();
        if let Some(t) = tau {
            a.push((t, Matrix::identity(n, n)));
        }
        self.blocks.push(Block { c: f0, a });
    }

    fn slack(&self, b: &Block, y: &[f64]) -> Matrix {
        let mut z = b.c.clone();
        for (k, a) in &b.a {
            if y[*k] != 0.0 {
                z -= a * y[*k];
            }
        }
        z
    }

    fn apply(&self, x: &[Matrix]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (b, xb) in self.blocks.iter().zip(x) {
            for (k, a) in &b.a {
                out[*k] += a.dot(xb);
            }
        }
        out
    }

    fn total_size(&self) -> usize {
        self.blocks.iter().map(|b| b.c.nrows()).sum()
    }
}

fn cholesky_regularized(m: &Matrix) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Some(c);
    }
    let scale = 1.0 + m.diagonal().amax();
    let mut reg = 1e-14 * scale;
    for _ in 0..12 {
        let shifted = m + Matrix::identity(m.nrows(), m.ncols()) * reg;
        if let Some(c) = Cholesky::new(shifted) {
            return Some(c);
        }
        reg *= 10.0;
    }
    None
}

/// Extra gap reduction attempted once the nominal tolerance is met.
const POLISH: f64 = 1e-2;
const POLISH_ITERS: usize = 10;
/// Iterations without improving the best residual before giving up.
const STALL_ITERS: usize = 8;
const REFINE_STEPS: usize = 2;

struct State {
    x: Vec<Matrix>,
    z: Vec<Matrix>,
    y: Vec<f64>,
}

struct Residuals {
    rp: Vector,
    rd: Vec<Matrix>,
    pobj: f64,
    dobj: f64,
    mu: f64,
    /// max(relative gap, primal infeasibility, dual infeasibility).
    merit: f64,
}

fn residuals(sdp: &Sdp, s: &State, bnorm: f64, cnorm: f64) -> Residuals {
    let m = sdp.m;
    let ax = sdp.apply(&s.x);
    let rp = Vector::from_iterator(m, (0..m).map(|k| sdp.b[k] - ax[k]));
    let rd: Vec<Matrix> = sdp
        .blocks
        .iter()
        .zip(&s.z)
        .map(|(bl, zb)| sdp.slack(bl, &s.y) - zb)
        .collect();
    let pobj: f64 = sdp.blocks.iter().zip(&s.x).map(|(bl, xb)| bl.c.dot(xb)).sum();
    let dobj: f64 = sdp.b.iter().zip(&s.y).map(|(b, y)| b * y).sum();
    let mu = s.x.iter().zip(&s.z).map(|(xb, zb)| xb.dot(zb)).sum::<f64>() / sdp.total_size() as f64;
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    let pinf = rp.norm() / (1.0 + bnorm);
    let dinf = rd.iter().map(|r| r.norm_squared()).sum::<f64>().sqrt() / (1.0 + cnorm);
    Residuals {
        rp,
        rd,
        pobj,
        dobj,
        mu,
        merit: gap.max(pinf).max(dinf),
    }
}

fn initial_point(sdp: &Sdp) -> State {
    let mut x = Vec::with_capacity(sdp.blocks.len());
    let mut z = Vec::with_capacity(sdp.blocks.len());
    for bl in &sdp.blocks {
        let n = bl.c.nrows();
        let nf = n as f64;
        let mut xi = 10.0_f64.max(nf.sqrt());
        let mut eta = 10.0_f64.max(nf.sqrt()).max(bl.c.norm());
        for (k, a) in &bl.a {
            let an = a.norm();
            xi = xi.max(nf * (1.0 + sdp.b[*k].abs()) / (1.0 + an));
            eta = eta.max(an);
        }
        x.push(Matrix::identity(n, n) * xi);
        z.push(Matrix::identity(n, n) * eta);
    }
    State {
        x,
        z,
        y: vec![0.0; sdp.m],
    }
}

/// Nesterov–Todd scaling of one block: `W = G Gᵀ` with `W Z W = X`, and the
/// common scaled iterate `V = G⁻¹ X G⁻ᵀ = Gᵀ Z G = diag(v)`.
struct Scaling {
    g: Matrix,
    v: Vector,
}

fn nt_scaling(x: &Matrix, z: &Matrix) -> Option<Scaling> {
    let l = Cholesky::new(x.clone())?.l();
    let t = linalg::symmetrize(&(l.transpose() * z * &l));
    let eig = nalgebra::SymmetricEigen::new(t);
    if eig.eigenvalues.iter().any(|e| !(*e > 0.0)) {
        return None;
    }
    let scale = Vector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|e| e.powf(-0.25)));
    let g = l * eig.eigenvectors * Matrix::from_diagonal(&scale);
    let v = eig.eigenvalues.map(f64::sqrt);
    Some(Scaling { g, v })
}

/// Largest `α` with `diag(v) + α·d ⪰ 0`.
fn max_step_scaled(v: &Vector, d: &Matrix) -> f64 {
    let n = v.len();
    let w = Matrix::from_fn(n, n, |i, j| d[(i, j)] / (v[i] * v[j]).sqrt());
    match linalg::sym_eig_bounds(&w) {
        Ok((lo, _)) if lo < 0.0 => -1.0 / lo,
        Ok(_) => f64::INFINITY,
        Err(_) => 0.0,
    }
}

/// One predictor-corrector step. `None` signals numerical breakdown.
fn step(sdp: &Sdp, s: &State, r: &Residuals) -> Option<(State, f64, f64)> {
    let m = sdp.m;
    let ntot = sdp.total_size() as f64;
    let sc: Vec<Scaling> = s
        .x
        .iter()
        .zip(&s.z)
        .map(|(xb, zb)| nt_scaling(xb, zb))
        .collect::<Option<_>>()?;

    // Scaled constraint matrices Gᵀ A_k G; M is their Gram matrix.
    let ga: Vec<Vec<Matrix>> = sdp
        .blocks
        .iter()
        .zip(&sc)
        .map(|(bl, s)| bl.a.iter().map(|(_, a)| s.g.transpose() * a * &s.g).collect())
        .collect();
    let mut schur = Matrix::zeros(m, m);
    for (bl, g) in sdp.blocks.iter().zip(&ga) {
        for (p, (k, _)) in bl.a.iter().enumerate() {
            for (q, (l, _)) in bl.a.iter().enumerate().skip(p) {
                let v = g[p].dot(&g[q]);
                schur[(*k, *l)] += v;
                if p != q {
                    schur[(*l, *k)] += v;
                }
            }
        }
    }
    let chol = cholesky_regularized(&schur)?;
    let rd_scaled: Vec<Matrix> = r
        .rd
        .iter()
        .zip(&sc)
        .map(|(rdb, s)| s.g.transpose() * rdb * &s.g)
        .collect();

    // Given the right-hand side of V·Y + Y·V = S per block, returns scaled
    // (dx̃, dz̃), ΔZ and Δy.
    let direction = |rhs_s: &[Matrix]| -> (Vec<Matrix>, Vec<Matrix>, Vec<Matrix>, Vector) {
        let ys: Vec<Matrix> = rhs_s
            .iter()
            .zip(&sc)
            .map(|(sb, s)| Matrix::from_fn(sb.nrows(), sb.ncols(), |i, j| sb[(i, j)] / (s.v[i] + s.v[j])))
            .collect();
        let mut rhs = r.rp.clone();
        for ((bl, g), (yb, rdb)) in sdp.blocks.iter().zip(&ga).zip(ys.iter().zip(&rd_scaled)) {
            let p = yb - rdb;
            for ((k, _), gk) in bl.a.iter().zip(g) {
                rhs[*k] -= gk.dot(&p);
            }
        }
        let mut dy = chol.solve(&rhs);
        for _ in 0..REFINE_STEPS {
            let res = &rhs - &schur * &dy;
            dy += chol.solve(&res);
        }
        let mut dxs = Vec::with_capacity(ys.len());
        let mut dzs = Vec::with_capacity(ys.len());
        let mut dz = Vec::with_capacity(ys.len());
        for (((bl, g), (yb, rdb)), rd_orig) in sdp.blocks.iter().zip(&ga).zip(ys.iter().zip(&rd_scaled)).zip(&r.rd) {
            let mut dzs_b = rdb.clone();
            let mut dz_b = rd_orig.clone();
            for ((k, a), gk) in bl.a.iter().zip(g) {
                dzs_b -= gk * dy[*k];
                dz_b -= a * dy[*k];
            }
            dxs.push(linalg::symmetrize(&(yb - &dzs_b)));
            dzs.push(linalg::symmetrize(&dzs_b));
            dz.push(linalg::symmetrize(&dz_b));
        }
        (dxs, dzs, dz, dy)
    };

    let steps = |dxs: &[Matrix], dzs: &[Matrix]| -> (f64, f64) {
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for ((s, dx), dz) in sc.iter().zip(dxs).zip(dzs) {
            ap = ap.min(max_step_scaled(&s.v, dx));
            ad = ad.min(max_step_scaled(&s.v, dz));
        }
        (ap, ad)
    };

    // Predictor.
    let s_aff: Vec<Matrix> = sc.iter().map(|s| Matrix::from_diagonal(&s.v.map(|v| -2.0 * v * v))).collect();
    let (dxs_a, dzs_a, _, _) = direction(&s_aff);
    let (ap, ad) = steps(&dxs_a, &dzs_a);
    let (ap, ad) = (ap.min(1.0), ad.min(1.0));
    let mu_aff = sc
        .iter()
        .zip(dxs_a.iter().zip(&dzs_a))
        .map(|(s, (dx, dz))| {
            let v = Matrix::from_diagonal(&s.v);
            (&v + dx * ap).dot(&(&v + dz * ad))
        })
        .sum::<f64>()
        / ntot;
    let sigma = (mu_aff / r.mu).clamp(0.0, 1.0).powi(3);

    // Corrector.
    let s_cor: Vec<Matrix> = sc
        .iter()
        .zip(dxs_a.iter().zip(&dzs_a))
        .map(|(s, (dx, dz))| {
            let n = s.v.len();
            let v2 = Matrix::from_diagonal(&s.v.map(|v| v * v));
            (Matrix::identity(n, n) * (sigma * r.mu) - v2) * 2.0 - (dx * dz + dz * dx)
        })
        .collect();
    let (dxs, dzs, dz, dy) = direction(&s_cor);
    let (ap_max, ad_max) = steps(&dxs, &dzs);
    let frac = 0.9 + 0.09 * ap.min(ad);
    let ap = (frac * ap_max).min(1.0);
    let ad = (frac * ad_max).min(1.0);

    let next = State {
        x: s
            .x
            .iter()
            .zip(dxs.iter().zip(&sc))
            .map(|(xb, (d, s))| linalg::symmetrize(&(xb + &s.g * d * s.g.transpose() * ap)))
            .collect(),
        z: s.z.iter().zip(&dz).map(|(zb, d)| linalg::symmetrize(&(zb + d * ad))).collect(),
        y: s.y.iter().zip(dy.iter()).map(|(y, d)| y + ad * d).collect(),
    };
    if next.x.iter().chain(&next.z).any(|b| Cholesky::new(b.clone()).is_none()) {
        return None;
    }
    Some((next, ap, ad))
}

fn ipm(sdp: &Sdp, opts: &SolverOptions, early_stop: &dyn Fn(&[f64]) -> bool) -> Result<IpmResult, SdpError> {
    let bnorm = sdp.b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cnorm = sdp.blocks.iter().map(|bl| bl.c.norm_squared()).sum::<f64>().sqrt();
    let tol = opts.duality_gap_tol;
    let mut state = initial_point(sdp);
    let mut best: Option<IpmResult> = None;
    let mut best_iter = 0;
    let mut first_met: Option<usize> = None;
    let finish = |best: Option<IpmResult>, what: &str| {
        best.ok_or_else(|| SdpError::NumericalFailure(format!("{what} before any usable iterate")))
    };

    for iter in 0..opts.max_iterations {
        let r = residuals(sdp, &state, bnorm, cnorm);
        if !(r.mu.is_finite() && r.pobj.is_finite() && r.dobj.is_finite()) {
            return finish(best, "iterates became non-finite");
        }
        let snap = IpmResult {
            y: state.y.clone(),
            pobj: r.pobj,
            dobj: r.dobj,
            iterations: iter,
            accuracy: r.merit,
            converged: r.merit <= tol,
        };
        if early_stop(&state.y) {
            return Ok(snap);
        }
        if best.as_ref().map_or(true, |b| r.merit < b.accuracy) {
            best = Some(snap);
            best_iter = iter;
        }
        if r.merit <= tol {
            let first = *first_met.get_or_insert(iter);
            if r.merit <= POLISH * tol || iter >= first + POLISH_ITERS {
                return finish(best, "");
            }
        }
        if iter >= best_iter + STALL_ITERS {
            return finish(best, "stalled");
        }
        match step(sdp, &state, &r) {
            Some((next, ap, ad)) if ap.max(ad) > 1e-12 => state = next,
            _ => return finish(best, "numerical breakdown"),
        }
    }
    finish(best, "iteration limit reached")
}

/// Accuracy a non-converged run needs before its bound is trusted.
const INFEASIBILITY_ACCURACY: f64 = 1e-5;

/// Smallest eigenvalue over the program's oriented blocks (margins applied).
fn tightened_margin(program: &LmiProgram, y: &[f64], eps: f64) -> f64 {
    program
        .constraints
        .iter()
        .map(|c| {
            let (f0, terms) = c.oriented(eps);
            let mut g = f0;
            for (k, f) in terms {
                g += f * y[k];
            }
            linalg::sym_eig_bounds(&g).map(|e| e.0).unwrap_or(f64::NEG_INFINITY)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Strict feasibility: maximizes a uniform margin τ ≤ 1 over all tightened
/// constraints and stops as soon as τ ≥ 0 is certified.
pub fn solve_feasibility(program: &LmiProgram, options: &SolverOptions) -> Result<SolveOutcome, SdpError> {
    options.validate()?;
    let eps = options.strict_margin;
    let delta = options.psd_slack;
    let n = program.registry.len();
    let tau = n;
    let mut sdp = Sdp {
        m: n + 1,
        b: vec![0.0; n + 1],
        blocks: Vec::new(),
    };
    sdp.b[tau] = 1.0;
    for c in &program.constraints {
        sdp.push_constraint(c, eps, 0.0, Some(tau));
    }
    sdp.blocks.push(Block {
        c: Matrix::from_element(1, 1, 1.0),
        a: vec![(tau, Matrix::from_element(1, 1, 1.0))],
    });

    let early = |y: &[f64]| tightened_margin(program, &y[..n], eps) >= 0.0;
    let res = ipm(&sdp, options, &early)?;
    let x = res.y[..n].to_vec();
    let achieved = tightened_margin(program, &x, eps);
    let margins = check_margins(program, &x, eps, delta)?;
    let all_ok = margins.iter().all(|m| m.ok);

    let mut outcome = SolveOutcome {
        status: SolveStatus::Feasible,
        gamma: program.gamma(&x),
        assignment: x,
        margins,
        max_margin: Some(achieved),
        marginal: false,
        iterations: res.iterations,
        warnings: Vec::new(),
    };
    if achieved >= -delta && all_ok {
        return Ok(outcome);
    }
    // The dual bound pobj ≥ τ* certifies infeasibility once the run converged.
    let bound = if res.converged { res.pobj.max(res.dobj) } else { res.pobj };
    // A stalled run still certifies when the bound clears −δ by more than
    // its own inaccuracy.
    let loose = res.accuracy * (1.0 + bound.abs());
    if res.converged || (bound + loose < -delta && res.accuracy <= INFEASIBILITY_ACCURACY) {
        outcome.status = SolveStatus::Infeasible;
        outcome.max_margin = Some(res.dobj.max(achieved));
        outcome.marginal = res.dobj + eps > 0.0;
        return Ok(outcome);
    }
    Err(SdpError::NumericalFailure(format!(
        "no convergence after {} iterations (margin {achieved:e}, bound {bound:e}, accuracy {:.1e})",
        res.iterations, res.accuracy
    )))
}

/// Minimizes `t = γ²` under the margin-tightened constraints.
pub fn minimize_gamma(program: &LmiProgram, options: &SolverOptions) -> Result<SolveOutcome, SdpError> {
    options.validate()?;
    let t = program.registry.gamma_coord().ok_or(SdpError::NotMinimizeMode)?;
    let eps = options.strict_margin;
    let delta = options.psd_slack;
    let cap_constraint = options.gamma_cap.map(|g| LmiConstraint {
        id: ConstraintId::Custom(usize::MAX),
        sense: Sense::Psd,
        constant: Matrix::from_element(1, 1, g * g),
        terms: vec![(t, Matrix::from_element(1, 1, -1.0))],
    });

    // Phase 1: existence.
    let mut phase1 = program.clone();
    if let Some(c) = &cap_constraint {
        phase1.constraints.push(c.clone());
    }
    let feas = solve_feasibility(&phase1, options)?;
    if feas.status != SolveStatus::Feasible {
        return Err(SdpError::Infeasible {
            max_margin: feas.max_margin.unwrap_or(f64::NEG_INFINITY),
            marginal: feas.marginal,
        });
    }

    // Phase 2: optimize from a fresh start.
    let n = program.registry.len();
    let mut sdp = Sdp {
        m: n,
        b: vec![0.0; n],
        blocks: Vec::new(),
    };
    sdp.b[t] = -1.0;
    // The optimum sits on the boundary of the psd blocks; the guard keeps
    // the inexact iterate on the right side of it.
    for c in phase1.constraints.iter() {
        sdp.push_constraint(c, eps, delta, None);
    }
    let res = ipm(&sdp, options, &|_| false)?;
    let mut x = res.y;
    let mut warnings = Vec::new();
    let mut margins = check_margins(program, &x, eps, delta)?;
    if !margins.iter().all(|m| m.ok) {
        // Fall back on the phase-1 point, which is certified.
        warnings.push(format!(
            "optimal iterate failed the margin re-check (converged {}); returning the feasibility point",
            res.converged
        ));
        x = feas.assignment.clone();
        margins = feas.margins.clone();
    } else if !res.converged {
        warnings.push(format!(
            "stopped after {} iterations at relative accuracy {:.1e} (tolerance {:.1e})",
            res.iterations, res.accuracy, options.duality_gap_tol
        ));
    }
    let gamma = x[t].max(0.0).sqrt();
    Ok(SolveOutcome {
        status: if res.converged && warnings.is_empty() {
            SolveStatus::Optimal
        } else {
            SolveStatus::Feasible
        },
        gamma: Some(gamma),
        assignment: x,
        margins,
        max_margin: feas.max_margin,
        marginal: false,
        iterations: feas.iterations + res.iterations,
        warnings,
    })
}

/// Smallest γ in the bracket for which the fixed-γ program is strictly feasible.
pub fn bisect_gamma<F>(builder: F, options: &SolverOptions) -> Result<SolveOutcome, SdpError>
where
    F: Fn(f64) -> Result<LmiProgram, LmiError>,
{
    options.validate()?;
    let (lo0, hi0) = options.gamma_bracket;
    if !(lo0.is_finite() && hi0.is_finite() && lo0 > 0.0 && lo0 < hi0) {
        return Err(SdpError::InvalidBracket(format!(
            "need 0 < gamma_lo < gamma_hi, got [{lo0}, {hi0}]"
        )));
    }
    if !(options.bisection_tol > 0.0) {
        return Err(SdpError::InvalidBracket("tolerance must be positive".into()));
    }
    let at = |g: f64| -> Result<SolveOutcome, SdpError> {
        let program = builder(g)?;
        let mut out = solve_feasibility(&program, options)?;
        out.gamma = Some(g);
        Ok(out)
    };

    let top = at(hi0)?;
    if top.status != SolveStatus::Feasible {
        return Err(SdpError::Infeasible {
            max_margin: top.max_margin.unwrap_or(f64::NEG_INFINITY),
            marginal: top.marginal,
        });
    }
    let bottom = at(lo0)?;
    if bottom.status == SolveStatus::Feasible {
        let mut out = bottom;
        out.warnings
            .push(format!("bracket not tight: gamma_lo = {lo0} is already feasible"));
        return Ok(out);
    }

    let (mut lo, mut hi, mut best) = (lo0, hi0, top);
    let mut iterations = 0;
    while (hi - lo) / hi > options.bisection_tol {
        let mid = 0.5 * (lo + hi);
        let out = at(mid)?;
        iterations += out.iterations;
        if out.status == SolveStatus::Feasible {
            hi = mid;
            best = out;
        } else {
            lo = mid;
        }
    }
    best.iterations += iterations;
    Ok(best)
}
