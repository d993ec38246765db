//! Controller reconstruction from a feasible LMI assignment and independent
//! verification of the closed-loop certificates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LmiError, SynthError};
use crate::linalg::{self, Matrix};
use crate::lmi::{ConstraintId, LmiProgram, VarKey, VarKind};
use crate::model::{PlantMode, SwitchedPlant, SynthesisSpec};

/// Largest condition number accepted for any inversion.
pub const MAX_COND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerMode {
    #[serde(rename = "A_k", with = "crate::matrix_serde")]
    pub a_k: Matrix,
    #[serde(rename = "B_k1", with = "crate::matrix_serde")]
    pub b_k1: Matrix,
    #[serde(rename = "B_k2", with = "crate::matrix_serde")]
    pub b_k2: Matrix,
    #[serde(rename = "C_k1", with = "crate::matrix_serde")]
    pub c_k1: Matrix,
    #[serde(rename = "D_k11", with = "crate::matrix_serde")]
    pub d_k11: Matrix,
    #[serde(rename = "D_k12", with = "crate::matrix_serde")]
    pub d_k12: Matrix,
    #[serde(rename = "H1", default, with = "crate::matrix_serde::option", skip_serializing_if = "Option::is_none")]
    pub h1: Option<Matrix>,
    #[serde(rename = "H2", default, with = "crate::matrix_serde::option", skip_serializing_if = "Option::is_none")]
    pub h2: Option<Matrix>,
    #[serde(rename = "P", default, with = "crate::matrix_serde::option", skip_serializing_if = "Option::is_none")]
    pub p: Option<Matrix>,
    #[serde(rename = "U", default, with = "crate::matrix_serde::option", skip_serializing_if = "Option::is_none")]
    pub u: Option<Matrix>,
}

impl ControllerMode {
    /// `[A_k, B_k2, B_k1; C_k1, D_k12, D_k11]`.
    pub fn block(&self) -> Matrix {
        linalg::block_matrix(&[
            vec![&self.a_k, &self.b_k2, &self.b_k1],
            vec![&self.c_k1, &self.d_k12, &self.d_k11],
        ])
    }

    /// `H = [H₁, H₂]` when certificate data is present.
    pub fn h(&self) -> Option<Matrix> {
        match (&self.h1, &self.h2) {
            (Some(h1), Some(h2)) => Some(linalg::block_matrix(&[vec![h1, h2]])),
            _ => None,
        }
    }

    pub fn has_certificate(&self) -> bool {
        self.h1.is_some() && self.h2.is_some() && self.p.is_some() && self.u.is_some()
    }

    pub fn max_abs_gain(&self) -> f64 {
        linalg::max_abs(&self.block())
    }
}

/// Hybrid controller: one linear controller per mode plus controller-state
/// resets applied at each switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ControllerFile", into = "ControllerFile")]
pub struct HybridController {
    pub modes: Vec<ControllerMode>,
    /// Reset `Δ_ij` keyed by zero-based `(from, to)`.
    pub resets: BTreeMap<(usize, usize), Matrix>,
    pub gamma: f64,
    pub lambda0: f64,
    pub mu: f64,
    pub s: f64,
    pub tau_a_star: f64,
}

#[derive(Serialize, Deserialize)]
struct ControllerFile {
    modes: Vec<ControllerMode>,
    /// Keys `"i->j"`, one-based.
    resets: BTreeMap<String, Vec<Vec<f64>>>,
    gamma: f64,
    lambda0: f64,
    mu: f64,
    s: f64,
    tau_a_star: f64,
}

impl TryFrom<ControllerFile> for HybridController {
    type Error = SynthError;

    fn try_from(f: ControllerFile) -> Result<Self, SynthError> {
        let mut resets = BTreeMap::new();
        for (key, rows) in f.resets {
            let bad = || SynthError::Incompatible(format!("reset key {key:?} is not of the form \"i->j\""));
            let (a, b) = key.split_once("->").ok_or_else(bad)?;
            let i: usize = a.trim().parse().map_err(|_| bad())?;
            let j: usize = b.trim().parse().map_err(|_| bad())?;
            if i == 0 || j == 0 || i == j {
                return Err(bad());
            }
            let m = crate::matrix_serde::from_rows::<serde_json::Error>(rows)
                .map_err(|e| SynthError::Incompatible(format!("reset {key}: {e}")))?;
            resets.insert((i - 1, j - 1), m);
        }
        let c = HybridController {
            modes: f.modes,
            resets,
            gamma: f.gamma,
            lambda0: f.lambda0,
            mu: f.mu,
            s: f.s,
            tau_a_star: f.tau_a_star,
        };
        c.check_shapes()?;
        Ok(c)
    }
}

impl From<HybridController> for ControllerFile {
    fn from(c: HybridController) -> Self {
        ControllerFile {
            modes: c.modes,
            resets: c
                .resets
                .iter()
                .map(|((i, j), m)| (format!("{}->{}", i + 1, j + 1), crate::matrix_serde::to_rows(m)))
                .collect(),
            gamma: c.gamma,
            lambda0: c.lambda0,
            mu: c.mu,
            s: c.s,
            tau_a_star: c.tau_a_star,
        }
    }
}

impl HybridController {
    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Controller order (equal to the plant order for this construction).
    pub fn order(&self) -> usize {
        self.modes.first().map_or(0, |m| m.a_k.nrows())
    }

    pub fn reset(&self, from: usize, to: usize) -> Option<&Matrix> {
        self.resets.get(&(from, to))
    }

    fn check_shapes(&self) -> Result<(), SynthError> {
        let nk = self.order();
        let bad = |what: String| Err(SynthError::Incompatible(what));
        if self.modes.is_empty() {
            return bad("controller has no modes".into());
        }
        for (i, m) in self.modes.iter().enumerate() {
            let nu = m.c_k1.nrows();
            let ny = m.b_k1.ncols();
            let ok = m.a_k.shape() == (nk, nk)
                && m.b_k1.nrows() == nk
                && m.b_k2.shape() == (nk, nu)
                && m.c_k1.ncols() == nk
                && m.d_k11.shape() == (nu, ny)
                && m.d_k12.shape() == (nu, nu);
            if !ok {
                return bad(format!("mode {} has inconsistent block shapes", i + 1));
            }
        }
        for ((i, j), d) in &self.resets {
            if *i >= self.n_modes() || *j >= self.n_modes() || d.shape() != (nk, nk) {
                return bad(format!("reset {}->{} is out of range or not {nk}x{nk}", i + 1, j + 1));
            }
        }
        Ok(())
    }

    /// Checks that the controller can be connected to `plant`.
    pub fn check_compatible(&self, plant: &SwitchedPlant) -> Result<(), SynthError> {
        self.check_shapes()?;
        let d = plant.dims();
        if self.n_modes() != plant.n_modes() {
            return Err(SynthError::Incompatible(format!(
                "{} controller modes for {} plant modes",
                self.n_modes(),
                plant.n_modes()
            )));
        }
        let m = &self.modes[0];
        if m.c_k1.nrows() != d.nu || m.b_k1.ncols() != d.ny {
            return Err(SynthError::Incompatible(format!(
                "controller maps {} measurements to {} inputs, plant has n_y = {}, n_u = {}",
                m.b_k1.ncols(),
                m.c_k1.nrows(),
                d.ny,
                d.nu
            )));
        }
        Ok(())
    }
}

/// `ln μ / λ₀`.
pub fn dwell_time_bound(lambda0: f64, mu: f64) -> Result<f64, SynthError> {
    if !(lambda0 > 0.0 && lambda0.is_finite()) {
        return Err(SynthError::DomainError(format!("lambda0 must be positive, got {lambda0}")));
    }
    if !(mu > 1.0 && mu.is_finite()) {
        return Err(SynthError::DomainError(format!("mu must exceed 1, got {mu}")));
    }
    Ok(mu.ln() / lambda0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FactorizationMethod {
    /// `M = UΣ^½`, `N = VΣ^½` from the SVD of `I − RS`.
    #[default]
    BalancedSvd,
    /// `M = I − RS`, `N = I`.
    Identity,
}

/// Per-mode factors with `M Nᵀ = I − R S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factors {
    pub m: Matrix,
    pub n: Matrix,
}

/// Hatted decision variables of one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct HattedMode {
    pub r: Matrix,
    pub s: Matrix,
    pub u: Matrix,
    pub a: Matrix,
    pub b1: Matrix,
    pub b2: Matrix,
    pub c1: Matrix,
    pub d11: Matrix,
    pub d12: Matrix,
    pub h1: Matrix,
    pub h2: Matrix,
}

impl HattedMode {
    pub fn extract(program: &LmiProgram, x: &[f64], mode: usize) -> Result<Self, LmiError> {
        let g = |k: VarKind| program.registry.extract(VarKey::Mode(k, mode), x);
        Ok(HattedMode {
            r: g(VarKind::R)?,
            s: g(VarKind::S)?,
            u: g(VarKind::U)?,
            a: g(VarKind::Ahat)?,
            b1: g(VarKind::Bhat1)?,
            b2: g(VarKind::Bhat2)?,
            c1: g(VarKind::Chat1)?,
            d11: g(VarKind::Dhat11)?,
            d12: g(VarKind::Dhat12)?,
            h1: g(VarKind::Hhat1)?,
            h2: g(VarKind::Hhat2)?,
        })
    }

    /// `[Â, B̂₂, B̂₁; Ĉ₁, D̂₁₂, D̂₁₁]`.
    pub fn block(&self) -> Matrix {
        linalg::block_matrix(&[vec![&self.a, &self.b2, &self.b1], vec![&self.c1, &self.d12, &self.d11]])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub controller: HybridController,
    pub factors: Vec<Factors>,
    /// Relative asymmetry of `Z₂Z₁⁻¹` before symmetrization, per mode.
    pub p_asymmetry: Vec<f64>,
}

fn inv(m: &Matrix, context: impl FnOnce() -> String) -> Result<Matrix, SynthError> {
    linalg::guarded_inverse(m, MAX_COND).map_err(|source| SynthError::Inversion {
        context: context(),
        source,
    })
}

/// `b·m⁻¹` with one step of iterative refinement.
fn right_div(b: &Matrix, m: &Matrix, context: impl FnOnce() -> String) -> Result<Matrix, SynthError> {
    let m_inv = inv(m, context)?;
    let x = b * &m_inv;
    Ok(&x + (b - &x * m) * &m_inv)
}

/// `m⁻¹·b` with one step of iterative refinement.
fn left_div(m: &Matrix, b: &Matrix, context: impl FnOnce() -> String) -> Result<Matrix, SynthError> {
    let m_inv = inv(m, context)?;
    let x = &m_inv * b;
    Ok(&x + &m_inv * (b - m * &x))
}

/// `[N, S B_p2; 0, I]`.
fn left_factor(f: &Factors, h: &HattedMode, p: &PlantMode) -> Matrix {
    let nu = p.b2.ncols();
    let n = f.n.nrows();
    linalg::block_matrix(&[
        vec![&f.n, &(&h.s * &p.b2)],
        vec![&Matrix::zeros(nu, n), &Matrix::identity(nu, nu)],
    ])
}

/// `[Mᵀ, 0, 0; 0, U, 0; C_p2 R, 0, I]`.
fn right_factor(f: &Factors, h: &HattedMode, p: &PlantMode) -> Matrix {
    let n = f.m.nrows();
    let nu = h.u.nrows();
    let ny = p.c2.nrows();
    linalg::block_matrix(&[
        vec![&f.m.transpose(), &Matrix::zeros(n, nu), &Matrix::zeros(n, ny)],
        vec![&Matrix::zeros(nu, n), &h.u, &Matrix::zeros(nu, ny)],
        vec![&(&p.c2 * &h.r), &Matrix::zeros(ny, nu), &Matrix::identity(ny, ny)],
    ])
}

/// `[S A_p R, −S B_p2 U, 0; 0, 0, 0]`.
fn plant_offset(h: &HattedMode, p: &PlantMode) -> Matrix {
    let n = p.a.nrows();
    let nu = p.b2.ncols();
    let ny = p.c2.nrows();
    let mut out = Matrix::zeros(n + nu, n + nu + ny);
    out.view_mut((0, 0), (n, n)).copy_from(&(&h.s * &p.a * &h.r));
    out.view_mut((0, n), (n, nu)).copy_from(&(-(&h.s * &p.b2 * &h.u)));
    out
}

/// `Z₁ = [R, I; Mᵀ, 0]`.
pub fn z1(r: &Matrix, m: &Matrix) -> Matrix {
    let n = r.nrows();
    linalg::block_matrix(&[vec![r, &Matrix::identity(n, n)], vec![&m.transpose(), &Matrix::zeros(n, n)]])
}

/// `Z₂ = [I, S; 0, Nᵀ]`.
pub fn z2(s: &Matrix, n_f: &Matrix) -> Matrix {
    let n = s.nrows();
    linalg::block_matrix(&[vec![&Matrix::identity(n, n), s], vec![&Matrix::zeros(n, n), &n_f.transpose()]])
}

fn factorize(h: &HattedMode, mode: usize, method: FactorizationMethod) -> Result<Factors, SynthError> {
    let n = h.r.nrows();
    let x = Matrix::identity(n, n) - &h.r * &h.s;
    match method {
        FactorizationMethod::BalancedSvd => {
            let (m, _) = linalg::balanced_factorize(&x, linalg::default_sigma_tol(&x))
                .map_err(|source| SynthError::Factorization { mode: mode + 1, source })?;
            // Re-solving for N drives the residual of M Nᵀ = I − RS to rounding
            // level; the SVD factor alone leaves an error the gains amplify.
            let nt = left_div(&m, &x, || format!("mode {}: M", mode + 1))?;
            Ok(Factors { m, n: nt.transpose() })
        }
        FactorizationMethod::Identity => {
            let sigma_min = x.clone().svd(false, false).singular_values.min();
            if sigma_min <= linalg::default_sigma_tol(&x) {
                return Err(SynthError::Factorization {
                    mode: mode + 1,
                    source: crate::error::LinalgError::NearSingular { sigma_min },
                });
            }
            Ok(Factors {
                m: x,
                n: Matrix::identity(n, n),
            })
        }
    }
}

/// Builds the hybrid controller, resets, `H` and the Lyapunov matrices from
/// a feasible assignment.
pub fn reconstruct(
    program: &LmiProgram,
    x: &[f64],
    plant: &SwitchedPlant,
    spec: &SynthesisSpec,
    method: FactorizationMethod,
) -> Result<Reconstruction, SynthError> {
    program.registry.check_len(x)?;
    if program.n_modes != plant.n_modes() || program.dims != plant.dims() {
        return Err(SynthError::Incompatible("program was built for a different plant".into()));
    }
    let gamma = program
        .gamma(x)
        .ok_or_else(|| SynthError::Incompatible("program carries no gamma".into()))?;
    let hatted: Vec<HattedMode> = (0..plant.n_modes())
        .map(|i| HattedMode::extract(program, x, i))
        .collect::<Result<_, _>>()?;
    let factors: Vec<Factors> = hatted
        .iter()
        .enumerate()
        .map(|(i, h)| factorize(h, i, method))
        .collect::<Result<_, _>>()?;

    let mut modes = Vec::with_capacity(plant.n_modes());
    let mut p_asymmetry = Vec::with_capacity(plant.n_modes());
    for (i, ((h, f), p)) in hatted.iter().zip(&factors).zip(plant.modes()).enumerate() {
        let n = p.a.nrows();
        let nu = p.b2.ncols();
        let ny = p.c2.nrows();
        let lk = left_div(&left_factor(f, h, p), &(h.block() - plant_offset(h, p)), || {
            format!("mode {}: [N, S B_p2; 0, I]", i + 1)
        })?;
        let k = right_div(&lk, &right_factor(f, h, p), || {
            format!("mode {}: [M', 0, 0; 0, U, 0; C_p2 R, 0, I]", i + 1)
        })?;
        let h2 = right_div(&(&h.h2 - &h.h1 * &h.r), &f.m.transpose(), || format!("mode {}: M'", i + 1))?;
        let p_raw = right_div(&z2(&h.s, &f.n), &z1(&h.r, &f.m), || format!("mode {}: Z1", i + 1))?;
        let asym = linalg::relative_difference(&p_raw, &p_raw.transpose());
        let p_sym = linalg::symmetrize(&p_raw);
        let lambda_min = linalg::sym_eig_bounds(&p_sym)?.0;
        if !(lambda_min > 0.0) {
            return Err(SynthError::NotPositiveDefinite { mode: i + 1, lambda_min });
        }
        p_asymmetry.push(asym);

        modes.push(ControllerMode {
            a_k: k.view((0, 0), (n, n)).into_owned(),
            b_k2: k.view((0, n), (n, nu)).into_owned(),
            b_k1: k.view((0, n + nu), (n, ny)).into_owned(),
            c_k1: k.view((n, 0), (nu, n)).into_owned(),
            d_k12: k.view((n, n), (nu, nu)).into_owned(),
            d_k11: k.view((n, n + nu), (nu, ny)).into_owned(),
            h1: Some(h.h1.clone()),
            h2: Some(h2),
            p: Some(p_sym),
            u: Some(h.u.clone()),
        });
    }

    let mut resets = BTreeMap::new();
    for &(i, j) in &program.pairs {
        let dh = program.registry.extract(VarKey::DeltaHat(i, j), x)?;
        let delta = reset_from_hatted(&dh, &hatted[i].r, &hatted[j].s, &factors[i], &factors[j])
            .map_err(|e| match e {
                SynthError::Inversion { context, source } => SynthError::Inversion {
                    context: format!("reset {}->{}: {context}", i + 1, j + 1),
                    source,
                },
                other => other,
            })?;
        resets.insert((i, j), delta);
    }

    Ok(Reconstruction {
        controller: HybridController {
            modes,
            resets,
            gamma,
            lambda0: spec.lambda0,
            mu: spec.mu,
            s: spec.s,
            tau_a_star: dwell_time_bound(spec.lambda0, spec.mu)?,
        },
        factors,
        p_asymmetry,
    })
}

/// `Δᵢⱼ = Nⱼ⁻¹(Δ̂ᵢⱼ − SⱼRᵢ)Mᵢ⁻ᵀ`.
pub fn reset_from_hatted(
    delta_hat: &Matrix,
    r_i: &Matrix,
    s_j: &Matrix,
    from: &Factors,
    to: &Factors,
) -> Result<Matrix, SynthError> {
    let num = left_div(&to.n, &(delta_hat - s_j * r_i), || "N_j".into())?;
    right_div(&num, &from.m.transpose(), || "M_i'".into())
}

/// Hatted variables recomputed from a reconstructed controller.
#[derive(Debug, Clone, PartialEq)]
pub struct RecoveredHatted {
    /// `[Â, B̂₂, B̂₁; Ĉ₁, D̂₁₂, D̂₁₁]` per mode.
    pub controller_blocks: Vec<Matrix>,
    /// `(Ĥ₁, Ĥ₂)` per mode.
    pub h: Vec<(Matrix, Matrix)>,
    pub delta_hat: BTreeMap<(usize, usize), Matrix>,
}

/// Inverse of [`reconstruct`]: maps the controller back through the change
/// of variables, using `R`, `S`, `U` from the assignment.
pub fn recover_hatted(
    program: &LmiProgram,
    x: &[f64],
    plant: &SwitchedPlant,
    rec: &Reconstruction,
) -> Result<RecoveredHatted, SynthError> {
    let mut controller_blocks = Vec::new();
    let mut h = Vec::new();
    let hatted: Vec<HattedMode> = (0..plant.n_modes())
        .map(|i| HattedMode::extract(program, x, i))
        .collect::<Result<_, _>>()?;
    for (i, ((hm, f), p)) in hatted.iter().zip(&rec.factors).zip(plant.modes()).enumerate() {
        let cm = &rec.controller.modes[i];
        let block = plant_offset(hm, p) + left_factor(f, hm, p) * cm.block() * right_factor(f, hm, p);
        controller_blocks.push(block);
        let (h1, h2) = match (&cm.h1, &cm.h2) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(SynthError::MissingCertificate { mode: i + 1 }),
        };
        h.push((h1.clone(), h1 * &hm.r + h2 * f.m.transpose()));
    }
    let delta_hat = rec
        .controller
        .resets
        .iter()
        .map(|(&(i, j), d)| ((i, j), &hatted[j].s * &hatted[i].r + &rec.factors[j].n * d * rec.factors[i].m.transpose()))
        .collect();
    Ok(RecoveredHatted {
        controller_blocks,
        h,
        delta_hat,
    })
}

/// Largest relative mismatch between the assignment's hatted variables and
/// those recovered from the controller.
pub fn round_trip_error(
    program: &LmiProgram,
    x: &[f64],
    plant: &SwitchedPlant,
    rec: &Reconstruction,
) -> Result<f64, SynthError> {
    let back = recover_hatted(program, x, plant, rec)?;
    let mut worst: f64 = 0.0;
    for i in 0..plant.n_modes() {
        let h = HattedMode::extract(program, x, i)?;
        worst = worst
            .max(linalg::relative_difference(&back.controller_blocks[i], &h.block()))
            .max(linalg::relative_difference(&back.h[i].0, &h.h1))
            .max(linalg::relative_difference(&back.h[i].1, &h.h2));
    }
    for (&(i, j), d) in &back.delta_hat {
        let dh = program.registry.extract(VarKey::DeltaHat(i, j), x)?;
        worst = worst.max(linalg::relative_difference(d, &dh));
    }
    Ok(worst)
}

/// Closed-loop matrices of one mode with the deadzone as an exogenous input.
/// Rows: state (2n), controller output `u` (n_u), performance `z` (n_z).
/// Columns: state (2n), deadzone `dz(u)` (n_u), disturbance `w` (n_w).
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMode {
    pub a: Matrix,
    pub b0: Matrix,
    pub b2: Matrix,
    pub c0: Matrix,
    pub d00: Matrix,
    pub d02: Matrix,
    pub c2: Matrix,
    pub d20: Matrix,
    pub d22: Matrix,
}

pub fn assemble_closed_loop(p: &PlantMode, k: &ControllerMode) -> Result<ClosedLoopMode, SynthError> {
    let d = p.dims();
    let nk = k.a_k.nrows();
    let shapes_ok = nk == d.n
        && k.b_k1.shape() == (nk, d.ny)
        && k.b_k2.shape() == (nk, d.nu)
        && k.c_k1.shape() == (d.nu, nk)
        && k.d_k11.shape() == (d.nu, d.ny)
        && k.d_k12.shape() == (d.nu, d.nu);
    if !shapes_ok {
        return Err(SynthError::Incompatible(format!(
            "controller blocks do not fit a plant with n = {}, n_u = {}, n_y = {}",
            d.n, d.nu, d.ny
        )));
    }
    let (n, nu, nw, nz, ny) = (d.n, d.nu, d.nw, d.nz, d.ny);
    let z = Matrix::zeros;

    let base = linalg::block_matrix(&[
        vec![&p.a, &z(n, n), &(-&p.b2), &p.b1],
        vec![&z(n, n), &z(n, n), &z(n, nu), &z(n, nw)],
        vec![&z(nu, n), &z(nu, n), &z(nu, nu), &z(nu, nw)],
        vec![&p.c1, &z(nz, n), &(-&p.d12), &p.d11],
    ]);
    let left = linalg::block_matrix(&[
        vec![&z(n, n), &p.b2],
        vec![&Matrix::identity(n, n), &z(n, nu)],
        vec![&z(nu, n), &Matrix::identity(nu, nu)],
        vec![&z(nz, n), &p.d12],
    ]);
    let right = linalg::block_matrix(&[
        vec![&z(n, n), &Matrix::identity(n, n), &z(n, nu), &z(n, nw)],
        vec![&z(nu, n), &z(nu, n), &Matrix::identity(nu, nu), &z(nu, nw)],
        vec![&p.c2, &z(ny, n), &z(ny, nu), &p.d21],
    ]);
    let full = base + left * k.block() * right;
    let s = 2 * n;
    let part = |r0: usize, c0: usize, r: usize, c: usize| full.view((r0, c0), (r, c)).into_owned();
    Ok(ClosedLoopMode {
        a: part(0, 0, s, s),
        b0: part(0, s, s, nu),
        b2: part(0, s + nu, s, nw),
        c0: part(s, 0, nu, s),
        d00: part(s, s, nu, nu),
        d02: part(s, s + nu, nu, nw),
        c2: part(s + nu, 0, nz, s),
        d20: part(s + nu, s, nz, nu),
        d22: part(s + nu, s + nu, nz, nw),
    })
}

/// Dissipation matrix of one mode (λ_max < 0 certifies the flow condition).
pub fn dissipation_matrix(
    cl: &ClosedLoopMode,
    p: &Matrix,
    h: &Matrix,
    u: &Matrix,
    lambda0: f64,
    gamma: f64,
) -> Result<Matrix, SynthError> {
    let u_inv = inv(u, || "sector multiplier U".into())?;
    let nu = u.nrows();
    let nw = cl.b2.ncols();
    let nz = cl.c2.nrows();
    let b11 = linalg::symmetrize(&(p * &cl.a + cl.a.transpose() * p + p * lambda0));
    let b21 = cl.b0.transpose() * p + &u_inv * (&cl.c0 - h);
    let du = &u_inv * (&cl.d00 - Matrix::identity(nu, nu));
    let b22 = &du + du.transpose();
    let b31 = cl.b2.transpose() * p;
    let b32 = cl.d02.transpose() * &u_inv;
    let b33 = -Matrix::identity(nw, nw);
    let b44 = -Matrix::identity(nz, nz) * (gamma * gamma);
    let lower = [
        vec![b11],
        vec![b21, b22],
        vec![b31, b32, b33],
        vec![cl.c2.clone(), cl.d20.clone(), cl.d22.clone(), b44],
    ];
    let rows: Vec<Vec<Matrix>> = (0..4)
        .map(|r| {
            (0..4)
                .map(|c| if c <= r { lower[r][c].clone() } else { lower[c][r].transpose() })
                .collect()
        })
        .collect();
    let refs: Vec<Vec<&Matrix>> = rows.iter().map(|r| r.iter().collect()).collect();
    Ok(linalg::block_matrix(&refs))
}

/// `[μPᵢ, ⋆; Pⱼ A_s, Pⱼ]` with `A_s = diag(I, Δᵢⱼ)`.
pub fn boundary_matrix(p_i: &Matrix, p_j: &Matrix, delta: &Matrix, mu: f64) -> Matrix {
    let n = delta.nrows();
    let a_s = linalg::block_diag(&[&Matrix::identity(n, n), delta]);
    let off = p_j * a_s;
    linalg::block_matrix(&[vec![&(p_i * mu), &off.transpose()], vec![&off, p_j]])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeCertificate {
    /// One-based.
    pub mode: usize,
    pub dissipation_lambda_max: f64,
    pub p_lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryCertificate {
    /// One-based.
    pub from: usize,
    pub to: usize,
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InclusionCertificate {
    /// One-based.
    pub mode: usize,
    pub channel: usize,
    /// `ū_m − s·√(ℓ_mᵀ H P⁻¹ Hᵀ ℓ_m)`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub modes: Vec<ModeCertificate>,
    pub boundaries: Vec<BoundaryCertificate>,
    pub inclusions: Vec<InclusionCertificate>,
    pub pass: bool,
}

/// Independently re-checks every certificate of the proof on the
/// reconstructed controller: flow dissipation, Lyapunov positivity, jump
/// decrease at each reset, and ellipsoid inclusion in the linear region.
pub fn verify_certificate(
    controller: &HybridController,
    plant: &SwitchedPlant,
    spec: &SynthesisSpec,
) -> Result<CertificateReport, SynthError> {
    controller.check_compatible(plant)?;
    let delta = spec.delta;
    let gamma = controller.gamma;
    let mut modes = Vec::new();
    let mut pass = true;
    for (i, (cm, pm)) in controller.modes.iter().zip(plant.modes()).enumerate() {
        let (p, h, u) = match (&cm.p, cm.h(), &cm.u) {
            (Some(p), Some(h), Some(u)) => (p, h, u),
            _ => return Err(SynthError::MissingCertificate { mode: i + 1 }),
        };
        let cl = assemble_closed_loop(pm, cm)?;
        let dm = dissipation_matrix(&cl, p, &h, u, spec.lambda0, gamma)?;
        let lam_max = linalg::sym_eig_bounds(&dm)?.1;
        let p_min = linalg::sym_eig_bounds(p)?.0;
        pass &= lam_max < 0.0 && p_min > 0.0;
        modes.push(ModeCertificate {
            mode: i + 1,
            dissipation_lambda_max: lam_max,
            p_lambda_min: p_min,
        });
    }

    let mut boundaries = Vec::new();
    for (&(i, j), d) in &controller.resets {
        let (pi, pj) = match (&controller.modes[i].p, &controller.modes[j].p) {
            (Some(a), Some(b)) => (a, b),
            _ => return Err(SynthError::MissingCertificate { mode: i + 1 }),
        };
        let lo = linalg::sym_eig_bounds(&boundary_matrix(pi, pj, d, spec.mu))?.0;
        pass &= lo >= -delta;
        boundaries.push(BoundaryCertificate {
            from: i + 1,
            to: j + 1,
            lambda_min: lo,
        });
    }

    let mut inclusions = Vec::new();
    for (i, cm) in controller.modes.iter().enumerate() {
        let p = cm.p.as_ref().expect("checked above");
        let h = cm.h().expect("checked above");
        let p_inv = inv(p, || format!("mode {}: P", i + 1))?;
        let q = &h * p_inv * h.transpose();
        for (m, ub) in plant.u_bar().iter().enumerate() {
            let slack = ub - spec.s * q[(m, m)].max(0.0).sqrt();
            pass &= slack >= -delta * ub;
            inclusions.push(InclusionCertificate {
                mode: i + 1,
                channel: m + 1,
                slack,
            });
        }
    }

    Ok(CertificateReport {
        modes,
        boundaries,
        inclusions,
        pass,
    })
}

/// Relative mismatch between `Tᵀ·(dissipation)·T`, `T = diag(Z₁, U, I, I)`,
/// and the evaluated performance LMI of `mode`.
pub fn congruence_residual(
    program: &LmiProgram,
    x: &[f64],
    plant: &SwitchedPlant,
    spec: &SynthesisSpec,
    rec: &Reconstruction,
    mode: usize,
) -> Result<f64, SynthError> {
    let cm = &rec.controller.modes[mode];
    let pm = plant.mode(mode);
    let (p, h, u) = match (&cm.p, cm.h(), &cm.u) {
        (Some(p), Some(h), Some(u)) => (p, h, u),
        _ => return Err(SynthError::MissingCertificate { mode: mode + 1 }),
    };
    let cl = assemble_closed_loop(pm, cm)?;
    let dm = dissipation_matrix(&cl, p, &h, u, spec.lambda0, rec.controller.gamma)?;
    let r = program.registry.extract(VarKey::Mode(VarKind::R, mode), x)?;
    let d = pm.dims();
    let t = linalg::block_diag(&[
        &z1(&r, &rec.factors[mode].m),
        u,
        &Matrix::identity(d.nw, d.nw),
        &Matrix::identity(d.nz, d.nz),
    ]);
    let lhs = t.transpose() * dm * t;
    let rhs = program.evaluate_constraint(ConstraintId::Perf(mode), x)?;
    Ok(linalg::relative_difference(&lhs, &rhs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use crate::lmi::build_program;
    use crate::model::GammaMode;

    fn scalar_mode() -> PlantMode {
        let m = |v: f64| from_rows(&[&[v]]);
        PlantMode {
            a: m(0.5),
            b1: m(1.0),
            b2: m(2.0),
            c1: m(1.0),
            d11: m(0.3),
            d12: m(0.4),
            c2: m(1.5),
            d21: m(0.1),
            d22: m(0.0),
        }
    }

    fn zero_controller(n: usize, nu: usize, ny: usize) -> ControllerMode {
        ControllerMode {
            a_k: Matrix::zeros(n, n),
            b_k1: Matrix::zeros(n, ny),
            b_k2: Matrix::zeros(n, nu),
            c_k1: Matrix::zeros(nu, n),
            d_k11: Matrix::zeros(nu, ny),
            d_k12: Matrix::zeros(nu, nu),
            h1: None,
            h2: None,
            p: None,
            u: None,
        }
    }

    #[test]
    fn dwell_time_examples() {
        assert!((dwell_time_bound(0.1, 4.0).unwrap() - 13.8629).abs() < 1e-4);
        assert!((dwell_time_bound(0.05, 3.8).unwrap() - 26.70).abs() < 5e-3);
        let tiny = dwell_time_bound(1.0, 1.0 + 1e-12).unwrap();
        assert!((tiny - 1e-12).abs() < 1e-15);
        assert!(dwell_time_bound(0.0, 4.0).is_err());
        assert!(dwell_time_bound(0.1, 1.0).is_err());
    }

    #[test]
    fn zero_controller_closed_loop() {
        let p = scalar_mode();
        let cl = assemble_closed_loop(&p, &zero_controller(1, 1, 1)).unwrap();
        assert_eq!(cl.a, from_rows(&[&[0.5, 0.0], &[0.0, 0.0]]));
        assert_eq!(cl.c0, Matrix::zeros(1, 2));
        assert_eq!(cl.d22, p.d11);
        assert_eq!(cl.d00, Matrix::zeros(1, 1));
    }

    #[test]
    fn static_output_feedback_closed_loop() {
        let p = scalar_mode();
        let mut k = zero_controller(1, 1, 1);
        k.d_k11 = from_rows(&[&[1.0]]);
        k.d_k12 = from_rows(&[&[0.7]]);
        let cl = assemble_closed_loop(&p, &k).unwrap();
        assert_eq!(cl.c0, from_rows(&[&[1.5, 0.0]]));
        assert!((cl.d02[(0, 0)] - 0.1).abs() < 1e-15);
        assert_eq!(cl.d00, k.d_k12);
        // u = y feeds the plant through B_p2: A_cl(1,1) = A_p + B_p2 C_p2.
        assert!((cl.a[(0, 0)] - (0.5 + 2.0 * 1.5)).abs() < 1e-15);
    }

    #[test]
    fn closed_loop_rejects_bad_shapes() {
        assert!(assemble_closed_loop(&scalar_mode(), &zero_controller(2, 1, 1)).is_err());
    }

    fn scalar_program(gamma: f64) -> (SwitchedPlant, SynthesisSpec, LmiProgram) {
        let plant = SwitchedPlant::new(vec![scalar_mode(), scalar_mode()], vec![1.0]).unwrap();
        let spec = SynthesisSpec {
            lambda0: 0.1,
            mu: 4.0,
            s: 0.5,
            gamma: GammaMode::Fixed(gamma),
            epsilon: 1e-6,
            delta: 1e-8,
            kappa: None,
        };
        let prog = build_program(&plant, &spec).unwrap();
        (plant, spec, prog)
    }

    #[test]
    fn reset_vanishes_when_numerator_does() {
        let (plant, spec, prog) = scalar_program(2.0);
        let mut x = vec![0.0; prog.registry.len()];
        let two = from_rows(&[&[2.0]]);
        for i in 0..2 {
            prog.registry.write(VarKey::Mode(VarKind::R, i), &two, &mut x).unwrap();
            prog.registry.write(VarKey::Mode(VarKind::S, i), &two, &mut x).unwrap();
            prog.registry.write(VarKey::Mode(VarKind::U, i), &from_rows(&[&[1.0]]), &mut x).unwrap();
        }
        prog.registry.write(VarKey::DeltaHat(0, 1), &from_rows(&[&[4.0]]), &mut x).unwrap();
        prog.registry.write(VarKey::DeltaHat(1, 0), &from_rows(&[&[0.6]]), &mut x).unwrap();
        let rec = reconstruct(&prog, &x, &plant, &spec, FactorizationMethod::BalancedSvd).unwrap();
        let f = &rec.factors[0];
        assert!((f.m[(0, 0)].abs() - 3f64.sqrt()).abs() < 1e-14);
        assert!(rec.controller.reset(0, 1).unwrap()[(0, 0)].abs() < 1e-15);
        // Round trip of the other reset: Δ̂ = S_j R_i + N_j Δ M_iᵀ.
        let back = recover_hatted(&prog, &x, &plant, &rec).unwrap();
        assert!((back.delta_hat[&(1, 0)][(0, 0)] - 0.6).abs() < 1e-14);
    }

    #[test]
    fn scalar_reset_with_vanishing_numerator() {
        let half = from_rows(&[&[0.5]]);
        let x = from_rows(&[&[1.0]]) - &half * &half;
        let (m, n) = linalg::balanced_factorize(&x, 1e-12).unwrap();
        assert!((m[(0, 0)].abs() - 0.75f64.sqrt()).abs() < 1e-15);
        let f = Factors { m, n };
        let d = reset_from_hatted(&from_rows(&[&[0.25]]), &half, &half, &f, &f).unwrap();
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn scalar_reset_relation() {
        let one = Factors {
            m: from_rows(&[&[1.0]]),
            n: from_rows(&[&[1.0]]),
        };
        let (r, s) = (from_rows(&[&[3.0]]), from_rows(&[&[0.7]]));
        let dh = from_rows(&[&[1.9]]);
        let d = reset_from_hatted(&dh, &r, &s, &one, &one).unwrap();
        let back = &s * &r + &one.n * &d * one.m.transpose();
        assert!((back[(0, 0)] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn reconstruct_rejects_singular_coupling() {
        let (plant, spec, prog) = scalar_program(2.0);
        let mut x = vec![0.0; prog.registry.len()];
        for i in 0..2 {
            prog.registry.write(VarKey::Mode(VarKind::R, i), &from_rows(&[&[1.0]]), &mut x).unwrap();
            prog.registry.write(VarKey::Mode(VarKind::S, i), &from_rows(&[&[1.0]]), &mut x).unwrap();
        }
        assert!(matches!(
            reconstruct(&prog, &x, &plant, &spec, FactorizationMethod::BalancedSvd),
            Err(SynthError::Factorization { mode: 1, .. })
        ));
    }

    #[test]
    fn boundary_matrix_layout() {
        let p = Matrix::identity(2, 2);
        let d = from_rows(&[&[3.0]]);
        let b = boundary_matrix(&p, &p, &d, 4.0);
        assert_eq!(b[(0, 0)], 4.0);
        assert_eq!(b[(3, 1)], 3.0);
        assert_eq!(b[(1, 3)], 3.0);
        assert_eq!(b[(3, 3)], 1.0);
    }

    #[test]
    fn controller_json_round_trip() {
        let mut k = zero_controller(2, 1, 1);
        k.p = Some(Matrix::identity(4, 4));
        let mut resets = BTreeMap::new();
        resets.insert((0, 1), Matrix::identity(2, 2) * 2.0);
        resets.insert((1, 0), Matrix::identity(2, 2) * 0.5);
        let c = HybridController {
            modes: vec![k.clone(), k],
            resets,
            gamma: 0.7,
            lambda0: 0.1,
            mu: 4.0,
            s: 0.42,
            tau_a_star: dwell_time_bound(0.1, 4.0).unwrap(),
        };
        let text = serde_json::to_string(&c).unwrap();
        assert!(text.contains("\"1->2\""));
        let back: HybridController = serde_json::from_str(&text).unwrap();
        assert_eq!(back, c);
        let broken = text.replace("\"1->2\"", "\"1-2\"");
        assert!(serde_json::from_str::<HybridController>(&broken).is_err());
    }
}
