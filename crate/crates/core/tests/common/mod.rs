//! Test-side oracles built without the library's own assembly routines.
#![allow(dead_code)]

use adtsat::linalg::{Matrix, Vector};
use adtsat::lmi::{VarKey, VarKind};
use adtsat::model::{PlantMode, SwitchingSignal};
use adtsat::pipeline::Synthesis;
use adtsat::synth::ControllerMode;

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
pub fn expm_taylor(a: &Matrix) -> Matrix {
    let n = a.nrows();
    let norm = a.iter().map(|v| v.abs()).sum::<f64>();
    let mut squarings = 0;
    while norm / 2f64.powi(squarings) > 0.25 {
        squarings += 1;
    }
    let scaled = a / 2f64.powi(squarings);
    let mut term = Matrix::identity(n, n);
    let mut sum = Matrix::identity(n, n);
    for k in 1..=20 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Largest `count − (T − t)/τ` over every window whose endpoints come from
/// a uniform grid of spacing `grid` together with the switch instants.
pub fn chatter_scan(switch_times: &[f64], horizon: f64, tau_a: f64, grid: f64) -> f64 {
    let mut pts: Vec<f64> = Vec::new();
    let mut t = 0.0;
    while t <= horizon {
        pts.push(t);
        t += grid;
    }
    pts.push(horizon);
    pts.extend_from_slice(switch_times);
    let mut best = f64::NEG_INFINITY;
    for &lo in &pts {
        for &hi in &pts {
            if hi < lo {
                continue;
            }
            let mut count = 0;
            for &s in switch_times {
                if lo <= s && s <= hi {
                    count += 1;
                }
            }
            let v = count as f64 - (hi - lo) / tau_a;
            if v > best {
                best = v;
            }
        }
    }
    best
}

pub fn switch_times(signal: &SwitchingSignal) -> Vec<f64> {
    signal.switches().iter().map(|s| s.0).collect()
}

fn sym_eigs(m: &Matrix) -> Vector {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues
}

pub fn lambda_max(m: &Matrix) -> f64 {
    sym_eigs(m).max()
}

pub fn lambda_min(m: &Matrix) -> f64 {
    sym_eigs(m).min()
}

/// Flow dissipation form of one mode, assembled entry by entry from the
/// quadratic form
/// `2xᵀP ẋ + λ₀xᵀPx + 2ψᵀU⁻¹(u − Hx − ψ) − wᵀw + zᵀz/γ²`
/// in `ξ = (x_p, x_k, ψ, w)`, where `ψ` is the deadzone output.
pub fn dissipation_form(
    plant: &PlantMode,
    k: &ControllerMode,
    p: &Matrix,
    h: &Matrix,
    u_mult: &Matrix,
    lambda0: f64,
    gamma: f64,
) -> Matrix {
    let n = plant.a.nrows();
    let nu = plant.b2.ncols();
    let nw = plant.b1.ncols();
    let dim = 2 * n + nu + nw;
    let u_inv = u_mult.clone().try_inverse().expect("U invertible");
    let q = |xi: &Vector| -> f64 {
        let xp = xi.rows(0, n).into_owned();
        let xk = xi.rows(n, n).into_owned();
        let psi = xi.rows(2 * n, nu).into_owned();
        let w = xi.rows(2 * n + nu, nw).into_owned();
        let y = &plant.c2 * &xp + &plant.d21 * &w;
        let u = &k.c_k1 * &xk + &k.d_k12 * &psi + &k.d_k11 * &y;
        let sat = &u - &psi;
        let dxp = &plant.a * &xp + &plant.b2 * &sat + &plant.b1 * &w;
        let dxk = &k.a_k * &xk + &k.b_k2 * &psi + &k.b_k1 * &y;
        let z = &plant.c1 * &xp + &plant.d12 * &sat + &plant.d11 * &w;
        let x = xi.rows(0, 2 * n).into_owned();
        let mut dx = Vector::zeros(2 * n);
        dx.rows_mut(0, n).copy_from(&dxp);
        dx.rows_mut(n, n).copy_from(&dxk);
        let v = 2.0 * x.dot(&(p * &dx)) + lambda0 * x.dot(&(p * &x));
        let sector = 2.0 * psi.dot(&(&u_inv * (&u - h * &x - &psi)));
        v + sector - w.dot(&w) + z.dot(&z) / (gamma * gamma)
    };
    let e = |i: usize| {
        let mut v = Vector::zeros(dim);
        v[i] = 1.0;
        v
    };
    let mut m = Matrix::zeros(dim, dim);
    for i in 0..dim {
        m[(i, i)] = q(&e(i));
    }
    for i in 0..dim {
        for j in 0..i {
            let v = 0.5 * (q(&(e(i) + e(j))) - m[(i, i)] - m[(j, j)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `μPᵢ − A_sᵀPⱼA_s` with `A_s = diag(I, Δ)`.
pub fn jump_decrease(p_i: &Matrix, p_j: &Matrix, delta: &Matrix, mu: f64) -> Matrix {
    let n = delta.nrows();
    let mut a_s = Matrix::identity(2 * n, 2 * n);
    a_s.view_mut((n, n), (n, n)).copy_from(delta);
    p_i * mu - a_s.transpose() * p_j * a_s
}

/// `max_{xᵀPx ≤ s²} |ℓᵀHx| = s‖L⁻¹Hᵀℓ‖` with `P = LLᵀ`.
pub fn ellipsoid_peak(p: &Matrix, h_row: &Matrix, s: f64) -> f64 {
    let l = p.clone().cholesky().expect("P positive definite").l();
    let v = l.solve_lower_triangular(&h_row.transpose()).expect("triangular solve");
    s * v.norm()
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

/// Hatted variables rebuilt from the controller with the expanded change of
/// variables; returns the largest relative mismatch against the assignment.
pub fn hatted_mismatch(syn: &Synthesis, plant: &adtsat::model::SwitchedPlant) -> f64 {
    let x = &syn.outcome.assignment;
    let reg = &syn.program.registry;
    let get = |k: VarKind, i: usize| reg.extract(VarKey::Mode(k, i), x).unwrap();
    let rec = &syn.reconstruction;
    let mut worst: f64 = 0.0;
    for i in 0..plant.n_modes() {
        let pm = plant.mode(i);
        let k = &rec.controller.modes[i];
        let (r, s, u) = (get(VarKind::R, i), get(VarKind::S, i), get(VarKind::U, i));
        let m = &rec.factors[i].m;
        let nf = &rec.factors[i].n;
        let mt = m.transpose();
        let a_hat = &s * &pm.a * &r
            + (nf * &k.a_k + &s * &pm.b2 * &k.c_k1) * &mt
            + (nf * &k.b_k1 + &s * &pm.b2 * &k.d_k11) * &pm.c2 * &r;
        let b2_hat = (nf * &k.b_k2 + &s * &pm.b2 * &k.d_k12) * &u - &s * &pm.b2 * &u;
        let b1_hat = nf * &k.b_k1 + &s * &pm.b2 * &k.d_k11;
        let c1_hat = &k.c_k1 * &mt + &k.d_k11 * &pm.c2 * &r;
        let d12_hat = &k.d_k12 * &u;
        let d11_hat = k.d_k11.clone();
        let h1 = k.h1.clone().unwrap();
        let h2_hat = &h1 * &r + k.h2.as_ref().unwrap() * &mt;
        for (ours, kind) in [
            (a_hat, VarKind::Ahat),
            (b2_hat, VarKind::Bhat2),
            (b1_hat, VarKind::Bhat1),
            (c1_hat, VarKind::Chat1),
            (d12_hat, VarKind::Dhat12),
            (d11_hat, VarKind::Dhat11),
            (h1, VarKind::Hhat1),
            (h2_hat, VarKind::Hhat2),
        ] {
            worst = worst.max(rel(&ours, &get(kind, i)));
        }
    }
    for (&(i, j), d) in &rec.controller.resets {
        let r_i = get(VarKind::R, i);
        let s_j = get(VarKind::S, j);
        let ours = &s_j * &r_i + &rec.factors[j].n * d * rec.factors[i].m.transpose();
        worst = worst.max(rel(&ours, &reg.extract(VarKey::DeltaHat(i, j), x).unwrap()));
    }
    worst
}

/// Weighted-L₂ ratio: `∫e^{−λt}zᵀz` by nonuniform composite Simpson, the
/// disturbance energy supplied in closed form.
pub fn simpson_ratio(time: &[f64], z: &[Vector], lambda: f64, w_energy: f64) -> f64 {
    let f = |k: usize| (-lambda * time[k]).exp() * z[k].norm_squared();
    let n = time.len() - 1;
    let mut total = 0.0;
    let mut k = 0;
    while k + 2 <= n {
        let h0 = time[k + 1] - time[k];
        let h1 = time[k + 2] - time[k + 1];
        total += (h0 + h1) / 6.0
            * ((2.0 - h1 / h0) * f(k) + (h0 + h1).powi(2) / (h0 * h1) * f(k + 1) + (2.0 - h0 / h1) * f(k + 2));
        k += 2;
    }
    if k < n {
        total += 0.5 * (time[n] - time[k]) * (f(k) + f(n));
    }
    (total / w_energy).sqrt()
}

/// γ-optimal synthesis at `(λ₀, μ) = (0.1, 4)` on the bundled plant.
pub fn optimal_synthesis() -> &'static Synthesis {
    static S: std::sync::OnceLock<Synthesis> = std::sync::OnceLock::new();
    S.get_or_init(|| {
        let plant = adtsat::reproduce::example_plant();
        let spec = adtsat::model::SynthesisSpec::minimize(&plant, 0.1, 4.0, adtsat::reproduce::EXAMPLE_S).unwrap();
        adtsat::pipeline::synthesize(&plant, &spec, adtsat::synth::FactorizationMethod::BalancedSvd).unwrap()
    })
}

/// Fixed-γ synthesis at 1.2 times the optimum, with the given factorization.
pub fn relaxed_synthesis(method: adtsat::synth::FactorizationMethod) -> Synthesis {
    let plant = adtsat::reproduce::example_plant();
    let opt = optimal_synthesis();
    let spec = adtsat::model::SynthesisSpec {
        gamma: adtsat::model::GammaMode::Fixed(1.2 * opt.gamma()),
        ..opt.spec.clone()
    };
    adtsat::pipeline::synthesize(&plant, &spec, method).unwrap()
}
