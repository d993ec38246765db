//! Fixed-step simulation of the saturated hybrid closed loop, empirical gain
//! and dwell-time diagnostics.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{ModelError, SimError};
use crate::linalg::{self, Matrix, Vector};
use crate::model::{Disturbance, Segment, SwitchedPlant, SwitchingSignal};
use crate::synth::{assemble_closed_loop, ClosedLoopMode, HybridController};

/// Default integration step (s).
pub const DEFAULT_STEP: f64 = 1e-3;

const LOOP_DAMPING: f64 = 0.5;
const LOOP_TOL: f64 = 1e-10;
const LOOP_MAX_ITER: usize = 100;

fn sat(u: f64, bound: f64) -> f64 {
    u.clamp(-bound, bound)
}

/// `u − sat(u)` per channel.
fn deadzone(u: &Vector, u_bar: &[f64]) -> Vector {
    Vector::from_fn(u.len(), |m, _| u[m] - sat(u[m], u_bar[m]))
}

/// Solver for `u = a + D₀₀·dz(u)` with the well-posedness check done once.
#[derive(Debug, Clone)]
pub struct InputLoop {
    d00: Matrix,
    u_bar: Vec<f64>,
}

impl InputLoop {
    pub fn new(d00: &Matrix, u_bar: &[f64]) -> Result<Self, SimError> {
        let nu = u_bar.len();
        if d00.shape() != (nu, nu) {
            return Err(SimError::Model(ModelError::DimensionMismatch {
                context: "D00".into(),
                expected: format!("{nu}x{nu}"),
                found: format!("{}x{}", d00.nrows(), d00.ncols()),
            }));
        }
        let shifted = linalg::he(&(d00 - Matrix::identity(nu, nu))).map_err(ModelError::from)?;
        let lambda_max = linalg::sym_eig_bounds(&shifted).map_err(ModelError::from)?.1;
        if !(lambda_max < 0.0) {
            return Err(SimError::IllPosedLoop { lambda_max });
        }
        Ok(InputLoop {
            d00: d00.clone(),
            u_bar: u_bar.to_vec(),
        })
    }

    /// Returns `(u, dz(u))`.
    pub fn solve(&self, a: &Vector) -> Result<(Vector, Vector), SimError> {
        if self.u_bar.len() == 1 {
            let (a0, d, ub) = (a[0], self.d00[(0, 0)], self.u_bar[0]);
            let u = if a0.abs() <= ub {
                a0
            } else {
                (a0 - d * ub * a0.signum()) / (1.0 - d)
            };
            let u = Vector::from_element(1, u);
            let dz = deadzone(&u, &self.u_bar);
            return Ok((u, dz));
        }
        let mut u = a.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..LOOP_MAX_ITER {
            let target = a + &self.d00 * deadzone(&u, &self.u_bar);
            residual = (&target - &u).norm();
            if residual <= LOOP_TOL * (1.0 + a.norm()) {
                break;
            }
            u = &u * (1.0 - LOOP_DAMPING) + target * LOOP_DAMPING;
        }
        let dz = deadzone(&u, &self.u_bar);
        let final_res = (&u - a - &self.d00 * &dz).norm();
        if final_res > 1e-9 * (1.0 + a.norm()) {
            return Err(SimError::NoConvergence {
                residual: final_res.max(residual),
            });
        }
        Ok((u, dz))
    }
}

/// Solves `u = a + D₀₀·dz(u)`; returns `(u, dz(u))`.
pub fn solve_input_loop(a: &Vector, d00: &Matrix, u_bar: &[f64]) -> Result<(Vector, Vector), SimError> {
    InputLoop::new(d00, u_bar)?.solve(a)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchEvent {
    pub time: f64,
    /// Zero-based.
    pub from: usize,
    pub to: usize,
    pub xk_before: Vec<f64>,
    pub xk_after: Vec<f64>,
}

/// Region membership at one grid point; `None` when the controller carries
/// no certificate data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct RegionFlags {
    /// `|Hᵢ x_cl|_m ≤ ū_m` for every channel.
    pub in_linear_region: Option<bool>,
    /// `x_clᵀ Pᵢ x_cl ≤ s²`.
    pub in_ellipsoid: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub time: Vec<f64>,
    /// Zero-based active mode.
    pub mode: Vec<usize>,
    pub xp: Vec<Vector>,
    pub xk: Vec<Vector>,
    pub u: Vec<Vector>,
    pub sat_u: Vec<Vector>,
    pub dz_u: Vec<Vector>,
    pub w: Vec<Vector>,
    pub z: Vec<Vector>,
    pub events: Vec<SwitchEvent>,
    pub flags: Vec<RegionFlags>,
    pub u_bar: Vec<f64>,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn x_cl(&self, k: usize) -> Vector {
        let n = self.xp[k].len();
        Vector::from_fn(2 * n, |i, _| if i < n { self.xp[k][i] } else { self.xk[k][i - n] })
    }

    /// Index of the grid point closest to `t`.
    pub fn index_at(&self, t: f64) -> usize {
        let k = self.time.partition_point(|s| *s < t);
        if k == 0 {
            return 0;
        }
        if k == self.time.len() || (t - self.time[k - 1]) < (self.time[k] - t) {
            k - 1
        } else {
            k
        }
    }

    /// Grid points that left the linear region of the active mode.
    pub fn linear_region_departures(&self) -> usize {
        self.flags.iter().filter(|f| f.in_linear_region == Some(false)).count()
    }

    pub fn ellipsoid_departures(&self) -> usize {
        self.flags.iter().filter(|f| f.in_ellipsoid == Some(false)).count()
    }

    pub fn max_abs_state(&self) -> f64 {
        (0..self.len()).map(|k| self.x_cl(k).amax()).fold(0.0, f64::max)
    }

    /// `t,mode,xp1..,xk1..,u1..,satu1..,w1..,z1..` with one-based modes.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let dim = |v: &[Vector]| v.first().map_or(0, |x| x.len());
        let mut header = vec!["t".to_string(), "mode".to_string()];
        for (name, len) in [
            ("xp", dim(&self.xp)),
            ("xk", dim(&self.xk)),
            ("u", dim(&self.u)),
            ("satu", dim(&self.sat_u)),
            ("w", dim(&self.w)),
            ("z", dim(&self.z)),
        ] {
            header.extend((1..=len).map(|i| format!("{name}{i}")));
        }
        writeln!(out, "{}", header.join(","))?;
        for k in 0..self.len() {
            let mut row = vec![self.time[k].to_string(), (self.mode[k] + 1).to_string()];
            for v in [&self.xp[k], &self.xk[k], &self.u[k], &self.sat_u[k], &self.w[k], &self.z[k]] {
                row.extend(v.iter().map(|x| x.to_string()));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// `t,from,to,xk_before1..,xk_after1..` with one-based modes.
    pub fn write_events_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let n = self.xk.first().map_or(0, |x| x.len());
        let mut header = vec!["t".to_string(), "from".to_string(), "to".to_string()];
        header.extend((1..=n).map(|i| format!("xk_before{i}")));
        header.extend((1..=n).map(|i| format!("xk_after{i}")));
        writeln!(out, "{}", header.join(","))?;
        for e in &self.events {
            let mut row = vec![e.time.to_string(), (e.from + 1).to_string(), (e.to + 1).to_string()];
            row.extend(e.xk_before.iter().chain(&e.xk_after).map(|x| x.to_string()));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    pub step: f64,
    pub t_final: f64,
}

impl SimOptions {
    pub fn new(step: f64, t_final: f64) -> Self {
        SimOptions { step, t_final }
    }
}

/// Extent of the classical RK4 stability region along the negative real axis.
pub const RK4_REAL_STABILITY_LIMIT: f64 = 2.785;

/// `h · max |λ(A_cl,i)|` over all modes. Values above
/// [`RK4_REAL_STABILITY_LIMIT`] mean the fixed-step integration is unstable
/// on the fastest closed-loop mode.
pub fn step_stiffness(plant: &SwitchedPlant, controller: &HybridController, h: f64) -> Result<f64, SimError> {
    controller.check_compatible(plant)?;
    let mut worst: f64 = 0.0;
    for (k, p) in controller.modes.iter().zip(plant.modes()) {
        let cl = assemble_closed_loop(p, k)?;
        let rho = cl.a.complex_eigenvalues().iter().map(|e| e.norm()).fold(0.0, f64::max);
        worst = worst.max(h * rho);
    }
    Ok(worst)
}

/// Grid on `[0, t_final]` that contains every breakpoint, with steps ≤ `h`.
fn time_grid(breaks: &[f64], h: f64) -> Vec<f64> {
    let mut grid = vec![breaks[0]];
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let n = ((b - a) / h - 1e-9).ceil().max(1.0) as usize;
        let step = (b - a) / n as f64;
        grid.extend((1..n).map(|k| a + k as f64 * step));
        grid.push(b);
    }
    grid
}

struct ModeData {
    cl: ClosedLoopMode,
    input: InputLoop,
    h: Option<Matrix>,
    p: Option<Matrix>,
}

impl ModeData {
    /// Returns `(u, dz)` at state `x` under disturbance `w`.
    fn input(&self, x: &Vector, w: &Vector) -> Result<(Vector, Vector), SimError> {
        self.input.solve(&(&self.cl.c0 * x + &self.cl.d02 * w))
    }

    fn flow(&self, x: &Vector, w: &Vector) -> Result<Vector, SimError> {
        let (_, dz) = self.input(x, w)?;
        Ok(&self.cl.a * x + &self.cl.b0 * dz + &self.cl.b2 * w)
    }
}

/// Simulates the closed loop with classical RK4 between grid points and
/// applies controller resets at switching instants.
pub fn simulate(
    plant: &SwitchedPlant,
    controller: &HybridController,
    signal: &SwitchingSignal,
    disturbance: &Disturbance,
    x0: &Vector,
    options: &SimOptions,
) -> Result<SimulationTrace, SimError> {
    let d = plant.dims();
    let (h, t_final) = (options.step, options.t_final);
    if !(h > 0.0 && h.is_finite()) {
        return Err(SimError::InvalidOptions(format!("step must be positive, got {h}")));
    }
    if !(t_final > 0.0 && t_final <= signal.horizon()) {
        return Err(SimError::InvalidOptions(format!(
            "final time {t_final} must lie in (0, {}]",
            signal.horizon()
        )));
    }
    if x0.len() != 2 * d.n {
        return Err(SimError::InvalidOptions(format!(
            "initial state has length {}, closed loop has order {}",
            x0.len(),
            2 * d.n
        )));
    }
    if disturbance.dim != d.nw {
        return Err(SimError::Model(ModelError::DimensionMismatch {
            context: "disturbance".into(),
            expected: d.nw.to_string(),
            found: disturbance.dim.to_string(),
        }));
    }
    disturbance.validate()?;
    disturbance.check_covers(t_final)?;
    signal.check_modes(plant.n_modes())?;
    controller.check_compatible(plant)?;
    let u_bar = plant.u_bar().to_vec();

    let modes: Vec<ModeData> = controller
        .modes
        .iter()
        .zip(plant.modes())
        .map(|(k, p)| {
            let cl = assemble_closed_loop(p, k)?;
            let input = InputLoop::new(&cl.d00, &u_bar)?;
            Ok(ModeData {
                input,
                h: k.h(),
                p: k.p.clone(),
                cl,
            })
        })
        .collect::<Result<_, SimError>>()?;

    let switches: Vec<(f64, usize, usize)> = signal
        .switches()
        .into_iter()
        .filter(|(t, _, _)| *t < t_final)
        .collect();
    for &(_, i, j) in &switches {
        if controller.reset(i, j).is_none() {
            return Err(SimError::MissingReset { from: i + 1, to: j + 1 });
        }
    }
    let mut breaks = vec![0.0, t_final];
    breaks.extend(switches.iter().map(|s| s.0));
    breaks.extend(disturbance.breakpoints().into_iter().filter(|t| *t > 0.0 && *t < t_final));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let grid = time_grid(&breaks, h);

    let cap = grid.len();
    let mut trace = SimulationTrace {
        time: Vec::with_capacity(cap),
        mode: Vec::with_capacity(cap),
        xp: Vec::with_capacity(cap),
        xk: Vec::with_capacity(cap),
        u: Vec::with_capacity(cap),
        sat_u: Vec::with_capacity(cap),
        dz_u: Vec::with_capacity(cap),
        w: Vec::with_capacity(cap),
        z: Vec::with_capacity(cap),
        events: Vec::new(),
        flags: Vec::with_capacity(cap),
        u_bar: u_bar.clone(),
    };
    let s2 = controller.s * controller.s;
    let record = |trace: &mut SimulationTrace, t: f64, mode: usize, x: &Vector| -> Result<(), SimError> {
        let md = &modes[mode];
        let w = disturbance.value_at(t);
        let (u, dz) = md.input(x, &w)?;
        let z = &md.cl.c2 * x + &md.cl.d20 * &dz + &md.cl.d22 * &w;
        let sat_u = &u - &dz;
        let flags = RegionFlags {
            in_linear_region: md.h.as_ref().map(|hm| {
                let hx = hm * x;
                hx.iter().zip(&u_bar).all(|(v, b)| v.abs() <= *b)
            }),
            in_ellipsoid: md.p.as_ref().map(|p| x.dot(&(p * x)) <= s2),
        };
        trace.time.push(t);
        trace.mode.push(mode);
        trace.xp.push(x.rows(0, d.n).into_owned());
        trace.xk.push(x.rows(d.n, d.n).into_owned());
        trace.u.push(u);
        trace.sat_u.push(sat_u);
        trace.dz_u.push(dz);
        trace.w.push(w);
        trace.z.push(z);
        trace.flags.push(flags);
        Ok(())
    };

    let mut x = x0.clone();
    let mut mode = signal.mode_at(0.0);
    let mut next_switch = 0;
    record(&mut trace, 0.0, mode, &x)?;
    for win in grid.windows(2) {
        let (t0, t1) = (win[0], win[1]);
        let dt = t1 - t0;
        let md = &modes[mode];
        let tm = t0 + 0.5 * dt;
        let w0 = disturbance.value_at(t0);
        let wm = disturbance.value_at(tm);
        let w1 = disturbance.value_before(t1);
        let k1 = md.flow(&x, &w0)?;
        let k2 = md.flow(&(&x + &k1 * (0.5 * dt)), &wm)?;
        let k3 = md.flow(&(&x + &k2 * (0.5 * dt)), &wm)?;
        let k4 = md.flow(&(&x + &k3 * dt), &w1)?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState { time: t1 });
        }
        if next_switch < switches.len() && switches[next_switch].0 == t1 {
            let (_, from, to) = switches[next_switch];
            let delta = controller.reset(from, to).expect("checked above");
            let before = x.rows(d.n, d.n).into_owned();
            let after = delta * &before;
            x.rows_mut(d.n, d.n).copy_from(&after);
            trace.events.push(SwitchEvent {
                time: t1,
                from,
                to,
                xk_before: before.iter().copied().collect(),
                xk_after: after.iter().copied().collect(),
            });
            mode = to;
            next_switch += 1;
        }
        record(&mut trace, t1, mode, &x)?;
    }
    Ok(trace)
}

/// `√(∫ e^{−λt} zᵀz dt / ∫ wᵀw dt)` by the trapezoid rule on the trace grid.
pub fn weighted_l2_ratio(trace: &SimulationTrace, lambda: f64) -> Result<f64, SimError> {
    let trapz = |f: &dyn Fn(usize) -> f64| -> f64 {
        trace
            .time
            .windows(2)
            .enumerate()
            .map(|(k, t)| 0.5 * (t[1] - t[0]) * (f(k) + f(k + 1)))
            .sum()
    };
    let w_energy = trapz(&|k| trace.w[k].norm_squared());
    if !(w_energy > 0.0) {
        return Err(SimError::ZeroDisturbance);
    }
    let z_energy = trapz(&|k| (-lambda * trace.time[k]).exp() * trace.z[k].norm_squared());
    Ok((z_energy / w_energy).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdtReport {
    pub switch_count: usize,
    /// Horizon divided by the switch count (∞ without switches).
    pub average_dwell: f64,
    /// Smallest chatter bound `N₀` for the given `τₐ`.
    pub chatter_bound: Option<f64>,
    pub tau_a: Option<f64>,
    pub compliant: Option<bool>,
}

/// Switch count in the closed window `[t, big_t]`.
fn switches_in(times: &[f64], t: f64, big_t: f64) -> usize {
    times.iter().filter(|s| **s >= t && **s <= big_t).count()
}

/// `max_{t ≤ T} N_σ(T, t) − (T − t)/τₐ` over window endpoints drawn from
/// `{0, switch instants, horizon}`.
pub fn chatter_bound(signal: &SwitchingSignal, tau_a: f64) -> f64 {
    let times: Vec<f64> = signal.switches().iter().map(|s| s.0).collect();
    let mut points = vec![0.0];
    points.extend(&times);
    points.push(signal.horizon());
    let mut best = f64::NEG_INFINITY;
    for (a, &t) in points.iter().enumerate() {
        for &big_t in &points[a..] {
            let v = switches_in(&times, t, big_t) as f64 - (big_t - t) / tau_a;
            best = best.max(v);
        }
    }
    best
}

pub fn adt_stats(signal: &SwitchingSignal, tau_a: Option<f64>) -> AdtReport {
    let count = signal.switches().len();
    let average = if count == 0 {
        f64::INFINITY
    } else {
        signal.horizon() / count as f64
    };
    let bound = tau_a.filter(|t| *t > 0.0).map(|t| chatter_bound(signal, t));
    AdtReport {
        switch_count: count,
        average_dwell: average,
        chatter_bound: bound,
        tau_a,
        compliant: tau_a.map(|_| bound.is_some_and(f64::is_finite)),
    }
}

/// Cyclic schedule: `mode_pre` on `[0, t_pre)`, then `first`/`second`
/// alternating every `period` until `t_tail`, then `tail_mode`. Modes are
/// zero-based; equal neighbours are merged.
#[allow(clippy::too_many_arguments)]
pub fn cyclic_signal(
    t_pre: f64,
    mode_pre: usize,
    period: f64,
    first: usize,
    second: usize,
    t_tail: f64,
    tail_mode: usize,
    t_final: f64,
) -> Result<SwitchingSignal, ModelError> {
    if !(t_pre > 0.0 && t_pre < t_tail && t_tail < t_final) {
        return Err(ModelError::InvalidTimes(format!(
            "need 0 < t_pre < t_tail < t_final, got {t_pre}, {t_tail}, {t_final}"
        )));
    }
    if !(period > 0.0 && period.is_finite()) {
        return Err(ModelError::InvalidTimes(format!("period must be positive, got {period}")));
    }
    let mut raw = vec![Segment { start: 0.0, mode: mode_pre }];
    let mut k = 0usize;
    loop {
        let start = t_pre + k as f64 * period;
        if start >= t_tail {
            break;
        }
        raw.push(Segment {
            start,
            mode: if k % 2 == 0 { first } else { second },
        });
        k += 1;
    }
    raw.push(Segment {
        start: t_tail,
        mode: tail_mode,
    });
    let mut segments: Vec<Segment> = Vec::with_capacity(raw.len());
    for s in raw {
        if segments.last().is_some_and(|l| l.mode == s.mode) {
            continue;
        }
        segments.push(s);
    }
    SwitchingSignal::new(segments, t_final)
}
