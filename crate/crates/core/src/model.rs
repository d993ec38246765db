//! Plants, synthesis parameters, switching signals and disturbances.
//!
//! Mode indices are zero-based in memory and one-based in every file format
//! and user-facing message.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Assumption, ModelError};
use crate::linalg::{self, Matrix, Vector};

/// One subsystem of the switched plant.
///
/// ```text
/// ẋp = A xp + B1 w + B2 sat(u)
/// z  = C1 xp + D11 w + D12 sat(u)
/// y  = C2 xp + D21 w + D22 sat(u)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantMode {
    #[serde(rename = "A_p", with = "crate::matrix_serde")]
    pub a: Matrix,
    #[serde(rename = "B_p1", with = "crate::matrix_serde")]
    pub b1: Matrix,
    #[serde(rename = "B_p2", with = "crate::matrix_serde")]
    pub b2: Matrix,
    #[serde(rename = "C_p1", with = "crate::matrix_serde")]
    pub c1: Matrix,
    #[serde(rename = "D_p11", with = "crate::matrix_serde")]
    pub d11: Matrix,
    #[serde(rename = "D_p12", with = "crate::matrix_serde")]
    pub d12: Matrix,
    #[serde(rename = "C_p2", with = "crate::matrix_serde")]
    pub c2: Matrix,
    #[serde(rename = "D_p21", with = "crate::matrix_serde")]
    pub d21: Matrix,
    #[serde(rename = "D_p22", with = "crate::matrix_serde")]
    pub d22: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub nu: usize,
    pub nw: usize,
    pub nz: usize,
    pub ny: usize,
}

impl PlantMode {
    pub fn dims(&self) -> Dims {
        Dims {
            n: self.a.nrows(),
            nu: self.b2.ncols(),
            nw: self.b1.ncols(),
            nz: self.c1.nrows(),
            ny: self.c2.nrows(),
        }
    }

    fn check_shapes(&self, mode: usize) -> Result<Dims, ModelError> {
        let d = self.dims();
        let expect = [
            ("A_p", &self.a, d.n, d.n),
            ("B_p1", &self.b1, d.n, d.nw),
            ("B_p2", &self.b2, d.n, d.nu),
            ("C_p1", &self.c1, d.nz, d.n),
            ("D_p11", &self.d11, d.nz, d.nw),
            ("D_p12", &self.d12, d.nz, d.nu),
            ("C_p2", &self.c2, d.ny, d.n),
            ("D_p21", &self.d21, d.ny, d.nw),
            ("D_p22", &self.d22, d.ny, d.nu),
        ];
        for (name, m, r, c) in expect {
            if m.shape() != (r, c) {
                return Err(ModelError::DimensionMismatch {
                    context: format!("mode {} {name}", mode + 1),
                    expected: format!("{r}x{c}"),
                    found: format!("{}x{}", m.nrows(), m.ncols()),
                });
            }
            linalg::ensure_finite(m)?;
        }
        Ok(d)
    }

    pub fn max_abs_entry(&self) -> f64 {
        [
            &self.a, &self.b1, &self.b2, &self.c1, &self.d11, &self.d12, &self.c2, &self.d21,
            &self.d22,
        ]
        .iter()
        .fold(0.0_f64, |acc, m| acc.max(linalg::max_abs(m)))
    }

    /// Every matrix multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> PlantMode {
        PlantMode {
            a: &self.a * factor,
            b1: &self.b1 * factor,
            b2: &self.b2 * factor,
            c1: &self.c1 * factor,
            d11: &self.d11 * factor,
            d12: &self.d12 * factor,
            c2: &self.c2 * factor,
            d21: &self.d21 * factor,
            d22: &self.d22 * factor,
        }
    }
}

/// The switched plant: modes sharing one set of dimensions plus the saturation limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PlantFile", into = "PlantFile")]
pub struct SwitchedPlant {
    modes: Vec<PlantMode>,
    u_bar: Vec<f64>,
    dims: Dims,
}

#[derive(Serialize, Deserialize)]
struct PlantFile {
    modes: Vec<PlantModeFile>,
    u_bar: Vec<f64>,
}

/// File form of a mode; `D_p22` may be omitted and then defaults to zero.
#[derive(Serialize, Deserialize)]
struct PlantModeFile {
    #[serde(rename = "A_p", with = "crate::matrix_serde")]
    a: Matrix,
    #[serde(rename = "B_p1", with = "crate::matrix_serde")]
    b1: Matrix,
    #[serde(rename = "B_p2", with = "crate::matrix_serde")]
    b2: Matrix,
    #[serde(rename = "C_p1", with = "crate::matrix_serde")]
    c1: Matrix,
    #[serde(rename = "D_p11", with = "crate::matrix_serde")]
    d11: Matrix,
    #[serde(rename = "D_p12", with = "crate::matrix_serde")]
    d12: Matrix,
    #[serde(rename = "C_p2", with = "crate::matrix_serde")]
    c2: Matrix,
    #[serde(rename = "D_p21", with = "crate::matrix_serde")]
    d21: Matrix,
    #[serde(
        rename = "D_p22",
        default,
        with = "crate::matrix_serde::option",
        skip_serializing_if = "Option::is_none"
    )]
    d22: Option<Matrix>,
}

impl TryFrom<PlantFile> for SwitchedPlant {
    type Error = ModelError;

    fn try_from(f: PlantFile) -> Result<Self, Self::Error> {
        let modes = f
            .modes
            .into_iter()
            .map(|m| {
                let d22 = m
                    .d22
                    .unwrap_or_else(|| Matrix::zeros(m.c2.nrows(), m.b2.ncols()));
                PlantMode {
                    a: m.a,
                    b1: m.b1,
                    b2: m.b2,
                    c1: m.c1,
                    d11: m.d11,
                    d12: m.d12,
                    c2: m.c2,
                    d21: m.d21,
                    d22,
                }
            })
            .collect();
        SwitchedPlant::new(modes, f.u_bar)
    }
}

impl From<SwitchedPlant> for PlantFile {
    fn from(p: SwitchedPlant) -> Self {
        PlantFile {
            modes: p
                .modes
                .into_iter()
                .map(|m| PlantModeFile {
                    a: m.a,
                    b1: m.b1,
                    b2: m.b2,
                    c1: m.c1,
                    d11: m.d11,
                    d12: m.d12,
                    c2: m.c2,
                    d21: m.d21,
                    d22: Some(m.d22),
                })
                .collect(),
            u_bar: p.u_bar,
        }
    }
}

impl SwitchedPlant {
    /// Checks shapes, shared dimensions and saturation limits. Assumption A2
    /// is checked by [`validate_plant`], not here.
    pub fn new(modes: Vec<PlantMode>, u_bar: Vec<f64>) -> Result<Self, ModelError> {
        let first = modes.first().ok_or_else(|| ModelError::InvalidValue {
            field: "modes".into(),
            reason: "at least one mode is required".into(),
        })?;
        let dims = first.check_shapes(0)?;
        for (i, m) in modes.iter().enumerate().skip(1) {
            let d = m.check_shapes(i)?;
            if d != dims {
                return Err(ModelError::DimensionMismatch {
                    context: format!("mode {} dimensions", i + 1),
                    expected: format!("{dims:?}"),
                    found: format!("{d:?}"),
                });
            }
        }
        if u_bar.len() != dims.nu {
            return Err(ModelError::DimensionMismatch {
                context: "u_bar".into(),
                expected: dims.nu.to_string(),
                found: u_bar.len().to_string(),
            });
        }
        if let Some(v) = u_bar.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(ModelError::InvalidValue {
                field: "u_bar".into(),
                reason: format!("saturation limits must be positive, found {v}"),
            });
        }
        Ok(SwitchedPlant { modes, u_bar, dims })
    }

    pub fn modes(&self) -> &[PlantMode] {
        &self.modes
    }

    pub fn mode(&self, i: usize) -> &PlantMode {
        &self.modes[i]
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn u_bar(&self) -> &[f64] {
        &self.u_bar
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.modes
            .iter()
            .fold(0.0_f64, |acc, m| acc.max(m.max_abs_entry()))
    }

    /// Same plant with the modes reordered: mode `k` of the result is mode `perm[k]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> SwitchedPlant {
        SwitchedPlant {
            modes: perm.iter().map(|&k| self.modes[k].clone()).collect(),
            u_bar: self.u_bar.clone(),
            dims: self.dims,
        }
    }

    pub fn with_u_bar(&self, u_bar: Vec<f64>) -> Result<SwitchedPlant, ModelError> {
        SwitchedPlant::new(self.modes.clone(), u_bar)
    }

    pub fn scaled(&self, factor: f64) -> SwitchedPlant {
        SwitchedPlant {
            modes: self.modes.iter().map(|m| m.scaled(factor)).collect(),
            u_bar: self.u_bar.clone(),
            dims: self.dims,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModeVerdict {
    pub stabilizable: bool,
    pub detectable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub modes: Vec<ModeVerdict>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.modes.iter().all(|m| m.stabilizable && m.detectable)
    }
}

/// PBH verdicts for every mode, without failing on A1.
pub fn pbh_report(plant: &SwitchedPlant) -> ValidationReport {
    let modes = plant
        .modes()
        .iter()
        .map(|m| {
            let tol = 1e-9 * linalg::spectral_norm(&m.a);
            let unstable: Vec<Complex64> = m
                .a
                .complex_eigenvalues()
                .iter()
                .copied()
                .filter(|l| l.re >= -tol)
                .collect();
            let n = m.a.nrows();
            let a_t = m.a.transpose();
            let c_t = m.c2.transpose();
            let stabilizable = unstable
                .iter()
                .all(|&l| pbh_rank(&m.a, &m.b2, l, tol) == n);
            let detectable = unstable.iter().all(|&l| pbh_rank(&a_t, &c_t, l, tol) == n);
            ModeVerdict {
                stabilizable,
                detectable,
            }
        })
        .collect();
    ValidationReport { modes }
}

/// rank [λI − A, B] with singular values counted above `tol`.
fn pbh_rank(a: &Matrix, b: &Matrix, lambda: Complex64, tol: f64) -> usize {
    let n = a.nrows();
    let cols = n + b.ncols();
    let m = DMatrix::<Complex64>::from_fn(n, cols, |i, j| {
        if j < n {
            let diag = if i == j { lambda } else { Complex64::new(0.0, 0.0) };
            diag - a[(i, j)]
        } else {
            Complex64::new(b[(i, j - n)], 0.0)
        }
    });
    m.svd(false, false)
        .singular_values
        .iter()
        .filter(|s| **s > tol)
        .count()
}

/// Checks A2 (exact zero `D_p22`) and the PBH form of A1 for every mode.
pub fn validate_plant(plant: &SwitchedPlant) -> Result<ValidationReport, ModelError> {
    for (i, m) in plant.modes().iter().enumerate() {
        if m.d22.iter().any(|v| *v != 0.0) {
            return Err(ModelError::AssumptionViolated {
                assumption: Assumption::A2,
                mode: i + 1,
                detail: "D_p22 must be exactly zero".into(),
            });
        }
    }
    let report = pbh_report(plant);
    for (i, v) in report.modes.iter().enumerate() {
        if !(v.stabilizable && v.detectable) {
            let what = match (v.stabilizable, v.detectable) {
                (false, false) => "neither stabilizable nor detectable",
                (false, true) => "not stabilizable",
                _ => "not detectable",
            };
            return Err(ModelError::AssumptionViolated {
                assumption: Assumption::A1,
                mode: i + 1,
                detail: format!("(A_p, B_p2, C_p2) is {what}"),
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaMode {
    Minimize,
    Fixed(f64),
}

/// Dwell-time parameters, disturbance level and numerical margins for one synthesis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecFile", into = "SpecFile")]
pub struct SynthesisSpec {
    pub lambda0: f64,
    pub mu: f64,
    pub s: f64,
    pub gamma: GammaMode,
    /// Margin applied to the strict inequalities.
    pub epsilon: f64,
    /// Slack tolerated on the non-strict inequalities.
    pub delta: f64,
    pub kappa: Option<f64>,
}

/// File form; omitted margins are filled from the plant by [`SpecFile::resolve`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SpecFile {
    pub lambda0: f64,
    pub mu: f64,
    pub s: f64,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub kappa: Option<f64>,
}

pub const DEFAULT_DELTA: f64 = 1e-8;

/// `1e-6 · (1 + max |plant entry|)`.
pub fn default_epsilon(plant: &SwitchedPlant) -> f64 {
    1e-6 * (1.0 + plant.max_abs_entry())
}

impl SpecFile {
    pub fn resolve(&self, plant: &SwitchedPlant) -> Result<SynthesisSpec, ModelError> {
        let spec = SynthesisSpec {
            lambda0: self.lambda0,
            mu: self.mu,
            s: self.s,
            gamma: self.gamma.map_or(GammaMode::Minimize, GammaMode::Fixed),
            epsilon: self.epsilon.unwrap_or_else(|| default_epsilon(plant)),
            delta: self.delta.unwrap_or(DEFAULT_DELTA),
            kappa: self.kappa,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<SpecFile> for SynthesisSpec {
    type Error = ModelError;

    fn try_from(f: SpecFile) -> Result<Self, Self::Error> {
        let spec = SynthesisSpec {
            lambda0: f.lambda0,
            mu: f.mu,
            s: f.s,
            gamma: f.gamma.map_or(GammaMode::Minimize, GammaMode::Fixed),
            epsilon: f.epsilon.unwrap_or(1e-6),
            delta: f.delta.unwrap_or(DEFAULT_DELTA),
            kappa: f.kappa,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<SynthesisSpec> for SpecFile {
    fn from(s: SynthesisSpec) -> Self {
        SpecFile {
            lambda0: s.lambda0,
            mu: s.mu,
            s: s.s,
            gamma: match s.gamma {
                GammaMode::Minimize => None,
                GammaMode::Fixed(g) => Some(g),
            },
            epsilon: Some(s.epsilon),
            delta: Some(s.delta),
            kappa: s.kappa,
        }
    }
}

impl SynthesisSpec {
    /// Minimize-γ spec with the default margins for `plant`.
    pub fn minimize(plant: &SwitchedPlant, lambda0: f64, mu: f64, s: f64) -> Result<Self, ModelError> {
        SpecFile {
            lambda0,
            mu,
            s,
            ..SpecFile::default()
        }
        .resolve(plant)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field: &str, reason: &str| {
            Err(ModelError::InvalidValue {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if !(self.lambda0 > 0.0 && self.lambda0.is_finite()) {
            return bad("lambda0", "must be positive");
        }
        if !(self.mu > 1.0 && self.mu.is_finite()) {
            return bad("mu", "must exceed 1");
        }
        if !(self.s > 0.0 && self.s.is_finite()) {
            return bad("s", "must be positive");
        }
        if let GammaMode::Fixed(g) = self.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return bad("gamma", "must be positive");
            }
        }
        if !(self.delta > 0.0 && self.epsilon > self.delta && self.epsilon.is_finite()) {
            return bad("epsilon/delta", "require epsilon > delta > 0");
        }
        if let Some(k) = self.kappa {
            if !(k > 0.0 && k.is_finite()) {
                return bad("kappa", "must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    /// Zero-based mode index.
    pub mode: usize,
}

/// Piecewise-constant mode schedule on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SignalFile", into = "SignalFile")]
pub struct SwitchingSignal {
    segments: Vec<Segment>,
    horizon: f64,
}

#[derive(Serialize, Deserialize)]
struct SignalFile {
    segments: Vec<(f64, usize)>,
    horizon: f64,
}

impl TryFrom<SignalFile> for SwitchingSignal {
    type Error = ModelError;

    fn try_from(f: SignalFile) -> Result<Self, Self::Error> {
        let segments = f
            .segments
            .into_iter()
            .map(|(start, mode)| {
                if mode == 0 {
                    Err(ModelError::InvalidValue {
                        field: "segments".into(),
                        reason: "mode indices are one-based".into(),
                    })
                } else {
                    Ok(Segment {
                        start,
                        mode: mode - 1,
                    })
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        SwitchingSignal::new(segments, f.horizon)
    }
}

impl From<SwitchingSignal> for SignalFile {
    fn from(s: SwitchingSignal) -> Self {
        SignalFile {
            segments: s.segments.iter().map(|g| (g.start, g.mode + 1)).collect(),
            horizon: s.horizon,
        }
    }
}

impl SwitchingSignal {
    pub fn new(segments: Vec<Segment>, horizon: f64) -> Result<Self, ModelError> {
        let first = segments
            .first()
            .ok_or_else(|| ModelError::InvalidTimes("signal needs at least one segment".into()))?;
        if first.start != 0.0 {
            return Err(ModelError::InvalidTimes(format!(
                "first segment must start at 0, found {}",
                first.start
            )));
        }
        for w in segments.windows(2) {
            if !(w[1].start > w[0].start) {
                return Err(ModelError::InvalidTimes(format!(
                    "segment starts must increase strictly ({} then {})",
                    w[0].start, w[1].start
                )));
            }
            if w[0].mode == w[1].mode {
                return Err(ModelError::InvalidTimes(format!(
                    "consecutive segments at {} and {} share mode {}",
                    w[0].start,
                    w[1].start,
                    w[0].mode + 1
                )));
            }
        }
        let last = segments.last().expect("non-empty").start;
        if !(horizon.is_finite() && horizon > last) {
            return Err(ModelError::InvalidTimes(format!(
                "horizon {horizon} must exceed the last segment start {last}"
            )));
        }
        Ok(SwitchingSignal { segments, horizon })
    }

    pub fn constant(mode: usize, horizon: f64) -> Result<Self, ModelError> {
        Self::new(vec![Segment { start: 0.0, mode }], horizon)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Fails when a mode index is outside the plant.
    pub fn check_modes(&self, n_modes: usize) -> Result<(), ModelError> {
        match self.segments.iter().find(|s| s.mode >= n_modes) {
            Some(s) => Err(ModelError::InvalidValue {
                field: "segments".into(),
                reason: format!("mode {} exceeds the plant's {} modes", s.mode + 1, n_modes),
            }),
            None => Ok(()),
        }
    }

    /// Active mode at `t` (segments are closed on the left).
    pub fn mode_at(&self, t: f64) -> usize {
        self.segments
            .iter()
            .rev()
            .find(|s| s.start <= t)
            .unwrap_or(&self.segments[0])
            .mode
    }

    /// `(time, from, to)` for every transition.
    pub fn switches(&self) -> Vec<(f64, usize, usize)> {
        self.segments
            .windows(2)
            .map(|w| (w[1].start, w[0].mode, w[1].mode))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DisturbanceKind {
    Zero,
    /// Constant vector of Euclidean norm `magnitude` on `[t_on, t_off)`.
    Pulse { magnitude: f64, t_on: f64, t_off: f64 },
    /// Linearly interpolated samples.
    Samples { times: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub kind: DisturbanceKind,
    pub dim: usize,
}

impl Disturbance {
    pub fn zero(dim: usize) -> Self {
        Disturbance {
            kind: DisturbanceKind::Zero,
            dim,
        }
    }

    pub fn pulse(dim: usize, magnitude: f64, t_on: f64, t_off: f64) -> Result<Self, ModelError> {
        let d = Disturbance {
            kind: DisturbanceKind::Pulse {
                magnitude,
                t_on,
                t_off,
            },
            dim,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn samples(dim: usize, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        let d = Disturbance {
            kind: DisturbanceKind::Samples { times, values },
            dim,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match &self.kind {
            DisturbanceKind::Zero => Ok(()),
            DisturbanceKind::Pulse {
                magnitude,
                t_on,
                t_off,
            } => {
                if !(t_on < t_off) || !magnitude.is_finite() || *t_on < 0.0 {
                    return Err(ModelError::InvalidTimes(format!(
                        "pulse needs 0 <= t_on < t_off and a finite magnitude (t_on {t_on}, t_off {t_off})"
                    )));
                }
                Ok(())
            }
            DisturbanceKind::Samples { times, values } => {
                if times.len() < 2 || times.len() != values.len() {
                    return Err(ModelError::InvalidValue {
                        field: "samples".into(),
                        reason: "need at least two samples with one value vector per time".into(),
                    });
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(ModelError::InvalidTimes("sample times must increase".into()));
                }
                if let Some(v) = values.iter().find(|v| v.len() != self.dim) {
                    return Err(ModelError::DimensionMismatch {
                        context: "disturbance sample".into(),
                        expected: self.dim.to_string(),
                        found: v.len().to_string(),
                    });
                }
                Ok(())
            }
        }
    }

    /// Fails when sampled data does not cover `[0, t_final]`.
    pub fn check_covers(&self, t_final: f64) -> Result<(), ModelError> {
        if let DisturbanceKind::Samples { times, .. } = &self.kind {
            let (lo, hi) = (times[0], times[times.len() - 1]);
            if lo > 0.0 || hi < t_final {
                return Err(ModelError::InvalidTimes(format!(
                    "samples cover [{lo}, {hi}] but the run needs [0, {t_final}]"
                )));
            }
        }
        Ok(())
    }

    /// Right-continuous value at `t`.
    pub fn value_at(&self, t: f64) -> Vector {
        match &self.kind {
            DisturbanceKind::Zero => Vector::zeros(self.dim),
            DisturbanceKind::Pulse {
                magnitude,
                t_on,
                t_off,
            } => {
                if t >= *t_on && t < *t_off {
                    Vector::from_element(self.dim, magnitude / (self.dim as f64).sqrt())
                } else {
                    Vector::zeros(self.dim)
                }
            }
            DisturbanceKind::Samples { times, values } => {
                let k = times.partition_point(|s| *s <= t);
                if k == 0 {
                    return Vector::from_column_slice(&values[0]);
                }
                if k == times.len() {
                    return Vector::from_column_slice(&values[k - 1]);
                }
                let (t0, t1) = (times[k - 1], times[k]);
                let a = (t - t0) / (t1 - t0);
                Vector::from_fn(self.dim, |i, _| (1.0 - a) * values[k - 1][i] + a * values[k][i])
            }
        }
    }

    /// Left limit at `t`.
    pub fn value_before(&self, t: f64) -> Vector {
        match &self.kind {
            DisturbanceKind::Pulse {
                magnitude,
                t_on,
                t_off,
            } if t > *t_on && t <= *t_off => Vector::from_element(self.dim, magnitude / (self.dim as f64).sqrt()),
            DisturbanceKind::Pulse { .. } => Vector::zeros(self.dim),
            _ => self.value_at(t),
        }
    }

    /// Times at which the disturbance is discontinuous.
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.kind {
            DisturbanceKind::Pulse { t_on, t_off, .. } => vec![*t_on, *t_off],
            _ => Vec::new(),
        }
    }

    /// `∫ wᵀw dt`: closed form for a pulse, trapezoid rule for samples.
    pub fn energy(&self) -> f64 {
        match &self.kind {
            DisturbanceKind::Zero => 0.0,
            DisturbanceKind::Pulse {
                magnitude,
                t_on,
                t_off,
            } => magnitude * magnitude * (t_off - t_on),
            DisturbanceKind::Samples { times, values } => times
                .windows(2)
                .zip(values.windows(2))
                .map(|(t, v)| {
                    let e0: f64 = v[0].iter().map(|x| x * x).sum();
                    let e1: f64 = v[1].iter().map(|x| x * x).sum();
                    0.5 * (t[1] - t[0]) * (e0 + e1)
                })
                .sum(),
        }
    }

    /// Membership in the energy-bounded class with level `s`.
    pub fn within_energy_level(&self, s: f64) -> bool {
        self.energy() <= s * s
    }
}
