//! Decision-variable registry and affine symmetric-block constraints for the
//! hybrid saturated synthesis conditions.
//!
//! Every constraint is stored in standard form `F₀ + Σₖ xₖ Fₖ` over a flat
//! vector of scalar coordinates. Symmetric variables contribute one
//! coordinate per upper-triangular entry, diagonal variables one per
//! diagonal entry, so each free scalar appears exactly once.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::LmiError;
use crate::linalg::{self, Matrix};
use crate::model::{validate_plant, Dims, GammaMode, PlantMode, SwitchedPlant, SynthesisSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum VarKind {
    R,
    S,
    U,
    Ahat,
    Bhat1,
    Bhat2,
    Chat1,
    Dhat11,
    Dhat12,
    Hhat1,
    Hhat2,
}

impl VarKind {
    pub const ALL: [VarKind; 11] = [
        VarKind::R,
        VarKind::S,
        VarKind::U,
        VarKind::Ahat,
        VarKind::Bhat1,
        VarKind::Bhat2,
        VarKind::Chat1,
        VarKind::Dhat11,
        VarKind::Dhat12,
        VarKind::Hhat1,
        VarKind::Hhat2,
    ];

    fn shape(self, d: &Dims) -> (usize, usize, Structure) {
        match self {
            VarKind::R | VarKind::S => (d.n, d.n, Structure::Symmetric),
            VarKind::U => (d.nu, d.nu, Structure::Diagonal),
            VarKind::Ahat => (d.n, d.n, Structure::Full),
            VarKind::Bhat1 => (d.n, d.ny, Structure::Full),
            VarKind::Bhat2 => (d.n, d.nu, Structure::Full),
            VarKind::Chat1 => (d.nu, d.n, Structure::Full),
            VarKind::Dhat11 => (d.nu, d.ny, Structure::Full),
            VarKind::Dhat12 => (d.nu, d.nu, Structure::Full),
            VarKind::Hhat1 | VarKind::Hhat2 => (d.nu, d.n, Structure::Full),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum VarKey {
    Mode(VarKind, usize),
    /// Hatted reset variable for the switch `from -> to`.
    DeltaHat(usize, usize),
    /// `t = γ²`.
    GammaSq,
    /// Generic scalar, used by hand-built programs.
    Free(usize),
}

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarKey::Mode(k, i) => write!(f, "{k:?}[{}]", i + 1),
            VarKey::DeltaHat(i, j) => write!(f, "DeltaHat[{}->{}]", i + 1, j + 1),
            VarKey::GammaSq => f.write_str("t"),
            VarKey::Free(k) => write!(f, "x[{}]", k + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Structure {
    Full,
    Symmetric,
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarBlock {
    pub key: VarKey,
    pub rows: usize,
    pub cols: usize,
    pub structure: Structure,
    pub offset: usize,
    pub len: usize,
}

impl VarBlock {
    fn new(key: VarKey, rows: usize, cols: usize, structure: Structure, offset: usize) -> Self {
        let len = match structure {
            Structure::Full => rows * cols,
            Structure::Symmetric => rows * (rows + 1) / 2,
            Structure::Diagonal => rows,
        };
        VarBlock {
            key,
            rows,
            cols,
            structure,
            offset,
            len,
        }
    }

    /// Local coordinate of entry `(r, c)`, if that entry is free.
    fn local(&self, r: usize, c: usize) -> Option<usize> {
        if r >= self.rows || c >= self.cols {
            return None;
        }
        match self.structure {
            Structure::Full => Some(r * self.cols + c),
            Structure::Symmetric => {
                let (a, b) = if r <= c { (r, c) } else { (c, r) };
                // Upper triangle, row-major.
                Some(a * self.rows - a * (a + 1) / 2 + b)
            }
            Structure::Diagonal => (r == c).then_some(r),
        }
    }

    /// Entries `(r, c)` that a coordinate drives, with unit coefficient each.
    fn entries(&self, local: usize) -> Vec<(usize, usize)> {
        match self.structure {
            Structure::Full => vec![(local / self.cols, local % self.cols)],
            Structure::Diagonal => vec![(local, local)],
            Structure::Symmetric => {
                let mut k = local;
                let mut a = 0;
                while k >= self.rows - a {
                    k -= self.rows - a;
                    a += 1;
                }
                let b = a + k;
                if a == b {
                    vec![(a, a)]
                } else {
                    vec![(a, b), (b, a)]
                }
            }
        }
    }
}

/// Flat index map from matrix variables to scalar coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableRegistry {
    blocks: Vec<VarBlock>,
    #[serde(skip)]
    lookup: BTreeMap<VarKey, usize>,
    len: usize,
}

impl VariableRegistry {
    pub fn new(dims: &Dims, n_modes: usize, pairs: &[(usize, usize)], with_gamma: bool) -> Self {
        let mut reg = VariableRegistry {
            blocks: Vec::new(),
            lookup: BTreeMap::new(),
            len: 0,
        };
        for i in 0..n_modes {
            for kind in VarKind::ALL {
                let (r, c, s) = kind.shape(dims);
                reg.push(VarKey::Mode(kind, i), r, c, s);
            }
        }
        for &(i, j) in pairs {
            reg.push(VarKey::DeltaHat(i, j), dims.n, dims.n, Structure::Full);
        }
        if with_gamma {
            reg.push(VarKey::GammaSq, 1, 1, Structure::Full);
        }
        reg
    }

    /// `n` free scalars, optionally followed by `t`.
    pub fn scalars(n: usize, with_gamma: bool) -> Self {
        let mut reg = VariableRegistry {
            blocks: Vec::new(),
            lookup: BTreeMap::new(),
            len: 0,
        };
        for k in 0..n {
            reg.push(VarKey::Free(k), 1, 1, Structure::Full);
        }
        if with_gamma {
            reg.push(VarKey::GammaSq, 1, 1, Structure::Full);
        }
        reg
    }

    fn push(&mut self, key: VarKey, rows: usize, cols: usize, structure: Structure) {
        let block = VarBlock::new(key, rows, cols, structure, self.len);
        self.len += block.len;
        self.lookup.insert(key, self.blocks.len());
        self.blocks.push(block);
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[VarBlock] {
        &self.blocks
    }

    pub fn block(&self, key: VarKey) -> Result<&VarBlock, LmiError> {
        self.lookup
            .get(&key)
            .map(|&k| &self.blocks[k])
            .ok_or_else(|| LmiError::UnknownVariable(key.to_string()))
    }

    pub fn contains(&self, key: VarKey) -> bool {
        self.lookup.contains_key(&key)
    }

    /// Global coordinate of entry `(r, c)` of `key`; `None` for structural zeros.
    pub fn coord(&self, key: VarKey, r: usize, c: usize) -> Option<usize> {
        let b = self.block(key).ok()?;
        b.local(r, c).map(|l| b.offset + l)
    }

    pub fn gamma_coord(&self) -> Option<usize> {
        self.coord(VarKey::GammaSq, 0, 0)
    }

    /// Matrix value of `key` under assignment `x`.
    pub fn extract(&self, key: VarKey, x: &[f64]) -> Result<Matrix, LmiError> {
        self.check_len(x)?;
        let b = self.block(key)?;
        let mut m = Matrix::zeros(b.rows, b.cols);
        for l in 0..b.len {
            for (r, c) in b.entries(l) {
                m[(r, c)] = x[b.offset + l];
            }
        }
        Ok(m)
    }

    /// Writes `value` into the coordinates of `key`; symmetric blocks read the
    /// upper triangle, diagonal blocks the diagonal.
    pub fn write(&self, key: VarKey, value: &Matrix, x: &mut [f64]) -> Result<(), LmiError> {
        self.check_len(x)?;
        let b = self.block(key)?;
        for l in 0..b.len {
            let (r, c) = b.entries(l)[0];
            x[b.offset + l] = value[(r, c)];
        }
        Ok(())
    }

    pub fn check_len(&self, x: &[f64]) -> Result<(), LmiError> {
        if x.len() != self.len {
            return Err(LmiError::LengthMismatch {
                expected: self.len,
                found: x.len(),
            });
        }
        Ok(())
    }

    /// The variable as an affine expression with unit coefficients.
    pub fn expr(&self, key: VarKey) -> Result<AffineExpr, LmiError> {
        let b = self.block(key)?;
        let mut e = AffineExpr::zeros(b.rows, b.cols);
        for l in 0..b.len {
            let mut f = Matrix::zeros(b.rows, b.cols);
            for (r, c) in b.entries(l) {
                f[(r, c)] = 1.0;
            }
            e.terms.insert(b.offset + l, f);
        }
        Ok(e)
    }

    /// Key owning global coordinate `k`.
    pub fn key_of(&self, k: usize) -> Option<VarKey> {
        self.blocks
            .iter()
            .find(|b| k >= b.offset && k < b.offset + b.len)
            .map(|b| b.key)
    }
}

/// Matrix-valued affine function of the decision coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    rows: usize,
    cols: usize,
    constant: Matrix,
    terms: BTreeMap<usize, Matrix>,
}

impl AffineExpr {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AffineExpr {
            rows,
            cols,
            constant: Matrix::zeros(rows, cols),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(m: Matrix) -> Self {
        AffineExpr {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: BTreeMap::new(),
        }
    }

    /// `x_coord · m`.
    pub fn scalar_times(coord: usize, m: Matrix) -> Self {
        let mut e = AffineExpr::zeros(m.nrows(), m.ncols());
        e.terms.insert(coord, m);
        e
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn map(&self, rows: usize, cols: usize, f: impl Fn(&Matrix) -> Matrix) -> Self {
        AffineExpr {
            rows,
            cols,
            constant: f(&self.constant),
            terms: self.terms.iter().map(|(k, m)| (*k, f(m))).collect(),
        }
    }

    pub fn add(&self, other: &AffineExpr) -> Self {
        assert_eq!(self.shape(), other.shape(), "affine sum shape mismatch");
        let mut out = self.clone();
        out.constant += &other.constant;
        for (k, m) in &other.terms {
            out.terms
                .entry(*k)
                .and_modify(|e| *e += m)
                .or_insert_with(|| m.clone());
        }
        out
    }

    pub fn add_const(&self, m: &Matrix) -> Self {
        let mut out = self.clone();
        out.constant += m;
        out
    }

    pub fn sub(&self, other: &AffineExpr) -> Self {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Self {
        self.scale(-1.0)
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(self.rows, self.cols, |m| m * a)
    }

    /// `l · self`.
    pub fn pre(&self, l: &Matrix) -> Self {
        assert_eq!(l.ncols(), self.rows, "left factor shape mismatch");
        self.map(l.nrows(), self.cols, |m| l * m)
    }

    /// `self · r`.
    pub fn post(&self, r: &Matrix) -> Self {
        assert_eq!(r.nrows(), self.cols, "right factor shape mismatch");
        self.map(self.rows, r.ncols(), |m| m * r)
    }

    pub fn transpose(&self) -> Self {
        self.map(self.cols, self.rows, |m| m.transpose())
    }

    /// `self + selfᵀ`.
    pub fn he(&self) -> Self {
        self.add(&self.transpose())
    }

    pub fn eval(&self, x: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (k, m) in &self.terms {
            if x[*k] != 0.0 {
                out += m * x[*k];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum GainTarget {
    Ahat,
    Bhat1,
    Chat1,
    Dhat12,
}

impl GainTarget {
    pub const ALL: [GainTarget; 4] = [
        GainTarget::Ahat,
        GainTarget::Bhat1,
        GainTarget::Chat1,
        GainTarget::Dhat12,
    ];

    fn kind(self) -> VarKind {
        match self {
            GainTarget::Ahat => VarKind::Ahat,
            GainTarget::Bhat1 => VarKind::Bhat1,
            GainTarget::Chat1 => VarKind::Chat1,
            GainTarget::Dhat12 => VarKind::Dhat12,
        }
    }
}

/// Constraint tags. Mode and channel indices are zero-based; `Display` is one-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum ConstraintId {
    /// Dissipation (performance) inequality of mode `i`.
    Perf(usize),
    /// `[R ⋆; I S] > 0`.
    Coupling(usize),
    /// Switching boundary for `i -> j`.
    Boundary(usize, usize),
    /// Ellipsoid inclusion for mode `i`, input channel `m`.
    Inclusion(usize, usize),
    GainBound(usize, GainTarget),
    /// Diagonal sector multiplier `U_i > 0`.
    MultiplierPositive(usize),
    /// `t ≥ 0`.
    GammaNonnegative,
    /// Hand-built constraint.
    Custom(usize),
}

impl fmt::Display for ConstraintId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConstraintId::Perf(i) => write!(f, "Perf({})", i + 1),
            ConstraintId::Coupling(i) => write!(f, "Coupling({})", i + 1),
            ConstraintId::Boundary(i, j) => write!(f, "Boundary({},{})", i + 1, j + 1),
            ConstraintId::Inclusion(i, m) => write!(f, "Inclusion({},{})", i + 1, m + 1),
            ConstraintId::GainBound(i, t) => write!(f, "GainBound({},{t:?})", i + 1),
            ConstraintId::MultiplierPositive(i) => write!(f, "MultiplierPositive({})", i + 1),
            ConstraintId::GammaNonnegative => f.write_str("GammaNonnegative"),
            ConstraintId::Custom(k) => write!(f, "Custom({})", k + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sense {
    StrictNeg,
    StrictPos,
    Psd,
}

/// `F₀ + Σ xₖ Fₖ` with the required sign.
#[derive(Debug, Clone, PartialEq)]
pub struct LmiConstraint {
    pub id: ConstraintId,
    pub sense: Sense,
    pub constant: Matrix,
    pub terms: Vec<(usize, Matrix)>,
}

impl LmiConstraint {
    pub fn size(&self) -> usize {
        self.constant.nrows()
    }

    pub fn evaluate(&self, x: &[f64]) -> Matrix {
        let mut out = self.constant.clone();
        for (k, m) in &self.terms {
            if x[*k] != 0.0 {
                out += m * x[*k];
            }
        }
        out
    }

    /// `−G − εI` for strict-negative, `G − εI` for strict-positive, `G` for psd:
    /// the matrix that must be PSD once strict inequalities are closed with margin `eps`.
    pub fn oriented(&self, eps: f64) -> (Matrix, Vec<(usize, Matrix)>) {
        let n = self.size();
        match self.sense {
            Sense::StrictNeg => (
                -&self.constant - Matrix::identity(n, n) * eps,
                self.terms.iter().map(|(k, m)| (*k, -m)).collect(),
            ),
            Sense::StrictPos => (
                &self.constant - Matrix::identity(n, n) * eps,
                self.terms.clone(),
            ),
            Sense::Psd => (self.constant.clone(), self.terms.clone()),
        }
    }

    /// Smallest eigenvalue of the oriented, margin-free matrix at `x`
    /// (negative of `λ_max` for strict-negative constraints).
    pub fn margin(&self, x: &[f64]) -> f64 {
        let g = self.evaluate(x);
        let (lo, hi) = linalg::sym_eig_bounds(&g).expect("finite constraint data");
        match self.sense {
            Sense::StrictNeg => -hi,
            _ => lo,
        }
    }
}

/// Assemble a symmetric block matrix from its lower-triangular blocks.
fn assemble(sizes: &[usize], lower: Vec<(usize, usize, AffineExpr)>) -> (Matrix, Vec<(usize, Matrix)>) {
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let total: usize = sizes.iter().sum();
    let mut constant = Matrix::zeros(total, total);
    let mut terms: BTreeMap<usize, Matrix> = BTreeMap::new();
    let place = |target: &mut Matrix, bi: usize, bj: usize, m: &Matrix| {
        let (ri, cj) = (offsets[bi], offsets[bj]);
        if bi == bj {
            let s = linalg::symmetrize(m);
            target.view_mut((ri, cj), (sizes[bi], sizes[bj])).copy_from(&s);
        } else {
            target.view_mut((ri, cj), (sizes[bi], sizes[bj])).copy_from(m);
            target
                .view_mut((cj, ri), (sizes[bj], sizes[bi]))
                .copy_from(&m.transpose());
        }
    };
    for (bi, bj, e) in &lower {
        assert!(bi >= bj, "only lower blocks are assembled");
        assert_eq!(e.shape(), (sizes[*bi], sizes[*bj]), "block ({bi},{bj}) shape");
        place(&mut constant, *bi, *bj, &e.constant);
        for (k, m) in &e.terms {
            let t = terms
                .entry(*k)
                .or_insert_with(|| Matrix::zeros(total, total));
            place(t, *bi, *bj, m);
        }
    }
    let terms = terms
        .into_iter()
        .filter(|(_, m)| m.iter().any(|v| *v != 0.0))
        .collect();
    (constant, terms)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Objective {
    Feasibility,
    MinimizeGammaSq,
}

/// Options that change which constraints are generated.
#[derive(Debug, Clone, Default)]
pub struct BuildOptions {
    /// Restrict boundary conditions to these ordered `(from, to)` pairs.
    /// `None` generates every ordered pair of distinct modes.
    pub switching_pairs: Option<Vec<(usize, usize)>>,
}

#[derive(Debug, Clone)]
pub struct LmiProgram {
    pub registry: VariableRegistry,
    pub constraints: Vec<LmiConstraint>,
    pub objective: Objective,
    pub dims: Dims,
    pub n_modes: usize,
    pub pairs: Vec<(usize, usize)>,
    /// Fixed γ when the objective is feasibility.
    pub fixed_gamma: Option<f64>,
}

impl LmiProgram {
    /// Program over plain scalars with caller-supplied constraints. `t` is
    /// added (and minimized) when `minimize` is set; it is the last coordinate.
    pub fn from_constraints(
        n_free: usize,
        minimize: bool,
        constraints: Vec<LmiConstraint>,
    ) -> Result<Self, LmiError> {
        let registry = VariableRegistry::scalars(n_free, minimize);
        for c in &constraints {
            if let Some((k, _)) = c.terms.iter().find(|(k, _)| *k >= registry.len()) {
                return Err(LmiError::UnknownVariable(format!("coordinate {k}")));
            }
        }
        Ok(LmiProgram {
            registry,
            constraints,
            objective: if minimize {
                Objective::MinimizeGammaSq
            } else {
                Objective::Feasibility
            },
            dims: Dims {
                n: 0,
                nu: 0,
                nw: 0,
                nz: 0,
                ny: 0,
            },
            n_modes: 0,
            pairs: Vec::new(),
            fixed_gamma: None,
        })
    }

    pub fn constraint(&self, id: ConstraintId) -> Result<&LmiConstraint, LmiError> {
        self.constraints
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| LmiError::UnknownId(id.to_string()))
    }

    pub fn evaluate_constraint(&self, id: ConstraintId, x: &[f64]) -> Result<Matrix, LmiError> {
        self.registry.check_len(x)?;
        Ok(self.constraint(id)?.evaluate(x))
    }

    /// γ encoded by `x`: `√t` in minimize mode, the fixed value otherwise.
    pub fn gamma(&self, x: &[f64]) -> Option<f64> {
        match self.registry.gamma_coord() {
            Some(k) => Some(x[k].max(0.0).sqrt()),
            None => self.fixed_gamma,
        }
    }
}

pub fn evaluate_constraint(program: &LmiProgram, id: ConstraintId, x: &[f64]) -> Result<Matrix, LmiError> {
    program.evaluate_constraint(id, x)
}

pub fn build_program(plant: &SwitchedPlant, spec: &SynthesisSpec) -> Result<LmiProgram, LmiError> {
    build_program_with(plant, spec, &BuildOptions::default())
}

pub fn build_program_with(
    plant: &SwitchedPlant,
    spec: &SynthesisSpec,
    options: &BuildOptions,
) -> Result<LmiProgram, LmiError> {
    validate_plant(plant)?;
    spec.validate()?;
    let dims = plant.dims();
    let np = plant.n_modes();
    let pairs: Vec<(usize, usize)> = match &options.switching_pairs {
        Some(p) => {
            if let Some(bad) = p.iter().find(|(i, j)| i == j || *i >= np || *j >= np) {
                return Err(LmiError::UnknownId(format!(
                    "Boundary({},{})",
                    bad.0 + 1,
                    bad.1 + 1
                )));
            }
            p.clone()
        }
        None => (0..np)
            .flat_map(|i| (0..np).filter(move |&j| j != i).map(move |j| (i, j)))
            .collect(),
    };
    let minimize = spec.gamma == GammaMode::Minimize;
    let registry = VariableRegistry::new(&dims, np, &pairs, minimize);
    let mut constraints = Vec::new();

    for (i, mode) in plant.modes().iter().enumerate() {
        constraints.push(perf_constraint(&registry, &dims, mode, i, spec)?);
        constraints.push(coupling_constraint(&registry, &dims, i)?);
    }
    for &(i, j) in &pairs {
        constraints.push(boundary_constraint(&registry, &dims, i, j, spec.mu)?);
    }
    for i in 0..np {
        for (m, ub) in plant.u_bar().iter().enumerate() {
            constraints.push(inclusion_constraint(&registry, &dims, i, m, ub * ub / (spec.s * spec.s))?);
        }
    }
    for i in 0..np {
        let u = registry.expr(VarKey::Mode(VarKind::U, i))?;
        let (constant, terms) = assemble(&[dims.nu], vec![(0, 0, u)]);
        constraints.push(LmiConstraint {
            id: ConstraintId::MultiplierPositive(i),
            sense: Sense::StrictPos,
            constant,
            terms,
        });
    }
    if let Some(kappa) = spec.kappa {
        for i in 0..np {
            for target in GainTarget::ALL {
                let v = registry.expr(VarKey::Mode(target.kind(), i))?;
                let (r, c) = v.shape();
                let (constant, terms) = assemble(
                    &[r, c],
                    vec![
                        (0, 0, AffineExpr::constant(Matrix::identity(r, r) * kappa)),
                        (1, 0, v.transpose()),
                        (1, 1, AffineExpr::constant(Matrix::identity(c, c) * kappa)),
                    ],
                );
                constraints.push(LmiConstraint {
                    id: ConstraintId::GainBound(i, target),
                    sense: Sense::Psd,
                    constant,
                    terms,
                });
            }
        }
    }
    if let Some(k) = registry.gamma_coord() {
        let (constant, terms) = assemble(
            &[1],
            vec![(0, 0, AffineExpr::scalar_times(k, Matrix::identity(1, 1)))],
        );
        constraints.push(LmiConstraint {
            id: ConstraintId::GammaNonnegative,
            sense: Sense::Psd,
            constant,
            terms,
        });
    }

    Ok(LmiProgram {
        registry,
        constraints,
        objective: if minimize {
            Objective::MinimizeGammaSq
        } else {
            Objective::Feasibility
        },
        dims,
        n_modes: np,
        pairs,
        fixed_gamma: match spec.gamma {
            GammaMode::Fixed(g) => Some(g),
            GammaMode::Minimize => None,
        },
    })
}

fn perf_constraint(
    reg: &VariableRegistry,
    d: &Dims,
    p: &PlantMode,
    i: usize,
    spec: &SynthesisSpec,
) -> Result<LmiConstraint, LmiError> {
    let v = |k: VarKind| reg.expr(VarKey::Mode(k, i));
    let (r, s, u) = (v(VarKind::R)?, v(VarKind::S)?, v(VarKind::U)?);
    let a_hat = v(VarKind::Ahat)?;
    let b1_hat = v(VarKind::Bhat1)?;
    let b2_hat = v(VarKind::Bhat2)?;
    let c1_hat = v(VarKind::Chat1)?;
    let d11_hat = v(VarKind::Dhat11)?;
    let d12_hat = v(VarKind::Dhat12)?;
    let h1_hat = v(VarKind::Hhat1)?;
    let h2_hat = v(VarKind::Hhat2)?;
    let l0 = spec.lambda0;
    let eye = |k: usize| Matrix::identity(k, k);
    let b2t = p.b2.transpose();

    let b11 = r.pre(&p.a).add(&c1_hat.pre(&p.b2)).he().add(&r.scale(l0));
    let b21 = a_hat
        .add_const(&(p.a.transpose() + eye(d.n) * l0))
        .add(&d11_hat.transpose().pre(&p.c2.transpose()).post(&b2t));
    let b22 = s.post(&p.a).add(&b1_hat.post(&p.c2)).he().add(&s.scale(l0));
    let b31 = u
        .post(&b2t)
        .neg()
        .add(&d12_hat.transpose().post(&b2t))
        .add(&c1_hat)
        .sub(&h2_hat);
    let b32 = b2_hat.transpose().add(&d11_hat.post(&p.c2)).sub(&h1_hat);
    let b33 = d12_hat.sub(&u).he();
    let b41 = d11_hat
        .transpose()
        .pre(&p.d21.transpose())
        .post(&b2t)
        .add_const(&p.b1.transpose());
    let b42 = s
        .pre(&p.b1.transpose())
        .add(&b1_hat.transpose().pre(&p.d21.transpose()));
    let b43 = d11_hat.transpose().pre(&p.d21.transpose());
    let b44 = AffineExpr::constant(-eye(d.nw));
    let b51 = r.pre(&p.c1).add(&c1_hat.pre(&p.d12));
    let b52 = d11_hat.pre(&p.d12).post(&p.c2).add_const(&p.c1);
    let b53 = u.pre(&p.d12).neg().add(&d12_hat.pre(&p.d12));
    let b54 = d11_hat.pre(&p.d12).post(&p.d21).add_const(&p.d11);
    let b55 = match (spec.gamma, reg.gamma_coord()) {
        (GammaMode::Fixed(g), _) => AffineExpr::constant(-eye(d.nz) * (g * g)),
        (GammaMode::Minimize, Some(k)) => AffineExpr::scalar_times(k, -eye(d.nz)),
        (GammaMode::Minimize, None) => return Err(LmiError::UnknownVariable("t".into())),
    };

    let (constant, terms) = assemble(
        &[d.n, d.n, d.nu, d.nw, d.nz],
        vec![
            (0, 0, b11),
            (1, 0, b21),
            (1, 1, b22),
            (2, 0, b31),
            (2, 1, b32),
            (2, 2, b33),
            (3, 0, b41),
            (3, 1, b42),
            (3, 2, b43),
            (3, 3, b44),
            (4, 0, b51),
            (4, 1, b52),
            (4, 2, b53),
            (4, 3, b54),
            (4, 4, b55),
        ],
    );
    Ok(LmiConstraint {
        id: ConstraintId::Perf(i),
        sense: Sense::StrictNeg,
        constant,
        terms,
    })
}

fn coupling_constraint(reg: &VariableRegistry, d: &Dims, i: usize) -> Result<LmiConstraint, LmiError> {
    let r = reg.expr(VarKey::Mode(VarKind::R, i))?;
    let s = reg.expr(VarKey::Mode(VarKind::S, i))?;
    let (constant, terms) = assemble(
        &[d.n, d.n],
        vec![
            (0, 0, r),
            (1, 0, AffineExpr::constant(Matrix::identity(d.n, d.n))),
            (1, 1, s),
        ],
    );
    Ok(LmiConstraint {
        id: ConstraintId::Coupling(i),
        sense: Sense::StrictPos,
        constant,
        terms,
    })
}

fn boundary_constraint(
    reg: &VariableRegistry,
    d: &Dims,
    i: usize,
    j: usize,
    mu: f64,
) -> Result<LmiConstraint, LmiError> {
    let eye = AffineExpr::constant(Matrix::identity(d.n, d.n));
    let ri = reg.expr(VarKey::Mode(VarKind::R, i))?;
    let si = reg.expr(VarKey::Mode(VarKind::S, i))?;
    let rj = reg.expr(VarKey::Mode(VarKind::R, j))?;
    let sj = reg.expr(VarKey::Mode(VarKind::S, j))?;
    let dh = reg.expr(VarKey::DeltaHat(i, j))?;
    let (constant, terms) = assemble(
        &[d.n; 4],
        vec![
            (0, 0, ri.scale(mu)),
            (1, 0, eye.scale(mu)),
            (1, 1, si.scale(mu)),
            (2, 0, ri),
            (2, 1, eye.clone()),
            (2, 2, rj),
            (3, 0, dh),
            (3, 1, sj.clone()),
            (3, 2, eye),
            (3, 3, sj),
        ],
    );
    Ok(LmiConstraint {
        id: ConstraintId::Boundary(i, j),
        sense: Sense::Psd,
        constant,
        terms,
    })
}

fn inclusion_constraint(
    reg: &VariableRegistry,
    d: &Dims,
    i: usize,
    m: usize,
    top_left: f64,
) -> Result<LmiConstraint, LmiError> {
    let mut ell = Matrix::zeros(d.nu, 1);
    ell[(m, 0)] = 1.0;
    let r = reg.expr(VarKey::Mode(VarKind::R, i))?;
    let s = reg.expr(VarKey::Mode(VarKind::S, i))?;
    // Second block row pairs Ĥ₂ with R, third pairs Ĥ₁ with S.
    let h2 = reg.expr(VarKey::Mode(VarKind::Hhat2, i))?.transpose().post(&ell);
    let h1 = reg.expr(VarKey::Mode(VarKind::Hhat1, i))?.transpose().post(&ell);
    let (constant, terms) = assemble(
        &[1, d.n, d.n],
        vec![
            (0, 0, AffineExpr::constant(Matrix::from_element(1, 1, top_left))),
            (1, 0, h2),
            (1, 1, r),
            (2, 0, h1),
            (2, 1, AffineExpr::constant(Matrix::identity(d.n, d.n))),
            (2, 2, s),
        ],
    );
    Ok(LmiConstraint {
        id: ConstraintId::Inclusion(i, m),
        sense: Sense::Psd,
        constant,
        terms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleEntry {
    pub id: ConstraintId,
    pub size: usize,
    /// Max |entry| of `F₀`.
    pub constant_max: f64,
    /// Max |entry| over all coefficient blocks.
    pub coefficient_max: f64,
}

/// Per-constraint magnitude summary for conditioning review.
pub fn scale_report(program: &LmiProgram) -> Vec<ScaleEntry> {
    program
        .constraints
        .iter()
        .map(|c| ScaleEntry {
            id: c.id,
            size: c.size(),
            constant_max: linalg::max_abs(&c.constant),
            coefficient_max: c
                .terms
                .iter()
                .fold(0.0_f64, |a, (_, m)| a.max(linalg::max_abs(m))),
        })
        .collect()
}

/// Sparse SDPA listing of the program (`min cᵀx s.t. Σ xₖFₖ − F₀ ⪰ 0`) with
/// strict inequalities closed by `margin`. One data line per nonzero upper
/// entry: `matrix block row col value`, with matrix 0 holding `F₀`.
pub fn to_sdpa(program: &LmiProgram, margin: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "\"hybrid saturated synthesis program, strict margin {margin:e}");
    for c in &program.constraints {
        let _ = writeln!(out, "* block {}: {} {:?}", 0, c.id, c.sense);
    }
    let m = program.registry.len();
    let _ = writeln!(out, "{m}");
    let _ = writeln!(out, "{}", program.constraints.len());
    let sizes: Vec<String> = program.constraints.iter().map(|c| c.size().to_string()).collect();
    let _ = writeln!(out, "{}", sizes.join(" "));
    let mut cvec = vec![0.0; m];
    if let Some(k) = program.registry.gamma_coord() {
        cvec[k] = 1.0;
    }
    let cvec: Vec<String> = cvec.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "{}", cvec.join(" "));
    for (b, c) in program.constraints.iter().enumerate() {
        let (f0, terms) = c.oriented(margin);
        // SDPA stores F₀ on the right-hand side: G(x) = Σ xₖFₖ − F₀.
        write_upper(&mut out, 0, b + 1, &(-f0));
        for (k, f) in terms {
            write_upper(&mut out, k + 1, b + 1, &f);
        }
    }
    out
}

fn write_upper(out: &mut String, matno: usize, blk: usize, m: &Matrix) {
    for r in 0..m.nrows() {
        for c in r..m.ncols() {
            let v = m[(r, c)];
            if v != 0.0 {
                let _ = writeln!(out, "{matno} {blk} {} {} {v}", r + 1, c + 1);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_rows;
    use crate::model::SpecFile;

    fn scalar_plant(n_modes: usize) -> SwitchedPlant {
        let m = |v: f64| from_rows(&[&[v]]);
        let modes = (0..n_modes)
            .map(|k| PlantMode {
                a: m(0.5 + k as f64),
                b1: m(1.0),
                b2: m(1.0),
                c1: m(1.0),
                d11: m(0.0),
                d12: m(0.0),
                c2: m(1.0),
                d21: m(0.1),
                d22: m(0.0),
            })
            .collect();
        SwitchedPlant::new(modes, vec![1.0]).unwrap()
    }

    fn spec(gamma: Option<f64>, mu: f64) -> SynthesisSpec {
        SynthesisSpec {
            lambda0: 0.1,
            mu,
            s: 0.5,
            gamma: gamma.map_or(GammaMode::Minimize, GammaMode::Fixed),
            epsilon: 1e-6,
            delta: 1e-8,
            kappa: None,
        }
    }

    #[test]
    fn symmetric_coordinates_cover_upper_triangle_once() {
        let b = VarBlock::new(VarKey::GammaSq, 4, 4, Structure::Symmetric, 0);
        let mut seen = vec![vec![0; 4]; 4];
        for l in 0..b.len {
            for (r, c) in b.entries(l) {
                seen[r][c] += 1;
                assert_eq!(b.local(r, c), Some(l));
            }
        }
        assert!(seen.iter().flatten().all(|&k| k == 1));
    }

    #[test]
    fn coupling_at_two_identity() {
        let plant = scalar_plant(2);
        let prog = build_program(&plant, &spec(Some(1.0), 4.0)).unwrap();
        let mut x = vec![0.0; prog.registry.len()];
        prog.registry.write(VarKey::Mode(VarKind::R, 0), &from_rows(&[&[2.0]]), &mut x).unwrap();
        prog.registry.write(VarKey::Mode(VarKind::S, 0), &from_rows(&[&[2.0]]), &mut x).unwrap();
        let g = prog.evaluate_constraint(ConstraintId::Coupling(0), &x).unwrap();
        assert_eq!(g, from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]));
        assert!((linalg::sym_eig_bounds(&g).unwrap().0 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_assignment_returns_constant() {
        let plant = scalar_plant(2);
        let prog = build_program(&plant, &spec(None, 4.0)).unwrap();
        let x = vec![0.0; prog.registry.len()];
        for c in &prog.constraints {
            assert_eq!(prog.evaluate_constraint(c.id, &x).unwrap(), c.constant);
        }
    }

    #[test]
    fn errors_on_unknown_id_and_length() {
        let plant = scalar_plant(1);
        let prog = build_program(&plant, &spec(None, 4.0)).unwrap();
        let x = vec![0.0; prog.registry.len()];
        assert!(matches!(
            prog.evaluate_constraint(ConstraintId::Boundary(0, 1), &x),
            Err(LmiError::UnknownId(_))
        ));
        assert!(matches!(
            prog.evaluate_constraint(ConstraintId::Perf(0), &x[1..]),
            Err(LmiError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn single_mode_has_no_boundary_constraints() {
        let prog = build_program(&scalar_plant(1), &spec(None, 4.0)).unwrap();
        assert!(prog.pairs.is_empty());
        assert!(!prog
            .constraints
            .iter()
            .any(|c| matches!(c.id, ConstraintId::Boundary(..))));
    }

    #[test]
    fn switching_pair_restriction() {
        let opts = BuildOptions {
            switching_pairs: Some(vec![(0, 1), (1, 2), (2, 0)]),
        };
        let prog = build_program_with(&scalar_plant(3), &spec(None, 4.0), &opts).unwrap();
        let boundary = prog
            .constraints
            .iter()
            .filter(|c| matches!(c.id, ConstraintId::Boundary(..)))
            .count();
        assert_eq!(boundary, 3);
        let full = build_program(&scalar_plant(3), &spec(None, 4.0)).unwrap();
        assert_eq!(full.pairs.len(), 6);
        let bad = BuildOptions {
            switching_pairs: Some(vec![(1, 1)]),
        };
        assert!(build_program_with(&scalar_plant(3), &spec(None, 4.0), &bad).is_err());
    }

    #[test]
    fn gain_bounds_added_with_kappa() {
        let mut sp = spec(None, 4.0);
        sp.kappa = Some(10.0);
        let prog = build_program(&scalar_plant(2), &sp).unwrap();
        let x = vec![0.0; prog.registry.len()];
        let g = prog
            .evaluate_constraint(ConstraintId::GainBound(1, GainTarget::Ahat), &x)
            .unwrap();
        assert_eq!(g, Matrix::identity(2, 2) * 10.0);
    }

    #[test]
    fn fixed_gamma_enters_constant() {
        let prog = build_program(&scalar_plant(1), &spec(Some(3.0), 4.0)).unwrap();
        let c = prog.constraint(ConstraintId::Perf(0)).unwrap();
        let k = c.size() - 1;
        assert_eq!(c.constant[(k, k)], -9.0);
        assert!(prog.registry.gamma_coord().is_none());
        assert_eq!(prog.gamma(&vec![0.0; prog.registry.len()]), Some(3.0));
    }

    #[test]
    fn spec_file_resolution_feeds_builder() {
        let plant = scalar_plant(2);
        let sp = SpecFile {
            lambda0: 0.1,
            mu: 4.0,
            s: 0.42,
            ..SpecFile::default()
        }
        .resolve(&plant)
        .unwrap();
        assert!(build_program(&plant, &sp).is_ok());
    }

    #[test]
    fn sdpa_export_lists_every_block() {
        let prog = build_program(&scalar_plant(2), &spec(None, 4.0)).unwrap();
        let text = to_sdpa(&prog, 1e-6);
        let body: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with('"') && !l.starts_with('*'))
            .collect();
        assert_eq!(body[0], prog.registry.len().to_string());
        assert_eq!(body[1], prog.constraints.len().to_string());
        assert!(body[4..].iter().all(|l| l.split_whitespace().count() == 5));
    }

    fn example_plant() -> SwitchedPlant {
        serde_json::from_str(include_str!("../fixtures/example_plant.json")).unwrap()
    }

    fn block(m: &Matrix, sizes: &[usize], bi: usize, bj: usize) -> Matrix {
        let off = |b: usize| sizes[..b].iter().sum::<usize>();
        m.view((off(bi), off(bj)), (sizes[bi], sizes[bj])).into_owned()
    }

    #[test]
    fn example_plant_program_shape() {
        let plant = example_plant();
        let sp = SynthesisSpec::minimize(&plant, 0.1, 4.0, 0.42).unwrap();
        let prog = build_program(&plant, &sp).unwrap();
        assert_eq!(prog.registry.len(), 97);
        let count = |f: fn(&ConstraintId) -> bool, size: usize| {
            let cs: Vec<_> = prog.constraints.iter().filter(|c| f(&c.id)).collect();
            assert!(cs.iter().all(|c| c.size() == size));
            cs.len()
        };
        // Block sizes [n, n, n_u, n_w, n_z] with n = 3.
        assert_eq!(count(|id| matches!(id, ConstraintId::Perf(_)), 9), 2);
        assert_eq!(count(|id| matches!(id, ConstraintId::Coupling(_)), 6), 2);
        assert_eq!(count(|id| matches!(id, ConstraintId::Boundary(..)), 12), 2);
        assert_eq!(count(|id| matches!(id, ConstraintId::Inclusion(..)), 7), 2);
        for c in &prog.constraints {
            for (k, m) in &c.terms {
                assert!(*k < prog.registry.len());
                assert_eq!(m, &m.transpose());
            }
        }
    }

    #[test]
    fn perf_at_zero_with_unit_gamma() {
        let plant = example_plant();
        let mut sp = SynthesisSpec::minimize(&plant, 0.1, 4.0, 0.42).unwrap();
        sp.gamma = GammaMode::Fixed(1.0);
        let prog = build_program(&plant, &sp).unwrap();
        let x = vec![0.0; prog.registry.len()];
        let g = prog.evaluate_constraint(ConstraintId::Perf(0), &x).unwrap();
        let sizes = [3, 3, 1, 1, 1];
        assert_eq!(block(&g, &sizes, 3, 3), -Matrix::identity(1, 1));
        assert_eq!(block(&g, &sizes, 4, 4), -Matrix::identity(1, 1));
    }

    #[test]
    fn boundary_pattern_at_identities() {
        let plant = example_plant();
        let sp = SynthesisSpec::minimize(&plant, 0.1, 4.0, 0.42).unwrap();
        let prog = build_program(&plant, &sp).unwrap();
        let mut x = vec![0.0; prog.registry.len()];
        let eye = Matrix::identity(3, 3);
        for i in 0..2 {
            prog.registry.write(VarKey::Mode(VarKind::R, i), &eye, &mut x).unwrap();
            prog.registry.write(VarKey::Mode(VarKind::S, i), &eye, &mut x).unwrap();
        }
        prog.registry.write(VarKey::DeltaHat(0, 1), &eye, &mut x).unwrap();
        let g = prog.evaluate_constraint(ConstraintId::Boundary(0, 1), &x).unwrap();
        let pattern = [[4.0, 4.0, 1.0, 1.0], [4.0, 4.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0], [1.0, 1.0, 1.0, 1.0]];
        for (bi, row) in pattern.iter().enumerate() {
            for (bj, v) in row.iter().enumerate() {
                assert_eq!(block(&g, &[3; 4], bi, bj), &eye * *v, "block ({bi},{bj})");
            }
        }
    }

    #[test]
    fn inclusion_at_zero_h() {
        let plant = example_plant();
        let sp = SynthesisSpec::minimize(&plant, 0.1, 4.0, 0.42).unwrap();
        let prog = build_program(&plant, &sp).unwrap();
        let mut x = vec![0.0; prog.registry.len()];
        let eye = Matrix::identity(3, 3);
        prog.registry.write(VarKey::Mode(VarKind::R, 1), &eye, &mut x).unwrap();
        prog.registry.write(VarKey::Mode(VarKind::S, 1), &eye, &mut x).unwrap();
        let g = prog.evaluate_constraint(ConstraintId::Inclusion(1, 0), &x).unwrap();
        assert!((g[(0, 0)] - 1.0 / (0.42 * 0.42)).abs() < 1e-12);
        assert!(g.row(0).iter().skip(1).all(|v| *v == 0.0));
        let ones = linalg::block_matrix(&[vec![&eye, &eye], vec![&eye, &eye]]);
        assert_eq!(g.view((1, 1), (6, 6)).into_owned(), ones);
        assert!(linalg::sym_eig_bounds(&g).unwrap().0 > -1e-12);
    }

    #[test]
    fn scale_report_examples() {
        let plant = example_plant();
        assert_eq!(plant.max_abs_entry(), 6.0);
        let sp = SynthesisSpec::minimize(&plant, 0.1, 4.0, 0.42).unwrap();
        let base = scale_report(&build_program(&plant, &sp).unwrap());
        assert!(base.iter().all(|e| e.constant_max.is_finite() && e.coefficient_max.is_finite()));
        let scaled = scale_report(&build_program(&plant.scaled(10.0), &sp).unwrap());
        for (a, b) in base.iter().zip(&scaled) {
            if matches!(a.id, ConstraintId::Perf(_)) {
                assert!(b.constant_max <= 10.0 * a.constant_max + 1e-12);
            }
        }

        // Only B_p2 and C_p2 are nonzero; they multiply decision variables, so
        // F₀ carries nothing from the plant.
        let z = |r, c| Matrix::zeros(r, c);
        let zero_mode = PlantMode {
            a: z(1, 1),
            b1: z(1, 1),
            b2: from_rows(&[&[1.0]]),
            c1: z(1, 1),
            d11: z(1, 1),
            d12: z(1, 1),
            c2: from_rows(&[&[1.0]]),
            d21: z(1, 1),
            d22: z(1, 1),
        };
        let zero = SwitchedPlant::new(vec![zero_mode.clone(), zero_mode], vec![2.0]).unwrap();
        let sp = SynthesisSpec {
            gamma: GammaMode::Fixed(1.0),
            ..spec(None, 4.0)
        };
        let rep = scale_report(&build_program(&zero, &sp).unwrap());
        let allowed = [0.0, 1.0, sp.lambda0, sp.mu, 4.0 / (sp.s * sp.s)];
        for e in rep {
            assert!(
                allowed.iter().any(|a| (a - e.constant_max).abs() < 1e-12),
                "{}: {}",
                e.id,
                e.constant_max
            );
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn program() -> LmiProgram {
            let plant = scalar_plant(3);
            build_program(&plant, &spec(None, 4.0)).unwrap()
        }

        fn assignment(len: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-10.0..10.0f64, len)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn evaluation_is_affine_and_symmetric(
                x in assignment(program().registry.len()),
                y in assignment(program().registry.len()),
                a in 0.0..1.0f64,
            ) {
                let prog = program();
                let mix: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + (1.0 - a) * v).collect();
                for c in &prog.constraints {
                    let gx = c.evaluate(&x);
                    let gy = c.evaluate(&y);
                    let gm = c.evaluate(&mix);
                    prop_assert_eq!(&gm, &gm.transpose());
                    let expect = &gx * a + &gy * (1.0 - a);
                    let scale = 1.0 + gx.amax() + gy.amax();
                    prop_assert!((gm - expect).amax() <= 1e-12 * scale);
                }
            }

            #[test]
            fn mode_permutation_equivariance(
                x in assignment(program().registry.len()),
                perm in Just(vec![0usize, 1, 2]).prop_shuffle(),
            ) {
                let plant = scalar_plant(3);
                let sp = spec(None, 4.0);
                let old = build_program(&plant, &sp).unwrap();
                let new = build_program(&plant.permuted(&perm), &sp).unwrap();
                let mut xn = vec![0.0; new.registry.len()];
                for b in new.registry.blocks() {
                    let src = match b.key {
                        VarKey::Mode(k, i) => VarKey::Mode(k, perm[i]),
                        VarKey::DeltaHat(i, j) => VarKey::DeltaHat(perm[i], perm[j]),
                        other => other,
                    };
                    let v = old.registry.extract(src, &x).unwrap();
                    new.registry.write(b.key, &v, &mut xn).unwrap();
                }
                for c in &new.constraints {
                    let src = match c.id {
                        ConstraintId::Perf(i) => ConstraintId::Perf(perm[i]),
                        ConstraintId::Coupling(i) => ConstraintId::Coupling(perm[i]),
                        ConstraintId::Boundary(i, j) => ConstraintId::Boundary(perm[i], perm[j]),
                        ConstraintId::Inclusion(i, m) => ConstraintId::Inclusion(perm[i], m),
                        ConstraintId::MultiplierPositive(i) => ConstraintId::MultiplierPositive(perm[i]),
                        other => other,
                    };
                    prop_assert_eq!(c.evaluate(&xn), old.evaluate_constraint(src, &x).unwrap());
                }
            }

            #[test]
            fn r_entry_perturbation_is_local(
                x in assignment(program().registry.len()),
                mode in 0usize..3,
                h in 0.1..5.0f64,
            ) {
                let prog = program();
                let k = prog.registry.coord(VarKey::Mode(VarKind::R, mode), 0, 0).unwrap();
                let mut xp = x.clone();
                xp[k] += h;
                for c in &prog.constraints {
                    let d = c.evaluate(&xp) - c.evaluate(&x);
                    prop_assert_eq!(&d, &d.transpose());
                    let touches = match c.id {
                        ConstraintId::Perf(i) | ConstraintId::Coupling(i) | ConstraintId::Inclusion(i, _) => i == mode,
                        ConstraintId::Boundary(i, j) => i == mode || j == mode,
                        _ => false,
                    };
                    if !touches {
                        prop_assert!(d.amax() == 0.0, "{} changed", c.id);
                    } else if c.id == ConstraintId::Perf(mode) {
                        prop_assert!(d.amax() > 0.0);
                    }
                }
            }
        }
    }
}
