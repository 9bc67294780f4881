//! Symmetric kernels on `[0,1]^2` and the integral operator they induce.
//!
//! Four representations are supported: a point evaluator, a blockwise-constant
//! matrix, a separable product `phi(x) phi(y)` and a finite eigen-expansion.
//! Kernels flagged [`KernelClass::Graphon`] are validated at construction to
//! take values in `[0,1]`; [`KernelClass::Signed`] kernels (differences of
//! graphons, truncations) are unrestricted.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::step::{cell_index, left_cell_index, StepFunction};

pub type PointFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type ProfileFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

const RANGE_TOL: f64 = 1e-12;
const PROBE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelClass {
    /// Values in `[0,1]`.
    Graphon,
    /// Arbitrary real values.
    Signed,
}

/// The factor `phi` of a separable kernel.
#[derive(Clone)]
pub enum Profile {
    Step(StepFunction),
    /// Coefficients `c_0 + c_1 x + c_2 x^2 + ...`.
    Polynomial(Vec<f64>),
    Function {
        f: ProfileFn,
        sup: f64,
        name: String,
    },
}

impl Profile {
    pub fn polynomial(coeffs: Vec<f64>) -> Self {
        Profile::Polynomial(coeffs)
    }

    pub fn function(name: &str, sup: f64, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Profile::Function {
            f: Arc::new(f),
            sup,
            name: name.to_string(),
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Profile::Step(s) => s.eval(x, 0),
            Profile::Polynomial(c) => c.iter().rev().fold(0.0, |acc, &ci| acc * x + ci),
            Profile::Function { f, .. } => f(x),
        }
    }

    fn eval_left(&self, x: f64) -> f64 {
        match self {
            Profile::Step(s) => s.eval_left(x, 0),
            _ => self.eval(x),
        }
    }

    /// Guaranteed upper bound on `|phi|` over `[0,1]`.
    pub fn sup_bound(&self) -> f64 {
        match self {
            Profile::Step(s) => s.values().iter().fold(0.0, |m, v| m.max(v.abs())),
            Profile::Polynomial(c) => c.iter().map(|v| v.abs()).sum(),
            Profile::Function { sup, .. } => *sup,
        }
    }

    fn derivative_bound(&self) -> Option<f64> {
        match self {
            Profile::Step(s) => {
                let v = s.values();
                v.windows(2).all(|w| w[0] == w[1]).then_some(0.0)
            }
            Profile::Polynomial(c) => Some(
                c.iter()
                    .enumerate()
                    .skip(1)
                    .map(|(i, v)| i as f64 * v.abs())
                    .sum(),
            ),
            Profile::Function { .. } => None,
        }
    }

    /// `(min, max)` of `phi`, exact for steps and probed otherwise.
    fn range(&self) -> (f64, f64) {
        let vals: Vec<f64> = match self {
            Profile::Step(s) => s.values().to_vec(),
            _ => (0..=4 * PROBE)
                .map(|i| self.eval(i as f64 / (4 * PROBE) as f64))
                .collect(),
        };
        vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }

    fn describe(&self) -> String {
        match self {
            Profile::Step(s) => format!("step[{}]", s.grid_size()),
            Profile::Polynomial(c) => format!("poly{c:?}"),
            Profile::Function { name, .. } => name.clone(),
        }
    }
}

#[derive(Clone)]
pub enum KernelRepr {
    GridEvaluable {
        f: PointFn,
        sup: f64,
        lipschitz: Option<f64>,
        name: String,
    },
    /// Row-major `m x m` cell values.
    Blockwise { m: usize, values: Vec<f64> },
    Separable(Profile),
    /// `sum_k lambda_k f_k(x) f_k(y)`.
    FiniteRank(Vec<(f64, StepFunction)>),
}

/// Where `discretize` samples a kernel inside each cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplePoint {
    /// `W(k/M, l/M)` for one-based cells, taken as a left limit.
    RightEndpoint,
    /// `W((k-1/2)/M, (l-1/2)/M)`.
    Midpoint,
}

#[derive(Clone)]
pub struct GraphonKernel {
    repr: KernelRepr,
    class: KernelClass,
}

impl fmt::Debug for GraphonKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let repr = match &self.repr {
            KernelRepr::GridEvaluable { name, .. } => format!("GridEvaluable({name})"),
            KernelRepr::Blockwise { m, .. } => format!("Blockwise({m}x{m})"),
            KernelRepr::Separable(p) => format!("Separable({})", p.describe()),
            KernelRepr::FiniteRank(t) => format!("FiniteRank({})", t.len()),
        };
        f.debug_struct("GraphonKernel")
            .field("repr", &repr)
            .field("class", &self.class)
            .finish()
    }
}

impl GraphonKernel {
    pub fn new(repr: KernelRepr, class: KernelClass) -> Result<Self> {
        let k = GraphonKernel { repr, class };
        k.validate()?;
        Ok(k)
    }

    /// `W = p` everywhere, stored as a 1x1 block.
    pub fn constant(p: f64) -> Result<Self> {
        Self::blockwise(1, vec![p])
    }

    /// `W(x,y) = xy`, the separable kernel with `phi(x) = x`.
    pub fn product_xy() -> Self {
        GraphonKernel {
            repr: KernelRepr::Separable(Profile::Polynomial(vec![0.0, 1.0])),
            class: KernelClass::Graphon,
        }
    }

    pub fn blockwise(m: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(KernelRepr::Blockwise { m, values }, KernelClass::Graphon)
    }

    pub fn blockwise_signed(m: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(KernelRepr::Blockwise { m, values }, KernelClass::Signed)
    }

    pub fn separable(profile: Profile) -> Result<Self> {
        Self::new(KernelRepr::Separable(profile), KernelClass::Graphon)
    }

    pub fn finite_rank(terms: Vec<(f64, StepFunction)>, class: KernelClass) -> Result<Self> {
        Self::new(KernelRepr::FiniteRank(terms), class)
    }

    /// Kernel given by a point evaluator. `sup` must bound `|W|`; `lipschitz`
    /// is the optional constant used for the analytic `L_W / M` bound.
    pub fn from_fn(
        name: &str,
        sup: f64,
        lipschitz: Option<f64>,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        Self::new(
            KernelRepr::GridEvaluable {
                f: Arc::new(f),
                sup,
                lipschitz,
                name: name.to_string(),
            },
            KernelClass::Graphon,
        )
    }

    pub fn repr(&self) -> &KernelRepr {
        &self.repr
    }

    pub fn class(&self) -> KernelClass {
        self.class
    }

    /// The separable factor, if this kernel is separable.
    pub fn profile(&self) -> Option<&Profile> {
        match &self.repr {
            KernelRepr::Separable(p) => Some(p),
            _ => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match &self.repr {
            KernelRepr::Blockwise { m, values } => {
                if *m == 0 || values.len() != m * m {
                    return Err(Error::InvalidKernel(format!(
                        "blockwise kernel needs {m}x{m} values, got {}",
                        values.len()
                    )));
                }
                for k in 0..*m {
                    for l in 0..k {
                        if values[k * m + l] != values[l * m + k] {
                            return Err(Error::InvalidKernel(format!(
                                "blockwise matrix not symmetric at ({k}, {l})"
                            )));
                        }
                    }
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidKernel("non-finite cell value".into()));
                }
            }
            KernelRepr::Separable(Profile::Step(s)) if s.n_components() != 1 => {
                return Err(Error::InvalidKernel("profile must be scalar".into()));
            }
            KernelRepr::FiniteRank(terms) => {
                if terms.iter().any(|(_, f)| f.n_components() != 1) {
                    return Err(Error::InvalidKernel(
                        "eigenfunctions must be scalar step functions".into(),
                    ));
                }
            }
            KernelRepr::GridEvaluable { f, .. } => {
                for i in 0..=32 {
                    for j in 0..i {
                        let (x, y) = (i as f64 / 32.0, j as f64 / 32.0);
                        let (a, b) = (f(x, y), f(y, x));
                        if (a - b).abs() > 1e-12 * a.abs().max(1.0) {
                            return Err(Error::InvalidKernel(format!(
                                "evaluator not symmetric at ({x}, {y})"
                            )));
                        }
                    }
                }
            }
            _ => {}
        }
        if self.class == KernelClass::Graphon {
            let (lo, hi) = self.value_range();
            if lo < -RANGE_TOL || hi > 1.0 + RANGE_TOL {
                return Err(Error::InvalidKernel(format!(
                    "graphon values must lie in [0,1], found range [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }

    /// `(min, max)` of kernel values: exact for blockwise and step-based
    /// representations, probed on a grid otherwise.
    fn value_range(&self) -> (f64, f64) {
        let fold = |it: &mut dyn Iterator<Item = f64>| {
            it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
        };
        match &self.repr {
            KernelRepr::Blockwise { values, .. } => fold(&mut values.iter().copied()),
            KernelRepr::Separable(p) => {
                let (lo, hi) = p.range();
                let c = [lo * lo, lo * hi, hi * hi];
                fold(&mut c.into_iter())
            }
            KernelRepr::FiniteRank(terms) => {
                let grid = terms
                    .iter()
                    .map(|(_, f)| f.grid_size())
                    .fold(1, crate::step::lcm)
                    .min(2048);
                fold(&mut (0..grid).flat_map(move |k| {
                    (0..grid).map(move |l| {
                        let x = (k as f64 + 0.5) / grid as f64;
                        let y = (l as f64 + 0.5) / grid as f64;
                        terms.iter().map(|(lam, f)| lam * f.eval(x, 0) * f.eval(y, 0)).sum()
                    })
                }))
            }
            KernelRepr::GridEvaluable { f, .. } => fold(&mut (0..=PROBE).flat_map(|i| {
                let f = f.clone();
                (0..=PROBE).map(move |j| f(i as f64 / PROBE as f64, j as f64 / PROBE as f64))
            })),
        }
    }

    /// `W(x,y)` with half-open cells for step-based representations.
    pub fn evaluate(&self, x: f64, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::domain(format!(
                "kernel evaluated outside [0,1]^2 at ({x}, {y})"
            )));
        }
        Ok(self.eval_point(x, y))
    }

    #[inline]
    pub(crate) fn eval_point(&self, x: f64, y: f64) -> f64 {
        match &self.repr {
            KernelRepr::GridEvaluable { f, .. } => f(x, y),
            KernelRepr::Blockwise { m, values } => {
                values[cell_index(x, *m) * m + cell_index(y, *m)]
            }
            KernelRepr::Separable(p) => p.eval(x) * p.eval(y),
            KernelRepr::FiniteRank(terms) => terms
                .iter()
                .map(|(lam, f)| lam * f.eval(x, 0) * f.eval(y, 0))
                .sum(),
        }
    }

    /// Left-limit evaluation: agrees with `eval_point` for continuous
    /// kernels, and returns the value of cell `k` at its right endpoint for
    /// step-based ones.
    #[inline]
    pub(crate) fn eval_left(&self, x: f64, y: f64) -> f64 {
        match &self.repr {
            KernelRepr::GridEvaluable { f, .. } => f(x, y),
            KernelRepr::Blockwise { m, values } => {
                values[left_cell_index(x, *m) * m + left_cell_index(y, *m)]
            }
            KernelRepr::Separable(p) => p.eval_left(x) * p.eval_left(y),
            KernelRepr::FiniteRank(terms) => terms
                .iter()
                .map(|(lam, f)| lam * f.eval_left(x, 0) * f.eval_left(y, 0))
                .sum(),
        }
    }

    /// Guaranteed upper bound on `|W|`.
    pub fn sup_bound(&self) -> f64 {
        let b = match &self.repr {
            KernelRepr::GridEvaluable { sup, .. } => *sup,
            KernelRepr::Blockwise { values, .. } => {
                values.iter().fold(0.0, |m: f64, v| m.max(v.abs()))
            }
            KernelRepr::Separable(p) => p.sup_bound().powi(2),
            KernelRepr::FiniteRank(terms) => terms
                .iter()
                .map(|(lam, f)| {
                    lam.abs() * f.values().iter().fold(0.0, |m: f64, v| m.max(v * v))
                })
                .sum(),
        };
        match self.class {
            KernelClass::Graphon => b.min(1.0),
            KernelClass::Signed => b,
        }
    }

    /// Lipschitz constant in the sense
    /// `|W(x,y) - W(x',y')| <= L max(|x-x'|, |y-y'|)`, so that `delta_M <= L / M`.
    pub fn lipschitz_bound(&self) -> Option<f64> {
        match &self.repr {
            KernelRepr::GridEvaluable { lipschitz, .. } => *lipschitz,
            KernelRepr::Blockwise { m, values } => {
                (*m == 1 || values.windows(2).all(|w| w[0] == w[1])).then_some(0.0)
            }
            KernelRepr::Separable(p) => p.derivative_bound().map(|d| 2.0 * d * p.sup_bound()),
            KernelRepr::FiniteRank(_) => None,
        }
    }

    /// Grid on which the kernel is blockwise constant, if any.
    pub fn native_grid(&self) -> Option<usize> {
        match &self.repr {
            KernelRepr::Blockwise { m, .. } => Some(*m),
            KernelRepr::Separable(Profile::Step(s)) => Some(s.grid_size()),
            KernelRepr::FiniteRank(terms) => {
                Some(terms.iter().map(|(_, f)| f.grid_size()).fold(1, crate::step::lcm))
            }
            _ => None,
        }
    }

    /// Cell values sampled at the given point of each cell of an `m x m` grid,
    /// row-major.
    pub fn sample_matrix(&self, m: usize, at: SamplePoint) -> Vec<f64> {
        let pts: Vec<f64> = (1..=m)
            .map(|k| match at {
                SamplePoint::RightEndpoint => k as f64 / m as f64,
                SamplePoint::Midpoint => (k as f64 - 0.5) / m as f64,
            })
            .collect();
        let mut out = vec![0.0; m * m];
        for k in 0..m {
            for l in k..m {
                let v = match at {
                    SamplePoint::RightEndpoint => self.eval_left(pts[k], pts[l]),
                    SamplePoint::Midpoint => self.eval_point(pts[k], pts[l]),
                };
                out[k * m + l] = v;
                out[l * m + k] = v;
            }
        }
        out
    }

    /// Blockwise `W^(M)` with cell `(k,l)` equal to `W(k/M, l/M)`.
    pub fn discretize(&self, m: usize) -> Result<GraphonKernel> {
        self.discretize_at(m, SamplePoint::RightEndpoint)
    }

    pub fn discretize_at(&self, m: usize, at: SamplePoint) -> Result<GraphonKernel> {
        if m == 0 {
            return Err(Error::domain("discretization grid must be positive"));
        }
        Ok(GraphonKernel {
            repr: KernelRepr::Blockwise {
                m,
                values: self.sample_matrix(m, at),
            },
            class: self.class,
        })
    }

    /// Max of `|W^(M) - W|` over the probe points `i/P`, `0 <= i <= P`.
    /// A lower bound on the true supremum, nondecreasing along `P | P'`.
    pub fn delta_m(&self, m: usize, probe: usize) -> Result<f64> {
        if probe < m {
            return Err(Error::domain(format!(
                "probe grid {probe} must be at least the discretization grid {m}"
            )));
        }
        let disc = self.sample_matrix(m, SamplePoint::RightEndpoint);
        let pts: Vec<f64> = (0..=probe).map(|i| i as f64 / probe as f64).collect();
        let cells: Vec<usize> = pts.iter().map(|&x| cell_index(x, m)).collect();
        let mut worst: f64 = 0.0;
        for (i, &x) in pts.iter().enumerate() {
            for (j, &y) in pts.iter().enumerate().skip(i) {
                let d = (disc[cells[i] * m + cells[j]] - self.eval_point(x, y)).abs();
                worst = worst.max(d);
            }
        }
        Ok(worst)
    }

    /// Midpoint-quadrature approximation of `(W f)` on a grid of `quad_m` cells.
    ///
    /// Exact when the kernel is blockwise constant on a grid that `quad_m`
    /// refines (and `f` is any step function), or when the kernel is separable
    /// or finite-rank with step-function factors.
    pub fn apply(&self, f: &StepFunction, quad_m: usize) -> Result<StepFunction> {
        if quad_m == 0 {
            return Err(Error::domain("quadrature grid must be positive"));
        }
        let fm = f.grid_size();
        if !fm.is_multiple_of(quad_m) && !quad_m.is_multiple_of(fm) {
            return Err(Error::GridMismatch(format!(
                "function grid {fm} and quadrature grid {quad_m} do not nest"
            )));
        }
        let s = f.n_components();
        let xs: Vec<f64> = (0..quad_m)
            .map(|k| (k as f64 + 0.5) / quad_m as f64)
            .collect();
        let mut out = vec![0.0; quad_m * s];
        match &self.repr {
            KernelRepr::Blockwise { m, values } => {
                let m = *m;
                // Integral of f over each kernel column cell.
                let col = f.project(m)?;
                let w = 1.0 / m as f64;
                for (k, &x) in xs.iter().enumerate() {
                    let row = &values[cell_index(x, m) * m..(cell_index(x, m) + 1) * m];
                    for (c, &wv) in row.iter().enumerate() {
                        if wv != 0.0 {
                            for comp in 0..s {
                                out[k * s + comp] += wv * w * col.value(c, comp);
                            }
                        }
                    }
                }
            }
            KernelRepr::Separable(p) => {
                let inner: Vec<f64> = match p {
                    Profile::Step(phi) => (0..s).map(|c| step_inner(phi, 0, f, c)).collect(),
                    _ => {
                        let l = fm.max(quad_m);
                        let g = f.refine(l / fm)?;
                        (0..s)
                            .map(|c| {
                                (0..l)
                                    .map(|j| p.eval((j as f64 + 0.5) / l as f64) * g.value(j, c))
                                    .sum::<f64>()
                                    / l as f64
                            })
                            .collect()
                    }
                };
                for (k, &x) in xs.iter().enumerate() {
                    let px = p.eval(x);
                    for comp in 0..s {
                        out[k * s + comp] = px * inner[comp];
                    }
                }
            }
            KernelRepr::FiniteRank(terms) => {
                let inners: Vec<Vec<f64>> = terms
                    .iter()
                    .map(|(_, fk)| (0..s).map(|c| step_inner(fk, 0, f, c)).collect())
                    .collect();
                for (k, &x) in xs.iter().enumerate() {
                    for ((lam, fk), inner) in terms.iter().zip(&inners) {
                        let a = lam * fk.eval(x, 0);
                        for comp in 0..s {
                            out[k * s + comp] += a * inner[comp];
                        }
                    }
                }
            }
            KernelRepr::GridEvaluable { f: w, .. } => {
                let l = fm.max(quad_m);
                let g = f.refine(l / fm)?;
                for (k, &x) in xs.iter().enumerate() {
                    for j in 0..l {
                        let wv = w(x, (j as f64 + 0.5) / l as f64) / l as f64;
                        for comp in 0..s {
                            out[k * s + comp] += wv * g.value(j, comp);
                        }
                    }
                }
            }
        }
        StepFunction::new(quad_m, f.labels().to_vec(), out)
    }

    /// Degree function `d_W = W 1` on an `m`-cell grid.
    pub fn degree_function(&self, m: usize) -> Result<StepFunction> {
        if m == 0 {
            return Err(Error::domain("grid size must be positive"));
        }
        self.apply(&StepFunction::scalar_constant(m, 1.0)?, m)
    }

    /// Midpoint values on an `m x m` grid; cell averages are exact for
    /// blockwise kernels whose grid divides `m`.
    pub fn midpoint_matrix(&self, m: usize) -> Vec<f64> {
        self.sample_matrix(m, SamplePoint::Midpoint)
    }

    /// Quadrature grid that makes the kernel norms exact when possible.
    fn norm_grid(&self, m: usize) -> usize {
        match self.native_grid() {
            Some(g) => {
                let m = m.max(1);
                let l = crate::step::lcm(g, m);
                if l <= 4096.max(m) {
                    l
                } else {
                    m
                }
            }
            None => m.max(1),
        }
    }

    /// `||W||_1` by midpoint quadrature.
    pub fn l1_norm(&self, m: usize) -> f64 {
        let g = self.norm_grid(m);
        self.midpoint_matrix(g).iter().map(|v| v.abs()).sum::<f64>() / (g * g) as f64
    }

    /// `||W||_2` by midpoint quadrature.
    pub fn l2_norm(&self, m: usize) -> f64 {
        let g = self.norm_grid(m);
        (self.midpoint_matrix(g).iter().map(|v| v * v).sum::<f64>() / (g * g) as f64).sqrt()
    }

    /// `||W - V||_2` by midpoint quadrature on an `m x m` grid.
    pub fn l2_distance(&self, other: &GraphonKernel, m: usize) -> f64 {
        let a = self.midpoint_matrix(m);
        let b = other.midpoint_matrix(m);
        (a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / (m * m) as f64).sqrt()
    }
}

/// Exact `int_0^1 a_ca(x) b_cb(x) dx` for two step functions on any grids.
pub(crate) fn step_inner(a: &StepFunction, ca: usize, b: &StepFunction, cb: usize) -> f64 {
    let (na, nb) = (a.grid_size(), b.grid_size());
    if na == nb {
        return (0..na).map(|k| a.value(k, ca) * b.value(k, cb)).sum::<f64>() / na as f64;
    }
    // Walk breakpoints on the common grid of size na*nb.
    let total = na * nb;
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0usize);
    let mut acc = 0.0;
    while pos < total {
        let next = ((i + 1) * nb).min((j + 1) * na);
        acc += (next - pos) as f64 * a.value(i, ca) * b.value(j, cb);
        pos = next;
        if pos == (i + 1) * nb {
            i += 1;
        }
        if pos == (j + 1) * na {
            j += 1;
        }
    }
    acc / total as f64
}

/// Serializable kernel description, as accepted in JSON configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Constant {
        p: f64,
    },
    ProductXy,
    Blockwise {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m: Option<usize>,
        values: Vec<f64>,
    },
    SeparablePoly {
        coeffs: Vec<f64>,
    },
    FiniteRank {
        terms: Vec<RankTerm>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTerm {
    pub lambda: f64,
    pub values: Vec<f64>,
}

impl KernelSpec {
    pub fn build(&self) -> Result<GraphonKernel> {
        match self {
            KernelSpec::Constant { p } => GraphonKernel::constant(*p),
            KernelSpec::ProductXy => Ok(GraphonKernel::product_xy()),
            KernelSpec::Blockwise { m, values } => {
                let m = match m {
                    Some(m) => *m,
                    None => {
                        let r = (values.len() as f64).sqrt().round() as usize;
                        if r * r != values.len() {
                            return Err(Error::InvalidKernel(format!(
                                "{} blockwise values do not form a square matrix",
                                values.len()
                            )));
                        }
                        r
                    }
                };
                GraphonKernel::blockwise(m, values.clone())
            }
            KernelSpec::SeparablePoly { coeffs } => {
                GraphonKernel::separable(Profile::Polynomial(coeffs.clone()))
            }
            KernelSpec::FiniteRank { terms } => {
                let terms = terms
                    .iter()
                    .map(|t| Ok((t.lambda, StepFunction::scalar(t.values.clone())?)))
                    .collect::<Result<Vec<_>>>()?;
                // Finite-rank inputs are usually truncations and may leave [0,1].
                GraphonKernel::finite_rank(terms, KernelClass::Signed)
            }
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split([',', ';'])
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number {t:?}: {e}")))
        })
        .collect()
}

impl FromStr for KernelSpec {
    type Err = Error;

    /// Compact forms: `constant:0.5`, `product_xy`, `blockwise:0.8,0.2;0.2,0.8`,
    /// `separable_poly:0,1`; anything starting with `{` is parsed as JSON.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            return Self::from_json(s);
        }
        let (head, rest) = match s.split_once(':') {
            Some((h, r)) => (h, Some(r)),
            None => (s, None),
        };
        let need = |r: Option<&'_ str>| -> Result<String> {
            r.map(str::to_string)
                .ok_or_else(|| Error::Parse(format!("kernel {head:?} needs parameters")))
        };
        match head {
            "constant" => {
                let v = parse_list(&need(rest)?)?;
                match v.as_slice() {
                    [p] => Ok(KernelSpec::Constant { p: *p }),
                    _ => Err(Error::Parse("constant kernel takes one value".into())),
                }
            }
            "product_xy" => Ok(KernelSpec::ProductXy),
            "blockwise" => Ok(KernelSpec::Blockwise {
                m: None,
                values: parse_list(&need(rest)?)?,
            }),
            "separable_poly" => Ok(KernelSpec::SeparablePoly {
                coeffs: parse_list(&need(rest)?)?,
            }),
            other => Err(Error::Parse(format!("unknown kernel type {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_block() -> GraphonKernel {
        GraphonKernel::blockwise(2, vec![0.8, 0.2, 0.2, 0.8]).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        let c = GraphonKernel::constant(0.5).unwrap();
        assert_eq!(c.evaluate(0.3, 0.7).unwrap(), 0.5);
        let xy = GraphonKernel::product_xy();
        assert_eq!(xy.evaluate(0.5, 0.5).unwrap(), 0.25);
        assert_eq!(two_block().evaluate(0.25, 0.75).unwrap(), 0.2);
    }

    #[test]
    fn evaluate_rejects_outside_unit_square() {
        let c = GraphonKernel::constant(0.5).unwrap();
        assert!(matches!(c.evaluate(1.1, 0.5), Err(Error::Domain(_))));
        assert!(matches!(c.evaluate(0.5, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn graphon_range_is_enforced() {
        assert!(GraphonKernel::constant(1.5).is_err());
        assert!(GraphonKernel::blockwise(2, vec![0.5, 0.1, 0.2, 0.5]).is_err());
        assert!(GraphonKernel::separable(Profile::Polynomial(vec![0.0, 2.0])).is_err());
        assert!(GraphonKernel::from_fn("neg", 1.0, None, |x, y| x * y - 0.5).is_err());
        assert!(GraphonKernel::blockwise_signed(1, vec![-3.0]).is_ok());
    }

    #[test]
    fn apply_constant_kernel_averages() {
        let one = GraphonKernel::constant(1.0).unwrap();
        let f = StepFunction::scalar(vec![0.1, 0.3, 0.5, 0.7]).unwrap();
        let g = one.apply(&f, 4).unwrap();
        for k in 0..4 {
            assert!((g.value(k, 0) - 0.4).abs() < 1e-15);
        }
    }

    #[test]
    fn apply_two_block() {
        let f = StepFunction::scalar(vec![1.0, 0.0]).unwrap();
        let g = two_block().apply(&f, 2).unwrap();
        assert!((g.value(0, 0) - 0.4).abs() < 1e-15);
        assert!((g.value(1, 0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn apply_product_xy_to_one() {
        let xy = GraphonKernel::product_xy();
        let d = xy.degree_function(1000).unwrap();
        for k in 0..1000 {
            let x = (k as f64 + 0.5) / 1000.0;
            assert!((d.value(k, 0) - x / 2.0).abs() <= 1e-3);
        }
        let e = GraphonKernel::from_fn("xy", 1.0, Some(2.0), |x, y| x * y).unwrap();
        let d2 = e.degree_function(1000).unwrap();
        for k in 0..1000 {
            let x = (k as f64 + 0.5) / 1000.0;
            assert!((d2.value(k, 0) - x / 2.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn apply_rejects_bad_grids() {
        let f = StepFunction::scalar(vec![1.0; 3]).unwrap();
        let k = GraphonKernel::constant(0.5).unwrap();
        assert!(k.apply(&f, 0).is_err());
        assert!(matches!(k.apply(&f, 4), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn blockwise_apply_exact_on_refined_grid() {
        let f = StepFunction::scalar(vec![0.3, 0.9, 0.1]).unwrap();
        let k = two_block();
        // Column integrals of f over [0,1/2) and [1/2,1).
        let left = (0.3 + 0.9 * 0.5) / 3.0;
        let right = (0.9 * 0.5 + 0.1) / 3.0;
        let g = k.apply(&f, 6).unwrap();
        for c in 0..6 {
            let row = if c < 3 { [0.8, 0.2] } else { [0.2, 0.8] };
            let want = row[0] * left + row[1] * right;
            assert!((g.value(c, 0) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn discretize_examples() {
        let c = GraphonKernel::constant(0.3).unwrap().discretize(4).unwrap();
        match c.repr() {
            KernelRepr::Blockwise { m, values } => {
                assert_eq!(*m, 4);
                assert!(values.iter().all(|&v| v == 0.3));
            }
            _ => panic!("expected blockwise"),
        }
        let xy = GraphonKernel::product_xy().discretize(2).unwrap();
        match xy.repr() {
            KernelRepr::Blockwise { values, .. } => {
                assert_eq!(values, &vec![0.25, 0.5, 0.5, 1.0]);
            }
            _ => panic!("expected blockwise"),
        }
    }

    #[test]
    fn discretize_is_idempotent_on_blockwise() {
        let k = two_block();
        let d = k.discretize(2).unwrap();
        match d.repr() {
            KernelRepr::Blockwise { values, .. } => assert_eq!(values, &vec![0.8, 0.2, 0.2, 0.8]),
            _ => unreachable!(),
        }
        let d4 = k.discretize(4).unwrap();
        assert_eq!(d4.discretize(4).unwrap().sample_matrix(4, SamplePoint::RightEndpoint),
                   d4.sample_matrix(4, SamplePoint::RightEndpoint));
        assert_eq!(k.delta_m(2, 20).unwrap(), 0.0);
    }

    #[test]
    fn discretization_error_within_lipschitz_bound() {
        let xy = GraphonKernel::product_xy();
        let lw = xy.lipschitz_bound().unwrap();
        assert_eq!(lw, 2.0);
        for m in [5, 10, 20] {
            assert!(xy.delta_m(m, 10 * m).unwrap() <= lw / m as f64 + 1e-12);
        }
    }

    #[test]
    fn delta_m_of_product_xy() {
        // Grid-max oracle: the worst cell is the top-right one, probed at its
        // lower-left corner, giving (2M - 1) / M^2.
        let xy = GraphonKernel::product_xy();
        let d = xy.delta_m(10, 1000).unwrap();
        assert!((d - 0.19).abs() < 1e-12, "{d}");
        assert!(d > 0.0 && d <= 0.2);
        assert_eq!(GraphonKernel::constant(0.7).unwrap().delta_m(7, 70).unwrap(), 0.0);
    }

    #[test]
    fn delta_m_rejects_coarse_probe() {
        assert!(GraphonKernel::product_xy().delta_m(10, 5).is_err());
    }

    #[test]
    fn delta_m_monotone_along_nested_probes() {
        let k = GraphonKernel::from_fn("bump", 1.0, None, |x, y| (x * y * 3.0).sin().abs())
            .unwrap();
        let mut prev = 0.0;
        for p in [8, 16, 32, 64, 128] {
            let d = k.delta_m(8, p).unwrap();
            assert!(d >= prev);
            prev = d;
        }
    }

    #[test]
    fn norm_chain_for_graphons() {
        for k in [
            GraphonKernel::constant(0.4).unwrap(),
            two_block(),
            GraphonKernel::product_xy(),
            GraphonKernel::from_fn("exp", 1.0, None, |x, y| (-(x - y).abs()).exp()).unwrap(),
        ] {
            let l1 = k.l1_norm(200);
            let l2 = k.l2_norm(200);
            assert!(l1 <= l2 + 1e-12, "{k:?}");
            assert!(l2 <= l1.sqrt() + 1e-12, "{k:?}");
            assert!(l1.sqrt() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(
            "constant:0.5".parse::<KernelSpec>().unwrap(),
            KernelSpec::Constant { p: 0.5 }
        );
        let b: KernelSpec = "blockwise:0.8,0.2;0.2,0.8".parse().unwrap();
        let k = b.build().unwrap();
        assert_eq!(k.evaluate(0.1, 0.9).unwrap(), 0.2);
        let j: KernelSpec =
            serde_json::from_str(r#"{"type":"separable_poly","coeffs":[0,1]}"#).unwrap();
        assert_eq!(j.build().unwrap().evaluate(0.5, 0.5).unwrap(), 0.25);
        assert!("blockwise:1,2,3".parse::<KernelSpec>().unwrap().build().is_err());
        assert!("nonsense:1".parse::<KernelSpec>().is_err());
    }

    #[test]
    fn step_inner_across_grids() {
        let a = StepFunction::scalar(vec![1.0, 2.0]).unwrap();
        let b = StepFunction::scalar(vec![3.0, 0.0, 6.0]).unwrap();
        // a*b on [0,1/3): 3, [1/3,1/2): 0, [1/2,2/3): 0, [2/3,1]: 12
        let want = 3.0 / 3.0 + 12.0 / 3.0;
        assert!((step_inner(&a, 0, &b, 0) - want).abs() < 1e-15);
    }
}
