//! The `M`-cell mean-field system
//! `d/dt v_k = Q((1/M) sum_l W_kl v_l) v_k`, integrated with classical RK4,
//! and the closed-form SIS equilibrium for separable kernels.

use serde::{Deserialize, Serialize};

use crate::dynamics::RateModel;
use crate::error::{Error, Result};
use crate::kernels::{GraphonKernel, KernelRepr, SamplePoint};
use crate::step::StepFunction;

/// Tolerance on the initial profile's simplex membership.
const INITIAL_SIMPLEX_TOL: f64 = 1e-9;

/// Discretized right-hand side with its kernel matrix.
struct System<'a> {
    m: usize,
    s: usize,
    matrix: Vec<f64>,
    model: &'a RateModel,
    used: Vec<usize>,
    phi: Vec<f64>,
}

impl<'a> System<'a> {
    fn new(m: usize, matrix: Vec<f64>, model: &'a RateModel) -> Self {
        let s = model.n_states();
        System {
            m,
            s,
            matrix,
            model,
            used: (0..s).filter(|&r| model.uses_env(r)).collect(),
            phi: vec![0.0; m * s],
        }
    }

    fn eval(&mut self, v: &[f64], out: &mut [f64]) {
        let (m, s) = (self.m, self.s);
        let inv_m = 1.0 / m as f64;
        self.phi.iter_mut().for_each(|p| *p = 0.0);
        for &r in &self.used {
            for k in 0..m {
                let row = &self.matrix[k * m..(k + 1) * m];
                let mut acc = 0.0;
                for (l, w) in row.iter().enumerate() {
                    acc += w * v[l * s + r];
                }
                self.phi[k * s + r] = acc * inv_m;
            }
        }
        for k in 0..m {
            self.model.apply_generator(
                &self.phi[k * s..(k + 1) * s],
                &v[k * s..(k + 1) * s],
                &mut out[k * s..(k + 1) * s],
            );
        }
    }
}

fn check_model_labels(model: &RateModel, v: &StepFunction) -> Result<()> {
    if v.n_components() != model.n_states() {
        return Err(Error::GridMismatch(format!(
            "profile has {} components, model has {} states",
            v.n_components(),
            model.n_states()
        )));
    }
    Ok(())
}

/// `Q(W^(M) v) v` cellwise for a blockwise kernel on the grid of `v`.
pub fn rhs(kernel_disc: &GraphonKernel, model: &RateModel, v: &StepFunction) -> Result<StepFunction> {
    check_model_labels(model, v)?;
    let m = v.grid_size();
    let matrix = match kernel_disc.repr() {
        KernelRepr::Blockwise { m: km, values } if *km == m => values.clone(),
        KernelRepr::Blockwise { m: km, .. } => {
            return Err(Error::GridMismatch(format!(
                "kernel grid {km} differs from profile grid {m}"
            )))
        }
        _ => {
            return Err(Error::GridMismatch(
                "rhs expects a kernel discretized on the profile grid".into(),
            ))
        }
    };
    let mut sys = System::new(m, matrix, model);
    let mut out = vec![0.0; v.values().len()];
    sys.eval(v.values(), &mut out);
    StepFunction::new(m, v.labels().to_vec(), out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldSolution {
    pub grid_size: usize,
    pub labels: Vec<String>,
    pub times: Vec<f64>,
    pub values: Vec<StepFunction>,
    /// Largest per-cell `|sum_s v_s - 1|` over every integration step.
    pub max_sum_drift: f64,
    /// Smallest component over every integration step.
    pub min_component: f64,
}

impl MeanFieldSolution {
    pub fn final_state(&self) -> &StepFunction {
        self.values.last().expect("solution has at least one record")
    }

    /// Spatial mean of component `c` at every recorded time.
    pub fn means(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|v| v.integral(c)).collect()
    }

    /// Whether every step stayed within `tol` of the simplex.
    pub fn within_simplex(&self, tol: f64) -> bool {
        self.max_sum_drift <= tol && self.min_component >= -tol
    }
}

/// Integration parameters for [`solve`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    pub m: usize,
    pub dt: f64,
    pub t_end: f64,
    /// Recording cadence; must be a whole multiple of `dt`. `None` records
    /// only the initial and final states.
    pub record_dt: Option<f64>,
}

impl SolverSettings {
    pub fn new(m: usize, dt: f64, t_end: f64) -> Self {
        SolverSettings {
            m,
            dt,
            t_end,
            record_dt: None,
        }
    }

    pub fn record_every(mut self, record_dt: f64) -> Self {
        self.record_dt = Some(record_dt);
        self
    }
}

/// Integrate the discretized mean-field system from the cell averages of `u0`.
///
/// The kernel enters through its values at cell midpoints. Steps have length
/// `dt`; a final shorter step lands exactly on `t_end` when `dt` does not
/// divide it.
pub fn solve(
    kernel: &GraphonKernel,
    model: &RateModel,
    u0: &StepFunction,
    settings: SolverSettings,
) -> Result<MeanFieldSolution> {
    let SolverSettings {
        m,
        dt,
        t_end,
        record_dt,
    } = settings;
    if m == 0 {
        return Err(Error::domain("grid size must be positive"));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::domain(format!("T must be positive, got {t_end}")));
    }
    check_model_labels(model, u0)?;
    if !u0.in_simplex(INITIAL_SIMPLEX_TOL) {
        return Err(Error::InvalidInitialCondition(
            "initial profile leaves the simplex".into(),
        ));
    }
    let n_full = ((t_end / dt) * (1.0 + 1e-12)).floor() as usize;
    let tail = t_end - n_full as f64 * dt;
    let tail = if tail > 1e-12 * dt.max(t_end) { tail } else { 0.0 };
    let every = match record_dt {
        Some(r) => {
            let ratio = r / dt;
            let k = ratio.round();
            if !(r > 0.0) || k < 1.0 || (ratio - k).abs() > 1e-9 * ratio {
                return Err(Error::domain(format!(
                    "record interval {r} is not a whole multiple of dt = {dt}"
                )));
            }
            Some(k as usize)
        }
        None => None,
    };

    let init = u0.project(m)?;
    let labels = init.labels().to_vec();
    let mut sys = System::new(m, kernel.sample_matrix(m, SamplePoint::Midpoint), model);
    let len = m * sys.s;
    let mut v = init.values().to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
    );

    let (mut drift, mut min_c) = init.simplex_drift();
    let mut times = vec![0.0];
    let mut values = vec![init];
    let n_steps = n_full + usize::from(tail > 0.0);
    for step in 0..n_steps {
        let h = if step < n_full { dt } else { tail };
        sys.eval(&v, &mut k1);
        for i in 0..len {
            tmp[i] = v[i] + 0.5 * h * k1[i];
        }
        sys.eval(&tmp, &mut k2);
        for i in 0..len {
            tmp[i] = v[i] + 0.5 * h * k2[i];
        }
        sys.eval(&tmp, &mut k3);
        for i in 0..len {
            tmp[i] = v[i] + h * k3[i];
        }
        sys.eval(&tmp, &mut k4);
        for i in 0..len {
            v[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "mean-field state became non-finite at step {}",
                step + 1
            )));
        }
        for cell in v.chunks_exact(sys.s) {
            drift = drift.max((cell.iter().sum::<f64>() - 1.0).abs());
            for &c in cell {
                min_c = min_c.min(c);
            }
        }

        let done = step + 1;
        let last = done == n_steps;
        let due = every.is_some_and(|e| done % e == 0 && done <= n_full);
        if due || last {
            let t = if done <= n_full {
                done as f64 * dt
            } else {
                t_end
            };
            times.push(t);
            values.push(StepFunction::new(m, labels.clone(), v.clone())?);
        }
    }
    Ok(MeanFieldSolution {
        grid_size: m,
        labels,
        times,
        values,
        max_sum_drift: drift,
        min_component: min_c,
    })
}

/// SIS profile `(1 - p(x), p(x))` on a grid of `m` cells, cell-averaged.
pub fn sis_profile(m: usize, infected: impl Fn(f64) -> f64) -> Result<StepFunction> {
    StepFunction::from_fn_averaged(m, vec!["S".into(), "I".into()], 16, |x| {
        let p = infected(x);
        vec![1.0 - p, p]
    })
}

/// Outcome of the separable SIS equilibrium computation.
#[derive(Clone, Debug, PartialEq)]
pub enum Equilibrium {
    /// `g*(x) = beta phi(x) k / (1 + beta phi(x) k)` on the quadrature grid.
    Endemic { k: f64, g: StepFunction },
    DieOut,
}

impl Equilibrium {
    /// `int g*`, zero on die-out.
    pub fn prevalence(&self) -> f64 {
        match self {
            Equilibrium::Endemic { g, .. } => g.integral(0),
            Equilibrium::DieOut => 0.0,
        }
    }
}

const BISECTION_CAP: usize = 400;

/// Endemic equilibrium of SIS on `W(x,y) = phi(x) phi(y)`.
///
/// `k` solves `1 = int beta phi^2 / (1 + beta phi k)` using midpoint
/// quadrature on `quad_m` points; the right side is strictly decreasing in
/// `k`, so bisection converges whenever `beta ||phi||_2^2 > 1`.
pub fn sis_equilibrium_separable(
    phi: impl Fn(f64) -> f64,
    beta: f64,
    quad_m: usize,
    tol: f64,
) -> Result<Equilibrium> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::domain(format!("beta must be positive, got {beta}")));
    }
    if quad_m == 0 || !(tol > 0.0) {
        return Err(Error::domain("quadrature grid and tolerance must be positive"));
    }
    let xs: Vec<f64> = (0..quad_m)
        .map(|i| phi((i as f64 + 0.5) / quad_m as f64))
        .collect();
    if let Some(bad) = xs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(Error::domain(format!("phi must be finite and nonnegative, got {bad}")));
    }
    let h = 1.0 / quad_m as f64;
    let residual = |k: f64| -> f64 {
        xs.iter()
            .map(|&p| beta * p * p / (1.0 + beta * p * k))
            .sum::<f64>()
            * h
            - 1.0
    };
    if residual(0.0) <= 0.0 {
        return Ok(Equilibrium::DieOut);
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut n = 0;
    while residual(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        n += 1;
        if n > 200 {
            return Err(Error::Numerical("could not bracket the equilibrium".into()));
        }
    }
    let mut k = 0.5 * (lo + hi);
    let mut converged = false;
    for _ in 0..BISECTION_CAP {
        k = 0.5 * (lo + hi);
        let r = residual(k);
        if r.abs() < tol || hi - lo <= f64::EPSILON * hi {
            converged = true;
            break;
        }
        if r > 0.0 {
            lo = k;
        } else {
            hi = k;
        }
    }
    if !converged {
        return Err(Error::Numerical("bisection did not converge".into()));
    }
    let g = StepFunction::new(
        quad_m,
        vec!["I".into()],
        xs.iter()
            .map(|&p| beta * p * k / (1.0 + beta * p * k))
            .collect(),
    )?;
    Ok(Equilibrium::Endemic { k, g })
}

/// `int u_I(T)` for SIS started from `u_I(0) = initial` everywhere.
pub fn long_run_prevalence(
    kernel: &GraphonKernel,
    beta: f64,
    initial: f64,
    settings: SolverSettings,
) -> Result<f64> {
    let model = RateModel::sis(beta)?;
    let u0 = StepFunction::constant(1, vec!["S".into(), "I".into()], &[1.0 - initial, initial])?;
    let sol = solve(kernel, &model, &u0, SolverSettings { record_dt: None, ..settings })?;
    Ok(sol.final_state().integral(1))
}
