//! Vector-valued step functions on the uniform grid `I_k = [k/M, (k+1)/M)` of `[0,1]`.
//!
//! A `StepFunction` stores `M` cells times `|S|` components in row-major order
//! (cell-major). It carries the empirical state profile of a simulation, the
//! cell values of the mean-field solver and scalar profiles such as degree
//! functions or eigenfunctions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Snap `x * m` to an integer when it is within rounding distance of one.
fn scaled(x: f64, m: usize) -> f64 {
    let t = x * m as f64;
    let r = t.round();
    if (t - r).abs() <= 1e-9 * t.abs().max(1.0) {
        r
    } else {
        t
    }
}

/// Index of the half-open cell containing `x`; `x = 1` maps to the last cell.
pub fn cell_index(x: f64, m: usize) -> usize {
    let t = scaled(x, m).floor();
    if t <= 0.0 {
        0
    } else {
        (t as usize).min(m - 1)
    }
}

/// Index of the cell whose closure contains `x` from the left, so that the
/// right endpoint `(k+1)/M` maps to cell `k`. This is the value a step
/// function takes as a left limit, and matches sampling a kernel at `k/M`
/// with one-based cells.
pub fn left_cell_index(x: f64, m: usize) -> usize {
    let t = scaled(x, m).ceil();
    if t <= 1.0 {
        0
    } else {
        (t as usize - 1).min(m - 1)
    }
}

pub(crate) fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

pub(crate) fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    grid: usize,
    labels: Vec<String>,
    values: Vec<f64>,
}

impl StepFunction {
    pub fn new(grid: usize, labels: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if grid == 0 {
            return Err(Error::domain("step function grid size must be positive"));
        }
        if labels.is_empty() {
            return Err(Error::domain("step function needs at least one component"));
        }
        if values.len() != grid * labels.len() {
            return Err(Error::domain(format!(
                "expected {} values for {} cells x {} components, got {}",
                grid * labels.len(),
                grid,
                labels.len(),
                values.len()
            )));
        }
        Ok(Self {
            grid,
            labels,
            values,
        })
    }

    /// Scalar step function with one value per cell.
    pub fn scalar(values: Vec<f64>) -> Result<Self> {
        Self::new(values.len(), vec!["value".to_string()], values)
    }

    pub fn zeros(grid: usize, labels: Vec<String>) -> Result<Self> {
        let n = grid * labels.len();
        Self::new(grid, labels, vec![0.0; n])
    }

    /// Same vector `cell` in every cell.
    pub fn constant(grid: usize, labels: Vec<String>, cell: &[f64]) -> Result<Self> {
        if cell.len() != labels.len() {
            return Err(Error::domain("cell vector length differs from label count"));
        }
        let values = (0..grid).flat_map(|_| cell.iter().copied()).collect();
        Self::new(grid, labels, values)
    }

    pub fn scalar_constant(grid: usize, value: f64) -> Result<Self> {
        Self::scalar(vec![value; grid])
    }

    /// Scalar function sampled at cell midpoints.
    pub fn scalar_from_midpoints(grid: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::scalar(
            (0..grid)
                .map(|k| f((k as f64 + 0.5) / grid as f64))
                .collect(),
        )
    }

    /// Vector function whose cell values are averages of `f` over `sub`
    /// midpoint subcells per cell.
    pub fn from_fn_averaged(
        grid: usize,
        labels: Vec<String>,
        sub: usize,
        f: impl Fn(f64) -> Vec<f64>,
    ) -> Result<Self> {
        let s = labels.len();
        let sub = sub.max(1);
        let mut values = vec![0.0; grid * s];
        let fine = (grid * sub) as f64;
        for k in 0..grid {
            for j in 0..sub {
                let x = ((k * sub + j) as f64 + 0.5) / fine;
                let v = f(x);
                if v.len() != s {
                    return Err(Error::domain("function returned wrong component count"));
                }
                for (acc, vi) in values[k * s..(k + 1) * s].iter_mut().zip(v) {
                    *acc += vi / sub as f64;
                }
            }
        }
        Self::new(grid, labels, values)
    }

    pub fn grid_size(&self) -> usize {
        self.grid
    }

    pub fn n_components(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        let s = self.labels.len();
        &self.values[k * s..(k + 1) * s]
    }

    pub fn value(&self, k: usize, comp: usize) -> f64 {
        self.values[k * self.labels.len() + comp]
    }

    pub fn component_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Value at `x` using half-open cells.
    pub fn eval(&self, x: f64, comp: usize) -> f64 {
        self.value(cell_index(x, self.grid), comp)
    }

    /// Left-limit value at `x` (see [`left_cell_index`]).
    pub fn eval_left(&self, x: f64, comp: usize) -> f64 {
        self.value(left_cell_index(x, self.grid), comp)
    }

    /// Scalar step function holding one component.
    pub fn component(&self, comp: usize) -> StepFunction {
        let s = self.labels.len();
        StepFunction {
            grid: self.grid,
            labels: vec![self.labels[comp].clone()],
            values: (0..self.grid).map(|k| self.values[k * s + comp]).collect(),
        }
    }

    /// Integral of one component over `[0,1]`, i.e. the mean of its cell values.
    pub fn integral(&self, comp: usize) -> f64 {
        let s = self.labels.len();
        (0..self.grid).map(|k| self.values[k * s + comp]).sum::<f64>() / self.grid as f64
    }

    pub fn integrals(&self) -> Vec<f64> {
        (0..self.n_components()).map(|c| self.integral(c)).collect()
    }

    /// Same function on a grid `factor` times finer.
    pub fn refine(&self, factor: usize) -> Result<StepFunction> {
        if factor == 0 {
            return Err(Error::domain("refinement factor must be positive"));
        }
        let s = self.labels.len();
        let mut values = Vec::with_capacity(self.values.len() * factor);
        for k in 0..self.grid {
            for _ in 0..factor {
                values.extend_from_slice(self.cell(k));
            }
        }
        debug_assert_eq!(values.len(), self.grid * factor * s);
        Ok(StepFunction {
            grid: self.grid * factor,
            labels: self.labels.clone(),
            values,
        })
    }

    /// Exact cell averages on an arbitrary grid of size `m` (overlap-weighted).
    pub fn project(&self, m: usize) -> Result<StepFunction> {
        if m == 0 {
            return Err(Error::domain("target grid size must be positive"));
        }
        let s = self.labels.len();
        let n = self.grid;
        let mut values = vec![0.0; m * s];
        if n.is_multiple_of(m) {
            let r = n / m;
            for k in 0..m {
                let out = &mut values[k * s..(k + 1) * s];
                for i in k * r..(k + 1) * r {
                    for (o, v) in out.iter_mut().zip(&self.values[i * s..(i + 1) * s]) {
                        *o += v;
                    }
                }
                for o in out.iter_mut() {
                    *o /= r as f64;
                }
            }
        } else {
            // Breakpoints on the common grid of size n*m: source cell i spans
            // [i*m, (i+1)*m), target cell k spans [k*n, (k+1)*n).
            let mut i = 0usize;
            let mut k = 0usize;
            let mut pos = 0usize;
            let total = n * m;
            while pos < total {
                let next = ((i + 1) * m).min((k + 1) * n);
                let w = (next - pos) as f64 / n as f64;
                for c in 0..s {
                    values[k * s + c] += w * self.values[i * s + c];
                }
                pos = next;
                if pos == (i + 1) * m {
                    i += 1;
                }
                if pos == (k + 1) * n {
                    k += 1;
                }
            }
        }
        Ok(StepFunction {
            grid: m,
            labels: self.labels.clone(),
            values,
        })
    }

    fn check_compatible(&self, other: &StepFunction) -> Result<()> {
        if self.grid != other.grid || self.labels.len() != other.labels.len() {
            return Err(Error::GridMismatch(format!(
                "{}x{} vs {}x{}",
                self.grid,
                self.labels.len(),
                other.grid,
                other.labels.len()
            )));
        }
        Ok(())
    }

    /// Cellwise `a*self + b*other` on matching grids.
    pub fn axpby(&self, a: f64, other: &StepFunction, b: f64) -> Result<StepFunction> {
        self.check_compatible(other)?;
        Ok(StepFunction {
            grid: self.grid,
            labels: self.labels.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn sub(&self, other: &StepFunction) -> Result<StepFunction> {
        self.axpby(1.0, other, -1.0)
    }

    pub fn scale(&self, a: f64) -> StepFunction {
        StepFunction {
            grid: self.grid,
            labels: self.labels.clone(),
            values: self.values.iter().map(|v| a * v).collect(),
        }
    }

    /// Largest per-cell deviation of the component sum from one and the
    /// smallest component value: the two simplex-drift statistics.
    pub fn simplex_drift(&self) -> (f64, f64) {
        let mut sum_dev: f64 = 0.0;
        let mut min_val = f64::INFINITY;
        for k in 0..self.grid {
            let cell = self.cell(k);
            sum_dev = sum_dev.max((cell.iter().sum::<f64>() - 1.0).abs());
            for &v in cell {
                min_val = min_val.min(v);
            }
        }
        (sum_dev, min_val)
    }

    pub fn in_simplex(&self, tol: f64) -> bool {
        let (dev, min) = self.simplex_drift();
        dev <= tol && min >= -tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_conventions() {
        assert_eq!(cell_index(0.0, 4), 0);
        assert_eq!(cell_index(0.25, 4), 1);
        assert_eq!(cell_index(1.0, 4), 3);
        assert_eq!(left_cell_index(0.25, 4), 0);
        assert_eq!(left_cell_index(0.0, 4), 0);
        assert_eq!(left_cell_index(1.0, 4), 3);
        // i/N with N = 8000, M = 20: the first 400 vertices fall into box 0.
        for i in 1..=400 {
            assert_eq!(left_cell_index(i as f64 / 8000.0, 20), 0);
        }
        assert_eq!(left_cell_index(401.0 / 8000.0, 20), 1);
    }

    #[test]
    fn shape_is_checked() {
        assert!(StepFunction::new(3, vec!["a".into()], vec![1.0, 2.0]).is_err());
        assert!(StepFunction::new(0, vec!["a".into()], vec![]).is_err());
    }

    #[test]
    fn integral_is_cell_mean() {
        let f = StepFunction::scalar(vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(f.integral(0), 3.0);
    }

    #[test]
    fn projection_preserves_integral() {
        let f = StepFunction::scalar((0..7).map(|i| (i * i) as f64).collect()).unwrap();
        for m in [1, 2, 3, 5, 7, 14] {
            let g = f.project(m).unwrap();
            assert!((g.integral(0) - f.integral(0)).abs() < 1e-12, "m = {m}");
        }
        let g = f.project(14).unwrap();
        assert_eq!(g.value(0, 0), 0.0);
        assert_eq!(g.value(13, 0), 36.0);
    }

    #[test]
    fn refine_then_project_roundtrips() {
        let f = StepFunction::new(
            3,
            vec!["S".into(), "I".into()],
            vec![0.1, 0.9, 0.5, 0.5, 0.7, 0.3],
        )
        .unwrap();
        let back = f.refine(4).unwrap().project(3).unwrap();
        for (a, b) in f.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
