//! Norms and distances used to compare stochastic and deterministic paths.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::kernels::GraphonKernel;
use crate::meanfield::MeanFieldSolution;
use crate::step::{lcm, StepFunction};

/// Largest `|int_a^b f|` over grid-aligned intervals, from raw cell values.
/// Prefix sums are kept unscaled and the width `1/M` applied once at the end.
fn prefix_range(cells: impl Iterator<Item = f64>, m: usize) -> f64 {
    let (mut acc, mut hi, mut lo) = (0.0f64, 0.0f64, 0.0f64);
    for v in cells {
        acc += v;
        hi = hi.max(acc);
        lo = lo.min(acc);
    }
    (hi - lo) / m as f64
}

/// `||f||_I = sum_s sup_I |int_I f_s|`.
///
/// For a step function the prefix integral is piecewise linear with kinks at
/// grid points, so the supremum over all intervals is the range of the prefix
/// sums over `j = 0..M`.
pub fn interval_norm(f: &StepFunction) -> f64 {
    let m = f.grid_size();
    (0..f.n_components())
        .map(|c| prefix_range((0..m).map(|k| f.value(k, c)), m))
        .sum()
}

/// `||f||_1` summed over components.
pub fn l1_norm(f: &StepFunction) -> f64 {
    f.values().iter().map(|v| v.abs()).sum::<f64>() / f.grid_size() as f64
}

/// `||f - g||_1` summed over components, exact on the common refinement.
pub fn l1_distance(f: &StepFunction, g: &StepFunction) -> Result<f64> {
    let s = f.n_components();
    if g.n_components() != s {
        return Err(Error::GridMismatch(format!(
            "{s} components vs {}",
            g.n_components()
        )));
    }
    let (mf, mg) = (f.grid_size(), g.grid_size());
    if mf == mg {
        return Ok(f
            .values()
            .iter()
            .zip(g.values())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / mf as f64);
    }
    // Walk the merged breakpoints on the integer grid of size lcm(mf, mg).
    let total = lcm(mf, mg);
    let (rf, rg) = (total / mf, total / mg);
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0usize);
    let mut acc = 0.0;
    while pos < total {
        let next = ((i + 1) * rf).min((j + 1) * rg);
        let w = (next - pos) as f64 / total as f64;
        for c in 0..s {
            acc += w * (f.value(i, c) - g.value(j, c)).abs();
        }
        pos = next;
        if pos == (i + 1) * rf {
            i += 1;
        }
        if pos == (j + 1) * rg {
            j += 1;
        }
    }
    Ok(acc)
}

/// `max |int_{S x T} W|` over intervals `S, T` aligned to an `m`-grid, with
/// cell integrals from midpoint values. A lower bound on the cut norm.
///
/// Fixing a row interval reduces the column search to an interval norm of
/// the column sums, so the cost is `O(m^3)`.
pub fn interval_cut_surrogate(kernel: &GraphonKernel, m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::domain("grid size must be positive"));
    }
    let w = kernel.midpoint_matrix(m);
    let mut best: f64 = 0.0;
    let mut cols = vec![0.0; m];
    for a in 0..m {
        cols.iter_mut().for_each(|c| *c = 0.0);
        for b in a..m {
            for (c, v) in cols.iter_mut().zip(&w[b * m..(b + 1) * m]) {
                *c += v;
            }
            best = best.max(prefix_range(cols.iter().copied(), m) / m as f64);
        }
    }
    Ok(best)
}

/// A time-indexed sequence of step-function profiles on a common grid.
pub trait RecordedPath {
    fn grid_size(&self) -> usize;
    fn labels(&self) -> &[String];
    fn times(&self) -> &[f64];
    fn frame(&self, i: usize) -> &StepFunction;
}

impl RecordedPath for Trajectory {
    fn grid_size(&self) -> usize {
        self.grid_size
    }
    fn labels(&self) -> &[String] {
        &self.labels
    }
    fn times(&self) -> &[f64] {
        &self.times
    }
    fn frame(&self, i: usize) -> &StepFunction {
        &self.frames[i]
    }
}

impl RecordedPath for MeanFieldSolution {
    fn grid_size(&self) -> usize {
        self.grid_size
    }
    fn labels(&self) -> &[String] {
        &self.labels
    }
    fn times(&self) -> &[f64] {
        &self.times
    }
    fn frame(&self, i: usize) -> &StepFunction {
        &self.values[i]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryComparison {
    pub times: Vec<f64>,
    pub interval_gap: Vec<f64>,
    pub l1_gap: Vec<f64>,
    pub sup_gap: f64,
    pub sup_l1_gap: f64,
}

impl TrajectoryComparison {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,interval_gap,l1_gap")?;
        for ((t, a), b) in self.times.iter().zip(&self.interval_gap).zip(&self.l1_gap) {
            writeln!(w, "{t},{a},{b}")?;
        }
        Ok(())
    }
}

/// Smallest positive spacing between consecutive times.
fn min_spacing(times: &[f64]) -> Option<f64> {
    times
        .windows(2)
        .map(|p| p[1] - p[0])
        .filter(|d| *d > 0.0)
        .min_by(f64::total_cmp)
}

/// Gap series between two recorded paths at the times of `a`, each matched
/// to the nearest recorded time of `b` within half the recording interval.
/// Times of `a` with no match are skipped.
pub fn compare_trajectories(
    a: &dyn RecordedPath,
    b: &dyn RecordedPath,
) -> Result<TrajectoryComparison> {
    if a.grid_size() != b.grid_size() {
        return Err(Error::GridMismatch(format!(
            "recording grids {} and {} differ",
            a.grid_size(),
            b.grid_size()
        )));
    }
    if a.labels() != b.labels() {
        return Err(Error::GridMismatch(format!(
            "state labels {:?} and {:?} differ",
            a.labels(),
            b.labels()
        )));
    }
    let spacing = match (min_spacing(a.times()), min_spacing(b.times())) {
        (Some(x), Some(y)) => x.min(y),
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => 0.0,
    };
    let tol = 0.5 * spacing + 1e-9;
    let bt = b.times();
    let mut out = TrajectoryComparison::default();
    for (i, &t) in a.times().iter().enumerate() {
        let j = bt.partition_point(|&x| x < t);
        let cand = [j.checked_sub(1), (j < bt.len()).then_some(j)];
        let best = cand
            .iter()
            .flatten()
            .copied()
            .min_by(|&p, &q| (bt[p] - t).abs().total_cmp(&(bt[q] - t).abs()));
        let Some(j) = best.filter(|&j| (bt[j] - t).abs() <= tol) else {
            continue;
        };
        let diff = a.frame(i).sub(b.frame(j))?;
        let ig = interval_norm(&diff);
        let lg = l1_norm(&diff);
        out.times.push(t);
        out.interval_gap.push(ig);
        out.l1_gap.push(lg);
        out.sup_gap = out.sup_gap.max(ig);
        out.sup_l1_gap = out.sup_l1_gap.max(lg);
    }
    if out.times.is_empty() {
        return Err(Error::GridMismatch("no recorded times could be matched".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interval_norm_examples() {
        assert_eq!(interval_norm(&StepFunction::scalar(vec![0.0; 5]).unwrap()), 0.0);
        assert!((interval_norm(&StepFunction::scalar(vec![-0.3; 4]).unwrap()) - 0.3).abs() < 1e-15);
        let f = StepFunction::scalar(vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        assert_eq!(interval_norm(&f), 0.5);
    }

    #[test]
    fn l1_distance_examples() {
        let one = StepFunction::scalar(vec![1.0]).unwrap();
        let zero = StepFunction::scalar(vec![0.0; 3]).unwrap();
        assert!((l1_distance(&one, &zero).unwrap() - 1.0).abs() < 1e-15);
        let labels = vec!["a".to_string(), "b".to_string()];
        let f = StepFunction::new(2, labels.clone(), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let g = StepFunction::constant(3, labels, &[0.5, 0.5]).unwrap();
        assert!((l1_distance(&f, &g).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(l1_distance(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn cut_surrogate_examples() {
        assert_eq!(interval_cut_surrogate(&GraphonKernel::constant(0.0).unwrap(), 7).unwrap(), 0.0);
        let c = interval_cut_surrogate(&GraphonKernel::constant(0.4).unwrap(), 9).unwrap();
        assert!((c - 0.4).abs() < 1e-12);
        let xy = interval_cut_surrogate(&GraphonKernel::product_xy(), 40).unwrap();
        assert!((xy - 0.25).abs() < 1.0 / 40.0);
        // A signed kernel where the best rectangle is off the diagonal.
        let w = GraphonKernel::blockwise_signed(2, vec![1.0, -1.0, -1.0, 1.0]).unwrap();
        assert!((interval_cut_surrogate(&w, 2).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn comparison_of_identical_paths_is_zero() {
        let f = StepFunction::constant(2, vec!["S".into(), "I".into()], &[0.6, 0.4]).unwrap();
        let sol = MeanFieldSolution {
            grid_size: 2,
            labels: vec!["S".into(), "I".into()],
            times: vec![0.0, 0.5, 1.0],
            values: vec![f.clone(), f.clone(), f],
            max_sum_drift: 0.0,
            min_component: 0.4,
        };
        let c = compare_trajectories(&sol, &sol).unwrap();
        assert_eq!(c.times, vec![0.0, 0.5, 1.0]);
        assert_eq!(c.sup_gap, 0.0);
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,interval_gap,l1_gap\n0,0,0\n"));
    }
}
