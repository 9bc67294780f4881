//! Seeded experiment pipelines with machine-checked reports.
//!
//! Every pipeline takes an [`ExperimentConfig`], derives all sub-seeds from
//! `config.seed` by labeled hashing, fans independent replicas out over a
//! thread pool and merges results in a fixed order, so a report's embedded
//! config reproduces its numbers exactly.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::analysis::compare_trajectories;
use crate::dynamics::{InitialCondition, ModelSpec, Process, RateModel};
use crate::error::{Error, Result, StageExt};
use crate::kernels::{GraphonKernel, KernelRepr, KernelSpec, SamplePoint};
use crate::meanfield::{self, Equilibrium, SolverSettings};
use crate::rng::{derive_seed, RNG_ALGORITHM};
use crate::sampling::{sample_graph, SampledGraph, VertexMode};
use crate::spectral;
use crate::step::StepFunction;

/// Mean-field drift allowed before a run is flagged.
pub const SIMPLEX_TOL: f64 = 1e-6;
/// Long-run prevalence below this counts as die-out.
pub const DIE_OUT_BELOW: f64 = 1e-4;
/// Long-run prevalence above this counts as endemic.
pub const ENDEMIC_ABOVE: f64 = 0.05;
/// Largest grid handed to the dense eigensolver in the op-norm experiment.
pub const OPNORM_MAX_CELLS: usize = 2000;

/// Pinned convergence regression value together with its generating config.
pub const GOLDEN_CONVERGENCE: &str = include_str!("../golden/convergence.json");

/// SHA-256 of the golden file, hex encoded.
pub fn golden_sha256() -> String {
    Sha256::digest(GOLDEN_CONVERGENCE.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoldenConvergence {
    pub config: ExperimentConfig,
    pub n: usize,
    pub median_sup_gap: f64,
    pub rel_tol: f64,
    #[serde(default)]
    pub medians_at_pinning: Vec<f64>,
}

pub fn golden_convergence() -> Result<GoldenConvergence> {
    Ok(serde_json::from_str(GOLDEN_CONVERGENCE)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Convergence,
    ThresholdSweep,
    SparseCounterexample,
    EmpiricalOpnorm,
    EquilibriumCrosscheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::ThresholdSweep => "threshold_sweep",
            ExperimentKind::SparseCounterexample => "sparse_counterexample",
            ExperimentKind::EmpiricalOpnorm => "empirical_opnorm",
            ExperimentKind::EquilibriumCrosscheck => "equilibrium_crosscheck",
        }
    }
}

/// Density schedule `kappa_N`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KappaRule {
    /// `min(1, c N^-gamma)`.
    Power { c: f64, gamma: f64 },
    /// `lambda / N`.
    Sparse { lambda: f64 },
}

impl Default for KappaRule {
    fn default() -> Self {
        KappaRule::Power { c: 1.0, gamma: 0.0 }
    }
}

impl KappaRule {
    pub fn kappa(&self, n: usize) -> f64 {
        match *self {
            KappaRule::Power { c, gamma } => (c * (n as f64).powf(-gamma)).min(1.0),
            KappaRule::Sparse { lambda } => (lambda / n as f64).min(1.0),
        }
    }
}

/// Initial profile: state `state` has probability `sum_j coeffs[j] x^j` at
/// position `x`; the remaining mass sits in the first state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialProfile {
    #[serde(default = "default_state")]
    pub state: String,
    pub coeffs: Vec<f64>,
}

fn default_state() -> String {
    "I".into()
}

impl InitialProfile {
    pub fn constant(p: f64) -> Self {
        InitialProfile {
            state: default_state(),
            coeffs: vec![p],
        }
    }

    fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Cell averages on an `m`-grid for the given model.
    pub fn to_step(&self, model: &RateModel, m: usize) -> Result<StepFunction> {
        let target = model.state_index(&self.state).ok_or_else(|| {
            Error::InvalidInitialCondition(format!("unknown state {:?}", self.state))
        })?;
        if target == 0 {
            return Err(Error::InvalidInitialCondition(
                "the first state holds the remaining mass; pick another".into(),
            ));
        }
        let s = model.n_states();
        let f = StepFunction::from_fn_averaged(m, model.states().to_vec(), 8, |x| {
            let p = self.eval(x);
            let mut v = vec![0.0; s];
            v[0] = 1.0 - p;
            v[target] = p;
            v
        })?;
        if !f.in_simplex(1e-12) {
            return Err(Error::InvalidInitialCondition(
                "initial probability leaves [0, 1]".into(),
            ));
        }
        Ok(f)
    }
}

impl Default for InitialProfile {
    fn default() -> Self {
        InitialProfile {
            state: default_state(),
            coeffs: vec![0.2, 0.3],
        }
    }
}

fn default_model() -> ModelSpec {
    ModelSpec::sis(2.0)
}
fn default_m() -> usize {
    20
}
fn default_dt() -> f64 {
    0.01
}
fn default_record_dt() -> f64 {
    0.05
}
fn default_replicas() -> usize {
    10
}
fn default_spectral_m() -> usize {
    400
}
fn default_quad_m() -> usize {
    100_000
}

/// Parameters of one experiment; fields irrelevant to `kind` are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub kernel: KernelSpec,
    #[serde(default = "default_model")]
    pub model: ModelSpec,
    /// Infection rate for the SIS-only experiments.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub betas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub n_list: Vec<usize>,
    #[serde(default)]
    pub kappa: KappaRule,
    #[serde(default = "default_m")]
    pub m: usize,
    pub t_end: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_record_dt")]
    pub record_dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    /// Initial profile; defaults to `0.2 + 0.3 x` for convergence runs and
    /// to the constant `0.01` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialProfile>,
    /// Grid for the leading eigenvalue in the threshold sweep.
    #[serde(default = "default_spectral_m")]
    pub spectral_m: usize,
    /// Quadrature points for the separable equilibrium.
    #[serde(default = "default_quad_m")]
    pub quad_m: usize,
    /// Upper bound asserted on the last op-norm median.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_median_below: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    /// Config with defaults for everything except the essentials.
    pub fn new(kind: ExperimentKind, kernel: KernelSpec, t_end: f64) -> Self {
        ExperimentConfig {
            kind,
            kernel,
            model: default_model(),
            beta: None,
            betas: Vec::new(),
            n_list: Vec::new(),
            kappa: KappaRule::default(),
            m: default_m(),
            t_end,
            dt: default_dt(),
            record_dt: default_record_dt(),
            seed: 0,
            replicas: default_replicas(),
            initial: None,
            spectral_m: default_spectral_m(),
            quad_m: default_quad_m(),
            final_median_below: None,
            output_dir: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    fn beta(&self) -> Result<f64> {
        let b = self.beta.ok_or_else(|| bad("this experiment needs `beta`"))?;
        if !(b.is_finite() && b >= 0.0) {
            return Err(bad(format!("beta must be finite and >= 0, got {b}")));
        }
        Ok(b)
    }

    fn check_n_list(&self) -> Result<()> {
        if self.n_list.is_empty() {
            return Err(bad("n_list must not be empty"));
        }
        if self.n_list.contains(&0) {
            return Err(bad("graph sizes must be positive"));
        }
        if self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("n_list must be strictly increasing"));
        }
        Ok(())
    }

    fn check_power_kappa(&self) -> Result<()> {
        match self.kappa {
            KappaRule::Power { c, gamma } => {
                if !(c > 0.0) {
                    return Err(bad("kappa rule needs c > 0"));
                }
                if !(0.0..1.0).contains(&gamma) {
                    return Err(bad(format!("gamma must lie in [0, 1), got {gamma}")));
                }
                Ok(())
            }
            KappaRule::Sparse { .. } => Err(bad(format!(
                "{} needs a dense kappa rule c N^-gamma",
                self.kind.name()
            ))),
        }
    }

    /// Structural checks that do not need to build anything expensive.
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(bad("m must be positive"));
        }
        if self.replicas == 0 {
            return Err(bad("replicas must be at least 1"));
        }
        let sim_or_solve = !matches!(self.kind, ExperimentKind::EmpiricalOpnorm);
        if sim_or_solve {
            if !(self.t_end > 0.0 && self.t_end.is_finite()) {
                return Err(bad("t_end must be positive"));
            }
            if !(self.dt > 0.0) || !(self.record_dt > 0.0) {
                return Err(bad("dt and record_dt must be positive"));
            }
        }
        match self.kind {
            ExperimentKind::Convergence => {
                self.check_n_list()?;
                self.check_power_kappa()?;
            }
            ExperimentKind::EmpiricalOpnorm => {
                self.check_n_list()?;
                self.check_power_kappa()?;
            }
            ExperimentKind::ThresholdSweep => {
                if self.betas.is_empty() {
                    return Err(bad("betas must not be empty"));
                }
                if self.betas.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(bad("betas must be strictly increasing"));
                }
                if self.betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
                    return Err(bad("betas must be finite and >= 0"));
                }
            }
            ExperimentKind::SparseCounterexample => {
                self.check_n_list()?;
                self.beta()?;
                if !matches!(self.kappa, KappaRule::Sparse { lambda } if lambda > 0.0) {
                    return Err(bad("sparse counterexample needs kappa rule lambda/N"));
                }
                if self.kernel != (KernelSpec::Constant { p: 1.0 }) {
                    return Err(bad("sparse counterexample needs the kernel W = 1"));
                }
            }
            ExperimentKind::EquilibriumCrosscheck => {
                self.beta()?;
            }
        }
        Ok(())
    }

    pub fn initial_profile(&self) -> InitialProfile {
        match (&self.initial, self.kind) {
            (Some(p), _) => p.clone(),
            (None, ExperimentKind::Convergence) => InitialProfile::default(),
            (None, _) => InitialProfile::constant(0.01),
        }
    }

    /// Replica seeds derived from `seed`.
    pub fn replica_seeds(&self) -> Vec<u64> {
        (0..self.replicas)
            .map(|r| derive_seed(self.seed, &format!("replica/{r}")))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// CSV table emitted next to the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table {
            name: name.into(),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ExperimentKind,
    pub version: String,
    pub rng: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub assertions: Vec<Assertion>,
    pub summary: serde_json::Value,
    /// Modelling assumptions the run relies on but does not verify.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl Report {
    fn new(config: &ExperimentConfig, seeds: Vec<u64>) -> Self {
        Report {
            kind: config.kind,
            version: crate::VERSION.into(),
            rng: RNG_ALGORITHM.into(),
            config: config.clone(),
            seeds,
            assertions: Vec::new(),
            summary: json!({}),
            notes: assumption_notes(config),
            tables: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.assertions.push(Assertion {
            name: name.into(),
            passed,
            detail,
        });
    }

    pub fn passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn assertion(&self, name: &str) -> Option<&Assertion> {
        self.assertions.iter().find(|a| a.name == name)
    }

    /// Write `report.json` and one CSV per table into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        for t in &self.tables {
            fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
        Ok(())
    }
}

/// Run whichever experiment `config.kind` names and write the outputs when
/// `config.output_dir` is set.
pub fn run(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    let report = match config.kind {
        ExperimentKind::Convergence => run_convergence(config),
        ExperimentKind::ThresholdSweep => run_threshold_sweep(config),
        ExperimentKind::SparseCounterexample => run_sparse_counterexample(config),
        ExperimentKind::EmpiricalOpnorm => run_empirical_opnorm(config),
        ExperimentKind::EquilibriumCrosscheck => run_equilibrium_crosscheck(config),
    }?;
    if let Some(dir) = &config.output_dir {
        report.write(dir).stage("write report")?;
    }
    Ok(report)
}

fn assumption_notes(config: &ExperimentConfig) -> Vec<String> {
    let mut notes = Vec::new();
    if matches!(config.kernel, KernelSpec::Blockwise { .. }) {
        notes.push(
            "block kernel is discontinuous; the limit result is used in its piecewise-continuous form"
                .into(),
        );
    }
    match config.kind {
        ExperimentKind::Convergence => notes.push(
            "gaps compare box-aggregated empirical states with the M-cell solution, \
             which differs from the continuum gap by O(1/N + 1/M)"
                .into(),
        ),
        ExperimentKind::ThresholdSweep => notes.push(
            "the kernel is assumed connected (positive mass across every split); this is not checked"
                .into(),
        ),
        _ => {}
    }
    notes
}

fn expect_kind(config: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    if config.kind != kind {
        return Err(bad(format!(
            "config kind {} passed to the {} pipeline",
            config.kind.name(),
            kind.name()
        )));
    }
    config.validate()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn graph_seed(rep: u64, n: usize) -> u64 {
    derive_seed(rep, &format!("graph/N={n}"))
}

fn dynamics_seed(rep: u64, n: usize) -> u64 {
    derive_seed(rep, &format!("dynamics/N={n}"))
}

fn sim_settings(config: &ExperimentConfig) -> SolverSettings {
    SolverSettings::new(config.m, config.dt, config.t_end).record_every(config.record_dt)
}

fn simplex_assertion(report: &mut Report, drifts: &[(f64, f64)]) {
    let dev = drifts.iter().map(|d| d.0).fold(0.0, f64::max);
    let min = drifts.iter().map(|d| d.1).fold(f64::INFINITY, f64::min);
    report.check(
        "meanfield_simplex",
        dev <= SIMPLEX_TOL && min >= -SIMPLEX_TOL,
        format!("max |sum - 1| = {dev:e}, min component = {min:e}"),
    );
}

/// Sample, simulate and compare against the mean-field solution for every
/// `N` and replica; assert the per-`N` median sup gap decreases.
pub fn run_convergence(config: &ExperimentConfig) -> Result<Report> {
    expect_kind(config, ExperimentKind::Convergence)?;
    let kernel = config.kernel.build().stage("build kernel")?;
    let model = config.model.build().stage("build model")?;
    let settings = sim_settings(config);
    let initial = config.initial_profile();
    let u0 = initial.to_step(&model, config.m).stage("initial profile")?;
    let mf = meanfield::solve(&kernel, &model, &u0, settings).stage("mean-field solve")?;
    let seeds = config.replica_seeds();

    let jobs: Vec<(usize, usize)> = config
        .n_list
        .iter()
        .flat_map(|&n| (0..seeds.len()).map(move |r| (n, r)))
        .collect();
    let results: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(n, r)| -> Result<(f64, f64)> {
            let kappa = config.kappa.kappa(n);
            let g = sample_graph(&kernel, n, kappa, VertexMode::Grid, graph_seed(seeds[r], n))
                .stage("sample graph")?;
            let init = InitialCondition::Iid(
                initial.to_step(&model, n).stage("initial profile")?,
            );
            let mut p = Process::new(&g, model.clone(), &init, dynamics_seed(seeds[r], n))
                .stage("initialize process")?;
            let traj = p
                .run(config.t_end, config.m, config.record_dt)
                .stage("simulate")?;
            let c = compare_trajectories(&traj, &mf).stage("compare")?;
            info!("N={n} replica={r}: sup gap {:.5}", c.sup_gap);
            Ok((c.sup_gap, c.sup_l1_gap))
        })
        .collect::<Result<_>>()?;

    let mut report = Report::new(config, seeds.clone());
    let mut table = Table::new(
        "convergence",
        &["N", "kappa", "replica", "seed", "sup_interval_gap", "sup_l1_gap"],
    );
    for (&(n, r), &(g, l)) in jobs.iter().zip(&results) {
        table.rows.push(vec![
            n as f64,
            config.kappa.kappa(n),
            r as f64,
            seeds[r] as f64,
            g,
            l,
        ]);
    }
    let k = seeds.len();
    let medians: Vec<f64> = (0..config.n_list.len())
        .map(|i| {
            let gaps: Vec<f64> = results[i * k..(i + 1) * k].iter().map(|x| x.0).collect();
            median(&gaps)
        })
        .collect();
    let mut med_table = Table::new("convergence_medians", &["N", "median_sup_interval_gap"]);
    for (&n, &m) in config.n_list.iter().zip(&medians) {
        med_table.rows.push(vec![n as f64, m]);
    }
    if medians.len() > 1 {
        report.check(
            "median_gap_strictly_decreasing",
            strictly_decreasing(&medians),
            format!("medians {medians:?}"),
        );
    }
    simplex_assertion(&mut report, &[(mf.max_sum_drift, mf.min_component)]);
    if let Ok(golden) = golden_convergence() {
        let matches_config = ExperimentConfig {
            output_dir: None,
            ..config.clone()
        } == golden.config;
        if matches_config {
            if let Some(i) = config.n_list.iter().position(|&n| n == golden.n) {
                let rel = (medians[i] - golden.median_sup_gap).abs() / golden.median_sup_gap;
                report.check(
                    "golden_regression",
                    rel <= golden.rel_tol,
                    format!(
                        "median at N={} is {}, pinned {} (rel diff {rel:e})",
                        golden.n, medians[i], golden.median_sup_gap
                    ),
                );
            }
        }
    }
    report.summary = json!({
        "n_list": config.n_list,
        "medians": medians,
        "seeds": seeds,
        "m": config.m,
    });
    report.tables = vec![table, med_table];
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    DieOut,
    Endemic,
    Ambiguous,
}

pub fn classify(prevalence: f64) -> Outcome {
    if prevalence < DIE_OUT_BELOW {
        Outcome::DieOut
    } else if prevalence > ENDEMIC_ABOVE {
        Outcome::Endemic
    } else {
        Outcome::Ambiguous
    }
}

/// Long-run SIS prevalence per `beta`, classified and checked against
/// `beta_c = 1 / lambda_1`.
pub fn run_threshold_sweep(config: &ExperimentConfig) -> Result<Report> {
    expect_kind(config, ExperimentKind::ThresholdSweep)?;
    let kernel = config.kernel.build().stage("build kernel")?;
    let beta_c = spectral::epidemic_threshold(&kernel, config.spectral_m).stage("threshold")?;
    // The gap to a twice finer grid indicates the discretization error of lambda_1.
    let lambda_m = 1.0 / beta_c;
    let lambda_2m = spectral::leading_eigenvalue(&kernel, 2 * config.spectral_m)
        .stage("refined eigenvalue")?;
    let initial = config.initial_profile();
    let settings = SolverSettings::new(config.m, config.dt, config.t_end);
    let runs: Vec<(f64, (f64, f64))> = config
        .betas
        .par_iter()
        .map(|&beta| -> Result<(f64, (f64, f64))> {
            let model = RateModel::sis(beta)?;
            let u0 = initial.to_step(&model, config.m).stage("initial profile")?;
            let sol = meanfield::solve(&kernel, &model, &u0, settings).stage("mean-field solve")?;
            Ok((
                sol.final_state().integral(1),
                (sol.max_sum_drift, sol.min_component),
            ))
        })
        .collect::<Result<_>>()?;
    let prev: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let outcomes: Vec<Outcome> = prev.iter().map(|&p| classify(p)).collect();
    let betas = &config.betas;

    let mut report = Report::new(config, Vec::new());
    // Flips between decided outcomes, skipping ambiguous points.
    let decided: Vec<(usize, Outcome)> = outcomes
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, o)| *o != Outcome::Ambiguous)
        .collect();
    let flips: Vec<(usize, usize)> = decided
        .windows(2)
        .filter(|w| w[0].1 != w[1].1)
        .map(|w| (w[0].0, w[1].0))
        .collect();
    let straddles = betas[0] < beta_c && beta_c < betas[betas.len() - 1];
    let expected = usize::from(straddles);
    let step = |i: usize| {
        let lo = if i > 0 { betas[i] - betas[i - 1] } else { 0.0 };
        let hi = if i + 1 < betas.len() { betas[i + 1] - betas[i] } else { 0.0 };
        lo.max(hi)
    };
    let flip_ok = flips.len() == expected
        && flips.iter().all(|&(a, b)| {
            outcomes[a] == Outcome::DieOut
                && outcomes[b] == Outcome::Endemic
                && betas[a] - step(a) <= beta_c
                && beta_c <= betas[b] + step(b)
        });
    report.check(
        "single_flip_at_threshold",
        flip_ok,
        format!("beta_c = {beta_c:.6}, flips between indices {flips:?}, expected {expected}"),
    );
    let ambiguous_ok = outcomes.iter().enumerate().all(|(i, o)| {
        *o != Outcome::Ambiguous || (betas[i] - beta_c).abs() <= step(i)
    });
    report.check(
        "ambiguous_only_near_threshold",
        ambiguous_ok,
        format!("outcomes {outcomes:?}"),
    );
    let drifts: Vec<(f64, f64)> = runs.iter().map(|r| r.1).collect();
    simplex_assertion(&mut report, &drifts);

    let mut table = Table::new("threshold", &["beta", "prevalence", "outcome"]);
    for ((b, p), o) in betas.iter().zip(&prev).zip(&outcomes) {
        let code = match o {
            Outcome::DieOut => 0.0,
            Outcome::Endemic => 1.0,
            Outcome::Ambiguous => 0.5,
        };
        table.rows.push(vec![*b, *p, code]);
    }
    report.summary = json!({
        "beta_c": beta_c,
        "lambda_1": lambda_m,
        "lambda_1_refined": lambda_2m,
        "lambda_1_gap": (lambda_2m - lambda_m).abs(),
        "betas": betas,
        "prevalence": prev,
        "outcomes": outcomes,
    });
    report.tables = vec![table];
    Ok(report)
}

/// Degree-zero initial infection on a sparse W = 1 graph: the empirical
/// prevalence follows pure decay while the mean-field limit does not.
pub fn run_sparse_counterexample(config: &ExperimentConfig) -> Result<Report> {
    expect_kind(config, ExperimentKind::SparseCounterexample)?;
    let kernel = config.kernel.build().stage("build kernel")?;
    let beta = config.beta()?;
    let lambda = match config.kappa {
        KappaRule::Sparse { lambda } => lambda,
        KappaRule::Power { .. } => unreachable!("validated"),
    };
    let model = RateModel::sis(beta)?;
    let u_bar0 = (-lambda).exp();
    let decay = |t: f64| u_bar0 * (-t).exp();

    // Mean-field reference on a single cell, recorded on the same cadence.
    let u0 = StepFunction::constant(1, model.states().to_vec(), &[1.0 - u_bar0, u_bar0])?;
    let mf = meanfield::solve(
        &kernel,
        &model,
        &u0,
        SolverSettings::new(1, config.dt, config.t_end).record_every(config.record_dt),
    )
    .stage("mean-field solve")?;
    let mf_gap = mf
        .times
        .iter()
        .zip(mf.means(1))
        .map(|(&t, u)| (decay(t) - u).abs())
        .fold(0.0, f64::max);

    let seeds = config.replica_seeds();
    let mut report = Report::new(config, seeds.clone());
    let mut table = Table::new(
        "sparse_counterexample",
        &["N", "replica", "initial_fraction", "sup_decay_gap"],
    );
    let mut curves = Table::new("sparse_curves", &["N", "replica", "t", "empirical", "decay"]);
    let mut summary = Vec::new();
    for &n in &config.n_list {
        let kappa = config.kappa.kappa(n);
        let per: Vec<(f64, f64, Vec<(f64, f64)>)> = seeds
            .par_iter()
            .map(|&rep| -> Result<_> {
                let g = sample_graph(&kernel, n, kappa, VertexMode::Grid, graph_seed(rep, n))
                    .stage("sample graph")?;
                let init = InitialCondition::DegreeZero {
                    isolated: 1,
                    otherwise: 0,
                };
                let mut p = Process::new(&g, model.clone(), &init, dynamics_seed(rep, n))
                    .stage("initialize process")?;
                let traj = p.run(config.t_end, 1, config.record_dt).stage("simulate")?;
                let path: Vec<(f64, f64)> = traj
                    .times
                    .iter()
                    .zip(&traj.densities)
                    .map(|(&t, d)| (t, d[1]))
                    .collect();
                let gap = path
                    .iter()
                    .map(|&(t, x)| (x - decay(t)).abs())
                    .fold(0.0, f64::max);
                Ok((path[0].1, gap, path))
            })
            .collect::<Result<_>>()?;
        for (r, (f0, gap, path)) in per.iter().enumerate() {
            table.rows.push(vec![n as f64, r as f64, *f0, *gap]);
            for &(t, x) in path {
                curves.rows.push(vec![n as f64, r as f64, t, x, decay(t)]);
            }
        }
        let fractions: Vec<f64> = per.iter().map(|x| x.0).collect();
        let gaps: Vec<f64> = per.iter().map(|x| x.1).collect();
        let worst_f0 = fractions
            .iter()
            .map(|f| (f - u_bar0).abs())
            .fold(0.0, f64::max);
        report.check(
            &format!("initial_fraction_N{n}"),
            worst_f0 <= 0.005,
            format!("fractions {fractions:?} vs {u_bar0:.6} (worst deviation {worst_f0:.5})"),
        );
        let med = median(&gaps);
        report.check(
            &format!("empirical_follows_decay_N{n}"),
            med < 0.01,
            format!("median sup |empirical - decay| = {med:.5}"),
        );
        summary.push(json!({"n": n, "kappa": kappa, "initial_fractions": fractions,
                            "sup_decay_gaps": gaps, "median_sup_decay_gap": med}));
    }
    if beta > 0.0 {
        report.check(
            "meanfield_departs_from_decay",
            mf_gap > 0.05,
            format!("sup |decay - meanfield| = {mf_gap:.5}"),
        );
    }
    simplex_assertion(&mut report, &[(mf.max_sum_drift, mf.min_component)]);
    let mut mf_table = Table::new("sparse_meanfield", &["t", "meanfield", "decay"]);
    for (&t, u) in mf.times.iter().zip(mf.means(1)) {
        mf_table.rows.push(vec![t, u, decay(t)]);
    }
    report.summary = json!({
        "lambda": lambda,
        "beta": beta,
        "initial_mean": u_bar0,
        "sup_decay_vs_meanfield": mf_gap,
        "per_n": summary,
    });
    report.tables = vec![table, curves, mf_table];
    Ok(report)
}

/// Block-average a row-major `n x n` matrix onto `c x c` cells by exact
/// overlap weights.
pub fn coarsen_matrix(a: &[f64], n: usize, c: usize) -> Vec<f64> {
    if c == n {
        return a.to_vec();
    }
    // Overlaps of fine cell i with coarse cells as (coarse index, weight),
    // where the weight is the overlap length in units of the coarse width.
    let mut parts: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let total = n * c;
    let (mut i, mut k, mut pos) = (0usize, 0usize, 0usize);
    while pos < total {
        let next = ((i + 1) * c).min((k + 1) * n);
        parts[i].push((k, (next - pos) as f64 / n as f64));
        pos = next;
        if pos == (i + 1) * c {
            i += 1;
        }
        if pos == (k + 1) * n {
            k += 1;
        }
    }
    let mut rows = vec![0.0; c * n];
    for i in 0..n {
        for &(k, w) in &parts[i] {
            let src = &a[i * n..(i + 1) * n];
            let dst = &mut rows[k * n..(k + 1) * n];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    let mut out = vec![0.0; c * c];
    for k in 0..c {
        for j in 0..n {
            let v = rows[k * n + j];
            for &(l, w) in &parts[j] {
                out[k * c + l] += w * v;
            }
        }
    }
    out
}

/// `||A/kappa - W||_op` on the `N`-grid for one sampled graph, after
/// coarsening to at most [`OPNORM_MAX_CELLS`] cells.
pub fn empirical_opnorm(graph: &SampledGraph, kernel: &GraphonKernel) -> Result<f64> {
    let n = graph.n();
    let mut d = match kernel.repr() {
        KernelRepr::Blockwise { m: 1, values } => vec![-values[0]; n * n],
        _ => kernel
            .sample_matrix(n, SamplePoint::Midpoint)
            .into_iter()
            .map(|v| -v)
            .collect(),
    };
    let inv = 1.0 / graph.kappa();
    for (i, j) in graph.edges() {
        let (i, j) = (i as usize, j as usize);
        d[i * n + j] += inv;
        d[j * n + i] += inv;
    }
    let (cells, vals) = if n > OPNORM_MAX_CELLS {
        let c = OPNORM_MAX_CELLS;
        (c, coarsen_matrix(&d, n, c))
    } else {
        (n, d)
    };
    // Operator on step functions: matrix entries scaled by the cell width.
    let a = nalgebra::DMatrix::from_row_slice(cells, cells, &vals) / cells as f64;
    Ok(spectral::matrix_op2_norm(&a))
}

/// Operator-norm distance between the scaled empirical graphon and `W`.
pub fn run_empirical_opnorm(config: &ExperimentConfig) -> Result<Report> {
    expect_kind(config, ExperimentKind::EmpiricalOpnorm)?;
    let kernel = config.kernel.build().stage("build kernel")?;
    let seeds = config.replica_seeds();
    let jobs: Vec<(usize, usize)> = config
        .n_list
        .iter()
        .flat_map(|&n| (0..seeds.len()).map(move |r| (n, r)))
        .collect();
    let norms: Vec<f64> = jobs
        .par_iter()
        .map(|&(n, r)| -> Result<f64> {
            let g = sample_graph(
                &kernel,
                n,
                config.kappa.kappa(n),
                VertexMode::Grid,
                graph_seed(seeds[r], n),
            )
            .stage("sample graph")?;
            let v = empirical_opnorm(&g, &kernel).stage("operator norm")?;
            info!("N={n} replica={r}: op norm {v:.5}");
            Ok(v)
        })
        .collect::<Result<_>>()?;
    let k = seeds.len();
    let medians: Vec<f64> = (0..config.n_list.len())
        .map(|i| median(&norms[i * k..(i + 1) * k]))
        .collect();

    let mut report = Report::new(config, seeds.clone());
    if medians.len() > 1 {
        report.check(
            "median_opnorm_decreasing",
            strictly_decreasing(&medians) || medians.iter().all(|&m| m == 0.0),
            format!("medians {medians:?}"),
        );
    }
    if let Some(bound) = config.final_median_below {
        let last = *medians.last().expect("nonempty n_list");
        report.check(
            "final_median_below_bound",
            last < bound,
            format!("final median {last} vs bound {bound}"),
        );
    }
    let mut table = Table::new("opnorm", &["N", "replica", "seed", "op2_norm"]);
    for (&(n, r), &v) in jobs.iter().zip(&norms) {
        table.rows.push(vec![n as f64, r as f64, seeds[r] as f64, v]);
    }
    report.summary = json!({
        "n_list": config.n_list,
        "medians": medians,
        "coarsened_above": OPNORM_MAX_CELLS,
    });
    report.tables = vec![table];
    Ok(report)
}

/// The factor `phi` of a separable kernel, with constants as `sqrt(p)`.
fn separable_factor(kernel: &GraphonKernel) -> Option<Box<dyn Fn(f64) -> f64 + '_>> {
    if let Some(p) = kernel.profile() {
        return Some(Box::new(move |x| p.eval(x)));
    }
    match kernel.repr() {
        KernelRepr::Blockwise { m: 1, values } if values[0] >= 0.0 => {
            let s = values[0].sqrt();
            Some(Box::new(move |_| s))
        }
        _ => None,
    }
}

/// Closed-form separable equilibrium against a long mean-field run.
pub fn run_equilibrium_crosscheck(config: &ExperimentConfig) -> Result<Report> {
    expect_kind(config, ExperimentKind::EquilibriumCrosscheck)?;
    let kernel = config.kernel.build().stage("build kernel")?;
    let phi = separable_factor(&kernel)
        .ok_or_else(|| bad("equilibrium cross-check needs a separable kernel"))?;
    let beta = config.beta()?;
    let model = RateModel::sis(beta)?;
    let eq = meanfield::sis_equilibrium_separable(&phi, beta, config.quad_m, 1e-12)
        .stage("equilibrium")?;
    let u0 = config
        .initial_profile()
        .to_step(&model, config.m)
        .stage("initial profile")?;
    let sol = meanfield::solve(
        &kernel,
        &model,
        &u0,
        SolverSettings::new(config.m, config.dt, config.t_end),
    )
    .stage("mean-field solve")?;
    let fin = sol.final_state();
    let m = config.m;
    let mut table = Table::new("equilibrium", &["cell", "x", "meanfield", "fixed_point"]);
    let (gap, k, label) = match &eq {
        Equilibrium::Endemic { k, .. } => {
            let mut gap: f64 = 0.0;
            for c in 0..m {
                let x = (c as f64 + 0.5) / m as f64;
                let p = phi(x);
                let g = beta * p * k / (1.0 + beta * p * k);
                let v = fin.value(c, 1);
                gap = gap.max((v - g).abs());
                table.rows.push(vec![c as f64, x, v, g]);
            }
            (gap, Some(*k), "endemic")
        }
        Equilibrium::DieOut => {
            let prev = fin.integral(1);
            for c in 0..m {
                let x = (c as f64 + 0.5) / m as f64;
                table.rows.push(vec![c as f64, x, fin.value(c, 1), 0.0]);
            }
            // Both sides agree on die-out when the solve decayed too.
            let gap = if prev < DIE_OUT_BELOW { 0.0 } else { prev };
            (gap, None, "die_out")
        }
    };
    let mut report = Report::new(config, Vec::new());
    report.check(
        "sup_cell_gap_below_1e-3",
        gap < 1e-3,
        format!("sup cell gap {gap:e} ({label})"),
    );
    simplex_assertion(&mut report, &[(sol.max_sum_drift, sol.min_component)]);
    report.summary = json!({
        "beta": beta,
        "k": k,
        "outcome": label,
        "sup_cell_gap": gap,
        "prevalence_fixed_point": eq.prevalence(),
        "prevalence_meanfield": fin.integral(1),
    });
    report.tables = vec![table];
    Ok(report)
}
