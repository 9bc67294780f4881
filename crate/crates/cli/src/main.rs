//! `graphon-mf` command-line front end.
//!
//! Exit codes: 0 on success, 1 when an experiment assertion fails, 2 on
//! usage, configuration, input or runtime errors.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use graphon_mf::dynamics::{InitialCondition, ModelSpec, Preset, Process};
use graphon_mf::experiments::{
    self, golden_convergence, golden_sha256, ExperimentConfig, ExperimentKind, InitialProfile,
    KappaRule, Report,
};
use graphon_mf::meanfield::{self, SolverSettings};
use graphon_mf::rng::derive_seed;
use graphon_mf::{sample_graph, spectral, KernelSpec, VertexMode};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "graphon-mf", about = "Particle systems on graphon-sampled graphs and their mean-field limit")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a W-random graph and write its edge list.
    Sample(SampleArgs),
    /// Simulate the particle system on a sampled graph.
    Simulate(SimulateArgs),
    /// Integrate the discretized mean-field equation.
    Meanfield(MeanfieldArgs),
    /// Leading eigenvalues of the kernel operator.
    Spectral(SpectralArgs),
    /// Convergence of simulations to the mean-field solution as N grows.
    Converge(ExperimentArgs),
    /// Long-run SIS prevalence across infection rates.
    Threshold(ExperimentArgs),
    /// Degree-zero counterexample in the sparse regime.
    SparseCx(ExperimentArgs),
    /// Operator-norm distance between empirical and limiting graphon.
    Opnorm(ExperimentArgs),
    /// Separable SIS equilibrium against a long mean-field run.
    Equilibrium(ExperimentArgs),
}

fn parse_kernel(s: &str) -> std::result::Result<KernelSpec, String> {
    let path = Path::new(s);
    if !s.starts_with('{') && path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| format!("{s}: {e}"))?;
        return KernelSpec::from_json(&text).map_err(|e| format!("{s}: {e}"));
    }
    s.parse::<KernelSpec>().map_err(|e| e.to_string())
}

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<T>().map_err(|e| format!("{t:?}: {e}")))
        .collect()
}

fn parse_f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    parse_list(s)
}

fn parse_usize_list(s: &str) -> std::result::Result<Vec<usize>, String> {
    parse_list(s)
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Rate model: `sis`, `sir`, or a path to a JSON model description.
    #[arg(long, default_value = "sis")]
    model: String,
    /// Infection rate for the preset models.
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
}

impl ModelArgs {
    fn spec(&self) -> Result<ModelSpec> {
        let preset = match self.model.as_str() {
            "sis" => Preset::Sis,
            "sir" => Preset::Sir,
            path => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading model file {path}"))?;
                return serde_json::from_str(&text).context("parsing model file");
            }
        };
        Ok(ModelSpec::Preset {
            preset,
            beta: self.beta,
        })
    }
}

#[derive(Args, Debug)]
struct SampleArgs {
    /// Kernel: `constant:p`, `product_xy`, `blockwise:a,b;c,d`, `separable_poly:c0,c1,..`, JSON, or a JSON file.
    #[arg(long, value_parser = parse_kernel)]
    kernel: KernelSpec,
    /// Number of vertices.
    #[arg(long = "N")]
    n: usize,
    /// Density parameter.
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    /// Use sorted uniform positions instead of the grid i/N.
    #[arg(long)]
    ordered_uniform: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the compact binary format instead of text.
    #[arg(long)]
    binary: bool,
    /// Output directory; prints the edge list to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_parser = parse_kernel)]
    kernel: KernelSpec,
    #[arg(long = "N")]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    kappa: f64,
    #[command(flatten)]
    model: ModelArgs,
    /// Probability of the second state as polynomial coefficients in x.
    #[arg(long, value_parser = parse_f64_list, default_value = "0.1")]
    initial: ::std::vec::Vec<f64>,
    /// Infect exactly the isolated vertices instead of drawing states.
    #[arg(long)]
    degree_zero: bool,
    #[arg(long = "T")]
    t: f64,
    /// Recording grid.
    #[arg(long = "M", default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 0.05)]
    record_dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MeanfieldArgs {
    #[arg(long, value_parser = parse_kernel)]
    kernel: KernelSpec,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_parser = parse_f64_list, default_value = "0.01")]
    initial: ::std::vec::Vec<f64>,
    #[arg(long = "M", default_value_t = 20)]
    m: usize,
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    #[arg(long = "T")]
    t: f64,
    #[arg(long, default_value_t = 0.1)]
    record_dt: f64,
    /// Output directory for `meanfield.csv`; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SpectralArgs {
    #[arg(long, value_parser = parse_kernel)]
    kernel: KernelSpec,
    #[arg(long = "M")]
    m: usize,
    /// Number of eigenvalues to print.
    #[arg(long = "K", default_value_t = 5)]
    k: usize,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<KernelSpec>,
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long = "T")]
    t: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, value_parser = parse_f64_list)]
    betas: Option<::std::vec::Vec<f64>>,
    #[arg(long)]
    beta: Option<f64>,
    /// Graph sizes, comma separated.
    #[arg(long = "N", value_parser = parse_usize_list)]
    n: Option<::std::vec::Vec<usize>>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for the report and CSV tables.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Errors that carry exit code 1 rather than 2.
#[derive(Debug)]
struct AssertionsFailed;

impl std::fmt::Display for AssertionsFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "one or more experiment assertions failed")
    }
}

impl std::error::Error for AssertionsFailed {}

/// Trimmed decimal: integers without a fraction, near-zeros as `0`.
fn fmt_num(x: f64) -> String {
    if x.abs() < 1e-12 {
        return "0".into();
    }
    let s = format!("{:.12}", x);
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn output(dir: Option<&Path>, name: &str) -> Result<Box<dyn Write>> {
    match dir {
        Some(d) => {
            create_out(d)?;
            let path = d.join(name);
            let f = fs::File::create(&path)
                .with_context(|| format!("creating {}", path.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout().lock()))),
    }
}

fn initial_profile(coeffs: &[f64], model: &graphon_mf::dynamics::RateModel) -> InitialProfile {
    InitialProfile {
        state: model.states()[1.min(model.n_states() - 1)].clone(),
        coeffs: coeffs.to_vec(),
    }
}

fn cmd_sample(a: &SampleArgs) -> Result<()> {
    let kernel = a.kernel.build()?;
    let mode = if a.ordered_uniform {
        VertexMode::OrderedUniform
    } else {
        VertexMode::Grid
    };
    let g = sample_graph(&kernel, a.n, a.kappa, mode, a.seed)?;
    info!("sampled {} vertices, {} edges", g.n(), g.edge_count());
    if a.binary {
        let Some(dir) = &a.out else {
            bail!("--binary needs --out");
        };
        create_out(dir)?;
        fs::write(dir.join("graph.bin"), g.to_bytes())?;
    } else {
        let mut w = output(a.out.as_deref(), "graph.txt")?;
        g.write_edge_list(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let kernel = a.kernel.build()?;
    let model = a.model.spec()?.build()?;
    let g = sample_graph(
        &kernel,
        a.n,
        a.kappa,
        VertexMode::Grid,
        derive_seed(a.seed, "graph"),
    )?;
    let init = if a.degree_zero {
        InitialCondition::DegreeZero {
            isolated: 1.min(model.n_states() - 1),
            otherwise: 0,
        }
    } else {
        InitialCondition::Iid(initial_profile(&a.initial, &model).to_step(&model, a.n)?)
    };
    let mut p = Process::new(&g, model, &init, derive_seed(a.seed, "dynamics"))?;
    let traj = p.run(a.t, a.m, a.record_dt)?;
    info!("{} events", traj.events);
    let mut w = output(a.out.as_deref(), "trajectory.csv")?;
    writeln!(w, "t,cell,state,value")?;
    for (t, f) in traj.times.iter().zip(&traj.frames) {
        for k in 0..f.grid_size() {
            for (c, label) in traj.labels.iter().enumerate() {
                writeln!(w, "{},{},{},{}", fmt_num(*t), k, label, f.value(k, c))?;
            }
        }
    }
    w.flush()?;
    if let Some(dir) = &a.out {
        let mut d = output(Some(dir), "densities.csv")?;
        writeln!(d, "t,{}", traj.labels.join(","))?;
        for (t, dens) in traj.times.iter().zip(&traj.densities) {
            let cols: Vec<String> = dens.iter().map(|x| x.to_string()).collect();
            writeln!(d, "{},{}", fmt_num(*t), cols.join(","))?;
        }
        d.flush()?;
    }
    Ok(())
}

fn cmd_meanfield(a: &MeanfieldArgs) -> Result<()> {
    let kernel = a.kernel.build()?;
    let model = a.model.spec()?.build()?;
    let u0 = initial_profile(&a.initial, &model).to_step(&model, a.m)?;
    let sol = meanfield::solve(
        &kernel,
        &model,
        &u0,
        SolverSettings::new(a.m, a.dt, a.t).record_every(a.record_dt),
    )?;
    info!(
        "simplex drift {:e}, min component {:e}",
        sol.max_sum_drift, sol.min_component
    );
    let mut w = output(a.out.as_deref(), "meanfield.csv")?;
    writeln!(w, "t,cell,state,value")?;
    for (t, f) in sol.times.iter().zip(&sol.values) {
        for k in 0..f.grid_size() {
            for (c, label) in sol.labels.iter().enumerate() {
                writeln!(w, "{},{},{},{}", fmt_num(*t), k, label, f.value(k, c))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_spectral(a: &SpectralArgs) -> Result<()> {
    let kernel = a.kernel.build()?;
    let s = spectral::spectrum(&kernel, a.m, a.k.min(a.m))?;
    let mut out = io::stdout().lock();
    for (i, l) in s.eigenvalues.iter().enumerate() {
        writeln!(out, "{},{}", i + 1, fmt_num(*l))?;
    }
    Ok(())
}

fn default_config(kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut c = match kind {
        ExperimentKind::Convergence => return Ok(golden_convergence()?.config),
        ExperimentKind::ThresholdSweep => {
            ExperimentConfig::new(kind, KernelSpec::Constant { p: 1.0 }, 100.0)
        }
        ExperimentKind::SparseCounterexample => {
            let mut c = ExperimentConfig::new(kind, KernelSpec::Constant { p: 1.0 }, 3.0);
            c.beta = Some(2.0);
            c.kappa = KappaRule::Sparse { lambda: 1.0 };
            c.n_list = vec![100_000];
            c.replicas = 5;
            c.dt = 1e-3;
            c.record_dt = 0.01;
            c
        }
        ExperimentKind::EmpiricalOpnorm => {
            let mut c = ExperimentConfig::new(kind, KernelSpec::Constant { p: 0.5 }, 1.0);
            c.n_list = vec![500, 1000, 2000];
            c.final_median_below = Some(0.1);
            c
        }
        ExperimentKind::EquilibriumCrosscheck => {
            let mut c = ExperimentConfig::new(
                kind,
                KernelSpec::SeparablePoly {
                    coeffs: vec![0.0, 1.0],
                },
                200.0,
            );
            c.beta = Some(6.0);
            c.m = 100;
            c
        }
    };
    c.seed = 0;
    Ok(c)
}

fn build_config(kind: ExperimentKind, a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut c = match &a.config {
        Some(path) => {
            let c = ExperimentConfig::load(path)
                .with_context(|| format!("loading config {}", path.display()))?;
            if c.kind != kind {
                bail!(
                    "config {} is for {}, not {}",
                    path.display(),
                    c.kind.name(),
                    kind.name()
                );
            }
            c
        }
        None => {
            if kind == ExperimentKind::ThresholdSweep && a.betas.is_none() {
                bail!("threshold needs --betas or --config");
            }
            default_config(kind)?
        }
    };
    if let Some(k) = &a.kernel {
        c.kernel = k.clone();
    }
    if let Some(m) = a.m {
        c.m = m;
    }
    if let Some(t) = a.t {
        c.t_end = t;
    }
    if let Some(dt) = a.dt {
        c.dt = dt;
    }
    if let Some(b) = &a.betas {
        c.betas = b.clone();
    }
    if let Some(b) = a.beta {
        c.beta = Some(b);
        if kind == ExperimentKind::Convergence {
            c.model = ModelSpec::sis(b);
        }
    }
    if let Some(n) = &a.n {
        c.n_list = n.clone();
    }
    if let Some(r) = a.replicas {
        c.replicas = r;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    if let Some(o) = &a.out {
        c.output_dir = Some(o.clone());
    }
    c.validate()?;
    Ok(c)
}

fn print_report(r: &Report) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{} ({} v{})", r.kind.name(), r.rng, r.version)?;
    writeln!(out, "{}", serde_json::to_string(&r.summary)?)?;
    for n in &r.notes {
        writeln!(out, "note: {n}")?;
    }
    for a in &r.assertions {
        writeln!(
            out,
            "[{}] {}: {}",
            if a.passed { "PASS" } else { "FAIL" },
            a.name,
            a.detail
        )?;
    }
    Ok(())
}

fn cmd_experiment(kind: ExperimentKind, a: &ExperimentArgs) -> Result<()> {
    let config = build_config(kind, a)?;
    if let Some(dir) = &config.output_dir {
        create_out(dir)?;
    }
    let report = experiments::run(&config)?;
    print_report(&report)?;
    if !report.passed() {
        return Err(AssertionsFailed.into());
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Sample(a) => cmd_sample(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Meanfield(a) => cmd_meanfield(a),
        Command::Spectral(a) => cmd_spectral(a),
        Command::Converge(a) => cmd_experiment(ExperimentKind::Convergence, a),
        Command::Threshold(a) => cmd_experiment(ExperimentKind::ThresholdSweep, a),
        Command::SparseCx(a) => cmd_experiment(ExperimentKind::SparseCounterexample, a),
        Command::Opnorm(a) => cmd_experiment(ExperimentKind::EmpiricalOpnorm, a),
        Command::Equilibrium(a) => cmd_experiment(ExperimentKind::EquilibriumCrosscheck, a),
    }
}

fn main() -> ExitCode {
    let version: &'static str = Box::leak(
        format!("{} (golden {})", graphon_mf::VERSION, golden_sha256()).into_boxed_str(),
    );
    let matches = match Cli::command().version(version).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<AssertionsFailed>() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
