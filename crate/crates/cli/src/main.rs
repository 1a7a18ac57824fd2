//! `ksgs`: steady states, energies, mass-function evolution and verification
//! suites for the 2D porous-medium Keller-Segel model.
//!
//! Exit codes: 0 success, 1 usage or I/O error, 2 solver failure,
//! 3 verification failure.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;

use ksgs::mass_pde::{
    comparison_monitor, convergence_rate, dt_policy_description, evolution_grid, evolve, scaled_steady_state,
    write_checkpoint_csv, Barrier, Controller, EvolutionState, RunManifest, DEFAULT_EVOLUTION_NODES,
};
use ksgs::potential::{
    el_residual, el_residual_with, free_energy, newtonian_potential_radial, ElResidual, EnergyBreakdown,
};
use ksgs::radial::{mass_function, read_density_csv};
use ksgs::steady::{solve_steady_with, SolverConfig};
use ksgs::suites::{noise_floor, run_suite, SUITES};
use ksgs::Error;

#[derive(Parser)]
#[command(name = "ksgs", version, about = "Ground states of the 2D porous-medium Keller-Segel model")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "KSGS_OUT_DIR", default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the steady state and write `r,theta,rho` plus a JSON sidecar.
    Steady {
        #[arg(long)]
        m: f64,
        #[arg(long)]
        mass: f64,
        /// Grid nodes across the support.
        #[arg(long, default_value_t = ksgs::config::DEFAULT_SUPPORT_NODES)]
        support_nodes: usize,
    },
    /// Energy report of a profile (`r,value` or `r,theta,rho`).
    Energy {
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        m: f64,
    },
    /// Evolve the mass function from `steady`, `scaled:a`, `disk:R` or `file:path`.
    Evolve {
        #[arg(long)]
        init: String,
        #[arg(long)]
        m: f64,
        #[arg(long, default_value_t = 1.0)]
        mass: f64,
        /// Final time.
        #[arg(long = "T", default_value_t = 150.0)]
        horizon: f64,
        #[arg(long, default_value_t = 60)]
        checkpoints: usize,
        #[arg(long, default_value_t = DEFAULT_EVOLUTION_NODES)]
        nodes: usize,
    },
    /// Run a verification suite and write its JSON report.
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// An error paired with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type Outcome<T> = std::result::Result<T, Failure>;

fn usage(error: anyhow::Error) -> Failure {
    Failure { code: 1, error }
}

fn code_of(e: &Error) -> u8 {
    match e {
        Error::Io(_)
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Parse(_)
        | Error::InvalidParameter(_)
        | Error::InvalidGrid(_) => 1,
        _ => 2,
    }
}

trait Classify<T> {
    /// Maps library errors to their exit code, with context.
    fn classify(self, what: &str) -> Outcome<T>;
}

impl<T> Classify<T> for ksgs::Result<T> {
    fn classify(self, what: &str) -> Outcome<T> {
        self.map_err(|e| Failure { code: code_of(&e), error: anyhow::Error::new(e).context(what.to_string()) })
    }
}

trait Io<T> {
    fn io(self, what: &str) -> Outcome<T>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> Io<T> for std::result::Result<T, E> {
    fn io(self, what: &str) -> Outcome<T> {
        self.with_context(|| what.to_string()).map_err(usage)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> Outcome<()> {
    fs::create_dir_all(&cli.out).io("creating output directory")?;
    match cli.command {
        Command::Steady { m, mass, support_nodes } => cmd_steady(&cli.out, m, mass, support_nodes),
        Command::Energy { profile, m } => cmd_energy(&cli.out, &profile, m),
        Command::Evolve { init, m, mass, horizon, checkpoints, nodes } => {
            cmd_evolve(&cli.out, &init, m, mass, horizon, checkpoints, nodes)
        }
        Command::Verify { suite, seed } => cmd_verify(&cli.out, &suite, seed),
    }
}

fn check_exponent(m: f64) -> Outcome<()> {
    if !(m.is_finite() && m > 1.0) {
        return Err(usage(anyhow!("--m must exceed 1, got {m}")));
    }
    Ok(())
}

fn check_mass(mass: f64) -> Outcome<()> {
    if !(mass.is_finite() && mass > 0.0) {
        return Err(usage(anyhow!("--mass must be positive, got {mass}")));
    }
    Ok(())
}

/// `12.5` -> `12.5`, `1` -> `1`; safe in file names.
fn label(x: f64) -> String {
    format!("{x}").replace('-', "m")
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome<()> {
    let text = serde_json::to_string_pretty(value).io("serialising report")?;
    fs::write(path, text + "\n").io(&format!("writing {}", path.display()))
}

fn cmd_steady(out: &Path, m: f64, mass: f64, support_nodes: usize) -> Outcome<()> {
    check_exponent(m)?;
    check_mass(mass)?;
    let cfg = SolverConfig { support_nodes, ..SolverConfig::default() };
    let s = solve_steady_with(m, mass, &cfg).classify("solving for the steady state")?;
    let res = el_residual(&s).classify("evaluating the Euler-Lagrange residual")?;
    let stem = format!("steady_m{}_M{}", label(m), label(mass));
    let csv_path = out.join(format!("{stem}.csv"));
    s.save_csv(&csv_path).classify("writing profile")?;
    write_json(&out.join(format!("{stem}.json")), &s.sidecar(res.inner))?;
    println!("R = {}", s.radius);
    println!("D = {}", s.multiplier);
    println!("EL residual: inner = {:e}, outer = {:e}", res.inner, res.outer);
    println!("wrote {}", csv_path.display());
    Ok(())
}

#[derive(Serialize)]
struct EnergyReport {
    profile: String,
    m: f64,
    #[serde(rename = "M")]
    mass: f64,
    #[serde(flatten)]
    energy: EnergyBreakdown,
    residual: ElResidual,
    multiplier_check: &'static str,
}

fn cmd_energy(out: &Path, profile: &Path, m: f64) -> Outcome<()> {
    check_exponent(m)?;
    let file = fs::File::open(profile).io(&format!("opening {}", profile.display()))?;
    let rho = read_density_csv(file).classify("reading profile")?;
    let energy = free_energy(&rho, m).classify("evaluating the free energy")?;
    let u = newtonian_potential_radial(&rho, rho.support_radius()).classify("computing the potential")?;
    let theta: Vec<f64> = rho.values().iter().map(|v| v.powf(m - 1.0)).collect();
    let residual = el_residual_with(m, &theta, &u, rho.support_index(), energy.d_formula);
    let agrees = (energy.d_formula - energy.d_profile).abs() <= 1e-3 * energy.d_formula.abs();
    let report = EnergyReport {
        profile: profile.display().to_string(),
        m,
        mass: rho.quadrature_mass(),
        energy,
        residual,
        multiplier_check: if agrees { "PASS" } else { "FAIL" },
    };
    let stem = profile.file_stem().and_then(|s| s.to_str()).unwrap_or("profile");
    let path = out.join(format!("{stem}_energy.json"));
    write_json(&path, &report)?;
    println!("{}", serde_json::to_string_pretty(&report).io("serialising report")?);
    Ok(())
}

enum Init {
    Steady,
    Scaled(f64),
    Disk(f64),
    File(PathBuf),
}

fn parse_init(spec: &str) -> Outcome<Init> {
    let number = |s: &str, what: &str| -> Outcome<f64> {
        let v: f64 = s.parse().map_err(|_| usage(anyhow!("--init {what}: `{s}` is not a number")))?;
        if !(v.is_finite() && v > 0.0) {
            return Err(usage(anyhow!("--init {what} must be positive, got {v}")));
        }
        Ok(v)
    };
    match spec.split_once(':') {
        None if spec == "steady" => Ok(Init::Steady),
        Some(("scaled", a)) => {
            let a = number(a, "scaled")?;
            if a > 1.0 {
                return Err(usage(anyhow!("--init scaled:a needs a <= 1, got {a}")));
            }
            Ok(Init::Scaled(a))
        }
        Some(("disk", r)) => Ok(Init::Disk(number(r, "disk")?)),
        Some(("file", p)) if !p.is_empty() => Ok(Init::File(PathBuf::from(p))),
        _ => Err(usage(anyhow!("--init must be steady, scaled:a, disk:R or file:path, got `{spec}`"))),
    }
}

fn cmd_evolve(
    out: &Path,
    init: &str,
    m: f64,
    mass: f64,
    horizon: f64,
    checkpoints: usize,
    nodes: usize,
) -> Outcome<()> {
    check_exponent(m)?;
    let init = parse_init(init)?;
    if !(horizon > 0.0) || checkpoints == 0 {
        return Err(usage(anyhow!("--T must be positive and --checkpoints at least 1")));
    }
    let file_density = match &init {
        Init::File(path) => {
            let file = fs::File::open(path).io(&format!("opening {}", path.display()))?;
            Some(read_density_csv(file).classify("reading initial profile")?)
        }
        _ => None,
    };
    // the matched steady state carries the initial mass
    let mass = match &file_density {
        Some(rho) => rho.quadrature_mass(),
        None => mass,
    };
    check_mass(mass)?;
    let base = solve_steady_with(m, mass, &SolverConfig::default()).classify("solving for the steady state")?;
    let grid = evolution_grid(&base, nodes).classify("building the evolution grid")?;
    let (state, label, a) = match &init {
        Init::Steady => (scaled_steady_state(&base, 1.0, grid), "steady".to_string(), None),
        Init::Scaled(a) => (scaled_steady_state(&base, *a, grid), format!("scaled:{a}"), Some(*a)),
        Init::Disk(radius) => {
            if *radius >= grid.r_max() {
                return Err(usage(anyhow!("disk radius {radius} exceeds the domain {}", grid.r_max())));
            }
            let values = grid.nodes().map(|r| mass * (r * r / (radius * radius)).min(1.0)).collect();
            (EvolutionState::from_mass(grid, values, m, mass), format!("disk:{radius}"), None)
        }
        Init::File(path) => {
            let rho = file_density.as_ref().expect("loaded above");
            if rho.support_radius() >= grid.r_max() {
                return Err(usage(anyhow!("initial support exceeds the domain {}", grid.r_max())));
            }
            let mf = mass_function(rho);
            let values = grid.nodes().map(|r| mf.at(r)).collect();
            (EvolutionState::from_mass(grid, values, m, mass), format!("file:{}", path.display()), None)
        }
    };
    let state = state.classify("building the initial state")?;
    let controller = Controller::uniform(horizon, checkpoints);
    let history = evolve(&state, &controller, Some(&|r| base.mass_at(r))).classify("evolving")?;

    for (k, cp) in history.iter().enumerate() {
        let path = out.join(format!("checkpoint_{k:03}.csv"));
        let file = fs::File::create(&path).io(&format!("creating {}", path.display()))?;
        write_checkpoint_csv(&cp.state, std::io::BufWriter::new(file)).classify("writing checkpoint")?;
    }
    let comparison = match a {
        Some(a) => {
            let (sub, sup) = Barrier::pair(&base, a).classify("building barriers")?;
            Some(comparison_monitor(&history, &sub, &sup, 1e-4 * mass).classify("comparing with barriers")?)
        }
        None => None,
    };
    let floor = noise_floor(&base, nodes).classify("measuring the noise floor")?;
    let fit = convergence_rate(&history, &base, 0.2 * horizon, floor).classify("fitting the decay rate")?;
    let finite = |x: f64| x.is_finite().then_some(x);
    let manifest = RunManifest {
        m,
        mass,
        init: label,
        dt_policy: dt_policy_description(&controller),
        nodes,
        r_max: grid.r_max(),
        checkpoints: history.iter().map(|c| c.state.t).collect(),
        sup_distances: history.iter().filter_map(|c| c.sup_distance).collect(),
        lambda_fit: finite(fit.lambda_fit),
        r_squared: finite(fit.r_squared),
        lambda_theory: fit.lambda_theory,
        comparison: comparison.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    let last = manifest.sup_distances.last().copied().unwrap_or(f64::NAN);
    println!("final sup distance = {last:e}");
    println!(
        "lambda_fit = {:?}, r^2 = {:?}, lambda_theory = {}",
        manifest.lambda_fit, manifest.r_squared, fit.lambda_theory
    );
    if let Some(report) = comparison {
        if !report.holds {
            return Err(Failure {
                code: 3,
                error: anyhow!(
                    "barrier ordering violated: worst lower margin {:e}, worst upper margin {:e}, tolerance {:e}",
                    report.worst_lower,
                    report.worst_upper,
                    report.tolerance
                ),
            });
        }
        println!("comparison: PASS (worst margins {:e}, {:e})", report.worst_lower, report.worst_upper);
    }
    Ok(())
}

fn cmd_verify(out: &Path, suite: &str, seed: u64) -> Outcome<()> {
    if !SUITES.contains(&suite) {
        return Err(usage(anyhow!("unknown suite `{suite}`; expected one of {}", SUITES.join(", "))));
    }
    let report = run_suite(suite, seed).classify("running suite")?;
    let path = out.join(format!("verify_{suite}_seed{seed}.json"));
    let json = report.to_json().classify("serialising report")?;
    fs::write(&path, json + "\n").io(&format!("writing {}", path.display()))?;
    let failed = report.failures().count();
    println!("{suite}: {} cases, {failed} failed -> {}", report.cases.len(), path.display());
    if failed > 0 {
        for c in report.failures().take(10) {
            println!("  FAIL {} lhs={:e} rhs={:e} margin={:e}", c.case_id, c.lhs, c.rhs, c.margin);
        }
        return Err(Failure { code: 3, error: anyhow!("{failed} case(s) failed in suite {suite}") });
    }
    Ok(())
}
