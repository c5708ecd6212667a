use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use igfem_topo::driver::{
    builtin_problem, gradient_check, run_optimization, GradientReport, Problem, ResolutionOverrides,
    BUILTIN_PROBLEMS,
};
use igfem_topo::io::{
    parse_config, read_design, snapshot_path, write_contour, write_design, write_history,
    write_unstructured_grid, GradientCheckConfig, RunConfig,
};
use igfem_topo::Error;

#[derive(Parser)]
#[command(name = "igfem-topo", version, about = "Levelset topology optimization with enriched finite elements")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the configured problem.
    Run { config: PathBuf },
    /// Compare analytic gradients with central differences.
    CheckGradients {
        config: PathBuf,
        /// Design snapshot to check instead of the initial design.
        #[arg(long)]
        design: Option<PathBuf>,
    },
    /// Write the geometry of a stored design snapshot.
    Export {
        config: PathBuf,
        #[arg(long)]
        iteration: usize,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// Print the built-in problems.
    ListProblems,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    ContourPolyline,
    UnstructuredGrid,
    Both,
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_numerical() {
        ExitCode::from(3)
    } else {
        ExitCode::from(2)
    }
}

fn load(path: &Path) -> Result<(RunConfig, Problem), Error> {
    let cfg = parse_config(path)?;
    let problem = Problem::new(cfg.problem.clone())?;
    std::fs::create_dir_all(&cfg.output.directory).map_err(|e| Error::Io {
        path: cfg.output.directory.clone(),
        source: e,
    })?;
    Ok((cfg, problem))
}

fn write_geometry(problem: &Problem, design: &[f64], stem: &Path, format: Format) -> Result<(), Error> {
    let field = problem.field(design)?;
    let model = problem.model(&field)?;
    if matches!(format, Format::ContourPolyline | Format::Both) {
        write_contour(&model, &stem.with_extension("contour.txt"))?;
    }
    if matches!(format, Format::UnstructuredGrid | Format::Both) {
        write_unstructured_grid(&model, &stem.with_extension("vtk"))?;
    }
    Ok(())
}

fn report_csv(report: &GradientReport) -> String {
    let mut s = String::from(
        "variable,analytic_compliance,fd_compliance,compliance_error,analytic_volume,fd_volume,volume_error,topology_event\n",
    );
    for g in &report.samples {
        writeln!(
            s,
            "{},{:.16e},{:.16e},{:.6e},{:.16e},{:.16e},{:.6e},{}",
            g.variable,
            g.analytic_compliance,
            g.fd_compliance,
            report.compliance_error(g),
            g.analytic_volume,
            g.fd_volume,
            report.volume_error(g),
            g.topology_event
        )
        .unwrap();
    }
    s
}

/// Runs the check, writes `gradient_check.csv` and reports whether the
/// required fraction passed.
fn check(problem: &Problem, design: &[f64], gc: &GradientCheckConfig, dir: &Path) -> Result<bool, Error> {
    let report = gradient_check(problem, design, gc.samples, gc.step, gc.seed)?;
    let path = dir.join("gradient_check.csv");
    std::fs::write(&path, report_csv(&report)).map_err(|e| Error::Io { path, source: e })?;
    let (c, v) = report.pass_fractions(gc.tolerance);
    let events = report.samples.len() - report.clean().count();
    println!(
        "gradient check: {} samples, {events} topology events, within {:e}: compliance {:.1}%, volume {:.1}%",
        report.samples.len(),
        gc.tolerance,
        100.0 * c,
        100.0 * v
    );
    Ok(c >= gc.required_fraction && v >= gc.required_fraction)
}

fn run(path: &Path) -> Result<(), Error> {
    let (cfg, problem) = load(path)?;
    let dir = &cfg.output.directory;
    if cfg.gradient_check.enabled {
        let s0 = problem.initial_design()?;
        if !check(&problem, &s0, &cfg.gradient_check, dir)? {
            return Err(Error::NumericGuard("gradient check failed on the initial design".into()));
        }
    }
    let every = cfg.output.snapshot_every;
    let outcome = run_optimization(&problem, |r, design| {
        if r.iteration % every == 0 {
            write_design(design, &snapshot_path(dir, r.iteration))?;
        }
        Ok(())
    });
    match outcome {
        Ok(out) => {
            let last = out.final_record();
            write_design(&out.design, &snapshot_path(dir, last.iteration))?;
            write_history(&out.history, &dir.join("history.csv"))?;
            write_geometry(&problem, &out.design, &dir.join("final"), Format::Both)?;
            println!(
                "{}: {} iterations{}, C = {:.6}, volume fraction = {:.4}, output in {}",
                problem.spec().name,
                last.iteration,
                if out.converged { " (converged)" } else { "" },
                last.compliance,
                last.volume_fraction,
                dir.display()
            );
            Ok(())
        }
        Err(failure) => {
            write_history(&failure.history, &dir.join("history.csv"))?;
            if !failure.design.is_empty() {
                write_design(&failure.design, &dir.join("failed_design.txt"))?;
            }
            warn!("run failed; design kept in {}", dir.join("failed_design.txt").display());
            Err(failure.error)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let result = match cli.command {
        Command::ListProblems => {
            for name in BUILTIN_PROBLEMS {
                let s = builtin_problem(name, ResolutionOverrides::default()).expect("builtin");
                println!(
                    "{name:12} {:?}, {} x {} domain, {} x {} mesh, {} x {} RBFs, V_c = {}",
                    s.physics, s.domain[0], s.domain[1], s.mesh[0], s.mesh[1], s.rbf_grid[0], s.rbf_grid[1], s.volume_fraction
                );
            }
            Ok(())
        }
        Command::Run { config } => run(&config),
        Command::CheckGradients { config, design } => (|| {
            let (cfg, problem) = load(&config)?;
            let s = match design {
                Some(p) => read_design(&p)?,
                None => problem.initial_design()?,
            };
            if s.len() != problem.num_design_variables() {
                return Err(Error::InvalidArgument(format!(
                    "design has {} variables, the problem has {}",
                    s.len(),
                    problem.num_design_variables()
                )));
            }
            if check(&problem, &s, &cfg.gradient_check, &cfg.output.directory)? {
                Ok(())
            } else {
                Err(Error::NumericGuard("analytic and finite-difference gradients disagree".into()))
            }
        })(),
        Command::Export { config, iteration, format } => (|| {
            let (cfg, problem) = load(&config)?;
            let snap = snapshot_path(&cfg.output.directory, iteration);
            let design = read_design(&snap)?;
            if design.len() != problem.num_design_variables() {
                return Err(Error::InvalidArgument(format!("{} does not match the problem", snap.display())));
            }
            write_geometry(&problem, &design, &snap.with_extension(""), format)?;
            info!("exported {}", snap.display());
            Ok(())
        })(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
