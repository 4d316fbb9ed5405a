//! `chern-extremal`: run conformal extremal metric scenarios and write
//! reports and field dumps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use chern_extremal::scenario::{write_csv, write_field};
use chern_extremal::study;
use chern_extremal::{RunReport, ScalarField, Scenario, Tolerances};
use clap::{Args, Parser, Subcommand};

// keeps freed field buffers mapped instead of faulting them in again
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Conformal extremal Hermitian metrics on flat complex tori.
#[derive(Parser, Debug)]
#[command(name = "chern-extremal", version, about)]
struct Cli {
    /// Parent directory for run outputs.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,

    /// Set every check tolerance to this value.
    #[arg(long, global = true, allow_negative_numbers = true)]
    tol: Option<f64>,

    /// Print nothing on success.
    #[arg(long, global = true)]
    quiet: bool,

    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "CHERN_EXTREMAL_THREADS", hide_env_values = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ScenarioArg {
    /// Scenario TOML file, or the name of a builtin scenario.
    scenario: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute the extremal metric and write f_G, f_E and s_E.
    Solve {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Also write CSV copies of the fields.
        #[arg(long)]
        csv: bool,
    },
    /// Run the identity suite.
    Verify {
        #[command(flatten)]
        scenario: ScenarioArg,
    },
    /// Evaluate the Calabi functional and check its variations.
    Calabi {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Exponents, comma separated.
        #[arg(long, value_delimiter = ',')]
        p: Vec<f64>,
        /// Ray parameters, comma separated.
        #[arg(long, value_delimiter = ',')]
        t: Vec<f64>,
    },
    /// Grid refinement study of the extremal factor.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Grid sizes, comma separated and ascending.
        #[arg(long, value_delimiter = ',')]
        points: Vec<usize>,
    },
    /// Pretty-print a stored report.
    Report {
        /// A report.json file or a run directory.
        path: PathBuf,
    },
    /// List the builtin scenarios.
    List,
}

fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        return Scenario::load(path).with_context(|| format!("loading scenario {arg}"));
    }
    match Scenario::builtin(arg) {
        Some(s) => Ok(s),
        None => {
            let names: Vec<_> = Scenario::builtin_names().collect();
            bail!("no scenario file {arg:?} and no builtin of that name (builtins: {})", names.join(", "))
        }
    }
}

/// Creates `<out>/<scenario>-<timestamp>` and points `<out>/latest` at it.
fn run_directory(out: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
    let mut dir = out.join(format!("{name}-{stamp}"));
    let mut k = 1;
    while dir.exists() {
        dir = out.join(format!("{name}-{stamp}-{k}"));
        k += 1;
    }
    std::fs::create_dir(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn link_latest(out: &Path, dir: &Path) -> Result<()> {
    let latest = out.join("latest");
    if latest.symlink_metadata().is_ok() {
        if latest.is_dir() && !latest.symlink_metadata()?.file_type().is_symlink() {
            std::fs::remove_dir_all(&latest)?;
        } else {
            std::fs::remove_file(&latest)?;
        }
    }
    #[cfg(unix)]
    {
        let target = dir.file_name().expect("run directory has a name");
        std::os::unix::fs::symlink(target, &latest)?;
    }
    #[cfg(not(unix))]
    {
        std::fs::create_dir(&latest)?;
        for entry in std::fs::read_dir(dir)? {
            let entry = entry?;
            std::fs::copy(entry.path(), latest.join(entry.file_name()))?;
        }
    }
    Ok(())
}

struct Run {
    dir: PathBuf,
    out: PathBuf,
}

impl Run {
    fn start(cli: &Cli, scenario: &Scenario) -> Result<Self> {
        let dir = run_directory(&cli.out, &scenario.name)?;
        std::fs::write(dir.join("scenario.toml"), scenario.to_toml())?;
        Ok(Self { dir, out: cli.out.clone() })
    }

    fn field(&self, name: &str, f: &ScalarField, csv: bool) -> Result<()> {
        write_field(f, &self.dir.join(format!("{name}.cexf")))?;
        if csv {
            write_csv(f, &self.dir.join(format!("{name}.csv")))?;
        }
        Ok(())
    }

    fn finish(self, report: &RunReport, quiet: bool) -> Result<bool> {
        report.write(&self.dir.join("report.json"))?;
        link_latest(&self.out, &self.dir)?;
        if !quiet || !report.passed {
            print!("{}", report.render());
            println!("  output: {}", self.dir.display());
        }
        Ok(report.passed)
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let prepare = |arg: &ScenarioArg| -> Result<(Scenario, Tolerances)> {
        let mut scenario = load_scenario(&arg.scenario)?;
        if let Some(seed) = cli.seed {
            scenario.seed = seed;
        }
        let tol = match cli.tol {
            Some(t) if t > 0.0 && t.is_finite() => scenario.tolerances.uniform(t),
            Some(t) => bail!("--tol must be positive, got {t}"),
            None => scenario.tolerances.clone(),
        };
        Ok((scenario, tol))
    };

    match &cli.command {
        Command::Solve { scenario, csv } => {
            let (scenario, tol) = prepare(scenario)?;
            let run = Run::start(cli, &scenario)?;
            let outcome = study::solve(&scenario, &tol)?;
            run.field("f_G", &outcome.gauduchon_factor, *csv)?;
            run.field("f_E", &outcome.extremal_factor, *csv)?;
            run.field("s_E", &outcome.extremal_curvature, *csv)?;
            run.finish(&outcome.report, cli.quiet)
        }
        Command::Verify { scenario } => {
            let (scenario, tol) = prepare(scenario)?;
            let run = Run::start(cli, &scenario)?;
            let report = study::verify(&scenario, &tol)?;
            run.finish(&report, cli.quiet)
        }
        Command::Calabi { scenario, p, t } => {
            let (scenario, tol) = prepare(scenario)?;
            let (default_p, default_t) = scenario.calabi_parameters();
            let p = if p.is_empty() { default_p } else { p.clone() };
            let t = if t.is_empty() { default_t } else { t.clone() };
            if let Some(bad) = p.iter().find(|&&v| v <= 1.0) {
                bail!("--p values must exceed 1, got {bad}");
            }
            let run = Run::start(cli, &scenario)?;
            let report = study::calabi(&scenario, &p, &t, &tol)?;
            run.finish(&report, cli.quiet)
        }
        Command::Sweep { scenario, points } => {
            let (scenario, tol) = prepare(scenario)?;
            let points = if points.is_empty() { scenario.sweep_points() } else { points.clone() };
            if points.windows(2).any(|w| w[0] >= w[1]) {
                bail!("--points must be strictly ascending");
            }
            let run = Run::start(cli, &scenario)?;
            let report = study::sweep(&scenario, &points, &tol)?;
            run.finish(&report, cli.quiet)
        }
        Command::Report { path } => {
            let file = if path.is_dir() { path.join("report.json") } else { path.clone() };
            let report = RunReport::read(&file).with_context(|| format!("reading {}", file.display()))?;
            print!("{}", report.render());
            Ok(report.passed)
        }
        Command::List => {
            for s in Scenario::builtins() {
                println!("{:<16} n = {}, N = {:>2}", s.name, s.dim, s.points);
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    // exit code 2 is reserved for failed checks
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global() {
            eprintln!("warning: could not size the thread pool: {e}");
        }
    }
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
