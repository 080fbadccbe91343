use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use smagrb::config::RunConfig;
use smagrb::mesh::{BoundaryTag, Mesh};
use smagrb::pipeline::{run_offline, run_online, run_validate, Artifacts};
use smagrb::Error;

const CONFIG_HELP: &str = "\
Configuration keys (TOML; every key except problem.benchmark and problem.mu_range is optional):

  [problem]
  benchmark = { kind = \"cavity\", n = 16 }     cavity | step (resolution, geometry) | mesh (path)
  mu_range = [1000.0, 3000.0]                   Reynolds number range
  inflow                                        default: unit lid (cavity), parabolic mean 1 (step)
  cs = 0.1                                      Smagorinsky constant
  force = [0.0, 0.0]                            constant body force

  [truth]  dt = 10.0, tol = 1e-10, max_steps = 5000
  [eim]    train_points = 100, tol = 5e-4, max_terms = 50
  [certification]
           beta_samples = 20, beta_budget = 40, beta_tol = 1e-2, gamma_samples = 3,
           rho_formula = \"squared\" | \"literal\", inverse_samples = 200, inverse_safety = 1.2,
           sobolev_tol = 1e-8, sobolev_max_iter = 100
  [rb]     train_points = 100, tol = 5e-5, n_pod = 10, max_basis = 30,
           online_tol = 1e-10, online_max_steps = 5000
  [run]    seed = 0, jobs = 0 (all cores), verification_points = 12, output = \"out\"

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.";

#[derive(Parser)]
#[command(name = "smagrb", version, about = "Certified reduced-basis solver for the steady 2D Smagorinsky model", after_help = CONFIG_HELP)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Worker threads (overrides run.jobs; 0 uses all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the reduced model: snapshots, EIM, constants, greedy basis.
    Offline {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides run.output).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Reduced solves compared against truth solves; writes report.csv.
    Online {
        #[arg(long)]
        out: PathBuf,
        /// Reynolds numbers: `a,b,c` or `lo:hi:n` (default: verification grid).
        #[arg(long)]
        mu: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Error bound against true error on a grid; writes validation.csv.
    Validate {
        #[arg(long)]
        out: PathBuf,
        /// Reynolds numbers: `a,b,c` or `lo:hi:n` (default: verification grid).
        #[arg(long)]
        mu: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Write the mesh of a configuration, or summarize a mesh file.
    Mesh {
        #[arg(long, required_unless_present = "inspect")]
        config: Option<PathBuf>,
        /// Mesh file to write.
        #[arg(long, requires = "config")]
        out: Option<PathBuf>,
        /// Mesh file to summarize.
        #[arg(long, conflicts_with = "config")]
        inspect: Option<PathBuf>,
    },
}

fn parse_mu(text: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::Config(format!("cannot parse --mu `{text}`; use `a,b,c` or `lo:hi:n`"));
    let parts: Vec<&str> = text.split(':').collect();
    let mus = match parts.as_slice() {
        [lo, hi, n] => {
            let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
            let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
            let n: usize = n.trim().parse().map_err(|_| bad())?;
            smagrb::config::uniform_grid([lo, hi], n)
        }
        [_] => text
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?,
        _ => return Err(bad()),
    };
    if mus.is_empty() || mus.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::Config(format!("--mu `{text}` must list positive Reynolds numbers")));
    }
    Ok(mus)
}

fn thread_pool(jobs: usize) -> Result<(), Error> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn stored_jobs(out: &Path) -> usize {
    RunConfig::load(&Artifacts::new(out).config()).map_or(0, |c| c.run.jobs)
}

fn inspect(mesh: &Mesh) {
    println!("nodes       {}", mesh.n_nodes());
    println!("triangles   {}", mesh.n_triangles());
    println!("area        {:.6}", mesh.area());
    println!("max h       {:.6}", mesh.max_diameter());
    for tag in [BoundaryTag::Inflow, BoundaryTag::Wall, BoundaryTag::Neumann] {
        let n = mesh.boundary_edges().iter().filter(|e| e.tag == tag).count();
        println!("{:<11} {n} edges", tag.as_str());
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Offline { config, out, common } => {
            let cfg = RunConfig::load(&config)?;
            thread_pool(common.jobs.unwrap_or(cfg.run.jobs))?;
            let base = config.parent().unwrap_or(Path::new("."));
            let out = out.unwrap_or_else(|| base.join(&cfg.run.output));
            let s = run_offline(&cfg, base, &out)?;
            println!(
                "offline done: {} triangles, M = {}, N = {} ({}), artifacts in {}",
                s.n_elements,
                s.eim_terms,
                s.rb_size,
                if s.greedy_converged { "converged" } else { "not converged" },
                out.display()
            );
            Ok(true)
        }
        Command::Online { out, mu, common } => {
            Artifacts::new(&out).require_offline()?;
            thread_pool(common.jobs.unwrap_or_else(|| stored_jobs(&out)))?;
            let mus = match mu {
                Some(m) => parse_mu(&m)?,
                None => RunConfig::load(&Artifacts::new(&out).config())?.verification_grid(),
            };
            let rows = run_online(&out, &mus)?;
            println!("{}", smagrb::rb_online::CSV_HEADER);
            for r in &rows {
                println!("{}", r.csv_line());
            }
            Ok(rows.iter().all(|r| r.error.is_none()))
        }
        Command::Validate { out, mu, common } => {
            Artifacts::new(&out).require_offline()?;
            thread_pool(common.jobs.unwrap_or_else(|| stored_jobs(&out)))?;
            let mus = mu.as_deref().map(parse_mu).transpose()?;
            let report = run_validate(&out, mus.as_deref())?;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.3}"));
            println!(
                "validated {} points: max effectivity {}, median {}, max inf-sup surrogate error {:.2e}",
                report.rows.len(),
                fmt(report.max_effectivity),
                fmt(report.median_effectivity),
                report.max_beta_surrogate_error
            );
            Ok(report.failures.is_empty())
        }
        Command::Mesh { config, out, inspect: file } => {
            let mesh = match (&file, &config) {
                (Some(f), _) => Mesh::load(f)?,
                (None, Some(c)) => {
                    let cfg = RunConfig::load(c)?;
                    cfg.problem.benchmark.build_mesh(c.parent().unwrap_or(Path::new(".")))?
                }
                (None, None) => unreachable!("clap requires one of the two"),
            };
            if let Some(o) = out {
                mesh.save(&o)?;
            }
            inspect(&mesh);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
