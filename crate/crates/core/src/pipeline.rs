//! Offline, online and validation drivers over an artifact directory.
//!
//! Every offline stage writes its artifact on completion and reuses an
//! existing one on the next run, so an interrupted run resumes where it
//! stopped. The greedy loop also checkpoints after every enrichment.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::Assembler;
use crate::certification::{
    compute_beta, compute_gamma, concat, effectivity_report, inverse_inequality_constant, lipschitz_constant,
    reference_snapshot, sobolev_fixed_point, CertificationState, ErrorBound, FeSobolev, XProduct,
    CERTIFICATION_FORMAT_VERSION,
};
use crate::config::{uniform_grid, RunConfig};
use crate::eim::{EimBasis, EimOptions};
use crate::error::{Error, Result};
use crate::fem::FeSpace;
use crate::mesh::Mesh;
use crate::rb_offline::{greedy, pod_seed, Estimator, GreedyOptions, GreedyStep, RbSpace};
use crate::rb_online::{eim_model_error, reconstruct, write_csv, BenchmarkRow, ReducedOperators, ReducedSolution};
use crate::rbf::fit_adaptive;
use crate::truth::{compute_lift, Snapshot, TruthSolver};

/// File layout of an output directory.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts { dir: dir.into() }
    }

    /// Fails with a hint unless an offline run has populated the directory.
    pub fn require_offline(&self) -> Result<()> {
        crate::read_artifact(&self.config()).map(|_| ())
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.toml")
    }

    pub fn mesh(&self) -> PathBuf {
        self.dir.join("mesh.txt")
    }

    pub fn snapshots(&self) -> PathBuf {
        self.dir.join("snapshots")
    }

    pub fn snapshot(&self, mu: f64) -> PathBuf {
        self.snapshots().join(format!("mu_{mu:e}.txt"))
    }

    pub fn eim(&self) -> PathBuf {
        self.dir.join("eim.json")
    }

    pub fn certification(&self) -> PathBuf {
        self.dir.join("certification.json")
    }

    pub fn rb_checkpoint(&self) -> PathBuf {
        self.dir.join("rb_checkpoint.json")
    }

    pub fn rb(&self) -> PathBuf {
        self.dir.join("rb.json")
    }

    pub fn reduced(&self) -> PathBuf {
        self.dir.join("reduced.json")
    }

    pub fn summary(&self) -> PathBuf {
        self.dir.join("offline_summary.json")
    }

    pub fn report_csv(&self) -> PathBuf {
        self.dir.join("report.csv")
    }

    pub fn report_json(&self) -> PathBuf {
        self.dir.join("report.json")
    }

    pub fn validation_json(&self) -> PathBuf {
        self.dir.join("validation.json")
    }

    pub fn validation_csv(&self) -> PathBuf {
        self.dir.join("validation.csv")
    }
}

fn stage<T>(name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    log::info!("stage {name}: start");
    let r = f().map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    });
    log::info!("stage {name}: {:.2} s", start.elapsed().as_secs_f64());
    r
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

/// Discretized problem of a configuration.
pub struct Problem {
    pub config: RunConfig,
    pub assembler: Arc<Assembler>,
    pub truth: TruthSolver,
}

impl Problem {
    pub fn new(config: RunConfig, mesh: Mesh) -> Result<Self> {
        let mut asm = Assembler::new(FeSpace::new(mesh)?, config.model_params())?;
        let lift = compute_lift(&asm, &config.inflow())?;
        asm.set_lift(lift)?;
        let assembler = Arc::new(asm);
        let truth = TruthSolver::new(assembler.clone(), config.truth.clone())?;
        Ok(Problem {
            config,
            assembler,
            truth,
        })
    }

    /// Rebuilds the problem stored in an output directory.
    pub fn open(art: &Artifacts) -> Result<Self> {
        let config = RunConfig::from_toml(&crate::read_artifact(&art.config())?)?;
        let mesh = Mesh::load(&art.mesh()).map_err(|e| match e {
            Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: art.mesh(),
                hint: "run the `offline` command for this output directory first".into(),
            },
            other => other,
        })?;
        Problem::new(config, mesh)
    }

    fn dims(&self) -> (usize, usize) {
        let sp = self.assembler.space();
        (sp.dim_y(), sp.dim_m())
    }
}

/// Truth snapshots cached on disk by Reynolds number.
pub struct SnapshotStore<'a> {
    problem: &'a Problem,
    art: &'a Artifacts,
}

impl<'a> SnapshotStore<'a> {
    pub fn new(problem: &'a Problem, art: &'a Artifacts) -> Result<Self> {
        std::fs::create_dir_all(art.snapshots())?;
        Ok(SnapshotStore { problem, art })
    }

    pub fn get(&self, mu: f64) -> Result<Snapshot> {
        let path = self.art.snapshot(mu);
        if path.exists() {
            return Snapshot::load(&path, Some(self.problem.dims()));
        }
        let s = self.problem.truth.solve(mu)?;
        log::debug!("truth mu = {mu}: {} steps, {:.2} s", s.iterations, s.wall_time);
        s.save(&path)?;
        Ok(s)
    }

    pub fn get_many(&self, mus: &[f64]) -> Result<Vec<Snapshot>> {
        mus.par_iter().map(|&mu| self.get(mu)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineSummary {
    pub n_elements: usize,
    pub velocity_dofs: usize,
    pub pressure_dofs: usize,
    pub eim_terms: usize,
    pub eim_history: Vec<f64>,
    pub mu_bar: f64,
    pub c_t: f64,
    pub c_inv: f64,
    pub rho: f64,
    pub beta_samples: usize,
    pub rb_size: usize,
    pub rb_velocity_size: usize,
    pub greedy_converged: bool,
    pub greedy_history: Vec<GreedyStep>,
    /// Wall time per stage in seconds, in pipeline order.
    pub stage_times: Vec<(String, f64)>,
}

/// Runs (or resumes) all offline stages into `out`.
pub fn run_offline(config: &RunConfig, config_dir: &Path, out: &Path) -> Result<OfflineSummary> {
    std::fs::create_dir_all(out)?;
    let art = Artifacts::new(out);
    let mut times = Vec::new();
    let mut timed = |name: &str, t: Instant| times.push((name.to_string(), t.elapsed().as_secs_f64()));

    if art.config().exists() {
        let stored = RunConfig::from_toml(&crate::read_artifact(&art.config())?)?;
        if &stored != config {
            return Err(Error::Config(format!(
                "{} holds artifacts of a different configuration; use a fresh output directory",
                out.display()
            )));
        }
    }
    let t = Instant::now();
    let problem = stage("mesh", || {
        let mesh = if art.mesh().exists() {
            Mesh::load(&art.mesh())?
        } else {
            let m = config.problem.benchmark.build_mesh(config_dir)?;
            m.save(&art.mesh())?;
            m
        };
        std::fs::write(art.config(), config.to_toml())?;
        Problem::new(config.clone(), mesh)
    })?;
    timed("mesh", t);
    let asm = problem.assembler.as_ref();
    let store = SnapshotStore::new(&problem, &art)?;

    let t = Instant::now();
    let eim_mus = config.eim_grid();
    let snaps = stage("snapshots", || store.get_many(&eim_mus))?;
    timed("snapshots", t);

    let t = Instant::now();
    let eim = stage("eim", || {
        if art.eim().exists() {
            return EimBasis::load(&art.eim());
        }
        let g: Vec<Vec<f64>> = snaps.par_iter().map(|s| asm.gradient_magnitude(&asm.with_lift(&s.u))).collect();
        let eim = EimBasis::train(
            &g,
            &EimOptions {
                tol: config.eim.tol,
                max_terms: config.eim.max_terms,
            },
        )?;
        log::info!("EIM: M = {}, final training error {:.3e}", eim.len(), eim.history.last().unwrap());
        eim.save(&art.eim())?;
        Ok(eim)
    })?;
    timed("eim", t);

    let t = Instant::now();
    let cert = stage("certification", || {
        if art.certification().exists() {
            return CertificationState::load(&art.certification());
        }
        let c = certify(&problem, &store, &snaps)?;
        c.save(&art.certification())?;
        Ok(c)
    })?;
    timed("certification", t);
    let x = cert.x_product(asm)?;

    let t = Instant::now();
    let rb = stage("greedy", || {
        if art.rb().exists() {
            return RbSpace::load(&art.rb());
        }
        let start = if art.rb_checkpoint().exists() {
            log::info!("resuming greedy from {}", art.rb_checkpoint().display());
            RbSpace::load(&art.rb_checkpoint())?
        } else if config.rb.n_pod > 0 {
            match pod_seed(&x, asm, &snaps, config.rb.n_pod) {
                Err(Error::RankDeficiency { requested, rank }) if rank > 0 => {
                    log::warn!("POD seed reduced from {requested} to {rank} modes (numerical rank of the snapshots)");
                    pod_seed(&x, asm, &snaps, rank)?
                }
                r => r?,
            }
        } else {
            RbSpace::new()
        };
        let beta = |mu: f64| cert.beta(mu);
        let est = Estimator {
            asm,
            x: &x,
            beta: &beta,
            rho: cert.rho,
        };
        let result = greedy(
            &est,
            &eim,
            &config.online_solver(),
            &config.train_grid(),
            &GreedyOptions {
                tol: config.rb.tol,
                max_basis: config.rb.max_basis,
            },
            start,
            |mu| store.get(mu),
            |space| space.save(&art.rb_checkpoint()),
        );
        let rb = match result {
            Err(Error::Stagnation { mu }) => {
                // The bound cannot fall below the level set by the EIM error;
                // the basis built so far is kept and flagged unconverged.
                log::warn!(
                    "greedy stagnated at mu = {mu}: the error bound is limited by the EIM tolerance; \
                     keeping N = {} (tighten eim.tol or loosen rb.tol)",
                    RbSpace::load(&art.rb_checkpoint())?.n()
                );
                RbSpace::load(&art.rb_checkpoint())?
            }
            other => other?,
        };
        rb.save(&art.rb())?;
        Ok(rb)
    })?;
    timed("greedy", t);

    let t = Instant::now();
    stage("projection", || {
        let ops = ReducedOperators::project(asm, &rb, &eim)?;
        ops.save(&art.reduced())
    })?;
    timed("projection", t);

    let sp = asm.space();
    let summary = OfflineSummary {
        n_elements: sp.n_elements(),
        velocity_dofs: sp.dim_y(),
        pressure_dofs: sp.dim_m(),
        eim_terms: eim.len(),
        eim_history: eim.history.clone(),
        mu_bar: cert.mu_bar,
        c_t: cert.c_t,
        c_inv: cert.c_inv,
        rho: cert.rho,
        beta_samples: cert.beta_samples.len(),
        rb_size: rb.n(),
        rb_velocity_size: rb.velocity.len(),
        greedy_converged: rb.converged,
        greedy_history: rb.history.clone(),
        stage_times: times,
    };
    write_json(&summary, &art.summary())?;
    Ok(summary)
}

/// Constants of the estimator for the problem's parameter range.
pub fn certify(problem: &Problem, store: &SnapshotStore, snaps: &[Snapshot]) -> Result<CertificationState> {
    let cfg = &problem.config;
    let cc = &cfg.certification;
    let asm = problem.assembler.as_ref();
    let saddle = problem.truth.saddle();

    let r = reference_snapshot(asm, snaps).ok_or_else(|| Error::InvalidArgument("no snapshots".into()))?;
    let mu_bar = snaps[r].mu;
    let nu_star = asm.eddy_viscosity_field(&asm.with_lift(&snaps[r].u));
    let x = XProduct::new(asm, asm.t_gram(mu_bar, &nu_star)?)?;
    log::info!("reference Reynolds number {mu_bar}");

    let beta_at = |mu: f64| -> Result<f64> { compute_beta(asm, saddle, &x, &store.get(mu)?) };
    let initial: Vec<(f64, f64)> = uniform_grid(cfg.problem.mu_range, cc.beta_samples)
        .par_iter()
        .map(|&mu| beta_at(mu).map(|b| (mu, b)))
        .collect::<Result<_>>()?;
    let fit = fit_adaptive(&initial, beta_at, cc.beta_tol, cc.beta_budget)?;
    if !fit.converged {
        log::warn!("inf-sup surrogate stopped at the sample budget");
    }
    let gamma_samples = uniform_grid(cfg.problem.mu_range, cc.gamma_samples)
        .par_iter()
        .map(|&mu| compute_gamma(asm, saddle, &x, &store.get(mu)?).map(|g| (mu, g)))
        .collect::<Result<Vec<_>>>()?;

    let sob = sobolev_fixed_point(&FeSobolev { asm, x: &x }, cc.sobolev_tol, cc.sobolev_max_iter)?;
    let c_inv = inverse_inequality_constant(asm.space(), cc.inverse_samples, cfg.run.seed, cc.inverse_safety);
    let h = asm.space().mesh().max_diameter();
    let rho = lipschitz_constant(sob.constant, cfg.problem.cs, h, c_inv, cc.rho_formula);
    log::info!(
        "C_T = {:.6e} ({} iterations), C_inv = {c_inv:.4}, rho = {rho:.6e}",
        sob.constant,
        sob.iterations
    );
    Ok(CertificationState {
        version: CERTIFICATION_FORMAT_VERSION,
        mu_bar,
        nu_star,
        c_t: sob.constant,
        c_t_converged: sob.converged,
        c_inv,
        h,
        cs: cfg.problem.cs,
        rho_formula: cc.rho_formula,
        rho,
        beta_samples: fit.surrogate.samples.clone(),
        beta_surrogate: fit.surrogate,
        beta_refinement: fit.history,
        gamma_samples,
    })
}

/// Loaded offline artifacts.
pub struct OnlineModel {
    pub problem: Problem,
    pub certification: CertificationState,
    pub eim: EimBasis,
    pub rb: RbSpace,
    pub operators: ReducedOperators,
    pub x: XProduct,
}

impl OnlineModel {
    pub fn open(art: &Artifacts) -> Result<Self> {
        let problem = Problem::open(art)?;
        let certification = CertificationState::load(&art.certification())?;
        let eim = EimBasis::load(&art.eim())?;
        let rb = RbSpace::load(&art.rb())?;
        let operators = ReducedOperators::load(&art.reduced())?;
        let x = certification.x_product(&problem.assembler)?;
        Ok(OnlineModel {
            problem,
            certification,
            eim,
            rb,
            operators,
            x,
        })
    }

    /// Reduced solution at `mu` with its a posteriori error bound.
    pub fn solve_certified(&self, mu: f64) -> Result<(ReducedSolution, ErrorBound)> {
        let sol = self.operators.solve(mu, &self.problem.config.online_solver())?;
        let beta = |m: f64| self.certification.beta(m);
        let est = Estimator {
            asm: &self.problem.assembler,
            x: &self.x,
            beta: &beta,
            rho: self.certification.rho,
        };
        let bound = est.bound(&self.rb, &sol)?;
        Ok((sol, bound))
    }

    /// Truth and reduced solves at `mu` with timings and relative errors.
    pub fn benchmark_one(&self, mu: f64) -> Result<BenchmarkRow> {
        let truth = self.problem.truth.solve(mu)?;
        let sol = self.operators.solve(mu, &self.problem.config.online_solver())?;
        let (u, p) = reconstruct(&self.rb, &sol);
        let du: Vec<f64> = truth.u.iter().zip(&u).map(|(a, b)| a - b).collect();
        let dp: Vec<f64> = truth.p.iter().zip(&p).map(|(a, b)| a - b).collect();
        let rel = |d: f64, n: f64| if n > 0.0 { d / n } else { d };
        Ok(BenchmarkRow {
            mu,
            t_fe_s: truth.wall_time,
            t_online_s: sol.wall_time,
            speedup: truth.wall_time / sol.wall_time,
            err_u_t: rel(self.x.t_norm(&du), self.x.t_norm(&truth.u)),
            err_p_l2: rel(self.x.l2_pressure_norm(&dp), self.x.l2_pressure_norm(&truth.p)),
            out_of_range: !self.problem.config.in_range(mu),
            error: None,
        })
    }

    /// Rows in input order; failures are recorded per row.
    pub fn benchmark(&self, mus: &[f64]) -> Vec<BenchmarkRow> {
        mus.iter()
            .map(|&mu| {
                let oor = !self.problem.config.in_range(mu);
                if oor {
                    log::warn!("mu = {mu} lies outside the trained range {:?}", self.problem.config.problem.mu_range);
                }
                self.benchmark_one(mu).unwrap_or_else(|e| {
                    log::error!("benchmark failed at mu = {mu}: {e}");
                    BenchmarkRow::failed(mu, oor, &e)
                })
            })
            .collect()
    }

    pub fn validate_one(&self, mu: f64) -> Result<ValidationRow> {
        let asm = self.problem.assembler.as_ref();
        let truth = self.problem.truth.solve(mu)?;
        let (sol, bound) = self.solve_certified(mu)?;
        let (u, p) = reconstruct(&self.rb, &sol);
        let d = concat(
            &truth.u.iter().zip(&u).map(|(a, b)| a - b).collect::<Vec<_>>(),
            &truth.p.iter().zip(&p).map(|(a, b)| a - b).collect::<Vec<_>>(),
        );
        let error = self.x.norm(&d);
        let beta_truth = compute_beta(asm, self.problem.truth.saddle(), &self.x, &truth)?;
        let (e_s, n_s) = eim_model_error(asm, &self.x, &self.eim, &truth.u, &u)?;
        Ok(ValidationRow {
            mu,
            error,
            relative_error: error / self.x.norm(&concat(&truth.u, &truth.p)),
            bound,
            effectivity: bound.delta.map(|dl| dl / error),
            beta_truth,
            beta_surrogate_error: (bound.beta - beta_truth).abs() / beta_truth,
            eim_error_ratio: if n_s > 0.0 { e_s / n_s } else { 0.0 },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub mu: f64,
    /// `||U_h - U_N||_X`.
    pub error: f64,
    pub relative_error: f64,
    pub bound: ErrorBound,
    pub effectivity: Option<f64>,
    pub beta_truth: f64,
    pub beta_surrogate_error: f64,
    /// `e_S / n_S`.
    pub eim_error_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub failures: Vec<(f64, String)>,
    pub violations: Vec<f64>,
    pub max_effectivity: Option<f64>,
    pub median_effectivity: Option<f64>,
    pub max_beta_surrogate_error: f64,
}

pub const VALIDATION_CSV_HEADER: &str = "mu,error,relative_error,eps,beta,tau,delta,effectivity,beta_truth,eim_error_ratio";

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn run_online(out: &Path, mus: &[f64]) -> Result<Vec<BenchmarkRow>> {
    let art = Artifacts::new(out);
    let model = OnlineModel::open(&art)?;
    let rows = model.benchmark(mus);
    write_csv(&rows, &art.report_csv())?;
    write_json(&rows, &art.report_json())?;
    Ok(rows)
}

/// Validation on `mus` (the configured verification grid when `None`).
/// Reports are written before a bound violation is returned as an error.
pub fn run_validate(out: &Path, mus: Option<&[f64]>) -> Result<ValidationReport> {
    let art = Artifacts::new(out);
    let model = OnlineModel::open(&art)?;
    let grid = mus.map(<[f64]>::to_vec).unwrap_or_else(|| model.problem.config.verification_grid());
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &mu in &grid {
        match model.validate_one(mu) {
            Ok(r) => {
                log::info!(
                    "mu = {mu}: error {:.3e}, bound {:.3e} ({})",
                    r.error,
                    r.bound.indicator(),
                    if r.bound.is_certified() { "certified" } else { "tau > 1" }
                );
                rows.push(r)
            }
            Err(e) => {
                log::error!("validation failed at mu = {mu}: {e}");
                failures.push((mu, e.to_string()));
            }
        }
    }
    let checked = effectivity_report(&rows.iter().map(|r| (r.mu, r.error, r.bound)).collect::<Vec<_>>());
    let violations = match &checked {
        Err(Error::BoundViolation { mus }) => mus.clone(),
        _ => Vec::new(),
    };
    let mut eff: Vec<f64> = rows.iter().filter_map(|r| r.effectivity).collect();
    let report = ValidationReport {
        max_effectivity: eff.iter().cloned().reduce(f64::max),
        median_effectivity: median(&mut eff),
        max_beta_surrogate_error: rows.iter().map(|r| r.beta_surrogate_error).fold(0.0, f64::max),
        rows,
        failures,
        violations,
    };
    if report.max_beta_surrogate_error > 5e-2 {
        log::warn!("inf-sup surrogate deviates by {:.2e} relative", report.max_beta_surrogate_error);
    }
    write_json(&report, &art.validation_json())?;
    let mut csv = String::from(VALIDATION_CSV_HEADER);
    csv.push('\n');
    for r in &report.rows {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        csv.push_str(&format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{},{},{:e},{:e}\n",
            r.mu,
            r.error,
            r.relative_error,
            r.bound.eps,
            r.bound.beta,
            r.bound.tau,
            opt(r.bound.delta),
            opt(r.effectivity),
            r.beta_truth,
            r.eim_error_ratio
        ));
    }
    std::fs::write(art.validation_csv(), csv)?;
    checked?;
    Ok(report)
}
