//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary so the report lines always appear in the test log.
//! The full-resolution cavity run (criterion 7 and the large-mesh speedup)
//! takes hours and only runs with `--include-ignored` or `--ignored`:
//!
//!     cargo test --release -p smagrb --test acceptance -- --include-ignored
//!
//! A substring argument runs only the criteria whose name contains it.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smagrb::assembly::{Assembler, ModelParams};
use smagrb::certification::{
    compute_beta, sobolev_fixed_point, FeSobolev, SobolevProblem, XProduct,
};
use smagrb::config::RunConfig;
use smagrb::eim::{EimBasis, EimOptions};
use smagrb::fem::FeSpace;
use smagrb::mesh::generate_cavity_mesh;
use smagrb::pipeline::{run_offline, run_validate, Artifacts, OnlineModel};
use smagrb::rb_offline::RbSpace;
use smagrb::rb_online::{combine, ReducedOperators};
use smagrb::system::SaddleSolver;
use smagrb::truth::{compute_lift, Inflow, Snapshot, SolverConfig, TruthSolver};
use smagrb::Error;

// Tolerances and limits of the criteria.
const AFFINE_TOL: f64 = 1e-11;
const AFFINE_LIMIT: Duration = Duration::from_secs(10);
const JACOBIAN_STEP: f64 = 1e-6;
const JACOBIAN_TOL: f64 = 1e-6;
const JACOBIAN_LIMIT: Duration = Duration::from_secs(10);
const EIM_EXACT_TOL: f64 = 1e-13;
const EIM_LIMIT: Duration = Duration::from_secs(5);
const EFFECTIVITY_MAX: f64 = 100.0;
const EFFECTIVITY_MEDIAN: f64 = 30.0;
const CAMPAIGN_LIMIT: Duration = Duration::from_secs(2 * 3600);
const REPRODUCTION_TOL: f64 = 1e-8;
const DESK_SPEEDUP: f64 = 20.0;
const FULL_SPEEDUP: f64 = 200.0;
const FULL_M: (usize, usize) = (15, 35);
const FULL_N: (usize, usize) = (8, 20);
const FULL_VELOCITY_TOL: f64 = 1e-5;
const SOBOLEV_SELF_TOL: f64 = 1e-8;
const SOBOLEV_PROBES: usize = 1000;
const BETA_ORACLE_TOL: f64 = 1e-10;
const CONSTANTS_LIMIT: Duration = Duration::from_secs(300);

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn line(&mut self, id: &str, name: &str, pass: bool, detail: String) {
        println!("criterion {id:<3} {} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures.push(format!("{id} {name}"));
        }
    }
}

fn cavity(n: usize) -> Arc<Assembler> {
    let mut asm = Assembler::new(FeSpace::new(generate_cavity_mesh(n).unwrap()).unwrap(), ModelParams::default()).unwrap();
    let lift = compute_lift(&asm, &Inflow::Lid { velocity: [1.0, 0.0] }).unwrap();
    asm.set_lift(lift).unwrap();
    Arc::new(asm)
}

fn x_product(asm: &Assembler, reference: &Snapshot) -> XProduct {
    let nu = asm.eddy_viscosity_field(&asm.with_lift(&reference.u));
    XProduct::new(asm, asm.t_gram(reference.mu, &nu).unwrap()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Reduced residual from the tensorized operators against the full-order
/// residual (with the interpolated eddy viscosity) projected on the bases.
fn affine_consistency(r: &mut Report) {
    let start = Instant::now();
    let asm = cavity(8);
    let solver = TruthSolver::new(asm.clone(), SolverConfig::default()).unwrap();
    let snaps: Vec<Snapshot> = [1000.0, 1400.0, 1800.0, 2200.0, 2600.0, 3000.0]
        .iter()
        .map(|&mu| solver.solve(mu).unwrap())
        .collect();
    let g: Vec<Vec<f64>> = snaps.iter().map(|s| asm.gradient_magnitude(&asm.with_lift(&s.u))).collect();
    let eim = EimBasis::train(&g, &EimOptions { tol: 1e-14, max_terms: 5 }).unwrap();
    let x = x_product(&asm, &snaps[0]);
    let mut space = RbSpace::new();
    for k in [0, 2, 5] {
        space.enrich(&x, &asm, &snaps[k].u, &snaps[k].p).unwrap();
        space.mus.push(snaps[k].mu);
    }
    let ops = ReducedOperators::project(&asm, &space, &eim).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let a = random_vec(&mut rng, ops.n_u);
        let b = random_vec(&mut rng, ops.n_p);
        let mu = 1000.0 + 2000.0 * rng.random::<f64>();
        let (rv, rp) = ops.residual(&a, &b, mu);

        let u = combine(&space.velocity, &a);
        let p = combine(&space.pressure, &b);
        let w = asm.with_lift(&u);
        let nu = asm.scale_field(&eim.interpolate(&asm.gradient_magnitude(&w)));
        let (fv, fp) = asm.residual_with_viscosity(&u, &p, mu, Some(&nu));
        let mut full: Vec<f64> = space.velocity.iter().map(|z| dot(z, &fv)).collect();
        full.extend(space.pressure.iter().map(|z| dot(z, &fp)));
        let mut red = rv;
        red.extend(rp);
        worst = worst.max(norm(&diff(&red, &full)) / norm(&full));
    }
    let t = start.elapsed();
    r.line(
        "1",
        "affine consistency",
        eim.len() == 5 && space.n() == 3 && worst <= AFFINE_TOL && t < AFFINE_LIMIT,
        format!(
            "N = {}, M = {}, max relative mismatch {worst:.2e} (tol {AFFINE_TOL:.0e}), {:.1} s",
            space.n(),
            eim.len(),
            t.as_secs_f64()
        ),
    );
}

/// Jacobian against central differences of the residual.
fn jacobian(r: &mut Report) {
    let start = Instant::now();
    let asm = cavity(4);
    let sp = asm.space();
    let (ny, nm) = (sp.dim_y(), sp.dim_m());
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    let mut min_grad = f64::INFINITY;
    for _ in 0..10 {
        let mut u = random_vec(&mut rng, ny);
        sp.apply_homogeneous_dirichlet(&mut u);
        let p = random_vec(&mut rng, nm);
        let mut zu = random_vec(&mut rng, ny);
        sp.apply_homogeneous_dirichlet(&mut zu);
        let zp = random_vec(&mut rng, nm);
        let mu = 500.0 + 3000.0 * rng.random::<f64>();
        min_grad = asm.gradient_magnitude(&asm.with_lift(&u)).into_iter().fold(min_grad, f64::min);

        let shift = |s: f64| {
            let uu: Vec<f64> = u.iter().zip(&zu).map(|(a, b)| a + s * b).collect();
            let pp: Vec<f64> = p.iter().zip(&zp).map(|(a, b)| a + s * b).collect();
            asm.residual(&uu, &pp, mu)
        };
        let (pv, pp) = shift(JACOBIAN_STEP);
        let (mv, mp) = shift(-JACOBIAN_STEP);
        let mut fd: Vec<f64> = pv.iter().zip(&mv).map(|(a, b)| (a - b) / (2.0 * JACOBIAN_STEP)).collect();
        fd.extend(pp.iter().zip(&mp).map(|(a, b)| (a - b) / (2.0 * JACOBIAN_STEP)));

        let jvv = asm.jacobian_velocity(&u, mu);
        let (jv, jp) = asm.apply_jacobian(&jvv, &zu, &zp);
        let mut jz = jv;
        jz.extend(jp);
        worst = worst.max(norm(&diff(&fd, &jz)) / norm(&jz));
    }
    let t = start.elapsed();
    r.line(
        "2",
        "Jacobian vs central differences",
        worst <= JACOBIAN_TOL && t < JACOBIAN_LIMIT,
        format!(
            "max relative error {worst:.2e} (tol {JACOBIAN_TOL:.0e}), min |grad w| {min_grad:.2e}, {:.1} s",
            t.as_secs_f64()
        ),
    );
}

fn eim_properties(r: &mut Report) {
    let asm = cavity(6);
    let solver = TruthSolver::new(asm.clone(), SolverConfig::default()).unwrap();
    let g: Vec<Vec<f64>> = [1000.0, 1500.0, 2000.0, 2500.0, 3000.0, 3500.0, 4000.0, 4500.0, 5000.0]
        .iter()
        .map(|&mu| asm.gradient_magnitude(&asm.with_lift(&solver.solve(mu).unwrap().u)))
        .collect();
    let start = Instant::now();
    let eim = EimBasis::train(&g, &EimOptions { tol: 1e-10, max_terms: 8 }).unwrap();

    let b = eim.interpolation_matrix();
    let mut triangular = 0.0f64;
    for (i, row) in b.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let expected = if i == j { 1.0 } else { 0.0 };
            if j >= i {
                triangular = triangular.max((v - expected).abs());
            }
        }
    }
    let mut exact = 0.0f64;
    for s in &g {
        let gi = eim.interpolate(s);
        let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for &k in &eim.magic_points {
            exact = exact.max((gi[k] - s[k]).abs() / scale);
        }
    }
    let monotone = eim.history.windows(2).all(|w| w[1] <= w[0]);

    let shape = &g[3];
    let rank_one: Vec<Vec<f64>> = [0.5, 1.0, 2.0, 7.0].iter().map(|c| shape.iter().map(|v| c * v).collect()).collect();
    let m1 = EimBasis::train(&rank_one, &EimOptions { tol: 1e-12, max_terms: 10 }).unwrap().len();
    let t = start.elapsed();
    r.line(
        "3",
        "EIM properties",
        triangular == 0.0 && exact <= EIM_EXACT_TOL && monotone && m1 == 1 && t < EIM_LIMIT,
        format!(
            "M = {}, upper-triangle deviation {triangular:.1e}, magic-point error {exact:.1e} (tol {EIM_EXACT_TOL:.0e}), \
             history non-increasing {monotone}, rank-one M = {m1}, {:.2} s",
            eim.len(),
            t.as_secs_f64()
        ),
    );
}

const CAMPAIGN: &str = r#"
[problem]
benchmark = { kind = "cavity", n = 16 }
mu_range = [1000.0, 3000.0]

[eim]
train_points = 30
tol = 1e-5

[rb]
train_points = 30
tol = 1e-4
n_pod = 4

[run]
verification_points = 12
"#;

/// Estimator validity and reproduction on the 16 x 16 cavity.
fn campaign(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let cfg = RunConfig::from_toml(CAMPAIGN).unwrap();
    let summary = match run_offline(&cfg, Path::new("."), dir.path()) {
        Ok(s) => s,
        Err(e) => {
            r.line("4", "estimator validity", false, format!("offline failed: {e}"));
            r.line("5", "reproduction", false, "offline failed".into());
            return;
        }
    };
    let (report, violations) = match run_validate(dir.path(), None) {
        Ok(rep) => (Some(rep), Vec::new()),
        Err(Error::BoundViolation { mus }) => {
            let text = std::fs::read_to_string(Artifacts::new(dir.path()).validation_json()).unwrap();
            (serde_json::from_str(&text).ok(), mus)
        }
        Err(e) => {
            r.line("4", "estimator validity", false, format!("validation failed: {e}"));
            (None, Vec::new())
        }
    };
    let t = start.elapsed();
    if let Some(rep) = report {
        let eff: Vec<f64> = rep.rows.iter().filter_map(|row| row.effectivity).collect();
        let certified = eff.len();
        let max = eff.iter().cloned().fold(0.0, f64::max);
        let med = if eff.is_empty() { f64::NAN } else { median(eff) };
        r.line(
            "4",
            "estimator validity",
            violations.is_empty()
                && rep.failures.is_empty()
                && certified > 0
                && max <= EFFECTIVITY_MAX
                && med <= EFFECTIVITY_MEDIAN
                && t < CAMPAIGN_LIMIT,
            format!(
                "M = {}, N = {}, {certified}/{} points certified, {} violations, effectivity max {max:.2} \
                 (limit {EFFECTIVITY_MAX}) median {med:.2} (limit {EFFECTIVITY_MEDIAN}), {:.0} s",
                summary.eim_terms,
                summary.rb_size,
                rep.rows.len(),
                violations.len(),
                t.as_secs_f64()
            ),
        );
    }

    let model = OnlineModel::open(&Artifacts::new(dir.path())).unwrap();
    let mut worst = 0.0f64;
    let mut failed = 0;
    for &mu in &model.rb.mus {
        match model.validate_one(mu) {
            Ok(row) => worst = worst.max(row.relative_error),
            Err(_) => failed += 1,
        }
    }
    r.line(
        "5",
        "reproduction at selected parameters",
        failed == 0 && !model.rb.mus.is_empty() && worst <= REPRODUCTION_TOL,
        format!(
            "{} selected parameters, max relative X-norm error {worst:.2e} (tol {REPRODUCTION_TOL:.0e})",
            model.rb.mus.len()
        ),
    );
}

/// Online against truth timings at the given test parameters.
fn speedups(out: &Path, mus: &[f64]) -> Result<Vec<f64>, Error> {
    let model = OnlineModel::open(&Artifacts::new(out))?;
    // Warm-up so that one-off allocation costs do not enter the timing.
    model.operators.solve(mus[0], &model.problem.config.online_solver())?;
    mus.iter().map(|&mu| model.benchmark_one(mu).map(|row| row.speedup)).collect()
}

const DESK_SPEEDUP_CONFIG: &str = r#"
[problem]
benchmark = { kind = "cavity", n = 32 }
mu_range = [1000.0, 3000.0]

[eim]
train_points = 6
tol = 1e-4

[certification]
beta_samples = 3
beta_budget = 4
gamma_samples = 1
inverse_samples = 20

[rb]
train_points = 6
tol = 1e-3
n_pod = 3
max_basis = 8
"#;

fn desk_speedup(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::from_toml(DESK_SPEEDUP_CONFIG).unwrap();
    let test_mus = [1100.0, 1500.0, 1900.0, 2300.0, 2700.0];
    let result = run_offline(&cfg, Path::new("."), dir.path()).and_then(|_| speedups(dir.path(), &test_mus));
    match result {
        Ok(s) => {
            let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
            r.line(
                "6a",
                "speedup, 32 x 32 cavity",
                min >= DESK_SPEEDUP,
                format!("speedups {s:.0?}, min {min:.0} (floor {DESK_SPEEDUP})"),
            );
        }
        Err(e) => r.line("6a", "speedup, 32 x 32 cavity", false, format!("{e}")),
    }
}

/// Full-resolution cavity: basis sizes, accuracy and speedup.
fn full_scale(r: &mut Report) {
    let cfg = RunConfig::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/cavity.toml")).unwrap();
    let out = std::env::var("SMAGRB_FULL_OUT")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|_| std::env::temp_dir().join("smagrb-full-scale"));
    let start = Instant::now();
    let summary = match run_offline(&cfg, Path::new("."), &out) {
        Ok(s) => s,
        Err(e) => {
            r.line("6b", "speedup, 50 x 50 cavity", false, format!("offline failed: {e}"));
            r.line("7", "full-resolution regression", false, format!("offline failed: {e}"));
            return;
        }
    };
    let probes = [1500.0, 2500.0, 3500.0, 4521.0, 5000.0];
    let model = OnlineModel::open(&Artifacts::new(&out)).unwrap();
    let rows: Vec<_> = probes.iter().map(|&mu| model.benchmark_one(mu)).collect();
    let ok: Vec<_> = rows.iter().filter_map(|x| x.as_ref().ok()).collect();
    let min_speedup = ok.iter().map(|x| x.speedup).fold(f64::INFINITY, f64::min);
    let max_err = ok.iter().map(|x| x.err_u_t).fold(0.0, f64::max);
    r.line(
        "6b",
        "speedup, 50 x 50 cavity",
        ok.len() == probes.len() && min_speedup >= FULL_SPEEDUP,
        format!("min speedup {min_speedup:.0} over {} probes (floor {FULL_SPEEDUP})", ok.len()),
    );
    let m = summary.eim_terms;
    let n = summary.rb_size;
    r.line(
        "7",
        "full-resolution regression",
        (FULL_M.0..=FULL_M.1).contains(&m)
            && (FULL_N.0..=FULL_N.1).contains(&n)
            && ok.len() == probes.len()
            && max_err <= FULL_VELOCITY_TOL,
        format!(
            "M = {m} (range {FULL_M:?}), N = {n} (range {FULL_N:?}), max relative velocity error {max_err:.2e} \
             (tol {FULL_VELOCITY_TOL:.0e}), offline + probes {:.0} s",
            start.elapsed().as_secs_f64()
        ),
    );
}

/// Sobolev constant self-consistency and Monte-Carlo probes; inf-sup factor
/// against a dense singular value decomposition.
fn constants(r: &mut Report) {
    let start = Instant::now();
    let asm = cavity(8);
    let solver = TruthSolver::new(asm.clone(), SolverConfig::default()).unwrap();
    let reference = solver.solve(1000.0).unwrap();
    let x = x_product(&asm, &reference);
    let fe = FeSobolev { asm: &asm, x: &x };
    let sob = sobolev_fixed_point(&fe, 1e-12, 200).unwrap();

    // Ratio recomputed from point values and the T Gram matrix.
    let sp = asm.space();
    let ratio = |v: &[f64]| {
        let pts = sp.eval_velocity_all(v);
        let mut l4 = 0.0;
        for (k, pv) in pts.iter().enumerate() {
            let m2 = pv.value[0] * pv.value[0] + pv.value[1] * pv.value[1];
            l4 += sp.quad_weight(k / sp.rule().len(), k % sp.rule().len()) * m2 * m2;
        }
        l4.powf(0.25) / x.t_gram().bilinear(v, v).sqrt()
    };
    let self_gap = (ratio(&sob.maximizer) - sob.constant).abs() / sob.constant;
    let next = fe.leading_eigenvector(&sob.maximizer).unwrap();
    let step_gap = (ratio(&next) - sob.constant).abs() / sob.constant;

    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst_probe = 0.0f64;
    for k in 0..SOBOLEV_PROBES {
        let mut v = if k % 2 == 0 {
            random_vec(&mut rng, sp.dim_y())
        } else {
            // Smooth random fields, closer to the maximizer than white noise.
            let (a, b, c) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
            sp.interpolate_velocity(|z| {
                let bubble = z[0] * (1.0 - z[0]) * z[1] * (1.0 - z[1]);
                [bubble * (1.0 + a * z[0]), bubble * (b - c * z[1])]
            })
        };
        sp.apply_homogeneous_dirichlet(&mut v);
        worst_probe = worst_probe.max(ratio(&v) / sob.constant);
    }

    let small = cavity(2);
    let saddle = SaddleSolver::new(&small).unwrap();
    let small_solver = TruthSolver::new(small.clone(), SolverConfig::default()).unwrap();
    let snap = small_solver.solve(400.0).unwrap();
    let xs = x_product(&small, &snap);
    let beta = compute_beta(&small, &saddle, &xs, &snap).unwrap();
    let (oracle, dofs) = dense_beta(&small, &xs, &snap);
    let beta_gap = (beta - oracle).abs() / oracle;

    let t = start.elapsed();
    r.line(
        "8",
        "constant sanity",
        sob.converged
            && self_gap <= SOBOLEV_SELF_TOL
            && step_gap <= SOBOLEV_SELF_TOL
            && worst_probe <= 1.0
            && dofs <= 40
            && beta_gap <= BETA_ORACLE_TOL
            && t < CONSTANTS_LIMIT,
        format!(
            "C_T = {:.6} after {} iterations, ratio gap {self_gap:.1e}, fixed-point step gap {step_gap:.1e}, \
             largest of {SOBOLEV_PROBES} probes {worst_probe:.3} C_T; beta {beta:.12} vs dense {oracle:.12} \
             on {dofs} dofs (gap {beta_gap:.1e}), {:.1} s",
            sob.constant,
            sob.iterations,
            t.as_secs_f64()
        ),
    );
}

/// Smallest singular value of the Jacobian between X and its dual, from
/// dense matrices on a basis of the constrained space.
fn dense_beta(asm: &Assembler, x: &XProduct, snap: &Snapshot) -> (f64, usize) {
    let sp = asm.space();
    let (ny, nm) = (sp.dim_y(), sp.dim_m());
    let free: Vec<usize> = (0..ny).filter(|&d| !sp.is_dirichlet(d)).collect();
    let mean_zero = !sp.mesh().has_neumann_boundary();
    // Pressure directions e_q - e_last keep the zero mean when required;
    // the X product then measures them through the projected pressure.
    let np = if mean_zero { nm - 1 } else { nm };
    let k = free.len() + np;
    let jvv = asm.jacobian_velocity(&snap.u, snap.mu).to_dense();
    let b = asm.divergence().to_dense();
    let t = x.t_gram().to_dense();
    let mp = asm.pressure_mass().to_dense();
    let mass_row: Vec<f64> = (0..nm).map(|q| mp.row(q).sum()).collect();
    let area: f64 = mass_row.iter().sum();

    // Coordinates: velocity unit vectors on free dofs, then pressure vectors.
    let pressure_dir = |q: usize| -> Vec<f64> {
        let mut v = vec![0.0; nm];
        v[q] = 1.0;
        if mean_zero {
            let mean = dot(&mass_row, &v) / area;
            v.iter_mut().for_each(|a| *a -= mean);
        }
        v
    };
    let pdirs: Vec<Vec<f64>> = (0..np).map(pressure_dir).collect();
    let mut jm = DMatrix::zeros(k, k);
    let mut xm = DMatrix::zeros(k, k);
    let nf = free.len();
    for (a, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            jm[(a, c)] = jvv[(i, j)];
            xm[(a, c)] = t[(i, j)];
        }
        for (c, pd) in pdirs.iter().enumerate() {
            // Velocity test row against pressure trial: (B^T p)_i.
            jm[(a, nf + c)] = (0..nm).map(|q| b[(q, i)] * pd[q]).sum();
            // Pressure test row against velocity trial: -(B u)_q.
            jm[(nf + c, a)] = -(0..nm).map(|q| b[(q, i)] * pd[q]).sum::<f64>();
        }
    }
    for (a, pa) in pdirs.iter().enumerate() {
        for (c, pc) in pdirs.iter().enumerate() {
            let mut s = 0.0;
            for q in 0..nm {
                for l in 0..nm {
                    s += pa[q] * mp[(q, l)] * pc[l];
                }
            }
            xm[(nf + a, nf + c)] = s;
        }
    }
    let eig = SymmetricEigen::new(xm);
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose();
    let m = &inv_sqrt * jm * &inv_sqrt;
    (m.singular_values().min(), k)
}

type Criterion = (&'static str, fn(&mut Report), bool);

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        return;
    }
    let include_ignored = args.iter().any(|a| a == "--include-ignored");
    let only_ignored = args.iter().any(|a| a == "--ignored");
    let filter: Vec<&String> = args.iter().filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 7] = [
        ("affine_consistency", affine_consistency, false),
        ("jacobian", jacobian, false),
        ("eim_properties", eim_properties, false),
        ("estimator_campaign", campaign, false),
        ("desk_speedup", desk_speedup, false),
        ("constants", constants, false),
        ("full_scale", full_scale, true),
    ];
    let mut report = Report { failures: Vec::new() };
    for (name, run, ignored) in criteria {
        let selected = filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str()));
        let wanted = if ignored { include_ignored || only_ignored } else { !only_ignored };
        if !selected {
            continue;
        }
        if !wanted {
            println!("criterion {name}: skipped (full-resolution job; pass --include-ignored)");
            continue;
        }
        run(&mut report);
    }
    if !report.failures.is_empty() {
        println!("failed criteria: {}", report.failures.join(", "));
        std::process::exit(1);
    }
}
