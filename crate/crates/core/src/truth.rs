//! Full-order steady solver: semi-implicit pseudo-time stepping of the
//! Smagorinsky model, Dirichlet lifts, and snapshot files.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{Assembler, VelocityTerms};
use crate::error::{Error, Result};
use crate::system::SaddleSolver;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Pseudo-time step.
    pub dt: f64,
    /// Steady-state tolerance on the relative increment.
    pub tol: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 10.0,
            tol: 1e-10,
            max_steps: 2000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.tol > 0.0) || self.max_steps == 0 {
            return Err(Error::Config(format!(
                "solver needs dt > 0, tol > 0 and max_steps >= 1 (got {}, {}, {})",
                self.dt, self.tol, self.max_steps
            )));
        }
        Ok(())
    }
}

/// Non-homogeneous Dirichlet data on the inflow part of the boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inflow {
    /// Constant velocity on the inflow edges, zero elsewhere.
    Lid { velocity: [f64; 2] },
    /// Parabolic normal profile in `x` with the given mean across the
    /// inflow segment, extended into the domain by a discrete Stokes
    /// problem so that the lift is discretely solenoidal.
    Parabolic { mean: f64 },
    /// Homogeneous data.
    None,
}

/// Builds the lift `u_D` for the assembler's space.
pub fn compute_lift(asm: &Assembler, inflow: &Inflow) -> Result<Vec<f64>> {
    let sp = asm.space();
    let n = sp.n_p2();
    let mut g = vec![0.0; sp.dim_y()];
    match inflow {
        Inflow::None => {}
        Inflow::Lid { velocity } => {
            for k in (0..n).filter(|&k| sp.node_on_inflow(k)) {
                g[k] = velocity[0];
                g[n + k] = velocity[1];
            }
        }
        Inflow::Parabolic { mean } => {
            let ys: Vec<f64> = (0..n).filter(|&k| sp.node_on_inflow(k)).map(|k| sp.p2_coords()[k][1]).collect();
            if ys.is_empty() {
                return Err(Error::InvalidMesh("parabolic inflow requested but no inflow edges are tagged".into()));
            }
            let lo = ys.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for k in (0..n).filter(|&k| sp.node_on_inflow(k)) {
                let s = (sp.p2_coords()[k][1] - lo) / (hi - lo);
                g[k] = 6.0 * mean * s * (1.0 - s);
            }
            // Stokes extension: A0 d + B^T pi = -A0 g, B d = -B g.
            let solver = SaddleSolver::new(asm)?;
            let fac = solver.factor(asm.diffusion(), asm.divergence(), 1.0)?;
            let rv: Vec<f64> = asm.diffusion().mul_vec(&g).iter().map(|v| -v).collect();
            let rp: Vec<f64> = asm.divergence().mul_vec(&g).iter().map(|v| -v).collect();
            let (d, _) = fac.solve(&rv, &rp)?;
            g.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
        }
    }
    Ok(g)
}

/// Converged full-order solution at one Reynolds number.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub mu: f64,
    /// Velocity without the lift, zero on the Dirichlet boundary.
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub iterations: usize,
    pub final_increment: f64,
    pub wall_time: f64,
}

const SNAPSHOT_MAGIC: &str = "smagrb-snapshot";
const SNAPSHOT_VERSION: u32 = 1;

impl Snapshot {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{SNAPSHOT_MAGIC} v{SNAPSHOT_VERSION}");
        let _ = writeln!(s, "mu {:e}", self.mu);
        let _ = writeln!(s, "dims {} {}", self.u.len(), self.p.len());
        let _ = writeln!(s, "iterations {}", self.iterations);
        let _ = writeln!(s, "increment {:e}", self.final_increment);
        let _ = writeln!(s, "wall_time {:e}", self.wall_time);
        let _ = writeln!(s, "u");
        for v in &self.u {
            let _ = writeln!(s, "{v:e}");
        }
        let _ = writeln!(s, "p");
        for v in &self.p {
            let _ = writeln!(s, "{v:e}");
        }
        s
    }

    /// Parses a snapshot; `dims` (velocity, pressure) is checked when given.
    pub fn from_text(text: &str, origin: &Path, dims: Option<(usize, usize)>) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let eof = text.lines().count();
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::parse(origin, eof, format!("unexpected end of file, expected {what}")));

        let (ln, header) = next("header")?;
        let version = header
            .strip_prefix(SNAPSHOT_MAGIC)
            .and_then(|r| r.trim().strip_prefix('v'))
            .and_then(|v| v.parse::<u32>().ok())
            .ok_or_else(|| Error::parse(origin, ln, format!("expected `{SNAPSHOT_MAGIC} v<version>`, found `{header}`")))?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Version {
                path: origin.to_path_buf(),
                expected: SNAPSHOT_VERSION,
                found: version,
            });
        }
        fn field<'a>(origin: &Path, (ln, line): (usize, &'a str), key: &str) -> Result<(usize, Vec<&'a str>)> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::parse(origin, ln, format!("expected `{key} ...`, found `{line}`")));
            }
            Ok((ln, it.collect()))
        }
        fn num<T: std::str::FromStr>(origin: &Path, ln: usize, s: Option<&&str>) -> Result<T> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::parse(origin, ln, format!("invalid number `{}`", s.copied().unwrap_or(""))))
        }
        let (l, f) = field(origin, next("mu")?, "mu")?;
        let mu: f64 = num(origin, l, f.first())?;
        let (l, f) = field(origin, next("dims")?, "dims")?;
        let dim_y: usize = num(origin, l, f.first())?;
        let dim_m: usize = num(origin, l, f.get(1))?;
        if let Some((ey, em)) = dims {
            if (ey, em) != (dim_y, dim_m) {
                return Err(Error::dims(
                    format!("snapshot {}", origin.display()),
                    format!("dim_Y={ey}, dim_M={em}"),
                    format!("dim_Y={dim_y}, dim_M={dim_m}"),
                ));
            }
        }
        let (l, f) = field(origin, next("iterations")?, "iterations")?;
        let iterations: usize = num(origin, l, f.first())?;
        let (l, f) = field(origin, next("increment")?, "increment")?;
        let final_increment: f64 = num(origin, l, f.first())?;
        let (l, f) = field(origin, next("wall_time")?, "wall_time")?;
        let wall_time: f64 = num(origin, l, f.first())?;

        let mut block = |key: &str, len: usize| -> Result<Vec<f64>> {
            field(origin, next(key)?, key)?;
            (0..len)
                .map(|_| {
                    let (ln, v) = next("coefficient")?;
                    v.parse::<f64>()
                        .map_err(|_| Error::parse(origin, ln, format!("invalid coefficient `{v}`")))
                })
                .collect()
        };
        let u = block("u", dim_y)?;
        let p = block("p", dim_m)?;
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(Error::parse(origin, ln, format!("trailing content `{extra}`")));
        }
        Ok(Snapshot {
            mu,
            u,
            p,
            iterations,
            final_increment,
            wall_time,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path, dims: Option<(usize, usize)>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&text, path, dims)
    }
}

/// Semi-implicit pseudo-time solver for the steady problem.
#[derive(Clone, Debug)]
pub struct TruthSolver {
    asm: Arc<Assembler>,
    saddle: SaddleSolver,
    cfg: SolverConfig,
}

impl TruthSolver {
    pub fn new(asm: Arc<Assembler>, cfg: SolverConfig) -> Result<Self> {
        cfg.validate()?;
        let saddle = SaddleSolver::new(&asm)?;
        Ok(TruthSolver { asm, saddle, cfg })
    }

    pub fn assembler(&self) -> &Arc<Assembler> {
        &self.asm
    }

    pub fn saddle(&self) -> &SaddleSolver {
        &self.saddle
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn solve(&self, mu: f64) -> Result<Snapshot> {
        self.solve_from(mu, None)
    }

    /// Solves starting from `initial` (zero when absent).
    pub fn solve_from(&self, mu: f64, initial: Option<&[f64]>) -> Result<Snapshot> {
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!("Reynolds number must be positive, got {mu}")));
        }
        let start = Instant::now();
        let asm = &*self.asm;
        let sp = asm.space();
        let dt = self.cfg.dt;
        let lift = asm.lift();
        let f = asm.rhs(mu);
        let zero_p = vec![0.0; sp.dim_m()];

        let mut u = match initial {
            Some(u0) if u0.len() != sp.dim_y() => return Err(Error::dims("initial velocity", sp.dim_y(), u0.len())),
            Some(u0) => {
                let mut u = u0.to_vec();
                sp.apply_homogeneous_dirichlet(&mut u);
                u
            }
            None => vec![0.0; sp.dim_y()],
        };
        let mut p;
        let mut last = f64::INFINITY;
        for step in 1..=self.cfg.max_steps {
            let w = asm.with_lift(&u);
            let nu = asm.eddy_viscosity_field(&w);
            let k = asm.assemble_velocity(&VelocityTerms {
                mass: 1.0 / dt,
                diffusion: 1.0 / mu,
                viscosity: Some(&nu),
                convecting: Some(&w),
                reaction: Some(lift),
                eddy_derivative: None,
                ..Default::default()
            });
            let mut rv = asm.mass().mul_vec(&u);
            rv.iter_mut().for_each(|v| *v /= dt);
            let s_lift = asm.weighted_stiffness_apply(&nu, lift);
            for i in 0..rv.len() {
                rv[i] += f[i] - s_lift[i];
            }
            let fac = self.saddle.factor(&k, asm.divergence(), 1.0)?;
            let (un, pn) = fac.solve(&rv, &zero_p)?;

            let du: Vec<f64> = un.iter().zip(&u).map(|(a, b)| a - b).collect();
            let num = asm.diffusion().bilinear(&du, &du).max(0.0).sqrt();
            let den = asm.diffusion().bilinear(&un, &un).max(0.0).sqrt();
            let inc = if num == 0.0 { 0.0 } else { num / den };
            u = un;
            p = pn;
            last = inc;
            log::trace!("mu={mu} step={step} increment={inc:.3e}");
            if !inc.is_finite() {
                return Err(Error::NonConvergence {
                    steps: step,
                    last_increment: inc,
                });
            }
            if inc <= self.cfg.tol {
                return Ok(Snapshot {
                    mu,
                    u,
                    p,
                    iterations: step,
                    final_increment: inc,
                    wall_time: start.elapsed().as_secs_f64(),
                });
            }
        }
        Err(Error::NonConvergence {
            steps: self.cfg.max_steps,
            last_increment: last,
        })
    }

    /// Independent solves from the zero iterate, in parallel; results keep
    /// the input order.
    pub fn solve_many(&self, mus: &[f64]) -> Vec<Result<Snapshot>> {
        mus.par_iter().map(|&mu| self.solve(mu)).collect()
    }

    /// Sequential continuation: each solve starts from the previous
    /// converged velocity.
    pub fn solve_continuation(&self, mus: &[f64]) -> Vec<Result<Snapshot>> {
        let mut prev: Option<Vec<f64>> = None;
        mus.iter()
            .map(|&mu| {
                let r = self.solve_from(mu, prev.as_deref());
                if let Ok(s) = &r {
                    prev = Some(s.u.clone());
                }
                r
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::ModelParams;
    use crate::fem::FeSpace;
    use crate::mesh::{generate_cavity_mesh, generate_step_mesh, StepGeometry};

    fn cavity(n: usize) -> Assembler {
        let mut asm = Assembler::new(FeSpace::new(generate_cavity_mesh(n).unwrap()).unwrap(), ModelParams::default()).unwrap();
        let lift = compute_lift(&asm, &Inflow::Lid { velocity: [1.0, 0.0] }).unwrap();
        asm.set_lift(lift).unwrap();
        asm
    }

    #[test]
    fn cavity_lift_is_the_lid_value() {
        let asm = cavity(4);
        let sp = asm.space();
        let n = sp.n_p2();
        for k in 0..n {
            let on_lid = (sp.p2_coords()[k][1] - 1.0).abs() < 1e-14;
            let v = sp.node_velocity(asm.lift(), k);
            assert_eq!(v, if on_lid { [1.0, 0.0] } else { [0.0, 0.0] });
        }
        let none = compute_lift(&asm, &Inflow::None).unwrap();
        assert!(none.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_lift_is_discretely_solenoidal() {
        let asm = Assembler::new(
            FeSpace::new(generate_step_mesh(1, &StepGeometry::default()).unwrap()).unwrap(),
            ModelParams::default(),
        )
        .unwrap();
        let lift = compute_lift(&asm, &Inflow::Parabolic { mean: 1.0 }).unwrap();
        let div = asm.divergence().mul_vec(&lift);
        let div_norm = div.iter().map(|v| v * v).sum::<f64>().sqrt();
        let t_norm = (asm.diffusion().bilinear(&lift, &lift) / 450.0).sqrt();
        assert!(div_norm / t_norm < 1e-8, "{div_norm} {t_norm}");
        // Inflow trace: peak 1.5 at the inlet centre.
        let sp = asm.space();
        let mid = (0..sp.n_p2())
            .find(|&k| sp.p2_coords()[k] == [0.0, 1.5])
            .expect("inlet midpoint node");
        assert!((lift[mid] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_data_gives_zero_solution_quickly() {
        let asm = Assembler::new(FeSpace::new(generate_cavity_mesh(3).unwrap()).unwrap(), ModelParams::default()).unwrap();
        let solver = TruthSolver::new(Arc::new(asm), SolverConfig::default()).unwrap();
        let s = solver.solve(1e-6).unwrap();
        assert!(s.iterations <= 2);
        assert!(s.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cavity_solution_is_divergence_free_and_steady() {
        let asm = Arc::new(cavity(6));
        let solver = TruthSolver::new(asm.clone(), SolverConfig::default()).unwrap();
        let s = solver.solve(1000.0).unwrap();
        let div = asm.divergence().mul_vec(&s.u);
        assert!(div.iter().all(|v| v.abs() <= 1e-10));
        let (rv, _) = asm.residual(&s.u, &s.p, 1000.0);
        let rmax = rv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(rmax < 1e-8, "residual {rmax}");
    }

    #[test]
    fn snapshot_round_trip_and_errors() {
        let s = Snapshot {
            mu: 1234.5678,
            u: vec![0.1, -2.5e-300, 1.0 / 3.0, f64::MIN_POSITIVE],
            p: vec![std::f64::consts::PI, -0.0],
            iterations: 17,
            final_increment: 3.2e-11,
            wall_time: 0.25,
        };
        let path = Path::new("snap.txt");
        let back = Snapshot::from_text(&s.to_text(), path, Some((4, 2))).unwrap();
        assert_eq!(back, s);
        for (a, b) in back.u.iter().zip(&s.u) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        match Snapshot::from_text(&s.to_text(), path, Some((5, 2))) {
            Err(Error::DimensionMismatch { expected, found, .. }) => {
                assert!(expected.contains("dim_Y=5") && found.contains("dim_Y=4"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let corrupt = s.to_text().replacen("dims 4 2", "dims four 2", 1);
        match Snapshot::from_text(&corrupt, path, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let v2 = s.to_text().replacen("v1", "v2", 1);
        assert!(matches!(Snapshot::from_text(&v2, path, None), Err(Error::Version { found: 2, .. })));
    }
}
