//! Parameter-independent reduced operators and the online reduced solve.
//!
//! Velocity coefficients `a` (length `n_u`) expand the homogeneous part
//! `u_N = sum_j a_j zeta_j`; the full velocity is `w_N = u_N + u_D`.
//! Pressure coefficients `b` (length `n_p`) expand `p_N = sum_k b_k xi_k`.
//! All blocks are integrals evaluated with the basis functions tabulated
//! at the quadrature points.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::Assembler;
use crate::eim::EimBasis;
use crate::error::{Error, Result};
use crate::fem::{FeSpace, NQ};
use crate::rb_offline::RbSpace;
use crate::truth::SolverConfig;

pub const REDUCED_FORMAT_VERSION: u32 = 1;

/// Velocity fields tabulated at every quadrature point: values
/// (row `2 k + c`) and gradients (row `4 k + 2 c + d` for `d_d u_c`), one
/// column per field; `k` is the global quadrature index.
pub struct Tabulation {
    pub values: DMatrix<f64>,
    pub grads: DMatrix<f64>,
}

impl Tabulation {
    pub fn new(space: &FeSpace, fields: &[&[f64]]) -> Self {
        let nq = space.n_quad();
        let cols: Vec<(Vec<f64>, Vec<f64>)> = fields
            .par_iter()
            .map(|f| {
                let pts = space.eval_velocity_all(f);
                let mut v = Vec::with_capacity(2 * nq);
                let mut g = Vec::with_capacity(4 * nq);
                for p in &pts {
                    v.extend_from_slice(&p.value);
                    for c in 0..2 {
                        g.extend_from_slice(&p.grad[c]);
                    }
                }
                (v, g)
            })
            .collect();
        let n = fields.len();
        let mut values = DMatrix::zeros(2 * nq, n);
        let mut grads = DMatrix::zeros(4 * nq, n);
        for (j, (v, g)) in cols.iter().enumerate() {
            values.column_mut(j).copy_from_slice(v);
            grads.column_mut(j).copy_from_slice(g);
        }
        Tabulation { values, grads }
    }
}

/// Rows of `m` scaled by `w[row / stride]`.
fn scale_rows(m: &DMatrix<f64>, w: &[f64], stride: usize) -> DMatrix<f64> {
    let mut out = m.clone();
    for (r, mut row) in out.row_iter_mut().enumerate() {
        row *= w[r / stride];
    }
    out
}

/// `(z . grad) y` for every column `y` of a gradient table, with `z` given
/// by its values at the quadrature points.
fn convect(z: &[f64], grads: &DMatrix<f64>) -> DMatrix<f64> {
    let nq = z.len() / 2;
    let mut out = DMatrix::zeros(2 * nq, grads.ncols());
    for j in 0..grads.ncols() {
        let g = grads.column(j);
        for k in 0..nq {
            for c in 0..2 {
                out[(2 * k + c, j)] = z[2 * k] * g[4 * k + 2 * c] + z[2 * k + 1] * g[4 * k + 2 * c + 1];
            }
        }
    }
    out
}

/// `(y . grad) z` for every column `y` of a value table, with the gradient
/// of `z` given at the quadrature points.
fn react(values: &DMatrix<f64>, zgrad: &[f64]) -> DMatrix<f64> {
    let nq = zgrad.len() / 4;
    let mut out = DMatrix::zeros(2 * nq, values.ncols());
    for j in 0..values.ncols() {
        let v = values.column(j);
        for k in 0..nq {
            for c in 0..2 {
                out[(2 * k + c, j)] = v[2 * k] * zgrad[4 * k + 2 * c] + v[2 * k + 1] * zgrad[4 * k + 2 * c + 1];
            }
        }
    }
    out
}

type Grad = [[f64; 2]; 2];

fn grad_at(grads: &DMatrix<f64>, col: usize, k: usize) -> Grad {
    let g = grads.column(col);
    [[g[4 * k], g[4 * k + 1]], [g[4 * k + 2], g[4 * k + 3]]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedOperators {
    pub version: u32,
    pub n_u: usize,
    pub n_p: usize,
    /// Velocity L2 mass.
    pub mass: DMatrix<f64>,
    /// `int grad zeta_j : grad zeta_i`.
    pub diffusion: DMatrix<f64>,
    /// `b(zeta_j, xi_k) = -int div zeta_j xi_k`, `n_p x n_u`.
    pub divergence: DMatrix<f64>,
    /// Slice `s`: `int (zeta_s . grad zeta_j) . zeta_i`.
    pub convection: Vec<DMatrix<f64>>,
    /// `int (u_D . grad zeta_j) . zeta_i`.
    pub lift_convection: DMatrix<f64>,
    /// `int (zeta_j . grad u_D) . zeta_i`.
    pub lift_reaction: DMatrix<f64>,
    /// Slice `k`: `int (C_S h)^2 q_k grad zeta_j : grad zeta_i`.
    pub smagorinsky: Vec<DMatrix<f64>>,
    /// Slice `k`: `int (C_S h)^2 q_k grad u_D : grad zeta_i`.
    pub smagorinsky_lift: Vec<DVector<f64>>,
    /// Slice `k`: `int (C_S h)^2 q_k grad u_D : grad u_D`.
    pub smagorinsky_lift_lift: Vec<f64>,
    /// `int f . zeta_i`.
    pub force: DVector<f64>,
    /// `int grad u_D : grad zeta_i`.
    pub lift_diffusion: DVector<f64>,
    /// `int (u_D . grad u_D) . zeta_i`.
    pub lift_lift_convection: DVector<f64>,
    /// Rows of the EIM interpolation matrix (lower triangle).
    pub eim_matrix: Vec<Vec<f64>>,
    /// Gradient of every velocity basis function at every magic point.
    pub magic_grads: Vec<Vec<Grad>>,
    pub magic_lift_grads: Vec<Grad>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedSolution {
    pub mu: f64,
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub iterations: usize,
    pub final_increment: f64,
    pub wall_time: f64,
}

impl ReducedOperators {
    /// Projects all operators on the reduced spaces.
    pub fn project(asm: &Assembler, space: &RbSpace, eim: &EimBasis) -> Result<Self> {
        let sp = asm.space();
        let nq = sp.n_quad();
        if eim.n_points != nq {
            return Err(Error::dims("EIM field length", nq, eim.n_points));
        }
        for f in space.velocity.iter() {
            if f.len() != sp.dim_y() {
                return Err(Error::dims("reduced velocity basis", sp.dim_y(), f.len()));
            }
        }
        for f in space.pressure.iter() {
            if f.len() != sp.dim_m() {
                return Err(Error::dims("reduced pressure basis", sp.dim_m(), f.len()));
            }
        }
        let n_u = space.velocity.len();
        let n_p = space.pressure.len();
        let mut fields: Vec<&[f64]> = space.velocity.iter().map(|v| v.as_slice()).collect();
        fields.push(asm.lift());
        let tab = Tabulation::new(sp, &fields);
        let vz = tab.values.columns(0, n_u).into_owned();
        let gz = tab.grads.columns(0, n_u).into_owned();
        let vd: Vec<f64> = tab.values.column(n_u).iter().cloned().collect();
        let gd: Vec<f64> = tab.grads.column(n_u).iter().cloned().collect();

        let w: Vec<f64> = (0..nq).map(|k| sp.quad_weight(k / NQ, k % NQ)).collect();
        let wv = scale_rows(&vz, &w, 2);
        let wg = scale_rows(&gz, &w, 4);
        let mass = wv.transpose() * &vz;
        let diffusion = wg.transpose() * &gz;

        // Pressure basis at the quadrature points and velocity divergence.
        let mut pq = DMatrix::zeros(nq, n_p);
        for (j, xi) in space.pressure.iter().enumerate() {
            for k in 0..nq {
                pq[(k, j)] = sp.eval_pressure(k / NQ, k % NQ, xi);
            }
        }
        let mut div = DMatrix::zeros(nq, n_u);
        for j in 0..n_u {
            for k in 0..nq {
                div[(k, j)] = -(gz[(4 * k, j)] + gz[(4 * k + 3, j)]) * w[k];
            }
        }
        let divergence = pq.transpose() * div;

        let convection: Vec<DMatrix<f64>> = (0..n_u)
            .into_par_iter()
            .map(|s| {
                let z: Vec<f64> = vz.column(s).iter().cloned().collect();
                wv.transpose() * convect(&z, &gz)
            })
            .collect();
        let lift_convection = wv.transpose() * convect(&vd, &gz);
        let lift_reaction = wv.transpose() * react(&vz, &gd);

        let scales = asm.scales();
        let gd_mat = DMatrix::from_column_slice(4 * nq, 1, &gd);
        let sm: Vec<(DMatrix<f64>, DVector<f64>, f64)> = eim
            .basis
            .par_iter()
            .map(|q| {
                let weight: Vec<f64> = (0..nq).map(|k| w[k] * scales[k / NQ] * q[k]).collect();
                let sg = scale_rows(&gz, &weight, 4);
                let sd = scale_rows(&gd_mat, &weight, 4);
                let s = sg.transpose() * &gz;
                let lift = (sg.transpose() * &gd_mat).column(0).into_owned();
                let ll = (sd.transpose() * &gd_mat)[(0, 0)];
                (s, lift, ll)
            })
            .collect();
        let (smagorinsky, rest): (Vec<_>, Vec<_>) = sm.into_iter().map(|(a, b, c)| (a, (b, c))).unzip();
        let (smagorinsky_lift, smagorinsky_lift_lift) = rest.into_iter().unzip();

        let f = asm.params().force;
        let fq: Vec<f64> = (0..2 * nq).map(|r| f[r % 2]).collect();
        let force = wv.transpose() * DVector::from_vec(fq);
        let lift_diffusion = wg.transpose() * DVector::from_column_slice(&gd);
        let dd = convect(&vd, &gd_mat);
        let lift_lift_convection = wv.transpose() * dd.column(0);

        let magic_grads = eim
            .magic_points
            .iter()
            .map(|&k| (0..n_u).map(|j| grad_at(&gz, j, k)).collect())
            .collect();
        let magic_lift_grads = eim.magic_points.iter().map(|&k| grad_at(&gd_mat, 0, k)).collect();

        Ok(ReducedOperators {
            version: REDUCED_FORMAT_VERSION,
            n_u,
            n_p,
            mass,
            diffusion,
            divergence,
            convection,
            lift_convection,
            lift_reaction,
            smagorinsky,
            smagorinsky_lift,
            smagorinsky_lift_lift,
            force,
            lift_diffusion,
            lift_lift_convection,
            eim_matrix: eim.matrix.clone(),
            magic_grads,
            magic_lift_grads,
        })
    }

    pub fn n_eim(&self) -> usize {
        self.eim_matrix.len()
    }

    /// Interpolation coefficients of `|grad w_N|_F` for coefficients `a`.
    pub fn eim_coefficients(&self, a: &[f64]) -> Vec<f64> {
        let m = self.n_eim();
        let mut s = vec![0.0; m];
        for i in 0..m {
            let mut g = self.magic_lift_grads[i];
            for (j, aj) in a.iter().enumerate() {
                let gj = &self.magic_grads[i][j];
                for c in 0..2 {
                    for d in 0..2 {
                        g[c][d] += aj * gj[c][d];
                    }
                }
            }
            let norm = (g[0][0].powi(2) + g[0][1].powi(2) + g[1][0].powi(2) + g[1][1].powi(2)).sqrt();
            let mut v = norm;
            for (j, sj) in s.iter().enumerate().take(i) {
                v -= self.eim_matrix[i][j] * sj;
            }
            s[i] = v / self.eim_matrix[i][i];
        }
        s
    }

    /// `sum_k sigma_k S_k + sum_s a_s C_s + C(u_D) + N(u_D) + A / mu`.
    fn steady_matrix(&self, a: &[f64], sigma: &[f64], mu: f64) -> DMatrix<f64> {
        let mut k = &self.diffusion / mu + &self.lift_convection + &self.lift_reaction;
        for (s, c) in sigma.iter().zip(&self.smagorinsky) {
            k += c * *s;
        }
        for (s, c) in a.iter().zip(&self.convection) {
            k += c * *s;
        }
        k
    }

    /// Parameter-dependent load `F(mu) - sum_k sigma_k s_k(u_D)`.
    fn reduced_load(&self, sigma: &[f64], mu: f64) -> DVector<f64> {
        let mut f = &self.force - &self.lift_diffusion / mu - &self.lift_lift_convection;
        for (s, l) in sigma.iter().zip(&self.smagorinsky_lift) {
            f -= l * *s;
        }
        f
    }

    /// Steady reduced residual at `(a, b)`, with the eddy viscosity
    /// interpolated from `a`.
    pub fn residual(&self, a: &[f64], b: &[f64], mu: f64) -> (Vec<f64>, Vec<f64>) {
        let sigma = self.eim_coefficients(a);
        let av = DVector::from_column_slice(a);
        let bv = DVector::from_column_slice(b);
        let rv = self.steady_matrix(a, &sigma, mu) * &av + self.divergence.transpose() * bv - self.reduced_load(&sigma, mu);
        let rp = -(&self.divergence * av);
        (rv.as_slice().to_vec(), rp.as_slice().to_vec())
    }

    /// Semi-implicit pseudo-time iteration to the steady reduced solution.
    pub fn solve(&self, mu: f64, cfg: &SolverConfig) -> Result<ReducedSolution> {
        self.solve_from(mu, cfg, None)
    }

    pub fn solve_from(&self, mu: f64, cfg: &SolverConfig, initial: Option<&[f64]>) -> Result<ReducedSolution> {
        let start = Instant::now();
        let (n_u, n_p) = (self.n_u, self.n_p);
        let n = n_u + n_p;
        let mut a = match initial {
            Some(x) if x.len() == n_u => DVector::from_column_slice(x),
            Some(x) => return Err(Error::dims("reduced initial iterate", n_u, x.len())),
            None => DVector::zeros(n_u),
        };
        let mut b;
        let mass_dt = &self.mass / cfg.dt;
        let mut last = f64::INFINITY;
        for step in 1..=cfg.max_steps {
            let sigma = self.eim_coefficients(a.as_slice());
            let k = &mass_dt + self.steady_matrix(a.as_slice(), &sigma, mu);
            let rhs_v = &mass_dt * &a + self.reduced_load(&sigma, mu);
            let mut sys = DMatrix::zeros(n, n);
            sys.view_mut((0, 0), (n_u, n_u)).copy_from(&k);
            sys.view_mut((0, n_u), (n_u, n_p)).copy_from(&self.divergence.transpose());
            sys.view_mut((n_u, 0), (n_p, n_u)).copy_from(&self.divergence);
            let mut rhs = DVector::zeros(n);
            rhs.rows_mut(0, n_u).copy_from(&rhs_v);
            let x = sys
                .lu()
                .solve(&rhs)
                .filter(|x| x.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::SingularReducedSystem(format!("mu = {mu}, step {step}")))?;
            let a_new = x.rows(0, n_u).into_owned();
            b = x.rows(n_u, n_p).into_owned();
            let d = &a_new - &a;
            let num = d.dot(&(&self.diffusion * &d)).max(0.0).sqrt();
            let den = a_new.dot(&(&self.diffusion * &a_new)).max(0.0).sqrt();
            last = if den > 0.0 { num / den } else { num };
            a = a_new;
            if last <= cfg.tol {
                return Ok(ReducedSolution {
                    mu,
                    u: a.as_slice().to_vec(),
                    p: b.as_slice().to_vec(),
                    iterations: step,
                    final_increment: last,
                    wall_time: start.elapsed().as_secs_f64(),
                });
            }
        }
        Err(Error::NonConvergence {
            steps: cfg.max_steps,
            last_increment: last,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ops: ReducedOperators = serde_json::from_str(&crate::read_artifact(path)?)?;
        if ops.version != REDUCED_FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                expected: REDUCED_FORMAT_VERSION,
                found: ops.version,
            });
        }
        Ok(ops)
    }
}

/// Full-order fields of a reduced solution.
pub fn reconstruct(space: &RbSpace, sol: &ReducedSolution) -> (Vec<f64>, Vec<f64>) {
    (combine(&space.velocity, &sol.u), combine(&space.pressure, &sol.p))
}

/// `sum_j c_j f_j`.
pub fn combine(fields: &[Vec<f64>], coef: &[f64]) -> Vec<f64> {
    let n = fields.first().map_or(0, Vec::len);
    let mut out = vec![0.0; n];
    for (f, c) in fields.iter().zip(coef) {
        out.iter_mut().zip(f).for_each(|(o, v)| *o += c * v);
    }
    out
}

/// One benchmark row. Errors are relative to the truth solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub mu: f64,
    pub t_fe_s: f64,
    pub t_online_s: f64,
    pub speedup: f64,
    pub err_u_t: f64,
    pub err_p_l2: f64,
    pub out_of_range: bool,
    /// Failure message when either solve failed.
    pub error: Option<String>,
}

pub const CSV_HEADER: &str = "mu,t_fe_s,t_online_s,speedup,err_u_T,err_p_L2,out_of_range";

impl BenchmarkRow {
    pub fn failed(mu: f64, out_of_range: bool, e: &Error) -> Self {
        BenchmarkRow {
            mu,
            t_fe_s: f64::NAN,
            t_online_s: f64::NAN,
            speedup: f64::NAN,
            err_u_t: f64::NAN,
            err_p_l2: f64::NAN,
            out_of_range,
            error: Some(e.to_string()),
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{:e},{:e},{:e},{:e},{:e},{:e},{}",
            self.mu, self.t_fe_s, self.t_online_s, self.speedup, self.err_u_t, self.err_p_l2, self.out_of_range
        )
    }
}

pub fn write_csv(rows: &[BenchmarkRow], path: &Path) -> Result<()> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<BenchmarkRow>> {
    let text = crate::read_artifact(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::parse(path, 1, "unexpected CSV header"));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |k: usize| -> Result<f64> {
                f.get(k)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::parse(path, i + 2, format!("bad field {k}")))
            };
            Ok(BenchmarkRow {
                mu: num(0)?,
                t_fe_s: num(1)?,
                t_online_s: num(2)?,
                speedup: num(3)?,
                err_u_t: num(4)?,
                err_p_l2: num(5)?,
                out_of_range: f
                    .get(6)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::parse(path, i + 2, "bad field 6"))?,
                error: None,
            })
        })
        .collect()
}

/// Model error of the interpolated eddy viscosity: `e_S`, the T-dual norm
/// of `a_S(w_h; w_h, .) - a_S(w_N; w_N, .)` with the reduced eddy
/// viscosity interpolated, and `n_S`, the T-dual norm of `a_S(w_h; w_h, .)`.
/// Velocities are homogeneous parts; the lift is added here.
pub fn eim_model_error(
    asm: &Assembler,
    x: &crate::certification::XProduct,
    eim: &EimBasis,
    u_truth: &[f64],
    u_reduced: &[f64],
) -> Result<(f64, f64)> {
    let wh = asm.with_lift(u_truth);
    let wn = asm.with_lift(u_reduced);
    let mut sh = asm.weighted_stiffness_apply(&asm.eddy_viscosity_field(&wh), &wh);
    asm.space().apply_homogeneous_dirichlet(&mut sh);
    let nu_n = asm.scale_field(&eim.interpolate(&asm.gradient_magnitude(&wn)));
    let mut sn = asm.weighted_stiffness_apply(&nu_n, &wn);
    asm.space().apply_homogeneous_dirichlet(&mut sn);
    let diff: Vec<f64> = sh.iter().zip(&sn).map(|(a, b)| a - b).collect();
    Ok((x.velocity_dual_norm(&diff)?, x.velocity_dual_norm(&sh)?))
}
