//! Constants and the a posteriori estimator: the product space norm, the
//! inf-sup and continuity factors of the Jacobian, the L4 Sobolev constant,
//! the inverse-inequality constant, the Lipschitz constant of the
//! Jacobian, residual dual norms, and the error bound.
//!
//! State vectors are concatenations `[u (dim_Y); p (dim_M)]` with `u` zero
//! on the Dirichlet boundary.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{Assembler, VelocityTerms};
use crate::eigen::{lanczos_max, power_iteration, EigenOptions};
use crate::error::{Error, Result};
use crate::fem::{FeSpace, NQ};
use crate::rbf::Surrogate;
use crate::sparse::{CsrMatrix, SparseLu};
use crate::system::{SaddleLayout, SaddleSolver};
use crate::truth::Snapshot;

pub fn concat(u: &[f64], p: &[f64]) -> Vec<f64> {
    let mut x = u.to_vec();
    x.extend_from_slice(p);
    x
}

/// Inner product `(u, v)_T + (p, q)_{L2}` on velocity-pressure pairs, with
/// its Riesz map. When the pressure has zero mean the Riesz map acts on the
/// zero-mean subspace.
#[derive(Clone, Debug)]
pub struct XProduct {
    layout: Arc<SaddleLayout>,
    t: CsrMatrix,
    mass_p: CsrMatrix,
    t_lu: SparseLu,
    mp_lu: SparseLu,
    area: f64,
}

impl XProduct {
    pub fn new(asm: &Assembler, t: CsrMatrix) -> Result<Self> {
        let layout = Arc::new(SaddleLayout::new(asm.space()));
        let free = layout.free_velocity_dofs();
        let t_lu = SparseLu::from_csr(&t.submatrix(free, free))?;
        let mp_lu = SparseLu::from_csr(asm.pressure_mass())?;
        Ok(XProduct {
            layout,
            t,
            mass_p: asm.pressure_mass().clone(),
            t_lu,
            mp_lu,
            area: asm.space().mesh().area(),
        })
    }

    pub fn dim_y(&self) -> usize {
        self.layout.dim_y()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim_y() + self.layout.dim_m()
    }

    pub fn t_gram(&self) -> &CsrMatrix {
        &self.t
    }

    pub fn layout(&self) -> &SaddleLayout {
        &self.layout
    }

    pub fn t_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.t.bilinear(a, b)
    }

    pub fn t_norm(&self, a: &[f64]) -> f64 {
        self.t_inner(a, a).max(0.0).sqrt()
    }

    pub fn l2_pressure_norm(&self, p: &[f64]) -> f64 {
        self.mass_p.bilinear(p, p).max(0.0).sqrt()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let n = self.dim_y();
        self.t.bilinear(&a[..n], &b[..n]) + self.mass_p.bilinear(&a[n..], &b[n..])
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).max(0.0).sqrt()
    }

    /// `X a` as a functional (Dirichlet rows zero).
    pub fn apply(&self, a: &[f64]) -> Vec<f64> {
        let n = self.dim_y();
        let mut v = self.t.mul_vec(&a[..n]);
        for (d, x) in v.iter_mut().enumerate() {
            if self.layout.free_index(d).is_none() {
                *x = 0.0;
            }
        }
        concat(&v, &self.mass_p.mul_vec(&a[n..]))
    }

    /// Velocity part of the Riesz map: `T^{-1} r` on the free dofs.
    pub fn t_solve(&self, rv: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.layout.restrict(rv);
        self.t_lu.solve_in_place(&mut x)?;
        Ok(self.layout.extend(&x))
    }

    /// Pressure part of the Riesz map.
    pub fn pressure_solve(&self, rp: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.mp_lu.solve(rp)?;
        if self.layout.mean_zero() {
            let shift = rp.iter().sum::<f64>() / self.area;
            z.iter_mut().for_each(|v| *v -= shift);
        }
        Ok(z)
    }

    pub fn riesz(&self, r: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim_y();
        Ok(concat(&self.t_solve(&r[..n])?, &self.pressure_solve(&r[n..])?))
    }

    /// Dual norm of a functional.
    pub fn dual_norm(&self, r: &[f64]) -> Result<f64> {
        let z = self.riesz(r)?;
        let n = self.dim_y();
        let rv = self.layout.restrict(&r[..n]);
        let zv = self.layout.restrict(&z[..n]);
        let s: f64 = rv.iter().zip(&zv).map(|(a, b)| a * b).sum::<f64>()
            + r[n..].iter().zip(&z[n..]).map(|(a, b)| a * b).sum::<f64>();
        Ok(s.max(0.0).sqrt())
    }

    /// Removes the mean of the pressure part when the pressure has zero mean.
    pub fn project(&self, a: &mut [f64]) {
        let n = self.dim_y();
        for d in 0..n {
            if self.layout.free_index(d).is_none() {
                a[d] = 0.0;
            }
        }
        if self.layout.mean_zero() {
            let m = self.mass_p.mul_vec(&vec![1.0; self.layout.dim_m()]);
            let mean = a[n..].iter().zip(&m).map(|(x, w)| x * w).sum::<f64>() / self.area;
            a[n..].iter_mut().for_each(|x| *x -= mean);
        }
    }

    /// Dual norm of a velocity functional in the T product.
    pub fn velocity_dual_norm(&self, rv: &[f64]) -> Result<f64> {
        let z = self.t_solve(rv)?;
        let s: f64 = self.layout.free_velocity_dofs().iter().map(|&d| rv[d] * z[d]).sum();
        Ok(s.max(0.0).sqrt())
    }

    /// Deterministic starting vector for Krylov iterations.
    pub fn start_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.dim()).map(|i| 1.0 + 0.5 * ((i as f64) * 0.7).sin()).collect();
        self.project(&mut v);
        v
    }
}

/// Inf-sup factor `inf_Z sup_V <J Z, V> / (|Z|_X |V|_X)` of an operator
/// given through its solves `J^{-1}` and `J^{-T}`, computed as
/// `1 / sqrt(lambda_max(J^{-T} X J^{-1} X))`.
pub fn inf_sup_from_solves<S, St>(x: &XProduct, solve: S, solve_t: St, opts: EigenOptions) -> Result<f64>
where
    S: Fn(&[f64]) -> Result<Vec<f64>>,
    St: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let apply = |h: &[f64]| -> Result<Vec<f64>> {
        let z = solve(&x.apply(h))?;
        let mut y = solve_t(&x.apply(&z))?;
        x.project(&mut y);
        Ok(y)
    };
    let pair = lanczos_max(apply, |a, b| x.inner(a, b), x.start_vector(), opts)?;
    if !(pair.value > 0.0) || !pair.value.is_finite() {
        return Err(Error::EigenSolveFailure(format!("invalid dominant eigenvalue {}", pair.value)));
    }
    Ok(1.0 / pair.value.sqrt())
}

/// Continuity factor `sqrt(lambda_max(X^{-1} J^T X^{-1} J))` of an operator
/// given through its action and transposed action.
pub fn continuity_from_actions<A, At>(x: &XProduct, apply: A, apply_t: At, opts: EigenOptions) -> Result<f64>
where
    A: Fn(&[f64]) -> Vec<f64>,
    At: Fn(&[f64]) -> Vec<f64>,
{
    let op = |z: &[f64]| -> Result<Vec<f64>> {
        let y = x.riesz(&apply(z))?;
        let mut w = x.riesz(&apply_t(&y))?;
        x.project(&mut w);
        Ok(w)
    };
    let pair = power_iteration(op, |a, b| x.inner(a, b), x.start_vector(), opts)?;
    Ok(pair.value.max(0.0).sqrt())
}

/// Jacobian of the steady residual at a state, with its factorization.
pub struct JacobianOperator<'a> {
    asm: &'a Assembler,
    jvv: CsrMatrix,
    factor: crate::system::SaddleFactor,
}

impl<'a> JacobianOperator<'a> {
    pub fn new(asm: &'a Assembler, saddle: &SaddleSolver, u: &[f64], mu: f64) -> Result<Self> {
        let jvv = asm.jacobian_velocity(u, mu);
        let factor = saddle.factor(&jvv, asm.divergence(), -1.0).map_err(|e| match e {
            Error::SingularSystem(_) => Error::NonpositiveBeta { mu, beta: 0.0 },
            other => other,
        })?;
        Ok(JacobianOperator { asm, jvv, factor })
    }

    fn split<'b>(&self, x: &'b [f64]) -> (&'b [f64], &'b [f64]) {
        x.split_at(self.asm.space().dim_y())
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        let (zu, zp) = self.split(z);
        let (rv, rp) = self.asm.apply_jacobian(&self.jvv, zu, zp);
        concat(&rv, &rp)
    }

    pub fn apply_transpose(&self, z: &[f64]) -> Vec<f64> {
        let (zu, zp) = self.split(z);
        let mut rv = self.jvv.transpose_mul_vec(zu);
        let bt = self.asm.divergence().transpose_mul_vec(zp);
        rv.iter_mut().zip(&bt).for_each(|(a, b)| *a -= b);
        self.asm.space().apply_homogeneous_dirichlet(&mut rv);
        concat(&rv, &self.asm.divergence().mul_vec(zu))
    }

    pub fn solve(&self, g: &[f64]) -> Result<Vec<f64>> {
        let (gv, gp) = self.split(g);
        let (u, p) = self.factor.solve(gv, gp)?;
        Ok(concat(&u, &p))
    }

    pub fn solve_transpose(&self, g: &[f64]) -> Result<Vec<f64>> {
        let (gv, gp) = self.split(g);
        let (u, p) = self.factor.solve_transpose(gv, gp)?;
        Ok(concat(&u, &p))
    }
}

/// Inf-sup factor of the Jacobian at a truth solution.
pub fn compute_beta(asm: &Assembler, saddle: &SaddleSolver, x: &XProduct, snap: &Snapshot) -> Result<f64> {
    let j = JacobianOperator::new(asm, saddle, &snap.u, snap.mu)?;
    let beta = inf_sup_from_solves(x, |g| j.solve(g), |g| j.solve_transpose(g), EigenOptions::default())?;
    if !(beta > 0.0) {
        return Err(Error::NonpositiveBeta { mu: snap.mu, beta });
    }
    Ok(beta)
}

/// Continuity factor of the Jacobian at a truth solution (tolerance 1e-6).
pub fn compute_gamma(asm: &Assembler, saddle: &SaddleSolver, x: &XProduct, snap: &Snapshot) -> Result<f64> {
    let j = JacobianOperator::new(asm, saddle, &snap.u, snap.mu)?;
    continuity_from_actions(
        x,
        |z| j.apply(z),
        |z| j.apply_transpose(z),
        EigenOptions {
            tol: 1e-6,
            max_iter: 2000,
        },
    )
}

/// Index of the snapshot minimizing `sum_K (C_S h_K)^2 min_{x in K} |grad w|`
/// (minimum over the element's quadrature points).
pub fn reference_snapshot(asm: &Assembler, snaps: &[Snapshot]) -> Option<usize> {
    let functional = |s: &Snapshot| {
        let g = asm.gradient_magnitude(&asm.with_lift(&s.u));
        asm.scales()
            .iter()
            .enumerate()
            .map(|(e, c)| c * g[e * NQ..(e + 1) * NQ].iter().cloned().fold(f64::INFINITY, f64::min))
            .sum::<f64>()
    };
    snaps
        .iter()
        .enumerate()
        .map(|(i, s)| (i, functional(s)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i)
}

/// Problem data for the Sobolev-constant fixed point.
pub trait SobolevProblem {
    fn initial(&self) -> Result<Vec<f64>>;
    /// Eigenvector of the largest eigenvalue of `W(v) x = lambda T x`.
    fn leading_eigenvector(&self, v: &[f64]) -> Result<Vec<f64>>;
    /// `|v|_{L4} / |v|_T`.
    fn ratio(&self, v: &[f64]) -> f64;
}

#[derive(Clone, Debug)]
pub struct SobolevResult {
    pub constant: f64,
    pub maximizer: Vec<f64>,
    pub iterations: usize,
    /// False when the iteration limit was reached; the result is then the
    /// best iterate.
    pub converged: bool,
}

/// Fixed point `v <- leading eigenvector of W(v) x = lambda T x`, stopping
/// when successive ratio estimates differ by less than `tol` relative.
/// When `max_iter` is reached the best iterate is returned, flagged.
pub fn sobolev_fixed_point<P: SobolevProblem>(p: &P, tol: f64, max_iter: usize) -> Result<SobolevResult> {
    let mut v = p.initial()?;
    let mut c = p.ratio(&v);
    let mut best = (c, v.clone());
    for it in 1..=max_iter {
        let next = p.leading_eigenvector(&v)?;
        let cn = p.ratio(&next);
        if cn > best.0 {
            best = (cn, next.clone());
        }
        let done = ((cn - c) / cn).abs() < tol;
        v = next;
        c = cn;
        if done {
            return Ok(SobolevResult {
                constant: c,
                maximizer: v,
                iterations: it,
                converged: true,
            });
        }
    }
    log::warn!("Sobolev fixed point stopped after {max_iter} iterations (best {:.6e})", best.0);
    Ok(SobolevResult {
        constant: best.0,
        maximizer: best.1,
        iterations: max_iter,
        converged: false,
    })
}

/// Finite-element instance: velocity fields in the T-norm.
pub struct FeSobolev<'a> {
    pub asm: &'a Assembler,
    pub x: &'a XProduct,
}

impl FeSobolev<'_> {
    /// `|v|^2` at all quadrature points.
    fn density(&self, v: &[f64]) -> Vec<f64> {
        self.asm
            .space()
            .eval_velocity_all(v)
            .iter()
            .map(|pv| pv.value[0] * pv.value[0] + pv.value[1] * pv.value[1])
            .collect()
    }

    pub fn l4_norm(&self, v: &[f64]) -> f64 {
        let sp = self.asm.space();
        let d = self.density(v);
        let mut s = 0.0;
        for e in 0..sp.n_elements() {
            for q in 0..NQ {
                s += sp.quad_weight(e, q) * d[e * NQ + q] * d[e * NQ + q];
            }
        }
        s.powf(0.25)
    }

    fn leading(&self, w: &CsrMatrix, start: Vec<f64>) -> Result<Vec<f64>> {
        let apply = |a: &[f64]| self.x.t_solve(&w.mul_vec(a));
        let pair = lanczos_max(
            apply,
            |a, b| self.x.t_inner(a, b),
            start,
            EigenOptions {
                tol: 1e-11,
                max_iter: 400,
            },
        )?;
        Ok(pair.vector)
    }
}

impl SobolevProblem for FeSobolev<'_> {
    fn initial(&self) -> Result<Vec<f64>> {
        let mut start = self.asm.space().interpolate_velocity(|x| [1.0 + 0.1 * x[0], 1.0 - 0.1 * x[1]]);
        self.asm.space().apply_homogeneous_dirichlet(&mut start);
        self.leading(self.asm.mass(), start)
    }

    fn leading_eigenvector(&self, v: &[f64]) -> Result<Vec<f64>> {
        let d = self.density(v);
        let w = self.asm.assemble_velocity(&VelocityTerms {
            weighted_mass: Some(&d),
            ..Default::default()
        });
        self.leading(&w, v.to_vec())
    }

    fn ratio(&self, v: &[f64]) -> f64 {
        self.l4_norm(v) / self.x.t_norm(v)
    }
}

/// Largest `|grad v|_{L3} / (h^{-1/3} |grad v|_{L2})` over `n_random`
/// random fields and every velocity basis function, times `safety`.
/// `h` is the largest element diameter.
pub fn inverse_inequality_constant(space: &FeSpace, n_random: usize, seed: u64, safety: f64) -> f64 {
    let h = space.mesh().max_diameter();
    let scale = h.powf(1.0 / 3.0);
    let ratio = |l3: f64, l2: f64| if l2 > 0.0 { scale * l3.cbrt() / l2.sqrt() } else { 0.0 };

    // Basis functions: integrals of |grad phi|^3 and |grad phi|^2 per P2 node.
    let mut s3 = vec![0.0; space.n_p2()];
    let mut s2 = vec![0.0; space.n_p2()];
    for e in 0..space.n_elements() {
        let nodes = space.element_p2(e);
        for q in 0..NQ {
            let w = space.quad_weight(e, q);
            for (i, g) in space.p2_grads(e, q).iter().enumerate() {
                let m = (g[0] * g[0] + g[1] * g[1]).sqrt();
                s3[nodes[i]] += w * m * m * m;
                s2[nodes[i]] += w * m * m;
            }
        }
    }
    let mut best = s3.iter().zip(&s2).map(|(a, b)| ratio(*a, *b)).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_random {
        let mut v: Vec<f64> = (0..space.dim_y()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        space.apply_homogeneous_dirichlet(&mut v);
        let (mut l3, mut l2) = (0.0, 0.0);
        for e in 0..space.n_elements() {
            let local = space.gather_velocity(e, &v);
            for q in 0..NQ {
                let g = space.eval_local(e, q, &local).grad_norm();
                let w = space.quad_weight(e, q);
                l3 += w * g * g * g;
                l2 += w * g * g;
            }
        }
        best = best.max(ratio(l3, l2));
    }
    safety * best
}

/// Which power of `C_S` enters the Lipschitz constant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoFormula {
    /// `2 C_T + 4 C_S^2 h^{2-d/2} C`, as carried by the intermediate bounds.
    #[default]
    Squared,
    /// `2 C_T + 4 C_S h^{2-d/2} C`, the closing statement of the bound.
    Literal,
}

/// Lipschitz constant of the Jacobian in two dimensions.
pub fn lipschitz_constant(c_t: f64, cs: f64, h: f64, c_inv: f64, formula: RhoFormula) -> f64 {
    let d = 2.0;
    let cs_factor = match formula {
        RhoFormula::Squared => cs * cs,
        RhoFormula::Literal => cs,
    };
    2.0 * c_t + 4.0 * cs_factor * h.powf(2.0 - d / 2.0) * c_inv
}

/// Error bound at one parameter value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBound {
    pub eps: f64,
    pub beta: f64,
    pub tau: f64,
    /// Certified bound, present when `tau <= 1`.
    pub delta: Option<f64>,
}

impl ErrorBound {
    /// Certified bound when available, otherwise `tau` as an indicator.
    pub fn indicator(&self) -> f64 {
        self.delta.unwrap_or(self.tau)
    }

    pub fn is_certified(&self) -> bool {
        self.delta.is_some()
    }
}

/// `tau = 4 eps rho / beta^2`; when `tau <= 1` the bound is the smaller root
/// `beta / (2 rho) (1 - sqrt(1 - tau))` of `rho a^2 - beta a + eps = 0`.
pub fn error_bound(eps: f64, beta: f64, rho: f64) -> Result<ErrorBound> {
    if !(beta > 0.0) || !(rho > 0.0) || !(eps >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "error bound needs beta > 0, rho > 0, eps >= 0 (got {beta}, {rho}, {eps})"
        )));
    }
    let tau = 4.0 * eps * rho / (beta * beta);
    // Rationalized form, free of cancellation for small tau.
    let delta = (tau <= 1.0).then(|| 2.0 * eps / (beta * (1.0 + (1.0 - tau).sqrt())));
    Ok(ErrorBound { eps, beta, tau, delta })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectivityRow {
    pub mu: f64,
    pub error: f64,
    pub bound: ErrorBound,
    /// `Delta / error` for certified rows.
    pub effectivity: Option<f64>,
}

/// Builds per-parameter rows and fails with the offending parameters when a
/// certified bound is below the measured error.
pub fn effectivity_report(rows: &[(f64, f64, ErrorBound)]) -> Result<Vec<EffectivityRow>> {
    let out: Vec<EffectivityRow> = rows
        .iter()
        .map(|&(mu, error, bound)| EffectivityRow {
            mu,
            error,
            bound,
            effectivity: bound.delta.map(|d| d / error),
        })
        .collect();
    let bad: Vec<f64> = out
        .iter()
        .filter(|r| r.bound.delta.is_some_and(|d| r.error > d))
        .map(|r| r.mu)
        .collect();
    if bad.is_empty() {
        Ok(out)
    } else {
        Err(Error::BoundViolation { mus: bad })
    }
}

/// All published constants of the offline phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationState {
    pub version: u32,
    /// Reference Reynolds number of the T product.
    pub mu_bar: f64,
    /// Frozen eddy viscosity of the T product at every quadrature point.
    pub nu_star: Vec<f64>,
    pub c_t: f64,
    pub c_t_converged: bool,
    pub c_inv: f64,
    pub h: f64,
    pub cs: f64,
    pub rho_formula: RhoFormula,
    pub rho: f64,
    pub beta_samples: Vec<(f64, f64)>,
    pub beta_surrogate: Surrogate,
    /// Relative disagreement at each adaptively added inf-sup sample.
    pub beta_refinement: Vec<(f64, f64)>,
    pub gamma_samples: Vec<(f64, f64)>,
}

pub const CERTIFICATION_FORMAT_VERSION: u32 = 1;

impl CertificationState {
    pub fn beta(&self, mu: f64) -> f64 {
        self.beta_surrogate.eval(mu)
    }

    /// X product of this state.
    pub fn x_product(&self, asm: &Assembler) -> Result<XProduct> {
        XProduct::new(asm, asm.t_gram(self.mu_bar, &self.nu_star)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let c: CertificationState = serde_json::from_str(&crate::read_artifact(path)?)?;
        if c.version != CERTIFICATION_FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                expected: CERTIFICATION_FORMAT_VERSION,
                found: c.version,
            });
        }
        Ok(c)
    }
}
