//! Weak-form assembly: diffusion, divergence, mass, convection, Smagorinsky
//! eddy viscosity, the load vector, the weighted energy Gram matrix, the
//! steady residual and its Jacobian.
//!
//! Element matrices are computed in parallel and scattered in element
//! order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fem::{FeSpace, PointVelocity, NP, NQ, NV};
use crate::sparse::CsrMatrix;

/// Model data shared by every parameter value.
#[derive(Clone, Debug)]
pub struct ModelParams {
    /// Smagorinsky constant.
    pub cs: f64,
    /// Floor on the gradient magnitude wherever it appears in a denominator.
    pub eps_reg: f64,
    /// Constant body force.
    pub force: [f64; 2],
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            cs: 0.1,
            eps_reg: 1e-12,
            force: [0.0, 0.0],
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cs > 0.0) || !(self.eps_reg >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "need C_S > 0 and eps_reg >= 0, got {} and {}",
                self.cs, self.eps_reg
            )));
        }
        Ok(())
    }
}

type ElementMatrix = [[f64; NV]; NV];

/// Terms of a linearized velocity-velocity operator. Each present term is
/// added to the assembled matrix.
#[derive(Clone, Copy, Debug, Default)]
pub struct VelocityTerms<'a> {
    /// Coefficient of the L² mass matrix.
    pub mass: f64,
    /// Mass weight per quadrature point.
    pub weighted_mass: Option<&'a [f64]>,
    /// Constant diffusion coefficient.
    pub diffusion: f64,
    /// Extra diffusion coefficient per quadrature point.
    pub viscosity: Option<&'a [f64]>,
    /// Convecting field `z` of `(z . grad u) . v`.
    pub convecting: Option<&'a [f64]>,
    /// Field `y` of `(u . grad y) . v`.
    pub reaction: Option<&'a [f64]>,
    /// Field `w` of the derivative of the eddy viscosity in direction `u`.
    pub eddy_derivative: Option<&'a [f64]>,
}

/// Finite-element operators of one mesh and model.
#[derive(Clone, Debug)]
pub struct Assembler {
    space: FeSpace,
    params: ModelParams,
    /// `(C_S h_K)^2` per element.
    scales: Vec<f64>,
    lift: Vec<f64>,
    vv_map: Vec<[usize; NV * NV]>,
    vv_pattern: CsrMatrix,
    a0: CsrMatrix,
    mass: CsrMatrix,
    b: CsrMatrix,
    mass_p: CsrMatrix,
}

impl Assembler {
    pub fn new(space: FeSpace, params: ModelParams) -> Result<Self> {
        params.validate()?;
        let ne = space.n_elements();
        let dim_y = space.dim_y();
        let dim_m = space.dim_m();

        let vv_pattern = CsrMatrix::from_blocks(
            dim_y,
            dim_y,
            (0..ne).map(|e| {
                let d = space.velocity_dofs(e);
                (d, d)
            }),
        );
        let vv_map = (0..ne)
            .map(|e| {
                let d = space.velocity_dofs(e);
                std::array::from_fn(|k| vv_pattern.position(d[k / NV], d[k % NV]).unwrap())
            })
            .collect();

        let mut b = CsrMatrix::from_blocks(
            dim_m,
            dim_y,
            (0..ne).map(|e| (*space.element_pressure(e), space.velocity_dofs(e))),
        );
        let mut mass_p = CsrMatrix::from_blocks(
            dim_m,
            dim_m,
            (0..ne).map(|e| (*space.element_pressure(e), *space.element_pressure(e))),
        );
        for e in 0..ne {
            let pd = space.element_pressure(e);
            let vd = space.velocity_dofs(e);
            let (be, me) = divergence_and_pressure_mass(&space, e);
            for k in 0..NP {
                for i in 0..NV {
                    let pos = b.position(pd[k], vd[i]).unwrap();
                    b.values_mut()[pos] += be[k][i];
                }
                for l in 0..NP {
                    let pos = mass_p.position(pd[k], pd[l]).unwrap();
                    mass_p.values_mut()[pos] += me[k][l];
                }
            }
        }

        let scales = space.smagorinsky_scales(params.cs);
        let lift = vec![0.0; dim_y];
        let mut asm = Assembler {
            space,
            params,
            scales,
            lift,
            vv_map,
            vv_pattern,
            a0: CsrMatrix::from_triplets(0, 0, &[]),
            mass: CsrMatrix::from_triplets(0, 0, &[]),
            b,
            mass_p,
        };
        asm.a0 = asm.assemble_velocity(&VelocityTerms {
            diffusion: 1.0,
            ..Default::default()
        });
        asm.mass = asm.assemble_velocity(&VelocityTerms {
            mass: 1.0,
            ..Default::default()
        });
        Ok(asm)
    }

    pub fn space(&self) -> &FeSpace {
        &self.space
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// `(C_S h_K)^2` for every element.
    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn lift(&self) -> &[f64] {
        &self.lift
    }

    pub fn set_lift(&mut self, lift: Vec<f64>) -> Result<()> {
        if lift.len() != self.space.dim_y() {
            return Err(Error::dims("lift", self.space.dim_y(), lift.len()));
        }
        self.lift = lift;
        Ok(())
    }

    /// Stiffness matrix of `int grad u : grad v`.
    pub fn diffusion(&self) -> &CsrMatrix {
        &self.a0
    }

    /// Velocity mass matrix.
    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    /// Divergence matrix, `(B u)_q = -int (div u) psi_q`.
    pub fn divergence(&self) -> &CsrMatrix {
        &self.b
    }

    pub fn pressure_mass(&self) -> &CsrMatrix {
        &self.mass_p
    }

    /// Empty matrix with the velocity-velocity pattern.
    pub fn velocity_pattern(&self) -> &CsrMatrix {
        &self.vv_pattern
    }

    /// Full velocity `u + u_D`.
    pub fn with_lift(&self, u: &[f64]) -> Vec<f64> {
        u.iter().zip(&self.lift).map(|(a, b)| a + b).collect()
    }

    /// Assembles element matrices in parallel and scatters them in element
    /// order.
    pub fn assemble_with<F>(&self, kernel: F) -> CsrMatrix
    where
        F: Fn(usize, &mut ElementMatrix) + Sync,
    {
        let locals: Vec<ElementMatrix> = (0..self.space.n_elements())
            .into_par_iter()
            .map(|e| {
                let mut k = [[0.0; NV]; NV];
                kernel(e, &mut k);
                k
            })
            .collect();
        self.scatter(&locals)
    }

    /// Reference single-threaded assembly with the same summation order.
    pub fn assemble_with_serial<F>(&self, kernel: F) -> CsrMatrix
    where
        F: Fn(usize, &mut ElementMatrix),
    {
        let mut out = self.vv_pattern.zeros_like();
        for e in 0..self.space.n_elements() {
            let mut k = [[0.0; NV]; NV];
            kernel(e, &mut k);
            self.scatter_one(&mut out, e, &k);
        }
        out
    }

    fn scatter(&self, locals: &[ElementMatrix]) -> CsrMatrix {
        let mut out = self.vv_pattern.zeros_like();
        for (e, k) in locals.iter().enumerate() {
            self.scatter_one(&mut out, e, k);
        }
        out
    }

    fn scatter_one(&self, out: &mut CsrMatrix, e: usize, k: &ElementMatrix) {
        let map = &self.vv_map[e];
        let vals = out.values_mut();
        for i in 0..NV {
            for j in 0..NV {
                vals[map[i * NV + j]] += k[i][j];
            }
        }
    }

    pub fn assemble_velocity(&self, terms: &VelocityTerms) -> CsrMatrix {
        self.assemble_with(|e, k| self.velocity_kernel(terms, e, k))
    }

    pub fn assemble_velocity_serial(&self, terms: &VelocityTerms) -> CsrMatrix {
        self.assemble_with_serial(|e, k| self.velocity_kernel(terms, e, k))
    }

    fn velocity_kernel(&self, t: &VelocityTerms, e: usize, k: &mut ElementMatrix) {
        let sp = &self.space;
        let zl = t.convecting.map(|z| sp.gather_velocity(e, z));
        let yl = t.reaction.map(|y| sp.gather_velocity(e, y));
        let wl = t.eddy_derivative.map(|w| sp.gather_velocity(e, w));
        for q in 0..NQ {
            let wq = sp.quad_weight(e, q);
            let phi = sp.p2_values(q);
            let dphi = sp.p2_grads(e, q);
            let mut nu = t.diffusion;
            if let Some(v) = t.viscosity {
                nu += v[e * NQ + q];
            }
            let mut rho = t.mass;
            if let Some(m) = t.weighted_mass {
                rho += m[e * NQ + q];
            }
            let zq = zl.map(|l| sp.eval_local(e, q, &l));
            let yq = yl.map(|l| sp.eval_local(e, q, &l));
            let wq_eval = wl.map(|l| sp.eval_local(e, q, &l));

            // Component-diagonal part: mass, diffusion and convection.
            let mut blk = [[0.0; 6]; 6];
            for i in 0..6 {
                for j in 0..6 {
                    let mut v = rho * phi[i] * phi[j] + nu * (dphi[i][0] * dphi[j][0] + dphi[i][1] * dphi[j][1]);
                    if let Some(z) = &zq {
                        v += phi[i] * (z.value[0] * dphi[j][0] + z.value[1] * dphi[j][1]);
                    }
                    blk[i][j] = wq * v;
                }
            }
            for c in 0..2 {
                for i in 0..6 {
                    for j in 0..6 {
                        k[c * 6 + i][c * 6 + j] += blk[i][j];
                    }
                }
            }
            if let Some(y) = &yq {
                for cv in 0..2 {
                    for cu in 0..2 {
                        let g = wq * y.grad[cv][cu];
                        for i in 0..6 {
                            for j in 0..6 {
                                k[cv * 6 + i][cu * 6 + j] += g * phi[i] * phi[j];
                            }
                        }
                    }
                }
            }
            if let Some(w) = &wq_eval {
                let coef = wq * self.scales[e] / w.grad_norm().max(self.params.eps_reg);
                if w.grad_norm() > 0.0 {
                    let mut tt = [[0.0; 6]; 2];
                    for c in 0..2 {
                        for i in 0..6 {
                            tt[c][i] = w.grad[c][0] * dphi[i][0] + w.grad[c][1] * dphi[i][1];
                        }
                    }
                    for cv in 0..2 {
                        for i in 0..6 {
                            for cu in 0..2 {
                                for j in 0..6 {
                                    k[cv * 6 + i][cu * 6 + j] += coef * tt[cv][i] * tt[cu][j];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Convection matrix `C(z)` with `(C(z) u) . v = int (z . grad u) . v`.
    pub fn convection(&self, z: &[f64]) -> CsrMatrix {
        self.assemble_velocity(&VelocityTerms {
            convecting: Some(z),
            ..Default::default()
        })
    }

    /// Matrix of `(u . grad y) . v`.
    pub fn reaction(&self, y: &[f64]) -> CsrMatrix {
        self.assemble_velocity(&VelocityTerms {
            reaction: Some(y),
            ..Default::default()
        })
    }

    /// Eddy viscosity `(C_S h_K)^2 |grad w|_F` at quadrature point `q` of
    /// element `e`.
    pub fn eddy_viscosity(&self, w: &[f64], e: usize, q: usize) -> f64 {
        self.scales[e] * self.space.eval_velocity(e, q, w).grad_norm()
    }

    /// Gradient magnitude `|grad w|_F` at every quadrature point.
    pub fn gradient_magnitude(&self, w: &[f64]) -> Vec<f64> {
        self.space.eval_velocity_all(w).iter().map(PointVelocity::grad_norm).collect()
    }

    /// Eddy viscosity at every quadrature point.
    pub fn eddy_viscosity_field(&self, w: &[f64]) -> Vec<f64> {
        self.scale_field(&self.gradient_magnitude(w))
    }

    /// Multiplies a quadrature field by `(C_S h_K)^2`.
    pub fn scale_field(&self, g: &[f64]) -> Vec<f64> {
        g.iter().enumerate().map(|(k, v)| self.scales[k / NQ] * v).collect()
    }

    /// Smagorinsky matrix `S(z)`: `int nu_T(z) grad u : grad v`.
    pub fn smagorinsky(&self, z: &[f64]) -> CsrMatrix {
        let nu = self.eddy_viscosity_field(z);
        self.weighted_stiffness(&nu)
    }

    /// `int nu grad u : grad v` for a viscosity given per quadrature point.
    pub fn weighted_stiffness(&self, nu: &[f64]) -> CsrMatrix {
        self.assemble_velocity(&VelocityTerms {
            viscosity: Some(nu),
            ..Default::default()
        })
    }

    /// Vector `int nu grad x : grad v` over all test functions `v`.
    pub fn weighted_stiffness_apply(&self, nu: &[f64], x: &[f64]) -> Vec<f64> {
        let sp = &self.space;
        let mut out = vec![0.0; sp.dim_y()];
        for e in 0..sp.n_elements() {
            let xl = sp.gather_velocity(e, x);
            let mut r = [0.0; NV];
            for q in 0..NQ {
                let d = sp.eval_local(e, q, &xl);
                let dphi = sp.p2_grads(e, q);
                let c = sp.quad_weight(e, q) * nu[e * NQ + q];
                for comp in 0..2 {
                    for i in 0..6 {
                        r[comp * 6 + i] += c * (d.grad[comp][0] * dphi[i][0] + d.grad[comp][1] * dphi[i][1]);
                    }
                }
            }
            for (i, dof) in sp.velocity_dofs(e).into_iter().enumerate() {
                out[dof] += r[i];
            }
        }
        out
    }

    /// Gram matrix of the energy product weighted by `1/mu_bar + nu_star`.
    pub fn t_gram(&self, mu_bar: f64, nu_star: &[f64]) -> Result<CsrMatrix> {
        if !(mu_bar > 0.0) || !mu_bar.is_finite() {
            return Err(Error::InvalidArgument(format!("reference Reynolds number must be positive, got {mu_bar}")));
        }
        if nu_star.len() != self.space.n_quad() {
            return Err(Error::dims("frozen eddy viscosity", self.space.n_quad(), nu_star.len()));
        }
        if let Some(v) = nu_star.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("frozen eddy viscosity must be nonnegative, found {v}")));
        }
        Ok(self.assemble_velocity(&VelocityTerms {
            diffusion: 1.0 / mu_bar,
            viscosity: Some(nu_star),
            ..Default::default()
        }))
    }

    /// Load vector `<f, v> - a(u_D, v) - c(u_D, u_D, v)`, zero on Dirichlet
    /// rows.
    pub fn rhs(&self, mu: f64) -> Vec<f64> {
        let sp = &self.space;
        let mut out = vec![0.0; sp.dim_y()];
        let f = self.params.force;
        for e in 0..sp.n_elements() {
            let ll = sp.gather_velocity(e, &self.lift);
            let mut r = [0.0; NV];
            for q in 0..NQ {
                let wq = sp.quad_weight(e, q);
                let phi = sp.p2_values(q);
                let dphi = sp.p2_grads(e, q);
                let d = sp.eval_local(e, q, &ll);
                for c in 0..2 {
                    let conv = d.value[0] * d.grad[c][0] + d.value[1] * d.grad[c][1];
                    for i in 0..6 {
                        let diff = d.grad[c][0] * dphi[i][0] + d.grad[c][1] * dphi[i][1];
                        r[c * 6 + i] += wq * ((f[c] - conv) * phi[i] - diff / mu);
                    }
                }
            }
            for (i, dof) in sp.velocity_dofs(e).into_iter().enumerate() {
                out[dof] += r[i];
            }
        }
        sp.apply_homogeneous_dirichlet(&mut out);
        out
    }

    /// Steady residual `A(U, .) - F(.)` as (velocity, pressure) vectors.
    /// Velocity rows on the Dirichlet boundary are zero.
    pub fn residual(&self, u: &[f64], p: &[f64], mu: f64) -> (Vec<f64>, Vec<f64>) {
        self.residual_with_viscosity(u, p, mu, None)
    }

    /// Residual with the eddy viscosity replaced by a given quadrature
    /// field when `eddy` is present.
    pub fn residual_with_viscosity(&self, u: &[f64], p: &[f64], mu: f64, eddy: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
        let sp = &self.space;
        let w = self.with_lift(u);
        let f = self.params.force;
        let locals: Vec<[f64; NV]> = (0..sp.n_elements())
            .into_par_iter()
            .map(|e| {
                let wl = sp.gather_velocity(e, &w);
                let mut r = [0.0; NV];
                for q in 0..NQ {
                    let wq = sp.quad_weight(e, q);
                    let phi = sp.p2_values(q);
                    let dphi = sp.p2_grads(e, q);
                    let d = sp.eval_local(e, q, &wl);
                    let nu_t = match eddy {
                        Some(v) => v[e * NQ + q],
                        None => self.scales[e] * d.grad_norm(),
                    };
                    let nu = 1.0 / mu + nu_t;
                    let pq = sp.eval_pressure(e, q, p);
                    for c in 0..2 {
                        let conv = d.value[0] * d.grad[c][0] + d.value[1] * d.grad[c][1];
                        for i in 0..6 {
                            let diff = d.grad[c][0] * dphi[i][0] + d.grad[c][1] * dphi[i][1];
                            r[c * 6 + i] += wq * (nu * diff + (conv - f[c]) * phi[i] - pq * dphi[i][c]);
                        }
                    }
                }
                r
            })
            .collect();
        let mut rv = vec![0.0; sp.dim_y()];
        for (e, r) in locals.iter().enumerate() {
            for (i, dof) in sp.velocity_dofs(e).into_iter().enumerate() {
                rv[dof] += r[i];
            }
        }
        sp.apply_homogeneous_dirichlet(&mut rv);
        let rp: Vec<f64> = self.b.mul_vec(u).iter().map(|v| -v).collect();
        (rv, rp)
    }

    /// Velocity-velocity block of the Jacobian of the residual at `u`
    /// (all dofs; restrict to free rows and columns before solving).
    /// The velocity-pressure block is `B^T` and the pressure-velocity
    /// block is `-B`.
    pub fn jacobian_velocity(&self, u: &[f64], mu: f64) -> CsrMatrix {
        let w = self.with_lift(u);
        let nu = self.eddy_viscosity_field(&w);
        self.assemble_velocity(&VelocityTerms {
            diffusion: 1.0 / mu,
            viscosity: Some(&nu),
            convecting: Some(&w),
            reaction: Some(&w),
            eddy_derivative: Some(&w),
            ..Default::default()
        })
    }

    /// Applies the Jacobian (given its velocity block) to `(z_u, z_p)`.
    pub fn apply_jacobian(&self, jvv: &CsrMatrix, zu: &[f64], zp: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut rv = jvv.mul_vec(zu);
        let bt = self.b.transpose_mul_vec(zp);
        rv.iter_mut().zip(&bt).for_each(|(a, b)| *a += b);
        self.space.apply_homogeneous_dirichlet(&mut rv);
        let rp = self.b.mul_vec(zu).iter().map(|v| -v).collect();
        (rv, rp)
    }
}

fn divergence_and_pressure_mass(space: &FeSpace, e: usize) -> ([[f64; NV]; NP], [[f64; NP]; NP]) {
    let mut b = [[0.0; NV]; NP];
    let mut m = [[0.0; NP]; NP];
    for q in 0..NQ {
        let wq = space.quad_weight(e, q);
        let psi = space.p1_values(q);
        let dphi = space.p2_grads(e, q);
        for k in 0..NP {
            for c in 0..2 {
                for i in 0..6 {
                    b[k][c * 6 + i] -= wq * psi[k] * dphi[i][c];
                }
            }
            for l in 0..NP {
                m[k][l] += wq * psi[k] * psi[l];
            }
        }
    }
    (b, m)
}

/// `sqrt(u^T T u + p^T M_p p)`.
pub fn x_norm(u: &[f64], p: &[f64], t_gram: &CsrMatrix, mass_p: &CsrMatrix) -> f64 {
    (t_gram.bilinear(u, u) + mass_p.bilinear(p, p)).max(0.0).sqrt()
}
