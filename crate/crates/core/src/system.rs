//! Saddle-point systems on the constrained velocity space.
//!
//! Unknowns are ordered as free velocity dofs, then pressure dofs. When the
//! pressure is only defined up to a constant, the first pressure dof is
//! pinned (removed from the system): right-hand sides are first shifted
//! along the pressure mass row sums so that their pressure part sums to
//! zero, and solutions are returned with zero-mean pressure. For any
//! functional on the zero-mean subspace this yields the unique zero-mean
//! solution, without the dense row a mean-value multiplier would add.

use std::sync::Arc;

use crate::assembly::Assembler;
use crate::error::Result;
use crate::fem::FeSpace;
use crate::sparse::{CsrMatrix, FactorPattern, SparseLu};

#[derive(Clone, Debug)]
pub struct SaddleLayout {
    vel_index: Vec<usize>,
    free_vel: Vec<usize>,
    dim_y: usize,
    dim_m: usize,
    /// Pressure mass row sums when the pressure has zero mean.
    mean_weights: Option<Vec<f64>>,
}

impl SaddleLayout {
    pub fn new(space: &FeSpace) -> Self {
        let mut vel_index = vec![usize::MAX; space.dim_y()];
        let mut free_vel = Vec::new();
        for (d, slot) in vel_index.iter_mut().enumerate() {
            if !space.is_dirichlet(d) {
                *slot = free_vel.len();
                free_vel.push(d);
            }
        }
        SaddleLayout {
            vel_index,
            free_vel,
            dim_y: space.dim_y(),
            dim_m: space.dim_m(),
            mean_weights: space.mean_zero_pressure().then(|| space.pressure_mass_rows().to_vec()),
        }
    }

    pub fn n_free(&self) -> usize {
        self.free_vel.len()
    }

    pub fn free_velocity_dofs(&self) -> &[usize] {
        &self.free_vel
    }

    pub fn dim_m(&self) -> usize {
        self.dim_m
    }

    pub fn dim_y(&self) -> usize {
        self.dim_y
    }

    pub fn mean_zero(&self) -> bool {
        self.mean_weights.is_some()
    }

    /// Number of pressure unknowns in the packed system.
    fn n_pressure(&self) -> usize {
        self.dim_m - usize::from(self.mean_zero())
    }

    /// Total system size.
    pub fn dim(&self) -> usize {
        self.n_free() + self.n_pressure()
    }

    /// Packed index of a pressure dof, if it is an unknown.
    fn pressure_index(&self, q: usize) -> Option<usize> {
        if self.mean_zero() {
            (q > 0).then(|| self.n_free() + q - 1)
        } else {
            Some(self.n_free() + q)
        }
    }

    /// Restricts a full velocity vector to the free dofs.
    pub fn restrict(&self, v: &[f64]) -> Vec<f64> {
        self.free_vel.iter().map(|&d| v[d]).collect()
    }

    /// Extends free velocity values by zero on the Dirichlet dofs.
    pub fn extend(&self, vf: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.dim_y];
        for (k, &d) in self.free_vel.iter().enumerate() {
            v[d] = vf[k];
        }
        v
    }

    pub fn pack(&self, v: &[f64], p: &[f64]) -> Vec<f64> {
        let mut x = self.restrict(v);
        match &self.mean_weights {
            Some(m) => {
                let shift = p.iter().sum::<f64>() / m.iter().sum::<f64>();
                x.extend(p.iter().zip(m).skip(1).map(|(a, w)| a - shift * w));
            }
            None => x.extend_from_slice(p),
        }
        x
    }

    pub fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let nf = self.n_free();
        let mut p = Vec::with_capacity(self.dim_m);
        if let Some(m) = &self.mean_weights {
            p.push(0.0);
            p.extend_from_slice(&x[nf..]);
            let mean = p.iter().zip(m).map(|(a, w)| a * w).sum::<f64>() / m.iter().sum::<f64>();
            p.iter_mut().for_each(|a| *a -= mean);
        } else {
            p.extend_from_slice(&x[nf..]);
        }
        (self.extend(&x[..nf]), p)
    }

    /// Free index of a velocity dof, if not constrained.
    pub fn free_index(&self, dof: usize) -> Option<usize> {
        let i = self.vel_index[dof];
        (i != usize::MAX).then_some(i)
    }
}

/// Symbolic analysis of the saddle matrix `[K, B^T; s B, 0]` for velocity
/// blocks on the assembler's velocity pattern.
#[derive(Clone, Debug)]
pub struct SaddleSolver {
    layout: Arc<SaddleLayout>,
    pattern: FactorPattern,
    vv_src: Vec<usize>,
    b_src: Vec<usize>,
}

impl SaddleSolver {
    pub fn new(asm: &Assembler) -> Result<Self> {
        let layout = Arc::new(SaddleLayout::new(asm.space()));
        let mut slots = Vec::new();
        let mut vv_src = Vec::new();
        for (k, (i, j, _)) in asm.velocity_pattern().entries().enumerate() {
            if let (Some(fi), Some(fj)) = (layout.free_index(i), layout.free_index(j)) {
                slots.push((fi, fj));
                vv_src.push(k);
            }
        }
        let mut b_src = Vec::new();
        for (k, (q, j, _)) in asm.divergence().entries().enumerate() {
            if let (Some(fj), Some(pq)) = (layout.free_index(j), layout.pressure_index(q)) {
                slots.push((fj, pq));
                slots.push((pq, fj));
                b_src.push(k);
            }
        }
        let pattern = FactorPattern::new(layout.dim(), &slots)?;
        Ok(SaddleSolver {
            layout,
            pattern,
            vv_src,
            b_src,
        })
    }

    pub fn layout(&self) -> &Arc<SaddleLayout> {
        &self.layout
    }

    /// Factorizes `[K, B^T; lower_sign * B, 0]` restricted to free dofs.
    pub fn factor(&self, k: &CsrMatrix, b: &CsrMatrix, lower_sign: f64) -> Result<SaddleFactor> {
        let mut vals = Vec::with_capacity(self.pattern.n_slots());
        let kv = k.values();
        vals.extend(self.vv_src.iter().map(|&s| kv[s]));
        let bv = b.values();
        for &s in &self.b_src {
            vals.push(bv[s]);
            vals.push(lower_sign * bv[s]);
        }
        Ok(SaddleFactor {
            layout: Arc::clone(&self.layout),
            lu: self.pattern.factor(&vals)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SaddleFactor {
    layout: Arc<SaddleLayout>,
    lu: SparseLu,
}

impl SaddleFactor {
    pub fn layout(&self) -> &SaddleLayout {
        &self.layout
    }

    /// Solves with full-length velocity and pressure right-hand sides
    /// (Dirichlet rows ignored); returns the full velocity (zero on the
    /// Dirichlet boundary) and the pressure.
    pub fn solve(&self, rv: &[f64], rp: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut x = self.layout.pack(rv, rp);
        self.lu.solve_in_place(&mut x)?;
        Ok(self.layout.unpack(&x))
    }

    pub fn solve_transpose(&self, rv: &[f64], rp: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut x = self.layout.pack(rv, rp);
        self.lu.solve_transpose_in_place(&mut x)?;
        Ok(self.layout.unpack(&x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::ModelParams;
    use crate::mesh::{generate_cavity_mesh, generate_step_mesh, StepGeometry};

    #[test]
    fn stokes_solve_satisfies_both_equations() {
        for mesh in [
            generate_cavity_mesh(4).unwrap(),
            generate_step_mesh(1, &StepGeometry::default()).unwrap(),
        ] {
            let asm = Assembler::new(FeSpace::new(mesh).unwrap(), ModelParams::default()).unwrap();
            let solver = SaddleSolver::new(&asm).unwrap();
            let lay = solver.layout().clone();
            let f = asm.space().interpolate_velocity(|x| [x[1].sin(), x[0] * x[1]]);
            let rv = asm.mass().mul_vec(&f);
            let fac = solver.factor(asm.diffusion(), asm.divergence(), 1.0).unwrap();
            let (u, p) = fac.solve(&rv, &vec![0.0; asm.space().dim_m()]).unwrap();
            let mut r = asm.diffusion().mul_vec(&u);
            let bt = asm.divergence().transpose_mul_vec(&p);
            for d in lay.free_velocity_dofs() {
                r[*d] += bt[*d] - rv[*d];
                assert!(r[*d].abs() < 1e-10);
            }
            assert!(asm.divergence().mul_vec(&u).iter().all(|v| v.abs() < 1e-12));
            if lay.mean_zero() {
                let m = asm.space().pressure_mass_rows();
                let mean: f64 = m.iter().zip(&p).map(|(a, b)| a * b).sum();
                assert!(mean.abs() < 1e-12);
                // Pressure equations hold including the pinned one.
                assert!(asm.divergence().mul_vec(&u)[0].abs() < 1e-12);
            }
            for d in asm.space().dirichlet_dofs() {
                assert_eq!(u[*d], 0.0);
            }
        }
    }
}
