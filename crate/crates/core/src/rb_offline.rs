//! Reduced space construction: supremizers, POD seeding, orthonormalization
//! and the greedy selection driven by the error bound.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::Assembler;
use crate::certification::{error_bound, ErrorBound, XProduct};
use crate::eim::EimBasis;
use crate::error::{Error, Result};
use crate::rb_online::{combine, ReducedOperators, ReducedSolution};
use crate::truth::{Snapshot, SolverConfig};

pub const RB_FORMAT_VERSION: u32 = 1;

/// Relative norm below which a vector is dropped by orthonormalization.
pub const DROP_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    /// Number of pressure basis functions when the sweep ran.
    pub n: usize,
    pub mu: f64,
    pub indicator: f64,
    pub certified: bool,
}

/// Hierarchical reduced spaces: velocity basis orthonormal in the T
/// product, pressure basis orthonormal in L2.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RbSpace {
    pub version: u32,
    pub velocity: Vec<Vec<f64>>,
    pub pressure: Vec<Vec<f64>>,
    /// Parameters whose snapshots were added by the greedy loop.
    pub mus: Vec<f64>,
    /// Number of POD modes in the seed.
    pub seed_modes: usize,
    pub history: Vec<GreedyStep>,
    pub converged: bool,
}

impl RbSpace {
    pub fn new() -> Self {
        RbSpace {
            version: RB_FORMAT_VERSION,
            ..Default::default()
        }
    }

    pub fn n(&self) -> usize {
        self.pressure.len()
    }

    /// Adds a velocity-pressure pair and the supremizer of the pressure.
    pub fn enrich(&mut self, x: &XProduct, asm: &Assembler, u: &[f64], p: &[f64]) -> Result<()> {
        let s = supremizer(x, asm, p)?;
        let t = |a: &[f64], b: &[f64]| x.t_inner(a, b);
        let mp = asm.pressure_mass();
        let l2 = |a: &[f64], b: &[f64]| mp.bilinear(a, b);
        orthonormalize_into(&mut self.velocity, vec![u.to_vec(), s], t);
        orthonormalize_into(&mut self.pressure, vec![p.to_vec()], l2);
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let rb: RbSpace = serde_json::from_str(&crate::read_artifact(path)?)?;
        if rb.version != RB_FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                expected: RB_FORMAT_VERSION,
                found: rb.version,
            });
        }
        Ok(rb)
    }
}

/// Velocity `s` with `(s, v)_T = b(v, p)` for all constrained `v`.
pub fn supremizer(x: &XProduct, asm: &Assembler, p: &[f64]) -> Result<Vec<f64>> {
    x.t_solve(&asm.divergence().transpose_mul_vec(p))
}

/// Modified Gram-Schmidt (two passes) of `candidates` against `basis`,
/// appending the survivors. Returns the indices of dropped candidates.
pub fn orthonormalize_into<I>(basis: &mut Vec<Vec<f64>>, candidates: Vec<Vec<f64>>, inner: I) -> Vec<usize>
where
    I: Fn(&[f64], &[f64]) -> f64,
{
    let mut dropped = Vec::new();
    for (k, mut v) in candidates.into_iter().enumerate() {
        let n0 = inner(&v, &v).max(0.0).sqrt();
        for _ in 0..2 {
            for b in basis.iter() {
                let c = inner(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let n1 = inner(&v, &v).max(0.0).sqrt();
        if !(n1 > DROP_TOLERANCE * n0) {
            log::info!("orthonormalization dropped a vector (relative norm {:.2e})", if n0 > 0.0 { n1 / n0 } else { 0.0 });
            dropped.push(k);
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n1);
        basis.push(v);
    }
    dropped
}

#[derive(Clone, Debug)]
pub struct Pod {
    pub modes: Vec<Vec<f64>>,
    /// Eigenvalues of the correlation matrix, descending.
    pub eigenvalues: Vec<f64>,
    pub rank: usize,
}

/// Method of snapshots with correlation `C_ij = (s_i, s_j)`. Eigenvalues
/// below `1e-12` times the largest count as zero.
pub fn pod<I>(snapshots: &[&[f64]], inner: I, n_modes: usize) -> Result<Pod>
where
    I: Fn(&[f64], &[f64]) -> f64 + Sync,
{
    let n = snapshots.len();
    if n == 0 {
        return Err(Error::InvalidArgument("POD needs at least one snapshot".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if j < i { 0.0 } else { inner(snapshots[i], snapshots[j]) }).collect())
        .collect();
    let c = DMatrix::from_fn(n, n, |i, j| if j >= i { rows[i][j] } else { rows[j][i] });
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let top = eigenvalues[0];
    let rank = eigenvalues.iter().take_while(|&&l| top > 0.0 && l > 1e-12 * top).count();
    if n_modes > rank {
        return Err(Error::RankDeficiency {
            requested: n_modes,
            rank,
        });
    }
    let fields: Vec<Vec<f64>> = snapshots.iter().map(|s| s.to_vec()).collect();
    let modes = order[..n_modes]
        .iter()
        .map(|&k| {
            let v: Vec<f64> = eig.eigenvectors.column(k).iter().map(|x| x / eig.eigenvalues[k].sqrt()).collect();
            combine(&fields, &v)
        })
        .collect();
    Ok(Pod {
        modes,
        eigenvalues,
        rank,
    })
}

/// Seed space from `n_modes` POD modes of the velocity (T correlation) and
/// pressure (L2 correlation) snapshots, with the supremizers of the
/// pressure modes.
pub fn pod_seed(x: &XProduct, asm: &Assembler, snapshots: &[Snapshot], n_modes: usize) -> Result<RbSpace> {
    let us: Vec<&[f64]> = snapshots.iter().map(|s| s.u.as_slice()).collect();
    let ps: Vec<&[f64]> = snapshots.iter().map(|s| s.p.as_slice()).collect();
    let mp = asm.pressure_mass();
    let vel = pod(&us, |a, b| x.t_inner(a, b), n_modes)?;
    let pre = pod(&ps, |a, b| mp.bilinear(a, b), n_modes)?;
    let mut space = RbSpace::new();
    let sups = pre.modes.iter().map(|p| supremizer(x, asm, p)).collect::<Result<Vec<_>>>()?;
    let mut cands = vel.modes;
    cands.extend(sups);
    orthonormalize_into(&mut space.velocity, cands, |a, b| x.t_inner(a, b));
    orthonormalize_into(&mut space.pressure, pre.modes, |a, b| mp.bilinear(a, b));
    space.seed_modes = n_modes;
    Ok(space)
}

/// Everything the error bound needs at one parameter.
pub struct Estimator<'a> {
    pub asm: &'a Assembler,
    pub x: &'a XProduct,
    pub beta: &'a (dyn Fn(f64) -> f64 + Sync),
    pub rho: f64,
}

impl Estimator<'_> {
    /// Dual norm of the full-order residual at a reconstructed state.
    pub fn residual_norm(&self, u: &[f64], p: &[f64], mu: f64) -> Result<f64> {
        let (rv, rp) = self.asm.residual(u, p, mu);
        self.x.dual_norm(&crate::certification::concat(&rv, &rp))
    }

    pub fn bound(&self, space: &RbSpace, sol: &ReducedSolution) -> Result<ErrorBound> {
        let u = combine(&space.velocity, &sol.u);
        let p = combine(&space.pressure, &sol.p);
        let eps = self.residual_norm(&u, &p, sol.mu)?;
        error_bound(eps, (self.beta)(sol.mu), self.rho)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreedyOptions {
    pub tol: f64,
    pub max_basis: usize,
}

/// Greedy enrichment from `space` over the training set. `truth` provides
/// the snapshot at a selected parameter; `checkpoint` receives the space
/// after every enrichment.
pub fn greedy<T, C>(
    est: &Estimator,
    eim: &EimBasis,
    online: &SolverConfig,
    train: &[f64],
    opts: &GreedyOptions,
    mut space: RbSpace,
    mut truth: T,
    mut checkpoint: C,
) -> Result<RbSpace>
where
    T: FnMut(f64) -> Result<Snapshot>,
    C: FnMut(&RbSpace) -> Result<()>,
{
    if train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if space.velocity.is_empty() {
        let mu = train.iter().cloned().fold(f64::INFINITY, f64::min);
        let s = truth(mu)?;
        space.enrich(est.x, est.asm, &s.u, &s.p)?;
        space.mus.push(mu);
        checkpoint(&space)?;
    }
    loop {
        let ops = ReducedOperators::project(est.asm, &space, eim)?;
        let indicators: Vec<(f64, bool)> = train
            .par_iter()
            .map(|&mu| match ops.solve(mu, online).and_then(|sol| est.bound(&space, &sol)) {
                Ok(b) => (b.indicator(), b.is_certified()),
                Err(e) => {
                    log::warn!("reduced solve failed at mu = {mu}: {e}");
                    (f64::INFINITY, false)
                }
            })
            .collect();
        let (k, &(worst, certified)) = indicators
            .iter()
            .enumerate()
            .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(b.0.cmp(&a.0)))
            .expect("nonempty training set");
        let mu = train[k];
        log::info!(
            "greedy N = {}: max indicator {worst:.3e} at mu = {mu} ({})",
            space.n(),
            if certified { "certified" } else { "uncertified" }
        );
        if let Some(prev) = space.history.last() {
            // Bounds and proximity indicators are not comparable with each other.
            if prev.certified && certified && worst > 2.0 * prev.indicator {
                return Err(Error::EstimatorIncrease {
                    from: prev.indicator,
                    to: worst,
                });
            }
            if worst > 1.1 * prev.indicator {
                log::warn!("greedy indicator increased from {:.3e} to {worst:.3e}", prev.indicator);
            }
        }
        space.history.push(GreedyStep {
            n: space.n(),
            mu,
            indicator: worst,
            certified,
        });
        if worst < opts.tol {
            space.converged = true;
            checkpoint(&space)?;
            return Ok(space);
        }
        if space.n() >= opts.max_basis {
            checkpoint(&space)?;
            return Ok(space);
        }
        if space.mus.contains(&mu) {
            checkpoint(&space)?;
            return Err(Error::Stagnation { mu });
        }
        let s = truth(mu)?;
        space.enrich(est.x, est.asm, &s.u, &s.p)?;
        space.mus.push(mu);
        checkpoint(&space)?;
    }
}
