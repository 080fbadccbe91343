//! Empirical interpolation of scalar fields given by their values at the
//! quadrature points.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EIM_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EimOptions {
    /// Target for the largest relative sup-norm training error.
    pub tol: f64,
    pub max_terms: usize,
}

impl Default for EimOptions {
    fn default() -> Self {
        EimOptions {
            tol: 5e-4,
            max_terms: 50,
        }
    }
}

/// Interpolation basis `q_1..q_M` with magic points `t_1..t_M` and the unit
/// lower triangular matrix `B_ij = q_j(t_i)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EimBasis {
    pub version: u32,
    pub n_points: usize,
    pub basis: Vec<Vec<f64>>,
    pub magic_points: Vec<usize>,
    pub matrix: Vec<Vec<f64>>,
    /// Largest relative training error with `k` terms, for `k = 0..`.
    pub history: Vec<f64>,
    /// Training snapshot chosen at each step.
    pub selected: Vec<usize>,
}

fn sup_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn argmax_abs(v: &[f64]) -> (usize, f64) {
    let mut best = (0, 0.0);
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best.1 {
            best = (i, x.abs());
        }
    }
    best
}

impl EimBasis {
    /// Greedy training on `snapshots`, each a field over the same points.
    pub fn train(snapshots: &[Vec<f64>], opts: &EimOptions) -> Result<Self> {
        if snapshots.is_empty() {
            return Err(Error::InvalidArgument("EIM needs at least one snapshot".into()));
        }
        if !(opts.tol > 0.0) || opts.max_terms == 0 {
            return Err(Error::InvalidArgument(format!(
                "EIM needs tol > 0 and max_terms >= 1 (got {}, {})",
                opts.tol, opts.max_terms
            )));
        }
        let n_points = snapshots[0].len();
        if let Some(s) = snapshots.iter().find(|s| s.len() != n_points) {
            return Err(Error::dims("EIM snapshot", n_points, s.len()));
        }
        let norms: Vec<f64> = snapshots.iter().map(|s| sup_norm(s)).collect();
        let mut eim = EimBasis {
            version: EIM_FORMAT_VERSION,
            n_points,
            basis: Vec::new(),
            magic_points: Vec::new(),
            matrix: Vec::new(),
            history: Vec::new(),
            selected: Vec::new(),
        };
        loop {
            let errors: Vec<f64> = snapshots
                .par_iter()
                .zip(&norms)
                .map(|(s, &n)| if n > 0.0 { sup_norm(&eim.residual(s)) / n } else { 0.0 })
                .collect();
            let (worst, err) = errors
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (i, &e)| if e > b.1 { (i, e) } else { b });
            eim.history.push(err);
            log::debug!("EIM M = {}: max relative error {err:.3e}", eim.len());
            if err <= opts.tol || eim.len() >= opts.max_terms {
                return Ok(eim);
            }
            let mut r = eim.residual(&snapshots[worst]);
            // Zero in exact arithmetic; rounding there would be amplified by
            // the normalization below and break the triangular structure.
            for &t in &eim.magic_points {
                r[t] = 0.0;
            }
            let (t, rmax) = argmax_abs(&r);
            if rmax < 1e-14 {
                return Err(Error::DegenerateResidual {
                    m: eim.len(),
                    residual: rmax,
                });
            }
            let q: Vec<f64> = r.iter().map(|v| v / r[t]).collect();
            eim.push(q, t);
            eim.selected.push(worst);
        }
    }

    fn push(&mut self, q: Vec<f64>, t: usize) {
        self.magic_points.push(t);
        let m = self.magic_points.len();
        // New row i = m-1 over all columns, and new column j = m-1 is zero
        // above the diagonal by construction.
        let row: Vec<f64> = self.basis.iter().chain(std::iter::once(&q)).map(|b| b[t]).collect();
        self.basis.push(q);
        self.matrix.push(row);
        debug_assert_eq!(self.matrix[m - 1].len(), m);
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Dense `B` (row-major, `M x M`).
    pub fn interpolation_matrix(&self) -> Vec<Vec<f64>> {
        let m = self.len();
        (0..m)
            .map(|i| (0..m).map(|j| if j <= i { self.matrix[i][j] } else { 0.0 }).collect())
            .collect()
    }

    /// Coefficients `sigma` with `B sigma = g(t)` by forward substitution.
    pub fn coefficients(&self, at_magic: &[f64]) -> Result<Vec<f64>> {
        if at_magic.len() != self.len() {
            return Err(Error::dims("EIM magic-point values", self.len(), at_magic.len()));
        }
        let mut s = vec![0.0; self.len()];
        for i in 0..self.len() {
            let mut v = at_magic[i];
            for (j, sj) in s.iter().enumerate().take(i) {
                v -= self.matrix[i][j] * sj;
            }
            s[i] = v / self.matrix[i][i];
        }
        Ok(s)
    }

    /// Field `sum_k sigma_k q_k`.
    pub fn expand(&self, sigma: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_points];
        for (q, s) in self.basis.iter().zip(sigma) {
            out.iter_mut().zip(q).for_each(|(o, v)| *o += s * v);
        }
        out
    }

    /// Interpolant of a full field.
    pub fn interpolate(&self, g: &[f64]) -> Vec<f64> {
        let at: Vec<f64> = self.magic_points.iter().map(|&t| g[t]).collect();
        self.expand(&self.coefficients(&at).expect("length matches"))
    }

    fn residual(&self, g: &[f64]) -> Vec<f64> {
        if self.is_empty() {
            return g.to_vec();
        }
        let i = self.interpolate(g);
        g.iter().zip(&i).map(|(a, b)| a - b).collect()
    }

    /// `||I_M g||_inf / ||g||_inf`, the growth factor for one field.
    pub fn growth(&self, g: &[f64]) -> f64 {
        let n = sup_norm(g);
        if n == 0.0 {
            0.0
        } else {
            sup_norm(&self.interpolate(g)) / n
        }
    }

    /// Relative sup-norm interpolation error of a field.
    pub fn relative_error(&self, g: &[f64]) -> f64 {
        let n = sup_norm(g);
        if n == 0.0 {
            0.0
        } else {
            sup_norm(&self.residual(g)) / n
        }
    }

    /// Keeps the first `m` terms.
    pub fn truncated(&self, m: usize) -> Self {
        let m = m.min(self.len());
        EimBasis {
            version: self.version,
            n_points: self.n_points,
            basis: self.basis[..m].to_vec(),
            magic_points: self.magic_points[..m].to_vec(),
            matrix: self.matrix[..m].to_vec(),
            history: self.history[..=m.min(self.history.len() - 1)].to_vec(),
            selected: self.selected[..m.min(self.selected.len())].to_vec(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::read_artifact(path)?;
        let eim: EimBasis = serde_json::from_str(&text)?;
        if eim.version != EIM_FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                expected: EIM_FORMAT_VERSION,
                found: eim.version,
            });
        }
        let m = eim.basis.len();
        if eim.magic_points.len() != m || eim.matrix.len() != m || eim.matrix.iter().enumerate().any(|(i, r)| r.len() != i + 1) {
            return Err(Error::dims("EIM archive", format!("{m} terms"), "inconsistent blocks"));
        }
        if let Some(q) = eim.basis.iter().find(|q| q.len() != eim.n_points) {
            return Err(Error::dims("EIM basis field", eim.n_points, q.len()));
        }
        Ok(eim)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn family(n_mu: usize, n_pts: usize) -> Vec<Vec<f64>> {
        (0..n_mu)
            .map(|k| {
                let mu = 1.0 + k as f64 / n_mu as f64;
                (0..n_pts)
                    .map(|i| {
                        let x = i as f64 / n_pts as f64;
                        1.0 / (1.0 + mu * (x - 0.3 * mu).powi(2)) + 0.1 * (mu * x).sin()
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn single_snapshot_is_reproduced() {
        let g = family(1, 40).pop().unwrap();
        let eim = EimBasis::train(&[g.clone()], &EimOptions { tol: 1e-12, max_terms: 10 }).unwrap();
        assert_eq!(eim.len(), 1);
        let i = eim.interpolate(&g);
        assert!(g.iter().zip(&i).all(|(a, b)| (a - b).abs() <= 1e-15 * a.abs().max(1.0)));
    }

    #[test]
    fn rank_one_family_needs_one_term() {
        let g = family(1, 40).pop().unwrap();
        let snaps: Vec<Vec<f64>> = (1..=10).map(|k| g.iter().map(|v| v * k as f64).collect()).collect();
        let eim = EimBasis::train(&snaps, &EimOptions { tol: 1e-12, max_terms: 10 }).unwrap();
        assert_eq!(eim.len(), 1);
        assert!(*eim.history.last().unwrap() < 1e-14);
    }

    #[test]
    fn basis_structure_and_history() {
        let snaps = family(30, 200);
        let eim = EimBasis::train(&snaps, &EimOptions { tol: 1e-8, max_terms: 25 }).unwrap();
        let b = eim.interpolation_matrix();
        for i in 0..eim.len() {
            assert_eq!(b[i][i], 1.0);
            for j in i + 1..eim.len() {
                assert_eq!(b[i][j], 0.0);
            }
            let q = &eim.basis[i];
            assert!((sup_norm(q) - 1.0).abs() < 1e-15);
            assert_eq!(q[eim.magic_points[i]], 1.0);
            for (k, q) in eim.basis.iter().enumerate() {
                let r = eim.interpolate(q);
                assert!(sup_norm(&r.iter().zip(q).map(|(a, b)| a - b).collect::<Vec<_>>()) < 1e-12, "{k}");
            }
        }
        for w in eim.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-14, "{:?}", eim.history);
        }
    }

    #[test]
    fn coefficients_match_dense_triangular_solve() {
        let eim = EimBasis::train(&family(20, 120), &EimOptions { tol: 1e-10, max_terms: 12 }).unwrap();
        let m = eim.len();
        let b = eim.interpolation_matrix();
        for k in 0..m {
            let col: Vec<f64> = (0..m).map(|i| b[i][k]).collect();
            let s = eim.coefficients(&col).unwrap();
            for (j, v) in s.iter().enumerate() {
                assert!((v - if j == k { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        let s = eim.coefficients(&g).unwrap();
        let dense = nalgebra::DMatrix::from_fn(m, m, |i, j| b[i][j]);
        let oracle = dense.solve_lower_triangular(&nalgebra::DVector::from_column_slice(&g)).unwrap();
        for i in 0..m {
            assert!((s[i] - oracle[i]).abs() < 1e-14 * oracle.amax().max(1.0));
            let bs: f64 = (0..m).map(|j| b[i][j] * s[j]).sum();
            assert!((bs - g[i]).abs() < 1e-14 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn archive_round_trip() {
        let eim = EimBasis::train(&family(10, 50), &EimOptions { tol: 1e-6, max_terms: 8 }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eim.json");
        eim.save(&path).unwrap();
        assert_eq!(EimBasis::load(&path).unwrap(), eim);
        assert!(matches!(
            EimBasis::load(&dir.path().join("missing.json")),
            Err(Error::MissingArtifact { .. })
        ));
    }

    proptest! {
        #[test]
        fn exact_at_magic_points(seed in 0u64..1000) {
            let eim = EimBasis::train(&family(15, 80), &EimOptions { tol: 1e-9, max_terms: 10 }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g: Vec<f64> = (0..80).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let i = eim.interpolate(&g);
            for &t in &eim.magic_points {
                prop_assert!((i[t] - g[t]).abs() <= 1e-13);
            }
        }

        #[test]
        fn span_members_are_reproduced(c in proptest::collection::vec(-3.0f64..3.0, 6)) {
            let eim = EimBasis::train(&family(15, 80), &EimOptions { tol: 1e-12, max_terms: 6 }).unwrap();
            let g = eim.expand(&c[..eim.len()]);
            prop_assert!(eim.relative_error(&g) <= 1e-12);
        }
    }
}
