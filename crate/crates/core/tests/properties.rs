//! Invariants over randomized inputs.

use std::path::Path;

use proptest::prelude::*;

use smagrb::certification::error_bound;
use smagrb::config::uniform_grid;
use smagrb::eim::{EimBasis, EimOptions};
use smagrb::mesh::{generate_cavity_mesh, generate_step_mesh, Mesh, StepGeometry};
use smagrb::rb_offline::orthonormalize_into;
use smagrb::rbf::Surrogate;

fn same_mesh(a: &Mesh, b: &Mesh) -> bool {
    a.nodes() == b.nodes() && a.triangles() == b.triangles() && a.boundary_edges() == b.boundary_edges()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bound_is_the_small_root(eps in 1e-12f64..1.0, beta in 1e-3f64..10.0, rho in 1e-2f64..100.0) {
        let b = error_bound(eps, beta, rho).unwrap();
        prop_assert!((b.tau - 4.0 * eps * rho / (beta * beta)).abs() <= 1e-14 * b.tau);
        match b.delta {
            Some(d) => {
                prop_assert!(b.tau <= 1.0);
                // Between the linearized bound and twice it.
                prop_assert!(d >= eps / beta * (1.0 - 1e-14) && d <= 2.0 * eps / beta * (1.0 + 1e-14));
                let q = rho * d * d - beta * d + eps;
                prop_assert!(q.abs() <= 1e-12 * eps.max(beta * d));
                prop_assert!(d <= beta / (2.0 * rho) * (1.0 + 1e-12));
                prop_assert_eq!(b.indicator(), d);
            }
            None => {
                prop_assert!(b.tau > 1.0);
                prop_assert_eq!(b.indicator(), b.tau);
            }
        }
    }

    #[test]
    fn bound_grows_with_the_residual(eps in 1e-10f64..1e-3, f in 1.0f64..2.0, beta in 0.1f64..1.0, rho in 1.0f64..10.0) {
        let a = error_bound(eps, beta, rho).unwrap();
        let b = error_bound(eps * f, beta, rho).unwrap();
        if let (Some(x), Some(y)) = (a.delta, b.delta) {
            prop_assert!(y >= x);
        }
    }

    #[test]
    fn surrogate_interpolates_its_samples(
        lo in 10.0f64..1000.0,
        width in 1.5f64..20.0,
        n in 2usize..25,
        coef in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let xs = uniform_grid([lo, lo * width], n);
        let samples: Vec<(f64, f64)> = xs
            .iter()
            .map(|&x| {
                let t = (x / lo).ln();
                (x, 1.0 + coef[0] * t + coef[1] * t.sin() + 0.1 * coef[2] * t * t)
            })
            .collect();
        let s = Surrogate::fit(&samples).unwrap();
        for &(x, y) in &samples {
            prop_assert!((s.eval(x) - y).abs() <= 1e-8 * (1.0 + y.abs()), "x = {x}: {} vs {y}", s.eval(x));
        }
    }

    #[test]
    fn uniform_grid_spans_the_range(lo in -100.0f64..100.0, len in 1e-3f64..1e4, n in 2usize..200) {
        let g = uniform_grid([lo, lo + len], n);
        prop_assert_eq!(g.len(), n);
        prop_assert_eq!(g[0], lo);
        prop_assert!((g[n - 1] - (lo + len)).abs() <= 1e-12 * (lo.abs() + len));
        prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cavity_mesh_text_round_trip(n in 1usize..12) {
        let m = generate_cavity_mesh(n).unwrap();
        let back = Mesh::from_text(&m.to_text(), Path::new("mesh.txt")).unwrap();
        prop_assert!(same_mesh(&m, &back));
        prop_assert_eq!(back.n_triangles(), 2 * n * n);
    }

    #[test]
    fn step_mesh_text_round_trip(res in 1usize..5, length in 6.0f64..30.0, inlet in 1.0f64..5.0) {
        let geom = StepGeometry { length, height: 2.0, inlet_length: inlet };
        let m = generate_step_mesh(res, &geom).unwrap();
        let back = Mesh::from_text(&m.to_text(), Path::new("mesh.txt")).unwrap();
        prop_assert!(same_mesh(&m, &back));
    }

    #[test]
    fn eim_interpolation_is_a_projection(seed in 0u64..10_000, fields in 2usize..7, points in 20usize..60) {
        // Smooth random fields on a 1D point cloud.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let snaps: Vec<Vec<f64>> = (0..fields)
            .map(|_| {
                let (a, b, c) = (next(), 1.0 + 4.0 * next(), next());
                (0..points).map(|i| {
                    let x = i as f64 / points as f64;
                    1.0 + a * (b * x).sin() + c * x * x
                }).collect()
            })
            .collect();
        let eim = EimBasis::train(&snaps, &EimOptions { tol: 1e-12, max_terms: fields }).unwrap();
        let probe: Vec<f64> = (0..points).map(|_| next()).collect();
        let once = eim.interpolate(&probe);
        let twice = eim.interpolate(&once);
        let scale = once.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-9 * scale);
        }
        for &t in &eim.magic_points {
            prop_assert!((once[t] - probe[t]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn orthonormalized_vectors_are_orthonormal(seed in 0u64..10_000, dim in 3usize..12, count in 1usize..6) {
        let mut state = seed ^ 0x9e3779b97f4a7c15;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        // Diagonal positive weights define the inner product.
        let w: Vec<f64> = (0..dim).map(|_| 1.0 + next().abs() * 10.0).collect();
        let inner = |a: &[f64], b: &[f64]| a.iter().zip(b).zip(&w).map(|((x, y), c)| x * y * c).sum::<f64>();
        let mut cands: Vec<Vec<f64>> = (0..count.min(dim)).map(|_| (0..dim).map(|_| next()).collect()).collect();
        // A combination of the first two candidates must be dropped.
        let combo: Vec<f64> = cands[0].iter().zip(cands.get(1).unwrap_or(&cands[0])).map(|(a, b)| 2.0 * a - b).collect();
        cands.push(combo);
        let total = cands.len();
        let mut basis = Vec::new();
        let dropped = orthonormalize_into(&mut basis, cands, inner);
        prop_assert_eq!(dropped, vec![total - 1]);
        prop_assert_eq!(basis.len(), total - 1);
        for i in 0..basis.len() {
            for j in 0..basis.len() {
                let e = if i == j { 1.0 } else { 0.0 };
                prop_assert!((inner(&basis[i], &basis[j]) - e).abs() <= 1e-10);
            }
        }
    }
}
