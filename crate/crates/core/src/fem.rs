//! Taylor-Hood (P2 velocity / P1 pressure) finite-element space.
//!
//! Velocity coefficients are stored component-blocked: the x component of
//! every P2 node first, then the y component. P2 nodes are the mesh
//! vertices followed by one node per edge midpoint. Pressure coefficients
//! are the vertex values.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, Mesh};
use crate::quadrature::TriangleRule;

/// Quadrature points per element.
pub const NQ: usize = 7;
/// Local velocity dofs per element (6 P2 nodes times 2 components).
pub const NV: usize = 12;
/// Local pressure dofs per element.
pub const NP: usize = 3;

#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry {
    pub area: f64,
    pub diameter: f64,
    /// Gradients of the barycentric coordinates.
    pub grad_lambda: [[f64; 2]; 3],
    pub vertices: [[f64; 2]; 3],
}

/// Velocity value and gradient at a point; `grad[c][d] = d u_c / d x_d`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointVelocity {
    pub value: [f64; 2],
    pub grad: [[f64; 2]; 2],
}

impl PointVelocity {
    /// Frobenius norm of the gradient.
    pub fn grad_norm(&self) -> f64 {
        let g = &self.grad;
        (g[0][0] * g[0][0] + g[0][1] * g[0][1] + g[1][0] * g[1][0] + g[1][1] * g[1][1]).sqrt()
    }
}

#[derive(Clone, Debug)]
pub struct FeSpace {
    mesh: Mesh,
    rule: TriangleRule,
    p2_coords: Vec<[f64; 2]>,
    elem_p2: Vec<[usize; 6]>,
    geometry: Vec<ElementGeometry>,
    /// P2 basis values at the reference quadrature points.
    p2_values: [[f64; 6]; NQ],
    /// Physical P2 gradients, indexed `[element * NQ + q][local node]`.
    p2_grads: Vec<[[f64; 2]; 6]>,
    p1_values: [[f64; 3]; NQ],
    dirichlet_dofs: Vec<usize>,
    is_dirichlet: Vec<bool>,
    on_inflow: Vec<bool>,
    mean_zero_pressure: bool,
    pressure_mass_rows: Vec<f64>,
}

fn p2_reference(l: [f64; 3]) -> ([f64; 6], [[f64; 3]; 6]) {
    let v = [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[0] * l[1],
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
    ];
    let d = [
        [4.0 * l[0] - 1.0, 0.0, 0.0],
        [0.0, 4.0 * l[1] - 1.0, 0.0],
        [0.0, 0.0, 4.0 * l[2] - 1.0],
        [4.0 * l[1], 4.0 * l[0], 0.0],
        [0.0, 4.0 * l[2], 4.0 * l[1]],
        [4.0 * l[2], 0.0, 4.0 * l[0]],
    ];
    (v, d)
}

fn element_geometry(v: [[f64; 2]; 3], diameter: f64) -> ElementGeometry {
    let [p0, p1, p2] = v;
    let two_a = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    let grad_lambda = [
        [(p1[1] - p2[1]) / two_a, (p2[0] - p1[0]) / two_a],
        [(p2[1] - p0[1]) / two_a, (p0[0] - p2[0]) / two_a],
        [(p0[1] - p1[1]) / two_a, (p1[0] - p0[0]) / two_a],
    ];
    ElementGeometry {
        area: 0.5 * two_a,
        diameter,
        grad_lambda,
        vertices: v,
    }
}

impl FeSpace {
    pub fn new(mesh: Mesh) -> Result<Self> {
        let rule = TriangleRule::degree5();
        assert_eq!(rule.len(), NQ);
        let nv = mesh.n_nodes();

        let mut edge_id: HashMap<(usize, usize), usize> = HashMap::new();
        let mut p2_coords: Vec<[f64; 2]> = mesh.nodes().to_vec();
        let mut elem_p2 = Vec::with_capacity(mesh.n_triangles());
        for t in mesh.triangles() {
            let mut loc = [t[0], t[1], t[2], 0, 0, 0];
            for (e, (a, b)) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])].into_iter().enumerate() {
                let key = (a.min(b), a.max(b));
                let id = *edge_id.entry(key).or_insert_with(|| {
                    let (pa, pb) = (mesh.nodes()[a], mesh.nodes()[b]);
                    p2_coords.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                    p2_coords.len() - 1
                });
                loc[3 + e] = id;
            }
            elem_p2.push(loc);
        }
        let n_p2 = p2_coords.len();

        let mut geometry = Vec::with_capacity(mesh.n_triangles());
        for (k, t) in mesh.triangles().iter().enumerate() {
            let g = element_geometry(t.map(|i| mesh.nodes()[i]), mesh.diameters()[k]);
            if !(g.area > 0.0) {
                return Err(Error::InvalidMesh(format!("triangle {k} is inverted")));
            }
            geometry.push(g);
        }

        let mut p2_values = [[0.0; 6]; NQ];
        let mut p2_dlam = [[[0.0; 3]; 6]; NQ];
        let mut p1_values = [[0.0; 3]; NQ];
        for q in 0..NQ {
            let (v, d) = p2_reference(rule.points[q]);
            p2_values[q] = v;
            p2_dlam[q] = d;
            p1_values[q] = rule.points[q];
        }
        let mut p2_grads = Vec::with_capacity(mesh.n_triangles() * NQ);
        for g in &geometry {
            for dl in &p2_dlam {
                let mut gr = [[0.0; 2]; 6];
                for i in 0..6 {
                    for k in 0..3 {
                        gr[i][0] += dl[i][k] * g.grad_lambda[k][0];
                        gr[i][1] += dl[i][k] * g.grad_lambda[k][1];
                    }
                }
                p2_grads.push(gr);
            }
        }

        // Dirichlet velocity dofs: every P2 node on the closure of a
        // Dirichlet edge.
        let mut on_dirichlet = vec![false; n_p2];
        let mut on_inflow = vec![false; n_p2];
        for be in mesh.boundary_edges() {
            let [a, b] = be.nodes;
            let mid = edge_id[&(a.min(b), a.max(b))];
            for n in [a, b, mid] {
                if be.tag.is_dirichlet() {
                    on_dirichlet[n] = true;
                }
                if be.tag == BoundaryTag::Inflow {
                    on_inflow[n] = true;
                }
            }
        }
        let mut is_dirichlet = vec![false; 2 * n_p2];
        let mut dirichlet_dofs = Vec::new();
        for c in 0..2 {
            for n in 0..n_p2 {
                if on_dirichlet[n] {
                    is_dirichlet[c * n_p2 + n] = true;
                    dirichlet_dofs.push(c * n_p2 + n);
                }
            }
        }

        let mut pressure_mass_rows = vec![0.0; nv];
        for (k, t) in mesh.triangles().iter().enumerate() {
            for i in 0..3 {
                pressure_mass_rows[t[i]] += geometry[k].area / 3.0;
            }
        }

        let mean_zero_pressure = !mesh.has_neumann_boundary();
        Ok(FeSpace {
            mesh,
            rule,
            p2_coords,
            elem_p2,
            geometry,
            p2_values,
            p2_grads,
            p1_values,
            dirichlet_dofs,
            is_dirichlet,
            on_inflow,
            mean_zero_pressure,
            pressure_mass_rows,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn rule(&self) -> &TriangleRule {
        &self.rule
    }

    pub fn n_elements(&self) -> usize {
        self.elem_p2.len()
    }

    pub fn n_p2(&self) -> usize {
        self.p2_coords.len()
    }

    /// Velocity space dimension (both components, boundary dofs included).
    pub fn dim_y(&self) -> usize {
        2 * self.p2_coords.len()
    }

    /// Pressure space dimension.
    pub fn dim_m(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn n_quad(&self) -> usize {
        self.n_elements() * NQ
    }

    pub fn p2_coords(&self) -> &[[f64; 2]] {
        &self.p2_coords
    }

    pub fn geometry(&self, e: usize) -> &ElementGeometry {
        &self.geometry[e]
    }

    pub fn dirichlet_dofs(&self) -> &[usize] {
        &self.dirichlet_dofs
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.is_dirichlet[dof]
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.is_dirichlet
    }

    /// Whether a P2 node lies on the non-homogeneous Dirichlet boundary.
    pub fn node_on_inflow(&self, node: usize) -> bool {
        self.on_inflow[node]
    }

    /// Pressure is only defined up to a constant when the whole boundary
    /// carries Dirichlet data; the space then uses zero-mean pressures.
    pub fn mean_zero_pressure(&self) -> bool {
        self.mean_zero_pressure
    }

    /// Integrals of the pressure basis functions (row sums of the pressure
    /// mass matrix).
    pub fn pressure_mass_rows(&self) -> &[f64] {
        &self.pressure_mass_rows
    }

    pub fn element_p2(&self, e: usize) -> &[usize; 6] {
        &self.elem_p2[e]
    }

    pub fn element_pressure(&self, e: usize) -> &[usize; 3] {
        &self.mesh.triangles()[e]
    }

    /// Global velocity dof of local dof `i` (component `i / 6`, node `i % 6`).
    #[inline]
    pub fn velocity_dof(&self, e: usize, i: usize) -> usize {
        (i / 6) * self.n_p2() + self.elem_p2[e][i % 6]
    }

    pub fn velocity_dofs(&self, e: usize) -> [usize; NV] {
        std::array::from_fn(|i| self.velocity_dof(e, i))
    }

    #[inline]
    pub fn p2_values(&self, q: usize) -> &[f64; 6] {
        &self.p2_values[q]
    }

    #[inline]
    pub fn p2_grads(&self, e: usize, q: usize) -> &[[f64; 2]; 6] {
        &self.p2_grads[e * NQ + q]
    }

    #[inline]
    pub fn p1_values(&self, q: usize) -> &[f64; 3] {
        &self.p1_values[q]
    }

    /// Absolute quadrature weight of point `q` in element `e`.
    #[inline]
    pub fn quad_weight(&self, e: usize, q: usize) -> f64 {
        self.rule.weights[q] * self.geometry[e].area
    }

    pub fn quad_point(&self, e: usize, q: usize) -> [f64; 2] {
        let l = self.rule.points[q];
        let v = &self.geometry[e].vertices;
        [
            l[0] * v[0][0] + l[1] * v[1][0] + l[2] * v[2][0],
            l[0] * v[0][1] + l[1] * v[1][1] + l[2] * v[2][1],
        ]
    }

    /// All quadrature points, global index `e * NQ + q`.
    pub fn quad_points(&self) -> Vec<[f64; 2]> {
        (0..self.n_elements())
            .flat_map(|e| (0..NQ).map(move |q| (e, q)))
            .map(|(e, q)| self.quad_point(e, q))
            .collect()
    }

    /// Local velocity coefficients of element `e`.
    #[inline]
    pub fn gather_velocity(&self, e: usize, u: &[f64]) -> [f64; NV] {
        std::array::from_fn(|i| u[self.velocity_dof(e, i)])
    }

    /// Value and gradient of the velocity at quadrature point `q` of `e`.
    #[inline]
    pub fn eval_local(&self, e: usize, q: usize, local: &[f64; NV]) -> PointVelocity {
        let phi = &self.p2_values[q];
        let dphi = self.p2_grads(e, q);
        let mut pv = PointVelocity::default();
        for c in 0..2 {
            for i in 0..6 {
                let a = local[c * 6 + i];
                pv.value[c] += a * phi[i];
                pv.grad[c][0] += a * dphi[i][0];
                pv.grad[c][1] += a * dphi[i][1];
            }
        }
        pv
    }

    pub fn eval_velocity(&self, e: usize, q: usize, u: &[f64]) -> PointVelocity {
        self.eval_local(e, q, &self.gather_velocity(e, u))
    }

    /// Velocity at every quadrature point, global index `e * NQ + q`.
    pub fn eval_velocity_all(&self, u: &[f64]) -> Vec<PointVelocity> {
        let mut out = Vec::with_capacity(self.n_quad());
        for e in 0..self.n_elements() {
            let local = self.gather_velocity(e, u);
            for q in 0..NQ {
                out.push(self.eval_local(e, q, &local));
            }
        }
        out
    }

    pub fn eval_pressure(&self, e: usize, q: usize, p: &[f64]) -> f64 {
        let t = self.element_pressure(e);
        (0..3).map(|i| p[t[i]] * self.p1_values[q][i]).sum()
    }

    /// Nodal interpolant of a vector field.
    pub fn interpolate_velocity(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let n = self.n_p2();
        let mut u = vec![0.0; 2 * n];
        for (k, &x) in self.p2_coords.iter().enumerate() {
            let v = f(x);
            u[k] = v[0];
            u[n + k] = v[1];
        }
        u
    }

    /// Nodal interpolant of a scalar field in the pressure space.
    pub fn interpolate_pressure(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        self.mesh.nodes().iter().map(|&x| f(x)).collect()
    }

    /// Velocity coefficient at a P2 node.
    pub fn node_velocity(&self, u: &[f64], node: usize) -> [f64; 2] {
        [u[node], u[self.n_p2() + node]]
    }

    /// Zeroes the Dirichlet entries of a velocity vector.
    pub fn apply_homogeneous_dirichlet(&self, u: &mut [f64]) {
        for &d in &self.dirichlet_dofs {
            u[d] = 0.0;
        }
    }

    /// Subtracts the mean from a pressure vector (no-op when the pressure is
    /// uniquely determined).
    pub fn normalize_pressure(&self, p: &mut [f64]) {
        if self.mean_zero_pressure {
            let mean: f64 = p.iter().zip(&self.pressure_mass_rows).map(|(a, m)| a * m).sum::<f64>()
                / self.mesh.area();
            p.iter_mut().for_each(|x| *x -= mean);
        }
    }

    /// Element-wise `(C_S h_K)^2` factors.
    pub fn smagorinsky_scales(&self, cs: f64) -> Vec<f64> {
        self.geometry.iter().map(|g| (cs * g.diameter).powi(2)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_cavity_mesh, generate_step_mesh, StepGeometry};

    fn l2_error(space: &FeSpace, u: &[f64], f: impl Fn([f64; 2]) -> [f64; 2]) -> f64 {
        let mut s = 0.0;
        for e in 0..space.n_elements() {
            for q in 0..NQ {
                let pv = space.eval_velocity(e, q, u);
                let ex = f(space.quad_point(e, q));
                s += space.quad_weight(e, q) * ((pv.value[0] - ex[0]).powi(2) + (pv.value[1] - ex[1]).powi(2));
            }
        }
        s.sqrt()
    }

    #[test]
    fn dimensions_of_cavity_spaces() {
        let s = FeSpace::new(generate_cavity_mesh(1).unwrap()).unwrap();
        assert_eq!(s.dim_m(), 4);
        assert_eq!(s.n_p2(), 9);
        assert!(s.mean_zero_pressure());
        let s = FeSpace::new(generate_cavity_mesh(50).unwrap()).unwrap();
        assert_eq!(s.dim_m(), 2601);
        assert_eq!(s.n_p2(), 101 * 101);
    }

    #[test]
    fn constant_field_is_reproduced_at_quadrature_points() {
        for mesh in [
            generate_cavity_mesh(3).unwrap(),
            generate_step_mesh(1, &StepGeometry::default()).unwrap(),
        ] {
            let s = FeSpace::new(mesh).unwrap();
            let u = s.interpolate_velocity(|_| [1.0, 1.0]);
            for pv in s.eval_velocity_all(&u) {
                assert!((pv.value[0] - 1.0).abs() < 1e-14 && (pv.value[1] - 1.0).abs() < 1e-14);
                assert!(pv.grad_norm() < 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_examples() {
        let s = FeSpace::new(generate_cavity_mesh(4).unwrap()).unwrap();
        assert!(s.interpolate_velocity(|_| [0.0, 0.0]).iter().all(|&x| x == 0.0));
        let u = s.interpolate_velocity(|x| x);
        for (k, x) in s.mesh().nodes().iter().enumerate() {
            let v = s.node_velocity(&u, k);
            assert!((v[0] - x[0]).abs() < 1e-14 && (v[1] - x[1]).abs() < 1e-14);
        }
        let quad = s.interpolate_velocity(|x| [x[0] * x[0], 0.0]);
        assert!(l2_error(&s, &quad, |x| [x[0] * x[0], 0.0]) < 1e-12);
        // Not exact for cubics.
        let cubic = s.interpolate_velocity(|x| [x[0].powi(3), 0.0]);
        assert!(l2_error(&s, &cubic, |x| [x[0].powi(3), 0.0]) > 1e-6);
    }

    #[test]
    fn dirichlet_dofs_are_exactly_the_boundary_nodes_on_dirichlet_edges() {
        let mesh = generate_step_mesh(2, &StepGeometry::default()).unwrap();
        let tol = 1e-10 * mesh.extent();
        let s = FeSpace::new(mesh).unwrap();
        let g = StepGeometry::default();
        let on_dirichlet = |x: [f64; 2]| {
            let near = |a: f64, b: f64| (a - b).abs() <= tol;
            let inflow = near(x[0], 0.0) && x[1] >= g.height / 2.0 - tol;
            let bottom = near(x[1], 0.0) && x[0] >= g.inlet_length - tol;
            let step_top = near(x[1], g.height / 2.0) && x[0] <= g.inlet_length + tol;
            let step_face = near(x[0], g.inlet_length) && x[1] <= g.height / 2.0 + tol;
            let top = near(x[1], g.height);
            inflow || bottom || step_top || step_face || top
        };
        let n = s.n_p2();
        for (k, &x) in s.p2_coords().iter().enumerate() {
            assert_eq!(s.is_dirichlet(k), on_dirichlet(x), "node {k} at {x:?}");
            assert_eq!(s.is_dirichlet(n + k), on_dirichlet(x));
        }
        // Rebuilding the space classifies identically.
        let again = FeSpace::new(s.mesh().clone()).unwrap();
        assert_eq!(again.dirichlet_dofs(), s.dirichlet_dofs());
        assert!(!s.mean_zero_pressure());
    }

    #[test]
    fn quadrature_integrates_area() {
        let s = FeSpace::new(generate_step_mesh(1, &StepGeometry::default()).unwrap()).unwrap();
        let a: f64 = (0..s.n_elements())
            .flat_map(|e| (0..NQ).map(move |q| (e, q)))
            .map(|(e, q)| s.quad_weight(e, q))
            .sum();
        assert!((a - 36.0).abs() < 1e-12);
        let m: f64 = s.pressure_mass_rows().iter().sum();
        assert!((m - 36.0).abs() < 1e-12);
    }
}
