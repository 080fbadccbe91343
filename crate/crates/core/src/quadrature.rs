//! Symmetric quadrature on triangles.

/// Quadrature rule on the reference triangle, points in barycentric
/// coordinates and weights normalized to sum to one (multiply by the
/// element area).
#[derive(Clone, Debug)]
pub struct TriangleRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl TriangleRule {
    /// Seven-point rule exact for polynomials of degree five.
    pub fn degree5() -> Self {
        let s15 = 15f64.sqrt();
        let a = (6.0 - s15) / 21.0;
        let b = (6.0 + s15) / 21.0;
        let wa = (155.0 - s15) / 1200.0;
        let wb = (155.0 + s15) / 1200.0;
        let third = 1.0 / 3.0;
        TriangleRule {
            points: vec![
                [third, third, third],
                [a, a, 1.0 - 2.0 * a],
                [a, 1.0 - 2.0 * a, a],
                [1.0 - 2.0 * a, a, a],
                [b, b, 1.0 - 2.0 * b],
                [b, 1.0 - 2.0 * b, b],
                [1.0 - 2.0 * b, b, b],
            ],
            weights: vec![9.0 / 40.0, wa, wa, wa, wb, wb, wb],
            degree: 5,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}
