//! One-dimensional radial basis function interpolation with adaptive
//! sample insertion.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition number above which the kernel system is considered unusable.
const MAX_CONDITION: f64 = 1e13;

/// Kernel width in units of the mean sample spacing.
/// Kernel widths tried in turn, in mean sample spacings; wider kernels are
/// more accurate on smooth data but worse conditioned.
const WIDTHS_IN_SPACINGS: [f64; 5] = [4.5, 3.5, 2.5, 1.75, 1.25];

fn gaussian(shape: f64, r: f64) -> f64 {
    (-(shape * r).powi(2)).exp()
}

/// Interpolant of scalar samples `(x_i, y_i)`: Gaussian radial functions
/// with a linear polynomial tail, or piecewise-linear interpolation when the
/// kernel system is ill-conditioned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surrogate {
    /// Samples sorted by abscissa.
    pub samples: Vec<(f64, f64)>,
    pub model: SurrogateModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SurrogateModel {
    Gaussian {
        /// Abscissae are mapped to `(g(x) - offset) / scale` with `g = ln`
        /// when `log_abscissa` is set and the identity otherwise.
        log_abscissa: bool,
        offset: f64,
        scale: f64,
        /// Inverse kernel width on the normalized abscissa.
        shape: f64,
        weights: Vec<f64>,
        /// Constant and linear coefficients of the tail.
        tail: [f64; 2],
    },
    PiecewiseLinear,
}

impl Surrogate {
    pub fn fit(samples: &[(f64, f64)]) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "surrogate needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        let mut s = samples.to_vec();
        s.sort_by(|a, b| a.0.total_cmp(&b.0));
        if s.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidArgument("duplicate surrogate abscissae".into()));
        }
        let model = match kernel_fit(&s) {
            Some(m) => m,
            None => {
                log::warn!("ill-conditioned RBF system with {} samples, using piecewise-linear interpolation", s.len());
                SurrogateModel::PiecewiseLinear
            }
        };
        Ok(Surrogate { samples: s, model })
    }

    pub fn eval(&self, x: f64) -> f64 {
        match &self.model {
            SurrogateModel::Gaussian {
                log_abscissa,
                offset,
                scale,
                shape,
                weights,
                tail,
            } => {
                let map = |x: f64| (abscissa(x, *log_abscissa) - offset) / scale;
                let t = map(x);
                let mut v = tail[0] + tail[1] * t;
                for ((xi, _), w) in self.samples.iter().zip(weights) {
                    v += w * gaussian(*shape, t - map(*xi));
                }
                v
            }
            SurrogateModel::PiecewiseLinear => piecewise_linear(&self.samples, x),
        }
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self.model, SurrogateModel::PiecewiseLinear)
    }
}

fn abscissa(x: f64, log: bool) -> f64 {
    if log {
        x.ln()
    } else {
        x
    }
}

fn kernel_fit(s: &[(f64, f64)]) -> Option<SurrogateModel> {
    let n = s.len();
    // Positive parameters (viscosity ratios, Reynolds numbers) spanning a
    // wide range are better resolved on a logarithmic scale.
    let log_abscissa = s[0].0 > 0.0;
    let g: Vec<f64> = s.iter().map(|(x, _)| abscissa(*x, log_abscissa)).collect();
    let offset = g[0];
    let scale = g[n - 1] - g[0];
    let t: Vec<f64> = g.iter().map(|x| (x - offset) / scale).collect();
    WIDTHS_IN_SPACINGS.iter().find_map(|w| {
        let shape = (n - 1) as f64 / w;
        let (weights, tail) = solve_kernel(s, &t, shape)?;
        Some(SurrogateModel::Gaussian {
            log_abscissa,
            offset,
            scale,
            shape,
            weights,
            tail,
        })
    })
}

fn solve_kernel(s: &[(f64, f64)], t: &[f64], shape: f64) -> Option<(Vec<f64>, [f64; 2])> {
    let n = s.len();
    let mut a = DMatrix::zeros(n + 2, n + 2);
    let mut rhs = DVector::zeros(n + 2);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = gaussian(shape, t[i] - t[j]);
        }
        a[(i, n)] = 1.0;
        a[(i, n + 1)] = t[i];
        a[(n, i)] = 1.0;
        a[(n + 1, i)] = t[i];
        rhs[i] = s[i].1;
    }
    let sv = a.clone().singular_values();
    let cond = sv.max() / sv.min();
    if !(cond < MAX_CONDITION) {
        return None;
    }
    let sol = a.clone().lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let resid = (&a * &sol - &rhs).amax();
    if resid > 1e-10 * rhs.amax().max(f64::MIN_POSITIVE) {
        return None;
    }
    Some((sol.rows(0, n).iter().cloned().collect(), [sol[n], sol[n + 1]]))
}

/// Linear interpolation on sorted samples, constant extrapolation.
pub fn piecewise_linear(s: &[(f64, f64)], x: f64) -> f64 {
    if x <= s[0].0 {
        return s[0].1;
    }
    if x >= s[s.len() - 1].0 {
        return s[s.len() - 1].1;
    }
    let k = s.partition_point(|p| p.0 <= x);
    let (x0, y0) = s[k - 1];
    let (x1, y1) = s[k];
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveFit {
    pub surrogate: Surrogate,
    /// Relative disagreement between surrogate and verification value at
    /// each inserted point, in insertion order.
    pub history: Vec<(f64, f64)>,
    pub converged: bool,
}

/// Greedy refinement: among midpoints of adjacent samples, verify the one
/// where the surrogate departs most from piecewise-linear interpolation,
/// insert it, and stop once the verified relative disagreement is at most
/// `tol` or `budget` samples are used.
pub fn fit_adaptive<F>(initial: &[(f64, f64)], mut verify: F, tol: f64, budget: usize) -> Result<AdaptiveFit>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut samples = initial.to_vec();
    let mut history = Vec::new();
    loop {
        let surrogate = Surrogate::fit(&samples)?;
        if samples.len() >= budget {
            return Ok(AdaptiveFit {
                surrogate,
                history,
                converged: false,
            });
        }
        let s = &surrogate.samples;
        let candidate = s
            .windows(2)
            .map(|w| {
                let m = 0.5 * (w[0].0 + w[1].0);
                let lin = 0.5 * (w[0].1 + w[1].1);
                let v = surrogate.eval(m);
                (m, (v - lin).abs() / v.abs().max(f64::MIN_POSITIVE))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.total_cmp(&a.0)))
            .map(|c| c.0)
            .unwrap();
        let truth = verify(candidate)?;
        let disagreement = (surrogate.eval(candidate) - truth).abs() / truth.abs().max(f64::MIN_POSITIVE);
        history.push((candidate, disagreement));
        samples.push((candidate, truth));
        if disagreement <= tol {
            return Ok(AdaptiveFit {
                surrogate: Surrogate::fit(&samples)?,
                history,
                converged: true,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn constant_samples_give_constant_surrogate() {
        let s: Vec<_> = grid(50.0, 450.0, 7).into_iter().map(|x| (x, 0.37)).collect();
        let sur = Surrogate::fit(&s).unwrap();
        assert!(!sur.is_fallback());
        for x in grid(40.0, 460.0, 301) {
            assert!((sur.eval(x) - 0.37).abs() < 1e-12);
        }
    }

    #[test]
    fn reciprocal_is_interpolated_within_one_percent() {
        for (lo, hi) in [(50.0, 450.0), (1000.0, 5100.0)] {
            let s: Vec<_> = grid(lo, hi, 10).into_iter().map(|x| (x, 1.0 / x)).collect();
            let sur = Surrogate::fit(&s).unwrap();
            let worst = grid(lo, hi, 1001)
                .into_iter()
                .map(|x| ((sur.eval(x) - 1.0 / x) * x).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-2, "[{lo}, {hi}]: {worst}");
        }
    }

    #[test]
    fn interpolation_condition_holds() {
        let s: Vec<_> = grid(0.0, 1.0, 9).into_iter().map(|x| (x, (3.0 * x).sin() + 2.0)).collect();
        let sur = Surrogate::fit(&s).unwrap();
        for (x, y) in &s {
            assert!((sur.eval(*x) - y).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_uniform_samples_keep_the_kernel_model() {
        for n in [20, 30, 40] {
            let s: Vec<_> = grid(1000.0, 3000.0, n).into_iter().map(|x| (x, 1.0 / x.sqrt())).collect();
            let sur = Surrogate::fit(&s).unwrap();
            assert!(!sur.is_fallback(), "{n} samples");
            for (x, y) in &s {
                assert!((sur.eval(*x) - y).abs() < 1e-9 * y);
            }
        }
    }

    #[test]
    fn ill_conditioned_kernel_falls_back() {
        let s = vec![(0.0, 1.0), (1e-9, 2.0), (1.0, 3.0)];
        let sur = Surrogate::fit(&s).unwrap();
        assert!(sur.is_fallback());
        assert_eq!(sur.eval(0.5), piecewise_linear(&sur.samples, 0.5));
    }

    #[test]
    fn adaptive_fit_reaches_tolerance() {
        let f = |x: f64| 1.0 / (1.0 + 25.0 * (x - 0.3).powi(2));
        let init: Vec<_> = grid(0.0, 1.0, 4).into_iter().map(|x| (x, f(x))).collect();
        let fit = fit_adaptive(&init, |x| Ok(f(x)), 1e-2, 40).unwrap();
        assert!(fit.converged);
        assert!(fit.history.last().unwrap().1 <= 1e-2);
        assert!(fit.surrogate.samples.len() <= 40);
    }
}
