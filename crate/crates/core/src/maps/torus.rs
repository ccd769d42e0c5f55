use std::f64::consts::PI;

use serde_json::json;

use super::{DerivativeBound, EvaluableMap, MapDescriptor, TARGET_TOL};
use crate::error::MapError;

/// Quotient of the cell-boundary skeleton by `Z^N`, embedded in `R^{2N}` as a
/// product of circles of radius `R`.
///
/// The chart is `theta_j = pi + 2 pi x_j`, so integer coordinates go to the
/// angle `pi` and the skeleton maps into `{some cos theta_j = -1}`. Output
/// coordinates are interleaved `(R cos theta_1, R sin theta_1, ...)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TorusQuotient {
    dim: usize,
    radius: f64,
}

impl TorusQuotient {
    /// Unit circles.
    pub fn new(dim: usize) -> Result<Self, MapError> {
        Self::with_radius(dim, 1.0)
    }

    /// Circles of radius `1 / (2 pi)`, making the map a local isometry.
    pub fn isometric(dim: usize) -> Result<Self, MapError> {
        Self::with_radius(dim, 1.0 / (2.0 * PI))
    }

    pub fn with_radius(dim: usize, radius: f64) -> Result<Self, MapError> {
        if dim < 1 {
            return Err(MapError::Parameter("dimension must be positive".into()));
        }
        if !(radius > 0.0) {
            return Err(MapError::Parameter(format!("radius must be positive, got {radius}")));
        }
        Ok(Self { dim, radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Angles in `[pi, 3 pi)` for a point of `R^N`.
    pub fn angles(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|v| PI + 2.0 * PI * v.rem_euclid(1.0)).collect()
    }
}

impl EvaluableMap for TorusQuotient {
    fn domain_dim(&self) -> usize {
        self.dim
    }

    fn codomain_dim(&self) -> usize {
        2 * self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        if !x.iter().any(|v| (v - v.round()).abs() <= TARGET_TOL) {
            return Err(MapError::Domain {
                point: x.to_vec(),
                reason: "no coordinate is integral".into(),
            });
        }
        for (j, &v) in x.iter().enumerate() {
            let t = PI + 2.0 * PI * v.rem_euclid(1.0);
            out[2 * j] = self.radius * t.cos();
            out[2 * j + 1] = self.radius * t.sin();
        }
        Ok(())
    }

    fn derivative_bound(&self) -> DerivativeBound {
        // each direction is stretched by 2 pi R
        DerivativeBound::Lipschitz(2.0 * PI * self.radius * (self.dim as f64).sqrt())
    }

    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor {
            kind: "torus_quotient".into(),
            parameters: json!({ "N": self.dim, "radius": self.radius }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn integer_shift_gives_equal_output() {
        let p = TorusQuotient::new(3).unwrap();
        let x = [0.0, 0.375, -1.25];
        let a = p.eval(&x).unwrap();
        let b = p.eval(&[1.0, 0.375, -1.25]).unwrap();
        let c = p.eval(&[0.0, 2.375, 3.75]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn chart_example() {
        // x = (0, 1/4): angles (pi, 3 pi / 2)
        let p = TorusQuotient::new(2).unwrap();
        let y = p.eval(&[0.0, 0.25]).unwrap();
        let want = [-1.0, 0.0, 0.0, -1.0];
        for (a, b) in y.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_points_off_the_skeleton() {
        let p = TorusQuotient::new(2).unwrap();
        assert!(matches!(p.eval(&[0.5, 0.25]), Err(MapError::Domain { .. })));
    }

    #[test]
    fn skeleton_lands_on_torus_skeleton() {
        let p = TorusQuotient::new(3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let mut x: Vec<f64> = (0..3).map(|_| rng.random_range(-4.0..4.0)).collect();
            let k = rng.random_range(0..3);
            x[k] = x[k].round();
            let y = p.eval(&x).unwrap();
            for j in 0..3 {
                assert!((y[2 * j].hypot(y[2 * j + 1]) - 1.0).abs() < 1e-14);
            }
            assert!((0..3).any(|j| (y[2 * j] + 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn isometric_chart_preserves_tangent_lengths() {
        let p = TorusQuotient::isometric(3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let mut x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let k = rng.random_range(0..3);
            x[k] = x[k].round();
            // tangent directions of the skeleton face through x
            for j in (0..3).filter(|&j| j != k) {
                let h = 1e-5;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let a = p.eval(&xp).unwrap();
                let b = p.eval(&xm).unwrap();
                let d: f64 = a.iter().zip(&b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
                assert!((d / (2.0 * h) - 1.0).abs() < 1e-6);
            }
        }
    }
}
