use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{DerivativeBound, EvaluableMap, MapDescriptor};
use crate::error::MapError;

/// Level set `{V = lambda}` on `T^n x R^m` in angular coordinates `(theta, z)`,
/// where `V = prod_j cos^2(theta_j / 2) + |z|^2`.
///
/// In the ambient embedding `x_{2j-1} = cos theta_j` this is
/// `prod (1 + x_{2j-1}) / 2 + sum |x_{2n+j}|^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetManifold {
    pub n: usize,
    pub m: usize,
    pub lambda: f64,
}

/// One accepted point of the level set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSample {
    /// Angles in `(-pi, pi]`.
    pub theta: Vec<f64>,
    pub z: Vec<f64>,
}

impl LevelSample {
    pub fn coords(&self) -> Vec<f64> {
        let mut c = self.theta.clone();
        c.extend_from_slice(&self.z);
        c
    }
}

impl LevelSetManifold {
    pub fn new(n: usize, m: usize, lambda: f64) -> Result<Self, MapError> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(MapError::Parameter(format!("level must lie in (0, 1), got {lambda}")));
        }
        if n == 0 || m == 0 {
            return Err(MapError::Parameter("torus and fiber dimensions must be positive".into()));
        }
        Ok(Self { n, m, lambda })
    }

    fn product(theta: &[f64]) -> f64 {
        theta.iter().map(|t| (t / 2.0).cos().powi(2)).product()
    }

    /// `V` in angular coordinates.
    pub fn potential(theta: &[f64], z: &[f64]) -> f64 {
        Self::product(theta) + z.iter().map(|v| v * v).sum::<f64>()
    }

    /// `V` in the ambient embedding of `T^n x R^m` into `R^{2n+m}`.
    pub fn potential_ambient(&self, x: &[f64]) -> f64 {
        let p: f64 = (0..self.n).map(|j| (1.0 + x[2 * j]) / 2.0).product();
        p + x[2 * self.n..].iter().map(|v| v * v).sum::<f64>()
    }

    /// Closed-form `|grad V|^2 = (sum tan^2(theta_j/2)) prod cos^4(theta_j/2) + 4 |z|^2`.
    pub fn gradient_norm_sq(theta: &[f64], z: &[f64]) -> f64 {
        let tan2: f64 = theta.iter().map(|t| (t / 2.0).tan().powi(2)).sum();
        let cos4: f64 = theta.iter().map(|t| (t / 2.0).cos().powi(4)).product();
        tan2 * cos4 + 4.0 * z.iter().map(|v| v * v).sum::<f64>()
    }

    /// Central-difference gradient of `V` in `(theta, z)`.
    pub fn gradient_fd(theta: &[f64], z: &[f64], h: f64) -> Vec<f64> {
        let mut g = Vec::with_capacity(theta.len() + z.len());
        let mut t = theta.to_vec();
        for j in 0..theta.len() {
            t[j] = theta[j] + h;
            let a = Self::potential(&t, z);
            t[j] = theta[j] - h;
            let b = Self::potential(&t, z);
            t[j] = theta[j];
            g.push((a - b) / (2.0 * h));
        }
        let mut w = z.to_vec();
        for j in 0..z.len() {
            w[j] = z[j] + h;
            let a = Self::potential(theta, &w);
            w[j] = z[j] - h;
            let b = Self::potential(theta, &w);
            w[j] = z[j];
            g.push((a - b) / (2.0 * h));
        }
        g
    }

    /// Draws `count` points: uniform angles, then the fiber radius solving
    /// `|z|^2 = lambda - prod cos^2(theta_j / 2)` in a uniform direction.
    /// Angle draws with a nonpositive right-hand side are rejected.
    pub fn sample<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<LevelSample> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let theta: Vec<f64> = (0..self.n)
                .map(|_| {
                    let t: f64 = rng.random_range(-PI..PI);
                    if t == -PI {
                        PI
                    } else {
                        t
                    }
                })
                .collect();
            let rhs = self.lambda - Self::product(&theta);
            if rhs <= 0.0 {
                continue;
            }
            let dir: Vec<f64> = (0..self.m).map(|_| rng.sample(StandardNormal)).collect();
            let dn = super::norm(&dir);
            if dn == 0.0 {
                continue;
            }
            let r = rhs.sqrt();
            let z = dir.iter().map(|v| v * r / dn).collect();
            out.push(LevelSample { theta, z });
        }
        out
    }

    /// Smallest sup norm of the angle vector on the level set:
    /// `2 arccos(lambda^{1 / (2n)})`.
    pub fn min_angle_radius(&self) -> f64 {
        2.0 * self.lambda.powf(1.0 / (2.0 * self.n as f64)).acos()
    }

    /// The retraction of this level set onto the torus skeleton.
    pub fn retraction(&self) -> LambdaRetraction {
        LambdaRetraction { manifold: *self }
    }
}

/// `(theta, z) -> (pi theta / |theta|_inf, 0)`, the endpoint of the linear
/// deformation of the level set onto `{|theta|_inf = pi} x {0}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaRetraction {
    manifold: LevelSetManifold,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(t: f64) -> f64 {
    let w = (t + PI).rem_euclid(2.0 * PI) - PI;
    if w == -PI {
        PI
    } else {
        w
    }
}

impl EvaluableMap for LambdaRetraction {
    fn domain_dim(&self) -> usize {
        self.manifold.n + self.manifold.m
    }

    fn codomain_dim(&self) -> usize {
        self.manifold.n + self.manifold.m
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        let n = self.manifold.n;
        let theta: Vec<f64> = x[..n].iter().map(|&t| wrap_angle(t)).collect();
        let r = super::sup_norm(&theta);
        if r == 0.0 {
            return Err(MapError::Singular(x.to_vec()));
        }
        for (o, t) in out[..n].iter_mut().zip(&theta) {
            *o = if t.abs() == r { PI * t.signum() } else { PI * t / r };
        }
        out[n..].fill(0.0);
        Ok(())
    }

    fn derivative_bound(&self) -> DerivativeBound {
        // (pi / r) sqrt(1 + |w'|^2) <= pi sqrt(n) / r_min on the level set
        DerivativeBound::Lipschitz(
            PI * (self.manifold.n as f64).sqrt() / self.manifold.min_angle_radius(),
        )
    }

    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor {
            kind: "lambda_retraction".into(),
            parameters: json!({
                "n": self.manifold.n, "m": self.manifold.m, "lambda": self.manifold.lambda
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn rejects_levels_outside_unit_interval() {
        assert!(LevelSetManifold::new(3, 2, 0.0).is_err());
        assert!(LevelSetManifold::new(3, 2, 1.0).is_err());
        assert!(LevelSetManifold::new(3, 2, 0.25).is_ok());
    }

    #[test]
    fn closed_form_levels() {
        let lambda: f64 = 0.3;
        let z = [lambda.sqrt(), 0.0];
        assert!((LevelSetManifold::potential(&[PI, PI, PI], &z) - lambda).abs() < 1e-15);
        let t = 2.0 * lambda.sqrt().acos();
        let v = LevelSetManifold::potential(&[t, 0.0, 0.0], &[0.0, 0.0]);
        assert!((v - lambda).abs() < 1e-15);
    }

    #[test]
    fn ambient_and_angular_potentials_agree() {
        let m = LevelSetManifold::new(2, 1, 0.4).unwrap();
        let theta: [f64; 2] = [0.7, -2.1];
        let z = [0.3];
        let x = [theta[0].cos(), theta[0].sin(), theta[1].cos(), theta[1].sin(), z[0]];
        let a = m.potential_ambient(&x);
        let b = LevelSetManifold::potential(&theta, &z);
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn samples_lie_on_level_with_positive_gradient() {
        let m = LevelSetManifold::new(3, 2, 0.25).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for s in m.sample(2000, &mut rng) {
            let v = LevelSetManifold::potential(&s.theta, &s.z);
            assert!((v - 0.25).abs() <= 1e-9);
            assert!(LevelSetManifold::gradient_norm_sq(&s.theta, &s.z) > 0.0);
        }
    }

    #[test]
    fn retraction_examples() {
        let m = LevelSetManifold::new(2, 2, 0.25).unwrap();
        let r = m.retraction();
        let y = r.eval(&[PI, 0.0, 0.3, 0.4]).unwrap();
        assert_eq!(y, vec![PI, 0.0, 0.0, 0.0]);
        let y = r.eval(&[PI / 2.0, PI, 0.1, 0.2]).unwrap();
        assert_eq!(y, vec![PI / 2.0, PI, 0.0, 0.0]);
        assert!(matches!(r.eval(&[0.0, 0.0, 0.5, 0.0]), Err(MapError::Singular(_))));
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-15);
    }
}
