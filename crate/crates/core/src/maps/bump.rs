use serde_json::json;

use super::{sup_norm, DerivativeBound, EvaluableMap, MapDescriptor};
use crate::error::MapError;

const RAMP_START: f64 = 0.4;
const RAMP_END: f64 = 0.5;

fn exp_step(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (-1.0 / t).exp()
    }
}

/// `C^inf` step: 0 for `t <= 0`, 1 for `t >= 1`.
pub(crate) fn smooth_step(t: f64) -> f64 {
    let a = exp_step(t);
    let b = exp_step(1.0 - t);
    a / (a + b)
}

/// Degree-one map `R^{2n} -> S^{2n}` equal to the south pole outside the cube
/// `[-1/2, 1/2]^{2n}` and to the north pole at the origin.
///
/// Inside, `y = x / (1 - 2 |x|_inf)` is sent through inverse stereographic
/// projection `S(y) = (2y, 1 - |y|^2) / (1 + |y|^2)`; on `0.4 <= |x|_inf <= 0.5`
/// a smooth ramp blends `S` with the south pole before renormalizing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BumpMap {
    n: usize,
}

impl BumpMap {
    pub fn new(n: usize) -> Result<Self, MapError> {
        if n == 0 {
            return Err(MapError::Parameter("half-dimension must be positive".into()));
        }
        Ok(Self { n })
    }

    pub fn half_dim(&self) -> usize {
        self.n
    }

    /// The constant value outside the cube, `(0, ..., 0, -1)`.
    pub fn south_pole(&self) -> Vec<f64> {
        let mut b = vec![0.0; 2 * self.n + 1];
        b[2 * self.n] = -1.0;
        b
    }

    /// Evaluation without the length check, for callers holding a block of a
    /// longer vector.
    pub(crate) fn eval_block(x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let r = sup_norm(x);
        out.fill(0.0);
        if r >= RAMP_END {
            out[d] = -1.0;
            return;
        }
        let s = 1.0 / (1.0 - 2.0 * r);
        let y2: f64 = x.iter().map(|v| v * v * s * s).sum();
        let den = 1.0 + y2;
        for (o, v) in out[..d].iter_mut().zip(x) {
            *o = 2.0 * v * s / den;
        }
        out[d] = (1.0 - y2) / den;
        let chi = smooth_step((r - RAMP_START) / (RAMP_END - RAMP_START));
        if chi > 0.0 {
            for o in out[..d].iter_mut() {
                *o *= 1.0 - chi;
            }
            out[d] = (1.0 - chi) * out[d] - chi;
            let nrm = super::norm(out);
            for o in out.iter_mut() {
                *o /= nrm;
            }
        }
    }
}

impl EvaluableMap for BumpMap {
    fn domain_dim(&self) -> usize {
        2 * self.n
    }

    fn codomain_dim(&self) -> usize {
        2 * self.n + 1
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        Self::eval_block(x, out);
        Ok(())
    }

    fn derivative_bound(&self) -> DerivativeBound {
        // dense sampling in dimensions 2 and 4 peaks near 18.2, inside the ramp
        DerivativeBound::Lipschitz(25.0)
    }

    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor {
            kind: "bump".into(),
            parameters: json!({ "n": self.n, "ramp": [RAMP_START, RAMP_END] }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{frobenius, jacobian_fd, norm};
    use rand::{Rng, SeedableRng};

    #[test]
    fn poles_and_support() {
        let f = BumpMap::new(1).unwrap();
        assert_eq!(f.eval(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(f.eval(&[0.6, 0.1]).unwrap(), f.south_pole());
        assert_eq!(f.eval(&[0.5, -0.5]).unwrap(), f.south_pole());
        let g = BumpMap::new(2).unwrap();
        assert_eq!(g.eval(&[0.1, -0.6, 0.0, 0.2]).unwrap(), g.south_pole());
    }

    #[test]
    fn unit_length_and_lipschitz_bound() {
        for n in 1..=2 {
            let f = BumpMap::new(n).unwrap();
            let l = match f.derivative_bound() {
                DerivativeBound::Lipschitz(l) => l,
                _ => unreachable!(),
            };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(n as u64);
            for _ in 0..20_000 {
                let x: Vec<f64> = (0..2 * n).map(|_| rng.random_range(-0.55..0.55)).collect();
                let y = f.eval(&x).unwrap();
                assert!((norm(&y) - 1.0).abs() < 1e-14);
                let j = jacobian_fd(&f, &x, 1e-7).unwrap();
                assert!(frobenius(&j) <= l);
            }
        }
    }

    #[test]
    fn smooth_step_limits() {
        assert_eq!(smooth_step(-0.1), 0.0);
        assert_eq!(smooth_step(0.0), 0.0);
        assert_eq!(smooth_step(1.0), 1.0);
        assert!((smooth_step(0.5) - 0.5).abs() < 1e-15);
    }
}
