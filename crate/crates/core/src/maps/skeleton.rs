use serde_json::json;

use super::{DerivativeBound, EvaluableMap, KinkLattice, MapDescriptor, SingularSet};
use crate::error::MapError;

/// Radial retraction of each unit cell onto its boundary.
///
/// With `sigma = floor(x) + 1/2` the center of the cell containing `x` and
/// `y = x - sigma`, the map is `sigma + y / (2 |y|_inf)`. It is `Z^N`-equivariant,
/// takes values in the union of cell boundaries, fixes that set, and is
/// undefined exactly at the cell centers `(Z + 1/2)^N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SkeletonRetraction {
    dim: usize,
}

impl SkeletonRetraction {
    pub fn new(dim: usize) -> Result<Self, MapError> {
        if dim < 2 {
            return Err(MapError::Parameter(format!("dimension must be at least 2, got {dim}")));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Exact squared Frobenius norm of the derivative off the kinks:
    /// `(N - 2 + |y|^2 / r^2) / (4 r^2)` with `r = |y|_inf`.
    pub fn derivative_norm_sq(&self, x: &[f64]) -> Option<f64> {
        let mut r = 0.0f64;
        let mut y2 = 0.0;
        for &v in x {
            let y = v - (v.floor() + 0.5);
            r = r.max(y.abs());
            y2 += y * y;
        }
        if r == 0.0 {
            return None;
        }
        Some((self.dim as f64 - 2.0 + y2 / (r * r)) / (4.0 * r * r))
    }

    /// Whether `x` lies within `tol` of some cell boundary.
    pub fn on_skeleton(x: &[f64], tol: f64) -> bool {
        x.iter().any(|&v| (v - v.round()).abs() <= tol)
    }
}

impl EvaluableMap for SkeletonRetraction {
    fn domain_dim(&self) -> usize {
        self.dim
    }

    fn codomain_dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        let mut r = 0.0f64;
        for (o, &v) in out.iter_mut().zip(x) {
            let y = v - (v.floor() + 0.5);
            *o = y;
            r = r.max(y.abs());
        }
        if r == 0.0 {
            return Err(MapError::Singular(x.to_vec()));
        }
        let scale = 0.5 / r;
        for (o, &v) in out.iter_mut().zip(x) {
            *o = v.floor() + 0.5 + *o * scale;
        }
        Ok(())
    }

    fn singular_set(&self) -> SingularSet {
        SingularSet::Lattice { offset: 0.5, period: 1.0 }
    }

    fn derivative_bound(&self) -> DerivativeBound {
        // |Du|^2 <= (N - 1) / (2 r^2) and |y|_2 <= sqrt(N) r
        let n = self.dim as f64;
        DerivativeBound::Singular { k: (n * (n - 1.0) / 2.0).sqrt() }
    }

    fn kinks(&self) -> Option<KinkLattice> {
        // cell walls, plus the center planes so singular points sit at cell corners
        Some(KinkLattice { offset: 0.0, period: 0.5 })
    }

    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor { kind: "skeleton_retraction".into(), parameters: json!({ "N": self.dim }) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{frobenius, jacobian_fd, TARGET_TOL};
    use proptest::prelude::*;

    #[test]
    fn formula_examples() {
        let u = SkeletonRetraction::new(2).unwrap();
        assert_eq!(u.eval(&[0.75, 0.5]).unwrap(), vec![1.0, 0.5]);
        assert_eq!(u.eval(&[1.0, 0.37]).unwrap(), vec![1.0, 0.37]);
        assert_eq!(u.eval(&[3.75, -1.5]).unwrap(), vec![4.0, -1.5]);
        assert!(matches!(u.eval(&[0.5, 1.5]), Err(MapError::Singular(_))));
        assert!(SkeletonRetraction::new(1).is_err());
    }

    #[test]
    fn derivative_bound_holds_on_samples() {
        use rand::{Rng, SeedableRng};
        for n in 2..=4 {
            let u = SkeletonRetraction::new(n).unwrap();
            let k = match u.derivative_bound() {
                DerivativeBound::Singular { k } => k,
                _ => unreachable!(),
            };
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(n as u64);
            let sing = u.singular_set();
            for _ in 0..20_000 {
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let d = sing.distance(&x);
                if d < 1e-3 {
                    continue;
                }
                let j = jacobian_fd(&u, &x, d * 1e-6).unwrap();
                let exact = u.derivative_norm_sq(&x).unwrap().sqrt();
                assert!(frobenius(&j) * d <= k * (1.0 + 1e-6) + 1e-9);
                // away from kinks the closed form matches
                let y: Vec<f64> = x.iter().map(|v| v - v.floor() - 0.5).collect();
                let mut a: Vec<f64> = y.iter().map(|v| v.abs()).collect();
                a.sort_by(|p, q| q.partial_cmp(p).unwrap());
                if a[0] - a[1] > 1e-3 && x.iter().all(|v| (v - v.round()).abs() > 1e-3) {
                    assert!((frobenius(&j) - exact).abs() < 1e-5 * exact.max(1.0));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn lands_on_skeleton_and_is_idempotent(x in proptest::collection::vec(-10.0f64..10.0, 3)) {
            let u = SkeletonRetraction::new(3).unwrap();
            if let Ok(y) = u.eval(&x) {
                prop_assert!(SkeletonRetraction::on_skeleton(&y, TARGET_TOL));
                let z = u.eval(&y).unwrap();
                for (a, b) in y.iter().zip(&z) {
                    prop_assert!((a - b).abs() <= TARGET_TOL);
                }
            }
        }

        #[test]
        fn equivariance_on_dyadics(
            num in proptest::collection::vec(-4096i64..4096, 2),
            h in proptest::collection::vec(-50i64..50, 2),
        ) {
            let u = SkeletonRetraction::new(2).unwrap();
            let x: Vec<f64> = num.iter().map(|&v| v as f64 / 1024.0).collect();
            let xh: Vec<f64> = x.iter().zip(&h).map(|(a, &b)| a + b as f64).collect();
            // the shift is exact; only the final addition of sigma can round
            if let (Ok(a), Ok(b)) = (u.eval(&x), u.eval(&xh)) {
                for k in 0..2 {
                    prop_assert!((a[k] + h[k] as f64 - b[k]).abs() <= 1e-13);
                }
            }
        }
    }
}
