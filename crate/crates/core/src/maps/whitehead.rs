use serde_json::json;

use super::{sup_norm, BumpMap, DerivativeBound, EvaluableMap, MapDescriptor, SingularSet,
    TARGET_TOL};
use crate::error::MapError;

/// Map on the boundary of `[-1/2, 1/2]^{4n}` into `S^{2n}` built from two
/// copies of the bump map.
///
/// Split `x = (x', x'')` into halves of length `2n`. On the part of the
/// boundary where `|x''|_inf = 1/2` and `|x'|_inf < 1/2` the value is `f(x')`;
/// symmetrically `f(x'')` where `|x'|_inf = 1/2 > |x''|_inf`; the south pole
/// where both halves touch the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WhiteheadBoundary {
    n: usize,
}

/// Which rule fires at a boundary point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WhiteheadBranch {
    First,
    Second,
    Pole,
}

impl WhiteheadBoundary {
    pub fn new(n: usize) -> Result<Self, MapError> {
        BumpMap::new(n)?;
        Ok(Self { n })
    }

    pub fn half_dim(&self) -> usize {
        self.n
    }

    /// Classifies a boundary point; `Err` when off the boundary.
    pub fn branch(&self, x: &[f64]) -> Result<WhiteheadBranch, MapError> {
        let k = 2 * self.n;
        let a = sup_norm(&x[..k]);
        let b = sup_norm(&x[k..]);
        if (a.max(b) - 0.5).abs() > TARGET_TOL {
            return Err(MapError::Domain {
                point: x.to_vec(),
                reason: "not on the boundary of the half cube".into(),
            });
        }
        let edge = 0.5 - TARGET_TOL;
        Ok(match (a >= edge, b >= edge) {
            (true, true) => WhiteheadBranch::Pole,
            (false, true) => WhiteheadBranch::First,
            (true, false) => WhiteheadBranch::Second,
            (false, false) => unreachable!("max of the two sup norms is 1/2"),
        })
    }

    fn eval_unchecked(&self, x: &[f64], branch: WhiteheadBranch, out: &mut [f64]) {
        let k = 2 * self.n;
        match branch {
            WhiteheadBranch::First => BumpMap::eval_block(&x[..k], out),
            WhiteheadBranch::Second => BumpMap::eval_block(&x[k..], out),
            WhiteheadBranch::Pole => {
                out.fill(0.0);
                out[k] = -1.0;
            }
        }
    }
}

impl EvaluableMap for WhiteheadBoundary {
    fn domain_dim(&self) -> usize {
        4 * self.n
    }

    fn codomain_dim(&self) -> usize {
        2 * self.n + 1
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        let b = self.branch(x)?;
        self.eval_unchecked(x, b, out);
        Ok(())
    }

    fn derivative_bound(&self) -> DerivativeBound {
        BumpMap::new(self.n).expect("validated").derivative_bound()
    }

    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor { kind: "whitehead_boundary".into(), parameters: json!({ "n": self.n }) }
    }
}

/// `Z^{4n}`-periodic map `R^{4n} \ Z^{4n} -> S^{2n}`: with `y = x - round(x)`,
/// the value is the boundary map at `y / (2 |y|_inf)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeriodicWhitehead {
    boundary: WhiteheadBoundary,
}

impl PeriodicWhitehead {
    pub fn new(n: usize) -> Result<Self, MapError> {
        Ok(Self { boundary: WhiteheadBoundary::new(n)? })
    }

    pub fn boundary(&self) -> &WhiteheadBoundary {
        &self.boundary
    }
}

impl EvaluableMap for PeriodicWhitehead {
    fn domain_dim(&self) -> usize {
        self.boundary.domain_dim()
    }

    fn codomain_dim(&self) -> usize {
        self.boundary.codomain_dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        let mut y: Vec<f64> = x.iter().map(|v| v - v.round()).collect();
        let r = sup_norm(&y);
        if r == 0.0 {
            return Err(MapError::Singular(x.to_vec()));
        }
        // maximal coordinates are set to exactly +-1/2 so the branch test is exact
        for v in y.iter_mut() {
            *v = if v.abs() == r { 0.5 * v.signum() } else { *v * (0.5 / r) };
        }
        let b = self.boundary.branch(&y)?;
        self.boundary.eval_unchecked(&y, b, out);
        Ok(())
    }

    fn singular_set(&self) -> SingularSet {
        SingularSet::Lattice { offset: 0.0, period: 1.0 }
    }

    fn derivative_bound(&self) -> DerivativeBound {
        // |D(y / 2|y|_inf)| <= sqrt(4n) / (2 |y|_inf) <= 2n / |y|_2
        let l = match self.boundary.derivative_bound() {
            DerivativeBound::Lipschitz(l) => l,
            DerivativeBound::Singular { k } => k,
        };
        DerivativeBound::Singular { k: l * 2.0 * self.boundary.n as f64 }
    }

    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor {
            kind: "periodic_whitehead".into(),
            parameters: json!({ "n": self.boundary.n }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{frobenius, jacobian_fd};
    use crate::lattice::for_each_multi_index;
    use rand::{Rng, SeedableRng};

    #[test]
    fn case_dispatch_examples() {
        let v = WhiteheadBoundary::new(1).unwrap();
        let f = BumpMap::new(1).unwrap();
        let x = [0.0, 0.1, 0.5, -0.2];
        assert_eq!(v.branch(&x).unwrap(), WhiteheadBranch::First);
        assert_eq!(v.eval(&x).unwrap(), f.eval(&[0.0, 0.1]).unwrap());
        let x = [0.3, -0.5, 0.5, 0.0];
        assert_eq!(v.branch(&x).unwrap(), WhiteheadBranch::Pole);
        assert_eq!(v.eval(&x).unwrap(), f.south_pole());
        assert!(matches!(v.eval(&[0.1, 0.1, 0.1, 0.1]), Err(MapError::Domain { .. })));
    }

    #[test]
    fn branches_partition_a_boundary_mesh() {
        let v = WhiteheadBoundary::new(1).unwrap();
        let k = 8;
        let mut counts = [0usize; 3];
        for_each_multi_index(4, k + 1, |idx| {
            let x: Vec<f64> = idx.iter().map(|&i| i as f64 / k as f64 - 0.5).collect();
            if sup_norm(&x) != 0.5 {
                return;
            }
            match v.branch(&x).unwrap() {
                WhiteheadBranch::First => counts[0] += 1,
                WhiteheadBranch::Second => counts[1] += 1,
                WhiteheadBranch::Pole => counts[2] += 1,
            }
        });
        let total = 9usize.pow(4) - 7usize.pow(4);
        assert_eq!(counts.iter().sum::<usize>(), total);
        assert_eq!(counts[0], counts[1]);
        // both halves on the boundary: (81 - 49)^2 points
        assert_eq!(counts[2], 32 * 32);
    }

    #[test]
    fn homogeneity_and_periodicity() {
        let u = PeriodicWhitehead::new(1).unwrap();
        let v = WhiteheadBoundary::new(1).unwrap();
        let x0 = [0.25, -0.125, 0.5, 0.375];
        let scaled: Vec<f64> = x0.iter().map(|a| 0.3 * a).collect();
        assert_eq!(u.eval(&scaled).unwrap(), v.eval(&x0).unwrap());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            // dyadic inputs keep x + h exact
            let x: Vec<f64> =
                (0..4).map(|_| rng.random_range(-2048i64..2048) as f64 / 1024.0).collect();
            let h: Vec<f64> = (0..4).map(|_| rng.random_range(-5i64..=5) as f64).collect();
            let xh: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + b).collect();
            match (u.eval(&x), u.eval(&xh)) {
                (Ok(a), Ok(b)) => assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => panic!("singularity not periodic"),
            }
        }
    }

    #[test]
    fn derivative_profile_is_bounded() {
        let u = PeriodicWhitehead::new(1).unwrap();
        let k = match u.derivative_bound() {
            DerivativeBound::Singular { k } => k,
            _ => unreachable!(),
        };
        let sing = u.singular_set();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut worst = 0.0f64;
        for _ in 0..20_000 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = sing.distance(&x);
            let j = jacobian_fd(&u, &x, 1e-7 * d).unwrap();
            worst = worst.max(frobenius(&j) * d);
        }
        assert!(worst.is_finite() && worst <= k, "worst {worst} vs {k}");
    }
}
