use serde_json::json;

use super::{DerivativeBound, EvaluableMap, MapDescriptor};
use crate::error::MapError;
use crate::lattice::BlockDecomposition;

/// Radial projection onto a closed cube of side `l` centered at `c`.
///
/// Identity on the cube; outside it sends `x` to `c + l (x - c) / (2 |x - c|_inf)`,
/// a point of the cube's boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeProjection {
    center: Vec<f64>,
    side: f64,
}

impl CubeProjection {
    /// Projection onto the block with index `alpha` of the `5l` tiling.
    pub fn for_block(edge: usize, alpha: &[i8]) -> Result<Self, MapError> {
        let b = BlockDecomposition::new(alpha.len(), edge)
            .map_err(|e| MapError::Parameter(e.to_string()))?;
        if alpha.iter().any(|a| a.abs() > 2) {
            return Err(MapError::Parameter(format!("block index {alpha:?} outside -2..=2")));
        }
        Ok(Self { center: b.block_center(alpha), side: edge as f64 })
    }

    pub fn new(center: Vec<f64>, side: f64) -> Result<Self, MapError> {
        if !(side > 0.0) || center.is_empty() {
            return Err(MapError::Parameter("cube needs positive side and dimension".into()));
        }
        Ok(Self { center, side })
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn side(&self) -> f64 {
        self.side
    }

    /// Sup distance from `x` to the cube.
    pub fn distance_inf(&self, x: &[f64]) -> f64 {
        let r = x
            .iter()
            .zip(&self.center)
            .fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        (r - self.side / 2.0).max(0.0)
    }

    /// Operator-norm bound for the derivative at `x`.
    ///
    /// Outside the cube the derivative is `(l / 2r) (I - w e_i^T)` with
    /// `w = (x - c) / r` and `i` the maximal axis, whose norm is
    /// `sqrt(1 + |w'|^2) l / (2r)` where `w'` drops the `i`-th entry. Along axis
    /// directions (`w' = 0`) this is `1 / (1 + 2 dist_inf / l)`.
    pub fn damping_factor(&self, x: &[f64]) -> f64 {
        let y: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        let (imax, r) = y
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(i, m), (k, v)| if v.abs() > m { (k, v.abs()) } else { (i, m) });
        if r <= self.side / 2.0 {
            return 1.0;
        }
        let rest: f64 = y
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != imax)
            .map(|(_, v)| (v / r) * (v / r))
            .sum();
        (1.0 + rest).sqrt() * self.side / (2.0 * r)
    }
}

impl EvaluableMap for CubeProjection {
    fn domain_dim(&self) -> usize {
        self.center.len()
    }

    fn codomain_dim(&self) -> usize {
        self.center.len()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        let half = self.side / 2.0;
        let r = x
            .iter()
            .zip(&self.center)
            .fold(0.0f64, |m, (a, c)| m.max((a - c).abs()));
        if r <= half {
            out.copy_from_slice(x);
        } else {
            let s = half / r;
            for ((o, a), c) in out.iter_mut().zip(x).zip(&self.center) {
                *o = c + (a - c) * s;
            }
        }
        Ok(())
    }

    fn derivative_bound(&self) -> DerivativeBound {
        // worst case sqrt(1 + |w'|^2) = sqrt(N) just outside the cube
        DerivativeBound::Lipschitz((self.center.len() as f64).sqrt())
    }

    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor {
            kind: "cube_projection".into(),
            parameters: json!({ "center": self.center, "side": self.side }),
        }
    }
}
