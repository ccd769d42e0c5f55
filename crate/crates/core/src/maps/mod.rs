//! Point-evaluable maps with declared singular sets and derivative bounds.
//!
//! Every map implements [`EvaluableMap`]. Evaluation is pure and reentrant,
//! so a single map can be shared across rayon workers.

mod bump;
mod cylinder;
mod level;
mod projection;
mod skeleton;
mod torus;
mod whitehead;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::MapError;

pub use bump::BumpMap;
pub use cylinder::{
    axis_rotation, cylinder_estimate_check, rotated_bump, CylinderCheck, CylinderConstants,
    CylinderGlue, GlueTarget,
};
pub use level::{LambdaRetraction, LevelSample, LevelSetManifold};
pub use projection::CubeProjection;
pub use skeleton::SkeletonRetraction;
pub use torus::TorusQuotient;
pub use whitehead::{PeriodicWhitehead, WhiteheadBoundary};

/// Tolerance for "lies on the target set" checks.
pub const TARGET_TOL: f64 = 1e-9;

/// Where a map fails to be defined.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SingularSet {
    Empty,
    Points(Vec<Vec<f64>>),
    /// `offset + period * Z^N`, the same offset on every axis.
    Lattice { offset: f64, period: f64 },
}

fn nearest_lattice_coord(v: f64, offset: f64, period: f64) -> f64 {
    offset + period * ((v - offset) / period).round()
}

impl SingularSet {
    /// Euclidean distance from `x` to the set (`inf` when empty).
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            SingularSet::Empty => f64::INFINITY,
            SingularSet::Points(pts) => pts
                .iter()
                .map(|p| euclid(x, p))
                .fold(f64::INFINITY, f64::min),
            SingularSet::Lattice { offset, period } => x
                .iter()
                .map(|&v| {
                    let d = v - nearest_lattice_coord(v, *offset, *period);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Euclidean distance from the box `[lo, hi]` to the set.
    pub fn box_distance(&self, lo: &[f64], hi: &[f64]) -> f64 {
        match self {
            SingularSet::Empty => f64::INFINITY,
            SingularSet::Points(pts) => pts
                .iter()
                .map(|p| point_box_distance(p, lo, hi))
                .fold(f64::INFINITY, f64::min),
            SingularSet::Lattice { offset, period } => lo
                .iter()
                .zip(hi)
                .map(|(&a, &b)| {
                    // nearest lattice coordinate to the interval [a, b]
                    let first = offset + period * ((a - offset) / period).ceil();
                    if first <= b {
                        0.0
                    } else {
                        let below = first - period;
                        let d = (a - below).min(first - b);
                        d * d
                    }
                })
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// Euclidean distance between two points.
pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean distance from a point to the box `[lo, hi]`.
pub fn point_box_distance(p: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    p.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&a, &b))| {
            let d = (a - v).max(v - b).max(0.0);
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Sup norm.
pub fn sup_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Euclidean norm.
pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Pointwise control of the Frobenius norm of the derivative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum DerivativeBound {
    /// `|Du(x)| <= L` everywhere.
    Lipschitz(f64),
    /// `|Du(x)| * dist(x, singular set) <= k`.
    Singular { k: f64 },
}

impl DerivativeBound {
    /// Upper bound for `|Du(x)|` at Euclidean distance `dist` from the singular set.
    pub fn at(&self, dist: f64) -> f64 {
        match *self {
            DerivativeBound::Lipschitz(l) => l,
            DerivativeBound::Singular { k } => k / dist,
        }
    }
}

/// Hyperplanes `x_i = offset + period * k` on every axis across which the map
/// is only Lipschitz. Quadrature cells are aligned to these planes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KinkLattice {
    pub offset: f64,
    pub period: f64,
}

/// JSON-serializable description `{kind, parameters}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapDescriptor {
    pub kind: String,
    pub parameters: serde_json::Value,
}

/// A map `R^N -> R^M` evaluable pointwise.
pub trait EvaluableMap: Send + Sync {
    fn domain_dim(&self) -> usize;
    fn codomain_dim(&self) -> usize;

    /// Writes `u(x)` into `out` (length `codomain_dim`).
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError>;

    fn eval(&self, x: &[f64]) -> Result<Vec<f64>, MapError> {
        if x.len() != self.domain_dim() {
            return Err(MapError::Shape { expected: self.domain_dim(), got: x.len() });
        }
        let mut out = vec![0.0; self.codomain_dim()];
        self.eval_into(x, &mut out)?;
        Ok(out)
    }

    fn singular_set(&self) -> SingularSet {
        SingularSet::Empty
    }

    fn derivative_bound(&self) -> DerivativeBound;

    fn kinks(&self) -> Option<KinkLattice> {
        None
    }

    fn descriptor(&self) -> MapDescriptor;
}

impl<T: EvaluableMap + ?Sized> EvaluableMap for Arc<T> {
    fn domain_dim(&self) -> usize {
        (**self).domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        (**self).codomain_dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        (**self).eval_into(x, out)
    }
    fn singular_set(&self) -> SingularSet {
        (**self).singular_set()
    }
    fn derivative_bound(&self) -> DerivativeBound {
        (**self).derivative_bound()
    }
    fn kinks(&self) -> Option<KinkLattice> {
        (**self).kinks()
    }
    fn descriptor(&self) -> MapDescriptor {
        (**self).descriptor()
    }
}

/// Central finite-difference Jacobian, `M x N` row-major.
pub fn jacobian_fd(map: &dyn EvaluableMap, x: &[f64], h: f64) -> Result<Vec<f64>, MapError> {
    let n = map.domain_dim();
    let m = map.codomain_dim();
    let mut jac = vec![0.0; m * n];
    let mut xp = x.to_vec();
    let mut up = vec![0.0; m];
    let mut um = vec![0.0; m];
    for j in 0..n {
        xp[j] = x[j] + h;
        map.eval_into(&xp, &mut up)?;
        xp[j] = x[j] - h;
        map.eval_into(&xp, &mut um)?;
        xp[j] = x[j];
        for i in 0..m {
            jac[i * n + j] = (up[i] - um[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Frobenius norm.
pub fn frobenius(a: &[f64]) -> f64 {
    norm(a)
}

/// The constant map.
#[derive(Clone, Debug)]
pub struct ConstantMap {
    pub dim: usize,
    pub value: Vec<f64>,
}

impl EvaluableMap for ConstantMap {
    fn domain_dim(&self) -> usize {
        self.dim
    }
    fn codomain_dim(&self) -> usize {
        self.value.len()
    }
    fn eval_into(&self, _x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        out.copy_from_slice(&self.value);
        Ok(())
    }
    fn derivative_bound(&self) -> DerivativeBound {
        DerivativeBound::Lipschitz(0.0)
    }
    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor {
            kind: "constant".into(),
            parameters: serde_json::json!({ "N": self.dim, "value": self.value }),
        }
    }
}

/// `x -> A x + b` with `A` stored `M x N` row-major.
#[derive(Clone, Debug)]
pub struct AffineMap {
    pub dim: usize,
    pub matrix: Vec<f64>,
    pub offset: Vec<f64>,
}

impl EvaluableMap for AffineMap {
    fn domain_dim(&self) -> usize {
        self.dim
    }
    fn codomain_dim(&self) -> usize {
        self.offset.len()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
            *o = self.offset[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
        Ok(())
    }
    fn derivative_bound(&self) -> DerivativeBound {
        DerivativeBound::Lipschitz(frobenius(&self.matrix))
    }
    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor {
            kind: "affine".into(),
            parameters: serde_json::json!({
                "N": self.dim, "matrix": self.matrix, "offset": self.offset
            }),
        }
    }
}

/// `x -> outer(inner(x))`.
pub struct Composed<A, B> {
    pub outer: A,
    pub inner: B,
}

impl<A: EvaluableMap, B: EvaluableMap> EvaluableMap for Composed<A, B> {
    fn domain_dim(&self) -> usize {
        self.inner.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.outer.codomain_dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        let mid = self.inner.eval(x)?;
        self.outer.eval_into(&mid, out)
    }
    fn singular_set(&self) -> SingularSet {
        self.inner.singular_set()
    }
    fn derivative_bound(&self) -> DerivativeBound {
        let lo = match self.outer.derivative_bound() {
            DerivativeBound::Lipschitz(l) => l,
            DerivativeBound::Singular { .. } => f64::INFINITY,
        };
        match self.inner.derivative_bound() {
            DerivativeBound::Lipschitz(l) => DerivativeBound::Lipschitz(lo * l),
            DerivativeBound::Singular { k } => DerivativeBound::Singular { k: lo * k },
        }
    }
    fn kinks(&self) -> Option<KinkLattice> {
        self.inner.kinks()
    }
    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor {
            kind: "composed".into(),
            parameters: serde_json::json!({
                "outer": self.outer.descriptor(), "inner": self.inner.descriptor()
            }),
        }
    }
}

/// `x -> u(x) + shift`.
pub struct Shifted<A> {
    pub map: A,
    pub shift: Vec<f64>,
}

impl<A: EvaluableMap> EvaluableMap for Shifted<A> {
    fn domain_dim(&self) -> usize {
        self.map.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.map.codomain_dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        self.map.eval_into(x, out)?;
        for (o, s) in out.iter_mut().zip(&self.shift) {
            *o += s;
        }
        Ok(())
    }
    fn singular_set(&self) -> SingularSet {
        self.map.singular_set()
    }
    fn derivative_bound(&self) -> DerivativeBound {
        self.map.derivative_bound()
    }
    fn kinks(&self) -> Option<KinkLattice> {
        self.map.kinks()
    }
    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor {
            kind: "shifted".into(),
            parameters: serde_json::json!({ "map": self.map.descriptor(), "shift": self.shift }),
        }
    }
}

/// Hopf fibration `S^3 -> S^2`, extended 0-homogeneously to `R^4 \ {0}`.
///
/// With `z1 = x0 + i x1`, `z2 = x2 + i x3`:
/// `h = (2 Re z1 conj(z2), 2 Im z1 conj(z2), |z1|^2 - |z2|^2)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct HopfFibration;

impl EvaluableMap for HopfFibration {
    fn domain_dim(&self) -> usize {
        4
    }
    fn codomain_dim(&self) -> usize {
        3
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        if r2 == 0.0 {
            return Err(MapError::Singular(x.to_vec()));
        }
        let (a, b, c, d) = (x[0], x[1], x[2], x[3]);
        // z1 conj(z2) = (a c + b d) + i (b c - a d)
        out[0] = 2.0 * (a * c + b * d) / r2;
        out[1] = 2.0 * (b * c - a * d) / r2;
        out[2] = (a * a + b * b - c * c - d * d) / r2;
        Ok(())
    }
    fn singular_set(&self) -> SingularSet {
        SingularSet::Points(vec![vec![0.0; 4]])
    }
    fn derivative_bound(&self) -> DerivativeBound {
        // two horizontal directions stretched by 2, fiber and radial killed
        DerivativeBound::Singular { k: 2.0 * 2f64.sqrt() }
    }
    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor { kind: "hopf_fibration".into(), parameters: serde_json::json!({}) }
    }
}
