use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{
    AffineMap, BumpMap, Composed, DerivativeBound, EvaluableMap, MapDescriptor, SkeletonRetraction,
    TARGET_TOL,
};
use crate::error::{MapError, QuadratureError};
use crate::quadrature::{energy, Domain, EnergyEstimate, QuadratureConfig};
use crate::lattice::for_each_multi_index;

/// Target manifold and its nearest-point style retraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlueTarget {
    /// Unit sphere, retraction `y / |y|`.
    Sphere,
    /// Cell-boundary skeleton, retraction by the skeleton map.
    Skeleton,
}

impl GlueTarget {
    /// Largest admissible boundary gap `delta`.
    pub fn reach(self) -> f64 {
        match self {
            GlueTarget::Sphere => 1.0,
            GlueTarget::Skeleton => 0.5,
        }
    }

    /// Frobenius-to-Frobenius bound for the derivative of the retraction on
    /// segments between target points at distance at most `delta`.
    ///
    /// Sphere: such segments keep `|y| >= sqrt(1 - delta^2/4)`.
    /// Skeleton: they stay `(1 - delta)/2` away from cell centers in sup norm,
    /// where the operator norm is at most `sqrt(N) / (2 r)`.
    pub fn lipschitz(self, delta: f64, dim: usize) -> f64 {
        match self {
            GlueTarget::Sphere => 1.0 / (1.0 - delta * delta / 4.0).sqrt(),
            GlueTarget::Skeleton => (dim as f64).sqrt() / (1.0 - delta),
        }
    }
}

/// Constants in the cylinder energy estimate
/// `E(w) <= E(u) + E(v) + C1 (E(u|bd) + E(v|bd)) + C2 delta^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderConstants {
    pub lipschitz: f64,
    /// Multiplies the boundary energies: `L^p 2^{p-2}`.
    pub boundary: f64,
    /// Multiplies `delta^p`: `L^p 2^{p-1} * 2(m-1)`.
    pub gap: f64,
    /// `max(boundary, gap)`, a single constant valid for every term.
    pub combined: f64,
}

/// Map on the boundary of `[0,1]^m` gluing `u` (bottom, `x_m = 0`) to `v`
/// (top, `x_m = 1`) through the retracted linear interpolation
/// `P((1 - x_m) u(x') + x_m v(x'))` on the side faces.
pub struct CylinderGlue {
    u: Arc<dyn EvaluableMap>,
    v: Arc<dyn EvaluableMap>,
    delta: f64,
    target: GlueTarget,
    m: usize,
}

impl CylinderGlue {
    /// Checks `|u - v| <= delta` on a mesh of `samples` points per edge of the
    /// boundary of `[0,1]^{m-1}`.
    pub fn new(
        u: Arc<dyn EvaluableMap>,
        v: Arc<dyn EvaluableMap>,
        delta: f64,
        target: GlueTarget,
        samples: usize,
    ) -> Result<Self, MapError> {
        let k = u.domain_dim();
        if v.domain_dim() != k || v.codomain_dim() != u.codomain_dim() {
            return Err(MapError::Shape { expected: k, got: v.domain_dim() });
        }
        if !(delta > 0.0 && delta < target.reach()) {
            return Err(MapError::Parameter(format!(
                "gap {delta} must lie in (0, {})",
                target.reach()
            )));
        }
        let glue = Self { u, v, delta, target, m: k + 1 };
        let worst = glue.boundary_gap(samples.max(2))?;
        if worst > delta {
            return Err(MapError::Precondition(format!(
                "boundary gap {worst} exceeds delta {delta}"
            )));
        }
        Ok(glue)
    }

    /// Largest sampled `|u - v|` on the boundary of `[0,1]^{m-1}`.
    pub fn boundary_gap(&self, samples: usize) -> Result<f64, MapError> {
        let k = self.m - 1;
        let mut worst = 0.0f64;
        let mut err = None;
        for_each_multi_index(k, samples, |idx| {
            if err.is_some() {
                return;
            }
            if !idx.iter().any(|&i| i == 0 || i == samples - 1) {
                return;
            }
            let x: Vec<f64> = idx.iter().map(|&i| i as f64 / (samples - 1) as f64).collect();
            match (self.u.eval(&x), self.v.eval(&x)) {
                (Ok(a), Ok(b)) => worst = worst.max(super::euclid(&a, &b)),
                (Err(e), _) | (_, Err(e)) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(worst),
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn target(&self) -> GlueTarget {
        self.target
    }

    pub fn cube_dim(&self) -> usize {
        self.m
    }

    pub fn bottom(&self) -> &Arc<dyn EvaluableMap> {
        &self.u
    }

    pub fn top(&self) -> &Arc<dyn EvaluableMap> {
        &self.v
    }

    pub fn constants(&self, p: f64) -> CylinderConstants {
        let l = self.target.lipschitz(self.delta, self.u.codomain_dim());
        let lp = l.powf(p);
        let boundary = lp * 2f64.powf(p - 2.0);
        let gap = lp * 2f64.powf(p - 1.0) * 2.0 * (self.m as f64 - 1.0);
        CylinderConstants { lipschitz: l, boundary, gap, combined: boundary.max(gap) }
    }

    fn retract(&self, g: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        match self.target {
            GlueTarget::Sphere => {
                let r = super::norm(g);
                if r < (1.0 - self.delta * self.delta / 4.0).sqrt() - TARGET_TOL {
                    return Err(MapError::Projection(g.to_vec()));
                }
                for (o, v) in out.iter_mut().zip(g) {
                    *o = v / r;
                }
                Ok(())
            }
            GlueTarget::Skeleton => {
                let s = SkeletonRetraction::new(g.len())?;
                s.eval_into(g, out).map_err(|_| MapError::Projection(g.to_vec()))
            }
        }
    }
}

impl EvaluableMap for CylinderGlue {
    fn domain_dim(&self) -> usize {
        self.m
    }

    fn codomain_dim(&self) -> usize {
        self.u.codomain_dim()
    }

    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        let k = self.m - 1;
        let (xp, xm) = (&x[..k], x[k]);
        let inside = x.iter().all(|&c| c >= -TARGET_TOL && c <= 1.0 + TARGET_TOL);
        let on_side = xp.iter().any(|&c| c.abs() <= TARGET_TOL || (c - 1.0).abs() <= TARGET_TOL);
        if !inside {
            return Err(MapError::Domain { point: x.to_vec(), reason: "outside the cube".into() });
        }
        if xm.abs() <= TARGET_TOL {
            return self.u.eval_into(xp, out);
        }
        if (xm - 1.0).abs() <= TARGET_TOL {
            return self.v.eval_into(xp, out);
        }
        if !on_side {
            return Err(MapError::Domain {
                point: x.to_vec(),
                reason: "not on the boundary of the cube".into(),
            });
        }
        let a = self.u.eval(xp)?;
        let b = self.v.eval(xp)?;
        if super::euclid(&a, &b) > self.delta * (1.0 + 1e-12) {
            return Err(MapError::Precondition(format!(
                "gap {} exceeds delta {} at {xp:?}",
                super::euclid(&a, &b),
                self.delta
            )));
        }
        let g: Vec<f64> = a.iter().zip(&b).map(|(p, q)| (1.0 - xm) * p + xm * q).collect();
        self.retract(&g, out)
    }

    fn derivative_bound(&self) -> DerivativeBound {
        let lu = match self.u.derivative_bound() {
            DerivativeBound::Lipschitz(l) => l,
            DerivativeBound::Singular { .. } => f64::INFINITY,
        };
        let lv = match self.v.derivative_bound() {
            DerivativeBound::Lipschitz(l) => l,
            DerivativeBound::Singular { .. } => f64::INFINITY,
        };
        let l = self.target.lipschitz(self.delta, self.u.codomain_dim());
        DerivativeBound::Lipschitz(l * (lu.max(lv) + self.delta))
    }

    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor {
            kind: "cylinder_glue".into(),
            parameters: json!({
                "m": self.m,
                "delta": self.delta,
                "target": self.target,
                "bottom": self.u.descriptor(),
                "top": self.v.descriptor(),
            }),
        }
    }
}

/// Both sides of the cylinder energy estimate, each with its quadrature error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CylinderCheck {
    pub p: f64,
    pub delta: f64,
    /// `int_{bd Q^m} |Dw|^p`.
    pub glued: EnergyEstimate,
    pub bottom: EnergyEstimate,
    pub top: EnergyEstimate,
    pub bottom_boundary: EnergyEstimate,
    pub top_boundary: EnergyEstimate,
    pub constants: CylinderConstants,
    pub lhs: f64,
    pub rhs: f64,
    /// Sum of all quadrature error bounds, the slack allowed in `holds`.
    pub error: f64,
    pub holds: bool,
}

/// Evaluates the cylinder estimate for `glue` by quadrature.
pub fn cylinder_estimate_check(
    glue: &CylinderGlue,
    p: f64,
    cfg: &QuadratureConfig,
) -> Result<CylinderCheck, QuadratureError> {
    let k = glue.m - 1;
    let unit = |d: usize| (vec![0.0; d], vec![1.0; d]);
    let (lo, hi) = unit(glue.m);
    let glued = energy(glue, &Domain::BoxBoundary { lo, hi }, p, cfg)?;
    let (lo, hi) = unit(k);
    let face = Domain::Box { lo: lo.clone(), hi: hi.clone() };
    let rim = Domain::BoxBoundary { lo, hi };
    let bottom = energy(glue.u.as_ref(), &face, p, cfg)?;
    let top = energy(glue.v.as_ref(), &face, p, cfg)?;
    let bottom_boundary = energy(glue.u.as_ref(), &rim, p, cfg)?;
    let top_boundary = energy(glue.v.as_ref(), &rim, p, cfg)?;
    let c = glue.constants(p);
    let lhs = glued.value;
    let rhs = bottom.value
        + top.value
        + c.boundary * (bottom_boundary.value + top_boundary.value)
        + c.gap * glue.delta.powf(p);
    let error = glued.error_bound
        + bottom.error_bound
        + top.error_bound
        + c.boundary * (bottom_boundary.error_bound + top_boundary.error_bound);
    Ok(CylinderCheck {
        p,
        delta: glue.delta,
        glued,
        bottom,
        top,
        bottom_boundary,
        top_boundary,
        constants: c,
        lhs,
        rhs,
        error,
        holds: lhs <= rhs + error,
    })
}

/// Degree-one bump `[0,1]^2 -> S^2` scaled by `scale` about the center and
/// rotated by the row-major 3x3 `rotation`. For `scale < 1` the bump is cut
/// by the face boundary, which then carries energy.
pub fn rotated_bump(rotation: [f64; 9], scale: f64) -> Result<Arc<dyn EvaluableMap>, MapError> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(MapError::Parameter(format!("bad scale {scale}")));
    }
    let inner = AffineMap {
        dim: 2,
        matrix: vec![scale, 0.0, 0.0, scale],
        offset: vec![-0.5 * scale, -0.5 * scale],
    };
    let outer = AffineMap { dim: 3, matrix: rotation.to_vec(), offset: vec![0.0; 3] };
    Ok(Arc::new(Composed { outer, inner: Composed { outer: BumpMap::new(1)?, inner } }))
}

/// Rotation by `angle` about the unit vector `axis` (Rodrigues).
pub fn axis_rotation(axis: [f64; 3], angle: f64) -> [f64; 9] {
    let [x, y, z] = axis;
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        c + x * x * t,
        x * y * t - z * s,
        x * z * t + y * s,
        y * x * t + z * s,
        c + y * y * t,
        y * z * t - x * s,
        z * x * t - y * s,
        z * y * t + x * s,
        c + z * z * t,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::ConstantMap;

    fn constant(v: Vec<f64>) -> Arc<dyn EvaluableMap> {
        Arc::new(ConstantMap { dim: 2, value: v })
    }

    #[test]
    fn equal_maps_give_suspension() {
        let a = constant(vec![0.0, 0.6, 0.8]);
        let w = CylinderGlue::new(a.clone(), a, 0.1, GlueTarget::Sphere, 9).unwrap();
        for x in [[0.0, 0.3, 0.5], [0.3, 1.0, 0.7], [0.2, 0.4, 0.0], [0.2, 0.4, 1.0]] {
            let y = w.eval(&x).unwrap();
            assert!(super::super::euclid(&y, &[0.0, 0.6, 0.8]) < 1e-15);
        }
    }

    #[test]
    fn constant_pair_interpolates_on_sides() {
        let t = 0.2f64;
        let a = constant(vec![1.0, 0.0, 0.0]);
        let b = constant(vec![t.cos(), t.sin(), 0.0]);
        let delta = 2.0 * (t / 2.0).sin() + 1e-12;
        let w = CylinderGlue::new(a, b, delta, GlueTarget::Sphere, 5).unwrap();
        let y = w.eval(&[0.0, 0.5, 0.5]).unwrap();
        // midpoint of the chord projects to the midpoint of the arc
        assert!((y[0] - (t / 2.0).cos()).abs() < 1e-14);
        assert!((y[1] - (t / 2.0).sin()).abs() < 1e-14);
        assert!(matches!(w.eval(&[0.5, 0.5, 0.5]), Err(MapError::Domain { .. })));
    }

    #[test]
    fn gap_precondition_is_enforced() {
        let a = constant(vec![1.0, 0.0, 0.0]);
        let b = constant(vec![0.0, 1.0, 0.0]);
        let r = CylinderGlue::new(a, b, 0.5, GlueTarget::Sphere, 5);
        assert!(matches!(r, Err(MapError::Precondition(_))));
    }

    #[test]
    fn constants_follow_closed_forms() {
        let a = constant(vec![1.0, 0.0, 0.0]);
        let w = CylinderGlue::new(a.clone(), a, 0.5, GlueTarget::Sphere, 3).unwrap();
        let c = w.constants(2.0);
        let l2 = 1.0 / (1.0 - 0.0625);
        assert!((c.boundary - l2).abs() < 1e-14);
        assert!((c.gap - l2 * 2.0 * 4.0).abs() < 1e-14);
        assert_eq!(c.combined, c.gap);
    }

    #[test]
    fn rotated_bump_pair_satisfies_estimate() {
        let id = axis_rotation([0.0, 0.0, 1.0], 0.0);
        let r = axis_rotation([1.0, 0.0, 0.0], 0.3);
        let u = rotated_bump(id, 1.0).unwrap();
        let v = rotated_bump(r, 1.2).unwrap();
        // boundary values are the rotated south poles
        let delta = 2.0 * (0.15f64).sin() * (1.0 + 1e-9);
        let w = CylinderGlue::new(u, v, delta, GlueTarget::Sphere, 9).unwrap();
        let cfg = QuadratureConfig { base_level: 2, ..Default::default() };
        let c = cylinder_estimate_check(&w, 2.0, &cfg).unwrap();
        assert!(c.holds, "{c:?}");
        assert!(c.bottom_boundary.value.abs() < 1e-12);
        // each degree-one face map carries at least the Dirichlet minimum 8 pi
        assert!(c.bottom.value > 8.0 * std::f64::consts::PI - c.bottom.error_bound);
        assert!(c.lhs >= c.bottom.value + c.top.value - c.error);
    }

    #[test]
    fn rotations_are_orthogonal() {
        let r = axis_rotation([0.6, 0.0, 0.8], 1.1);
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = (0..3).map(|k| r[3 * i + k] * r[3 * j + k]).sum();
                assert!((d - f64::from(u8::from(i == j))).abs() < 1e-15);
            }
        }
    }
}
