use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{permutations, solve, sphere_measure};
use crate::error::TopologyError;
use crate::maps::EvaluableMap;
use crate::quadrature::{integrate, Domain, Node, Patch, QuadratureConfig};

/// Smooth positive density on `S^{N-1}` normalized so that its integral is `|S^{N-1}|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Weight {
    Uniform,
    /// `1 + c.y + y^T A y - tr(A)/N`; positive when `|c| + 2 |A|_F < 1`.
    Polynomial { linear: Vec<f64>, quadratic: Vec<f64> },
}

impl Weight {
    /// A random polynomial weight in dimension `n` with `|c| = 0.3`, `|A|_F = 0.2`.
    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        let mut c: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let cn = crate::maps::norm(&c);
        c.iter_mut().for_each(|v| *v *= 0.3 / cn);
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = rng.sample(StandardNormal);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let an = crate::maps::norm(&a);
        a.iter_mut().for_each(|v| *v *= 0.2 / an);
        Weight::Polynomial { linear: c, quadratic: a }
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        match self {
            Weight::Uniform => 1.0,
            Weight::Polynomial { linear, quadratic } => {
                let n = y.len();
                let mut s = 1.0;
                let mut tr = 0.0;
                for i in 0..n {
                    s += linear[i] * y[i];
                    tr += quadratic[i * n + i];
                    for j in 0..n {
                        s += y[i] * quadratic[i * n + j] * y[j];
                    }
                }
                s - tr / n as f64
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DegreeMethod {
    Integral,
    PreimageCount,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeEntry {
    pub sigma: Vec<f64>,
    pub raw: f64,
    pub degree: i64,
    pub residual: f64,
    /// Smallest sampled `|f - sigma|`.
    pub min_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeReport {
    pub entries: Vec<DegreeEntry>,
    pub method: DegreeMethod,
    /// `max |raw - degree|` over entries.
    pub residual: f64,
    /// `sum |degree|`.
    pub total_abs: i64,
    /// Coarse level of the accepted quadrature run.
    pub level: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegreeConfig {
    pub quadrature: QuadratureConfig,
    /// The image must stay this far from every `sigma`.
    pub min_distance: f64,
    /// Residuals above this trigger one refinement.
    pub refine_above: f64,
    /// Residuals above this after refinement are rejected.
    pub reject_above: f64,
}

impl Default for DegreeConfig {
    fn default() -> Self {
        Self {
            quadrature: QuadratureConfig { base_level: 2, ..Default::default() },
            min_distance: 0.4,
            refine_above: 0.3,
            reject_above: 0.4,
        }
    }
}

fn check_domain(f: &dyn EvaluableMap, patches: &[Patch]) -> Result<usize, TopologyError> {
    let n = f.domain_dim();
    if f.codomain_dim() != n {
        return Err(TopologyError::Domain(format!(
            "degree needs R^{n} -> R^{n}, got codomain R^{}",
            f.codomain_dim()
        )));
    }
    if patches.iter().any(|p| p.dim() + 1 != n || p.ambient_dim() != n) {
        return Err(TopologyError::Domain("slices must be hypersurfaces".into()));
    }
    Ok(n)
}

fn raw_degrees(
    f: &dyn EvaluableMap,
    patches: &[Patch],
    sigmas: &[Vec<f64>],
    weight: &Weight,
    quad: &QuadratureConfig,
) -> Result<(Vec<f64>, Vec<f64>), TopologyError> {
    let n = f.domain_dim();
    let norm = 1.0 / sphere_measure(n - 1);
    let closest: Vec<AtomicU64> =
        sigmas.iter().map(|_| AtomicU64::new(f64::INFINITY.to_bits())).collect();
    let integrand = |node: &Node, out: &mut [f64]| {
        let k = node.k;
        let mut mat = vec![0.0; n * n];
        let mut v = vec![0.0; n];
        for (s, sigma) in sigmas.iter().enumerate() {
            for i in 0..n {
                v[i] = node.value[i] - sigma[i];
            }
            let r = crate::maps::norm(&v);
            // nonnegative f64 bit patterns order like the values
            closest[s].fetch_min(r.to_bits(), Ordering::Relaxed);
            for i in 0..n {
                mat[i * n] = v[i];
                for j in 0..k {
                    mat[i * n + 1 + j] = node.jac[i * k + j];
                }
            }
            let d = super::det(n, &mat);
            let g: Vec<f64> = v.iter().map(|x| x / r).collect();
            out[s] = node.orientation * norm * weight.eval(&g) * d / r.powi(n as i32);
        }
    };
    let r = integrate(f, patches, quad, sigmas.len(), true, None, &integrand)?;
    let dist = closest.iter().map(|a| f64::from_bits(a.load(Ordering::Relaxed))).collect();
    Ok((r.value, dist))
}

/// Degrees of `f|slice` about each point of `sigmas`, by integrating the
/// pulled-back (weighted) volume form of `(f - sigma)/|f - sigma|` and rounding.
pub fn joint_degrees(
    f: &dyn EvaluableMap,
    slice: &Domain,
    sigmas: &[Vec<f64>],
    weight: &Weight,
    cfg: &DegreeConfig,
) -> Result<DegreeReport, TopologyError> {
    let patches = slice.patches();
    let n = check_domain(f, &patches)?;
    if sigmas.iter().any(|s| s.len() != n) {
        return Err(TopologyError::Parameter("points must live in the target space".into()));
    }
    let mut quad = cfg.quadrature.clone();
    let mut refined = false;
    loop {
        let (raw, dist) = raw_degrees(f, &patches, sigmas, weight, &quad)?;
        for (s, &d) in sigmas.iter().zip(&dist) {
            if d < cfg.min_distance {
                return Err(TopologyError::IllConditioned { sigma: s.clone(), distance: d });
            }
        }
        let entries: Vec<DegreeEntry> = sigmas
            .iter()
            .zip(raw.iter().zip(&dist))
            .map(|(s, (&r, &d))| DegreeEntry {
                sigma: s.clone(),
                raw: r,
                degree: r.round() as i64,
                residual: (r - r.round()).abs(),
                min_distance: d,
            })
            .collect();
        let residual = entries.iter().map(|e| e.residual).fold(0.0, f64::max);
        if residual > cfg.refine_above && !refined {
            refined = true;
            quad.base_level += 1;
            continue;
        }
        if residual > cfg.reject_above {
            let worst = entries
                .iter()
                .max_by(|a, b| a.residual.partial_cmp(&b.residual).expect("finite"))
                .expect("nonempty");
            return Err(TopologyError::NonIntegral { raw: worst.raw });
        }
        let total_abs = entries.iter().map(|e| e.degree.abs()).sum();
        return Ok(DegreeReport {
            entries,
            method: DegreeMethod::Integral,
            residual,
            total_abs,
            level: quad.base_level,
        });
    }
}

/// Degree of `f|slice` about a single point.
pub fn degree_integral(
    f: &dyn EvaluableMap,
    slice: &Domain,
    sigma: &[f64],
    weight: &Weight,
    cfg: &DegreeConfig,
) -> Result<DegreeEntry, TopologyError> {
    let mut r = joint_degrees(f, slice, &[sigma.to_vec()], weight, cfg)?;
    Ok(r.entries.remove(0))
}

/// Degree of `f` on the boundary of `[lo, hi]` about `sigma`, as the signed
/// count of Kuhn simplices (with `cells_per_unit` cells per unit length)
/// whose normalized image cone contains a random direction.
pub fn degree_preimage_count<R: Rng>(
    f: &dyn EvaluableMap,
    lo: &[f64],
    hi: &[f64],
    sigma: &[f64],
    cells_per_unit: usize,
    rng: &mut R,
) -> Result<DegreeEntry, TopologyError> {
    let patches = crate::quadrature::box_boundary_patches(lo, hi);
    let n = check_domain(f, &patches)?;
    let k = n - 1;
    let perms = permutations(k);
    // vertex images per face, normalized about sigma
    let mut faces = Vec::with_capacity(patches.len());
    let mut min_distance = f64::INFINITY;
    for p in &patches {
        let Patch::Flat { anchor, free, extent, orientation } = p else {
            unreachable!("box faces are flat")
        };
        let counts: Vec<usize> =
            extent.iter().map(|e| ((e * cells_per_unit as f64).ceil() as usize).max(1)).collect();
        let total: usize = counts.iter().map(|c| c + 1).product();
        let mut vals = Vec::with_capacity(total * n);
        let mut idx = vec![0usize; k];
        let mut x = anchor.clone();
        let mut out = vec![0.0; n];
        for _ in 0..total {
            for j in 0..k {
                x[free[j]] = anchor[free[j]] + extent[j] * idx[j] as f64 / counts[j] as f64;
            }
            f.eval_into(&x, &mut out)?;
            let v: Vec<f64> = out.iter().zip(sigma).map(|(a, b)| a - b).collect();
            let r = crate::maps::norm(&v);
            min_distance = min_distance.min(r);
            vals.extend(v.iter().map(|c| c / r));
            let mut d = k;
            while d > 0 {
                d -= 1;
                idx[d] += 1;
                if idx[d] <= counts[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        faces.push((counts, vals, *orientation));
    }
    if min_distance == 0.0 {
        return Err(TopologyError::IllConditioned { sigma: sigma.to_vec(), distance: 0.0 });
    }
    const ATTEMPTS: usize = 8;
    'attempt: for _ in 0..ATTEMPTS {
        let mut dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let dn = crate::maps::norm(&dir);
        dir.iter_mut().for_each(|v| *v /= dn);
        let mut count = 0.0;
        for (counts, vals, orientation) in &faces {
            let strides: Vec<usize> = {
                let mut s = vec![1usize; k];
                for j in (0..k.saturating_sub(1)).rev() {
                    s[j] = s[j + 1] * (counts[j + 1] + 1);
                }
                s
            };
            let cells: usize = counts.iter().product();
            let mut cidx = vec![0usize; k];
            for _ in 0..cells {
                let base: usize = cidx.iter().zip(&strides).map(|(a, b)| a * b).sum();
                for (perm, psign) in &perms {
                    let mut vid = base;
                    let mut mat = vec![0.0; n * n];
                    for c in 0..n {
                        if c > 0 {
                            vid += strides[perm[c - 1]];
                        }
                        for i in 0..n {
                            mat[i * n + c] = vals[vid * n + i];
                        }
                    }
                    // a flat image cone has measure zero and is missed almost surely
                    let Some((lam, det)) = solve(n, &mat, &dir) else {
                        continue;
                    };
                    if lam.iter().all(|&l| l > 0.0) {
                        count += det.signum() * psign * orientation;
                    } else if lam.iter().any(|&l| l == 0.0) {
                        continue 'attempt;
                    }
                }
                let mut d = k;
                while d > 0 {
                    d -= 1;
                    cidx[d] += 1;
                    if cidx[d] < counts[d] {
                        break;
                    }
                    cidx[d] = 0;
                }
            }
        }
        return Ok(DegreeEntry {
            sigma: sigma.to_vec(),
            raw: count,
            degree: count as i64,
            residual: 0.0,
            min_distance,
        });
    }
    Err(TopologyError::RegularValue {
        attempts: ATTEMPTS,
        reason: "every sampled direction met a degenerate simplex".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{AffineMap, ConstantMap, SkeletonRetraction};
    use rand::SeedableRng;
    use serde_json::json;

    /// `z -> z^k` on the unit circle, extended 0-homogeneously.
    struct Power(i32);

    impl EvaluableMap for Power {
        fn domain_dim(&self) -> usize {
            2
        }
        fn codomain_dim(&self) -> usize {
            2
        }
        fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), crate::error::MapError> {
            let t = x[1].atan2(x[0]) * self.0 as f64;
            out[0] = t.cos();
            out[1] = t.sin();
            Ok(())
        }
        fn derivative_bound(&self) -> crate::maps::DerivativeBound {
            crate::maps::DerivativeBound::Lipschitz(self.0.abs() as f64 * 2.0)
        }
        fn descriptor(&self) -> crate::maps::MapDescriptor {
            crate::maps::MapDescriptor { kind: "power".into(), parameters: json!(self.0) }
        }
    }

    fn circle() -> Domain {
        Domain::Sphere { center: vec![0.0, 0.0], radius: 1.0 }
    }

    #[test]
    fn identity_and_angle_doubling() {
        let cfg = DegreeConfig::default();
        let id = AffineMap { dim: 2, matrix: vec![1.0, 0.0, 0.0, 1.0], offset: vec![0.0, 0.0] };
        let e = degree_integral(&id, &circle(), &[0.0, 0.0], &Weight::Uniform, &cfg).unwrap();
        assert_eq!(e.degree, 1);
        assert!(e.residual < 1e-10);
        for k in [-3, -1, 2, 3] {
            let e = degree_integral(&Power(k), &circle(), &[0.0, 0.0], &Weight::Uniform, &cfg)
                .unwrap();
            assert_eq!(e.degree, k as i64);
        }
    }

    #[test]
    fn weights_agree() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let u = SkeletonRetraction::new(3).unwrap();
        let slice = Domain::cube_shell(vec![0.5; 3], 1.5);
        let cfg = DegreeConfig::default();
        let a = degree_integral(&u, &slice, &[0.5; 3], &Weight::random(3, &mut rng), &cfg).unwrap();
        let b = degree_integral(&u, &slice, &[0.5; 3], &Weight::random(3, &mut rng), &cfg).unwrap();
        assert_eq!(a.degree, 1);
        assert!((a.raw - b.raw).abs() < 0.2);
    }

    #[test]
    fn reversed_orientation_negates_exactly() {
        let u = SkeletonRetraction::new(2).unwrap();
        let slice = Domain::cube_shell(vec![1.0, 1.0], 3.5);
        let flipped = Domain::Patches(
            slice
                .patches()
                .into_iter()
                .map(|p| match p {
                    Patch::Flat { anchor, free, extent, orientation } => {
                        Patch::Flat { anchor, free, extent, orientation: -orientation }
                    }
                    other => other,
                })
                .collect(),
        );
        let sigmas = vec![vec![0.5, 0.5], vec![1.5, 0.5], vec![0.5, 1.5], vec![1.5, 1.5]];
        let cfg = DegreeConfig::default();
        let a = joint_degrees(&u, &slice, &sigmas, &Weight::Uniform, &cfg).unwrap();
        let b = joint_degrees(&u, &flipped, &sigmas, &Weight::Uniform, &cfg).unwrap();
        for (x, y) in a.entries.iter().zip(&b.entries) {
            assert_eq!(x.degree, 1);
            assert_eq!(x.raw, -y.raw);
        }
        assert_eq!(a.total_abs, 4);
    }

    #[test]
    fn constant_and_ill_conditioned() {
        let c = ConstantMap { dim: 2, value: vec![3.0, 3.0] };
        let cfg = DegreeConfig::default();
        let e = degree_integral(&c, &circle(), &[0.0, 0.0], &Weight::Uniform, &cfg).unwrap();
        assert_eq!(e.degree, 0);
        let r = degree_integral(&c, &circle(), &[3.1, 3.0], &Weight::Uniform, &cfg);
        assert!(matches!(r, Err(TopologyError::IllConditioned { .. })));
    }

    #[test]
    fn preimage_count_matches_integral() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for n in [2, 3] {
            let u = SkeletonRetraction::new(n).unwrap();
            let lo = vec![-1.25; n];
            let hi = vec![2.25; n];
            for sigma in [vec![0.5; n], vec![1.5; n], vec![3.5; n]] {
                let e = degree_preimage_count(&u, &lo, &hi, &sigma, 16, &mut rng).unwrap();
                let expect = if sigma[0] < 2.0 { 1 } else { 0 };
                assert_eq!(e.degree, expect, "n={n} sigma={sigma:?}");
            }
        }
        let e = degree_preimage_count(&Power(3), &[-1.0, -1.0], &[1.0, 1.0], &[0.0, 0.0], 64, &mut rng)
            .unwrap();
        assert_eq!(e.degree, 3);
    }
}
