use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::permutations;
use crate::error::TopologyError;
use crate::maps::EvaluableMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfConfig {
    /// Grid cells per edge of `[-1/2, 1/2]^4`; a power of two keeps vertices exact.
    pub resolution: usize,
    /// Independent regular-value pairs that must agree.
    pub pairs: usize,
    /// Regular-value draws allowed before giving up.
    pub attempts: usize,
}

impl Default for HopfConfig {
    fn default() -> Self {
        Self { resolution: 32, pairs: 2, attempts: 12 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreimageStats {
    pub segments: usize,
    /// Closed polygonal components.
    pub components: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HopfReport {
    pub invariant: i64,
    /// One `[p, q]` pair per accepted measurement.
    pub regular_values: Vec<[Vec<f64>; 2]>,
    /// Linking number before rounding, per pair.
    pub raw: Vec<f64>,
    pub stats: Vec<[PreimageStats; 2]>,
    pub resolution: usize,
    /// Draws rejected as degenerate or ambiguous.
    pub rejected: usize,
}

type Segment = [[f64; 3]; 2];

/// Gauss linking number of two closed oriented polygons given as segment
/// lists, summing the exact solid-angle contribution of each segment pair.
pub fn linking_number(a: &[Segment], b: &[Segment]) -> f64 {
    fn sub(x: &[f64; 3], y: &[f64; 3]) -> [f64; 3] {
        [x[0] - y[0], x[1] - y[1], x[2] - y[2]]
    }
    fn cross(x: &[f64; 3], y: &[f64; 3]) -> [f64; 3] {
        [x[1] * y[2] - x[2] * y[1], x[2] * y[0] - x[0] * y[2], x[0] * y[1] - x[1] * y[0]]
    }
    fn dot(x: &[f64; 3], y: &[f64; 3]) -> f64 {
        x[0] * y[0] + x[1] * y[1] + x[2] * y[2]
    }
    fn unit(x: [f64; 3]) -> Option<[f64; 3]> {
        let n = dot(&x, &x).sqrt();
        (n > 0.0).then(|| [x[0] / n, x[1] / n, x[2] / n])
    }
    let pair = |s: &Segment, t: &Segment| -> f64 {
        let (p1, p2, p3, p4) = (&s[0], &s[1], &t[0], &t[1]);
        let r13 = sub(p3, p1);
        let r14 = sub(p4, p1);
        let r23 = sub(p3, p2);
        let r24 = sub(p4, p2);
        let (Some(n1), Some(n2), Some(n3), Some(n4)) = (
            unit(cross(&r13, &r14)),
            unit(cross(&r14, &r24)),
            unit(cross(&r24, &r23)),
            unit(cross(&r23, &r13)),
        ) else {
            return 0.0;
        };
        let asin = |v: f64| v.clamp(-1.0, 1.0).asin();
        let omega = asin(dot(&n1, &n2)) + asin(dot(&n2, &n3)) + asin(dot(&n3, &n4))
            + asin(dot(&n4, &n1));
        let r34 = sub(p4, p3);
        let r12 = sub(p2, p1);
        let s = dot(&cross(&r34, &r12), &r13);
        omega * s.signum()
    };
    let total: f64 = a.par_iter().map(|s| b.iter().map(|t| pair(s, t)).sum::<f64>()).sum();
    total / (4.0 * PI)
}

/// Boundary vertex values of `f` on a `k^4` grid of `[-1/2,1/2]^4`, stored per facet.
struct BoundaryGrid {
    k: usize,
    /// `(axis, side in {0, k}, values with 3 entries per vertex)`.
    facets: Vec<(usize, usize, Vec<f64>)>,
}

impl BoundaryGrid {
    fn coord(&self, i: usize) -> f64 {
        i as f64 / self.k as f64 - 0.5
    }

    fn free(axis: usize) -> [usize; 3] {
        let mut f = [0; 3];
        let mut j = 0;
        for a in 0..4 {
            if a != axis {
                f[j] = a;
                j += 1;
            }
        }
        f
    }

    fn build(f: &dyn EvaluableMap, k: usize) -> Result<Self, TopologyError> {
        let facets: Result<Vec<_>, TopologyError> = (0..8)
            .into_par_iter()
            .map(|fi| {
                let (axis, side) = (fi / 2, if fi % 2 == 0 { 0 } else { k });
                let free = Self::free(axis);
                let m = k + 1;
                let mut vals = vec![0.0; m * m * m * 3];
                let mut x = [0.0; 4];
                x[axis] = side as f64 / k as f64 - 0.5;
                let mut out = [0.0; 3];
                for a in 0..m {
                    for b in 0..m {
                        for c in 0..m {
                            x[free[0]] = a as f64 / k as f64 - 0.5;
                            x[free[1]] = b as f64 / k as f64 - 0.5;
                            x[free[2]] = c as f64 / k as f64 - 0.5;
                            f.eval_into(&x, &mut out)?;
                            let i = ((a * m + b) * m + c) * 3;
                            vals[i..i + 3].copy_from_slice(&out);
                        }
                    }
                }
                Ok((axis, side, vals))
            })
            .collect();
        Ok(Self { k, facets: facets? })
    }
}

struct Extraction {
    segments: Vec<[[f64; 4]; 2]>,
    stats: PreimageStats,
}

/// Piecewise-linear preimage of the regular value `p` as oriented segments in
/// `R^4`, or `None` when the triangulation meets `p` degenerately.
fn extract(grid: &BoundaryGrid, p: &[f64; 3]) -> Option<Extraction> {
    // (p, e1, e2) is a positive frame of R^3; g = (f.e1, f.e2) vanishes on f^{-1}(+-p)
    let helper = if p[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let d: f64 = helper.iter().zip(p).map(|(a, b)| a * b).sum();
    let mut e1 = [helper[0] - d * p[0], helper[1] - d * p[1], helper[2] - d * p[2]];
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    e1.iter_mut().for_each(|v| *v /= n1);
    let e2 = [
        p[1] * e1[2] - p[2] * e1[1],
        p[2] * e1[0] - p[0] * e1[2],
        p[0] * e1[1] - p[1] * e1[0],
    ];
    let k = grid.k;
    let m = k + 1;
    let perms = permutations(3);
    let gid = |idx: &[usize; 4]| -> u64 {
        (((idx[3] * m + idx[2]) * m + idx[1]) * m + idx[0]) as u64
    };
    let per_facet: Vec<Option<Vec<([u64; 3], [u64; 3], [[f64; 4]; 2])>>> = grid
        .facets
        .par_iter()
        .map(|(axis, side, vals)| {
            let free = BoundaryGrid::free(*axis);
            let orient = if *side == 0 { -1.0 } else { 1.0 } * if axis % 2 == 0 { 1.0 } else { -1.0 };
            let mut segs = Vec::new();
            let local = |l: [usize; 3]| -> ([usize; 4], usize) {
                let mut g = [0; 4];
                g[*axis] = *side;
                for j in 0..3 {
                    g[free[j]] = l[j];
                }
                (g, (l[0] * m + l[1]) * m + l[2])
            };
            for a in 0..k {
                for b in 0..k {
                    for c in 0..k {
                        for (perm, _) in &perms {
                            let mut l = [a, b, c];
                            let mut verts = Vec::with_capacity(4);
                            for step in 0..4 {
                                if step > 0 {
                                    l[perm[step - 1]] += 1;
                                }
                                let (g4, li) = local(l);
                                let fv = &vals[li * 3..li * 3 + 3];
                                let g = [
                                    fv[0] * e1[0] + fv[1] * e1[1] + fv[2] * e1[2],
                                    fv[0] * e2[0] + fv[1] * e2[1] + fv[2] * e2[2],
                                ];
                                let fp = fv[0] * p[0] + fv[1] * p[1] + fv[2] * p[2];
                                verts.push((gid(&g4), g4, g, fp));
                            }
                            let all = |i: usize, pos: bool| {
                                verts.iter().all(|v| if pos { v.2[i] > 0.0 } else { v.2[i] < 0.0 })
                            };
                            if all(0, true) || all(0, false) || all(1, true) || all(1, false) {
                                continue;
                            }
                            let mut hits = Vec::with_capacity(2);
                            for skip in 0..4 {
                                let mut tri: Vec<&(u64, [usize; 4], [f64; 2], f64)> = verts
                                    .iter()
                                    .enumerate()
                                    .filter(|(i, _)| *i != skip)
                                    .map(|(_, v)| v)
                                    .collect();
                                tri.sort_by_key(|v| v.0);
                                let cr = |u: &[f64; 2], v: &[f64; 2]| u[0] * v[1] - u[1] * v[0];
                                let la = cr(&tri[1].2, &tri[2].2);
                                let lb = cr(&tri[2].2, &tri[0].2);
                                let lc = cr(&tri[0].2, &tri[1].2);
                                let pos = la > 0.0 && lb > 0.0 && lc > 0.0;
                                let neg = la < 0.0 && lb < 0.0 && lc < 0.0;
                                if !(pos || neg) {
                                    let zero = la == 0.0 || lb == 0.0 || lc == 0.0;
                                    let rest_same = [la, lb, lc]
                                        .iter()
                                        .filter(|v| **v != 0.0)
                                        .all(|v| v.signum() == (la + lb + lc).signum());
                                    if zero && rest_same {
                                        return None;
                                    }
                                    continue;
                                }
                                let s = la + lb + lc;
                                let lam = [la / s, lb / s, lc / s];
                                let mut x = [0.0; 4];
                                let mut fp = 0.0;
                                for (w, v) in lam.iter().zip(&tri) {
                                    for i in 0..4 {
                                        x[i] += w * grid.coord(v.1[i]);
                                    }
                                    fp += w * v.3;
                                }
                                hits.push(([tri[0].0, tri[1].0, tri[2].0], x, fp));
                            }
                            match hits.len() {
                                0 => continue,
                                2 => {}
                                _ => return None,
                            }
                            if hits[0].2 + hits[1].2 <= 0.0 {
                                continue;
                            }
                            // gradient of g in local coordinates: column perm[j] is
                            // g(v_{j+1}) - g(v_j); the tangent is grad g1 x grad g2
                            let mut gm = [[0.0; 3]; 2];
                            for j in 0..3 {
                                for r in 0..2 {
                                    gm[r][perm[j]] = verts[j + 1].2[r] - verts[j].2[r];
                                }
                            }
                            let t = [
                                gm[0][1] * gm[1][2] - gm[0][2] * gm[1][1],
                                gm[0][2] * gm[1][0] - gm[0][0] * gm[1][2],
                                gm[0][0] * gm[1][1] - gm[0][1] * gm[1][0],
                            ];
                            let dir: f64 = (0..3)
                                .map(|j| t[j] * (hits[1].1[free[j]] - hits[0].1[free[j]]))
                                .sum::<f64>()
                                * orient;
                            let (h0, h1) = if dir >= 0.0 { (0, 1) } else { (1, 0) };
                            segs.push((hits[h0].0, hits[h1].0, [hits[h0].1, hits[h1].1]));
                        }
                    }
                }
            }
            Some(segs)
        })
        .collect();
    let mut segments = Vec::new();
    let mut keys: HashMap<[u64; 3], usize> = HashMap::new();
    let mut parent: Vec<usize> = Vec::new();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let mut uses: Vec<usize> = Vec::new();
    for facet in per_facet {
        for (ka, kb, seg) in facet? {
            let mut id = |key: [u64; 3], parent: &mut Vec<usize>, uses: &mut Vec<usize>| {
                *keys.entry(key).or_insert_with(|| {
                    parent.push(parent.len());
                    uses.push(0);
                    parent.len() - 1
                })
            };
            let ia = id(ka, &mut parent, &mut uses);
            let ib = id(kb, &mut parent, &mut uses);
            uses[ia] += 1;
            uses[ib] += 1;
            let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
            if ra != rb {
                parent[ra] = rb;
            }
            segments.push(seg);
        }
    }
    if uses.iter().any(|&u| u != 2) {
        return None;
    }
    let components = (0..parent.len()).filter(|&i| find(&mut parent, i) == i).count();
    Some(Extraction { stats: PreimageStats { segments: segments.len(), components }, segments })
}

/// Orthonormal basis of `pole^perp` making stereographic projection from
/// `pole` orientation preserving for the outward-normal-first orientation.
fn stereo_basis(pole: &[f64; 4]) -> [[f64; 4]; 3] {
    let mut basis: Vec<[f64; 4]> = Vec::with_capacity(3);
    for e in 0..4 {
        let mut v = [0.0; 4];
        v[e] = 1.0;
        let mut against = vec![*pole];
        against.extend(basis.iter().copied());
        for b in &against {
            let d: f64 = (0..4).map(|i| v[i] * b[i]).sum();
            for i in 0..4 {
                v[i] -= d * b[i];
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.3 {
            basis.push(v.map(|x| x / n));
        }
        if basis.len() == 3 {
            break;
        }
    }
    let mut rows = Vec::with_capacity(16);
    rows.extend_from_slice(pole);
    for b in &basis {
        rows.extend_from_slice(b);
    }
    // at the antipode the outward normal is -pole, so (pole, b) must be negative
    if super::det(4, &rows) > 0.0 {
        basis[2] = basis[2].map(|x| -x);
    }
    [basis[0], basis[1], basis[2]]
}

fn project(x: &[f64; 4], pole: &[f64; 4], basis: &[[f64; 4]; 3]) -> [f64; 3] {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let s: Vec<f64> = x.iter().map(|v| v / n).collect();
    let sp: f64 = (0..4).map(|i| s[i] * pole[i]).sum();
    let mut y = [0.0; 3];
    for (j, b) in basis.iter().enumerate() {
        y[j] = (0..4).map(|i| s[i] * b[i]).sum::<f64>() / (1.0 - sp);
    }
    y
}

fn random_unit<R: Rng>(rng: &mut R) -> [f64; 3] {
    let mut v = [0.0f64; 3];
    for c in v.iter_mut() {
        *c = rng.sample(StandardNormal);
    }
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    v.map(|c| c / n)
}

/// Hopf invariant of `f : boundary of [-1/2,1/2]^4 -> S^2`, as the linking
/// number of the preimages of two random regular values, checked on
/// `cfg.pairs` independent pairs. Domain dimension `4n` with `n >= 2` is
/// not supported.
pub fn hopf_invariant<R: Rng>(
    f: &dyn EvaluableMap,
    cfg: &HopfConfig,
    rng: &mut R,
) -> Result<HopfReport, TopologyError> {
    let n4 = f.domain_dim();
    if n4 % 4 != 0 || f.codomain_dim() != n4 / 2 + 1 {
        return Err(TopologyError::Domain(format!(
            "expected a map R^4n -> R^(2n+1), got R^{n4} -> R^{}",
            f.codomain_dim()
        )));
    }
    if n4 != 4 {
        return Err(TopologyError::Unsupported(format!(
            "preimage meshes in dimension {} are not implemented",
            n4 - 1
        )));
    }
    if cfg.resolution < 2 || cfg.pairs == 0 {
        return Err(TopologyError::Parameter("need resolution >= 2 and pairs >= 1".into()));
    }
    let grid = BoundaryGrid::build(f, cfg.resolution)?;
    let mut report = HopfReport {
        invariant: 0,
        regular_values: Vec::new(),
        raw: Vec::new(),
        stats: Vec::new(),
        resolution: cfg.resolution,
        rejected: 0,
    };
    let mut attempts = 0;
    while report.raw.len() < cfg.pairs {
        if attempts >= cfg.attempts {
            return Err(TopologyError::RegularValue {
                attempts,
                reason: format!(
                    "only {} of {} pairs gave clean closed preimages",
                    report.raw.len(),
                    cfg.pairs
                ),
            });
        }
        attempts += 1;
        let p = random_unit(rng);
        let q = random_unit(rng);
        let (Some(ep), Some(eq)) = (extract(&grid, &p), extract(&grid, &q)) else {
            report.rejected += 1;
            continue;
        };
        // pole: the vertex whose value is farthest from both regular values
        let mut pole = [0.0, 0.0, 0.0, 1.0];
        let mut best = -1.0;
        for (axis, side, vals) in &grid.facets {
            let free = BoundaryGrid::free(*axis);
            let m = grid.k + 1;
            for (li, fv) in vals.chunks_exact(3).enumerate() {
                let dist = |r: &[f64; 3]| {
                    ((fv[0] - r[0]).powi(2) + (fv[1] - r[1]).powi(2) + (fv[2] - r[2]).powi(2))
                        .sqrt()
                };
                let score = dist(&p).min(dist(&q));
                if score > best {
                    best = score;
                    let l = [li / (m * m), (li / m) % m, li % m];
                    let mut x = [0.0; 4];
                    x[*axis] = grid.coord(*side);
                    for j in 0..3 {
                        x[free[j]] = grid.coord(l[j]);
                    }
                    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    pole = x.map(|v| v / nx);
                }
            }
        }
        let basis = stereo_basis(&pole);
        let proj = |segs: &[[[f64; 4]; 2]]| -> Vec<Segment> {
            segs.iter()
                .map(|s| [project(&s[0], &pole, &basis), project(&s[1], &pole, &basis)])
                .collect()
        };
        let raw = linking_number(&proj(&ep.segments), &proj(&eq.segments));
        if (raw - raw.round()).abs() > 0.25 {
            report.rejected += 1;
            continue;
        }
        report.regular_values.push([p.to_vec(), q.to_vec()]);
        report.raw.push(raw);
        report.stats.push([ep.stats, eq.stats]);
    }
    let first = report.raw[0].round() as i64;
    if report.raw.iter().any(|r| r.round() as i64 != first) {
        return Err(TopologyError::RegularValue {
            attempts,
            reason: format!("pairs disagree: {:?}", report.raw),
        });
    }
    report.invariant = first;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::{ConstantMap, HopfFibration, WhiteheadBoundary};
    use rand::SeedableRng;

    fn circle(center: [f64; 3], u: [f64; 3], v: [f64; 3], n: usize) -> Vec<Segment> {
        let pt = |t: f64| {
            let (c, s) = (t.cos(), t.sin());
            [
                center[0] + c * u[0] + s * v[0],
                center[1] + c * u[1] + s * v[1],
                center[2] + c * u[2] + s * v[2],
            ]
        };
        (0..n)
            .map(|i| {
                let a = 2.0 * PI * i as f64 / n as f64;
                let b = 2.0 * PI * (i + 1) as f64 / n as f64;
                [pt(a), pt(b)]
            })
            .collect()
    }

    /// Midpoint-rule Gauss double integral.
    fn gauss_integral(a: &[Segment], b: &[Segment]) -> f64 {
        let mut s = 0.0;
        for x in a {
            for y in b {
                let m1: Vec<f64> = (0..3).map(|i| 0.5 * (x[0][i] + x[1][i])).collect();
                let m2: Vec<f64> = (0..3).map(|i| 0.5 * (y[0][i] + y[1][i])).collect();
                let d1: Vec<f64> = (0..3).map(|i| x[1][i] - x[0][i]).collect();
                let d2: Vec<f64> = (0..3).map(|i| y[1][i] - y[0][i]).collect();
                let r: Vec<f64> = (0..3).map(|i| m1[i] - m2[i]).collect();
                let c = [
                    d1[1] * d2[2] - d1[2] * d2[1],
                    d1[2] * d2[0] - d1[0] * d2[2],
                    d1[0] * d2[1] - d1[1] * d2[0],
                ];
                let rn = (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt();
                s += (r[0] * c[0] + r[1] * c[1] + r[2] * c[2]) / rn.powi(3);
            }
        }
        s / (4.0 * PI)
    }

    #[test]
    fn linking_of_round_circles_matches_gauss_integral() {
        let a = circle([0.0; 3], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], 400);
        let b = circle([1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], 400);
        let exact = linking_number(&a, &b);
        let oracle = gauss_integral(&a, &b);
        assert!((exact - oracle).abs() < 1e-3, "{exact} vs {oracle}");
        assert!((exact.abs() - 1.0).abs() < 1e-9);
        let rev: Vec<Segment> = b.iter().rev().map(|s| [s[1], s[0]]).collect();
        assert!((linking_number(&a, &rev) + exact).abs() < 1e-9);
        let far = circle([5.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0], 50);
        assert!(linking_number(&a, &far).abs() < 1e-9);
    }

    #[test]
    fn constant_map_has_invariant_zero() {
        let c = ConstantMap { dim: 4, value: vec![0.0, 0.0, 1.0] };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let r = hopf_invariant(&c, &HopfConfig { resolution: 4, ..Default::default() }, &mut rng)
            .unwrap();
        assert_eq!(r.invariant, 0);
        assert!(r.stats.iter().all(|s| s[0].segments == 0));
    }

    #[test]
    fn hopf_fibration_has_invariant_one() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let cfg = HopfConfig { resolution: 16, pairs: 3, ..Default::default() };
        let r = hopf_invariant(&HopfFibration, &cfg, &mut rng).unwrap();
        assert_eq!(r.invariant, 1, "{r:?}");
        for s in &r.stats {
            assert_eq!(s[0].components, 1);
            assert_eq!(s[1].components, 1);
        }
    }

    #[test]
    fn whitehead_boundary_has_invariant_two() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let cfg = HopfConfig { resolution: 32, pairs: 3, ..Default::default() };
        let w = WhiteheadBoundary::new(1).unwrap();
        let r = hopf_invariant(&w, &cfg, &mut rng).unwrap();
        assert_eq!(r.invariant, 2, "{r:?}");
    }

    #[test]
    fn higher_dimensions_are_unsupported() {
        let w = WhiteheadBoundary::new(2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let r = hopf_invariant(&w, &HopfConfig::default(), &mut rng);
        assert!(matches!(r, Err(TopologyError::Unsupported(_))));
    }
}
