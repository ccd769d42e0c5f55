//! Cross-module properties: quadrature additivity and projections, shell
//! averaging, conical normalization, degree stability and Hopf additivity
//! under the cylinder glue.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelgrid::error::MapError;
use skelgrid::lattice::BlockDecomposition;
use skelgrid::maps::{
    AffineMap, Composed, CubeProjection, CylinderGlue, DerivativeBound, EvaluableMap, GlueTarget,
    HopfFibration, KinkLattice, LevelSetManifold, MapDescriptor, SingularSet, SkeletonRetraction,
};
use skelgrid::quadrature::{energy, shell_slice_search, Domain, QuadratureConfig};
use skelgrid::topology::{
    conical_estimate_check, hopf_invariant, joint_degrees, Cone, DegreeConfig, HopfConfig, Weight,
};

fn cfg(level: u32) -> QuadratureConfig {
    QuadratureConfig { base_level: level, ..Default::default() }
}

#[test]
fn energy_is_additive_over_blocks() {
    let u = SkeletonRetraction::new(2).unwrap();
    let dec = BlockDecomposition::new(2, 1).unwrap();
    let whole = energy(&u, &Domain::Box { lo: vec![0.0; 2], hi: vec![5.0; 2] }, 1.0, &cfg(3)).unwrap();
    let (mut sum, mut err) = (0.0, whole.error_bound);
    for alpha in dec.all_indices() {
        let (lo, hi) = dec.block_corners(&alpha);
        let d = Domain::Box {
            lo: lo.iter().map(|&v| v as f64).collect(),
            hi: hi.iter().map(|&v| v as f64).collect(),
        };
        let e = energy(&u, &d, 1.0, &cfg(3)).unwrap();
        sum += e.value;
        err += e.error_bound;
    }
    assert!((whole.value - sum).abs() <= err, "{} vs {sum} (err {err})", whole.value);
}

#[test]
fn block_projection_lowers_skeleton_energy() {
    let u = SkeletonRetraction::new(2).unwrap();
    let dom = Domain::Box { lo: vec![0.0; 2], hi: vec![5.0; 2] };
    let base = energy(&u, &dom, 1.0, &cfg(2)).unwrap();
    for alpha in [[0i8, 0], [1, 0], [1, 1], [-2, 0], [2, -1], [2, 2]] {
        let th = CubeProjection::for_block(1, &alpha).unwrap();
        let e = energy(&Composed { outer: th, inner: u }, &dom, 1.0, &cfg(2)).unwrap();
        assert!(e.value <= base.value + e.error_bound + base.error_bound, "{alpha:?}: {}", e.value);
    }
}

#[test]
fn radial_projection_is_not_a_contraction_near_corners() {
    // a rank-one map sweeping diagonally past a corner gains energy; the
    // pointwise damping bound only holds along coordinate axes
    let th = CubeProjection::new(vec![0.0, 0.0], 1.0).unwrap();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let v = AffineMap { dim: 2, matrix: vec![s, 0.0, -s, 0.0], offset: vec![0.51, 0.51] };
    let dom = Domain::Box { lo: vec![-0.02, 0.0], hi: vec![0.02, 1.0] };
    let a = energy(&v, &dom, 1.0, &cfg(3)).unwrap();
    let b = energy(&Composed { outer: th, inner: v }, &dom, 1.0, &cfg(3)).unwrap();
    assert!((a.value - 0.04).abs() < 1e-9);
    assert!(b.value > 1.3 * a.value, "{} vs {}", b.value, a.value);
}

#[test]
fn best_shell_is_below_the_annulus_average() {
    // averaging shells over t in (3l, 5l) sweeps the annulus at speed 1/2, so
    // mean_t E(shell) <= (1/l) int_annulus |Du|^p
    let u = SkeletonRetraction::new(2).unwrap();
    for l in [1usize, 2] {
        let c = 2.5 * l as f64;
        let search = shell_slice_search(&u, l, 1.0, 64, &cfg(3)).unwrap();
        let annulus = Domain::Annulus { center: vec![c; 2], inner: 1.5 * l as f64, outer: 2.5 * l as f64 };
        let bulk = energy(&u, &annulus, 1.0, &cfg(3)).unwrap();
        let bound = bulk.value / l as f64;
        let slack = search.energy.error_bound + bulk.error_bound / l as f64;
        assert!(search.energy.value <= bound + slack, "l={l}: {} > {bound}", search.energy.value);
        assert!(search.mean <= 1.05 * bound, "l={l}: mean {} vs {bound}", search.mean);
    }
}

#[test]
fn halving_the_cone_doubles_the_normalization() {
    let u = SkeletonRetraction::new(2).unwrap();
    let sigmas = BlockDecomposition::new(2, 1).unwrap().central_centers();
    let slice = Domain::cube_shell(vec![2.5; 2], skelgrid::experiments::first_shells(1, 1)[0]);
    let axis = vec![1.0 / 2f64.sqrt(); 2];
    let cfg = DegreeConfig::default();
    let mut prev: Option<(f64, f64)> = None;
    for half_angle in [PI / 2.0, PI / 4.0, PI / 8.0] {
        let cone = Cone::Circular { axis: axis.clone(), half_angle };
        let r = conical_estimate_check(&u, &slice, &sigmas, &cone, &cfg).unwrap();
        let factor = r.rhs / r.preimage_energy;
        if let Some((f0, rhs0)) = prev {
            assert!((factor - 2.0 * f0).abs() <= 1e-12 * factor);
            // the preimage shrinks with the cone, but never below half
            assert!(r.rhs >= rhs0 - r.preimage_energy_error * factor, "{} < {rhs0}", r.rhs);
        }
        prev = Some((factor, r.rhs));
    }
}

/// `u + eps * g` with a smooth bounded `g`, sharing `u`'s singular data.
struct Perturbed {
    u: SkeletonRetraction,
    eps: f64,
}

impl EvaluableMap for Perturbed {
    fn domain_dim(&self) -> usize {
        self.u.domain_dim()
    }
    fn codomain_dim(&self) -> usize {
        self.u.codomain_dim()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        self.u.eval_into(x, out)?;
        let n = x.len() as f64;
        for (i, o) in out.iter_mut().enumerate() {
            *o += self.eps * (3.0 * x[i] + x[(i + 1) % x.len()]).sin() / n.sqrt();
        }
        Ok(())
    }
    fn singular_set(&self) -> SingularSet {
        self.u.singular_set()
    }
    fn derivative_bound(&self) -> DerivativeBound {
        self.u.derivative_bound()
    }
    fn kinks(&self) -> Option<KinkLattice> {
        self.u.kinks()
    }
    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor { kind: "perturbed".into(), parameters: serde_json::json!({ "eps": self.eps }) }
    }
}

#[test]
fn degrees_survive_small_perturbations() {
    // |eps g| <= 0.2 keeps the image at least 0.3 from every center
    let cfg = DegreeConfig { min_distance: 0.25, ..Default::default() };
    for n in [2usize, 3] {
        let u = SkeletonRetraction::new(n).unwrap();
        let l = 1;
        let sigmas = BlockDecomposition::new(n, l).unwrap().central_centers();
        let slice = Domain::cube_shell(vec![2.5; n], skelgrid::experiments::first_shells(l, 1)[0]);
        let base = joint_degrees(&u, &slice, &sigmas, &Weight::Uniform, &cfg).unwrap();
        for eps in [0.05, 0.2] {
            let f = Perturbed { u, eps };
            let r = joint_degrees(&f, &slice, &sigmas, &Weight::Uniform, &cfg).unwrap();
            for (a, b) in r.entries.iter().zip(&base.entries) {
                assert_eq!(a.degree, b.degree, "N={n} eps={eps}");
                assert!(a.min_distance >= 0.3 - 1e-9);
            }
        }
    }
}

/// Hopf map after a degree `+-1` collapse of `[0,1]^3` onto `S^3`; constant
/// `(0, 0, -1)` on the boundary.
struct CollapsedHopf {
    reflect: bool,
}

impl EvaluableMap for CollapsedHopf {
    fn domain_dim(&self) -> usize {
        3
    }
    fn codomain_dim(&self) -> usize {
        3
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        let mut y: Vec<f64> = x.iter().map(|v| v - 0.5).collect();
        if self.reflect {
            y[0] = -y[0];
        }
        let r = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let q = if r >= 0.5 {
            [0.0, 0.0, 0.0, 1.0]
        } else {
            // inverse stereographic projection of 2y / (1 - 2|y|_inf)
            let z: Vec<f64> = y.iter().map(|v| 2.0 * v / (1.0 - 2.0 * r)).collect();
            let z2: f64 = z.iter().map(|v| v * v).sum();
            [2.0 * z[0] / (1.0 + z2), 2.0 * z[1] / (1.0 + z2), 2.0 * z[2] / (1.0 + z2), (z2 - 1.0) / (z2 + 1.0)]
        };
        HopfFibration.eval_into(&q, out)
    }
    fn derivative_bound(&self) -> DerivativeBound {
        DerivativeBound::Lipschitz(f64::INFINITY)
    }
    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor { kind: "collapsed_hopf".into(), parameters: serde_json::json!({ "reflect": self.reflect }) }
    }
}

fn glued_invariant(u: Arc<dyn EvaluableMap>, v: Arc<dyn EvaluableMap>, seed: u64) -> i64 {
    let glue = CylinderGlue::new(u, v, 0.01, GlueTarget::Sphere, 33).unwrap();
    // move the boundary of [0,1]^4 to the boundary of [-1/2,1/2]^4
    let shift = AffineMap {
        dim: 4,
        matrix: (0..16).map(|k| if k % 5 == 0 { 1.0 } else { 0.0 }).collect(),
        offset: vec![0.5; 4],
    };
    let w = Composed { outer: glue, inner: shift };
    let cfg = HopfConfig { resolution: 32, pairs: 2, ..Default::default() };
    hopf_invariant(&w, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().invariant
}

#[test]
fn hopf_invariant_adds_under_the_cylinder_glue() {
    let plus: Arc<dyn EvaluableMap> = Arc::new(CollapsedHopf { reflect: false });
    let minus: Arc<dyn EvaluableMap> = Arc::new(CollapsedHopf { reflect: true });
    let pole: Arc<dyn EvaluableMap> = Arc::new(skelgrid::maps::ConstantMap { dim: 3, value: vec![0.0, 0.0, -1.0] });
    let parts = [
        glued_invariant(plus.clone(), pole.clone(), 1),
        glued_invariant(pole.clone(), minus.clone(), 2),
        glued_invariant(plus.clone(), minus.clone(), 3),
        glued_invariant(plus.clone(), plus.clone(), 4),
        glued_invariant(pole.clone(), pole, 5),
    ];
    let [p, m, pm, pp, oo] = parts;
    assert_eq!(p.abs(), 1, "{parts:?}");
    assert_eq!(m, p, "reflected top face: {parts:?}");
    assert_eq!(pm, p + m, "{parts:?}");
    assert_eq!(pp, 0, "{parts:?}");
    assert_eq!(oo, 0, "{parts:?}");
}

#[test]
fn lambda_retraction_respects_its_lipschitz_bound() {
    let man = LevelSetManifold::new(3, 2, 0.25).unwrap();
    let phi = man.retraction();
    let DerivativeBound::Lipschitz(lip) = phi.derivative_bound() else { panic!() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let samples = man.sample(10_000, &mut rng);
    let mut worst = 0.0f64;
    for s in &samples {
        // a nearby point of the level set: nudge the angles, rescale the fiber
        let theta: Vec<f64> = s.theta.iter().map(|t| t + rng.random_range(-1e-3..1e-3)).collect();
        let prod: f64 = theta.iter().map(|t| (1.0 + t.cos()) / 2.0).product();
        let rhs = 0.25 - prod;
        if rhs <= 0.0 || theta.iter().any(|t| t.abs() >= PI) {
            continue;
        }
        let zn = skelgrid::maps::norm(&s.z);
        let z: Vec<f64> = s.z.iter().map(|v| v * rhs.sqrt() / zn).collect();
        let a = phi.eval(&s.coords()).unwrap();
        let mut x = theta.clone();
        x.extend(&z);
        let b = phi.eval(&x).unwrap();
        let d = skelgrid::maps::euclid(&s.coords(), &x);
        worst = worst.max(skelgrid::maps::euclid(&a, &b) / d);
        assert!((LevelSetManifold::potential(&theta, &z) - 0.25).abs() < 1e-12);
    }
    assert!(worst > 0.0 && worst <= lip, "{worst} > {lip}");
}
