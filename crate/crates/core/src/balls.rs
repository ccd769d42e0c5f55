//! Growing and merging Euclidean balls.
//!
//! Radii grow like `e^t` between events. An event is the first time two
//! closed balls touch; touching balls are then merged pairwise, smallest
//! index pair first, until the family is disjoint again. A merged ball
//! contains both parents and its radius is at most the sum of theirs, so the
//! radius sum never exceeds `e^t` times the initial sum.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{BallError, MapError};
use crate::maps::{euclid, DerivativeBound, EvaluableMap, KinkLattice, MapDescriptor};
use crate::quadrature::{gauss_legendre, integrate, Domain, Node, QuadratureConfig};

/// Relative slack when deciding that two balls touch at an event time.
const TOUCH_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Self { center, radius }
    }

    /// Whether the closed balls meet.
    pub fn touches(&self, other: &Ball) -> bool {
        euclid(&self.center, &other.center) <= self.radius + other.radius
    }

    /// Whether the open ball contains the closed ball `other`, up to `tol`.
    pub fn contains(&self, other: &Ball, tol: f64) -> bool {
        euclid(&self.center, &other.center) + other.radius <= self.radius + tol
    }
}

/// Smallest ball containing two intersecting balls: the larger one when
/// nested, otherwise the ball with diameter spanning both.
pub fn merge_pair(b0: &Ball, b1: &Ball) -> Result<Ball, BallError> {
    let d = euclid(&b0.center, &b1.center);
    if d > b0.radius + b1.radius {
        return Err(BallError::Disjoint { distance: d, r0: b0.radius, r1: b1.radius });
    }
    Ok(merge_at(b0, b1, d))
}

/// `merge_pair` for centers at distance `d`, without the intersection check.
fn merge_at(b0: &Ball, b1: &Ball, d: f64) -> Ball {
    if d + b1.radius <= b0.radius {
        return b0.clone();
    }
    if d + b0.radius <= b1.radius {
        return b1.clone();
    }
    let radius = 0.5 * (b0.radius + d + b1.radius);
    let s = (radius - b0.radius) / d;
    let center = b0.center.iter().zip(&b1.center).map(|(a, b)| a + s * (b - a)).collect();
    Ball { center, radius }
}

/// Balls at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallFamily {
    pub time: f64,
    pub balls: Vec<Ball>,
    /// Sum of the initial radii.
    pub initial_radius_sum: f64,
}

impl BallFamily {
    pub fn radius_sum(&self) -> f64 {
        self.balls.iter().map(|b| b.radius).sum()
    }

    /// Whether the closed balls are pairwise disjoint.
    pub fn disjoint(&self) -> bool {
        for i in 0..self.balls.len() {
            for j in i + 1..self.balls.len() {
                if self.balls[i].touches(&self.balls[j]) {
                    return false;
                }
            }
        }
        true
    }
}

/// A stretch between events: balls at `start`, growing as `e^{t - start}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub start: f64,
    pub balls: Vec<Ball>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub initial: Vec<Ball>,
    pub epochs: Vec<Epoch>,
    /// Event times in increasing order; `0` first when the input overlaps.
    pub events: Vec<f64>,
    pub horizon: f64,
}

fn validate(balls: &[Ball]) -> Result<usize, BallError> {
    let Some(first) = balls.first() else {
        return Err(BallError::Invalid("empty family".into()));
    };
    let n = first.center.len();
    if n == 0 {
        return Err(BallError::Invalid("zero-dimensional centers".into()));
    }
    for b in balls {
        if b.center.len() != n {
            return Err(BallError::Invalid("mixed dimensions".into()));
        }
        if !(b.radius > 0.0 && b.radius.is_finite()) || b.center.iter().any(|c| !c.is_finite()) {
            return Err(BallError::Invalid(format!("bad ball {b:?}")));
        }
    }
    Ok(n)
}

/// Merges touching balls, smallest index pair first, until disjoint.
fn cascade(mut balls: Vec<Ball>) -> Vec<Ball> {
    'outer: loop {
        for i in 0..balls.len() {
            for j in i + 1..balls.len() {
                let d = euclid(&balls[i].center, &balls[j].center);
                let s = balls[i].radius + balls[j].radius;
                if d <= s * (1.0 + TOUCH_TOL) {
                    // touching within the slack counts as intersecting
                    balls[i] = merge_at(&balls[i], &balls[j], d);
                    balls.remove(j);
                    continue 'outer;
                }
            }
        }
        return balls;
    }
}

/// Grows `family` on `[0, horizon]`.
pub fn grow(family: &[Ball], horizon: f64) -> Result<Trajectory, BallError> {
    validate(family)?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(BallError::Invalid(format!("horizon {horizon}")));
    }
    let mut events = Vec::new();
    let mut balls = family.to_vec();
    let merged = cascade(balls.clone());
    if merged.len() < balls.len() {
        events.push(0.0);
    }
    balls = merged;
    let mut epochs = vec![Epoch { start: 0.0, balls: balls.clone() }];
    let mut t = 0.0;
    while balls.len() > 1 {
        let mut dt = f64::INFINITY;
        for i in 0..balls.len() {
            for j in i + 1..balls.len() {
                let d = euclid(&balls[i].center, &balls[j].center);
                dt = dt.min((d / (balls[i].radius + balls[j].radius)).ln());
            }
        }
        let te = t + dt;
        if te > horizon {
            break;
        }
        let g = dt.exp();
        let grown: Vec<Ball> =
            balls.iter().map(|b| Ball::new(b.center.clone(), b.radius * g)).collect();
        balls = cascade(grown);
        t = te;
        events.push(t);
        epochs.push(Epoch { start: t, balls: balls.clone() });
    }
    Ok(Trajectory { initial: family.to_vec(), epochs, events, horizon })
}

impl Trajectory {
    pub fn initial_radius_sum(&self) -> f64 {
        self.initial.iter().map(|b| b.radius).sum()
    }

    /// The family at time `t` in `[0, horizon]`; at an event time, the
    /// post-merge family.
    pub fn at(&self, t: f64) -> BallFamily {
        let k = self.epochs.partition_point(|e| e.start <= t).max(1) - 1;
        let e = &self.epochs[k];
        let g = (t - e.start).exp();
        BallFamily {
            time: t,
            balls: e.balls.iter().map(|b| Ball::new(b.center.clone(), b.radius * g)).collect(),
            initial_radius_sum: self.initial_radius_sum(),
        }
    }

    /// Time of the first merge, if any happens before the horizon.
    pub fn first_merge(&self) -> Option<f64> {
        self.events.first().copied()
    }
}

/// Nonnegative function on a uniform grid, multilinearly interpolated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub origin: Vec<f64>,
    pub spacing: f64,
    /// Nodes per axis.
    pub counts: Vec<usize>,
    /// Node values, last axis fastest.
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn from_fn(
        origin: Vec<f64>,
        spacing: f64,
        counts: Vec<usize>,
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> Result<Self, BallError> {
        if counts.len() != origin.len() || counts.iter().any(|&c| c < 2) || spacing <= 0.0 {
            return Err(BallError::Invalid("grid needs two nodes per axis".into()));
        }
        let mut values = Vec::with_capacity(counts.iter().product());
        let mut err = None;
        crate::lattice::for_each_multi_index_var(&counts, |idx| {
            let x: Vec<f64> =
                idx.iter().zip(&origin).map(|(&i, o)| o + i as f64 * spacing).collect();
            let v = f(&x);
            if !(v >= 0.0) && err.is_none() {
                err = Some(BallError::NegativeDensity { point: x, value: v });
            }
            values.push(v);
        });
        match err {
            Some(e) => Err(e),
            None => Ok(Self { origin, spacing, counts, values }),
        }
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn hi(&self) -> Vec<f64> {
        self.origin
            .iter()
            .zip(&self.counts)
            .map(|(o, &c)| o + (c - 1) as f64 * self.spacing)
            .collect()
    }

    /// Whether the closed ball lies in the grid box.
    pub fn covers(&self, b: &Ball) -> bool {
        let hi = self.hi();
        b.center
            .iter()
            .zip(self.origin.iter().zip(&hi))
            .all(|(c, (lo, hi))| c - b.radius >= *lo && c + b.radius <= *hi)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let n = self.dim();
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for k in 0..n {
            let u = ((x[k] - self.origin[k]) / self.spacing).clamp(0.0, (self.counts[k] - 1) as f64);
            let i = (u.floor() as usize).min(self.counts[k] - 2);
            base[k] = i;
            frac[k] = u - i as f64;
        }
        let mut s = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for k in 0..n {
                let bit = corner >> k & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                idx = idx * self.counts[k] + base[k] + bit;
            }
            if w != 0.0 {
                s += w * self.values[idx];
            }
        }
        s
    }

    /// Exact integral of the interpolant over the grid box.
    pub fn integral(&self) -> f64 {
        // trapezoid weights integrate multilinear cells exactly
        let n = self.dim();
        let mut s = 0.0;
        let mut i = 0;
        crate::lattice::for_each_multi_index_var(&self.counts, |idx| {
            let mut w = 1.0;
            for k in 0..n {
                if idx[k] == 0 || idx[k] == self.counts[k] - 1 {
                    w *= 0.5;
                }
            }
            s += w * self.values[i];
            i += 1;
        });
        s * self.spacing.powi(n as i32)
    }
}

impl EvaluableMap for GridFunction {
    fn domain_dim(&self) -> usize {
        self.dim()
    }
    fn codomain_dim(&self) -> usize {
        1
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), MapError> {
        out[0] = self.value(x);
        Ok(())
    }
    fn derivative_bound(&self) -> DerivativeBound {
        let m = self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        DerivativeBound::Lipschitz(2.0 * m * (self.dim() as f64).sqrt() / self.spacing)
    }
    fn kinks(&self) -> Option<KinkLattice> {
        let r0 = self.origin[0].rem_euclid(self.spacing);
        self.origin
            .iter()
            .all(|o| (o.rem_euclid(self.spacing) - r0).abs() < 1e-12 * self.spacing)
            .then_some(KinkLattice { offset: r0, period: self.spacing })
    }
    fn descriptor(&self) -> MapDescriptor {
        MapDescriptor {
            kind: "grid_function".into(),
            parameters: json!({ "origin": self.origin, "spacing": self.spacing, "counts": self.counts }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoareaReport {
    /// `int_0^T sum_j rho_j(t) int_{boundary B_j(t)} f dt`.
    pub lhs: f64,
    /// Estimated error of `lhs` (sphere quadrature plus time-rule difference).
    pub lhs_error: f64,
    /// `int f` over the grid box, exact for the interpolant.
    pub rhs: f64,
    pub holds: bool,
}

/// Time quadrature of sphere integrals along `traj` up to `t_star`, compared
/// with the volume integral of `f`.
pub fn coarea_account(
    traj: &Trajectory,
    f: &GridFunction,
    t_star: f64,
    quad: &QuadratureConfig,
) -> Result<CoareaReport, BallError> {
    if t_star > traj.horizon {
        return Err(BallError::Invalid(format!("t* {t_star} beyond horizon {}", traj.horizon)));
    }
    let n = f.dim();
    let last = traj.at(t_star);
    if last.balls.iter().any(|b| b.center.len() != n || !f.covers(b)) {
        return Err(BallError::Invalid("grid does not cover the grown balls".into()));
    }
    let sphere_integral = |b: &Ball| -> Result<(f64, f64), BallError> {
        let patches = Domain::Sphere { center: b.center.clone(), radius: b.radius }.patches();
        let g = |node: &Node, out: &mut [f64]| out[0] = node.area * node.value[0];
        let r = integrate(f, &patches, quad, 1, false, None, &g)
            .map_err(|e| BallError::Invalid(e.to_string()))?;
        Ok((r.value[0], r.error[0]))
    };
    // two Gauss rules in time; their difference is the time-discretization error
    let time_rule = |order: usize| -> Result<(f64, f64), BallError> {
        let (x, w) = gauss_legendre(order);
        let mut total = 0.0;
        let mut err = 0.0;
        for (k, e) in traj.epochs.iter().enumerate() {
            let a = e.start;
            let b = traj.epochs.get(k + 1).map_or(t_star, |n| n.start).min(t_star);
            if b <= a {
                continue;
            }
            for (xi, wi) in x.iter().zip(&w) {
                let t = a + 0.5 * (b - a) * (xi + 1.0);
                let g = (t - a).exp();
                for ball in &e.balls {
                    let grown = Ball::new(ball.center.clone(), ball.radius * g);
                    let (s, se) = sphere_integral(&grown)?;
                    total += 0.5 * (b - a) * wi * grown.radius * s;
                    err += 0.5 * (b - a) * wi * grown.radius * se;
                }
            }
        }
        Ok((total, err))
    };
    let (lo, _) = time_rule(6)?;
    let (lhs, sphere_err) = time_rule(10)?;
    let lhs_error = sphere_err + 2.0 * (lhs - lo).abs();
    let rhs = f.integral();
    Ok(CoareaReport { lhs, lhs_error, rhs, holds: lhs <= rhs + lhs_error + 1e-12 * rhs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn merge_examples() {
        let a = Ball::new(vec![0.0, 0.0], 1.0);
        let b = Ball::new(vec![0.0, 0.0], 0.5);
        assert_eq!(merge_pair(&a, &b).unwrap(), a);
        let c = Ball::new(vec![2.0, 0.0], 1.0);
        assert_eq!(merge_pair(&a, &c).unwrap(), Ball::new(vec![1.0, 0.0], 2.0));
        let far = Ball::new(vec![3.0, 0.0], 0.5);
        assert!(matches!(merge_pair(&a, &far), Err(BallError::Disjoint { .. })));
    }

    #[test]
    fn merged_ball_contains_sampled_boundaries() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.random_range(2..=4);
            let a = Ball::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(0.1..1.0));
            let b = Ball::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), rng.random_range(0.1..1.0));
            let Ok(m) = merge_pair(&a, &b) else { continue };
            assert!(m.radius <= a.radius + b.radius + 1e-15);
            for ball in [&a, &b] {
                for _ in 0..1000 {
                    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let vn = crate::maps::norm(&v);
                    v.iter_mut().for_each(|c| *c /= vn);
                    let p: Vec<f64> =
                        ball.center.iter().zip(&v).map(|(c, d)| c + ball.radius * d).collect();
                    assert!(euclid(&p, &m.center) <= m.radius * (1.0 + 1e-12));
                }
            }
        }
    }

    #[test]
    fn single_ball_grows_exponentially() {
        let t = grow(&[Ball::new(vec![1.0, 2.0], 0.3)], 2.0).unwrap();
        assert!(t.events.is_empty());
        for s in [0.0, 0.5, 1.7, 2.0] {
            assert_eq!(t.at(s).balls[0].radius, 0.3 * f64::exp(s));
        }
    }

    #[test]
    fn two_balls_touch_at_ln_two() {
        let t = grow(&[Ball::new(vec![0.0, 0.0], 1.0), Ball::new(vec![4.0, 0.0], 1.0)], 3.0)
            .unwrap();
        let te = t.first_merge().unwrap();
        assert!((te - 2f64.ln()).abs() < 1e-15);
        let f = t.at(te);
        assert_eq!(f.balls.len(), 1);
        assert!(f.balls[0].radius <= 4.0 * (1.0 + 1e-12));
        assert!(f.radius_sum() <= te.exp() * 2.0 * (1.0 + 1e-12));
    }

    #[test]
    fn overlapping_input_merges_at_time_zero() {
        let t = grow(&[Ball::new(vec![0.0], 1.0), Ball::new(vec![1.0], 1.0)], 1.0).unwrap();
        assert_eq!(t.events[0], 0.0);
        assert_eq!(t.at(0.0).balls.len(), 1);
    }

    #[test]
    fn grid_function_integral_and_interpolation() {
        let g = GridFunction::from_fn(vec![0.0, 0.0], 0.5, vec![5, 3], |x| x[0] + 2.0 * x[1])
            .unwrap();
        // int over [0,2]x[0,1] of x + 2y = 2 + 2
        assert!((g.integral() - 4.0).abs() < 1e-14);
        assert!((g.value(&[0.3, 0.7]) - 1.7).abs() < 1e-14);
        assert!(matches!(
            GridFunction::from_fn(vec![0.0], 1.0, vec![3], |x| x[0] - 1.0),
            Err(BallError::NegativeDensity { .. })
        ));
    }

    #[test]
    fn coarea_single_ball_closed_form() {
        let t = grow(&[Ball::new(vec![0.0, 0.0], 0.25)], 1.0).unwrap();
        let one = GridFunction::from_fn(vec![-1.0, -1.0], 0.25, vec![9, 9], |_| 1.0).unwrap();
        let quad = QuadratureConfig { base_level: 1, ..Default::default() };
        let r = coarea_account(&t, &one, 1.0, &quad).unwrap();
        let exact = std::f64::consts::PI * 0.0625 * (2f64.exp() - 1.0);
        assert!((r.lhs - exact).abs() < 1e-6 * exact, "{} vs {exact}", r.lhs);
        assert!((r.lhs - exact).abs() <= r.lhs_error);
        assert!(r.holds && (r.rhs - 4.0).abs() < 1e-14);
        let zero = GridFunction::from_fn(vec![-1.0, -1.0], 0.25, vec![9, 9], |_| 0.0).unwrap();
        let r = coarea_account(&t, &zero, 1.0, &quad).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    }

    fn family(n: usize, count: usize, seed: u64) -> Vec<Ball> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                Ball::new(
                    (0..n).map(|_| rng.random_range(-10.0..10.0)).collect(),
                    rng.random_range(0.01..0.5),
                )
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn growth_invariants(n in 1usize..=4, count in 1usize..=32, seed in any::<u64>()) {
            let init = family(n, count, seed);
            let traj = grow(&init, 4.0).unwrap();
            prop_assert!(traj.events.len() < count.max(1));
            let r0 = traj.initial_radius_sum();
            let mut last_len = usize::MAX;
            for k in 0..=100 {
                let t = 4.0 * k as f64 / 100.0;
                let fam = traj.at(t);
                prop_assert!(fam.balls.len() <= last_len);
                last_len = fam.balls.len();
                prop_assert!(fam.radius_sum() <= t.exp() * r0 * (1.0 + 1e-12));
                if traj.events.iter().all(|&e| e > t) {
                    prop_assert!((fam.radius_sum() - t.exp() * r0).abs() <= 1e-12 * t.exp() * r0);
                }
                if !traj.events.contains(&t) {
                    prop_assert!(fam.disjoint());
                }
                for b in &init {
                    prop_assert!(fam.balls.iter().any(|c| c.contains(b, 1e-9 * c.radius)));
                }
            }
        }

        #[test]
        fn merge_is_commutative(
            a in proptest::collection::vec(-2.0f64..2.0, 3),
            b in proptest::collection::vec(-2.0f64..2.0, 3),
            ra in 0.1f64..2.0,
            rb in 0.1f64..2.0,
        ) {
            let x = Ball::new(a, ra);
            let y = Ball::new(b, rb);
            if let (Ok(p), Ok(q)) = (merge_pair(&x, &y), merge_pair(&y, &x)) {
                prop_assert!((p.radius - q.radius).abs() <= 1e-14 * p.radius);
                prop_assert!(euclid(&p.center, &q.center) <= 1e-12 * p.radius);
                let again = merge_pair(&p, &x).unwrap();
                prop_assert!((again.radius - p.radius).abs() <= 1e-12 * p.radius);
            }
        }
    }
}
