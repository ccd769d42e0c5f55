//! Integer face flows on a cubical grid with concave cost.
//!
//! Each unoriented codimension-one face stores one integer: the flux through
//! it in the `+e_axis` direction. The outward flux of a cell through one of
//! its faces is that value times the side sign, so reversing orientation
//! negates the flux with no extra storage. Mass leaves the grid through
//! boundary faces. The cost of a flow is `sum |d|^alpha` over faces.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::TransportError;
use crate::lattice::{for_each_multi_index, CubicalGrid, OrientedFace, Side};

/// `|d|^alpha`, with `0^alpha = 0`.
pub fn face_cost(d: i64, alpha: f64) -> f64 {
    if d == 0 {
        0.0
    } else {
        (d.unsigned_abs() as f64).powf(alpha)
    }
}

/// The exponent at which uniform irrigation picks up a logarithm.
pub fn critical_exponent(n: usize) -> f64 {
    1.0 - 1.0 / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceFlow {
    pub grid: CubicalGrid,
    /// Flux in the `+e_axis` direction, indexed by [`CubicalGrid::face_id`].
    pub flow: Vec<i64>,
    /// Supply per cell, indexed by [`CubicalGrid::cell_index`].
    pub supplies: Vec<i64>,
    pub alpha: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub cell: Vec<usize>,
    pub outflow: i64,
    pub supply: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
    pub cost: f64,
}

fn check_alpha(alpha: f64) -> Result<(), TransportError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(TransportError::Parameter(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Face of `cell` on `side` along `axis`.
fn face(cell: &[usize], axis: usize, side: Side) -> OrientedFace {
    OrientedFace { cell: cell.to_vec(), axis, side }
}

impl FaceFlow {
    pub fn zero(grid: CubicalGrid, supplies: Vec<i64>, alpha: f64) -> Result<Self, TransportError> {
        check_alpha(alpha)?;
        if supplies.len() != grid.cell_count() {
            return Err(TransportError::Shape(format!(
                "{} supplies for {} cells",
                supplies.len(),
                grid.cell_count()
            )));
        }
        let flow = vec![0; grid.facet_count()];
        Ok(Self { grid, flow, supplies, alpha })
    }

    /// Uniform supply `b` on every cell of `[0, l]^N`.
    pub fn uniform(n: usize, l: usize, b: i64, alpha: f64) -> Result<Self, TransportError> {
        let grid = CubicalGrid::new(n, l)?;
        let cells = grid.cell_count();
        Self::zero(grid, vec![b; cells], alpha)
    }

    /// Outward flux of the cell owning `face`.
    pub fn outward(&self, face: &OrientedFace) -> i64 {
        face.side.sign() * self.flow[self.grid.face_id(face)]
    }

    /// Adds `amount` of outward flux to the cell owning `face`.
    pub fn push(&mut self, face: &OrientedFace, amount: i64) {
        let id = self.grid.face_id(face);
        self.flow[id] += face.side.sign() * amount;
    }

    pub fn net_outflow(&self, cell: &[usize]) -> i64 {
        let mut s = 0;
        for axis in 0..self.grid.dim() {
            for side in [Side::Minus, Side::Plus] {
                s += self.outward(&face(cell, axis, side));
            }
        }
        s
    }

    pub fn cost(&self) -> f64 {
        self.flow.iter().map(|&d| face_cost(d, self.alpha)).sum()
    }

    /// Kirchhoff check at every cell. Never fails.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (i, cell) in self.grid.cells().into_iter().enumerate() {
            let outflow = self.net_outflow(&cell);
            if outflow != self.supplies[i] {
                violations.push(Violation { cell, outflow, supply: self.supplies[i] });
            }
        }
        ValidationReport { valid: violations.is_empty(), violations, cost: self.cost() }
    }

    /// Cells adjacent to face `id` as `(cell index, outward sign)`; one entry
    /// for boundary faces.
    fn incident(&self, id: usize) -> Vec<(usize, i64)> {
        let f = self.grid.face_from_id(id);
        let mut out = vec![(self.grid.cell_index(&f.cell), f.side.sign())];
        if let Some(r) = self.grid.reverse(&f) {
            out.push((self.grid.cell_index(&r.cell), r.side.sign()));
        }
        out
    }
}

/// Supplies from the degree gap per cell.
pub fn attribution_from_degrees(
    grid: &CubicalGrid,
    degrees: &[i64],
    approximant_degrees: &[i64],
) -> Result<Vec<i64>, TransportError> {
    if degrees.len() != grid.cell_count() || approximant_degrees.len() != grid.cell_count() {
        return Err(TransportError::Shape(format!(
            "degree tables of length {} and {} on {} cells",
            degrees.len(),
            approximant_degrees.len(),
            grid.cell_count()
        )));
    }
    Ok(degrees.iter().zip(approximant_degrees).map(|(a, b)| a - b).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactConfig {
    pub flow_cap: i64,
    /// Search nodes before giving up certification.
    pub node_budget: u64,
}

impl Default for ExactConfig {
    fn default() -> Self {
        Self { flow_cap: 8, node_budget: 200_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactResult {
    pub flow: FaceFlow,
    pub cost: f64,
    /// The search space was exhausted.
    pub certified: bool,
    pub nodes: u64,
}

struct Search<'a> {
    alpha: f64,
    cap: i64,
    order: Vec<usize>,
    incident: Vec<Vec<(usize, i64)>>,
    /// Unassigned faces per cell.
    open: Vec<usize>,
    /// Supply minus outflow assigned so far.
    residual: Vec<i64>,
    values: Vec<i64>,
    best: Option<(f64, Vec<i64>)>,
    nodes: u64,
    budget: u64,
    exhausted: bool,
    cap_pow: &'a [f64],
}

impl Search<'_> {
    fn residual_bound(&self) -> f64 {
        // each face touches at most two cells and the cost is subadditive
        let s: f64 = self
            .residual
            .iter()
            .map(|&r| if r == 0 { 0.0 } else { self.cap_pow[r.unsigned_abs() as usize] })
            .sum();
        0.5 * s
    }

    fn feasible(&self, cell: usize) -> bool {
        self.residual[cell].abs() <= self.cap * self.open[cell] as i64
    }

    fn dfs(&mut self, pos: usize, cost: f64) {
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = false;
            return;
        }
        if let Some((best, _)) = &self.best {
            if cost + self.residual_bound() >= *best {
                return;
            }
        }
        if pos == self.order.len() {
            if self.residual.iter().all(|&r| r == 0) {
                self.best = Some((cost, self.values.clone()));
            }
            return;
        }
        let id = self.order[pos];
        let inc = self.incident[id].clone();
        // a face that closes a cell is forced
        let forced = inc.iter().find(|&&(c, _)| self.open[c] == 1).map(|&(c, s)| s * self.residual[c]);
        let candidates: Vec<i64> = match forced {
            Some(v) if v.abs() <= self.cap => vec![v],
            Some(_) => return,
            None => {
                let mut v = vec![0];
                for k in 1..=self.cap {
                    v.push(k);
                    v.push(-k);
                }
                v
            }
        };
        for &c in &inc {
            self.open[c.0] -= 1;
        }
        for d in candidates {
            for &(c, s) in &inc {
                self.residual[c] -= s * d;
            }
            if inc.iter().all(|&(c, _)| self.feasible(c)) {
                self.values[id] = d;
                let add = if d == 0 { 0.0 } else { self.cap_pow[d.unsigned_abs() as usize] };
                self.dfs(pos + 1, cost + add);
            }
            for &(c, s) in &inc {
                self.residual[c] += s * d;
            }
            if self.nodes > self.budget {
                break;
            }
        }
        self.values[id] = 0;
        for &c in &inc {
            self.open[c.0] += 1;
        }
    }
}

/// Minimum-cost integer flow with `|d| <= flow_cap`, by branch and bound.
///
/// Faces are visited cell by cell, so a cell's last face is forced by
/// conservation. Values are tried in the order `0, 1, -1, 2, -2, ...` and
/// only strict improvements replace the incumbent, so ties keep the first
/// optimum in that order.
pub fn exact_min(
    grid: &CubicalGrid,
    supplies: &[i64],
    alpha: f64,
    cfg: &ExactConfig,
) -> Result<ExactResult, TransportError> {
    let template = FaceFlow::zero(grid.clone(), supplies.to_vec(), alpha)?;
    if cfg.flow_cap < 0 {
        return Err(TransportError::Parameter("negative flow cap".into()));
    }
    let mut order = Vec::with_capacity(grid.facet_count());
    let mut seen = vec![false; grid.facet_count()];
    for cell in grid.cells() {
        for axis in 0..grid.dim() {
            for side in [Side::Minus, Side::Plus] {
                let id = grid.face_id(&face(&cell, axis, side));
                if !seen[id] {
                    seen[id] = true;
                    order.push(id);
                }
            }
        }
    }
    let incident: Vec<_> = (0..grid.facet_count()).map(|id| template.incident(id)).collect();
    let mut open = vec![0usize; grid.cell_count()];
    for inc in &incident {
        for &(c, _) in inc {
            open[c] += 1;
        }
    }
    let cap_pow: Vec<f64> = (0..=cfg.flow_cap.max(0) as usize * 2 * grid.dim() + 1)
        .map(|k| face_cost(k as i64, alpha))
        .collect();
    let mut search = Search {
        alpha,
        cap: cfg.flow_cap,
        order,
        incident,
        open,
        residual: supplies.to_vec(),
        values: vec![0; grid.facet_count()],
        best: None,
        nodes: 0,
        budget: cfg.node_budget,
        exhausted: true,
        cap_pow: &cap_pow,
    };
    if supplies.iter().any(|&b| b.abs() > search.cap * 2 * grid.dim() as i64) {
        return Err(TransportError::Parameter("supply exceeds what capped faces can carry".into()));
    }
    search.dfs(0, 0.0);
    let _ = search.alpha;
    let (cost, values) = search
        .best
        .ok_or_else(|| TransportError::Parameter("no feasible flow within the cap".into()))?;
    let mut flow = template;
    flow.flow = values;
    Ok(ExactResult { cost, flow, certified: search.exhausted, nodes: search.nodes })
}

/// Pushes `amount` outward from `cell` along `axis` on `side` to the boundary.
fn route_to_boundary(f: &mut FaceFlow, cell: &[usize], axis: usize, side: Side, amount: i64) {
    let l = f.grid.edge();
    let mut c = cell.to_vec();
    loop {
        f.push(&face(&c, axis, side), amount);
        match side {
            Side::Plus if c[axis] + 1 < l => c[axis] += 1,
            Side::Minus if c[axis] > 0 => c[axis] -= 1,
            _ => return,
        }
    }
}

/// Each cell sends its supply straight to the nearest wall (lowest axis on
/// ties, minus side first).
pub fn naive_plan(grid: &CubicalGrid, supplies: &[i64], alpha: f64) -> Result<FaceFlow, TransportError> {
    let mut f = FaceFlow::zero(grid.clone(), supplies.to_vec(), alpha)?;
    let l = grid.edge();
    for (i, cell) in grid.cells().into_iter().enumerate() {
        if supplies[i] == 0 {
            continue;
        }
        let mut best = (usize::MAX, 0, Side::Minus);
        for axis in 0..grid.dim() {
            for (side, dist) in [(Side::Minus, cell[axis]), (Side::Plus, l - 1 - cell[axis])] {
                if dist < best.0 {
                    best = (dist, axis, side);
                }
            }
        }
        route_to_boundary(&mut f, &cell, best.1, best.2, supplies[i]);
    }
    Ok(f)
}

/// Moves `amount` from cell `from` to cell `to` along `axis` (same other coordinates).
fn route_along(f: &mut FaceFlow, from: &[usize], axis: usize, to: usize, amount: i64) {
    let mut c = from.to_vec();
    while c[axis] != to {
        if c[axis] < to {
            f.push(&face(&c, axis, Side::Plus), amount);
            c[axis] += 1;
        } else {
            f.push(&face(&c, axis, Side::Minus), amount);
            c[axis] -= 1;
        }
    }
}

/// Hierarchical aggregation for `l = 2^k`.
///
/// At scale `2^j` every block gathers the mass of its `2^N` sub-blocks at its
/// lowest corner cell, one axis at a time, so partial sums merge before they
/// travel further. The corner cell `0` finally exports everything through
/// its minus face on axis 0.
pub fn dyadic_plan(grid: &CubicalGrid, supplies: &[i64], alpha: f64) -> Result<FaceFlow, TransportError> {
    let l = grid.edge();
    if !l.is_power_of_two() {
        return Err(TransportError::Parameter(format!("edge {l} is not a power of two")));
    }
    let n = grid.dim();
    let mut f = FaceFlow::zero(grid.clone(), supplies.to_vec(), alpha)?;
    let mut mass = supplies.to_vec();
    let mut half = 1;
    while half < l {
        let step = 2 * half;
        for axis in 0..n {
            // hubs of the current sub-blocks sit at multiples of `half` on
            // axes not yet merged and multiples of `step` on merged ones
            let mut extents = vec![0usize; n];
            for k in 0..n {
                extents[k] = if k < axis { l / step } else { l / half };
            }
            crate::lattice::for_each_multi_index_var(&extents, |idx| {
                if idx[axis] % 2 == 0 {
                    return;
                }
                let cell: Vec<usize> = (0..n)
                    .map(|k| idx[k] * if k < axis { step } else { half })
                    .collect();
                let ci = grid.cell_index(&cell);
                let m = mass[ci];
                if m == 0 {
                    return;
                }
                let target = cell[axis] - half;
                route_along(&mut f, &cell, axis, target, m);
                let mut t = cell.clone();
                t[axis] = target;
                mass[grid.cell_index(&t)] += m;
                mass[ci] = 0;
            });
        }
        half = step;
    }
    let root = vec![0; n];
    let m = mass[0];
    if m != 0 {
        f.push(&face(&root, 0, Side::Minus), m);
    }
    Ok(f)
}

/// Dual cycles around width-one strips: cells `i0..=i1` along `long` at
/// rows `j` and `j + 1` along `short`, traversed as a loop. Cells outside the
/// grid collapse to a single exterior node, so strips reaching past a wall
/// close through it. Entries are `(face id, sign of +e_axis flux per unit push)`.
fn strip_cycles(grid: &CubicalGrid, max_len: usize) -> Vec<Vec<(usize, i64)>> {
    let n = grid.dim();
    let l = grid.edge() as i64;
    let mut out = Vec::new();
    let inside = |c: &[i64]| c.iter().all(|&v| v >= 0 && v < l);
    for long in 0..n {
        for short in 0..n {
            if long == short {
                continue;
            }
            // unit squares are enumerated once, with long < short
            let min_len = if long < short { 1 } else { 2 };
            let mut extents = vec![grid.edge(); n];
            extents[long] = grid.edge() + 2;
            extents[short] = grid.edge() + 1;
            crate::lattice::for_each_multi_index_var(&extents, |v| {
                let mut base: Vec<i64> = v.iter().map(|&x| x as i64).collect();
                base[long] -= 1;
                base[short] -= 1;
                for len in min_len..=max_len {
                    let i1 = base[long] + len as i64;
                    if i1 > l {
                        break;
                    }
                    let at = |i: i64, dj: i64| {
                        let mut c = base.clone();
                        c[long] = i;
                        c[short] += dj;
                        c
                    };
                    let mut loop_cells = Vec::with_capacity(2 * len + 2);
                    for i in base[long]..=i1 {
                        loop_cells.push((at(i, 0), long));
                    }
                    for i in (base[long]..=i1).rev() {
                        loop_cells.push((at(i, 1), long));
                    }
                    let mut cyc = Vec::new();
                    for k in 0..loop_cells.len() {
                        let (from, _) = &loop_cells[k];
                        let (to, _) = &loop_cells[(k + 1) % loop_cells.len()];
                        let axis = (0..n).find(|&a| from[a] != to[a]).expect("neighbors differ");
                        let (fi, ti) = (inside(from), inside(to));
                        if !fi && !ti {
                            continue;
                        }
                        let forward = to[axis] > from[axis];
                        let (owner, side) = if fi {
                            (from, if forward { Side::Plus } else { Side::Minus })
                        } else {
                            (to, if forward { Side::Minus } else { Side::Plus })
                        };
                        let owner: Vec<usize> = owner.iter().map(|&x| x as usize).collect();
                        cyc.push((grid.face_id(&face(&owner, axis, side)), if forward { 1 } else { -1 }));
                    }
                    if cyc.len() >= 2 {
                        out.push(cyc);
                    }
                }
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalSearchReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub accepted_moves: u64,
    pub sweeps: u64,
    /// A full sweep found no improving move.
    pub converged: bool,
}

/// Circulation pushes around strip cycles while the cost strictly drops.
///
/// Candidate amounts for a cycle are `+-1`, `+-2` and the amounts that empty
/// one of its faces. Sweeps visit cycles in a fixed order and take the best
/// strict improvement per cycle; `budget` bounds sweeps.
pub fn local_search(initial: &FaceFlow, budget: u64) -> (FaceFlow, LocalSearchReport) {
    let mut f = initial.clone();
    let cycles = strip_cycles(&f.grid, f.grid.edge() + 1);
    let initial_cost = f.cost();
    let alpha = f.alpha;
    let mut accepted = 0;
    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < budget {
        sweeps += 1;
        let mut improved = false;
        for cyc in &cycles {
            let mut amounts = vec![1i64, -1, 2, -2];
            for &(id, s) in cyc {
                let t = -s * f.flow[id];
                if t != 0 && !amounts.contains(&t) {
                    amounts.push(t);
                }
            }
            let before: f64 = cyc.iter().map(|&(id, _)| face_cost(f.flow[id], alpha)).sum();
            let mut best = (0i64, 0.0f64);
            for &t in &amounts {
                let after: f64 =
                    cyc.iter().map(|&(id, s)| face_cost(f.flow[id] + s * t, alpha)).sum();
                let gain = before - after;
                // relative slack keeps float ties from cycling
                if gain > 1e-12 * before.max(1.0) && gain > best.1 {
                    best = (t, gain);
                }
            }
            if best.0 != 0 {
                for &(id, s) in cyc {
                    f.flow[id] += s * best.0;
                }
                accepted += 1;
                improved = true;
            }
        }
        if !improved {
            converged = true;
            break;
        }
    }
    let final_cost = f.cost();
    (f, LocalSearchReport { initial_cost, final_cost, accepted_moves: accepted, sweeps, converged })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingSample {
    pub l: usize,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub n: usize,
    pub samples: Vec<ScalingSample>,
    /// Intercept of `cost / l^N = a + b ln l`.
    pub a: f64,
    pub b: f64,
    pub r_squared: f64,
    pub b_std_error: f64,
    /// One-sided 95% test that `b > 0`.
    pub b_positive: bool,
}

/// Least-squares fit of `cost / l^N` against `ln l`.
pub fn fit_scaling(n: usize, samples: &[ScalingSample]) -> Result<ScalingFit, TransportError> {
    if samples.len() < 3 {
        return Err(TransportError::TooFewSamples(samples.len()));
    }
    let xs: Vec<f64> = samples.iter().map(|s| (s.l as f64).ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.cost / (s.l as f64).powi(n as i32)).collect();
    let (a, b, r_squared, b_std_error) = linear_fit(&xs, &ys);
    let dof = samples.len() as f64 - 2.0;
    let b_positive = if b_std_error == 0.0 {
        b > 0.0
    } else {
        let t = StudentsT::new(0.0, 1.0, dof).expect("positive dof");
        b / b_std_error > t.inverse_cdf(0.95)
    };
    Ok(ScalingFit { n, samples: samples.to_vec(), a, b, r_squared, b_std_error, b_positive })
}

/// `(intercept, slope, R^2, slope standard error)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let sse: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    let se = if m > 2.0 { (sse / (m - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    (a, b, r2, se)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Naive,
    Dyadic,
    /// Dyadic plan followed by local search.
    Best,
    Exact,
}

/// Cost of the chosen solver on uniform supply `b` for each edge length.
pub fn scaling_study(
    n: usize,
    alpha: f64,
    edges: &[usize],
    b: i64,
    solver: Solver,
) -> Result<ScalingFit, TransportError> {
    let samples = edges
        .iter()
        .map(|&l| {
            let inst = FaceFlow::uniform(n, l, b, alpha)?;
            let cost = match solver {
                Solver::Naive => naive_plan(&inst.grid, &inst.supplies, alpha)?.cost(),
                Solver::Dyadic => dyadic_plan(&inst.grid, &inst.supplies, alpha)?.cost(),
                Solver::Best => {
                    let d = dyadic_plan(&inst.grid, &inst.supplies, alpha)?;
                    local_search(&d, 64).1.final_cost
                }
                Solver::Exact => {
                    exact_min(&inst.grid, &inst.supplies, alpha, &ExactConfig::default())?.cost
                }
            };
            Ok(ScalingSample { l, cost })
        })
        .collect::<Result<Vec<_>, TransportError>>()?;
    fit_scaling(n, &samples)
}

/// Cells with at least two outgoing or two incoming faces, where flow splits
/// or joins.
pub fn branching_cells(f: &FaceFlow) -> usize {
    let mut count = 0;
    for_each_multi_index(f.grid.dim(), f.grid.edge(), |cell| {
        let mut out = 0;
        let mut inc = 0;
        for axis in 0..f.grid.dim() {
            for side in [Side::Minus, Side::Plus] {
                let d = f.outward(&face(cell, axis, side));
                out += usize::from(d > 0);
                inc += usize::from(d < 0);
            }
        }
        if out >= 2 || inc >= 2 {
            count += 1;
        }
    });
    count
}
