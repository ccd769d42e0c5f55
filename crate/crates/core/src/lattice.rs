//! Cubical grid geometry.
//!
//! A [`CubicalGrid`] is the cube `[0, l]^N` (shifted by an origin) cut into
//! `l^N` unit cells. Cells are addressed by multi-indices in `{0..l-1}^N`,
//! enumerated with the last axis varying fastest. Codimension-one faces carry
//! an orientation given by the outward normal of the cell that owns them.
//!
//! [`BlockDecomposition`] tiles `[0, 5l]^N` by the `5^N` translated copies
//! `[0, l]^N + l*alpha + 2l` with `alpha` in `{-2..2}^N`, together with the
//! sign-vector index sets and cones used by the conical degree estimate.

use serde::{Deserialize, Serialize};

use crate::error::LatticeError;

/// Calls `f` on every multi-index in `{0..extent-1}^dim`, last axis fastest.
pub fn for_each_multi_index(dim: usize, extent: usize, mut f: impl FnMut(&[usize])) {
    if extent == 0 {
        return;
    }
    let mut idx = vec![0usize; dim];
    loop {
        f(&idx);
        let mut k = dim;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < extent {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Calls `f` on every multi-index below `extents`, last axis fastest.
pub fn for_each_multi_index_var(extents: &[usize], mut f: impl FnMut(&[usize])) {
    if extents.iter().any(|&e| e == 0) {
        return;
    }
    let mut idx = vec![0usize; extents.len()];
    loop {
        f(&idx);
        let mut k = extents.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < extents[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// Side of a cell along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Side {
    Minus,
    Plus,
}

impl Side {
    pub fn flip(self) -> Side {
        match self {
            Side::Minus => Side::Plus,
            Side::Plus => Side::Minus,
        }
    }

    /// `-1` or `+1`.
    pub fn sign(self) -> i64 {
        match self {
            Side::Minus => -1,
            Side::Plus => 1,
        }
    }
}

/// A codimension-one face seen from the cell that owns it.
///
/// The orientation is the outward normal of `cell`, i.e. `side.sign() * e_axis`.
/// Ordering is lexicographic on `(cell, axis, side)` with `Minus < Plus`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OrientedFace {
    pub cell: Vec<usize>,
    /// Zero-based axis.
    pub axis: usize,
    pub side: Side,
}

/// A closed `j`-face of the grid: `anchor + sum_{k in free} [0,1] e_k`.
///
/// `anchor` holds integer vertex coordinates relative to the grid origin.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Face {
    pub anchor: Vec<usize>,
    /// Strictly increasing list of axes along which the face extends.
    pub free: Vec<usize>,
}

impl Face {
    pub fn dim(&self) -> usize {
        self.free.len()
    }
}

/// The cube `[0, l]^N + origin` divided into unit cells.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicalGrid {
    #[serde(rename = "N")]
    dim: usize,
    #[serde(rename = "l")]
    edge: usize,
    origin: Vec<f64>,
}

impl CubicalGrid {
    pub fn new(dim: usize, edge: usize) -> Result<Self, LatticeError> {
        Self::with_origin(dim, edge, vec![0.0; dim])
    }

    pub fn with_origin(dim: usize, edge: usize, origin: Vec<f64>) -> Result<Self, LatticeError> {
        if dim == 0 {
            return Err(LatticeError::InvalidGrid("dimension must be positive".into()));
        }
        if edge == 0 {
            return Err(LatticeError::InvalidGrid("edge count must be positive".into()));
        }
        if origin.len() != dim {
            return Err(LatticeError::InvalidGrid(format!(
                "origin has {} coordinates, grid dimension is {dim}",
                origin.len()
            )));
        }
        if origin.iter().any(|v| !v.is_finite()) {
            return Err(LatticeError::InvalidGrid("origin must be finite".into()));
        }
        Ok(Self { dim, edge, origin })
    }

    /// Validates a deserialized grid.
    pub fn validated(self) -> Result<Self, LatticeError> {
        Self::with_origin(self.dim, self.edge, self.origin)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn edge(&self) -> usize {
        self.edge
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn cell_count(&self) -> usize {
        self.edge.pow(self.dim as u32)
    }

    /// Row-major linear index of a cell, last axis fastest.
    pub fn cell_index(&self, cell: &[usize]) -> usize {
        cell.iter().fold(0, |acc, &c| acc * self.edge + c)
    }

    pub fn cell_from_index(&self, mut index: usize) -> Vec<usize> {
        let mut cell = vec![0; self.dim];
        for k in (0..self.dim).rev() {
            cell[k] = index % self.edge;
            index /= self.edge;
        }
        cell
    }

    pub fn check_cell(&self, cell: &[usize]) -> Result<(), LatticeError> {
        if cell.len() != self.dim || cell.iter().any(|&c| c >= self.edge) {
            return Err(LatticeError::CellOutOfRange(cell.to_vec()));
        }
        Ok(())
    }

    /// All cells in linear-index order.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::with_capacity(self.cell_count());
        for_each_multi_index(self.dim, self.edge, |c| out.push(c.to_vec()));
        out
    }

    /// Center of a cell; exact since centers are half-integers plus origin.
    pub fn cell_center(&self, cell: &[usize]) -> Vec<f64> {
        cell.iter()
            .zip(&self.origin)
            .map(|(&c, &o)| o + c as f64 + 0.5)
            .collect()
    }

    /// The dual center set: one point per cell, in cell order.
    pub fn dual_centers(&self) -> Vec<Vec<f64>> {
        self.cells().iter().map(|c| self.cell_center(c)).collect()
    }

    /// Closed-form number of `j`-faces: `C(N, j) l^j (l+1)^(N-j)`.
    pub fn face_count(&self, j: usize) -> Result<usize, LatticeError> {
        if j > self.dim {
            return Err(LatticeError::Dimension { j, dim: self.dim });
        }
        Ok(binomial(self.dim, j)
            * self.edge.pow(j as u32)
            * (self.edge + 1).pow((self.dim - j) as u32))
    }

    /// All unoriented `j`-faces, sorted by (free axes, anchor).
    pub fn enumerate_faces(&self, j: usize) -> Result<Vec<Face>, LatticeError> {
        let total = self.face_count(j)?;
        let mut out = Vec::with_capacity(total);
        let n = self.dim;
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != j {
                continue;
            }
            let free: Vec<usize> = (0..n).filter(|k| mask & (1 << k) != 0).collect();
            // free axes range over 0..l, fixed axes over 0..=l
            for_each_multi_index(n, self.edge + 1, |a| {
                if free.iter().all(|&k| a[k] < self.edge) {
                    out.push(Face { anchor: a.to_vec(), free: free.clone() });
                }
            });
        }
        out.sort();
        Ok(out)
    }

    /// Every codimension-one face once per owning cell: `2 N l^N` entries in
    /// (cell, axis, side) order.
    pub fn oriented_faces(&self) -> Vec<OrientedFace> {
        let mut out = Vec::with_capacity(2 * self.dim * self.cell_count());
        for cell in self.cells() {
            for axis in 0..self.dim {
                for side in [Side::Minus, Side::Plus] {
                    out.push(OrientedFace { cell: cell.clone(), axis, side });
                }
            }
        }
        out
    }

    /// Whether the face lies on the boundary of the grid.
    pub fn is_boundary(&self, face: &OrientedFace) -> bool {
        match face.side {
            Side::Minus => face.cell[face.axis] == 0,
            Side::Plus => face.cell[face.axis] + 1 == self.edge,
        }
    }

    /// The same face owned by the neighbouring cell, or `None` on the boundary.
    pub fn reverse(&self, face: &OrientedFace) -> Option<OrientedFace> {
        if self.is_boundary(face) {
            return None;
        }
        let mut cell = face.cell.clone();
        match face.side {
            Side::Minus => cell[face.axis] -= 1,
            Side::Plus => cell[face.axis] += 1,
        }
        Some(OrientedFace { cell, axis: face.axis, side: face.side.flip() })
    }

    /// Lexicographically smallest oriented representative of the face.
    pub fn canonical(&self, face: &OrientedFace) -> OrientedFace {
        match self.reverse(face) {
            Some(r) if r < *face => r,
            _ => face.clone(),
        }
    }

    /// Number of unoriented codimension-one faces.
    pub fn facet_count(&self) -> usize {
        self.dim * (self.edge + 1) * self.edge.pow(self.dim as u32 - 1)
    }

    /// Dense id in `0..facet_count()`; equal for both orientations of a face.
    ///
    /// Faces normal to axis `k` occupy a contiguous block ordered by the
    /// position along `k` followed by the remaining coordinates.
    pub fn face_id(&self, face: &OrientedFace) -> usize {
        let n = self.dim;
        let l = self.edge;
        let block = (l + 1) * l.pow(n as u32 - 1);
        let pos = face.cell[face.axis] + usize::from(face.side == Side::Plus);
        let mut rest = 0;
        for (k, &c) in face.cell.iter().enumerate() {
            if k != face.axis {
                rest = rest * l + c;
            }
        }
        face.axis * block + pos * l.pow(n as u32 - 1) + rest
    }

    /// Canonical oriented representative for a dense id.
    pub fn face_from_id(&self, id: usize) -> OrientedFace {
        let n = self.dim;
        let l = self.edge;
        let inner = l.pow(n as u32 - 1);
        let block = (l + 1) * inner;
        let axis = id / block;
        let pos = (id % block) / inner;
        let mut rest = id % inner;
        let mut cell = vec![0; n];
        for k in (0..n).rev() {
            if k != axis {
                cell[k] = rest % l;
                rest /= l;
            }
        }
        if pos == 0 {
            cell[axis] = 0;
            OrientedFace { cell, axis, side: Side::Minus }
        } else {
            cell[axis] = pos - 1;
            OrientedFace { cell, axis, side: Side::Plus }
        }
    }

    /// `+1` if `face` is the canonical representative of its id, else `-1`.
    pub fn orientation_sign(&self, face: &OrientedFace) -> i64 {
        let pos = face.cell[face.axis] + usize::from(face.side == Side::Plus);
        match (face.side, pos) {
            (Side::Minus, 0) => 1,
            (Side::Minus, _) => -1,
            (Side::Plus, _) => 1,
        }
    }
}

/// Index `alpha` of a block in the 5^N tiling.
pub type BlockIndex = Vec<i8>;

/// Sign vector `gamma` in `{-1, 1}^N`.
pub type SignVector = Vec<i8>;

/// Tiling of `[0, 5l]^N` by blocks `[0, l]^N + l*alpha + 2l`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockDecomposition {
    pub dim: usize,
    pub edge: usize,
}

impl BlockDecomposition {
    pub fn new(dim: usize, edge: usize) -> Result<Self, LatticeError> {
        if dim == 0 || edge == 0 {
            return Err(LatticeError::InvalidGrid("dimension and edge must be positive".into()));
        }
        Ok(Self { dim, edge })
    }

    /// All `5^N` indices, lexicographic with entries in `-2..=2`.
    pub fn all_indices(&self) -> Vec<BlockIndex> {
        let mut out = Vec::with_capacity(5usize.pow(self.dim as u32));
        for_each_multi_index(self.dim, 5, |m| {
            out.push(m.iter().map(|&v| v as i8 - 2).collect())
        });
        out
    }

    /// All `2^N` sign vectors, lexicographic with `-1 < 1`.
    pub fn all_signs(&self) -> Vec<SignVector> {
        let mut out = Vec::with_capacity(1 << self.dim);
        for_each_multi_index(self.dim, 2, |m| {
            out.push(m.iter().map(|&v| if v == 0 { -1 } else { 1 }).collect())
        });
        out
    }

    /// Integer lower and upper corners of the block.
    pub fn block_corners(&self, alpha: &[i8]) -> (Vec<i64>, Vec<i64>) {
        let l = self.edge as i64;
        let lo: Vec<i64> = alpha.iter().map(|&a| l * a as i64 + 2 * l).collect();
        let hi = lo.iter().map(|v| v + l).collect();
        (lo, hi)
    }

    /// Block center, a multiple of 1/2.
    pub fn block_center(&self, alpha: &[i8]) -> Vec<f64> {
        let (lo, _) = self.block_corners(alpha);
        lo.iter().map(|&v| v as f64 + self.edge as f64 / 2.0).collect()
    }

    /// `alpha` touches the outer layer: `max |alpha_i| = 2`.
    pub fn in_outer(alpha: &[i8]) -> bool {
        alpha.iter().any(|a| a.abs() == 2)
    }

    /// `min_i alpha_i gamma_i = -2`.
    pub fn in_signed(alpha: &[i8], gamma: &[i8]) -> bool {
        alpha.iter().zip(gamma).any(|(a, g)| a * g == -2)
    }

    /// Open-cube shell: inside `(0, 5l)^N` and outside `[l, 4l]^N`.
    pub fn in_outer_region(&self, x: &[f64]) -> bool {
        let l = self.edge as f64;
        let inside_big = x.iter().all(|&v| v > 0.0 && v < 5.0 * l);
        let inside_core = x.iter().all(|&v| v >= l && v <= 4.0 * l);
        inside_big && !inside_core
    }

    /// Interior of the union of blocks with `alpha` in the signed index set.
    ///
    /// A point of `(0, 5l)^N` is interior to the union iff every closed block
    /// containing it belongs to the set.
    pub fn in_signed_region(&self, x: &[f64], gamma: &[i8]) -> bool {
        let l = self.edge as f64;
        if !x.iter().all(|&v| v > 0.0 && v < 5.0 * l) {
            return false;
        }
        // candidate alpha_i values per coordinate: one, or two on a block wall
        let options: Vec<Vec<i8>> = x
            .iter()
            .map(|&v| {
                let q = v / l;
                let f = q.floor();
                if f == q {
                    vec![f as i8 - 3, f as i8 - 2]
                } else {
                    vec![f as i8 - 2]
                }
            })
            .collect();
        let mut all_in = true;
        let mut alpha = vec![0i8; self.dim];
        fn rec(
            k: usize,
            options: &[Vec<i8>],
            alpha: &mut Vec<i8>,
            gamma: &[i8],
            all_in: &mut bool,
        ) {
            if !*all_in {
                return;
            }
            if k == options.len() {
                if !BlockDecomposition::in_signed(alpha, gamma) {
                    *all_in = false;
                }
                return;
            }
            for &a in &options[k] {
                alpha[k] = a;
                rec(k + 1, options, alpha, gamma, all_in);
            }
        }
        rec(0, &options, &mut alpha, gamma, &mut all_in);
        all_in
    }

    /// Cell centers of the central block `[2l, 3l]^N`.
    pub fn central_centers(&self) -> Vec<Vec<f64>> {
        let off = 2.0 * self.edge as f64;
        let mut out = Vec::new();
        for_each_multi_index(self.dim, self.edge, |c| {
            out.push(c.iter().map(|&v| off + v as f64 + 0.5).collect())
        });
        out
    }
}

/// Sup-norm distance from `y` to the axis-aligned box `[lo, hi]`.
pub fn box_distance_inf(y: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    y.iter()
        .zip(lo.iter().zip(hi))
        .map(|(&v, (&a, &b))| (a - v).max(v - b).max(0.0))
        .fold(0.0, f64::max)
}

/// Whether `y - sigma` lies in the open orthant cone `{gamma_i x_i > 0}`.
pub fn in_cone(y: &[f64], gamma: &[i8], sigma: &[f64]) -> bool {
    y.iter()
        .zip(sigma)
        .zip(gamma)
        .all(|((&v, &s), &g)| g as f64 * (v - s) > 0.0)
}

/// Whether `y` lies in the union of translated cones `C_gamma + sigma`.
pub fn cone_membership(y: &[f64], gamma: &[i8], centers: &[Vec<f64>]) -> bool {
    centers.iter().any(|s| in_cone(y, gamma, s))
}

/// First center witnessing cone membership, if any.
pub fn cone_witness<'a>(y: &[f64], gamma: &[i8], centers: &'a [Vec<f64>]) -> Option<&'a [f64]> {
    centers.iter().find(|s| in_cone(y, gamma, s)).map(|s| s.as_slice())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn single_square_has_four_boundary_edges() {
        let g = CubicalGrid::new(2, 1).unwrap();
        assert_eq!(g.enumerate_faces(1).unwrap().len(), 4);
        let of = g.oriented_faces();
        assert_eq!(of.len(), 4);
        assert!(of.iter().all(|f| g.is_boundary(f)));
    }

    #[test]
    fn two_by_two_edge_counts() {
        let g = CubicalGrid::new(2, 2).unwrap();
        assert_eq!(g.enumerate_faces(1).unwrap().len(), 12);
        let of = g.oriented_faces();
        let boundary = of.iter().filter(|f| g.is_boundary(f)).count();
        let interior_ids: HashSet<usize> = of
            .iter()
            .filter(|f| !g.is_boundary(f))
            .map(|f| g.face_id(f))
            .collect();
        assert_eq!(boundary, 8);
        assert_eq!(interior_ids.len(), 4);
        assert_eq!(g.facet_count(), 12);
    }

    #[test]
    fn unit_cube_has_six_faces() {
        let g = CubicalGrid::new(3, 1).unwrap();
        assert_eq!(g.enumerate_faces(2).unwrap().len(), 6);
    }

    #[test]
    fn face_dimension_out_of_range() {
        let g = CubicalGrid::new(2, 3).unwrap();
        assert_eq!(
            g.enumerate_faces(3),
            Err(LatticeError::Dimension { j: 3, dim: 2 })
        );
    }

    #[test]
    fn face_counts_match_formula() {
        for n in 1..=4 {
            for l in 1..=4 {
                let g = CubicalGrid::new(n, l).unwrap();
                for j in 0..=n {
                    let faces = g.enumerate_faces(j).unwrap();
                    assert_eq!(faces.len(), g.face_count(j).unwrap());
                    let uniq: HashSet<_> = faces.iter().collect();
                    assert_eq!(uniq.len(), faces.len());
                }
                assert_eq!(g.face_count(n - 1).unwrap(), g.facet_count());
            }
        }
    }

    #[test]
    fn face_pairing_is_exhaustively_consistent() {
        for n in 1..=4 {
            for l in 1..=4 {
                let g = CubicalGrid::new(n, l).unwrap();
                let mut owners = vec![0usize; g.facet_count()];
                let mut sign_sum = vec![0i64; g.facet_count()];
                for f in g.oriented_faces() {
                    let id = g.face_id(&f);
                    owners[id] += 1;
                    sign_sum[id] += g.orientation_sign(&f);
                    assert_eq!(g.face_from_id(id), g.canonical(&f));
                    if let Some(r) = g.reverse(&f) {
                        assert_ne!(r.cell, f.cell);
                        assert_eq!(r.side, f.side.flip());
                        assert_eq!(g.face_id(&r), id);
                        assert_eq!(g.orientation_sign(&r), -g.orientation_sign(&f));
                        assert_eq!(g.reverse(&r).unwrap(), f);
                    }
                }
                for (id, &c) in owners.iter().enumerate() {
                    let f = g.face_from_id(id);
                    if g.is_boundary(&f) {
                        assert_eq!(c, 1);
                        assert_eq!(sign_sum[id], 1);
                    } else {
                        assert_eq!(c, 2);
                        assert_eq!(sign_sum[id], 0);
                    }
                }
            }
        }
    }

    #[test]
    fn dual_centers_are_half_integers() {
        let g = CubicalGrid::new(3, 3).unwrap();
        let c = g.dual_centers();
        assert_eq!(c.len(), 27);
        for p in &c {
            for &v in p {
                assert_eq!((v - 0.5).fract(), 0.0);
            }
        }
    }

    #[test]
    fn grid_json_roundtrip() {
        let g = CubicalGrid::with_origin(2, 3, vec![1.0, -2.0]).unwrap();
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, r#"{"N":2,"l":3,"origin":[1.0,-2.0]}"#);
        let back: CubicalGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(back.validated().unwrap(), g);
    }

    #[test]
    fn block_counts() {
        for n in 2..=3 {
            let b = BlockDecomposition::new(n, 1).unwrap();
            let all = b.all_indices();
            assert_eq!(all.len(), 5usize.pow(n as u32));
            let outer = all.iter().filter(|a| BlockDecomposition::in_outer(a)).count();
            assert_eq!(outer, 5usize.pow(n as u32) - 3usize.pow(n as u32));
            for g in b.all_signs() {
                for a in &all {
                    if BlockDecomposition::in_signed(a, &g) {
                        assert!(BlockDecomposition::in_outer(a));
                    }
                }
            }
            // every outer block lies in some signed set
            for a in all.iter().filter(|a| BlockDecomposition::in_outer(a)) {
                assert!(b.all_signs().iter().any(|g| BlockDecomposition::in_signed(a, g)));
            }
        }
    }

    #[test]
    fn signed_set_for_negative_diagonal_has_nine_entries() {
        let b = BlockDecomposition::new(2, 1).unwrap();
        let set: Vec<_> = b
            .all_indices()
            .into_iter()
            .filter(|a| BlockDecomposition::in_signed(a, &[-1, -1]))
            .collect();
        assert_eq!(set.len(), 9);
        assert!(set.iter().all(|a| a[0] == 2 || a[1] == 2));
    }

    #[test]
    fn blocks_tile_the_big_cube() {
        for n in 1..=3 {
            for l in 1..=3 {
                let b = BlockDecomposition::new(n, l).unwrap();
                let all = b.all_indices();
                let vol: i64 = all
                    .iter()
                    .map(|a| {
                        let (lo, hi) = b.block_corners(a);
                        lo.iter().zip(&hi).map(|(x, y)| y - x).product::<i64>()
                    })
                    .sum();
                assert_eq!(vol, (5 * l as i64).pow(n as u32));
                for (i, a) in all.iter().enumerate() {
                    let (lo, hi) = b.block_corners(a);
                    assert!(lo.iter().all(|&v| v >= 0));
                    assert!(hi.iter().all(|&v| v <= 5 * l as i64));
                    for c in &all[i + 1..] {
                        let (lo2, hi2) = b.block_corners(c);
                        let overlap = (0..n).all(|k| lo[k].max(lo2[k]) < hi[k].min(hi2[k]));
                        assert!(!overlap);
                    }
                }
            }
        }
    }

    #[test]
    fn cone_examples() {
        let s = vec![vec![0.5, 0.5]];
        assert!(cone_membership(&[1.0, 1.0], &[1, 1], &s));
        assert!(!cone_membership(&[0.5, 1.0], &[1, 1], &s));
    }

    #[test]
    fn cone_points_stay_far_from_opposite_blocks() {
        let b = BlockDecomposition::new(2, 2).unwrap();
        let centers = b.central_centers();
        let gamma = [1i8, 1];
        let mut checked = 0;
        for i in 0..=100 {
            for j in 0..=100 {
                let y = [i as f64 * 0.1, j as f64 * 0.1];
                if !cone_membership(&y, &gamma, &centers) {
                    continue;
                }
                for a in b.all_indices() {
                    if a.iter().zip(&gamma).any(|(x, g)| x * g == -2) {
                        let (lo, hi) = b.block_corners(&a);
                        let lo: Vec<f64> = lo.iter().map(|&v| v as f64).collect();
                        let hi: Vec<f64> = hi.iter().map(|&v| v as f64).collect();
                        assert!(box_distance_inf(&y, &lo, &hi) >= 2.0);
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 0);
    }

    proptest! {
        #[test]
        fn outer_region_is_union_of_signed_regions(
            l in 1usize..4,
            pts in proptest::collection::vec(0.0f64..1.0, 3),
            snap in proptest::collection::vec(any::<bool>(), 3),
        ) {
            let n = 3;
            let b = BlockDecomposition::new(n, l).unwrap();
            // snap some coordinates to block walls to exercise shared faces
            let x: Vec<f64> = pts.iter().zip(&snap).map(|(&p, &s)| {
                let v = p * 5.0 * l as f64;
                if s { (v / l as f64).round().clamp(1.0, 4.0) * l as f64 } else { v }
            }).collect();
            let outer = b.in_outer_region(&x);
            let union = b.all_signs().iter().any(|g| b.in_signed_region(&x, g));
            prop_assert_eq!(outer, union);
        }

        #[test]
        fn cell_index_roundtrip(n in 1usize..5, l in 1usize..6, seed in any::<usize>()) {
            let g = CubicalGrid::new(n, l).unwrap();
            let i = seed % g.cell_count();
            prop_assert_eq!(g.cell_index(&g.cell_from_index(i)), i);
        }
    }
}
