//! Degrees of shell maps, the rearrangement and conical estimates, and Hopf
//! invariants computed as linking numbers of preimage curves.

mod degree;
mod estimates;
mod hopf;

pub use degree::{
    degree_integral, degree_preimage_count, joint_degrees, DegreeConfig, DegreeEntry,
    DegreeMethod, DegreeReport, Weight,
};
pub use estimates::{
    conical_estimate_check, cone_constant, rearrangement_bound_check, Cone, ConeCheck,
    RearrangementCheck,
};
pub use hopf::{hopf_invariant, linking_number, HopfConfig, HopfReport, PreimageStats};

/// `|S^{k}|`, the `k`-dimensional measure of the unit sphere in `R^{k+1}`.
pub fn sphere_measure(k: usize) -> f64 {
    use std::f64::consts::PI;
    // |S^0| = 2, |S^1| = 2 pi, |S^k| = 2 pi / (k - 1) |S^{k-2}|
    let mut m = if k % 2 == 0 { 2.0 } else { 2.0 * PI };
    let mut j = if k % 2 == 0 { 0 } else { 1 };
    while j < k {
        j += 2;
        m *= 2.0 * PI / (j as f64 - 1.0);
    }
    m
}

/// Solves `a x = b` for a row-major `n x n` matrix by partial pivoting.
/// Returns the solution and `det a`, or `None` when `a` is numerically singular.
pub(crate) fn solve(n: usize, a: &[f64], b: &[f64]) -> Option<(Vec<f64>, f64)> {
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let mut det = 1.0;
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return None;
    }
    for c in 0..n {
        let piv = (c..n)
            .max_by(|&i, &j| m[i * n + c].abs().partial_cmp(&m[j * n + c].abs()).expect("finite"))
            .expect("nonempty");
        if m[piv * n + c].abs() <= 1e-14 * scale {
            return None;
        }
        if piv != c {
            for j in 0..n {
                m.swap(c * n + j, piv * n + j);
            }
            x.swap(c, piv);
            det = -det;
        }
        let p = m[c * n + c];
        det *= p;
        for i in c + 1..n {
            let f = m[i * n + c] / p;
            if f != 0.0 {
                for j in c..n {
                    m[i * n + j] -= f * m[c * n + j];
                }
                x[i] -= f * x[c];
            }
        }
    }
    for c in (0..n).rev() {
        let mut s = x[c];
        for j in c + 1..n {
            s -= m[c * n + j] * x[j];
        }
        x[c] = s / m[c * n + c];
    }
    Some((x, det))
}

/// Determinant of a row-major `n x n` matrix.
pub(crate) fn det(n: usize, a: &[f64]) -> f64 {
    solve(n, a, &vec![0.0; n]).map_or(0.0, |(_, d)| d)
}

/// Permutations of `0..k` with their signs, in lexicographic order.
pub(crate) fn permutations(k: usize) -> Vec<(Vec<usize>, f64)> {
    fn rec(cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<(Vec<usize>, f64)>) {
        let k = used.len();
        if cur.len() == k {
            let mut inv = 0;
            for i in 0..k {
                for j in i + 1..k {
                    if cur[i] > cur[j] {
                        inv += 1;
                    }
                }
            }
            out.push((cur.clone(), if inv % 2 == 0 { 1.0 } else { -1.0 }));
            return;
        }
        for i in 0..k {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_measures() {
        use std::f64::consts::PI;
        assert_eq!(sphere_measure(0), 2.0);
        assert!((sphere_measure(1) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_measure(2) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_measure(3) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn solve_and_det() {
        let a = [2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0];
        let (x, d) = solve(3, &a, &[3.0, 5.0, 5.0]).unwrap();
        assert!((d - 18.0).abs() < 1e-12);
        for (v, e) in x.iter().zip([1.0, 1.0, 1.0]) {
            assert!((v - e).abs() < 1e-12);
        }
        assert_eq!(det(2, &[1.0, 2.0, 2.0, 4.0]), 0.0);
    }

    #[test]
    fn permutation_signs() {
        let p = permutations(3);
        assert_eq!(p.len(), 6);
        assert_eq!(p.iter().map(|x| x.1).sum::<f64>(), 0.0);
        assert_eq!(p[1], (vec![0, 2, 1], -1.0));
    }
}
