//! Small linear solvers used by the chain analysis.

use crate::error::{Error, Result};

/// LU factorisation with partial pivoting of a dense row-major matrix.
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pivot) = (k..n)
                .map(|r| (r, a[r * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= scale * 1e-14 {
                return Err(Error::Numerical {
                    reason: format!("singular matrix at column {k}"),
                    residual: pivot,
                });
            }
            if p != k {
                for c in 0..n {
                    a.swap(k * n + c, p * n + c);
                }
                perm.swap(k, p);
            }
            let d = a[k * n + k];
            for r in k + 1..n {
                let f = a[r * n + k] / d;
                a[r * n + k] = f;
                if f != 0.0 {
                    for c in k + 1..n {
                        a[r * n + c] -= f * a[k * n + c];
                    }
                }
            }
        }
        Ok(Self { n, lu: a, perm })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for r in 0..n {
            let s: f64 = (0..r).map(|c| self.lu[r * n + c] * x[c]).sum();
            x[r] -= s;
        }
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| self.lu[r * n + c] * x[c]).sum();
            x[r] = (x[r] - s) / self.lu[r * n + r];
        }
        x
    }
}

/// Sparse row `i`: `(column, coefficient)` pairs.
pub type SparseRows = Vec<Vec<(usize, f64)>>;

/// Gauss-Seidel iteration for `diag[i] x[i] - sum_j off[i][j] x[j] = b[i]`.
///
/// `post_sweep` may renormalise `x` after each sweep. Stops when the largest
/// update falls below `tol` (relative to the largest entry).
pub fn gauss_seidel(
    diag: &[f64],
    off: &SparseRows,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_sweeps: usize,
    mut post_sweep: impl FnMut(&mut [f64]),
) -> Result<usize> {
    let mut last_delta = f64::INFINITY;
    for sweep in 1..=max_sweeps {
        let mut delta = 0.0f64;
        for i in 0..x.len() {
            let acc: f64 = off[i].iter().map(|&(j, w)| w * x[j]).sum();
            let next = (b[i] + acc) / diag[i];
            delta = delta.max((next - x[i]).abs());
            x[i] = next;
        }
        post_sweep(x);
        let size = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        last_delta = delta / size;
        if last_delta < tol {
            return Ok(sweep);
        }
    }
    Err(Error::Numerical {
        reason: format!("Gauss-Seidel did not converge in {max_sweeps} sweeps"),
        residual: last_delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_small_system() {
        // 2x + y = 3, x + 3y = 5  ->  x = 0.8, y = 1.4
        let lu = DenseLu::factor(2, vec![2.0, 1.0, 1.0, 3.0]).unwrap();
        let x = lu.solve(&[3.0, 5.0]);
        assert!((x[0] - 0.8).abs() < 1e-15 && (x[1] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn lu_needs_pivoting() {
        let lu = DenseLu::factor(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(lu.solve(&[2.0, 7.0]), vec![7.0, 2.0]);
    }

    #[test]
    fn singular_is_reported() {
        assert!(matches!(
            DenseLu::factor(2, vec![1.0, 2.0, 2.0, 4.0]),
            Err(Error::Numerical { .. })
        ));
    }

    #[test]
    fn gauss_seidel_converges_on_diagonally_dominant() {
        let diag = [4.0, 5.0];
        let off: SparseRows = vec![vec![(1, 1.0)], vec![(0, 2.0)]];
        // 4x - y = 2, 5y - 2x = 8  ->  x = 1, y = 2
        let mut x = [0.0, 0.0];
        gauss_seidel(&diag, &off, &[2.0, 8.0], &mut x, 1e-15, 200, |_| {}).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-13 && (x[1] - 2.0).abs() < 1e-13);
    }
}
