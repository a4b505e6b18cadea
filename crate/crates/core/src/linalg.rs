//! Minimal fixed-size linear algebra for 4-dimensional parameter spaces.
//!
//! The estimator state per harmonic mode is a 4-vector, so everything the
//! crate needs is 4x4: symmetric eigenvalues for curvature analysis and a
//! dense solve for small least-squares fits. Hand-rolled to keep the core
//! dependency-free and the numerics auditable.

use crate::real::{lit, Real};

/// Parameter-space vector, `[re G, im G, theta_p sin, theta_p cos]` in most uses.
pub type Vec4<S> = [S; 4];

/// Dense 4x4 matrix, row major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat4<S> {
    pub m: [[S; 4]; 4],
}

impl<S: Real> Mat4<S> {
    pub fn zero() -> Self {
        Mat4 {
            m: [[S::zero(); 4]; 4],
        }
    }

    pub fn identity() -> Self {
        let mut a = Self::zero();
        for i in 0..4 {
            a.m[i][i] = S::one();
        }
        a
    }

    pub fn from_rows(rows: [[S; 4]; 4]) -> Self {
        Mat4 { m: rows }
    }

    pub fn diag(d: [S; 4]) -> Self {
        let mut a = Self::zero();
        for i in 0..4 {
            a.m[i][i] = d[i];
        }
        a
    }

    /// `A^T A`, always symmetric positive semidefinite.
    pub fn gram(&self) -> Mat4<S> {
        let mut g = Mat4::zero();
        for i in 0..4 {
            for j in i..4 {
                let mut s = S::zero();
                for k in 0..4 {
                    s += self.m[k][i] * self.m[k][j];
                }
                g.m[i][j] = s;
                g.m[j][i] = s;
            }
        }
        g
    }

    pub fn mul_vec(&self, v: &Vec4<S>) -> Vec4<S> {
        let mut out = [S::zero(); 4];
        for i in 0..4 {
            let mut s = S::zero();
            for j in 0..4 {
                s += self.m[i][j] * v[j];
            }
            out[i] = s;
        }
        out
    }

    pub fn scale(&self, c: S) -> Mat4<S> {
        let mut out = *self;
        for r in out.m.iter_mut() {
            for x in r.iter_mut() {
                *x *= c;
            }
        }
        out
    }

    /// Largest absolute entry; used for scale-aware tolerances.
    pub fn max_abs(&self) -> S {
        let mut m = S::zero();
        for r in &self.m {
            for x in r {
                m = m.max(x.abs());
            }
        }
        m
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`.
    pub fn asymmetry(&self) -> S {
        let mut m = S::zero();
        for i in 0..4 {
            for j in (i + 1)..4 {
                m = m.max((self.m[i][j] - self.m[j][i]).abs());
            }
        }
        m
    }
}

/// Eigenvalues of a symmetric 4x4 matrix, ascending.
///
/// Cyclic Jacobi sweeps; quadratic convergence makes a handful of sweeps
/// sufficient at this size. The off-diagonal mass is driven below a small
/// multiple of machine epsilon relative to the matrix scale.
pub fn sym_eigenvalues<S: Real>(a: &Mat4<S>) -> [S; 4] {
    let mut a = a.m;
    let scale = {
        let mut s = S::zero();
        for r in &a {
            for x in r {
                s = s.max(x.abs());
            }
        }
        s
    };
    if scale == S::zero() {
        return [S::zero(); 4];
    }
    let tol = S::epsilon() * scale * lit(16.0);
    for _sweep in 0..32 {
        let mut off = S::zero();
        for p in 0..4 {
            for q in (p + 1)..4 {
                off = off.max(a[p][q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..4 {
            for q in (p + 1)..4 {
                let apq = a[p][q];
                if apq.abs() <= tol * lit(1.0e-2) {
                    continue;
                }
                let tau = (a[q][q] - a[p][p]) / (lit::<S>(2.0) * apq);
                let t = {
                    let s = if tau >= S::zero() { S::one() } else { -S::one() };
                    s / (tau.abs() + (S::one() + tau * tau).sqrt())
                };
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = t * c;
                // Rotate rows/columns p and q.
                for k in 0..4 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev = [a[0][0], a[1][1], a[2][2], a[3][3]];
    ev.sort_by(|x, y| x.partial_cmp(y).expect("finite eigenvalues"));
    ev
}

/// Solve `A x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` if a pivot falls below `1e-12` relative to the matrix
/// scale, i.e. the system is numerically singular.
pub fn solve<S: Real>(a: &Mat4<S>, b: &Vec4<S>) -> Option<Vec4<S>> {
    let mut m = a.m;
    let mut r = *b;
    let scale = a.max_abs();
    if scale == S::zero() {
        return None;
    }
    let tol = scale * lit(1.0e-12);
    for col in 0..4 {
        let mut piv = col;
        for row in (col + 1)..4 {
            if m[row][col].abs() > m[piv][col].abs() {
                piv = row;
            }
        }
        if m[piv][col].abs() <= tol {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in (col + 1)..4 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                let sub = f * m[col][k];
                m[row][k] -= sub;
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [S::zero(); 4];
    for col in (0..4).rev() {
        let mut s = r[col];
        for k in (col + 1)..4 {
            s -= m[col][k] * x[k];
        }
        x[col] = s / m[col][col];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_diagonal_are_the_diagonal() {
        let a = Mat4::diag([4.0, 1.0, 3.0, 2.0]);
        let ev = sym_eigenvalues(&a);
        assert_eq!(ev, [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn eigenvalues_match_known_block_matrix() {
        // [[2,1],[1,2]] blocks have eigenvalues 1 and 3.
        let a = Mat4::<f64>::from_rows([
            [2.0, 1.0, 0.0, 0.0],
            [1.0, 2.0, 0.0, 0.0],
            [0.0, 0.0, 2.0, 1.0],
            [0.0, 0.0, 1.0, 2.0],
        ]);
        let ev = sym_eigenvalues(&a);
        let expect = [1.0, 1.0, 3.0, 3.0];
        for (e, x) in ev.iter().zip(expect) {
            assert!((e - x).abs() < 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn eigenvalues_satisfy_trace_and_determinant_of_random_symmetric() {
        // Gram matrix of a fixed full-rank A: compare against trace and the
        // characteristic invariants instead of re-deriving eigenvalues.
        let a = Mat4::from_rows([
            [0.3, -1.2, 0.7, 0.0],
            [2.0, 0.4, -0.3, 1.1],
            [-0.5, 0.9, 1.6, -0.2],
            [0.8, 0.1, 0.2, 0.5],
        ]);
        let g = a.gram();
        let ev = sym_eigenvalues(&g);
        let trace: f64 = (0..4).map(|i| g.m[i][i]).sum();
        let ev_sum: f64 = ev.iter().sum();
        assert!((trace - ev_sum).abs() < 1e-12 * trace.abs().max(1.0));
        // Sum of squares equals the squared Frobenius norm for symmetric G.
        let fro2: f64 = g
            .m
            .iter()
            .flat_map(|r| r.iter())
            .map(|x| x * x)
            .sum();
        let ev_sq: f64 = ev.iter().map(|e| e * e).sum();
        assert!((fro2 - ev_sq).abs() < 1e-10 * fro2.max(1.0));
        for e in ev {
            assert!(e >= -1e-12, "gram matrix must be PSD, got {ev:?}");
        }
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = Mat4::<f64>::from_rows([
            [4.0, 1.0, 0.0, 2.0],
            [1.0, 3.0, -1.0, 0.0],
            [0.0, -1.0, 2.0, 0.5],
            [2.0, 0.0, 0.5, 5.0],
        ]);
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let b = a.mul_vec(&x_true);
        let x = solve(&a, &b).unwrap();
        for (xi, ti) in x.iter().zip(x_true) {
            assert!((xi - ti).abs() < 1e-12);
        }
    }

    #[test]
    fn solve_rejects_singular_system() {
        let a = Mat4::from_rows([
            [1.0, 2.0, 3.0, 4.0],
            [2.0, 4.0, 6.0, 8.0],
            [0.0, 1.0, 0.0, 1.0],
            [1.0, 0.0, 1.0, 0.0],
        ]);
        assert!(solve(&a, &[1.0, 2.0, 3.0, 4.0]).is_none());
    }

    #[test]
    fn works_in_f32_too() {
        let a: Mat4<f32> = Mat4::diag([2.0, 2.0, 0.5, 1.0]);
        let ev = sym_eigenvalues(&a);
        assert_eq!(ev, [0.5, 1.0, 2.0, 2.0]);
    }
}
