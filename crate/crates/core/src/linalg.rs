//! Dense linear-algebra helpers shared by the solver modules.
//!
//! Everything here works on small dynamically sized `nalgebra` matrices. The
//! Lyapunov solver uses a complex Schur form so that no 2×2 block handling is
//! needed in the triangular back-substitution.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type CMat = DMatrix<Complex<f64>>;
pub type Vector = DVector<f64>;

const EIG_MAX_ITER: usize = 10_000;

/// Induced ∞-norm (maximum absolute row sum).
pub fn inf_norm(m: &Mat) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// `(M + Mᵀ)/2`; the result is bitwise symmetric.
pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|x| Complex::new(x, 0.0))
}

pub fn is_finite(m: &Mat) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Eigenvalues of a general real square matrix.
pub fn eigenvalues(m: &Mat) -> Result<Vec<Complex<f64>>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "eigenvalues of a non-square {}×{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, EIG_MAX_ITER)
        .ok_or_else(|| Error::Numerical("real Schur iteration did not converge".into()))?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part over the spectrum.
pub fn spectral_abscissa(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn symmetric_eigenvalues(m: &Mat) -> Result<Vector> {
    SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, EIG_MAX_ITER)
        .map(|e| e.eigenvalues)
        .ok_or_else(|| Error::Numerical("symmetric eigenvalue iteration did not converge".into()))
}

/// Eigenvalues and orthonormal eigenvectors (as columns) of a symmetric matrix.
pub fn symmetric_eigen(m: &Mat) -> Result<(Vector, Mat)> {
    SymmetricEigen::try_new(symmetrize(m), f64::EPSILON, EIG_MAX_ITER)
        .map(|e| (e.eigenvalues, e.eigenvectors))
        .ok_or_else(|| Error::Numerical("symmetric eigenvalue iteration did not converge".into()))
}

pub fn min_symmetric_eigenvalue(m: &Mat) -> Result<f64> {
    Ok(symmetric_eigenvalues(m)?.min())
}

/// Least eigenvalue of a Hermitian matrix, computed through the real
/// symmetric embedding `[[Re, -Im], [Im, Re]]` (same spectrum, doubled).
pub fn hermitian_min_eigenvalue(h: &CMat) -> Result<f64> {
    let m = h.nrows();
    let mut e = Mat::zeros(2 * m, 2 * m);
    for i in 0..m {
        for j in 0..m {
            let z = h[(i, j)];
            e[(i, j)] = z.re;
            e[(i + m, j + m)] = z.re;
            e[(i, j + m)] = -z.im;
            e[(i + m, j)] = z.im;
        }
    }
    min_symmetric_eigenvalue(&e)
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Dimension of the space of symmetric n×n matrices.
pub fn sym_dim(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Coordinates of a symmetric matrix in the basis `E_ii = e_i e_iᵀ`,
/// `E_ij = e_i e_jᵀ + e_j e_iᵀ` (i < j), ordered row-major over the upper
/// triangle. The coordinates are simply the upper-triangle entries.
pub fn vec_sym(m: &Mat) -> Vector {
    let n = m.nrows();
    let mut v = Vector::zeros(sym_dim(n));
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            v[k] = m[(i, j)];
            k += 1;
        }
    }
    v
}

pub fn unvec_sym(v: &Vector, n: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

/// k-th element of the symmetric basis used by [`vec_sym`].
pub fn sym_basis(n: usize, k: usize) -> Mat {
    let mut v = Vector::zeros(sym_dim(n));
    v[k] = 1.0;
    unvec_sym(&v, n)
}

/// Solver for `FᵀX + XF = −Q` with a cached complex Schur form of `F`.
///
/// With `F = V T V*` the equation becomes `Tᵀ Y + Y T = Vᵀ(−Q)V` for
/// `Y = Vᵀ X V`, which is solved column by column with forward substitution.
/// One step of iterative refinement is applied to every solve.
#[derive(Debug, Clone)]
pub struct LyapunovSolver {
    f: Mat,
    v: CMat,
    t: CMat,
    pivot_floor: f64,
}

impl LyapunovSolver {
    pub fn new(f: &Mat) -> Result<Self> {
        let n = f.nrows();
        if n == 0 || f.ncols() != n {
            return Err(Error::Dimension(format!(
                "Lyapunov operator must be square and non-empty, got {}×{}",
                f.nrows(),
                f.ncols()
            )));
        }
        if !is_finite(f) {
            return Err(Error::Numerical("non-finite Lyapunov operator".into()));
        }
        let schur = Schur::try_new(to_complex(f), f64::EPSILON, EIG_MAX_ITER)
            .ok_or_else(|| Error::Numerical("complex Schur iteration did not converge".into()))?;
        let (v, t) = schur.unpack();
        let scale = f.norm().max(f64::MIN_POSITIVE);
        Ok(Self {
            f: f.clone(),
            v,
            t,
            pivot_floor: 1e3 * f64::EPSILON * scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.f.nrows()
    }

    /// Returns `X` with `FᵀX + XF = −Q`. `X` is symmetric whenever `Q` is.
    pub fn solve(&self, q: &Mat) -> Result<Mat> {
        let n = self.dim();
        if q.nrows() != n || q.ncols() != n {
            return Err(Error::Dimension(format!(
                "Lyapunov right-hand side is {}×{}, expected {n}×{n}",
                q.nrows(),
                q.ncols()
            )));
        }
        let rhs = -q;
        let x0 = self.solve_general(&rhs)?;
        let resid = &rhs - (self.f.transpose() * &x0 + &x0 * &self.f);
        let mut x = x0 + self.solve_general(&resid)?;
        if q == &q.transpose() {
            x = symmetrize(&x);
        }
        Ok(x)
    }

    /// Residual `‖FᵀX + XF + Q‖_∞`.
    pub fn residual(&self, x: &Mat, q: &Mat) -> f64 {
        inf_norm(&(self.f.transpose() * x + x * &self.f + q))
    }

    // Solves FᵀX + XF = C.
    fn solve_general(&self, c: &Mat) -> Result<Mat> {
        let n = self.dim();
        let t = &self.t;
        let ch = self.v.transpose() * to_complex(c) * &self.v;
        let mut y = CMat::zeros(n, n);
        for k in 0..n {
            let mut rhs: Vec<Complex<f64>> = ch.column(k).iter().copied().collect();
            for j in 0..k {
                let tjk = t[(j, k)];
                for (i, r) in rhs.iter_mut().enumerate() {
                    *r -= y[(i, j)] * tjk;
                }
            }
            let tkk = t[(k, k)];
            for i in 0..n {
                let mut s = rhs[i];
                for l in 0..i {
                    s -= t[(l, i)] * y[(l, k)];
                }
                let d = t[(i, i)] + tkk;
                if d.norm() <= self.pivot_floor {
                    return Err(Error::Numerical(format!(
                        "Lyapunov operator is singular: eigenvalues {} and {} sum to ~0",
                        t[(i, i)],
                        tkk
                    )));
                }
                y[(i, k)] = s / d;
            }
        }
        let x = self.v.conjugate() * y * self.v.adjoint();
        Ok(x.map(|z| z.re))
    }
}

/// Convenience wrapper: `X` with `FᵀX + XF = −Q`.
pub fn lyap_solve(f: &Mat, q: &Mat) -> Result<Mat> {
    LyapunovSolver::new(f)?.solve(q)
}

/// Solves the generalized (stochastic) Lyapunov equation
/// `AᵀX + XA + Σ_j C_jᵀ X C_j + Q = 0` directly through its n²×n²
/// Kronecker representation. This route does not go through
/// [`LyapunovSolver`], so it can serve as an independent check on it.
pub fn stochastic_gramian(a: &Mat, noise: &[Mat], q: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let id = Mat::identity(n, n);
    let at = a.transpose();
    let mut k = id.kronecker(&at) + at.kronecker(&id);
    for c in noise {
        let ct = c.transpose();
        k += ct.kronecker(&ct);
    }
    let rhs = -Vector::from_column_slice(q.as_slice());
    let lu = k.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("stochastic Lyapunov operator is singular".into()))?;
    if !sol.iter().all(|x| x.is_finite()) {
        return Err(Error::Singular(
            "stochastic Lyapunov solve produced non-finite entries".into(),
        ));
    }
    let x = Mat::from_column_slice(n, n, sol.as_slice());
    Ok(if q == &q.transpose() { symmetrize(&x) } else { x })
}

/// Stable pairwise summation with a fixed reduction tree.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nonnormal_stable() -> Mat {
        Mat::from_row_slice(3, 3, &[-1.0, 4.0, 0.5, 0.0, -2.0, 3.0, 0.2, -1.0, -1.5])
    }

    #[test]
    fn scalar_lyapunov() {
        let x = lyap_solve(&Mat::from_element(1, 1, -1.0), &Mat::from_element(1, 1, 2.0)).unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_lyapunov() {
        let f = Mat::from_diagonal(&Vector::from_vec(vec![-1.0, -2.0]));
        let x = lyap_solve(&f, &Mat::identity(2, 2)).unwrap();
        let expect = Mat::from_diagonal(&Vector::from_vec(vec![0.5, 0.25]));
        assert!(max_abs(&(x - expect)) < 1e-15);
    }

    #[test]
    fn nonnormal_residual_and_symmetry() {
        let f = nonnormal_stable();
        let q = Mat::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.0, 0.4, -0.1, 0.4, 3.0]);
        let solver = LyapunovSolver::new(&f).unwrap();
        let x = solver.solve(&q).unwrap();
        assert!(solver.residual(&x, &q) <= 1e-10 * (1.0 + inf_norm(&q)));
        assert_eq!(x, x.transpose());
    }

    #[test]
    fn singular_operator_is_reported() {
        // eigenvalues ±1 sum to zero
        let f = Mat::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]));
        let err = lyap_solve(&f, &Mat::identity(2, 2)).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }

    #[test]
    fn kronecker_gramian_matches_lyapunov_without_noise() {
        let f = nonnormal_stable();
        let q = Mat::identity(3, 3);
        let a = lyap_solve(&f, &q).unwrap();
        let b = stochastic_gramian(&f, &[], &q).unwrap();
        assert!(max_abs(&(a - b)) < 1e-10);
    }

    #[test]
    fn hermitian_embedding_eigenvalue() {
        // [[2, i],[-i, 2]] has eigenvalues 1 and 3
        let h = CMat::from_row_slice(
            2,
            2,
            &[
                Complex::new(2.0, 0.0),
                Complex::new(0.0, 1.0),
                Complex::new(0.0, -1.0),
                Complex::new(2.0, 0.0),
            ],
        );
        assert!((hermitian_min_eigenvalue(&h).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sym_vec_roundtrip() {
        let m = Mat::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let v = vec_sym(&m);
        assert_eq!(v.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(unvec_sym(&v, 3), m);
        let e = sym_basis(3, 1);
        assert_eq!(e[(0, 1)], 1.0);
        assert_eq!(e[(1, 0)], 1.0);
    }
}
