//! Small dense linear-algebra helpers shared by the physics modules.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

/// Reciprocal 2-norm condition number, 0 for singular or non-finite input.
pub(crate) fn rcond(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    if m.iter().any(|x| !x.is_finite()) {
        return 0.0;
    }
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

/// Eigenvalues of the symmetric-definite pencil `P v = lambda K v`, ascending.
pub(crate) fn generalized_eigenvalues(p: &DMatrix<f64>, k: &DMatrix<f64>) -> Option<DVector<f64>> {
    let chol = Cholesky::new(k.clone())?;
    let l = chol.l();
    let linv = l.clone().try_inverse()?;
    let mut reduced = &linv * p * linv.transpose();
    symmetrize(&mut reduced);
    let mut values = SymmetricEigen::new(reduced).eigenvalues;
    values.as_mut_slice().sort_by(f64::total_cmp);
    Some(values)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Eigenpairs of a real symmetric matrix sorted by ascending eigenvalue.
pub(crate) fn sorted_eigen(m: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Truncated annihilation operator on `dim` Fock levels.
pub(crate) fn annihilation(dim: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = (n as f64).sqrt();
    }
    a
}

/// `phi_zpf (a + a^dag)` on `dim` levels.
pub(crate) fn position(dim: usize, zpf: f64) -> DMatrix<f64> {
    let a = annihilation(dim);
    (&a + a.transpose()) * zpf
}

/// The real matrix `cos(d X + offset)` for symmetric `X`, via eigendecomposition.
pub(crate) fn cos_of_symmetric(x: &DMatrix<f64>, d: f64, offset: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(x.clone());
    let f = eig.eigenvalues.map(|l| (d * l + offset).cos());
    let v = &eig.eigenvectors;
    v * DMatrix::from_diagonal(&f) * v.transpose()
}

/// The complex matrix `exp(i d X)` for symmetric `X`.
pub(crate) fn expi_of_symmetric(x: &DMatrix<f64>, d: f64) -> DMatrix<Complex64> {
    let eig = SymmetricEigen::new(x.clone());
    let v = eig.eigenvectors.map(|x| Complex64::new(x, 0.0));
    let f = eig.eigenvalues.map(|l| Complex64::from_polar(1.0, d * l));
    &v * DMatrix::from_diagonal(&f) * v.transpose()
}

pub(crate) fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// `max |H - H^dag|` relative to the largest entry.
pub(crate) fn hermiticity_deviation(h: &DMatrix<Complex64>) -> f64 {
    let n = h.nrows();
    let mut dev = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let x = h[(i, j)];
            scale = scale.max(x.norm());
            dev = dev.max((x - h[(j, i)].conj()).norm());
        }
    }
    if scale == 0.0 {
        0.0
    } else {
        dev / scale
    }
}
