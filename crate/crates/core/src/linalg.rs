//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
///
/// Ties keep the order produced by the dense solver (stable sort).
pub fn sym_eig_desc(m: &Mat) -> (Vector, Mat) {
    let n = m.nrows();
    if n == 0 {
        return (Vector::zeros(0), Mat::zeros(0, 0));
    }
    let s = symmetrize(m);
    let fm = faer::Mat::<f64>::from_fn(n, n, |i, j| s[(i, j)]);
    let eig = match fm.self_adjoint_eigen(faer::Side::Lower) {
        Ok(e) => e,
        Err(_) => return nalgebra_eig_desc(&s),
    };
    let evals = eig.S().column_vector();
    let evecs = eig.U();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| evals[b].total_cmp(&evals[a]));
    let vals = Vector::from_iterator(n, order.iter().map(|&i| evals[i]));
    let vecs = Mat::from_fn(n, n, |r, k| evecs[(r, order[k])]);
    (vals, vecs)
}

fn nalgebra_eig_desc(s: &Mat) -> (Vector, Mat) {
    let n = s.nrows();
    let eig = nalgebra::SymmetricEigen::new(s.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = Mat::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    (vals, vecs)
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn min_eig(m: &Mat) -> f64 {
    let (v, _) = sym_eig_desc(m);
    v[v.len() - 1]
}

/// Largest singular value.
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let g = if m.nrows() >= m.ncols() {
        m.transpose() * m
    } else {
        m * m.transpose()
    };
    sym_eig_desc(&g).0[0].max(0.0).sqrt()
}

/// Reconstruct a symmetric matrix with eigenvalues clamped from below.
pub fn psd_floor(m: &Mat, floor: f64) -> Mat {
    let (vals, vecs) = sym_eig_desc(m);
    let clamped = Vector::from_iterator(vals.len(), vals.iter().map(|&v| v.max(floor)));
    &vecs * Mat::from_diagonal(&clamped) * vecs.transpose()
}

/// Row `i` of `x` as an owned vector slice.
pub fn row(x: &Mat, i: usize) -> Vec<f64> {
    x.row(i).iter().copied().collect()
}

pub fn all_finite(m: &Mat) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Mean of each column.
pub fn column_means(m: &Mat) -> Vector {
    let n = m.nrows().max(1) as f64;
    Vector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// `AᵀA / n`, symmetrized.
pub fn gram_scaled(a: &Mat, n: f64) -> Mat {
    let mut g = a.transpose() * a;
    g /= n;
    symmetrize(&g)
}
