//! Dense linear-algebra helpers shared by the basis, model and sampler code.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::substream;

/// Dimension above which `top_eigenpairs` switches to subspace iteration.
pub const DENSE_EIGEN_LIMIT: usize = 500;

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Cholesky factorisation that reports the offending matrix by name.
pub fn cholesky(m: &DMatrix<f64>, name: &str) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::singular(name));
    }
    m.clone().cholesky().ok_or_else(|| Error::singular(name))
}

/// Log-determinant from a Cholesky factor.
pub fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Largest absolute entry of `HᵀH − I`.
pub fn orthonormality_error(h: &DMatrix<f64>) -> f64 {
    let g = h.tr_mul(h);
    let mut worst = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut acc = NeumaierSum::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Eigenpairs of a symmetric matrix sorted by descending eigenvalue.
/// The sort is stable, so tied eigenvalues keep the solver's order.
pub fn symmetric_eigen_descending(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Lower factor `F` with `F Fᵀ = m` for a PSD matrix: Cholesky when it
/// succeeds, otherwise an eigen square root with negative eigenvalues zeroed.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = m.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut f = eig.eigenvectors.clone();
    for (c, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(0.0).sqrt();
        f.column_mut(c).scale_mut(s);
    }
    f
}

fn orthonormal_columns(m: DMatrix<f64>) -> DMatrix<f64> {
    m.qr().q()
}

/// Leading `count` eigenpairs of a symmetric matrix, descending.
///
/// Small problems use a full decomposition. Larger ones run block subspace
/// iteration with Rayleigh-Ritz extraction and stop once every wanted Ritz
/// pair has residual below `1e-11 · λ₁`; a full decomposition is the
/// fallback if that never happens.
pub fn top_eigenpairs(m: &DMatrix<f64>, count: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let count = count.min(n);
    if n <= DENSE_EIGEN_LIMIT || 4 * (count + 10) > n {
        let (vals, vecs) = symmetric_eigen_descending(m);
        return (vals.rows(0, count).into_owned(), vecs.columns(0, count).into_owned());
    }
    let block = count + 10;
    let mut rng = substream(0xE16E_0000, n as u64, count as u64);
    let start = DMatrix::from_fn(n, block, |_, _| rng.random::<f64>() - 0.5);
    let mut q = orthonormal_columns(start);
    for iter in 0..2000 {
        let z = m * &q;
        if iter % 5 == 4 {
            let small = q.tr_mul(&z);
            let (vals, vecs) = symmetric_eigen_descending(&small);
            let ritz = &q * &vecs;
            let lead = vals[0].abs().max(f64::MIN_POSITIVE);
            let az = &z * &vecs;
            let converged = (0..count).all(|c| {
                let r = az.column(c) - ritz.column(c) * vals[c];
                r.norm() <= 1e-11 * lead
            });
            if converged {
                return (vals.rows(0, count).into_owned(), ritz.columns(0, count).into_owned());
            }
            q = orthonormal_columns(az);
            continue;
        }
        q = orthonormal_columns(z);
    }
    let (vals, vecs) = symmetric_eigen_descending(m);
    (vals.rows(0, count).into_owned(), vecs.columns(0, count).into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let values = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(values), 2.0);
    }

    #[test]
    fn dense_eigen_is_descending() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 1.0]);
        let (vals, vecs) = symmetric_eigen_descending(&m);
        assert_eq!(vals.as_slice(), &[5.0, 2.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn subspace_iteration_matches_dense() {
        let n = 620;
        let mut rng = substream(11, 0, 0);
        let f = DMatrix::from_fn(n, 40, |_, _| rng.random::<f64>() - 0.5);
        let mut a = &f * f.transpose();
        for i in 0..n {
            a[(i, i)] += 0.01;
        }
        let (dv, dvec) = symmetric_eigen_descending(&a);
        let (sv, svec) = top_eigenpairs(&a, 6);
        for c in 0..6 {
            assert!((dv[c] - sv[c]).abs() < 1e-8 * dv[0]);
            let dot = dvec.column(c).dot(&svec.column(c)).abs();
            assert!((dot - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn cholesky_names_the_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        match cholesky(&m, "Phi_2") {
            Err(Error::Singular { matrix }) => assert_eq!(matrix, "Phi_2"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
