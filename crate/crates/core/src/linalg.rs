//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Spectral (induced 2-) norm. Empty matrices have norm zero.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    if m.nrows() == 1 || m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

/// Ratio of extreme singular values; infinite for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    let mut ev = SymmetricEigen::new(symmetrize(m)).eigenvalues;
    ev.as_mut_slice().sort_by(f64::total_cmp);
    ev
}

/// Unique positive semidefinite square root, negative eigenvalues clipped at zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Spectral norm of `QᵀQ - I`, i.e. the orthogonality defect of the columns of `q`.
pub fn orthogonality_defect(q: &DMatrix<f64>) -> f64 {
    let g = q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols());
    symmetric_eigenvalues(&g).iter().fold(0.0_f64, |acc, l| acc.max(l.abs()))
}

/// Modified Gram-Schmidt on the columns of `q`.
pub fn modified_gram_schmidt(q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = q.clone();
    for j in 0..out.ncols() {
        for i in 0..j {
            let proj = out.column(i).dot(&out.column(j));
            let qi = out.column(i).clone_owned();
            out.column_mut(j).axpy(-proj, &qi, 1.0);
        }
        let norm = out.column(j).norm();
        if norm <= f64::EPSILON * q.norm().max(1.0) {
            return Err(Error::Conditioning {
                condition: f64::INFINITY,
                cap: 0.0,
                context: "Gram-Schmidt met a dependent column".into(),
            });
        }
        out.column_mut(j).unscale_mut(norm);
    }
    Ok(out)
}

/// Dense QR factorization with the diagonal of R forced positive.
pub fn qr_positive(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let qr = x.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..r.nrows().min(r.ncols()) {
        let d = r[(i, i)];
        if d == 0.0 || !d.is_finite() {
            return Err(Error::Conditioning {
                condition: f64::INFINITY,
                cap: 0.0,
                context: "initial fundamental matrix is singular".into(),
            });
        }
        if d < 0.0 {
            r.row_mut(i).neg_mut();
            q.column_mut(i).neg_mut();
        }
    }
    Ok((q, r))
}

/// Orthonormal basis (thin QR) of the column span of `m`.
pub fn orthonormal_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.ncols() == 0 {
        return m.clone();
    }
    m.clone().qr().q()
}

/// Inverse with a condition-number guard.
pub fn guarded_inverse(m: &DMatrix<f64>, cap: f64, context: &str) -> Result<DMatrix<f64>> {
    let condition = condition_number(m);
    if !(condition <= cap) {
        return Err(Error::Conditioning {
            condition,
            cap,
            context: context.to_string(),
        });
    }
    m.clone().try_inverse().ok_or_else(|| Error::Conditioning {
        condition: f64::INFINITY,
        cap,
        context: context.to_string(),
    })
}

/// Largest absolute entry strictly below the diagonal.
pub fn strictly_lower_max(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            worst = worst.max(m[(i, j)].abs());
        }
    }
    worst
}

pub fn zero_strictly_lower(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        for i in (j + 1)..m.nrows() {
            m[(i, j)] = 0.0;
        }
    }
}

pub fn block(m: &DMatrix<f64>, r0: usize, c0: usize, rows: usize, cols: usize) -> DMatrix<f64> {
    m.view((r0, c0), (rows, cols)).clone_owned()
}

/// Row-major nested vectors, the layout used in reports and system files.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Serde helper writing a matrix as row-major nested arrays.
pub fn serialize_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&to_rows(m), s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -4.0]);
        assert_relative_eq!(spectral_norm(&m), 4.0, epsilon = 1e-14);
        assert_eq!(spectral_norm(&DMatrix::zeros(0, 3)), 0.0);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let r = psd_sqrt(&m);
        assert_relative_eq!(&r * &r, m, epsilon = 1e-12);
        assert_relative_eq!(r.clone(), r.transpose(), epsilon = 1e-14);
    }

    #[test]
    fn qr_has_positive_diagonal() {
        let x = DMatrix::from_row_slice(2, 2, &[-1.0, 2.0, 0.5, -3.0]);
        let (q, r) = qr_positive(&x).unwrap();
        assert!(r[(0, 0)] > 0.0 && r[(1, 1)] > 0.0);
        assert_relative_eq!(&q * &r, x, epsilon = 1e-13);
        assert!(orthogonality_defect(&q) < 1e-14);
    }

    #[test]
    fn gram_schmidt_restores_orthogonality() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 1e-6, 1e-6, 1.0]);
        let o = modified_gram_schmidt(&q).unwrap();
        assert!(orthogonality_defect(&o) < 1e-15);
    }

    #[test]
    fn guarded_inverse_rejects_ill_conditioned() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-10]);
        assert!(matches!(guarded_inverse(&m, 1e8, "test"), Err(Error::Conditioning { .. })));
    }
}
