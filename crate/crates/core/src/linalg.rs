//! Thin dense linear-algebra layer over LAPACK.
//!
//! Symmetric problems go straight to `dsyevd` (divide and conquer), which is
//! several times faster than the `dsyev` path `ndarray-linalg` uses for the
//! Gram sizes this crate works with. General complex problems use
//! `ndarray-linalg`.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::{Eig, Inverse};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigendecomposition `A = V diag(values) Vᵀ` of a real symmetric matrix.
///
/// `values` are ascending; column `j` of `vectors` belongs to `values[j]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl SymmetricEigen {
    pub fn max(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Compare a skinny transposed BLAS product against a scalar loop.
///
/// OpenBLAS 0.3.20 picks a faulty `dgemm` kernel on some AVX-512 hosts;
/// setting `OPENBLAS_CORETYPE=Haswell` before the process starts avoids it.
pub fn blas_self_check() -> Result<()> {
    let a = Array2::from_shape_fn((64, 6), |(i, k)| if (i >> k) & 1 == 1 { 1.0 } else { -1.0 });
    let b = Array2::from_shape_fn((1000, 6), |(i, k)| ((i * 7 + k * 13) % 17) as f64 - 8.0);
    let fast = a.dot(&b.t());
    let mut worst = 0.0f64;
    for ((i, j), v) in fast.indexed_iter() {
        let exact: f64 = (0..6).map(|k| a[[i, k]] * b[[j, k]]).sum();
        worst = worst.max((v - exact).abs());
    }
    if worst > 0.0 {
        return Err(Error::Linalg(format!(
            "BLAS dgemm self-check failed (max error {worst:e}); set OPENBLAS_CORETYPE=Haswell"
        )));
    }
    Ok(())
}

fn dsyevd(a: ArrayView2<f64>, vectors: bool) -> Result<(Array1<f64>, Vec<f64>)> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(Error::Shape(format!(
            "eigh needs a square matrix, got {rows}x{cols}"
        )));
    }
    let n = rows;
    if n == 0 {
        return Ok((Array1::zeros(0), Vec::new()));
    }
    // Symmetric input, so row- and column-major buffers are the same matrix.
    let mut buf: Vec<f64> = a.iter().copied().collect();
    let mut w = vec![0.0; n];
    let jobz = if vectors { b'V' } else { b'N' };
    let uplo = b'L';
    let n_i = n as i32;
    let mut info = 0i32;

    let mut work_query = [0.0f64];
    let mut iwork_query = [0i32];
    let query = -1i32;
    unsafe {
        lapack_sys::dsyevd_(
            &jobz as *const u8 as *const _,
            &uplo as *const u8 as *const _,
            &n_i,
            buf.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            work_query.as_mut_ptr(),
            &query,
            iwork_query.as_mut_ptr(),
            &query,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Linalg(format!(
            "dsyevd workspace query failed (info {info})"
        )));
    }
    let lwork = work_query[0] as i32;
    let liwork = iwork_query[0];
    let mut work = vec![0.0f64; lwork.max(1) as usize];
    let mut iwork = vec![0i32; liwork.max(1) as usize];
    unsafe {
        lapack_sys::dsyevd_(
            &jobz as *const u8 as *const _,
            &uplo as *const u8 as *const _,
            &n_i,
            buf.as_mut_ptr(),
            &n_i,
            w.as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(Error::Linalg(format!("dsyevd failed (info {info})")));
    }
    Ok((Array1::from(w), buf))
}

/// Full symmetric eigendecomposition. Only the lower triangle is read.
pub fn sym_eigh(a: ArrayView2<f64>) -> Result<SymmetricEigen> {
    let n = a.nrows();
    let (values, buf) = dsyevd(a, true)?;
    // LAPACK writes eigenvectors column-major: buf[j * n + i] = V[i, j].
    let vectors = Array2::from_shape_vec((n, n), buf)
        .map_err(|e| Error::Shape(e.to_string()))?
        .reversed_axes()
        .as_standard_layout()
        .into_owned();
    Ok(SymmetricEigen { values, vectors })
}

/// Eigenvalues only, ascending.
pub fn sym_eigvals(a: ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(dsyevd(a, false)?.0)
}

/// Largest absolute deviation from symmetry.
pub fn asymmetry(a: ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

/// Eigenpairs of a general complex matrix: `A S = S diag(values)`.
pub fn eig_general(a: &Array2<Complex64>) -> Result<(Array1<Complex64>, Array2<Complex64>)> {
    Ok(a.eig()?)
}

pub fn inverse_complex(a: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    Ok(a.inv()?)
}

/// Real part of a complex matrix lifted from a real one.
pub fn to_complex(a: ArrayView2<f64>) -> Array2<Complex64> {
    a.mapv(|v| Complex64::new(v, 0.0))
}
