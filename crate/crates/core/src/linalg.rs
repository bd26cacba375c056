//! Dense row-major helpers over `matrixmultiply` and `nalgebra`.

use nalgebra::{DMatrix, SymmetricEigen};

/// `A · Bᵀ` for row-major `A` (m×k) and `B` (n×k); returns row-major m×n.
pub fn matmul_abt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), n * k);
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 {
        return c;
    }
    // SAFETY: slices are sized for the given shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// `Aᵀ · A` for row-major `A` (m×k); returns row-major k×k.
pub fn gram(a: &[f64], m: usize, k: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    let mut c = vec![0.0; k * k];
    if m == 0 {
        return c;
    }
    // SAFETY: Aᵀ is read through swapped strides of the same buffer.
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            k,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            a.as_ptr(),
            k as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            k as isize,
            1,
        );
    }
    c
}

/// Column means of a row-major m×k matrix.
pub fn column_means(a: &[f64], m: usize, k: usize) -> Vec<f64> {
    let mut mean = vec![0.0; k];
    for row in a.chunks_exact(k) {
        for (s, x) in mean.iter_mut().zip(row) {
            *s += x;
        }
    }
    for s in mean.iter_mut() {
        *s /= m as f64;
    }
    mean
}

/// Population covariance (divisor `m`) of a row-major m×k matrix about `mean`.
pub fn covariance(a: &[f64], m: usize, k: usize, mean: &[f64]) -> Vec<f64> {
    let centered: Vec<f64> = a
        .chunks_exact(k)
        .flat_map(|row| row.iter().zip(mean).map(|(x, mu)| x - mu))
        .collect();
    let mut c = gram(&centered, m, k);
    for v in c.iter_mut() {
        *v /= m as f64;
    }
    // exact symmetry
    for i in 0..k {
        for j in (i + 1)..k {
            let s = 0.5 * (c[i * k + j] + c[j * k + i]);
            c[i * k + j] = s;
            c[j * k + i] = s;
        }
    }
    c
}

/// Eigen-decomposition of a symmetric row-major k×k matrix.
///
/// Returns eigenvalues and the eigenvectors as the columns of a row-major
/// k×k matrix.
pub fn symmetric_eigen(mat: &[f64], k: usize) -> (Vec<f64>, Vec<f64>) {
    let m = DMatrix::from_row_slice(k, k, mat);
    let eig = SymmetricEigen::new(m);
    let values = eig.eigenvalues.iter().copied().collect();
    let mut vectors = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            vectors[i * k + j] = eig.eigenvectors[(i, j)];
        }
    }
    (values, vectors)
}

/// Random orthogonal k×k matrix (row-major) from the QR factorization of a
/// Gaussian matrix, with the sign convention that makes it Haar distributed.
pub fn random_orthogonal<R: rand::Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let g = DMatrix::<f64>::from_fn(k, k, |_, _| StandardNormal.sample(&mut *rng));
    let qr = g.qr();
    let (q, r) = (qr.q(), qr.r());
    let mut out = vec![0.0; k * k];
    for j in 0..k {
        let sign = if r[(j, j)] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..k {
            out[i * k + j] = q[(i, j)] * sign;
        }
    }
    out
}
