//! Largest-magnitude eigenvalue of a sparse square matrix.
//!
//! Random reservoir matrices are real and non-symmetric, so their dominant
//! eigenvalue is usually one of a complex-conjugate pair of equal modulus and
//! plain power iteration oscillates instead of converging. A thick-restart
//! Arnoldi iteration keeps a Krylov basis, restarts from the real span of the
//! leading Ritz vectors, and converges on such pairs in a few hundred
//! matrix-vector products.

use nalgebra::{Complex, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CsrMatrix, ReservoirError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KrylovOptions {
    /// Krylov subspace dimension.
    pub basis: usize,
    /// Ritz vectors retained across a restart.
    pub keep: usize,
    /// Relative change in the estimate between restarts.
    pub tolerance: f64,
    /// Ritz residual relative to the estimate.
    pub residual_tolerance: f64,
    pub max_restarts: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { basis: 40, keep: 12, tolerance: 1e-10, residual_tolerance: 1e-8, max_restarts: 500 }
    }
}

pub fn spectral_radius(w: &CsrMatrix) -> Result<f64, ReservoirError> {
    spectral_radius_with(w, &KrylovOptions::default())
}

pub fn spectral_radius_with(w: &CsrMatrix, opts: &KrylovOptions) -> Result<f64, ReservoirError> {
    let n = w.nrows();
    if n != w.ncols() {
        return Err(ReservoirError::DimensionMismatch { expected: n, got: w.ncols() });
    }
    if n == 0 {
        return Err(ReservoirError::InvalidConfig { field: "size", reason: "matrix is empty".into() });
    }
    if w.nnz() == 0 {
        return Ok(0.0);
    }
    // Small matrices go straight to the dense eigensolver.
    if n <= 2 * opts.basis {
        return Ok(max_modulus(&w.to_dense().complex_eigenvalues()));
    }
    thick_restart_arnoldi(w, opts)
}

fn max_modulus(eigs: &DVector<Complex<f64>>) -> f64 {
    eigs.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn thick_restart_arnoldi(w: &CsrMatrix, opts: &KrylovOptions) -> Result<f64, ReservoirError> {
    let n = w.nrows();
    let m = opts.basis;
    let keep = opts.keep.min(m - 2);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_a4b0);
    let mut v = DMatrix::<f64>::zeros(n, m + 1);
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let start = DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    v.set_column(0, &start.normalize());

    let mut w_buf = DVector::<f64>::zeros(n);
    let mut first = 0;
    let mut previous: Option<f64> = None;
    let mut matvecs = 0;

    for _ in 0..opts.max_restarts {
        for j in first..m {
            w.mul_vec_into(v.column(j).as_slice(), w_buf.as_mut_slice());
            matvecs += 1;
            let w_norm = w_buf.norm();
            // Classical Gram-Schmidt, applied twice.
            for _ in 0..2 {
                let basis = v.columns(0, j + 1);
                let coeffs = basis.tr_mul(&w_buf);
                w_buf.gemv(-1.0, &basis, &coeffs, 1.0);
                for k in 0..=j {
                    h[(k, j)] += coeffs[k];
                }
            }
            let beta = w_buf.norm();
            h[(j + 1, j)] = beta;
            if beta <= 1e-12 * w_norm.max(f64::MIN_POSITIVE) {
                // Invariant subspace: its eigenvalues are exact.
                let block = h.view((0, 0), (j + 1, j + 1)).into_owned();
                return Ok(max_modulus(&block.complex_eigenvalues()));
            }
            v.set_column(j + 1, &(&w_buf / beta));
        }

        let hm = h.view((0, 0), (m, m)).into_owned();
        let eigs = hm.complex_eigenvalues();
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&a, &b| eigs[b].norm().total_cmp(&eigs[a].norm()));
        let lead = eigs[order[0]];
        let estimate = lead.norm();
        let y = ritz_vector(&hm, lead);
        let residual = (0..m).map(|k| y[k] * h[(m, k)]).sum::<Complex<f64>>().norm() / y.norm();
        if let Some(prev) = previous {
            if (estimate - prev).abs() < opts.tolerance * estimate && residual < opts.residual_tolerance * estimate {
                return Ok(estimate);
            }
        }
        previous = Some(estimate);

        // Real orthonormal basis for the leading Ritz vectors; a complex
        // vector contributes its real and imaginary parts and its conjugate
        // partner is skipped.
        let mut columns: Vec<DVector<f64>> = Vec::with_capacity(keep + 1);
        let mut used = vec![false; m];
        for &idx in &order {
            if columns.len() >= keep {
                break;
            }
            if used[idx] {
                continue;
            }
            used[idx] = true;
            let lambda = eigs[idx];
            let y = if idx == order[0] { y.clone() } else { ritz_vector(&hm, lambda) };
            if lambda.im.abs() > 1e-12 * lambda.norm() {
                columns.push(y.map(|z| z.re));
                columns.push(y.map(|z| z.im));
                let partner = (0..m)
                    .filter(|&k| k != idx && !used[k])
                    .min_by(|&a, &b| (eigs[a] - lambda.conj()).norm().total_cmp(&(eigs[b] - lambda.conj()).norm()));
                if let Some(p) = partner {
                    used[p] = true;
                }
            } else {
                columns.push(y.map(|z| z.re));
            }
        }
        let qk = DMatrix::from_columns(&columns).qr().q();
        let kk = qk.ncols();
        let t = qk.transpose() * &hm * &qk;
        let residual_row = h.view((m, 0), (1, m)) * &qk;
        let vk = v.columns(0, m) * &qk;
        let last = v.column(m).into_owned();

        h.fill(0.0);
        h.view_mut((0, 0), (kk, kk)).copy_from(&t);
        h.view_mut((kk, 0), (1, kk)).copy_from(&residual_row);
        v.fill(0.0);
        v.columns_mut(0, kk).copy_from(&vk);
        v.set_column(kk, &last);
        first = kk;
    }
    Err(ReservoirError::SpectralNonConvergence { matvecs })
}

/// Eigenvector of `h` for the (approximate) eigenvalue `lambda`, by shifted
/// inverse iteration in complex arithmetic.
fn ritz_vector(h: &DMatrix<f64>, lambda: Complex<f64>) -> DVector<Complex<f64>> {
    let m = h.nrows();
    let shift = lambda + Complex::new(1e-10 * lambda.norm().max(1e-300), 0.0);
    let mut a = h.map(|x| Complex::new(x, 0.0));
    for i in 0..m {
        a[(i, i)] -= shift;
    }
    let lu = a.lu();
    let mut x = DVector::from_element(m, Complex::new(1.0, 0.0));
    for _ in 0..3 {
        if let Some(next) = lu.solve(&x) {
            let norm = next.norm();
            if norm.is_finite() && norm > 0.0 {
                x = next.unscale(norm);
            }
        }
    }
    x
}
