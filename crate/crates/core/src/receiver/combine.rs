//! Linear spatial combining: MMSE from channel estimates or from the sample
//! covariance of the received data.

use nalgebra::Cholesky;
use num_complex::Complex64;

use crate::channel::CMatrix;
use crate::error::{Error, Result};

/// Combining vectors, one row per candidate (`Q x M`).
#[derive(Debug, Clone, PartialEq)]
pub struct CombinerWeights {
    pub w: CMatrix,
}

impl CombinerWeights {
    pub fn n_candidates(&self) -> usize {
        self.w.nrows()
    }

    /// `w_q . h` for candidate `q`.
    pub fn response(&self, q: usize, h: &[Complex64]) -> Complex64 {
        self.w.row(q).iter().zip(h).map(|(a, b)| a * b).sum()
    }
}

fn check_finite(w: &CMatrix) -> Result<()> {
    if w.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("combiner weights"))
    }
}

/// `W = (A^-1 H)^H` for Hermitian positive definite `A`.
fn hermitian_solve(a: CMatrix, h: &CMatrix) -> Result<CombinerWeights> {
    let chol = Cholesky::new(a).ok_or(Error::Singular)?;
    let w = chol.solve(h).adjoint();
    check_finite(&w)?;
    Ok(CombinerWeights { w })
}

/// `w_q = h_q^H (H H^H + noise_var I)^-1` for every column `h_q` of `h_hat` (M x Q).
pub fn mmse_weights(h_hat: &CMatrix, noise_var: f64) -> Result<CombinerWeights> {
    if h_hat.ncols() == 0 {
        return Err(Error::Dimension("no candidates to combine".into()));
    }
    let m = h_hat.nrows();
    let mut a = h_hat * h_hat.adjoint();
    for i in 0..m {
        a[(i, i)] += noise_var;
    }
    hermitian_solve(a, h_hat)
}

/// Sample covariance `Y Y^H / L` plus diagonal loading of `1e-6 * trace / M`.
pub fn sample_covariance(y_d: &CMatrix) -> Result<CMatrix> {
    let (m, l) = y_d.shape();
    if l == 0 {
        return Err(Error::Dimension("no data columns".into()));
    }
    let mut r = y_d * y_d.adjoint() / Complex64::new(l as f64, 0.0);
    let delta = 1e-6 * r.trace().re / m as f64;
    for i in 0..m {
        r[(i, i)] += delta;
    }
    Ok(r)
}

/// `w_q = h_q^H R_y^-1` with `R_y` the loaded sample covariance of `y_d`.
pub fn ry_weights(y_d: &CMatrix, h_hat: &CMatrix) -> Result<CombinerWeights> {
    if y_d.nrows() != h_hat.nrows() {
        return Err(Error::Dimension(format!(
            "data has {} antennas, estimates have {}",
            y_d.nrows(),
            h_hat.nrows()
        )));
    }
    ry_weights_with(&sample_covariance(y_d)?, h_hat)
}

/// Like [`ry_weights`] with a precomputed covariance.
pub fn ry_weights_with(r_y: &CMatrix, h_hat: &CMatrix) -> Result<CombinerWeights> {
    hermitian_solve(r_y.clone(), h_hat)
}

/// `s_q = w_q Y` for every candidate; returns `Q x L`.
pub fn combine(w: &CombinerWeights, y_d: &CMatrix) -> Result<CMatrix> {
    if w.w.ncols() != y_d.nrows() {
        return Err(Error::Dimension(format!(
            "weights have {} taps, data has {} antennas",
            w.w.ncols(),
            y_d.nrows()
        )));
    }
    Ok(&w.w * y_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::complex_gaussian;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn scalar_case() {
        let mut h = CMatrix::zeros(4, 1);
        h[(0, 0)] = c(1.0);
        let w = mmse_weights(&h, 1.0).unwrap();
        assert!((w.w[(0, 0)] - c(0.5)).norm() < 1e-15);
        assert!(w.w.iter().skip(1).all(|v| v.norm() < 1e-15));
    }

    #[test]
    fn zero_forcing_limit() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = CMatrix::from_fn(6, 6, |_, _| complex_gaussian(&mut rng, 1.0));
        let w = mmse_weights(&h, 1e-12).unwrap();
        let p = &w.w * &h;
        for q in 0..6 {
            for j in 0..6 {
                let target = if q == j { c(1.0) } else { c(0.0) };
                assert!((p[(q, j)] - target).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn combine_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = CMatrix::from_fn(4, 10, |_, _| complex_gaussian(&mut rng, 1.0));
        let mut w = CMatrix::zeros(1, 4);
        w[(0, 0)] = c(1.0);
        let s = combine(&CombinerWeights { w }, &y).unwrap();
        assert_eq!(s.row(0), y.row(0));
        let s = combine(&CombinerWeights { w: CMatrix::zeros(1, 4) }, &y).unwrap();
        assert!(s.iter().all(|v| *v == c(0.0)));
        assert!(combine(&CombinerWeights { w: CMatrix::zeros(1, 3) }, &y).is_err());
    }

    #[test]
    fn single_user_noiseless_is_scaled_copy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = CMatrix::from_fn(8, 1, |_, _| complex_gaussian(&mut rng, 1.0));
        let s: Vec<Complex64> = (0..50).map(|i| if i % 3 == 0 { c(1.0) } else { c(-1.0) }).collect();
        let y = CMatrix::from_fn(8, 50, |m, i| h[(m, 0)] * s[i]);
        for w in [mmse_weights(&h, 0.1).unwrap(), ry_weights(&y, &h).unwrap()] {
            let out = combine(&w, &y).unwrap();
            let scale = out[(0, 0)] / s[0];
            for i in 0..50 {
                assert!((out[(0, i)] - scale * s[i]).norm() < 1e-9 * scale.norm().max(1.0));
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let h = CMatrix::zeros(4, 0);
        assert!(mmse_weights(&h, 1.0).is_err());
        let y = CMatrix::zeros(4, 10);
        assert!(ry_weights(&y, &CMatrix::zeros(3, 1)).is_err());
        // All-zero data: loading is zero as well, covariance is singular.
        assert!(ry_weights(&y, &CMatrix::zeros(4, 1)).is_err());
    }
}
