//! Spectral analysis of generating matrices.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimum separation between the dominant eigenvalue and the rest.
const GAP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Stationary {
    /// Dominant eigenvalue.
    pub beta: f64,
    /// Left eigenvector `v H = beta v`, normalized to sum to one.
    pub v: Vec<f64>,
    /// Largest real part of the other eigenvalues, divided by `beta`.
    pub lambda: f64,
    /// Largest Jordan block among the eigenvalues attaining `lambda`.
    pub nu: usize,
}

/// Dominant eigenpair of `H` (row-vector convention) together with the
/// second-eigenvalue ratio and its Jordan order.
pub fn stationary_allocation(h: &DMatrix<f64>) -> Result<Stationary> {
    let k = h.nrows();
    if !h.is_square() || k < 2 {
        return Err(Error::param("generating matrix must be square with at least two rows"));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::param("generating matrix has non-finite entries"));
    }
    let mut eig: Vec<Complex<f64>> = h.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.re.total_cmp(&a.re));
    let dominant = eig[0];
    let scale = h.abs().max().max(1.0);
    if dominant.im.abs() > GAP_TOLERANCE * scale || !(dominant.re > 0.0) {
        return Err(Error::Numerical(format!("dominant eigenvalue {dominant} is not real and positive")));
    }
    let beta = dominant.re;
    let second = eig[1].re;
    if beta - second < GAP_TOLERANCE * scale {
        return Err(Error::Numerical(format!("dominant eigenvalue {beta} is not simple (next {second})")));
    }

    // v (H - beta I) = 0 together with sum v = 1, as an overdetermined
    // system solved in the least-squares sense
    let mut a = DMatrix::zeros(k + 1, k);
    a.view_mut((0, 0), (k, k)).copy_from(&(h - DMatrix::identity(k, k) * beta).transpose());
    a.row_mut(k).fill(1.0);
    let mut rhs = DVector::zeros(k + 1);
    rhs[k] = 1.0;
    let v = a
        .clone()
        .svd(true, true)
        .solve(&rhs, 1e-14)
        .map_err(|e| Error::Numerical(format!("stationary system: {e}")))?;
    if (&a * &v - &rhs).norm() > 1e-8 * scale {
        return Err(Error::Numerical("no stationary vector for the dominant eigenvalue".into()));
    }
    if v.iter().any(|&x| x < -1e-12) {
        return Err(Error::Numerical(format!("stationary vector {:?} has negative entries", v.as_slice())));
    }

    let lambda = second / beta;
    let attaining: Vec<Complex<f64>> =
        eig[1..].iter().copied().filter(|e| (e.re - second).abs() < 1e-7 * scale).collect();
    let nu = attaining.iter().map(|&mu| jordan_order(h, mu)).max().unwrap_or(1);
    Ok(Stationary { beta, v: v.iter().map(|x| x.max(0.0)).collect(), lambda, nu })
}

/// Size of the largest Jordan block at `mu`: the first power at which the
/// rank of `(H - mu I)^j` stops dropping.
fn jordan_order(h: &DMatrix<f64>, mu: Complex<f64>) -> usize {
    let k = h.nrows();
    let shifted: DMatrix<Complex<f64>> =
        DMatrix::from_fn(k, k, |i, j| Complex::new(h[(i, j)], 0.0) - if i == j { mu } else { Complex::new(0.0, 0.0) });
    let tol = 1e-7 * h.abs().max().max(1.0);
    let mut power = shifted.clone();
    let mut rank = power.rank(tol);
    for order in 1..k {
        power = &power * &shifted;
        let next = power.rank(tol);
        if next == rank {
            return order;
        }
        rank = next;
    }
    k
}

/// Limiting allocation of an immigrated urn whose rows of `H` sum to a
/// negative number: `a (-H)^{-1}`, normalized.
pub fn imu_limit(rates: &[f64], h: &DMatrix<f64>) -> Result<Vec<f64>> {
    let k = h.nrows();
    if !h.is_square() || rates.len() != k {
        return Err(Error::param("immigration rates and generating matrix disagree in size"));
    }
    let inv = (-h)
        .try_inverse()
        .ok_or_else(|| Error::Numerical("-H is singular".into()))?;
    let row = DMatrix::from_row_slice(1, k, rates) * inv;
    let total = row.sum();
    if !(total > 0.0) {
        return Err(Error::Numerical("immigration limit has no positive mass".into()));
    }
    Ok(row.iter().map(|x| x / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rpw_spectrum() {
        let (p1, p2) = (0.7, 0.4);
        let h = DMatrix::from_row_slice(2, 2, &[p1, 1.0 - p1, 1.0 - p2, p2]);
        let s = stationary_allocation(&h).unwrap();
        assert!((s.beta - 1.0).abs() < 1e-12);
        assert!((s.v[0] - 2.0 / 3.0).abs() < 1e-12 && (s.v[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!((s.lambda - (p1 + p2 - 1.0)).abs() < 1e-12);
        assert_eq!(s.nu, 1);
        // (q2, q1) is a fixed row vector
        let fixed = DMatrix::from_row_slice(1, 2, &[0.6, 0.3]);
        assert!((&fixed * &h - &fixed).abs().max() < 1e-15);
    }

    #[test]
    fn equal_arms_are_balanced() {
        let h = DMatrix::from_row_slice(2, 2, &[0.6, 0.4, 0.4, 0.6]);
        let s = stationary_allocation(&h).unwrap();
        assert!((s.v[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn wei_three_arms() {
        let q = [0.2, 0.4, 0.8];
        let h = DMatrix::from_fn(3, 3, |i, j| if i == j { 1.0 - q[i] } else { q[i] / 2.0 });
        let s = stationary_allocation(&h).unwrap();
        for (v, e) in s.v.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!((v - e).abs() < 1e-12, "{:?}", s.v);
        }
    }

    #[test]
    fn scaled_identity_is_not_simple() {
        let h = DMatrix::identity(3, 3) * 2.5;
        assert!(matches!(stationary_allocation(&h), Err(Error::Numerical(_))));
    }

    #[test]
    fn defective_subdominant_block() {
        // eigenvalues 2 (dominant) and a 2x2 Jordan block at 0.5
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 0.5, 1.0, 0.0, 0.0, 0.5]);
        let s = stationary_allocation(&h).unwrap();
        assert_eq!(s.nu, 2);
        assert!((s.lambda - 0.25).abs() < 1e-12);
    }

    #[test]
    fn drop_the_loser_limit() {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![-0.3, -0.6]));
        let v = imu_limit(&[1.0, 1.0], &h).unwrap();
        assert!((v[0] - 2.0 / 3.0).abs() < 1e-12);
    }
}
