//! Shared dense linear-algebra helpers for stationary distributions.

use nalgebra::{DMatrix, DVector};

/// Size above which the stationary distribution falls back to power
/// iteration instead of a dense linear solve.
const DENSE_SOLVE_LIMIT: usize = 512;

const POWER_ITER_TOL: f64 = 1e-10;
const POWER_ITER_CAP: usize = 2_000_000;

/// Stationary distribution of a row-stochastic matrix.
///
/// Solves pi P = pi, sum(pi) = 1. For a unichain matrix the solution is
/// unique; transient states get probability zero. Returns `None` if neither
/// the dense solve nor power iteration produces a valid distribution.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = p.nrows();
    assert_eq!(n, p.ncols());
    if n == 1 {
        return Some(DVector::from_element(1, 1.0));
    }
    if n <= DENSE_SOLVE_LIMIT {
        if let Some(pi) = stationary_dense(p) {
            return Some(pi);
        }
    }
    stationary_power(p)
}

fn stationary_dense(p: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = p.nrows();
    // Rows of (P^T - I), with the last equation replaced by sum(pi) = 1.
    let mut a = p.transpose() - DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    b[n - 1] = 1.0;
    let lu = a.lu();
    let pi = lu.solve(&b)?;
    let mut pi = pi.map(|x| if x.abs() < 1e-13 { 0.0 } else { x });
    if pi.iter().any(|&x| x < -1e-9 || !x.is_finite()) {
        return None;
    }
    pi.iter_mut().for_each(|x| *x = x.max(0.0));
    let s: f64 = pi.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return None;
    }
    pi /= s;
    // Residual check guards against a near-singular solve on multichain input.
    let res = (&pi.transpose() * p).transpose() - &pi;
    if res.amax() > 1e-7 {
        return None;
    }
    Some(pi)
}

fn stationary_power(p: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = p.nrows();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..POWER_ITER_CAP {
        let next = (pi.transpose() * p).transpose();
        let diff = (&next - &pi).amax();
        pi = next;
        if diff < POWER_ITER_TOL {
            let s: f64 = pi.iter().sum();
            pi /= s;
            return Some(pi);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_state_stationary() {
        let p = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let pi = stationary_distribution(&p).unwrap();
        assert!((pi[0] - 2.0 / 3.0).abs() < 1e-10);
        assert!((pi[1] - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn transient_states_get_zero_mass() {
        // State 0 leaks into the absorbing pair {1, 2}.
        let p = DMatrix::from_row_slice(
            3,
            3,
            &[0.5, 0.5, 0.0, 0.0, 0.5, 0.5, 0.0, 0.5, 0.5],
        );
        let pi = stationary_distribution(&p).unwrap();
        assert!(pi[0].abs() < 1e-9);
        assert!((pi[1] - 0.5).abs() < 1e-9);
    }
}
