//! Brute-force estimator oracles, kept implementationally independent of the
//! production code paths in [`crate::econ`].
//!
//! The least-squares oracle forms the normal equations in exact rational
//! arithmetic (every `f64` converts exactly) and solves them by fraction-free
//! Gaussian elimination, so its only rounding happens in the final conversion
//! back to `f64`. The long-run variance oracles evaluate the covariance sums
//! directly from their definitions.

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

/// Exact normal-equations solve: returns the coefficients of the least
/// squares problem `min ||y - X b||`, or `None` when `X'X` is singular.
pub fn ols_normal_equations(x: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let n = x.len();
    if n == 0 || y.len() != n {
        return None;
    }
    let p = x[0].len();
    let xr: Vec<Vec<BigRational>> = x
        .iter()
        .map(|row| row.iter().map(|&v| BigRational::from_float(v).unwrap()).collect())
        .collect();
    let yr: Vec<BigRational> = y.iter().map(|&v| BigRational::from_float(v).unwrap()).collect();

    // X'X and X'y, exactly.
    let mut a = vec![vec![BigRational::zero(); p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            let mut s = BigRational::zero();
            for r in 0..n {
                s += &xr[r][i] * &xr[r][j];
            }
            a[i][j] = s;
        }
        let mut s = BigRational::zero();
        for r in 0..n {
            s += &xr[r][i] * &yr[r];
        }
        a[i][p] = s;
    }

    // Gaussian elimination with pivoting on the largest magnitude entry.
    for col in 0..p {
        let pivot_row = (col..p).max_by(|&r1, &r2| a[r1][col].abs().cmp(&a[r2][col].abs()))?;
        if a[pivot_row][col].is_zero() {
            return None;
        }
        a.swap(col, pivot_row);
        for row in col + 1..p {
            if a[row][col].is_zero() {
                continue;
            }
            let factor = &a[row][col] / &a[col][col];
            for k in col..=p {
                let delta = &factor * &a[col][k];
                a[row][k] -= delta;
            }
        }
    }

    // Back substitution.
    let mut beta = vec![BigRational::zero(); p];
    for row in (0..p).rev() {
        let mut s = a[row][p].clone();
        for k in row + 1..p {
            s -= &a[row][k] * &beta[k];
        }
        beta[row] = s / &a[row][row];
    }
    Some(beta.iter().map(|b| b.to_f64().unwrap()).collect())
}

/// Bartlett-weighted long-run variance of the mean, written out from the
/// definition.
pub fn newey_west_from_definition(series: &[f64], lags: usize) -> f64 {
    let t = series.len() as f64;
    let mean = series.iter().sum::<f64>() / t;
    let gamma = |l: usize| -> f64 {
        let mut s = 0.0;
        for i in l..series.len() {
            s += (series[i] - mean) * (series[i - l] - mean);
        }
        s / t
    };
    let mut total = gamma(0);
    for l in 1..=lags {
        total += 2.0 * (1.0 - l as f64 / (lags as f64 + 1.0)) * gamma(l);
    }
    total / t
}

/// Unit-weighted long-run variance of the mean; the raw value, which may be
/// nonpositive.
pub fn hansen_hodrick_from_definition(series: &[f64], lags: usize) -> f64 {
    let t = series.len() as f64;
    let mean = series.iter().sum::<f64>() / t;
    let gamma = |l: usize| -> f64 {
        let mut s = 0.0;
        for i in l..series.len() {
            s += (series[i] - mean) * (series[i - l] - mean);
        }
        s / t
    };
    let mut total = gamma(0);
    for l in 1..=lags {
        total += 2.0 * gamma(l);
    }
    total / t
}

/// Smallest integer series (by length, then lexicographically over a small
/// alphabet) whose unit-weighted variance estimate is nonpositive. Used to
/// exercise the documented fallback path.
pub fn find_nonpositive_hh_series(lags: usize, max_len: usize) -> Option<Vec<f64>> {
    let alphabet: [f64; 3] = [-1.0, 0.0, 1.0];
    fn advance(idx: &mut [usize], base: usize) -> bool {
        for i in (0..idx.len()).rev() {
            idx[i] += 1;
            if idx[i] < base {
                return true;
            }
            idx[i] = 0;
        }
        false
    }
    for len in lags + 2..=max_len {
        let mut idx = vec![0usize; len];
        loop {
            let series: Vec<f64> = idx.iter().map(|&i| alphabet[i]).collect();
            // Constant series are a trivial zero; look for a real example.
            if series.iter().any(|&v| v != series[0])
                && hansen_hodrick_from_definition(&series, lags) <= 0.0
            {
                return Some(series);
            }
            if !advance(&mut idx, alphabet.len()) {
                break;
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_solve_on_small_system() {
        // y = 1 + 2a - b, exactly representable inputs.
        let x = vec![
            vec![1.0, 0.0, 0.0],
            vec![1.0, 1.0, 0.0],
            vec![1.0, 0.0, 1.0],
            vec![1.0, 2.0, 1.0],
        ];
        let y = vec![1.0, 3.0, 0.0, 4.0];
        let beta = ols_normal_equations(&x, &y).unwrap();
        assert_abs_diff_eq!(beta[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(beta[1], 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(beta[2], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_system_is_none() {
        let x = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let y = vec![1.0, 2.0, 3.0];
        assert!(ols_normal_equations(&x, &y).is_none());
    }

    #[test]
    fn definitional_worked_values() {
        assert_eq!(newey_west_from_definition(&[1.0, 2.0, 3.0, 4.0], 1), 0.390625);
        assert_eq!(hansen_hodrick_from_definition(&[1.0, 2.0, 3.0, 4.0], 1), 0.46875);
    }

    #[test]
    fn search_finds_nonpositive_series() {
        let series = find_nonpositive_hh_series(1, 6).unwrap();
        assert!(hansen_hodrick_from_definition(&series, 1) <= 0.0);
    }
}
