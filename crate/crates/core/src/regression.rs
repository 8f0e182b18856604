//! Ridge least squares through the normal equations.

use crate::scalar::Scalar;

pub(crate) struct RidgeFit<T> {
    pub coefficients: Vec<T>,
    /// Smallest Cholesky pivot relative to the largest diagonal entry.
    pub conditioning: T,
}

/// Minimizes `‖X v − y‖² + ridge ‖v‖²` for row-major `design` (n × m).
pub(crate) fn ridge_least_squares<T: Scalar>(
    design: &[Vec<T>],
    target: &[T],
    ridge: T,
) -> RidgeFit<T> {
    let m = design.first().map_or(0, Vec::len);
    let mut gram = vec![vec![T::zero(); m]; m];
    let mut rhs = vec![T::zero(); m];
    for (row, y) in design.iter().zip(target) {
        for i in 0..m {
            rhs[i] = rhs[i] + row[i] * *y;
            for j in 0..=i {
                gram[i][j] = gram[i][j] + row[i] * row[j];
            }
        }
    }
    let scale = (0..m).map(|i| gram[i][i]).fold(T::zero(), T::max);
    for i in 0..m {
        gram[i][i] = gram[i][i] + ridge;
    }

    // Cholesky: gram = L Lᵀ, lower triangle in place.
    let mut l = vec![vec![T::zero(); m]; m];
    let mut min_pivot = T::infinity();
    for i in 0..m {
        for j in 0..=i {
            let mut sum = gram[i][j];
            for k in 0..j {
                sum = sum - l[i][k] * l[j][k];
            }
            if i == j {
                let pivot = sum.max(T::min_positive_value());
                min_pivot = min_pivot.min(pivot);
                l[i][i] = pivot.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    let mut z = vec![T::zero(); m];
    for i in 0..m {
        let mut sum = rhs[i];
        for k in 0..i {
            sum = sum - l[i][k] * z[k];
        }
        z[i] = sum / l[i][i];
    }
    let mut v = vec![T::zero(); m];
    for i in (0..m).rev() {
        let mut sum = z[i];
        for k in i + 1..m {
            sum = sum - l[k][i] * v[k];
        }
        v[i] = sum / l[i][i];
    }
    let conditioning = if scale > T::zero() { min_pivot / scale } else { T::zero() };
    RidgeFit { coefficients: v, conditioning }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_linear_map() {
        let design = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, -1.0]];
        let target: Vec<f64> = design.iter().map(|r| 3.0 * r[0] - 2.0 * r[1]).collect();
        let fit = ridge_least_squares(&design, &target, 1e-12);
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-9);
        assert!((fit.coefficients[1] + 2.0).abs() < 1e-9);
        assert!(fit.conditioning > 0.1);
    }

    #[test]
    fn collinear_design_stays_finite() {
        let design = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        let target = vec![1.0, 2.0];
        let fit = ridge_least_squares(&design, &target, 1e-8);
        assert!(fit.coefficients.iter().all(|c: &f64| c.is_finite()));
        assert!((fit.coefficients[0] + fit.coefficients[1] - 1.0).abs() < 1e-6);
        assert!(fit.conditioning < 1e-6);
    }
}
