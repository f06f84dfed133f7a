use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::MetricError;

/// Gaussian fit of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    pub mean: DVector<f64>,
    /// Unbiased (divisor `n - 1`) covariance.
    pub cov: DMatrix<f64>,
    pub n: usize,
}

impl FeatureStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self) -> Result<(), MetricError> {
        if self.n < 2 {
            return Err(MetricError::TooFewSamples(self.n));
        }
        if self.cov.nrows() != self.dim() || self.cov.ncols() != self.dim() {
            return Err(MetricError::Dim(self.cov.nrows(), self.dim()));
        }
        if self.mean.iter().chain(self.cov.iter()).any(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite("feature stats"));
        }
        Ok(())
    }
}

/// Mean and unbiased covariance of `rows`, accumulated in f64.
pub fn feature_stats<R: AsRef<[f32]>>(rows: &[R]) -> Result<FeatureStats, MetricError> {
    let n = rows.len();
    if n < 2 {
        return Err(MetricError::TooFewSamples(n));
    }
    let d = rows[0].as_ref().len();
    if d == 0 {
        return Err(MetricError::Dim(0, 0));
    }
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, row) in rows.iter().enumerate() {
        let row = row.as_ref();
        if row.len() != d {
            return Err(MetricError::RowLength(i, row.len(), d));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(MetricError::NonFinite("features"));
            }
            x[(i, j)] = f64::from(v);
        }
    }
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.sum() / n as f64));
    for mut row in x.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = x.tr_mul(&x) / (n - 1) as f64;
    // The product is symmetric up to rounding; make it exactly so.
    for i in 0..d {
        for j in 0..i {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(FeatureStats { mean, cov, n })
}

/// Eigenvalues below `1e-10` times the largest magnitude are treated as zero.
const EIGEN_FLOOR: f64 = 1e-10;

fn clamped_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, nalgebra::Dyn> {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for v in eig.eigenvalues.iter_mut() {
        if *v < EIGEN_FLOOR * max {
            *v = 0.0;
        }
    }
    eig
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = clamped_eigen(m);
    let root = eig.eigenvalues.map(f64::sqrt);
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussian fits:
/// `‖μa − μb‖² + Tr(Σa + Σb − 2(Σa^½ Σb Σa^½)^½)`.
pub fn fid(a: &FeatureStats, b: &FeatureStats) -> Result<f64, MetricError> {
    a.check()?;
    b.check()?;
    if a.dim() != b.dim() {
        return Err(MetricError::Dim(a.dim(), b.dim()));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let root_a = sqrt_psd(&a.cov);
    let inner = &root_a * &b.cov * &root_a;
    let cross: f64 = clamped_eigen(&inner).eigenvalues.iter().map(|v| v.sqrt()).sum();
    let value = diff + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    if !value.is_finite() {
        return Err(MetricError::NonFinite("fid"));
    }
    Ok(value.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_rows_have_zero_covariance() {
        let s = feature_stats(&[vec![1.0f32, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(s.cov, DMatrix::zeros(2, 2));
        assert_eq!(s.mean.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn hand_three_by_two() {
        // mean (2, 4); deviations (-1,-2), (0,1), (1,1)
        let s = feature_stats(&[vec![1.0f32, 2.0], vec![2.0, 5.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(s.mean.as_slice(), &[2.0, 4.0]);
        let want = DMatrix::from_row_slice(2, 2, &[1.0, 1.5, 1.5, 3.0]);
        assert!((s.cov - want).abs().max() < 1e-15);
    }

    #[test]
    fn single_row_is_an_error() {
        assert_eq!(
            feature_stats(&[vec![1.0f32]]),
            Err(MetricError::TooFewSamples(1))
        );
    }

    #[test]
    fn self_distance_is_zero() {
        let s = feature_stats(&[vec![1.0f32, 0.5, 2.0], vec![0.0, 1.0, 1.0], vec![2.0, 2.0, 0.0], vec![1.0, -1.0, 3.0]]).unwrap();
        assert!(fid(&s, &s).unwrap() < 1e-9);
    }

    #[test]
    fn non_finite_stats_rejected() {
        let mut s = feature_stats(&[vec![1.0f32], vec![2.0]]).unwrap();
        s.mean[0] = f64::NAN;
        assert_eq!(fid(&s, &s), Err(MetricError::NonFinite("feature stats")));
    }
}
