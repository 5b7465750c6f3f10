//! Fréchet distance between Gaussian fits of two representation sets, and
//! the cluster-size bounds on its two terms.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::cluster::Clustering;
use crate::dense::{l2_normalize_rows, squared_distance};
use crate::error::{Error, Result};

const PSD_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mu: Array1<f64>,
    /// Biased (1/N) covariance.
    pub sigma: Array2<f64>,
}

impl GaussianStats {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

pub fn gaussian_stats(h: &ArrayView2<f64>, normalize_rows: bool) -> Result<GaussianStats> {
    if h.nrows() < 2 {
        return Err(Error::invalid(format!(
            "Gaussian statistics need at least 2 rows, got {}",
            h.nrows()
        )));
    }
    let h = if normalize_rows {
        l2_normalize_rows(h)
    } else {
        h.to_owned()
    };
    let mu = h.mean_axis(Axis(0)).expect("nonempty");
    let centered = &h - &mu;
    let mut sigma = centered.t().dot(&centered) / h.nrows() as f64;
    // exact symmetry; the product is symmetric up to summation order
    let sym = (&sigma + &sigma.t()) * 0.5;
    sigma.assign(&sym);
    Ok(GaussianStats { mu, sigma })
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn check_eigen(values: impl Iterator<Item = f64>) -> Result<Vec<f64>> {
    values
        .map(|v| {
            if v < -PSD_TOLERANCE {
                Err(Error::NotPsd(v))
            } else {
                Ok(v.max(0.0))
            }
        })
        .collect()
}

fn psd_sqrt(a: &Array2<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(to_na(a));
    let roots = check_eigen(eig.eigenvalues.iter().copied())?;
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        roots.len(),
        roots.iter().map(|v| v.sqrt()),
    ));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// tr((ΣaΣb)^{1/2}) as Σ√λ over the spectrum of Σa^{1/2} Σb Σa^{1/2}.
pub fn trace_sqrt_product(sigma_a: &Array2<f64>, sigma_b: &Array2<f64>) -> Result<f64> {
    if sigma_a.dim() != sigma_b.dim() || sigma_a.nrows() != sigma_a.ncols() {
        return Err(Error::shape(format!(
            "covariances {:?} and {:?}",
            sigma_a.dim(),
            sigma_b.dim()
        )));
    }
    let root = psd_sqrt(sigma_a)?;
    let inner = &root * to_na(sigma_b) * &root;
    let inner = (&inner + inner.transpose()) * 0.5;
    let eig = SymmetricEigen::new(inner);
    Ok(check_eigen(eig.eigenvalues.iter().copied())?
        .iter()
        .map(|v| v.sqrt())
        .sum())
}

/// The covariance part tr(Σa + Σb − 2(ΣaΣb)^{1/2}).
pub fn covariance_term(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    let cross = trace_sqrt_product(&a.sigma, &b.sigma)?;
    Ok(a.sigma.diag().sum() + b.sigma.diag().sum() - 2.0 * cross)
}

pub fn mean_shift_sq(a: &GaussianStats, b: &GaussianStats) -> f64 {
    squared_distance(&a.mu.view(), &b.mu.view())
}

pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("dimensions {} and {}", a.dim(), b.dim())));
    }
    let value = mean_shift_sq(a, b) + covariance_term(a, b)?;
    if (-PSD_TOLERANCE..0.0).contains(&value) {
        return Ok(0.0);
    }
    Ok(value)
}

/// (1/N²) Σ_i (N/n − |C_i|)².
pub fn theorem1_bound(clustering: &Clustering) -> f64 {
    let big_n = clustering.num_points() as f64;
    let avg = big_n / clustering.n() as f64;
    clustering
        .sizes()
        .iter()
        .map(|&s| (avg - s as f64).powi(2))
        .sum::<f64>()
        / (big_n * big_n)
}

/// Upper bound on the covariance term:
/// (1/N)ΣΣ‖H_j − H′_i‖² + (n·c_max/N)‖μΔ‖² + (c_max/c_min + N/(n·c_min))·tr Σ_org.
pub fn theorem2_bound(
    h: &ArrayView2<f64>,
    h_prime: &ArrayView2<f64>,
    clustering: &Clustering,
    stats_org: &GaussianStats,
    mean_shift_sq: f64,
) -> Result<f64> {
    if h.nrows() != clustering.num_points() || h_prime.nrows() != clustering.n() || h.ncols() != h_prime.ncols() {
        return Err(Error::shape(format!(
            "H {:?}, H′ {:?} for a clustering of {} into {}",
            h.dim(),
            h_prime.dim(),
            clustering.num_points(),
            clustering.n()
        )));
    }
    let big_n = h.nrows() as f64;
    let n = clustering.n() as f64;
    let spread: f64 = h
        .axis_iter(Axis(0))
        .zip(clustering.assignment())
        .map(|(row, &c)| squared_distance(&row, &h_prime.row(c)))
        .sum::<f64>()
        / big_n;
    let c_max = *clustering.sizes().iter().max().expect("n ≥ 1") as f64;
    let c_min = *clustering.sizes().iter().min().expect("n ≥ 1") as f64;
    let trace = stats_org.sigma.diag().sum();
    Ok(spread + n * c_max / big_n * mean_shift_sq + (c_max / c_min + big_n / (n * c_min)) * trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn stats(mu: Array1<f64>, sigma: Array2<f64>) -> GaussianStats {
        GaussianStats { mu, sigma }
    }

    #[test]
    fn stats_cases() {
        let same = Array2::from_elem((5, 3), 0.7);
        let s = gaussian_stats(&same.view(), false).unwrap();
        assert!(s.sigma.iter().all(|&v| v.abs() < 1e-15));

        let two = array![[1.0, 0.0], [0.0, 1.0]];
        let s = gaussian_stats(&two.view(), false).unwrap();
        assert_eq!(s.mu, array![0.5, 0.5]);
        assert_eq!(s.sigma, array![[0.25, -0.25], [-0.25, 0.25]]);

        assert!(gaussian_stats(&array![[1.0, 2.0]].view(), false).is_err());
    }

    #[test]
    fn trace_sqrt_cases() {
        let i3 = Array2::<f64>::eye(3);
        assert!((trace_sqrt_product(&i3, &i3).unwrap() - 3.0).abs() < 1e-12);
        assert!(trace_sqrt_product(&i3, &Array2::zeros((3, 3))).unwrap().abs() < 1e-12);
        let a = Array2::from_diag(&array![4.0, 1.0, 0.25]);
        let b = Array2::from_diag(&array![1.0, 9.0, 4.0]);
        let expected = 2.0 + 3.0 + 1.0;
        assert!((trace_sqrt_product(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn not_psd_rejected() {
        let bad = array![[1.0, 0.0], [0.0, -0.5]];
        let err = trace_sqrt_product(&bad, &Array2::eye(2)).unwrap_err();
        assert!(matches!(err, Error::NotPsd(_)));
    }

    #[test]
    fn fid_one_dimensional() {
        let a = stats(array![1.5], array![[4.0]]);
        let b = stats(array![-0.5], array![[0.25]]);
        let expected = 4.0 + (2.0f64 - 0.5).powi(2);
        assert!((fid(&a, &b).unwrap() - expected).abs() < 1e-10);
        assert!(fid(&a, &a).unwrap().abs() < 1e-8);
    }

    #[test]
    fn fid_dimension_mismatch() {
        let a = stats(array![0.0], array![[1.0]]);
        let b = stats(array![0.0, 0.0], Array2::eye(2));
        assert!(fid(&a, &b).is_err());
    }

    #[test]
    fn theorem1_arithmetic() {
        let pts = Array2::<f64>::zeros((4, 1));
        let c = Clustering::from_assignment(vec![0, 1, 1, 1], 2, &pts.view()).unwrap();
        assert_eq!(theorem1_bound(&c), 0.125);
        let b = Clustering::from_assignment(vec![0, 1, 0, 1], 2, &pts.view()).unwrap();
        assert_eq!(theorem1_bound(&b), 0.0);
    }
}
