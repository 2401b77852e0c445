//! PCA embedding: mean vector plus the top-l eigenvectors of the sample
//! covariance. When n < D the eigenproblem is solved on the n x n Gram
//! matrix and mapped back, which keeps the 4900-pixel case cheap.

use super::Dataset;
use crate::error::Error;
use crate::linalg;
use crate::Result;
use ndarray::{Array1, Array2, ArrayView1};

#[derive(Debug, Clone)]
pub struct PcaModel {
    pub mean: Array1<f64>,
    /// D x l, orthonormal columns ordered by decreasing eigenvalue.
    pub components: Array2<f64>,
    pub eigenvalues: Vec<f64>,
}

impl PcaModel {
    pub fn encode(&self, image: &ArrayView1<f64>) -> Vec<f64> {
        let centered = image - &self.mean;
        centered.dot(&self.components).to_vec()
    }
}

pub fn fit_pca(data: &Dataset, l: usize) -> Result<PcaModel> {
    let n = data.n();
    let d = data.dim();
    if l > n.min(d) {
        return Err(Error::LatentTooLarge { l, n, d });
    }
    let mean = linalg::column_means(&data.images.view());
    let centered = &data.images - &mean;
    let denom = (n - 1) as f64;
    let (eigenvalues, components) = if n < d {
        // Gram route: XXᵀ/(n-1) shares nonzero eigenvalues with the
        // covariance; v = Xᵀu / sqrt((n-1) lambda)
        let gram = centered.dot(&centered.t()) / denom;
        let (vals, u) = linalg::sym_eig_topl(&gram.view(), l)?;
        let mut comps = Array2::zeros((d, l));
        for c in 0..l {
            let lam = vals[c].max(0.0);
            let backmap = centered.t().dot(&u.column(c));
            let norm = (denom * lam).sqrt();
            if norm > 1e-300 {
                comps.column_mut(c).assign(&(&backmap / norm));
            }
        }
        (vals, comps)
    } else {
        let cov = centered.t().dot(&centered) / denom;
        linalg::sym_eig_topl(&cov.view(), l)?
    };
    Ok(PcaModel {
        mean,
        components,
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_dataset(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = crate::rng::rng_from(seed);
        Dataset::new(Array2::from_shape_fn((n, d), |_| rng.gen::<f64>())).unwrap()
    }

    #[test]
    fn planar_data_reconstructs_exactly() {
        // points on a 2-D affine plane inside a 60-D space
        let mut rng = crate::rng::rng_from(1);
        let d = 60;
        let b1 = Array1::from_shape_fn(d, |_| rng.gen::<f64>() - 0.5);
        let b2 = Array1::from_shape_fn(d, |_| rng.gen::<f64>() - 0.5);
        let offset = Array1::from_shape_fn(d, |_| rng.gen::<f64>() * 0.1 + 0.4);
        let mut images = Array2::zeros((40, d));
        for mut row in images.rows_mut() {
            let a: f64 = rng.gen_range(-0.2..0.2);
            let b: f64 = rng.gen_range(-0.2..0.2);
            row.assign(&(&offset + &(&b1 * a) + &(&b2 * b)));
        }
        let data = Dataset::new(images.clone()).unwrap();
        let model = fit_pca(&data, 2).unwrap();
        for row in images.rows() {
            let code = model.encode(&row);
            // reconstruct mean + V code
            let recon = &model.mean + &model.components.dot(&Array1::from(code));
            let err = (&row - &recon).iter().map(|v| v.abs()).fold(0.0f64, f64::max);
            assert!(err < 1e-8, "reconstruction error {err}");
        }
    }

    #[test]
    fn mean_image_encodes_to_zero() {
        let data = toy_dataset(30, 25, 2);
        let model = fit_pca(&data, 4).unwrap();
        let code = model.encode(&model.mean.clone().view());
        assert!(code.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn components_are_orthonormal() {
        let data = toy_dataset(50, 40, 3);
        let model = fit_pca(&data, 6).unwrap();
        let gram = model.components.t().dot(&model.components);
        for i in 0..6 {
            for j in 0..6 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn matches_full_eigendecomposition_on_toy_set() {
        // 50 samples, both Gram (n < d) and covariance (n >= d) routes
        for (n, d) in [(50, 80), (50, 30)] {
            let data = toy_dataset(n, d, 4);
            let model = fit_pca(&data, 5).unwrap();
            let mean = linalg::column_means(&data.images.view());
            let centered = &data.images - &mean;
            let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
            let (full_vals, full_vecs) = linalg::jacobi_eig(&cov.view());
            for i in 0..5 {
                assert!(
                    (model.eigenvalues[i] - full_vals[i]).abs() < 1e-8,
                    "lambda {i}: {} vs {}",
                    model.eigenvalues[i],
                    full_vals[i]
                );
                // same axis up to sign
                let dot = model.components.column(i).dot(&full_vecs.column(i));
                assert!((dot.abs() - 1.0).abs() < 1e-6, "axis {i} dot {dot}");
            }
        }
    }

    #[test]
    fn l_too_large_is_an_error() {
        let data = toy_dataset(10, 25, 5);
        assert!(fit_pca(&data, 11).is_err());
    }
}
