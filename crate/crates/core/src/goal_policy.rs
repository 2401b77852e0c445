//! Stationary goal policies. The KDE policy is a Gaussian mixture over the
//! embedded observation set with a single shared bandwidth matrix: the
//! sample covariance rescaled by n^(-1/(d+4)). Goals are drawn by exact
//! mixture sampling (uniform component choice + Cholesky jitter).

use crate::error::Error;
use crate::linalg;
use crate::Result;
use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

const REGULARIZATION: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct KdeModel {
    pub samples: Array2<f64>,
    pub bandwidth: Array2<f64>,
    pub cholesky: Array2<f64>,
    log_det: f64,
}

impl KdeModel {
    /// Rebuild from stored samples and bandwidth; the Cholesky factor and
    /// log-determinant are recomputed the same way `kde_fit` derives them.
    pub fn from_parts(samples: Array2<f64>, bandwidth: Array2<f64>) -> Result<Self> {
        let d = bandwidth.nrows();
        let chol = linalg::cholesky(&bandwidth.view())?;
        let log_det = 2.0 * (0..d).map(|i| chol[[i, i]].ln()).sum::<f64>();
        Ok(KdeModel {
            samples,
            bandwidth,
            cholesky: chol,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }
}

/// Scott-style rescale factor n^(-1/(d+4)).
pub fn scott_factor(n: usize, d: usize) -> f64 {
    (n as f64).powf(-1.0 / (d as f64 + 4.0))
}

/// Fits the KDE. `scott_squared` switches to the textbook rule that rescales
/// covariance by the squared factor; the default follows the literal
/// covariance-times-factor formula.
pub fn kde_fit(outcomes: &ArrayView2<f64>, scott_squared: bool) -> Result<KdeModel> {
    let n = outcomes.nrows();
    let d = outcomes.ncols();
    if n == 0 {
        return Err(Error::EmptyInput("KDE needs at least one sample"));
    }
    let mean = linalg::column_means(outcomes);
    let mut cov = Array2::zeros((d, d));
    if n > 1 {
        for row in outcomes.rows() {
            let c = &row - &mean;
            for i in 0..d {
                for j in 0..d {
                    cov[[i, j]] += c[i] * c[j];
                }
            }
        }
        cov /= (n - 1) as f64;
    }
    let mut factor = scott_factor(n, d);
    if scott_squared {
        factor *= factor;
    }
    let mut h = cov * factor;
    for i in 0..d {
        h[[i, i]] += REGULARIZATION;
    }
    let chol = linalg::cholesky(&h.view())?;
    let log_det = 2.0 * (0..d).map(|i| chol[[i, i]].ln()).sum::<f64>();
    Ok(KdeModel {
        samples: outcomes.to_owned(),
        bandwidth: h,
        cholesky: chol,
        log_det,
    })
}

/// Mixture density (1/n) sum_i (2pi)^(-d/2) |H|^(-1/2) exp(-0.5 dᵀH⁻¹d).
pub fn kde_density(model: &KdeModel, point: &ArrayView1<f64>) -> f64 {
    let d = model.dim() as f64;
    let log_norm = -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + model.log_det);
    let mut sum = 0.0;
    let mut delta = vec![0.0; model.dim()];
    for row in model.samples.rows() {
        for (k, dv) in delta.iter_mut().enumerate() {
            *dv = point[k] - row[k];
        }
        let w = linalg::solve_lower(&model.cholesky.view(), &delta);
        let quad: f64 = w.iter().map(|v| v * v).sum();
        sum += (log_norm - 0.5 * quad).exp();
    }
    sum / model.n() as f64
}

#[derive(Debug, Clone)]
pub enum GoalPolicy {
    /// Mixture over embedded observations.
    Kde(KdeModel),
    /// Isotropic standard normal in the latent space (the -GP variants).
    GaussianPrior { dim: usize },
    /// Uniform over the engineered feature box [0, 1]^dim (RGE-EFR).
    UniformBox { dim: usize },
}

impl GoalPolicy {
    pub fn dim(&self) -> usize {
        match self {
            GoalPolicy::Kde(m) => m.dim(),
            GoalPolicy::GaussianPrior { dim } | GoalPolicy::UniformBox { dim } => *dim,
        }
    }
}

pub fn sample_goal(policy: &GoalPolicy, rng: &mut impl Rng) -> Vec<f64> {
    match policy {
        GoalPolicy::Kde(m) => {
            let i = rng.gen_range(0..m.n());
            let eps: Vec<f64> = (0..m.dim()).map(|_| rng.sample(StandardNormal)).collect();
            let mut g = m.samples.row(i).to_vec();
            for r in 0..m.dim() {
                for c in 0..=r {
                    g[r] += m.cholesky[[r, c]] * eps[c];
                }
            }
            g
        }
        GoalPolicy::GaussianPrior { dim } => {
            (0..*dim).map(|_| rng.sample(StandardNormal)).collect()
        }
        GoalPolicy::UniformBox { dim } => (0..*dim).map(|_| rng.gen::<f64>()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, arr2, Array2};
    use rand::Rng;

    #[test]
    fn scott_factor_matches_arithmetic() {
        assert!((scott_factor(10_000, 2) - 0.2154).abs() < 1e-3);
        assert!((scott_factor(10_000, 2) - (10_000f64).powf(-1.0 / 6.0)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_samples_take_regularized_path() {
        let pts = Array2::from_shape_fn((50, 2), |_| 3.0);
        let m = kde_fit(&pts.view(), false).unwrap();
        assert!((m.bandwidth[[0, 0]] - 1e-9).abs() < 1e-18);
        let mut rng = crate::rng::rng_from(1);
        for _ in 0..100 {
            let g = sample_goal(&GoalPolicy::Kde(m.clone()), &mut rng);
            assert!((g[0] - 3.0).abs() < 1e-3 && (g[1] - 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn standard_normal_data_gives_scott_scaled_identity() {
        let mut rng = crate::rng::rng_from(2);
        let n = 5000;
        let pts = Array2::from_shape_fn((n, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let m = kde_fit(&pts.view(), false).unwrap();
        let f = scott_factor(n, 2);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { f } else { 0.0 };
                assert!(
                    (m.bandwidth[[i, j]] - expect).abs() < 0.1 * f,
                    "H[{i}{j}] = {}",
                    m.bandwidth[[i, j]]
                );
            }
        }
    }

    #[test]
    fn kernel_peak_value() {
        // single sample, identity H (unit-variance data can't produce it
        // directly, so construct the model by hand)
        let samples = arr2(&[[0.0, 0.0]]);
        let h = Array2::eye(2);
        let model = KdeModel {
            samples,
            cholesky: h.clone(),
            bandwidth: h,
            log_det: 0.0,
        };
        let v = kde_density(&model, &arr1(&[0.0, 0.0]).view());
        assert!((v - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one() {
        let mut rng = crate::rng::rng_from(3);
        let pts = Array2::from_shape_fn((40, 2), |_| rng.gen_range(-1.0..1.0));
        let m = kde_fit(&pts.view(), false).unwrap();
        // MC integral over a box that holds all the mass
        let (lo, hi) = (-4.0, 4.0);
        let vol = (hi - lo) * (hi - lo);
        let n_mc = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n_mc {
            let p = arr1(&[rng.gen_range(lo..hi), rng.gen_range(lo..hi)]);
            acc += kde_density(&m, &p.view());
        }
        let integral = acc / n_mc as f64 * vol;
        assert!((integral - 1.0).abs() < 0.03, "integral {integral}");
    }

    #[test]
    fn density_far_away_is_negligible() {
        let pts = arr2(&[[0.0, 0.0], [1.0, 0.5]]);
        let m = kde_fit(&pts.view(), false).unwrap();
        let sigma = m.bandwidth[[0, 0]].sqrt();
        let far = arr1(&[100.0 * sigma.max(1.0), 0.0]);
        assert!(kde_density(&m, &far.view()) < 1e-30);
    }

    #[test]
    fn kde_moment_identity() {
        // mixture of kernels centered on the data: covariance of draws is
        // sample covariance + H = cov * (1 + scott factor)
        let mut rng = crate::rng::rng_from(5);
        let n = 10_000;
        let pts = Array2::from_shape_fn((n, 2), |(_, j)| {
            let s: f64 = rng.sample(StandardNormal);
            if j == 0 {
                s * 2.0
            } else {
                s * 0.5
            }
        });
        let m = kde_fit(&pts.view(), false).unwrap();
        let policy = GoalPolicy::Kde(m);
        let draws = 100_000;
        let mut mean = [0.0, 0.0];
        let mut cov = [[0.0; 2]; 2];
        let samples: Vec<Vec<f64>> = (0..draws).map(|_| sample_goal(&policy, &mut rng)).collect();
        for g in &samples {
            mean[0] += g[0];
            mean[1] += g[1];
        }
        mean[0] /= draws as f64;
        mean[1] /= draws as f64;
        for g in &samples {
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += (g[i] - mean[i]) * (g[j] - mean[j]);
                }
            }
        }
        let factor = 1.0 + scott_factor(n, 2);
        for i in 0..2 {
            for j in 0..2 {
                cov[i][j] /= draws as f64;
                let expect = if i == j {
                    let var = if i == 0 { 4.0 } else { 0.25 };
                    var * factor
                } else {
                    0.0
                };
                let tol = 0.1 * (4.0 * factor);
                assert!(
                    (cov[i][j] - expect).abs() < tol,
                    "cov[{i}][{j}] = {} expect {expect}",
                    cov[i][j]
                );
            }
        }
    }

    #[test]
    fn prior_policy_moments() {
        let mut rng = crate::rng::rng_from(6);
        let policy = GoalPolicy::GaussianPrior { dim: 2 };
        let draws = 100_000;
        let samples: Vec<Vec<f64>> = (0..draws).map(|_| sample_goal(&policy, &mut rng)).collect();
        for d in 0..2 {
            let mean: f64 = samples.iter().map(|g| g[d]).sum::<f64>() / draws as f64;
            let var: f64 =
                samples.iter().map(|g| (g[d] - mean).powi(2)).sum::<f64>() / draws as f64;
            assert!(mean.abs() < 0.05);
            assert!((var - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn uniform_box_policy_stays_in_box() {
        let mut rng = crate::rng::rng_from(7);
        let policy = GoalPolicy::UniformBox { dim: 3 };
        let samples: Vec<Vec<f64>> = (0..10_000).map(|_| sample_goal(&policy, &mut rng)).collect();
        assert!(samples
            .iter()
            .all(|g| g.iter().all(|&v| (0.0..1.0).contains(&v))));
        let mean: f64 = samples.iter().map(|g| g[0]).sum::<f64>() / 10_000.0;
        assert!((mean - 0.5).abs() < 0.02);
    }

    /// Standard normal CDF via the Abramowitz-Stegun 26.2.17 tail polynomial
    /// (absolute error below 1e-7, far inside the KS tolerance).
    fn normal_cdf(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.2316419 * x.abs());
        let poly = t
            * (0.319381530
                + t * (-0.356563782 + t * (1.781477937 + t * (-1.821255978 + t * 1.330274429))));
        let tail = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt() * poly;
        if x >= 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }

    #[test]
    fn kde_goal_draws_pass_marginal_ks_test() {
        // three components with a fixed bandwidth; each marginal of a draw is
        // a 3-component normal mixture with variance H[k][k]
        let samples = arr2(&[[-2.0, 1.0], [0.5, -1.5], [3.0, 0.25]]);
        let bandwidth = arr2(&[[0.5, 0.2], [0.2, 0.8]]);
        let model = KdeModel::from_parts(samples.clone(), bandwidth.clone()).unwrap();
        let policy = GoalPolicy::Kde(model);
        let mut rng = crate::rng::rng_from(8);
        let n = 10_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_goal(&policy, &mut rng)).collect();
        for k in 0..2 {
            let mut xs: Vec<f64> = draws.iter().map(|g| g[k]).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let sd = bandwidth[[k, k]].sqrt();
            let cdf = |x: f64| {
                (0..3)
                    .map(|i| normal_cdf((x - samples[[i, k]]) / sd))
                    .sum::<f64>()
                    / 3.0
            };
            let mut d_stat = 0.0f64;
            for (i, &x) in xs.iter().enumerate() {
                let f = cdf(x);
                d_stat = d_stat.max((f - i as f64 / n as f64).abs());
                d_stat = d_stat.max(((i + 1) as f64 / n as f64 - f).abs());
            }
            // critical value at alpha = 0.01
            let critical = 1.62762 / (n as f64).sqrt();
            assert!(
                d_stat < critical,
                "marginal {k}: KS statistic {d_stat:.5} exceeds {critical:.5}"
            );
        }
    }
}
