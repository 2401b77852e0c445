//! Radial normalizing flows: z' = z + beta * h(alpha, r) * (z - c) with
//! h = 1/(alpha + r), r = |z - c|. Effective parameters come from raw ones
//! through alpha = softplus(alpha_raw) and beta = -alpha + softplus(beta_raw),
//! which keeps beta > -alpha so every flow stays invertible. A freshly
//! initialized chain is the identity map (beta = 0).

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softplus_inv(y: f64) -> f64 {
    // ln(e^y - 1), stable enough for the y ~ 1 used at init
    (y.exp() - 1.0).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const R_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RadialFlow {
    pub alpha_raw: f64,
    pub beta_raw: f64,
    pub c: Array1<f64>,
}

impl RadialFlow {
    pub fn alpha(&self) -> f64 {
        softplus(self.alpha_raw)
    }

    pub fn beta(&self) -> f64 {
        -self.alpha() + softplus(self.beta_raw)
    }

    /// One flow step for a single point: (z', logdet of the step Jacobian).
    fn apply_one(&self, z: &ArrayView1<f64>) -> (Array1<f64>, f64) {
        let alpha = self.alpha();
        let beta = self.beta();
        let u = z.to_owned() - &self.c;
        let r = u.dot(&u).sqrt();
        let h = 1.0 / (alpha + r);
        let out = z.to_owned() + &(u.mapv(|v| beta * h * v));
        let d = z.len() as f64;
        let a_term = 1.0 + beta * h;
        let b_term = 1.0 + beta * alpha * h * h;
        let logdet = (d - 1.0) * a_term.ln() + b_term.ln();
        (out, logdet)
    }
}

#[derive(Debug, Clone)]
pub struct FlowGrad {
    pub alpha_raw: f64,
    pub beta_raw: f64,
    pub c: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowGrads {
    pub flows: Vec<FlowGrad>,
}

impl FlowGrads {
    /// Flat gradient views in the same order as `FlowChain::param_slices_mut`.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for f in &self.flows {
            out.push(std::slice::from_ref(&f.alpha_raw));
            out.push(std::slice::from_ref(&f.beta_raw));
            out.push(f.c.as_slice().unwrap());
        }
        out
    }
}

/// Forward pass cache: stages[k] holds z_k for every batch row, so
/// stages.first() is the input and stages.last() the flowed output.
pub struct FlowForward {
    pub stages: Vec<Array2<f64>>,
    pub logdet: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct FlowChain {
    pub flows: Vec<RadialFlow>,
}

impl FlowChain {
    pub fn new(n_flows: usize, dim: usize, rng: &mut impl Rng) -> Self {
        let raw_one = softplus_inv(1.0);
        let flows = (0..n_flows)
            .map(|_| RadialFlow {
                alpha_raw: raw_one,
                beta_raw: raw_one,
                c: Array1::from_shape_fn(dim, |_| rng.gen_range(-0.1..0.1)),
            })
            .collect();
        FlowChain { flows }
    }

    pub fn dim(&self) -> usize {
        self.flows.first().map(|f| f.c.len()).unwrap_or(0)
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for f in &mut self.flows {
            out.push(std::slice::from_mut(&mut f.alpha_raw));
            out.push(std::slice::from_mut(&mut f.beta_raw));
            out.push(f.c.as_slice_mut().unwrap());
        }
        out
    }

    /// Run the whole chain on one point, returning z_K and the summed
    /// log-determinant of the composite Jacobian.
    pub fn apply(&self, z0: &ArrayView1<f64>) -> (Array1<f64>, f64) {
        let mut z = z0.to_owned();
        let mut logdet = 0.0;
        for f in &self.flows {
            let (next, ld) = f.apply_one(&z.view());
            z = next;
            logdet += ld;
        }
        (z, logdet)
    }

    pub fn forward_batch(&self, z0: &Array2<f64>) -> FlowForward {
        let bs = z0.nrows();
        let mut stages = Vec::with_capacity(self.flows.len() + 1);
        stages.push(z0.clone());
        let mut logdet = Array1::zeros(bs);
        for f in &self.flows {
            let prev = stages.last().unwrap();
            let mut next = Array2::zeros(prev.dim());
            for (i, row) in prev.outer_iter().enumerate() {
                let (out, ld) = f.apply_one(&row);
                next.row_mut(i).assign(&out);
                logdet[i] += ld;
            }
            stages.push(next);
        }
        FlowForward { stages, logdet }
    }

    /// Reverse-mode pass: d_zk is dL/d(z_K), logdet_coeff is dL/d(logdet of
    /// any single sample). Returns dL/d(z_0) and parameter gradients.
    pub fn backward_batch(
        &self,
        fwd: &FlowForward,
        d_zk: &Array2<f64>,
        logdet_coeff: f64,
    ) -> (Array2<f64>, FlowGrads) {
        let dim = d_zk.ncols() as f64;
        let mut g = d_zk.clone();
        let mut grads: Vec<FlowGrad> = self
            .flows
            .iter()
            .map(|f| FlowGrad {
                alpha_raw: 0.0,
                beta_raw: 0.0,
                c: Array1::zeros(f.c.len()),
            })
            .collect();

        for k in (0..self.flows.len()).rev() {
            let f = &self.flows[k];
            let alpha = f.alpha();
            let beta = f.beta();
            let z_in = &fwd.stages[k];
            let mut g_next = Array2::zeros(g.dim());
            let mut d_alpha_eff = 0.0;
            let mut d_beta_eff = 0.0;

            for (i, z) in z_in.outer_iter().enumerate() {
                let gs = g.row(i);
                let u = z.to_owned() - &f.c;
                let r = u.dot(&u).sqrt();
                let h = 1.0 / (alpha + r);
                let hp = -h * h;
                let a_term = 1.0 + beta * h;
                let b_term = 1.0 + beta * alpha * h * h;
                let gu = gs.dot(&u);

                // dL/dz through the map: (1 + beta h) g + beta h' (g.u) u / r
                let mut dz = gs.mapv(|v| a_term * v);
                let mut dc = gs.mapv(|v| -beta * h * v);
                if r > R_FLOOR {
                    let coef_map = beta * hp * gu / r;
                    // logdet through r: d(logdet)/dr * u/r
                    let dld_dr =
                        (dim - 1.0) * beta * hp / a_term - 2.0 * beta * alpha * h * h * h / b_term;
                    let coef_ld = logdet_coeff * dld_dr / r;
                    let coef = coef_map + coef_ld;
                    dz = dz + &u.mapv(|v| coef * v);
                    dc = dc - &u.mapv(|v| coef * v);
                }
                g_next.row_mut(i).assign(&dz);
                grads[k].c += &dc;

                // effective-parameter gradients
                d_alpha_eff += gu * beta * hp
                    + logdet_coeff
                        * ((dim - 1.0) * beta * hp / a_term + beta * h * h * h * (r - alpha) / b_term);
                d_beta_eff += gu * h
                    + logdet_coeff * ((dim - 1.0) * h / a_term + alpha * h * h / b_term);
            }

            // alpha = softplus(alpha_raw); beta = -alpha + softplus(beta_raw)
            let sa = sigmoid(f.alpha_raw);
            let sb = sigmoid(f.beta_raw);
            grads[k].alpha_raw += (d_alpha_eff - d_beta_eff) * sa;
            grads[k].beta_raw += d_beta_eff * sb;
            g = g_next;
        }

        (g, FlowGrads { flows: grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use ndarray::Array1;

    fn perturbed_chain(n: usize, dim: usize, seed: u64) -> FlowChain {
        let mut rng = rng_from(seed);
        let mut chain = FlowChain::new(n, dim, &mut rng);
        for f in &mut chain.flows {
            f.alpha_raw += rng.gen_range(-0.5..0.5);
            f.beta_raw += rng.gen_range(-0.5..1.0);
            f.c.mapv_inplace(|v| v * 5.0);
        }
        chain
    }

    #[test]
    fn fresh_chain_is_identity() {
        let mut rng = rng_from(1);
        let chain = FlowChain::new(10, 4, &mut rng);
        for _ in 0..50 {
            let z = Array1::from_shape_fn(4, |_| rng.gen_range(-3.0..3.0));
            let (out, logdet) = chain.apply(&z.view());
            for (a, b) in out.iter().zip(z.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!(logdet.abs() < 1e-12);
        }
    }

    #[test]
    fn center_is_a_fixed_point() {
        let chain = perturbed_chain(1, 3, 2);
        let c = chain.flows[0].c.clone();
        let (out, _) = chain.apply(&c.view());
        for (a, b) in out.iter().zip(c.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn log_det_matches_numerical_jacobian() {
        // central differences on the full chain map, then ln|det J|
        let chain = perturbed_chain(2, 3, 3);
        let mut rng = rng_from(33);
        for _ in 0..10 {
            let z = Array1::from_shape_fn(3, |_| rng.gen_range(-2.0..2.0));
            let (_, analytic) = chain.apply(&z.view());
            let h = 1e-6;
            let mut jac = [[0.0f64; 3]; 3];
            for j in 0..3 {
                let mut zp = z.clone();
                zp[j] += h;
                let (fp, _) = chain.apply(&zp.view());
                let mut zm = z.clone();
                zm[j] -= h;
                let (fm, _) = chain.apply(&zm.view());
                for i in 0..3 {
                    jac[i][j] = (fp[i] - fm[i]) / (2.0 * h);
                }
            }
            let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
                - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
                + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
            assert!(det > 0.0, "flow Jacobian must be orientation-preserving");
            let numeric = det.ln();
            assert!(
                (analytic - numeric).abs() < 1e-5,
                "analytic {analytic} vs numeric {numeric}"
            );
        }
    }

    #[test]
    fn chain_is_injective_on_samples() {
        let chain = perturbed_chain(3, 2, 4);
        let mut rng = rng_from(44);
        for _ in 0..10_000 {
            let z1 = Array1::from_shape_fn(2, |_| rng.gen_range(-3.0..3.0));
            let z2 = Array1::from_shape_fn(2, |_| rng.gen_range(-3.0..3.0));
            if (&z1 - &z2).mapv(f64::abs).sum() < 1e-9 {
                continue;
            }
            let (o1, _) = chain.apply(&z1.view());
            let (o2, _) = chain.apply(&z2.view());
            assert!((&o1 - &o2).mapv(f64::abs).sum() > 0.0);
        }
    }

    #[test]
    fn beta_stays_above_minus_alpha() {
        let mut rng = rng_from(5);
        for _ in 0..1000 {
            let f = RadialFlow {
                alpha_raw: rng.gen_range(-5.0..5.0),
                beta_raw: rng.gen_range(-5.0..5.0),
                c: Array1::zeros(2),
            };
            assert!(f.beta() > -f.alpha());
        }
    }

    #[test]
    fn batch_forward_agrees_with_single_point_apply() {
        let chain = perturbed_chain(2, 3, 6);
        let mut rng = rng_from(66);
        let z0 = ndarray::Array2::from_shape_fn((5, 3), |_| rng.gen_range(-2.0..2.0));
        let fwd = chain.forward_batch(&z0);
        for i in 0..5 {
            let (out, ld) = chain.apply(&z0.row(i));
            for (a, b) in out.iter().zip(fwd.stages.last().unwrap().row(i).iter()) {
                assert!((a - b).abs() < 1e-15);
            }
            assert!((ld - fwd.logdet[i]).abs() < 1e-15);
        }
    }
}
