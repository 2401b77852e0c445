//! Minibatch training for the neural embedding variants. One update samples
//! a batch with replacement, evaluates loss and gradients, and applies the
//! configured optimizer. Every update draws from its own RNG stream, so runs
//! are reproducible regardless of batch size or update count.

use super::dense::{loss_and_grad, DenseNet, NeuralModel};
use super::flows::FlowChain;
use super::{Dataset, Variant};
use crate::error::Error;
use crate::rng::stream_rng;
use crate::Result;
use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const HIDDEN: (usize, usize) = (512, 256);
pub const N_FLOWS: usize = 10;
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adam,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub n_updates: usize,
    /// Updates over which the KL weight ramps linearly from 0 to 1.
    pub warmup_updates: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn default_for(variant: Variant) -> Self {
        match variant {
            Variant::Ae => TrainConfig {
                optimizer: OptimizerKind::Adagrad,
                learning_rate: 1e-3,
                batch_size: 100,
                n_updates: 20_000,
                warmup_updates: 0,
                seed: 0,
            },
            _ => TrainConfig {
                optimizer: OptimizerKind::Adam,
                learning_rate: 1e-3,
                batch_size: 100,
                n_updates: 10_000,
                warmup_updates: 1_000,
                seed: 0,
            },
        }
    }

    pub fn validate(&self, n_data: usize) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > n_data {
            return Err(Error::InvalidConfig(format!(
                "batch_size {} must be in 1..={n_data}",
                self.batch_size
            )));
        }
        if self.warmup_updates > self.n_updates {
            return Err(Error::InvalidConfig(format!(
                "warmup_updates {} exceeds n_updates {}",
                self.warmup_updates, self.n_updates
            )));
        }
        if self.n_updates == 0 {
            return Err(Error::InvalidConfig("n_updates must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

pub fn kl_weight_at(update: usize, warmup_updates: usize) -> f64 {
    if warmup_updates == 0 {
        1.0
    } else {
        ((update + 1) as f64 / warmup_updates as f64).min(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub update: usize,
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub logdet: f64,
}

enum OptState {
    Sgd,
    Adagrad { accum: Vec<Vec<f64>> },
    Adam { m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: u64 },
}

impl OptState {
    fn new(kind: OptimizerKind, sizes: &[usize]) -> Self {
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect::<Vec<_>>();
        match kind {
            OptimizerKind::Sgd => OptState::Sgd,
            OptimizerKind::Adagrad => OptState::Adagrad { accum: zeros() },
            OptimizerKind::Adam => OptState::Adam {
                m: zeros(),
                v: zeros(),
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], lr: f64) {
        debug_assert_eq!(params.len(), grads.len());
        match self {
            OptState::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.iter_mut().zip(g.iter()) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptState::Adagrad { accum } => {
                for ((p, g), acc) in params.iter_mut().zip(grads).zip(accum) {
                    for ((pv, gv), av) in p.iter_mut().zip(g.iter()).zip(acc) {
                        *av += gv * gv;
                        *pv -= lr * gv / (av.sqrt() + 1e-10);
                    }
                }
            }
            OptState::Adam { m, v, t } => {
                *t += 1;
                let bc1 = 1.0 - 0.9f64.powi(*t as i32);
                let bc2 = 1.0 - 0.999f64.powi(*t as i32);
                for (((p, g), ms), vs) in params.iter_mut().zip(grads).zip(m).zip(v) {
                    for (((pv, gv), mv), vv) in
                        p.iter_mut().zip(g.iter()).zip(ms.iter_mut()).zip(vs.iter_mut())
                    {
                        *mv = 0.9 * *mv + 0.1 * gv;
                        *vv = 0.999 * *vv + 0.001 * gv * gv;
                        let mh = *mv / bc1;
                        let vh = *vv / bc2;
                        *pv -= lr * mh / (vh.sqrt() + 1e-8);
                    }
                }
            }
        }
    }
}

/// Fit an AE / VAE / RFVAE embedding, returning the model and its loss curve
/// (one row per update).
pub fn fit_neural(
    data: &Dataset,
    l: usize,
    variant: Variant,
    cfg: &TrainConfig,
) -> Result<(NeuralModel, Vec<LossRow>)> {
    if !matches!(variant, Variant::Ae | Variant::Vae | Variant::Rfvae) {
        return Err(Error::InvalidConfig(format!(
            "fit_neural handles ae/vae/rfvae, not {variant}"
        )));
    }
    if l == 0 {
        return Err(Error::InvalidConfig("latent dimension must be positive".into()));
    }
    cfg.validate(data.n())?;

    let mut init_rng = stream_rng(cfg.seed, 0);
    let with_logvar = matches!(variant, Variant::Vae | Variant::Rfvae);
    let mut net = DenseNet::new(data.dim(), HIDDEN, l, with_logvar, &mut init_rng);
    let mut chain = (variant == Variant::Rfvae).then(|| FlowChain::new(N_FLOWS, l, &mut init_rng));

    let sizes: Vec<usize> = {
        let mut s: Vec<usize> = net.grads_like().slices().iter().map(|g| g.len()).collect();
        if let Some(ch) = chain.as_mut() {
            s.extend(ch.param_slices_mut().iter().map(|p| p.len()));
        }
        s
    };
    let mut opt = OptState::new(cfg.optimizer, &sizes);

    let mut rows = Vec::with_capacity(cfg.n_updates);
    for u in 0..cfg.n_updates {
        let mut rng = stream_rng(cfg.seed, u as u64 + 1);
        let idx: Vec<usize> = (0..cfg.batch_size)
            .map(|_| rng.gen_range(0..data.n()))
            .collect();
        let batch = data.images.select(Axis(0), &idx);
        let w = if with_logvar {
            kl_weight_at(u, cfg.warmup_updates)
        } else {
            0.0
        };

        let (parts, grads, flow_grads) =
            loss_and_grad(&net, chain.as_ref(), &batch, variant, w, &mut rng).map_err(
                |e| match e {
                    Error::NonFiniteLoss { term, .. } => Error::NonFiniteLoss { term, update: u },
                    other => other,
                },
            )?;
        if !parts.total.is_finite() || parts.total > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                update: u,
                last_stable: u.saturating_sub(1),
            });
        }

        {
            let mut params = net.param_slices_mut();
            let mut gslices = grads.slices();
            if let Some(ch) = chain.as_mut() {
                params.extend(ch.param_slices_mut());
                gslices.extend(flow_grads.as_ref().unwrap().slices());
            }
            opt.step(&mut params, &gslices, cfg.learning_rate);
        }

        rows.push(LossRow {
            update: u,
            total: parts.total,
            recon: parts.recon,
            kl: parts.kl,
            logdet: parts.logdet,
        });
    }

    Ok((
        NeuralModel {
            variant,
            net,
            flows: chain,
            latent: l,
        },
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm_env::{observation_dataset, EnvKind, IMG_SIZE};
    use crate::rng::rng_from;
    use ndarray::Array2;

    fn toy_dataset(n: usize, dim: usize, seed: u64) -> Dataset {
        let mut rng = rng_from(seed);
        Dataset::new(Array2::from_shape_fn((n, dim), |_| rng.gen::<f64>())).unwrap()
    }

    /// Keep every `stride`-th pixel in both image axes.
    pub fn reduce_resolution(images: &Array2<f64>, stride: usize) -> Array2<f64> {
        let side = IMG_SIZE.div_ceil(stride);
        let mut out = Array2::zeros((images.nrows(), side * side));
        for (i, row) in images.outer_iter().enumerate() {
            let mut k = 0;
            for r in (0..IMG_SIZE).step_by(stride) {
                for c in (0..IMG_SIZE).step_by(stride) {
                    out[[i, k]] = row[r * IMG_SIZE + c];
                    k += 1;
                }
            }
        }
        out
    }

    fn quick_cfg(optimizer: OptimizerKind, n_updates: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer,
            learning_rate: 1e-3,
            batch_size: 10,
            n_updates,
            warmup_updates: n_updates.min(20),
            seed,
        }
    }

    #[test]
    fn fixed_seed_reproduces_final_weights() {
        let data = toy_dataset(40, 30, 1);
        let cfg = quick_cfg(OptimizerKind::Adam, 30, 7);
        let (m1, r1) = fit_neural(&data, 2, Variant::Vae, &cfg).unwrap();
        let (m2, r2) = fit_neural(&data, 2, Variant::Vae, &cfg).unwrap();
        assert_eq!(m1.net.enc1.w, m2.net.enc1.w);
        assert_eq!(m1.net.dec3.b, m2.net.dec3.b);
        assert_eq!(m1.net.logvar.as_ref().unwrap().w, m2.net.logvar.as_ref().unwrap().w);
        assert_eq!(r1, r2);
    }

    #[test]
    fn rfvae_run_trains_flows_and_reports_logdet() {
        let data = toy_dataset(30, 20, 2);
        let cfg = quick_cfg(OptimizerKind::Adam, 25, 3);
        let (model, rows) = fit_neural(&data, 2, Variant::Rfvae, &cfg).unwrap();
        let chain = model.flows.as_ref().unwrap();
        assert_eq!(chain.flows.len(), N_FLOWS);
        // the chain starts as the identity but must move once gradients flow
        let moved = chain.flows.iter().any(|f| f.beta().abs() > 1e-9);
        assert!(moved);
        assert!(rows.iter().all(|r| r.logdet.is_finite()));
    }

    #[test]
    fn ae_rows_have_zero_kl_and_logdet() {
        let data = toy_dataset(30, 20, 4);
        let cfg = quick_cfg(OptimizerKind::Adagrad, 10, 5);
        let (_, rows) = fit_neural(&data, 2, Variant::Ae, &cfg).unwrap();
        assert_eq!(rows.len(), 10);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.update, i);
            assert_eq!(r.kl, 0.0);
            assert_eq!(r.logdet, 0.0);
            assert_eq!(r.total, r.recon);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let data = toy_dataset(10, 8, 6);
        let mut cfg = quick_cfg(OptimizerKind::Sgd, 5, 0);
        cfg.batch_size = 11;
        assert!(fit_neural(&data, 2, Variant::Ae, &cfg).is_err());
        let mut cfg = quick_cfg(OptimizerKind::Sgd, 5, 0);
        cfg.warmup_updates = 6;
        assert!(fit_neural(&data, 2, Variant::Vae, &cfg).is_err());
        let cfg = quick_cfg(OptimizerKind::Sgd, 5, 0);
        assert!(fit_neural(&data, 2, Variant::Pca, &cfg).is_err());
        assert!(fit_neural(&data, 0, Variant::Ae, &cfg).is_err());
    }

    #[test]
    fn exploding_learning_rate_reports_divergence() {
        let data = toy_dataset(30, 20, 7);
        let mut cfg = quick_cfg(OptimizerKind::Sgd, 200, 8);
        cfg.learning_rate = 1e6;
        let err = fit_neural(&data, 2, Variant::Ae, &cfg).unwrap_err();
        match err {
            Error::Diverged { update, last_stable } => {
                assert!(update < 200);
                assert!(last_stable <= update);
            }
            Error::NonFiniteLoss { .. } => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn kl_weight_ramp() {
        assert_eq!(kl_weight_at(0, 4), 0.25);
        assert_eq!(kl_weight_at(3, 4), 1.0);
        assert_eq!(kl_weight_at(9, 4), 1.0);
        assert_eq!(kl_weight_at(0, 0), 1.0);
    }

    #[test]
    fn optimizer_single_steps_match_hand_computation() {
        // one parameter, one gradient of 2.0, lr 0.5
        let mut p = [1.0];
        let g = [2.0];
        let mut sgd = OptState::new(OptimizerKind::Sgd, &[1]);
        sgd.step(&mut [&mut p], &[&g], 0.5);
        assert!((p[0] - 0.0).abs() < 1e-12);

        let mut p = [1.0];
        let mut ada = OptState::new(OptimizerKind::Adagrad, &[1]);
        ada.step(&mut [&mut p], &[&g], 0.5);
        // accum = 4, step = 0.5 * 2 / (2 + 1e-10)
        assert!((p[0] - (1.0 - 0.5 * 2.0 / (2.0 + 1e-10))).abs() < 1e-12);

        let mut p = [1.0];
        let mut adam = OptState::new(OptimizerKind::Adam, &[1]);
        adam.step(&mut [&mut p], &[&g], 0.5);
        // bias-corrected first step: mh = g, vh = g^2
        assert!((p[0] - (1.0 - 0.5 * 2.0 / (2.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn ae_reconstruction_loss_falls_below_a_fifth_of_initial() {
        let (_, images) = observation_dataset(EnvKind::ArmBall, 2000, 424_242);
        let reduced = reduce_resolution(&images, 2);
        let data = Dataset::new(reduced).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Adagrad,
            learning_rate: 1e-3,
            batch_size: 100,
            n_updates: 400,
            warmup_updates: 0,
            seed: 11,
        };
        let (_, rows) = fit_neural(&data, 2, Variant::Ae, &cfg).unwrap();
        let first = rows.first().unwrap().recon;
        let last = rows.last().unwrap().recon;
        assert!(
            last < 0.2 * first,
            "reconstruction loss {last} did not fall below 20% of {first}"
        );
    }

    #[test]
    fn vae_kl_is_finite_and_positive_after_training() {
        let (_, images) = observation_dataset(EnvKind::ArmBall, 400, 515_151);
        let reduced = reduce_resolution(&images, 4);
        let data = Dataset::new(reduced).unwrap();
        let cfg = TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 100,
            n_updates: 300,
            warmup_updates: 100,
            seed: 12,
        };
        let (_, rows) = fit_neural(&data, 2, Variant::Vae, &cfg).unwrap();
        let last = rows.last().unwrap();
        assert!(last.kl.is_finite());
        assert!(last.kl > 0.0);
    }
}
