//! Dense encoder/decoder stack with hand-written reverse-mode gradients.
//! Encoder input -> h1 -> h2 -> (mu, log sigma^2), decoder l -> h2 -> h1 ->
//! input logits; sigmoid applied implicitly through the logit form of the
//! Bernoulli cross-entropy. One code path serves AE (z = mu), VAE
//! (z = mu + sigma * eps) and RFVAE (radial flows on top of the VAE draw).

use super::flows::{FlowChain, FlowGrads};
use super::Variant;
use crate::error::Error;
use crate::Result;
use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct Linear {
    /// in x out
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    fn new(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        Linear {
            w: Array2::from_shape_fn((input, output), |_| rng.gen_range(-bound..bound)),
            b: Array1::from_shape_fn(output, |_| rng.gen_range(-bound..bound)),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    fn zeros_like(&self) -> LinearGrad {
        LinearGrad {
            w: Array2::zeros(self.w.dim()),
            b: Array1::zeros(self.b.len()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// d(loss)/d(input) given d(loss)/d(output), accumulating parameter grads.
fn backward_linear(
    layer: &Linear,
    input: &Array2<f64>,
    d_out: &Array2<f64>,
    grad: &mut LinearGrad,
) -> Array2<f64> {
    grad.w += &input.t().dot(d_out);
    grad.b += &d_out.sum_axis(Axis(0));
    d_out.dot(&layer.w.t())
}

fn relu(x: &mut Array2<f64>) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Gradient mask for relu, applied to d given the post-activation values.
fn relu_backward(d: &mut Array2<f64>, activated: &Array2<f64>) {
    ndarray::Zip::from(d).and(activated).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    pub input_dim: usize,
    pub hidden: (usize, usize),
    pub latent: usize,
    pub enc1: Linear,
    pub enc2: Linear,
    pub mu: Linear,
    pub logvar: Option<Linear>,
    pub dec1: Linear,
    pub dec2: Linear,
    pub dec3: Linear,
}

impl DenseNet {
    pub fn new(
        input_dim: usize,
        hidden: (usize, usize),
        latent: usize,
        with_logvar: bool,
        rng: &mut impl Rng,
    ) -> Self {
        DenseNet {
            input_dim,
            hidden,
            latent,
            enc1: Linear::new(input_dim, hidden.0, rng),
            enc2: Linear::new(hidden.0, hidden.1, rng),
            mu: Linear::new(hidden.1, latent, rng),
            logvar: if with_logvar {
                Some(Linear::new(hidden.1, latent, rng))
            } else {
                None
            },
            dec1: Linear::new(latent, hidden.1, rng),
            dec2: Linear::new(hidden.1, hidden.0, rng),
            dec3: Linear::new(hidden.0, input_dim, rng),
        }
    }

    /// Encoder mean head only; this is the embedding function.
    pub fn encode_mu(&self, x: &ArrayView1<f64>) -> Vec<f64> {
        let xb = x.to_owned().insert_axis(Axis(0));
        let mut a1 = self.enc1.forward(&xb);
        relu(&mut a1);
        let mut a2 = self.enc2.forward(&a1);
        relu(&mut a2);
        self.mu.forward(&a2).row(0).to_vec()
    }

    pub fn grads_like(&self) -> NetGrads {
        NetGrads {
            enc1: self.enc1.zeros_like(),
            enc2: self.enc2.zeros_like(),
            mu: self.mu.zeros_like(),
            logvar: self.logvar.as_ref().map(|l| l.zeros_like()),
            dec1: self.dec1.zeros_like(),
            dec2: self.dec2.zeros_like(),
            dec3: self.dec3.zeros_like(),
        }
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        let layers: Vec<&mut Linear> = match self.logvar.as_mut() {
            Some(lv) => vec![
                &mut self.enc1,
                &mut self.enc2,
                &mut self.mu,
                lv,
                &mut self.dec1,
                &mut self.dec2,
                &mut self.dec3,
            ],
            None => vec![
                &mut self.enc1,
                &mut self.enc2,
                &mut self.mu,
                &mut self.dec1,
                &mut self.dec2,
                &mut self.dec3,
            ],
        };
        for l in layers {
            out.push(l.w.as_slice_mut().unwrap());
            out.push(l.b.as_slice_mut().unwrap());
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct NetGrads {
    pub enc1: LinearGrad,
    pub enc2: LinearGrad,
    pub mu: LinearGrad,
    pub logvar: Option<LinearGrad>,
    pub dec1: LinearGrad,
    pub dec2: LinearGrad,
    pub dec3: LinearGrad,
}

impl NetGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        let layers: Vec<&LinearGrad> = match self.logvar.as_ref() {
            Some(lv) => vec![
                &self.enc1, &self.enc2, &self.mu, lv, &self.dec1, &self.dec2, &self.dec3,
            ],
            None => vec![
                &self.enc1, &self.enc2, &self.mu, &self.dec1, &self.dec2, &self.dec3,
            ],
        };
        for l in layers {
            out.push(l.w.as_slice().unwrap());
            out.push(l.b.as_slice().unwrap());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    /// The optimized objective: recon + kl_weight * kl - 2 * logdet.
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
    pub logdet: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Loss and gradients for one minibatch (mean over the batch of per-sample
/// losses; reconstruction and KL sum over their dimensions). The rng drives
/// the reparameterization draw z = mu + sigma * eps.
pub fn loss_and_grad(
    net: &DenseNet,
    flow_chain: Option<&FlowChain>,
    batch: &Array2<f64>,
    variant: Variant,
    kl_weight: f64,
    rng: &mut impl Rng,
) -> Result<(LossParts, NetGrads, Option<FlowGrads>)> {
    let bs = batch.nrows();
    assert!(bs > 0, "empty batch");
    let inv_bs = 1.0 / bs as f64;

    // ---- forward ----
    let mut a1 = net.enc1.forward(batch);
    relu(&mut a1);
    let mut a2 = net.enc2.forward(&a1);
    relu(&mut a2);
    let mu = net.mu.forward(&a2);

    let stochastic = matches!(variant, Variant::Vae | Variant::Rfvae);
    let (logvar_raw, logvar, sigma, eps, z0) = if stochastic {
        let raw = net
            .logvar
            .as_ref()
            .expect("VAE/RFVAE net carries a logvar head")
            .forward(&a2);
        let lv = raw.mapv(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
        let sig = lv.mapv(|v| (0.5 * v).exp());
        let ep = Array2::from_shape_fn((bs, net.latent), |_| rng.sample::<f64, _>(StandardNormal));
        let z = &mu + &(&sig * &ep);
        (Some(raw), Some(lv), Some(sig), Some(ep), z)
    } else {
        (None, None, None, None, mu.clone())
    };

    let (z, flow_forward) = match (variant, flow_chain) {
        (Variant::Rfvae, Some(chain)) => {
            let fwd = chain.forward_batch(&z0);
            (fwd.stages.last().unwrap().clone(), Some(fwd))
        }
        (Variant::Rfvae, None) => {
            return Err(Error::InvalidConfig(
                "RFVAE needs a flow chain".into(),
            ))
        }
        _ => (z0.clone(), None),
    };

    let mut d1 = net.dec1.forward(&z);
    relu(&mut d1);
    let mut d2 = net.dec2.forward(&d1);
    relu(&mut d2);
    let logits = net.dec3.forward(&d2);

    // Bernoulli cross-entropy in logit form: max(s,0) - s t + ln(1+e^-|s|)
    let mut recon_sum = 0.0;
    ndarray::Zip::from(&logits).and(batch).for_each(|&s, &t| {
        recon_sum += s.max(0.0) - s * t + (-s.abs()).exp().ln_1p();
    });
    let recon = recon_sum * inv_bs;

    let kl = match (&mu, &logvar) {
        (m, Some(lv)) => {
            let mut acc = 0.0;
            ndarray::Zip::from(m).and(lv).for_each(|&mv, &lvv| {
                acc += -0.5 * (1.0 + lvv - mv * mv - lvv.exp());
            });
            acc * inv_bs
        }
        _ => 0.0,
    };

    let logdet = flow_forward
        .as_ref()
        .map(|f| f.logdet.sum() * inv_bs)
        .unwrap_or(0.0);

    let total = recon + kl_weight * kl - 2.0 * logdet;
    for (value, term) in [
        (recon, "reconstruction"),
        (kl, "kl"),
        (logdet, "logdet"),
        (total, "total"),
    ] {
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { term, update: 0 });
        }
    }

    // ---- backward ----
    let mut grads = net.grads_like();

    let d_logits = ndarray::Zip::from(&logits)
        .and(batch)
        .map_collect(|&s, &t| (sigmoid(s) - t) * inv_bs);
    let mut d = backward_linear(&net.dec3, &d2, &d_logits, &mut grads.dec3);
    relu_backward(&mut d, &d2);
    let mut d = backward_linear(&net.dec2, &d1, &d, &mut grads.dec2);
    relu_backward(&mut d, &d1);
    let d_z = backward_linear(&net.dec1, &z, &d, &mut grads.dec1);

    // through the flow chain (RFVAE): decoder gradient + logdet gradient
    let (d_z0, flow_grads) = match (&flow_forward, flow_chain) {
        (Some(fwd), Some(chain)) => {
            let (dz0, fg) = chain.backward_batch(fwd, &d_z, -2.0 * inv_bs);
            (dz0, Some(fg))
        }
        _ => (d_z, None),
    };

    // into mu / logvar heads
    let mut d_mu = d_z0.clone();
    let mut d_a2;
    if stochastic {
        let sig = sigma.as_ref().unwrap();
        let ep = eps.as_ref().unwrap();
        let lv = logvar.as_ref().unwrap();
        let raw = logvar_raw.as_ref().unwrap();
        // z0 = mu + sigma eps with sigma = exp(lv/2)
        let mut d_lv = &d_z0 * ep * sig * 0.5;
        // KL term: d/d mu = mu, d/d lv = (e^lv - 1)/2, per sample, weighted
        let w = kl_weight * inv_bs;
        d_mu = &d_mu + &mu.mapv(|v| v * w);
        d_lv = &d_lv + &lv.mapv(|v| 0.5 * (v.exp() - 1.0) * w);
        // clamp on logvar: zero gradient where saturated
        ndarray::Zip::from(&mut d_lv).and(raw).for_each(|g, &r| {
            if r.abs() > LOGVAR_CLAMP {
                *g = 0.0;
            }
        });
        let lv_layer = net.logvar.as_ref().unwrap();
        let g_lv = grads.logvar.as_mut().unwrap();
        let d_from_lv = backward_linear(lv_layer, &a2, &d_lv, g_lv);
        d_a2 = backward_linear(&net.mu, &a2, &d_mu, &mut grads.mu);
        d_a2 += &d_from_lv;
    } else {
        d_a2 = backward_linear(&net.mu, &a2, &d_mu, &mut grads.mu);
    }

    relu_backward(&mut d_a2, &a2);
    let mut d_a1 = backward_linear(&net.enc2, &a1, &d_a2, &mut grads.enc2);
    relu_backward(&mut d_a1, &a1);
    let _ = backward_linear(&net.enc1, batch, &d_a1, &mut grads.enc1);

    Ok((
        LossParts {
            total,
            recon,
            kl,
            logdet,
        },
        grads,
        flow_grads,
    ))
}

/// A fitted neural embedding; encode returns the posterior mean mu(x).
#[derive(Debug, Clone)]
pub struct NeuralModel {
    pub variant: Variant,
    pub net: DenseNet,
    pub flows: Option<FlowChain>,
    pub latent: usize,
}

impl NeuralModel {
    pub fn encode(&self, image: &ArrayView1<f64>) -> Vec<f64> {
        self.net.encode_mu(image)
    }
}
