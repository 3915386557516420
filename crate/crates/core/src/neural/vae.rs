//! Conditional VAE: the encoder maps a band-n vector to a Gaussian latent,
//! the decoder maps a latent sample to the band-n' vector.

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;

use super::dense::{DenseNet, Gradients};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct VaeNet {
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub latent_dim: usize,
}

/// Loss terms for one batch, both averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VaeLoss {
    /// Mean squared error per output element.
    pub reconstruction: f64,
    /// `KL(q(z|x) ‖ N(0, I))`, summed over latent dims.
    pub kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct VaeGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
}

impl VaeNet {
    /// Encoder `[input, hidden.., 2·latent]`, decoder `[latent, hidden reversed.., output]`.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        output: usize,
        hidden: &[usize],
        latent_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::invalid("latent dimension must be positive"));
        }
        let mut enc = vec![input];
        enc.extend_from_slice(hidden);
        enc.push(2 * latent_dim);
        let mut dec = vec![latent_dim];
        dec.extend(hidden.iter().rev());
        dec.push(output);
        Ok(Self {
            encoder: DenseNet::new(&enc, rng)?,
            decoder: DenseNet::new(&dec, rng)?,
            latent_dim,
        })
    }

    pub fn from_parts(encoder: DenseNet, decoder: DenseNet) -> Result<Self> {
        let latent_dim = decoder.input_dim();
        if encoder.output_dim() != 2 * latent_dim {
            return Err(Error::dim(format!(
                "encoder emits {}, decoder expects latent {latent_dim}",
                encoder.output_dim()
            )));
        }
        Ok(Self {
            encoder,
            decoder,
            latent_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.decoder.output_dim()
    }

    /// `(mean, log_variance)` of the latent posterior.
    pub fn encode(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let h = self.encoder.forward(x)?;
        let d = self.latent_dim;
        Ok((h.slice(s![.., ..d]).to_owned(), h.slice(s![.., d..]).to_owned()))
    }

    /// Decodes the posterior mean; no sampling.
    pub fn predict_mean(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (mu, _) = self.encode(x)?;
        self.decoder.forward(mu.view())
    }

    /// Loss and gradients for a batch, with the reparameterization noise
    /// `eps` (batch × latent) supplied by the caller.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<f64>,
        target: ArrayView2<f64>,
        eps: ArrayView2<f64>,
        kl_weight: f64,
    ) -> Result<(VaeLoss, VaeGradients)> {
        let batch = x.nrows();
        let d = self.latent_dim;
        if target.dim() != (batch, self.output_dim()) || eps.dim() != (batch, d) {
            return Err(Error::dim("target or noise shape does not match the batch"));
        }
        let (h, enc_cache) = self.encoder.forward_cached(x)?;
        let mu = h.slice(s![.., ..d]);
        let logvar = h.slice(s![.., d..]);
        let std = logvar.mapv(|v| (0.5 * v).exp());
        let z = &mu + &(&std * &eps);
        let (y, dec_cache) = self.decoder.forward_cached(z.view())?;

        let scale = 1.0 / (batch * self.output_dim()) as f64;
        let diff = &y - &target;
        let reconstruction = diff.iter().map(|v| v * v).sum::<f64>() * scale;
        let kl = ndarray::Zip::from(&mu)
            .and(&logvar)
            .fold(0.0, |acc, &m, &lv| acc + 0.5 * (lv.exp() + m * m - 1.0 - lv))
            / batch as f64;
        let total = reconstruction + kl_weight * kl;
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "VAE loss (reconstruction {reconstruction}, kl {kl})"
            )));
        }

        let grad_y = diff.mapv(|v| 2.0 * v * scale);
        let (dec_grads, grad_z) = self.decoder.backward(&dec_cache, grad_y.view())?;
        let kb = kl_weight / batch as f64;
        let grad_mu = &grad_z + &mu.mapv(|m| kb * m);
        let grad_lv = ndarray::Zip::from(&grad_z)
            .and(&eps)
            .and(&std)
            .and(&logvar)
            .map_collect(|&gz, &e, &sd, &lv| gz * e * 0.5 * sd + kb * 0.5 * (lv.exp() - 1.0));
        let grad_h = concatenate(Axis(1), &[grad_mu.view(), grad_lv.view()])
            .map_err(|e| Error::dim(e.to_string()))?;
        let (enc_grads, _) = self.encoder.backward(&enc_cache, grad_h.view())?;
        Ok((
            VaeLoss {
                reconstruction,
                kl,
                total,
            },
            VaeGradients {
                encoder: enc_grads,
                decoder: dec_grads,
            },
        ))
    }

    pub fn loss(
        &self,
        x: ArrayView2<f64>,
        target: ArrayView2<f64>,
        eps: ArrayView2<f64>,
        kl_weight: f64,
    ) -> Result<VaeLoss> {
        let (mu, logvar) = self.encode(x)?;
        let z = &mu + &(&logvar.mapv(|v| (0.5 * v).exp()) * &eps);
        let y = self.decoder.forward(z.view())?;
        let batch = x.nrows() as f64;
        let reconstruction =
            (&y - &target).iter().map(|v| v * v).sum::<f64>() / (batch * self.output_dim() as f64);
        let kl = ndarray::Zip::from(&mu)
            .and(&logvar)
            .fold(0.0, |acc, &m, &lv| acc + 0.5 * (lv.exp() + m * m - 1.0 - lv))
            / batch;
        Ok(VaeLoss {
            reconstruction,
            kl,
            total: reconstruction + kl_weight * kl,
        })
    }
}
