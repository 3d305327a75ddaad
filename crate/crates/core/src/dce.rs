//! The deep collision encoder: a beta-VAE that compresses depth images to a
//! low-dimensional latent trained to reconstruct the robot-size-inflated
//! collision image. Pre-trained with supervised learning, then frozen while
//! the navigation policy trains.
//!
//! Input is two channels: depth scaled to [0,1] by max range (invalid fed
//! as 0) plus the validity mask, so the encoder can tell "invalid" from
//! "near". The supervision target comes from the clean render; noise only
//! corrupts the input.

use crate::camera::{
    apply_sensor_noise, render_depth, CameraIntrinsics, DepthImage, SensorNoiseParams,
};
use crate::collision::{collision_image, CollisionImage, FilterMode};
use crate::error::{Error, Result};
use crate::math::{Pose, Quaternion, Vector3};
use crate::neural::{
    elu, elu_backward, gaussian_sample, gaussian_sample_backward, sigmoid, AdamState, Checkpoint,
    Conv2d, ConvGrads, Dense, DenseGrads, Tensor, TransposeConv2d,
};
use crate::num::{real, Real};
use crate::rng;
use crate::world::{generate_world, RobotBox, WorldGenConfig};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DceConfig {
    pub input_width: usize,
    pub input_height: usize,
    /// Latent dimension J.
    pub latent_dim: usize,
    pub beta_norm: f64,
    /// Output channels of each stride-2 encoder convolution; the decoder
    /// mirrors them.
    pub conv_channels: Vec<usize>,
    pub min_range: f64,
    pub max_range: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for DceConfig {
    fn default() -> Self {
        // Desk-scale preset; paper-scale (640x480, J=64) stays a config.
        Self {
            input_width: 96,
            input_height: 72,
            latent_dim: 32,
            beta_norm: 3.0,
            conv_channels: vec![8, 16, 32, 32],
            min_range: 0.2,
            max_range: 10.0,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 12,
        }
    }
}

impl DceConfig {
    /// Spatial sizes after each stride-2 convolution, starting at the input.
    pub fn stage_sizes(&self) -> Vec<(usize, usize)> {
        let mut sizes = vec![(self.input_height, self.input_width)];
        for _ in &self.conv_channels {
            let (h, w) = *sizes.last().unwrap();
            sizes.push((h.div_ceil(2), w.div_ceil(2)));
        }
        sizes
    }

    pub fn flat_dim(&self) -> usize {
        let (h, w) = *self.stage_sizes().last().unwrap();
        self.conv_channels.last().unwrap() * h * w
    }
}

/// Encoded latent: deterministic (mu, sigma) plus the sampled z.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T> {
    pub mu: Vec<T>,
    pub sigma: Vec<T>,
    pub z: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DceModel<T> {
    pub config: DceConfig,
    pub enc_convs: Vec<Conv2d<T>>,
    pub enc_mu: Dense<T>,
    pub enc_logvar: Dense<T>,
    pub dec_fc: Dense<T>,
    pub dec_convs: Vec<TransposeConv2d<T>>,
}

/// Parameter gradients in the same layout as the model.
pub struct DceGrads<T> {
    pub enc_convs: Vec<ConvGrads<T>>,
    pub enc_mu: DenseGrads<T>,
    pub enc_logvar: DenseGrads<T>,
    pub dec_fc: DenseGrads<T>,
    pub dec_convs: Vec<ConvGrads<T>>,
}

impl<T: Real> DceModel<T> {
    pub fn new(config: DceConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0x64_63_65); // "dce"
        let sizes = config.stage_sizes();
        let mut enc_convs = Vec::new();
        let mut in_c = 2;
        for &out_c in &config.conv_channels {
            enc_convs.push(Conv2d::new(in_c, out_c, 3, 2, 1, &mut r));
            in_c = out_c;
        }
        let flat = config.flat_dim();
        let enc_mu = Dense::new(flat, config.latent_dim, &mut r);
        let enc_logvar = Dense::new(flat, config.latent_dim, &mut r);
        let dec_fc = Dense::new(config.latent_dim, flat, &mut r);

        // Transposed convolutions mirror the encoder; output padding is
        // whatever reaches the recorded encoder stage size.
        let mut dec_convs = Vec::new();
        let n = config.conv_channels.len();
        for i in (0..n).rev() {
            let in_c = config.conv_channels[i];
            let out_c = if i == 0 { 1 } else { config.conv_channels[i - 1] };
            let (th, tw) = sizes[i];
            let (ih, iw) = sizes[i + 1];
            let op = (th - (2 * ih - 1), tw - (2 * iw - 1));
            dec_convs.push(TransposeConv2d::new(in_c, out_c, 3, 2, 1, op, &mut r));
        }

        Self {
            config,
            enc_convs,
            enc_mu,
            enc_logvar,
            dec_fc,
            dec_convs,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_resolution(&self, img: &DepthImage<T>) -> Result<()> {
        if img.width != self.config.input_width || img.height != self.config.input_height {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects {}x{}, image is {}x{}",
                self.config.input_width, self.config.input_height, img.width, img.height
            )));
        }
        Ok(())
    }

    /// Normalize a depth image into the 2-channel network input.
    pub fn input_tensor(&self, img: &DepthImage<T>) -> Tensor<T> {
        let (h, w) = (self.config.input_height, self.config.input_width);
        let inv_max = T::one() / real::<T>(self.config.max_range);
        let mut data = Vec::with_capacity(2 * h * w);
        data.extend(img.data.iter().map(|&d| d * inv_max));
        data.extend(
            img.data
                .iter()
                .map(|&d| if d == T::zero() { T::zero() } else { T::one() }),
        );
        Tensor::from_vec(&[2, h, w], data).expect("input tensor shape")
    }

    /// Deterministic encoder head: (mu, logvar).
    pub fn encode_params(&self, img: &DepthImage<T>) -> Result<(Vec<T>, Vec<T>)> {
        self.check_resolution(img)?;
        let mut act = self.input_tensor(img);
        for conv in &self.enc_convs {
            let s = conv.forward(&act)?;
            act = Tensor::from_vec(&s.shape.clone(), elu(&s.data))?;
        }
        let flat = act.data;
        let mu = self.enc_mu.forward(&flat)?;
        let logvar = self.enc_logvar.forward(&flat)?;
        Ok((mu, logvar))
    }

    /// Encode and sample a latent code with the supplied stream.
    pub fn encode(&self, img: &DepthImage<T>, rng: &mut rng::Stream) -> Result<LatentCode<T>> {
        let (mu, logvar) = self.encode_params(img)?;
        let eps: Vec<T> = (0..mu.len())
            .map(|_| real(rng::standard_normal(rng)))
            .collect();
        let z = gaussian_sample(&mu, &logvar, &eps);
        let sigma = logvar.iter().map(|&lv| (lv * real(0.5)).exp()).collect();
        Ok(LatentCode { mu, sigma, z })
    }

    /// Decode a latent into a reconstructed collision image. Deterministic;
    /// output bounded to [min_range, max_range] by a scaled sigmoid.
    pub fn decode(&self, z: &[T]) -> Result<CollisionImage<T>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "decode expects J={}, got {}",
                self.config.latent_dim,
                z.len()
            )));
        }
        let sizes = self.config.stage_sizes();
        let (h0, w0) = *sizes.last().unwrap();
        let pre = self.dec_fc.forward(z)?;
        let mut act = Tensor::from_vec(
            &[*self.config.conv_channels.last().unwrap(), h0, w0],
            elu(&pre),
        )?;
        let n = self.dec_convs.len();
        for (i, tconv) in self.dec_convs.iter().enumerate() {
            let s = tconv.forward(&act)?;
            if i + 1 < n {
                act = Tensor::from_vec(&s.shape.clone(), elu(&s.data))?;
            } else {
                act = s;
            }
        }
        let lo = real::<T>(self.config.min_range);
        let span = real::<T>(self.config.max_range - self.config.min_range);
        let data = act.data.iter().map(|&v| lo + span * sigmoid(v)).collect();
        Ok(CollisionImage(DepthImage {
            width: self.config.input_width,
            height: self.config.input_height,
            data,
        }))
    }

    pub fn grads_zero(&self) -> DceGrads<T> {
        DceGrads {
            enc_convs: self
                .enc_convs
                .iter()
                .map(|c| ConvGrads {
                    w: Tensor::zeros(&c.w.shape),
                    b: Tensor::zeros(&c.b.shape),
                })
                .collect(),
            enc_mu: self.enc_mu.grads_zero(),
            enc_logvar: self.enc_logvar.grads_zero(),
            dec_fc: self.dec_fc.grads_zero(),
            dec_convs: self
                .dec_convs
                .iter()
                .map(|c| ConvGrads {
                    w: Tensor::zeros(&c.w.shape),
                    b: Tensor::zeros(&c.b.shape),
                })
                .collect(),
        }
    }

    pub fn param_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for c in &self.enc_convs {
            out.push(&c.w);
            out.push(&c.b);
        }
        out.extend([
            &self.enc_mu.w,
            &self.enc_mu.b,
            &self.enc_logvar.w,
            &self.enc_logvar.b,
            &self.dec_fc.w,
            &self.dec_fc.b,
        ]);
        for c in &self.dec_convs {
            out.push(&c.w);
            out.push(&c.b);
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for c in &mut self.enc_convs {
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        out.push(&mut self.enc_mu.w);
        out.push(&mut self.enc_mu.b);
        out.push(&mut self.enc_logvar.w);
        out.push(&mut self.enc_logvar.b);
        out.push(&mut self.dec_fc.w);
        out.push(&mut self.dec_fc.b);
        for c in &mut self.dec_convs {
            out.push(&mut c.w);
            out.push(&mut c.b);
        }
        out
    }

    /// One supervised sample: forward, loss, full backward.
    pub fn sample_grad(&self, sample: &DceSample<T>, eps: &[T]) -> Result<(LossParts, DceGrads<T>)> {
        let cfg = &self.config;
        let (h, w) = (cfg.input_height, cfg.input_width);

        // Encoder forward with caches.
        let x_in = self.input_tensor(&sample.input);
        let mut pre_acts = Vec::new(); // conv outputs before ELU
        let mut acts = vec![x_in];
        for conv in &self.enc_convs {
            let s = conv.forward(acts.last().unwrap())?;
            let a = Tensor::from_vec(&s.shape.clone(), elu(&s.data))?;
            pre_acts.push(s);
            acts.push(a);
        }
        let flat = &acts.last().unwrap().data;
        let mu = self.enc_mu.forward(flat)?;
        let logvar = self.enc_logvar.forward(flat)?;
        let z = gaussian_sample(&mu, &logvar, eps);

        // Decoder forward with caches.
        let sizes = cfg.stage_sizes();
        let (h0, w0) = *sizes.last().unwrap();
        let fc_pre = self.dec_fc.forward(&z)?;
        let mut dec_pre = Vec::new();
        let mut dec_acts = vec![Tensor::from_vec(
            &[*cfg.conv_channels.last().unwrap(), h0, w0],
            elu(&fc_pre),
        )?];
        let n = self.dec_convs.len();
        for (i, tconv) in self.dec_convs.iter().enumerate() {
            let s = tconv.forward(dec_acts.last().unwrap())?;
            if i + 1 < n {
                let a = Tensor::from_vec(&s.shape.clone(), elu(&s.data))?;
                dec_pre.push(s);
                dec_acts.push(a);
            } else {
                dec_pre.push(s);
            }
        }
        let logits = dec_pre.last().unwrap();
        let lo = real::<T>(cfg.min_range);
        let span = real::<T>(cfg.max_range - cfg.min_range);
        let sig: Vec<T> = logits.data.iter().map(|&v| sigmoid(v)).collect();
        let recon: Vec<T> = sig.iter().map(|&s| lo + span * s).collect();

        // Loss and gradient at the reconstruction.
        let (parts, d_recon, d_mu_kl, d_lv_kl) = dce_loss_grad(
            &sample.target.data,
            &recon,
            &mu,
            &logvar,
            &sample.mask,
            real(cfg.beta_norm),
        )?;

        let mut grads = self.grads_zero();

        // Through the bounded output activation.
        let d_logits: Vec<T> = d_recon
            .iter()
            .zip(&sig)
            .map(|(&g, &s)| g * span * s * (T::one() - s))
            .collect();
        let mut d_act = Tensor::from_vec(&[1, h, w], d_logits)?;
        for i in (0..n).rev() {
            let input = &dec_acts[i];
            let d_in = self.dec_convs[i].backward_acc(input, &d_act, &mut grads.dec_convs[i]);
            d_act = if i > 0 {
                Tensor::from_vec(&d_in.shape.clone(), elu_backward(&dec_pre[i - 1].data, &d_in.data))?
            } else {
                d_in
            };
        }
        let d_fc_out = elu_backward(&fc_pre, &d_act.data);
        let d_z = self.dec_fc.backward_acc(&z, &d_fc_out, &mut grads.dec_fc);

        // Through the reparameterization, joined with the KL gradients.
        let (d_mu_r, d_lv_r) = gaussian_sample_backward(&logvar, eps, &d_z);
        let d_mu: Vec<T> = d_mu_r.iter().zip(&d_mu_kl).map(|(&a, &b)| a + b).collect();
        let d_lv: Vec<T> = d_lv_r.iter().zip(&d_lv_kl).map(|(&a, &b)| a + b).collect();

        // Encoder backward.
        let mut d_flat = self.enc_mu.backward_acc(flat, &d_mu, &mut grads.enc_mu);
        let d_flat2 = self
            .enc_logvar
            .backward_acc(flat, &d_lv, &mut grads.enc_logvar);
        for (a, b) in d_flat.iter_mut().zip(&d_flat2) {
            *a = *a + *b;
        }
        let last_shape = acts.last().unwrap().shape.clone();
        let mut d_conv = Tensor::from_vec(&last_shape, d_flat)?;
        for i in (0..self.enc_convs.len()).rev() {
            let d_pre = elu_backward(&pre_acts[i].data, &d_conv.data);
            let d_pre = Tensor::from_vec(&pre_acts[i].shape.clone(), d_pre)?;
            d_conv = self.enc_convs[i].backward_acc(&acts[i], &d_pre, &mut grads.enc_convs[i]);
        }

        Ok((parts, grads))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push_words(
            "dce.meta",
            [
                self.config.input_width as u64,
                self.config.input_height as u64,
                self.config.latent_dim as u64,
                self.config.conv_channels.len() as u64,
            ]
            .into_iter()
            .chain(self.config.conv_channels.iter().map(|&c| c as u64))
            .collect(),
        );
        // f64 scalars go in as bit patterns so the roundtrip is exact.
        ck.push_words(
            "dce.ranges",
            vec![
                self.config.beta_norm.to_bits(),
                self.config.min_range.to_bits(),
                self.config.max_range.to_bits(),
            ],
        );
        for (name, t) in self.named_params() {
            ck.push_tensor(&name, t);
        }
        ck
    }

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, c) in self.enc_convs.iter().enumerate() {
            out.push((format!("enc.conv{i}.w"), &c.w));
            out.push((format!("enc.conv{i}.b"), &c.b));
        }
        out.push(("enc.mu.w".into(), &self.enc_mu.w));
        out.push(("enc.mu.b".into(), &self.enc_mu.b));
        out.push(("enc.logvar.w".into(), &self.enc_logvar.w));
        out.push(("enc.logvar.b".into(), &self.enc_logvar.b));
        out.push(("dec.fc.w".into(), &self.dec_fc.w));
        out.push(("dec.fc.b".into(), &self.dec_fc.b));
        for (i, c) in self.dec_convs.iter().enumerate() {
            out.push((format!("dec.conv{i}.w"), &c.w));
            out.push((format!("dec.conv{i}.b"), &c.b));
        }
        out
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = ck.get("dce.meta")?.words()?;
        if meta.len() < 4 {
            return Err(Error::format("checkpoint", "short dce.meta"));
        }
        let n_convs = meta[3] as usize;
        let channels: Vec<usize> = meta[4..4 + n_convs].iter().map(|&c| c as usize).collect();
        let ranges = ck.get("dce.ranges")?.words()?;
        if ranges.len() != 3 {
            return Err(Error::format("checkpoint", "short dce.ranges"));
        }
        let config = DceConfig {
            input_width: meta[0] as usize,
            input_height: meta[1] as usize,
            latent_dim: meta[2] as usize,
            conv_channels: channels,
            beta_norm: f64::from_bits(ranges[0]),
            min_range: f64::from_bits(ranges[1]),
            max_range: f64::from_bits(ranges[2]),
            ..DceConfig::default()
        };
        let mut model = Self::new(config, 0);
        for i in 0..model.enc_convs.len() {
            model.enc_convs[i].w = ck.tensor(&format!("enc.conv{i}.w"))?;
            model.enc_convs[i].b = ck.tensor(&format!("enc.conv{i}.b"))?;
        }
        model.enc_mu.w = ck.tensor("enc.mu.w")?;
        model.enc_mu.b = ck.tensor("enc.mu.b")?;
        model.enc_logvar.w = ck.tensor("enc.logvar.w")?;
        model.enc_logvar.b = ck.tensor("enc.logvar.b")?;
        model.dec_fc.w = ck.tensor("dec.fc.w")?;
        model.dec_fc.b = ck.tensor("dec.fc.b")?;
        for i in 0..model.dec_convs.len() {
            model.dec_convs[i].w = ck.tensor(&format!("dec.conv{i}.w"))?;
            model.dec_convs[i].b = ck.tensor(&format!("dec.conv{i}.b"))?;
        }
        Ok(model)
    }
}

impl<T: Real> DceGrads<T> {
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for c in &self.enc_convs {
            out.push(&c.w);
            out.push(&c.b);
        }
        out.extend([
            &self.enc_mu.w,
            &self.enc_mu.b,
            &self.enc_logvar.w,
            &self.enc_logvar.b,
            &self.dec_fc.w,
            &self.dec_fc.b,
        ]);
        for c in &self.dec_convs {
            out.push(&c.w);
            out.push(&c.b);
        }
        out
    }

    pub fn add_assign(&mut self, other: &Self) {
        let add = |a: &mut Tensor<T>, b: &Tensor<T>| a.add_assign_scaled(b, T::one());
        for (a, b) in self.enc_convs.iter_mut().zip(&other.enc_convs) {
            add(&mut a.w, &b.w);
            add(&mut a.b, &b.b);
        }
        add(&mut self.enc_mu.w, &other.enc_mu.w);
        add(&mut self.enc_mu.b, &other.enc_mu.b);
        add(&mut self.enc_logvar.w, &other.enc_logvar.w);
        add(&mut self.enc_logvar.b, &other.enc_logvar.b);
        add(&mut self.dec_fc.w, &other.dec_fc.w);
        add(&mut self.dec_fc.b, &other.dec_fc.b);
        for (a, b) in self.dec_convs.iter_mut().zip(&other.dec_convs) {
            add(&mut a.w, &b.w);
            add(&mut a.b, &b.b);
        }
    }

    pub fn scale(&mut self, s: T) {
        for c in self.enc_convs.iter_mut().chain(self.dec_convs.iter_mut()) {
            c.w.scale(s);
            c.b.scale(s);
        }
        for d in [&mut self.enc_mu, &mut self.enc_logvar, &mut self.dec_fc] {
            d.w.scale(s);
            d.b.scale(s);
        }
    }
}

/// Loss components of one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub masked_mse: f64,
    pub kl: f64,
}

/// Masked reconstruction + KL loss: masked MSE averages squared error over
/// valid pixels only; KL is the closed form -1/2 sum(1 + log s^2 - mu^2 - s^2)
/// with logvar = log s^2.
pub fn dce_loss<T: Real>(
    target: &[T],
    recon: &[T],
    mu: &[T],
    logvar: &[T],
    mask: &[bool],
    beta_norm: T,
) -> Result<LossParts> {
    let (parts, _, _, _) = dce_loss_grad(target, recon, mu, logvar, mask, beta_norm)?;
    Ok(parts)
}

/// [`dce_loss`] plus gradients with respect to recon, mu and logvar.
pub fn dce_loss_grad<T: Real>(
    target: &[T],
    recon: &[T],
    mu: &[T],
    logvar: &[T],
    mask: &[bool],
    beta_norm: T,
) -> Result<(LossParts, Vec<T>, Vec<T>, Vec<T>)> {
    if target.len() != recon.len() || target.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!(
            "loss shapes: target {}, recon {}, mask {}",
            target.len(),
            recon.len(),
            mask.len()
        )));
    }
    if mu.len() != logvar.len() {
        return Err(Error::ShapeMismatch("mu/logvar length".into()));
    }
    let n_valid = mask.iter().filter(|&&m| m).count();
    if n_valid == 0 {
        return Err(Error::EmptyMask);
    }

    let inv_n = T::one() / real::<T>(n_valid as f64);
    let mut mse = T::zero();
    let mut d_recon = vec![T::zero(); recon.len()];
    let two = real::<T>(2.0);
    for i in 0..recon.len() {
        if mask[i] {
            let diff = recon[i] - target[i];
            mse = mse + diff * diff * inv_n;
            d_recon[i] = two * diff * inv_n;
        }
    }

    let half = real::<T>(0.5);
    let mut kl = T::zero();
    let mut d_mu = vec![T::zero(); mu.len()];
    let mut d_lv = vec![T::zero(); mu.len()];
    for j in 0..mu.len() {
        let var = logvar[j].exp();
        kl = kl - half * (T::one() + logvar[j] - mu[j] * mu[j] - var);
        d_mu[j] = beta_norm * mu[j];
        d_lv[j] = beta_norm * half * (var - T::one());
    }

    let total = mse + beta_norm * kl;
    Ok((
        LossParts {
            total: total.to_f64_lossy(),
            masked_mse: mse.to_f64_lossy(),
            kl: kl.to_f64_lossy(),
        },
        d_recon,
        d_mu,
        d_lv,
    ))
}

/// One supervised training triple.
#[derive(Debug, Clone, PartialEq)]
pub struct DceSample<T> {
    /// The (noisy) depth image fed to the encoder.
    pub input: DepthImage<T>,
    /// Collision image of the clean render; the supervision target.
    pub target: DepthImage<T>,
    /// Valid pixels of the target; only these carry loss.
    pub mask: Vec<bool>,
}

/// Controls for synthetic dataset generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub level_min: u32,
    pub level_max: u32,
    pub noise: SensorNoiseParams,
    pub world: WorldGenConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            level_min: 1,
            level_max: 12,
            noise: SensorNoiseParams::default(),
            world: WorldGenConfig::default(),
        }
    }
}

/// Render `n` triples from randomized camera poses in randomized worlds.
/// The target is the collision image of the clean render; noise corrupts
/// only the input.
pub fn gen_dce_dataset<T: Real>(
    n: usize,
    cfg: &DatasetConfig,
    intr: &CameraIntrinsics,
    robot: &RobotBox<T>,
    seed: u64,
) -> Vec<DceSample<T>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let sample_seed = rng::derive(seed, i as u64);
            let mut r = rng::stream(sample_seed, 0x64_73); // "ds"
            let level = r.gen_range(cfg.level_min..=cfg.level_max);
            let world = generate_world::<T>(level, &cfg.world, rng::derive(sample_seed, 1));

            // A collision-free camera position with random yaw and a small
            // pitch, like the robot would see in flight.
            let pose = loop {
                let p = Vector3::new(
                    real(r.gen_range(-0.45..0.45) * world.room_dims.x.to_f64_lossy()),
                    real(r.gen_range(-0.45..0.45) * world.room_dims.y.to_f64_lossy()),
                    real(r.gen_range(-0.4..0.4) * world.room_dims.z.to_f64_lossy()),
                );
                let q = Quaternion::from_euler(
                    T::zero(),
                    real(r.gen_range(-0.15..0.15)),
                    real(r.gen_range(-std::f64::consts::PI..std::f64::consts::PI)),
                );
                let pose = Pose::new(p, q);
                if !crate::world::check_collision(&world, pose, robot) {
                    break pose;
                }
            };

            let clean = render_depth(&world, pose, intr);
            let target = collision_image(&clean, intr, robot, FilterMode::Rmq);
            let input = apply_sensor_noise(&clean, &cfg.noise, intr, rng::derive(sample_seed, 2));
            let mask = target.valid_mask();
            DceSample {
                input,
                target: target.0,
                mask,
            }
        })
        .collect()
}

/// Per-pixel mean of targets over valid pixels: the "blind" predictor that
/// any useful model must beat.
pub fn mean_target_image<T: Real>(samples: &[DceSample<T>]) -> DepthImage<T> {
    let (w, h) = (samples[0].target.width, samples[0].target.height);
    let mut sum = vec![0.0f64; w * h];
    let mut count = vec![0u64; w * h];
    for s in samples {
        for i in 0..w * h {
            if s.mask[i] {
                sum[i] += s.target.data[i].to_f64_lossy();
                count[i] += 1;
            }
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(&s, &c)| if c > 0 { real(s / c as f64) } else { T::zero() })
        .collect();
    DepthImage {
        width: w,
        height: h,
        data,
    }
}

/// Masked MSE of a fixed prediction image over a sample set.
pub fn masked_mse_of_image<T: Real>(pred: &DepthImage<T>, samples: &[DceSample<T>]) -> f64 {
    let mut total = 0.0;
    for s in samples {
        let mut acc = 0.0;
        let mut n = 0u64;
        for i in 0..pred.data.len() {
            if s.mask[i] {
                let d = (pred.data[i] - s.target.data[i]).to_f64_lossy();
                acc += d * d;
                n += 1;
            }
        }
        if n > 0 {
            total += acc / n as f64;
        }
    }
    total / samples.len() as f64
}

/// Masked MSE of the model's deterministic reconstruction (z = mu).
pub fn masked_mse_of_model<T: Real>(model: &DceModel<T>, samples: &[DceSample<T>]) -> f64 {
    let per: Vec<f64> = samples
        .par_iter()
        .map(|s| {
            let (mu, _) = model.encode_params(&s.input).expect("resolution");
            let recon = model.decode(&mu).expect("latent dim");
            let mut acc = 0.0;
            let mut n = 0u64;
            for i in 0..recon.data.len() {
                if s.mask[i] {
                    let d = (recon.data[i] - s.target.data[i]).to_f64_lossy();
                    acc += d * d;
                    n += 1;
                }
            }
            if n > 0 {
                acc / n as f64
            } else {
                0.0
            }
        })
        .collect();
    per.iter().sum::<f64>() / samples.len() as f64
}

/// Per-batch loss record.
#[derive(Debug, Clone, Copy)]
pub struct TrainRecord {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub masked_mse: f64,
    pub kl: f64,
}

/// Supervised minibatch training. Deterministic given (dataset order,
/// config, seed). Aborts with a diagnostic on divergence.
pub fn train_dce<T: Real>(
    samples: &[DceSample<T>],
    config: DceConfig,
    seed: u64,
) -> Result<(DceModel<T>, Vec<TrainRecord>)> {
    if samples.is_empty() {
        return Err(Error::Config("empty DCE dataset".into()));
    }
    let mut model = DceModel::new(config.clone(), seed);
    let lr = real::<T>(config.learning_rate);
    let mut adam = AdamState::new(&model.param_tensors(), lr);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut shuffle_rng = rng::stream(seed, 0x73_68); // "sh"
    let mut history = Vec::new();
    let mut step: u64 = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            step += 1;
            let latent = config.latent_dim;
            let results: Vec<(LossParts, DceGrads<T>)> = chunk
                .par_iter()
                .map(|&i| {
                    let eps_seed = rng::derive(seed, (step << 20) | i as u64);
                    let mut er = rng::stream(eps_seed, 0x65_70); // "ep"
                    let eps: Vec<T> = (0..latent)
                        .map(|_| real(rng::standard_normal(&mut er)))
                        .collect();
                    model.sample_grad(&samples[i], &eps)
                })
                .collect::<Result<_>>()?;

            let mut total = model.grads_zero();
            let mut parts = LossParts {
                total: 0.0,
                masked_mse: 0.0,
                kl: 0.0,
            };
            for (p, g) in &results {
                total.add_assign(g);
                parts.total += p.total;
                parts.masked_mse += p.masked_mse;
                parts.kl += p.kl;
            }
            let inv = 1.0 / chunk.len() as f64;
            total.scale(real(inv));
            parts.total *= inv;
            parts.masked_mse *= inv;
            parts.kl *= inv;

            if !parts.total.is_finite() {
                return Err(Error::Diverged {
                    quantity: "loss".into(),
                    step,
                });
            }
            adam.step(&mut model.param_tensors_mut(), &total.tensors())?;
            history.push(TrainRecord {
                epoch,
                batch: batch_idx,
                loss: parts.total,
                masked_mse: parts.masked_mse,
                kl: parts.kl,
            });
        }
    }
    if !model.param_tensors().iter().all(|t| t.is_finite()) {
        return Err(Error::Diverged {
            quantity: "parameters".into(),
            step,
        });
    }
    Ok((model, history))
}

/// Load real depth rasters listed in a manifest alongside synthetic data:
/// the target is the collision image of the raster itself.
pub fn sample_from_depth_image<T: Real>(
    img: &DepthImage<T>,
    intr: &CameraIntrinsics,
    robot: &RobotBox<T>,
) -> DceSample<T> {
    let target = collision_image(img, intr, robot, FilterMode::Rmq);
    let mask = target.valid_mask();
    DceSample {
        input: img.clone(),
        target: target.0,
        mask,
    }
}
