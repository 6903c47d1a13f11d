//! Affine variational encoder/decoder with the relation-augmented loss.
//!
//! The encoder maps a raw vector `x` (dimension `D`) to a diagonal Gaussian
//! `q(z|x)` with mean `W_mu x + b_mu` and log-variance `W_lv x + b_lv`
//! (dimension `L`); the decoder reconstructs `W_dec z + b_dec`. All
//! parameters live in one flat vector so the optimiser and the bundle format
//! treat them uniformly.

use ndarray::{ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::DemoCorpus;
use crate::relation::{PairSampler, RelationError, RelationIndex, RelationLabel, TrainingPair};

#[derive(Debug, Error, PartialEq)]
pub enum LatentError {
    #[error("input has dimension {found}, model expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid loss config: {0}")]
    LossConfig(String),
    #[error("invalid training config: {0}")]
    TrainConfig(String),
    #[error("parameter vector has length {found}, expected {expected} for D={d}, L={l}")]
    ParamCount { d: usize, l: usize, expected: usize, found: usize },
    #[error("corpus has no raw observations to train on")]
    NoRawObservations,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Relation(#[from] RelationError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// KL weight.
    pub beta: f64,
    /// Relation-loss weight.
    pub alpha: f64,
    /// Latent L1 distance margin.
    pub d_m: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 1.0, alpha: 1.0, d_m: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LatentError> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(LatentError::LossConfig(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(LatentError::LossConfig(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(self.d_m > 0.0 && self.d_m.is_finite()) {
            return Err(LatentError::LossConfig(format!("d_m must be > 0, got {}", self.d_m)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    d: usize,
    l: usize,
    params: Vec<f64>,
}

/// Offsets of the parameter blocks inside the flat vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    w_mu: usize,
    b_mu: usize,
    w_lv: usize,
    b_lv: usize,
    w_dec: usize,
    b_dec: usize,
    len: usize,
}

impl Layout {
    fn new(d: usize, l: usize) -> Self {
        let w_mu = 0;
        let b_mu = w_mu + l * d;
        let w_lv = b_mu + l;
        let b_lv = w_lv + l * d;
        let w_dec = b_lv + l;
        let b_dec = w_dec + d * l;
        Self { w_mu, b_mu, w_lv, b_lv, w_dec, b_dec, len: b_dec + d }
    }
}

impl EncoderModel {
    pub fn zeros(d: usize, l: usize) -> Self {
        Self { d, l, params: vec![0.0; Layout::new(d, l).len] }
    }

    /// Small random weights, zero biases.
    pub fn random(d: usize, l: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = Self::zeros(d, l);
        let lay = model.layout();
        let enc_scale = 1.0 / (d.max(1) as f64).sqrt();
        let dec_scale = 1.0 / (l.max(1) as f64).sqrt();
        for p in &mut model.params[lay.w_mu..lay.b_mu] {
            *p = enc_scale * rng.sample::<f64, _>(StandardNormal);
        }
        for p in &mut model.params[lay.w_dec..lay.b_dec] {
            *p = dec_scale * rng.sample::<f64, _>(StandardNormal);
        }
        model
    }

    pub fn from_params(d: usize, l: usize, params: Vec<f64>) -> Result<Self, LatentError> {
        let expected = Layout::new(d, l).len;
        if params.len() != expected {
            return Err(LatentError::ParamCount { d, l, expected, found: params.len() });
        }
        Ok(Self { d, l, params })
    }

    /// Number of parameters for a `(D, L)` model.
    pub fn param_count(d: usize, l: usize) -> usize {
        Layout::new(d, l).len
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn latent_dim(&self) -> usize {
        self.l
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layout(&self) -> Layout {
        Layout::new(self.d, self.l)
    }

    fn mat(&self, start: usize, rows: usize, cols: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((rows, cols), &self.params[start..start + rows * cols]).expect("layout")
    }

    fn vec(&self, start: usize, len: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[start..start + len])
    }

    /// `L x D` mean weights.
    pub fn w_mu(&self) -> ArrayView2<'_, f64> {
        self.mat(self.layout().w_mu, self.l, self.d)
    }

    pub fn b_mu(&self) -> ArrayView1<'_, f64> {
        self.vec(self.layout().b_mu, self.l)
    }

    /// `L x D` log-variance weights.
    pub fn w_lv(&self) -> ArrayView2<'_, f64> {
        self.mat(self.layout().w_lv, self.l, self.d)
    }

    pub fn b_lv(&self) -> ArrayView1<'_, f64> {
        self.vec(self.layout().b_lv, self.l)
    }

    /// `D x L` decoder weights.
    pub fn w_dec(&self) -> ArrayView2<'_, f64> {
        self.mat(self.layout().w_dec, self.d, self.l)
    }

    pub fn b_dec(&self) -> ArrayView1<'_, f64> {
        self.vec(self.layout().b_dec, self.d)
    }

    /// Sets every block at once; shapes follow the accessors above.
    pub fn set_blocks(&mut self, w_mu: &[f64], b_mu: &[f64], w_lv: &[f64], b_lv: &[f64], w_dec: &[f64], b_dec: &[f64]) {
        let lay = self.layout();
        self.params[lay.w_mu..lay.b_mu].copy_from_slice(w_mu);
        self.params[lay.b_mu..lay.w_lv].copy_from_slice(b_mu);
        self.params[lay.w_lv..lay.b_lv].copy_from_slice(w_lv);
        self.params[lay.b_lv..lay.w_dec].copy_from_slice(b_lv);
        self.params[lay.w_dec..lay.b_dec].copy_from_slice(w_dec);
        self.params[lay.b_dec..].copy_from_slice(b_dec);
    }

    fn check_input(&self, x: &[f64]) -> Result<(), LatentError> {
        if x.len() != self.d {
            return Err(LatentError::Dimension { expected: self.d, found: x.len() });
        }
        Ok(())
    }

    pub fn encode(&self, x: &[f64]) -> Result<GaussianPosterior, LatentError> {
        self.check_input(x)?;
        let x = ArrayView1::from(x);
        let mean = self.w_mu().dot(&x) + self.b_mu();
        let log_var = self.w_lv().dot(&x) + self.b_lv();
        Ok(GaussianPosterior { mean: mean.to_vec(), log_var: log_var.to_vec() })
    }

    /// Posterior mean, the deterministic embedding used for grounding.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>, LatentError> {
        self.check_input(x)?;
        Ok((self.w_mu().dot(&ArrayView1::from(x)) + self.b_mu()).to_vec())
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, LatentError> {
        if z.len() != self.l {
            return Err(LatentError::Dimension { expected: self.l, found: z.len() });
        }
        Ok((self.w_dec().dot(&ArrayView1::from(z)) + self.b_dec()).to_vec())
    }
}

/// Reparameterised draw `mean + exp(log_var / 2) * eps`.
pub fn sample_latent<R: Rng + ?Sized>(posterior: &GaussianPosterior, rng: &mut R) -> Vec<f64> {
    let eps: Vec<f64> = (0..posterior.mean.len()).map(|_| rng.sample(StandardNormal)).collect();
    reparameterize(posterior, &eps)
}

pub fn reparameterize(posterior: &GaussianPosterior, eps: &[f64]) -> Vec<f64> {
    posterior.mean.iter().zip(&posterior.log_var).zip(eps).map(|((m, lv), e)| m + (0.5 * lv).exp() * e).collect()
}

/// Closed-form `KL(q || N(0, I))`.
pub fn gaussian_kl(posterior: &GaussianPosterior) -> f64 {
    0.5 * posterior.mean.iter().zip(&posterior.log_var).map(|(m, lv)| lv.exp() + m * m - 1.0 - lv).sum::<f64>()
}

pub fn l1_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Margin loss on a latent pair.
pub fn relation_loss(z1: &[f64], z2: &[f64], label: RelationLabel, d_m: f64) -> f64 {
    let dist = l1_distance(z1, z2);
    match label {
        RelationLabel::Inclusive => dist,
        RelationLabel::Exclusive => (2.0 * d_m - dist).max(0.0),
        RelationLabel::Independent => (d_m - dist).max(0.0),
    }
}

/// Relation loss and its gradient with respect to `z1` (the gradient with
/// respect to `z2` is the negation). Kinks take the zero branch.
pub fn relation_loss_grad(z1: &[f64], z2: &[f64], label: RelationLabel, d_m: f64) -> (f64, Vec<f64>) {
    let dist = l1_distance(z1, z2);
    let (loss, scale) = match label {
        RelationLabel::Inclusive => (dist, 1.0),
        RelationLabel::Exclusive => hinge(2.0 * d_m - dist),
        RelationLabel::Independent => hinge(d_m - dist),
    };
    let grad = z1
        .iter()
        .zip(z2)
        .map(|(a, b)| {
            let diff = a - b;
            if diff == 0.0 || scale == 0.0 {
                0.0
            } else {
                scale * diff.signum()
            }
        })
        .collect();
    (loss, grad)
}

fn hinge(arg: f64) -> (f64, f64) {
    if arg > 0.0 {
        (arg, -1.0)
    } else {
        (0.0, 0.0)
    }
}

/// VAE loss for one observation using the given standard-normal draw.
pub fn vae_loss_with_noise(model: &EncoderModel, x: &[f64], eps: &[f64], cfg: &LossConfig) -> Result<f64, LatentError> {
    let post = model.encode(x)?;
    let z = reparameterize(&post, eps);
    let xh = model.decode(&z)?;
    let rec = 0.5 * xh.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    Ok(rec + cfg.beta * gaussian_kl(&post))
}

/// `0.5 |x - decode(z)|^2 + beta KL(q(z|x) || N(0, I))` with `z` drawn from `q`.
pub fn vae_loss<R: Rng + ?Sized>(
    model: &EncoderModel,
    x: &[f64],
    rng: &mut R,
    cfg: &LossConfig,
) -> Result<f64, LatentError> {
    let eps: Vec<f64> = (0..model.l).map(|_| rng.sample(StandardNormal)).collect();
    vae_loss_with_noise(model, x, &eps, cfg)
}

/// Pair loss with explicit noise draws for both observations.
pub fn pair_loss_with_noise(
    model: &EncoderModel,
    x1: &[f64],
    x2: &[f64],
    label: RelationLabel,
    eps: (&[f64], &[f64]),
    cfg: &LossConfig,
) -> Result<f64, LatentError> {
    let v1 = vae_loss_with_noise(model, x1, eps.0, cfg)?;
    let v2 = vae_loss_with_noise(model, x2, eps.1, cfg)?;
    let r = relation_loss(&model.embed(x1)?, &model.embed(x2)?, label, cfg.d_m);
    Ok(0.5 * (v1 + v2) + cfg.alpha * r)
}

/// `0.5 (L_vae(x1) + L_vae(x2)) + alpha L_r(mean1, mean2)`.
pub fn pair_loss<R: Rng + ?Sized>(
    model: &EncoderModel,
    x1: &[f64],
    x2: &[f64],
    label: RelationLabel,
    rng: &mut R,
    cfg: &LossConfig,
) -> Result<f64, LatentError> {
    let e1: Vec<f64> = (0..model.l).map(|_| rng.sample(StandardNormal)).collect();
    let e2: Vec<f64> = (0..model.l).map(|_| rng.sample(StandardNormal)).collect();
    pair_loss_with_noise(model, x1, x2, label, (&e1, &e2), cfg)
}

/// Accumulates `scale * dL/dparams` of the VAE loss into `grad`; returns the loss.
fn accumulate_vae_grad(
    model: &EncoderModel,
    x: &[f64],
    eps: &[f64],
    cfg: &LossConfig,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64, LatentError> {
    let post = model.encode(x)?;
    let z = reparameterize(&post, eps);
    let xh = model.decode(&z)?;
    let (d, l) = (model.d, model.l);
    let lay = model.layout();
    let r: Vec<f64> = xh.iter().zip(x).map(|(a, b)| a - b).collect();
    let loss = 0.5 * r.iter().map(|v| v * v).sum::<f64>() + cfg.beta * gaussian_kl(&post);

    let w_dec = model.w_dec();
    let mut dz = vec![0.0; l];
    for i in 0..d {
        grad[lay.b_dec + i] += scale * r[i];
        for j in 0..l {
            grad[lay.w_dec + i * l + j] += scale * r[i] * z[j];
            dz[j] += w_dec[[i, j]] * r[i];
        }
    }
    for j in 0..l {
        let sd = (0.5 * post.log_var[j]).exp();
        let dmu = dz[j] + cfg.beta * post.mean[j];
        let dlv = dz[j] * eps[j] * sd * 0.5 + cfg.beta * 0.5 * (post.log_var[j].exp() - 1.0);
        grad[lay.b_mu + j] += scale * dmu;
        grad[lay.b_lv + j] += scale * dlv;
        for k in 0..d {
            grad[lay.w_mu + j * d + k] += scale * dmu * x[k];
            grad[lay.w_lv + j * d + k] += scale * dlv * x[k];
        }
    }
    Ok(loss)
}

/// Adds `upstream ⊗ x` to the mean-encoder gradient.
fn accumulate_mean_grad(model: &EncoderModel, x: &[f64], upstream: &[f64], grad: &mut [f64]) {
    let lay = model.layout();
    let d = model.d;
    for (j, u) in upstream.iter().enumerate() {
        if *u == 0.0 {
            continue;
        }
        grad[lay.b_mu + j] += u;
        for k in 0..d {
            grad[lay.w_mu + j * d + k] += u * x[k];
        }
    }
}

/// VAE loss and its gradient with respect to every parameter.
pub fn vae_loss_grad(
    model: &EncoderModel,
    x: &[f64],
    eps: &[f64],
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>), LatentError> {
    let mut grad = vec![0.0; model.params.len()];
    let loss = accumulate_vae_grad(model, x, eps, cfg, 1.0, &mut grad)?;
    Ok((loss, grad))
}

/// Pair loss and its gradient with respect to every parameter.
pub fn pair_loss_grad(
    model: &EncoderModel,
    x1: &[f64],
    x2: &[f64],
    label: RelationLabel,
    eps: (&[f64], &[f64]),
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>), LatentError> {
    let mut grad = vec![0.0; model.params.len()];
    let loss = accumulate_pair_grad(model, x1, x2, label, eps, cfg, 1.0, &mut grad)?;
    Ok((loss, grad))
}

#[allow(clippy::too_many_arguments)]
fn accumulate_pair_grad(
    model: &EncoderModel,
    x1: &[f64],
    x2: &[f64],
    label: RelationLabel,
    eps: (&[f64], &[f64]),
    cfg: &LossConfig,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64, LatentError> {
    let v1 = accumulate_vae_grad(model, x1, eps.0, cfg, 0.5 * scale, grad)?;
    let v2 = accumulate_vae_grad(model, x2, eps.1, cfg, 0.5 * scale, grad)?;
    let (r, dz1) = relation_loss_grad(&model.embed(x1)?, &model.embed(x2)?, label, cfg.d_m);
    let up1: Vec<f64> = dz1.iter().map(|g| scale * cfg.alpha * g).collect();
    let up2: Vec<f64> = up1.iter().map(|g| -g).collect();
    accumulate_mean_grad(model, x1, &up1, grad);
    accumulate_mean_grad(model, x2, &up2, grad);
    Ok(0.5 * (v1 + v2) + cfg.alpha * r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    /// Requested label mix (inclusive, exclusive, independent). Labels with
    /// no pairs in the corpus are dropped and the rest rescaled.
    pub ratios: [f64; 3],
    /// Pairs in the fixed evaluation set used for the before/after loss.
    pub eval_pairs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-2,
            epochs: 200,
            batch_size: 24,
            batches_per_epoch: 10,
            ratios: [1.0 / 3.0; 3],
            eval_pairs: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LatentError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(LatentError::TrainConfig(format!("lr must be > 0, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.batches_per_epoch == 0 {
            return Err(LatentError::TrainConfig("batch_size and batches_per_epoch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean pair loss over each epoch's minibatches.
    pub curve: Vec<f64>,
    /// Mean pair loss on the fixed evaluation pairs before training.
    pub initial_loss: f64,
    /// Same pairs and noise draws, after training.
    pub final_loss: f64,
    /// Label mix actually used.
    pub ratios: [f64; 3],
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, lr }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Drops labels that have no pairs and rescales the remainder.
pub fn effective_ratios(index: &RelationIndex, ratios: [f64; 3]) -> Result<[f64; 3], LatentError> {
    let counts = index.label_counts();
    let mut out = ratios;
    for (r, c) in out.iter_mut().zip(counts) {
        if c == 0 {
            *r = 0.0;
        }
    }
    let sum: f64 = out.iter().sum();
    if sum <= 0.0 {
        return Err(LatentError::TrainConfig(format!("no pairs available for label mix {ratios:?}")));
    }
    Ok(out.map(|r| r / sum))
}

fn draw_noise<R: Rng + ?Sized>(rng: &mut R, l: usize) -> Vec<f64> {
    (0..l).map(|_| rng.sample(StandardNormal)).collect()
}

/// Minibatch Adam on the pair loss. Returns the trained model and the loss
/// history; deterministic given `train.seed`.
pub fn train(
    model: &EncoderModel,
    corpus: &DemoCorpus,
    index: &RelationIndex,
    cfg: &LossConfig,
    train: &TrainConfig,
) -> Result<(EncoderModel, TrainReport), LatentError> {
    cfg.validate()?;
    train.validate()?;
    let raws: Vec<&[f64]> = corpus.raw_observations().map(|(_, f)| f).collect();
    if raws.len() < 2 || index.len() != raws.len() {
        return Err(LatentError::NoRawObservations);
    }
    model.check_input(raws[0])?;
    let ratios = effective_ratios(index, train.ratios)?;
    let sampler = PairSampler::new(index, ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    let l = model.l;

    let eval: Vec<(TrainingPair, Vec<f64>, Vec<f64>)> = (0..train.eval_pairs)
        .map(|_| (sampler.sample(&mut rng), draw_noise(&mut rng, l), draw_noise(&mut rng, l)))
        .collect();
    let eval_loss = |m: &EncoderModel| -> Result<f64, LatentError> {
        if eval.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for (p, e1, e2) in &eval {
            total += pair_loss_with_noise(m, raws[p.a], raws[p.b], p.label, (e1, e2), cfg)?;
        }
        Ok(total / eval.len() as f64)
    };

    let mut current = model.clone();
    let initial_loss = eval_loss(&current)?;
    let mut adam = Adam::new(current.params.len(), train.lr);
    let mut curve = Vec::with_capacity(train.epochs);
    let mut grad = vec![0.0; current.params.len()];
    for epoch in 0..train.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..train.batches_per_epoch {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / train.batch_size as f64;
            let mut batch_loss = 0.0;
            for _ in 0..train.batch_size {
                let p = sampler.sample(&mut rng);
                let e1 = draw_noise(&mut rng, l);
                let e2 = draw_noise(&mut rng, l);
                batch_loss +=
                    accumulate_pair_grad(&current, raws[p.a], raws[p.b], p.label, (&e1, &e2), cfg, scale, &mut grad)?;
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LatentError::Diverged { epoch, loss: batch_loss });
            }
            adam.step(&mut current.params, &grad);
            epoch_loss += batch_loss;
        }
        curve.push(epoch_loss / train.batches_per_epoch as f64);
    }
    let final_loss = eval_loss(&current)?;
    if !final_loss.is_finite() {
        return Err(LatentError::Diverged { epoch: train.epochs, loss: final_loss });
    }
    Ok((current, TrainReport { curve, initial_loss, final_loss, ratios }))
}
