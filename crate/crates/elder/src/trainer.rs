//! Training: denoiser pretraining and end-to-end equilibrium learning.
//!
//! The reconstruction used at inference is a fixed point `x* = T(x*)` of
//! the proximal gradient map. Training differentiates the reconstruction
//! loss `L = 0.5 ||x* - x_gt||^2` through that fixed point in one of two
//! ways:
//!
//! * **Jacobian-free** ([`jfb_gradient`]): backpropagate through a single
//!   application of `T` with the input frozen at `x*`. Cheap — one
//!   weight-VJP — and a well-behaved descent direction in practice.
//! * **Exact implicit** ([`exact_implicit_gradient`]): solve the adjoint
//!   equation `u = delta + J_T(x*)^T u` by its Neumann series, then take
//!   one weight-VJP against `u`. This is the true gradient of `L` as a
//!   function of the weights; it requires `T` to be a contraction at `x*`
//!   and fails loudly when the series diverges.
//!
//! Pretraining ([`pretrain_denoiser`]) fits the gradient-step map
//! `v - grad h(v)` as a Gaussian denoiser over a range of noise levels,
//! which starts the equilibrium training from weights whose gradient field
//! already points toward clean images.
//!
//! All sampling is stream-keyed: sample `i` of seed `s` reads ChaCha stream
//! `i`, so datasets are reproducible and independent of batch boundaries.

use crate::data::{procedural_tile, sample_rng};
use crate::error::{Error, Result};
use crate::forward_model::{random_inpaint_mask, random_symmetric_mask, MeasurementModel};
use crate::regularizer::Regularizer;
use crate::solver::{initial_estimate, run_forward, SolverConfig};
use crate::tensor::Tensor;
use rand::Rng;
use std::path::Path;
use std::time::Instant;

// ---- metrics -----------------------------------------------------------------

/// Training loss `0.5 ||a - b||^2`.
pub fn squared_error_loss(a: &Tensor, b: &Tensor) -> f64 {
    0.5 * a.sub(b).norm2_sq()
}

/// Per-pixel mean squared error.
pub fn mean_squared_error(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).norm2_sq() / a.numel() as f64
}

/// Peak signal-to-noise ratio in dB; `+inf` when the images are identical.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> f64 {
    let mse = mean_squared_error(a, b);
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

// ---- Adam --------------------------------------------------------------------

/// Adam with bias correction, operating on a parameter list in
/// `param_specs` order.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(total_params: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; total_params],
            v: vec![0.0; total_params],
        }
    }

    /// One update over all parameter tensors.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        let total: usize = params.iter().map(|p| p.numel()).sum();
        if total != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer state holds {} values, parameters hold {total}",
                self.m.len()
            )));
        }
        if params.len() != grads.len()
            || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape())
        {
            return Err(Error::shape("gradient list does not match parameter list"));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut off = 0;
        for (p, g) in params.iter_mut().zip(grads) {
            let n = p.numel();
            let (pd, gd) = (p.data_mut(), g.data());
            for i in 0..n {
                let m = &mut self.m[off + i];
                let v = &mut self.v[off + i];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gd[i];
                *v = self.beta2 * *v + (1.0 - self.beta2) * gd[i] * gd[i];
                pd[i] -= self.lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
            off += n;
        }
        Ok(())
    }
}

fn zero_grads(params: &[Tensor]) -> Vec<Tensor> {
    params.iter().map(|p| Tensor::zeros(p.shape())).collect()
}

fn add_scaled(into: &mut [Tensor], from: &[Tensor], c: f64) {
    for (a, b) in into.iter_mut().zip(from) {
        *a = a.add(&b.scale(c));
    }
}

fn grads_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(|g| g.norm2_sq()).sum::<f64>().sqrt()
}

// ---- equilibrium gradients ---------------------------------------------------

/// Loss and per-parameter weight gradients for one training problem.
#[derive(Debug)]
pub struct LossGradient {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    /// Neumann terms used by the adjoint solve; 0 on the Jacobian-free path.
    pub neumann_iters: usize,
}

/// Weight gradient with the equilibrium input frozen: exactly the gradient
/// of `0.5 || T(x_bar) - x_gt ||^2` in the weights, evaluated with
/// `x_bar` held fixed. `gamma` must be the step size of the forward map.
pub fn jfb_gradient(
    model: &MeasurementModel,
    reg: &Regularizer,
    x_bar: &Tensor,
    x_gt: &Tensor,
    gamma: f64,
) -> Result<LossGradient> {
    let delta = x_bar.sub(x_gt);
    let loss = 0.5 * delta.norm2_sq();
    // d/dtheta prox(x - gamma tau grad h) = -gamma tau J_prox d(grad h)/dtheta,
    // and J_prox is self-adjoint
    let v = model.prox_jacobian_apply(&delta, gamma)?;
    let gw = reg.grad_weights_vjp(x_bar, &v)?;
    let c = -gamma * reg.tau;
    Ok(LossGradient {
        loss,
        grads: gw.into_iter().map(|g| g.scale(c)).collect(),
        neumann_iters: 0,
    })
}

/// Adjoint state of the implicit gradient: the solution `u` of
/// `u = delta + J_T(x_bar)^T u` by Neumann iteration, together with the
/// number of terms used. Errors when the series does not contract.
pub fn implicit_adjoint_state(
    model: &MeasurementModel,
    reg: &Regularizer,
    x_bar: &Tensor,
    delta: &Tensor,
    gamma: f64,
    tol: f64,
    max_terms: usize,
) -> Result<(Tensor, usize)> {
    let step = gamma * reg.tau;
    let scale = delta.norm2().max(1e-300);
    let mut u = delta.clone();
    for term in 1..=max_terms {
        // J_T^T u = (I - gamma tau H(x_bar)) J_prox u, both factors self-adjoint
        let w = model.prox_jacobian_apply(&u, gamma)?;
        let jtu =
            if step == 0.0 { w } else { w.sub(&reg.grad_input_vjp(x_bar, &w)?.scale(step)) };
        let u_next = delta.add(&jtu);
        if !u_next.is_finite() || u_next.norm2() > 1e6 * scale {
            return Err(Error::numeric(format!(
                "implicit backward: adjoint iteration diverged after {term} terms — the \
                 update map is not a contraction at this point"
            )));
        }
        let change = u_next.sub(&u).norm2();
        u = u_next;
        if change <= tol * scale {
            return Ok((u, term));
        }
    }
    Err(Error::numeric(format!(
        "implicit backward: adjoint iteration did not reach tolerance {tol:.1e} within \
         {max_terms} terms — the update map contracts too slowly or not at all"
    )))
}

/// True gradient of the equilibrium loss in the weights, via the implicit
/// function theorem. `x_bar` must be an (approximate) fixed point of the
/// `gamma`-step update map.
pub fn exact_implicit_gradient(
    model: &MeasurementModel,
    reg: &Regularizer,
    x_bar: &Tensor,
    x_gt: &Tensor,
    gamma: f64,
    tol: f64,
    max_terms: usize,
) -> Result<LossGradient> {
    let delta = x_bar.sub(x_gt);
    let loss = 0.5 * delta.norm2_sq();
    let (u, neumann_iters) =
        implicit_adjoint_state(model, reg, x_bar, &delta, gamma, tol, max_terms)?;
    let v = model.prox_jacobian_apply(&u, gamma)?;
    let gw = reg.grad_weights_vjp(x_bar, &v)?;
    let c = -gamma * reg.tau;
    Ok(LossGradient {
        loss,
        grads: gw.into_iter().map(|g| g.scale(c)).collect(),
        neumann_iters,
    })
}

// ---- problem generation ------------------------------------------------------

/// Reconstruction task family for training and evaluation.
#[derive(Debug, Clone)]
pub enum TaskKind {
    /// Fixed blur kernel and downsampling factor; noise level drawn
    /// uniformly from `[0, sigma_max]` per sample.
    BlurDownsample { kernel: Tensor, factor: usize, sigma_max: f64 },
    /// Fresh point-symmetric sampling mask per sample with a ratio drawn
    /// from `[ratio_lo, ratio_hi]`.
    FourierSampling { ratio_lo: f64, ratio_hi: f64, sigma_max: f64 },
    /// Fresh Bernoulli pixel mask per sample.
    Inpainting { keep_prob: f64, sigma_max: f64 },
}

/// One generated problem: ground truth, measurements, and the standard
/// initial iterate.
#[derive(Debug, Clone)]
pub struct TrainProblem {
    pub model: MeasurementModel,
    pub x_gt: Tensor,
    pub y: Tensor,
    pub x0: Tensor,
}

/// A reproducible stream of problems: instance `i` depends only on
/// `(base_seed, i)` and the task parameters.
#[derive(Debug, Clone)]
pub struct ProblemSet {
    pub task: TaskKind,
    pub hw: (usize, usize),
    pub base_seed: u64,
}

impl ProblemSet {
    pub fn instance(&self, index: u64) -> Result<TrainProblem> {
        let (h, w) = self.hw;
        let mut rng = sample_rng(self.base_seed, index);
        let x_gt = procedural_tile(h, w, &mut rng);
        let (model, sigma) = match &self.task {
            TaskKind::BlurDownsample { kernel, factor, sigma_max } => {
                let model = MeasurementModel::blur_downsample(kernel.clone(), *factor, (h, w))?;
                (model, rng.gen_range(0.0..=*sigma_max))
            }
            TaskKind::FourierSampling { ratio_lo, ratio_hi, sigma_max } => {
                let ratio = rng.gen_range(*ratio_lo..=*ratio_hi);
                let mask = random_symmetric_mask(h, w, ratio, rng.gen())?;
                (MeasurementModel::fourier_mask(mask)?, rng.gen_range(0.0..=*sigma_max))
            }
            TaskKind::Inpainting { keep_prob, sigma_max } => {
                let mask = random_inpaint_mask(h, w, *keep_prob, rng.gen())?;
                (MeasurementModel::inpaint(mask)?, rng.gen_range(0.0..=*sigma_max))
            }
        };
        let y = model.simulate(&x_gt, sigma, rng.gen())?;
        let x0 = initial_estimate(&model, &y)?;
        Ok(TrainProblem { model, x_gt, y, x0 })
    }
}

// ---- training records --------------------------------------------------------

/// One epoch of progress. `wall_secs` is informational only; everything
/// else is a pure function of the seeds and must reproduce bit for bit.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_psnr: f64,
    pub grad_norm: f64,
    pub skipped: usize,
    pub wall_secs: f64,
}

fn save_checkpoints(
    reg: &Regularizer,
    dir: Option<&Path>,
    epoch: usize,
    is_best: bool,
) -> Result<()> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
        reg.net.save(&dir.join(format!("epoch_{epoch:04}.elder")))?;
        if is_best {
            reg.net.save(&dir.join("best.elder"))?;
        }
    }
    Ok(())
}

fn check_params_finite(reg: &Regularizer, context: &str) -> Result<()> {
    if reg.net.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::numeric(format!("{context}: weights became non-finite")));
    }
    Ok(())
}

// ---- denoiser pretraining ----------------------------------------------------

#[derive(Debug, Clone)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Noise levels are drawn uniformly from `[0, sigma_max]`.
    pub sigma_max: f64,
    pub hw: (usize, usize),
    pub val_count: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 20,
            samples_per_epoch: 64,
            batch_size: 8,
            lr: 1e-3,
            sigma_max: 55.0 / 255.0,
            hw: (16, 16),
            val_count: 8,
            seed: 7,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.samples_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::config("pretraining epochs, samples, and batch size must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.sigma_max >= 0.0) || !self.sigma_max.is_finite() {
            return Err(Error::config(format!("sigma_max must be >= 0, got {}", self.sigma_max)));
        }
        Ok(())
    }
}

/// Fit the gradient-step map `D(v) = v - grad h(v)` as a denoiser:
/// `v = u + sigma e` with clean tiles `u`, per-sample loss
/// `0.5 ||D(v) - u||^2`. Returns one record per epoch; the regularizer's
/// weights are updated in place.
pub fn pretrain_denoiser(
    reg: &mut Regularizer,
    config: &PretrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>> {
    config.validate()?;
    let (h, w) = config.hw;
    reg.net.check_input(&[h, w])?;
    let mut adam = Adam::new(reg.net.arch.param_count(), config.lr);
    let mut records = Vec::new();
    let mut best_val = f64::INFINITY;

    // fixed validation pairs, separate stream space from training
    let val_seed = config.seed.wrapping_add(0x5641_4c00);
    let val_pairs: Vec<(Tensor, Tensor)> = (0..config.val_count)
        .map(|i| {
            let mut rng = sample_rng(val_seed, i as u64);
            let u = procedural_tile(h, w, &mut rng);
            let sigma = 0.5 * config.sigma_max;
            let mut v = u.clone();
            for p in v.data_mut() {
                *p += sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            (u, v)
        })
        .collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut epoch_loss = 0.0;
        let mut epoch_gnorm = 0.0;
        let mut updates = 0usize;
        let mut batch = zero_grads(&reg.net.params);
        let mut in_batch = 0usize;

        for i in 0..config.samples_per_epoch {
            let sample_index = (epoch * config.samples_per_epoch + i) as u64;
            let mut rng = sample_rng(config.seed, sample_index);
            let u = procedural_tile(h, w, &mut rng);
            let sigma: f64 = rng.gen_range(0.0..=config.sigma_max);
            let mut v = u.clone();
            for p in v.data_mut() {
                *p += sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
            // r = D(v) - u; dLoss/dtheta = -(d grad h/dtheta)^T r
            let denoised = v.sub(&reg.grad(&v)?);
            let r = denoised.sub(&u);
            epoch_loss += 0.5 * r.norm2_sq();
            let gw = reg.grad_weights_vjp(&v, &r)?;
            add_scaled(&mut batch, &gw, -1.0);
            in_batch += 1;

            if in_batch == config.batch_size || i + 1 == config.samples_per_epoch {
                let mean: Vec<Tensor> =
                    batch.iter().map(|g| g.scale(1.0 / in_batch as f64)).collect();
                epoch_gnorm += grads_norm(&mean);
                adam.step(&mut reg.net.params, &mean)?;
                check_params_finite(reg, "pretraining")?;
                updates += 1;
                batch = zero_grads(&reg.net.params);
                in_batch = 0;
            }
        }

        let (mut val_mse, mut val_psnr) = (0.0, 0.0);
        for (u, v) in &val_pairs {
            let denoised = v.sub(&reg.grad(v)?);
            val_mse += mean_squared_error(&denoised, u);
            val_psnr += psnr(&denoised, u, 1.0);
        }
        val_mse /= val_pairs.len().max(1) as f64;
        val_psnr /= val_pairs.len().max(1) as f64;

        let record = TrainRecord {
            epoch,
            train_loss: epoch_loss / config.samples_per_epoch as f64,
            val_mse,
            val_psnr,
            grad_norm: epoch_gnorm / updates.max(1) as f64,
            skipped: 0,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        let is_best = val_mse < best_val;
        if is_best {
            best_val = val_mse;
        }
        save_checkpoints(reg, checkpoint_dir, epoch, is_best)?;
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}

// ---- equilibrium training ----------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Jfb,
    Implicit,
}

impl GradMode {
    pub fn parse(s: &str) -> Result<GradMode> {
        match s {
            "jfb" => Ok(GradMode::Jfb),
            "implicit" => Ok(GradMode::Implicit),
            other => Err(Error::config(format!(
                "unknown gradient mode {other:?} (expected jfb or implicit)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_mode: GradMode,
    /// Fixed step size of the training-time forward iteration.
    pub gamma: f64,
    /// Iteration budget of the training-time forward iteration.
    pub forward_iters: usize,
    pub epsilon: f64,
    pub neumann_tol: f64,
    pub neumann_max: usize,
    pub val_count: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            samples_per_epoch: 32,
            batch_size: 4,
            lr: 1e-3,
            grad_mode: GradMode::Jfb,
            gamma: 1.0,
            forward_iters: 100,
            epsilon: 1e-2,
            neumann_tol: 1e-8,
            neumann_max: 200,
            val_count: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.samples_per_epoch == 0 || self.batch_size == 0 {
            return Err(Error::config("training epochs, samples, and batch size must be positive"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if self.forward_iters == 0 {
            return Err(Error::config("forward_iters must be at least 1"));
        }
        Ok(())
    }

    fn forward_config(&self) -> SolverConfig {
        SolverConfig {
            gamma0: self.gamma,
            line_search: false,
            epsilon: self.epsilon,
            max_iters: self.forward_iters,
            ..Default::default()
        }
    }
}

/// End-to-end training of the regularizer through the equilibrium of its
/// own update map. Per sample: run the fixed-step forward iteration to an
/// approximate fixed point, skip the sample if it did not settle, otherwise
/// take the configured gradient. Validation solves use the inference-time
/// line search. Weights update in place; one record per epoch.
pub fn train_deq(
    reg: &mut Regularizer,
    train_set: &ProblemSet,
    val_set: &ProblemSet,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>> {
    config.validate()?;
    let forward = config.forward_config();
    let val_solver = SolverConfig { epsilon: config.epsilon, ..Default::default() };
    let mut adam = Adam::new(reg.net.arch.param_count(), config.lr);
    let mut records = Vec::new();
    let mut best_val = f64::INFINITY;

    let val_problems: Vec<TrainProblem> =
        (0..config.val_count).map(|i| val_set.instance(i as u64)).collect::<Result<_>>()?;

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let mut epoch_loss = 0.0;
        let mut contributed = 0usize;
        let mut skipped = 0usize;
        let mut epoch_gnorm = 0.0;
        let mut updates = 0usize;
        let mut batch = zero_grads(&reg.net.params);
        let mut in_batch = 0usize;

        for i in 0..config.samples_per_epoch {
            let sample_index = (epoch * config.samples_per_epoch + i) as u64;
            let p = train_set.instance(sample_index)?;
            let fp = run_forward(&p.model, &*reg, &p.y, &p.x0, &forward)?;
            if !fp.converged {
                skipped += 1;
            } else {
                let lg = match config.grad_mode {
                    GradMode::Jfb => {
                        jfb_gradient(&p.model, reg, &fp.x, &p.x_gt, config.gamma)?
                    }
                    GradMode::Implicit => exact_implicit_gradient(
                        &p.model,
                        reg,
                        &fp.x,
                        &p.x_gt,
                        config.gamma,
                        config.neumann_tol,
                        config.neumann_max,
                    )?,
                };
                epoch_loss += lg.loss;
                contributed += 1;
                add_scaled(&mut batch, &lg.grads, 1.0);
                in_batch += 1;
            }

            let batch_full = in_batch == config.batch_size;
            let epoch_end = i + 1 == config.samples_per_epoch;
            if (batch_full || epoch_end) && in_batch > 0 {
                let mean: Vec<Tensor> =
                    batch.iter().map(|g| g.scale(1.0 / in_batch as f64)).collect();
                epoch_gnorm += grads_norm(&mean);
                adam.step(&mut reg.net.params, &mean)?;
                check_params_finite(reg, "equilibrium training")?;
                updates += 1;
                batch = zero_grads(&reg.net.params);
                in_batch = 0;
            }
        }
        if contributed == 0 {
            return Err(Error::numeric(format!(
                "equilibrium training epoch {epoch}: every forward iteration failed to settle \
                 within {} steps",
                config.forward_iters
            )));
        }

        let (mut val_mse, mut val_psnr) = (0.0, 0.0);
        for p in &val_problems {
            let fp = run_forward(&p.model, &*reg, &p.y, &p.x0, &val_solver)?;
            val_mse += mean_squared_error(&fp.x, &p.x_gt);
            val_psnr += psnr(&fp.x, &p.x_gt, 1.0);
        }
        val_mse /= val_problems.len().max(1) as f64;
        val_psnr /= val_problems.len().max(1) as f64;

        let record = TrainRecord {
            epoch,
            train_loss: epoch_loss / contributed as f64,
            val_mse,
            val_psnr,
            grad_norm: epoch_gnorm / updates.max(1) as f64,
            skipped,
            wall_secs: started.elapsed().as_secs_f64(),
        };
        let is_best = val_mse < best_val;
        if is_best {
            best_val = val_mse;
        }
        save_checkpoints(reg, checkpoint_dir, epoch, is_best)?;
        on_epoch(&record);
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward_model::gaussian_kernel;
    use crate::network::{build_network, ArchConfig, NetworkWeights};
    use crate::regularizer::RegKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_arch() -> ArchConfig {
        ArchConfig { num_scales: 1, blocks_per_scale: 1, base_channels: 4, kernel_size: 3 }
    }

    fn tiny_reg(tau: f64, seed: u64, weight_scale: f64) -> Regularizer {
        let mut net = build_network(&tiny_arch(), seed).unwrap();
        net.scale_all(weight_scale);
        Regularizer::new(RegKind::Lsr, tau, net).unwrap()
    }

    fn flatten(params: &[Tensor]) -> Vec<f64> {
        params.iter().flat_map(|p| p.data().iter().copied()).collect()
    }

    #[test]
    fn metrics_match_hand_values() {
        let a = Tensor::full(&[4, 4], 0.6);
        let b = Tensor::full(&[4, 4], 0.5);
        assert!((squared_error_loss(&a, &b) - 0.5 * 16.0 * 0.01).abs() < 1e-12);
        assert!((mean_squared_error(&a, &b) - 0.01).abs() < 1e-14);
        assert!((psnr(&a, &b, 1.0) - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0), f64::INFINITY);
    }

    #[test]
    fn adam_first_steps_match_hand_computation() {
        // constant unit gradient: bias correction makes every early step
        // almost exactly lr
        let mut adam = Adam::new(1, 0.1);
        let mut p = vec![Tensor::zeros(&[1])];
        let g = vec![Tensor::ones(&[1])];
        adam.step(&mut p, &g).unwrap();
        assert!((p[0].data()[0] + 0.1).abs() < 1e-6);
        adam.step(&mut p, &g).unwrap();
        assert!((p[0].data()[0] + 0.2).abs() < 1e-5);

        // shape mismatch is rejected
        let bad = vec![Tensor::ones(&[2])];
        assert!(adam.step(&mut p, &bad).is_err());
    }

    /// A dense overdetermined operator: `A^T A` is positive definite, so
    /// the prox — and with it the whole update map — is a strict
    /// contraction no matter what the network does. Fixed points are then
    /// reachable to near machine precision, which the gradient identities
    /// below need.
    fn contractive_problem(
        seed: u64,
    ) -> (MeasurementModel, Tensor, Tensor) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model =
            MeasurementModel::generic(Tensor::randn(&[24, 16], &mut rng), &[4, 4]).unwrap();
        let x_gt = Tensor::randn(&[4, 4], &mut rng);
        let y = model.simulate(&x_gt, 0.02, seed ^ 1).unwrap();
        (model, x_gt, y)
    }

    fn settle(
        model: &MeasurementModel,
        reg: &Regularizer,
        y: &Tensor,
        gamma: f64,
    ) -> Tensor {
        let config = SolverConfig {
            gamma0: gamma,
            line_search: false,
            epsilon: 1e-14,
            max_iters: 500,
            ..Default::default()
        };
        let fp = run_forward(model, reg, y, &Tensor::zeros(&model.image_shape()), &config)
            .unwrap();
        assert!(fp.converged, "forward iteration did not settle");
        fp.x
    }

    #[test]
    fn jfb_matches_finite_difference_with_frozen_input() {
        let reg = tiny_reg(0.4, 50, 0.3);
        let (model, x_gt, y) = contractive_problem(51);
        let gamma = 0.8;
        let x_bar = settle(&model, &reg, &y, gamma);

        let lg = jfb_gradient(&model, &reg, &x_bar, &x_gt, gamma).unwrap();
        let analytic = flatten(&lg.grads);

        // finite differences of one frozen-input application of the map
        let frozen_loss = |net: &NetworkWeights| -> f64 {
            let r = Regularizer::new(reg.kind, reg.tau, net.clone()).unwrap();
            let z = x_bar.sub(&r.grad(&x_bar).unwrap().scale(gamma * r.tau));
            let stepped = model.prox_data(&z, gamma, &y).unwrap();
            squared_error_loss(&stepped, &x_gt)
        };
        let h = 1e-5;
        let mut fd = Vec::new();
        for t in 0..reg.net.params.len() {
            for i in 0..reg.net.params[t].numel() {
                let mut plus = reg.net.clone();
                plus.params[t].data_mut()[i] += h;
                let mut minus = reg.net.clone();
                minus.params[t].data_mut()[i] -= h;
                fd.push((frozen_loss(&plus) - frozen_loss(&minus)) / (2.0 * h));
            }
        }
        let num = analytic
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let den = fd.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        assert!(num / den < 1e-5, "rel l2 error {:.3e}", num / den);
    }

    #[test]
    fn adjoint_state_satisfies_its_equation() {
        let reg = tiny_reg(0.3, 53, 0.1);
        let (model, _, _) = contractive_problem(54);
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let x_bar = Tensor::randn(&[4, 4], &mut rng);
        let delta = Tensor::randn(&[4, 4], &mut rng);
        let gamma = 0.9;
        let (u, terms) =
            implicit_adjoint_state(&model, &reg, &x_bar, &delta, gamma, 1e-12, 500).unwrap();
        assert!(terms >= 2);
        // residual of u - J_T^T u - delta, rebuilt from the public pieces
        let w = model.prox_jacobian_apply(&u, gamma).unwrap();
        let jtu = w.sub(&reg.grad_input_vjp(&x_bar, &w).unwrap().scale(gamma * reg.tau));
        let res = u.sub(&jtu).sub(&delta).norm2();
        assert!(res <= 1e-9 * delta.norm2(), "fixed-point residual {res:.3e}");
    }

    #[test]
    fn noncontractive_map_reported_as_numeric_error() {
        let reg = tiny_reg(50.0, 56, 5.0);
        let model = MeasurementModel::inpaint(random_inpaint_mask(8, 8, 0.3, 57).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(58);
        let x_bar = Tensor::randn(&[8, 8], &mut rng);
        let x_gt = Tensor::randn(&[8, 8], &mut rng);
        match exact_implicit_gradient(&model, &reg, &x_bar, &x_gt, 1.0, 1e-8, 50) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("contraction")),
            other => panic!("expected a numeric error, got {other:?}"),
        }
    }

    #[test]
    fn fully_observed_inpainting_needs_no_adjoint_terms() {
        // mask of all ones: the prox Jacobian vanishes, the Neumann series
        // terminates immediately, and both gradient styles agree (both zero)
        let reg = tiny_reg(0.5, 59, 0.3);
        let model = MeasurementModel::inpaint(Tensor::ones(&[8, 8])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let x_bar = Tensor::randn(&[8, 8], &mut rng);
        let x_gt = Tensor::randn(&[8, 8], &mut rng);
        let jfb = jfb_gradient(&model, &reg, &x_bar, &x_gt, 1.0).unwrap();
        let exact = exact_implicit_gradient(&model, &reg, &x_bar, &x_gt, 1.0, 1e-10, 50).unwrap();
        assert_eq!(exact.neumann_iters, 1);
        for (a, b) in jfb.grads.iter().zip(&exact.grads) {
            assert_eq!(a, b);
            assert_eq!(a.norm2(), 0.0);
        }
    }

    #[test]
    fn problem_sets_are_reproducible() {
        let set = ProblemSet {
            task: TaskKind::Inpainting { keep_prob: 0.5, sigma_max: 0.0 },
            hw: (8, 8),
            base_seed: 61,
        };
        let a = set.instance(3).unwrap();
        let b = set.instance(3).unwrap();
        assert_eq!(a.x_gt, b.x_gt);
        assert_eq!(a.y, b.y);
        assert_eq!(a.x0, b.x0);
        assert_ne!(a.x_gt, set.instance(4).unwrap().x_gt);

        let blur = ProblemSet {
            task: TaskKind::BlurDownsample {
                kernel: gaussian_kernel(3, 1.0).unwrap(),
                factor: 2,
                sigma_max: 0.05,
            },
            hw: (8, 8),
            base_seed: 62,
        };
        let p = blur.instance(0).unwrap();
        assert_eq!(p.y.shape(), &[4, 4]);
        assert_eq!(p.x0.shape(), &[8, 8]);
    }

    #[test]
    fn pretraining_reduces_denoising_loss() {
        let mut reg = tiny_reg(1.0, 63, 0.2);
        let config = PretrainConfig {
            epochs: 4,
            samples_per_epoch: 12,
            batch_size: 4,
            lr: 4e-3,
            sigma_max: 0.2,
            hw: (8, 8),
            val_count: 4,
            seed: 64,
        };
        let records = pretrain_denoiser(&mut reg, &config, None, |_| {}).unwrap();
        assert_eq!(records.len(), 4);
        let first = records.first().unwrap().train_loss;
        let last = records.last().unwrap().train_loss;
        assert!(last < first, "loss did not improve: {first} -> {last}");
    }

    #[test]
    fn equilibrium_training_is_deterministic_and_checkpoints() {
        let run = |dir: Option<&Path>| -> (Vec<TrainRecord>, Vec<f64>) {
            let mut reg = tiny_reg(0.2, 65, 0.1);
            let train = ProblemSet {
                task: TaskKind::Inpainting { keep_prob: 0.5, sigma_max: 0.0 },
                hw: (8, 8),
                base_seed: 66,
            };
            let val = ProblemSet { base_seed: 67, ..train.clone() };
            let config = TrainConfig {
                epochs: 2,
                samples_per_epoch: 4,
                batch_size: 2,
                lr: 1e-3,
                val_count: 2,
                forward_iters: 60,
                ..Default::default()
            };
            let records = train_deq(&mut reg, &train, &val, &config, dir, |_| {}).unwrap();
            (records, flatten(&reg.net.params))
        };
        let tmp = tempfile::tempdir().unwrap();
        let (ra, pa) = run(Some(tmp.path()));
        let (rb, pb) = run(None);
        assert_eq!(pa, pb);
        for (x, y) in ra.iter().zip(&rb) {
            assert_eq!(x.train_loss, y.train_loss);
            assert_eq!(x.val_mse, y.val_mse);
            assert_eq!(x.grad_norm, y.grad_norm);
            assert_eq!(x.skipped, y.skipped);
        }
        assert!(tmp.path().join("epoch_0001.elder").exists());
        let best = NetworkWeights::load(&tmp.path().join("best.elder")).unwrap();
        assert_eq!(best.arch, tiny_arch());
    }
}
