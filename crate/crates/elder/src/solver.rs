//! Proximal gradient descent with a backtracking line search.
//!
//! Minimizes `f(x) = g(x) + tau * h(x)` where `g` is the data term of a
//! [`MeasurementModel`] and `h` any [`Penalty`]. One iteration is
//!
//! ```text
//! x_next = prox_{gamma g}( x - gamma * tau * grad_h(x) )
//! ```
//!
//! The step size is chosen by backtracking: a trial step is accepted when
//!
//! ```text
//! f(x) - f(x_next) >= (rho / gamma) * ||x_next - x||^2
//! ```
//!
//! with `0 < rho < 1/2`, otherwise `gamma` is multiplied by `beta` and the
//! step retried. The accepted inequality has a strictly positive right-hand
//! side whenever the iterate moved, so the objective decreases monotonically
//! in exact floating-point comparison — the solver tests rely on that, no
//! epsilon slack needed. Between iterations the trial step either restarts
//! optimistically (`GammaReset::Expand`, default: grow the last accepted
//! step by `1/beta`, capped at `gamma0`) or stays put
//! (`GammaReset::Monotone`).
//!
//! Iteration stops when the relative update `||dx|| / ||x||` falls below
//! `epsilon` or after `max_iters` steps. If the line search cannot find an
//! acceptable step (`max_backtracks` shrinkages, or the objective turns
//! non-finite), the run stops early with `step_failed` set — callers treat
//! that as a numeric failure, not as convergence.

use crate::error::{Error, Result};
use crate::forward_model::MeasurementModel;
use crate::regularizer::Regularizer;
use crate::tensor::Tensor;

/// The differentiable part `h` of the objective, scaled by `tau`.
pub trait Penalty {
    fn tau(&self) -> f64;
    fn value(&self, x: &Tensor) -> Result<f64>;
    fn grad(&self, x: &Tensor) -> Result<Tensor>;
}

impl Penalty for Regularizer {
    fn tau(&self) -> f64 {
        self.tau
    }
    fn value(&self, x: &Tensor) -> Result<f64> {
        Regularizer::value(self, x)
    }
    fn grad(&self, x: &Tensor) -> Result<Tensor> {
        Regularizer::grad(self, x)
    }
}

/// `h(x) = 0.5 ||x - center||^2` — gradient Lipschitz constant exactly 1.
/// Keeps the whole objective a strongly convex quadratic, which makes it the
/// step-size benchmark problem: the reference step `1/tau` is known in
/// closed form.
#[derive(Debug, Clone)]
pub struct QuadraticPenalty {
    pub tau: f64,
    pub center: Tensor,
}

impl Penalty for QuadraticPenalty {
    fn tau(&self) -> f64 {
        self.tau
    }
    fn value(&self, x: &Tensor) -> Result<f64> {
        Ok(0.5 * x.sub(&self.center).norm2_sq())
    }
    fn grad(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.sub(&self.center))
    }
}

/// `tau = 0`: plain data-term minimization, the prox applied repeatedly.
#[derive(Debug, Clone, Copy)]
pub struct NoPenalty;

impl Penalty for NoPenalty {
    fn tau(&self) -> f64 {
        0.0
    }
    fn value(&self, _x: &Tensor) -> Result<f64> {
        Ok(0.0)
    }
    fn grad(&self, x: &Tensor) -> Result<Tensor> {
        Ok(Tensor::zeros(x.shape()))
    }
}

/// How the trial step size starts each new iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GammaReset {
    /// Grow the last accepted step by `1/beta`, capped at `gamma0`.
    Expand,
    /// Start from the last accepted step; `gamma` never increases.
    Monotone,
}

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub gamma0: f64,
    pub beta: f64,
    pub rho: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    /// `false` runs fixed steps at `gamma0` with no acceptance test —
    /// used for the differentiable forward pass during training.
    pub line_search: bool,
    pub max_backtracks: usize,
    pub gamma_reset: GammaReset,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            gamma0: 1.0,
            beta: 0.5,
            rho: 0.1,
            epsilon: 1e-2,
            max_iters: 100,
            line_search: true,
            max_backtracks: 60,
            gamma_reset: GammaReset::Expand,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma0 > 0.0) || !self.gamma0.is_finite() {
            return Err(Error::config(format!("gamma0 must be positive, got {}", self.gamma0)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::config(format!("beta must lie in (0,1), got {}", self.beta)));
        }
        if !(self.rho > 0.0 && self.rho < 0.5) {
            return Err(Error::config(format!("rho must lie in (0,1/2), got {}", self.rho)));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::config(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters must be at least 1"));
        }
        if self.line_search && self.max_backtracks == 0 {
            return Err(Error::config("max_backtracks must be at least 1"));
        }
        Ok(())
    }
}

/// Full objective `f(x) = g(x) + tau * h(x)`. For the inpainting model the
/// data term is the consistency indicator: `0` when every measured pixel of
/// `x` equals `y` exactly (the prox copies them verbatim, so iterates
/// satisfy this bit for bit), `+inf` otherwise.
pub fn objective(
    model: &MeasurementModel,
    penalty: &dyn Penalty,
    x: &Tensor,
    y: &Tensor,
) -> Result<f64> {
    let g = match model {
        MeasurementModel::InpaintMask { mask } => {
            let feasible = mask
                .data()
                .iter()
                .zip(x.data())
                .zip(y.data())
                .all(|((&m, &xv), &yv)| m == 0.0 || xv == yv);
            if feasible {
                0.0
            } else {
                f64::INFINITY
            }
        }
        _ => {
            let r = model.apply_forward(x)?.sub(y);
            0.5 * r.norm2_sq()
        }
    };
    let tau = penalty.tau();
    if tau == 0.0 {
        Ok(g)
    } else {
        Ok(g + tau * penalty.value(x)?)
    }
}

/// One proximal gradient step at step size `gamma`.
pub fn pgm_step(
    model: &MeasurementModel,
    penalty: &dyn Penalty,
    x: &Tensor,
    gamma: f64,
    y: &Tensor,
) -> Result<Tensor> {
    let step = gamma * penalty.tau();
    let z = if step == 0.0 { x.clone() } else { x.sub(&penalty.grad(x)?.scale(step)) };
    model.prox_data(&z, gamma, y)
}

/// Outcome of one backtracking search.
#[derive(Debug)]
pub enum StepOutcome {
    Accepted { x_new: Tensor, f_new: f64, gamma: f64, backtracks: usize },
    /// No trial satisfied the acceptance test within `max_backtracks`.
    Exhausted { gamma_last: f64, trials: usize },
}

/// Backtracking line search from `gamma_start`. `f_x` must be
/// `objective(model, penalty, x, y)`; it is passed in so each iteration
/// evaluates the objective once, not twice.
pub fn backtrack(
    model: &MeasurementModel,
    penalty: &dyn Penalty,
    x: &Tensor,
    y: &Tensor,
    f_x: f64,
    gamma_start: f64,
    config: &SolverConfig,
) -> Result<StepOutcome> {
    let mut gamma = gamma_start;
    for trial in 0..config.max_backtracks {
        let x_new = pgm_step(model, penalty, x, gamma, y)?;
        if x_new.is_finite() {
            let f_new = objective(model, penalty, &x_new, y)?;
            if f_new.is_finite() {
                let dx_sq = x_new.sub(x).norm2_sq();
                if f_x - f_new >= (config.rho / gamma) * dx_sq {
                    return Ok(StepOutcome::Accepted { x_new, f_new, gamma, backtracks: trial });
                }
            }
        }
        gamma *= config.beta;
    }
    Ok(StepOutcome::Exhausted { gamma_last: gamma / config.beta, trials: config.max_backtracks })
}

/// One row of the per-iteration trace.
#[derive(Debug, Clone)]
pub struct IterRecord {
    pub k: usize,
    /// Objective after the step.
    pub f: f64,
    /// `||dx|| / max(||x_prev||, ..)` with the denominator replaced by 1
    /// when the previous iterate is exactly zero.
    pub residual: f64,
    pub gamma: f64,
    pub dx_norm: f64,
    pub backtracks: usize,
}

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub x: Tensor,
    pub converged: bool,
    /// Steps actually taken.
    pub iterations: usize,
    pub final_residual: f64,
    /// `f(x_0), f(x_1), ...` — one entry more than `iterations`.
    pub f_history: Vec<f64>,
    /// Step size of the last accepted step.
    pub gamma_final: f64,
    pub trace: Vec<IterRecord>,
    /// The line search gave up before reaching `epsilon` or `max_iters`.
    pub step_failed: bool,
}

/// Iterate `pgm_step` from `x0` until the relative update falls below
/// `config.epsilon` or `config.max_iters` steps were taken.
pub fn run_forward(
    model: &MeasurementModel,
    penalty: &dyn Penalty,
    y: &Tensor,
    x0: &Tensor,
    config: &SolverConfig,
) -> Result<FixedPointResult> {
    config.validate()?;
    if x0.shape() != model.image_shape().as_slice() {
        return Err(Error::shape(format!(
            "initial iterate {:?} does not match model domain {:?}",
            x0.shape(),
            model.image_shape()
        )));
    }
    if !x0.is_finite() {
        return Err(Error::numeric("initial iterate has non-finite entries"));
    }
    let mut x = x0.clone();
    let mut f = objective(model, penalty, &x, y)?;
    let mut f_history = vec![f];
    let mut trace = Vec::new();
    let mut gamma_accepted = config.gamma0;
    let mut converged = false;
    let mut step_failed = false;
    let mut final_residual = f64::INFINITY;

    for k in 1..=config.max_iters {
        let (x_new, f_new, gamma_used, backtracks) = if config.line_search {
            let gamma_start = match config.gamma_reset {
                GammaReset::Expand => (gamma_accepted / config.beta).min(config.gamma0),
                GammaReset::Monotone => gamma_accepted,
            };
            match backtrack(model, penalty, &x, y, f, gamma_start, config)? {
                StepOutcome::Accepted { x_new, f_new, gamma, backtracks } => {
                    (x_new, f_new, gamma, backtracks)
                }
                StepOutcome::Exhausted { .. } => {
                    step_failed = true;
                    break;
                }
            }
        } else {
            let x_new = pgm_step(model, penalty, &x, config.gamma0, y)?;
            if !x_new.is_finite() {
                step_failed = true;
                break;
            }
            let f_new = objective(model, penalty, &x_new, y)?;
            (x_new, f_new, config.gamma0, 0)
        };

        let dx_norm = x_new.sub(&x).norm2();
        let denom = x.norm2();
        let residual = dx_norm / if denom == 0.0 { 1.0 } else { denom };
        trace.push(IterRecord { k, f: f_new, residual, gamma: gamma_used, dx_norm, backtracks });
        f_history.push(f_new);
        gamma_accepted = gamma_used;
        final_residual = residual;
        x = x_new;
        f = f_new;
        if residual < config.epsilon {
            converged = true;
            break;
        }
    }

    Ok(FixedPointResult {
        x,
        converged,
        iterations: trace.len(),
        final_residual,
        f_history,
        gamma_final: gamma_accepted,
        trace,
        step_failed,
    })
}

/// Task-appropriate initial iterate from the measurements alone:
/// cubic upsampling for blur-downsample models, `A^T y` (zero filling)
/// everywhere else.
pub fn initial_estimate(model: &MeasurementModel, y: &Tensor) -> Result<Tensor> {
    match model {
        MeasurementModel::BlurDownsample { factor, image_hw, .. } => {
            if y.shape() != model.measurement_shape().as_slice() {
                return Err(Error::shape(format!(
                    "initial_estimate: measurement {:?} does not match {:?}",
                    y.shape(),
                    model.measurement_shape()
                )));
            }
            if *factor == 1 {
                return Ok(y.clone());
            }
            Ok(bicubic_upsample(y, *factor, *image_hw))
        }
        _ => model.apply_adjoint(y),
    }
}

/// Catmull-Rom interpolation weight at offset `t`.
fn cubic_weight(t: f64) -> f64 {
    let a = t.abs();
    if a <= 1.0 {
        (1.5 * a - 2.5) * a * a + 1.0
    } else if a < 2.0 {
        ((-0.5 * a + 2.5) * a - 4.0) * a + 2.0
    } else {
        0.0
    }
}

/// Cubic upsampling by `factor` with circular boundary handling. The grids
/// are corner-aligned — low-res pixel `(i,j)` sits at high-res `(i*d, j*d)`,
/// matching the downsampling in the blur model — so sample positions are
/// reproduced exactly and no phase shift is introduced.
fn bicubic_upsample(y: &Tensor, factor: usize, image_hw: (usize, usize)) -> Tensor {
    let (h, w) = image_hw;
    let (mh, mw) = (y.shape()[0], y.shape()[1]);
    let d = factor as f64;
    let mut out = vec![0.0; h * w];
    for oy in 0..h {
        let sy = oy as f64 / d;
        let iy = sy.floor() as i64;
        let fy = sy - iy as f64;
        let wy: Vec<f64> = (-1..=2).map(|t| cubic_weight(t as f64 - fy)).collect();
        for ox in 0..w {
            let sx = ox as f64 / d;
            let ix = sx.floor() as i64;
            let fx = sx - ix as f64;
            let mut acc = 0.0;
            for (ti, wyv) in wy.iter().enumerate() {
                let ry = (iy + ti as i64 - 1).rem_euclid(mh as i64) as usize;
                for tj in -1i64..=2 {
                    let wxv = cubic_weight(tj as f64 - fx);
                    let rx = (ix + tj).rem_euclid(mw as i64) as usize;
                    acc += wyv * wxv * y.data()[ry * mw + rx];
                }
            }
            out[oy * w + ox] = acc;
        }
    }
    Tensor::from_vec(&[h, w], out).expect("shape constructed to match")
}
