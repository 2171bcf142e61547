//! Subcommand implementations. Shared plumbing (task-to-model wiring,
//! network loading, records CSV) lives here; each subcommand is its own
//! module.

pub mod bench;
pub mod gen_data;
pub mod gradcheck;
pub mod pretrain;
pub mod solve;
pub mod train;

use crate::config::{InitMode, Settings, Task};
use crate::report;
use elder::network::{build_network, NetworkWeights};
use elder::trainer::{TaskKind, TrainRecord};
use elder::{Error, Result, Tensor};
use std::path::Path;

/// Network for the penalty: the configured weights file if given, otherwise
/// a fresh seeded initialization.
pub fn load_or_build_net(s: &Settings) -> Result<NetworkWeights> {
    match &s.weights {
        Some(path) => NetworkWeights::load(path),
        None => build_network(&s.arch, s.seed),
    }
}

/// Like [`load_or_build_net`], but starting from random weights must be an
/// explicit choice (`[train] init = random`) so a forgotten weights path
/// does not silently train from scratch.
pub fn net_for_training(s: &Settings) -> Result<NetworkWeights> {
    match (&s.weights, s.train.init) {
        (Some(path), _) => NetworkWeights::load(path),
        (None, InitMode::Random) => build_network(&s.arch, s.seed),
        (None, InitMode::Weights) => Err(Error::config(
            "no [regularizer] weights file given; set one, or set [train] init = random \
             to start from fresh weights",
        )),
    }
}

/// The fixed blur kernel: an explicit kernel file wins over the configured
/// Gaussian.
pub fn resolve_kernel(s: &Settings) -> Result<Tensor> {
    match &s.model.kernel_path {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            elder::forward_model::parse_kernel_text(&text)
        }
        None => elder::forward_model::gaussian_kernel(s.model.kernel_size, s.model.kernel_sigma),
    }
}

/// Map the configured task onto a training problem family. Denoising is
/// blur-downsample with a 1x1 identity kernel and factor 1.
pub fn task_kind(s: &Settings) -> Result<TaskKind> {
    Ok(match s.task {
        Task::Sisr => TaskKind::BlurDownsample {
            kernel: resolve_kernel(s)?,
            factor: s.model.factor,
            sigma_max: s.model.noise_sigma,
        },
        Task::Denoise => TaskKind::BlurDownsample {
            kernel: Tensor::ones(&[1, 1]),
            factor: 1,
            sigma_max: s.model.noise_sigma,
        },
        Task::Csmri => TaskKind::FourierSampling {
            ratio_lo: s.model.ratio_lo.unwrap_or(s.model.ratio),
            ratio_hi: s.model.ratio_hi.unwrap_or(s.model.ratio),
            sigma_max: s.model.noise_sigma,
        },
        Task::Inpaint => TaskKind::Inpainting {
            keep_prob: s.model.keep_prob,
            sigma_max: s.model.noise_sigma,
        },
    })
}

/// Epoch records CSV. Wall-clock time goes to stdout only, never into
/// files, so reruns are byte-identical.
pub fn write_records(path: &Path, records: &[TrainRecord]) -> Result<()> {
    let mut w = report::csv_writer(path)?;
    report::write_row(&mut w, &["epoch", "train_loss", "val_mse", "val_psnr", "grad_norm", "skipped"])?;
    for r in records {
        report::write_row(
            &mut w,
            &[
                r.epoch.to_string(),
                report::fmt_f(r.train_loss),
                report::fmt_f(r.val_mse),
                report::fmt_f(r.val_psnr),
                report::fmt_f(r.grad_norm),
                r.skipped.to_string(),
            ],
        )?;
    }
    report::finish(w)
}

pub fn epoch_line(stage: &str, r: &TrainRecord) {
    println!(
        "{stage} epoch {:3}  loss {:.6}  val_mse {:.6}  val_psnr {:6.2} dB  grad {:.3e}  ({:.1}s)",
        r.epoch, r.train_loss, r.val_mse, r.val_psnr, r.grad_norm, r.wall_secs
    );
}
