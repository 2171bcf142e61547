//! `pretrain`: fit the network as a gradient-step denoiser on procedural
//! tiles, writing checkpoints and an epoch records CSV.

use crate::commands::{epoch_line, load_or_build_net, write_records};
use crate::config::Settings;
use elder::regularizer::Regularizer;
use elder::trainer::{pretrain_denoiser, PretrainConfig};
use elder::Result;

pub fn run(s: &Settings, quiet: bool) -> Result<()> {
    let net = load_or_build_net(s)?;
    let mut reg = Regularizer::new(s.reg_kind, s.tau, net)?;
    let cfg = PretrainConfig {
        epochs: s.train.epochs,
        samples_per_epoch: s.train.samples_per_epoch,
        batch_size: s.train.batch_size,
        lr: s.train.lr,
        sigma_max: s.train.sigma_max,
        hw: (s.image_size, s.image_size),
        val_count: s.train.val_count,
        seed: s.seed,
    };
    let records = pretrain_denoiser(&mut reg, &cfg, Some(&s.out), |r| {
        if !quiet {
            epoch_line("pretrain", r);
        }
    })?;
    write_records(&s.out.join("records.csv"), &records)?;
    if !quiet {
        let best = records.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        println!(
            "pretrain: {} epochs, best val_mse {:.6}; weights in {}",
            records.len(),
            best,
            s.out.display()
        );
    }
    Ok(())
}
