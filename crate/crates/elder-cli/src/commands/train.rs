//! `train`: optimize the penalty network through the reconstruction fixed
//! point on a stream of generated problems.

use crate::commands::{epoch_line, net_for_training, task_kind, write_records};
use crate::config::Settings;
use elder::regularizer::Regularizer;
use elder::trainer::{train_deq, ProblemSet, TrainConfig};
use elder::{Error, Result};

pub fn run(s: &Settings, quiet: bool) -> Result<()> {
    if s.tau <= 0.0 {
        return Err(Error::config(
            "training requires [regularizer] tau > 0; with tau = 0 the network never \
             influences the solution",
        ));
    }
    let net = net_for_training(s)?;
    let mut reg = Regularizer::new(s.reg_kind, s.tau, net)?;
    let task = task_kind(s)?;
    let hw = (s.image_size, s.image_size);
    let train_set = ProblemSet { task: task.clone(), hw, base_seed: s.seed };
    // Validation problems come from a disjoint seed space.
    let val_set = ProblemSet { task, hw, base_seed: s.seed ^ 0x7661_6c5f };
    let cfg = TrainConfig {
        epochs: s.train.epochs,
        samples_per_epoch: s.train.samples_per_epoch,
        batch_size: s.train.batch_size,
        lr: s.train.lr,
        grad_mode: s.train.grad_mode,
        gamma: s.train.gamma,
        forward_iters: s.train.forward_iters,
        epsilon: s.solver.epsilon,
        neumann_tol: s.train.neumann_tol,
        neumann_max: s.train.neumann_max,
        val_count: s.train.val_count,
    };
    let records = train_deq(&mut reg, &train_set, &val_set, &cfg, Some(&s.out), |r| {
        if !quiet {
            epoch_line("train", r);
        }
    })?;
    write_records(&s.out.join("records.csv"), &records)?;
    if !quiet {
        let best = records.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        println!(
            "train: {} epochs, best val_mse {:.6}; checkpoints in {}",
            records.len(),
            best,
            s.out.display()
        );
    }
    Ok(())
}
