//! `solve`: reconstruct each input image, writing the estimate, the initial
//! iterate, a per-iteration trace, and a metrics summary.
//!
//! Inputs come either from `[data] dir` (every `.pgm` file, sorted by name)
//! or, absent that, from the same procedural tiles `gen-data` would produce
//! for this seed. Measurements are simulated from the ground truth with the
//! configured degradation and noise, so metrics against the ground truth
//! are always available.

use crate::commands::{load_or_build_net, resolve_kernel};
use crate::config::{MaskStyle, Settings, Task};
use crate::report;
use elder::data::{procedural_tile, sample_rng};
use elder::forward_model::{
    pseudo_radial_mask, random_inpaint_mask, random_symmetric_mask, MeasurementModel,
};
use elder::io::{read_pgm, write_pgm16};
use elder::regularizer::Regularizer;
use elder::solver::{initial_estimate, run_forward, NoPenalty, Penalty};
use elder::trainer::{mean_squared_error, psnr};
use elder::{Error, Result, Tensor};
use rand::Rng;
use std::path::PathBuf;

fn build_model(s: &Settings, h: usize, w: usize, mask_seed: u64) -> Result<MeasurementModel> {
    match s.task {
        Task::Sisr => MeasurementModel::blur_downsample(resolve_kernel(s)?, s.model.factor, (h, w)),
        Task::Denoise => MeasurementModel::blur_downsample(Tensor::ones(&[1, 1]), 1, (h, w)),
        Task::Csmri => {
            let mask = match s.model.mask {
                MaskStyle::Radial => pseudo_radial_mask(h, w, s.model.ratio)?,
                MaskStyle::Random => random_symmetric_mask(h, w, s.model.ratio, mask_seed)?,
            };
            MeasurementModel::fourier_mask(mask)
        }
        Task::Inpaint => {
            let mask = random_inpaint_mask(h, w, s.model.keep_prob, mask_seed)?;
            MeasurementModel::inpaint(mask)
        }
    }
}

fn list_pgm_files(dir: &std::path::Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .collect::<std::io::Result<Vec<_>>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().map_or(false, |e| e == "pgm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::config(format!("no .pgm files found in {}", dir.display())));
    }
    Ok(paths)
}

pub fn run(s: &Settings, quiet: bool) -> Result<()> {
    let reg: Option<Regularizer> = if s.tau > 0.0 {
        Some(Regularizer::new(s.reg_kind, s.tau, load_or_build_net(s)?)?)
    } else {
        None
    };

    let file_inputs: Option<Vec<(String, Tensor)>> = match &s.data_dir {
        Some(dir) => Some(
            list_pgm_files(dir)?
                .iter()
                .map(|p| {
                    let stem = p.file_stem().map(|n| n.to_string_lossy().into_owned());
                    Ok((stem.unwrap_or_else(|| "image".into()), read_pgm(p)?))
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let count = file_inputs.as_ref().map_or(s.data_count, Vec::len);

    let mut metrics = report::csv_writer(&s.out.join("metrics.csv"))?;
    report::write_row(
        &mut metrics,
        &[
            "index", "file", "converged", "iterations", "final_residual", "gamma_final",
            "f_final", "mse", "psnr", "mse_x0", "psnr_x0",
        ],
    )?;

    for i in 0..count {
        let mut rng = sample_rng(s.seed, i as u64);
        let (name, gt, generated) = match &file_inputs {
            Some(v) => (v[i].0.clone(), v[i].1.clone(), false),
            None => {
                let n = s.image_size;
                (format!("tile_{i:04}"), procedural_tile(n, n, &mut rng), true)
            }
        };
        let (h, w) = (gt.shape()[0], gt.shape()[1]);
        let mask_seed: u64 = rng.gen();
        let noise_seed: u64 = rng.gen();

        let model = build_model(s, h, w, mask_seed)?;
        if let Some(r) = &reg {
            r.net.check_input(&[h, w])?;
        }
        let y = model.simulate(&gt, s.model.noise_sigma, noise_seed)?;
        let x0 = initial_estimate(&model, &y)?;
        let penalty: &dyn Penalty = match &reg {
            Some(r) => r,
            None => &NoPenalty,
        };
        let fp = run_forward(&model, penalty, &y, &x0, &s.solver)?;
        if fp.step_failed {
            return Err(Error::numeric(format!(
                "line search could not find an acceptable step on {name}"
            )));
        }

        write_pgm16(&s.out.join(format!("recon_{i:04}.pgm")), &fp.x)?;
        write_pgm16(&s.out.join(format!("x0_{i:04}.pgm")), &x0)?;
        if generated {
            write_pgm16(&s.out.join(format!("gt_{i:04}.pgm")), &gt)?;
        }

        let mut tw = report::csv_writer(&s.out.join(format!("trace_{i:04}.csv")))?;
        report::write_row(&mut tw, &["k", "f", "residual", "gamma", "dx_norm", "backtracks"])?;
        for r in &fp.trace {
            report::write_row(
                &mut tw,
                &[
                    r.k.to_string(),
                    report::fmt_f(r.f),
                    report::fmt_f(r.residual),
                    report::fmt_f(r.gamma),
                    report::fmt_f(r.dx_norm),
                    r.backtracks.to_string(),
                ],
            )?;
        }
        report::finish(tw)?;

        let mse = mean_squared_error(&fp.x, &gt);
        let mse_x0 = mean_squared_error(&x0, &gt);
        let p = psnr(&fp.x, &gt, 1.0);
        let p0 = psnr(&x0, &gt, 1.0);
        report::write_row(
            &mut metrics,
            &[
                i.to_string(),
                name.clone(),
                fp.converged.to_string(),
                fp.iterations.to_string(),
                report::fmt_f(fp.final_residual),
                report::fmt_f(fp.gamma_final),
                report::fmt_f(*fp.f_history.last().expect("objective history is never empty")),
                report::fmt_f(mse),
                report::fmt_f(p),
                report::fmt_f(mse_x0),
                report::fmt_f(p0),
            ],
        )?;
        if !quiet {
            println!(
                "solve {name}: psnr {p:.2} dB (start {p0:.2}), {} iters, converged {}",
                fp.iterations, fp.converged
            );
        }
    }
    report::finish(metrics)?;
    if !quiet {
        println!("solve: {count} images; outputs in {}", s.out.display());
    }
    Ok(())
}
