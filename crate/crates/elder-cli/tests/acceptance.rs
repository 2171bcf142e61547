//! Acceptance suite: one test per release gate, each printing a PASS line
//! with the measured numbers when it holds. The gates exercise the public
//! library API end to end — derivative consistency, prox correctness
//! against an iterative oracle, the descent guarantee of the line search,
//! equilibrium-gradient quality, training efficacy, and bit-for-bit
//! reproducibility of the command-line harness.
//!
//! Everything here is deterministic; seeds are fixed in the test bodies.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use elder::data::{procedural_tile, sample_rng};
use elder::forward_model::{
    gaussian_kernel, pseudo_radial_mask, random_inpaint_mask, random_symmetric_mask,
    MeasurementModel,
};
use elder::gradcheck::{run_suite, GradCheckConfig};
use elder::network::{build_network, ArchConfig, NetworkWeights};
use elder::regularizer::{RegKind, Regularizer};
use elder::solver::{
    backtrack, initial_estimate, objective, pgm_step, run_forward, GammaReset, NoPenalty,
    QuadraticPenalty, SolverConfig, StepOutcome,
};
use elder::trainer::{
    mean_squared_error, pretrain_denoiser, train_deq, GradMode, PretrainConfig, ProblemSet,
    TaskKind, TrainConfig,
};
use elder::Tensor;
use rand::Rng;
use tempfile::TempDir;

fn desk_arch() -> ArchConfig {
    ArchConfig { num_scales: 2, blocks_per_scale: 1, base_channels: 8, kernel_size: 3 }
}

// ---- criterion 1: analytic gradients vs central finite differences ----------

#[test]
fn criterion_1_gradient_consistency() {
    let started = Instant::now();
    let config = GradCheckConfig { equilibrium_instances: 0, ..Default::default() };
    assert_eq!(config.instances, 20);
    assert_eq!(config.tolerance, 1e-4);
    let rows = run_suite(&config).unwrap();
    let rows: Vec<_> = rows.iter().filter(|r| !r.name.starts_with("equilibrium")).collect();
    assert!(rows.len() >= 9, "expected per-kind and network rows, got {}", rows.len());
    let mut worst = 0.0f64;
    for row in &rows {
        assert!(
            row.pass,
            "criterion 1: {} observed {:.3e} > tol {:.1e}",
            row.name, row.observed, row.tolerance
        );
        worst = worst.max(row.observed);
    }
    println!(
        "PASS criterion 1: {} derivative rows, 20 instances each, worst rel err {:.3e} <= 1e-4 \
         ({:.0}s)",
        rows.len(),
        worst,
        started.elapsed().as_secs_f64()
    );
}

// ---- criterion 2: closed-form prox vs conjugate-gradient oracle -------------

#[test]
fn criterion_2_prox_oracle_equivalence() {
    let started = Instant::now();
    let (h, w) = (16, 16);
    let mut rng = sample_rng(7, 0);
    let models: Vec<(&str, MeasurementModel)> = vec![
        (
            "blur+downsample",
            MeasurementModel::blur_downsample(gaussian_kernel(5, 1.6).unwrap(), 2, (h, w)).unwrap(),
        ),
        (
            "fourier radial",
            MeasurementModel::fourier_mask(pseudo_radial_mask(h, w, 0.3).unwrap()).unwrap(),
        ),
        (
            "fourier random",
            MeasurementModel::fourier_mask(random_symmetric_mask(h, w, 0.25, 31).unwrap())
                .unwrap(),
        ),
        ("inpainting", MeasurementModel::inpaint(random_inpaint_mask(h, w, 0.5, 32).unwrap())
            .unwrap()),
        (
            "generic dense",
            MeasurementModel::generic(Tensor::randn(&[64, h * w], &mut rng), &[h, w]).unwrap(),
        ),
    ];

    let mut worst_cg = 0.0f64;
    let mut worst_opt = 0.0f64;
    for (name, model) in &models {
        let x_gt = procedural_tile(h, w, &mut rng);
        let y = model.simulate(&x_gt, 0.03, rng.gen()).unwrap();
        let z = procedural_tile(h, w, &mut rng)
            .add(&Tensor::randn(&[h, w], &mut rng).scale(0.2));
        for gamma in [0.35, 1.0, 2.7] {
            let xh = model.prox_data(&z, gamma, &y).unwrap();
            if matches!(model, MeasurementModel::InpaintMask { .. }) {
                // Indicator data term: measured pixels must equal the
                // measurements bit for bit, unmeasured ones must be
                // untouched, independent of gamma.
                let mask = random_inpaint_mask(h, w, 0.5, 32).unwrap();
                for ((&m, (&xv, &zv)), &yv) in mask
                    .data()
                    .iter()
                    .zip(xh.data().iter().zip(z.data()))
                    .zip(y.data())
                {
                    if m != 0.0 {
                        assert!(xv == yv, "criterion 2: inpainting prox broke P x = y");
                    } else {
                        assert!(xv == zv, "criterion 2: inpainting prox touched a free pixel");
                    }
                }
                continue;
            }
            let oracle = model.prox_cg_oracle(&z, gamma, &y, 1e-13, 8000).unwrap();
            let rel = xh.sub(&oracle).norm2() / oracle.norm2().max(1e-12);
            assert!(
                rel <= 1e-6,
                "criterion 2: {name} gamma {gamma}: prox vs CG oracle rel {rel:.3e} > 1e-6"
            );
            worst_cg = worst_cg.max(rel);

            // First-order optimality of the prox objective
            // 0.5||x-z||^2 + (gamma/2)||Ax-y||^2 at the returned point.
            let grad = xh.sub(&z).add(
                &model
                    .apply_adjoint(&model.apply_forward(&xh).unwrap().sub(&y))
                    .unwrap()
                    .scale(gamma),
            );
            let opt = grad.norm2() / z.norm2().max(1e-12);
            assert!(
                opt <= 1e-6,
                "criterion 2: {name} gamma {gamma}: optimality residual {opt:.3e} > 1e-6 ||z||"
            );
            worst_opt = worst_opt.max(opt);
        }
    }
    println!(
        "PASS criterion 2: {} model variants x 3 step sizes, prox vs CG <= {:.3e}, optimality \
         <= {:.3e}, inpainting exact ({:.0}s)",
        models.len(),
        worst_cg,
        worst_opt,
        started.elapsed().as_secs_f64()
    );
}

// ---- criteria 3 and 4: descent guarantee and stopping rule ------------------

struct RunCase {
    label: String,
    model: MeasurementModel,
    reg: Regularizer,
    y: Tensor,
    x0: Tensor,
}

/// 3 tasks x 3 regularizer kinds x {pretrained, fresh} x 3 instances at
/// 16 x 16 — the randomized family shared by the descent and stopping gates.
fn descent_family() -> Vec<RunCase> {
    let (h, w) = (16, 16);
    let arch = desk_arch();
    let pre_cfg = PretrainConfig {
        epochs: 4,
        samples_per_epoch: 32,
        batch_size: 8,
        lr: 2e-3,
        sigma_max: 55.0 / 255.0,
        hw: (h, w),
        val_count: 4,
        seed: 11,
    };
    let mut cases = Vec::new();
    for (ki, kind) in RegKind::ALL.iter().enumerate() {
        let mut trained = Regularizer::new(
            *kind,
            0.3,
            build_network(&arch, 11 + ki as u64).unwrap(),
        )
        .unwrap();
        pretrain_denoiser(&mut trained, &pre_cfg, None, |_| {}).unwrap();
        for (weights, net) in [
            ("pretrained", trained.net.clone()),
            ("fresh", build_network(&arch, 77 + ki as u64).unwrap()),
        ] {
            for task in ["sisr", "csmri", "inpaint"] {
                for inst in 0..3u64 {
                    let mut rng = sample_rng(400 + ki as u64, inst * 31 + task.len() as u64);
                    let x_gt = procedural_tile(h, w, &mut rng);
                    let (model, sigma) = match task {
                        "sisr" => (
                            MeasurementModel::blur_downsample(
                                gaussian_kernel(5, 1.6).unwrap(),
                                2,
                                (h, w),
                            )
                            .unwrap(),
                            0.02,
                        ),
                        "csmri" => (
                            MeasurementModel::fourier_mask(
                                random_symmetric_mask(h, w, 0.3, rng.gen()).unwrap(),
                            )
                            .unwrap(),
                            0.02,
                        ),
                        _ => (
                            MeasurementModel::inpaint(
                                random_inpaint_mask(h, w, 0.5, rng.gen()).unwrap(),
                            )
                            .unwrap(),
                            0.0,
                        ),
                    };
                    let y = model.simulate(&x_gt, sigma, rng.gen()).unwrap();
                    let x0 = initial_estimate(&model, &y).unwrap();
                    cases.push(RunCase {
                        label: format!("{task}/{}/{weights}/{inst}", kind.name()),
                        model,
                        reg: Regularizer::new(*kind, 0.3, net.clone()).unwrap(),
                        y,
                        x0,
                    });
                }
            }
        }
    }
    cases
}

#[test]
fn criterion_3_descent_property() {
    let started = Instant::now();
    let cases = descent_family();
    assert!(cases.len() >= 50, "family has only {} runs", cases.len());
    let cfg = SolverConfig::default();
    assert!(cfg.line_search);
    let mut accepted_total = 0usize;
    let mut violations = 0usize;
    for case in &cases {
        // Replay the solver's own loop step by step so the sufficient
        // decrease inequality can be re-evaluated on exactly the floats the
        // line search accepted.
        let mut x = case.x0.clone();
        let mut f = objective(&case.model, &case.reg, &x, &case.y).unwrap();
        let mut gamma_accepted = cfg.gamma0;
        for _ in 0..cfg.max_iters {
            let gamma_start = match cfg.gamma_reset {
                GammaReset::Expand => (gamma_accepted / cfg.beta).min(cfg.gamma0),
                GammaReset::Monotone => gamma_accepted,
            };
            match backtrack(&case.model, &case.reg, &x, &case.y, f, gamma_start, &cfg).unwrap()
            {
                StepOutcome::Accepted { x_new, f_new, gamma, .. } => {
                    let dx_sq = x_new.sub(&x).norm2_sq();
                    if !(f - f_new >= (cfg.rho / gamma) * dx_sq) || !(f_new <= f) {
                        violations += 1;
                        eprintln!(
                            "criterion 3: {} violates sufficient decrease: f {f:.12e} -> \
                             {f_new:.12e}, gamma {gamma:.3e}, dx_sq {dx_sq:.3e}",
                            case.label
                        );
                    }
                    accepted_total += 1;
                    let dx = dx_sq.sqrt();
                    let denom = x.norm2();
                    let residual = dx / if denom == 0.0 { 1.0 } else { denom };
                    x = x_new;
                    f = f_new;
                    gamma_accepted = gamma;
                    if residual < cfg.epsilon {
                        break;
                    }
                }
                StepOutcome::Exhausted { .. } => break,
            }
        }

        // The packaged loop must agree: its recorded objective history is
        // nonincreasing, entry by entry.
        let fp = run_forward(&case.model, &case.reg, &case.y, &case.x0, &cfg).unwrap();
        for pair in fp.f_history.windows(2) {
            if !(pair[1] <= pair[0]) {
                violations += 1;
                eprintln!(
                    "criterion 3: {} f_history increases: {:.12e} -> {:.12e}",
                    case.label, pair[0], pair[1]
                );
            }
        }
    }
    assert!(accepted_total > 0, "criterion 3: no accepted steps at all");
    assert_eq!(
        violations, 0,
        "criterion 3: {violations} violations over {} runs",
        cases.len()
    );
    println!(
        "PASS criterion 3: {} runs, {accepted_total} accepted steps, 0 violations ({:.0}s)",
        cases.len(),
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_4_fixed_point_stopping() {
    let started = Instant::now();
    let cases = descent_family();
    let cfg = SolverConfig::default();
    let epsilon = cfg.epsilon;
    assert_eq!(epsilon, 1e-2);
    let mut converged = 0usize;
    let mut worst_residual = 0.0f64;
    let mut worst_drift = 0.0f64;
    for case in &cases {
        let fp = run_forward(&case.model, &case.reg, &case.y, &case.x0, &cfg).unwrap();
        if !fp.converged {
            continue;
        }
        converged += 1;
        assert!(
            fp.final_residual < epsilon,
            "criterion 4: {} reported converged with residual {:.3e}",
            case.label,
            fp.final_residual
        );
        worst_residual = worst_residual.max(fp.final_residual);
        // One more application of the accepted-step update map: a genuine
        // fixed point barely moves.
        let tx = pgm_step(&case.model, &case.reg, &fp.x, fp.gamma_final, &case.y).unwrap();
        let drift = tx.sub(&fp.x).norm2() / fp.x.norm2().max(1e-12);
        assert!(
            drift < 10.0 * epsilon,
            "criterion 4: {} fixed-point drift {:.3e} >= {:.1e}",
            case.label,
            drift,
            10.0 * epsilon
        );
        worst_drift = worst_drift.max(drift);
    }
    assert!(converged >= 10, "criterion 4: only {converged} runs converged");
    println!(
        "PASS criterion 4: {converged} converged runs, residual <= {worst_residual:.3e} < 1e-2, \
         drift <= {worst_drift:.3e} < 1e-1 ({:.0}s)",
        started.elapsed().as_secs_f64()
    );
}

// ---- criterion 5: equilibrium gradients on contractive instances ------------

#[test]
fn criterion_5_equilibrium_gradients() {
    let started = Instant::now();
    let config = GradCheckConfig {
        instances: 1,
        directions: 3,
        equilibrium_instances: 10,
        ..Default::default()
    };
    assert_eq!(config.jfb_tolerance, 1e-3);
    assert_eq!(config.implicit_tolerance, 1e-2);
    let rows = run_suite(&config).unwrap();
    let eq: Vec<_> = rows.iter().filter(|r| r.name.starts_with("equilibrium")).collect();
    assert_eq!(eq.len(), 3);
    for row in &eq {
        assert!(
            row.pass,
            "criterion 5: {} observed {:.3e} (tol {:.1e})",
            row.name, row.observed, row.tolerance
        );
    }
    let jfb = eq.iter().find(|r| r.name.contains("jacobian-free vs frozen")).unwrap();
    let imp = eq.iter().find(|r| r.name.contains("implicit vs end-to-end")).unwrap();
    let align = eq.iter().find(|r| r.name.contains("alignment")).unwrap();
    println!(
        "PASS criterion 5: 10 instances — jfb fd err {:.3e} <= 1e-3, implicit fd err {:.3e} \
         <= 1e-2, min cosine {:.3} > 0 ({:.0}s)",
        jfb.observed,
        imp.observed,
        1.0 - align.observed,
        started.elapsed().as_secs_f64()
    );
}

// ---- criterion 6: equilibrium training beats its initialization -------------

#[test]
fn criterion_6_training_efficacy() {
    let started = Instant::now();
    let (h, w) = (16, 16);
    let mut reg = Regularizer::new(
        RegKind::Lsr,
        0.3,
        build_network(&desk_arch(), 11).unwrap(),
    )
    .unwrap();
    let pre_cfg = PretrainConfig {
        epochs: 40,
        samples_per_epoch: 64,
        batch_size: 8,
        lr: 2e-3,
        sigma_max: 55.0 / 255.0,
        hw: (h, w),
        val_count: 8,
        seed: 11,
    };
    pretrain_denoiser(&mut reg, &pre_cfg, None, |_| {}).unwrap();

    let task = TaskKind::Inpainting { keep_prob: 0.5, sigma_max: 0.0 };
    let train_set = ProblemSet { task: task.clone(), hw: (h, w), base_seed: 51 };
    let val_set = ProblemSet { task, hw: (h, w), base_seed: 51 ^ 0x7661_6c5f };
    let cfg = TrainConfig {
        epochs: 8,
        samples_per_epoch: 32,
        batch_size: 4,
        lr: 5e-4,
        grad_mode: GradMode::Jfb,
        gamma: 1.0,
        forward_iters: 100,
        epsilon: 1e-2,
        neumann_tol: 1e-8,
        neumann_max: 200,
        val_count: 16,
    };

    // Baselines on the exact validation problems the trainer scores.
    let val_solver = SolverConfig { epsilon: cfg.epsilon, ..Default::default() };
    let problems: Vec<_> =
        (0..cfg.val_count).map(|i| val_set.instance(i as u64).unwrap()).collect();
    let mut mse_pretrained = 0.0;
    let mut mse_data_only = 0.0;
    for p in &problems {
        let fp = run_forward(&p.model, &reg, &p.y, &p.x0, &val_solver).unwrap();
        mse_pretrained += mean_squared_error(&fp.x, &p.x_gt);
        let fz = run_forward(&p.model, &NoPenalty, &p.y, &p.x0, &val_solver).unwrap();
        mse_data_only += mean_squared_error(&fz.x, &p.x_gt);
    }
    mse_pretrained /= problems.len() as f64;
    mse_data_only /= problems.len() as f64;

    let records = train_deq(&mut reg, &train_set, &val_set, &cfg, None, |_| {}).unwrap();
    let best = records.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);

    assert!(
        best < 0.95 * mse_pretrained,
        "criterion 6: trained val MSE {best:.6} not >5% below pretrained-only \
         {mse_pretrained:.6}"
    );
    assert!(
        best < mse_data_only,
        "criterion 6: trained val MSE {best:.6} not below data-only {mse_data_only:.6}"
    );
    println!(
        "PASS criterion 6: val MSE {best:.6} vs pretrained-only {mse_pretrained:.6} \
         ({:+.1}%) and data-only {mse_data_only:.6} ({:.0}s)",
        100.0 * (best - mse_pretrained) / mse_pretrained,
        started.elapsed().as_secs_f64()
    );
}

// ---- criterion 7: backtracking vs fixed steps on the quadratic toy ----------

#[test]
fn criterion_7_step_strategy_benchmark() {
    let started = Instant::now();
    let (n, m, tau) = (64, 96, 1.0);
    let mut rng = sample_rng(9, 0);
    let a = Tensor::randn(&[m, n], &mut rng);
    let model = MeasurementModel::generic(a, &[n]).unwrap();
    let x_star = Tensor::randn(&[n], &mut rng);
    let y = model.apply_forward(&x_star).unwrap();
    let penalty = QuadraticPenalty { tau, center: Tensor::randn(&[n], &mut rng) };
    let x0 = Tensor::zeros(&[n]);
    let gamma_ref = 1.0 / tau;

    let run = |gamma0: f64, line_search: bool| {
        let cfg = SolverConfig {
            gamma0,
            line_search,
            epsilon: 1e-6,
            max_iters: 2000,
            ..Default::default()
        };
        run_forward(&model, &penalty, &y, &x0, &cfg).unwrap()
    };
    let bt: Vec<_> = [0.1, 1.0, 10.0].iter().map(|&g| run(g, true)).collect();
    let fixed_small = run(0.1 * gamma_ref, false);

    // Common objective threshold every strategy actually reaches: the
    // loosest of the final objectives.
    let final_f = |fp: &elder::solver::FixedPointResult| *fp.f_history.last().unwrap();
    let threshold = bt
        .iter()
        .map(&final_f)
        .chain([final_f(&fixed_small)])
        .fold(f64::NEG_INFINITY, f64::max);
    let iters_to = |fp: &elder::solver::FixedPointResult| {
        fp.f_history.iter().position(|&f| f <= threshold).unwrap()
    };
    let bt_iters = iters_to(&bt[1]);
    let small_iters = iters_to(&fixed_small);
    assert!(
        small_iters > bt_iters,
        "criterion 7: fixed 0.1x step took {small_iters} iterations, backtracking {bt_iters}"
    );
    for (i, fa) in bt.iter().enumerate() {
        for fb in &bt[i + 1..] {
            let (va, vb) = (final_f(fa), final_f(fb));
            assert!(
                (va - vb).abs() <= 0.01 * va.abs().max(vb.abs()),
                "criterion 7: backtracking finals differ by >1%: {va:.6e} vs {vb:.6e}"
            );
        }
    }
    println!(
        "PASS criterion 7: backtracking {bt_iters} iters vs fixed-small {small_iters} to \
         f <= {threshold:.6e}; gamma0 {{0.1,1,10}} finals within 1% ({:.0}s)",
        started.elapsed().as_secs_f64()
    );
}

// ---- criterion 8: pre-trained denoisers behave like Gaussian denoisers ------

#[test]
fn criterion_8_denoiser_pretraining_sanity() {
    let started = Instant::now();
    let (h, w) = (16, 16);
    let arch = ArchConfig { num_scales: 2, blocks_per_scale: 1, base_channels: 8, kernel_size: 3 };
    let pre_cfg = PretrainConfig {
        epochs: 120,
        samples_per_epoch: 64,
        batch_size: 8,
        lr: 2e-3,
        sigma_max: 55.0 / 255.0,
        hw: (h, w),
        val_count: 16,
        seed: 11,
    };
    let sigmas = [15.0 / 255.0, 25.0 / 255.0, 50.0 / 255.0];
    let tiles = 32u64;

    // Identical training recipe for every kind; evaluation on tiles the
    // training and validation streams never see.
    let mut mse = Vec::new();
    let mut identity = [0.0f64; 3];
    for kind in RegKind::ALL {
        let checkpoints = TempDir::new().unwrap();
        let mut reg =
            Regularizer::new(kind, 1.0, build_network(&arch, 11).unwrap()).unwrap();
        pretrain_denoiser(&mut reg, &pre_cfg, Some(checkpoints.path()), |_| {}).unwrap();
        let best = NetworkWeights::load(&checkpoints.path().join("best.elder")).unwrap();
        let reg = Regularizer::new(kind, 1.0, best).unwrap();

        let mut per_sigma = [0.0f64; 3];
        for (si, &sigma) in sigmas.iter().enumerate() {
            let mut total_d = 0.0;
            let mut total_id = 0.0;
            for i in 0..tiles {
                let mut rng = sample_rng(999, i);
                let u = procedural_tile(h, w, &mut rng);
                let v = u.add(&Tensor::randn(&[h, w], &mut rng).scale(sigma));
                let d = v.sub(&reg.grad(&v).unwrap());
                total_d += mean_squared_error(&d, &u);
                total_id += mean_squared_error(&v, &u);
            }
            per_sigma[si] = total_d / tiles as f64;
            identity[si] = total_id / tiles as f64;
            assert!(
                per_sigma[si] < identity[si],
                "criterion 8: {} denoiser MSE {:.6} does not beat identity {:.6} at sigma \
                 {:.3}",
                kind.name(),
                per_sigma[si],
                identity[si],
                sigma
            );
        }
        println!(
            "criterion 8: {} MSE {:?} vs identity {:?}",
            kind.name(),
            per_sigma,
            identity
        );
        mse.push(per_sigma);
    }

    let (lsr, red, dsv) = (mse[0], mse[1], mse[2]);
    let wins = (0..3).filter(|&i| lsr[i] <= red[i] && lsr[i] <= dsv[i]).count();
    assert!(
        wins >= 2,
        "criterion 8: squared-residual kind best on only {wins} of 3 noise levels \
         (lsr {lsr:?}, red {red:?}, dsv {dsv:?})"
    );
    println!(
        "PASS criterion 8: all kinds beat identity at 3 noise levels; squared-residual kind \
         best on {wins}/3 ({:.0}s)",
        started.elapsed().as_secs_f64()
    );
}

// ---- criterion 9: bit-for-bit reproducibility of the harness ----------------

#[test]
fn criterion_9_determinism() {
    let started = Instant::now();
    let tmp = TempDir::new().unwrap();
    let bin = env!("CARGO_BIN_EXE_elder");
    let scenarios: Vec<(&str, String, Vec<&str>)> = vec![
        (
            "gen-data",
            "[experiment]\nseed = 5\n\n[data]\ncount = 2\nimage_size = 12\n".into(),
            vec!["gen-data"],
        ),
        (
            "solve",
            "[experiment]\ntask = inpaint\nseed = 6\n\n[data]\ncount = 1\nimage_size = 12\n\n\
             [model]\nkeep_prob = 0.6\n\n[regularizer]\nkind = red\ntau = 0.2\n"
                .into(),
            vec!["solve"],
        ),
        (
            "pretrain",
            "[experiment]\ntask = denoise\nseed = 2\n\n[data]\nimage_size = 12\n\n[network]\n\
             num_scales = 1\nbase_channels = 4\n\n[train]\nepochs = 1\nsamples_per_epoch = 8\n\
             batch_size = 4\nval_count = 2\n"
                .into(),
            vec!["pretrain"],
        ),
        (
            "train",
            "[experiment]\ntask = inpaint\nseed = 3\n\n[data]\nimage_size = 12\n\n[model]\n\
             keep_prob = 0.6\n\n[regularizer]\ntau = 0.2\n\n[network]\nnum_scales = 1\n\
             base_channels = 4\n\n[train]\ninit = random\nepochs = 1\nsamples_per_epoch = 4\n\
             batch_size = 2\nforward_iters = 80\nval_count = 2\n"
                .into(),
            vec!["train"],
        ),
        (
            "gradcheck",
            "[experiment]\nseed = 4\n\n[gradcheck]\ninstances = 1\ndirections = 1\n\
             equilibrium_instances = 1\n"
                .into(),
            vec!["gradcheck"],
        ),
        (
            "bench-steps",
            "[experiment]\nseed = 8\n\n[bench]\nsize = 16\nmeasurements = 24\n".into(),
            vec!["bench-steps"],
        ),
    ];

    for (name, cfg, args) in &scenarios {
        let cfg_path = tmp.path().join(format!("{name}.cfg"));
        fs::write(&cfg_path, cfg).unwrap();
        let mut outputs: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
        for round in 0..2 {
            let out_dir = tmp.path().join(format!("{name}_{round}"));
            let status = Command::new(bin)
                .arg("--config")
                .arg(&cfg_path)
                .arg("--out")
                .arg(&out_dir)
                .args(args.iter())
                .arg("--quiet")
                .status()
                .unwrap();
            assert!(status.success(), "criterion 9: {name} round {round} failed");
            outputs.push(artifact_bytes(&out_dir));
        }
        assert!(
            !outputs[0].is_empty(),
            "criterion 9: {name} produced no comparable artifacts"
        );
        assert_eq!(
            outputs[0].iter().map(|(n, _)| n).collect::<Vec<_>>(),
            outputs[1].iter().map(|(n, _)| n).collect::<Vec<_>>(),
            "criterion 9: {name} produced different file sets"
        );
        for ((fname, a), (_, b)) in outputs[0].iter().zip(&outputs[1]) {
            assert_eq!(a, b, "criterion 9: {name}/{fname} differs between identical runs");
        }
    }
    println!(
        "PASS criterion 9: {} commands rerun byte-identical ({:.0}s)",
        scenarios.len(),
        started.elapsed().as_secs_f64()
    );
}

/// CSV, weight, and image artifacts of a run directory, sorted by name.
fn artifact_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("csv") | Some("elder") | Some("pgm")
            )
        })
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}
