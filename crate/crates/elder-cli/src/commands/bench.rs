//! `bench-steps`: step-size strategy comparison on a convex quadratic.
//!
//! The problem is least squares (a random dense operator) plus a quadratic
//! penalty, so every strategy heads for the same unique minimizer and the
//! comparison is purely about iteration counts. The reference fixed step is
//! `1/tau`, the inverse curvature of the smooth penalty term — the largest
//! classically safe step — and the handicapped variant takes a tenth of it.

use crate::config::Settings;
use crate::report;
use elder::data::sample_rng;
use elder::forward_model::MeasurementModel;
use elder::solver::{run_forward, FixedPointResult, QuadraticPenalty, SolverConfig};
use elder::{Result, Tensor};

struct Strategy {
    label: &'static str,
    gamma0: f64,
    line_search: bool,
}

/// First step count at which the objective reaches `threshold`, if ever.
fn iters_to(history: &[f64], threshold: f64) -> Option<usize> {
    history.iter().position(|&f| f <= threshold)
}

pub fn run(s: &Settings, quiet: bool) -> Result<()> {
    let n = s.bench.size;
    let m = s.bench.measurements;
    let mut rng = sample_rng(s.seed, 0);
    let a = Tensor::randn(&[m, n], &mut rng);
    let model = MeasurementModel::generic(a, &[n])?;
    let x_star = Tensor::randn(&[n], &mut rng);
    let y = model.apply_forward(&x_star)?;
    let center = Tensor::randn(&[n], &mut rng);
    let penalty = QuadraticPenalty { tau: s.bench.tau, center };
    let x0 = Tensor::zeros(&[n]);

    let gamma_ref = 1.0 / s.bench.tau;
    let strategies = [
        Strategy { label: "bt_gamma0_0.1", gamma0: 0.1, line_search: true },
        Strategy { label: "bt_gamma0_1", gamma0: 1.0, line_search: true },
        Strategy { label: "bt_gamma0_10", gamma0: 10.0, line_search: true },
        Strategy { label: "fixed_ref", gamma0: gamma_ref, line_search: false },
        Strategy { label: "fixed_small", gamma0: 0.1 * gamma_ref, line_search: false },
    ];

    let mut results: Vec<(&Strategy, FixedPointResult)> = Vec::new();
    for strat in &strategies {
        let cfg = SolverConfig {
            gamma0: strat.gamma0,
            line_search: strat.line_search,
            epsilon: s.bench.epsilon,
            max_iters: s.bench.max_iters,
            ..Default::default()
        };
        let fp = run_forward(&model, &penalty, &y, &x0, &cfg)?;
        results.push((strat, fp));
    }

    // Threshold for the head-to-head count: the worst final objective over
    // all strategies, so every run reaches it and iteration counts compare
    // like for like.
    let threshold = results
        .iter()
        .map(|(_, fp)| *fp.f_history.last().expect("history never empty"))
        .fold(f64::NEG_INFINITY, f64::max);

    // Aligned traces: row k holds every strategy's objective after k steps,
    // shorter runs padded with their final value.
    let longest = results.iter().map(|(_, fp)| fp.f_history.len()).max().unwrap_or(0);
    let mut tw = report::csv_writer(&s.out.join("traces.csv"))?;
    let mut header = vec!["k".to_string()];
    header.extend(results.iter().map(|(st, _)| st.label.to_string()));
    report::write_row(&mut tw, &header)?;
    for k in 0..longest {
        let mut row = vec![k.to_string()];
        for (_, fp) in &results {
            let f = fp.f_history.get(k).or_else(|| fp.f_history.last());
            row.push(report::fmt_f(*f.expect("history never empty")));
        }
        report::write_row(&mut tw, &row)?;
    }
    report::finish(tw)?;

    let mut sw = report::csv_writer(&s.out.join("summary.csv"))?;
    report::write_row(
        &mut sw,
        &["strategy", "gamma0", "line_search", "iterations", "converged", "f_final", "iters_to_threshold"],
    )?;
    for (st, fp) in &results {
        let f_final = *fp.f_history.last().expect("history never empty");
        let reach = iters_to(&fp.f_history, threshold);
        report::write_row(
            &mut sw,
            &[
                st.label.to_string(),
                report::fmt_f(st.gamma0),
                st.line_search.to_string(),
                fp.iterations.to_string(),
                fp.converged.to_string(),
                report::fmt_f(f_final),
                reach.map(|k| k.to_string()).unwrap_or_default(),
            ],
        )?;
        if !quiet {
            let reach_text =
                reach.map(|k| k.to_string()).unwrap_or_else(|| "never".to_string());
            println!(
                "bench {:<14} gamma0 {:>8.3}  {} iters  f_final {:.6e}  to-threshold {reach_text}",
                st.label, st.gamma0, fp.iterations, f_final
            );
        }
    }
    report::finish(sw)?;
    Ok(())
}
