//! Experiment front end: run adversarial PINN trainings, sweep update
//! ratios, aggregate reports, and drive the residual-space kernel-flow
//! scenarios.

mod artifacts;
mod config;

use apinn_core::kernelflow::{self, FlowVariant, SupportKernel};
use apinn_core::linalg::Mat;
use apinn_core::netmod;
use apinn_core::rolltrain::{TrainMode, Trainer};
use clap::{Parser, Subcommand};
use config::Preset;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "apinn", about = "Adversarially trained hard-constrained PINNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and write metrics, summary and checkpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from a previous run directory (loads its checkpoints).
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value = "default-1e-3")]
        preset: Preset,
    },
    /// One fixed-ratio run per G:D ratio under a shared update budget.
    RatioSweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated ratios, e.g. "100:1,10:1,1:100,1:1000".
        #[arg(long)]
        ratios: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "default-1e-3")]
        preset: Preset,
    },
    /// Validation/Training error grid over finished run directories.
    Report {
        /// Comma-separated run directories.
        #[arg(long)]
        runs: String,
        #[arg(long, value_enum, default_value_t = Reduction::Final)]
        reduction: Reduction,
        /// Also write a smoothed S series per run (moving average).
        #[arg(long)]
        smooth_s: bool,
        #[arg(long, default_value_t = 300)]
        smooth_window: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Kernel-flow scenario presets emitting CSV trajectories.
    Kernelflow {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fast self-checks of the core invariants.
    Selftest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Reduction {
    Final,
    Best,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Scenario {
    LsganClosedForm,
    IpmWitness,
    GanStationary,
    Linear,
    Multiplicative,
    Modal,
}

fn main() -> ExitCode {
    // APINN_THREADS caps worker parallelism
    if let Ok(n) = std::env::var("APINN_THREADS") {
        if let Ok(n) = n.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seed, resume, preset } => {
            cmd_run(&config, &out, seed, resume.as_deref(), preset)
        }
        Command::RatioSweep { config, out, ratios, seed, preset } => {
            cmd_ratio_sweep(&config, &out, &ratios, seed, preset)
        }
        Command::Report { runs, reduction, smooth_s, smooth_window, out } => {
            cmd_report(&runs, reduction, smooth_s, smooth_window, out.as_deref())
        }
        Command::Kernelflow { scenario, out } => cmd_kernelflow(scenario, &out),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

type CmdResult = Result<ExitCode, Box<dyn std::error::Error>>;

#[derive(serde::Serialize, serde::Deserialize)]
struct RunState {
    completed_iterations: usize,
}

fn cmd_run(
    config_path: &Path,
    out: &Path,
    seed: Option<u64>,
    resume: Option<&Path>,
    preset: Preset,
) -> CmdResult {
    let cfg = config::load(config_path)?;
    let resolved = config::resolve(&cfg, preset, seed)?;
    std::fs::create_dir_all(out)?;
    let mut trainer = Trainer::new(resolved.train.clone())?;

    let mut append_metrics = false;
    if let Some(prev) = resume {
        let state: RunState =
            serde_json::from_str(&std::fs::read_to_string(prev.join("state.json"))?)?;
        let (gspec, gparams) = netmod::load_checkpoint(&prev.join("gen.apinn"))?;
        if gspec != resolved.train.generator {
            return Err("resume checkpoint generator architecture differs from config".into());
        }
        trainer.set_generator_params(gparams.values)?;
        let disc_path = prev.join("disc.apinn");
        if disc_path.exists() {
            let (dspec, dparams) = netmod::load_checkpoint(&disc_path)?;
            if dspec != resolved.train.discriminator {
                return Err("resume checkpoint discriminator architecture differs".into());
            }
            trainer.set_discriminator_params(dparams.values)?;
        }
        trainer.start_iteration = state.completed_iterations;
        if prev == out {
            append_metrics = out.join("metrics.csv").exists();
        }
        eprintln!(
            "resuming from {} at iteration {}",
            prev.display(),
            state.completed_iterations
        );
    }

    let checkpoint = |trainer: &Trainer, dir: &Path| -> Result<(), Box<dyn std::error::Error>> {
        netmod::save_checkpoint(
            &dir.join("gen.apinn"),
            &trainer.cfg.generator,
            trainer.generator_params(),
        )?;
        if let Some(dp) = trainer.discriminator_params() {
            netmod::save_checkpoint(&dir.join("disc.apinn"), &trainer.cfg.discriminator, dp)?;
        }
        Ok(())
    };

    if resolved.checkpoint_every > 0 {
        // run in slices so periodic checkpoints hit the requested cadence
        let total = resolved.train.outer_iterations;
        let mut done = trainer.start_iteration;
        while done < total && !trainer.history.aborted {
            let next = (done + resolved.checkpoint_every).min(total);
            trainer.cfg.outer_iterations = next;
            trainer.run();
            done = trainer.start_iteration + trainer.history.records.len();
            let dir = out.join(format!("ckpt-{done}"));
            std::fs::create_dir_all(&dir)?;
            checkpoint(&trainer, &dir)?;
        }
        trainer.cfg.outer_iterations = total;
    } else {
        trainer.run();
    }

    artifacts::write_metrics(&out.join("metrics.csv"), &trainer.history.records, append_metrics)?;
    artifacts::write_timings(&out.join("timings.csv"), trainer.start_iteration, &trainer.timings)?;
    let summary = artifacts::summarize(trainer.cfg.problem.as_str(), &trainer.history);
    std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    checkpoint(&trainer, out)?;
    let completed = trainer.start_iteration + trainer.history.records.len();
    std::fs::write(
        out.join("state.json"),
        serde_json::to_string(&RunState { completed_iterations: completed })?,
    )?;
    if trainer.history.aborted {
        std::fs::write(out.join("FAILED"), "training aborted on non-finite loss\n")?;
        eprintln!("training aborted; partial artifacts written to {}", out.display());
        return Ok(ExitCode::from(3));
    }
    println!(
        "{}: {} iterations, final val MSE {}",
        trainer.cfg.problem.as_str(),
        completed,
        summary
            .final_validation_mse
            .map(|v| format!("{v:.3e}"))
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(ExitCode::SUCCESS)
}

fn parse_ratio(s: &str) -> Result<(usize, usize), String> {
    let (g, d) = s.split_once(':').ok_or_else(|| format!("bad ratio '{s}', want G:D"))?;
    let g: usize = g.trim().parse().map_err(|_| format!("bad ratio '{s}'"))?;
    let d: usize = d.trim().parse().map_err(|_| format!("bad ratio '{s}'"))?;
    if g == 0 || d == 0 {
        return Err(format!("ratio parts must be positive in '{s}'"));
    }
    Ok((g, d))
}

fn cmd_ratio_sweep(
    config_path: &Path,
    out: &Path,
    ratios: &str,
    seed: Option<u64>,
    preset: Preset,
) -> CmdResult {
    let cfg = config::load(config_path)?;
    let resolved = config::resolve(&cfg, preset, seed)?;
    std::fs::create_dir_all(out)?;
    let budget = resolved.update_budget;
    let mut rows = Vec::new();
    for spec in ratios.split(',') {
        let (g, d) = parse_ratio(spec)?;
        let mut train = resolved.train.clone();
        train.mode = TrainMode::FixedRatio { g, d };
        // total inner updates approximately equal across ratios
        train.outer_iterations = (budget / (g + d)).max(1);
        let mut trainer = Trainer::new(train)?;
        trainer.run();
        let run_dir = out.join(format!("ratio-{g}-{d}"));
        std::fs::create_dir_all(&run_dir)?;
        artifacts::write_metrics(&run_dir.join("metrics.csv"), &trainer.history.records, false)?;
        artifacts::write_timings(&run_dir.join("timings.csv"), 0, &trainer.timings)?;
        let summary = artifacts::summarize(trainer.cfg.problem.as_str(), &trainer.history);
        std::fs::write(run_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        let last = trainer.history.records.last();
        rows.push((
            format!("{g}:{d}"),
            g,
            d,
            trainer.cfg.outer_iterations,
            last.and_then(|r| r.train_mse),
            last.and_then(|r| r.validation_mse),
        ));
    }
    let mut f = std::fs::File::create(out.join("sweep.csv"))?;
    writeln!(f, "ratio,g,d,outer_iterations,final_train_mse,final_validation_mse")?;
    println!("{:<10} {:>8} {:>14} {:>14}", "G:D", "outer", "train MSE", "val MSE");
    for (name, g, d, iters, tr, va) in &rows {
        writeln!(
            f,
            "{name},{g},{d},{iters},{},{}",
            tr.map(artifacts::fmt_f64).unwrap_or_default(),
            va.map(artifacts::fmt_f64).unwrap_or_default()
        )?;
        println!(
            "{:<10} {:>8} {:>14} {:>14}",
            name,
            iters,
            tr.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "n/a".into()),
            va.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "n/a".into())
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_report(
    runs: &str,
    reduction: Reduction,
    smooth_s: bool,
    smooth_window: usize,
    out: Option<&Path>,
) -> CmdResult {
    let mut lines = vec!["run,validation_error,training_error".to_string()];
    let mut shown = vec![format!("{:<28} {:>14} / {:<14}", "run", "validation", "training")];
    let mut warnings = 0usize;
    for dir in runs.split(',') {
        let dir = Path::new(dir.trim());
        let metrics = dir.join("metrics.csv");
        if !metrics.exists() {
            warnings += 1;
            lines.push(format!("{},N/A,N/A", dir.display()));
            shown.push(format!("{:<28} {:>14} / {:<14}", dir.display(), "N/A", "N/A"));
            continue;
        }
        let rows = artifacts::parse_metrics(&std::fs::read_to_string(&metrics)?)
            .map_err(|e| format!("{}: {e}", metrics.display()))?;
        let pick = |get: fn(&artifacts::MetricRow) -> Option<f64>| -> Option<f64> {
            match reduction {
                Reduction::Final => rows.last().and_then(get),
                Reduction::Best => {
                    rows.iter().filter_map(get).min_by(|a, b| a.partial_cmp(b).unwrap())
                }
            }
        };
        let val = pick(|r| r.validation_mse);
        let tr = pick(|r| r.train_mse);
        let cell = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "N/A".into());
        lines.push(format!("{},{},{}", dir.display(), cell(val), cell(tr)));
        shown.push(format!("{:<28} {:>14} / {:<14}", dir.display(), cell(val), cell(tr)));
        if smooth_s {
            let s: Vec<f64> = rows.iter().map(|r| r.score).collect();
            let ma = artifacts::moving_average(&s, smooth_window);
            let mut f = std::fs::File::create(dir.join("s_smoothed.csv"))?;
            writeln!(f, "iteration,score_raw,score_ma{smooth_window}")?;
            for (row, m) in rows.iter().zip(&ma) {
                writeln!(
                    f,
                    "{},{},{}",
                    row.iteration,
                    artifacts::fmt_f64(row.score),
                    artifacts::fmt_f64(*m)
                )?;
            }
        }
    }
    for line in &shown {
        println!("{line}");
    }
    if let Some(path) = out {
        std::fs::write(path, lines.join("\n") + "\n")?;
    }
    if warnings > 0 {
        eprintln!(
            "warning: {warnings} run director{} missing",
            if warnings == 1 { "y" } else { "ies" }
        );
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn write_flow_csv(
    path: &Path,
    points: &[f64],
    traj: &[kernelflow::FlowState],
) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain(points.iter().map(|p| format!("f({p})")))
        .collect();
    writeln!(f, "{}", header.join(","))?;
    for st in traj {
        let row: Vec<String> = std::iter::once(artifacts::fmt_f64(st.t))
            .chain(st.f.iter().map(|v| artifacts::fmt_f64(*v)))
            .collect();
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

fn cmd_kernelflow(scenario: Scenario, out: &Path) -> CmdResult {
    std::fs::create_dir_all(out)?;
    let fakes: Vec<f64> = (0..6).map(|i| 0.5 + 0.5 * i as f64).collect();
    let sk = SupportKernel::gaussian(&fakes, 0.45);
    match scenario {
        Scenario::LsganClosedForm => {
            let f0 = vec![0.0; sk.len()];
            let traj = kernelflow::integrate_disc_flow(FlowVariant::Lsgan, &sk, &f0, 1.0, 0.002)?;
            write_flow_csv(&out.join("lsgan_rk4.csv"), &sk.points, &traj)?;
            let cf = kernelflow::lsgan_closed_form(&sk, &f0, 1.0)?;
            let last = &traj.last().unwrap().f;
            let sup = cf
                .iter()
                .zip(last)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            println!("lsgan closed form vs rk4 at t=1: sup error {sup:.3e}");
        }
        Scenario::IpmWitness => {
            let queries: Vec<f64> = (0..151).map(|i| -1.0 + 0.03 * i as f64).collect();
            let w = kernelflow::ipm_witness(&sk, &fakes, &queries);
            let mut f = std::fs::File::create(out.join("ipm_witness.csv"))?;
            writeln!(f, "r,witness")?;
            for (q, v) in queries.iter().zip(&w) {
                writeln!(f, "{},{}", artifacts::fmt_f64(*q), artifacts::fmt_f64(*v))?;
            }
            println!("witness written for {} query points", queries.len());
        }
        Scenario::GanStationary => {
            let lam_min = sk.operator_lambda_min()?;
            let t_end = 200.0 / lam_min;
            let f0 = vec![0.0; sk.len()];
            let traj = kernelflow::integrate_disc_flow(FlowVariant::Gan, &sk, &f0, t_end, 0.25)?;
            write_flow_csv(&out.join("gan_flow.csv"), &sk.points, &traj)?;
            let last = &traj.last().unwrap().f;
            let sup = last
                .iter()
                .zip(&sk.rho)
                .map(|(f, r)| (apinn_core::diffcore::sigmoid(*f) - r).abs())
                .fold(0.0f64, f64::max);
            println!("gan stationary: sup |sigma(f) - rho| = {sup:.3e} at t = {t_end:.0}");
        }
        Scenario::Linear => {
            let mut k = Mat::zeros(2, 2);
            k[(0, 0)] = 2.0;
            k[(1, 1)] = 1.0;
            let mut a = Mat::zeros(2, 2);
            a[(0, 0)] = 3.0;
            a[(1, 1)] = 4.0;
            let traj = kernelflow::integrate_linear_dyn(&k, &a, &[1.0, 1.0], 1.5, 0.001);
            let mut f = std::fs::File::create(out.join("linear_dyn.csv"))?;
            writeln!(f, "t,r0,r1,energy")?;
            for i in 0..traj.times.len() {
                writeln!(
                    f,
                    "{},{},{},{}",
                    artifacts::fmt_f64(traj.times[i]),
                    artifacts::fmt_f64(traj.states[i][0]),
                    artifacts::fmt_f64(traj.states[i][1]),
                    artifacts::fmt_f64(traj.energies[i])
                )?;
            }
            println!("modes decay at rates 6 and 4 (diagonal case)");
        }
        Scenario::Multiplicative => {
            let mut k = Mat::zeros(3, 3);
            for (i, v) in [2.0, 1.0, 0.5].iter().enumerate() {
                k[(i, i)] = *v;
            }
            let gt = [-0.8, -0.4, -0.2];
            let traj =
                kernelflow::integrate_multiplicative_dyn(&k, &gt, &[1.0, -0.7, 0.4], 2.0, 0.001);
            let mut f = std::fs::File::create(out.join("multiplicative_dyn.csv"))?;
            writeln!(f, "t,energy")?;
            for i in 0..traj.times.len() {
                writeln!(
                    f,
                    "{},{}",
                    artifacts::fmt_f64(traj.times[i]),
                    artifacts::fmt_f64(traj.energies[i])
                )?;
            }
            println!("strictly negative feedback: energy decays exponentially");
        }
        Scenario::Modal => {
            let mut k = Mat::zeros(3, 3);
            for (i, v) in [2.0, 1.0, 0.25].iter().enumerate() {
                k[(i, i)] = *v;
            }
            let rep = kernelflow::modal_decay_check(
                &k,
                |j, t| 0.5 + 0.3 * (1.0 + (t * (j as f64 + 1.0)).sin()),
                0.5,
                &[1.0, 1.0, 1.0],
                3.0,
                0.001,
            )?;
            let mut f = std::fs::File::create(out.join("modal_decay.csv"))?;
            writeln!(f, "mode,eigenvalue")?;
            for (j, l) in rep.eigenvalues.iter().enumerate() {
                writeln!(f, "{j},{}", artifacts::fmt_f64(*l))?;
            }
            println!("modal envelopes hold: max violation {:.3e}", rep.max_violation);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_selftest() -> CmdResult {
    use apinn_core::diffcore::Jet;
    use apinn_core::ntkdiag;
    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("{}: {}", name, if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    // jet chain rule probe
    let j = Jet::tanh(Jet::variable(0.3, 0));
    let t = 0.3f64.tanh();
    check(
        "jet tanh derivatives",
        (j.d1[0] - (1.0 - t * t)).abs() < 1e-14
            && (j.d2[0] + 2.0 * t * (1.0 - t * t)).abs() < 1e-14,
    );

    // gram symmetry / psd probe
    let k = ntkdiag::ntk_gram(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![0.0, 0.3]]);
    check("gram symmetry", k.symmetry_defect() == 0.0);
    let (lo, hi) = k.extreme_eigenvalues(100);
    check("gram psd", lo >= -1e-10 * hi.max(1.0));

    // violation statistics oracle
    let v = ntkdiag::violation_stats(&[2.0, 3.0]);
    check(
        "violation stats",
        v.positive_ratio == 1.0
            && v.positive_mean == 2.5
            && v.max_value == 3.0
            && v.l1_violation == 5.0
            && v.l2_violation == 13.0,
    );

    // lsgan kernel flow fixed point
    let sk = SupportKernel::gaussian(&[0.8, 1.6], 1.0);
    let traj =
        kernelflow::integrate_disc_flow(FlowVariant::Lsgan, &sk, &sk.rho.clone(), 0.5, 0.01)?;
    let drift = traj
        .last()
        .unwrap()
        .f
        .iter()
        .zip(&sk.rho)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    check("lsgan flow stationary at target", drift < 1e-12);

    // csv float round-trip
    let x = 5.86e-13f64;
    check(
        "metrics float round-trip",
        artifacts::fmt_f64(x).parse::<f64>().unwrap().to_bits() == x.to_bits(),
    );

    // predicted step is eta * S
    let k = ntkdiag::ntk_gram(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
    let r = [0.5, -0.25];
    let gamma = [-0.5, 0.25];
    let (_, de) = ntkdiag::predicted_step(&r, &k, &gamma, 0.1);
    let s = ntkdiag::first_order_score(&r, &k, &gamma);
    check("predicted step is eta*S", (de - 0.1 * s).abs() < 1e-15);

    println!("selftest: {failures} failure(s)");
    Ok(if failures == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
