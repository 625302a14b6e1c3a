use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use amdm_cli::config::{ExperimentConfig, ExperimentKind};
use amdm_cli::experiments::{run_experiment, RunOptions};

#[derive(Parser)]
#[command(name = "amdm", about = "Latent-aggregation experiment lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutputFormat {
    Csv,
    #[value(name = "csv+svg")]
    CsvSvg,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: runs/<experiment>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for trial execution (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, value_enum, default_value = "csv+svg")]
        format: OutputFormat,
    },
    /// Parse and validate a config file without running it.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the available experiment kinds.
    ListExperiments,
    /// Run a fast set of internal consistency checks.
    SelfTest,
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            config,
            out,
            seed,
            workers,
            format,
        } => {
            let cfg = match ExperimentConfig::from_path(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(2);
                }
            };
            let out_dir = out
                .or_else(|| cfg.output.clone())
                .unwrap_or_else(|| PathBuf::from("runs").join(cfg.experiment.name()));
            let opts = RunOptions {
                out_dir,
                seed_override: seed,
                workers,
                emit_svg: matches!(format, OutputFormat::CsvSvg),
            };
            match run_experiment(&cfg, &opts) {
                Ok(report) => {
                    print!("{}", report.render_text());
                    println!("outputs in {}", opts.out_dir.display());
                    if report.all_passed() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::FAILURE
                    }
                }
                Err(e) => {
                    eprintln!("run error: {e}");
                    ExitCode::from(2)
                }
            }
        }
        Command::ValidateConfig { config } => match ExperimentConfig::from_path(&config) {
            Ok(cfg) => {
                println!("ok: {} ({})", config.display(), cfg.experiment.name());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("invalid: {e}");
                ExitCode::FAILURE
            }
        },
        Command::ListExperiments => {
            for kind in ExperimentKind::all() {
                println!("{}", kind.name());
            }
            ExitCode::SUCCESS
        }
        Command::SelfTest => match self_test() {
            Ok(lines) => {
                for l in lines {
                    println!("{l}");
                }
                println!("self-test passed");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("self-test failed: {e}");
                ExitCode::FAILURE
            }
        },
    }
}

/// Quick internal consistency pass: exact identities that need no config.
fn self_test() -> Result<Vec<String>, String> {
    use amdm_core::aggregate::{deviation_optimize, slerp, theory_stats};
    use amdm_core::schedule::default_schedule;
    use amdm_core::theory::{concentration_lower_bound, membership_lower_bound};

    let mut lines = Vec::new();

    let s = default_schedule();
    let ab = s.alpha_bar(1000);
    if (ab - 4.035829765e-5).abs() > 1e-12 {
        return Err(format!("default schedule terminal alpha_bar drifted: {ab}"));
    }
    lines.push(format!("schedule: alpha_bar(T) = {ab:.6e}"));

    let mid = slerp(&[1.0, 0.0], &[0.0, 1.0], 0.5).map_err(|e| e.to_string())?;
    let norm = (mid[0] * mid[0] + mid[1] * mid[1]).sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(format!("slerp drifted off the unit sphere: {norm}"));
    }
    lines.push("slerp: orthogonal midpoint stays on the sphere".into());

    let out = deviation_optimize(&[3.0, 0.0], &[0.0, 0.0], 1.0).map_err(|e| e.to_string())?;
    if out != vec![2.0, 0.0] {
        return Err("deviation step is not an exact radial contraction".into());
    }
    lines.push("deviation optimization: exact radial step".into());

    let ts = theory_stats(&[2.0, 0.0], &[0.0, 2.0], 0.5, 0.0).map_err(|e| e.to_string())?;
    if (ts.phi_w - 0.541196100).abs() > 1e-9 {
        return Err(format!("chord ratio drifted: {}", ts.phi_w));
    }
    lines.push("chord ratio: phi_w(pi/2, 0.5) = 0.5412".into());

    for &(n, eps) in &[(256usize, 0.1f64), (4096, 0.05)] {
        let d0 = membership_lower_bound(n, eps, 0.0, 1.0);
        let base = concentration_lower_bound(n, eps);
        if d0 != base {
            return Err("membership bound fails the d = 0 reduction".into());
        }
    }
    lines.push("membership bound: d = 0 reduction exact".into());

    Ok(lines)
}
