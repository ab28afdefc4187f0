use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use mc_relay_cli::experiments::{BerMode, KoptMode};
use mc_relay_cli::{run_ber, run_figure, run_kopt, ExperimentConfig, FigureId, FigureSpec, ProtocolName, RunSettings};

/// Two-hop molecular communication relaying: figure sweeps and BER reports as CSV.
#[derive(Parser, Debug)]
#[command(name = "mc-relay", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Key-value configuration file; unset fields keep their reference values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Simulated trials per point; overrides --paper-scale.
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// Output directory (default: `output` from the config, else `results`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Use the full trial and sample counts instead of the desk-scale ones.
    #[arg(long, global = true)]
    paper_scale: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    /// Error probability of one protocol at the configured threshold.
    Ber {
        #[arg(long, value_enum, default_value = "both")]
        mode: BerArg,
        /// Overrides the configured protocol.
        #[arg(long)]
        protocol: Option<String>,
        /// Also writes one record per (trial, interval) to `trace.csv`.
        #[arg(long)]
        trace: bool,
    },
    /// Averaged closed-form gains.
    Kopt {
        #[arg(long, value_enum, default_value = "per-interval")]
        mode: KoptArg,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BerArg {
    Analytic,
    Simulate,
    Both,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KoptArg {
    PerInterval,
    Fixed,
}

fn load_config(common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn settings(common: &Common, cfg: &ExperimentConfig) -> RunSettings {
    let mut s = RunSettings::from_config(cfg);
    if common.paper_scale {
        s = s.paper_scale();
    }
    if let Some(trials) = common.trials {
        s.trials = trials;
    }
    s
}

/// Runs one command and returns the lines for stdout.
fn run(cli: Cli) -> anyhow::Result<Vec<String>> {
    let cfg = load_config(&cli.common)?;
    let settings = settings(&cli.common, &cfg);
    let out = cli
        .common
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    info!("seed {}, {} trials per point, writing to {}", settings.seed, settings.trials, out.display());

    let mut lines = Vec::new();
    let wrote = |path: PathBuf| format!("wrote {}", path.display());
    let figure = |id: FigureId| -> anyhow::Result<Vec<String>> {
        let data = run_figure(&FigureSpec::default_for(id), &cfg, &settings)?;
        Ok(data.write_to(&out)?.into_iter().map(wrote).collect())
    };
    match cli.command {
        Command::Fig2 => lines = figure(FigureId::Fig2)?,
        Command::Fig3 => lines = figure(FigureId::Fig3)?,
        Command::Fig4 => lines = figure(FigureId::Fig4)?,
        Command::Fig5 => lines = figure(FigureId::Fig5)?,
        Command::Fig6 => lines = figure(FigureId::Fig6)?,
        Command::Ber { mode, protocol, trace } => {
            let mut cfg = cfg.clone();
            if let Some(p) = protocol {
                cfg.protocol = ProtocolName::parse(&p).with_context(|| {
                    format!("unknown protocol `{p}` (expected baseline, fixed_af, type1_af, type2_af or df)")
                })?;
            }
            let mode = match mode {
                BerArg::Analytic => BerMode::Analytic,
                BerArg::Simulate => BerMode::Simulate,
                BerArg::Both => BerMode::Both,
            };
            let report = run_ber(&cfg, mode, &settings, trace)?;
            lines = report.lines;
            lines.extend(report.dataset.write_to(&out)?.into_iter().map(wrote));
            if let Some(t) = report.trace {
                lines.push(wrote(t.write_to(&out)?));
            }
        }
        Command::Kopt { mode } => {
            let mode = match mode {
                KoptArg::PerInterval => KoptMode::PerInterval,
                KoptArg::Fixed => KoptMode::Fixed,
            };
            let data = run_kopt(&cfg, mode, &settings)?;
            lines.extend(data.tables[0].render().lines().map(String::from));
            data.write_to(&out)?;
        }
    }
    Ok(lines)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    const SMALL: &str =
        "bit_interval = 400 us\nsamples_per_bit = 10\nsample_spacing = 20 us\nthreshold_d = 20\nseq_len = 10\n";

    fn run_args(dir: &Path, args: &[&str]) -> anyhow::Result<Vec<String>> {
        let mut full = vec!["mc-relay".to_string()];
        for a in args {
            // Paths are resolved against the scratch directory.
            full.push(if a.ends_with(".conf") || a.starts_with("out") {
                dir.join(a).display().to_string()
            } else {
                a.to_string()
            });
        }
        run(Cli::try_parse_from(full)?)
    }

    fn scratch(config: &str) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("c.conf"), config).unwrap();
        dir
    }

    #[test]
    fn ber_both_prints_both_numbers_and_a_ci() {
        let dir = scratch(SMALL);
        let lines = run_args(dir.path(), &["--config", "c.conf", "--trials", "1000", "--out", "out", "ber"]).unwrap();
        let text = lines.join("\n");
        assert!(text.contains("analytic: mean error probability"), "{text}");
        assert!(text.contains("simulated: BER") && text.contains("95% CI"), "{text}");
        let csv = std::fs::read_to_string(dir.path().join("out/ber.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn missing_field_is_named() {
        let dir = scratch("bit_interval = 400 us\nsamples_per_bit = 10\nthreshold_d = 20\n");
        let err = run_args(dir.path(), &["--config", "c.conf", "ber"]).unwrap_err();
        assert!(format!("{err:#}").contains("sample_spacing"), "{err:#}");
    }

    #[test]
    fn syntax_error_reports_the_line() {
        let dir = scratch(&format!("{SMALL}receiver_distance = 500 parsecs\n"));
        let err = format!("{:#}", run_args(dir.path(), &["--config", "c.conf", "kopt"]).unwrap_err());
        assert!(err.contains("line 6") && err.contains("receiver_distance"), "{err}");
    }

    #[test]
    fn unknown_subcommand_and_protocol_are_rejected() {
        assert!(Cli::try_parse_from(["mc-relay", "fig7"]).is_err());
        let dir = scratch(SMALL);
        assert!(run_args(dir.path(), &["--config", "c.conf", "ber", "--protocol", "relay"]).is_err());
    }

    #[test]
    fn repeated_seed_gives_identical_bytes() {
        let dir = scratch(SMALL);
        let go = |out: &str, seed: &str| {
            run_args(dir.path(), &["--config", "c.conf", "--seed", seed, "--trials", "200", "--out", out, "ber", "--trace"])
                .unwrap();
            let read = |f: &str| std::fs::read(dir.path().join(out).join(f)).unwrap();
            (read("ber.csv"), read("trace.csv"))
        };
        let a = go("out_a", "11");
        assert_eq!(a, go("out_b", "11"));
        assert_ne!(a.1, go("out_c", "12").1);
    }

    #[test]
    fn kopt_fixed_prints_a_single_gain() {
        let dir = scratch(SMALL);
        let lines = run_args(dir.path(), &["--config", "c.conf", "--out", "out", "kopt", "--mode", "fixed"]).unwrap();
        assert_eq!(lines[0], "k_bar [-],degenerate_clamp [-],k_max [-]");
        assert_eq!(lines.len(), 2);
        let k: f64 = lines[1].split(',').next().unwrap().parse().unwrap();
        assert!(k.fract() == 0.0 && k > 1.0 && k < 10_000.0);
    }

    #[test]
    fn trials_flag_beats_paper_scale() {
        let cfg = ExperimentConfig::default();
        let common = |trials, paper_scale| Common { config: None, seed: None, trials, out: None, paper_scale };
        assert_eq!(settings(&common(None, false), &cfg).trials, cfg.trials);
        assert_eq!(settings(&common(None, true), &cfg).trials, RunSettings::PAPER_TRIALS);
        assert_eq!(settings(&common(Some(7), true), &cfg).trials, 7);
    }
}
