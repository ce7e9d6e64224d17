use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cascade_lab::analysis::{decomposition, gap_shift};
use cascade_lab::config::ExperimentConfig;
use cascade_lab::error::Error;
use cascade_lab::runner::{
    self, atomic_write, read_jsonl, render_summary, AttackLine, MetricsFile, SuffixFile, TraceLine,
};

/// Default output root when neither --out nor the config names one.
const OUT_ENV: &str = "CASCADE_LAB_OUT";

#[derive(Parser)]
#[command(name = "cascade-lab", about = "Deterministic cascade attack/defense experiments")]
struct Cli {
    /// Worker threads (0 = rayon default). Any value produces byte-identical
    /// outputs.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Full experiment: clean run, attack sweep, analysis, defenses, summary.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Attack sweep only (plus the clean baseline it is measured against).
    Attack {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute decomposition and gap attribution from stored traces.
    Analyze { trace_dir: PathBuf },
    /// Defense sweep only.
    Defend {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply a stored suffix to another cascade and report Δ vs clean.
    Transfer {
        suffix_file: PathBuf,
        target_config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render summary.md from a stored metrics.json.
    Report { experiment_dir: PathBuf },
}

fn resolve_out(flag: Option<PathBuf>, cfg: &ExperimentConfig, config_path: &Path) -> PathBuf {
    if let Some(dir) = flag {
        return dir;
    }
    if let Some(dir) = &cfg.output_dir {
        return PathBuf::from(dir);
    }
    let root = std::env::var(OUT_ENV).unwrap_or_else(|_| "out".to_string());
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "experiment".to_string());
    PathBuf::from(root).join(stem)
}

fn dispatch(cli: Cli) -> cascade_lab::error::Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let dir = resolve_out(out, &cfg, &config);
            let dir = runner::run_experiment(&cfg, &dir)?;
            println!("experiment written to {}", dir.display());
        }
        Command::Attack { config, out } => {
            // The attack verb runs the same pipeline with the defense
            // section stripped; the clean baseline is needed for Δ rows.
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.defense = None;
            if cfg.attack.is_none() {
                return Err(Error::config("attack verb needs an attack section"));
            }
            let dir = resolve_out(out, &cfg, &config);
            let dir = runner::run_experiment(&cfg, &dir)?;
            println!("attack results written to {}", dir.display());
        }
        Command::Analyze { trace_dir } => {
            let clean: Vec<TraceLine> = read_jsonl(&trace_dir.join("clean_traces.jsonl"))?;
            let clean_records: Vec<_> = clean.iter().map(|l| l.to_record()).collect();
            let report = decomposition(&clean_records)?;
            println!(
                "clean: N={} Pr[A_cas]={:.4} Pr[A_l]={:.4} gap={:.4}",
                report.n, report.pr_a_cas, report.pr_final_err, report.gap
            );
            let mut attacked_files: Vec<PathBuf> = std::fs::read_dir(&trace_dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| {
                    p.file_name()
                        .map(|n| n.to_string_lossy().starts_with("attacked_"))
                        .unwrap_or(false)
                })
                .collect();
            attacked_files.sort();
            let mut analysis = runner::AnalysisFile {
                clean: report,
                attacked: None,
                gap_shift: None,
            };
            if let Some(path) = attacked_files.first() {
                let attacked: Vec<AttackLine> = read_jsonl(path)?;
                let adv_records: Vec<_> = attacked.iter().map(|l| l.trace.to_record()).collect();
                let adv_report = decomposition(&adv_records)?;
                let shift = gap_shift(&clean_records, &adv_records)?;
                println!(
                    "attacked ({}): gap={:.4} Δgap={:.4} (routing {:.4}, conditional {:.4}, cross {:.4})",
                    path.file_name().unwrap().to_string_lossy(),
                    adv_report.gap,
                    shift.delta_change,
                    shift.routing_shift_total,
                    shift.conditional_gap_total,
                    shift.cross_total
                );
                analysis.attacked = Some(adv_report);
                analysis.gap_shift = Some(shift);
            }
            atomic_write(
                &trace_dir.join("analysis.json"),
                serde_json::to_string_pretty(&analysis)?.as_bytes(),
            )?;
        }
        Command::Defend { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            if cfg.defense.is_none() {
                return Err(Error::config("defend verb needs a defense section"));
            }
            let dir = resolve_out(out, &cfg, &config);
            let dir = runner::run_experiment(&cfg, &dir)?;
            println!("defense sweep written to {}", dir.join("defense.csv").display());
        }
        Command::Transfer {
            suffix_file,
            target_config,
            out,
        } => {
            let text = std::fs::read_to_string(&suffix_file)?;
            let suffix: SuffixFile = serde_json::from_str(&text)?;
            let cfg = ExperimentConfig::load(&target_config)?;
            let built = cascade_lab::config::build_experiment(&cfg)?;
            let report = runner::transfer_eval(&built, &suffix)?;
            println!(
                "transfer: performance {} token cost {} time {} (unknown surfaces: {})",
                report.delta_performance,
                report.delta_token_cost,
                report.delta_time,
                report.unknown_count
            );
            if let Some(dir) = out {
                atomic_write(
                    &dir.join("transfer.json"),
                    serde_json::to_string_pretty(&report)?.as_bytes(),
                )?;
            }
        }
        Command::Report { experiment_dir } => {
            let text = std::fs::read_to_string(experiment_dir.join("metrics.json"))?;
            let metrics: MetricsFile = serde_json::from_str(&text)?;
            let summary = render_summary(&metrics);
            atomic_write(&experiment_dir.join("summary.md"), summary.as_bytes())?;
            print!("{summary}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    };
    match pool.install(|| dispatch(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::Config(_) | Error::Json(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
