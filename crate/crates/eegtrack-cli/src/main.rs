//! Command-line driver for the eegtrack pipeline.
//!
//! Exit codes: 0 on success, 1 on validation problems (bad flags, bad config),
//! 2 on runtime failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use eegtrack_core::config::{validate_config, RunConfig};
use eegtrack_core::error::Error as CoreError;
use eegtrack_core::pipeline;

#[derive(Parser, Debug)]
#[command(
    name = "eegtrack",
    version,
    about = "Onset-based speech features, TRF forward modeling and match-mismatch classification for auditory EEG"
)]
struct Cli {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master random seed (overrides the config's seed)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for all stage artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct SynthOverrides {
    /// Number of synthetic subjects
    #[arg(long)]
    subjects: Option<usize>,
    /// Recording duration per subject, seconds
    #[arg(long)]
    duration_s: Option<f64>,
    /// Per-channel SNR in dB (omit in the config to disable noise)
    #[arg(long)]
    snr_db: Option<f64>,
}

#[derive(Args, Debug, Default, Clone)]
struct TrainOverrides {
    /// Maximum training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Early-stopping patience, epochs
    #[arg(long)]
    patience: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic corpus configured in the run
    Synth(SynthOverrides),
    /// Filter, re-reference, resample, split and normalize every recording
    Preprocess,
    /// Sample the configured speech representations at the EEG rate
    Encode,
    /// Linear forward (TRF) modeling
    Trf {
        #[command(subcommand)]
        action: TrfAction,
    },
    /// Match-mismatch classification
    Mm {
        #[command(subcommand)]
        action: MmAction,
    },
    /// Statistics over per-subject metrics
    Stats {
        #[command(subcommand)]
        action: StatsAction,
    },
    /// Whole-pipeline execution
    Pipeline {
        #[command(subcommand)]
        action: PipelineAction,
    },
}

#[derive(Subcommand, Debug)]
enum TrfAction {
    /// Fit one ridge model per subject and scheme (lambda from validation)
    Fit {
        /// Integration window in milliseconds
        #[arg(long)]
        window_ms: Option<f64>,
    },
    /// Evaluate fitted models on the test partitions
    Eval,
    /// Export mean TRFs, topographies and the channel-correlation map
    Export,
}

#[derive(Subcommand, Debug)]
enum MmAction {
    /// Write the match-mismatch example manifests
    Build,
    /// Train the subject-independent model
    Train(TrainOverrides),
    /// Fine-tune the subject-independent model per subject
    Finetune(TrainOverrides),
    /// Evaluate SI and fine-tuned checkpoints
    Eval,
}

#[derive(Subcommand, Debug)]
enum StatsAction {
    /// Signed-rank comparisons with Holm-Bonferroni correction
    Compare,
}

#[derive(Subcommand, Debug)]
enum PipelineAction {
    /// Run every stage in order and write the run manifest
    Run,
}

fn load_run_config(cli: &Cli) -> Result<RunConfig, String> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| "--config <path> is required for this command".to_string())?;
    let mut cfg = validate_config(path).map_err(|errors| {
        let mut msg = format!("configuration {} is invalid:\n", path.display());
        for e in &errors {
            msg.push_str(&format!("  - {e}\n"));
        }
        msg.trim_end().to_string()
    })?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_synth_overrides(cfg: &mut RunConfig, o: &SynthOverrides) -> Result<(), String> {
    let synth = cfg
        .synth
        .as_mut()
        .ok_or_else(|| "config has no synth section to override".to_string())?;
    if let Some(n) = o.subjects {
        synth.n_subjects = n;
    }
    if let Some(d) = o.duration_s {
        synth.duration_s = d;
    }
    if let Some(snr) = o.snr_db {
        synth.snr_db = Some(snr);
    }
    Ok(())
}

fn apply_train_overrides(cfg: &mut RunConfig, o: &TrainOverrides) {
    if let Some(e) = o.epochs {
        cfg.mm.train.max_epochs = e;
    }
    if let Some(p) = o.patience {
        cfg.mm.train.patience = p;
    }
}

/// 1 for validation problems, 2 for runtime failures.
fn core_exit_code(err: &CoreError) -> u8 {
    match err {
        CoreError::Invalid(_) | CoreError::Shape(_) | CoreError::Format(_) => 1,
        _ => 2,
    }
}

fn dispatch(cli: Cli) -> Result<(), (u8, String)> {
    let validation = |msg: String| (1u8, msg);
    let mut cfg = load_run_config(&cli).map_err(validation)?;
    let out = cli.out.clone();
    let run = |r: eegtrack_core::Result<()>| r.map_err(|e| (core_exit_code(&e), e.to_string()));

    match &cli.command {
        Command::Synth(overrides) => {
            apply_synth_overrides(&mut cfg, overrides).map_err(validation)?;
            let manifest = pipeline::stage_synth(&cfg, &out)
                .map_err(|e| (core_exit_code(&e), e.to_string()))?;
            println!(
                "synth: {} subjects, {} files under {}",
                manifest.n_subjects,
                manifest.files.len(),
                out.join("corpus").display()
            );
            Ok(())
        }
        Command::Preprocess => run(pipeline::stage_preprocess(&cfg, &out)),
        Command::Encode => run(pipeline::stage_encode(&cfg, &out)),
        Command::Trf { action } => match action {
            TrfAction::Fit { window_ms } => {
                if let Some(w) = window_ms {
                    cfg.trf.window_ms = *w;
                }
                run(pipeline::stage_trf_fit(&cfg, &out))
            }
            TrfAction::Eval => {
                let reports = pipeline::stage_trf_eval(&cfg, &out)
                    .map_err(|e| (core_exit_code(&e), e.to_string()))?;
                for r in &reports {
                    println!(
                        "trf eval: {} {} mean rho {:.4} (lambda {:.3e})",
                        r.subject, r.scheme, r.mean_eval_rho, r.lambda
                    );
                }
                Ok(())
            }
            TrfAction::Export => run(pipeline::stage_trf_export(&cfg, &out)),
        },
        Command::Mm { action } => match action {
            MmAction::Build => run(pipeline::stage_mm_build(&cfg, &out)),
            MmAction::Train(o) => {
                apply_train_overrides(&mut cfg, o);
                run(pipeline::stage_mm_train(&cfg, &out))
            }
            MmAction::Finetune(o) => {
                apply_train_overrides(&mut cfg, o);
                run(pipeline::stage_mm_finetune(&cfg, &out))
            }
            MmAction::Eval => {
                let rows = pipeline::stage_mm_eval(&cfg, &out)
                    .map_err(|e| (core_exit_code(&e), e.to_string()))?;
                for r in &rows {
                    println!(
                        "mm eval: {} {} {} accuracy {:.3} over {} examples",
                        r.subject, r.scheme, r.model_stage, r.accuracy, r.n_examples
                    );
                }
                Ok(())
            }
        },
        Command::Stats { action } => match action {
            StatsAction::Compare => run(pipeline::stage_stats(&cfg, &out)),
        },
        Command::Pipeline { action } => match action {
            PipelineAction::Run => {
                let manifest = pipeline::pipeline_run(&cfg, &out)
                    .map_err(|e| (core_exit_code(&e), e.to_string()))?;
                println!(
                    "pipeline run: {} output files, config {}",
                    manifest.outputs.len(),
                    &manifest.config_sha256[..12]
                );
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version requests are successes; anything else is a
            // usage problem and exits 1
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
