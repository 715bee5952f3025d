use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use codeagents::backend::{Backend, HttpBackend};
use codeagents::config::{load_config, AblationConfig, RunContext};
use codeagents::core::gateway::ConstantBackend;
use codeagents::core::replan::PlanFormat;
use codeagents::formats::{load_suite, TaskSpec};
use codeagents::harness::{
    read_report, read_transcripts, render_table, replay_factory, run_suite, scripted_factory, write_run, RunOutput,
};
use codeagents::store::exchanges_by_episode;

#[derive(Parser)]
#[command(
    name = "codeagents",
    version,
    about = "Run codified-agent task suites and report their metrics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendKind {
    /// Canned completions from each task's script file.
    Scripted,
    /// Chat-completion API; the key is read from CODEAGENTS_API_KEY.
    Http,
    /// Same completion for every prompt.
    Constant,
}

#[derive(Subcommand)]
enum Command {
    /// Run a suite and write report.json, records.ndjson, transcripts.ndjson and episodes.ndjson.
    Run {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "scripted")]
        backend: BackendKind,
        #[arg(long)]
        out: PathBuf,
        /// Ablation row 1-11, overriding the config file.
        #[arg(long)]
        preset: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long, default_value = "https://api.openai.com/v1/chat/completions")]
        endpoint: String,
        #[arg(long, default_value = "")]
        completion: String,
    },
    /// Print the aggregates of a report as a table.
    Report { report: PathBuf },
    /// Re-run a suite against recorded transcripts.
    Replay {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        preset: Option<usize>,
    },
}

fn apply_overrides(ctx: &mut RunContext, preset: Option<usize>, repeats: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = preset {
        let keep = ctx.settings.ablation.clone();
        let mut a = AblationConfig::preset(n).with_context(|| format!("no ablation preset {n}"))?;
        a.seeds = keep.seeds;
        a.repeats = keep.repeats;
        ctx.settings.ablation = a;
    }
    if let Some(r) = repeats {
        if r == 0 {
            bail!("repeats must be at least 1");
        }
        ctx.settings.ablation.repeats = r;
    }
    Ok(())
}

fn finish(out: &RunOutput, dir: &Path) -> anyhow::Result<()> {
    write_run(dir, out)?;
    print!("{}", render_table(&out.report));
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            suite,
            config,
            backend,
            out,
            preset,
            repeats,
            endpoint,
            completion,
        } => {
            let suite = load_suite(&suite)?;
            let mut ctx = load_config(&config)?;
            apply_overrides(&mut ctx, preset, repeats)?;
            let output = match backend {
                BackendKind::Scripted => run_suite(&suite, &ctx, &scripted_factory())?,
                BackendKind::Constant => {
                    let factory = move |_: &TaskSpec, _: &str, _: PlanFormat| -> Result<Box<dyn Backend>, String> {
                        Ok(Box::new(ConstantBackend::new(completion.clone())))
                    };
                    run_suite(&suite, &ctx, &factory)?
                }
                BackendKind::Http => {
                    let model = ctx.settings.model.clone();
                    let factory = move |_: &TaskSpec, _: &str, _: PlanFormat| -> Result<Box<dyn Backend>, String> {
                        let b = HttpBackend::from_env(endpoint.clone(), model.clone()).map_err(|e| e.to_string())?;
                        Ok(Box::new(b))
                    };
                    run_suite(&suite, &ctx, &factory)?
                }
            };
            finish(&output, &out)
        }
        Command::Report { report } => {
            print!("{}", render_table(&read_report(&report)?));
            Ok(())
        }
        Command::Replay {
            suite,
            config,
            transcripts,
            out,
            preset,
        } => {
            let suite = load_suite(&suite)?;
            let mut ctx = load_config(&config)?;
            apply_overrides(&mut ctx, preset, None)?;
            let recorded = exchanges_by_episode(&read_transcripts(&transcripts)?)?;
            let output = run_suite(&suite, &ctx, &replay_factory(recorded))?;
            finish(&output, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
