use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sketch_cli::output::{
    format_ablation, format_table, read_ablation, read_eval, summarize_ablation, summarize_eval, write_eval, Provenance,
};
use sketch_cli::pipeline::{evaluate_checkpoint, run, RunOptions, ABLATION_FILE, EVAL_FILE, FINAL_CHECKPOINT};
use sketch_cli::spec::ExperimentSpec;
use sketch_cli::{CliError, Result};

#[derive(Parser)]
#[command(name = "sketch", version, about = "Train and evaluate sketch-guided modular policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline of an experiment spec.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the checkpoints already in the output directory.
        #[arg(long)]
        resume: bool,
        /// Progress line every N updates (0 = silent).
        #[arg(long, default_value_t = 100)]
        progress: u64,
    },
    /// Evaluate a saved checkpoint under the spec's mode.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to evaluate; defaults to the spec's, then the run's final checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the tables of a finished run directory.
    Report {
        /// Run directory (`<output>/<name>`).
        run: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; the run goes to `<output>/<name>`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Rollout threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Single-threaded collection.
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn load(&self) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::load(&self.spec)?;
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(out) = &self.output {
            spec.output_dir = out.clone();
        }
        if let Some(w) = self.workers {
            spec.trainer.workers = Some(w);
        }
        if self.deterministic {
            spec.trainer.workers = Some(1);
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn report(dir: &Path) -> Result<()> {
    let eval = dir.join(EVAL_FILE);
    let ablation = dir.join(ABLATION_FILE);
    if !eval.exists() && !ablation.exists() {
        return Err(CliError::Spec(format!("{} holds neither {EVAL_FILE} nor {ABLATION_FILE}", dir.display())));
    }
    if eval.exists() {
        print!("{}", format_table(&summarize_eval(&read_eval(&eval)?)));
    }
    if ablation.exists() {
        print!("{}", format_ablation(&summarize_ablation(&read_ablation(&ablation)?)));
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, resume, progress } => {
            let spec = common.load()?;
            let result = run(&spec, &RunOptions { resume, progress_every: progress })?;
            if !result.eval_rows.is_empty() {
                print!("{}", format_table(&summarize_eval(&result.eval_rows)));
            }
            if !result.ablation_rows.is_empty() {
                print!("{}", format_ablation(&summarize_ablation(&result.ablation_rows)));
            }
            println!("outputs in {}", result.dir.display());
        }
        Command::Eval { common, checkpoint } => {
            let spec = common.load()?;
            let dir = spec.output_dir.join(&spec.name);
            let path = checkpoint
                .or_else(|| spec.checkpoint.clone())
                .unwrap_or_else(|| dir.join(FINAL_CHECKPOINT));
            let rows = evaluate_checkpoint(&spec, &path)?;
            std::fs::create_dir_all(&dir)?;
            write_eval(&dir.join(EVAL_FILE), &Provenance::new(spec.hash()?, spec.seed), &rows)?;
            print!("{}", format_table(&summarize_eval(&rows)));
        }
        Command::Report { run } => report(&run)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
