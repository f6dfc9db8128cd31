//! The `reacta` command line: generate, build, train, evaluate, recommend.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use artifacts::{
    read_sessions, require, write_sessions, Artifacts, BuildParams, ACTIVATIONS_FILE, AUDIO_FILE,
    CORRELATION_FILE, MANIFEST_FILE, SESSIONS_FILE, SVD_FILE,
};
pub use commands::{
    cmd_build, cmd_evaluate, cmd_gen_data, cmd_recommend, cmd_train, run_dir, Recommendation, Recommender, EVENTS_FILE,
    RecommendedTrack, BPR_FILE, HISTORY_FILE, MODEL_FILE, RECOMMENDATIONS_FILE, REPORT_FILE, REPORT_TABLE_FILE,
};
pub use config::{resolve, ConfigFlags, Overrides, Preset, Resolved, RunConfig, RESOLVED_CONFIG_FILE};

use crate::scoring::ModelKind;

#[derive(Parser, Debug)]
#[command(name = "reacta", version, about = "Repeat-aware music session recommender")]
pub struct Cli {
    #[command(flatten)]
    pub flags: ConfigFlags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic listening corpus with audio embeddings.
    GenData {
        /// Output directory for events.tsv and audio.emb
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Sessionise events, split, and build embeddings and activations.
    Build {
        /// Listening events, `user<TAB>track<TAB>timestamp`
        #[arg(long)]
        events: PathBuf,
        /// Audio embedding file covering every track
        #[arg(long)]
        audio: PathBuf,
        /// Output directory for the built artifacts
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train one model on built artifacts.
    Train {
        /// Directory written by `build`
        #[arg(long)]
        data: PathBuf,
        /// One of reacta-u, reacta-p, pisa-u, pisa-p, actr-bpr
        #[arg(long)]
        model: ModelKind,
        /// Runs root; the run lands in <out-dir>/<model>/<config hash>
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate trained runs on the test split.
    Evaluate {
        /// Directory written by `build`
        #[arg(long)]
        data: PathBuf,
        /// Runs root written by `train`
        #[arg(long)]
        runs: PathBuf,
        /// Models to report [default: all six]
        #[arg(long, value_delimiter = ',')]
        model: Vec<ModelKind>,
        /// Output directory for report.json and report.txt
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Recommend the next session for listed users, one JSON line each.
    Recommend {
        /// Directory written by `build`
        #[arg(long)]
        data: PathBuf,
        /// Run directory written by `train` (not needed for actr-repeat)
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        model: ModelKind,
        /// User ids [default: every user]
        #[arg(long, value_delimiter = ',')]
        user: Vec<String>,
        /// Write to this file instead of stdout
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> crate::Result<()> {
    let resolved = resolve(&cli.flags)?;
    match cli.command {
        Command::GenData { out_dir } => cmd_gen_data(&resolved, &out_dir),
        Command::Build { events, audio, out_dir } => cmd_build(&resolved, &events, &audio, &out_dir),
        Command::Train { data, model, out_dir } => cmd_train(&resolved, &data, model, &out_dir).map(|_| ()),
        Command::Evaluate {
            data,
            runs,
            model,
            out_dir,
        } => {
            let models = if model.is_empty() { ModelKind::ALL.to_vec() } else { model };
            let report = cmd_evaluate(&resolved, &data, &runs, &models, &out_dir)?;
            print!("{}", report.to_table());
            Ok(())
        }
        Command::Recommend {
            data,
            run,
            model,
            user,
            out_dir,
        } => cmd_recommend(&resolved, &data, run.as_deref(), model, &user, out_dir.as_deref()),
    }
}

/// Binary entry point: one-line diagnostic and exit code 1 on failure.
pub fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}", e.to_string().replace('\n', " "));
        std::process::exit(1);
    }
}
