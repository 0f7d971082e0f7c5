//! `spkit` command-line front end.
//!
//! Results go to stdout (or `--out`), logs to stderr. Exit codes: 0 on
//! success, 1 for usage and configuration errors, 2 for data errors.

mod commands;
mod inputs;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use spkit::config::{render_keys, FlatConfig, KeyDoc};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "spkit", version, about = "Speaker verification and diarization toolkit")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Flat `key = value` config file
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Worker threads for extraction and diarization
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

/// Where utterances come from.
#[derive(Debug, Args, Clone)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// `shards.list` written by make-shards
    #[arg(long)]
    pub shards: Option<PathBuf>,
    /// JSON-lines `data.list` of raw WAV files
    #[arg(long)]
    pub data_list: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pack a data.list into tar shards
    MakeShards {
        #[arg(long)]
        data_list: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        shard_size: usize,
        #[arg(long)]
        gzip: bool,
    },
    /// Run the training feature pipeline and print one line per sample
    PipelineDump {
        #[command(flatten)]
        source: Source,
        /// `path<TAB>category` noise map
        #[arg(long)]
        noise: Option<PathBuf>,
        /// `path` per line room-impulse map
        #[arg(long)]
        rir: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        limit: usize,
    },
    /// Write random embedder weights for the configured network
    InitWeights {
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract one embedding per utterance
    Extract {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write `key speaker` lines here
        #[arg(long)]
        utt2spk: Option<PathBuf>,
    },
    /// Train a margin-softmax classification head on embeddings
    FitHead {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        utt2spk: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Follow with a large-margin fine-tuning stage
        #[arg(long)]
        lmf: bool,
    },
    /// Cosine-score a trial list
    ScoreCosine {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// `model utt1 utt2 ...` enrollment map
        #[arg(long)]
        enroll: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a two-covariance PLDA model
    TrainPlda {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        utt2spk: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// PLDA-score a trial list
    ScorePlda {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        plda: PathBuf,
        #[arg(long)]
        enroll: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adaptive symmetric normalisation of raw scores
    Asnorm {
        /// Raw scores to normalise
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        /// Cohort embeddings
        #[arg(long)]
        cohort: PathBuf,
        #[arg(long, default_value = "cosine")]
        method: String,
        #[arg(long)]
        plda: Option<PathBuf>,
        #[arg(long)]
        enroll: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// EER and minDCF of scored trials
    Metrics {
        #[arg(long)]
        trials: PathBuf,
        #[arg(long)]
        scores: PathBuf,
    },
    /// Diarize recordings into RTTM
    Diarize {
        /// Window embeddings keyed `<rec>_<start ms>_<end ms>`
        #[arg(long, conflicts_with_all = ["data_list", "sad", "oracle_rttm", "weights"])]
        embeddings: Option<PathBuf>,
        /// Recordings as a data.list (key = recording id)
        #[arg(long, requires = "weights")]
        data_list: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Speech regions, `<rec> <start> <end>`
        #[arg(long, conflicts_with = "oracle_rttm")]
        sad: Option<PathBuf>,
        /// Take speech regions from a reference RTTM
        #[arg(long)]
        oracle_rttm: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diarization error rate of a hypothesis RTTM
    Der {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
    },
    /// Print `t lr margin` for every iteration of the schedule
    ScheduleDump {
        /// Print only this iteration
        #[arg(long)]
        at: Option<usize>,
    },
}

/// Config keys honoured by each subcommand.
pub fn keys_for(name: &str) -> Vec<KeyDoc> {
    use spkit::backend::{ASNORM_KEYS, METRIC_KEYS, PLDA_KEYS};
    use spkit::diarize::{DER_KEYS, DIARIZE_KEYS};
    use spkit::embedder::EMBEDDER_KEYS;
    use spkit::featpipe::PIPELINE_KEYS;
    use spkit::losses::{LOSS_KEYS, SCHEDULER_KEYS};
    use spkit::session::session_keys;
    match name {
        "pipeline-dump" => PIPELINE_KEYS.to_vec(),
        "init-weights" => EMBEDDER_KEYS.to_vec(),
        "extract" => session_keys().into_iter().filter(|k| !k.key.starts_with("plda")).collect(),
        "fit-head" => [LOSS_KEYS, SCHEDULER_KEYS].concat(),
        "train-plda" | "score-plda" => PLDA_KEYS.to_vec(),
        "asnorm" => [ASNORM_KEYS, PLDA_KEYS].concat(),
        "metrics" => METRIC_KEYS.to_vec(),
        "diarize" => {
            let mut k = DIARIZE_KEYS.to_vec();
            k.extend(keys_for("extract"));
            k
        }
        "der" => DER_KEYS.to_vec(),
        "schedule-dump" => SCHEDULER_KEYS.to_vec(),
        _ => Vec::new(),
    }
}

/// Union of all subcommand keys: the namespace of a shared config file.
pub fn all_keys() -> Vec<KeyDoc> {
    let mut out: Vec<KeyDoc> = Vec::new();
    for c in Cli::command().get_subcommands() {
        for k in keys_for(c.get_name()) {
            if !out.iter().any(|o| o.key == k.key) {
                out.push(k);
            }
        }
    }
    out
}

fn command() -> clap::Command {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|c| c.get_name().to_string()).collect();
    for name in names {
        let keys = keys_for(&name);
        let text = if keys.is_empty() {
            "Config keys: none".to_string()
        } else {
            format!("Config keys (--config file or --set key=value):\n{}", render_keys(&keys))
        };
        cmd = cmd.mut_subcommand(&name, |c| c.after_help(text));
    }
    cmd
}

/// Failure of a subcommand, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(spkit::Error),
}

impl From<spkit::Error> for CliError {
    fn from(e: spkit::Error) -> Self {
        match e {
            spkit::Error::Config(m) => CliError::Usage(m),
            other => CliError::Data(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.into())
    }
}

pub(crate) type CliResult<T> = std::result::Result<T, CliError>;

/// Global settings handed to every subcommand.
pub(crate) struct Context {
    pub seed: u64,
    pub workers: usize,
    pub config: FlatConfig,
}

fn load_config(cli: &Cli) -> CliResult<FlatConfig> {
    let mut cfg = match &cli.config {
        Some(p) => FlatConfig::load(p)?,
        None => FlatConfig::new(),
    };
    for pair in &cli.set {
        cfg.set_pair(pair)?;
    }
    let known = all_keys();
    cfg.reject_unknown(&known)?;
    Ok(cfg)
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .try_init();
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    let outcome = load_config(&cli).and_then(|config| {
        if cli.workers == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        let ctx = Context {
            seed: cli.seed,
            workers: cli.workers,
            config,
        };
        commands::dispatch(&cli.command, &ctx)
    });
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            eprintln!("run `spkit --help` for usage");
            EXIT_USAGE
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}
