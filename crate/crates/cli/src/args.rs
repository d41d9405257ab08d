use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "catchrelease", version, about = "Narrated field video to labeled plant image dataset")]
pub struct Cli {
    /// Config file; falls back to $CATCHRELEASE_CONFIG, then ./catchrelease.conf.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    /// Name recorded as the actor of log entries.
    #[arg(long, global = true, env = "CATCHRELEASE_ACTOR", default_value = "operator")]
    pub actor: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Store a field video (location metadata is stripped) and print its id.
    Ingest(IngestArgs),
    /// Cut a segment, extract frames, transcribe, align and score them.
    Pipeline(PipelineArgs),
    /// Attach a post-annotation voiceover recorded over a segment.
    Voiceover(VoiceoverArgs),
    /// Quality report of a batch.
    Qc { batch_id: String },
    /// Curated dataset administration.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Collection tasks, payments and the review queue.
    Task(TaskArgs),
    /// List the taxon registry.
    Taxa,
    /// Run the HTTP service.
    Serve {
        /// Overrides service.bind.
        #[arg(long)]
        bind: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SeasonArg {
    Wet,
    Dry,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub path: PathBuf,
    #[arg(long)]
    pub harvester: String,
    #[arg(long)]
    pub site: String,
    /// Capture date, YYYY-MM-DD.
    #[arg(long)]
    pub date: chrono::NaiveDate,
    /// Required unless a season calendar is configured.
    #[arg(long, value_enum)]
    pub season: Option<SeasonArg>,
    #[arg(long)]
    pub device_note: Option<String>,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    pub video_id: String,
    /// Segment start, MM:SS.
    #[arg(long)]
    pub start: String,
    /// Segment end, MM:SS.
    #[arg(long)]
    pub end: String,
    /// Frames per second to extract.
    #[arg(long)]
    pub fps: f64,
    /// Collection task to link the batch to.
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Debug, Args)]
pub struct VoiceoverArgs {
    pub segment_id: String,
    /// WAV recording covering the whole segment.
    pub wav: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Version, frame counts and splits.
    Status {
        #[arg(long)]
        version: Option<u64>,
    },
    /// Exclude a batch from counts and exports.
    Quarantine {
        batch_id: String,
        #[arg(long)]
        reason: String,
    },
    /// Move every frame of a batch to another taxon.
    Relabel {
        batch_id: String,
        #[arg(long)]
        taxon: String,
    },
    /// Assign train/val/test splits to approved frames.
    Split {
        #[arg(long)]
        version: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// train,val,test
        #[arg(long, value_delimiter = ',', num_args = 3)]
        ratios: Option<Vec<f64>>,
    },
    /// Write <root>/<split>/<taxon>/ with images and a manifest.
    Export {
        #[arg(long)]
        version: Option<u64>,
        #[arg(long)]
        root: PathBuf,
    },
    /// Class and season balance.
    Report {
        #[arg(long)]
        version: Option<u64>,
        #[arg(long)]
        csv: bool,
    },
    /// Every label a frame has carried.
    History { frame_id: String },
}

#[derive(Debug, Args)]
pub struct TaskArgs {
    /// Work on the local store instead of the configured service.
    #[arg(long, global = true)]
    pub local: bool,
    #[command(subcommand)]
    pub command: TaskCommand,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ResultKindArg {
    TrainingReport,
    EvaluationReport,
}

#[derive(Debug, Subcommand)]
pub enum TaskCommand {
    Create { taxon: String },
    /// One task, or all of them.
    Show { task_id: Option<String> },
    Advance {
        task_id: String,
        to_state: u8,
        #[arg(long, default_value = "")]
        note: String,
    },
    /// Link a collected video to a task.
    Link { task_id: String, video_id: String },
    /// Record a remuneration payment (state 7).
    Pay {
        task_id: String,
        #[arg(long)]
        harvester: String,
        /// Amount in USD, at most 2 decimals.
        #[arg(long)]
        usd: String,
        /// IDR per USD.
        #[arg(long)]
        rate: String,
        /// Transfer confirmation reference.
        #[arg(long = "ref")]
        confirmation: String,
    },
    /// Payments, for one task or all.
    Ledger { task_id: Option<String> },
    /// Attach a training or evaluation report.
    Result {
        task_id: String,
        #[arg(long, value_enum)]
        kind: ResultKindArg,
        file: PathBuf,
    },
    #[command(subcommand)]
    Review(ReviewCommand),
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Unresolved items, or all with --all.
    List {
        #[arg(long)]
        all: bool,
    },
    Approve { item_id: String },
    Reject {
        item_id: String,
        #[arg(long)]
        reason: String,
    },
    Assign {
        item_id: String,
        #[arg(long)]
        taxon: String,
    },
    Dismiss { item_id: String },
}
