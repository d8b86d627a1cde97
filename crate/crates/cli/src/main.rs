use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use freeway_dlm::DlmError;

mod commands;
mod field_csv;

#[derive(Parser, Debug)]
#[command(name = "freeway-dlm", version, about = "Freeway travel-time forecasting with dynamic linear models")]
pub struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// More logging (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a speed export and write the canonical dataset.
    Ingest(IngestArgs),
    /// Simulate a corridor from known transition matrices.
    Synth(SynthArgs),
    /// Fit transition matrices on a dataset.
    Train(TrainArgs),
    /// Fold newer days into an existing model.
    Update(UpdateArgs),
    /// Forecast the rest of a partially observed day.
    Predict(PredictArgs),
    /// Travel time through a gridded or forecast field.
    TravelTime(TravelTimeArgs),
    /// Horizon sweep of travel-time accuracy on test days.
    Evaluate(EvaluateArgs),
    /// Validation MAPE over (rho, lambda) pairs.
    GridSearch(GridSearchArgs),
}

#[derive(Args, Debug, Clone, Copy)]
pub struct GridArgs {
    /// First grid point, minutes after midnight.
    #[arg(long, default_value_t = 360)]
    pub start_minute: u32,
    #[arg(long, default_value_t = 5)]
    pub step_minutes: u32,
    /// Number of grid points (K + 1).
    #[arg(long, default_value_t = 181)]
    pub num_steps: usize,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Order {
    Increasing,
    Decreasing,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Speed CSV (`day,sensor_id,time_index,speed_mph`).
    #[arg(long)]
    pub speeds: PathBuf,
    /// Layout CSV (`sensor_id,milepost_miles`).
    #[arg(long)]
    pub layout: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Reject days missing more than this fraction of cells.
    #[arg(long, default_value_t = 0.2)]
    pub max_missing: f64,
    #[arg(long, value_enum, default_value_t = Order::Increasing)]
    pub milepost_order: Order,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Directory for `speeds.csv` and `layout.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write chronological train/validation/test splits, e.g. 0.7,0.15,0.15.
    #[arg(long, value_delimiter = ',')]
    pub split: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Dynamics {
    Identity,
    Mixing,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 5)]
    pub sensors: usize,
    /// Corridor length, miles.
    #[arg(long, default_value_t = 20.0)]
    pub length: f64,
    #[arg(long, default_value_t = 30)]
    pub days: usize,
    /// Noise standard deviation, mph.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Dynamics::Mixing)]
    pub dynamics: Dynamics,
    /// Off-diagonal weight of the mixing dynamics.
    #[arg(long, default_value_t = 0.1)]
    pub mixing: f64,
    #[arg(long, default_value_t = 20.0)]
    pub initial_low: f64,
    #[arg(long, default_value_t = 70.0)]
    pub initial_high: f64,
    /// Start every day at this speed on every sensor instead.
    #[arg(long)]
    pub initial_constant: Option<f64>,
    /// Date of the first day (YYYY-MM-DD).
    #[arg(long, default_value = "2012-01-01")]
    pub start_date: String,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct HyperArgs {
    /// Ridge weight rho (>= 0).
    #[arg(long)]
    pub regularization: f64,
    /// Forgetting factor lambda in (0, 1].
    #[arg(long)]
    pub forgetting_factor: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct UpdateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Speed CSV of the new days, oldest first; sensors must match the model.
    #[arg(long)]
    pub speeds: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub max_missing: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Copy)]
pub struct PostArgs {
    #[arg(long, default_value_t = 0.05)]
    pub post_a: f64,
    #[arg(long, default_value_t = 10.0)]
    pub post_b: f64,
    /// Lower identity threshold, mph.
    #[arg(long, default_value_t = 10.0)]
    pub post_lower: f64,
    /// Upper identity threshold, mph.
    #[arg(long, default_value_t = 75.0)]
    pub post_upper: f64,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Speed CSV holding the observed day; cells after --now-index are ignored.
    #[arg(long)]
    pub day_file: PathBuf,
    /// Day to select when the file holds several.
    #[arg(long)]
    pub day: Option<String>,
    #[arg(long)]
    pub now_index: usize,
    /// Steps ahead; defaults to the end of the grid.
    #[arg(long)]
    pub steps: Option<usize>,
    #[command(flatten)]
    pub post: PostArgs,
    /// Output CSV (`sensor_id,milepost_miles,<time_index>...`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TravelTimeArgs {
    /// Gridded field CSV (`sensor_id,milepost_miles,<time_index>...`).
    #[arg(long, conflicts_with_all = ["model", "day_file", "now_index"])]
    pub field: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Forecast from this model instead of reading a field.
    #[arg(long, requires_all = ["day_file", "now_index"])]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub day_file: Option<PathBuf>,
    #[arg(long)]
    pub day: Option<String>,
    #[arg(long)]
    pub now_index: Option<usize>,
    #[command(flatten)]
    pub post: PostArgs,
    /// Departure, clock minutes after midnight; defaults to the field's first time.
    #[arg(long)]
    pub depart_minute: Option<f64>,
    /// Origin milepost; defaults to the first sensor.
    #[arg(long)]
    pub origin: Option<f64>,
    /// Destination milepost; defaults to the last sensor.
    #[arg(long)]
    pub destination: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub delta_x: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum FreewayArg {
    I5s,
    I210e,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq, Eq)]
pub enum PredictorArg {
    Dlm,
    Inst,
    Knn,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    /// Horizons in minutes.
    #[arg(long, value_delimiter = ',', default_value = "0,15,30,60")]
    pub horizons: Vec<u32>,
    /// Built-in peak/off-peak masks.
    #[arg(long, value_enum)]
    pub freeway: Option<FreewayArg>,
    #[arg(long, default_value_t = 0.01)]
    pub delta_x: f64,
    /// Evaluate every n-th current-time index only.
    #[arg(long, default_value_t = 1)]
    pub now_stride: usize,
    /// Trip origin milepost; defaults to the first sensor.
    #[arg(long)]
    pub origin: Option<f64>,
    /// Trip destination milepost; defaults to the last sensor.
    #[arg(long)]
    pub destination: Option<f64>,
    #[command(flatten)]
    pub post: PostArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Test-day speed CSV; sensors must match the model.
    #[arg(long)]
    pub test_speeds: PathBuf,
    /// Training days, required for k-NN.
    #[arg(long)]
    pub train_speeds: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "dlm,inst")]
    pub predictors: Vec<PredictorArg>,
    #[arg(long, default_value_t = 1)]
    pub knn_k: usize,
    #[command(flatten)]
    pub sweep: SweepArgs,
    #[arg(long, default_value_t = 0.2)]
    pub max_missing: f64,
    /// Full report as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-trip records as CSV.
    #[arg(long)]
    pub records: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GridSearchArgs {
    /// Training days.
    #[arg(long)]
    pub train_speeds: PathBuf,
    /// Validation days.
    #[arg(long)]
    pub val_speeds: PathBuf,
    #[arg(long)]
    pub layout: PathBuf,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0.2)]
    pub max_missing: f64,
    #[arg(long, value_enum, default_value_t = Order::Increasing)]
    pub milepost_order: Order,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3,1,3,10,30,100,300,1000,3000,10000")]
    pub rhos: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "1,0.999,0.995,0.99,0.95")]
    pub lambdas: Vec<f64>,
    /// Horizons in minutes pooled into each cell.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub horizons: Vec<u32>,
    #[arg(long, value_enum)]
    pub freeway: Option<FreewayArg>,
    /// Mask whose departures are scored; defaults to `peak` with --freeway, else `all`.
    #[arg(long)]
    pub select: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    pub delta_x: f64,
    #[arg(long, default_value_t = 1)]
    pub now_stride: usize,
    #[command(flatten)]
    pub post: PostArgs,
    /// Table CSV, rho rows by lambda columns.
    #[arg(long)]
    pub out: PathBuf,
}

/// Failure surfaced to the user with an exit code.
#[derive(Debug)]
pub enum CliError {
    Lib(DlmError),
    Input(String),
    Unevaluable(usize),
}

impl From<DlmError> for CliError {
    fn from(e: DlmError) -> Self {
        CliError::Lib(e)
    }
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Lib(e) => e.kind(),
            CliError::Input(_) => "input",
            CliError::Unevaluable(_) => "unevaluable_trips",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Lib(DlmError::RankDeficient { .. } | DlmError::Numerical(_)) => 3,
            CliError::Lib(DlmError::HorizonExceeded { .. }) | CliError::Unevaluable(_) => 4,
            _ => 2,
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Lib(e) => e.to_string(),
            CliError::Input(m) => m.clone(),
            CliError::Unevaluable(n) => format!("{n} trips could not be evaluated (predicted field too short)"),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(summary) => {
            commands::emit(&summary, cli.json);
            ExitCode::SUCCESS
        }
        Err((err, summary)) => {
            if let Some(s) = summary {
                commands::emit(&s, cli.json);
            }
            let body = serde_json::json!({ "error": err.kind(), "message": err.message() });
            eprintln!("{body}");
            ExitCode::from(err.exit_code())
        }
    }
}
