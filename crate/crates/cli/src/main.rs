//! `algopilot` command-line driver.
//!
//! Machine-readable results are single JSON lines on stdout; progress goes to
//! stderr. Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 input that
//! fails to parse.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use algopilot::agent::{self, AgentError, EpisodeRecord, PolicyModel};
use algopilot::analysis::{self, AnalysisError};
use algopilot::client::{self, EndpointConfig};
use algopilot::config::{ConfigError, RunConfig};
use algopilot::env::EnvConfig;
use algopilot::program_gen::{self, ProgramError};
use algopilot::tlm::{TlmConfig, TlmError, TlmModel};
use algopilot::vocab::{Trajectory, MAX_N, MIN_MARKED_N};

#[derive(Parser)]
#[command(name = "algopilot", version, about = "Compare/Swap sorting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a corpus of random double-loop program trajectories.
    GenCorpus(GenCorpus),
    /// Count n-grams of a corpus into a trajectory model.
    TrainTlm(TrainTlm),
    /// Mean per-token loss of a trajectory model on a corpus.
    EvalTlm(EvalTlm),
    /// Train a policy, writing NDJSON episode metrics and a checkpoint.
    TrainAgent(TrainAgent),
    /// Greedy rollouts of a checkpoint.
    EvalAgent(EvalAgent),
    /// Windowed success rates of a metrics file, or discrepancies of a trajectory.
    Analyze(Analyze),
    /// Write the program-synthesis prompt for a trajectory.
    ExportPrompt(ExportPrompt),
    /// Send a prompt to a completion endpoint and print the reply.
    Synthesize(Synthesize),
}

#[derive(Args)]
struct GenCorpus {
    #[arg(long)]
    count: u64,
    #[arg(long, value_delimiter = ',', default_value = "6,8,10,12,14")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainTlm {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = TlmConfig::default().order)]
    order: usize,
    #[arg(long, default_value_t = TlmConfig::default().smoothing_alpha)]
    alpha: f64,
    /// `backoff` or `linear`.
    #[arg(long, default_value = "backoff")]
    interpolation: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalTlm {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Score only agent-chosen tokens.
    #[arg(long)]
    agent_only: bool,
}

#[derive(Args)]
struct TrainAgent {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tlm: Option<PathBuf>,
    #[arg(long)]
    guided: bool,
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalAgent {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "6")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    epsilon: f64,
    /// Run config supplying rewards and the step cap.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct Analyze {
    #[arg(long, conflicts_with_all = ["trajectory", "reference"])]
    metrics: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    window: usize,
    /// File whose first nonblank line is the model trajectory.
    #[arg(long, requires = "reference")]
    trajectory: Option<PathBuf>,
    /// Reference trajectory file, or `bubble` for the bubble-sort reference.
    #[arg(long, requires = "trajectory")]
    reference: Option<String>,
    /// Input array for `--reference bubble`; defaults to the reversed array.
    #[arg(long, value_delimiter = ',')]
    array: Option<Vec<i64>>,
}

#[derive(Args)]
struct ExportPrompt {
    #[arg(long)]
    trajectory: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Synthesize {
    /// Prompt text file.
    #[arg(long)]
    prompt: PathBuf,
    #[arg(long, default_value = "")]
    url: String,
    #[arg(long, default_value = "")]
    model: String,
    #[arg(long, default_value_t = 30.0)]
    timeout_secs: f64,
    #[arg(long, default_value_t = 2)]
    retries: u32,
    /// Return the canned completion without contacting the endpoint.
    #[arg(long)]
    offline: bool,
}

#[derive(Debug)]
enum Failure {
    Io(String),
    Usage(String),
    Parse(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Parse(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::Usage(m) | Failure::Parse(m) => m,
        }
    }
}

type Outcome = Result<(), Failure>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Io(format!("{}: {e}", path.display()))
}

impl From<TlmError> for Failure {
    fn from(e: TlmError) -> Self {
        match e {
            TlmError::Io(e) => Failure::Io(e.to_string()),
            TlmError::ParseFailure { .. } | TlmError::CorruptFile(_) | TlmError::VersionMismatch => {
                Failure::Parse(e.to_string())
            }
            TlmError::InvalidConfig(_) | TlmError::ConfigMismatch => Failure::Usage(e.to_string()),
        }
    }
}

impl From<AgentError> for Failure {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Io(_) | AgentError::SinkFailure(_) => Failure::Io(e.to_string()),
            AgentError::CorruptFile(_) | AgentError::VersionMismatch(_) => Failure::Parse(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => Failure::Io(e.to_string()),
            _ => Failure::Usage(e.to_string()),
        }
    }
}

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn check_sizes(sizes: &[usize]) -> Outcome {
    match sizes.iter().find(|&&n| !(MIN_MARKED_N..=MAX_N).contains(&n)) {
        Some(n) => Err(Failure::Usage(format!(
            "size {n} outside the supported range {MIN_MARKED_N}..={MAX_N}"
        ))),
        None if sizes.is_empty() => Err(Failure::Usage("no sizes given".into())),
        None => Ok(()),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, Failure> {
    File::open(path).map(BufReader::new).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// Nonblank lines of `path` parsed as trajectories.
fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>, Failure> {
    let mut out = Vec::new();
    for (idx, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t = line
            .parse()
            .map_err(|e| Failure::Parse(format!("{}:{}: {e}", path.display(), idx + 1)))?;
        out.push(t);
    }
    Ok(out)
}

fn read_one_trajectory(path: &Path) -> Result<Trajectory, Failure> {
    read_trajectories(path)?
        .into_iter()
        .next()
        .ok_or_else(|| Failure::Parse(format!("{}: no trajectory", path.display())))
}

fn gen_corpus(a: GenCorpus) -> Outcome {
    check_sizes(&a.sizes)?;
    let mut out = create(&a.out)?;
    let stats = program_gen::generate_corpus(a.count, &a.sizes, a.seed, &mut out).map_err(|e| match e {
        ProgramError::SinkFailure(e) => io_err(&a.out, e),
        other => Failure::Usage(other.to_string()),
    })?;
    emit(json!({
        "generated": stats.generated,
        "discarded": stats.discarded,
        "discard_rate": stats.discard_rate(),
        "out": a.out,
    }));
    Ok(())
}

fn parse_interpolation(s: &str) -> Result<algopilot::tlm::Interpolation, Failure> {
    match s {
        "backoff" => Ok(algopilot::tlm::Interpolation::Backoff),
        "linear" => Ok(algopilot::tlm::Interpolation::Linear),
        other => Err(Failure::Usage(format!("unknown interpolation {other}"))),
    }
}

fn train_tlm(a: TrainTlm) -> Outcome {
    let config = TlmConfig {
        order: a.order,
        smoothing_alpha: a.alpha,
        interpolation: parse_interpolation(&a.interpolation)?,
    };
    config.validate()?;
    let model = TlmModel::train_reader(open(&a.corpus)?, config).map_err(|e| match e {
        TlmError::ParseFailure { line, source } => {
            Failure::Parse(format!("{}:{line}: {source}", a.corpus.display()))
        }
        other => other.into(),
    })?;
    model.save(&a.out).map_err(|e| io_err(&a.out, e))?;
    emit(json!({
        "tokens": model.total_tokens(),
        "contexts": model.num_contexts(),
        "order": config.order,
        "out": a.out,
    }));
    Ok(())
}

fn eval_tlm(a: EvalTlm) -> Outcome {
    let model = TlmModel::load(&a.model).map_err(|e| match e {
        TlmError::Io(e) => io_err(&a.model, e),
        other => other.into(),
    })?;
    let corpus = read_trajectories(&a.corpus)?;
    let (sum, tokens) = corpus.iter().fold((0.0, 0usize), |(s, c), t| {
        let (x, k) = model.sequence_nll(t, a.agent_only);
        (s + x, c + k)
    });
    let mean = if tokens == 0 { 0.0 } else { sum / tokens as f64 };
    emit(json!({
        "mean_loss": mean,
        "trajectories": corpus.len(),
        "tokens": tokens,
        "agent_only": a.agent_only,
    }));
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => Ok(RunConfig::from_file(p)?),
        None => Ok(RunConfig::default()),
    }
}

fn train_agent(a: TrainAgent) -> Outcome {
    let mut cfg = load_config(a.config.as_deref())?;
    if a.guided {
        cfg.guidance_enabled = true;
    }
    let tlm_path = a.tlm.or_else(|| cfg.io.tlm.clone());
    if cfg.guidance_enabled && tlm_path.is_none() {
        return Err(Failure::Usage("--guided needs --tlm (or io.tlm in the config)".into()));
    }
    let tlm = match &tlm_path {
        Some(p) => Some(TlmModel::load(p).map_err(|e| match e {
            TlmError::Io(e) => io_err(p, e),
            other => other.into(),
        })?),
        None => None,
    };
    let env = cfg.env_config();
    env.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let agent_cfg = cfg.agent_config();
    agent_cfg.validate()?;

    let metrics_path = a.metrics.or_else(|| cfg.io.metrics.clone());
    let mut sink: Box<dyn Write> = match &metrics_path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::sink()),
    };
    let mut trailing = std::collections::VecDeque::with_capacity(1000);
    let episodes = agent_cfg.episodes;
    let model = agent::train_with(&env, &agent_cfg, tlm.as_ref(), |rec: &EpisodeRecord| {
        serde_json::to_writer(&mut sink, rec)?;
        sink.write_all(b"\n")?;
        if trailing.len() == 1000 {
            trailing.pop_front();
        }
        trailing.push_back(rec.success);
        if (rec.episode + 1).is_multiple_of(1000) || rec.episode + 1 == episodes {
            let rate = trailing.iter().filter(|&&s| s).count() as f64 / trailing.len() as f64;
            eprintln!("episode {} trailing success {rate:.3} epsilon {:.3}", rec.episode + 1, rec.epsilon);
        }
        Ok(())
    })?;
    sink.flush().map_err(|e| Failure::Io(e.to_string()))?;
    let checkpoint = a.checkpoint.or_else(|| cfg.io.checkpoint.clone());
    if let Some(p) = &checkpoint {
        model.save(p).map_err(|e| io_err(p, e))?;
    }
    let rate = if trailing.is_empty() {
        0.0
    } else {
        trailing.iter().filter(|&&s| s).count() as f64 / trailing.len() as f64
    };
    emit(json!({
        "episodes": episodes,
        "trailing_success_rate": rate,
        "guided": agent_cfg.guidance_enabled,
        "metrics": metrics_path,
        "checkpoint": checkpoint,
    }));
    Ok(())
}

fn eval_agent(a: EvalAgent) -> Outcome {
    check_sizes(&a.sizes)?;
    if !(0.0..=1.0).contains(&a.epsilon) {
        return Err(Failure::Usage("epsilon must lie in [0, 1]".into()));
    }
    let cfg = load_config(a.config.as_deref())?;
    let model = PolicyModel::load(&a.checkpoint).map_err(|e| match e {
        AgentError::Io(e) => io_err(&a.checkpoint, e),
        other => other.into(),
    })?;
    let env = EnvConfig {
        sizes: a.sizes.clone(),
        ..cfg.env_config()
    };
    let summary = agent::evaluate_model(&model, &env, &a.sizes, a.episodes, a.seed, a.epsilon)?;
    let sizes: Vec<_> = summary
        .sizes
        .iter()
        .map(|s| {
            let q = analysis::expected_quicksort_ops(s.n as u64);
            json!({
                "n": s.n,
                "episodes": s.episodes,
                "success_rate": s.success_rate,
                "mean_ops": s.mean_ops,
                "mean_compares": s.mean_compares,
                "mean_swaps": s.mean_swaps,
                "quicksort_expected_total": q.total,
            })
        })
        .collect();
    emit(json!({ "success_rate": summary.success_rate, "sizes": sizes }));
    Ok(())
}

fn analyze(a: Analyze) -> Outcome {
    if let Some(path) = &a.metrics {
        let mut records = Vec::new();
        for (idx, line) in open(path)?.lines().enumerate() {
            let line = line.map_err(|e| io_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: EpisodeRecord = serde_json::from_str(&line)
                .map_err(|e| Failure::Parse(format!("{}:{}: {e}", path.display(), idx + 1)))?;
            records.push(rec);
        }
        let series = analysis::success_rate_series(&records, a.window).map_err(|e| Failure::Usage(e.to_string()))?;
        let points: Vec<_> = series
            .iter()
            .map(|(ep, rate)| json!({ "episode": ep, "success_rate": rate }))
            .collect();
        emit(json!({ "episodes": records.len(), "window": a.window, "series": points }));
        return Ok(());
    }
    let (Some(tp), Some(reference)) = (&a.trajectory, &a.reference) else {
        return Err(Failure::Usage("give --metrics, or --trajectory with --reference".into()));
    };
    let model = read_one_trajectory(tp)?;
    let reference = if reference == "bubble" {
        let array = a.array.clone().unwrap_or_else(|| (1..=model.n as i64).rev().collect());
        if array.len() != model.n {
            return Err(Failure::Usage(format!(
                "--array has {} values, trajectory is len{}",
                array.len(),
                model.n
            )));
        }
        analysis::bubble_sort_reference_trajectory(&array)
    } else {
        read_one_trajectory(Path::new(reference))?
    };
    let report = analysis::count_discrepancies(&model, &reference).map_err(|e| match e {
        AnalysisError::LengthMarkerMismatch { .. } => Failure::Parse(e.to_string()),
        other => Failure::Usage(other.to_string()),
    })?;
    emit(serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn export_prompt(a: ExportPrompt) -> Outcome {
    let t = read_one_trajectory(&a.trajectory)?;
    let prompt = analysis::export_llm_prompt(&t);
    std::fs::write(&a.out, &prompt).map_err(|e| io_err(&a.out, e))?;
    emit(json!({ "out": a.out, "bytes": prompt.len() }));
    Ok(())
}

fn synthesize(a: Synthesize) -> Outcome {
    let prompt = std::fs::read_to_string(&a.prompt).map_err(|e| io_err(&a.prompt, e))?;
    let config = if a.offline {
        EndpointConfig::offline()
    } else {
        if a.url.is_empty() {
            return Err(Failure::Usage("--url is required unless --offline".into()));
        }
        if !(a.timeout_secs > 0.0) {
            return Err(Failure::Usage("--timeout-secs must be positive".into()));
        }
        EndpointConfig {
            timeout: Duration::from_secs_f64(a.timeout_secs),
            max_retries: a.retries,
            ..EndpointConfig::from_env(a.url, a.model)
        }
    };
    let completion = client::synthesize_program(&config, &prompt).map_err(|e| Failure::Io(e.to_string()))?;
    emit(json!({ "completion": completion }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::TrainTlm(a) => train_tlm(a),
        Command::EvalTlm(a) => eval_tlm(a),
        Command::TrainAgent(a) => train_agent(a),
        Command::EvalAgent(a) => eval_agent(a),
        Command::Analyze(a) => analyze(a),
        Command::ExportPrompt(a) => export_prompt(a),
        Command::Synthesize(a) => synthesize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
