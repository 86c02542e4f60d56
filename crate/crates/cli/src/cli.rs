//! Argument definitions and dispatch for the `batchbandit` binary.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use batchbandit::allocation::{prob_optimal, DEFAULT_DRAWS};
use batchbandit::analysis::{fit_panel_ols, panel_rows_from_records, PanelSpec, SourceFilter};
use batchbandit::engine::{FileStore, Store, DEFAULT_BATCHES};
use batchbandit::rng;
use batchbandit::simulator::{
    published_table, replay_table, run_campaign, simulate_run, CampaignConfig, Environment, PolicySpec,
    TableFixture, TableStyle,
};
use batchbandit::{AllocationPolicy, BetaParams, Error, ExperimentConfig, Reward, Trajectory};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::service::{
    assignments_view, prob_optimal_view, rewards_view, state_view, status_of, CreateRequest, ResponseStatus,
};

/// Sub-stream of an experiment's seed used for trajectory PA by default.
const TRAJECTORY_PA_STREAM: u64 = 3;

#[derive(Debug, Parser)]
#[command(name = "batchbandit", version, about = "Batched Thompson Sampling experiments")]
pub struct Cli {
    /// Directory holding experiment snapshots.
    #[arg(long, global = true, env = "BATCHBANDIT_STORE", default_value = "batchbandit-store")]
    pub store: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create an experiment at its prior.
    Create(CreateArgs),
    /// Assign a batch of participants.
    OpenBatch(OpenBatchArgs),
    /// Close the pending batch from a `participant_id,clicked` file.
    Record(RecordArgs),
    /// Show an experiment's state.
    Status(ExperimentArg),
    /// Probability that each arm is optimal.
    ProbOptimal(ProbOptimalArgs),
    /// Simulate one experiment against known click probabilities.
    Simulate(SimulateArgs),
    /// Replicated simulations comparing policies.
    Campaign(CampaignArgs),
    /// Panel regression of clicks on arms over one or more weekly experiments.
    Analyze(AnalyzeArgs),
    /// Render a CCR/PA table with the largest PA highlighted.
    ReplayTable(ReplayTableArgs),
    /// Write an experiment's snapshot, records or trajectory.
    Export(ExportArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ExperimentArg {
    #[arg(long)]
    pub experiment: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyKind {
    Uniform,
    Ts,
    Hybrid,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    #[arg(long, value_enum, default_value = "hybrid")]
    pub policy: PolicyKind,
    /// Uniform share of the hybrid policy.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    /// Feed uniformly assigned rewards into the posterior (hybrid only).
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub share_uniform_data: bool,
}

impl PolicyArgs {
    pub fn policy(&self) -> batchbandit::Result<AllocationPolicy> {
        match self.policy {
            PolicyKind::Uniform => Ok(AllocationPolicy::Uniform),
            PolicyKind::Ts => Ok(AllocationPolicy::ThompsonSampling),
            PolicyKind::Hybrid => AllocationPolicy::hybrid(self.epsilon, self.share_uniform_data),
        }
    }
}

#[derive(Debug, Args)]
pub struct CreateArgs {
    #[arg(long)]
    pub experiment: String,
    /// Number of arms, labelled arm1..armK.
    #[arg(long, conflicts_with = "labels", required_unless_present = "labels")]
    pub arms: Option<usize>,
    /// Comma-separated arm labels.
    #[arg(long, value_delimiter = ',')]
    pub labels: Option<Vec<String>>,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = DEFAULT_BATCHES)]
    pub batches: u32,
    #[arg(long, default_value_t = 1.0)]
    pub prior_alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub prior_beta: f64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct OpenBatchArgs {
    #[arg(long)]
    pub experiment: String,
    /// File with a `participant_id` column (`-` for stdin).
    #[arg(long, required_unless_present = "ids")]
    pub participants: Option<PathBuf>,
    /// Comma-separated participant ids.
    #[arg(long, value_delimiter = ',', conflicts_with = "participants")]
    pub ids: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[arg(long)]
    pub experiment: String,
    /// File with `participant_id,clicked` columns (`-` for stdin).
    #[arg(long)]
    pub rewards: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbOptimalArgs {
    #[arg(long, required_unless_present = "posteriors")]
    pub experiment: Option<String>,
    /// Explicit posteriors as `a,b;a,b;...` instead of a stored experiment.
    #[arg(long, conflicts_with = "experiment")]
    pub posteriors: Option<String>,
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: u64,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// True click probability of each arm, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub probs: Vec<f64>,
    #[command(flatten)]
    pub policy: PolicyArgs,
    #[arg(long, default_value_t = DEFAULT_BATCHES)]
    pub batches: u32,
    #[arg(long, default_value_t = 80)]
    pub batch_size: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte-Carlo draws for each batch's PA.
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: u64,
    /// Write the trajectory as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CampaignArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub probs: Vec<f64>,
    /// Policies to compare; the first is the baseline.
    #[arg(long = "policies", value_enum, value_delimiter = ',', default_value = "uniform,ts,hybrid")]
    pub policies: Vec<PolicyKind>,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub share_uniform_data: bool,
    #[arg(long, default_value_t = DEFAULT_BATCHES)]
    pub batches: u32,
    #[arg(long, default_value_t = 80)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1000)]
    pub replications: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 20_000)]
    pub draws: u64,
    #[arg(long, default_value_t = 0.5)]
    pub favor_threshold: f64,
    /// Write per-batch, per-arm means as CSV here; the summary goes to
    /// the same path with a `.summary.csv` suffix.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// One experiment per week; ids double as week labels.
    #[arg(long = "experiment", required = true)]
    pub experiments: Vec<String>,
    #[arg(long)]
    pub week_effects: bool,
    #[arg(long)]
    pub participant_effects: bool,
    /// Include Thompson-assigned participants, not only uniform ones.
    #[arg(long)]
    pub all_sources: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StyleArg {
    Markdown,
    Latex,
}

#[derive(Debug, Args)]
pub struct ReplayTableArgs {
    /// Long-format CSV `group,batch,arm,ccr,pa`; the published weekly table
    /// when absent.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "markdown")]
    pub style: StyleArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExportKind {
    Snapshot,
    Records,
    Trajectory,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub experiment: String,
    #[arg(long, value_enum, default_value = "snapshot")]
    pub what: ExportKind,
    /// PA draws per batch (trajectory only).
    #[arg(long, default_value_t = DEFAULT_DRAWS)]
    pub draws: u64,
    /// PA seed (trajectory only); derived from the experiment seed if absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
}

/// What a successful command prints.
#[derive(Debug)]
pub enum Output {
    Json(Value),
    Text(String),
}

/// A failed command with its response class.
#[derive(Debug)]
pub struct Failure {
    pub status: ResponseStatus,
    pub error: Error,
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure {
            status: status_of(&error),
            error,
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e).into()
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::Io(e).into()
    }
}

impl Failure {
    pub fn document(&self) -> Value {
        json!({
            "status": self.status,
            "error": { "code": self.error.code(), "message": self.error.to_string() },
        })
    }
}

type CmdResult = Result<Output, Failure>;

fn seed_or_fresh(seed: Option<u64>, what: &str) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rng::fresh_seed();
        log::info!("{what}: no seed given, using {s}");
        s
    })
}

/// Run one command. `serve` blocks until the server stops.
pub fn run(cli: Cli) -> CmdResult {
    let store = || FileStore::open(&cli.store);
    match cli.command {
        Command::Create(a) => {
            let req = CreateRequest {
                id: a.experiment.clone(),
                arm_labels: a.labels,
                arms: a.arms,
                policy: a.policy.policy()?,
                batches: Some(a.batches),
                prior: Some((a.prior_alpha, a.prior_beta)),
                seed: None,
                idempotency_key: None,
            };
            let cfg = req.config()?;
            let seed = seed_or_fresh(a.seed, &format!("experiment `{}`", cfg.id));
            let state = batchbandit::engine::create_experiment(cfg, seed)?;
            store()?.create(&state)?;
            Ok(Output::Json(state_view(&state)))
        }
        Command::OpenBatch(a) => {
            let ids = match (a.ids, a.participants) {
                (Some(ids), _) => ids,
                (None, Some(path)) => read_participants(&path)?,
                (None, None) => unreachable!("clap requires one"),
            };
            let v = store()?.mutate(&a.experiment, |s| {
                let recs = s.open_batch(&ids)?;
                Ok(assignments_view(s, &recs))
            })?;
            Ok(Output::Json(v))
        }
        Command::Record(a) => {
            let rewards = read_rewards(&a.rewards)?;
            let v = store()?.mutate(&a.experiment, |s| {
                s.record_rewards(&rewards)?;
                Ok(rewards_view(s))
            })?;
            Ok(Output::Json(v))
        }
        Command::Status(a) => Ok(Output::Json(state_view(&store()?.load(&a.experiment)?))),
        Command::ProbOptimal(a) => {
            let seed = seed_or_fresh(a.seed, "prob-optimal");
            match (a.experiment, a.posteriors) {
                (Some(id), _) => Ok(Output::Json(prob_optimal_view(&store()?.load(&id)?, a.draws, seed)?)),
                (None, Some(text)) => {
                    let posts = parse_posteriors(&text)?;
                    let pa = prob_optimal(&posts, a.draws, &mut rng::stream(seed))?;
                    Ok(Output::Json(json!({
                        "posteriors": posts,
                        "draws": a.draws,
                        "seed": seed,
                        "probs": pa.probs,
                        "favored": pa.favored(),
                    })))
                }
                (None, None) => unreachable!("clap requires one"),
            }
        }
        Command::Simulate(a) => simulate(a),
        Command::Campaign(a) => campaign(a),
        Command::Analyze(a) => analyze(&store()?, a),
        Command::ReplayTable(a) => {
            let fixture = match &a.fixture {
                Some(path) => TableFixture::from_csv(open_input(path)?)?,
                None => published_table(),
            };
            let style = match a.style {
                StyleArg::Markdown => TableStyle::Markdown,
                StyleArg::Latex => TableStyle::Latex,
            };
            let table = replay_table(&fixture, style)?;
            match a.out {
                Some(path) => {
                    std::fs::write(&path, &table.text)?;
                    Ok(Output::Json(json!({ "out": path, "highlights": table.highlights })))
                }
                None => Ok(Output::Text(table.text)),
            }
        }
        Command::Export(a) => export(&store()?, a),
        Command::Serve(a) => {
            let service = std::sync::Arc::new(crate::service::Service::new(store()?));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(crate::http::serve(service, &a.addr))?;
            Ok(Output::Json(json!({ "stopped": true })))
        }
    }
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let env = Environment::new(a.probs)?;
    let mut cfg = ExperimentConfig::with_arms("simulation", env.k(), a.policy.policy()?);
    cfg.batches_planned = a.batches;
    cfg.validate()?;
    let seed = seed_or_fresh(a.seed, "simulate");
    let sizes = vec![a.batch_size; a.batches as usize];
    let t = simulate_run(&env, &cfg, &sizes, seed, a.draws)?;
    let regret = batchbandit::simulator::cumulative_regret(&t, &env)?;
    if let Some(path) = &a.out {
        t.write_csv(create_output(path)?)?;
    }
    Ok(Output::Json(json!({
        "seed": seed,
        "policy": cfg.policy,
        "total_clicked": t.total_clicked(),
        "total_assigned": t.total_assigned(),
        "regret": regret,
        "final_pa": t.final_pa(),
        "trajectory": t,
    })))
}

fn campaign(a: CampaignArgs) -> CmdResult {
    let env = Environment::new(a.probs)?;
    let policies = a
        .policies
        .iter()
        .map(|&kind| {
            let p = PolicyArgs {
                policy: kind,
                epsilon: a.epsilon,
                share_uniform_data: a.share_uniform_data,
            }
            .policy()?;
            Ok(PolicySpec::new(policy_label(&p), p))
        })
        .collect::<batchbandit::Result<Vec<_>>>()?;
    let seed = seed_or_fresh(a.seed, "campaign");
    let mut cfg = CampaignConfig::new(policies, a.replications, seed);
    cfg.batch_sizes = vec![a.batch_size; a.batches as usize];
    cfg.pa_draws = a.draws;
    cfg.favor_threshold = a.favor_threshold;
    let summary = run_campaign(&env, &cfg)?;
    if let Some(path) = &a.out {
        summary.write_rows_csv(create_output(path)?)?;
        summary.write_summary_csv(create_output(&summary_path(path))?)?;
    }
    let mut v = serde_json::to_value(&summary).expect("summary serializes");
    v["seed"] = json!(seed);
    // Per-replication rewards are in the CSV export; keep stdout compact.
    if let Some(ps) = v["policies"].as_array_mut() {
        for p in ps {
            if let Some(o) = p.as_object_mut() {
                o.remove("rewards");
            }
        }
    }
    Ok(Output::Json(v))
}

fn policy_label(p: &AllocationPolicy) -> String {
    match p {
        AllocationPolicy::Uniform => "UR".into(),
        AllocationPolicy::ThompsonSampling => "TS".into(),
        AllocationPolicy::Hybrid { epsilon, .. } => format!("eps[{epsilon}]-TS"),
    }
}

fn summary_path(rows: &Path) -> PathBuf {
    let stem = rows.file_stem().and_then(|s| s.to_str()).unwrap_or("campaign");
    rows.with_file_name(format!("{stem}.summary.csv"))
}

fn analyze<S: Store>(store: &S, a: AnalyzeArgs) -> CmdResult {
    let filter = if a.all_sources {
        SourceFilter::All
    } else {
        SourceFilter::UniformOnly
    };
    let mut rows = Vec::new();
    for id in &a.experiments {
        let state = store.load(id)?;
        if !state.pending().is_empty() {
            return Err(Error::UnresolvedRewards(state.pending().len()).into());
        }
        rows.extend(panel_rows_from_records(id, state.records(), filter)?);
    }
    let spec = PanelSpec {
        week_effects: a.week_effects,
        participant_effects: a.participant_effects,
    };
    let fit = fit_panel_ols::<f64>(&rows, spec)?;
    match a.format {
        Format::Text => Ok(Output::Text(fit.to_text())),
        Format::Json => {
            let coefficients: serde_json::Map<String, Value> = fit
                .names
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    (
                        n.clone(),
                        json!({
                            "estimate": fit.estimates[i],
                            "standard_error": fit.standard_errors[i],
                            "z": fit.z_stats[i],
                            "p_value": fit.p_values[i],
                        }),
                    )
                })
                .collect();
            Ok(Output::Json(json!({
                "coefficients": coefficients,
                "reference_arm": fit.reference_arm,
                "n_observations": fit.n_observations,
                "residual_df": fit.residual_df,
                "absorbed_groups": fit.absorbed_groups,
                "week_effects": spec.week_effects,
                "participant_effects": spec.participant_effects,
                "sources": if a.all_sources { "all" } else { "uniform" },
            })))
        }
    }
}

fn export<S: Store>(store: &S, a: ExportArgs) -> CmdResult {
    let state = store.load(&a.experiment)?;
    let mut buf = Vec::new();
    match a.what {
        ExportKind::Snapshot => buf.extend_from_slice(state.snapshot().to_json().as_bytes()),
        ExportKind::Records => {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(["participant_id", "batch", "arm", "label", "source", "clicked"])?;
            for r in state.records() {
                w.write_record([
                    r.participant_id.clone(),
                    (r.batch_index + 1).to_string(),
                    r.arm.to_string(),
                    state.config().arm_labels[r.arm.zero_based()].clone(),
                    r.source.as_str().to_string(),
                    r.reward.map_or(String::new(), |x| x.as_u8().to_string()),
                ])?;
            }
            w.flush()?;
        }
        ExportKind::Trajectory => {
            let seed = a
                .seed
                .unwrap_or_else(|| rng::derive_seed(state.seed(), TRAJECTORY_PA_STREAM));
            Trajectory::from_state(&state, a.draws, seed)?.write_csv(&mut buf)?;
        }
    }
    match a.out {
        Some(path) => {
            std::fs::write(&path, &buf)?;
            Ok(Output::Json(json!({ "experiment": a.experiment, "out": path, "bytes": buf.len() })))
        }
        None => Ok(Output::Text(String::from_utf8(buf).expect("exports are UTF-8"))),
    }
}

fn open_input(path: &Path) -> io::Result<Box<dyn Read>> {
    if path == Path::new("-") {
        Ok(Box::new(io::stdin()))
    } else {
        Ok(Box::new(File::open(path)?))
    }
}

fn create_output(path: &Path) -> io::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Deserialize)]
struct ParticipantRow {
    participant_id: String,
}

pub fn read_participants(path: &Path) -> batchbandit::Result<Vec<String>> {
    csv::Reader::from_reader(open_input(path)?)
        .deserialize::<ParticipantRow>()
        .map(|r| r.map(|r| r.participant_id).map_err(Error::from))
        .collect()
}

#[derive(Deserialize)]
struct RewardRow {
    participant_id: String,
    clicked: String,
}

/// Parse a `participant_id,clicked` file; `clicked` must be 0 or 1.
pub fn read_rewards(path: &Path) -> batchbandit::Result<Vec<(String, Reward)>> {
    let mut out = Vec::new();
    for (i, row) in csv::Reader::from_reader(open_input(path)?).deserialize::<RewardRow>().enumerate() {
        let row = row?;
        let reward = row
            .clicked
            .parse::<Reward>()
            .map_err(|e| Error::Malformed(format!("rewards row {}: {e}", i + 1)))?;
        out.push((row.participant_id, reward));
    }
    Ok(out)
}

/// `"2,1;1,2"` -> `[Beta(2,1), Beta(1,2)]`.
pub fn parse_posteriors(text: &str) -> batchbandit::Result<Vec<BetaParams>> {
    text.split(';')
        .map(|pair| {
            let nums: Vec<&str> = pair.split(',').map(str::trim).collect();
            let [a, b] = nums[..] else {
                return Err(Error::Malformed(format!("expected `alpha,beta`, got `{pair}`")));
            };
            let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Malformed(format!("`{s}`: {e}")));
            BetaParams::new(parse(a)?, parse(b)?)
        })
        .collect()
}

/// Print the outcome and return the process exit code.
pub fn report(result: CmdResult) -> i32 {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match result {
        Ok(Output::Json(v)) => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&v).expect("json"));
            0
        }
        Ok(Output::Text(t)) => {
            let _ = write!(out, "{t}");
            0
        }
        Err(f) => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&f.document()).expect("json"));
            eprintln!("error: {}", f.error);
            1
        }
    }
}
