//! Command-line orchestrator.
//!
//! Exit codes: 64 usage, 65 unreadable/corrupt data files, 1 session
//! configuration errors, 2 target errors, 3 LLM errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use knobforge::advisor::{
    llm_prune, llm_sample_initial_configs, AdvisorError, ChatClient, HttpChatClient, MockLlm,
    DEFAULT_RETRIES,
};
use knobforge::knobspace::{
    apply_pruned, Configuration, ConfigurationSpace, KnobValue, PrunedSpace, SpaceError,
};
use knobforge::metrics::{comparison_report, MetricsError, MetricsReport, RunHistory};
use knobforge::optimize::{
    llm_tuning_run, smac_run, vbo_run, BoSettings, LlmRunSettings, OptimizeError, TunerBudget,
};
use knobforge::pruning::{
    collect_observations, data_driven_pruned_space, pruning_report, shapley_importance,
    ImportanceMethod, ImportanceRanking, PruningError,
};
use knobforge::session::{LlmConfig, MockPolicyConfig, SessionConfig, SessionError};
use knobforge::target::{Simulator, TargetError, TuningTarget};

const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_CONFIG: u8 = 1;
const EXIT_TARGET: u8 = 2;
const EXIT_LLM: u8 = 3;

struct AppError {
    code: u8,
    message: String,
}

impl AppError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }

    fn data(message: impl Into<String>) -> Self {
        Self::new(EXIT_DATA, message)
    }
}

impl From<SessionError> for AppError {
    fn from(e: SessionError) -> Self {
        Self::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<SpaceError> for AppError {
    fn from(e: SpaceError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<TargetError> for AppError {
    fn from(e: TargetError) -> Self {
        Self::new(EXIT_TARGET, e.to_string())
    }
}

impl From<AdvisorError> for AppError {
    fn from(e: AdvisorError) -> Self {
        Self::new(EXIT_LLM, e.to_string())
    }
}

impl From<MetricsError> for AppError {
    fn from(e: MetricsError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<PruningError> for AppError {
    fn from(e: PruningError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<OptimizeError> for AppError {
    fn from(e: OptimizeError) -> Self {
        match e {
            OptimizeError::Target(t) => t.into(),
            OptimizeError::Advisor(a) => a.into(),
            OptimizeError::InvalidBudget(m) => Self::usage(m),
            OptimizeError::AllInitFailed => Self::new(EXIT_TARGET, e.to_string()),
            OptimizeError::NoHistory(_) | OptimizeError::Space(_) => Self::data(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(name = "knobforge", about = "Database knob-tuning workbench", version)]
struct Cli {
    /// session configuration file (JSON)
    #[arg(long, global = true)]
    session: Option<PathBuf>,
    /// overrides the session's RNG seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// overrides the session's output directory
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// suppress informational output
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PruneMethod {
    Llm,
    Shapley,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ThenMethod {
    Vbo,
    Smac,
    None,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TuneMethod {
    Vbo,
    Smac,
    Llm,
}

impl TuneMethod {
    fn label(self) -> &'static str {
        match self {
            TuneMethod::Vbo => "vbo",
            TuneMethod::Smac => "smac",
            TuneMethod::Llm => "llm",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Select the most impactful knobs and narrow their ranges
    Prune {
        #[arg(long, value_enum)]
        method: PruneMethod,
        /// how many knobs to keep
        #[arg(long)]
        k: usize,
        /// LHS observations for the shapley method
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Sample distinct starting configurations from the LLM
    Init {
        /// how many distinct configurations to gather
        #[arg(long)]
        u: Option<usize>,
        /// optionally run a seeded optimizer afterwards
        #[arg(long, value_enum, default_value = "none")]
        then: ThenMethod,
    },
    /// Run a tuning loop and report its metrics
    Tune {
        #[arg(long, value_enum)]
        method: TuneMethod,
        /// iteration budget (rounds for the llm method)
        #[arg(long)]
        budget: Option<u32>,
        /// seeds file written by `init`
        #[arg(long)]
        seeds: Option<PathBuf>,
        /// pruned-space file written by `prune`
        #[arg(long)]
        pruned: Option<PathBuf>,
    },
    /// Compare run histories (PE/Speedup against --base)
    Report {
        /// history JSONL files
        files: Vec<PathBuf>,
        /// base-method history for PE/Speedup pairing
        #[arg(long)]
        base: Option<PathBuf>,
    },
    /// Evaluate one configuration against the target and print feedback
    Simulate {
        /// configuration JSON file; the catalog default when omitted
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

/// Seeds artifact written by `init` and consumed by `tune --seeds`.
#[derive(Serialize, Deserialize)]
struct SeedsFile {
    configs: Vec<Configuration>,
    attempts: u32,
    exhausted: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

struct Ctx {
    session: SessionConfig,
    seed: u64,
    output_dir: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn from_cli(cli: &Cli) -> Result<Self, AppError> {
        let path = cli
            .session
            .as_ref()
            .ok_or_else(|| AppError::usage("--session <file> is required for this command"))?;
        let session = SessionConfig::load(path)?;
        let seed = cli.seed.unwrap_or(session.seed);
        let output_dir = cli
            .output_dir
            .clone()
            .unwrap_or_else(|| session.output_dir());
        std::fs::create_dir_all(&output_dir)
            .map_err(|e| AppError::new(EXIT_CONFIG, format!("output dir: {e}")))?;
        Ok(Self {
            session,
            seed,
            output_dir,
            quiet: cli.quiet,
        })
    }

    fn info(&self, message: &str) {
        if !self.quiet {
            eprintln!("{message}");
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }

    fn build_client(&self, sim: Option<&Simulator>) -> Result<Box<dyn ChatClient>, AppError> {
        match &self.session.llm {
            LlmConfig::Http {
                base_url,
                timeout_seconds,
                ..
            } => Ok(Box::new(HttpChatClient::new(base_url, *timeout_seconds)?)),
            LlmConfig::Mock { policy } => Ok(match policy {
                MockPolicyConfig::HillClimbOracle => {
                    let sim = sim.ok_or_else(|| {
                        AppError::new(
                            EXIT_CONFIG,
                            "the hill_climb_oracle mock needs a simulator target",
                        )
                    })?;
                    let optimum = sim.oracle_optimum_config();
                    let optima: BTreeMap<String, f64> = sim
                        .spec()
                        .important_knobs
                        .iter()
                        .filter_map(|ik| {
                            let raw = match optimum.get(&ik.name)? {
                                KnobValue::Int(v) => *v as f64,
                                KnobValue::Real(v) => *v,
                                _ => return None,
                            };
                            Some((ik.name.clone(), raw))
                        })
                        .collect();
                    Box::new(MockLlm::hill_climb(optima))
                }
                MockPolicyConfig::Echo => Box::new(MockLlm::echo()),
                MockPolicyConfig::Malformed => Box::new(MockLlm::malformed()),
            }),
        }
    }

    fn budget(&self, override_iterations: Option<u32>) -> TunerBudget {
        let mut b = self.session.budgets.tune.clone();
        b.rng_seed = self.seed;
        if let Some(n) = override_iterations {
            b.max_iterations = n;
            b.init_points = b.init_points.min(n).max(1);
        }
        b
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match &cli.command {
        Command::Prune { method, k, samples } => cmd_prune(&cli, *method, *k, *samples),
        Command::Init { u, then } => cmd_init(&cli, *u, *then),
        Command::Tune {
            method,
            budget,
            seeds,
            pruned,
        } => cmd_tune(&cli, *method, *budget, seeds.as_deref(), pruned.as_deref()),
        Command::Report { files, base } => cmd_report(files, base.as_deref()),
        Command::Simulate { config } => cmd_simulate(&cli, config.as_deref()),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), AppError> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| AppError::data(format!("serialize {}: {e}", path.display())))?;
    std::fs::write(path, text).map_err(|e| AppError::data(format!("{}: {e}", path.display())))
}

fn cmd_prune(
    cli: &Cli,
    method: PruneMethod,
    k: usize,
    samples: Option<usize>,
) -> Result<(), AppError> {
    let ctx = Ctx::from_cli(cli)?;
    let space = ctx.session.load_space().map_err(|e| AppError::new(EXIT_CONFIG, e.to_string()))?;
    if k < 1 || k > space.dimension() {
        return Err(AppError::usage(format!(
            "--k must be between 1 and the catalog size ({})",
            space.dimension()
        )));
    }

    let (pruned, ranking) = match method {
        PruneMethod::Shapley => {
            let n = samples.unwrap_or(ctx.session.budgets.prune_samples);
            if n < 2 {
                return Err(AppError::usage("--samples must be at least 2"));
            }
            let mut target = ctx.session.build_target(&space)?;
            let collected = collect_observations(target.as_mut(), &space, n, ctx.seed)?;
            if collected.failures > 0 {
                ctx.info(&format!(
                    "dropped {} failed evaluations of {n}",
                    collected.failures
                ));
            }
            let ranking = shapley_importance(&collected.observations, &space, 256, ctx.seed)?;
            let pruned = data_driven_pruned_space(&space, &collected.observations, &ranking, k)?;
            (pruned, ranking)
        }
        PruneMethod::Llm => {
            let sim = ctx.session.build_simulator(&space)?;
            let mut client = ctx.build_client(sim.as_ref())?;
            let pruned = llm_prune(
                client.as_mut(),
                &space,
                &ctx.session.environment,
                k,
                DEFAULT_RETRIES,
                ctx.session.model_name(),
            )?;
            let entries = pruned
                .selected
                .iter()
                .enumerate()
                .map(|(i, n)| (n.clone(), (k - i) as f64))
                .collect();
            (
                pruned,
                ImportanceRanking {
                    entries,
                    method: ImportanceMethod::Llm,
                },
            )
        }
    };

    pruned
        .save(ctx.out("pruned_space.json"))
        .map_err(|e| AppError::data(e.to_string()))?;
    ranking.save(ctx.out("importance.json"))?;
    let report = pruning_report(&[("selected", &ranking)], &ranking, k)?;
    write_json(&ctx.out("pruning_report.json"), &report)?;
    std::fs::write(ctx.out("pruning_report.txt"), report.to_text())
        .map_err(|e| AppError::data(e.to_string()))?;
    ctx.info(&format!(
        "kept {k} of {} knobs -> {}",
        space.dimension(),
        ctx.out("pruned_space.json").display()
    ));
    if !ctx.quiet {
        print!("{}", report.to_text());
    }
    Ok(())
}

fn cmd_init(cli: &Cli, u: Option<usize>, then: ThenMethod) -> Result<(), AppError> {
    let ctx = Ctx::from_cli(cli)?;
    let space = ctx.session.load_space().map_err(|e| AppError::new(EXIT_CONFIG, e.to_string()))?;
    let u = u.unwrap_or(ctx.session.budgets.init_u);
    if u < 1 {
        return Err(AppError::usage("--u must be at least 1"));
    }

    let sim = ctx.session.build_simulator(&space)?;
    let mut client = ctx.build_client(sim.as_ref())?;
    let mut target = ctx.session.build_target(&space)?;
    let default_feedback = target.evaluate(&space.default_configuration())?;

    let samples = llm_sample_initial_configs(
        client.as_mut(),
        &space,
        &ctx.session.environment,
        &default_feedback,
        u,
        (5 * u) as u32,
        ctx.session.model_name(),
    )?;
    let seeds = SeedsFile {
        configs: samples.configs,
        attempts: samples.attempts,
        exhausted: samples.exhausted,
    };
    write_json(&ctx.out("seeds.json"), &seeds)?;
    if seeds.exhausted {
        eprintln!(
            "warning: sampling exhausted after {} attempts with only {} distinct configurations",
            seeds.attempts,
            seeds.configs.len()
        );
    } else {
        ctx.info(&format!(
            "{} distinct configurations in {} attempts -> {}",
            seeds.configs.len(),
            seeds.attempts,
            ctx.out("seeds.json").display()
        ));
    }

    let method = match then {
        ThenMethod::None => return Ok(()),
        ThenMethod::Vbo => TuneMethod::Vbo,
        ThenMethod::Smac => TuneMethod::Smac,
    };
    let mut budget = ctx.budget(None);
    budget.init_points = budget.init_points.max(seeds.configs.len() as u32);
    let history = run_surrogate(
        method,
        target.as_mut(),
        &space,
        &budget,
        Some(&seeds.configs),
        &ctx,
        "seeded",
    )?;
    finish_history(&ctx, history, &format!("{}-seeded", method.label()))
}

fn run_surrogate(
    method: TuneMethod,
    target: &mut dyn TuningTarget,
    space: &ConfigurationSpace,
    budget: &TunerBudget,
    seeds: Option<&[Configuration]>,
    ctx: &Ctx,
    tag: &str,
) -> Result<RunHistory, AppError> {
    let session_id = format!("{}-{}-{}", method.label(), tag, ctx.seed);
    let label = if tag == "plain" {
        method.label().to_string()
    } else {
        format!("{}+{}", method.label(), tag)
    };
    let settings = BoSettings::default();
    let history = match method {
        TuneMethod::Vbo => vbo_run(target, space, budget, seeds, &settings, &session_id, &label)?,
        TuneMethod::Smac => {
            smac_run(target, space, budget, seeds, &settings, &session_id, &label)?
        }
        TuneMethod::Llm => unreachable!("llm runs through llm_tuning_run"),
    };
    Ok(history)
}

fn finish_history(ctx: &Ctx, history: RunHistory, file_tag: &str) -> Result<(), AppError> {
    let path = ctx.out(&format!("history-{file_tag}.jsonl"));
    history.save_jsonl(&path)?;
    let report = MetricsReport::from_history(&history)?;
    write_json(&ctx.out(&format!("metrics-{file_tag}.json")), &report)?;
    let table = comparison_report(std::slice::from_ref(&history), None)?;
    print!("{}", table.to_text());
    ctx.info(&format!("history -> {}", path.display()));
    Ok(())
}

fn cmd_tune(
    cli: &Cli,
    method: TuneMethod,
    budget_override: Option<u32>,
    seeds_path: Option<&Path>,
    pruned_path: Option<&Path>,
) -> Result<(), AppError> {
    let ctx = Ctx::from_cli(cli)?;
    let catalog = ctx.session.load_space().map_err(|e| AppError::new(EXIT_CONFIG, e.to_string()))?;
    let space = match pruned_path {
        Some(p) => {
            let pruned = PrunedSpace::load(p)?;
            if pruned.parent.digest() != catalog.digest() {
                return Err(AppError::data(
                    "pruned space was built from a different catalog",
                ));
            }
            apply_pruned(&pruned)?
        }
        None => catalog,
    };
    let mut target = ctx.session.build_target(&space)?;

    let seeds: Option<Vec<Configuration>> = match seeds_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| AppError::data(format!("{}: {e}", p.display())))?;
            let file: SeedsFile = serde_json::from_str(&text)
                .map_err(|e| AppError::data(format!("{}: {e}", p.display())))?;
            Some(file.configs)
        }
        None => None,
    };

    let history = match method {
        TuneMethod::Llm => {
            let sim = ctx.session.build_simulator(&space)?;
            let mut client = ctx.build_client(sim.as_ref())?;
            let settings = LlmRunSettings {
                max_rounds: budget_override.unwrap_or(30),
                model: ctx.session.model_name().to_string(),
                ..Default::default()
            };
            llm_tuning_run(
                target.as_mut(),
                &space,
                &ctx.session.environment,
                client.as_mut(),
                &settings,
                &format!("llm-{}", ctx.seed),
                "llm",
            )?
        }
        _ => {
            let mut budget = ctx.budget(budget_override);
            if let Some(s) = &seeds {
                budget.init_points = budget.init_points.max(s.len() as u32);
            }
            run_surrogate(
                method,
                target.as_mut(),
                &space,
                &budget,
                seeds.as_deref(),
                &ctx,
                if seeds.is_some() { "seeded" } else { "plain" },
            )?
        }
    };
    let tag = if seeds.is_some() {
        format!("{}-seeded", method.label())
    } else {
        method.label().to_string()
    };
    finish_history(&ctx, history, &tag)
}

fn cmd_report(files: &[PathBuf], base: Option<&Path>) -> Result<(), AppError> {
    if files.is_empty() && base.is_none() {
        return Err(AppError::usage("report needs at least one history file"));
    }
    let mut histories = Vec::new();
    for f in files {
        histories
            .push(RunHistory::load_jsonl(f).map_err(|e| AppError::data(format!("{}: {e}", f.display())))?);
    }
    let base_history = base
        .map(|p| RunHistory::load_jsonl(p).map_err(|e| AppError::data(format!("{}: {e}", p.display()))))
        .transpose()?;
    let report = comparison_report(&histories, base_history.as_ref())?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_simulate(cli: &Cli, config_path: Option<&Path>) -> Result<(), AppError> {
    let ctx = Ctx::from_cli(cli)?;
    let space = ctx.session.load_space().map_err(|e| AppError::new(EXIT_CONFIG, e.to_string()))?;
    let config = match config_path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| AppError::data(format!("{}: {e}", p.display())))?;
            let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(&text)
                .map_err(|e| AppError::data(format!("{}: {e}", p.display())))?;
            let (config, _) = knobforge::knobspace::coerce_configuration(
                &space,
                &raw,
                knobforge::knobspace::CoercionPolicy::ClampRound,
            )
            .map_err(|v| AppError::data(format!("uncoercible configuration: {v:?}")))?;
            config
        }
        None => space.default_configuration(),
    };
    let mut target = ctx.session.build_target(&space)?;
    let feedback = target.evaluate(&config)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&feedback).map_err(|e| AppError::data(e.to_string()))?
    );
    Ok(())
}
